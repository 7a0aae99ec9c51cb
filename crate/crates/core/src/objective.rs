//! Expected n-call@k under the latent subtopic relevance model.
//!
//! A selected document is relevant iff its latent subtopic equals the query's
//! latent subtopic. Conditioned on the query subtopic `t`, each selection is
//! an independent Bernoulli trial with success probability `P(t_i = t | s_i)`,
//! so the count of relevant selections `R_k` is Poisson-binomial. Its pmf is
//! built by the forward recursion
//!
//! ```text
//! P(R_k = m | t) = (1 - p_k) P(R_{k-1} = m | t) + p_k P(R_{k-1} = m - 1 | t)
//! ```
//!
//! and everything else (the full objective, the greedy gain) is a query
//! weighted sum of pmf entries over the subtopic table, in table order.

use itertools::Itertools;
use thiserror::Error;

use crate::model::{Document, Query, SelectionState, SubtopicId, SUM_TOLERANCE};

/// Inputs longer than this are refused by the enumeration oracles.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Slack allowed on raw pmf entries before they are clamped into `[0, 1]`.
pub const PMF_CLAMP_SLACK: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("probability {value} at position {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("{len} items exceed the enumeration limit of {limit}")]
    TooManyItems { len: usize, limit: usize },
    #[error("dimension mismatch: expected {expected} subtopics, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("candidate `{0}` is already selected")]
    CandidateAlreadySelected(String),
    #[error("invalid n-call parameters: n = {n}, k = {k} (need 1 <= n <= k)")]
    InvalidParams { n: usize, k: usize },
    #[error("selection holds {found} documents but k = {expected}")]
    SelectionSizeMismatch { expected: usize, found: usize },
}

/// `n` and `k` of n-call@k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NCallParams {
    n: usize,
    k: usize,
}

impl NCallParams {
    pub fn new(n: usize, k: usize) -> Result<Self, ObjectiveError> {
        if n == 0 || n > k {
            return Err(ObjectiveError::InvalidParams { n, k });
        }
        Ok(Self { n, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Distribution of the number of relevant selections among `k` items.
#[derive(Debug, Clone, PartialEq)]
pub struct RelCountPmf {
    pmf: Vec<f64>,
}

impl RelCountPmf {
    pub fn k(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `P(R_k = m)`; zero for `m > k`.
    pub fn prob(&self, m: usize) -> f64 {
        self.pmf.get(m).copied().unwrap_or(0.0)
    }

    /// `P(R_k >= n)`.
    pub fn prob_at_least(&self, n: usize) -> f64 {
        if n == 0 {
            return 1.0;
        }
        let tail: f64 = self.pmf.iter().skip(n).sum();
        tail.clamp(0.0, 1.0)
    }

    fn from_raw(raw: Vec<f64>) -> Self {
        debug_assert!(
            raw.iter()
                .all(|&p| (-PMF_CLAMP_SLACK..=1.0 + PMF_CLAMP_SLACK).contains(&p)),
            "pmf entry outside clamp slack: {raw:?}"
        );
        debug_assert!((raw.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        Self {
            pmf: raw.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// `P(r_i = 1 | t, t_i)`: 1 iff the item subtopic matches the query subtopic.
pub fn relevance_indicator(t: &SubtopicId, t_i: &SubtopicId) -> u8 {
    u8::from(t.index == t_i.index)
}

fn check_probs(success_probs: &[f64]) -> Result<(), ObjectiveError> {
    match success_probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        Some(index) => Err(ObjectiveError::ProbabilityOutOfRange {
            index,
            value: success_probs[index],
        }),
        None => Ok(()),
    }
}

/// Unclamped forward recursion. Index `m` of the result is `P(R_k = m)`.
pub(crate) fn rel_count_raw(success_probs: &[f64]) -> Vec<f64> {
    let k = success_probs.len();
    let mut pmf = vec![0.0; k + 1];
    pmf[0] = 1.0;
    for (step, &p) in success_probs.iter().enumerate() {
        let q = 1.0 - p;
        // After this item at most step + 1 relevant; walk downwards so
        // pmf[m - 1] still holds the previous row.
        for m in (1..=step + 1).rev() {
            pmf[m] = q * pmf[m] + p * pmf[m - 1];
        }
        pmf[0] *= q;
    }
    pmf
}

/// Pmf of the relevant count given per-item match probabilities, in `O(k^2)`.
pub fn rel_count_pmf(success_probs: &[f64]) -> Result<RelCountPmf, ObjectiveError> {
    check_probs(success_probs)?;
    Ok(RelCountPmf::from_raw(rel_count_raw(success_probs)))
}

/// Same pmf by summing over all `2^k` relevance outcome vectors.
pub fn rel_count_pmf_bruteforce(success_probs: &[f64]) -> Result<RelCountPmf, ObjectiveError> {
    let k = success_probs.len();
    if k > BRUTE_FORCE_LIMIT {
        return Err(ObjectiveError::TooManyItems {
            len: k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    check_probs(success_probs)?;
    let mut pmf = vec![0.0; k + 1];
    for outcome in 0u32..(1u32 << k) {
        let weight: f64 = success_probs
            .iter()
            .enumerate()
            .map(|(i, &p)| if outcome >> i & 1 == 1 { p } else { 1.0 - p })
            .product();
        pmf[outcome.count_ones() as usize] += weight;
    }
    Ok(RelCountPmf::from_raw(pmf))
}

fn check_dim(expected: usize, found: usize) -> Result<(), ObjectiveError> {
    if expected != found {
        return Err(ObjectiveError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_state(state: &SelectionState<'_>, query: &Query) -> Result<(), ObjectiveError> {
    let dim = query.dist.dim();
    state
        .documents()
        .iter()
        .try_for_each(|d| check_dim(dim, d.dist.dim()))
}

fn match_probs(state: &SelectionState<'_>, subtopic: usize) -> Vec<f64> {
    state
        .documents()
        .iter()
        .map(|d| d.dist.prob(subtopic))
        .collect()
}

/// Pmf of the relevant count of `state`, conditioned on each query subtopic.
pub fn conditional_pmfs(
    state: &SelectionState<'_>,
    query: &Query,
) -> Result<Vec<RelCountPmf>, ObjectiveError> {
    check_state(state, query)?;
    (0..query.dist.dim())
        .map(|t| rel_count_pmf(&match_probs(state, t)))
        .collect()
}

/// `P(R >= n | S, q)` for a selection of any size (zero when `n > |S|`).
pub fn prob_at_least(
    state: &SelectionState<'_>,
    query: &Query,
    n: usize,
) -> Result<f64, ObjectiveError> {
    let pmfs = conditional_pmfs(state, query)?;
    let total: f64 = query
        .dist
        .probs()
        .iter()
        .zip(&pmfs)
        .map(|(&q, pmf)| q * pmf.prob_at_least(n))
        .sum();
    Ok(total.clamp(0.0, 1.0))
}

/// Expected n-call@k of a full selection of size `k`.
pub fn expected_n_call(
    state: &SelectionState<'_>,
    query: &Query,
    params: NCallParams,
) -> Result<f64, ObjectiveError> {
    if state.len() != params.k {
        return Err(ObjectiveError::SelectionSizeMismatch {
            expected: params.k,
            found: state.len(),
        });
    }
    prob_at_least(state, query, params.n)
}

/// Candidate-independent weights of the greedy gain for one selection state:
/// `w_t = P(t | q) P(R_{k-1} = n - 1 | S_{k-1}, t)`.
#[derive(Debug, Clone)]
pub struct GainWeights {
    weights: Vec<f64>,
    dropped: f64,
}

impl GainWeights {
    pub fn new(
        state: &SelectionState<'_>,
        query: &Query,
        n: usize,
    ) -> Result<Self, ObjectiveError> {
        if n == 0 {
            return Err(ObjectiveError::InvalidParams {
                n,
                k: state.len() + 1,
            });
        }
        let pmfs = conditional_pmfs(state, query)?;
        let q = query.dist.probs();
        let weights = q
            .iter()
            .zip(&pmfs)
            .map(|(&qt, pmf)| qt * pmf.prob(n - 1))
            .collect();
        let dropped = q
            .iter()
            .zip(&pmfs)
            .map(|(&qt, pmf)| qt * pmf.prob_at_least(n))
            .sum();
        Ok(Self { weights, dropped })
    }

    /// Reduced objective for one candidate.
    pub fn gain(&self, candidate: &Document) -> Result<f64, ObjectiveError> {
        check_dim(self.weights.len(), candidate.dist.dim())?;
        Ok(self
            .weights
            .iter()
            .zip(candidate.dist.probs())
            .map(|(w, c)| w * c)
            .sum())
    }

    /// The summand the reduced objective leaves out:
    /// `sum_t P(t | q) P(R_{k-1} >= n | S_{k-1}, t)`.
    pub fn dropped_constant(&self) -> f64 {
        self.dropped
    }
}

/// Greedy objective with the candidate-independent summand removed:
/// `sum_t P(t | q) P(t_k = t | s_k) P(R_{k-1} = n - 1 | S_{k-1}, t)`.
///
/// Adding [`GainWeights::dropped_constant`] back gives `P(R_k >= n)` for the
/// extended selection, so the argmax over candidates is the same.
pub fn marginal_gain(
    state: &SelectionState<'_>,
    candidate: &Document,
    query: &Query,
    n: usize,
) -> Result<f64, ObjectiveError> {
    if state.contains(&candidate.id) {
        return Err(ObjectiveError::CandidateAlreadySelected(
            candidate.id.clone(),
        ));
    }
    GainWeights::new(state, query, n)?.gain(candidate)
}

/// The greedy objective written out as an explicit sum over the index sets
/// `J` of the `n - 1` relevant earlier selections. Exponential; an oracle
/// for [`marginal_gain`].
pub fn unrolled_objective(
    state: &SelectionState<'_>,
    candidate: &Document,
    query: &Query,
    n: usize,
) -> Result<f64, ObjectiveError> {
    if state.len() > BRUTE_FORCE_LIMIT {
        return Err(ObjectiveError::TooManyItems {
            len: state.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n == 0 {
        return Err(ObjectiveError::InvalidParams {
            n,
            k: state.len() + 1,
        });
    }
    if state.contains(&candidate.id) {
        return Err(ObjectiveError::CandidateAlreadySelected(
            candidate.id.clone(),
        ));
    }
    check_state(state, query)?;
    check_dim(query.dist.dim(), candidate.dist.dim())?;

    let prev = state.len();
    let mut total = 0.0;
    for (t, &qt) in query.dist.probs().iter().enumerate() {
        let probs = match_probs(state, t);
        let mut inner = 0.0;
        for chosen in (0..prev).combinations(n - 1) {
            let mut in_set = vec![false; prev];
            chosen.iter().for_each(|&j| in_set[j] = true);
            inner += probs
                .iter()
                .zip(&in_set)
                .map(|(&p, &hit)| if hit { p } else { 1.0 - p })
                .product::<f64>();
        }
        total += qt * candidate.dist.prob(t) * inner;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubtopicDistribution;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn point(dim: usize, at: usize) -> SubtopicDistribution {
        SubtopicDistribution::point_mass(dim, at)
    }

    fn doc(id: &str, d: SubtopicDistribution) -> Document {
        Document::new(id, d)
    }

    #[test]
    fn indicator_matches_only_equal_subtopics() {
        let a = SubtopicId {
            index: 0,
            label: "A".into(),
        };
        let b = SubtopicId {
            index: 1,
            label: "B".into(),
        };
        assert_eq!(relevance_indicator(&a, &a), 1);
        assert_eq!(relevance_indicator(&a, &b), 0);
        assert_eq!(relevance_indicator(&b, &b), 1);
    }

    #[test]
    fn single_item_base_case() {
        let pmf = rel_count_pmf(&[0.3]).unwrap();
        assert_eq!(pmf.pmf(), &[0.7, 0.3]);
    }

    #[test]
    fn two_fair_items() {
        // Outcomes 00, 01, 10, 11 each have probability 1/4.
        let expected = [0.25, 0.5, 0.25];
        assert_eq!(rel_count_pmf(&[0.5, 0.5]).unwrap().pmf(), &expected);
        assert_eq!(
            rel_count_pmf_bruteforce(&[0.5, 0.5]).unwrap().pmf(),
            &expected
        );
    }

    #[test]
    fn impossible_and_certain_items() {
        assert_eq!(
            rel_count_pmf(&[0.0, 0.0, 0.0]).unwrap().pmf(),
            &[1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            rel_count_pmf_bruteforce(&[1.0, 1.0]).unwrap().pmf(),
            &[0.0, 0.0, 1.0]
        );
        assert_eq!(rel_count_pmf(&[]).unwrap().pmf(), &[1.0]);
    }

    #[test]
    fn pmf_errors() {
        assert_eq!(
            rel_count_pmf(&[0.2, 1.5]),
            Err(ObjectiveError::ProbabilityOutOfRange {
                index: 1,
                value: 1.5
            })
        );
        assert!(matches!(
            rel_count_pmf_bruteforce(&[0.5; 21]),
            Err(ObjectiveError::TooManyItems { len: 21, .. })
        ));
    }

    #[test]
    fn params_reject_n_above_k() {
        assert!(NCallParams::new(3, 2).is_err());
        assert!(NCallParams::new(0, 2).is_err());
        assert!(NCallParams::new(2, 2).is_ok());
    }

    #[test]
    fn expected_n_call_examples() {
        let a = doc("a", point(2, 0));
        let b = doc("b", point(2, 1));
        let det_query = Query::new("q", point(2, 0));
        let uniform = Query::new("q", SubtopicDistribution::uniform(2));

        let mut one = SelectionState::new();
        one.push(&a).unwrap();
        let p11 = NCallParams::new(1, 1).unwrap();
        assert_eq!(expected_n_call(&one, &det_query, p11).unwrap(), 1.0);
        // 0.5 * 1 + 0.5 * 0
        assert_eq!(expected_n_call(&one, &uniform, p11).unwrap(), 0.5);

        let mut both = one.clone();
        both.push(&b).unwrap();
        let p12 = NCallParams::new(1, 2).unwrap();
        assert_eq!(expected_n_call(&both, &uniform, p12).unwrap(), 1.0);

        assert!(matches!(
            expected_n_call(&one, &uniform, p12),
            Err(ObjectiveError::SelectionSizeMismatch { .. })
        ));
        let wide = Query::new("q", SubtopicDistribution::uniform(3));
        assert!(matches!(
            expected_n_call(&one, &wide, p11),
            Err(ObjectiveError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn marginal_gain_examples() {
        let a = doc("a", point(2, 0));
        let a2 = doc("a2", point(2, 0));
        let soft = doc("s", SubtopicDistribution::new(vec![0.3, 0.7]).unwrap());
        let query = Query::new("q", SubtopicDistribution::new(vec![0.6, 0.4]).unwrap());
        let empty = SelectionState::new();

        // n = 1 on an empty selection is pure relevance.
        let rel = 0.6 * 0.3 + 0.4 * 0.7;
        assert!((marginal_gain(&empty, &soft, &query, 1).unwrap() - rel).abs() < 1e-15);
        // n = 2 on an empty selection: no way to already hold one relevant.
        assert_eq!(marginal_gain(&empty, &soft, &query, 2).unwrap(), 0.0);

        let det_query = Query::new("q", point(2, 0));
        let mut state = SelectionState::new();
        state.push(&a).unwrap();
        assert_eq!(marginal_gain(&state, &a2, &det_query, 1).unwrap(), 0.0);
        assert_eq!(
            marginal_gain(&state, &a, &det_query, 1),
            Err(ObjectiveError::CandidateAlreadySelected("a".into()))
        );
    }

    #[test]
    fn gain_plus_dropped_constant_is_full_objective() {
        let docs: Vec<Document> = [
            [0.2, 0.5, 0.3],
            [0.6, 0.1, 0.3],
            [0.0, 0.0, 1.0],
            [0.4, 0.4, 0.2],
        ]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            doc(
                &format!("d{i}"),
                SubtopicDistribution::new(p.to_vec()).unwrap(),
            )
        })
        .collect();
        let query = Query::new("q", SubtopicDistribution::new(vec![0.5, 0.3, 0.2]).unwrap());
        let mut state = SelectionState::new();
        state.push(&docs[0]).unwrap();
        state.push(&docs[1]).unwrap();
        for n in 1..=3 {
            let weights = GainWeights::new(&state, &query, n).unwrap();
            for cand in &docs[2..] {
                let mut ext = state.clone();
                ext.push(cand).unwrap();
                let full = prob_at_least(&ext, &query, n).unwrap();
                let split = weights.dropped_constant() + weights.gain(cand).unwrap();
                assert!((full - split).abs() < 1e-12, "n={n}: {full} vs {split}");
            }
        }
    }

    #[test]
    fn unrolled_examples() {
        let query = Query::new("q", point(2, 0));
        let cand = doc("c", point(2, 0));
        let s1 = doc("s1", SubtopicDistribution::new(vec![0.3, 0.7]).unwrap());
        let s2 = doc("s2", SubtopicDistribution::new(vec![0.8, 0.2]).unwrap());
        let mut state = SelectionState::new();
        state.push(&s1).unwrap();
        state.push(&s2).unwrap();

        // n = 1: J is empty, the inner sum is the product of misses.
        let n1 = unrolled_objective(&state, &cand, &query, 1).unwrap();
        assert!((n1 - 0.7 * 0.2).abs() < 1e-15);
        // n = 2: J ranges over {s1} and {s2}.
        let (a, b) = (0.3, 0.8);
        let n2 = unrolled_objective(&state, &cand, &query, 2).unwrap();
        assert!((n2 - (a * (1.0 - b) + b * (1.0 - a))).abs() < 1e-15);
        // n = 4 needs three earlier relevant items; only two exist.
        assert_eq!(unrolled_objective(&state, &cand, &query, 4).unwrap(), 0.0);
    }

    fn probs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![3 => 0.0f64..=1.0, 1 => Just(0.0), 1 => Just(1.0)],
            0..=max_len,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn dp_matches_enumeration(p in probs(12)) {
            let dp = rel_count_pmf(&p).unwrap();
            let bf = rel_count_pmf_bruteforce(&p).unwrap();
            prop_assert!(close(dp.pmf(), bf.pmf(), 1e-12), "{:?} vs {:?}", dp, bf);
        }

        #[test]
        fn raw_entries_stay_in_slack(p in probs(40)) {
            let raw = rel_count_raw(&p);
            prop_assert_eq!(raw.len(), p.len() + 1);
            for &x in &raw {
                prop_assert!((-PMF_CLAMP_SLACK..=1.0 + PMF_CLAMP_SLACK).contains(&x));
            }
            prop_assert!((raw.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        }
    }
}
