//! Greedy rankers: exact expected n-call@k selection and MMR.
//!
//! Both rankers score every unselected document, then reduce with the same
//! deterministic rule: the tie set is every candidate within
//! [`SCORE_TOLERANCE`] of the maximum, and the smallest document id in the
//! tie set is chosen. Scoring order never affects the result.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Corpus, Document, Query, SelectionState};
use crate::objective::{GainWeights, NCallParams, ObjectiveError};

/// Absolute tolerance for score ties and degenerate steps.
pub const SCORE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("no unselected documents remain")]
    NoCandidates,
    #[error("k = {k} exceeds the {available} documents in the corpus")]
    KTooLarge { k: usize, available: usize },
    #[error("lambda {0} is outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Which similarity MMR uses between a selected document and a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sim2Mode {
    /// `sum_t P(t_i = t | s_i) P(t | q) P(t_k = t | s_k)`
    QueryConditioned,
    /// `sum_t P(t_i = t | s_i) P(t_k = t | s_k)`
    QueryFree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrConfig {
    lambda: f64,
    sim2_mode: Sim2Mode,
}

impl MmrConfig {
    pub fn new(lambda: f64, sim2_mode: Sim2Mode) -> Result<Self, RankError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(RankError::LambdaOutOfRange(lambda));
        }
        Ok(Self { lambda, sim2_mode })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sim2_mode(&self) -> Sim2Mode {
        self.sim2_mode
    }
}

/// One ranker decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub id: String,
    pub score: f64,
    /// Candidates within tolerance of the best score, sorted by id.
    pub tie_set: Vec<String>,
    /// Every candidate scored at or below the tolerance.
    pub degenerate: bool,
}

/// A full ranking with per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RankTrace {
    pub ranking: Vec<String>,
    pub step_scores: Vec<f64>,
    pub tie_sets: Vec<Vec<String>>,
    pub degenerate_steps: Vec<bool>,
    /// Greedy only, on request: the summand dropped from each step's objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped_constants: Option<Vec<f64>>,
}

impl RankTrace {
    fn record(&mut self, step: Step) {
        self.ranking.push(step.id);
        self.step_scores.push(step.score);
        self.tie_sets.push(step.tie_set);
        self.degenerate_steps.push(step.degenerate);
    }
}

fn check_dim(query: &Query, doc: &Document) -> Result<(), ObjectiveError> {
    if query.dist.dim() != doc.dist.dim() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: query.dist.dim(),
            found: doc.dist.dim(),
        });
    }
    Ok(())
}

/// Query-document relevance: `sum_t P(t | q) P(t_k = t | s_k)`.
pub fn sim1(query: &Query, candidate: &Document) -> Result<f64, ObjectiveError> {
    check_dim(query, candidate)?;
    Ok(query
        .dist
        .probs()
        .iter()
        .zip(candidate.dist.probs())
        .map(|(q, c)| q * c)
        .sum())
}

/// Document-document similarity in either mode.
pub fn sim2(
    query: &Query,
    selected: &Document,
    candidate: &Document,
    mode: Sim2Mode,
) -> Result<f64, ObjectiveError> {
    check_dim(query, selected)?;
    check_dim(query, candidate)?;
    let pairs = selected.dist.probs().iter().zip(candidate.dist.probs());
    Ok(match mode {
        Sim2Mode::QueryConditioned => pairs
            .zip(query.dist.probs())
            .map(|((s, c), q)| s * q * c)
            .sum(),
        Sim2Mode::QueryFree => pairs.map(|(s, c)| s * c).sum(),
    })
}

fn candidates<'c>(state: &SelectionState<'_>, corpus: &'c Corpus) -> Vec<&'c Document> {
    corpus
        .documents()
        .iter()
        .filter(|d| !state.contains(&d.id))
        .collect()
}

/// MMR score of every unselected document, in corpus order.
pub fn mmr_scores<'c>(
    state: &SelectionState<'_>,
    corpus: &'c Corpus,
    query: &Query,
    config: &MmrConfig,
) -> Result<Vec<(&'c Document, f64)>, RankError> {
    let lambda = config.lambda;
    candidates(state, corpus)
        .into_iter()
        .map(|cand| {
            let relevance = sim1(query, cand)?;
            // Max over the empty set is 0.
            let mut redundancy: f64 = 0.0;
            for sel in state.documents() {
                redundancy = redundancy.max(sim2(query, sel, cand, config.sim2_mode)?);
            }
            Ok((cand, lambda * relevance - (1.0 - lambda) * redundancy))
        })
        .collect()
}

/// Reduced greedy objective of every unselected document, in corpus order.
pub fn greedy_scores<'c>(
    state: &SelectionState<'_>,
    corpus: &'c Corpus,
    query: &Query,
    n: usize,
) -> Result<Vec<(&'c Document, f64)>, RankError> {
    let weights = GainWeights::new(state, query, n)?;
    score_with(&weights, state, corpus)
}

fn score_with<'c>(
    weights: &GainWeights,
    state: &SelectionState<'_>,
    corpus: &'c Corpus,
) -> Result<Vec<(&'c Document, f64)>, RankError> {
    candidates(state, corpus)
        .into_iter()
        .map(|cand| Ok((cand, weights.gain(cand)?)))
        .collect()
}

/// Ids within tolerance of the best score, sorted.
pub fn tie_set(scored: &[(&Document, f64)]) -> Vec<String> {
    let best = scored
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut ids: Vec<String> = scored
        .iter()
        .filter(|(_, s)| *s >= best - SCORE_TOLERANCE)
        .map(|(d, _)| d.id.clone())
        .collect();
    ids.sort();
    ids
}

fn reduce(scored: &[(&Document, f64)]) -> Result<Step, RankError> {
    if scored.is_empty() {
        return Err(RankError::NoCandidates);
    }
    let tie_set = tie_set(scored);
    let id = tie_set[0].clone();
    let score = scored
        .iter()
        .find(|(d, _)| d.id == id)
        .map(|(_, s)| *s)
        .expect("chosen id comes from the scored set");
    let degenerate = scored.iter().all(|(_, s)| *s <= SCORE_TOLERANCE);
    Ok(Step {
        id,
        score,
        tie_set,
        degenerate,
    })
}

/// Next MMR pick.
pub fn mmr_select_next(
    state: &SelectionState<'_>,
    corpus: &Corpus,
    query: &Query,
    config: &MmrConfig,
) -> Result<Step, RankError> {
    reduce(&mmr_scores(state, corpus, query, config)?)
}

fn greedy_step(
    weights: &GainWeights,
    state: &SelectionState<'_>,
    corpus: &Corpus,
    query: &Query,
) -> Result<Step, RankError> {
    let scored = score_with(weights, state, corpus)?;
    let mut step = reduce(&scored)?;
    if step.degenerate {
        // No signal from the objective: fall back to relevance, then id.
        let by_relevance = scored
            .iter()
            .map(|(d, _)| Ok((*d, sim1(query, d)?)))
            .collect::<Result<Vec<_>, ObjectiveError>>()?;
        let fallback = reduce(&by_relevance)?;
        step.score = scored
            .iter()
            .find(|(d, _)| d.id == fallback.id)
            .map(|(_, s)| *s)
            .expect("fallback id comes from the scored set");
        step.id = fallback.id;
    }
    Ok(step)
}

/// Next pick maximizing expected n-call given the current selection.
///
/// When every candidate's gain is within tolerance of zero the step is
/// flagged degenerate and the most relevant candidate is taken instead.
pub fn greedy_select_next(
    state: &SelectionState<'_>,
    corpus: &Corpus,
    query: &Query,
    n: usize,
) -> Result<Step, RankError> {
    let weights = GainWeights::new(state, query, n)?;
    greedy_step(&weights, state, corpus, query)
}

fn check_k(corpus: &Corpus, k: usize) -> Result<(), RankError> {
    if k > corpus.len() {
        return Err(RankError::KTooLarge {
            k,
            available: corpus.len(),
        });
    }
    Ok(())
}

/// Greedy expected n-call@k ranking.
pub fn greedy_rank(
    corpus: &Corpus,
    query: &Query,
    params: NCallParams,
) -> Result<RankTrace, RankError> {
    greedy_rank_traced(corpus, query, params, false)
}

/// Greedy ranking that also records each step's dropped constant when
/// `diagnostics` is set.
pub fn greedy_rank_traced(
    corpus: &Corpus,
    query: &Query,
    params: NCallParams,
    diagnostics: bool,
) -> Result<RankTrace, RankError> {
    check_k(corpus, params.k())?;
    let mut state = SelectionState::new();
    let mut trace = RankTrace::default();
    let mut dropped = Vec::new();
    for _ in 0..params.k() {
        let weights = GainWeights::new(&state, query, params.n())?;
        let step = greedy_step(&weights, &state, corpus, query)?;
        dropped.push(weights.dropped_constant());
        state
            .push(
                corpus
                    .document(&step.id)
                    .expect("ranker picks corpus documents"),
            )
            .expect("ranker never repeats a document");
        trace.record(step);
    }
    if diagnostics {
        trace.dropped_constants = Some(dropped);
    }
    Ok(trace)
}

/// MMR ranking of length `k`.
pub fn mmr_rank(
    corpus: &Corpus,
    query: &Query,
    k: usize,
    config: &MmrConfig,
) -> Result<RankTrace, RankError> {
    check_k(corpus, k)?;
    let mut state = SelectionState::new();
    let mut trace = RankTrace::default();
    for _ in 0..k {
        let step = mmr_select_next(&state, corpus, query, config)?;
        state
            .push(
                corpus
                    .document(&step.id)
                    .expect("ranker picks corpus documents"),
            )
            .expect("ranker never repeats a document");
        trace.record(step);
    }
    Ok(trace)
}

/// Trade-off weight `n / (m + 1)` given `m` relevant documents already
/// selected. Values above 1 fall outside MMR's range and are returned as is.
pub fn lambda_for(n: usize, m: usize) -> f64 {
    n as f64 / (m as f64 + 1.0)
}

/// `n / (n + 1)`: the trade-off weight when about `n` relevant documents are
/// already selected.
pub fn lambda_headline(n: usize) -> f64 {
    lambda_for(n, n)
}

/// Number of selected documents on the query's subtopic. Only defined when
/// the query and every selected document are point masses.
pub fn relevant_selected_count(state: &SelectionState<'_>, query: &Query) -> Option<usize> {
    let target = query.dist.point_mass_index()?;
    let mut count = 0;
    for doc in state.documents() {
        if doc.dist.point_mass_index()? == target {
            count += 1;
        }
    }
    Some(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubtopicDistribution;
    use crate::objective::{expected_n_call, prob_at_least};
    use itertools::Itertools;

    fn corpus(docs: &[(&str, Vec<f64>)]) -> Corpus {
        let dim = docs[0].1.len();
        Corpus::new(
            (0..dim).map(|i| format!("t{i}")).collect(),
            docs.iter()
                .map(|(id, p)| Document::new(*id, SubtopicDistribution::new(p.clone()).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    fn query(p: &[f64]) -> Query {
        Query::new("q", SubtopicDistribution::new(p.to_vec()).unwrap())
    }

    /// Three documents: two on subtopic A, one on B.
    fn aab() -> Corpus {
        corpus(&[
            ("a1", vec![1.0, 0.0]),
            ("a2", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
        ])
    }

    fn value(corpus: &Corpus, query: &Query, ids: &[String], n: usize) -> f64 {
        let state = SelectionState::from_ids(corpus, ids).unwrap();
        prob_at_least(&state, query, n).unwrap()
    }

    #[test]
    fn sim_examples() {
        let c = corpus(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("a2", vec![1.0, 0.0]),
        ]);
        let [a, b, a2] = [&c.documents()[0], &c.documents()[1], &c.documents()[2]];
        let qa = query(&[1.0, 0.0]);
        let qu = query(&[0.5, 0.5]);
        assert_eq!(sim1(&qa, a).unwrap(), 1.0);
        assert_eq!(sim1(&qa, b).unwrap(), 0.0);
        assert_eq!(sim1(&qu, a).unwrap(), 0.5);

        assert_eq!(sim2(&qa, a, a2, Sim2Mode::QueryConditioned).unwrap(), 1.0);
        for mode in [Sim2Mode::QueryConditioned, Sim2Mode::QueryFree] {
            assert_eq!(sim2(&qu, a, b, mode).unwrap(), 0.0);
        }
        assert_eq!(sim2(&qu, a, a2, Sim2Mode::QueryConditioned).unwrap(), 0.5);
        assert_eq!(sim2(&qu, a, a2, Sim2Mode::QueryFree).unwrap(), 1.0);

        let wide = query(&[0.2, 0.3, 0.5]);
        assert!(matches!(
            sim1(&wide, a),
            Err(ObjectiveError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_rejects_lambda_outside_unit_interval() {
        assert!(MmrConfig::new(1.1, Sim2Mode::QueryFree).is_err());
        assert!(MmrConfig::new(-0.1, Sim2Mode::QueryFree).is_err());
        assert!(MmrConfig::new(0.0, Sim2Mode::QueryFree).is_ok());
    }

    #[test]
    fn mmr_pure_relevance_orders_by_sim1() {
        let c = corpus(&[
            ("x", vec![0.2, 0.8]),
            ("y", vec![0.9, 0.1]),
            ("z", vec![0.5, 0.5]),
            ("w", vec![0.9, 0.1]),
        ]);
        let q = query(&[0.7, 0.3]);
        let cfg = MmrConfig::new(1.0, Sim2Mode::QueryFree).unwrap();
        let trace = mmr_rank(&c, &q, 4, &cfg).unwrap();
        // w and y tie on relevance; the smaller id wins.
        assert_eq!(trace.ranking, vec!["w", "y", "z", "x"]);
        assert_eq!(trace.tie_sets[0], vec!["w", "y"]);
    }

    #[test]
    fn mmr_pure_diversity_avoids_covered_subtopic() {
        let c = aab();
        let q = query(&[0.5, 0.5]);
        let cfg = MmrConfig::new(0.0, Sim2Mode::QueryConditioned).unwrap();
        let mut state = SelectionState::new();
        state.push(c.document("a1").unwrap()).unwrap();
        // a2 scores -0.5, b scores 0.
        assert_eq!(mmr_select_next(&state, &c, &q, &cfg).unwrap().id, "b");

        // Empty selection: every score is 0 so ids decide; later picks
        // minimize redundancy.
        let trace = mmr_rank(&c, &q, 3, &cfg).unwrap();
        assert_eq!(trace.ranking, vec!["a1", "b", "a2"]);
        assert_eq!(trace.step_scores, vec![0.0, 0.0, -0.5]);
    }

    #[test]
    fn mmr_half_reproduces_greedy_one_call() {
        let c = aab();
        let q = query(&[1.0, 0.0]);
        let cfg = MmrConfig::new(0.5, Sim2Mode::QueryConditioned).unwrap();
        let g = greedy_rank(&c, &q, NCallParams::new(1, 2).unwrap()).unwrap();
        let m = mmr_rank(&c, &q, 2, &cfg).unwrap();
        for k in 1..=2 {
            assert_eq!(
                value(&c, &q, &g.ranking[..k], 1),
                value(&c, &q, &m.ranking[..k], 1)
            );
        }
    }

    #[test]
    fn greedy_one_call_covers_both_subtopics() {
        let c = aab();
        let q = query(&[0.5, 0.5]);
        let state = SelectionState::new();
        let first = greedy_select_next(&state, &c, &q, 1).unwrap();
        assert_eq!(first.id, "a1");
        assert_eq!(first.tie_set, vec!["a1", "a2", "b"]);
        assert_eq!(first.score, 0.5);

        let trace = greedy_rank(&c, &q, NCallParams::new(1, 2).unwrap()).unwrap();
        assert_eq!(trace.ranking, vec!["a1", "b"]);
        let achieved = value(&c, &q, &trace.ranking, 1);
        assert_eq!(achieved, 1.0);

        // Exhaustive: no pair beats it.
        let best = c
            .documents()
            .iter()
            .map(|d| d.id.clone())
            .combinations(2)
            .map(|pair| value(&c, &q, &pair, 1))
            .fold(0.0, f64::max);
        assert_eq!(achieved, best);
    }

    #[test]
    fn all_relevant_corpus_always_reaches_one() {
        let c = corpus(&[("a", vec![1.0]), ("b", vec![1.0]), ("c", vec![1.0])]);
        let q = query(&[1.0]);
        let trace = greedy_rank(&c, &q, NCallParams::new(3, 3).unwrap()).unwrap();
        let state = SelectionState::from_ids(&c, &trace.ranking).unwrap();
        assert_eq!(
            expected_n_call(&state, &q, NCallParams::new(3, 3).unwrap()).unwrap(),
            1.0
        );
    }

    #[test]
    fn two_call_impossible_with_one_relevant_document() {
        let c = corpus(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let q = query(&[1.0, 0.0]);
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(value(&c, &q, &ids, 2), 0.0);
        let trace = greedy_rank(&c, &q, NCallParams::new(2, 2).unwrap()).unwrap();
        // First step cannot hold one relevant item yet: degenerate, falls
        // back to relevance. Second step: b gains nothing either.
        assert_eq!(trace.degenerate_steps, vec![true, true]);
        assert_eq!(trace.ranking, vec!["a", "b"]);
    }

    #[test]
    fn degenerate_fallback_prefers_relevance() {
        let c = corpus(&[("a", vec![0.0, 1.0]), ("b", vec![1.0, 0.0])]);
        let q = query(&[1.0, 0.0]);
        let step = greedy_select_next(&SelectionState::new(), &c, &q, 2).unwrap();
        assert!(step.degenerate);
        assert_eq!(step.id, "b");
        assert!(step.tie_set.contains(&step.id));
    }

    #[test]
    fn rank_errors() {
        let c = aab();
        let q = query(&[0.5, 0.5]);
        assert_eq!(
            greedy_rank(&c, &q, NCallParams::new(1, 4).unwrap()),
            Err(RankError::KTooLarge { k: 4, available: 3 })
        );
        let full = SelectionState::from_ids(&c, &["a1", "a2", "b"]).unwrap();
        assert_eq!(
            greedy_select_next(&full, &c, &q, 1),
            Err(RankError::NoCandidates)
        );
        let cfg = MmrConfig::new(0.5, Sim2Mode::QueryFree).unwrap();
        assert_eq!(
            mmr_select_next(&full, &c, &q, &cfg),
            Err(RankError::NoCandidates)
        );
    }

    #[test]
    fn full_length_ranking_is_permutation_and_repeatable() {
        let c = corpus(&[
            ("d0", vec![0.1, 0.6, 0.3]),
            ("d1", vec![0.5, 0.25, 0.25]),
            ("d2", vec![0.0, 0.0, 1.0]),
            ("d3", vec![0.4, 0.4, 0.2]),
        ]);
        let q = query(&[0.2, 0.5, 0.3]);
        let params = NCallParams::new(2, 4).unwrap();
        let first = greedy_rank_traced(&c, &q, params, true).unwrap();
        let mut sorted = first.ranking.clone();
        sorted.sort();
        assert_eq!(sorted, vec!["d0", "d1", "d2", "d3"]);
        assert_eq!(first.dropped_constants.as_ref().map(Vec::len), Some(4));
        assert_eq!(first, greedy_rank_traced(&c, &q, params, true).unwrap());
        assert!(greedy_rank(&c, &q, params)
            .unwrap()
            .dropped_constants
            .is_none());
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_for(1, 1), 0.5);
        assert!((lambda_for(2, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lambda_for(3, 0), 3.0);
        assert_eq!(lambda_headline(1), 0.5);
        assert!((lambda_headline(2) - 0.666_666_666_666_666_6).abs() < 1e-15);
        assert_eq!(lambda_headline(9), 0.9);
        let mut prev = 0.0;
        for n in 1..200 {
            let l = lambda_headline(n);
            assert!(l > prev && l < 1.0);
            prev = l;
        }
    }

    #[test]
    fn scaled_scores_keep_the_tie_set() {
        let c = corpus(&[
            ("d0", vec![0.3, 0.7]),
            ("d1", vec![0.3, 0.7]),
            ("d2", vec![0.9, 0.1]),
        ]);
        let q = query(&[0.4, 0.6]);
        let state = SelectionState::new();
        let scored = greedy_scores(&state, &c, &q, 1).unwrap();
        for factor in [0.5, 2.0, 3.0, 10.0] {
            let scaled: Vec<_> = scored.iter().map(|(d, s)| (*d, s * factor)).collect();
            assert_eq!(tie_set(&scaled), tie_set(&scored));
        }
    }

    #[test]
    fn relevant_count_needs_point_masses() {
        let c = aab();
        let state = SelectionState::from_ids(&c, &["a1", "b"]).unwrap();
        assert_eq!(
            relevant_selected_count(&state, &query(&[1.0, 0.0])),
            Some(1)
        );
        assert_eq!(relevant_selected_count(&state, &query(&[0.5, 0.5])), None);
    }
}
