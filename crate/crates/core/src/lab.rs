//! Seeded synthetic corpora and the experiments run on them.
//!
//! Generation uses ChaCha8 seeded with `seed` through `SeedableRng::seed_from_u64`.
//! Draw order is fixed: every document in id order, then the query. Trial `i`
//! of a multi-trial experiment uses seed `seed + i` (wrapping), so trials can
//! run on any number of workers and still aggregate to the same numbers.
//!
//! Subtopic popularity is Zipf-like: subtopic `r` (0-based) has weight
//! `(r + 1)^-skew`.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Corpus, Document, Query, SelectionState, SubtopicDistribution};
use crate::objective::{expected_n_call, NCallParams, ObjectiveError};
use crate::ranker::{
    greedy_rank, lambda_headline, mmr_rank, mmr_select_next, relevant_selected_count, MmrConfig,
    RankError, Sim2Mode,
};

/// Largest |greedy - MMR| value gap accepted as equal.
pub const VALUE_GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Point mass on a subtopic drawn from the popularity weights.
    Deterministic,
    Uniform,
    /// Gamma draws with shapes `|T| * popularity`, normalized.
    DirichletLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub num_subtopics: usize,
    pub num_docs: usize,
    /// Point-mass documents when set; positive random vectors otherwise.
    pub deterministic: bool,
    pub query_mode: QueryMode,
    pub skew: f64,
}

impl GenParams {
    pub fn validate(&self) -> Result<(), LabError> {
        if self.num_subtopics == 0 || self.num_docs == 0 {
            return Err(LabError::InvalidParams(
                "num_subtopics and num_docs must be positive".into(),
            ));
        }
        if !(self.skew > 0.0 && self.skew.is_finite()) {
            return Err(LabError::InvalidParams(format!(
                "skew must be positive, got {}",
                self.skew
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn popularity(num_subtopics: usize, skew: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=num_subtopics)
        .map(|r| (r as f64).powf(-skew))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

fn normalized(weights: Vec<f64>) -> SubtopicDistribution {
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        SubtopicDistribution::new(weights.iter().map(|w| w / total).collect())
            .expect("normalized positive weights form a distribution")
    } else {
        SubtopicDistribution::uniform(weights.len())
    }
}

/// Reproducible synthetic corpus and query.
pub fn generate_corpus(params: &GenParams) -> Result<(Corpus, Query), LabError> {
    params.validate()?;
    let dim = params.num_subtopics;
    let pop = popularity(dim, params.skew);
    let pick = WeightedIndex::new(&pop).expect("popularity weights are positive");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let width = (params.num_docs - 1).to_string().len().max(2);
    let documents = (0..params.num_docs)
        .map(|i| {
            let dist = if params.deterministic {
                SubtopicDistribution::point_mass(dim, pick.sample(&mut rng))
            } else {
                // 1 - U[0, 1) lies in (0, 1], so every entry stays positive.
                normalized(
                    pop.iter()
                        .map(|p| p * (1.0 - rng.random::<f64>()))
                        .collect(),
                )
            };
            Document::new(format!("d{i:0width$}"), dist)
        })
        .collect();

    let query_dist = match params.query_mode {
        QueryMode::Deterministic => SubtopicDistribution::point_mass(dim, pick.sample(&mut rng)),
        QueryMode::Uniform => SubtopicDistribution::uniform(dim),
        QueryMode::DirichletLike => normalized(
            pop.iter()
                .map(|p| {
                    Gamma::new(dim as f64 * p, 1.0)
                        .expect("gamma shape is positive")
                        .sample(&mut rng)
                })
                .collect(),
        ),
    };

    let labels = (0..dim).map(|t| format!("t{t}")).collect();
    let corpus = Corpus::new(labels, documents).expect("generated corpus is valid");
    Ok((
        corpus,
        Query::new(format!("seed-{}", params.seed), query_dist),
    ))
}

/// Greedy vs MMR on one corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub corpus_id: String,
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub greedy_value: f64,
    pub mmr_value: f64,
    /// `greedy_value - mmr_value`, signed.
    pub value_gap: f64,
    /// One entry per non-degenerate greedy step: does MMR, scoring the same
    /// selection state, produce the same tie set?
    pub per_step_tieset_match: Vec<bool>,
    pub degenerate_step_count: usize,
    /// Relevant documents selected before each greedy step (point-mass
    /// corpora only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relevant_before_step: Option<Vec<usize>>,
}

impl EquivalenceReport {
    pub fn values_match(&self) -> bool {
        self.value_gap.abs() <= VALUE_GAP_TOLERANCE
    }

    pub fn tie_sets_match(&self) -> bool {
        self.per_step_tieset_match.iter().all(|&m| m)
    }
}

fn achieved_value(
    corpus: &Corpus,
    query: &Query,
    ranking: &[String],
    params: NCallParams,
) -> Result<f64, LabError> {
    let state =
        SelectionState::from_ids(corpus, ranking).expect("rankers only return corpus documents");
    Ok(expected_n_call(&state, query, params)?)
}

/// Greedy expected n-call@k against MMR at `lambda_headline(n)` with
/// query-conditioned diversity.
pub fn compare_rankers(
    corpus: &Corpus,
    query: &Query,
    n: usize,
    k: usize,
) -> Result<EquivalenceReport, LabError> {
    compare_rankers_at(corpus, query, n, k, lambda_headline(n))
}

/// [`compare_rankers`] with an arbitrary MMR weight.
pub fn compare_rankers_at(
    corpus: &Corpus,
    query: &Query,
    n: usize,
    k: usize,
    lambda: f64,
) -> Result<EquivalenceReport, LabError> {
    let params = NCallParams::new(n, k)?;
    let config = MmrConfig::new(lambda, Sim2Mode::QueryConditioned)?;
    let greedy = greedy_rank(corpus, query, params)?;
    let mmr = mmr_rank(corpus, query, k, &config)?;

    let greedy_value = achieved_value(corpus, query, &greedy.ranking, params)?;
    let mmr_value = achieved_value(corpus, query, &mmr.ranking, params)?;

    let full = SelectionState::from_ids(corpus, &greedy.ranking)
        .expect("rankers only return corpus documents");
    let mut per_step_tieset_match = Vec::new();
    let mut relevant = Some(Vec::with_capacity(k));
    for step in 0..k {
        let state = full.prefix(step);
        relevant = relevant.and_then(|mut counts| {
            counts.push(relevant_selected_count(&state, query)?);
            Some(counts)
        });
        if !greedy.degenerate_steps[step] {
            let mmr_step = mmr_select_next(&state, corpus, query, &config)?;
            per_step_tieset_match.push(mmr_step.tie_set == greedy.tie_sets[step]);
        }
    }

    Ok(EquivalenceReport {
        corpus_id: query.id.clone(),
        n,
        k,
        lambda,
        greedy_value,
        mmr_value,
        value_gap: greedy_value - mmr_value,
        per_step_tieset_match,
        degenerate_step_count: greedy.degenerate_steps.iter().filter(|&&d| d).count(),
        relevant_before_step: relevant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiversityMetrics {
    pub distinct_subtopics: usize,
    /// Fraction of the query's support covered.
    pub subtopic_recall: f64,
    /// Some document was not a point mass; its most probable subtopic was
    /// used instead.
    pub approximate: bool,
}

/// Subtopic coverage of a ranking.
pub fn diversity_metrics(ranking: &SelectionState<'_>, query: &Query) -> DiversityMetrics {
    let mut covered = vec![false; query.dist.dim()];
    let mut approximate = false;
    for doc in ranking.documents() {
        let t = doc.dist.point_mass_index().unwrap_or_else(|| {
            approximate = true;
            doc.dist.argmax()
        });
        covered[t] = true;
    }
    let support: Vec<usize> = query.dist.support().collect();
    let hit = support.iter().filter(|&&t| covered[t]).count();
    DiversityMetrics {
        distinct_subtopics: covered.iter().filter(|&&c| c).count(),
        subtopic_recall: hit as f64 / support.len() as f64,
        approximate,
    }
}

/// Mean outcome of MMR at one trade-off weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub n: usize,
    pub k: usize,
    pub mean_value: f64,
    pub mean_distinct_subtopics: f64,
}

/// Mean outcome of greedy rankings over a batch of corpora.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingSummary {
    pub n: usize,
    pub k: usize,
    pub mean_value: f64,
    pub mean_distinct_subtopics: f64,
    /// Standard error of `mean_distinct_subtopics`.
    pub distinct_std_error: f64,
}

fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let len = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / len;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1.0);
    (mean, (var / len).sqrt())
}

fn check_grid(grid: &[f64]) -> Result<(), LabError> {
    if grid.is_empty() {
        return Err(LabError::InvalidParams("lambda grid is empty".into()));
    }
    match grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        Some(l) => Err(LabError::InvalidParams(format!(
            "grid value {l} is outside [0, 1]"
        ))),
        None => Ok(()),
    }
}

/// Generates `trials` corpora with seeds `params.seed + i`.
pub fn generate_batch(params: &GenParams, trials: usize) -> Result<Vec<(Corpus, Query)>, LabError> {
    params.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| generate_corpus(&params.with_seed(params.seed.wrapping_add(i as u64))))
        .collect()
}

/// MMR at every grid weight over a fixed batch of corpora.
pub fn sweep_corpora(
    corpora: &[(Corpus, Query)],
    n: usize,
    k: usize,
    grid: &[f64],
) -> Result<Vec<SweepRow>, LabError> {
    check_grid(grid)?;
    if corpora.is_empty() {
        return Err(LabError::InvalidParams("no corpora to sweep".into()));
    }
    let params = NCallParams::new(n, k)?;
    grid.iter()
        .map(|&lambda| {
            let config = MmrConfig::new(lambda, Sim2Mode::QueryConditioned)?;
            let per_corpus = corpora
                .par_iter()
                .map(|(corpus, query)| {
                    let trace = mmr_rank(corpus, query, k, &config)?;
                    let state = SelectionState::from_ids(corpus, &trace.ranking)
                        .expect("rankers only return corpus documents");
                    let value = expected_n_call(&state, query, params)?;
                    let distinct = diversity_metrics(&state, query).distinct_subtopics;
                    Ok((value, distinct as f64))
                })
                .collect::<Result<Vec<_>, LabError>>()?;
            let values: Vec<f64> = per_corpus.iter().map(|p| p.0).collect();
            let distinct: Vec<f64> = per_corpus.iter().map(|p| p.1).collect();
            Ok(SweepRow {
                lambda,
                n,
                k,
                mean_value: mean_and_std_error(&values).0,
                mean_distinct_subtopics: mean_and_std_error(&distinct).0,
            })
        })
        .collect()
}

/// Greedy rankings over a fixed batch of corpora.
pub fn summarize_greedy(
    corpora: &[(Corpus, Query)],
    n: usize,
    k: usize,
) -> Result<RankingSummary, LabError> {
    if corpora.is_empty() {
        return Err(LabError::InvalidParams("no corpora to summarize".into()));
    }
    let params = NCallParams::new(n, k)?;
    let per_corpus = corpora
        .par_iter()
        .map(|(corpus, query)| {
            let trace = greedy_rank(corpus, query, params)?;
            let state = SelectionState::from_ids(corpus, &trace.ranking)
                .expect("rankers only return corpus documents");
            let value = expected_n_call(&state, query, params)?;
            Ok((
                value,
                diversity_metrics(&state, query).distinct_subtopics as f64,
            ))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let values: Vec<f64> = per_corpus.iter().map(|p| p.0).collect();
    let distinct: Vec<f64> = per_corpus.iter().map(|p| p.1).collect();
    let (mean_distinct_subtopics, distinct_std_error) = mean_and_std_error(&distinct);
    Ok(RankingSummary {
        n,
        k,
        mean_value: mean_and_std_error(&values).0,
        mean_distinct_subtopics,
        distinct_std_error,
    })
}

/// Mean MMR outcome per grid weight over `trials` generated corpora.
pub fn lambda_sweep(
    params: &GenParams,
    n: usize,
    k: usize,
    grid: &[f64],
    trials: usize,
) -> Result<Vec<SweepRow>, LabError> {
    if trials == 0 {
        return Err(LabError::InvalidParams("trials must be positive".into()));
    }
    check_grid(grid)?;
    sweep_corpora(&generate_batch(params, trials)?, n, k, grid)
}

/// `steps + 1` evenly spaced weights from 0 to 1.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Corpus families of the equivalence suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFamily {
    /// Point-mass documents and a point-mass query.
    Deterministic,
    /// Point-mass documents under a spread-out query; only run for n = 1.
    PointMassDocuments,
}

impl fmt::Display for CorpusFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFamily::Deterministic => "deterministic",
            CorpusFamily::PointMassDocuments => "point_mass_documents",
        })
    }
}

/// Generation parameters of suite trial `trial` for result size `k`.
///
/// Subtopic count cycles through 2..=6 and document count through
/// `max(k, 6)..=12`, skew 1.
pub fn suite_params(family: CorpusFamily, base_seed: u64, trial: usize, k: usize) -> GenParams {
    let min_docs = k.max(6);
    let spread = 13usize.saturating_sub(min_docs).max(1);
    GenParams {
        seed: base_seed.wrapping_add(trial as u64),
        num_subtopics: 2 + trial % 5,
        num_docs: min_docs + (trial / 5) % spread,
        deterministic: true,
        query_mode: match family {
            CorpusFamily::Deterministic => QueryMode::Deterministic,
            CorpusFamily::PointMassDocuments => QueryMode::DirichletLike,
        },
        skew: 1.0,
    }
}

/// The corpora of one suite cell.
pub fn suite_corpora(
    family: CorpusFamily,
    base_seed: u64,
    trials: usize,
    k: usize,
) -> Vec<(Corpus, Query)> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            generate_corpus(&suite_params(family, base_seed, i, k))
                .expect("suite parameters are valid")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub n_values: Vec<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub trials: usize,
    /// MMR weight to use instead of `lambda_headline(n)`.
    pub lambda_override: Option<f64>,
    /// Also run n = 1 on point-mass documents with spread-out queries.
    pub include_point_mass_documents: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_values: vec![1, 2, 3],
            k_min: 1,
            k_max: 8,
            trials: 1000,
            lambda_override: None,
            include_point_mass_documents: true,
        }
    }
}

/// Aggregate over the corpora of one (family, n, k) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteCell {
    pub family: CorpusFamily,
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub trials: usize,
    /// Largest absolute value gap.
    pub value_gap: f64,
    pub gap_failures: usize,
    pub tieset_mismatches: usize,
    pub degenerate_steps: usize,
    pub mean_greedy_value: f64,
    pub mean_mmr_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub cells: Vec<SuiteCell>,
    /// Per-corpus reports whose value gap exceeded the tolerance.
    pub findings: Vec<EquivalenceReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.gap_failures == 0)
    }
}

/// Runs [`compare_rankers_at`] over every (family, n, k) cell of the suite.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport, LabError> {
    if config.trials == 0 {
        return Err(LabError::InvalidParams("trials must be positive".into()));
    }
    if config.n_values.is_empty() || config.n_values.contains(&0) {
        return Err(LabError::InvalidParams("n values must be positive".into()));
    }
    if let Some(l) = config.lambda_override {
        if !(0.0..=1.0).contains(&l) {
            return Err(LabError::InvalidParams(format!(
                "lambda {l} is outside [0, 1]"
            )));
        }
    }

    let mut plan = Vec::new();
    for &n in &config.n_values {
        for k in config.k_min.max(n)..=config.k_max {
            plan.push((CorpusFamily::Deterministic, n, k));
        }
    }
    if config.include_point_mass_documents && config.n_values.contains(&1) {
        for k in config.k_min.max(1)..=config.k_max {
            plan.push((CorpusFamily::PointMassDocuments, 1, k));
        }
    }

    let mut cells = Vec::with_capacity(plan.len());
    let mut findings = Vec::new();
    for (family, n, k) in plan {
        let lambda = config.lambda_override.unwrap_or_else(|| lambda_headline(n));
        let reports = (0..config.trials)
            .into_par_iter()
            .map(|i| {
                let (corpus, query) = generate_corpus(&suite_params(family, config.seed, i, k))?;
                compare_rankers_at(&corpus, &query, n, k, lambda)
            })
            .collect::<Result<Vec<_>, LabError>>()?;

        let trials = reports.len() as f64;
        cells.push(SuiteCell {
            family,
            n,
            k,
            lambda,
            trials: reports.len(),
            value_gap: reports
                .iter()
                .map(|r| r.value_gap.abs())
                .fold(0.0, f64::max),
            gap_failures: reports.iter().filter(|r| !r.values_match()).count(),
            tieset_mismatches: reports
                .iter()
                .map(|r| r.per_step_tieset_match.iter().filter(|&&m| !m).count())
                .sum(),
            degenerate_steps: reports.iter().map(|r| r.degenerate_step_count).sum(),
            mean_greedy_value: reports.iter().map(|r| r.greedy_value).sum::<f64>() / trials,
            mean_mmr_value: reports.iter().map(|r| r.mmr_value).sum::<f64>() / trials,
        });
        findings.extend(reports.into_iter().filter(|r| !r.values_match()));
    }
    Ok(SuiteReport { cells, findings })
}

/// Serializes flat rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Flat CSV form of an [`EquivalenceReport`].
#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRow<'a> {
    pub corpus_id: &'a str,
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub greedy_value: f64,
    pub mmr_value: f64,
    pub value_gap: f64,
    pub degenerate_steps: usize,
    pub tieset_match: bool,
}

impl<'a> From<&'a EquivalenceReport> for EquivalenceRow<'a> {
    fn from(r: &'a EquivalenceReport) -> Self {
        Self {
            corpus_id: &r.corpus_id,
            n: r.n,
            k: r.k,
            lambda: r.lambda,
            greedy_value: r.greedy_value,
            mmr_value: r.mmr_value,
            value_gap: r.value_gap,
            degenerate_steps: r.degenerate_step_count,
            tieset_match: r.tie_sets_match(),
        }
    }
}
