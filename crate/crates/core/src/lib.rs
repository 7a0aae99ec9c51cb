//! Expected n-call@k under a latent subtopic model of binary relevance, the
//! greedy ranker that optimizes it exactly, MMR, and a seeded lab showing
//! that greedy n-call@k selection behaves like MMR with `λ = n / (n + 1)`.

pub mod cli;
pub mod lab;
pub mod model;
pub mod objective;
pub mod ranker;

pub use model::{
    is_deterministic_corpus, parse_corpus, serialize_corpus, validate_distribution, Corpus,
    CorpusError, DistributionError, Document, Query, SelectionState, SubtopicDistribution,
    SubtopicId,
};
pub use objective::{
    expected_n_call, marginal_gain, rel_count_pmf, rel_count_pmf_bruteforce, relevance_indicator,
    unrolled_objective, NCallParams, ObjectiveError, RelCountPmf,
};
pub use ranker::{
    greedy_rank, greedy_select_next, lambda_for, lambda_headline, mmr_rank, mmr_select_next, sim1,
    sim2, MmrConfig, RankError, RankTrace, Sim2Mode,
};
