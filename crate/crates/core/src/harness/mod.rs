//! Data ingestion, persistence, and external entailment oracles.

pub mod cache;
pub mod dataset;
pub mod remote;

pub use cache::{CachedOracle, EntailmentCache, MatrixOracle};
pub use dataset::{label_correctness, load_dataset, save_dataset, Matcher, QuestionRecord};
pub use remote::{RemoteConfig, RemoteOracle, ENDPOINT_ENV};
