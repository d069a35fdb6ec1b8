//! Evaluation harness for emotion-intensity scoring with large language models.

pub mod client;
pub mod config;
pub mod corpus;
pub mod dimension;
pub mod jsonl;
pub mod metrics;
pub mod mocksim;
pub mod parser;
pub mod prompting;
pub mod protocol;
pub mod report;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}
