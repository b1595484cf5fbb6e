//! Hierarchical multi-task learning for four semantic tasks: named entity
//! recognition (NER), entity mention detection (EMD), coreference resolution
//! (CR) and relation extraction (RE).
//!
//! The model stacks one bidirectional LSTM encoder per task. Low-level tasks
//! sit at the bottom, and every encoder also sees the shared word
//! representation through a shortcut connection:
//!
//! ```text
//!   g_e ──► NER encoder ──► g_ner ─┐
//!    ├─────────────────────────────┴► EMD encoder ──► g_emd ─┬─► CR encoder ─► g_cr
//!    └───────────────────────────────────────────────────────┴─► RE encoder ─► g_re
//! ```
//!
//! Training picks one task per update with probability proportional to its
//! dataset size. An update only touches the task's own layers and the layers
//! below it.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod coref;
pub mod corpus;
pub mod crf;
pub mod embedder;
pub mod encoder;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod probe;
pub mod relation;
pub mod tensor;
pub mod trainer;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use corpus::{Document, RelationInstance, TaggedSpan};
pub use model::Model;
pub use tensor::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss {loss} for task {task} at update {update}")]
    NonFinite { task: Task, update: u64, loss: f64 },
    #[error("{0}")]
    Probe(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems are reported with a distinct process exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The four supervised tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ner,
    Emd,
    Cr,
    Re,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Ner, Task::Emd, Task::Re, Task::Cr];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ner => "ner",
            Task::Emd => "emd",
            Task::Cr => "cr",
            Task::Re => "re",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ner" => Some(Task::Ner),
            "emd" => Some(Task::Emd),
            "cr" | "coref" => Some(Task::Cr),
            "re" | "relation" => Some(Task::Re),
            _ => None,
        }
    }

    /// Sequence-labelling tasks that occupy the lower, ordered levels.
    pub fn is_tagging(self) -> bool {
        matches!(self, Task::Ner | Task::Emd)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
