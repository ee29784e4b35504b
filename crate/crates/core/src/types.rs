use serde::{Deserialize, Serialize};

/// Identifier of a class inside a learner (known or discovered).
pub type ClassId = usize;

/// What the agent decided for one stream item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Unknown,
    Known(ClassId),
    Discovered(ClassId),
}

impl Prediction {
    pub fn is_known(&self) -> bool {
        matches!(self, Prediction::Known(_))
    }

    /// Label used when predictions act as clusters: all unknowns share `-1`.
    pub fn cluster_label(&self) -> i64 {
        match *self {
            Prediction::Unknown => -1,
            Prediction::Known(k) => k as i64,
            Prediction::Discovered(d) => d as i64,
        }
    }
}

/// Ground truth for a stream item, visible only to scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: i64,
    pub known: bool,
}
