//! State-variable inference over handle buffers and the state hash built
//! from the inferred regions.

mod hash;
mod infer;
mod regions;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use hash::{
    call_state_hash, state_hash, state_hash_of, state_hash_of_reads, StateHash, ABSENT_MARKER,
    HANDLE_MARKER,
};
pub use infer::{
    byte_seq_stats, collect_snapshots, filter_volatile, infer_state_vars, trial_plan, ByteSeqStats,
    Candidates, HandleSnapshotLog, InferError, SnapshotEntry, Trial,
};
pub use regions::{
    format_regions, ground_truth_regions, load_regions, parse_regions, score_regions,
    InferenceScore, RegionFileError, StateVarRegion,
};

/// How a 4-byte sequence is judged too volatile to be a state variable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolatilityMetric {
    /// Number of distinct values observed at the offset.
    #[default]
    DistinctValues,
    /// Number of times the value changed between consecutive snapshots of
    /// the same handle.
    ValueChanges,
}

impl VolatilityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            VolatilityMetric::DistinctValues => "distinct_values",
            VolatilityMetric::ValueChanges => "value_changes",
        }
    }
}

impl fmt::Display for VolatilityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VolatilityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "distinct_values" => Ok(VolatilityMetric::DistinctValues),
            "value_changes" => Ok(VolatilityMetric::ValueChanges),
            _ => Err(format!(
                "unknown volatility metric `{s}` (distinct_values, value_changes)"
            )),
        }
    }
}
