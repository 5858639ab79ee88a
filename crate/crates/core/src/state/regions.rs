use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minitee::{HandleKind, GROUND_TRUTH};

/// A 4-byte window inside a handle buffer that holds a state variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateVarRegion {
    pub kind: HandleKind,
    pub offset: u32,
    pub len: u32,
}

impl StateVarRegion {
    pub fn new(kind: HandleKind, offset: u32) -> Self {
        Self {
            kind,
            offset,
            len: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum RegionFileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("regions at {kind} offsets {a} and {b} overlap")]
    Overlap { kind: HandleKind, a: u32, b: u32 },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Parses the `handleKind offset length` line format. The result is sorted
/// by (kind, offset).
pub fn parse_regions(text: &str) -> Result<Vec<StateVarRegion>, RegionFileError> {
    let mut out = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| RegionFileError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [kind, offset, len] = fields[..] else {
            return Err(err(format!(
                "expected `handleKind offset length`, got `{line}`"
            )));
        };
        let kind = HandleKind::from_name(kind)
            .ok_or_else(|| err(format!("unknown handle kind `{kind}`")))?;
        let offset: u32 = offset
            .parse()
            .map_err(|_| err(format!("bad offset `{offset}`")))?;
        let len: u32 = len
            .parse()
            .map_err(|_| err(format!("bad length `{len}`")))?;
        if len == 0 || (offset + len) as usize > kind.buffer_len() {
            return Err(err(format!(
                "region {offset}+{len} outside the {}-byte {kind} buffer",
                kind.buffer_len()
            )));
        }
        out.insert(StateVarRegion { kind, offset, len });
    }
    let regions: Vec<StateVarRegion> = out.into_iter().collect();
    for w in regions.windows(2) {
        if w[0].kind == w[1].kind && w[0].offset + w[0].len > w[1].offset {
            return Err(RegionFileError::Overlap {
                kind: w[0].kind,
                a: w[0].offset,
                b: w[1].offset,
            });
        }
    }
    Ok(regions)
}

pub fn load_regions(path: &Path) -> Result<Vec<StateVarRegion>, RegionFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegionFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_regions(&text)
}

pub fn format_regions(regions: &[StateVarRegion]) -> String {
    let mut sorted = regions.to_vec();
    sorted.sort();
    let mut out = String::new();
    for r in sorted {
        let _ = writeln!(out, "{} {} {}", r.kind, r.offset, r.len);
    }
    out
}

/// Regions of the true MiniTEE state fields.
pub fn ground_truth_regions() -> Vec<StateVarRegion> {
    GROUND_TRUTH
        .iter()
        .map(|&(k, off)| StateVarRegion::new(k, off))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceScore {
    pub true_positives: usize,
    pub false_positives: Vec<StateVarRegion>,
    pub missed: Vec<StateVarRegion>,
    pub precision: f64,
    pub recall: f64,
}

/// Compares inferred regions with the MiniTEE ground truth. An empty
/// inference has precision 0.
pub fn score_regions(inferred: &[StateVarRegion]) -> InferenceScore {
    let truth: BTreeSet<StateVarRegion> = ground_truth_regions().into_iter().collect();
    let got: BTreeSet<StateVarRegion> = inferred.iter().copied().collect();
    let tp = got.intersection(&truth).count();
    InferenceScore {
        true_positives: tp,
        false_positives: got.difference(&truth).copied().collect(),
        missed: truth.difference(&got).copied().collect(),
        precision: if got.is_empty() {
            0.0
        } else {
            tp as f64 / got.len() as f64
        },
        recall: tp as f64 / truth.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_sorts() {
        let text = "ObjectHandle 4 4\n# comment\nOperationHandle 12 4\n";
        let r = parse_regions(text).unwrap();
        assert_eq!(r[0], StateVarRegion::new(HandleKind::Operation, 12));
        assert_eq!(parse_regions(&format_regions(&r)).unwrap(), r);
    }

    #[test]
    fn rejects_overlap_bounds_and_junk() {
        assert!(matches!(
            parse_regions("OperationHandle 12 4\nOperationHandle 14 4\n"),
            Err(RegionFileError::Overlap { .. })
        ));
        assert!(parse_regions("OperationHandle 62 4\n").is_err());
        assert!(parse_regions("Nope 0 4\n").is_err());
        assert!(parse_regions("OperationHandle 0\n").is_err());
    }

    #[test]
    fn scoring_against_ground_truth() {
        let perfect = score_regions(&ground_truth_regions());
        assert_eq!((perfect.precision, perfect.recall), (1.0, 1.0));
        let mut noisy = ground_truth_regions();
        noisy.truncate(8);
        noisy.push(StateVarRegion::new(HandleKind::Operation, 40));
        let s = score_regions(&noisy);
        assert_eq!(s.true_positives, 8);
        assert!((s.precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((s.recall - 0.8).abs() < 1e-12);
    }
}
