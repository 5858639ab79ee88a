//! Three-stage inference: log handle buffers during a plain coverage-guided
//! run, drop offsets that look like pointers, keys or data, then keep the
//! offsets that respond to systematically varied operation sequences.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::regions::StateVarRegion;
use super::VolatilityMetric;
use crate::fuzz::{Campaign, CampaignConfig, FeedbackMode};
use crate::minitee::handles::get_u32;
use crate::minitee::{HandleId, HandleKind};
use crate::probe::{Probe, ProbeError};
use crate::syscall::{parse_program, serialize_payload, ProgramError, TemplateSet, TestCase};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotEntry {
    pub testcase_id: u64,
    pub call_index: usize,
    pub ordinal: u16,
    pub kind: HandleKind,
    pub handle: HandleId,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HandleSnapshotLog {
    pub entries: Vec<SnapshotEntry>,
}

impl HandleSnapshotLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(&mut self, testcase_id: u64, result: &crate::minitee::ExecutionResult) {
        for (i, rec) in result.per_syscall.iter().enumerate() {
            for s in &rec.snapshots {
                self.entries.push(SnapshotEntry {
                    testcase_id,
                    call_index: i,
                    ordinal: rec.ordinal,
                    kind: s.kind,
                    handle: s.handle,
                    bytes: s.bytes.clone(),
                });
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("snapshot budget must be at least one execution")]
    ZeroBudget,
    #[error("seed corpus is empty")]
    NoSeeds,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("trial program rejected by the templates: {0}")]
    Template(#[from] ProgramError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// Runs a coverage-only campaign of `budget` executions from `seeds` and
/// logs every handle buffer after every executed call.
pub fn collect_snapshots(
    seeds: &[TestCase],
    budget: u64,
    probe: Box<dyn Probe + Send>,
    templates: Arc<TemplateSet>,
    campaign_seed: u64,
) -> Result<HandleSnapshotLog, InferError> {
    if budget == 0 {
        return Err(InferError::ZeroBudget);
    }
    if seeds.is_empty() {
        return Err(InferError::NoSeeds);
    }
    let config = CampaignConfig {
        budget,
        workers: 1,
        mode: FeedbackMode::CoverageOnly,
        campaign_seed,
        ..CampaignConfig::default()
    };
    let mut campaign =
        Campaign::with_probes(config, templates, seeds.to_vec(), Vec::new(), vec![probe]);
    let mut log = HandleSnapshotLog::default();
    let mut id = 0u64;
    campaign.run(&mut |exec| {
        log.record(id, exec.result);
        id += 1;
    });
    Ok(log)
}

/// Observed behaviour of one 4-byte sequence of one handle kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ByteSeqStats {
    pub offset: u32,
    pub distinct_values: BTreeSet<u32>,
    /// Times the value differed from the previous snapshot of the same
    /// handle within one test case.
    pub occurrence_count: u64,
}

impl ByteSeqStats {
    pub fn volatility(&self, metric: VolatilityMetric) -> u64 {
        match metric {
            VolatilityMetric::DistinctValues => self.distinct_values.len() as u64,
            VolatilityMetric::ValueChanges => self.occurrence_count,
        }
    }
}

/// Per-offset statistics for `kind`, one entry per aligned 4-byte sequence.
pub fn byte_seq_stats(log: &HandleSnapshotLog, kind: HandleKind) -> Vec<ByteSeqStats> {
    let len = kind.buffer_len();
    let mut stats: Vec<ByteSeqStats> = (0..len / 4)
        .map(|i| ByteSeqStats {
            offset: (i * 4) as u32,
            distinct_values: BTreeSet::new(),
            occurrence_count: 0,
        })
        .collect();
    let mut last: BTreeMap<(u64, HandleId), &[u8]> = BTreeMap::new();
    for e in log
        .entries
        .iter()
        .filter(|e| e.kind == kind && e.bytes.len() == len)
    {
        let prev = last.insert((e.testcase_id, e.handle), &e.bytes);
        for s in &mut stats {
            let off = s.offset as usize;
            let v = get_u32(&e.bytes, off);
            s.distinct_values.insert(v);
            if prev.is_some_and(|p| get_u32(p, off) != v) {
                s.occurrence_count += 1;
            }
        }
    }
    stats
}

/// Surviving offsets per handle kind.
pub type Candidates = BTreeMap<HandleKind, Vec<u32>>;

/// Keeps the offsets whose volatility is at most `threshold`. Kinds that
/// never appear in the log get no candidates.
pub fn filter_volatile(
    log: &HandleSnapshotLog,
    threshold: u64,
    metric: VolatilityMetric,
) -> Candidates {
    let mut out = Candidates::new();
    for kind in HandleKind::ALL {
        if !log.entries.iter().any(|e| e.kind == kind) {
            continue;
        }
        let keep: Vec<u32> = byte_seq_stats(log, kind)
            .into_iter()
            .filter(|s| s.volatility(metric) <= threshold)
            .map(|s| s.offset)
            .collect();
        out.insert(kind, keep);
    }
    out
}

/// One point of the inference experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trial {
    pub algorithm: u32,
    pub key_type: u32,
    pub key_bits: u32,
    pub mode: u32,
    pub mac: bool,
    /// 1: allocation only, 2: key loaded, 3: operation started.
    pub depth: u8,
}

impl Trial {
    fn program(&self) -> String {
        let key = "a5".repeat(self.key_bits as usize / 8);
        let mut p = format!(
            "r0 = TEE_AllocateOperation({:#x}, {}, {})\nr1 = TEE_AllocateTransientObject({:#x}, {})\n",
            self.algorithm, self.mode, self.key_bits, self.key_type, self.key_bits
        );
        if self.depth >= 2 {
            p += &format!(
                "r2 = TEE_InitRefAttribute(0xC0000000, \"{key}\")\nTEE_PopulateTransientObject(r1, r2, 1)\nTEE_SetOperationKey(r0, r1)\n"
            );
        }
        if self.depth >= 3 {
            let data = "00112233445566778899aabbccddeeff";
            if self.mac {
                p += &format!("TEE_MACInit(r0, \"\")\nTEE_MACUpdate(r0, \"{data}\", 16)\n");
            } else {
                p += &format!(
                    "TEE_CipherInit(r0, \"{data}\")\nTEE_CipherUpdate(r0, \"{data}\", 16)\n"
                );
            }
        }
        p
    }
}

/// Two algorithms by two modes by three sequence depths.
pub fn trial_plan() -> Vec<Trial> {
    const ALGS: [(u32, u32, u32, bool, [u32; 2]); 2] = [
        (0x1000_0110, 0xA000_0010, 128, false, [0, 1]),
        (0x3000_0004, 0xA000_0004, 256, true, [4, 6]),
    ];
    (0..12)
        .map(|i| {
            let (algorithm, key_type, key_bits, mac, modes) = ALGS[i % 2];
            Trial {
                algorithm,
                key_type,
                key_bits,
                mode: modes[(i / 2) % 2],
                mac,
                depth: (i / 4 % 3 + 1) as u8,
            }
        })
        .collect()
}

type Observation = BTreeMap<(HandleKind, u32), u32>;

fn observe(
    probe: &mut dyn Probe,
    payload: &[u8],
    candidates: &Candidates,
) -> Result<Observation, ProbeError> {
    let res = probe.submit(payload)?;
    let mut obs = Observation::new();
    let Some(last) = res.per_syscall.last() else {
        return Ok(obs);
    };
    for (kind, offsets) in candidates {
        if let Some(snap) = last.snapshots.iter().find(|s| s.kind == *kind) {
            for &off in offsets {
                obs.insert((*kind, off), get_u32(&snap.bytes, off as usize));
            }
        }
    }
    Ok(obs)
}

/// Runs the first `trials` plan entries twice each and returns the
/// candidates that are repeatable within a trial and differ between trials.
pub fn infer_state_vars(
    candidates: &Candidates,
    templates: &TemplateSet,
    probe: &mut dyn Probe,
    trials: usize,
) -> Result<Vec<StateVarRegion>, InferError> {
    if trials == 0 {
        return Err(InferError::NoTrials);
    }
    let plan = trial_plan();
    if trials > plan.len() {
        log::warn!(
            "only {} distinct trials available, running those",
            plan.len()
        );
    }
    let mut unstable: BTreeSet<(HandleKind, u32)> = BTreeSet::new();
    let mut seen: BTreeMap<(HandleKind, u32), BTreeSet<u32>> = BTreeMap::new();
    for trial in plan.iter().take(trials) {
        let payload = serialize_payload(&parse_program(&trial.program(), templates)?)
            .expect("trial programs encode");
        let a = observe(probe, &payload, candidates)?;
        let b = observe(probe, &payload, candidates)?;
        for (key, v) in &a {
            if b.get(key) != Some(v) {
                unstable.insert(*key);
            }
            seen.entry(*key).or_default().insert(*v);
        }
    }
    let mut out: Vec<StateVarRegion> = seen
        .into_iter()
        .filter(|(key, values)| values.len() >= 2 && !unstable.contains(key))
        .map(|((kind, off), _)| StateVarRegion::new(kind, off))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::SimProbe;

    fn entry(tc: u64, handle: u32, bytes: Vec<u8>) -> SnapshotEntry {
        SnapshotEntry {
            testcase_id: tc,
            call_index: 0,
            ordinal: 0,
            kind: HandleKind::Object,
            handle: HandleId(handle),
            bytes,
        }
    }

    #[test]
    fn stats_count_distinct_values_and_changes() {
        let mut a = vec![0u8; 48];
        let mut log = HandleSnapshotLog::default();
        log.entries.push(entry(0, 1, a.clone()));
        a[4] = 1;
        log.entries.push(entry(0, 1, a.clone()));
        log.entries.push(entry(1, 1, a.clone()));
        a[4] = 0;
        log.entries.push(entry(1, 1, a.clone()));
        let s = &byte_seq_stats(&log, HandleKind::Object)[1];
        assert_eq!(s.distinct_values.len(), 2);
        assert_eq!(s.occurrence_count, 2);
        let c = filter_volatile(&log, 1, VolatilityMetric::DistinctValues);
        assert!(!c[&HandleKind::Object].contains(&4));
        assert!(c[&HandleKind::Object].contains(&0));
        assert!(!c.contains_key(&HandleKind::Operation));
        assert!(
            filter_volatile(&log, 0, VolatilityMetric::DistinctValues)[&HandleKind::Object]
                .is_empty()
        );
    }

    #[test]
    fn plan_is_full_factorial() {
        let plan = trial_plan();
        let distinct: BTreeSet<(u32, u32, u8)> = plan
            .iter()
            .map(|t| (t.algorithm, t.mode, t.depth))
            .collect();
        assert_eq!(distinct.len(), 12);
    }

    #[test]
    fn single_trial_infers_nothing() {
        let t = TemplateSet::bundled();
        let mut c = Candidates::new();
        c.insert(HandleKind::Operation, (0..16).map(|i| i * 4).collect());
        let mut probe = SimProbe::new(3);
        assert!(infer_state_vars(&c, &t, &mut probe, 1).unwrap().is_empty());
        assert!(matches!(
            infer_state_vars(&c, &t, &mut probe, 0),
            Err(InferError::NoTrials)
        ));
    }

    #[test]
    fn zero_budget_is_rejected() {
        let t = Arc::new(TemplateSet::bundled());
        let r = collect_snapshots(&[], 0, Box::new(SimProbe::new(0)), t, 0);
        assert!(matches!(r, Err(InferError::ZeroBudget)));
    }

    #[test]
    fn one_execution_logs_every_live_handle_after_every_call() {
        let t = Arc::new(TemplateSet::bundled());
        let seed = parse_program(
            "r0 = TEE_AllocateOperation(0x10000110, 0, 128)\nTEE_ResetOperation(r0)\nTEE_ResetOperation(r0)\n",
            &t,
        )
        .unwrap();
        let log =
            collect_snapshots(&[seed], 1, Box::new(SimProbe::new(0)), Arc::clone(&t), 0).unwrap();
        assert_eq!(log.len(), 3);
        assert!(log
            .entries
            .iter()
            .all(|e| e.kind == HandleKind::Operation && e.bytes.len() == 64));
    }
}
