//! Subcommand implementations shared by the CLI, the acceptance suite and
//! tests. Each returns a value and writes its artifacts; printing is left to
//! the caller.

use std::fmt;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{coverage_of, read_trace_dump, TraceDumpError, TracePacket, SECURE_RANGE};
use crate::fuzz::{
    Campaign, CampaignConfig, CampaignReport, ConfigError, CrashId, FeedbackMode, TimelinePoint,
};
use crate::minitee::{bug_for_frames, BugId, FaultRecord};
use crate::probe::{Probe, SimProbe};
use crate::state::{
    call_state_hash, collect_snapshots, filter_volatile, format_regions, infer_state_vars,
    load_regions, score_regions, Candidates, InferError, InferenceScore, RegionFileError,
    StateHash, StateVarRegion,
};
use crate::stt::StateTransitionTree;
use crate::syscall::{
    format_program, load_seed_corpus, parse_program, serialize_payload, CorpusError, PayloadError,
    TemplateError, TemplateSet, TestCase,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Regions(#[from] RegionFileError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("decode error: {0}")]
    Decode(PayloadError),
    #[error("trace dump: {0}")]
    TraceDump(#[from] TraceDumpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CommandError {
    /// Process exit code: 2 for bad configuration or inputs named by the
    /// configuration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_)
            | CommandError::Usage(_)
            | CommandError::Templates(_)
            | CommandError::Regions(_)
            | CommandError::Corpus(_)
            | CommandError::Decode(_)
            | CommandError::TraceDump(_)
            | CommandError::Infer(
                InferError::ZeroBudget | InferError::NoSeeds | InferError::NoTrials,
            ) => 2,
            _ => 1,
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CommandError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(path, contents).map_err(io(path))
}

pub fn load_templates(config: &CampaignConfig) -> Result<Arc<TemplateSet>, CommandError> {
    Ok(Arc::new(match &config.templates_file {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::bundled(),
    }))
}

/// Seeds from `corpus_dir`, or the bundled corpus when none is configured.
pub fn load_seeds(
    config: &CampaignConfig,
    templates: &TemplateSet,
) -> Result<Vec<TestCase>, CommandError> {
    match &config.corpus_dir {
        Some(dir) => Ok(load_seed_corpus(dir, templates)?
            .seeds
            .into_iter()
            .map(|(_, tc)| tc)
            .collect()),
        None => Ok(crate::bundled_corpus()
            .iter()
            .map(|(name, text)| {
                parse_program(text, templates)
                    .unwrap_or_else(|e| panic!("bundled seed {name}: {e}"))
            })
            .collect()),
    }
}

/// Regions for a campaign. State-aware modes require a regions file.
pub fn load_campaign_regions(config: &CampaignConfig) -> Result<Vec<StateVarRegion>, CommandError> {
    match &config.regions_file {
        Some(p) => Ok(load_regions(p)?),
        None if config.mode.uses_state() => Err(CommandError::Usage(format!(
            "mode {} needs regions_file (run infer-state first)",
            config.mode
        ))),
        None => Ok(Vec::new()),
    }
}

/// File name of a corpus entry: FNV-1a of its payload bytes.
pub fn content_name(payload: &[u8]) -> String {
    let mut h = FnvHasher::default();
    h.write(payload);
    format!("{:016x}", h.finish())
}

/// Result of `fuzz`, with the campaign's preserved corpus.
pub struct FuzzOutcome {
    pub report: CampaignReport,
    pub corpus: Vec<Arc<TestCase>>,
}

/// Runs a campaign and writes `stats.jsonl`, `report.json`, `corpus/` and
/// `crashes/` under the output directory.
pub fn fuzz(config: &CampaignConfig) -> Result<FuzzOutcome, CommandError> {
    config.validate()?;
    let templates = load_templates(config)?;
    let regions = load_campaign_regions(config)?;
    let mut seeds = load_seeds(config, &templates)?;
    let corpus_dir = config.output_dir.join("corpus");
    if config.resume && corpus_dir.is_dir() {
        let resumed = load_seed_corpus(&corpus_dir, &templates)?;
        log::info!("resuming with {} preserved test cases", resumed.seeds.len());
        seeds.extend(resumed.seeds.into_iter().map(|(_, tc)| tc));
    }
    let mut campaign = Campaign::new(config.clone(), Arc::clone(&templates), seeds, regions)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let report = campaign.run(&mut |_| {});
    let corpus = campaign.preserved().to_vec();
    write_artifacts(&config.output_dir, &report, &corpus, &templates)?;
    Ok(FuzzOutcome { report, corpus })
}

pub fn stats_jsonl(timeline: &[TimelinePoint]) -> String {
    timeline
        .iter()
        .map(|p| serde_json::to_string(p).expect("plain struct") + "\n")
        .collect()
}

fn write_artifacts(
    out: &Path,
    report: &CampaignReport,
    corpus: &[Arc<TestCase>],
    templates: &TemplateSet,
) -> Result<(), CommandError> {
    write(&out.join("stats.jsonl"), stats_jsonl(&report.timeline))?;
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(report).expect("plain struct") + "\n",
    )?;
    let corpus_dir = out.join("corpus");
    std::fs::create_dir_all(&corpus_dir).map_err(io(&corpus_dir))?;
    for tc in corpus {
        let payload = serialize_payload(tc).expect("preserved test cases encode");
        write(
            &corpus_dir.join(format!("{}.prog", content_name(&payload))),
            format_program(tc, templates),
        )?;
    }
    let crash_dir = out.join("crashes");
    std::fs::create_dir_all(&crash_dir).map_err(io(&crash_dir))?;
    for c in &report.crashes {
        let dir = crash_dir.join(c.id.dir_name());
        write(&dir.join("payload.bin"), &c.payload)?;
        write(&dir.join("frames.txt"), c.frames.join("\n") + "\n")?;
        write(
            &dir.join("program.prog"),
            format_program(&c.testcase, templates),
        )?;
        write(
            &dir.join("crash.json"),
            serde_json::to_string_pretty(c).expect("plain struct") + "\n",
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct InferOutcome {
    pub log_entries: usize,
    pub candidates: Candidates,
    pub regions: Vec<StateVarRegion>,
    /// Comparison with the MiniTEE ground truth.
    pub score: InferenceScore,
    pub regions_file: PathBuf,
}

/// Where `infer-state` writes its regions: `regions_file` if configured,
/// else `state.regions` in the output directory.
pub fn regions_output_path(config: &CampaignConfig) -> PathBuf {
    config
        .regions_file
        .clone()
        .unwrap_or_else(|| config.output_dir.join("state.regions"))
}

/// Snapshot collection, volatility filter and active inference, then writes
/// the regions file.
pub fn infer(config: &CampaignConfig) -> Result<InferOutcome, CommandError> {
    config.validate()?;
    let templates = load_templates(config)?;
    let seeds = load_seeds(config, &templates)?;
    let probe = SimProbe::with_templates(Arc::clone(&templates), config.campaign_seed)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let log = collect_snapshots(
        &seeds,
        config.infer_budget,
        Box::new(probe),
        Arc::clone(&templates),
        config.campaign_seed,
    )?;
    let candidates = filter_volatile(
        &log,
        config.volatility_threshold as u64,
        config.volatility_metric,
    );
    let mut probe = SimProbe::with_templates(Arc::clone(&templates), config.campaign_seed)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let regions = infer_state_vars(&candidates, &templates, &mut probe, config.infer_trials)?;
    probe.close();
    let path = regions_output_path(config);
    write(&path, format_regions(&regions))?;
    Ok(InferOutcome {
        log_entries: log.len(),
        candidates,
        score: score_regions(&regions),
        regions,
        regions_file: path,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCall {
    pub name: String,
    pub branches: usize,
    pub state: StateHash,
    pub return_code: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub calls: Vec<ReplayCall>,
    pub fault: Option<FaultRecord>,
    pub crash_id: Option<CrashId>,
    pub bug: Option<BugId>,
    /// Raw per-call traces, for `--write-trace`.
    #[serde(skip)]
    pub traces: Vec<Vec<TracePacket>>,
}

impl ReplayReport {
    pub fn distinct_states(&self) -> usize {
        self.calls
            .iter()
            .map(|c| c.state)
            .collect::<std::collections::BTreeSet<_>>()
            .len()
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>3}  {:<30} {:>8}  {:<16}  {:>10}",
            "#", "syscall", "branches", "state", "return"
        )?;
        for (i, c) in self.calls.iter().enumerate() {
            writeln!(
                f,
                "{i:>3}  {:<30} {:>8}  {}  {:#010x}",
                c.name, c.branches, c.state, c.return_code
            )?;
        }
        match (&self.fault, &self.crash_id) {
            (Some(fault), Some(id)) => {
                writeln!(
                    f,
                    "fault: {} at call {}",
                    fault.kind, fault.faulting_call_index
                )?;
                writeln!(f, "crash id: {id}")?;
                if let Some(b) = self.bug {
                    writeln!(f, "seeded bug: {b}")?;
                }
                for frame in &fault.frames {
                    writeln!(f, "    {frame}")?;
                }
                Ok(())
            }
            _ => writeln!(f, "no fault"),
        }
    }
}

/// Executes `payload` once and reports per-call coverage, state and fault.
pub fn replay(
    payload: &[u8],
    regions: &[StateVarRegion],
    templates: Arc<TemplateSet>,
    campaign_seed: u64,
) -> Result<ReplayReport, CommandError> {
    let mut probe = SimProbe::with_templates(Arc::clone(&templates), campaign_seed)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let res = probe.submit(payload).expect("fresh probe is open");
    if let Some(e) = res.decode_error {
        return Err(CommandError::Decode(e));
    }
    let calls = res
        .per_syscall
        .iter()
        .map(|rec| ReplayCall {
            name: templates
                .get(rec.ordinal)
                .map_or_else(|| format!("syscall_{}", rec.ordinal), |t| t.name.clone()),
            branches: coverage_of(&rec.trace).len(),
            state: call_state_hash(regions, rec),
            return_code: rec.return_code,
        })
        .collect();
    let crash_id = res.fault.as_ref().map(|f| CrashId::from_frames(&f.frames));
    let bug = res.fault.as_ref().and_then(|f| bug_for_frames(&f.frames));
    Ok(ReplayReport {
        calls,
        fault: res.fault,
        crash_id,
        bug,
        traces: res.per_syscall.into_iter().map(|r| r.trace).collect(),
    })
}

/// Per-call summary of a trace dump.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceCall {
    pub packets: usize,
    pub secure_packets: usize,
    pub branches: usize,
}

/// Reads a trace dump and computes the coverage of each recorded call.
pub fn trace_summary(dump: &[u8]) -> Result<Vec<TraceCall>, CommandError> {
    Ok(read_trace_dump(&mut &dump[..])?
        .iter()
        .map(|t| TraceCall {
            packets: t.len(),
            secure_packets: t
                .iter()
                .filter(|p| SECURE_RANGE.contains(p.base_address()))
                .count(),
            branches: coverage_of(t).len(),
        })
        .collect())
}

/// Replays every test case in `seeds` and builds the transition tree.
pub fn stt_export(
    seeds: &[TestCase],
    regions: &[StateVarRegion],
    templates: Arc<TemplateSet>,
    campaign_seed: u64,
) -> Result<StateTransitionTree, CommandError> {
    if seeds.is_empty() {
        return Err(CommandError::Usage("corpus is empty".into()));
    }
    let mut probe = SimProbe::with_templates(Arc::clone(&templates), campaign_seed)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let mut stt = StateTransitionTree::new(regions);
    for tc in seeds {
        let payload = serialize_payload(tc).map_err(|e| CommandError::Usage(e.to_string()))?;
        let res = probe.submit(&payload).expect("fresh probe is open");
        stt.add_execution(&res, regions, &templates);
    }
    Ok(stt)
}

/// Converts `stats.jsonl` to CSV with a header row.
pub fn plot(stats: &str) -> Result<String, CommandError> {
    let mut csv = String::from("execs,branches,states,crashes,elapsed_ms\n");
    for (i, line) in stats
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let p: TimelineRow = serde_json::from_str(line)
            .map_err(|e| CommandError::Usage(format!("stats line {}: {e}", i + 1)))?;
        csv += &format!(
            "{},{},{},{},{}\n",
            p.execs, p.branches, p.states, p.crashes, p.elapsed_ms
        );
    }
    Ok(csv)
}

#[derive(Deserialize)]
struct TimelineRow {
    execs: u64,
    branches: u64,
    states: u64,
    crashes: u64,
    elapsed_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub mode: FeedbackMode,
    pub executions: u64,
    pub wall_ms: u128,
    pub execs_per_sec: f64,
    pub bugs_found: Vec<BugId>,
}

/// Times one campaign of `budget` executions against ground-truth regions.
pub fn bench(budget: u64, mode: FeedbackMode, campaign_seed: u64) -> BenchReport {
    let templates = Arc::new(TemplateSet::bundled());
    let config = CampaignConfig {
        budget,
        mode,
        campaign_seed,
        ..CampaignConfig::default()
    };
    let seeds = load_seeds(&config, &templates).expect("bundled corpus parses");
    let start = Instant::now();
    let mut campaign = Campaign::new(
        config,
        templates,
        seeds,
        crate::state::ground_truth_regions(),
    )
    .expect("bundled templates match the simulator");
    let report = campaign.run(&mut |_| {});
    let wall = start.elapsed();
    let mut bugs: Vec<BugId> = report.crashes.iter().filter_map(|c| c.bug).collect();
    bugs.sort();
    BenchReport {
        mode,
        executions: report.executions,
        wall_ms: wall.as_millis(),
        execs_per_sec: report.executions as f64 / wall.as_secs_f64().max(1e-9),
        bugs_found: bugs,
    }
}
