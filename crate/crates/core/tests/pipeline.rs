use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use tzfuzz_core::commands::{self, CommandError};
use tzfuzz_core::fuzz::{dedup, CampaignConfig, CrashId, FeedbackMode};
use tzfuzz_core::minitee::handles::{HANDLE_STATE_INITIALIZED, OP_HANDLE_STATE};
use tzfuzz_core::minitee::{FaultKind, FaultRecord, HandleKind, MiniTee};
use tzfuzz_core::state::{ground_truth_regions, load_regions, score_regions};
use tzfuzz_core::syscall::{
    load_seed_corpus, parse_program, serialize_payload, validate_testcase, TemplateSet,
};

fn config(out: &Path, mode: FeedbackMode, budget: u64) -> CampaignConfig {
    let regions = out.join("truth.regions");
    std::fs::write(
        &regions,
        tzfuzz_core::state::format_regions(&ground_truth_regions()),
    )
    .unwrap();
    CampaignConfig {
        budget,
        mode,
        campaign_seed: 42,
        regions_file: mode.uses_state().then_some(regions),
        output_dir: out.join("run"),
        stats_every: 500,
        ..CampaignConfig::default()
    }
}

#[test]
fn bundled_corpus_is_valid_and_fault_free() {
    let t = TemplateSet::bundled();
    let mut tee = MiniTee::new(0);
    let mut deepest = 0;
    for (name, text) in tzfuzz_core::bundled_corpus() {
        let tc = parse_program(text, &t).unwrap_or_else(|e| panic!("{name}: {e}"));
        validate_testcase(&tc, &t).unwrap();
        let res = tee.execute_payload(&serialize_payload(&tc).unwrap());
        assert!(res.fault.is_none(), "{name} faults");
        assert_eq!(res.executed_count, tc.len());
        for rec in &res.per_syscall {
            for s in rec
                .snapshots
                .iter()
                .filter(|s| s.kind == HandleKind::Operation)
            {
                let hs = u32::from_le_bytes(s.bytes[OP_HANDLE_STATE..][..4].try_into().unwrap());
                deepest = deepest.max(hs);
            }
        }
    }
    assert_eq!(deepest, HANDLE_STATE_INITIALIZED);
}

#[test]
fn shipped_config_files_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["composite.conf", "coverage_only.conf", "infer.conf"] {
        CampaignConfig::load(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let regions = load_regions(&root.join("minitee.regions")).unwrap();
    assert_eq!(regions, ground_truth_regions());
}

#[test]
fn frames_beyond_the_third_do_not_split_crashes() {
    let fault = |frames: &[&str]| FaultRecord {
        kind: FaultKind::HardFault,
        faulting_call_index: 0,
        frames: frames.iter().map(|s| s.to_string()).collect(),
    };
    let a = fault(&["f0", "f1", "f2", "caller_a", "entry"]);
    let b = fault(&["f0", "f1", "f2", "caller_b"]);
    let c = fault(&["f0", "f1", "other"]);
    let mut known = BTreeSet::new();
    let (id_a, new_a) = dedup(&a, &known);
    known.insert(id_a.clone());
    let (id_b, new_b) = dedup(&b, &known);
    let (id_c, new_c) = dedup(&c, &known);
    assert!(new_a && !new_b && new_c);
    assert_eq!(id_a, id_b);
    assert_ne!(id_a, id_c);
    assert_eq!(CrashId::from_frames(&a.frames[..2]).0.len(), 2);
}

#[test]
fn fuzz_is_deterministic_and_crashes_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut stats = Vec::new();
    for _ in 0..2 {
        let cfg = config(dir.path(), FeedbackMode::Composite, 8_000);
        let out = commands::fuzz(&cfg).unwrap();
        assert_eq!(out.report.executions, 8_000);
        stats.push(std::fs::read(cfg.output_dir.join("stats.jsonl")).unwrap());
    }
    assert_eq!(stats[0], stats[1]);
    assert_eq!(String::from_utf8_lossy(&stats[0]).lines().count(), 16);

    let run = dir.path().join("run");
    let templates = Arc::new(TemplateSet::bundled());
    let mut replayed = 0;
    for entry in std::fs::read_dir(run.join("crashes")).unwrap() {
        let crash = entry.unwrap().path();
        let payload = std::fs::read(crash.join("payload.bin")).unwrap();
        let report = commands::replay(
            &payload,
            &ground_truth_regions(),
            Arc::clone(&templates),
            42,
        )
        .unwrap();
        let frames: Vec<String> = std::fs::read_to_string(crash.join("frames.txt"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        assert_eq!(report.crash_id, Some(CrashId::from_frames(&frames)));
        assert_eq!(
            crash.file_name().unwrap().to_str().unwrap(),
            report.crash_id.unwrap().dir_name()
        );
        replayed += 1;
    }
    assert!(replayed >= 3);
    let corpus = load_seed_corpus(&run.join("corpus"), &templates).unwrap();
    assert!(!corpus.seeds.is_empty());
    assert!(run.join("report.json").is_file());
}

#[test]
fn state_mode_without_regions_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), FeedbackMode::Composite, 10);
    cfg.regions_file = None;
    let err = commands::fuzz(&cfg).err().unwrap();
    assert!(matches!(err, CommandError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn empty_payload_is_a_decode_error() {
    let err = commands::replay(&[], &[], Arc::new(TemplateSet::bundled()), 0).unwrap_err();
    assert!(matches!(err, CommandError::Decode(_)));
}

#[test]
fn infer_writes_a_regions_file_matching_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CampaignConfig {
        output_dir: dir.path().to_path_buf(),
        campaign_seed: 3,
        ..CampaignConfig::default()
    };
    let out = commands::infer(&cfg).unwrap();
    assert_eq!(out.regions_file, dir.path().join("state.regions"));
    let written = load_regions(&out.regions_file).unwrap();
    assert_eq!(written, out.regions);
    let score = score_regions(&written);
    assert!(score.precision >= 0.8 && score.recall >= 0.8, "{score:?}");
}

#[test]
fn plot_turns_stats_into_csv() {
    let csv = commands::plot(
        "{\"execs\":1000,\"branches\":5,\"states\":2,\"crashes\":0,\"elapsed_ms\":3}\n\n",
    )
    .unwrap();
    assert_eq!(
        csv,
        "execs,branches,states,crashes,elapsed_ms\n1000,5,2,0,3\n"
    );
    assert!(commands::plot("{not json").is_err());
}

#[test]
fn final_stats_match_a_replay_of_corpus_and_crashes() {
    use tzfuzz_core::coverage::coverage_of;
    use tzfuzz_core::probe::{Probe, SimProbe};
    use tzfuzz_core::state::call_state_hash;

    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), FeedbackMode::Composite, 6_000);
    commands::fuzz(&cfg).unwrap();
    let run = &cfg.output_dir;
    let templates = TemplateSet::bundled();
    let regions = ground_truth_regions();

    let mut payloads: Vec<Vec<u8>> = load_seed_corpus(&run.join("corpus"), &templates)
        .unwrap()
        .testcases()
        .iter()
        .map(|tc| serialize_payload(tc).unwrap())
        .collect();
    let mut crashes = 0;
    for entry in std::fs::read_dir(run.join("crashes")).unwrap() {
        payloads.push(std::fs::read(entry.unwrap().path().join("payload.bin")).unwrap());
        crashes += 1;
    }
    let (mut branches, mut states) = (BTreeSet::new(), BTreeSet::new());
    let mut probe = SimProbe::new(cfg.campaign_seed);
    for p in &payloads {
        for rec in probe.submit(p).unwrap().per_syscall {
            branches.extend(coverage_of(&rec.trace));
            states.insert(call_state_hash(&regions, &rec));
        }
    }

    let stats = std::fs::read_to_string(run.join("stats.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(stats.lines().last().unwrap()).unwrap();
    assert_eq!(last["branches"], branches.len());
    assert_eq!(last["states"], states.len());
    assert_eq!(last["crashes"], crashes);
}

#[test]
fn every_seed_node_reaches_its_bucket_state() {
    use tzfuzz_core::fuzz::Campaign;
    use tzfuzz_core::probe::{Probe, SimProbe};
    use tzfuzz_core::state::call_state_hash;

    let templates = Arc::new(TemplateSet::bundled());
    let seeds = tzfuzz_core::bundled_corpus()
        .iter()
        .map(|(_, text)| parse_program(text, &templates).unwrap())
        .collect();
    let config = CampaignConfig {
        budget: 5_000,
        campaign_seed: 9,
        ..CampaignConfig::default()
    };
    let regions = ground_truth_regions();
    let mut campaign = Campaign::new(config, templates, seeds, regions.clone()).unwrap();
    campaign.run(&mut |_| {});
    let mut probe = SimProbe::new(9);
    let mut checked = 0;
    for (state, bucket) in campaign.seedmap() {
        for node in bucket {
            let res = probe
                .submit(&serialize_payload(&node.testcase).unwrap())
                .unwrap();
            let reached: BTreeSet<_> = res
                .per_syscall
                .iter()
                .map(|r| call_state_hash(&regions, r))
                .collect();
            assert!(reached.contains(state));
            checked += 1;
        }
    }
    assert!(checked > 50);
}
