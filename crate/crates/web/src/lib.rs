//! Browser bindings for the MiniTEE fuzzer demo. Build with
//! `wasm-pack build crates/web --target web --out-dir www/pkg`.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tzfuzz_core::commands;
use tzfuzz_core::fuzz::{Campaign, CampaignConfig, FeedbackMode, TimelinePoint};
use tzfuzz_core::state::ground_truth_regions;
use tzfuzz_core::syscall::{encode_hex, parse_program, serialize_payload, TemplateSet};

/// Largest campaign the page will run; it blocks the main thread.
pub const MAX_BUDGET: u64 = 200_000;

#[derive(Serialize)]
struct Encoded {
    calls: usize,
    bytes: usize,
    hex: String,
}

#[derive(Serialize)]
struct ReplayRow {
    name: String,
    branches: usize,
    state: String,
    return_code: String,
}

#[derive(Serialize)]
struct ReplayView {
    calls: Vec<ReplayRow>,
    distinct_states: usize,
    fault: Option<String>,
    bug: Option<String>,
    dot: String,
}

#[derive(Serialize)]
struct BugHit {
    bug: String,
    first_exec: u64,
    frames: Vec<String>,
}

#[derive(Serialize)]
struct CampaignView {
    mode: String,
    executions: u64,
    branches: usize,
    states: usize,
    corpus: usize,
    bugs: Vec<BugHit>,
    timeline: Vec<TimelinePoint>,
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data")
}

/// Names of the bundled seed programs, as a JSON array.
pub fn seed_names() -> String {
    json(
        &tzfuzz_core::bundled_corpus()
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>(),
    )
}

pub fn seed_text(index: usize) -> Option<String> {
    tzfuzz_core::bundled_corpus()
        .get(index)
        .map(|(_, t)| t.to_string())
}

/// Parses a seed program and returns its binary payload as hex.
pub fn encode_program(text: &str) -> Result<String, String> {
    let t = TemplateSet::bundled();
    let tc = parse_program(text, &t).map_err(|e| e.to_string())?;
    let bytes = serialize_payload(&tc).map_err(|e| e.to_string())?;
    Ok(json(&Encoded {
        calls: tc.len(),
        bytes: bytes.len(),
        hex: encode_hex(&bytes),
    }))
}

/// Executes a seed program on a fresh MiniTEE and reports each call with
/// its coverage and state, plus the transition path as DOT.
pub fn run_program(text: &str) -> Result<String, String> {
    let templates = Arc::new(TemplateSet::bundled());
    let tc = parse_program(text, &templates).map_err(|e| e.to_string())?;
    let payload = serialize_payload(&tc).map_err(|e| e.to_string())?;
    let regions = ground_truth_regions();
    let report = commands::replay(&payload, &regions, Arc::clone(&templates), 0)
        .map_err(|e| e.to_string())?;
    let stt = commands::stt_export(&[tc], &regions, templates, 0).map_err(|e| e.to_string())?;
    Ok(json(&ReplayView {
        distinct_states: report.distinct_states(),
        calls: report
            .calls
            .iter()
            .map(|c| ReplayRow {
                name: c.name.clone(),
                branches: c.branches,
                state: c.state.to_string(),
                return_code: format!("{:#010x}", c.return_code),
            })
            .collect(),
        fault: report.crash_id.map(|id| id.to_string()),
        bug: report.bug.map(|b| b.to_string()),
        dot: stt.to_dot(),
    }))
}

/// Runs a campaign from the bundled corpus with ground-truth regions.
pub fn run_campaign(mode: &str, budget: u64, seed: u64) -> Result<String, String> {
    let mode: FeedbackMode = mode.parse()?;
    if budget == 0 || budget > MAX_BUDGET {
        return Err(format!("budget must be in 1..={MAX_BUDGET}"));
    }
    let templates = Arc::new(TemplateSet::bundled());
    let seeds = tzfuzz_core::bundled_corpus()
        .iter()
        .map(|(_, text)| parse_program(text, &templates))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let regions = if mode.uses_state() {
        ground_truth_regions()
    } else {
        Vec::new()
    };
    let config = CampaignConfig {
        budget,
        mode,
        campaign_seed: seed,
        stats_every: (budget / 50).max(1),
        ..CampaignConfig::default()
    };
    let report = Campaign::new(config, templates, seeds, regions)
        .map_err(|e| e.to_string())?
        .run(&mut |_| {});
    let mut bugs: Vec<BugHit> = report
        .crashes
        .iter()
        .map(|c| BugHit {
            bug: c.bug.map_or_else(|| "?".into(), |b| b.to_string()),
            first_exec: c.first_exec,
            frames: c.frames.clone(),
        })
        .collect();
    bugs.sort_by(|a, b| a.bug.cmp(&b.bug));
    Ok(json(&CampaignView {
        mode: mode.to_string(),
        executions: report.executions,
        branches: report.unique_branches,
        states: report.unique_states,
        corpus: report.corpus_size,
        bugs,
        timeline: report.timeline,
    }))
}

#[wasm_bindgen(js_name = seedNames)]
pub fn js_seed_names() -> String {
    seed_names()
}

#[wasm_bindgen(js_name = seedText)]
pub fn js_seed_text(index: usize) -> Option<String> {
    seed_text(index)
}

#[wasm_bindgen(js_name = encodeProgram)]
pub fn js_encode_program(text: &str) -> Result<String, JsValue> {
    encode_program(text).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = runProgram)]
pub fn js_run_program(text: &str) -> Result<String, JsValue> {
    run_program(text).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = runCampaign)]
pub fn js_run_campaign(mode: &str, budget: u32, seed: u32) -> Result<String, JsValue> {
    run_campaign(mode, budget as u64, seed as u64).map_err(|e| JsValue::from_str(&e))
}
