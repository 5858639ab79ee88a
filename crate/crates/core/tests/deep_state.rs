use std::sync::Arc;

use tzfuzz_core::fuzz::{Campaign, CampaignConfig, FeedbackMode};
use tzfuzz_core::minitee::handles::{
    CLASS_MAC, HANDLE_STATE_INITIALIZED, OP_CLASS, OP_HANDLE_STATE,
};
use tzfuzz_core::minitee::{bug_for_frames, bugs, HandleKind, MiniTee};
use tzfuzz_core::state::ground_truth_regions;
use tzfuzz_core::syscall::{parse_program, serialize_payload, TemplateSet};

fn run(text: &str) -> Option<bugs::BugId> {
    let t = TemplateSet::bundled();
    let p = serialize_payload(&parse_program(text, &t).unwrap()).unwrap();
    MiniTee::new(0)
        .execute_payload(&p)
        .fault
        .and_then(|f| bug_for_frames(&f.frames))
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

const HMAC: (&str, &str, u32) = ("0x30000004", "0xA0000004", 256);
const AES: (&str, &str, u32) = ("0x10000010", "0xA0000010", 128);

fn program(
    (alg, ty, bits): (&str, &str, u32),
    mode: u32,
    set_key: bool,
    init: bool,
    buf: &str,
    chunk: u32,
) -> String {
    let key = "ab".repeat(bits as usize / 8);
    let mut p = format!(
        "r0 = TEE_AllocateOperation({alg}, {mode}, {bits})\n\
         r1 = TEE_AllocateTransientObject({ty}, {bits})\n\
         r2 = TEE_InitRefAttribute(0xC0000000, \"{key}\")\n\
         TEE_PopulateTransientObject(r1, r2, 1)\n"
    );
    if set_key {
        p += "TEE_SetOperationKey(r0, r1)\n";
    }
    if init {
        p += "TEE_MACInit(r0, \"\")\n";
    }
    p += &format!("TEE_MACUpdate(r0, \"{buf}\", {chunk:#x})\n");
    p
}

#[test]
fn mac_update_fault_needs_key_init_mac_class_and_oversized_chunk() {
    for (alg, mode) in [(HMAC, 4), (AES, 0)] {
        for set_key in [false, true] {
            for init in [false, true] {
                for (buf, chunk) in [
                    ("", 0),
                    ("00", 1),
                    ("00", 2),
                    ("0011", 2),
                    ("0011", 0x4001),
                    ("", 1),
                ] {
                    let got = run(&program(alg, mode, set_key, init, buf, chunk));
                    let oversized = chunk as usize > buf.len() / 2;
                    let expect = (alg == HMAC && set_key && init && oversized).then_some(bugs::B4);
                    assert_eq!(
                        got, expect,
                        "{alg:?} key={set_key} init={init} buf={buf:?} chunk={chunk}"
                    );
                }
            }
        }
    }
}

#[test]
fn campaign_b4_hits_are_all_in_the_deep_state() {
    let templates = Arc::new(TemplateSet::bundled());
    let seeds: Vec<_> = tzfuzz_core::bundled_corpus()
        .iter()
        .map(|(_, text)| parse_program(text, &templates).unwrap())
        .collect();
    let mut hits = 0;
    for campaign_seed in 1000..1004 {
        let config = CampaignConfig {
            mode: FeedbackMode::Composite,
            campaign_seed,
            ..CampaignConfig::default()
        };
        let mut campaign = Campaign::new(
            config,
            Arc::clone(&templates),
            Vec::clone(&seeds),
            ground_truth_regions(),
        )
        .unwrap();
        campaign.run(&mut |ex| {
            let Some(fault) = &ex.result.fault else {
                return;
            };
            if bug_for_frames(&fault.frames) != Some(bugs::B4) {
                return;
            }
            hits += 1;
            let before = ex
                .result
                .per_syscall
                .last()
                .expect("B4 is never the first call");
            assert!(before
                .snapshots
                .iter()
                .filter(|s| s.kind == HandleKind::Operation)
                .any(|s| u32_at(&s.bytes, OP_CLASS) == CLASS_MAC
                    && u32_at(&s.bytes, OP_HANDLE_STATE) == HANDLE_STATE_INITIALIZED));
        });
    }
    assert!(hits > 0);
}
