use serde_json::Value;

use tzfuzz_web::{encode_program, run_campaign, run_program, seed_names, seed_text};

#[test]
fn seeds_are_listed_and_loadable() {
    let names: Vec<String> = serde_json::from_str(&seed_names()).unwrap();
    assert_eq!(names.len(), 10);
    assert!(seed_text(0).unwrap().contains("TEE_CipherInit"));
    assert!(seed_text(10).is_none());
}

#[test]
fn encoding_matches_the_wire_format() {
    let v: Value =
        serde_json::from_str(&encode_program("r0 = TEE_Malloc(16, 0)\n").unwrap()).unwrap();
    assert_eq!(v["calls"], 1);
    assert!(v["hex"].as_str().unwrap().starts_with("535a54520101"));
    assert!(encode_program("TEE_Nope()\n").is_err());
}

#[test]
fn running_fig7_shows_its_state_path() {
    let v: Value = serde_json::from_str(&run_program(&seed_text(0).unwrap()).unwrap()).unwrap();
    assert_eq!(v["calls"].as_array().unwrap().len(), 12);
    assert!(v["distinct_states"].as_u64().unwrap() >= 5);
    assert!(v["fault"].is_null());
    assert!(v["dot"].as_str().unwrap().starts_with("digraph"));
}

#[test]
fn small_campaign_reports_shallow_bugs() {
    let v: Value = serde_json::from_str(&run_campaign("composite", 3_000, 1).unwrap()).unwrap();
    assert_eq!(v["executions"], 3_000);
    assert!(!v["bugs"].as_array().unwrap().is_empty());
    assert_eq!(v["timeline"].as_array().unwrap().len(), 50);
    assert!(run_campaign("bogus", 10, 0).is_err());
    assert!(run_campaign("composite", 0, 0).is_err());
}
