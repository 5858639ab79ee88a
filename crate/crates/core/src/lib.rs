//! State-aware greybox fuzzing of Trusted OS syscall interfaces.
//!
//! The crate bundles the fuzzing engine (test case model, coverage from raw
//! branch traces, state-variable inference and composite-feedback corpus
//! scheduling) together with MiniTEE, a simulated Trusted OS it targets.

pub mod commands;
pub mod coverage;
pub mod fuzz;
pub mod minitee;
pub mod probe;
pub mod state;
pub mod stt;
pub mod syscall;

/// Syscall templates describing the MiniTEE interface.
pub const BUNDLED_TEMPLATES: &str = include_str!("../data/minitee.tmpl");

macro_rules! corpus {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../data/corpus/", $name, ".prog")))),*]
    };
}

static BUNDLED_CORPUS: [(&str, &str); 10] = corpus![
    "01_fig7_aes_cbc",
    "02_aes_ecb_encrypt",
    "03_aes_ctr_decrypt",
    "04_des_cbc",
    "05_des3_cbc_decrypt",
    "06_mac_misuse",
    "07_memory",
    "08_object_lifecycle",
    "09_value_attribute",
    "10_cipher_reset",
];

/// The bundled seed programs as `(name, program text)` pairs.
pub fn bundled_corpus() -> &'static [(&'static str, &'static str)] {
    &BUNDLED_CORPUS
}
