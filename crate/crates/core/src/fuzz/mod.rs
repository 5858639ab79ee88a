//! Composite-feedback fuzzing: corpus maps, seed scheduling, the fuzzing
//! loop and its configuration.

mod campaign;
mod config;
mod corpus;

pub use campaign::{
    Campaign, CampaignReport, Counters, CrashRecord, Execution, Origin, TimelinePoint,
};
pub use config::{CampaignConfig, ConfigError, FeedbackMode};
pub use corpus::{
    dedup, preserve, select_seed, CallFeedback, CrashId, EmptyCorpus, HitMap, PreserveOutcome,
    SeedMap, SeedNode, StateSampler,
};
