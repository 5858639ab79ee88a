//! The fuzzing loop: generate or mutate, execute, score, preserve.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use fnv::FnvHashSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{CampaignConfig, FeedbackMode};
use super::corpus::{dedup, preserve, CallFeedback, CrashId, HitMap, SeedMap, StateSampler};
use crate::coverage::{coverage_of, BranchId};
use crate::minitee::{bug_for_frames, BugId, ExecutionResult, FaultKind};
use crate::probe::{Probe, SimProbe};
use crate::state::{call_state_hash, StateHash, StateVarRegion};
use crate::syscall::{
    generate_testcase, mutate_testcase_with, serialize_payload, TemplateSet, TestCase,
};

/// Cost model behind `elapsed_ms`: a fixed per-payload overhead plus a
/// per-call share, in simulated microseconds.
const PAYLOAD_COST_US: u64 = 400;
const CALL_COST_US: u64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Generated,
    Mutated,
    Replay,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub submissions: u64,
    pub seed_execs: u64,
    pub generated: u64,
    pub mutated: u64,
    pub replays: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TimelinePoint {
    pub execs: u64,
    pub branches: usize,
    pub states: usize,
    pub crashes: usize,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrashRecord {
    pub id: CrashId,
    pub kind: FaultKind,
    pub frames: Vec<String>,
    #[serde(skip)]
    pub testcase: TestCase,
    #[serde(skip)]
    pub payload: Vec<u8>,
    pub faulting_call_index: usize,
    pub first_exec: u64,
    pub replay_confirmed: bool,
    pub bug: Option<BugId>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignReport {
    pub mode: FeedbackMode,
    pub campaign_seed: u64,
    pub executions: u64,
    pub unique_branches: usize,
    pub unique_states: usize,
    pub unique_crashes: Vec<CrashId>,
    pub timeline: Vec<TimelinePoint>,
    pub counters: Counters,
    pub crashes: Vec<CrashRecord>,
    pub corpus_size: usize,
}

impl CampaignReport {
    pub fn found(&self, bug: BugId) -> bool {
        self.crashes.iter().any(|c| c.bug == Some(bug))
    }
}

/// One submitted test case and what came back, as seen by observers.
pub struct Execution<'a> {
    pub testcase: &'a TestCase,
    pub result: &'a ExecutionResult,
    pub origin: Origin,
}

pub struct Campaign {
    config: CampaignConfig,
    templates: Arc<TemplateSet>,
    regions: Vec<StateVarRegion>,
    seeds: Vec<TestCase>,
    seeds_done: usize,
    probes: Vec<Box<dyn Probe + Send>>,
    rng: ChaCha8Rng,
    seedmap: SeedMap,
    hitmap: HitMap,
    sampler: StateSampler,
    global_cov: FnvHashSet<BranchId>,
    observed_states: FnvHashSet<StateHash>,
    known: BTreeSet<CrashId>,
    crashes: BTreeMap<CrashId, CrashRecord>,
    preserved: Vec<Arc<TestCase>>,
    counters: Counters,
    timeline: Vec<TimelinePoint>,
    next_stats: u64,
    virtual_us: u64,
}

impl Campaign {
    /// A campaign over `config.workers` simulator probes.
    pub fn new(
        config: CampaignConfig,
        templates: Arc<TemplateSet>,
        seeds: Vec<TestCase>,
        regions: Vec<StateVarRegion>,
    ) -> Result<Self, crate::minitee::SimError> {
        let probes = (0..config.workers)
            .map(|_| {
                SimProbe::with_templates(Arc::clone(&templates), config.campaign_seed)
                    .map(|p| Box::new(p) as Box<dyn Probe + Send>)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::with_probes(config, templates, seeds, regions, probes))
    }

    pub fn with_probes(
        config: CampaignConfig,
        templates: Arc<TemplateSet>,
        seeds: Vec<TestCase>,
        mut regions: Vec<StateVarRegion>,
        probes: Vec<Box<dyn Probe + Send>>,
    ) -> Self {
        assert!(!probes.is_empty(), "campaign needs at least one probe");
        regions.sort();
        let next_stats = config.stats_every;
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.campaign_seed),
            config,
            templates,
            regions,
            seeds,
            seeds_done: 0,
            probes,
            seedmap: SeedMap::new(),
            hitmap: HitMap::new(),
            sampler: StateSampler::default(),
            global_cov: FnvHashSet::default(),
            observed_states: FnvHashSet::default(),
            known: BTreeSet::new(),
            crashes: BTreeMap::new(),
            preserved: Vec::new(),
            counters: Counters::default(),
            timeline: Vec::new(),
            next_stats,
            virtual_us: 0,
        }
    }

    pub fn seedmap(&self) -> &SeedMap {
        &self.seedmap
    }

    pub fn hitmap(&self) -> &HitMap {
        &self.hitmap
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn regions(&self) -> &[StateVarRegion] {
        &self.regions
    }

    /// Test cases that were preserved at least once, in preservation order.
    pub fn preserved(&self) -> &[Arc<TestCase>] {
        &self.preserved
    }

    pub fn is_done(&self) -> bool {
        self.counters.submissions >= self.config.budget
    }

    /// Runs the whole budget.
    pub fn run(&mut self, observer: &mut dyn FnMut(&Execution)) -> CampaignReport {
        self.run_until(self.config.budget, observer);
        self.finish()
    }

    /// Runs until `target` submissions (capped by the budget) have been made.
    pub fn run_until(&mut self, target: u64, observer: &mut dyn FnMut(&Execution)) {
        let target = target.min(self.config.budget);
        while self.counters.submissions < target {
            let room = (target - self.counters.submissions) as usize;
            let batch = self.next_batch(room.min(self.probes.len()));
            let results = self.execute_batch(&batch);
            for ((tc, origin, payload), result) in batch.into_iter().zip(results) {
                self.process(tc, origin, payload, result, observer);
            }
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<(TestCase, Origin, Vec<u8>)> {
        let mut batch = Vec::with_capacity(n);
        while batch.len() < n {
            let (tc, origin) = if self.seeds_done < self.seeds.len() {
                self.seeds_done += 1;
                (self.seeds[self.seeds_done - 1].clone(), Origin::Seed)
            } else {
                self.next_testcase()
            };
            match serialize_payload(&tc) {
                Ok(p) => batch.push((tc, origin, p)),
                Err(e) => log::warn!("dropping unencodable test case: {e}"),
            }
        }
        batch
    }

    fn next_testcase(&mut self) -> (TestCase, Origin) {
        let generate = self.seedmap.is_empty() || self.rng.gen_bool(self.config.p_gen);
        if generate {
            let tc = generate_testcase(&self.templates, &mut self.rng, self.config.max_len);
            return (tc, Origin::Generated);
        }
        let seed = self
            .sampler
            .select(&self.seedmap, &mut self.rng)
            .expect("non-empty seed map")
            .testcase
            .clone();
        let donor = if self.preserved.is_empty() {
            None
        } else {
            Some(Arc::clone(
                &self.preserved[self.rng.gen_range(0..self.preserved.len())],
            ))
        };
        let (tc, _) = mutate_testcase_with(
            &seed,
            donor.as_deref(),
            &self.templates,
            &mut self.rng,
            self.config.max_len,
        );
        (tc, Origin::Mutated)
    }

    fn execute_batch(&mut self, batch: &[(TestCase, Origin, Vec<u8>)]) -> Vec<ExecutionResult> {
        let submit = |probe: &mut Box<dyn Probe + Send>, payload: &[u8]| {
            probe.submit(payload).expect("simulator probe stays open")
        };
        if batch.len() == 1 {
            return vec![submit(&mut self.probes[0], &batch[0].2)];
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = self
                .probes
                .iter_mut()
                .zip(batch)
                .map(|(probe, (_, _, payload))| s.spawn(move || submit(probe, payload)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }

    fn account(&mut self, origin: Origin, result: &ExecutionResult) {
        self.counters.submissions += 1;
        match origin {
            Origin::Seed => self.counters.seed_execs += 1,
            Origin::Generated => self.counters.generated += 1,
            Origin::Mutated => self.counters.mutated += 1,
            Origin::Replay => self.counters.replays += 1,
        }
        self.virtual_us += PAYLOAD_COST_US + CALL_COST_US * (result.executed_count as u64 + 1);
    }

    fn process(
        &mut self,
        tc: TestCase,
        origin: Origin,
        payload: Vec<u8>,
        result: ExecutionResult,
        observer: &mut dyn FnMut(&Execution),
    ) {
        self.account(origin, &result);
        let feedback = self.feedback(&result);
        if !feedback.is_empty() {
            let kept = if result.fault.is_some() {
                Arc::new(tc.prefix(result.executed_count))
            } else {
                Arc::new(tc.clone())
            };
            let outcome = preserve(
                &kept,
                &feedback,
                &mut self.global_cov,
                &mut self.seedmap,
                &mut self.hitmap,
                self.config.mode != FeedbackMode::StateOnly,
            );
            if outcome.interesting() {
                self.preserved.push(kept);
            }
            let states: BTreeSet<StateHash> = feedback.iter().map(|f| f.state).collect();
            for s in states {
                self.sampler.update(s, &self.hitmap);
            }
        }
        if let Some(fault) = &result.fault {
            let (id, is_new) = dedup(fault, &self.known);
            if is_new {
                self.known.insert(id.clone());
                let replay = self.probes[0]
                    .submit(&payload)
                    .expect("simulator probe stays open");
                self.account(Origin::Replay, &replay);
                let confirmed = replay
                    .fault
                    .as_ref()
                    .map(|f| CrashId::from_frames(&f.frames))
                    == Some(id.clone());
                log::info!("new crash {id} at exec {}", self.counters.submissions);
                self.crashes.insert(
                    id.clone(),
                    CrashRecord {
                        bug: bug_for_frames(&fault.frames),
                        id,
                        kind: fault.kind,
                        frames: fault.frames.clone(),
                        testcase: tc.clone(),
                        payload,
                        faulting_call_index: fault.faulting_call_index,
                        first_exec: self.counters.submissions,
                        replay_confirmed: confirmed,
                    },
                );
            }
        }
        observer(&Execution {
            testcase: &tc,
            result: &result,
            origin,
        });
        while self.counters.submissions >= self.next_stats {
            self.push_stats();
            self.next_stats += self.config.stats_every;
        }
    }

    fn feedback(&mut self, result: &ExecutionResult) -> Vec<CallFeedback> {
        result
            .per_syscall
            .iter()
            .map(|rec| {
                let real = call_state_hash(&self.regions, rec);
                self.observed_states.insert(real);
                CallFeedback {
                    branches: coverage_of(&rec.trace),
                    state: if self.config.mode.uses_state() {
                        real
                    } else {
                        StateHash::SYNTHETIC
                    },
                }
            })
            .collect()
    }

    fn push_stats(&mut self) {
        self.timeline.push(TimelinePoint {
            execs: self.counters.submissions,
            branches: self.global_cov.len(),
            states: self.observed_states.len(),
            crashes: self.crashes.len(),
            elapsed_ms: self.virtual_us / 1000,
        });
    }

    /// Snapshot of the campaign so far, with a closing timeline point.
    pub fn finish(&mut self) -> CampaignReport {
        if self.counters.submissions > 0
            && self.timeline.last().map(|p| p.execs) != Some(self.counters.submissions)
        {
            self.push_stats();
        }
        CampaignReport {
            mode: self.config.mode,
            campaign_seed: self.config.campaign_seed,
            executions: self.counters.submissions,
            unique_branches: self.global_cov.len(),
            unique_states: self.observed_states.len(),
            unique_crashes: self.crashes.keys().cloned().collect(),
            timeline: self.timeline.clone(),
            counters: self.counters,
            crashes: self.crashes.values().cloned().collect(),
            corpus_size: self.preserved.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::ground_truth_regions;
    use crate::syscall::parse_program;

    fn seeds(t: &TemplateSet) -> Vec<TestCase> {
        crate::bundled_corpus()
            .iter()
            .map(|(_, text)| parse_program(text, t).unwrap())
            .collect()
    }

    fn run(mode: FeedbackMode, budget: u64, workers: usize) -> CampaignReport {
        let t = Arc::new(TemplateSet::bundled());
        let config = CampaignConfig {
            budget,
            workers,
            mode,
            campaign_seed: 5,
            ..CampaignConfig::default()
        };
        let s = seeds(&t);
        Campaign::new(config, t, s, ground_truth_regions())
            .unwrap()
            .run(&mut |_| {})
    }

    #[test]
    fn zero_budget_gives_empty_report() {
        let r = run(FeedbackMode::Composite, 0, 1);
        assert_eq!(r.executions, 0);
        assert!(r.timeline.is_empty());
        assert!(r.unique_crashes.is_empty());
    }

    #[test]
    fn counters_add_up_and_timeline_is_monotone() {
        let r = run(FeedbackMode::Composite, 3000, 1);
        let c = r.counters;
        assert_eq!(
            c.submissions,
            c.seed_execs + c.generated + c.mutated + c.replays
        );
        assert_eq!(r.executions, c.submissions);
        assert_eq!(c.replays as usize, r.crashes.len());
        assert!(r.timeline.len() >= 3);
        for w in r.timeline.windows(2) {
            assert!(w[0].execs < w[1].execs);
            assert!(w[0].branches <= w[1].branches);
            assert!(w[0].states <= w[1].states);
            assert!(w[0].crashes <= w[1].crashes);
        }
        assert!(r.crashes.iter().all(|c| c.replay_confirmed));
    }

    #[test]
    fn coverage_only_uses_one_state_key() {
        let t = Arc::new(TemplateSet::bundled());
        let config = CampaignConfig {
            budget: 500,
            mode: FeedbackMode::CoverageOnly,
            ..CampaignConfig::default()
        };
        let s = seeds(&t);
        let mut c = Campaign::new(config, t, s, ground_truth_regions()).unwrap();
        c.run(&mut |_| {});
        assert_eq!(
            c.seedmap().keys().collect::<Vec<_>>(),
            vec![&StateHash::SYNTHETIC]
        );
    }

    #[test]
    fn batched_workers_stay_deterministic() {
        let a = run(FeedbackMode::Composite, 1200, 3);
        let b = run(FeedbackMode::Composite, 1200, 3);
        assert_eq!(a.timeline, b.timeline);
        assert_eq!(a.unique_crashes, b.unique_crashes);
    }
}
