//! Transport between the fuzzing engine and the target: payload delivery,
//! reset, per-syscall trace streaming and memory reads.

use std::sync::Arc;

use thiserror::Error;

use crate::minitee::{ExecutionResult, HandleKind, MiniTee, SimError, SyscallRecord};
use crate::state::StateVarRegion;
use crate::syscall::TemplateSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("probe endpoint is closed")]
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub write_payload: bool,
    pub reset: bool,
    pub stream_trace: bool,
    pub read_memory: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        write_payload: true,
        reset: true,
        stream_trace: true,
        read_memory: true,
    };
}

/// Current value of one region on every live handle of its kind, in
/// allocation order. No live handle means the region is absent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionRead {
    pub region: StateVarRegion,
    pub values: Vec<Vec<u8>>,
}

impl RegionRead {
    pub fn is_absent(&self) -> bool {
        self.values.is_empty()
    }
}

pub trait Probe {
    fn backend(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Resets the target and runs `payload`, passing each call's record to
    /// `sink` as soon as it is available.
    fn submit_streaming(
        &mut self,
        payload: &[u8],
        sink: &mut dyn FnMut(usize, &SyscallRecord),
    ) -> Result<ExecutionResult, ProbeError>;

    fn submit(&mut self, payload: &[u8]) -> Result<ExecutionResult, ProbeError> {
        self.submit_streaming(payload, &mut |_, _| {})
    }

    fn read_state_regions(&self, regions: &[StateVarRegion])
        -> Result<Vec<RegionRead>, ProbeError>;

    fn close(&mut self);
}

/// Probe backed by an in-process MiniTEE instance.
pub struct SimProbe {
    tee: MiniTee,
    open: bool,
}

impl SimProbe {
    pub fn new(campaign_seed: u64) -> Self {
        Self::from_tee(MiniTee::new(campaign_seed))
    }

    pub fn with_templates(
        templates: Arc<TemplateSet>,
        campaign_seed: u64,
    ) -> Result<Self, SimError> {
        Ok(Self::from_tee(MiniTee::with_templates(
            templates,
            campaign_seed,
        )?))
    }

    pub fn from_tee(tee: MiniTee) -> Self {
        Self { tee, open: true }
    }

    pub fn tee(&self) -> &MiniTee {
        &self.tee
    }

    pub fn tee_mut(&mut self) -> &mut MiniTee {
        &mut self.tee
    }
}

impl Probe for SimProbe {
    fn backend(&self) -> &str {
        "minitee-sim"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn submit_streaming(
        &mut self,
        payload: &[u8],
        sink: &mut dyn FnMut(usize, &SyscallRecord),
    ) -> Result<ExecutionResult, ProbeError> {
        if !self.open {
            return Err(ProbeError::Closed);
        }
        self.tee.reset();
        Ok(self.tee.execute_streaming(payload, sink))
    }

    fn read_state_regions(
        &self,
        regions: &[StateVarRegion],
    ) -> Result<Vec<RegionRead>, ProbeError> {
        if !self.open {
            return Err(ProbeError::Closed);
        }
        let ops = self.tee.live_handles(HandleKind::Operation);
        let objs = self.tee.live_handles(HandleKind::Object);
        Ok(regions
            .iter()
            .map(|r| {
                let handles = match r.kind {
                    HandleKind::Operation => &ops,
                    HandleKind::Object => &objs,
                };
                RegionRead {
                    region: *r,
                    values: handles
                        .iter()
                        .filter_map(|h| {
                            self.tee
                                .read_memory(*h, r.offset as usize, r.len as usize)
                                .ok()
                        })
                        .collect(),
                }
            })
            .collect())
    }

    fn close(&mut self) {
        self.open = false;
    }
}
