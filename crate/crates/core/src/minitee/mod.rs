//! MiniTEE: a deterministic simulated Trusted OS.
//!
//! Each syscall handler is a small control-flow graph over the simulator
//! state. Executing a payload walks those graphs, producing one branch trace
//! per call (secure-world packets interleaved with normal-world noise) and a
//! snapshot of every live operation and object handle after each call.

pub mod bugs;
pub mod cfg;
pub mod handlers;
pub mod handles;
mod noise;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{TracePacket, NORMAL_RANGE};
use crate::syscall::{deserialize_payload, ArgValue, PayloadError, TemplateSet};

pub use bugs::{
    bug_for_frames, bug_spec, seeded_bug_catalog, BugId, BugSpec, FaultKind, FaultRecord,
};
pub use cfg::{Action, Effect, HandlerCfg, Node, NodeId, PathStep};
pub use handles::{HandleId, HandleKind, GROUND_TRUTH};

use cfg::{Count, Evaluator, Pred};
use handles::*;
use noise::{digest, NoiseSource};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleSnapshot {
    pub handle: HandleId,
    pub kind: HandleKind,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyscallRecord {
    pub ordinal: u16,
    pub trace: Vec<TracePacket>,
    /// Live operation handles in allocation order, then live objects.
    pub snapshots: Vec<HandleSnapshot>,
    pub return_code: u32,
    /// Live handles the call took as arguments or returned, in argument
    /// order.
    pub touched: Vec<HandleId>,
    /// Condition outcomes in walk order; only filled when path recording
    /// is enabled.
    pub path: Vec<PathStep>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionResult {
    /// One record per completed call; a faulting call has none.
    pub per_syscall: Vec<SyscallRecord>,
    pub fault: Option<FaultRecord>,
    pub executed_count: usize,
    pub decode_error: Option<PayloadError>,
}

impl ExecutionResult {
    fn decode_fault(err: PayloadError) -> Self {
        ExecutionResult {
            per_syscall: Vec::new(),
            fault: Some(FaultRecord {
                kind: FaultKind::HardFault,
                frames: bugs::DECODE_FAULT_FRAMES
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                faulting_call_index: 0,
            }),
            executed_count: 0,
            decode_error: Some(err),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("handle {0} is not live")]
    DeadHandle(HandleId),
    #[error("read of {len} bytes at offset {offset} exceeds the {size}-byte buffer")]
    OutOfRange {
        offset: usize,
        len: usize,
        size: usize,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("no handler for syscall `{0}`")]
    UnknownSyscall(String),
    #[error("syscall `{name}` declares {declared} parameters, handler reads {expected}")]
    Arity {
        name: String,
        declared: usize,
        expected: usize,
    },
}

#[derive(Clone, Debug, Default)]
struct TeeState {
    ops: Vec<OpHandle>,
    objs: Vec<ObjHandle>,
    mems: Vec<MemBlock>,
    attrs: Vec<Attribute>,
    heap_used: u32,
}

/// A call argument after resource references have been resolved.
#[derive(Clone, Copy, Debug)]
enum Resolved<'a> {
    Int(u64),
    Buf(&'a [u8]),
    Res(u32),
}

struct Ctx<'a> {
    st: &'a TeeState,
    args: &'a [Resolved<'a>],
}

impl Ctx<'_> {
    fn int(&self, a: u8) -> u64 {
        match self.args.get(a as usize) {
            Some(Resolved::Int(v)) => *v,
            Some(Resolved::Buf(b)) => b.len() as u64,
            Some(Resolved::Res(v)) => *v as u64,
            None => 0,
        }
    }

    fn buf(&self, a: u8) -> &[u8] {
        match self.args.get(a as usize) {
            Some(Resolved::Buf(b)) => b,
            _ => &[],
        }
    }

    fn res(&self, a: u8) -> u32 {
        match self.args.get(a as usize) {
            Some(Resolved::Res(v)) => *v,
            Some(Resolved::Int(v)) => *v as u32,
            _ => 0,
        }
    }

    fn op(&self, a: u8) -> Option<&OpHandle> {
        self.st.op(self.res(a))
    }

    fn obj(&self, a: u8) -> Option<&ObjHandle> {
        self.st.obj(self.res(a))
    }

    fn attr(&self, a: u8) -> Option<&Attribute> {
        self.st.attr(self.res(a))
    }

    fn mem(&self, a: u8) -> Option<&MemBlock> {
        self.st.mem(self.res(a))
    }
}

fn slot_of(addr: u32, base: u32, stride: u32, len: usize) -> Option<usize> {
    let off = addr.checked_sub(base)?;
    if off % stride != 0 {
        return None;
    }
    let slot = (off / stride) as usize;
    (slot < len).then_some(slot)
}

impl TeeState {
    fn op(&self, addr: u32) -> Option<&OpHandle> {
        slot_of(addr, OP_BASE, OP_LEN as u32, self.ops.len())
            .map(|s| &self.ops[s])
            .filter(|h| h.live)
    }

    fn op_mut(&mut self, addr: u32) -> Option<&mut OpHandle> {
        slot_of(addr, OP_BASE, OP_LEN as u32, self.ops.len())
            .map(|s| &mut self.ops[s])
            .filter(|h| h.live)
    }

    fn obj(&self, addr: u32) -> Option<&ObjHandle> {
        slot_of(addr, OBJ_BASE, OBJ_LEN as u32, self.objs.len())
            .map(|s| &self.objs[s])
            .filter(|h| h.live)
    }

    fn obj_mut(&mut self, addr: u32) -> Option<&mut ObjHandle> {
        slot_of(addr, OBJ_BASE, OBJ_LEN as u32, self.objs.len())
            .map(|s| &mut self.objs[s])
            .filter(|h| h.live)
    }

    fn attr(&self, addr: u32) -> Option<&Attribute> {
        slot_of(addr, ATTR_BASE, 0x10, self.attrs.len()).map(|s| &self.attrs[s])
    }

    fn mem(&self, addr: u32) -> Option<&MemBlock> {
        let mut start = MEM_BASE;
        for m in &self.mems {
            if start == addr {
                return m.live.then_some(m);
            }
            start += align16(m.size);
        }
        None
    }
}

fn align16(n: u32) -> u32 {
    n.div_ceil(16) * 16
}

impl Evaluator for Ctx<'_> {
    fn pred(&self, pred: &Pred) -> bool {
        match pred {
            Pred::Not(p) => !self.pred(p),
            Pred::Null(a) => self.res(*a) == 0,
            Pred::OpLive(a) => self.op(*a).is_some(),
            Pred::OpWellFormed(a) => self.op(*a).is_some_and(|h| h.well_formed()),
            Pred::ObjLive(a) => self.obj(*a).is_some(),
            Pred::MemLive(a) => self.mem(*a).is_some(),
            Pred::AttrLive(a) => self.attr(*a).is_some(),
            Pred::AlgSupported(a) => alg_supported(self.int(*a) as u32),
            Pred::AlgKeySizeValid { alg, size } => {
                alg_key_size_valid(self.int(*alg) as u32, self.int(*size) as u32)
            }
            Pred::ObjTypeSupported(a) => object_type_supported(self.int(*a) as u32),
            Pred::ObjSizeValid { ty, size } => {
                object_size_valid(self.int(*ty) as u32, self.int(*size) as u32)
            }
            Pred::OpClassIs(a, class) => self.op(*a).is_some_and(|h| h.field(OP_CLASS) == *class),
            Pred::OpHandleStateIs(a, v) => {
                self.op(*a).is_some_and(|h| h.field(OP_HANDLE_STATE) == *v)
            }
            Pred::OpKeySet(a) => self.op(*a).is_some_and(|h| h.key_set()),
            Pred::OpActive(a) => self
                .op(*a)
                .is_some_and(|h| h.field(OP_OPERATION_STATE) == 1),
            Pred::OpNeedsIv(a) => self
                .op(*a)
                .is_some_and(|h| alg_needs_iv(h.field(OP_ALGORITHM))),
            Pred::IvLenOk { op, iv } => self
                .op(*op)
                .is_some_and(|h| self.buf(*iv).len() == alg_iv_len(h.field(OP_ALGORITHM))),
            Pred::ObjInitialized(a) => self.obj(*a).is_some_and(|o| o.initialized()),
            Pred::KeyCompatible { op, obj } => match (self.op(*op), self.obj(*obj)) {
                (Some(h), Some(o)) => {
                    o.initialized()
                        && alg_key_type(h.field(OP_ALGORITHM)) == Some(o.field(OBJ_TYPE))
                        && o.key_bits <= h.max_key_size
                }
                _ => false,
            },
            Pred::IdIsValue(a) => self.int(*a) as u32 & ATTR_VALUE_BIT != 0,
            Pred::AttrIsRef(a) => self.attr(*a).is_some_and(|t| t.is_ref()),
            Pred::AttrIdIs(a, id) => self.attr(*a).is_some_and(|t| t.id == *id),
            Pred::AttrLenFits { attr, obj } => match (self.attr(*attr), self.obj(*obj)) {
                (Some(t), Some(o)) => {
                    let bits = t.data.len() as u32 * 8;
                    bits <= o.max_size && object_size_valid(o.field(OBJ_TYPE), bits)
                }
                _ => false,
            },
            Pred::EnumIs(a, v) => self.int(*a) == *v as u64,
            Pred::ScalarGt(a, v) => self.int(*a) > *v,
            Pred::ScalarZero(a) => self.int(*a) == 0,
            Pred::ScalarAligned(a, n) => self.int(*a).is_multiple_of(*n as u64),
            Pred::ScalarGtBufLen { scalar, buf } => self.int(*scalar) > self.buf(*buf).len() as u64,
            Pred::ScalarGtMemSize { scalar, mem } => {
                self.int(*scalar) > self.mem(*mem).map_or(0, |m| m.size as u64)
            }
            Pred::BufEmpty(a) => self.buf(*a).is_empty(),
            Pred::BufLenAligned(a, n) => self.buf(*a).len().is_multiple_of(*n as usize),
            Pred::BufLenGt(a, n) => self.buf(*a).len() > *n,
            Pred::OpSlotFree => self.st.ops.len() < MAX_OPS,
            Pred::ObjSlotFree => self.st.objs.len() < MAX_OBJS,
            Pred::HeapHas(a) => self.int(*a) <= (HEAP_SIZE - self.st.heap_used) as u64,
            Pred::MacMatches { op, mac } => self.op(*op).is_some_and(|h| {
                let m = self.buf(*mac);
                m.len() >= 4 && m.len() <= 8 && h.mac_acc.to_le_bytes()[..m.len()] == *m
            }),
        }
    }

    fn count(&self, count: &Count) -> u32 {
        let n = match count {
            Count::BufBlocks { buf, block } => self.buf(*buf).len() as u64 / *block as u64,
            Count::ScalarShift { arg, shift } => self.int(*arg) >> shift,
            Count::Scalar(a) => self.int(*a),
            Count::KeyWords(a) => self.op(*a).map_or(0, |h| h.field(OP_KEY_SIZE) as u64 / 64),
            Count::ObjKeyWords(a) => self.obj(*a).map_or(0, |o| o.key_bits as u64 / 64),
            Count::AttrBlocks { attr, block } => self
                .attr(*attr)
                .map_or(0, |t| t.data.len() as u64 / *block as u64),
        };
        n.min(u32::MAX as u64) as u32
    }
}

pub struct MiniTee {
    templates: Arc<TemplateSet>,
    handlers: Arc<Vec<HandlerCfg>>,
    state: TeeState,
    noise: NoiseSource,
    trace_noise: NoiseSource,
    record_paths: bool,
}

impl MiniTee {
    /// Simulator over the bundled syscall templates.
    pub fn new(campaign_seed: u64) -> Self {
        Self::with_templates(Arc::new(TemplateSet::bundled()), campaign_seed)
            .expect("bundled templates have handlers")
    }

    pub fn with_templates(
        templates: Arc<TemplateSet>,
        campaign_seed: u64,
    ) -> Result<Self, SimError> {
        let mut handlers = Vec::with_capacity(templates.len());
        for t in templates.iter() {
            let cfg = handlers::build_handler(&t.name, t.ordinal)
                .ok_or_else(|| SimError::UnknownSyscall(t.name.clone()))?;
            let expected = handlers::handler_arity(&t.name).unwrap_or(0);
            if expected != t.params.len() {
                return Err(SimError::Arity {
                    name: t.name.clone(),
                    declared: t.params.len(),
                    expected,
                });
            }
            handlers.push(cfg);
        }
        Ok(Self {
            templates,
            handlers: Arc::new(handlers),
            state: TeeState::default(),
            noise: NoiseSource::new(campaign_seed),
            trace_noise: NoiseSource::new(campaign_seed ^ 0x5452_4143_455f_4e5a),
            record_paths: false,
        })
    }

    pub fn templates(&self) -> &Arc<TemplateSet> {
        &self.templates
    }

    /// Keeps the per-call condition path in each [`SyscallRecord`].
    pub fn set_record_paths(&mut self, on: bool) {
        self.record_paths = on;
    }

    pub fn handler_cfg(&self, ordinal: u16) -> Option<&HandlerCfg> {
        self.handlers.get(ordinal as usize)
    }

    pub fn reset(&mut self) {
        self.state = TeeState::default();
        self.noise.reset();
        self.trace_noise.reset();
    }

    pub fn execute_payload(&mut self, payload: &[u8]) -> ExecutionResult {
        self.execute_streaming(payload, &mut |_, _| {})
    }

    /// Like [`execute_payload`](Self::execute_payload), handing each call's
    /// record to `sink` as soon as the call completes.
    pub fn execute_streaming(
        &mut self,
        payload: &[u8],
        sink: &mut dyn FnMut(usize, &SyscallRecord),
    ) -> ExecutionResult {
        let tc = match deserialize_payload(payload, &self.templates) {
            Ok(tc) => tc,
            Err(e) => return ExecutionResult::decode_fault(e),
        };
        let handlers = Arc::clone(&self.handlers);
        let mut produced: Vec<u32> = Vec::with_capacity(tc.calls.len());
        let mut records = Vec::with_capacity(tc.calls.len());
        let mut fault = None;

        for (i, call) in tc.calls.iter().enumerate() {
            let args: Vec<Resolved> = call
                .args
                .iter()
                .map(|a| match a {
                    ArgValue::Scalar32(v) | ArgValue::ConstEnum(v) => Resolved::Int(*v as u64),
                    ArgValue::Scalar64(v) => Resolved::Int(*v),
                    ArgValue::Buffer(b) => Resolved::Buf(b),
                    ArgValue::ResourceRef(r) => {
                        Resolved::Res(produced.get(*r as usize).copied().unwrap_or(0))
                    }
                })
                .collect();
            self.absorb_call(call.ordinal, &args);

            let cfg = &handlers[call.ordinal as usize];
            let mut path = Vec::new();
            let (secure, action) = {
                let ctx = Ctx {
                    st: &self.state,
                    args: &args,
                };
                cfg::walk(cfg, &ctx, self.record_paths.then_some(&mut path))
            };
            let (return_code, out) = match action {
                Action::Fault(bug) => {
                    fault = Some(bugs::fault_for(bug, i));
                    break;
                }
                Action::Return(rc) => (rc, 0),
                Action::Effect(e) => self.apply(e, &args),
            };
            produced.push(out);
            let mut touched: Vec<HandleId> = Vec::new();
            for v in args
                .iter()
                .filter_map(|a| {
                    if let Resolved::Res(v) = a {
                        Some(*v)
                    } else {
                        None
                    }
                })
                .chain(std::iter::once(out))
            {
                let live = self.state.op(v).is_some() || self.state.obj(v).is_some();
                if live && !touched.contains(&HandleId(v)) {
                    touched.push(HandleId(v));
                }
            }
            let record = SyscallRecord {
                touched,
                ordinal: call.ordinal,
                trace: self.interleave_noise(secure),
                snapshots: self.snapshots(),
                return_code,
                path,
            };
            sink(i, &record);
            records.push(record);
        }
        ExecutionResult {
            executed_count: records.len(),
            per_syscall: records,
            fault,
            decode_error: None,
        }
    }

    /// Current bytes of a live handle buffer.
    pub fn read_memory(
        &self,
        handle: HandleId,
        offset: usize,
        len: usize,
    ) -> Result<Vec<u8>, MemoryError> {
        let buf: &[u8] = if let Some(h) = self.state.op(handle.0) {
            &h.buf
        } else if let Some(o) = self.state.obj(handle.0) {
            &o.buf
        } else {
            return Err(MemoryError::DeadHandle(handle));
        };
        match offset.checked_add(len) {
            Some(end) if end <= buf.len() => Ok(buf[offset..end].to_vec()),
            _ => Err(MemoryError::OutOfRange {
                offset,
                len,
                size: buf.len(),
            }),
        }
    }

    /// Live handles of `kind` in allocation order.
    pub fn live_handles(&self, kind: HandleKind) -> Vec<HandleId> {
        match kind {
            HandleKind::Operation => (0..self.state.ops.len())
                .filter(|&s| self.state.ops[s].live)
                .map(|s| HandleId(op_address(s)))
                .collect(),
            HandleKind::Object => (0..self.state.objs.len())
                .filter(|&s| self.state.objs[s].live)
                .map(|s| HandleId(obj_address(s)))
                .collect(),
        }
    }

    fn absorb_call(&mut self, ordinal: u16, args: &[Resolved]) {
        self.noise.absorb(&ordinal.to_le_bytes());
        for a in args {
            match a {
                Resolved::Int(v) => self.noise.absorb(&v.to_le_bytes()),
                Resolved::Res(v) => self.noise.absorb(&v.to_le_bytes()),
                Resolved::Buf(b) => {
                    self.noise.absorb(&(b.len() as u32).to_le_bytes());
                    self.noise.absorb(b);
                }
            }
        }
    }

    fn snapshots(&self) -> Vec<HandleSnapshot> {
        let ops = self
            .state
            .ops
            .iter()
            .enumerate()
            .filter(|(_, h)| h.live)
            .map(|(s, h)| HandleSnapshot {
                handle: HandleId(op_address(s)),
                kind: HandleKind::Operation,
                bytes: h.buf.to_vec(),
            });
        let objs = self
            .state
            .objs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.live)
            .map(|(s, o)| HandleSnapshot {
                handle: HandleId(obj_address(s)),
                kind: HandleKind::Object,
                bytes: o.buf.to_vec(),
            });
        ops.chain(objs).collect()
    }

    /// Mixes one normal-world packet per secure packet into the stream at
    /// keyed positions.
    fn interleave_noise(&mut self, secure: Vec<TracePacket>) -> Vec<TracePacket> {
        let n = secure.len();
        let mut out = Vec::with_capacity(2 * n);
        let (mut si, mut ni) = (0, 0);
        while si < n || ni < n {
            let r = self.trace_noise.next_u64();
            let pick_noise =
                si == n || (ni < n && (r % ((n - si + n - ni) as u64)) < (n - ni) as u64);
            if pick_noise {
                let span = (NORMAL_RANGE.hi - NORMAL_RANGE.lo) as u64 + 1;
                let addr = (NORMAL_RANGE.lo + ((r >> 16) % span) as u32) & !0x3;
                let count = ((r >> 8) % 8) as u8 + 1;
                out.push(TracePacket::new(addr, r as u8, count).expect("1..=8 bits"));
                ni += 1;
            } else {
                out.push(secure[si]);
                si += 1;
            }
        }
        out
    }

    fn apply(&mut self, effect: Effect, args: &[Resolved]) -> (u32, u32) {
        let int = |a: usize| match args.get(a) {
            Some(Resolved::Int(v)) => *v,
            Some(Resolved::Buf(b)) => b.len() as u64,
            Some(Resolved::Res(v)) => *v as u64,
            None => 0,
        };
        let res = |a: usize| match args.get(a) {
            Some(Resolved::Res(v)) => *v,
            Some(Resolved::Int(v)) => *v as u32,
            _ => 0,
        };
        let buf = |a: usize| match args.get(a) {
            Some(Resolved::Buf(b)) => *b,
            _ => &[][..],
        };
        let st = &mut self.state;
        let noise = &mut self.noise;
        match effect {
            Effect::Nop => (TEE_SUCCESS, 0),
            Effect::Malloc => {
                let size = int(0) as u32;
                let addr = MEM_BASE + st.heap_used;
                st.heap_used += align16(size);
                st.mems.push(MemBlock { live: true, size });
                (TEE_SUCCESS, addr)
            }
            Effect::Free => {
                let addr = res(0);
                let mut start = MEM_BASE;
                for m in st.mems.iter_mut() {
                    if start == addr {
                        m.live = false;
                        break;
                    }
                    start += align16(m.size);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::MemMove => (TEE_SUCCESS, 0),
            Effect::AllocOperation => {
                let alg = int(0) as u32;
                let max_key_size = int(2) as u32;
                let mut h = OpHandle {
                    live: true,
                    buf: [0; OP_LEN],
                    max_key_size,
                    self_pointer: 0,
                    key_digest: 0,
                    mac_acc: 0,
                };
                h.set(OP_ALGORITHM, alg);
                h.set(OP_MODE, int(1) as u32);
                h.set(OP_CLASS, alg_class(alg));
                h.set(OP_HANDLE_STATE, HANDLE_STATE_ALLOCATED);
                h.set(OP_OPERATION_STATE, 0);
                h.set(OP_KEY_SIZE, max_key_size);
                noise.fill(&mut h.buf[OP_KEY_NOISE.start..]);
                h.self_pointer = h.field(OP_SELF_POINTER);
                st.ops.push(h);
                (TEE_SUCCESS, op_address(st.ops.len() - 1))
            }
            Effect::FreeOperation => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.live = false;
                }
                (TEE_SUCCESS, 0)
            }
            Effect::ResetOperation => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.set(OP_HANDLE_STATE, HANDLE_STATE_KEY_SET);
                    h.set(OP_OPERATION_STATE, 0);
                    h.mac_acc = 0;
                    noise.fill(&mut h.buf[OP_IV_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::SetOperationKey => {
                let Some(o) = st.obj(res(1)).cloned() else {
                    return (TEE_ERROR_BAD_PARAMETERS, 0);
                };
                let mode = match st.op_mut(res(0)) {
                    Some(h) => {
                        h.set(OP_HANDLE_STATE, HANDLE_STATE_KEY_SET);
                        h.set(OP_KEY_SIZE, o.key_bits);
                        h.key_digest = o.key_digest;
                        noise.fill(&mut h.buf[OP_KEY_NOISE]);
                        h.field(OP_MODE)
                    }
                    None => return (TEE_ERROR_BAD_PARAMETERS, 0),
                };
                if let Some(o) = st.obj_mut(res(1)) {
                    o.set(OBJ_USAGE, usage_for_mode(mode));
                }
                (TEE_SUCCESS, 0)
            }
            Effect::ClearOperationKey => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.set(OP_HANDLE_STATE, HANDLE_STATE_ALLOCATED);
                    h.set(OP_KEY_SIZE, h.max_key_size);
                    h.key_digest = 0;
                    noise.fill(&mut h.buf[OP_KEY_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::CipherInit | Effect::MacInit => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.set(OP_HANDLE_STATE, HANDLE_STATE_INITIALIZED);
                    h.set(OP_OPERATION_STATE, 1);
                    h.mac_acc = digest(h.key_digest, buf(1));
                    noise.fill(&mut h.buf[OP_IV_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::CipherUpdate | Effect::MacUpdate => {
                if let Some(h) = st.op_mut(res(0)) {
                    let data = buf(1);
                    let n = (int(2) as usize).min(data.len());
                    h.mac_acc = digest(h.mac_acc, &data[..n]);
                    noise.fill(&mut h.buf[OP_IV_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::CipherFinal | Effect::MacComputeFinal => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.set(OP_HANDLE_STATE, HANDLE_STATE_KEY_SET);
                    h.set(OP_OPERATION_STATE, 0);
                    noise.fill(&mut h.buf[OP_IV_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::MacCompareFinal { matched } => {
                if let Some(h) = st.op_mut(res(0)) {
                    h.set(OP_HANDLE_STATE, HANDLE_STATE_KEY_SET);
                    h.set(OP_OPERATION_STATE, 0);
                    noise.fill(&mut h.buf[OP_IV_NOISE]);
                }
                (
                    if matched {
                        TEE_SUCCESS
                    } else {
                        TEE_ERROR_MAC_INVALID
                    },
                    0,
                )
            }
            Effect::AllocObject => {
                let mut o = ObjHandle {
                    live: true,
                    buf: [0; OBJ_LEN],
                    max_size: int(1) as u32,
                    key_bits: 0,
                    key_digest: 0,
                };
                o.set(OBJ_TYPE, int(0) as u32);
                o.set(OBJ_USAGE, USAGE_DEFAULT);
                noise.fill(&mut o.buf[OBJ_NOISE]);
                st.objs.push(o);
                (TEE_SUCCESS, obj_address(st.objs.len() - 1))
            }
            Effect::FreeObject => {
                if let Some(o) = st.obj_mut(res(0)) {
                    o.live = false;
                }
                (TEE_SUCCESS, 0)
            }
            Effect::ResetObject => {
                if let Some(o) = st.obj_mut(res(0)) {
                    o.set(OBJ_USAGE, USAGE_DEFAULT);
                    o.set(OBJ_FLAGS, 0);
                    o.set(OBJ_ATTR_COUNT, 0);
                    o.key_bits = 0;
                    o.key_digest = 0;
                    noise.fill(&mut o.buf[OBJ_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::Populate => {
                let Some(attr) = st.attr(res(1)).cloned() else {
                    return (TEE_ERROR_BAD_PARAMETERS, 0);
                };
                if let Some(o) = st.obj_mut(res(0)) {
                    o.set(OBJ_FLAGS, o.field(OBJ_FLAGS) | FLAG_INITIALIZED);
                    o.set(OBJ_ATTR_COUNT, 1);
                    o.key_bits = attr.data.len() as u32 * 8;
                    o.key_digest = digest(0, &attr.data);
                    noise.fill(&mut o.buf[OBJ_NOISE]);
                }
                (TEE_SUCCESS, 0)
            }
            Effect::InitRefAttribute | Effect::InitValueAttribute => {
                if st.attrs.len() >= MAX_ATTRS {
                    return (TEE_ERROR_OUT_OF_MEMORY, 0);
                }
                let data = if effect == Effect::InitRefAttribute {
                    buf(1).to_vec()
                } else {
                    let mut d = (int(1) as u32).to_le_bytes().to_vec();
                    d.extend_from_slice(&(int(2) as u32).to_le_bytes());
                    d
                };
                st.attrs.push(Attribute {
                    id: int(0) as u32,
                    data,
                });
                (TEE_SUCCESS, attr_address(st.attrs.len() - 1))
            }
            Effect::NullOperation => (TEE_SUCCESS, 0),
            Effect::CorruptOperation => {
                let delta = int(1) as u32;
                if let Some(h) = st.op_mut(res(0)) {
                    let sp = h.field(OP_SELF_POINTER);
                    h.set(OP_SELF_POINTER, sp ^ delta);
                }
                (TEE_SUCCESS, res(0))
            }
        }
    }
}
