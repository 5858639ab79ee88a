//! Handler control-flow graphs and the walker that turns a path through them
//! into branch-trace packets.
//!
//! Nodes are laid out linearly; node `i` lives at `base + 0x10 * i`. A
//! packet starts at the address of the node where a linear sequence begins
//! and collects one bit per conditional: 0 falls through to the next node,
//! 1 jumps and closes the packet. Packets also close after eight bits, and
//! the next one starts at the node about to execute.

use crate::coverage::TracePacket;

use super::bugs::BugId;

pub type NodeId = u16;

/// Argument position within the current call.
pub type Arg = u8;

pub const NODE_STRIDE: u32 = 0x10;

/// Loop trip counts are capped so traces stay short.
pub const MAX_TRIPS: u8 = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pred {
    Not(Box<Pred>),
    /// Resource argument resolved to 0.
    Null(Arg),
    OpLive(Arg),
    OpWellFormed(Arg),
    ObjLive(Arg),
    MemLive(Arg),
    AttrLive(Arg),
    AlgSupported(Arg),
    AlgKeySizeValid {
        alg: Arg,
        size: Arg,
    },
    ObjTypeSupported(Arg),
    ObjSizeValid {
        ty: Arg,
        size: Arg,
    },
    OpClassIs(Arg, u32),
    OpHandleStateIs(Arg, u32),
    OpKeySet(Arg),
    OpActive(Arg),
    OpNeedsIv(Arg),
    IvLenOk {
        op: Arg,
        iv: Arg,
    },
    ObjInitialized(Arg),
    /// Object is initialized, of the key type the algorithm needs, and no
    /// larger than the operation's maximum key size.
    KeyCompatible {
        op: Arg,
        obj: Arg,
    },
    /// Attribute identifier has the value-attribute bit (bit 29) set.
    IdIsValue(Arg),
    AttrIsRef(Arg),
    AttrIdIs(Arg, u32),
    /// Attribute length is a key size the object type supports and fits
    /// its maximum size.
    AttrLenFits {
        attr: Arg,
        obj: Arg,
    },
    EnumIs(Arg, u32),
    ScalarGt(Arg, u64),
    ScalarZero(Arg),
    ScalarAligned(Arg, u32),
    ScalarGtBufLen {
        scalar: Arg,
        buf: Arg,
    },
    ScalarGtMemSize {
        scalar: Arg,
        mem: Arg,
    },
    BufEmpty(Arg),
    BufLenAligned(Arg, u32),
    BufLenGt(Arg, usize),
    OpSlotFree,
    ObjSlotFree,
    HeapHas(Arg),
    MacMatches {
        op: Arg,
        mac: Arg,
    },
}

impl std::ops::Not for Pred {
    type Output = Pred;

    fn not(self) -> Pred {
        Pred::Not(Box::new(self))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Count {
    /// `len / block` of a buffer argument.
    BufBlocks { buf: Arg, block: u32 },
    /// `value >> shift` of a scalar argument.
    ScalarShift { arg: Arg, shift: u32 },
    /// Scalar argument used directly.
    Scalar(Arg),
    /// Key size of the operation in 64-bit words.
    KeyWords(Arg),
    /// Key size of the object in 64-bit words.
    ObjKeyWords(Arg),
    /// Data length of an attribute in `block`-byte units.
    AttrBlocks { attr: Arg, block: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Effect {
    Malloc,
    Free,
    MemMove,
    AllocOperation,
    FreeOperation,
    ResetOperation,
    SetOperationKey,
    ClearOperationKey,
    CipherInit,
    CipherUpdate,
    CipherFinal,
    MacInit,
    MacUpdate,
    MacComputeFinal,
    MacCompareFinal { matched: bool },
    AllocObject,
    FreeObject,
    ResetObject,
    Populate,
    InitRefAttribute,
    InitValueAttribute,
    NullOperation,
    CorruptOperation,
    Nop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Return(u32),
    Fault(BugId),
    Effect(Effect),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Branch {
        pred: Pred,
        taken: NodeId,
        fallthrough: NodeId,
    },
    Jump {
        target: NodeId,
    },
    /// Runs the loop body `count` times (one 0 bit each, capped at
    /// [`MAX_TRIPS`]) and exits with a taken branch to `next`.
    Loop {
        count: Count,
        next: NodeId,
    },
    Leaf(Action),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandlerCfg {
    pub name: String,
    pub base: u32,
    pub nodes: Vec<Node>,
}

impl HandlerCfg {
    pub fn address(&self, node: NodeId) -> u32 {
        self.base + NODE_STRIDE * node as u32
    }
}

/// One evaluated condition: the node it belongs to and its outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PathStep {
    pub node: NodeId,
    pub taken: bool,
}

pub trait Evaluator {
    fn pred(&self, pred: &Pred) -> bool;
    fn count(&self, count: &Count) -> u32;
}

struct Emitter<'a> {
    cfg: &'a HandlerCfg,
    packets: Vec<TracePacket>,
    base: u32,
    bits: u8,
    n: u8,
    path: Option<&'a mut Vec<PathStep>>,
}

impl Emitter<'_> {
    fn push(&mut self, node: NodeId, taken: bool) {
        self.bits |= (taken as u8) << self.n;
        self.n += 1;
        if let Some(path) = self.path.as_deref_mut() {
            path.push(PathStep { node, taken });
        }
    }

    fn flush(&mut self, next: NodeId) {
        if self.n > 0 {
            self.packets
                .push(TracePacket::new(self.base, self.bits, self.n).expect("1..=8 bits"));
        }
        self.base = self.cfg.address(next);
        self.bits = 0;
        self.n = 0;
    }

    fn flush_if_full(&mut self, next: NodeId) {
        if self.n == 8 {
            self.flush(next);
        }
    }
}

/// Walks `cfg` from its entry, returning the emitted packets and the action
/// of the leaf reached.
pub fn walk(
    cfg: &HandlerCfg,
    eval: &impl Evaluator,
    path: Option<&mut Vec<PathStep>>,
) -> (Vec<TracePacket>, Action) {
    let mut e = Emitter {
        cfg,
        packets: Vec::with_capacity(8),
        base: cfg.address(0),
        bits: 0,
        n: 0,
        path,
    };
    let mut cur: NodeId = 0;
    loop {
        match &cfg.nodes[cur as usize] {
            Node::Branch {
                pred,
                taken,
                fallthrough,
            } => {
                let t = eval.pred(pred);
                e.push(cur, t);
                if t {
                    e.flush(*taken);
                    cur = *taken;
                } else {
                    cur = *fallthrough;
                    e.flush_if_full(cur);
                }
            }
            Node::Jump { target } => {
                e.push(cur, true);
                e.flush(*target);
                cur = *target;
            }
            Node::Loop { count, next } => {
                let trips = eval.count(count).min(MAX_TRIPS as u32);
                for _ in 0..trips {
                    e.push(cur, false);
                    e.flush_if_full(cur);
                }
                e.push(cur, true);
                e.flush(*next);
                cur = *next;
            }
            Node::Leaf(action) => {
                e.push(cur, true);
                e.flush(cur);
                return (e.packets, *action);
            }
        }
    }
}

enum Target {
    Node(NodeId),
    Leaf(usize),
    Patch,
}

enum Draft {
    Branch { pred: Pred, taken: Target },
    Jump(Target),
    Loop(Count),
    Leaf(Action),
}

/// Assembles a [`HandlerCfg`] from structured control flow. Early-exit
/// leaves are shared per distinct action and placed after the body.
pub struct CfgBuilder {
    name: String,
    base: u32,
    drafts: Vec<Draft>,
    leaves: Vec<Action>,
}

impl CfgBuilder {
    pub fn new(name: &str, base: u32) -> Self {
        Self {
            name: name.to_string(),
            base,
            drafts: Vec::new(),
            leaves: Vec::new(),
        }
    }

    fn leaf(&mut self, action: Action) -> Target {
        let idx = match self.leaves.iter().position(|a| *a == action) {
            Some(i) => i,
            None => {
                self.leaves.push(action);
                self.leaves.len() - 1
            }
        };
        Target::Leaf(idx)
    }

    /// `if pred { return code }`
    pub fn ret_if(&mut self, pred: Pred, code: u32) -> &mut Self {
        let taken = self.leaf(Action::Return(code));
        self.drafts.push(Draft::Branch { pred, taken });
        self
    }

    /// `if !pred { return code }`
    pub fn ret_unless(&mut self, pred: Pred, code: u32) -> &mut Self {
        self.ret_if(!pred, code)
    }

    pub fn fault_if(&mut self, pred: Pred, bug: BugId) -> &mut Self {
        let taken = self.leaf(Action::Fault(bug));
        self.drafts.push(Draft::Branch { pred, taken });
        self
    }

    /// `if pred { <effect>; return }`
    pub fn effect_if(&mut self, pred: Pred, effect: Effect) -> &mut Self {
        let taken = self.leaf(Action::Effect(effect));
        self.drafts.push(Draft::Branch { pred, taken });
        self
    }

    /// `if pred { body }`, compiled as a skip over the body.
    pub fn when(&mut self, pred: Pred, body: impl FnOnce(&mut Self)) -> &mut Self {
        let at = self.drafts.len();
        self.drafts.push(Draft::Branch {
            pred: !pred,
            taken: Target::Patch,
        });
        body(self);
        let join = self.drafts.len() as NodeId;
        if let Draft::Branch { taken, .. } = &mut self.drafts[at] {
            *taken = Target::Node(join);
        }
        self
    }

    /// `if pred { then } else { otherwise }`
    pub fn branch(
        &mut self,
        pred: Pred,
        then: impl FnOnce(&mut Self),
        otherwise: impl FnOnce(&mut Self),
    ) -> &mut Self {
        let at = self.drafts.len();
        self.drafts.push(Draft::Branch {
            pred,
            taken: Target::Patch,
        });
        otherwise(self);
        let jump_at = self.drafts.len();
        self.drafts.push(Draft::Jump(Target::Patch));
        let then_start = self.drafts.len() as NodeId;
        then(self);
        let join = self.drafts.len() as NodeId;
        if let Draft::Branch { taken, .. } = &mut self.drafts[at] {
            *taken = Target::Node(then_start);
        }
        self.drafts[jump_at] = Draft::Jump(Target::Node(join));
        self
    }

    pub fn repeat(&mut self, count: Count) -> &mut Self {
        self.drafts.push(Draft::Loop(count));
        self
    }

    pub fn finish(mut self, action: Action) -> HandlerCfg {
        self.drafts.push(Draft::Leaf(action));
        let body_len = self.drafts.len();
        let resolve = |t: &Target| -> NodeId {
            match t {
                Target::Node(n) => *n,
                Target::Leaf(i) => (body_len + i) as NodeId,
                Target::Patch => unreachable!("unpatched branch target"),
            }
        };
        let mut nodes: Vec<Node> = self
            .drafts
            .iter()
            .enumerate()
            .map(|(i, d)| match d {
                Draft::Branch { pred, taken } => Node::Branch {
                    pred: pred.clone(),
                    taken: resolve(taken),
                    fallthrough: (i + 1) as NodeId,
                },
                Draft::Jump(t) => Node::Jump { target: resolve(t) },
                Draft::Loop(count) => Node::Loop {
                    count: count.clone(),
                    next: (i + 1) as NodeId,
                },
                Draft::Leaf(a) => Node::Leaf(*a),
            })
            .collect();
        nodes.extend(self.leaves.iter().map(|a| Node::Leaf(*a)));
        HandlerCfg {
            name: self.name,
            base: self.base,
            nodes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<bool>, u32);

    impl Evaluator for Fixed {
        fn pred(&self, pred: &Pred) -> bool {
            match pred {
                Pred::ScalarGt(i, _) => self.0[*i as usize],
                Pred::Not(p) => !self.pred(p),
                _ => false,
            }
        }
        fn count(&self, _: &Count) -> u32 {
            self.1
        }
    }

    fn sample() -> HandlerCfg {
        let mut b = CfgBuilder::new("t", 0x1000_0000);
        b.ret_if(Pred::ScalarGt(0, 0), 7)
            .when(Pred::ScalarGt(1, 0), |b| {
                b.repeat(Count::Scalar(0));
            })
            .ret_if(Pred::ScalarGt(2, 0), 7);
        b.finish(Action::Effect(Effect::Nop))
    }

    #[test]
    fn early_return_closes_the_packet() {
        let cfg = sample();
        let (packets, action) = walk(&cfg, &Fixed(vec![true, false, false], 0), None);
        assert_eq!(action, Action::Return(7));
        // [1] at entry, then the shared leaf's return bit.
        assert_eq!(packets.len(), 2);
        assert_eq!(packets[0].base_address(), 0x1000_0000);
        assert_eq!((packets[0].bits(), packets[0].bit_count()), (1, 1));
    }

    #[test]
    fn fallthrough_accumulates_bits_and_loops_count_trips() {
        let cfg = sample();
        let mut path = Vec::new();
        let (packets, action) = walk(&cfg, &Fixed(vec![false, true, false], 3), Some(&mut path));
        assert_eq!(action, Action::Effect(Effect::Nop));
        // entry: 0 (no early return), 0 (enter body), loop 0,0,0 then exit 1
        assert_eq!(packets[0].bit_count(), 6);
        assert_eq!(packets[0].bits(), 0b10_0000);
        assert_eq!(
            path.len(),
            packets
                .iter()
                .map(|p| p.bit_count() as usize)
                .sum::<usize>()
        );
    }

    #[test]
    fn long_linear_runs_split_at_eight_bits() {
        let mut b = CfgBuilder::new("t", 0x1000_0000);
        for _ in 0..10 {
            b.ret_if(Pred::ScalarGt(0, 0), 1);
        }
        let cfg = b.finish(Action::Effect(Effect::Nop));
        let (packets, _) = walk(&cfg, &Fixed(vec![false], 0), None);
        assert_eq!(packets[0].bit_count(), 8);
        assert_eq!(packets[1].base_address(), cfg.address(8));
    }
}
