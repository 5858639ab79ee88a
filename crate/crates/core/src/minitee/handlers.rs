//! Control flow of every syscall handler.

use super::bugs::{B1, B2, B3, B4, B5};
use super::cfg::{Action, CfgBuilder, Count, Effect, HandlerCfg, Pred};
use super::handles::*;

pub const HANDLER_BASE: u32 = 0x1000_0000;
pub const HANDLER_STRIDE: u32 = 0x1000;

const BAD_PARAMS: u32 = TEE_ERROR_BAD_PARAMETERS;
const BAD_STATE: u32 = TEE_ERROR_BAD_STATE;

/// Number of arguments each known handler reads.
pub fn handler_arity(name: &str) -> Option<usize> {
    Some(match name {
        "TEE_Malloc" => 2,
        "TEE_Free" => 1,
        "TEE_MemMove" => 3,
        "TEE_AllocateOperation" => 3,
        "TEE_FreeOperation" | "TEE_ResetOperation" => 1,
        "TEE_SetOperationKey" => 2,
        "TEE_CipherInit" | "TEE_MACInit" => 2,
        "TEE_CipherUpdate" | "TEE_CipherDoFinal" => 3,
        "TEE_MACUpdate" | "TEE_MACComputeFinal" | "TEE_MACCompareFinal" => 3,
        "TEE_AllocateTransientObject" => 2,
        "TEE_FreeTransientObject" | "TEE_ResetTransientObject" => 1,
        "TEE_PopulateTransientObject" => 3,
        "TEE_InitRefAttribute" => 2,
        "TEE_InitValueAttribute" => 3,
        "syz_null_operation" => 0,
        "syz_corrupt_operation" => 2,
        _ => return None,
    })
}

/// Common prologue of handlers taking an operation in argument 0.
fn live_op(b: &mut CfgBuilder) {
    b.ret_if(Pred::Null(0), BAD_PARAMS)
        .ret_unless(Pred::OpLive(0), BAD_PARAMS)
        .ret_unless(Pred::OpWellFormed(0), BAD_PARAMS);
}

pub fn build_handler(name: &str, ordinal: u16) -> Option<HandlerCfg> {
    let mut b = CfgBuilder::new(name, HANDLER_BASE + HANDLER_STRIDE * ordinal as u32);
    let done = |e: Effect| Action::Effect(e);
    let cfg = match name {
        "TEE_Malloc" => {
            b.effect_if(Pred::ScalarZero(0), Effect::Nop)
                .fault_if(Pred::ScalarGt(0, HEAP_GROW_LIMIT), B1)
                .ret_unless(Pred::HeapHas(0), TEE_ERROR_OUT_OF_MEMORY)
                .when(Pred::EnumIs(1, 0), |b| {
                    b.repeat(Count::ScalarShift { arg: 0, shift: 5 });
                });
            b.finish(done(Effect::Malloc))
        }
        "TEE_Free" => {
            b.effect_if(Pred::Null(0), Effect::Nop)
                .ret_unless(Pred::MemLive(0), BAD_PARAMS);
            b.finish(done(Effect::Free))
        }
        "TEE_MemMove" => {
            b.ret_if(Pred::Null(0), BAD_PARAMS)
                .ret_unless(Pred::MemLive(0), BAD_PARAMS)
                .ret_if(
                    Pred::ScalarGtBufLen { scalar: 2, buf: 1 },
                    TEE_ERROR_SHORT_BUFFER,
                )
                .ret_if(
                    Pred::ScalarGtMemSize { scalar: 2, mem: 0 },
                    TEE_ERROR_SHORT_BUFFER,
                )
                .repeat(Count::ScalarShift { arg: 2, shift: 4 });
            b.finish(done(Effect::MemMove))
        }
        "TEE_AllocateOperation" => {
            b.ret_unless(Pred::AlgSupported(0), TEE_ERROR_NOT_SUPPORTED)
                .ret_unless(
                    Pred::AlgKeySizeValid { alg: 0, size: 2 },
                    TEE_ERROR_NOT_SUPPORTED,
                )
                .ret_unless(Pred::OpSlotFree, TEE_ERROR_OUT_OF_MEMORY)
                .repeat(Count::ScalarShift { arg: 2, shift: 6 });
            b.finish(done(Effect::AllocOperation))
        }
        "TEE_FreeOperation" => {
            b.effect_if(Pred::Null(0), Effect::Nop)
                .ret_unless(Pred::OpLive(0), BAD_PARAMS)
                .ret_unless(Pred::OpWellFormed(0), BAD_PARAMS)
                .when(Pred::OpKeySet(0), |b| {
                    b.repeat(Count::KeyWords(0));
                });
            b.finish(done(Effect::FreeOperation))
        }
        "TEE_ResetOperation" => {
            live_op(&mut b);
            b.ret_unless(Pred::OpKeySet(0), BAD_STATE);
            b.finish(done(Effect::ResetOperation))
        }
        "TEE_SetOperationKey" => {
            live_op(&mut b);
            b.ret_if(Pred::OpActive(0), BAD_STATE)
                .effect_if(Pred::Null(1), Effect::ClearOperationKey)
                .ret_unless(Pred::ObjLive(1), BAD_PARAMS)
                .ret_unless(Pred::KeyCompatible { op: 0, obj: 1 }, BAD_PARAMS)
                .repeat(Count::ObjKeyWords(1));
            b.finish(done(Effect::SetOperationKey))
        }
        "TEE_CipherInit" => {
            b.ret_if(Pred::Null(0), BAD_PARAMS)
                .ret_unless(Pred::OpLive(0), BAD_PARAMS)
                .fault_if(!Pred::OpWellFormed(0), B5)
                .ret_unless(Pred::OpClassIs(0, CLASS_CIPHER), BAD_STATE)
                .ret_unless(Pred::OpKeySet(0), BAD_STATE)
                .when(Pred::OpNeedsIv(0), |b| {
                    b.ret_unless(Pred::IvLenOk { op: 0, iv: 1 }, BAD_PARAMS);
                })
                .repeat(Count::BufBlocks { buf: 1, block: 4 });
            b.finish(done(Effect::CipherInit))
        }
        "TEE_CipherUpdate" => {
            live_op(&mut b);
            b.ret_unless(Pred::OpClassIs(0, CLASS_CIPHER), BAD_STATE)
                .ret_unless(Pred::OpActive(0), BAD_STATE)
                .ret_if(Pred::ScalarGtBufLen { scalar: 2, buf: 1 }, BAD_PARAMS)
                .effect_if(Pred::ScalarZero(2), Effect::Nop)
                .repeat(Count::ScalarShift { arg: 2, shift: 4 });
            b.finish(done(Effect::CipherUpdate))
        }
        "TEE_CipherDoFinal" => {
            live_op(&mut b);
            b.ret_unless(Pred::OpClassIs(0, CLASS_CIPHER), BAD_STATE)
                .ret_unless(Pred::OpActive(0), BAD_STATE)
                .ret_if(Pred::ScalarGtBufLen { scalar: 2, buf: 1 }, BAD_PARAMS)
                .when(Pred::OpNeedsIv(0), |b| {
                    b.ret_unless(Pred::ScalarAligned(2, 8), BAD_PARAMS);
                })
                .repeat(Count::ScalarShift { arg: 2, shift: 4 });
            b.finish(done(Effect::CipherFinal))
        }
        "TEE_MACInit" => {
            live_op(&mut b);
            b.ret_unless(Pred::OpKeySet(0), BAD_STATE)
                .when(Pred::BufLenGt(1, 0), |b| {
                    b.repeat(Count::BufBlocks { buf: 1, block: 4 });
                });
            b.finish(done(Effect::MacInit))
        }
        "TEE_MACUpdate" => {
            live_op(&mut b);
            b.ret_unless(
                Pred::OpHandleStateIs(0, HANDLE_STATE_INITIALIZED),
                BAD_STATE,
            )
            .when(Pred::OpClassIs(0, CLASS_MAC), |b| {
                b.fault_if(Pred::ScalarGtBufLen { scalar: 2, buf: 1 }, B4);
            })
            .ret_if(Pred::ScalarGtBufLen { scalar: 2, buf: 1 }, BAD_PARAMS)
            .repeat(Count::ScalarShift { arg: 2, shift: 4 });
            b.finish(done(Effect::MacUpdate))
        }
        "TEE_MACComputeFinal" => {
            live_op(&mut b);
            b.ret_unless(
                Pred::OpHandleStateIs(0, HANDLE_STATE_INITIALIZED),
                BAD_STATE,
            )
            .ret_if(Pred::ScalarGtBufLen { scalar: 2, buf: 1 }, BAD_PARAMS)
            .repeat(Count::ScalarShift { arg: 2, shift: 4 });
            b.finish(done(Effect::MacComputeFinal))
        }
        "TEE_MACCompareFinal" => {
            b.fault_if(Pred::Null(0), B3)
                .ret_unless(Pred::OpLive(0), BAD_PARAMS)
                .ret_unless(Pred::OpWellFormed(0), BAD_PARAMS)
                .ret_unless(
                    Pred::OpHandleStateIs(0, HANDLE_STATE_INITIALIZED),
                    BAD_STATE,
                )
                .repeat(Count::BufBlocks { buf: 1, block: 16 })
                .effect_if(
                    Pred::MacMatches { op: 0, mac: 2 },
                    Effect::MacCompareFinal { matched: true },
                );
            b.finish(done(Effect::MacCompareFinal { matched: false }))
        }
        "TEE_AllocateTransientObject" => {
            b.ret_unless(Pred::ObjTypeSupported(0), TEE_ERROR_NOT_SUPPORTED)
                .ret_unless(
                    Pred::ObjSizeValid { ty: 0, size: 1 },
                    TEE_ERROR_NOT_SUPPORTED,
                )
                .ret_unless(Pred::ObjSlotFree, TEE_ERROR_OUT_OF_MEMORY)
                .repeat(Count::ScalarShift { arg: 1, shift: 6 });
            b.finish(done(Effect::AllocObject))
        }
        "TEE_FreeTransientObject" => {
            b.effect_if(Pred::Null(0), Effect::Nop)
                .ret_unless(Pred::ObjLive(0), BAD_PARAMS)
                .when(Pred::ObjInitialized(0), |b| {
                    b.repeat(Count::ObjKeyWords(0));
                });
            b.finish(done(Effect::FreeObject))
        }
        "TEE_ResetTransientObject" => {
            b.effect_if(Pred::Null(0), Effect::Nop)
                .ret_unless(Pred::ObjLive(0), BAD_PARAMS);
            b.finish(done(Effect::ResetObject))
        }
        "TEE_PopulateTransientObject" => {
            b.ret_if(Pred::Null(0), BAD_PARAMS)
                .ret_unless(Pred::ObjLive(0), BAD_PARAMS)
                .fault_if(Pred::ScalarGt(2, MAX_ATTR_TABLE), B2)
                .ret_if(Pred::ObjInitialized(0), BAD_STATE)
                .ret_if(Pred::ScalarZero(2), BAD_PARAMS)
                .ret_if(Pred::Null(1), BAD_PARAMS)
                .ret_unless(Pred::AttrLive(1), BAD_PARAMS)
                .ret_unless(Pred::AttrIsRef(1), BAD_PARAMS)
                .ret_unless(Pred::AttrIdIs(1, ATTR_SECRET_VALUE), BAD_PARAMS)
                .ret_unless(Pred::AttrLenFits { attr: 1, obj: 0 }, BAD_PARAMS)
                .repeat(Count::AttrBlocks { attr: 1, block: 8 });
            b.finish(done(Effect::Populate))
        }
        "TEE_InitRefAttribute" => {
            b.ret_if(Pred::IdIsValue(0), BAD_PARAMS)
                .repeat(Count::BufBlocks { buf: 1, block: 16 });
            b.finish(done(Effect::InitRefAttribute))
        }
        "TEE_InitValueAttribute" => {
            b.ret_unless(Pred::IdIsValue(0), BAD_PARAMS);
            b.finish(done(Effect::InitValueAttribute))
        }
        "syz_null_operation" => b.finish(done(Effect::NullOperation)),
        "syz_corrupt_operation" => {
            b.effect_if(Pred::Null(0), Effect::CorruptOperation)
                .effect_if(!Pred::OpLive(0), Effect::CorruptOperation)
                .effect_if(Pred::ScalarZero(1), Effect::CorruptOperation);
            b.finish(done(Effect::CorruptOperation))
        }
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minitee::cfg::Node;
    use crate::syscall::TemplateSet;

    #[test]
    fn every_bundled_template_has_a_handler_of_matching_arity() {
        let t = TemplateSet::bundled();
        for tpl in t.iter() {
            let cfg = build_handler(&tpl.name, tpl.ordinal).expect(&tpl.name);
            assert_eq!(
                handler_arity(&tpl.name),
                Some(tpl.params.len()),
                "{}",
                tpl.name
            );
            assert!(matches!(cfg.nodes.last(), Some(Node::Leaf(_))));
        }
    }

    #[test]
    fn branch_targets_point_forward() {
        let t = TemplateSet::bundled();
        for tpl in t.iter() {
            let cfg = build_handler(&tpl.name, tpl.ordinal).unwrap();
            for (i, n) in cfg.nodes.iter().enumerate() {
                let targets = match n {
                    Node::Branch {
                        taken, fallthrough, ..
                    } => vec![*taken, *fallthrough],
                    Node::Jump { target } => vec![*target],
                    Node::Loop { next, .. } => vec![*next],
                    Node::Leaf(_) => vec![],
                };
                for t in targets {
                    assert!(
                        t as usize > i && (t as usize) < cfg.nodes.len(),
                        "{} node {i}",
                        tpl.name
                    );
                }
            }
        }
    }
}
