use proptest::prelude::*;

use tzfuzz_core::minitee::handles::{OBJ_LEN, OP_HANDLE_STATE, OP_LEN};
use tzfuzz_core::minitee::{HandleId, HandleKind, HandleSnapshot, GROUND_TRUTH};
use tzfuzz_core::state::{ground_truth_regions, state_hash_of};

fn is_state_byte(kind: HandleKind, off: usize) -> bool {
    GROUND_TRUTH
        .iter()
        .any(|&(k, o)| k == kind && (o as usize..o as usize + 4).contains(&off))
}

fn snapshots(op: &[u8], obj: &[u8]) -> Vec<HandleSnapshot> {
    vec![
        HandleSnapshot {
            handle: HandleId(0x1008_0000),
            kind: HandleKind::Operation,
            bytes: op.to_vec(),
        },
        HandleSnapshot {
            handle: HandleId(0x100C_0000),
            kind: HandleKind::Object,
            bytes: obj.to_vec(),
        },
    ]
}

fn noise_offset(kind: HandleKind) -> impl Strategy<Value = usize> {
    (0..kind.buffer_len()).prop_filter("noise byte", move |&o| !is_state_byte(kind, o))
}

fn state_offset(kind: HandleKind) -> impl Strategy<Value = usize> {
    (0..kind.buffer_len()).prop_filter("state byte", move |&o| is_state_byte(kind, o))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn noise_bytes_never_move_the_hash(
        op in prop::collection::vec(any::<u8>(), OP_LEN),
        obj in prop::collection::vec(any::<u8>(), OBJ_LEN),
        op_off in noise_offset(HandleKind::Operation),
        obj_off in noise_offset(HandleKind::Object),
        x in 1u8..,
    ) {
        let regions = ground_truth_regions();
        let base = state_hash_of(&regions, &snapshots(&op, &obj));
        let (mut op2, mut obj2) = (op.clone(), obj.clone());
        op2[op_off] ^= x;
        obj2[obj_off] = obj2[obj_off].wrapping_add(x);
        prop_assert_eq!(state_hash_of(&regions, &snapshots(&op2, &obj2)), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn state_bytes_always_move_the_hash(
        op in prop::collection::vec(any::<u8>(), OP_LEN),
        obj in prop::collection::vec(any::<u8>(), OBJ_LEN),
        on_op in any::<bool>(),
        op_off in state_offset(HandleKind::Operation),
        obj_off in state_offset(HandleKind::Object),
        x in 1u8..,
    ) {
        let regions = ground_truth_regions();
        let base = state_hash_of(&regions, &snapshots(&op, &obj));
        let (mut op2, mut obj2) = (op.clone(), obj.clone());
        if on_op { op2[op_off] ^= x } else { obj2[obj_off] ^= x }
        prop_assert_ne!(state_hash_of(&regions, &snapshots(&op2, &obj2)), base);
    }
}

#[test]
fn key_set_transition_moves_the_hash() {
    let regions = ground_truth_regions();
    let mut op = [0u8; OP_LEN];
    let before = state_hash_of(&regions, &snapshots(&op, &[0; OBJ_LEN]));
    op[OP_HANDLE_STATE] = 1;
    assert_ne!(
        state_hash_of(&regions, &snapshots(&op, &[0; OBJ_LEN])),
        before
    );
}

#[test]
fn absent_handles_differ_from_zeroed_ones() {
    let regions = ground_truth_regions();
    let both = snapshots(&[0; OP_LEN], &[0; OBJ_LEN]);
    assert_ne!(
        state_hash_of(&regions, &both[..1]),
        state_hash_of(&regions, &both)
    );
    assert_ne!(
        state_hash_of(&regions, &[]),
        state_hash_of(&regions, &both[..1])
    );
}
