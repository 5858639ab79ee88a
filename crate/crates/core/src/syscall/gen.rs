//! Template-driven program generation and mutation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::template::{ParamKind, ResourceKind, TemplateSet, MAX_BUFFER_LEN};
use super::testcase::{ArgValue, Call, TestCase, DEFAULT_MAX_LEN};

/// Placeholder index for a reference whose producer was removed.
const DANGLING: u16 = u16::MAX;

/// Probability of reusing an existing producer instead of adding a new one.
const REUSE_PRODUCER: f64 = 0.85;

/// Maximum nesting when producers need producers of their own.
const MAX_PRODUCER_DEPTH: usize = 3;

const INTERESTING_32: [u32; 16] = [
    0,
    1,
    0x7f,
    0x80,
    0xff,
    0x100,
    0x400,
    0xfff,
    0x1000,
    0xffff,
    0x10000,
    0x100000,
    0x7fff_ffff,
    0x8000_0000,
    0xffff_fffe,
    0xffff_ffff,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MutationOp {
    Insert,
    Remove,
    MutateArg,
    Splice,
}

impl MutationOp {
    pub const ALL: [MutationOp; 4] = [
        MutationOp::Insert,
        MutationOp::Remove,
        MutationOp::MutateArg,
        MutationOp::Splice,
    ];
}

/// Generates a random valid test case of at most `max_len` calls.
pub fn generate_testcase<R: Rng + ?Sized>(
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> TestCase {
    assert!(max_len >= 1, "max_len must be at least 1");
    let target = rng.gen_range(1..=max_len);
    let mut calls = Vec::with_capacity(target);
    let mut misses = 0;
    while calls.len() < target && misses < 8 {
        let ordinal = rng.gen_range(0..templates.len()) as u16;
        if append_call(templates, rng, &mut calls, ordinal, max_len, 0) {
            misses = 0;
        } else {
            misses += 1;
        }
    }
    if calls.is_empty() {
        // Only templates without resource parameters fit a single slot.
        let roots: Vec<u16> = templates
            .iter()
            .filter(|t| t.resource_params().next().is_none())
            .map(|t| t.ordinal)
            .collect();
        let ordinal = *roots
            .choose(rng)
            .expect("template set has a call without resources");
        append_call(templates, rng, &mut calls, ordinal, max_len, 0);
    }
    TestCase::new(calls)
}

/// Mutates `seed` once with the default length bound and the seed itself as
/// splice donor.
pub fn mutate_testcase<R: Rng + ?Sized>(
    seed: &TestCase,
    templates: &TemplateSet,
    rng: &mut R,
) -> TestCase {
    mutate_testcase_with(seed, None, templates, rng, DEFAULT_MAX_LEN).0
}

/// Applies one uniformly chosen mutation operator, retrying with a fresh
/// choice whenever the operator is inapplicable or leaves the seed unchanged.
pub fn mutate_testcase_with<R: Rng + ?Sized>(
    seed: &TestCase,
    donor: Option<&TestCase>,
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> (TestCase, MutationOp) {
    for _ in 0..64 {
        let op = *MutationOp::ALL.choose(rng).unwrap();
        if let Some(tc) = apply_op(op, seed, donor, templates, rng, max_len) {
            if tc != *seed && !tc.is_empty() && tc.len() <= max_len {
                return (tc, op);
            }
        }
    }
    // Only reachable for pathological template sets; fall back to a fresh program.
    (
        generate_testcase(templates, rng, max_len),
        MutationOp::Insert,
    )
}

pub(crate) fn apply_op<R: Rng + ?Sized>(
    op: MutationOp,
    seed: &TestCase,
    donor: Option<&TestCase>,
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> Option<TestCase> {
    match op {
        MutationOp::Insert => insert_call(seed, templates, rng, max_len),
        MutationOp::Remove => remove_call(seed, templates, rng, max_len),
        MutationOp::MutateArg => mutate_arg(seed, templates, rng),
        MutationOp::Splice => splice(seed, donor.unwrap_or(seed), templates, rng, max_len),
    }
}

fn insert_call<R: Rng + ?Sized>(
    seed: &TestCase,
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> Option<TestCase> {
    if seed.len() >= max_len {
        return None;
    }
    let pos = rng.gen_range(0..=seed.len());
    let mut calls = seed.calls[..pos].to_vec();
    let ordinal = rng.gen_range(0..templates.len()) as u16;
    let room = max_len - (seed.len() - pos);
    if !append_call(templates, rng, &mut calls, ordinal, room, 0) {
        return None;
    }
    let added = (calls.len() - pos) as u16;
    for call in &seed.calls[pos..] {
        let mut call = call.clone();
        for arg in &mut call.args {
            if let ArgValue::ResourceRef(r) = arg {
                if *r as usize >= pos {
                    *r += added;
                }
            }
        }
        calls.push(call);
    }
    Some(TestCase::new(calls))
}

fn remove_call<R: Rng + ?Sized>(
    seed: &TestCase,
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> Option<TestCase> {
    if seed.len() <= 1 {
        return None;
    }
    let victim = rng.gen_range(0..seed.len());
    let mut calls = Vec::with_capacity(seed.len() - 1);
    for (i, call) in seed.calls.iter().enumerate() {
        if i == victim {
            continue;
        }
        let mut call = call.clone();
        for arg in &mut call.args {
            if let ArgValue::ResourceRef(r) = arg {
                match (*r as usize).cmp(&victim) {
                    std::cmp::Ordering::Equal => *r = DANGLING,
                    std::cmp::Ordering::Greater => *r -= 1,
                    std::cmp::Ordering::Less => {}
                }
            }
        }
        calls.push(call);
    }
    repair(templates, rng, calls, max_len).map(TestCase::new)
}

fn splice<R: Rng + ?Sized>(
    seed: &TestCase,
    donor: &TestCase,
    templates: &TemplateSet,
    rng: &mut R,
    max_len: usize,
) -> Option<TestCase> {
    if seed.is_empty() || donor.is_empty() {
        return None;
    }
    let cut = rng.gen_range(1..=seed.len());
    let from = rng.gen_range(0..donor.len());
    let mut calls = seed.calls[..cut].to_vec();
    for call in &donor.calls[from..] {
        if calls.len() >= max_len {
            break;
        }
        let mut call = call.clone();
        for arg in &mut call.args {
            if let ArgValue::ResourceRef(r) = arg {
                *r = if (*r as usize) >= from {
                    (*r as usize - from + cut) as u16
                } else {
                    DANGLING
                };
            }
        }
        calls.push(call);
    }
    repair(templates, rng, calls, max_len).map(TestCase::new)
}

fn mutate_arg<R: Rng + ?Sized>(
    seed: &TestCase,
    templates: &TemplateSet,
    rng: &mut R,
) -> Option<TestCase> {
    let candidates: Vec<usize> = (0..seed.len())
        .filter(|&i| !seed.calls[i].args.is_empty())
        .collect();
    let &ci = candidates.choose(rng)?;
    let template = templates.get(seed.calls[ci].ordinal)?;
    let ai = rng.gen_range(0..seed.calls[ci].args.len());
    let kind = &template.params.get(ai)?.kind;
    let old = &seed.calls[ci].args[ai];
    let new = match (old, kind) {
        (ArgValue::Scalar32(v), ParamKind::Scalar32 { range }) => {
            ArgValue::Scalar32(mutate_u32(*v, *range, rng))
        }
        (ArgValue::Scalar64(v), ParamKind::Scalar64) => ArgValue::Scalar64(mutate_u64(*v, rng)),
        (ArgValue::Buffer(b), ParamKind::Buffer { max_len }) => {
            ArgValue::Buffer(mutate_buffer(b, (*max_len).min(MAX_BUFFER_LEN), rng))
        }
        (ArgValue::ConstEnum(v), ParamKind::ConstEnum(allowed)) => {
            let others: Vec<u32> = allowed.iter().copied().filter(|a| a != v).collect();
            ArgValue::ConstEnum(*others.choose(rng)?)
        }
        (ArgValue::ResourceRef(r), ParamKind::Resource(kind)) => {
            let others: Vec<u16> = producers_before(templates, &seed.calls, ci, kind)
                .filter(|p| p != r)
                .collect();
            ArgValue::ResourceRef(*others.choose(rng)?)
        }
        _ => return None,
    };
    if &new == old {
        return None;
    }
    let mut out = seed.clone();
    out.calls[ci].args[ai] = new;
    Some(out)
}

fn producers_before<'a>(
    templates: &'a TemplateSet,
    calls: &'a [Call],
    before: usize,
    kind: &'a ResourceKind,
) -> impl Iterator<Item = u16> + 'a {
    calls[..before.min(calls.len())]
        .iter()
        .enumerate()
        .filter(move |(_, c)| {
            templates.get(c.ordinal).and_then(|t| t.produces.as_ref()) == Some(kind)
        })
        .map(|(i, _)| i as u16)
}

/// Re-targets every invalid resource reference to the nearest preceding
/// producer of the right kind, inserting a producer when none exists.
fn repair<R: Rng + ?Sized>(
    templates: &TemplateSet,
    rng: &mut R,
    mut calls: Vec<Call>,
    max_len: usize,
) -> Option<Vec<Call>> {
    let mut ci = 0;
    while ci < calls.len() {
        let template = templates.get(calls[ci].ordinal)?;
        for (ai, kind) in template.resource_params() {
            let ArgValue::ResourceRef(r) = calls[ci].args[ai] else {
                return None;
            };
            let ok = (r as usize) < ci
                && templates
                    .get(calls[r as usize].ordinal)
                    .and_then(|t| t.produces.as_ref())
                    == Some(kind);
            if ok {
                continue;
            }
            if let Some(nearest) = producers_before(templates, &calls, ci, kind).last() {
                calls[ci].args[ai] = ArgValue::ResourceRef(nearest);
                continue;
            }
            // Insert a producer chain right before `ci` and shift what follows.
            let mut head = calls[..ci].to_vec();
            let room = max_len.saturating_sub(calls.len() - ci);
            let producers = templates.producers_of(kind);
            let &p = producers.choose(rng)?;
            if !append_call(templates, rng, &mut head, p, room, 1) {
                return None;
            }
            let added = (head.len() - ci) as u16;
            let new_ref = (head.len() - 1) as u16;
            for (i, call) in calls[ci..].iter().enumerate() {
                let mut call = call.clone();
                for arg in &mut call.args {
                    if let ArgValue::ResourceRef(x) = arg {
                        if *x != DANGLING && *x as usize >= ci {
                            *x += added;
                        }
                    }
                }
                if i == 0 {
                    call.args[ai] = ArgValue::ResourceRef(new_ref);
                }
                head.push(call);
            }
            calls = head;
            ci += added as usize;
        }
        ci += 1;
    }
    if calls.len() > max_len {
        return None;
    }
    Some(calls)
}

/// Appends a call to `ordinal`, preceded by any producers it needs. Leaves
/// `calls` untouched and returns false if the result would exceed `max_len`.
fn append_call<R: Rng + ?Sized>(
    templates: &TemplateSet,
    rng: &mut R,
    calls: &mut Vec<Call>,
    ordinal: u16,
    max_len: usize,
    depth: usize,
) -> bool {
    let start = calls.len();
    if start >= max_len {
        return false;
    }
    let Some(template) = templates.get(ordinal) else {
        return false;
    };
    let mut args = Vec::with_capacity(template.params.len());
    for param in &template.params {
        let value = match &param.kind {
            ParamKind::Resource(kind) => {
                let existing: Vec<u16> =
                    producers_before(templates, calls, calls.len(), kind).collect();
                let reuse = !existing.is_empty()
                    && (depth >= MAX_PRODUCER_DEPTH || rng.gen_bool(REUSE_PRODUCER));
                if reuse {
                    ArgValue::ResourceRef(*existing.choose(rng).unwrap())
                } else {
                    if depth >= MAX_PRODUCER_DEPTH {
                        calls.truncate(start);
                        return false;
                    }
                    let &p = templates
                        .producers_of(kind)
                        .choose(rng)
                        .expect("validated set");
                    if !append_call(templates, rng, calls, p, max_len, depth + 1) {
                        calls.truncate(start);
                        return false;
                    }
                    ArgValue::ResourceRef((calls.len() - 1) as u16)
                }
            }
            other => random_arg(other, rng),
        };
        args.push(value);
    }
    if calls.len() >= max_len {
        calls.truncate(start);
        return false;
    }
    calls.push(Call { ordinal, args });
    true
}

pub(crate) fn random_arg<R: Rng + ?Sized>(kind: &ParamKind, rng: &mut R) -> ArgValue {
    match kind {
        ParamKind::Scalar32 { range } => ArgValue::Scalar32(random_u32(*range, rng)),
        ParamKind::Scalar64 => ArgValue::Scalar64(if rng.gen_bool(0.5) {
            random_u32(None, rng) as u64
        } else {
            rng.gen()
        }),
        ParamKind::Buffer { max_len } => {
            let cap = (*max_len).min(MAX_BUFFER_LEN);
            let len = match rng.gen_range(0..10) {
                0..=4 => rng.gen_range(0..=cap.min(16)),
                5..=7 => rng.gen_range(0..=cap.min(64)),
                _ => rng.gen_range(0..=cap),
            };
            let mut buf = vec![0u8; len];
            rng.fill(buf.as_mut_slice());
            ArgValue::Buffer(buf)
        }
        ParamKind::ConstEnum(allowed) => {
            ArgValue::ConstEnum(*allowed.choose(rng).expect("non-empty enum"))
        }
        ParamKind::Resource(_) => unreachable!("resources are wired by append_call"),
    }
}

fn random_u32<R: Rng + ?Sized>(range: Option<(u32, u32)>, rng: &mut R) -> u32 {
    match range {
        Some((lo, hi)) => {
            if rng.gen_bool(0.7) {
                rng.gen_range(lo..=hi)
            } else {
                *[
                    lo,
                    hi,
                    lo.saturating_add(1).min(hi),
                    hi.saturating_sub(1).max(lo),
                ]
                .choose(rng)
                .unwrap()
            }
        }
        None => match rng.gen_range(0..20) {
            0..=6 => rng.gen_range(0..=64),
            7..=9 => rng.gen_range(0..=32) * 16,
            10..=13 => *INTERESTING_32.choose(rng).unwrap(),
            _ => rng.gen(),
        },
    }
}

fn mutate_u32<R: Rng + ?Sized>(v: u32, range: Option<(u32, u32)>, rng: &mut R) -> u32 {
    if let Some((lo, hi)) = range {
        return random_u32(range, rng).clamp(lo, hi);
    }
    match rng.gen_range(0..6) {
        0 => v.wrapping_add(rng.gen_range(1..=16)),
        1 => v.wrapping_sub(rng.gen_range(1..=16)),
        2 => v ^ (1 << rng.gen_range(0..32)),
        3 => *INTERESTING_32.choose(rng).unwrap(),
        4 => {
            if rng.gen_bool(0.5) {
                v.wrapping_mul(2)
            } else {
                v / 2
            }
        }
        _ => random_u32(None, rng),
    }
}

fn mutate_u64<R: Rng + ?Sized>(v: u64, rng: &mut R) -> u64 {
    match rng.gen_range(0..4) {
        0 => v.wrapping_add(rng.gen_range(1..=16)),
        1 => v.wrapping_sub(rng.gen_range(1..=16)),
        2 => v ^ (1 << rng.gen_range(0..64)),
        _ => rng.gen(),
    }
}

fn mutate_buffer<R: Rng + ?Sized>(b: &[u8], cap: usize, rng: &mut R) -> Vec<u8> {
    let mut out = b.to_vec();
    match rng.gen_range(0..4) {
        0 if !out.is_empty() => {
            let i = rng.gen_range(0..out.len());
            out[i] ^= 1 << rng.gen_range(0..8);
        }
        1 if out.len() < cap => {
            let extra = rng.gen_range(1..=(cap - out.len()).min(16));
            for _ in 0..extra {
                out.push(rng.gen());
            }
        }
        2 if !out.is_empty() => {
            let keep = rng.gen_range(0..out.len());
            out.truncate(keep);
        }
        _ => {
            if let ArgValue::Buffer(fresh) = random_arg(&ParamKind::Buffer { max_len: cap }, rng) {
                out = fresh;
            }
        }
    }
    out
}
