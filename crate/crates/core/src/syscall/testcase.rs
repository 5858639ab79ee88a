use std::fmt;

use super::template::{ParamKind, TemplateSet, MAX_BUFFER_LEN};

/// Default upper bound on the number of calls in one test case.
pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ArgValue {
    Scalar32(u32),
    Scalar64(u64),
    Buffer(Vec<u8>),
    /// Index of an earlier call whose produced resource is passed here.
    ResourceRef(u16),
    ConstEnum(u32),
}

impl ArgValue {
    pub fn matches(&self, kind: &ParamKind) -> bool {
        matches!(
            (self, kind),
            (ArgValue::Scalar32(_), ParamKind::Scalar32 { .. })
                | (ArgValue::Scalar64(_), ParamKind::Scalar64)
                | (ArgValue::Buffer(_), ParamKind::Buffer { .. })
                | (ArgValue::ResourceRef(_), ParamKind::Resource(_))
                | (ArgValue::ConstEnum(_), ParamKind::ConstEnum(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Call {
    pub ordinal: u16,
    pub args: Vec<ArgValue>,
}

/// A sequence of syscall invocations; the fuzzer's unit of work.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TestCase {
    pub calls: Vec<Call>,
}

impl TestCase {
    pub fn new(calls: Vec<Call>) -> Self {
        Self { calls }
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// The first `n` calls. Always valid when `self` is, since references only
    /// point backwards.
    pub fn prefix(&self, n: usize) -> TestCase {
        TestCase::new(self.calls[..n.min(self.calls.len())].to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Empty,
    TooLong {
        len: usize,
        max: usize,
    },
    UnknownOrdinal {
        call: usize,
        ordinal: u16,
    },
    Arity {
        call: usize,
        expected: usize,
        got: usize,
    },
    ArgKind {
        call: usize,
        arg: usize,
    },
    OutOfRange {
        call: usize,
        arg: usize,
        value: u32,
    },
    NotInEnum {
        call: usize,
        arg: usize,
        value: u32,
    },
    BufferTooLong {
        call: usize,
        arg: usize,
        len: usize,
        max: usize,
    },
    ForwardReference {
        call: usize,
        arg: usize,
        target: u16,
    },
    WrongResource {
        call: usize,
        arg: usize,
        target: u16,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty test case"),
            Violation::TooLong { len, max } => write!(f, "length {len} exceeds maximum {max}"),
            Violation::UnknownOrdinal { call, ordinal } => {
                write!(f, "call {call}: unknown ordinal {ordinal}")
            }
            Violation::Arity {
                call,
                expected,
                got,
            } => write!(
                f,
                "call {call}: arity mismatch, expected {expected} got {got}"
            ),
            Violation::ArgKind { call, arg } => write!(f, "call {call} arg {arg}: kind mismatch"),
            Violation::OutOfRange { call, arg, value } => {
                write!(f, "call {call} arg {arg}: {value:#x} out of range")
            }
            Violation::NotInEnum { call, arg, value } => {
                write!(f, "call {call} arg {arg}: {value:#x} not an allowed value")
            }
            Violation::BufferTooLong {
                call,
                arg,
                len,
                max,
            } => write!(
                f,
                "call {call} arg {arg}: buffer length {len} exceeds {max}"
            ),
            Violation::ForwardReference { call, arg, target } => {
                write!(
                    f,
                    "call {call} arg {arg}: forward reference to call {target}"
                )
            }
            Violation::WrongResource { call, arg, target } => write!(
                f,
                "call {call} arg {arg}: call {target} does not produce the expected resource"
            ),
        }
    }
}

/// Checks every test-case invariant against `templates` using the default
/// length bound.
pub fn validate_testcase(tc: &TestCase, templates: &TemplateSet) -> Result<(), Vec<Violation>> {
    validate_testcase_with(tc, templates, DEFAULT_MAX_LEN)
}

pub fn validate_testcase_with(
    tc: &TestCase,
    templates: &TemplateSet,
    max_len: usize,
) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if tc.calls.is_empty() {
        out.push(Violation::Empty);
    }
    if tc.calls.len() > max_len {
        out.push(Violation::TooLong {
            len: tc.calls.len(),
            max: max_len,
        });
    }
    for (ci, call) in tc.calls.iter().enumerate() {
        let Some(t) = templates.get(call.ordinal) else {
            out.push(Violation::UnknownOrdinal {
                call: ci,
                ordinal: call.ordinal,
            });
            continue;
        };
        if t.params.len() != call.args.len() {
            out.push(Violation::Arity {
                call: ci,
                expected: t.params.len(),
                got: call.args.len(),
            });
            continue;
        }
        for (ai, (param, arg)) in t.params.iter().zip(&call.args).enumerate() {
            if !arg.matches(&param.kind) {
                out.push(Violation::ArgKind { call: ci, arg: ai });
                continue;
            }
            match (arg, &param.kind) {
                (
                    ArgValue::Scalar32(v),
                    ParamKind::Scalar32 {
                        range: Some((lo, hi)),
                    },
                ) if v < lo || v > hi => out.push(Violation::OutOfRange {
                    call: ci,
                    arg: ai,
                    value: *v,
                }),
                (ArgValue::ConstEnum(v), ParamKind::ConstEnum(allowed)) if !allowed.contains(v) => {
                    out.push(Violation::NotInEnum {
                        call: ci,
                        arg: ai,
                        value: *v,
                    })
                }
                (ArgValue::Buffer(b), ParamKind::Buffer { max_len })
                    if b.len() > (*max_len).min(MAX_BUFFER_LEN) =>
                {
                    out.push(Violation::BufferTooLong {
                        call: ci,
                        arg: ai,
                        len: b.len(),
                        max: *max_len,
                    })
                }
                (ArgValue::ResourceRef(target), ParamKind::Resource(kind)) => {
                    if *target as usize >= ci {
                        out.push(Violation::ForwardReference {
                            call: ci,
                            arg: ai,
                            target: *target,
                        });
                    } else {
                        let producer = templates.get(tc.calls[*target as usize].ordinal);
                        if producer.and_then(|p| p.produces.as_ref()) != Some(kind) {
                            out.push(Violation::WrongResource {
                                call: ci,
                                arg: ai,
                                target: *target,
                            });
                        }
                    }
                }
                _ => {}
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> TemplateSet {
        TemplateSet::parse(
            "mk(mode:enum{1,2}) -> h\n\
             use(h:res:h, n:s32[0..10])\n\
             other() -> g\n",
        )
        .unwrap()
    }

    #[test]
    fn forward_reference_is_reported() {
        let tc = TestCase::new(vec![
            Call {
                ordinal: 1,
                args: vec![ArgValue::ResourceRef(1), ArgValue::Scalar32(0)],
            },
            Call {
                ordinal: 0,
                args: vec![ArgValue::ConstEnum(1)],
            },
        ]);
        let v = validate_testcase(&tc, &set()).unwrap_err();
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::ForwardReference { call: 0, .. })));
        assert!(v[0].to_string().contains("forward reference"));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let tc = TestCase::new(vec![Call {
            ordinal: 0,
            args: vec![],
        }]);
        let v = validate_testcase(&tc, &set()).unwrap_err();
        assert_eq!(
            v,
            vec![Violation::Arity {
                call: 0,
                expected: 1,
                got: 0
            }]
        );
    }

    #[test]
    fn wrong_producer_and_range_are_reported() {
        let tc = TestCase::new(vec![
            Call {
                ordinal: 2,
                args: vec![],
            },
            Call {
                ordinal: 1,
                args: vec![ArgValue::ResourceRef(0), ArgValue::Scalar32(11)],
            },
        ]);
        let v = validate_testcase(&tc, &set()).unwrap_err();
        assert!(v.contains(&Violation::WrongResource {
            call: 1,
            arg: 0,
            target: 0
        }));
        assert!(v.contains(&Violation::OutOfRange {
            call: 1,
            arg: 1,
            value: 11
        }));
    }

    #[test]
    fn valid_case_passes_and_empty_fails() {
        let tc = TestCase::new(vec![
            Call {
                ordinal: 0,
                args: vec![ArgValue::ConstEnum(2)],
            },
            Call {
                ordinal: 1,
                args: vec![ArgValue::ResourceRef(0), ArgValue::Scalar32(10)],
            },
        ]);
        assert_eq!(validate_testcase(&tc, &set()), Ok(()));
        assert_eq!(
            validate_testcase(&TestCase::default(), &set()),
            Err(vec![Violation::Empty])
        );
    }
}
