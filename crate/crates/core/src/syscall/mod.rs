//! Syscall templates, test cases, generation/mutation and the two
//! serialized forms of a test case (binary payload and seed program text).

mod gen;
mod payload;
mod program;
mod template;
mod testcase;

pub use gen::{generate_testcase, mutate_testcase, mutate_testcase_with, MutationOp};
pub use payload::{deserialize_payload, serialize_payload, PayloadError, MAGIC, VERSION};
pub use program::{
    decode_hex, encode_hex, format_program, load_seed_corpus, parse_program, CorpusError,
    ProgramError, SeedCorpus,
};
pub use template::{
    ParamKind, ParamSpec, ResourceKind, SyscallTemplate, TemplateError, TemplateSet, MAX_BUFFER_LEN,
};
pub use testcase::{
    validate_testcase, validate_testcase_with, ArgValue, Call, TestCase, Violation, DEFAULT_MAX_LEN,
};
