//! Textual seed programs, one call per line:
//!
//! ```text
//! r0 = TEE_AllocateOperation(0x10000110, 0, 128)
//! r1 = TEE_AllocateTransientObject(0xA0000010, 128)
//! r2 = TEE_InitRefAttribute(0xC0000000, "2b7e151628aed2a6abf7158809cf4f3c")
//! TEE_PopulateTransientObject(r1, r2, 1)
//! ```
//!
//! Scalars are decimal or `0x` hex, buffers are quoted hex strings and
//! `r<n>` names the resource assigned on an earlier line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::template::{parse_u64, ParamKind, TemplateSet};
use super::testcase::{validate_testcase, ArgValue, Call, TestCase};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown syscall `{name}`")]
    UnknownSyscall { line: usize, name: String },
    #[error("line {line}: resource `{name}` is never defined")]
    UndefinedResource { line: usize, name: String },
    #[error("line {line}: {name} expects {expected} arguments, got {got}")]
    Arity {
        line: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("program has no calls")]
    Empty,
    #[error("invalid program: {0}")]
    Invalid(String),
}

pub fn parse_program(text: &str, templates: &TemplateSet) -> Result<TestCase, ProgramError> {
    let mut calls = Vec::new();
    let mut names: HashMap<String, u16> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: &str| ProgramError::Syntax {
            line: line_no,
            msg: msg.to_string(),
        };
        let (binding, call_text) = match line.split_once('=') {
            Some((lhs, rhs)) if !lhs.contains('(') => (Some(lhs.trim()), rhs.trim()),
            _ => (None, line),
        };
        let open = call_text.find('(').ok_or_else(|| syntax("expected `(`"))?;
        let inner = call_text
            .strip_suffix(')')
            .ok_or_else(|| syntax("expected `)` at end of line"))?;
        let name = call_text[..open].trim();
        let template = templates
            .by_name(name)
            .ok_or_else(|| ProgramError::UnknownSyscall {
                line: line_no,
                name: name.to_string(),
            })?;
        let arg_text = inner[open + 1..].trim();
        let pieces: Vec<&str> = if arg_text.is_empty() {
            Vec::new()
        } else {
            arg_text.split(',').map(str::trim).collect()
        };
        if pieces.len() != template.params.len() {
            return Err(ProgramError::Arity {
                line: line_no,
                name: name.to_string(),
                expected: template.params.len(),
                got: pieces.len(),
            });
        }
        let mut args = Vec::with_capacity(pieces.len());
        for (piece, param) in pieces.iter().zip(&template.params) {
            let arg = match &param.kind {
                ParamKind::Resource(_) => {
                    let idx = names
                        .get(*piece)
                        .ok_or_else(|| ProgramError::UndefinedResource {
                            line: line_no,
                            name: piece.to_string(),
                        })?;
                    ArgValue::ResourceRef(*idx)
                }
                ParamKind::Buffer { .. } => {
                    let hex = piece
                        .strip_prefix('"')
                        .and_then(|p| p.strip_suffix('"'))
                        .ok_or_else(|| {
                            syntax(&format!("expected quoted hex buffer, got `{piece}`"))
                        })?;
                    ArgValue::Buffer(
                        decode_hex(hex).ok_or_else(|| syntax(&format!("bad hex `{hex}`")))?,
                    )
                }
                kind => {
                    let v = parse_u64(piece)
                        .ok_or_else(|| syntax(&format!("bad integer `{piece}`")))?;
                    let narrow = || {
                        u32::try_from(v).map_err(|_| syntax(&format!("`{piece}` exceeds 32 bits")))
                    };
                    match kind {
                        ParamKind::Scalar64 => ArgValue::Scalar64(v),
                        ParamKind::ConstEnum(_) => ArgValue::ConstEnum(narrow()?),
                        _ => ArgValue::Scalar32(narrow()?),
                    }
                }
            };
            args.push(arg);
        }
        if let Some(binding) = binding {
            if !binding.starts_with('r') || binding[1..].parse::<u32>().is_err() {
                return Err(syntax(&format!("bad resource name `{binding}`")));
            }
            if template.produces.is_none() {
                return Err(syntax(&format!("{name} produces no resource")));
            }
            names.insert(binding.to_string(), calls.len() as u16);
        }
        calls.push(Call {
            ordinal: template.ordinal,
            args,
        });
    }
    if calls.is_empty() {
        return Err(ProgramError::Empty);
    }
    let tc = TestCase::new(calls);
    validate_testcase(&tc, templates).map_err(|v| {
        ProgramError::Invalid(
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    Ok(tc)
}

/// Renders a test case in the seed program format. Resource-producing calls
/// are bound to `r0`, `r1`, ... in order.
pub fn format_program(tc: &TestCase, templates: &TemplateSet) -> String {
    let mut out = String::new();
    let mut names: HashMap<usize, usize> = HashMap::new();
    for (ci, call) in tc.calls.iter().enumerate() {
        let Some(t) = templates.get(call.ordinal) else {
            let _ = writeln!(out, "# unknown ordinal {}", call.ordinal);
            continue;
        };
        if t.produces.is_some() {
            let n = names.len();
            names.insert(ci, n);
            let _ = write!(out, "r{n} = ");
        }
        let args: Vec<String> = call
            .args
            .iter()
            .map(|a| match a {
                ArgValue::Scalar32(v) | ArgValue::ConstEnum(v) => fmt_int(*v as u64),
                ArgValue::Scalar64(v) => fmt_int(*v),
                ArgValue::Buffer(b) => format!("\"{}\"", encode_hex(b)),
                ArgValue::ResourceRef(r) => match names.get(&(*r as usize)) {
                    Some(n) => format!("r{n}"),
                    None => format!("r?{r}"),
                },
            })
            .collect();
        let _ = writeln!(out, "{}({})", t.name, args.join(", "));
    }
    out
}

fn fmt_int(v: u64) -> String {
    if v < 0x1000 {
        v.to_string()
    } else {
        format!("{v:#x}")
    }
}

pub fn encode_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

#[derive(Debug, Error)]
#[error("reading seed corpus {path}: {source}")]
pub struct CorpusError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

#[derive(Debug, Default)]
pub struct SeedCorpus {
    /// Valid seeds in file-name order.
    pub seeds: Vec<(PathBuf, TestCase)>,
    /// Files that failed to parse or validate, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl SeedCorpus {
    pub fn testcases(&self) -> Vec<TestCase> {
        self.seeds.iter().map(|(_, tc)| tc.clone()).collect()
    }
}

/// Loads every regular file in `dir` as a seed program. Invalid seeds are
/// logged and skipped.
pub fn load_seed_corpus(dir: &Path, templates: &TemplateSet) -> Result<SeedCorpus, CorpusError> {
    let err = |source| CorpusError {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut corpus = SeedCorpus::default();
    for path in paths {
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping seed {}: {e}", path.display());
                corpus.skipped.push((path, e.to_string()));
                continue;
            }
        };
        match parse_program(&text, templates) {
            Ok(tc) => corpus.seeds.push((path, tc)),
            Err(e) => {
                log::warn!("skipping seed {}: {e}", path.display());
                corpus.skipped.push((path, e.to_string()));
            }
        }
    }
    if corpus.seeds.is_empty() {
        log::warn!("seed corpus {} contains no valid seeds", dir.display());
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> TemplateSet {
        TemplateSet::parse(
            "mk(mode:enum{1,2}, n:s32) -> h\n\
             use(h:res:h, data:buf[8], wide:s64)\n",
        )
        .unwrap()
    }

    #[test]
    fn parses_and_formats_round_trip() {
        let t = set();
        let text = "r0 = mk(2, 0x1000)\nuse(r0, \"00ff10\", 7)\n";
        let tc = parse_program(text, &t).unwrap();
        assert_eq!(tc.calls[1].args[0], ArgValue::ResourceRef(0));
        assert_eq!(tc.calls[1].args[1], ArgValue::Buffer(vec![0, 0xff, 0x10]));
        assert_eq!(format_program(&tc, &t), text);
        assert_eq!(parse_program(&format_program(&tc, &t), &t).unwrap(), tc);
    }

    #[test]
    fn undefined_resource_is_reported() {
        let err = parse_program("r0 = mk(1, 0)\nuse(r5, \"\", 0)\n", &set()).unwrap_err();
        assert_eq!(
            err,
            ProgramError::UndefinedResource {
                line: 2,
                name: "r5".into()
            }
        );
    }

    #[test]
    fn corpus_loading_skips_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.prog"), "r0 = mk(1, 3)\n").unwrap();
        std::fs::write(dir.path().join("b.prog"), "use(r5, \"\", 0)\n").unwrap();
        let corpus = load_seed_corpus(dir.path(), &set()).unwrap();
        assert_eq!(corpus.seeds.len(), 1);
        assert_eq!(corpus.skipped.len(), 1);
        assert!(corpus.skipped[0].1.contains("r5"));
    }

    #[test]
    fn empty_directory_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_seed_corpus(dir.path(), &set()).unwrap();
        assert!(corpus.seeds.is_empty() && corpus.skipped.is_empty());
        assert!(load_seed_corpus(&dir.path().join("missing"), &set()).is_err());
    }
}
