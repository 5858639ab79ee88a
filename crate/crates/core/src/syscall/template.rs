//! Syscall templates and the line-oriented template file format.
//!
//! One template per line:
//!
//! ```text
//! name(param:kind[,param:kind...]) [-> resourceKind] [helper]
//! ```
//!
//! where `kind` is one of `s32`, `s32[min..max]`, `s64`, `buf[maxlen]`,
//! `res:Kind` or `enum{v1,v2,...}`. Everything after `#` is a comment.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Largest buffer the payload codec can carry (u16 length prefix).
pub const MAX_BUFFER_LEN: usize = u16::MAX as usize;

/// Name of a resource type passed between syscalls, e.g. `op` or `obj`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceKind(pub String);

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// 32-bit scalar, optionally constrained to an inclusive range.
    Scalar32 {
        range: Option<(u32, u32)>,
    },
    Scalar64,
    Buffer {
        max_len: usize,
    },
    Resource(ResourceKind),
    ConstEnum(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyscallTemplate {
    pub name: String,
    pub ordinal: u16,
    pub params: Vec<ParamSpec>,
    pub produces: Option<ResourceKind>,
    pub is_helper: bool,
}

impl SyscallTemplate {
    /// Indices of the parameters that consume a resource.
    pub fn resource_params(&self) -> impl Iterator<Item = (usize, &ResourceKind)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match &p.kind {
                ParamKind::Resource(kind) => Some((i, kind)),
                _ => None,
            })
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no templates")]
    Empty,
    #[error("duplicate template name `{0}`")]
    DuplicateName(String),
    #[error("template `{template}` consumes resource `{kind}` that no template produces")]
    DanglingResource {
        template: String,
        kind: ResourceKind,
    },
    #[error("more than {} templates", u16::MAX)]
    TooMany,
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A validated, ordinal-indexed set of templates.
#[derive(Clone, Debug)]
pub struct TemplateSet {
    templates: Vec<SyscallTemplate>,
    by_name: HashMap<String, u16>,
    producers: HashMap<ResourceKind, Vec<u16>>,
}

impl TemplateSet {
    pub fn new(templates: Vec<SyscallTemplate>) -> Result<Self, TemplateError> {
        if templates.is_empty() {
            return Err(TemplateError::Empty);
        }
        if templates.len() > u16::MAX as usize {
            return Err(TemplateError::TooMany);
        }
        let mut by_name = HashMap::new();
        let mut producers: HashMap<ResourceKind, Vec<u16>> = HashMap::new();
        let mut templates = templates;
        for (i, t) in templates.iter_mut().enumerate() {
            t.ordinal = i as u16;
            if by_name.insert(t.name.clone(), t.ordinal).is_some() {
                return Err(TemplateError::DuplicateName(t.name.clone()));
            }
            if let Some(kind) = &t.produces {
                producers.entry(kind.clone()).or_default().push(t.ordinal);
            }
        }
        for t in &templates {
            for (_, kind) in t.resource_params() {
                if !producers.contains_key(kind) {
                    return Err(TemplateError::DanglingResource {
                        template: t.name.clone(),
                        kind: kind.clone(),
                    });
                }
            }
        }
        Ok(Self {
            templates,
            by_name,
            producers,
        })
    }

    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut templates = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let t = parse_template_line(line)
                .map_err(|msg| TemplateError::Parse { line: idx + 1, msg })?;
            templates.push(t);
        }
        Self::new(templates)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The MiniTEE template set shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(crate::BUNDLED_TEMPLATES).expect("bundled templates are valid")
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, ordinal: u16) -> Option<&SyscallTemplate> {
        self.templates.get(ordinal as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&SyscallTemplate> {
        self.by_name.get(name).map(|&o| &self.templates[o as usize])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SyscallTemplate> {
        self.templates.iter()
    }

    /// Ordinals of every template producing `kind`, in file order.
    pub fn producers_of(&self, kind: &ResourceKind) -> &[u16] {
        self.producers.get(kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn helper_count(&self) -> usize {
        self.templates.iter().filter(|t| t.is_helper).count()
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) fn parse_u64(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(&hex.replace('_', ""), 16).ok()
    } else {
        s.replace('_', "").parse().ok()
    }
}

fn parse_u32(s: &str) -> Result<u32, String> {
    let v = parse_u64(s).ok_or_else(|| format!("bad integer `{}`", s.trim()))?;
    u32::try_from(v).map_err(|_| format!("integer `{}` exceeds 32 bits", s.trim()))
}

fn parse_template_line(line: &str) -> Result<SyscallTemplate, String> {
    let open = line.find('(').ok_or("expected `(`")?;
    let close = line.rfind(')').ok_or("expected `)`")?;
    if close < open {
        return Err("mismatched parentheses".into());
    }
    let name = line[..open].trim();
    if !is_ident(name) {
        return Err(format!("bad template name `{name}`"));
    }

    let mut params = Vec::new();
    let inner = line[open + 1..close].trim();
    if !inner.is_empty() {
        for piece in split_params(inner)? {
            params.push(parse_param(piece.trim())?);
        }
    }
    let mut seen = BTreeSet::new();
    for p in &params {
        if !seen.insert(p.name.as_str()) {
            return Err(format!("duplicate parameter `{}`", p.name));
        }
    }

    let mut produces = None;
    let mut is_helper = false;
    let mut rest = line[close + 1..].split_whitespace().peekable();
    while let Some(tok) = rest.next() {
        match tok {
            "->" => {
                let kind = rest.next().ok_or("expected resource kind after `->`")?;
                if !is_ident(kind) {
                    return Err(format!("bad resource kind `{kind}`"));
                }
                produces = Some(ResourceKind(kind.to_string()));
            }
            "helper" => is_helper = true,
            other => return Err(format!("unexpected `{other}`")),
        }
    }

    Ok(SyscallTemplate {
        name: name.to_string(),
        ordinal: 0,
        params,
        produces,
        is_helper,
    })
}

/// Splits on commas that are not inside `{}` or `[]`.
fn split_params(s: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '{' | '[' => depth += 1,
            '}' | ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err("unbalanced brackets".into());
        }
    }
    if depth != 0 {
        return Err("unbalanced brackets".into());
    }
    out.push(&s[start..]);
    Ok(out)
}

fn parse_param(s: &str) -> Result<ParamSpec, String> {
    let (name, kind) = s
        .split_once(':')
        .ok_or_else(|| format!("parameter `{s}` has no kind"))?;
    let name = name.trim();
    if !is_ident(name) {
        return Err(format!("bad parameter name `{name}`"));
    }
    let kind = kind.trim();
    let kind = if kind == "s32" {
        ParamKind::Scalar32 { range: None }
    } else if let Some(range) = kind.strip_prefix("s32[").and_then(|r| r.strip_suffix(']')) {
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| format!("bad range `{range}`"))?;
        let (lo, hi) = (parse_u32(lo)?, parse_u32(hi)?);
        if lo > hi {
            return Err(format!("empty range `{range}`"));
        }
        ParamKind::Scalar32 {
            range: Some((lo, hi)),
        }
    } else if kind == "s64" {
        ParamKind::Scalar64
    } else if let Some(len) = kind.strip_prefix("buf[").and_then(|r| r.strip_suffix(']')) {
        let max_len = parse_u64(len).ok_or_else(|| format!("bad buffer length `{len}`"))? as usize;
        if max_len > MAX_BUFFER_LEN {
            return Err(format!("buffer length {max_len} exceeds {MAX_BUFFER_LEN}"));
        }
        ParamKind::Buffer { max_len }
    } else if let Some(res) = kind.strip_prefix("res:") {
        let res = res.trim();
        if !is_ident(res) {
            return Err(format!("bad resource kind `{res}`"));
        }
        ParamKind::Resource(ResourceKind(res.to_string()))
    } else if let Some(vals) = kind.strip_prefix("enum{").and_then(|r| r.strip_suffix('}')) {
        let values = vals
            .split(',')
            .map(parse_u32)
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("enum with no values".into());
        }
        ParamKind::ConstEnum(values)
    } else {
        return Err(format!("unknown parameter kind `{kind}`"));
    };
    Ok(ParamSpec {
        name: name.to_string(),
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_kinds() {
        let set = TemplateSet::parse(
            "# comment\n\
             alloc(size:s32[0..4096], mode:enum{1, 0x2}) -> h\n\
             use(h:res:h, data:buf[16], wide:s64, any:s32)\n\
             mk() -> h helper\n",
        )
        .unwrap();
        assert_eq!(set.len(), 3);
        let alloc = set.by_name("alloc").unwrap();
        assert_eq!(alloc.ordinal, 0);
        assert_eq!(
            alloc.params[0].kind,
            ParamKind::Scalar32 {
                range: Some((0, 4096))
            }
        );
        assert_eq!(alloc.params[1].kind, ParamKind::ConstEnum(vec![1, 2]));
        let mk = set.by_name("mk").unwrap();
        assert!(mk.is_helper);
        assert_eq!(set.producers_of(&ResourceKind("h".into())), &[0, 2]);
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(
            TemplateSet::parse("# nothing\n\n"),
            Err(TemplateError::Empty)
        ));
    }

    #[test]
    fn dangling_resource_is_rejected() {
        let err = TemplateSet::parse("use(h:res:ghost)\n").unwrap_err();
        assert!(
            matches!(err, TemplateError::DanglingResource { .. }),
            "{err}"
        );
    }

    #[test]
    fn duplicate_name_is_rejected() {
        let err = TemplateSet::parse("a()\na(x:s32)\n").unwrap_err();
        assert!(matches!(err, TemplateError::DuplicateName(_)));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = TemplateSet::parse("a()\n\nb(x:float)\n").unwrap_err();
        match err {
            TemplateError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bundled_set_has_22_templates_and_4_helpers() {
        let set = TemplateSet::bundled();
        assert_eq!(set.len(), 22);
        assert_eq!(set.helper_count(), 4);
    }
}
