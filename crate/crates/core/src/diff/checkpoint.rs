//! Versioned text checkpoints.
//!
//! The container is line-oriented ASCII so it diffs cleanly and has no
//! platform-dependent encoding. Every f64 is stored as the 16 hex digits
//! of its IEEE-754 bit pattern, which makes save/load bit-exact (including
//! NaN payloads and signed zeros). Layout:
//!
//! ```text
//! dpmlckpt v1
//! meta <count>
//! <key> <escaped value>        (sorted by key)
//! tensor <name> <ndims> <dims...>
//! <hex values, 8 per line>
//! end
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &str = "dpmlckpt v1";
const VALUES_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

/// String metadata plus named tensors, rendered deterministically: meta is
/// key-sorted, tensors keep the order they were pushed in.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        assert!(
            !key.is_empty() && key.chars().all(|c| !c.is_whitespace()),
            "meta keys must be non-empty and whitespace-free"
        );
        self.meta.insert(key, value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// Requires `key` to be present.
    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::checkpoint(format!("missing meta key {key}")))
    }

    pub fn push_tensor(
        &mut self,
        name: impl Into<String>,
        dims: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::checkpoint(format!("invalid tensor name {name:?}")));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::checkpoint(format!("duplicate tensor {name}")));
        }
        let expect: usize = dims.iter().product();
        if expect != values.len() {
            return Err(Error::checkpoint(format!(
                "tensor {name}: dims {dims:?} imply {expect} values, got {}",
                values.len()
            )));
        }
        self.tensors.push(NamedTensor { name, dims, values });
        Ok(())
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require_tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensor(name)
            .ok_or_else(|| Error::checkpoint(format!("missing tensor {name}")))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("meta {}\n", self.meta.len()));
        for (k, v) in &self.meta {
            out.push_str(&format!("{k} {}\n", escape(v)));
        }
        for t in &self.tensors {
            out.push_str(&format!("tensor {} {}", t.name, t.dims.len()));
            for d in &t.dims {
                out.push_str(&format!(" {d}"));
            }
            out.push('\n');
            for chunk in t.values.chunks(VALUES_PER_LINE) {
                let line: Vec<String> =
                    chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::checkpoint(format!("unexpected end of file, wanted {what}")))
        };

        let (ln, magic) = next("magic header")?;
        if magic != MAGIC {
            return Err(Error::checkpoint(format!("line {ln}: bad magic {magic:?}")));
        }
        let (ln, meta_hdr) = next("meta header")?;
        let meta_count: usize = meta_hdr
            .strip_prefix("meta ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::checkpoint(format!("line {ln}: bad meta header {meta_hdr:?}")))?;
        let mut ckpt = Checkpoint::new();
        for _ in 0..meta_count {
            let (ln, line) = next("meta entry")?;
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::checkpoint(format!("line {ln}: bad meta entry {line:?}")))?;
            ckpt.meta.insert(key.to_string(), unescape(value, ln)?);
        }

        loop {
            let (ln, line) = next("tensor header or end")?;
            if line == "end" {
                return Ok(ckpt);
            }
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() < 3 || fields[0] != "tensor" {
                return Err(Error::checkpoint(format!("line {ln}: bad tensor header {line:?}")));
            }
            let name = fields[1].to_string();
            let ndims: usize = fields[2]
                .parse()
                .map_err(|_| Error::checkpoint(format!("line {ln}: bad rank in {line:?}")))?;
            if fields.len() != 3 + ndims {
                return Err(Error::checkpoint(format!(
                    "line {ln}: rank {ndims} but {} dims listed",
                    fields.len() - 3
                )));
            }
            let mut dims = Vec::with_capacity(ndims);
            for f in &fields[3..] {
                dims.push(f.parse::<usize>().map_err(|_| {
                    Error::checkpoint(format!("line {ln}: bad dim {f:?} in {line:?}"))
                })?);
            }
            let total: usize = dims.iter().product();
            let mut values = Vec::with_capacity(total);
            while values.len() < total {
                let (ln, line) = next("tensor values")?;
                for tok in line.split(' ') {
                    if values.len() == total {
                        return Err(Error::checkpoint(format!(
                            "line {ln}: extra values for tensor {name}"
                        )));
                    }
                    let bits = u64::from_str_radix(tok, 16).map_err(|_| {
                        Error::checkpoint(format!("line {ln}: bad value {tok:?}"))
                    })?;
                    if tok.len() != 16 {
                        return Err(Error::checkpoint(format!(
                            "line {ln}: value {tok:?} is not 16 hex digits"
                        )));
                    }
                    values.push(f64::from_bits(bits));
                }
            }
            ckpt.push_tensor(name, dims, values)?;
        }
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::checkpoint(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(v: &str, ln: usize) -> Result<String> {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::checkpoint(format!(
                    "line {ln}: bad escape \\{}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}
