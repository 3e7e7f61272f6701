//! Flat named-tensor container shared by SAE weights and embedding files.
//!
//! Layout (all text is ASCII, lines end with `\n`):
//!
//! ```text
//! SAE1 <m> <n>
//! <tensor_count>
//! <name> <rank> <dim_0> ... <dim_rank-1> <byte_offset>
//! ...
//! <raw little-endian f32 data, tensors back to back in declaration order>
//! ```
//!
//! `byte_offset` is measured from the first byte after the last table line.
//! For SAE weight files `<m> <n>` are the feature count and embedding width.
//! Embedding files carry `SAE1 0 <n>` and a single `embedding` tensor of
//! shape `[n]`.

use std::fs;
use std::path::Path;

use super::SaeError;

pub const MAGIC: &str = "SAE1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    fn element_count(shape: &[usize]) -> usize {
        shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    /// The two integers of the `SAE1` header line.
    pub header: (usize, usize),
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC} {} {}\n{}\n", self.header.0, self.header.1, self.tensors.len());
        let mut offset = 0usize;
        for t in &self.tensors {
            header.push_str(&t.name);
            header.push_str(&format!(" {}", t.shape.len()));
            for d in &t.shape {
                header.push_str(&format!(" {d}"));
            }
            header.push_str(&format!(" {offset}\n"));
            offset += t.data.len() * 4;
        }
        let mut out = header.into_bytes();
        out.reserve(offset);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SaeError> {
        let mut cursor = 0usize;
        let mut next_line = |what: &str| -> Result<&str, SaeError> {
            let rest = &bytes[cursor..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| SaeError::Format(format!("truncated header while reading {what}")))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| SaeError::Format(format!("non-UTF-8 {what}")))?;
            cursor += end + 1;
            Ok(line)
        };

        let magic_line = next_line("magic line")?;
        let mut parts = magic_line.split_ascii_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(SaeError::Format(format!("expected `{MAGIC}` magic, found {magic_line:?}")));
        }
        let header = (parse_usize(parts.next(), "header m")?, parse_usize(parts.next(), "header n")?);
        if parts.next().is_some() {
            return Err(SaeError::Format("trailing tokens on magic line".into()));
        }

        let count = parse_usize(Some(next_line("tensor count")?.trim()), "tensor count")?;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next_line("tensor table")?;
            let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
            if tokens.len() < 3 {
                return Err(SaeError::Format(format!("malformed table line {line:?}")));
            }
            let rank = parse_usize(Some(tokens[1]), "tensor rank")?;
            if tokens.len() != rank + 3 {
                return Err(SaeError::Format(format!("table line {line:?} does not match rank {rank}")));
            }
            let shape = tokens[2..2 + rank]
                .iter()
                .map(|t| parse_usize(Some(t), "tensor dim"))
                .collect::<Result<Vec<_>, _>>()?;
            let offset = parse_usize(Some(tokens[rank + 2]), "tensor offset")?;
            table.push((tokens[0].to_string(), shape, offset));
        }

        let data = &bytes[cursor..];
        let mut expected_offset = 0usize;
        let mut tensors = Vec::with_capacity(count);
        for (name, shape, offset) in table {
            if offset != expected_offset {
                return Err(SaeError::Format(format!(
                    "tensor {name} declared at offset {offset}, expected {expected_offset}"
                )));
            }
            let len = NamedTensor::element_count(&shape);
            let end = offset + len * 4;
            if end > data.len() {
                return Err(SaeError::Format(format!("tensor {name} runs past end of file")));
            }
            let values = data[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data: values });
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(SaeError::Format(format!(
                "{} trailing bytes after tensor data",
                data.len() - expected_offset
            )));
        }
        Ok(Self { header, tensors })
    }

    pub fn read(path: &Path) -> Result<Self, SaeError> {
        let bytes = fs::read(path).map_err(|e| SaeError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), SaeError> {
        fs::write(path, self.to_bytes()).map_err(|e| SaeError::Io(format!("{}: {e}", path.display())))
    }
}

fn parse_usize(token: Option<&str>, what: &str) -> Result<usize, SaeError> {
    token
        .ok_or_else(|| SaeError::Format(format!("missing {what}")))?
        .parse()
        .map_err(|_| SaeError::Format(format!("invalid {what}")))
}
