//! On-disk containers. Everything is little-endian; reals are stored as
//! f32 and widened to f64 on load.
//!
//! VITF (features):
//! `"VITF" u32:version=1 u32:records u32:dim u32:classes`
//! `classes × (u16:len utf8)` `records × (u32:label dim × f32)`
//!
//! VITL (tensors):
//! `"VITL" u32:version=1 u32:tensors`
//! `tensors × (u16:len utf8 u8:rank rank × u32 payload × f32)`

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::vit::FeatureVector;

pub const FEATURE_MAGIC: &[u8; 4] = b"VITF";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"VITL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", format!("{name} {dims:?}"), format!("{} values", data.len())));
        }
        Ok(Self { name: name.to_string(), dims, data })
    }

    pub fn from_matrix(name: &str, m: &Matrix) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }

    pub fn from_vector(name: &str, v: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![v.len()],
            data: v.to_vec(),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.dims[..] {
            [r, c] => Matrix::new(r, c, self.data),
            _ => Err(Error::shape("tensor", format!("{} {:?}", self.name, self.dims), "rank 2")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub class_names: Vec<String>,
    pub dim: usize,
    pub records: Vec<FeatureVector>,
}

impl FeatureFile {
    pub fn labels(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| r.label.expect("records carry labels") as usize)
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::parse(self.pos, format!("{what} size overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect())
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let start = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::parse(start, format!("{what} is not UTF-8")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::parse(0, format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::parse(at, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(self.pos, format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("file", format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid("file", format!("name `{s}` too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_features(file: &FeatureFile) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + file.records.len() * (4 + 4 * file.dim));
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize, "version")?;
    put_u32(&mut out, file.records.len(), "record count")?;
    put_u32(&mut out, file.dim, "dim")?;
    put_u32(&mut out, file.class_names.len(), "class count")?;
    for name in &file.class_names {
        put_str(&mut out, name)?;
    }
    for (i, r) in file.records.iter().enumerate() {
        let label = r
            .label
            .ok_or_else(|| Error::invalid("feature file", format!("record {i} has no label")))?;
        if label as usize >= file.class_names.len() {
            return Err(Error::invalid("feature file", format!("record {i} label {label} out of range")));
        }
        if r.len() != file.dim {
            return Err(Error::shape("feature file", format!("record {i} length {}", r.len()), format!("dim {}", file.dim)));
        }
        put_u32(&mut out, label as usize, "label")?;
        put_f32s(&mut out, &r.values);
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader::new(bytes);
    r.header(FEATURE_MAGIC)?;
    let count = r.u32("record count")? as usize;
    let dim = r.u32("dim")? as usize;
    let classes = r.u32("class count")? as usize;
    let mut class_names = Vec::new();
    for _ in 0..classes {
        class_names.push(r.string("class name")?);
    }
    let mut records = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let label = r.u32("label")?;
        if label as usize >= classes {
            return Err(Error::parse(at, format!("label {label} ≥ class count {classes}")));
        }
        records.push(FeatureVector::new(r.f32s(dim, "record")?).with_label(label));
    }
    r.finish()?;
    Ok(FeatureFile { class_names, dim, records })
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION as usize, "version")?;
    put_u32(&mut out, tensors.len(), "tensor count")?;
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::invalid("weights file", format!("duplicate tensor `{}`", t.name)));
        }
        put_str(&mut out, &t.name)?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| Error::invalid("weights file", "rank > 255"))?;
        out.push(rank);
        for &d in &t.dims {
            put_u32(&mut out, d, "dim")?;
        }
        put_f32s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader::new(bytes);
    r.header(WEIGHTS_MAGIC)?;
    let count = r.u32("tensor count")? as usize;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let name = r.string("tensor name")?;
        if !seen.insert(name.clone()) {
            return Err(Error::parse(at, format!("duplicate tensor `{name}`")));
        }
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u32("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::parse(at, "tensor size overflows"))?;
        let data = r.f32s(n, "tensor payload")?;
        out.push(NamedTensor { name, dims, data });
    }
    r.finish()?;
    Ok(out)
}

/// Writes via a sibling temp file and a rename, so readers never observe a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::data(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_features(path: &Path, file: &FeatureFile) -> Result<()> {
    write_atomic(path, &encode_features(file)?)
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    decode_features(&read_file(path)?).map_err(|e| with_path(path, e))
}

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    write_atomic(path, &encode_tensors(tensors)?)
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    decode_tensors(&read_file(path)?).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { offset, reason } => Error::data(path, format!("parse error at byte {offset}: {reason}")),
        other => other,
    }
}
