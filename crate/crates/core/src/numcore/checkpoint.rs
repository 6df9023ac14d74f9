//! Named-tensor container: a UTF-8 manifest of key/value records plus a
//! companion blob of little-endian `f32` values in manifest order.
//!
//! ```text
//! # clhar tensor container
//! version=1
//! dtype=f32le
//! blob=model.bin
//! meta protocol=linear
//! tensor name=encoder.conv1.weight shape=24x3x32 offset=0 bytes=9216
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::Tensor;
use crate::error::{Error, Result};

const VERSION: &str = "1";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl TensorContainer {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        let idx = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Parse(format!("container has no tensor `{name}`")))?;
        Ok(self.tensors.remove(idx).1)
    }
}

/// Blob path paired with a manifest: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::Parameter(format!(
            "{kind} `{s}` must be non-empty without whitespace or '='"
        )));
    }
    Ok(())
}

pub fn save_container(manifest: &Path, container: &TensorContainer) -> Result<()> {
    let blob = blob_path(manifest);
    let blob_name = blob
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Parameter(format!("bad manifest path {}", manifest.display())))?
        .to_string();
    let mut text = format!("# clhar tensor container\nversion={VERSION}\ndtype={DTYPE}\nblob={blob_name}\n");
    for (k, v) in &container.meta {
        check_token("meta key", k)?;
        if v.contains('\n') {
            return Err(Error::Parameter(format!("meta value for `{k}` contains a newline")));
        }
        text.push_str(&format!("meta {k}={v}\n"));
    }
    let total: usize = container.tensors.iter().map(|(_, t)| t.len()).sum();
    let mut bytes = Vec::with_capacity(total * 4);
    for (name, t) in &container.tensors {
        check_token("tensor name", name)?;
        let shape = t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        text.push_str(&format!(
            "tensor name={name} shape={shape} offset={} bytes={}\n",
            bytes.len(),
            t.len() * 4
        ));
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    fs::write(manifest, text).map_err(|e| Error::io(manifest, e))?;
    Ok(())
}

fn parse_fields(line: &str) -> Result<BTreeMap<&str, &str>> {
    line.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed field `{tok}` in `{line}`")))
        })
        .collect()
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::Parse(format!("bad shape `{s}`"))))
        .collect()
}

pub fn load_container(manifest: &Path) -> Result<TensorContainer> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut header = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut records = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed meta record `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let f = parse_fields(rest)?;
            let get = |k: &str| {
                f.get(k)
                    .copied()
                    .ok_or_else(|| Error::Parse(format!("tensor record missing `{k}`: `{line}`")))
            };
            let name = get("name")?.to_string();
            let shape = parse_shape(get("shape")?)?;
            let offset: usize = get("offset")?
                .parse()
                .map_err(|_| Error::Parse(format!("bad offset in `{line}`")))?;
            records.push((name, shape, offset));
        } else {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("unrecognised manifest line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
    }
    let field = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("manifest missing `{k}`")))
    };
    if field("version")? != VERSION {
        return Err(Error::Parse(format!("unsupported container version {}", field("version")?)));
    }
    if field("dtype")? != DTYPE {
        return Err(Error::Parse(format!("unsupported dtype {}", field("dtype")?)));
    }
    let blob = manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(field("blob")?);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let mut tensors = Vec::with_capacity(records.len());
    for (name, shape, offset) in records {
        let n: usize = shape.iter().product();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(Error::Parse(format!(
                "tensor `{name}` spans bytes {offset}..{end} beyond blob of {}",
                bytes.len()
            )));
        }
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(TensorContainer { meta, tensors })
}
