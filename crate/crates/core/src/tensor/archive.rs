//! Named-tensor archive: a JSON manifest next to a flat file of little-endian
//! doubles.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const FORMAT: &str = "fgnn-tensor-archive";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data file, in doubles.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<ArchiveEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
pub fn save_archive<'t>(
    dir: &Path,
    stem: &str,
    tensors: impl IntoIterator<Item = (String, &'t Tensor)>,
    meta: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut bytes = Vec::new();
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(ArchiveEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.numel();
    }
    let manifest = ArchiveManifest {
        format: FORMAT.to_string(),
        version: 1,
        tensors: entries,
        meta,
    };
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_archive(dir: &Path, stem: &str) -> Result<(ArchiveManifest, Vec<(String, Tensor)>)> {
    let manifest: ArchiveManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!(
            "unknown archive format {:?}",
            manifest.format
        )));
    }
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(
            "data file length is not a multiple of 8".into(),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let len: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Format(format!("tensor {} overruns the data file", e.name)))?;
        out.push((e.name.clone(), Tensor::new(&e.shape, data.to_vec())?));
    }
    Ok((manifest, out))
}
