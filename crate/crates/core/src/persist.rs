//! Typed-section model container and model manifests.
//!
//! Layout: magic `FBNC`, version `u32`, section count `u32`, then for each
//! section a 4-byte tag, payload length `u64` and the payload. Integers and
//! floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_f64, read_u32};

const MAGIC: &[u8; 4] = b"FBNC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.sections.push((*tag, payload));
    }

    pub fn push_f64s(&mut self, tag: &[u8; 4], values: &[f64]) {
        let mut buf = Vec::with_capacity(8 + 8 * values.len());
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.push(tag, buf);
    }

    pub fn get(&self, tag: &[u8; 4]) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::ModelFormat(format!("missing section `{}`", String::from_utf8_lossy(tag))))
    }

    pub fn get_f64s(&self, tag: &[u8; 4]) -> Result<Vec<f64>> {
        let mut r = self.get(tag)?;
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::ModelFormat("truncated array section".into()))?;
        let n = u64::from_le_bytes(len) as usize;
        if r.len() != 8 * n {
            return Err(Error::ModelFormat("array section length mismatch".into()));
        }
        (0..n).map(|_| read_f64(&mut r)).collect()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (tag, payload) in &self.sections {
            w.write_all(tag)?;
            w.write_all(&(payload.len() as u64).to_le_bytes())?;
            w.write_all(payload)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::ModelFormat("not a model container".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported container version {version}")));
        }
        let n = read_u32(r)?;
        let mut sections = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let mut tag = [0u8; 4];
            r.read_exact(&mut tag)?;
            let mut len = [0u8; 8];
            r.read_exact(&mut len)?;
            let len = u64::from_le_bytes(len) as usize;
            let mut payload = Vec::new();
            r.take(len as u64).read_to_end(&mut payload)?;
            if payload.len() != len {
                return Err(Error::ModelFormat("truncated section".into()));
            }
            sections.push((tag, payload));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Description of a persisted score model, written next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: crate::types::ScoreMethodId,
    pub dims: Vec<usize>,
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of `config`, computed by the caller.
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn save(&self, model_path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(manifest_path(model_path))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(model_path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(manifest_path(
            model_path,
        ))?))?)
    }
}

pub fn manifest_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
