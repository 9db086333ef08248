//! Newline-delimited dataset files.
//!
//! The first line is a header object carrying the chunking parameters; every
//! following line is one rollout. Floats are written in shortest round-trip
//! decimal form, so `load(save(x)) == x` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, Rollout, Step};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(rename = "d_O")]
    pub d_o: usize,
    pub d_a: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "H_prime")]
    pub h_prime: usize,
    #[serde(rename = "T_O")]
    pub t_o: usize,
    pub version: u32,
    /// Frozen random feature embedding used to synthesise the observations,
    /// stored row-major as `d_feature` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
    /// Std of the simulator policy's per-plan goal offsets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_noise: Option<f64>,
}

impl DatasetHeader {
    pub fn new(d_o: usize, d_a: usize, h: usize, h_prime: usize, t_o: usize) -> Self {
        Self {
            d_o,
            d_a,
            h,
            h_prime,
            t_o,
            version: DATASET_VERSION,
            embedding: None,
            policy_noise: None,
        }
    }

    /// Checks a rollout against the header's dimensions and step grid.
    pub fn validate(&self, rollout: &Rollout) -> Result<()> {
        let id = &rollout.id;
        if rollout.steps.is_empty() {
            return Err(Error::schema(format!("rollout `{id}` has no steps")));
        }
        for (k, step) in rollout.steps.iter().enumerate() {
            if step.t != k * self.h_prime {
                return Err(Error::schema(format!(
                    "rollout `{id}` step {k}: t = {} but expected {}",
                    step.t,
                    k * self.h_prime
                )));
            }
            if step.obs.len() != self.d_o {
                return Err(Error::schema(format!(
                    "rollout `{id}` step {k}: obs has {} dims, header says {}",
                    step.obs.len(),
                    self.d_o
                )));
            }
            if step.action_chunk.len() != self.h {
                return Err(Error::schema(format!(
                    "rollout `{id}` step {k}: action chunk has {} rows, H = {}",
                    step.action_chunk.len(),
                    self.h
                )));
            }
            if let Some(row) = step.action_chunk.iter().find(|r| r.len() != self.d_a) {
                return Err(Error::schema(format!(
                    "rollout `{id}` step {k}: action row has {} dims, d_a = {}",
                    row.len(),
                    self.d_a
                )));
            }
        }
        if let (Some(inj), Some(last)) = (rollout.injection_time, rollout.last_t()) {
            if inj > last {
                return Err(Error::schema(format!(
                    "rollout `{id}`: injection_time {inj} after last step {last}"
                )));
            }
        }
        Ok(())
    }
}

/// A header plus its rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub rollouts: Vec<Rollout>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, rollouts: Vec<Rollout>) -> Result<Self> {
        for r in &rollouts {
            header.validate(r)?;
        }
        Ok(Self { header, rollouts })
    }

    pub fn with_label(&self, label: Label) -> Vec<&Rollout> {
        self.rollouts.iter().filter(|r| r.label == label).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Option<Self>> {
        let file = File::open(path)?;
        read_dataset(BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_dataset(&mut w, &self.header, &self.rollouts)?;
        w.flush()?;
        Ok(())
    }
}

/// Parses a dataset. Returns `None` for a file without any lines.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Option<Dataset>> {
    let mut header: Option<DatasetHeader> = None;
    let mut rollouts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match &header {
            None => {
                let h: DatasetHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad header: {e}"),
                })?;
                if h.version != DATASET_VERSION {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unsupported dataset version {}", h.version),
                    });
                }
                header = Some(h);
            }
            Some(h) => {
                let r: Rollout = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                h.validate(&r)?;
                rollouts.push(r);
            }
        }
    }
    Ok(header.map(|header| Dataset { header, rollouts }))
}

pub fn write_dataset<W: Write>(w: &mut W, header: &DatasetHeader, rollouts: &[Rollout]) -> Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    for r in rollouts {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads only the rollouts of a dataset file; an empty file yields no rollouts.
pub fn load_rollouts(path: impl AsRef<Path>) -> Result<Vec<Rollout>> {
    Ok(Dataset::load(path)?.map(|d| d.rollouts).unwrap_or_default())
}

pub fn save_rollouts(header: &DatasetHeader, rollouts: &[Rollout], path: impl AsRef<Path>) -> Result<()> {
    for r in rollouts {
        header.validate(r)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, header, rollouts)?;
    w.flush()?;
    Ok(())
}

/// One line of a step stream: a single step tagged with its rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub rollout_id: String,
    pub t: usize,
    pub obs: Vec<f64>,
    pub action_chunk: Vec<Vec<f64>>,
}

impl StepRecord {
    pub fn new(rollout_id: impl Into<String>, step: &Step) -> Self {
        Self {
            rollout_id: rollout_id.into(),
            t: step.t,
            obs: step.obs.clone(),
            action_chunk: step.action_chunk.clone(),
        }
    }

    pub fn into_step(self) -> (String, Step) {
        (
            self.rollout_id,
            Step {
                t: self.t,
                obs: self.obs,
                action_chunk: self.action_chunk,
            },
        )
    }
}

/// Reader for step streams: a dataset header line followed by one
/// [`StepRecord`] per line. Records are checked against the header as they
/// arrive.
pub struct StepStream<R> {
    header: DatasetHeader,
    lines: std::io::Lines<R>,
    lineno: usize,
}

impl<R: BufRead> StepStream<R> {
    /// Reads the header; an input without any lines is an error.
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut lineno = 0;
        loop {
            lineno += 1;
            let Some(line) = lines.next() else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "missing stream header".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let header: DatasetHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad header: {e}"),
            })?;
            return Ok(Self { header, lines, lineno });
        }
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn check(&self, rec: &StepRecord) -> Result<()> {
        let h = &self.header;
        let at = |msg: String| Error::Parse { line: self.lineno, msg };
        if !rec.t.is_multiple_of(h.h_prime) {
            return Err(at(format!("t = {} is not a multiple of H' = {}", rec.t, h.h_prime)));
        }
        if rec.obs.len() != h.d_o {
            return Err(at(format!("obs has {} dims, header says {}", rec.obs.len(), h.d_o)));
        }
        if rec.action_chunk.len() != h.h || rec.action_chunk.iter().any(|r| r.len() != h.d_a) {
            return Err(at(format!("action chunk is not {} x {}", h.h, h.d_a)));
        }
        Ok(())
    }
}

impl<R: BufRead> Iterator for StepStream<R> {
    type Item = Result<StepRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.lineno += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str::<StepRecord>(&line)
                .map_err(|e| Error::Parse {
                    line: self.lineno,
                    msg: e.to_string(),
                })
                .and_then(|rec| self.check(&rec).map(|()| rec));
            return Some(rec);
        }
    }
}

/// Writes rollouts as a step stream.
pub fn write_step_stream<W: Write>(w: &mut W, header: &DatasetHeader, rollouts: &[Rollout]) -> Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")?;
    for r in rollouts {
        for step in &r.steps {
            serde_json::to_writer(&mut *w, &StepRecord::new(r.id.clone(), step))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}
