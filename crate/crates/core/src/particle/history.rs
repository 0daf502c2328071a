use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParticleCloud;
use crate::error::{Error, Result};
use crate::model::State;

pub const HISTORY_FORMAT: &str = "fkgen-cloud-history";
pub const HISTORY_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n_particles: usize,
}

/// Every cloud of one particle run, epochs `0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudHistory<S> {
    clouds: Vec<ParticleCloud<S>>,
}

impl<S: State> CloudHistory<S> {
    pub fn new(initial: ParticleCloud<S>) -> Result<Self> {
        if initial.epoch != 0 {
            return Err(Error::HistoryGap(format!(
                "history must start at epoch 0, got {}",
                initial.epoch
            )));
        }
        if initial.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        Ok(Self {
            clouds: vec![initial],
        })
    }

    pub fn from_clouds(clouds: Vec<ParticleCloud<S>>) -> Result<Self> {
        let mut it = clouds.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::HistoryGap("no clouds".into()))?;
        let mut history = Self::new(first)?;
        for c in it {
            history.push(c)?;
        }
        Ok(history)
    }

    /// Append the next epoch, checking epoch order, size and ancestor indices.
    pub fn push(&mut self, cloud: ParticleCloud<S>) -> Result<()> {
        let n = self.n_particles();
        let expected = self.last().epoch + 1;
        if cloud.epoch != expected {
            return Err(Error::HistoryGap(format!(
                "expected epoch {expected}, got {}",
                cloud.epoch
            )));
        }
        if cloud.len() != n {
            return Err(Error::HistoryGap(format!(
                "epoch {} has {} particles, expected {n}",
                cloud.epoch,
                cloud.len()
            )));
        }
        match &cloud.parents {
            None => {
                return Err(Error::HistoryGap(format!(
                    "epoch {} has no parent indices",
                    cloud.epoch
                )));
            }
            Some(p) if p.len() != n || p.iter().any(|&j| j >= n) => {
                return Err(Error::HistoryGap(format!(
                    "epoch {} has invalid parent indices",
                    cloud.epoch
                )));
            }
            Some(_) => {}
        }
        self.clouds.push(cloud);
        Ok(())
    }

    pub fn n_particles(&self) -> usize {
        self.clouds[0].len()
    }

    /// Final epoch.
    pub fn horizon(&self) -> usize {
        self.clouds.len() - 1
    }

    /// Number of stored epochs (`horizon + 1`).
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cloud(&self, epoch: usize) -> Result<&ParticleCloud<S>> {
        self.clouds.get(epoch).ok_or_else(|| {
            Error::HistoryGap(format!(
                "epoch {epoch} beyond stored horizon {}",
                self.horizon()
            ))
        })
    }

    pub fn last(&self) -> &ParticleCloud<S> {
        self.clouds.last().expect("history is never empty")
    }

    pub fn clouds(&self) -> &[ParticleCloud<S>] {
        &self.clouds
    }

    /// Parent indices of `epoch >= 1`.
    pub fn parents(&self, epoch: usize) -> Result<&[usize]> {
        self.cloud(epoch)?
            .parents
            .as_deref()
            .ok_or_else(|| Error::HistoryGap(format!("epoch {epoch} has no parent indices")))
    }

    /// JSON-lines: one header line, then one line per epoch.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            format: HISTORY_FORMAT.into(),
            version: HISTORY_VERSION,
            n_particles: self.n_particles(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for c in &self.clouds {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::HistoryGap("empty history file".into()))??;
        let header: Header = serde_json::from_str(&header_line)?;
        if header.format != HISTORY_FORMAT || header.version != HISTORY_VERSION {
            return Err(Error::HistoryGap(format!(
                "unsupported history format {} v{}",
                header.format, header.version
            )));
        }
        let mut clouds = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            clouds.push(serde_json::from_str::<ParticleCloud<S>>(&line)?);
        }
        let history = Self::from_clouds(clouds)?;
        if history.n_particles() != header.n_particles {
            return Err(Error::HistoryGap(format!(
                "header declares {} particles, clouds hold {}",
                header.n_particles,
                history.n_particles()
            )));
        }
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fixtures;
    use crate::particle::{run_filter, SelectionConfig};
    use crate::rng::RandomStreams;

    #[test]
    fn jsonl_round_trip() {
        let m = fixtures::three_state().with_horizon(4).unwrap();
        let h = run_filter(
            &m,
            12,
            &SelectionConfig::default(),
            4,
            &RandomStreams::new(1),
        )
        .unwrap();
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("{\"format\":\"fkgen-cloud-history\""));
        let back = CloudHistory::<usize>::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn push_rejects_gaps() {
        let c0 = ParticleCloud {
            epoch: 0,
            positions: vec![0usize, 1],
            parents: None,
            log_normalizer: 0.0,
        };
        let mut h = CloudHistory::new(c0.clone()).unwrap();
        let mut skip = c0.clone();
        skip.epoch = 2;
        skip.parents = Some(vec![0, 1]);
        assert!(h.push(skip).is_err());
        let mut orphan = c0.clone();
        orphan.epoch = 1;
        assert!(h.push(orphan.clone()).is_err());
        orphan.parents = Some(vec![0, 2]);
        assert!(h.push(orphan.clone()).is_err());
        orphan.parents = Some(vec![1, 1]);
        h.push(orphan).unwrap();
        assert_eq!(h.horizon(), 1);
        assert!(h.cloud(2).is_err());
    }
}
