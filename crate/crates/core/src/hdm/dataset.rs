//! Offline `(state, goal, action)` trajectories and their NDJSON file format.
//!
//! ```text
//! {"type":"header","format":"ranslice-offline","version":1,"state_dim":..,"goal_dim":..,"action_dim":..,"episodes":N,"seed":S}
//! {"type":"episode","id":0,"seed":..,"steps":..,"records":k}
//! {"type":"record","episode":0,"step":..,"trigger":"drift"|"goal","state":[..],"goal":[..],"action":{"agent":..,"theta":[..]}}
//! ...
//! ```
//!
//! Records follow their episode line; steps strictly increase inside an
//! episode.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{HdmConfig, HdmInput, HistoryToken};
use super::train::TrainingSample;
use super::{OrchestrationAction, ACTION_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "ranslice-offline";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    Drift,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: u64,
    pub trigger: Trigger,
    pub state: Vec<f64>,
    pub goal: Vec<f64>,
    pub action: OrchestrationAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: usize,
    pub seed: u64,
    pub steps: u64,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl DatasetHeader {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            state_dim: STATE_DIM,
            goal_dim: GOAL_DIM,
            action_dim: ACTION_DIM,
            episodes,
            seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Header(DatasetHeader),
    Episode {
        id: usize,
        seed: u64,
        steps: u64,
        records: usize,
    },
    Record(TrajectoryRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
}

impl OfflineDataset {
    pub fn empty(seed: u64) -> Self {
        Self {
            header: DatasetHeader::new(0, seed),
            episodes: vec![],
        }
    }

    pub fn record_count(&self) -> usize {
        self.episodes.iter().map(|e| e.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &TrajectoryRecord> {
        self.episodes.iter().flat_map(|e| e.records.iter())
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format != DATASET_FORMAT || h.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset {} v{}", h.format, h.version)));
        }
        if h.episodes != self.episodes.len() {
            return Err(Error::Format(format!(
                "header announces {} episodes, found {}",
                h.episodes,
                self.episodes.len()
            )));
        }
        for e in &self.episodes {
            let mut last: Option<u64> = None;
            for r in &e.records {
                if r.episode != e.id {
                    return Err(Error::Format(format!("record of episode {} inside episode {}", r.episode, e.id)));
                }
                if last.is_some_and(|l| r.step <= l) {
                    return Err(Error::Format(format!("episode {}: step {} not increasing", e.id, r.step)));
                }
                last = Some(r.step);
                if r.state.len() != h.state_dim || r.goal.len() != h.goal_dim {
                    return Err(Error::Format(format!("episode {} step {}: feature width", e.id, r.step)));
                }
                if !r.action.is_feasible() {
                    return Err(Error::Format(format!("episode {} step {}: infeasible action", e.id, r.step)));
                }
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        let mut line = |l: &Line| -> Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&Line::Header(self.header.clone()))?;
        for e in &self.episodes {
            line(&Line::Episode {
                id: e.id,
                seed: e.seed,
                steps: e.steps,
                records: e.records.len(),
            })?;
            for r in &e.records {
                line(&Line::Record(r.clone()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut header = None;
        let mut episodes: Vec<Episode> = vec![];
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
            match (parsed, header.is_some()) {
                (Line::Header(h), false) => header = Some(h),
                (Line::Header(_), true) => return Err(Error::Format(format!("line {}: second header", i + 1))),
                (_, false) => return Err(Error::Format("missing header line".into())),
                (Line::Episode { id, seed, steps, .. }, true) => episodes.push(Episode {
                    id,
                    seed,
                    steps,
                    records: vec![],
                }),
                (Line::Record(r), true) => episodes
                    .last_mut()
                    .ok_or_else(|| Error::Format(format!("line {}: record before any episode", i + 1)))?
                    .records
                    .push(r),
            }
        }
        let ds = Self {
            header: header.ok_or_else(|| Error::Format("missing header line".into()))?,
            episodes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    /// Split off the last `held_out` episodes.
    pub fn split(&self, held_out: usize) -> (Self, Self) {
        let cut = self.episodes.len().saturating_sub(held_out);
        let part = |eps: &[Episode]| Self {
            header: DatasetHeader {
                episodes: eps.len(),
                ..self.header.clone()
            },
            episodes: eps.to_vec(),
        };
        (part(&self.episodes[..cut]), part(&self.episodes[cut..]))
    }

    /// Supervised samples in the same form the live agent builds them: the
    /// history holds the episode's earlier records, the recent window the
    /// states at the latest decisions including the current one.
    pub fn training_samples(&self, cfg: &HdmConfig) -> Vec<TrainingSample> {
        let mut out = Vec::with_capacity(self.record_count());
        for e in &self.episodes {
            let mut history: Vec<HistoryToken> = vec![];
            let mut recent: Vec<Vec<f64>> = vec![];
            for r in &e.records {
                recent.push(r.state.clone());
                if recent.len() > cfg.recent_len {
                    recent.remove(0);
                }
                out.push(TrainingSample {
                    input: HdmInput {
                        history: history.clone(),
                        recent: recent.clone(),
                        goal: r.goal.clone(),
                    },
                    target: r.action.encode().to_vec(),
                });
                history.push(HistoryToken {
                    state: r.state.clone(),
                    goal: r.goal.clone(),
                    action: r.action.encode().to_vec(),
                });
                if history.len() > cfg.history_len {
                    history.remove(0);
                }
            }
        }
        out
    }
}
