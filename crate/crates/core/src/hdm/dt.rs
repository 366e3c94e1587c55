//! Windowed sequence regressor used as the decision-transformer stand-in.
//!
//! Features are the last `window` decision states (zero-padded at the
//! front), the goal token, the previous action and a bias; a ridge
//! regression maps them to `[agent logits; θ]`. This is comparison plumbing,
//! not a transformer.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::agent::{Decision, Orchestrator};
use super::model::{HdmInput, HdmModel};
use super::train::TrainingSample;
use super::{OrchestrationAction, ACTION_DIM, GOAL_DIM, STATE_DIM};
use crate::error::{Error, Result};

pub const DT_FORMAT: &str = "ranslice-dt";

#[derive(Serialize, Deserialize)]
struct DtCheckpoint {
    format: String,
    version: u32,
    window: usize,
    rows: usize,
    cols: usize,
    /// Column-major.
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DtStub {
    window: usize,
    /// `ACTION_DIM × features`.
    weights: DMatrix<f64>,
}

fn features(input: &HdmInput, window: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(window * STATE_DIM + GOAL_DIM + ACTION_DIM + 1);
    let recent = &input.recent[input.recent.len().saturating_sub(window)..];
    v.extend(std::iter::repeat_n(0.0, (window - recent.len()) * STATE_DIM));
    for s in recent {
        v.extend_from_slice(s);
    }
    v.extend_from_slice(&input.goal);
    match input.history.last() {
        Some(h) => v.extend_from_slice(&h.action),
        None => v.extend(std::iter::repeat_n(0.0, ACTION_DIM)),
    }
    v.push(1.0);
    v
}

impl DtStub {
    pub fn fit(samples: &[TrainingSample], window: usize, ridge: f64) -> Result<Self> {
        if samples.is_empty() || window == 0 {
            return Err(Error::config("sequence regressor needs samples and a positive window"));
        }
        let p = window * STATE_DIM + GOAL_DIM + ACTION_DIM + 1;
        let x = DMatrix::from_fn(samples.len(), p, |_, _| 0.0);
        let mut x = x;
        let mut y = DMatrix::zeros(samples.len(), ACTION_DIM);
        for (i, s) in samples.iter().enumerate() {
            for (j, f) in features(&s.input, window).into_iter().enumerate() {
                x[(i, j)] = f;
            }
            for (j, t) in s.target.iter().enumerate() {
                y[(i, j)] = *t;
            }
        }
        let xt = x.transpose();
        let gram = &xt * &x + DMatrix::identity(p, p) * ridge.max(1e-9);
        let rhs = &xt * &y;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::NonFinite {
                context: "sequence regressor normal equations".into(),
            })?;
        let w = chol.solve(&rhs);
        Ok(Self {
            window,
            weights: w.transpose(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = DtCheckpoint {
            format: DT_FORMAT.into(),
            version: 1,
            window: self.window,
            rows: self.weights.nrows(),
            cols: self.weights.ncols(),
            weights: self.weights.as_slice().to_vec(),
        };
        fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: DtCheckpoint = serde_json::from_slice(&fs::read(path)?)?;
        let cols = ck.window * STATE_DIM + GOAL_DIM + ACTION_DIM + 1;
        if ck.format != DT_FORMAT || ck.version != 1 || ck.rows != ACTION_DIM || ck.cols != cols {
            return Err(Error::Format(format!("unsupported sequence-regressor checkpoint {} v{}", ck.format, ck.version)));
        }
        if ck.weights.len() != ck.rows * ck.cols {
            return Err(Error::Format("sequence-regressor weight count".into()));
        }
        Ok(Self {
            window: ck.window,
            weights: DMatrix::from_vec(ck.rows, ck.cols, ck.weights),
        })
    }

    pub fn predict(&self, input: &HdmInput) -> OrchestrationAction {
        let f = DVector::from_vec(features(input, self.window));
        let out = &self.weights * f;
        HdmModel::decode(out.as_slice())
    }
}

impl Orchestrator for DtStub {
    fn name(&self) -> &str {
        "dt-stub"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Result<OrchestrationAction> {
        Ok(self.predict(d.input))
    }
}
