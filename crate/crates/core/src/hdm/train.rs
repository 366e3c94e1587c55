//! Imitation training (Adam on MSE) and the finite-difference gradient check.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::OfflineDataset;
use super::model::{HdmConfig, HdmInput, HdmModel};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// One supervised example: model input and `[one-hot agent; θ]` target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: HdmInput,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: HdmConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Samples per parallel work unit. Fixed so the reduction order, and
    /// hence the result, does not depend on the thread count.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: HdmConfig::default(),
            epochs: 40,
            batch_size: 32,
            learning_rate: 2e-3,
            min_lr_ratio: 0.05,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            chunk: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.chunk == 0 {
            return Err(Error::config("batch_size and chunk must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::config("learning rate must be >= 0 and min_lr_ratio in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::config("Adam betas must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-dataset loss after each epoch.
    pub loss_curve: Vec<f64>,
    pub initial_loss: f64,
    pub iterations: usize,
}

fn dataset_loss(model: &HdmModel, samples: &[TrainingSample], chunk: usize) -> f64 {
    let parts: Vec<f64> = samples
        .par_chunks(chunk)
        .map(|c| c.iter().map(|s| model.loss(&s.input, &s.target)).sum::<f64>())
        .collect();
    parts.iter().sum::<f64>() / samples.len() as f64
}

/// Mean loss and gradient over `batch`, reduced in a fixed order.
fn batch_gradient(model: &HdmModel, batch: &[&TrainingSample], chunk: usize) -> (f64, Vec<f64>) {
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(chunk)
        .map(|c| {
            let mut g = vec![0.0; model.param_count()];
            let l: f64 = c.iter().map(|s| model.loss_and_grad(&s.input, &s.target, scale, &mut g)).sum();
            (l, g)
        })
        .collect();
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    (loss * scale, grad)
}

/// Train on prepared samples. The loss curve holds the full-dataset loss
/// after every epoch.
pub fn train_samples(samples: &[TrainingSample], cfg: &TrainConfig, seed: u64) -> Result<(HdmModel, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut model = HdmModel::new(cfg.model, seed)?;
    let mut rng = stream(seed, Stream::Training);
    let n = model.param_count();
    let (mut m1, mut m2) = (vec![0.0; n], vec![0.0; n]);
    let batches_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total = (batches_per_epoch * cfg.epochs).max(1);
    let initial_loss = dataset_loss(&model, samples, cfg.chunk);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut it = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &samples[i]).collect();
            let (loss, mut grad) = batch_gradient(&model, &batch, cfg.chunk);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    iteration: it,
                    last_good: Box::new(model),
                });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let progress = it as f64 / total as f64;
            let lr = cfg.learning_rate
                * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            it += 1;
            let bc1 = 1.0 - cfg.beta1.powi(it as i32);
            let bc2 = 1.0 - cfg.beta2.powi(it as i32);
            let before = model.clone();
            for (((p, g), a), b) in model.params_mut().iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                *a = cfg.beta1 * *a + (1.0 - cfg.beta1) * g;
                *b = cfg.beta2 * *b + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (*a / bc1) / ((*b / bc2).sqrt() + cfg.epsilon);
            }
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    iteration: it,
                    last_good: Box::new(before),
                });
            }
        }
        let l = dataset_loss(&model, samples, cfg.chunk);
        if !l.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                last_good: Box::new(model),
            });
        }
        log::debug!("epoch {} loss {l:.6}", curve.len());
        curve.push(l);
    }
    Ok((
        model,
        TrainReport {
            loss_curve: curve,
            initial_loss,
            iterations: it,
        },
    ))
}

/// Train on every record of an offline dataset.
pub fn train_hdm(dataset: &OfflineDataset, cfg: &TrainConfig, seed: u64) -> Result<(HdmModel, TrainReport)> {
    let samples = dataset.training_samples(&cfg.model);
    if samples.is_empty() {
        return Err(Error::config("dataset holds no action records"));
    }
    train_samples(&samples, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compare analytic gradients of the mean sample loss with central
/// differences on up to `coords` random coordinates of every parameter
/// group (all of them for smaller groups).
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &HdmModel, samples: &[TrainingSample], coords: usize, h: f64, seed: u64) -> GradCheckReport {
    let scale = 1.0 / samples.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    for s in samples {
        model.loss_and_grad(&s.input, &s.target, scale, &mut grad);
    }
    let loss = |m: &HdmModel| samples.iter().map(|s| m.loss(&s.input, &s.target)).sum::<f64>() * scale;
    let mut rng = stream(seed, Stream::Init);
    let groups = model.param_groups();
    let checks = groups
        .iter()
        .map(|g| {
            let mut idx: Vec<usize> = g.range().collect();
            if idx.len() > coords {
                idx.shuffle(&mut rng);
                idx.truncate(coords);
                idx.sort_unstable();
            }
            let max_rel = idx
                .par_iter()
                .map(|&i| {
                    let mut a = model.clone();
                    a.params_mut()[i] += h;
                    let mut b = model.clone();
                    b.params_mut()[i] -= h;
                    let num = (loss(&a) - loss(&b)) / (2.0 * h);
                    (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6)
                })
                .reduce(|| 0.0, f64::max);
            GroupCheck {
                name: g.name.clone(),
                checked: idx.len(),
                max_rel_error: max_rel,
            }
        })
        .collect();
    GradCheckReport { groups: checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::hdm::model::HistoryToken;
    use crate::hdm::{ACTION_DIM, GOAL_DIM, STATE_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> HdmConfig {
        HdmConfig {
            latent: 8,
            ssm_state: 4,
            head_hidden: 8,
            ..HdmConfig::default()
        }
    }

    fn random_sample(rng: &mut ChaCha8Rng, hist: usize) -> TrainingSample {
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f64>>();
        let history = (0..hist)
            .map(|_| HistoryToken {
                state: v(STATE_DIM),
                goal: v(GOAL_DIM),
                action: v(ACTION_DIM),
            })
            .collect();
        let input = HdmInput {
            history,
            recent: (0..2).map(|_| v(STATE_DIM)).collect(),
            goal: v(GOAL_DIM),
        };
        let mut target = vec![0.0; ACTION_DIM];
        target[1] = 1.0;
        target[3..].copy_from_slice(&v(5));
        TrainingSample { input, target }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..6).map(|_| random_sample(&mut rng, 2)).collect();
        let cfg = TrainConfig {
            model: tiny(),
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (m, rep) = train_samples(&samples, &cfg, 9).unwrap();
        assert_eq!(m.params(), HdmModel::new(tiny(), 9).unwrap().params());
        assert!(rep.loss_curve.iter().all(|l| *l == rep.initial_loss));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<_> = (0..24).map(|i| random_sample(&mut rng, i % 4)).collect();
        let cfg = TrainConfig {
            model: tiny(),
            epochs: 15,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, ra) = train_samples(&samples, &cfg, 3).unwrap();
        let (b, rb) = train_samples(&samples, &cfg, 3).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
        assert!(ra.loss_curve.last().unwrap() < &(0.5 * ra.initial_loss));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(train_samples(&[], &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn gradient_check_on_small_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<_> = (0..2).map(|_| random_sample(&mut rng, 3)).collect();
        let m = HdmModel::new(tiny(), 5).unwrap();
        let rep = gradient_check(&m, &samples, 16, 1e-5, 6);
        assert!(rep.max_rel_error() < 1e-4, "{rep:?}");
        assert!(rep.groups.iter().all(|g| g.checked >= 1));
    }
}
