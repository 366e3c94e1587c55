//! Intra-slice scheduling: hands a slice's RBGs to its UEs one RBG per
//! micro-step.

use serde::{Deserialize, Serialize};

use crate::sla::SliceKind;

/// Queue contents and channel of one UE at the start of a TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct UeView {
    /// Global UE index.
    pub ue: usize,
    /// Queued chunks as (age in seconds, bits), oldest first.
    pub chunks: Vec<(f64, f64)>,
    pub se: f64,
}

impl UeView {
    pub fn queued_bits(&self) -> f64 {
        self.chunks.iter().map(|c| c.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSnapshot {
    pub kind: SliceKind,
    pub ues: Vec<UeView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraParams {
    pub l_max_s: f64,
    /// Bits one UE can receive in a TTI at peak efficiency on the whole band.
    pub b_max_bits: f64,
    pub se_max: f64,
    /// Queue normalization (buffer capacity).
    pub queue_scale_bits: f64,
    /// `B / R * T_TTI`: bits per RBG per unit of spectral efficiency.
    pub rbg_bits_per_se: f64,
}

/// Normalized micro-step state. `hol` is populated for URLLC, `share` for
/// eMBB/BE; both are always computed since rewards need them.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroState {
    pub kind: SliceKind,
    pub queue: Vec<f64>,
    pub channel: Vec<f64>,
    pub hol: Vec<f64>,
    pub share: Vec<f64>,
    /// Bits served so far this step over `b_max`.
    pub served: Vec<f64>,
    pub budget: usize,
    pub micro_step: usize,
}

impl MicroState {
    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Mean service share over the slice's UEs.
    pub fn mean_share(&self) -> f64 {
        if self.share.is_empty() {
            0.0
        } else {
            self.share.iter().sum::<f64>() / self.share.len() as f64
        }
    }

    /// The per-kind feature tuple: `(q, c, l, R_s)` for URLLC and
    /// `(q, c, u, R_s)` otherwise.
    pub fn features(&self) -> (&[f64], &[f64], &[f64], usize) {
        let third = match self.kind {
            SliceKind::Urllc => &self.hol,
            SliceKind::Embb | SliceKind::Be => &self.share,
        };
        (&self.queue, &self.channel, third, self.budget)
    }
}

/// Running per-UE statistics inside one TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroProgress {
    pub rbgs: Vec<usize>,
    pub served_bits: Vec<f64>,
    remaining: Vec<Vec<(f64, f64)>>,
}

impl MicroProgress {
    pub fn new(snapshot: &SliceSnapshot) -> Self {
        let n = snapshot.ues.len();
        Self {
            rbgs: vec![0; n],
            served_bits: vec![0.0; n],
            remaining: snapshot.ues.iter().map(|u| u.chunks.clone()).collect(),
        }
    }

    fn remaining_bits(&self, j: usize) -> f64 {
        self.remaining[j].iter().map(|c| c.1).sum()
    }

    fn hol(&self, j: usize) -> f64 {
        self.remaining[j].first().map(|c| c.0).unwrap_or(0.0)
    }

    /// Gives one RBG to UE `j`; returns bits delivered.
    fn assign(&mut self, j: usize, bits_capacity: f64) -> f64 {
        self.rbgs[j] += 1;
        let mut left = bits_capacity;
        let mut delivered = 0.0;
        let queue = &mut self.remaining[j];
        while left > 0.0 && !queue.is_empty() {
            if queue[0].1 <= left {
                left -= queue[0].1;
                delivered += queue[0].1;
                queue.remove(0);
            } else {
                queue[0].1 -= left;
                delivered += left;
                left = 0.0;
            }
        }
        self.served_bits[j] += delivered;
        delivered
    }
}

fn unit(x: f64) -> f64 {
    if x.is_finite() {
        x.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn build_microstate(
    snapshot: &SliceSnapshot,
    progress: &MicroProgress,
    budget: usize,
    micro_step: usize,
    params: &IntraParams,
) -> MicroState {
    let n = snapshot.ues.len();
    let denom = budget.max(1) as f64;
    MicroState {
        kind: snapshot.kind,
        queue: (0..n).map(|j| unit(progress.remaining_bits(j) / params.queue_scale_bits)).collect(),
        channel: snapshot.ues.iter().map(|u| unit(u.se / params.se_max)).collect(),
        hol: (0..n).map(|j| unit(progress.hol(j) / params.l_max_s)).collect(),
        share: progress.rbgs.iter().map(|&r| unit(r as f64 / denom)).collect(),
        served: progress.served_bits.iter().map(|&b| unit(b / params.b_max_bits)).collect(),
        budget,
        micro_step,
    }
}

/// Reward of giving the last RBG to `j`, evaluated on the post-assignment
/// state. Always in `[-1, 1]`.
pub fn micro_reward(kind: SliceKind, j: usize, state: &MicroState) -> f64 {
    match kind {
        SliceKind::Urllc => 1.0 - 2.0 * state.hol[j],
        SliceKind::Embb => 2.0 * state.served[j] - 1.0,
        SliceKind::Be => 1.0 - 2.0 * (state.share[j] - state.mean_share()).abs(),
    }
}

pub trait IntraPolicy {
    /// Picks the UE (slice-local index) that receives the next RBG.
    fn choose(&mut self, state: &MicroState) -> usize;
}

/// Index of the best-scoring UE among those with queued data (or among all
/// UEs when every queue is empty). Ties go to the lowest index.
fn argmax_with_data(state: &MicroState, score: impl Fn(usize) -> f64) -> usize {
    let any_data = state.queue.iter().any(|q| *q > 0.0);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..state.len() {
        if any_data && state.queue[j] <= 0.0 {
            continue;
        }
        let s = score(j);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((j, s));
        }
    }
    best.map(|b| b.0).unwrap_or(0)
}

/// Heuristic intra-slice scheduler.
///
/// URLLC: earliest deadline first (largest head-of-line delay). eMBB: largest
/// expected service `c * q`, blended towards the least-served UE by
/// `fairness`. BE: smallest service share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselinePolicy {
    pub kind: SliceKind,
    pub fairness: f64,
}

impl BaselinePolicy {
    pub fn for_kind(kind: SliceKind) -> Self {
        Self { kind, fairness: 0.0 }
    }
}

impl IntraPolicy for BaselinePolicy {
    fn choose(&mut self, s: &MicroState) -> usize {
        match self.kind {
            SliceKind::Urllc => argmax_with_data(s, |j| s.hol[j]),
            SliceKind::Embb => {
                let a = self.fairness.clamp(0.0, 1.0);
                argmax_with_data(s, |j| (1.0 - a) * s.channel[j] * s.queue[j] + a * (1.0 - s.share[j]))
            }
            SliceKind::Be => argmax_with_data(s, |j| -s.share[j]),
        }
    }
}

pub fn baseline_policies(kind: SliceKind) -> BaselinePolicy {
    BaselinePolicy::for_kind(kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroAssignment {
    /// Slice-local UE chosen at each micro-step.
    pub chosen: Vec<usize>,
    pub rbgs: Vec<usize>,
    pub served_bits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroOutcome {
    pub assignment: MicroAssignment,
    pub rewards: Vec<f64>,
    /// RBGs that could not be used because the slice had no UEs.
    pub unused: usize,
}

pub fn run_microsteps(
    snapshot: &SliceSnapshot,
    budget: usize,
    policy: &mut dyn IntraPolicy,
    params: &IntraParams,
) -> MicroOutcome {
    let n = snapshot.ues.len();
    if n == 0 {
        if budget > 0 {
            log::debug!("{} slice has no active UEs; {budget} RBGs unused", snapshot.kind);
        }
        return MicroOutcome {
            assignment: MicroAssignment {
                chosen: vec![],
                rbgs: vec![],
                served_bits: vec![],
            },
            rewards: vec![],
            unused: budget,
        };
    }
    let mut progress = MicroProgress::new(snapshot);
    let mut chosen = Vec::with_capacity(budget);
    let mut rewards = Vec::with_capacity(budget);
    for kappa in 1..=budget {
        let state = build_microstate(snapshot, &progress, budget, kappa, params);
        let j = policy.choose(&state).min(n - 1);
        progress.assign(j, params.rbg_bits_per_se * snapshot.ues[j].se);
        let after = build_microstate(snapshot, &progress, budget, kappa, params);
        rewards.push(micro_reward(snapshot.kind, j, &after));
        chosen.push(j);
    }
    MicroOutcome {
        assignment: MicroAssignment {
            chosen,
            rbgs: progress.rbgs,
            served_bits: progress.served_bits,
        },
        rewards,
        unused: 0,
    }
}
