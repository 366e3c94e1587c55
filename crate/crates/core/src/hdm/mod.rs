//! Goal-conditioned super-agent built on selective state-space blocks.
//!
//! A meta module scores past `(state, goal, action)` tokens and retrieves one
//! significant past action; a control module reads the recent states, the
//! goal and that action and predicts the next orchestration action. Both are
//! trained jointly by imitation on a scripted-oracle dataset.

pub mod agent;
pub mod dataset;
pub mod dt;
pub mod model;
pub mod oracle;
pub mod ssm;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::intent::{Margin, ValidatedGoal};
use crate::sla::{Intent, SliceKind};

pub use agent::{infer, Orchestrator, StreamStep, SuperAgent};
pub use dataset::{OfflineDataset, TrajectoryRecord};
pub use dt::DtStub;
pub use model::{HdmConfig, HdmInput, HdmModel, MetaChoice, Prediction};
pub use oracle::{orchestration_reward, ScriptedOracle};
pub use ssm::{ssm_step, BlockIndex};
pub use train::{gradient_check, train_hdm, GradCheckReport, TrainConfig, TrainReport};

pub const NUM_SLICES: usize = 3;
/// Length of the agent-invocation digest.
pub const HISTORY_DIGEST: usize = 8;
pub const NUM_AGENTS: usize = 3;
/// `[floor_eMBB, floor_URLLC, floor_BE, healing_scale, intra_fairness]`.
pub const THETA_DIM: usize = NUM_SLICES + 2;
pub const ACTION_DIM: usize = NUM_AGENTS + THETA_DIM;
const PER_SLICE: usize = 9;
pub const STATE_DIM: usize = NUM_SLICES * PER_SLICE + HISTORY_DIGEST * NUM_AGENTS + NUM_SLICES + 2 + 2;
pub const GOAL_DIM: usize = 12;

pub const THETA_HEALING: usize = NUM_SLICES;
pub const THETA_FAIRNESS: usize = NUM_SLICES + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentId {
    InterSlice,
    IntraSlice,
    SelfHealing,
}

impl AgentId {
    pub const ALL: [AgentId; NUM_AGENTS] = [AgentId::InterSlice, AgentId::IntraSlice, AgentId::SelfHealing];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::InterSlice => "inter-slice",
            AgentId::IntraSlice => "intra-slice",
            AgentId::SelfHealing => "self-healing",
        }
    }
}

/// Selected agent plus its configuration. RBG components are fractions of
/// the RBG budget, the rest are knobs in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrchestrationAction {
    pub agent: AgentId,
    pub theta: [f64; THETA_DIM],
}

impl OrchestrationAction {
    pub fn new(agent: AgentId, theta: [f64; THETA_DIM]) -> Self {
        Self {
            agent,
            theta: project_theta(&theta),
        }
    }

    pub fn rbg_floors(&self) -> &[f64] {
        &self.theta[..NUM_SLICES]
    }

    /// Every knob in `[0, 1]` and the RBG fractions sum to at most one.
    pub fn is_feasible(&self) -> bool {
        self.theta.iter().all(|t| (0.0..=1.0).contains(t))
            && self.rbg_floors().iter().sum::<f64>() <= 1.0 + 1e-12
    }

    /// Floors in whole RBGs; never more than `r` in total.
    pub fn floors_rbg(&self, r: usize) -> Vec<usize> {
        self.rbg_floors().iter().map(|f| (f * r as f64).floor() as usize).collect()
    }

    /// `[one-hot agent; θ]`.
    pub fn encode(&self) -> [f64; ACTION_DIM] {
        let mut v = [0.0; ACTION_DIM];
        v[self.agent.index()] = 1.0;
        v[NUM_AGENTS..].copy_from_slice(&self.theta);
        v
    }
}

/// Clamp into the unit box, then scale the RBG part down so it sums to at
/// most one. Non-finite entries map to zero.
pub fn project_theta(raw: &[f64]) -> [f64; THETA_DIM] {
    let mut t = [0.0; THETA_DIM];
    for (o, r) in t.iter_mut().zip(raw) {
        *o = if r.is_finite() { r.clamp(0.0, 1.0) } else { 0.0 };
    }
    let sum: f64 = t[..NUM_SLICES].iter().sum();
    if sum > 1.0 {
        t[..NUM_SLICES].iter_mut().for_each(|x| *x /= sum);
        // guard against rounding pushing the sum a hair above one
        let s2: f64 = t[..NUM_SLICES].iter().sum();
        if s2 > 1.0 {
            t[..NUM_SLICES].iter_mut().for_each(|x| *x *= (1.0 - 1e-15) / s2);
        }
    }
    t
}

/// Normalized per-slice view inside the super-state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SliceFeatures {
    pub throughput: f64,
    pub latency: f64,
    pub loss: f64,
    pub buffer: f64,
    /// Violation of the slice's primary intent.
    pub violation: f64,
    pub share: f64,
    /// The violation has persisted long enough to count as drift.
    pub persistent: bool,
    pub offered_forecast: f64,
    pub loss_forecast: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuperState {
    /// eMBB, URLLC, BE.
    pub slices: [SliceFeatures; NUM_SLICES],
    /// Last invocations, oldest first.
    pub history: Vec<AgentId>,
    pub floors: [f64; NUM_SLICES],
    pub healing_scale: f64,
    pub fairness: f64,
    /// Fraction of active intents satisfied.
    pub fulfillment: f64,
    pub drift: bool,
}

impl SuperState {
    pub fn slice(&self, kind: SliceKind) -> &SliceFeatures {
        &self.slices[kind.index()]
    }

    pub fn last_agent(&self) -> Option<AgentId> {
        self.history.last().copied()
    }

    /// Fixed-length feature vector, every entry in `[0, 1]`.
    pub fn to_features(&self) -> Vec<f64> {
        let u = |x: f64| if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
        let mut v = Vec::with_capacity(STATE_DIM);
        for s in &self.slices {
            v.extend([
                u(s.throughput),
                u(s.latency),
                u(s.loss),
                u(s.buffer),
                u(s.violation),
                u(s.share),
                f64::from(u8::from(s.persistent)),
                u(s.offered_forecast),
                u(s.loss_forecast),
            ]);
        }
        let skip = self.history.len().saturating_sub(HISTORY_DIGEST);
        let recent = &self.history[skip..];
        let pad = HISTORY_DIGEST - recent.len();
        v.extend(std::iter::repeat_n(0.0, pad * NUM_AGENTS));
        for a in recent {
            let mut one = [0.0; NUM_AGENTS];
            one[a.index()] = 1.0;
            v.extend(one);
        }
        v.extend(self.floors.iter().map(|&f| u(f)));
        v.push(u(self.healing_scale));
        v.push(u(self.fairness));
        v.push(u(self.fulfillment));
        v.push(f64::from(u8::from(self.drift)));
        debug_assert_eq!(v.len(), STATE_DIM);
        v
    }
}

fn intent_slot(i: Intent) -> usize {
    match i {
        Intent::Throughput => 0,
        Intent::Latency => 1,
        Intent::Loss => 2,
        Intent::LongTerm => 3,
        Intent::Percentile => 4,
    }
}

/// Goal token: `[active, new, kpi one-hot(5), slice one-hot(3), relative,
/// margin]`. `reference` is the SLA threshold used to scale absolute bounds.
pub fn encode_goal(goal: Option<&ValidatedGoal>, is_new: bool, reference: f64) -> Vec<f64> {
    let mut v = vec![0.0; GOAL_DIM];
    let Some(g) = goal else {
        return v;
    };
    v[0] = 1.0;
    v[1] = f64::from(u8::from(is_new));
    v[2 + intent_slot(g.goal.kpi)] = 1.0;
    v[7 + g.goal.slice.index()] = 1.0;
    match g.goal.margin {
        Margin::Relative { percent } => {
            v[10] = 1.0;
            v[11] = (percent.abs() / 100.0).clamp(0.0, 1.0);
        }
        Margin::Absolute { .. } => {
            let r = if reference > 0.0 { g.region.bound / reference } else { 1.0 };
            v[11] = (r / 2.0).clamp(0.0, 1.0);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn feature_length_is_fixed() {
        let mut s = SuperState::default();
        assert_eq!(s.to_features().len(), STATE_DIM);
        s.history = vec![AgentId::SelfHealing; 20];
        assert_eq!(s.to_features().len(), STATE_DIM);
    }

    #[test]
    fn history_keeps_latest_invocations() {
        let s = SuperState {
            history: vec![AgentId::InterSlice, AgentId::IntraSlice, AgentId::SelfHealing],
            ..SuperState::default()
        };
        let f = s.to_features();
        let h = &f[NUM_SLICES * PER_SLICE..NUM_SLICES * PER_SLICE + HISTORY_DIGEST * NUM_AGENTS];
        // last three slots: inter, intra, healing
        assert_eq!(&h[15..], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(h[..15].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn midpoint_projection() {
        let t = project_theta(&[0.5; THETA_DIM]);
        for x in &t[..NUM_SLICES] {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(&t[NUM_SLICES..], &[0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn projection_is_feasible(raw in proptest::collection::vec(-1e3f64..1e3, THETA_DIM), r in 1usize..64) {
            let a = OrchestrationAction::new(AgentId::InterSlice, raw.try_into().unwrap());
            prop_assert!(a.is_feasible());
            prop_assert!(a.floors_rbg(r).iter().sum::<usize>() <= r);
        }

        #[test]
        fn state_features_in_unit_range(xs in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let mut s = SuperState::default();
            for (i, sl) in s.slices.iter_mut().enumerate() {
                sl.throughput = xs[i];
                sl.latency = xs[i + 3];
                sl.buffer = xs[i + 6];
            }
            s.fulfillment = xs[9];
            s.healing_scale = xs[10];
            s.fairness = xs[11];
            prop_assert!(s.to_features().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
