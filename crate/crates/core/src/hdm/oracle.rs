//! Scripted event-triggered orchestration policy used to label the offline
//! dataset, and the goal-conditioned reward it is judged by.

use super::agent::{Decision, Orchestrator};
use super::{AgentId, OrchestrationAction, SuperState, NUM_SLICES, THETA_DIM, THETA_FAIRNESS, THETA_HEALING};
use crate::error::Result;
use crate::intent::ValidatedGoal;
use crate::metrics::SliceKpis;
use crate::sla::{Intent, SliceKind};

/// `+1` when the goal KPI of the goal slice lies in the target region,
/// otherwise minus the normalized residual.
pub fn orchestration_reward(goal: &ValidatedGoal, next: &[SliceKpis]) -> f64 {
    let Some(k) = next.iter().find(|k| k.kind == goal.region.slice) else {
        return -1.0;
    };
    let v = k.value(goal.region.kpi);
    if goal.region.contains(v) {
        1.0
    } else {
        -goal.region.residual(v)
    }
}

/// Rule table:
///
/// | trigger | condition | agent | θ |
/// |---|---|---|---|
/// | goal | loss KPI | self-healing | scale `0.5 + 0.5 v` |
/// | goal | eMBB latency | intra-slice | fairness 0.25 |
/// | goal | any other | inter-slice | floor for the goal slice |
/// | drift | URLLC worst, last action self-healing | inter-slice | URLLC floor |
/// | drift | URLLC worst | self-healing | scale `0.4 + v` |
/// | drift | eMBB worst, fairness > 0.05 | intra-slice | fairness 0 |
/// | drift | eMBB worst | inter-slice | eMBB floor |
/// | drift | BE worst | inter-slice | BE floor |
///
/// `v` is the slice's primary-intent violation. A floor is the slice's
/// current share plus `0.1 + 0.5 v`, capped per slice.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedOracle;

const FLOOR_CAP: [f64; NUM_SLICES] = [0.5, 0.5, 0.3];

fn floor_for(state: &SuperState, kind: SliceKind) -> [f64; THETA_DIM] {
    let s = state.slice(kind);
    let mut t = [0.0; THETA_DIM];
    t[kind.index()] = (s.share + 0.1 + 0.5 * s.violation).min(FLOOR_CAP[kind.index()]);
    t
}

fn knob(slot: usize, value: f64) -> [f64; THETA_DIM] {
    let mut t = [0.0; THETA_DIM];
    t[slot] = value.clamp(0.0, 1.0);
    t
}

impl ScriptedOracle {
    pub fn on_goal(&self, state: &SuperState, goal: &ValidatedGoal) -> OrchestrationAction {
        let slice = goal.goal.slice;
        let v = state.slice(slice).violation;
        match (slice, goal.goal.kpi) {
            (_, Intent::Loss) => OrchestrationAction::new(AgentId::SelfHealing, knob(THETA_HEALING, 0.5 + 0.5 * v)),
            (SliceKind::Embb, Intent::Latency) => {
                OrchestrationAction::new(AgentId::IntraSlice, knob(THETA_FAIRNESS, 0.25))
            }
            _ => OrchestrationAction::new(AgentId::InterSlice, floor_for(state, slice)),
        }
    }

    /// Slice with the largest persistent violation (lowest index on ties);
    /// falls back to the largest violation overall.
    pub fn worst_slice(state: &SuperState) -> SliceKind {
        let pick = |persistent_only: bool| {
            let mut best: Option<(SliceKind, f64)> = None;
            for kind in SliceKind::ALL {
                let s = state.slice(kind);
                if persistent_only && !s.persistent {
                    continue;
                }
                if best.is_none_or(|(_, v)| s.violation > v) {
                    best = Some((kind, s.violation));
                }
            }
            best.map(|b| b.0)
        };
        pick(true).or_else(|| pick(false)).unwrap_or(SliceKind::Urllc)
    }

    pub fn on_drift(&self, state: &SuperState) -> OrchestrationAction {
        let kind = Self::worst_slice(state);
        let v = state.slice(kind).violation;
        match kind {
            SliceKind::Urllc if state.last_agent() == Some(AgentId::SelfHealing) => {
                OrchestrationAction::new(AgentId::InterSlice, floor_for(state, kind))
            }
            SliceKind::Urllc => OrchestrationAction::new(AgentId::SelfHealing, knob(THETA_HEALING, 0.4 + v)),
            SliceKind::Embb if state.fairness > 0.05 => {
                OrchestrationAction::new(AgentId::IntraSlice, knob(THETA_FAIRNESS, 0.0))
            }
            _ => OrchestrationAction::new(AgentId::InterSlice, floor_for(state, kind)),
        }
    }
}

impl Orchestrator for ScriptedOracle {
    fn name(&self) -> &str {
        "scripted-oracle"
    }

    fn decide(&mut self, d: &Decision<'_>) -> Result<OrchestrationAction> {
        Ok(match d.goal {
            Some(g) if d.new_goal => self.on_goal(d.state, g),
            _ => self.on_drift(d.state),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{parse_intent, validate_goal, Context, ValidationLimits};
    use crate::sla::SliceSla;

    fn goal(text: &str) -> ValidatedGoal {
        let slas = [SliceSla::embb(), SliceSla::urllc(), SliceSla::be()];
        let ctx = Context {
            rules: vec![],
            dynamic: vec![],
            stale: true,
        };
        validate_goal(&parse_intent(text).unwrap(), &slas, &ctx, &ValidationLimits::default()).unwrap()
    }

    fn urllc(latency: f64) -> Vec<SliceKpis> {
        vec![SliceKpis {
            latency_s: latency,
            ..SliceKpis::empty(SliceKind::Urllc)
        }]
    }

    #[test]
    fn reward_examples() {
        let g = goal("URLLC latency <= 2 ms");
        assert_eq!(orchestration_reward(&g, &urllc(2e-3)), 1.0);
        assert!((orchestration_reward(&g, &urllc(4e-3)) + 0.5).abs() < 1e-12);
        assert_eq!(orchestration_reward(&g, &urllc(1e-3)), 1.0);
    }

    fn drifting_urllc() -> SuperState {
        let mut s = SuperState::default();
        s.slices[1].violation = 0.4;
        s.slices[1].persistent = true;
        s.slices[1].share = 0.2;
        s.drift = true;
        s
    }

    #[test]
    fn urllc_drift_heals_then_escalates() {
        let o = ScriptedOracle;
        let mut s = drifting_urllc();
        let a = o.on_drift(&s);
        assert_eq!(a.agent, AgentId::SelfHealing);
        assert!((a.theta[THETA_HEALING] - 0.8).abs() < 1e-12);
        s.history.push(AgentId::SelfHealing);
        let b = o.on_drift(&s);
        assert_eq!(b.agent, AgentId::InterSlice);
        assert!((b.theta[1] - 0.5).abs() < 1e-12);
        assert!(b.is_feasible());
    }

    #[test]
    fn goals_route_by_kpi() {
        let o = ScriptedOracle;
        let s = SuperState::default();
        assert_eq!(o.on_goal(&s, &goal("URLLC loss <= 1%")).agent, AgentId::SelfHealing);
        assert_eq!(o.on_goal(&s, &goal("eMBB latency <= 10 ms")).agent, AgentId::IntraSlice);
        let a = o.on_goal(&s, &goal("increase eMBB throughput by 10%"));
        assert_eq!(a.agent, AgentId::InterSlice);
        assert!(a.theta[0] > 0.0);
    }

    #[test]
    fn embb_drift_lowers_fairness_first() {
        let o = ScriptedOracle;
        let mut s = SuperState::default();
        s.slices[0].violation = 0.3;
        s.slices[0].persistent = true;
        s.fairness = 0.5;
        assert_eq!(o.on_drift(&s).agent, AgentId::IntraSlice);
        s.fairness = 0.0;
        assert_eq!(o.on_drift(&s).agent, AgentId::InterSlice);
    }
}
