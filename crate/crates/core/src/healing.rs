//! Self-healing agent: watches slice-level deviations from the primary
//! intents and nudges the inter-slice priority weights.

use serde::{Deserialize, Serialize};

use crate::inter_slice::{PriorityWeights, RbgCombination};
use crate::metrics::SliceKpis;
use crate::sla::{SliceKind, SliceSla};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HealingParams {
    pub delta_max: f64,
    pub pi_min: f64,
    pub pi_max: f64,
    pub k_p: f64,
    /// Steps between healing decisions.
    pub cadence: u64,
    /// Floor on measured URLLC delay in the reward.
    pub delay_floor_s: f64,
}

impl Default for HealingParams {
    fn default() -> Self {
        Self {
            delta_max: 0.1,
            pi_min: 0.2,
            pi_max: 3.0,
            k_p: 0.5,
            cadence: 10,
            delay_floor_s: 0.1e-3,
        }
    }
}

/// `D_n`, `L_n` and the current allocation.
///
/// Deviations are signed and normalized by the requirement; a negative
/// entry always means the primary intent is violated, whichever direction
/// the KPI improves in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealingState {
    pub deviations: Vec<f64>,
    pub load: f64,
    pub allocation: RbgCombination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDelta {
    pub deltas: Vec<f64>,
    pub bound: f64,
}

/// Signed, normalized margin of the slice's primary intent.
pub fn deviation(sla: &SliceSla, kpis: &SliceKpis) -> f64 {
    let intent = sla.kind.primary_intent();
    let req = sla.threshold(intent);
    let actual = kpis.value(intent);
    let d = if intent.higher_is_better() {
        (actual - req) / req
    } else {
        (req - actual) / req
    };
    if d.is_finite() {
        d.clamp(-10.0, 10.0)
    } else {
        0.0
    }
}

pub fn build_healing_state(
    kpis: &[SliceKpis],
    slas: &[SliceSla],
    allocation: &RbgCombination,
    offered_bits: f64,
    servable_bits: f64,
) -> HealingState {
    let deviations = kpis
        .iter()
        .zip(slas)
        .map(|(k, sla)| if k.active_ues == 0 { 0.0 } else { deviation(sla, k).min(0.0) })
        .collect();
    let load = if offered_bits <= 0.0 || servable_bits <= 0.0 {
        0.0
    } else {
        offered_bits / servable_bits
    };
    HealingState {
        deviations,
        load,
        allocation: allocation.clone(),
    }
}

/// Maps a healing state to weight changes.
pub trait HealingController {
    fn propose(&mut self, state: &HealingState, params: &HealingParams) -> WeightDelta;
}

/// Proportional rule: violated slices gain `k_p * violation`; the total is
/// taken from slices with surplus, pro rata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportional {
    /// Multiplier on `k_p`; the super agent can raise it.
    pub gain: f64,
}

impl Default for Proportional {
    fn default() -> Self {
        Self { gain: 1.0 }
    }
}

impl HealingController for Proportional {
    fn propose(&mut self, state: &HealingState, params: &HealingParams) -> WeightDelta {
        propose_deltas(state, params, self.gain, &[])
    }
}

/// Proportional controller. `surplus` carries the positive margins of the
/// slices (may be empty, in which case nobody donates explicitly and the
/// mean-one renormalization absorbs the change).
pub fn propose_deltas(state: &HealingState, params: &HealingParams, gain: f64, surplus: &[f64]) -> WeightDelta {
    let k = params.k_p * gain;
    let violation: Vec<f64> = state.deviations.iter().map(|d| (-d).max(0.0)).collect();
    let total_violation: f64 = violation.iter().sum();
    let surplus_total: f64 = surplus.iter().map(|s| s.max(0.0)).sum();
    let deltas = violation
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let share = if surplus_total > 0.0 {
                surplus.get(i).copied().unwrap_or(0.0).max(0.0) / surplus_total
            } else {
                0.0
            };
            (k * v - k * total_violation * share).clamp(-params.delta_max, params.delta_max)
        })
        .collect();
    WeightDelta {
        deltas,
        bound: params.delta_max,
    }
}

/// Slice-specific compliance ratio: 1 at the boundary, above 1 when the
/// intent is over-fulfilled.
pub fn healing_reward(kind: SliceKind, kpis: &SliceKpis, sla: &SliceSla, params: &HealingParams) -> f64 {
    match kind {
        SliceKind::Embb => kpis.throughput_bps / sla.r_req_bps,
        SliceKind::Urllc => sla.l_req_s / kpis.latency_s.max(params.delay_floor_s),
        SliceKind::Be => kpis.percentile_bps / sla.f_req_bps,
    }
}

/// `pi <- clip(pi + delta)` followed by a rescale to mean one that keeps
/// every entry inside `[pi_min, pi_max]`.
pub fn apply_weights(priorities: &PriorityWeights, delta: &WeightDelta, params: &HealingParams) -> PriorityWeights {
    let raw: Vec<f64> = priorities
        .0
        .iter()
        .zip(delta.deltas.iter().chain(std::iter::repeat(&0.0)))
        .map(|(p, d)| {
            let d = d.clamp(-delta.bound, delta.bound);
            let v = p + d;
            if v.is_finite() {
                v.clamp(params.pi_min, params.pi_max)
            } else {
                1.0
            }
        })
        .collect();
    PriorityWeights(renormalize(&raw, params.pi_min, params.pi_max))
}

fn clipped_mean(v: &[f64], scale: f64, lo: f64, hi: f64) -> f64 {
    v.iter().map(|x| (x * scale).clamp(lo, hi)).sum::<f64>() / v.len() as f64
}

/// Finds `c` with `mean(clip(c * v)) = 1` by bisection (the clipped mean is
/// nondecreasing in `c`) and returns `clip(c * v)`.
fn renormalize(v: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    if v.is_empty() {
        return vec![];
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if (mean - 1.0).abs() <= 1e-15 {
        return v.to_vec();
    }
    let (mut a, mut b) = (0.0, hi / lo);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if clipped_mean(v, mid, lo, hi) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let c = 0.5 * (a + b);
    v.iter().map(|x| (x * c).clamp(lo, hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inter_slice::{action_target, PriorityWeights};
    use proptest::prelude::*;

    fn kpis(kind: SliceKind) -> SliceKpis {
        SliceKpis {
            active_ues: 10,
            throughput_bps: 200e6,
            latency_s: 1e-3,
            percentile_bps: 2e6,
            ..SliceKpis::empty(kind)
        }
    }

    fn slas() -> [SliceSla; 3] {
        [SliceSla::embb(), SliceSla::urllc(), SliceSla::be()]
    }

    fn ks() -> [SliceKpis; 3] {
        [kpis(SliceKind::Embb), kpis(SliceKind::Urllc), kpis(SliceKind::Be)]
    }

    #[test]
    fn compliant_state_has_zero_deviation() {
        let st = build_healing_state(&ks(), &slas(), &RbgCombination(vec![8, 4, 4]), 1.0, 2.0);
        assert_eq!(st.deviations, vec![0.0; 3]);
        assert_eq!(st.load, 0.5);
    }

    #[test]
    fn urllc_latency_deviation() {
        let mut k = ks();
        k[1].latency_s = 4e-3;
        let st = build_healing_state(&k, &slas(), &RbgCombination(vec![8, 4, 4]), 0.0, 1.0);
        assert!((st.deviations[1] + 1.0).abs() < 1e-12);
        assert_eq!(st.load, 0.0);
    }

    #[test]
    fn no_violation_no_delta() {
        let st = build_healing_state(&ks(), &slas(), &RbgCombination(vec![8, 4, 4]), 1.0, 2.0);
        let d = propose_deltas(&st, &HealingParams::default(), 1.0, &[]);
        assert_eq!(d.deltas, vec![0.0; 3]);
    }

    #[test]
    fn large_proposal_is_clipped() {
        let st = HealingState {
            deviations: vec![0.0, -0.6, 0.0],
            load: 1.0,
            allocation: RbgCombination(vec![8, 4, 4]),
        };
        let d = propose_deltas(&st, &HealingParams::default(), 1.0, &[]);
        assert_eq!(d.deltas, vec![0.0, 0.1, 0.0]);
    }

    #[test]
    fn urllc_violation_raises_urllc_lowers_others() {
        let params = HealingParams::default();
        let st = HealingState {
            deviations: vec![0.0, -0.1, 0.0],
            load: 1.0,
            allocation: RbgCombination(vec![8, 4, 4]),
        };
        let d = propose_deltas(&st, &params, 1.0, &[0.3, 0.0, 0.1]);
        assert!(d.deltas[1] > 0.0);
        assert!(d.deltas[0] < 0.0 && d.deltas[2] < 0.0);
        let pi = apply_weights(&PriorityWeights::uniform(3), &d, &params);
        assert!(pi.0[1] > 1.0 && pi.0[0] < 1.0 && pi.0[2] < 1.0);
        // Without explicit donors, renormalization still lowers the others.
        let d = propose_deltas(&st, &params, 1.0, &[]);
        let pi = apply_weights(&PriorityWeights::uniform(3), &d, &params);
        assert!(pi.0[1] > 1.0 && pi.0[0] < 1.0 && pi.0[2] < 1.0);
    }

    #[test]
    fn reward_examples() {
        let p = HealingParams::default();
        let sla = SliceSla::urllc();
        let mut k = kpis(SliceKind::Urllc);
        k.latency_s = 2e-3;
        assert_eq!(healing_reward(SliceKind::Urllc, &k, &sla, &p), 1.0);
        k.latency_s = 4e-3;
        assert_eq!(healing_reward(SliceKind::Urllc, &k, &sla, &p), 0.5);
        k.latency_s = 0.0;
        assert!((healing_reward(SliceKind::Urllc, &k, &sla, &p) - 20.0).abs() < 1e-9);
        let mut e = kpis(SliceKind::Embb);
        e.throughput_bps = 150e6;
        assert_eq!(healing_reward(SliceKind::Embb, &e, &SliceSla::embb(), &p), 1.0);
        let mut b = kpis(SliceKind::Be);
        b.percentile_bps = 2e6;
        assert_eq!(healing_reward(SliceKind::Be, &b, &SliceSla::be(), &p), 2.0);
    }

    #[test]
    fn apply_examples() {
        let p = HealingParams::default();
        let pi = PriorityWeights::uniform(3);
        let zero = WeightDelta { deltas: vec![0.0; 3], bound: 0.1 };
        assert_eq!(apply_weights(&pi, &zero, &p), pi);

        let d = WeightDelta { deltas: vec![0.1, -0.05, -0.05], bound: 0.1 };
        let out = apply_weights(&pi, &d, &p);
        for (o, e) in out.0.iter().zip([1.1, 0.95, 0.95]) {
            assert!((o - e).abs() < 1e-12);
        }

        let up = WeightDelta { deltas: vec![0.1, -0.1, 0.0], bound: 0.1 };
        let mut w = pi.clone();
        for _ in 0..1000 {
            w = apply_weights(&w, &up, &p);
            assert!(w.0.iter().all(|x| x.is_finite()));
        }
        assert!(w.0[1] <= p.pi_min + 1e-9 || w.0[0] >= 1.0);
    }

    #[test]
    fn urllc_only_violation_never_lowers_urllc_target_share() {
        let params = HealingParams::default();
        let st = HealingState {
            deviations: vec![0.0, -0.4, 0.0],
            load: 1.0,
            allocation: RbgCombination(vec![8, 4, 4]),
        };
        let mut pi = PriorityWeights::uniform(3);
        let action = [0.3, -0.2, 0.1];
        let mut share = action_target(&action, 16, &pi).unwrap()[1];
        for _ in 0..50 {
            let d = propose_deltas(&st, &params, 1.0, &[]);
            pi = apply_weights(&pi, &d, &params);
            let next = action_target(&action, 16, &pi).unwrap()[1];
            assert!(next >= share - 1e-12);
            share = next;
        }
    }

    proptest! {
        #[test]
        fn weights_stay_bounded_with_mean_one(
            start in proptest::collection::vec(0.2f64..3.0, 3),
            steps in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 1..30),
        ) {
            let p = HealingParams::default();
            let mut pi = apply_weights(&PriorityWeights(start), &WeightDelta { deltas: vec![0.0; 3], bound: 0.1 }, &p);
            for s in steps {
                let st = HealingState { deviations: s, load: 1.0, allocation: RbgCombination(vec![1, 1, 1]) };
                let d = propose_deltas(&st, &p, 3.0, &[0.2, 0.1, 0.0]);
                prop_assert!(d.deltas.iter().all(|x| x.abs() <= p.delta_max));
                pi = apply_weights(&pi, &d, &p);
                let mean = pi.0.iter().sum::<f64>() / 3.0;
                prop_assert!((mean - 1.0).abs() < 1e-9);
                prop_assert!(pi.0.iter().all(|x| *x >= p.pi_min - 1e-12 && *x <= p.pi_max + 1e-12));
            }
        }
    }
}
