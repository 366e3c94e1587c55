//! Inter-slice scheduling: splits the `R` RBGs of a TTI across slices.
//!
//! A policy emits a continuous action `A_n` in `[-1, 1]^S`. The action is
//! turned into a share vector `R * pi .* (A_n + 1) / sum(pi .* (A_n + 1))`
//! and snapped to the nearest admissible RBG combination. With all
//! priorities equal to one this is exactly the nearest-combination mapping
//! of the intent-driven scheduler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SliceKpis;
use crate::sla::{Intent, SliceKind, SliceSla};

pub const DEFAULT_COMBINATION_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RbgCombination(pub Vec<usize>);

impl RbgCombination {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights(pub Vec<f64>);

impl PriorityWeights {
    pub fn uniform(slices: usize) -> Self {
        Self(vec![1.0; slices])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Normalization constants for observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationScales {
    pub throughput_bps: f64,
    pub buffer_bits: f64,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceObservation {
    pub kind: SliceKind,
    pub active: bool,
    /// Normalized intent thresholds `I_v`.
    pub intents: Vec<f64>,
    /// Normalized `[long-term throughput, buffer occupancy, loss, latency]`.
    pub metrics: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterObservation {
    pub slices: Vec<SliceObservation>,
}

impl InterObservation {
    pub fn flatten(&self) -> Vec<f64> {
        self.slices
            .iter()
            .flat_map(|s| s.intents.iter().chain(s.metrics.iter()).copied())
            .collect()
    }

    pub fn active(&self) -> Vec<bool> {
        self.slices.iter().map(|s| s.active).collect()
    }
}

fn unit(x: f64) -> f64 {
    if x.is_finite() {
        x.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn build_observation(
    kpis: &[SliceKpis],
    slas: &[SliceSla],
    scales: &ObservationScales,
) -> Result<InterObservation> {
    if kpis.len() != slas.len() {
        return Err(Error::contract(format!(
            "{} slice KPI sets for {} slices",
            kpis.len(),
            slas.len()
        )));
    }
    let slices = kpis
        .iter()
        .zip(slas)
        .map(|(k, sla)| {
            if k.kind != sla.kind {
                return Err(Error::contract(format!("KPI kind {} for a {} slice", k.kind, sla.kind)));
            }
            let intents = sla
                .kind
                .intents()
                .iter()
                .map(|&i| {
                    let t = sla.threshold(i);
                    unit(match i {
                        Intent::Throughput | Intent::LongTerm | Intent::Percentile => t / scales.throughput_bps,
                        Intent::Latency => t / scales.latency_s,
                        Intent::Loss => t,
                    })
                })
                .collect();
            Ok(SliceObservation {
                kind: sla.kind,
                active: k.active_ues > 0,
                intents,
                metrics: [
                    unit(k.throughput_bps / scales.throughput_bps),
                    unit(k.buffer_bits / scales.buffer_bits),
                    unit(k.loss),
                    unit(k.latency_s / scales.latency_s),
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterObservation { slices })
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of ways to split `r` RBGs over `s` slices.
pub fn combination_count(r: usize, s: usize) -> u128 {
    binomial((r + s - 1) as u128, (s - 1) as u128)
}

/// All length-`s` vectors of nonnegative integers summing to `r`, in
/// ascending lexicographic order.
pub fn enumerate_combinations(r: usize, s: usize, cap: usize) -> Result<Vec<RbgCombination>> {
    if s == 0 {
        return Err(Error::contract("at least one slice is required"));
    }
    let count = combination_count(r, s);
    if count > cap as u128 {
        return Err(Error::TooManyCombinations { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0usize; s];
    fn fill(pos: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<RbgCombination>) {
        let last = current.len() - 1;
        if pos == last {
            current[pos] = left;
            out.push(RbgCombination(current.clone()));
            return;
        }
        for v in 0..=left {
            current[pos] = v;
            fill(pos + 1, left - v, current, out);
        }
    }
    fill(0, r, &mut current, &mut out);
    Ok(out)
}

/// Continuous share target the action maps to.
pub fn action_target(action: &[f64], r: usize, priorities: &PriorityWeights) -> Result<Vec<f64>> {
    if action.len() != priorities.0.len() {
        return Err(Error::contract(format!(
            "action has {} entries for {} priorities",
            action.len(),
            priorities.0.len()
        )));
    }
    if let Some(bad) = action.iter().find(|a| !a.is_finite() || **a < -1.0 || **a > 1.0) {
        return Err(Error::contract(format!("action component {bad} outside [-1, 1]")));
    }
    let weighted: Vec<f64> = action
        .iter()
        .zip(&priorities.0)
        .map(|(a, p)| p * (a + 1.0))
        .collect();
    let denom: f64 = weighted.iter().sum();
    let s = action.len() as f64;
    if denom <= 0.0 {
        // Every slice asked for nothing: fall back to the equal split.
        return Ok(vec![r as f64 / s; action.len()]);
    }
    Ok(weighted.iter().map(|w| r as f64 * w / denom).collect())
}

fn nearest<'a>(
    target: &[f64],
    options: impl Iterator<Item = (usize, &'a RbgCombination)>,
) -> Option<(usize, &'a RbgCombination)> {
    let mut best: Option<(usize, &RbgCombination, f64)> = None;
    for (idx, opt) in options {
        let d: f64 = opt
            .0
            .iter()
            .zip(target)
            .map(|(&c, &t)| (c as f64 - t) * (c as f64 - t))
            .sum();
        // Strict comparison keeps the earliest (lexicographically lowest)
        // option on ties.
        if best.as_ref().is_none_or(|b| d < b.2) {
            best = Some((idx, opt, d));
        }
    }
    best.map(|(i, o, _)| (i, o))
}

/// Maps `action` onto the closest option in Euclidean distance.
///
/// `options` must be the lexicographically ordered output of
/// [`enumerate_combinations`]; ties go to the lowest index.
pub fn map_action(
    action: &[f64],
    r: usize,
    options: &[RbgCombination],
    priorities: &PriorityWeights,
) -> Result<(usize, RbgCombination)> {
    let target = action_target(action, r, priorities)?;
    nearest(&target, options.iter().enumerate())
        .map(|(i, o)| (i, o.clone()))
        .ok_or_else(|| Error::contract("empty option set"))
}

/// Like [`map_action`] but only considers options granting each slice at
/// least `floors[s]` RBGs.
pub fn map_action_with_floors(
    action: &[f64],
    r: usize,
    options: &[RbgCombination],
    priorities: &PriorityWeights,
    floors: &[usize],
) -> Result<(usize, RbgCombination)> {
    if floors.iter().sum::<usize>() > r {
        return Err(Error::contract("RBG floors exceed the budget"));
    }
    let target = action_target(action, r, priorities)?;
    nearest(
        &target,
        options
            .iter()
            .enumerate()
            .filter(|(_, o)| o.0.iter().zip(floors).all(|(c, f)| c >= f)),
    )
    .map(|(i, o)| (i, o.clone()))
    .ok_or_else(|| Error::contract("no option satisfies the RBG floors"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterReward {
    pub total: f64,
    pub per_slice: Vec<f64>,
}

/// Weighted intent penalty of one slice; zero when every intent is met.
pub fn slice_reward(sla: &SliceSla, kpis: &SliceKpis) -> f64 {
    -sla.kind
        .intents()
        .iter()
        .map(|&i| sla.weight(i) * sla.violation(i, kpis.value(i)))
        .sum::<f64>()
}

pub fn inter_reward(kpis: &[SliceKpis], slas: &[SliceSla]) -> Result<InterReward> {
    if kpis.len() != slas.len() {
        return Err(Error::contract("KPI/SLA count mismatch"));
    }
    let mut per_slice = Vec::with_capacity(kpis.len());
    for (k, sla) in kpis.iter().zip(slas) {
        if k.kind != sla.kind {
            return Err(Error::contract("KPI/SLA kind mismatch"));
        }
        per_slice.push(slice_reward(sla, k));
    }
    Ok(InterReward {
        total: per_slice.iter().sum(),
        per_slice,
    })
}

/// Converts desired RBG shares into an action in `[-1, 1]^S` whose
/// unit-priority target is proportional to `shares`.
pub fn shares_to_action(shares: &[f64]) -> Vec<f64> {
    let max = shares.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![-1.0; shares.len()];
    }
    shares.iter().map(|s| (2.0 * s.max(0.0) / max - 1.0).clamp(-1.0, 1.0)).collect()
}

/// Static split: each active slice gets its configured ratio.
pub fn rule_based_policy(observation: &InterObservation, ratio: &[f64]) -> Vec<f64> {
    let shares: Vec<f64> = observation
        .slices
        .iter()
        .zip(ratio)
        .map(|(s, r)| if s.active { *r } else { 0.0 })
        .collect();
    shares_to_action(&shares)
}

/// What a demand-aware policy knows about one slice this TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceDemand {
    pub kind: SliceKind,
    pub active_ues: usize,
    pub backlog_bits: f64,
    /// Windowed offered load.
    pub offered_bps: f64,
    /// Mean bits one RBG carries per TTI for this slice's active UEs.
    pub bits_per_rbg: f64,
    pub kpis: SliceKpis,
}

pub struct InterContext<'a> {
    pub observation: &'a InterObservation,
    pub demand: &'a [SliceDemand],
    pub slas: &'a [SliceSla],
    pub num_rbg: usize,
    pub tti_s: f64,
}

/// Anything that produces `A_n`.
pub trait InterSlicePolicy: Send {
    fn act(&mut self, ctx: &InterContext<'_>) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct RuleBased {
    pub ratio: Vec<f64>,
}

impl InterSlicePolicy for RuleBased {
    fn act(&mut self, ctx: &InterContext<'_>) -> Vec<f64> {
        rule_based_policy(ctx.observation, &self.ratio)
    }
}

/// Demand-driven heuristic that serves latency-critical load first, covers
/// the BE intents, and hands the remainder to throughput slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentAwareParams {
    /// Multiplier on URLLC offered load.
    pub urllc_headroom: f64,
    /// Steps over which URLLC backlog should drain.
    pub urllc_drain_steps: f64,
    pub be_headroom: f64,
    pub embb_drain_steps: f64,
}

impl Default for IntentAwareParams {
    fn default() -> Self {
        Self {
            urllc_headroom: 1.6,
            urllc_drain_steps: 4.0,
            be_headroom: 1.2,
            embb_drain_steps: 8.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IntentAware {
    pub params: IntentAwareParams,
}

impl IntentAware {
    /// Desired RBGs per slice, summing to `num_rbg` (or zero if no slice is
    /// active).
    pub fn desired(&self, ctx: &InterContext<'_>) -> Vec<f64> {
        let r = ctx.num_rbg as f64;
        let p = &self.params;
        let need: Vec<f64> = ctx
            .demand
            .iter()
            .zip(ctx.slas)
            .map(|(d, sla)| {
                if d.active_ues == 0 || d.bits_per_rbg <= 0.0 {
                    return 0.0;
                }
                let per_tti = |rate: f64| rate * ctx.tti_s / d.bits_per_rbg;
                match d.kind {
                    SliceKind::Urllc => {
                        per_tti(d.offered_bps * p.urllc_headroom)
                            + d.backlog_bits / (d.bits_per_rbg * p.urllc_drain_steps)
                    }
                    SliceKind::Be => {
                        let intent = sla.g_req_bps.max(sla.f_req_bps) * d.active_ues as f64;
                        per_tti(d.offered_bps.min(intent) * p.be_headroom)
                    }
                    SliceKind::Embb => {
                        per_tti(d.offered_bps) + d.backlog_bits / (d.bits_per_rbg * p.embb_drain_steps)
                    }
                }
            })
            .collect();

        let mut grant = vec![0.0; need.len()];
        let mut left = r;
        for kind in [SliceKind::Urllc, SliceKind::Be, SliceKind::Embb] {
            for (i, d) in ctx.demand.iter().enumerate() {
                if d.kind == kind {
                    let g = need[i].min(left);
                    grant[i] += g;
                    left -= g;
                }
            }
        }
        if left > 1e-12 {
            // Spread leftovers by backlog so nothing idles while data waits.
            let backlog: Vec<f64> = ctx
                .demand
                .iter()
                .map(|d| if d.active_ues > 0 { d.backlog_bits.max(0.0) } else { 0.0 })
                .collect();
            let total: f64 = backlog.iter().sum();
            if total > 0.0 {
                for (g, b) in grant.iter_mut().zip(&backlog) {
                    *g += left * b / total;
                }
            } else {
                let active: Vec<bool> = ctx.demand.iter().map(|d| d.active_ues > 0).collect();
                let n = active.iter().filter(|a| **a).count().max(1) as f64;
                for (g, a) in grant.iter_mut().zip(&active) {
                    if *a {
                        *g += left / n;
                    }
                }
            }
        }
        grant
    }
}

impl InterSlicePolicy for IntentAware {
    fn act(&mut self, ctx: &InterContext<'_>) -> Vec<f64> {
        shares_to_action(&self.desired(ctx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn combination_counts() {
        assert_eq!(enumerate_combinations(3, 3, 1000).unwrap().len(), 10);
        assert_eq!(
            enumerate_combinations(5, 1, 10).unwrap(),
            vec![RbgCombination(vec![5])]
        );
        assert_eq!(
            enumerate_combinations(0, 3, 10).unwrap(),
            vec![RbgCombination(vec![0, 0, 0])]
        );
        let all = enumerate_combinations(16, 3, 1000).unwrap();
        assert_eq!(all.len() as u128, combination_count(16, 3));
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert!(all.iter().all(|c| c.total() == 16));
    }

    #[test]
    fn combination_cap_is_enforced() {
        let err = enumerate_combinations(100, 8, 1000).unwrap_err();
        assert!(matches!(err, Error::TooManyCombinations { cap: 1000, .. }));
    }

    fn map(a: &[f64], r: usize) -> RbgCombination {
        let opts = enumerate_combinations(r, a.len(), 10_000).unwrap();
        map_action(a, r, &opts, &PriorityWeights::uniform(a.len())).unwrap().1
    }

    #[test]
    fn mapping_examples() {
        assert_eq!(map(&[1.0, -1.0, -1.0], 3).0, vec![3, 0, 0]);
        assert_eq!(map(&[0.0, 0.0, 0.0], 3).0, vec![1, 1, 1]);
        assert_eq!(map(&[1.0, 1.0, -1.0], 3).0, vec![1, 2, 0]);
    }

    #[test]
    fn all_minus_one_falls_back_to_equal_split() {
        assert_eq!(map(&[-1.0, -1.0, -1.0], 6).0, vec![2, 2, 2]);
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let opts = enumerate_combinations(3, 2, 100).unwrap();
        let p = PriorityWeights::uniform(2);
        assert!(map_action(&[1.5, 0.0], 3, &opts, &p).is_err());
        assert!(map_action(&[f64::NAN, 0.0], 3, &opts, &p).is_err());
        assert!(map_action(&[0.0], 3, &opts, &p).is_err());
    }

    #[test]
    fn floors_restrict_the_option_set() {
        let opts = enumerate_combinations(6, 3, 100).unwrap();
        let p = PriorityWeights::uniform(3);
        let (_, c) = map_action_with_floors(&[1.0, -1.0, -1.0], 6, &opts, &p, &[0, 2, 1]).unwrap();
        assert_eq!(c.0, vec![3, 2, 1]);
        assert!(map_action_with_floors(&[0.0; 3], 6, &opts, &p, &[3, 3, 1]).is_err());
    }

    #[test]
    fn rule_based_round_trips_ratio() {
        let obs = |active: [bool; 3]| InterObservation {
            slices: active
                .iter()
                .map(|&a| SliceObservation {
                    kind: SliceKind::Embb,
                    active: a,
                    intents: vec![],
                    metrics: [0.0; 4],
                })
                .collect(),
        };
        let a = rule_based_policy(&obs([true; 3]), &[2.0, 2.0, 1.0]);
        assert_eq!(map(&a, 5).0, vec![2, 2, 1]);
        let a = rule_based_policy(&obs([true; 3]), &[1.0, 1.0, 1.0]);
        assert_eq!(map(&a, 6).0, vec![2, 2, 2]);
        let a = rule_based_policy(&obs([false, true, false]), &[2.0, 2.0, 1.0]);
        assert_eq!(map(&a, 5).0, vec![0, 5, 0]);
    }

    fn kpis(kind: SliceKind) -> SliceKpis {
        SliceKpis {
            throughput_bps: 200e6,
            latency_s: 1e-3,
            loss: 0.0,
            long_term_bps: 20e6,
            percentile_bps: 5e6,
            ..SliceKpis::empty(kind)
        }
    }

    #[test]
    fn reward_zero_when_compliant() {
        let slas = [SliceSla::embb(), SliceSla::urllc(), SliceSla::be()];
        let k = [kpis(SliceKind::Embb), kpis(SliceKind::Urllc), kpis(SliceKind::Be)];
        let rw = inter_reward(&k, &slas).unwrap();
        assert_eq!(rw.total, 0.0);
        assert!(rw.per_slice.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn reward_fixture_values() {
        let sla = SliceSla::embb();
        let mut k = kpis(SliceKind::Embb);
        k.throughput_bps = 75e6;
        assert!((slice_reward(&sla, &k) + 0.5).abs() <= 1e-12);

        let mut k = kpis(SliceKind::Embb);
        k.latency_s = 60e-3;
        assert!((slice_reward(&sla, &k) + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn observation_layout() {
        let slas = [SliceSla::embb(), SliceSla::urllc(), SliceSla::be()];
        let k = [
            SliceKpis::empty(SliceKind::Embb),
            SliceKpis::empty(SliceKind::Urllc),
            SliceKpis::empty(SliceKind::Be),
        ];
        let scales = ObservationScales {
            throughput_bps: 1e9,
            buffer_bits: 2e7,
            latency_s: 0.1,
        };
        let obs = build_observation(&k, &slas, &scales).unwrap();
        assert_eq!(obs.slices[0].intents.len() + 4, 7);
        assert_eq!(obs.slices[1].intents.len() + 4, 7);
        assert_eq!(obs.slices[2].intents.len(), 2);
        assert!(obs.slices.iter().all(|s| s.metrics == [0.0; 4]));
        assert_eq!(obs.flatten().len(), 7 + 7 + 6);
        assert!(build_observation(&k[..2], &slas, &scales).is_err());
    }

    proptest! {
        #[test]
        fn priority_scaling_keeps_choice(
            a in proptest::collection::vec(-1.0f64..=1.0, 3),
            pri in proptest::collection::vec(0.2f64..3.0, 3),
            scale in 0.1f64..10.0,
        ) {
            let opts = enumerate_combinations(12, 3, 1000).unwrap();
            let p = PriorityWeights(pri.clone());
            let q = PriorityWeights(pri.iter().map(|x| x * scale).collect());
            let (i, _) = map_action(&a, 12, &opts, &p).unwrap();
            let (j, _) = map_action(&a, 12, &opts, &q).unwrap();
            // Scaling can perturb the last ulp of the target, which only
            // matters on exact ties.
            let ti = action_target(&a, 12, &p).unwrap();
            let d = |k: usize| opts[k].0.iter().zip(&ti).map(|(&c, &t)| (c as f64 - t).powi(2)).sum::<f64>();
            prop_assert!(i == j || (d(i) - d(j)).abs() < 1e-9);
        }
    }
}
