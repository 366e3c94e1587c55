//! Slice SLA/intent model and compliance evaluation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SliceKpis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SliceKind {
    #[serde(rename = "eMBB")]
    Embb,
    #[serde(rename = "URLLC")]
    Urllc,
    #[serde(rename = "BE")]
    Be,
}

impl SliceKind {
    pub const ALL: [SliceKind; 3] = [SliceKind::Embb, SliceKind::Urllc, SliceKind::Be];

    pub fn as_str(self) -> &'static str {
        match self {
            SliceKind::Embb => "eMBB",
            SliceKind::Urllc => "URLLC",
            SliceKind::Be => "BE",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SliceKind::Embb => 0,
            SliceKind::Urllc => 1,
            SliceKind::Be => 2,
        }
    }

    /// The intents a slice of this kind carries, in observation order.
    pub fn intents(self) -> &'static [Intent] {
        match self {
            SliceKind::Embb | SliceKind::Urllc => &[Intent::Throughput, Intent::Latency, Intent::Loss],
            SliceKind::Be => &[Intent::LongTerm, Intent::Percentile],
        }
    }

    /// The intent the self-healing agent and the drift detector track.
    pub fn primary_intent(self) -> Intent {
        match self {
            SliceKind::Embb => Intent::Throughput,
            SliceKind::Urllc => Intent::Latency,
            SliceKind::Be => Intent::Percentile,
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    /// Served throughput `r >= r_req`.
    Throughput,
    /// Average buffer latency `l <= l_req`.
    Latency,
    /// Packet loss rate `p <= p_req`.
    Loss,
    /// Long-term served throughput `g >= g_req`.
    LongTerm,
    /// Fifth-percentile throughput `f >= f_req`.
    Percentile,
}

impl Intent {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Intent::Throughput | Intent::LongTerm | Intent::Percentile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceSla {
    pub kind: SliceKind,
    pub r_req_bps: f64,
    pub l_req_s: f64,
    pub p_req: f64,
    pub g_req_bps: f64,
    pub f_req_bps: f64,
    pub w_r: f64,
    pub w_l: f64,
    pub w_p: f64,
    pub w_g: f64,
    pub w_f: f64,
    pub l_max_s: f64,
}

impl Default for SliceSla {
    fn default() -> Self {
        Self::embb()
    }
}

impl SliceSla {
    pub fn embb() -> Self {
        Self {
            kind: SliceKind::Embb,
            r_req_bps: 150e6,
            l_req_s: 20e-3,
            p_req: 0.01,
            g_req_bps: 0.0,
            f_req_bps: 0.0,
            w_r: 1.0,
            w_l: 1.0,
            w_p: 1.0,
            w_g: 0.0,
            w_f: 0.0,
            l_max_s: 100e-3,
        }
    }

    pub fn urllc() -> Self {
        Self {
            kind: SliceKind::Urllc,
            r_req_bps: 10e6,
            l_req_s: 2e-3,
            p_req: 0.01,
            ..Self::embb()
        }
    }

    pub fn be() -> Self {
        Self {
            kind: SliceKind::Be,
            r_req_bps: 0.0,
            l_req_s: 0.0,
            p_req: 0.0,
            g_req_bps: 10e6,
            f_req_bps: 1e6,
            w_r: 0.0,
            w_l: 0.0,
            w_p: 0.0,
            w_g: 1.0,
            w_f: 1.0,
            l_max_s: 100e-3,
        }
    }

    pub fn for_kind(kind: SliceKind) -> Self {
        match kind {
            SliceKind::Embb => Self::embb(),
            SliceKind::Urllc => Self::urllc(),
            SliceKind::Be => Self::be(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_r, self.w_l, self.w_p, self.w_g, self.w_f];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config(format!("{}: weights must be >= 0", self.kind)));
        }
        match self.kind {
            SliceKind::Embb | SliceKind::Urllc => {
                if !(self.r_req_bps > 0.0 && self.l_req_s > 0.0) {
                    return Err(Error::config(format!("{}: thresholds must be > 0", self.kind)));
                }
                if !(self.p_req > 0.0 && self.p_req < 1.0) {
                    return Err(Error::config(format!("{}: p_req must lie in (0,1)", self.kind)));
                }
                if !(self.l_max_s > self.l_req_s) {
                    return Err(Error::config(format!("{}: l_max must exceed l_req", self.kind)));
                }
            }
            SliceKind::Be => {
                if !(self.g_req_bps > 0.0 && self.f_req_bps > 0.0) {
                    return Err(Error::config("BE: g_req and f_req must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn threshold(&self, intent: Intent) -> f64 {
        match intent {
            Intent::Throughput => self.r_req_bps,
            Intent::Latency => self.l_req_s,
            Intent::Loss => self.p_req,
            Intent::LongTerm => self.g_req_bps,
            Intent::Percentile => self.f_req_bps,
        }
    }

    pub fn set_threshold(&mut self, intent: Intent, value: f64) {
        match intent {
            Intent::Throughput => self.r_req_bps = value,
            Intent::Latency => self.l_req_s = value,
            Intent::Loss => self.p_req = value,
            Intent::LongTerm => self.g_req_bps = value,
            Intent::Percentile => self.f_req_bps = value,
        }
    }

    pub fn weight(&self, intent: Intent) -> f64 {
        match intent {
            Intent::Throughput => self.w_r,
            Intent::Latency => self.w_l,
            Intent::Loss => self.w_p,
            Intent::LongTerm => self.w_g,
            Intent::Percentile => self.w_f,
        }
    }

    /// Unweighted normalized violation of one intent, in `[0, 1]`.
    ///
    /// Shortfall intents are normalized by their requirement, latency by
    /// `l_max - l_req` and loss by `1 - p_req`.
    pub fn violation(&self, intent: Intent, value: f64) -> f64 {
        let req = self.threshold(intent);
        let v = match intent {
            Intent::Throughput | Intent::LongTerm | Intent::Percentile => {
                if value < req {
                    (req - value) / req
                } else {
                    0.0
                }
            }
            Intent::Latency => {
                if value > req {
                    (value - req) / (self.l_max_s - req)
                } else {
                    0.0
                }
            }
            Intent::Loss => {
                if value > req {
                    (value - req) / (1.0 - req)
                } else {
                    0.0
                }
            }
        };
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentStatus {
    pub intent: Intent,
    pub satisfied: bool,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub kind: SliceKind,
    pub intents: Vec<IntentStatus>,
}

impl ComplianceReport {
    pub fn all_satisfied(&self) -> bool {
        self.intents.iter().all(|s| s.satisfied)
    }

    pub fn status(&self, intent: Intent) -> Option<&IntentStatus> {
        self.intents.iter().find(|s| s.intent == intent)
    }

    pub fn fraction_satisfied(&self) -> f64 {
        if self.intents.is_empty() {
            return 1.0;
        }
        self.intents.iter().filter(|s| s.satisfied).count() as f64 / self.intents.len() as f64
    }
}

pub fn evaluate_compliance(sla: &SliceSla, kpis: &SliceKpis) -> Result<ComplianceReport> {
    if sla.kind != kpis.kind {
        return Err(Error::contract(format!(
            "SLA for {} evaluated against {} KPIs",
            sla.kind, kpis.kind
        )));
    }
    let intents = sla
        .kind
        .intents()
        .iter()
        .map(|&intent| {
            let value = kpis.value(intent);
            let satisfied = if intent.higher_is_better() {
                value >= sla.threshold(intent)
            } else {
                value <= sla.threshold(intent)
            };
            IntentStatus {
                intent,
                satisfied,
                violation: if satisfied { 0.0 } else { sla.violation(intent, value) },
            }
        })
        .collect();
    Ok(ComplianceReport {
        kind: sla.kind,
        intents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kpis(kind: SliceKind, thr: f64, lat: f64, loss: f64) -> SliceKpis {
        SliceKpis {
            kind,
            throughput_bps: thr,
            latency_s: lat,
            loss,
            ..SliceKpis::empty(kind)
        }
    }

    #[test]
    fn urllc_latency_within_target() {
        let sla = SliceSla::urllc();
        let rep = evaluate_compliance(&sla, &kpis(SliceKind::Urllc, 20e6, 1e-3, 0.0)).unwrap();
        let lat = rep.status(Intent::Latency).unwrap();
        assert!(lat.satisfied);
        assert_eq!(lat.violation, 0.0);
    }

    #[test]
    fn embb_boundary_is_inclusive() {
        let sla = SliceSla::embb();
        let rep = evaluate_compliance(&sla, &kpis(SliceKind::Embb, 150e6, 1e-3, 0.0)).unwrap();
        assert!(rep.all_satisfied());
    }

    #[test]
    fn embb_half_throughput_is_half_violation() {
        let sla = SliceSla::embb();
        let rep = evaluate_compliance(&sla, &kpis(SliceKind::Embb, 75e6, 1e-3, 0.0)).unwrap();
        let thr = rep.status(Intent::Throughput).unwrap();
        assert!(!thr.satisfied);
        assert!((thr.violation - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let err = evaluate_compliance(&SliceSla::embb(), &SliceKpis::empty(SliceKind::Be));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn defaults_validate() {
        for k in SliceKind::ALL {
            SliceSla::for_kind(k).validate().unwrap();
        }
        let bad = SliceSla {
            p_req: 1.0,
            ..SliceSla::urllc()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn improving_a_kpi_never_breaks_compliance(
            thr in 0.0f64..400e6, lat in 0.0f64..0.2, loss in 0.0f64..1.0,
            dthr in 0.0f64..100e6, dlat in 0.0f64..0.05, dloss in 0.0f64..0.5,
        ) {
            let sla = SliceSla::embb();
            let before = evaluate_compliance(&sla, &kpis(SliceKind::Embb, thr, lat, loss)).unwrap();
            let after = evaluate_compliance(
                &sla,
                &kpis(SliceKind::Embb, thr + dthr, (lat - dlat).max(0.0), (loss - dloss).max(0.0)),
            ).unwrap();
            for (b, a) in before.intents.iter().zip(&after.intents) {
                prop_assert!(!b.satisfied || a.satisfied);
                prop_assert!(a.violation <= b.violation + 1e-15);
                prop_assert_eq!(b.violation == 0.0, b.satisfied);
            }
        }
    }
}
