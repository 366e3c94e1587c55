use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healing::HealingParams;
use crate::inter_slice::IntentAwareParams;
use crate::metrics::DEFAULT_WINDOW;
use crate::sla::{SliceKind, SliceSla};
use crate::topology::{ChannelParams, NetworkConfig};
use crate::traffic::{TrafficProfile, DEFAULT_BUFFER_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    /// Static RBG ratio, no healing, no orchestrator.
    RuleBased,
    /// Demand-aware inter-slice policy with proportional healing.
    ProportionalHealing,
    /// `hdm-agentic` with healing disabled.
    HrlNoHealing,
    HdmAgentic,
    /// `hdm-agentic` with the windowed sequence regressor as orchestrator.
    DtStub,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::RuleBased,
        ControllerKind::ProportionalHealing,
        ControllerKind::HrlNoHealing,
        ControllerKind::HdmAgentic,
        ControllerKind::DtStub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::RuleBased => "rule-based",
            ControllerKind::ProportionalHealing => "proportional-healing",
            ControllerKind::HrlNoHealing => "hrl-no-healing",
            ControllerKind::HdmAgentic => "hdm-agentic",
            ControllerKind::DtStub => "dt-stub",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    pub fn healing(self) -> bool {
        matches!(
            self,
            ControllerKind::ProportionalHealing | ControllerKind::HdmAgentic | ControllerKind::DtStub
        )
    }

    pub fn orchestrated(self) -> bool {
        matches!(
            self,
            ControllerKind::HrlNoHealing | ControllerKind::HdmAgentic | ControllerKind::DtStub
        )
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSetup {
    pub kind: SliceKind,
    pub ues: usize,
    pub sla: SliceSla,
    pub traffic: TrafficProfile,
}

impl SliceSetup {
    pub fn default_for(kind: SliceKind) -> Self {
        Self {
            kind,
            ues: 10,
            sla: SliceSla::for_kind(kind),
            traffic: TrafficProfile::for_kind(kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum EventKind {
    /// Multiply the slice's per-UE arrival rate.
    ScaleArrivals { slice: SliceKind, factor: f64 },
    /// Operator intent in the templated grammar.
    Intent { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestrationParams {
    /// Consecutive violating steps before a slice counts as drifting.
    pub drift_persistence: u32,
    /// Steps after a drift-triggered action during which drift is not
    /// re-raised.
    pub drift_cooldown: u64,
    /// Steps an orchestration action's RBG floors or healing gain stay in
    /// force.
    pub action_hold: u64,
    /// Healing gain multiplier is `1 + healing_gain_max * θ`.
    pub healing_gain_max: f64,
    /// EWMA horizon of the load and loss forecasts, in steps.
    pub forecast_horizon: f64,
    /// Initial eMBB fairness knob.
    pub fairness: f64,
    pub max_increase_pct: f64,
}

impl Default for OrchestrationParams {
    fn default() -> Self {
        Self {
            drift_persistence: 5,
            drift_cooldown: 25,
            action_hold: 200,
            healing_gain_max: 4.0,
            forecast_horizon: 10.0,
            fairness: 0.0,
            max_increase_pct: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    /// Per-UE KPI rows.
    pub ue: bool,
    /// Per-UE link rows.
    pub links: bool,
    /// Per-micro-step scheduling rows.
    pub micro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub channel: ChannelParams,
    pub slices: Vec<SliceSetup>,
    pub controller: ControllerKind,
    pub scenario: Option<String>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    /// Leading steps excluded from summary means.
    pub warmup: u64,
    pub window: usize,
    pub buffer_bits: f64,
    /// Static shares of the rule-based controller, in slice order.
    pub rule_ratio: Vec<f64>,
    pub intent_aware: IntentAwareParams,
    pub healing: HealingParams,
    pub orchestration: OrchestrationParams,
    pub events: Vec<ScenarioEvent>,
    /// Trained orchestrator (HDM or sequence-regressor checkpoint). Without
    /// one, orchestrated controllers fall back to the scripted oracle.
    pub orchestrator_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub traces: TraceOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let slices: Vec<SliceSetup> = [SliceKind::Embb, SliceKind::Urllc, SliceKind::Be]
            .into_iter()
            .map(SliceSetup::default_for)
            .collect();
        let network = NetworkConfig {
            num_ue: slices.iter().map(|s| s.ues).sum(),
            num_slices: slices.len(),
            ..NetworkConfig::default()
        };
        Self {
            network,
            channel: ChannelParams::default(),
            slices,
            controller: ControllerKind::HdmAgentic,
            scenario: None,
            seeds: (0..10).collect(),
            steps: 1000,
            warmup: 100,
            window: DEFAULT_WINDOW,
            buffer_bits: DEFAULT_BUFFER_BITS,
            rule_ratio: vec![1.0, 1.0, 1.0],
            intent_aware: IntentAwareParams::default(),
            healing: HealingParams::default(),
            orchestration: OrchestrationParams::default(),
            events: vec![],
            orchestrator_path: None,
            output_dir: None,
            traces: TraceOptions::default(),
        }
    }
}

impl RunConfig {
    /// Keep the network's UE and slice counts in step with the slice list.
    pub fn sync_counts(&mut self) {
        self.network.num_ue = self.slices.iter().map(|s| s.ues).sum();
        self.network.num_slices = self.slices.len();
    }

    pub fn slice_index(&self, kind: SliceKind) -> Option<usize> {
        self.slices.iter().position(|s| s.kind == kind)
    }

    /// Every problem found, reported together.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = vec![];
        if let Err(e) = self.network.validate() {
            errs.push(e.to_string());
        }
        if let Err(e) = self.channel.validate() {
            errs.push(e.to_string());
        }
        if self.slices.is_empty() {
            errs.push("at least one slice is required".into());
        }
        for (i, s) in self.slices.iter().enumerate() {
            if self.slices[..i].iter().any(|o| o.kind == s.kind) {
                errs.push(format!("slice {} listed twice", s.kind));
            }
            if s.sla.kind != s.kind || s.traffic.kind != s.kind {
                errs.push(format!("slice {}: SLA/traffic kind mismatch", s.kind));
            }
            if let Err(e) = s.sla.validate() {
                errs.push(format!("slice {}: {e}", s.kind));
            }
            if let Err(e) = s.traffic.validate() {
                errs.push(format!("slice {}: {e}", s.kind));
            }
        }
        let ues: usize = self.slices.iter().map(|s| s.ues).sum();
        if ues != self.network.num_ue {
            errs.push(format!("network.num_ue is {} but the slices hold {ues} UEs", self.network.num_ue));
        }
        if self.network.num_slices != self.slices.len() {
            errs.push(format!(
                "network.num_slices is {} but {} slices are configured",
                self.network.num_slices,
                self.slices.len()
            ));
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        if self.steps == 0 {
            errs.push("steps must be positive".into());
        }
        if self.window == 0 {
            errs.push("window must be positive".into());
        }
        if !(self.buffer_bits > 0.0) {
            errs.push("buffer_bits must be positive".into());
        }
        if self.rule_ratio.len() != self.slices.len() || self.rule_ratio.iter().any(|r| !(*r >= 0.0)) {
            errs.push("rule_ratio needs one non-negative share per slice".into());
        }
        if self.healing.cadence == 0 {
            errs.push("healing cadence must be positive".into());
        }
        for e in &self.events {
            match &e.kind {
                EventKind::ScaleArrivals { slice, factor } => {
                    if self.slice_index(*slice).is_none() {
                        errs.push(format!("event at step {} references missing slice {slice}", e.step));
                    }
                    if !(*factor >= 0.0) || !factor.is_finite() {
                        errs.push(format!("event at step {}: factor must be finite and >= 0", e.step));
                    }
                }
                EventKind::Intent { text } => {
                    if let Err(err) = crate::intent::parse_intent(text) {
                        errs.push(format!("event at step {}: {err}", e.step));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn all_problems_are_reported() {
        let mut c = RunConfig::default();
        c.seeds.clear();
        c.rule_ratio = vec![1.0];
        c.events.push(ScenarioEvent {
            step: 3,
            kind: EventKind::Intent { text: "XR jitter <= 1 ms".into() },
        });
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("seeds") && msg.contains("rule_ratio") && msg.contains("step 3"), "{msg}");
    }

    #[test]
    fn controller_names_round_trip() {
        for c in ControllerKind::ALL {
            assert_eq!(ControllerKind::parse(c.as_str()), Some(c));
        }
    }

    #[test]
    fn config_json_round_trip() {
        let mut c = RunConfig::default();
        c.events.push(ScenarioEvent {
            step: 500,
            kind: EventKind::ScaleArrivals {
                slice: SliceKind::Urllc,
                factor: 2.0,
            },
        });
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
