//! Simulation harness: the per-TTI loop wiring channel, traffic, the
//! controllers and the orchestrator together, plus scenario sweeps, CSV
//! export and demonstration collection.

pub mod config;
pub mod engine;
pub mod output;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ControllerKind, EventKind, OrchestrationParams, RunConfig, ScenarioEvent, SliceSetup, TraceOptions};
pub use engine::{load_orchestrator, run_episode, Simulator, StepRecord, Trace};
pub use output::{recovery_offset, summarize, write_run, RunSummary, SliceSummary, CSV_VERSION_LINE, RECOVERY_HOLD};

use crate::error::{Error, Result};
use crate::hdm::dataset::{DatasetHeader, Episode, OfflineDataset};
use crate::hdm::ScriptedOracle;
use crate::inter_slice::{IntentAware, RuleBased};
use crate::rng::{stream, Stream};
use crate::sla::SliceKind;

pub const SCENARIO_IDS: [&str; 4] = ["a", "b", "c", "d"];

/// One configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPoint {
    pub label: String,
    /// Value of the swept parameter.
    pub value: f64,
    pub config: RunConfig,
}

fn with_urllc_surge(mut c: RunConfig) -> RunConfig {
    c.steps = 1500;
    c.events.push(ScenarioEvent {
        step: 500,
        kind: EventKind::ScaleArrivals {
            slice: SliceKind::Urllc,
            factor: 2.0,
        },
    });
    c
}

/// Sweep points of a scenario, derived from `base`.
///
/// * `a`: URLLC UE count 10, 20, 30.
/// * `b`: eMBB per-UE offered rate 10 to 40 Mbps.
/// * `c`: the `b` sweep, read for the BE percentile throughput.
/// * `d`: URLLC arrival rate doubles at step 500 of 1500.
pub fn scenario_points(id: &str, base: &RunConfig) -> Result<Vec<ScenarioPoint>> {
    let mut base = base.clone();
    base.scenario = Some(id.to_string());
    let set_slice = |c: &mut RunConfig, kind: SliceKind, f: &dyn Fn(&mut SliceSetup)| -> Result<()> {
        let i = c
            .slice_index(kind)
            .ok_or_else(|| Error::Config(format!("scenario {id} needs a {kind} slice")))?;
        f(&mut c.slices[i]);
        c.sync_counts();
        Ok(())
    };
    match id {
        "a" => [10usize, 20, 30]
            .into_iter()
            .map(|n| {
                let mut c = base.clone();
                set_slice(&mut c, SliceKind::Urllc, &|s| s.ues = n)?;
                Ok(ScenarioPoint {
                    label: format!("urllc_ues={n}"),
                    value: n as f64,
                    config: c,
                })
            })
            .collect(),
        "b" | "c" => [10e6, 20e6, 30e6, 40e6]
            .into_iter()
            .map(|rate| {
                let mut c = base.clone();
                set_slice(&mut c, SliceKind::Embb, &|s| s.traffic.mean_rate_bps = rate)?;
                Ok(ScenarioPoint {
                    label: format!("embb_rate_mbps={}", rate / 1e6),
                    value: rate,
                    config: c,
                })
            })
            .collect(),
        "d" => {
            let c = with_urllc_surge(base);
            c.slice_index(SliceKind::Urllc)
                .ok_or_else(|| Error::config("scenario d needs a URLLC slice"))?;
            Ok(vec![ScenarioPoint {
                label: "urllc_x2_at_500".into(),
                value: 2.0,
                config: c,
            }])
        }
        other => Err(Error::UnknownScenario(other.to_string())),
    }
}

/// Primary metric of a scenario, as a long-format metric name.
pub fn scenario_metric(id: &str) -> &'static str {
    match id {
        "a" => "urllc_latency_s",
        "b" => "embb_throughput_bps",
        "c" => "be_percentile_bps",
        _ => "recovery_steps",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub point: String,
    pub value: f64,
    pub controller: ControllerKind,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Runs every (point, controller, seed) replica in parallel; rows come back
/// in that nested order regardless of thread scheduling.
pub fn run_scenario(id: &str, base: &RunConfig, controllers: &[ControllerKind]) -> Result<Vec<ResultRow>> {
    let points = scenario_points(id, base)?;
    let jobs: Vec<(&ScenarioPoint, ControllerKind, u64)> = points
        .iter()
        .flat_map(|p| {
            controllers
                .iter()
                .flat_map(move |&c| p.config.seeds.iter().map(move |&s| (p, c, s)))
        })
        .collect();
    jobs.into_par_iter()
        .map(|(p, c, seed)| {
            let mut cfg = p.config.clone();
            cfg.controller = c;
            let trace = run_episode(&cfg, seed)?;
            Ok(ResultRow {
                scenario: id.to_string(),
                point: p.label.clone(),
                value: p.value,
                controller: c,
                seed,
                summary: summarize(&cfg, seed, &trace),
            })
        })
        .collect()
}

/// Long-format results: one line per (row, metric).
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_VERSION_LINE}")?;
    writeln!(f, "scenario,point,value,controller,seed,metric,metric_value")?;
    for r in rows {
        for m in ["urllc_latency_s", "embb_throughput_bps", "be_percentile_bps", "reward_mean", "recovery_steps"] {
            let v = output::metric_value(&r.summary, m).map(|x| format!("{x}")).unwrap_or_default();
            writeln!(f, "{},{},{},{},{},{},{}", r.scenario, r.point, r.value, r.controller, r.seed, m, v)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Demonstration episodes labelled by the scripted orchestration policy.
///
/// Each episode randomizes the base inter-slice policy, injects one or two
/// load surges and up to two operator intents so that both drift- and
/// goal-triggered decisions occur.
pub fn generate_offline_dataset(base: &RunConfig, episodes: usize, steps: u64, seed: u64) -> Result<OfflineDataset> {
    const INTENTS: [&str; 8] = [
        "URLLC latency <= 1.5 ms",
        "URLLC loss <= 0.5%",
        "increase eMBB throughput by 10%",
        "eMBB latency <= 10 ms",
        "BE percentile >= 1.5 Mbps",
        "reduce URLLC latency by 20%",
        "eMBB throughput >= 120 Mbps",
        "increase BE long-term by 20%",
    ];
    let eps: Vec<Episode> = (0..episodes)
        .into_par_iter()
        .map(|id| {
            let mut rng = stream(seed.wrapping_add(id as u64), Stream::Scenario);
            let ep_seed = rng.random::<u64>();
            let mut cfg = base.clone();
            cfg.controller = ControllerKind::HdmAgentic;
            cfg.steps = steps;
            cfg.events.clear();
            cfg.traces = TraceOptions::default();
            let lo = cfg.warmup + 20;
            let span = steps.saturating_sub(lo + 50).max(1);
            for _ in 0..rng.random_range(1..=2) {
                let kinds: Vec<SliceKind> = cfg.slices.iter().map(|s| s.kind).collect();
                let slice = kinds[rng.random_range(0..kinds.len())];
                cfg.events.push(ScenarioEvent {
                    step: lo + rng.random_range(0..span),
                    kind: EventKind::ScaleArrivals {
                        slice,
                        factor: rng.random_range(1.5..2.6),
                    },
                });
            }
            for _ in 0..rng.random_range(0..=2) {
                cfg.events.push(ScenarioEvent {
                    step: lo + rng.random_range(0..span),
                    kind: EventKind::Intent {
                        text: INTENTS[rng.random_range(0..INTENTS.len())].to_string(),
                    },
                });
            }
            cfg.events.sort_by_key(|e| e.step);
            let present: Vec<SliceKind> = cfg.slices.iter().map(|s| s.kind).collect();
            cfg.events.retain(|e| match &e.kind {
                EventKind::Intent { text } => crate::intent::parse_intent(text)
                    .map(|g| present.contains(&g.slice))
                    .unwrap_or(false),
                _ => true,
            });
            let rule = rng.random_bool(0.3);
            let mut sim = Simulator::with_orchestrator(cfg.clone(), ep_seed, Some(Box::new(ScriptedOracle)))?;
            if rule {
                sim.set_inter_policy(Box::new(RuleBased {
                    ratio: cfg.rule_ratio.clone(),
                }));
            } else {
                sim.set_inter_policy(Box::new(IntentAware {
                    params: cfg.intent_aware.clone(),
                }));
            }
            sim.record_decisions(id);
            sim.run()?;
            Ok(Episode {
                id,
                seed: ep_seed,
                steps,
                records: sim.take_decisions(),
            })
        })
        .collect::<Result<_>>()?;
    let ds = OfflineDataset {
        header: DatasetHeader::new(episodes, seed),
        episodes: eps,
    };
    ds.validate()?;
    Ok(ds)
}
