use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ControllerKind, EventKind, RunConfig};
use super::engine::Trace;
use crate::error::Result;
use crate::sla::SliceKind;

/// First line of every CSV file.
pub const CSV_VERSION_LINE: &str = "# ranslice-csv v1";

/// Consecutive compliant steps required before URLLC counts as recovered.
pub const RECOVERY_HOLD: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub kind: SliceKind,
    pub throughput_mean_bps: f64,
    pub latency_mean_s: f64,
    pub loss_mean: f64,
    pub percentile_mean_bps: f64,
    /// Fraction of post-warm-up steps (with active UEs) meeting every intent.
    pub compliance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub controller: ControllerKind,
    pub scenario: Option<String>,
    pub steps: u64,
    pub warmup: u64,
    pub slices: Vec<SliceSummary>,
    pub reward_mean: f64,
    pub drift_steps: usize,
    pub orchestration_actions: usize,
    /// Step of the first URLLC load increase, if any.
    pub disturbance_step: Option<u64>,
    /// Steps from the disturbance until URLLC latency stays below its
    /// requirement for [`RECOVERY_HOLD`] steps; `None` if that never happens.
    pub recovery_steps: Option<u64>,
}

impl RunSummary {
    pub fn slice(&self, kind: SliceKind) -> Option<&SliceSummary> {
        self.slices.iter().find(|s| s.kind == kind)
    }

    pub fn urllc_latency_s(&self) -> Option<f64> {
        self.slice(SliceKind::Urllc).map(|s| s.latency_mean_s)
    }

    pub fn embb_throughput_bps(&self) -> Option<f64> {
        self.slice(SliceKind::Embb).map(|s| s.throughput_mean_bps)
    }

    pub fn be_percentile_bps(&self) -> Option<f64> {
        self.slice(SliceKind::Be).map(|s| s.percentile_mean_bps)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// First step `t >= from` after which `ok` holds for `hold` consecutive
/// steps, as an offset from `from`.
pub fn recovery_offset(ok: &[bool], from: usize, hold: usize) -> Option<u64> {
    let mut run = 0usize;
    for (t, &good) in ok.iter().enumerate().skip(from) {
        if good {
            run += 1;
            if run >= hold {
                return Some((t + 1 - hold - from) as u64);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Aggregates computed from exactly the rows written to `kpis.csv`.
pub fn summarize(cfg: &RunConfig, seed: u64, trace: &Trace) -> RunSummary {
    let post: Vec<_> = trace.steps.iter().filter(|r| r.step >= cfg.warmup).collect();
    let slices = cfg
        .slices
        .iter()
        .enumerate()
        .map(|(s, setup)| {
            let rows: Vec<_> = post.iter().filter(|r| r.slices[s].active_ues > 0).collect();
            SliceSummary {
                kind: setup.kind,
                throughput_mean_bps: mean(rows.iter().map(|r| r.slices[s].throughput_bps)),
                latency_mean_s: mean(rows.iter().map(|r| r.slices[s].latency_s)),
                loss_mean: mean(rows.iter().map(|r| r.slices[s].loss)),
                percentile_mean_bps: mean(rows.iter().map(|r| r.slices[s].percentile_bps)),
                compliance: mean(rows.iter().map(|r| f64::from(u8::from(r.compliant[s])))),
            }
        })
        .collect();
    let disturbance_step = cfg
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::ScaleArrivals {
                slice: SliceKind::Urllc,
                factor,
            } if factor > 1.0 => Some(e.step),
            _ => None,
        })
        .min();
    let recovery_steps = match (disturbance_step, cfg.slice_index(SliceKind::Urllc)) {
        (Some(t), Some(u)) => {
            let l_req = cfg.slices[u].sla.l_req_s;
            let ok: Vec<bool> = trace.steps.iter().map(|r| r.slices[u].latency_s < l_req).collect();
            recovery_offset(&ok, t as usize, RECOVERY_HOLD as usize)
        }
        _ => None,
    };
    RunSummary {
        seed,
        controller: cfg.controller,
        scenario: cfg.scenario.clone(),
        steps: trace.steps.len() as u64,
        warmup: cfg.warmup,
        slices,
        reward_mean: mean(post.iter().map(|r| r.reward)),
        drift_steps: trace.steps.iter().filter(|r| r.drift).count(),
        orchestration_actions: trace.orchestration.len(),
        disturbance_step,
        recovery_steps,
    }
}

fn open_csv(path: &Path) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{CSV_VERSION_LINE}")?;
    Ok(csv::WriterBuilder::new().from_writer(f))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn slice_name(k: SliceKind) -> String {
    k.as_str().to_ascii_lowercase()
}

/// Writes the trace CSVs and `summary.json` into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, trace: &Trace, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let names: Vec<String> = cfg.slices.iter().map(|s| slice_name(s.kind)).collect();

    let mut w = open_csv(&dir.join("steps.csv"))?;
    let mut header = vec!["step".to_string(), "drift".into(), "reward".into()];
    for p in ["rbg", "priority", "floor"] {
        header.extend(names.iter().map(|n| format!("{p}_{n}")));
    }
    header.extend(["healing_gain".into(), "fairness".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for r in &trace.steps {
        let mut row = vec![r.step.to_string(), u8::from(r.drift).to_string(), num(r.reward)];
        row.extend(r.allocation.iter().map(|x| x.to_string()));
        row.extend(r.priorities.iter().map(|x| num(*x)));
        row.extend(r.floors.iter().map(|x| x.to_string()));
        row.extend([num(r.healing_gain), num(r.fairness)]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = open_csv(&dir.join("kpis.csv"))?;
    w.write_record([
        "step",
        "slice",
        "active_ues",
        "throughput_bps",
        "latency_s",
        "loss",
        "buffer_bits",
        "long_term_bps",
        "percentile_bps",
        "offered_bps",
        "compliant",
    ])
    .map_err(csv_err)?;
    for r in &trace.steps {
        for (k, ok) in r.slices.iter().zip(&r.compliant) {
            w.write_record([
                r.step.to_string(),
                slice_name(k.kind),
                k.active_ues.to_string(),
                num(k.throughput_bps),
                num(k.latency_s),
                num(k.loss),
                num(k.buffer_bits),
                num(k.long_term_bps),
                num(k.percentile_bps),
                num(k.offered_bps),
                u8::from(*ok).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let mut w = open_csv(&dir.join("healing.csv"))?;
    let mut header = vec!["step".to_string(), "gain".into()];
    for p in ["deviation", "delta", "priority"] {
        header.extend(names.iter().map(|n| format!("{p}_{n}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for h in &trace.healing {
        let mut row = vec![h.step.to_string(), num(h.gain)];
        for v in [&h.deviations, &h.deltas, &h.priorities] {
            row.extend(v.iter().map(|x| num(*x)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = open_csv(&dir.join("orchestration.csv"))?;
    w.write_record([
        "step",
        "trigger",
        "agent",
        "applied",
        "floor_embb",
        "floor_urllc",
        "floor_be",
        "healing_scale",
        "fairness",
    ])
    .map_err(csv_err)?;
    for o in &trace.orchestration {
        let mut row = vec![
            o.step.to_string(),
            format!("{:?}", o.trigger).to_ascii_lowercase(),
            o.action.agent.as_str().to_string(),
            u8::from(o.applied).to_string(),
        ];
        row.extend(o.action.theta.iter().map(|x| num(*x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = open_csv(&dir.join("intents.csv"))?;
    w.write_record(["step", "accepted", "text", "detail"]).map_err(csv_err)?;
    for i in &trace.intents {
        w.write_record([i.step.to_string(), u8::from(i.accepted).to_string(), i.text.clone(), i.detail.clone()])
            .map_err(csv_err)?;
    }
    w.flush()?;

    if cfg.traces.ue {
        let mut w = open_csv(&dir.join("ues.csv"))?;
        w.write_record([
            "step",
            "ue",
            "slice",
            "r_bps",
            "r_eff_bps",
            "latency_s",
            "loss",
            "g_bps",
            "f_bps",
            "buffer_bits",
        ])
        .map_err(csv_err)?;
        for u in &trace.ues {
            w.write_record([
                u.step.to_string(),
                u.ue.to_string(),
                slice_name(u.slice),
                num(u.kpis.r_bps),
                num(u.kpis.r_eff_bps),
                num(u.kpis.latency_s),
                num(u.kpis.loss),
                num(u.kpis.g_bps),
                num(u.kpis.f_bps),
                num(u.buffer_bits),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    if cfg.traces.links {
        let mut w = open_csv(&dir.join("links.csv"))?;
        w.write_record(["step", "ue", "rsrp_w", "interference_w", "se"]).map_err(csv_err)?;
        for l in &trace.links {
            w.write_record([l.step.to_string(), l.ue.to_string(), num(l.rsrp_w), num(l.interference_w), num(l.se)])
                .map_err(csv_err)?;
        }
        w.flush()?;
    }
    if cfg.traces.micro {
        let mut w = open_csv(&dir.join("micro.csv"))?;
        w.write_record(["step", "slice", "micro_step", "ue", "reward"]).map_err(csv_err)?;
        for m in &trace.micro {
            w.write_record([
                m.step.to_string(),
                slice_name(m.slice),
                m.micro_step.to_string(),
                m.ue.to_string(),
                num(m.reward),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }

    fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(summary)?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

/// Metric names used in long-format results.
pub fn metric_value(summary: &RunSummary, metric: &str) -> Option<f64> {
    match metric {
        "urllc_latency_s" => summary.urllc_latency_s(),
        "embb_throughput_bps" => summary.embb_throughput_bps(),
        "be_percentile_bps" => summary.be_percentile_bps(),
        "reward_mean" => Some(summary.reward_mean),
        "recovery_steps" => summary.recovery_steps.map(|x| x as f64),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_needs_a_full_hold() {
        let mut ok = vec![true; 10];
        ok.extend([false, false, true, true, false, true, true, true]);
        assert_eq!(recovery_offset(&ok, 10, 3), Some(5));
        assert_eq!(recovery_offset(&ok, 10, 4), None);
        assert_eq!(recovery_offset(&[true; 20], 5, 3), Some(0));
    }
}
