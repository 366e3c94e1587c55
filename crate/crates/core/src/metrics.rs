//! KPI computation: instantaneous and long-term throughput, fifth
//! percentile, buffer latency, loss, and slice aggregates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sla::{Intent, SliceKind};

pub const DEFAULT_WINDOW: usize = 100;

/// Served throughput of one UE from its RBG share.
pub fn instantaneous_throughput(rbgs: usize, total_rbgs: usize, bandwidth_hz: f64, se: f64) -> f64 {
    debug_assert!(total_rbgs > 0 && rbgs <= total_rbgs);
    rbgs as f64 / total_rbgs as f64 * bandwidth_hz * se
}

/// Queue latency estimate `b / r_eff`, clamped to `l_max`.
///
/// An empty buffer has zero latency; a non-empty buffer that is not being
/// served reports `l_max`.
pub fn buffer_latency(bits: f64, r_eff_bps: f64, l_max_s: f64) -> f64 {
    if bits <= 0.0 {
        0.0
    } else if r_eff_bps <= 0.0 {
        l_max_s
    } else {
        (bits / r_eff_bps).min(l_max_s)
    }
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest sample.
pub fn nearest_rank(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

/// Sliding window of the last `m` served-throughput samples of one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct KpiWindow {
    len: usize,
    ring: VecDeque<f64>,
}

impl KpiWindow {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "window length must be >= 1");
        Self {
            len,
            ring: VecDeque::with_capacity(len),
        }
    }

    pub fn window_len(&self) -> usize {
        self.len
    }

    pub fn push(&mut self, sample: f64) {
        if self.ring.len() == self.len {
            self.ring.pop_front();
        }
        self.ring.push_back(sample);
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.ring.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn clear(&mut self) {
        self.ring.clear();
    }
}

/// Mean of the stored samples.
pub fn longterm_throughput(window: &KpiWindow) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let sum: f64 = window.samples().sum();
    Ok(sum / window.len() as f64)
}

/// Nearest-rank fifth percentile of the stored samples.
pub fn fifth_percentile(window: &KpiWindow) -> Result<f64> {
    let samples: Vec<f64> = window.samples().collect();
    nearest_rank(&samples, 0.05)
}

/// Per-UE KPIs at the end of a step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UeKpis {
    pub r_bps: f64,
    pub r_eff_bps: f64,
    pub latency_s: f64,
    pub loss: f64,
    pub g_bps: f64,
    pub f_bps: f64,
}

/// Slice-level aggregate the SLA is checked against.
///
/// `throughput_bps` is the sum of the active UEs' long-term served
/// throughput, `latency_s` their mean latency, `loss` the pooled window loss
/// ratio. `long_term_bps` is the per-UE mean long-term throughput and
/// `percentile_bps` the nearest-rank fifth percentile of the per-UE long-term
/// throughputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceKpis {
    pub kind: SliceKind,
    pub active_ues: usize,
    pub throughput_bps: f64,
    pub latency_s: f64,
    pub loss: f64,
    pub buffer_bits: f64,
    pub long_term_bps: f64,
    pub percentile_bps: f64,
    pub offered_bps: f64,
}

impl SliceKpis {
    pub fn empty(kind: SliceKind) -> Self {
        Self {
            kind,
            active_ues: 0,
            throughput_bps: 0.0,
            latency_s: 0.0,
            loss: 0.0,
            buffer_bits: 0.0,
            long_term_bps: 0.0,
            percentile_bps: 0.0,
            offered_bps: 0.0,
        }
    }

    pub fn value(&self, intent: Intent) -> f64 {
        match intent {
            Intent::Throughput => self.throughput_bps,
            Intent::Latency => self.latency_s,
            Intent::Loss => self.loss,
            Intent::LongTerm => self.long_term_bps,
            Intent::Percentile => self.percentile_bps,
        }
    }
}

/// Per-UE inputs to a slice aggregate.
#[derive(Debug, Clone, Copy)]
pub struct UeSample {
    pub kpis: UeKpis,
    pub buffer_bits: f64,
    pub arrivals_window: f64,
    pub dropped_window: f64,
    pub offered_bps: f64,
}

pub fn aggregate_slice(kind: SliceKind, ues: &[UeSample]) -> SliceKpis {
    let mut out = SliceKpis::empty(kind);
    if ues.is_empty() {
        return out;
    }
    let n = ues.len() as f64;
    out.active_ues = ues.len();
    out.throughput_bps = ues.iter().map(|u| u.kpis.g_bps).sum();
    out.latency_s = ues.iter().map(|u| u.kpis.latency_s).sum::<f64>() / n;
    out.buffer_bits = ues.iter().map(|u| u.buffer_bits).sum();
    out.offered_bps = ues.iter().map(|u| u.offered_bps).sum();
    let arrivals: f64 = ues.iter().map(|u| u.arrivals_window).sum();
    let dropped: f64 = ues.iter().map(|u| u.dropped_window).sum();
    out.loss = if arrivals > 0.0 {
        (dropped / arrivals).clamp(0.0, 1.0)
    } else {
        ues.iter().map(|u| u.kpis.loss).sum::<f64>() / n
    };
    out.long_term_bps = out.throughput_bps / n;
    let g: Vec<f64> = ues.iter().map(|u| u.kpis.g_bps).collect();
    out.percentile_bps = nearest_rank(&g, 0.05).unwrap_or(0.0);
    out
}
