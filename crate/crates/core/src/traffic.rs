//! Per-UE packet arrivals, finite FIFO buffers with tail drop, and BE
//! activation cycling.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sla::SliceKind;

pub const DEFAULT_BUFFER_BITS: f64 = 2e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficProfile {
    pub kind: SliceKind,
    /// Mean offered rate per UE in bits/s.
    pub mean_rate_bps: f64,
    pub packet_bits: f64,
    /// BE activation toggle period in steps. Ignored for other kinds.
    pub be_toggle_period: u64,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self::for_kind(SliceKind::Embb)
    }
}

impl TrafficProfile {
    pub fn for_kind(kind: SliceKind) -> Self {
        match kind {
            SliceKind::Embb => Self {
                kind,
                mean_rate_bps: 30e6,
                packet_bits: 12_000.0,
                be_toggle_period: 0,
            },
            SliceKind::Urllc => Self {
                kind,
                mean_rate_bps: 15e6,
                packet_bits: 256.0,
                be_toggle_period: 0,
            },
            SliceKind::Be => Self {
                kind,
                mean_rate_bps: 12e6,
                packet_bits: 12_000.0,
                be_toggle_period: 400,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_rate_bps >= 0.0) {
            return Err(Error::config("mean arrival rate must be >= 0"));
        }
        if !(self.packet_bits > 0.0) {
            return Err(Error::config("packet size must be > 0"));
        }
        if self.kind == SliceKind::Be && self.be_toggle_period < 1 {
            return Err(Error::config("BE toggle period must be >= 1"));
        }
        Ok(())
    }

    /// Mean number of packets per TTI.
    pub fn packets_per_tti(&self, tti_s: f64) -> f64 {
        self.mean_rate_bps * tti_s / self.packet_bits
    }
}

/// Draws the bits arriving at one active UE during one TTI.
pub fn generate_arrivals(profile: &TrafficProfile, rng: &mut SimRng, tti_s: f64) -> f64 {
    let mean = profile.packets_per_tti(tti_s);
    if mean <= 0.0 {
        return 0.0;
    }
    let packets: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    packets * profile.packet_bits
}

/// Flips each BE UE's activation with probability 1/2 every `period` steps.
/// Returns the number of flips. Non-BE entries are left active.
pub fn toggle_be_users(
    step: u64,
    period: u64,
    kinds: &[SliceKind],
    active: &mut [bool],
    rng: &mut SimRng,
) -> usize {
    debug_assert_eq!(kinds.len(), active.len());
    if period == 0 || step == 0 || !step.is_multiple_of(period) {
        return 0;
    }
    let mut flips = 0;
    for (kind, flag) in kinds.iter().zip(active.iter_mut()) {
        if *kind != SliceKind::Be {
            *flag = true;
            continue;
        }
        if rng.random_bool(0.5) {
            *flag = !*flag;
            flips += 1;
        }
    }
    flips
}

/// Finite FIFO buffer. Queued data is kept as (arrival step, bits) chunks so
/// head-of-line delay is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct UeBuffer {
    chunks: VecDeque<(u64, f64)>,
    occupancy: f64,
    capacity: f64,
    pub arrivals_window: f64,
    pub dropped_window: f64,
    last_loss: f64,
}

impl UeBuffer {
    pub fn new(capacity: f64) -> Self {
        Self {
            chunks: VecDeque::new(),
            occupancy: 0.0,
            capacity,
            arrivals_window: 0.0,
            dropped_window: 0.0,
            last_loss: 0.0,
        }
    }

    pub fn occupancy(&self) -> f64 {
        self.occupancy
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy <= 0.0
    }

    /// Appends `bits` that arrived at `step`; whatever does not fit is
    /// dropped. Returns the dropped amount.
    pub fn push(&mut self, step: u64, bits: f64) -> f64 {
        if bits <= 0.0 {
            return 0.0;
        }
        let accepted = bits.min(self.capacity - self.occupancy).max(0.0);
        let dropped = bits - accepted;
        if accepted > 0.0 {
            self.chunks.push_back((step, accepted));
            self.occupancy += accepted;
        }
        self.arrivals_window += bits;
        self.dropped_window += dropped;
        dropped
    }

    /// Removes up to `bits` from the head. Returns the amount removed.
    pub fn pop(&mut self, bits: f64) -> f64 {
        let mut left = bits.min(self.occupancy).max(0.0);
        let taken = left;
        while left > 0.0 {
            let Some(front) = self.chunks.front_mut() else { break };
            if front.1 <= left {
                left -= front.1;
                self.chunks.pop_front();
            } else {
                front.1 -= left;
                left = 0.0;
            }
        }
        self.occupancy -= taken;
        if self.chunks.is_empty() || self.occupancy < 1e-9 {
            self.chunks.clear();
            self.occupancy = 0.0;
        }
        taken
    }

    pub fn head_of_line_age(&self, step: u64, tti_s: f64) -> f64 {
        self.chunks
            .front()
            .map(|&(arrived, _)| step.saturating_sub(arrived) as f64 * tti_s)
            .unwrap_or(0.0)
    }

    /// Queued chunks as (arrival step, bits), oldest first.
    pub fn chunks(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.chunks.iter().copied()
    }

    /// Loss ratio over the current window, or the previous window's value
    /// while nothing has arrived yet.
    pub fn loss_rate(&self) -> f64 {
        if self.arrivals_window > 0.0 {
            (self.dropped_window / self.arrivals_window).clamp(0.0, 1.0)
        } else {
            self.last_loss
        }
    }

    pub fn reset_window(&mut self) {
        if self.arrivals_window > 0.0 {
            self.last_loss = self.loss_rate();
        }
        self.arrivals_window = 0.0;
        self.dropped_window = 0.0;
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
        self.occupancy = 0.0;
    }
}

/// Serves the buffer at rate `rate_bps` for one TTI.
///
/// Returns `(bits served, effective rate)`, where the effective rate is
/// `min(rate, occupancy / tti)`.
pub fn serve_buffer(buf: &mut UeBuffer, rate_bps: f64, tti_s: f64) -> (f64, f64) {
    debug_assert!(rate_bps >= 0.0);
    let served = buf.pop(rate_bps * tti_s);
    (served, served / tti_s)
}
