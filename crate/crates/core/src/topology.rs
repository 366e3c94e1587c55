//! Hexagonal multi-cell layout, link-gain evolution and per-TTI spectral
//! efficiency.
//!
//! The array/beamforming chain is folded into a scalar link gain:
//!
//! ```text
//! gain_dB = tx_power + antenna_gain - path_loss(d) - shadowing + fading
//! ```
//!
//! All arithmetic after this point is done in linear watts. Decibels only
//! appear in [`ChannelParams`] and the helpers [`dbm_to_watts`] /
//! [`watts_to_dbm`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Maximum number of neighbouring base stations whose power is summed into
/// the interference term.
pub const MAX_INTERFERERS: usize = 6;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Thermal noise over `bandwidth_hz` with the given receiver noise figure.
pub fn thermal_noise_watts(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    dbm_to_watts(-174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub num_cells: usize,
    pub sectors_per_cell: usize,
    pub num_ue: usize,
    pub num_slices: usize,
    pub bandwidth_hz: f64,
    pub num_rbg: usize,
    pub tti_s: f64,
    pub carrier_hz: f64,
    pub noise_power_w: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let bandwidth_hz = 100e6;
        Self {
            num_cells: 7,
            sectors_per_cell: 3,
            num_ue: 30,
            num_slices: 3,
            bandwidth_hz,
            num_rbg: 16,
            // 60 kHz subcarrier spacing, numerology 2: 1 ms / 2^2.
            tti_s: 0.25e-3,
            carrier_hz: 30e9,
            noise_power_w: thermal_noise_watts(bandwidth_hz, 9.0),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_cells < 1 {
            return Err(Error::config("num_cells must be >= 1"));
        }
        if self.sectors_per_cell < 1 {
            return Err(Error::config("sectors_per_cell must be >= 1"));
        }
        if self.num_slices < 1 {
            return Err(Error::config("num_slices must be >= 1"));
        }
        if self.num_rbg < self.num_slices {
            return Err(Error::config(format!(
                "num_rbg ({}) must be >= num_slices ({})",
                self.num_rbg, self.num_slices
            )));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("bandwidth must be > 0"));
        }
        if !(self.tti_s > 0.0) {
            return Err(Error::config("TTI duration must be > 0"));
        }
        if !(self.noise_power_w > 0.0) {
            return Err(Error::config("noise power must be > 0"));
        }
        Ok(())
    }

    /// Bandwidth of one RBG in Hz.
    pub fn rbg_bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz / self.num_rbg as f64
    }
}

/// Link-gain model knobs. Powers and gains are in dB/dBm here; they are
/// converted to watts once per evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub inter_site_distance_m: f64,
    pub min_distance_m: f64,
    pub tx_power_dbm: f64,
    /// Array gain on the serving link.
    pub serving_gain_db: f64,
    /// Array gain seen from interfering sites.
    pub interferer_gain_db: f64,
    pub reference_distance_m: f64,
    /// Path loss at the reference distance. `None` uses free-space loss at
    /// the carrier frequency.
    pub reference_loss_db: Option<f64>,
    pub path_loss_exponent: f64,
    pub shadowing_std_db: f64,
    pub fading_std_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            inter_site_distance_m: 200.0,
            min_distance_m: 10.0,
            tx_power_dbm: 35.0,
            // 64 x 4 element arrays.
            serving_gain_db: 24.0,
            interferer_gain_db: 0.0,
            reference_distance_m: 1.0,
            reference_loss_db: None,
            path_loss_exponent: 2.9,
            shadowing_std_db: 6.0,
            fading_std_db: 2.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inter_site_distance_m > 0.0) {
            return Err(Error::config("inter-site distance must be > 0"));
        }
        if !(self.reference_distance_m > 0.0) {
            return Err(Error::config("reference distance must be > 0"));
        }
        if !(self.min_distance_m >= self.reference_distance_m) {
            return Err(Error::config("min distance must be >= reference distance"));
        }
        if self.shadowing_std_db < 0.0 || self.fading_std_db < 0.0 {
            return Err(Error::config("shadowing/fading std must be >= 0"));
        }
        Ok(())
    }

    pub fn reference_loss_db(&self, carrier_hz: f64) -> f64 {
        self.reference_loss_db.unwrap_or_else(|| {
            20.0 * (4.0 * std::f64::consts::PI * self.reference_distance_m * carrier_hz
                / SPEED_OF_LIGHT)
                .log10()
        })
    }

    pub fn path_loss_db(&self, distance_m: f64, carrier_hz: f64) -> f64 {
        let d = distance_m.max(self.reference_distance_m);
        self.reference_loss_db(carrier_hz)
            + 10.0 * self.path_loss_exponent * (d / self.reference_distance_m).log10()
    }

    /// Received power on the serving link at the reference distance with no
    /// shadowing or fading.
    pub fn reference_power_dbm(&self, carrier_hz: f64) -> f64 {
        self.tx_power_dbm + self.serving_gain_db - self.reference_loss_db(carrier_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Static placement of sites and UEs. Site 0 is the serving site; its first
/// sector is the one being evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub sites: Vec<Point>,
    pub sectors_per_site: usize,
    pub ues: Vec<Point>,
    /// Per-UE, per-site shadowing in dB, fixed for the episode.
    pub shadowing_db: Vec<Vec<f64>>,
    /// Boresight of the evaluated sector in radians.
    pub boresight: f64,
}

impl Layout {
    pub fn num_ues(&self) -> usize {
        self.ues.len()
    }
}

/// Per-(cell, UE) link quantities for one TTI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub rsrp_w: f64,
    pub interference_w: f64,
    pub se: f64,
}

/// Axial coordinates of the first `count` hexagons, spiralling outwards.
fn hex_axial(count: usize) -> Vec<(i64, i64)> {
    const DIRS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];
    let mut out = vec![(0, 0)];
    let mut ring = 1i64;
    while out.len() < count {
        // Start at the ring's corner in direction 4 and walk around it.
        let mut q = DIRS[4].0 * ring;
        let mut r = DIRS[4].1 * ring;
        for dir in DIRS {
            for _ in 0..ring {
                out.push((q, r));
                q += dir.0;
                r += dir.1;
            }
        }
        ring += 1;
    }
    out.truncate(count);
    out
}

pub fn place_topology(config: &NetworkConfig, channel: &ChannelParams, rng: &mut SimRng) -> Layout {
    let isd = channel.inter_site_distance_m;
    let sites: Vec<Point> = hex_axial(config.num_cells)
        .into_iter()
        .map(|(q, r)| Point {
            x: isd * (q as f64 + r as f64 / 2.0),
            y: isd * (3f64.sqrt() / 2.0) * r as f64,
        })
        .collect();

    let half_width = std::f64::consts::PI / config.sectors_per_cell as f64;
    let boresight = 0.0;
    let r_min = channel.min_distance_m;
    let r_max = (isd / 3f64.sqrt()).max(r_min);
    let shadow = Normal::new(0.0, channel.shadowing_std_db).expect("validated std");

    let mut ues = Vec::with_capacity(config.num_ue);
    let mut shadowing_db = Vec::with_capacity(config.num_ue);
    for _ in 0..config.num_ue {
        // Uniform over the annular wedge of the evaluated sector.
        let u: f64 = rng.random();
        let radius = (r_min * r_min + u * (r_max * r_max - r_min * r_min)).sqrt();
        let angle = boresight + rng.random_range(-half_width..=half_width);
        ues.push(Point {
            x: sites[0].x + radius * angle.cos(),
            y: sites[0].y + radius * angle.sin(),
        });
        shadowing_db.push((0..sites.len()).map(|_| shadow.sample(rng)).collect());
    }

    Layout {
        sites,
        sectors_per_site: config.sectors_per_cell,
        ues,
        shadowing_db,
        boresight,
    }
}

/// Received power in dBm from `site` at `ue` for the given fading draw.
pub fn received_power_dbm(
    layout: &Layout,
    channel: &ChannelParams,
    carrier_hz: f64,
    ue: usize,
    site: usize,
    fading_db: f64,
) -> f64 {
    let gain = if site == 0 {
        channel.serving_gain_db
    } else {
        channel.interferer_gain_db
    };
    let d = layout.ues[ue].distance(&layout.sites[site]);
    channel.tx_power_dbm + gain - channel.path_loss_db(d, carrier_hz) - layout.shadowing_db[ue][site]
        + fading_db
}

/// Advances the per-TTI fading and returns one [`LinkState`] per UE.
///
/// `_step` is accepted for trace alignment; the fading process is i.i.d.
/// across TTIs so it does not depend on it.
pub fn step_links(
    layout: &Layout,
    channel: &ChannelParams,
    config: &NetworkConfig,
    rng: &mut SimRng,
    _step: u64,
) -> Vec<LinkState> {
    let fade = Normal::new(0.0, channel.fading_std_db).expect("validated std");
    let mut neighbour = Vec::with_capacity(layout.sites.len());
    (0..layout.num_ues())
        .map(|ue| {
            let serving_dbm =
                received_power_dbm(layout, channel, config.carrier_hz, ue, 0, fade.sample(rng));
            neighbour.clear();
            for site in 1..layout.sites.len() {
                let p = received_power_dbm(layout, channel, config.carrier_hz, ue, site, fade.sample(rng));
                neighbour.push(dbm_to_watts(p));
            }
            let rsrp_w = dbm_to_watts(serving_dbm);
            let interference_w = strongest_sum(&mut neighbour, MAX_INTERFERERS);
            let mut link = LinkState {
                rsrp_w,
                interference_w,
                se: 0.0,
            };
            link.se = spectral_efficiency(&link, config.noise_power_w);
            link
        })
        .collect()
}

/// Sum of the `k` largest entries. Reorders `powers`.
pub fn strongest_sum(powers: &mut [f64], k: usize) -> f64 {
    powers.sort_by(|a, b| b.total_cmp(a));
    powers.iter().take(k).sum()
}

pub fn spectral_efficiency(link: &LinkState, noise_power_w: f64) -> f64 {
    debug_assert!(noise_power_w > 0.0);
    (1.0 + link.rsrp_w / (link.interference_w + noise_power_w)).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    fn quiet_channel() -> ChannelParams {
        ChannelParams {
            shadowing_std_db: 0.0,
            fading_std_db: 0.0,
            ..ChannelParams::default()
        }
    }

    #[test]
    fn seven_cells_form_centre_plus_ring() {
        let cfg = NetworkConfig::default();
        let layout = place_topology(&cfg, &ChannelParams::default(), &mut stream(1, Stream::Topology));
        assert_eq!(layout.sites.len(), 7);
        assert_eq!(layout.sectors_per_site, 3);
        let isd = ChannelParams::default().inter_site_distance_m;
        for s in &layout.sites[1..] {
            assert!((s.distance(&layout.sites[0]) - isd).abs() < 1e-9);
        }
        // UEs sit inside the evaluated 120 degree wedge.
        for ue in &layout.ues {
            let angle = ue.y.atan2(ue.x);
            assert!(angle.abs() <= std::f64::consts::FRAC_PI_3 + 1e-12);
        }
    }

    #[test]
    fn hex_spiral_has_no_duplicates() {
        let pts = hex_axial(37);
        let mut sorted = pts.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 37);
    }

    #[test]
    fn single_cell_has_no_interference() {
        let cfg = NetworkConfig {
            num_cells: 1,
            ..NetworkConfig::default()
        };
        let ch = ChannelParams::default();
        let layout = place_topology(&cfg, &ch, &mut stream(3, Stream::Topology));
        let links = step_links(&layout, &ch, &cfg, &mut stream(3, Stream::Channel), 0);
        assert!(links.iter().all(|l| l.interference_w == 0.0));
    }

    #[test]
    fn same_seed_same_layout() {
        let cfg = NetworkConfig::default();
        let ch = ChannelParams::default();
        let a = place_topology(&cfg, &ch, &mut stream(9, Stream::Topology));
        let b = place_topology(&cfg, &ch, &mut stream(9, Stream::Topology));
        assert_eq!(a, b);
    }

    #[test]
    fn reference_distance_gives_reference_power() {
        let cfg = NetworkConfig::default();
        let ch = quiet_channel();
        let layout = Layout {
            sites: vec![Point { x: 0.0, y: 0.0 }],
            sectors_per_site: 3,
            ues: vec![Point {
                x: ch.reference_distance_m,
                y: 0.0,
            }],
            shadowing_db: vec![vec![0.0]],
            boresight: 0.0,
        };
        let p = received_power_dbm(&layout, &ch, cfg.carrier_hz, 0, 0, 0.0);
        assert!((p - ch.reference_power_dbm(cfg.carrier_hz)).abs() < 1e-12);
    }

    #[test]
    fn doubling_distance_with_exponent_two_costs_six_db() {
        let ch = ChannelParams {
            path_loss_exponent: 2.0,
            ..quiet_channel()
        };
        let drop = ch.path_loss_db(80.0, 30e9) - ch.path_loss_db(40.0, 30e9);
        assert!((drop - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!((drop - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn se_examples() {
        let se = |rsrp, i, n| {
            spectral_efficiency(
                &LinkState {
                    rsrp_w: rsrp,
                    interference_w: i,
                    se: 0.0,
                },
                n,
            )
        };
        assert_eq!(se(3.0, 0.5, 0.5), 2.0);
        assert_eq!(se(0.0, 1e-10, 1e-12), 0.0);
        assert!((se(2e-10, 5e-11, 5e-11) - 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn interference_takes_six_strongest() {
        let mut p = vec![1.0, 7.0, 3.0, 5.0, 2.0, 6.0, 4.0, 8.0];
        assert_eq!(strongest_sum(&mut p, 6), 8.0 + 7.0 + 6.0 + 5.0 + 4.0 + 3.0);
        let mut few = vec![1.0, 2.0];
        assert_eq!(strongest_sum(&mut few, 6), 3.0);
    }

    #[test]
    fn interferer_count_is_min_six_c_minus_one() {
        // With 19 sites, the interference must equal the sum of the six
        // strongest neighbours computed independently.
        let cfg = NetworkConfig {
            num_cells: 19,
            ..NetworkConfig::default()
        };
        let ch = quiet_channel();
        let layout = place_topology(&cfg, &ch, &mut stream(5, Stream::Topology));
        let links = step_links(&layout, &ch, &cfg, &mut stream(5, Stream::Channel), 0);
        for (ue, link) in links.iter().enumerate() {
            let mut all: Vec<f64> = (1..19)
                .map(|s| dbm_to_watts(received_power_dbm(&layout, &ch, cfg.carrier_hz, ue, s, 0.0)))
                .collect();
            all.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let expect: f64 = all[..6].iter().sum();
            assert!((link.interference_w - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn link_sequences_are_reproducible() {
        let cfg = NetworkConfig::default();
        let ch = ChannelParams::default();
        let run = || {
            let layout = place_topology(&cfg, &ch, &mut stream(11, Stream::Topology));
            let mut rng = stream(11, Stream::Channel);
            (0..20)
                .flat_map(|n| step_links(&layout, &ch, &cfg, &mut rng, n))
                .map(|l| (l.rsrp_w.to_bits(), l.interference_w.to_bits(), l.se.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn se_monotone(rsrp in 0.0f64..1e-6, extra in 0.0f64..1e-6, i in 0.0f64..1e-6, di in 0.0f64..1e-6) {
            let n = 1e-12;
            let link = |r, i| LinkState { rsrp_w: r, interference_w: i, se: 0.0 };
            prop_assert!(spectral_efficiency(&link(rsrp + extra, i), n) >= spectral_efficiency(&link(rsrp, i), n));
            prop_assert!(spectral_efficiency(&link(rsrp, i + di), n) <= spectral_efficiency(&link(rsrp, i), n));
        }
    }
}
