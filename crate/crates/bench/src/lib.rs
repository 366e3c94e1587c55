//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ranslice_core::hdm::train::TrainingSample;
use ranslice_core::hdm::{HdmConfig, HdmModel};
use ranslice_core::inter_slice::{enumerate_combinations, RbgCombination};
use ranslice_core::sim::{generate_offline_dataset, RunConfig, Simulator};

/// Random actions in `[-1, 1]^slices`.
pub fn actions(n: usize, slices: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..slices).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

pub fn options(r: usize, slices: usize) -> Vec<RbgCombination> {
    enumerate_combinations(r, slices, usize::MAX).expect("small enumeration")
}

/// Untrained model plus a handful of real inputs.
pub fn model_and_samples() -> (HdmModel, Vec<TrainingSample>) {
    let model = HdmModel::new(HdmConfig::default(), 1).expect("default config");
    let ds = generate_offline_dataset(&RunConfig::default(), 4, 300, 1).expect("dataset");
    let samples = ds.training_samples(model.config());
    (model, samples)
}

/// Simulator past warm-up, ready to step.
pub fn warm_simulator() -> Simulator {
    let cfg = RunConfig {
        steps: u64::MAX / 2,
        ..RunConfig::default()
    };
    let mut sim = Simulator::new(cfg, 0).expect("default config");
    for _ in 0..200 {
        sim.step().expect("step");
    }
    sim
}
