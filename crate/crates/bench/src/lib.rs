//! Shared fixtures for the criterion benchmarks.

use homp::{make_ho_ou, simulate_path, Dataset, HistorySegment, InitialCondition, ModelSpec, SimConfig};

pub const DT: f64 = 0.01;

pub fn ho_ou() -> ModelSpec {
    make_ho_ou(0.5, 0.2, 1.0).expect("valid model")
}

pub fn initial() -> InitialCondition {
    InitialCondition::constant(0.0, 1.0, DT, 1.0).expect("valid history")
}

/// HO-OU observations with `steps` increments.
pub fn dataset(steps: usize, seed: u64) -> Dataset {
    let cfg = SimConfig::new(DT, steps as f64 * DT, 1, seed);
    let path = simulate_path(&ho_ou(), &initial(), &cfg).expect("simulation");
    Dataset::new(path.rows().collect()).expect("increasing times")
}

pub fn sine_history(m: usize) -> HistorySegment {
    HistorySegment::from_fn(1.0, 1.0, m, f64::sin).expect("valid history")
}
