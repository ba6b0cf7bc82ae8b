//! Shared fixtures for the kernel benchmarks.

use ppe_core::state::{make_product_state, random_product_state};
use ppe_core::{PureState, RegimePreset, Tripartition};

/// Haar product state on `part`, scrambled by `t` ergodic periods.
pub fn scrambled_state(part: &Tripartition, seed: u64, t: usize) -> PureState {
    let n = part.n_sites();
    let psi = make_product_state(&random_product_state(n, seed)).expect("normalized spec");
    ppe_core::evolve(&psi, &RegimePreset::Ergodic.params(n, seed), t).expect("matching sizes")
}
