//! Floquet kicked Ising dynamics.
//!
//! One period is `U_F = U_X U_Z` with
//! `U_Z = exp(-i (sum_j h_j Z_j + J sum_j Z_j Z_{j+1}))` on an open chain and
//! `U_X = prod_j exp(-i g_j X_j)`.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{apply_one_qubit_unchecked, PureState, PHASE_TABLE_MAX_SITES};

pub const ERGODIC_J: f64 = 0.8;
pub const ERGODIC_G: f64 = 0.578;
pub const FIELD_MEAN: f64 = 0.6472;
pub const ERGODIC_FIELD_SPREAD: f64 = 0.6;
pub const MBL_SCALE: f64 = 0.7236;
pub const MBL_DEFAULT_GAMMA: f64 = 0.15;
pub const SELF_DUAL_ANGLE: f64 = FRAC_PI_4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KickedIsingParams {
    pub j: f64,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl KickedIsingParams {
    pub fn new(j: f64, g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if g.len() != h.len() {
            return Err(Error::DimensionMismatch { expected: g.len(), got: h.len() });
        }
        Ok(Self { j, g, h })
    }

    pub fn uniform(n: usize, j: f64, g: f64, h: f64) -> Self {
        Self { j, g: vec![g; n], h: vec![h; n] }
    }

    pub fn n_sites(&self) -> usize {
        self.g.len()
    }

    /// `phi(z) = sum_j h_j z_j + J sum_j z_j z_{j+1}` for basis index `index`.
    #[inline]
    pub fn diagonal_angle(&self, index: usize) -> f64 {
        let n = self.n_sites();
        let spin = |site: usize| if (index >> (n - 1 - site)) & 1 == 0 { 1.0 } else { -1.0 };
        let mut phi = 0.0;
        let mut prev = 0.0;
        for site in 0..n {
            let s = spin(site);
            phi += self.h[site] * s;
            if site > 0 {
                phi += self.j * prev * s;
            }
            prev = s;
        }
        phi
    }
}

/// Disorder presets for the kicked Ising chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegimePreset {
    Ergodic,
    Mbl { gamma: f64 },
    /// `J = j_sign * pi/4`, `g_i = g_sign * pi/4`; fields follow the ergodic law.
    SelfDual { j_sign: i8, g_sign: i8 },
}

impl RegimePreset {
    pub fn mbl() -> Self {
        RegimePreset::Mbl { gamma: MBL_DEFAULT_GAMMA }
    }

    pub fn self_dual() -> Self {
        RegimePreset::SelfDual { j_sign: 1, g_sign: 1 }
    }

    /// Draws `eps_i ~ N(0,1)` in site order from `seed` and builds the chain.
    pub fn params(&self, n: usize, seed: u64) -> KickedIsingParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ergodic_h = || eps.iter().map(|e| FIELD_MEAN + ERGODIC_FIELD_SPREAD * e).collect();
        match *self {
            RegimePreset::Ergodic => {
                KickedIsingParams { j: ERGODIC_J, g: vec![ERGODIC_G; n], h: ergodic_h() }
            }
            RegimePreset::Mbl { gamma } => {
                let spread = MBL_SCALE * (1.0 - gamma * gamma).sqrt();
                KickedIsingParams {
                    j: ERGODIC_J,
                    g: vec![MBL_SCALE * gamma; n],
                    h: eps.iter().map(|e| FIELD_MEAN + spread * e).collect(),
                }
            }
            RegimePreset::SelfDual { j_sign, g_sign } => KickedIsingParams {
                j: sign(j_sign) * SELF_DUAL_ANGLE,
                g: vec![sign(g_sign) * SELF_DUAL_ANGLE; n],
                h: ergodic_h(),
            },
        }
    }

    /// Self-dual couplings with caller-supplied fields.
    pub fn self_dual_with_fields(h: Vec<f64>) -> KickedIsingParams {
        KickedIsingParams { j: SELF_DUAL_ANGLE, g: vec![SELF_DUAL_ANGLE; h.len()], h }
    }
}

fn sign(s: i8) -> f64 {
    if s < 0 {
        -1.0
    } else {
        1.0
    }
}

/// Precomputed layers of one Floquet period.
#[derive(Clone, Debug)]
pub struct FloquetOperator {
    params: KickedIsingParams,
    phase_table: Option<Vec<C64>>,
    kicks: Vec<[[C64; 2]; 2]>,
}

impl FloquetOperator {
    pub fn new(params: &KickedIsingParams) -> Self {
        let n = params.n_sites();
        let phase_table = (n <= PHASE_TABLE_MAX_SITES).then(|| {
            (0..1usize << n).map(|i| C64::from_polar(1.0, -params.diagonal_angle(i))).collect()
        });
        let kicks = params
            .g
            .iter()
            .map(|&g| {
                let (c, s) = (C64::new(g.cos(), 0.0), C64::new(0.0, -g.sin()));
                [[c, s], [s, c]]
            })
            .collect();
        Self { params: params.clone(), phase_table, kicks }
    }

    pub fn apply(&self, state: &mut PureState) -> Result<()> {
        let n = self.params.n_sites();
        if state.n_sites() != n {
            return Err(Error::DimensionMismatch { expected: n, got: state.n_sites() });
        }
        match &self.phase_table {
            Some(table) => {
                for (a, f) in state.amplitudes_mut().iter_mut().zip(table) {
                    *a *= f;
                }
            }
            None => {
                for (i, a) in state.amplitudes_mut().iter_mut().enumerate() {
                    *a *= C64::from_polar(1.0, -self.params.diagonal_angle(i));
                }
            }
        }
        for (site, u) in self.kicks.iter().enumerate() {
            apply_one_qubit_unchecked(state, site, *u);
        }
        Ok(())
    }
}

/// One period `U_X U_Z`, in place.
pub fn floquet_step(state: &mut PureState, params: &KickedIsingParams) -> Result<()> {
    FloquetOperator::new(params).apply(state)
}

/// `U_F^t |psi>`.
pub fn evolve(state: &PureState, params: &KickedIsingParams, t: usize) -> Result<PureState> {
    let mut out = state.clone();
    let op = FloquetOperator::new(params);
    for _ in 0..t {
        op.apply(&mut out)?;
    }
    Ok(out)
}

/// Circuit family for lightcone predicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    /// Generic two-site brickwork Floquet circuit.
    Brickwork,
    KickedIsing,
}

/// Last period `t*` for which the fluctuation measure vanishes identically.
///
/// Brickwork: zero while `L_E > 4t - 3`. Kicked Ising: `t* = floor(L_E / 2)`
/// in `U_F` periods.
pub fn lightcone_onset(family: ModelFamily, l_e: usize) -> usize {
    match family {
        ModelFamily::Brickwork => (l_e + 2) / 4,
        ModelFamily::KickedIsing => l_e / 2,
    }
}
