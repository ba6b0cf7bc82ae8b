//! Phenomenological l-bit model of the many-body localized phase.
//!
//! `H = sum_S J_S prod_{i in S} Z_i` over site subsets `S`, with
//! `J_S = r_S exp(-span(S) / xi)` and `r_S ~ N(0, 1)`. A subset is stored as
//! a bitmask in basis-index layout (site `i` is bit `L-1-i`).

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::ppe::{build_ppe, EnsembleEntry, PartialProjectedEnsemble};
use crate::state::{
    make_product_state, DensityMatrix, MeasurementBasis, ProductStateSpec, PureState,
    Tripartition, MAX_SITES,
};

pub const DEFAULT_XI: f64 = 0.5;
/// Largest chain for which all subsets are kept by default.
pub const FULL_ORDER_MAX_SITES: usize = 14;
pub const TRUNCATED_ORDER: usize = 4;
const FULL_ORDER_CAP: usize = 16;

// 2*pi as a double plus its rounding error.
const TAU_HI: f64 = std::f64::consts::TAU;
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// Canonical description: the couplings are regenerated from these fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LBitSpec {
    pub n_sites: usize,
    pub xi: f64,
    pub max_order: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LBitHamiltonian {
    spec: LBitSpec,
    couplings: Vec<f64>,
    energies: Vec<f64>,
}

/// `max_order` used when none is given: every subset up to
/// [`FULL_ORDER_MAX_SITES`] sites, [`TRUNCATED_ORDER`] beyond.
pub fn default_max_order(n: usize) -> usize {
    if n <= FULL_ORDER_MAX_SITES {
        n
    } else {
        log::warn!("l-bit chain of {n} sites truncated to order {TRUNCATED_ORDER}");
        TRUNCATED_ORDER
    }
}

fn span(mask: usize) -> u32 {
    (usize::BITS - 1 - mask.leading_zeros()) - mask.trailing_zeros()
}

/// In-place Walsh-Hadamard transform: `out[i] = sum_m in[m] (-1)^{|m & i|}`.
fn walsh_hadamard(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        for base in (0..v.len()).step_by(2 * h) {
            for i in base..base + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Draws one `r ~ N(0,1)` per non-empty subset in ascending mask order,
/// whether or not the subset is kept, so builds with different `max_order`
/// share their couplings.
pub fn build_lbit(n: usize, xi: f64, max_order: usize, seed: u64) -> Result<LBitHamiltonian> {
    if n == 0 || n > MAX_SITES {
        return Err(Error::SizeCap(format!("l-bit chain of {n} sites")));
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(Error::InvalidArgument(format!("localization length {xi}")));
    }
    if max_order == 0 || max_order > n {
        return Err(Error::InvalidArgument(format!("max_order {max_order} for {n} sites")));
    }
    if max_order == n && n > FULL_ORDER_CAP {
        return Err(Error::SizeCap(format!("all subsets of {n} sites")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut couplings = vec![0.0; 1 << n];
    for (mask, c) in couplings.iter_mut().enumerate().skip(1) {
        let r: f64 = StandardNormal.sample(&mut rng);
        if mask.count_ones() as usize <= max_order {
            *c = r * (-(span(mask) as f64) / xi).exp();
        }
    }
    let mut energies = couplings.clone();
    walsh_hadamard(&mut energies);
    Ok(LBitHamiltonian { spec: LBitSpec { n_sites: n, xi, max_order, seed }, couplings, energies })
}

impl LBitHamiltonian {
    pub fn from_spec(spec: &LBitSpec) -> Result<Self> {
        build_lbit(spec.n_sites, spec.xi, spec.max_order, spec.seed)
    }

    pub fn spec(&self) -> &LBitSpec {
        &self.spec
    }

    pub fn n_sites(&self) -> usize {
        self.spec.n_sites
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, index: usize) -> f64 {
        self.energies[index]
    }

    fn mask_of(&self, sites: &[usize]) -> Result<usize> {
        let n = self.n_sites();
        let mut mask = 0;
        for &s in sites {
            if s >= n {
                return Err(Error::InvalidArgument(format!("site {s} out of range")));
            }
            mask |= 1 << (n - 1 - s);
        }
        Ok(mask)
    }

    /// `J_S` for a site subset (zero when truncated or empty).
    pub fn coupling(&self, sites: &[usize]) -> Result<f64> {
        Ok(self.couplings[self.mask_of(sites)?])
    }

    /// `(mask, J)` for every retained subset.
    pub fn couplings(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.couplings.iter().copied().enumerate().skip(1).filter(|&(_, c)| c != 0.0)
    }

    /// Upper bound `exp(-span/xi)` on any coupling left out by truncation.
    pub fn truncation_bound(&self) -> f64 {
        if self.spec.max_order >= self.n_sites() {
            0.0
        } else {
            (-(self.spec.max_order as f64) / self.spec.xi).exp()
        }
    }

    /// Largest deviation between the cached energies and a direct sum.
    pub fn energy_cache_error(&self) -> f64 {
        let n = self.n_sites();
        (0..1usize << n)
            .map(|idx| {
                let direct: f64 = self
                    .couplings()
                    .map(|(m, c)| if (m & idx).count_ones() % 2 == 0 { c } else { -c })
                    .sum();
                (direct - self.energies[idx]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `(E_{z_i = up} - E_{z_i = down}) / 2` with the other spins read from
    /// `z_rest` (its bit for `site` is ignored).
    pub fn effective_field(&self, site: usize, z_rest: usize) -> Result<f64> {
        let n = self.n_sites();
        if site >= n || z_rest >> n != 0 {
            return Err(Error::InvalidArgument(format!("site {site} / configuration {z_rest}")));
        }
        let bit = 1 << (n - 1 - site);
        Ok(0.5 * (self.energies[z_rest & !bit] - self.energies[z_rest | bit]))
    }

    /// Audit table with one row per retained subset.
    pub fn write_couplings_csv(&self, w: impl Write) -> Result<()> {
        let n = self.n_sites();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sites", "span", "coupling"])?;
        for (mask, c) in self.couplings() {
            let sites: Vec<String> =
                (0..n).filter(|s| mask >> (n - 1 - s) & 1 == 1).map(|s| s.to_string()).collect();
            out.write_record([sites.join(" "), span(mask).to_string(), format!("{c:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `exp(-i e t)` with the argument reduced modulo `2 pi` in extended
/// precision, so that long times keep their phase accuracy.
pub fn phase_factor(e: f64, t: f64) -> C64 {
    let hi = e * t;
    let lo = e.mul_add(t, -hi);
    let k = (hi / TAU).round();
    let r = (-k).mul_add(TAU_LO, (-k).mul_add(TAU_HI, hi)) + lo;
    C64::from_polar(1.0, -r)
}

fn check_sizes(spec: &ProductStateSpec, h: &LBitHamiltonian) -> Result<()> {
    if spec.n_sites() != h.n_sites() {
        return Err(Error::DimensionMismatch { expected: h.n_sites(), got: spec.n_sites() });
    }
    Ok(())
}

/// `sum_z (prod_i A_{i,z_i}) exp(-i E_z t) |z>`.
pub fn evolve_lbit(spec: &ProductStateSpec, h: &LBitHamiltonian, t: f64) -> Result<PureState> {
    check_sizes(spec, h)?;
    let mut psi = make_product_state(spec)?;
    for (a, &e) in psi.amplitudes_mut().iter_mut().zip(h.energies()) {
        *a *= phase_factor(e, t);
    }
    Ok(psi)
}

fn single_site_r(part: &Tripartition, spec: &ProductStateSpec, h: &LBitHamiltonian) -> Result<()> {
    if part.l_r != 1 {
        return Err(Error::InvalidPartition(format!("closed forms need L_R = 1, got {}", part.l_r)));
    }
    if part.n_sites() != h.n_sites() {
        return Err(Error::DimensionMismatch { expected: h.n_sites(), got: part.n_sites() });
    }
    check_sizes(spec, h)
}

/// `|A_{z_E}|^2` for every configuration of `E`.
fn e_weights(spec: &ProductStateSpec, part: &Tripartition) -> Vec<f64> {
    (0..part.d_e()).map(|e| spec.block_amplitude(part.e_sites(), e).norm_sqr()).collect()
}

/// Z-basis ensemble from the dephasing closed form: weights `|A_{z_S}|^2`,
/// diagonals `|A_up|^2, |A_down|^2`, and coherence
/// `A_up A_down^* sum_{z_E} |A_{z_E}|^2 exp(-i (E_up - E_down) t)`.
pub fn z_ppe_closed_form(
    spec: &ProductStateSpec,
    h: &LBitHamiltonian,
    t: f64,
    part: &Tripartition,
) -> Result<PartialProjectedEnsemble> {
    single_site_r(part, spec, h)?;
    let (de, ds) = (part.d_e(), part.d_s());
    let [a_up, a_down] = spec.site(0);
    let coherence_prefactor = a_up * a_down.conj();
    let we = e_weights(spec, part);
    let entries = (0..ds)
        .map(|s| {
            let weight = spec.block_amplitude(part.s_sites(), s).norm_sqr();
            let sum: C64 = (0..de)
                .map(|e| {
                    let up = h.energy(e * ds + s);
                    let down = h.energy((de + e) * ds + s);
                    phase_factor(up, t) * phase_factor(down, t).conj() * we[e]
                })
                .sum();
            let off = coherence_prefactor * sum;
            let rho = CMatrix::from_vec(
                2,
                vec![C64::new(a_up.norm_sqr(), 0.0), off, off.conj(), C64::new(a_down.norm_sqr(), 0.0)],
            )
            .expect("2x2");
            EnsembleEntry { outcome: s as u64, weight, rho: DensityMatrix(rho) }
        })
        .collect();
    PartialProjectedEnsemble::from_entries(2, entries)
}

/// `|X| + |Y|` with `X = sum p d^2`, `Y = sum p |d|^2` and `d` the coherence
/// minus its ensemble mean.
pub fn z_delta_from_ensemble(ens: &PartialProjectedEnsemble) -> f64 {
    let coherences: Vec<C64> = ens.entries().iter().map(|e| e.rho.matrix()[(0, 1)]).collect();
    if coherences.iter().all(|c| *c == coherences[0]) {
        return 0.0;
    }
    let mean: C64 = ens.entries().iter().zip(&coherences).map(|(e, c)| c * e.weight).sum();
    let (mut x, mut y) = (C64::new(0.0, 0.0), 0.0);
    for (e, c) in ens.entries().iter().zip(&coherences) {
        let d = c - mean;
        x += d * d * e.weight;
        y += d.norm_sqr() * e.weight;
    }
    x.norm() + y
}

pub fn z_delta_closed_form(
    spec: &ProductStateSpec,
    h: &LBitHamiltonian,
    t: f64,
    part: &Tripartition,
) -> Result<f64> {
    Ok(z_delta_from_ensemble(&z_ppe_closed_form(spec, h, t, part)?))
}

/// X-basis ensemble by exact evolution followed by projection.
pub fn x_ppe(
    spec: &ProductStateSpec,
    h: &LBitHamiltonian,
    t: f64,
    part: &Tripartition,
) -> Result<PartialProjectedEnsemble> {
    if part.n_sites() != h.n_sites() {
        return Err(Error::DimensionMismatch { expected: h.n_sites(), got: part.n_sites() });
    }
    build_ppe(&evolve_lbit(spec, h, t)?, part, &MeasurementBasis::x(part.l_s))
}

/// `sum_{z_E} |A_{z_E}|^4 = prod_{i in E} (|a_i|^4 + |b_i|^4)`.
fn e_purity(spec: &ProductStateSpec, part: &Tripartition) -> f64 {
    part.e_sites()
        .map(|i| {
            let [a, b] = spec.site(i);
            a.norm_sqr().powi(2) + b.norm_sqr().powi(2)
        })
        .product()
}

/// Dephased late-time Z-basis value `|A_up A_down|^2 sum_{z_E} |A_{z_E}|^4`.
pub fn delta_infinity_z(spec: &ProductStateSpec, part: &Tripartition) -> Result<f64> {
    if part.l_r != 1 {
        return Err(Error::InvalidPartition(format!("closed forms need L_R = 1, got {}", part.l_r)));
    }
    if spec.n_sites() != part.n_sites() {
        return Err(Error::DimensionMismatch { expected: part.n_sites(), got: spec.n_sites() });
    }
    let [a, b] = spec.site(0);
    Ok(a.norm_sqr() * b.norm_sqr() * e_purity(spec, part))
}

/// Mean of [`delta_infinity_z`] over Haar-random product states:
/// `E|a b|^2 = 1/6` and `E(|a|^4 + |b|^4) = 2/3` per site of `E`.
pub fn delta_infinity_z_haar_mean(l_e: usize) -> f64 {
    (2.0f64 / 3.0).powi(l_e as i32) / 6.0
}

/// Late-time X-basis value for one product state under the
/// `(I + S) rho^{x2}` approximation of the `R E` second moment:
/// `1/2 (1 - sum_{z_R} |A_{z_R}|^4) sum_{z_E} |A_{z_E}|^4`.
pub fn delta_infinity_x(spec: &ProductStateSpec, part: &Tripartition) -> Result<f64> {
    if spec.n_sites() != part.n_sites() {
        return Err(Error::DimensionMismatch { expected: part.n_sites(), got: spec.n_sites() });
    }
    let r_purity: f64 = part
        .r_sites()
        .map(|i| {
            let [a, b] = spec.site(i);
            a.norm_sqr().powi(2) + b.norm_sqr().powi(2)
        })
        .product();
    Ok(0.5 * (1.0 - r_purity) * e_purity(spec, part))
}

/// Haar mean of [`delta_infinity_x`]: `1/2 (1 - (2/3)^{L_R}) (2/3)^{L_E}`.
/// Only its `L_E` dependence is meaningful as a reference.
pub fn delta_infinity_x_scaling(part: &Tripartition) -> f64 {
    let q = 2.0f64 / 3.0;
    0.5 * (1.0 - q.powi(part.l_r as i32)) * q.powi(part.l_e as i32)
}
