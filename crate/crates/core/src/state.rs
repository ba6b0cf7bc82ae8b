//! Statevector and density-matrix primitives.
//!
//! Site `0` is the most significant bit of a basis index; bit value `0` is
//! spin up. With `R` occupying the leftmost sites and `S` the rightmost, an
//! index decomposes as `(z_R, z_E, z_S)` read from the high bits down.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// Largest chain handled by the dense routines.
pub const MAX_SITES: usize = 22;
/// Outcomes less likely than this are dropped from ensembles.
pub const P_FLOOR: f64 = 1e-14;
/// Dense phase tables are only materialized up to this many sites.
pub const PHASE_TABLE_MAX_SITES: usize = 16;

const SPEC_NORM_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-12;

/// The `R | E | S` split of a chain, laid out left to right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tripartition {
    pub l_r: usize,
    pub l_e: usize,
    pub l_s: usize,
}

impl Tripartition {
    pub fn new(l_r: usize, l_e: usize, l_s: usize) -> Result<Self> {
        Self::with_cap(l_r, l_e, l_s, MAX_SITES)
    }

    pub fn with_cap(l_r: usize, l_e: usize, l_s: usize, cap: usize) -> Result<Self> {
        if l_r == 0 {
            return Err(Error::InvalidPartition("R must contain at least one site".into()));
        }
        if l_s == 0 {
            return Err(Error::InvalidPartition("S must contain at least one site".into()));
        }
        if l_r + l_e + l_s > cap {
            return Err(Error::InvalidPartition(format!(
                "{} sites exceed the cap of {cap}",
                l_r + l_e + l_s
            )));
        }
        Ok(Self { l_r, l_e, l_s })
    }

    pub fn n_sites(&self) -> usize {
        self.l_r + self.l_e + self.l_s
    }

    pub fn d_r(&self) -> usize {
        1 << self.l_r
    }

    pub fn d_e(&self) -> usize {
        1 << self.l_e
    }

    pub fn d_s(&self) -> usize {
        1 << self.l_s
    }

    pub fn r_sites(&self) -> std::ops::Range<usize> {
        0..self.l_r
    }

    pub fn e_sites(&self) -> std::ops::Range<usize> {
        self.l_r..self.l_r + self.l_e
    }

    pub fn s_sites(&self) -> std::ops::Range<usize> {
        self.l_r + self.l_e..self.n_sites()
    }
}

/// Per-site amplitude pairs `(A_up, A_down)` of a product state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductStateSpec {
    sites: Vec<[C64; 2]>,
}

impl ProductStateSpec {
    pub fn new(sites: Vec<[C64; 2]>) -> Result<Self> {
        for (i, [a, b]) in sites.iter().enumerate() {
            let n = a.norm_sqr() + b.norm_sqr();
            if (n - 1.0).abs() > SPEC_NORM_TOL {
                return Err(Error::InvalidSpec(format!("site {i} has norm^2 {n}")));
            }
        }
        Ok(Self { sites })
    }

    /// Every site in `|up>`.
    pub fn polarized_up(n: usize) -> Self {
        Self { sites: vec![[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]; n] }
    }

    /// `|+>` on every site.
    pub fn plus(n: usize) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { sites: vec![[C64::new(h, 0.0), C64::new(h, 0.0)]; n] }
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[[C64; 2]] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> [C64; 2] {
        self.sites[i]
    }

    /// `prod_i A_{i, z_i}` for the sites `range`, with `bits` holding those
    /// sites' spins most significant first.
    pub fn block_amplitude(&self, range: std::ops::Range<usize>, bits: usize) -> C64 {
        let len = range.len();
        range
            .enumerate()
            .map(|(k, site)| self.sites[site][(bits >> (len - 1 - k)) & 1])
            .product()
    }
}

/// Haar-random single-qubit state on every site, reproducible from `seed`.
pub fn random_product_state(n: usize, seed: u64) -> ProductStateSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_product_state_with(n, &mut rng)
}

pub fn random_product_state_with(n: usize, rng: &mut impl rand::Rng) -> ProductStateSpec {
    let sites = (0..n)
        .map(|_| {
            let mut draw = || {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im)
            };
            let (a, b) = (draw(), draw());
            let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
            [a / norm, b / norm]
        })
        .collect();
    ProductStateSpec { sites }
}

/// Dense statevector over `2^n` computational basis states.
#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n_sites: usize,
    amps: Vec<C64>,
}

impl PureState {
    pub fn from_amplitudes(n_sites: usize, amps: Vec<C64>) -> Result<Self> {
        if n_sites > MAX_SITES {
            return Err(Error::SizeCap(format!("{n_sites} sites")));
        }
        if amps.len() != 1 << n_sites {
            return Err(Error::DimensionMismatch { expected: 1 << n_sites, got: amps.len() });
        }
        Ok(Self { n_sites, amps })
    }

    pub fn basis_state(n_sites: usize, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_sites];
        amps[index] = C64::new(1.0, 0.0);
        Self { n_sites, amps }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|<z|psi>|^2` for every basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        DensityMatrix(CMatrix::outer(&self.amps))
    }

    /// Bit position of `site` inside a basis index.
    #[inline]
    pub fn bit_of(&self, site: usize) -> usize {
        self.n_sites - 1 - site
    }
}

/// Hermitian, unit-trace operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(pub CMatrix);

impl DensityMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const EIG_TOL: f64 = -1e-9;

    pub fn new(m: CMatrix) -> Result<Self> {
        let dm = Self(m);
        dm.validate()?;
        Ok(dm)
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self(CMatrix::identity(d).scale(1.0 / d as f64))
    }

    pub fn pure(v: &[C64]) -> Self {
        Self(CMatrix::outer(v))
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.0.hermiticity_error();
        if h > Self::HERMITIAN_TOL {
            return Err(Error::InvalidArgument(format!("not Hermitian (error {h:e})")));
        }
        let tr = self.0.trace();
        if (tr.re - 1.0).abs() > Self::TRACE_TOL || tr.im.abs() > Self::TRACE_TOL {
            return Err(Error::InvalidArgument(format!("trace {tr} != 1")));
        }
        let min = self.0.eigvalsh().first().copied().unwrap_or(0.0);
        if min < Self::EIG_TOL {
            return Err(Error::InvalidArgument(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    /// Diagonal `<z|rho|z>`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }
}

/// Single-site measurement basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SiteBasis {
    Z,
    X,
    /// Outcome 0 is `cos(theta/2)|up> + e^{i phi} sin(theta/2)|down>`.
    Tilted { theta: f64, phi: f64 },
}

impl SiteBasis {
    /// Row `k` holds the amplitudes of basis vector `k`.
    pub fn vectors(&self) -> [[C64; 2]; 2] {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        match *self {
            SiteBasis::Z => [[one, zero], [zero, one]],
            SiteBasis::X => {
                let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                [[h, h], [h, -h]]
            }
            SiteBasis::Tilted { theta, phi } => {
                let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
                let e = C64::from_polar(1.0, phi);
                [[C64::new(c, 0.0), e * s], [C64::new(s, 0.0), -e * c]]
            }
        }
    }

    /// Change of basis `V` with `V_{k,s} = conj(b_k[s])`; `V|psi>` holds the
    /// outcome amplitudes.
    pub fn projection_matrix(&self) -> CMatrix {
        let v = self.vectors();
        CMatrix::from_fn(2, |k, s| v[k][s].conj())
    }
}

/// Tensor-product basis over the measured sites, in site order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBasis {
    pub sites: Vec<SiteBasis>,
}

impl MeasurementBasis {
    pub fn uniform(basis: SiteBasis, n: usize) -> Self {
        Self { sites: vec![basis; n] }
    }

    pub fn z(n: usize) -> Self {
        Self::uniform(SiteBasis::Z, n)
    }

    pub fn x(n: usize) -> Self {
        Self::uniform(SiteBasis::X, n)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// `|psi> = prod_i (A_{i,up}|up> + A_{i,down}|down>)`.
pub fn make_product_state(spec: &ProductStateSpec) -> Result<PureState> {
    let n = spec.n_sites();
    if n > MAX_SITES {
        return Err(Error::SizeCap(format!("{n} sites")));
    }
    ProductStateSpec::new(spec.sites.clone())?;
    let mut amps = vec![C64::new(1.0, 0.0)];
    for pair in &spec.sites {
        let mut next = Vec::with_capacity(amps.len() * 2);
        for a in &amps {
            next.push(a * pair[0]);
            next.push(a * pair[1]);
        }
        amps = next;
    }
    Ok(PureState { n_sites: n, amps })
}

/// Applies a 2x2 unitary to `site` in place.
pub fn apply_one_qubit(state: &mut PureState, site: usize, u: &CMatrix) -> Result<()> {
    if u.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: u.dim() });
    }
    let err = u.unitarity_error();
    if err > UNITARY_TOL {
        return Err(Error::NonUnitary(err));
    }
    apply_one_qubit_unchecked(state, site, [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]);
    Ok(())
}

/// Stride update without the unitarity check, for hot loops whose gates are
/// unitary by construction.
pub(crate) fn apply_one_qubit_unchecked(state: &mut PureState, site: usize, u: [[C64; 2]; 2]) {
    assert!(site < state.n_sites, "site {site} out of range");
    let stride = 1usize << state.bit_of(site);
    let amps = &mut state.amps;
    let block = stride << 1;
    for base in (0..amps.len()).step_by(block) {
        for i in base..base + stride {
            let a0 = amps[i];
            let a1 = amps[i + stride];
            amps[i] = u[0][0] * a0 + u[0][1] * a1;
            amps[i + stride] = u[1][0] * a0 + u[1][1] * a1;
        }
    }
}

/// One term of a diagonal generator `phi(z) = sum_terms c * prod_{i in set} z_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DiagonalTerm {
    Field { site: usize, h: f64 },
    Coupling { a: usize, b: usize, j: f64 },
    Subset { sites: Vec<usize>, j: f64 },
}

/// Diagonal phase generator given as field / coupling lists, expanded per
/// basis index on demand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGenerator {
    pub terms: Vec<DiagonalTerm>,
}

impl DiagonalGenerator {
    pub fn new(terms: Vec<DiagonalTerm>) -> Self {
        Self { terms }
    }

    /// `(bitmask, coefficient)` pairs for an `n`-site chain.
    fn masks(&self, n: usize) -> Result<Vec<(usize, f64)>> {
        let bit = |site: usize| -> Result<usize> {
            if site >= n {
                return Err(Error::InvalidArgument(format!("site {site} out of range for {n}")));
            }
            Ok(1usize << (n - 1 - site))
        };
        self.terms
            .iter()
            .map(|t| match t {
                DiagonalTerm::Field { site, h } => Ok((bit(*site)?, *h)),
                DiagonalTerm::Coupling { a, b, j } => Ok((bit(*a)? ^ bit(*b)?, *j)),
                DiagonalTerm::Subset { sites, j } => {
                    let mut m = 0;
                    for &s in sites {
                        m ^= bit(s)?;
                    }
                    Ok((m, *j))
                }
            })
            .collect()
    }

    fn angle_from_masks(masks: &[(usize, f64)], index: usize) -> f64 {
        masks
            .iter()
            .map(|&(m, c)| if (m & index).count_ones().is_multiple_of(2) { c } else { -c })
            .sum()
    }

    /// `phi(z)` for a single basis index.
    pub fn angle(&self, n: usize, index: usize) -> Result<f64> {
        Ok(Self::angle_from_masks(&self.masks(n)?, index))
    }

    /// Dense `phi(z)` table; refused above [`PHASE_TABLE_MAX_SITES`].
    pub fn angle_table(&self, n: usize) -> Result<Vec<f64>> {
        if n > PHASE_TABLE_MAX_SITES {
            return Err(Error::SizeCap(format!("dense phase table for {n} sites")));
        }
        let masks = self.masks(n)?;
        Ok((0..1usize << n).map(|i| Self::angle_from_masks(&masks, i)).collect())
    }
}

/// `amplitude(z) *= exp(-i phi(z))`.
pub fn apply_diagonal(state: &mut PureState, generator: &DiagonalGenerator) -> Result<()> {
    let n = state.n_sites;
    let masks = generator.masks(n)?;
    for (i, a) in state.amps.iter_mut().enumerate() {
        let phi = DiagonalGenerator::angle_from_masks(&masks, i);
        *a *= C64::from_polar(1.0, -phi);
    }
    Ok(())
}

/// Multiplies by precomputed unit-modulus factors.
pub fn apply_phase_factors(state: &mut PureState, factors: &[C64]) -> Result<()> {
    if factors.len() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), got: factors.len() });
    }
    for (a, f) in state.amps.iter_mut().zip(factors) {
        *a *= f;
    }
    Ok(())
}

fn normalize_sites(n: usize, keep: &[usize]) -> Result<Vec<usize>> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("empty keep set".into()));
    }
    let mut k = keep.to_vec();
    k.sort_unstable();
    k.dedup();
    if let Some(&bad) = k.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidArgument(format!("site {bad} out of range for {n} sites")));
    }
    Ok(k)
}

/// Splits a basis index into `(kept, traced)` compact indices.
fn split_index(n: usize, keep_mask: &[bool], index: usize) -> (usize, usize) {
    let (mut k, mut e) = (0, 0);
    for (site, &kept) in keep_mask.iter().enumerate() {
        let b = (index >> (n - 1 - site)) & 1;
        if kept {
            k = (k << 1) | b;
        } else {
            e = (e << 1) | b;
        }
    }
    (k, e)
}

/// Reduced state on `keep` (sites in ascending order, lowest site most
/// significant).
pub fn partial_trace(state: &PureState, keep: &[usize]) -> Result<DensityMatrix> {
    let n = state.n_sites;
    let keep = normalize_sites(n, keep)?;
    let mut mask = vec![false; n];
    for &s in &keep {
        mask[s] = true;
    }
    let dk = 1usize << keep.len();
    let de = 1usize << (n - keep.len());
    // columns of M indexed by the kept configuration
    let mut m = vec![C64::new(0.0, 0.0); de * dk];
    for (i, a) in state.amps.iter().enumerate() {
        let (k, e) = split_index(n, &mask, i);
        m[e * dk + k] = *a;
    }
    let mut rho = CMatrix::zeros(dk);
    for e in 0..de {
        let row = &m[e * dk..(e + 1) * dk];
        for k in 0..dk {
            if row[k] == C64::new(0.0, 0.0) {
                continue;
            }
            for kp in 0..dk {
                rho[(k, kp)] += row[k] * row[kp].conj();
            }
        }
    }
    Ok(DensityMatrix(rho))
}

/// Z-basis marginal distribution on `keep`; cheaper than the diagonal of
/// [`partial_trace`] when `keep` is large.
pub fn marginal_probabilities(state: &PureState, keep: &[usize]) -> Result<Vec<f64>> {
    let n = state.n_sites;
    let keep = normalize_sites(n, keep)?;
    let mut mask = vec![false; n];
    for &s in &keep {
        mask[s] = true;
    }
    let mut p = vec![0.0; 1 << keep.len()];
    for (i, a) in state.amps.iter().enumerate() {
        p[split_index(n, &mask, i).0] += a.norm_sqr();
    }
    Ok(p)
}

/// Partial trace of an `n`-site density matrix.
pub fn partial_trace_dm(dm: &DensityMatrix, n: usize, keep: &[usize]) -> Result<DensityMatrix> {
    if dm.dim() != 1 << n {
        return Err(Error::DimensionMismatch { expected: 1 << n, got: dm.dim() });
    }
    let keep = normalize_sites(n, keep)?;
    let mut mask = vec![false; n];
    for &s in &keep {
        mask[s] = true;
    }
    let dk = 1usize << keep.len();
    let split: Vec<(usize, usize)> = (0..dm.dim()).map(|i| split_index(n, &mask, i)).collect();
    let mut rho = CMatrix::zeros(dk);
    for (i, &(k, e)) in split.iter().enumerate() {
        for (j, &(kp, ep)) in split.iter().enumerate() {
            if e == ep {
                rho[(k, kp)] += dm.0[(i, j)];
            }
        }
    }
    Ok(DensityMatrix(rho))
}

/// Copy of `state` with each `S` site rotated into its measurement basis, so
/// that the low `l_s` bits of an index are outcome labels.
pub fn rotate_measured_region(
    state: &PureState,
    part: &Tripartition,
    basis: &MeasurementBasis,
) -> Result<PureState> {
    check_layout(state, part, basis)?;
    let mut rotated = state.clone();
    for (k, site) in part.s_sites().enumerate() {
        if basis.sites[k] == SiteBasis::Z {
            continue;
        }
        let v = basis.sites[k].projection_matrix();
        apply_one_qubit_unchecked(
            &mut rotated,
            site,
            [[v[(0, 0)], v[(0, 1)]], [v[(1, 0)], v[(1, 1)]]],
        );
    }
    Ok(rotated)
}

pub(crate) fn check_layout(
    state: &PureState,
    part: &Tripartition,
    basis: &MeasurementBasis,
) -> Result<()> {
    if state.n_sites != part.n_sites() {
        return Err(Error::DimensionMismatch { expected: part.n_sites(), got: state.n_sites });
    }
    if basis.len() != part.l_s {
        return Err(Error::DimensionMismatch { expected: part.l_s, got: basis.len() });
    }
    Ok(())
}

/// Outcome probability and conditional state of `R`.
#[derive(Clone, Debug)]
pub struct Conditional {
    pub probability: f64,
    pub rho: DensityMatrix,
}

/// Unnormalized `Tr_{ES}[Pi_o rho Pi_o]` for outcome `o` of a state whose
/// `S` region is already in the measurement basis.
pub(crate) fn conditional_block(rotated: &PureState, part: &Tripartition, outcome: usize) -> CMatrix {
    let (dr, de, ds) = (part.d_r(), part.d_e(), part.d_s());
    let amps = rotated.amplitudes();
    let mut rho = CMatrix::zeros(dr);
    for e in 0..de {
        for r in 0..dr {
            let a = amps[(r * de + e) * ds + outcome];
            if a == C64::new(0.0, 0.0) {
                continue;
            }
            for rp in 0..dr {
                rho[(r, rp)] += a * amps[(rp * de + e) * ds + outcome].conj();
            }
        }
    }
    rho
}

/// `p(o_S)` and `rho_R(o_S)`; outcomes below [`P_FLOOR`] are reported as
/// [`Error::UndefinedConditionalState`].
pub fn project_and_condition(
    state: &PureState,
    part: &Tripartition,
    basis: &MeasurementBasis,
    outcome: usize,
) -> Result<Conditional> {
    if outcome >= part.d_s() {
        return Err(Error::InvalidArgument(format!("outcome {outcome} has more than {} bits", part.l_s)));
    }
    let rotated = rotate_measured_region(state, part, basis)?;
    let block = conditional_block(&rotated, part, outcome);
    let p = block.trace().re;
    if p < P_FLOOR {
        return Err(Error::UndefinedConditionalState(p));
    }
    Ok(Conditional { probability: p, rho: DensityMatrix(block.scale(1.0 / p)) })
}

/// `1/2 ||a - b||_1` via the Jacobi eigensolver.
pub fn trace_norm_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(0.5 * (a - b).trace_norm())
}
