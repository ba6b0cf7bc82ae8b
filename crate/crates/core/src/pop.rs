//! Probability-of-probabilities (PoP) histograms and reference laws.
//!
//! Relative probabilities `p~` have unit mean by construction. Histograms keep
//! running moments and the mass at `p~ = 1` independently of the binning, and
//! an exact sample list while it stays small.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppe::PartialProjectedEnsemble;
use crate::quad;
use crate::state::{DensityMatrix, P_FLOOR};

/// Exact samples are retained up to this many entries.
pub const EXACT_SAMPLE_CAP: usize = 1 << 16;
/// Largest Mellin product enumerated.
pub const MELLIN_CAP: usize = 1 << 20;
/// A histogram is a delta at one when this fraction of its mass sits within
/// [`DELTA_WINDOW`] of one.
pub const DELTA_MASS: f64 = 1.0 - 1e-9;
pub const DELTA_WINDOW: f64 = 1e-8;

pub const KLD_BINS: usize = 64;
pub const KLD_FLOOR: f64 = 1e-4;
pub const KLD_HEADROOM: f64 = 1.05;
pub const KLD_SMOOTHING: f64 = 1e-9;

const BIN_QUAD_TOL: f64 = 1e-13;
const BIN_QUAD_PANELS: usize = 8;

/// Strictly increasing bin edges. Values below the first edge land in the
/// first bin and values at or above the last edge in the last bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    edges: Vec<f64>,
}

impl Binning {
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidArgument("binning needs at least two edges".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("bin edges must be finite and increasing".into()));
        }
        Ok(Self { edges })
    }

    pub fn linear(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("zero bins".into()));
        }
        let w = (hi - lo) / n as f64;
        Self::from_edges((0..=n).map(|k| if k == n { hi } else { lo + w * k as f64 }).collect())
    }

    /// `n` log-spaced bins over `[lo, hi]` preceded by an underflow bin `[0, lo)`.
    pub fn log_with_underflow(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0) || !(hi > lo) || n == 0 {
            return Err(Error::InvalidArgument(format!("log binning over [{lo}, {hi}] with {n} bins")));
        }
        let r = (hi / lo).ln() / n as f64;
        let mut edges = vec![0.0];
        edges.extend((0..=n).map(|k| if k == n { hi } else { lo * (r * k as f64).exp() }));
        Self::from_edges(edges)
    }

    /// Grid shared by both sides of a KL comparison.
    pub fn kld_grid(max_value: f64) -> Result<Self> {
        let hi = (max_value * KLD_HEADROOM).max(KLD_FLOOR * 2.0);
        Self::log_with_underflow(KLD_FLOOR, hi, KLD_BINS)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn bin_index(&self, x: f64) -> usize {
        let k = self.edges.partition_point(|&e| e <= x);
        k.saturating_sub(1).min(self.n_bins() - 1)
    }
}

/// Weighted histogram of relative probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PoPHistogram {
    binning: Binning,
    raw: Vec<f64>,
    total: f64,
    count: usize,
    sum1: f64,
    sum2: f64,
    near_one: f64,
    samples: Option<Vec<(f64, f64)>>,
}

impl PoPHistogram {
    pub fn empty(binning: Binning) -> Self {
        let n = binning.n_bins();
        Self {
            binning,
            raw: vec![0.0; n],
            total: 0.0,
            count: 0,
            sum1: 0.0,
            sum2: 0.0,
            near_one: 0.0,
            samples: Some(Vec::new()),
        }
    }

    /// From `(weight, value)` pairs.
    pub fn from_weighted(binning: Binning, samples: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut h = Self::empty(binning);
        for (w, x) in samples {
            h.push(w, x);
        }
        h
    }

    pub fn push(&mut self, weight: f64, value: f64) {
        self.raw[self.binning.bin_index(value)] += weight;
        self.total += weight;
        self.count += 1;
        self.sum1 += weight * value;
        self.sum2 += weight * value * value;
        if (value - 1.0).abs() < DELTA_WINDOW {
            self.near_one += weight;
        }
        if let Some(s) = &mut self.samples {
            if s.len() < EXACT_SAMPLE_CAP {
                s.push((weight, value));
            } else {
                self.samples = None;
            }
        }
    }

    /// Pools two histograms on the same grid; each keeps its own total weight.
    pub fn merge(&mut self, other: &PoPHistogram) -> Result<()> {
        if self.binning != other.binning {
            return Err(Error::InvalidArgument("cannot merge histograms on different grids".into()));
        }
        for (a, b) in self.raw.iter_mut().zip(&other.raw) {
            *a += b;
        }
        self.total += other.total;
        self.count += other.count;
        self.sum1 += other.sum1;
        self.sum2 += other.sum2;
        self.near_one += other.near_one;
        self.samples = match (self.samples.take(), &other.samples) {
            (Some(mut a), Some(b)) if a.len() + b.len() <= EXACT_SAMPLE_CAP => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        Ok(())
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Bin masses normalized to one.
    pub fn masses(&self) -> Vec<f64> {
        if self.total <= 0.0 {
            return self.raw.clone();
        }
        self.raw.iter().map(|m| m / self.total).collect()
    }

    pub fn mean(&self) -> f64 {
        self.sum1 / self.total
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.sum2 / self.total - m * m
    }

    /// Exact `(weight, value)` samples with weights normalized to one.
    pub fn samples(&self) -> Option<Vec<(f64, f64)>> {
        self.samples
            .as_ref()
            .map(|s| s.iter().map(|&(w, x)| (w / self.total, x)).collect())
    }

    pub fn max_value(&self) -> Option<f64> {
        self.samples.as_ref().map(|s| s.iter().map(|&(_, x)| x).fold(0.0, f64::max))
    }

    pub fn is_delta_at_one(&self) -> bool {
        self.total > 0.0 && self.near_one >= DELTA_MASS * self.total
    }

    /// Re-histograms the exact samples on a new grid.
    pub fn rebin(&self, binning: &Binning) -> Result<PoPHistogram> {
        let samples = self
            .samples
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("exact samples were not retained".into()))?;
        Ok(Self::from_weighted(binning.clone(), samples.iter().copied()))
    }

    /// `1/2 sum |m_i - q_i|` against masses on the same grid.
    pub fn total_variation(&self, other: &[f64]) -> Result<f64> {
        if other.len() != self.raw.len() {
            return Err(Error::DimensionMismatch { expected: self.raw.len(), got: other.len() });
        }
        Ok(0.5 * self.masses().iter().zip(other).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// CSV with `bin_lo,bin_hi,mass` and an optional reference column.
    pub fn write_csv(&self, w: impl Write, reference: Option<&[f64]>) -> Result<()> {
        if let Some(r) = reference {
            if r.len() != self.raw.len() {
                return Err(Error::DimensionMismatch { expected: self.raw.len(), got: r.len() });
            }
        }
        let mut out = csv::Writer::from_writer(w);
        if reference.is_some() {
            out.write_record(["bin_lo", "bin_hi", "mass", "reference_mass"])?;
        } else {
            out.write_record(["bin_lo", "bin_hi", "mass"])?;
        }
        let edges = self.binning.edges();
        for (k, m) in self.masses().iter().enumerate() {
            let mut rec = vec![edges[k].to_string(), edges[k + 1].to_string(), m.to_string()];
            if let Some(r) = reference {
                rec.push(r[k].to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `(p(o_S), p~(z_R|o_S))` for every outcome of the ensemble.
pub fn relative_conditional_probs(
    ens: &PartialProjectedEnsemble,
    z_r: usize,
) -> Result<Vec<(f64, f64)>> {
    if z_r >= ens.d_r() {
        return Err(Error::InvalidArgument(format!("z_R = {z_r} outside dimension {}", ens.d_r())));
    }
    let cond: Vec<(f64, f64)> = ens
        .entries()
        .iter()
        .map(|e| (e.weight, e.rho.matrix()[(z_r, z_r)].re))
        .collect();
    let denom: f64 = cond.iter().map(|(w, p)| w * p).sum();
    if denom < P_FLOOR {
        return Err(Error::UndefinedConditionalState(denom));
    }
    Ok(cond.into_iter().map(|(w, p)| (w, p / denom)).collect())
}

/// PoP over the ensemble for bit-string `z_r`, weighted by `p(o_S)`.
pub fn pop_ppe(ens: &PartialProjectedEnsemble, z_r: usize, binning: &Binning) -> Result<PoPHistogram> {
    Ok(PoPHistogram::from_weighted(binning.clone(), relative_conditional_probs(ens, z_r)?))
}

/// PoP over bit-strings: samples `D p(z)` with weight `1/D`.
pub fn pop_from_probabilities(probs: &[f64], binning: &Binning) -> PoPHistogram {
    let d = probs.len() as f64;
    PoPHistogram::from_weighted(binning.clone(), probs.iter().map(|&p| (1.0 / d, d * p)))
}

pub fn pop_bitstrings(dm: &DensityMatrix, binning: &Binning) -> PoPHistogram {
    pop_from_probabilities(&dm.diagonal(), binning)
}

/// Distribution of products `p~_a p~_b` of independent draws, on `binning`.
pub fn mellin_convolve(a: &PoPHistogram, b: &PoPHistogram, binning: &Binning) -> Result<PoPHistogram> {
    let (sa, sb) = match (a.samples(), b.samples()) {
        (Some(sa), Some(sb)) => (sa, sb),
        _ => return Err(Error::InvalidArgument("Mellin convolution needs exact samples".into())),
    };
    if sa.len() * sb.len() > MELLIN_CAP {
        return Err(Error::SizeCap(format!("{} x {} Mellin products", sa.len(), sb.len())));
    }
    let mut h = PoPHistogram::empty(binning.clone());
    for &(wa, xa) in &sa {
        for &(wb, xb) in &sb {
            h.push(wa * wb, xa * xb);
        }
    }
    Ok(h)
}

/// `sum_i p_i ln(p_i / q_i)` on a shared grid; `+inf` when `q_i = 0 < p_i`.
pub fn kl_divergence(p: &PoPHistogram, q: &PoPHistogram) -> Result<f64> {
    if p.binning != q.binning {
        return Err(Error::InvalidArgument("KL divergence needs a shared grid".into()));
    }
    Ok(kl_masses(&p.masses(), &q.masses()))
}

pub fn kl_masses(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        kl += pi * (pi / qi).ln();
    }
    kl.max(0.0)
}

/// Adds `eps` to every bin and renormalizes.
pub fn smoothed(masses: &[f64], eps: f64) -> Vec<f64> {
    let z = 1.0 + eps * masses.len() as f64;
    masses.iter().map(|m| (m + eps) / z).collect()
}

/// KL divergence after rebinning both sides' exact samples onto
/// [`Binning::kld_grid`] and smoothing the `q` side.
pub fn kl_divergence_common_grid(p: &PoPHistogram, q: &PoPHistogram) -> Result<f64> {
    let max = p.max_value().zip(q.max_value()).map(|(a, b)| a.max(b)).ok_or_else(|| {
        Error::InvalidArgument("common-grid KL divergence needs exact samples".into())
    })?;
    let grid = Binning::kld_grid(max)?;
    let pp = p.rebin(&grid)?.masses();
    let qq = smoothed(&q.rebin(&grid)?.masses(), KLD_SMOOTHING);
    Ok(kl_masses(&pp, &qq))
}

/// Analytic PoP laws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReferenceDensity {
    PorterThomas,
    Erlang { d_e: u64 },
    /// Self-dual kicked Ising law after `t` periods for `L_RE = l_re`.
    SdkiBeta { t: u32, l_re: u32 },
    Delta,
}

impl ReferenceDensity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferenceDensity::Erlang { d_e: 0 } => {
                Err(Error::InvalidArgument("Erlang order must be positive".into()))
            }
            ReferenceDensity::SdkiBeta { t, l_re } if t > 60 || l_re > 60 => {
                Err(Error::InvalidArgument(format!("beta law with t={t}, L_RE={l_re} out of range")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_delta(&self) -> bool {
        match *self {
            ReferenceDensity::Delta => true,
            ReferenceDensity::SdkiBeta { t, l_re } => t <= l_re,
            _ => false,
        }
    }

    /// `(D_t, D_RE)` of a non-degenerate beta law.
    fn beta_dims(t: u32, l_re: u32) -> (f64, f64) {
        ((2.0f64).powi(t as i32), (2.0f64).powi(l_re as i32))
    }

    /// Density at `p`. Delta laws evaluate to zero; use [`Self::bin_masses`].
    pub fn density(&self, p: f64) -> f64 {
        if p < 0.0 || self.is_delta() {
            return 0.0;
        }
        match *self {
            ReferenceDensity::PorterThomas => (-p).exp(),
            ReferenceDensity::Erlang { d_e } => {
                let d = d_e as f64;
                if p == 0.0 {
                    return if d_e == 1 { 1.0 } else { 0.0 };
                }
                (d * d.ln() - libm::lgamma(d) - d * p + (d - 1.0) * p.ln()).exp()
            }
            ReferenceDensity::SdkiBeta { t, l_re } => {
                let (dt, dre) = Self::beta_dims(t, l_re);
                let x = dre * p / dt;
                if x >= 1.0 {
                    return 0.0;
                }
                let (a, b) = (dre - 1.0, dt - dre - 1.0);
                let log_x = if a == 0.0 { 0.0 } else if x == 0.0 { return 0.0 } else { a * x.ln() };
                let log_1mx = if b == 0.0 { 0.0 } else { b * (-x).ln_1p() };
                (libm::lgamma(dt) - libm::lgamma(dre) - libm::lgamma(dt - dre) + (dre / dt).ln()
                    + log_x
                    + log_1mx)
                    .exp()
            }
            ReferenceDensity::Delta => 0.0,
        }
    }

    /// Right end of the region that carries all but ~1e-16 of the mass.
    pub fn upper_limit(&self) -> f64 {
        match *self {
            ReferenceDensity::PorterThomas => 40.0,
            ReferenceDensity::Erlang { d_e } => {
                let d = d_e as f64;
                1.0 + 12.0 / d.sqrt() + 40.0 / d
            }
            ReferenceDensity::SdkiBeta { t, l_re } if t > l_re => {
                let (dt, dre) = Self::beta_dims(t, l_re);
                let erlang = ReferenceDensity::Erlang { d_e: dre as u64 }.upper_limit();
                (dt / dre).min(erlang)
            }
            _ => 1.0,
        }
    }

    /// Probability mass in each bin; the first bin extends down to zero and
    /// the last one up to the end of the support.
    pub fn bin_masses(&self, binning: &Binning) -> Vec<f64> {
        let n = binning.n_bins();
        let mut out = vec![0.0; n];
        if self.is_delta() {
            out[binning.bin_index(1.0)] = 1.0;
            return out;
        }
        let edges = binning.edges();
        let top = self.upper_limit();
        for (k, m) in out.iter_mut().enumerate() {
            let lo = if k == 0 { 0.0 } else { edges[k] };
            let hi = if k + 1 == n { top.max(edges[k + 1]) } else { edges[k + 1] };
            let (lo, hi) = (lo.min(top), hi.min(top));
            *m = quad::integrate(|p| self.density(p), lo, hi, BIN_QUAD_TOL, BIN_QUAD_PANELS);
        }
        out
    }

    pub fn mean(&self) -> f64 {
        1.0
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ReferenceDensity::PorterThomas => 1.0,
            ReferenceDensity::Erlang { d_e } => 1.0 / d_e as f64,
            ReferenceDensity::SdkiBeta { t, l_re } => sdki_pop_moment(2, t, l_re) - 1.0,
            ReferenceDensity::Delta => 0.0,
        }
    }
}

/// `E[p~^q]` of the self-dual law: `(D_t/D_RE)^q prod_{a<q} (D_RE+a)/(D_t+a)`,
/// and 1 in the delta case `t <= L_RE`.
pub fn sdki_pop_moment(q: u32, t: u32, l_re: u32) -> f64 {
    if t <= l_re {
        return 1.0;
    }
    let (dt, dre) = ReferenceDensity::beta_dims(t, l_re);
    (0..q).map(|a| (dt / dre) * (dre + a as f64) / (dt + a as f64)).product()
}
