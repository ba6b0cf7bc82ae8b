//! Partial projected ensembles and their moments.

use std::io::{Read, Write};

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::state::{
    conditional_block, rotate_measured_region, trace_norm_distance, DensityMatrix,
    MeasurementBasis, PureState, Tripartition, P_FLOOR,
};

/// `k * L_R` above this is refused by [`moment`].
pub const MOMENT_QUBIT_CAP: usize = 12;
const WEIGHT_TOL: f64 = 1e-10;
const PAR_OUTCOME_THRESHOLD: usize = 64;

#[derive(Clone, Debug)]
pub struct EnsembleEntry {
    pub outcome: u64,
    pub weight: f64,
    pub rho: DensityMatrix,
}

/// Weighted conditional states `{p(o_S), rho_R(o_S)}`, ordered by outcome.
#[derive(Clone, Debug)]
pub struct PartialProjectedEnsemble {
    d_r: usize,
    entries: Vec<EnsembleEntry>,
}

impl PartialProjectedEnsemble {
    /// Drops entries below [`P_FLOOR`] and renormalizes the rest.
    pub fn from_entries(d_r: usize, entries: Vec<EnsembleEntry>) -> Result<Self> {
        let before = entries.len();
        let mut entries: Vec<_> = entries.into_iter().filter(|e| e.weight >= P_FLOOR).collect();
        if entries.is_empty() {
            return Err(Error::InvalidArgument("ensemble has no outcome above the floor".into()));
        }
        if let Some(e) = entries.iter().find(|e| e.rho.dim() != d_r) {
            return Err(Error::DimensionMismatch { expected: d_r, got: e.rho.dim() });
        }
        let total: f64 = entries.iter().map(|e| e.weight).sum();
        if entries.len() != before || (total - 1.0).abs() > WEIGHT_TOL {
            log::debug!(
                "renormalizing ensemble: kept {} of {before} outcomes, total weight {total}",
                entries.len()
            );
        }
        for e in &mut entries {
            e.weight /= total;
        }
        Ok(Self { d_r, entries })
    }

    pub fn d_r(&self) -> usize {
        self.d_r
    }

    pub fn entries(&self) -> &[EnsembleEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// Writes the versioned little-endian dump.
    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.d_r as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&e.outcome.to_le_bytes())?;
            w.write_all(&e.weight.to_le_bytes())?;
            for z in e.rho.matrix().as_slice() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let d_r = read_u32(r)? as usize;
        if d_r == 0 || d_r > 1 << 12 {
            return Err(Error::Format(format!("implausible dimension {d_r}")));
        }
        let n = read_u64(r)? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let outcome = read_u64(r)?;
            let weight = read_f64(r)?;
            let mut data = Vec::with_capacity(d_r * d_r);
            for _ in 0..d_r * d_r {
                let re = read_f64(r)?;
                let im = read_f64(r)?;
                data.push(C64::new(re, im));
            }
            entries.push(EnsembleEntry { outcome, weight, rho: DensityMatrix(CMatrix::from_vec(d_r, data)?) });
        }
        Ok(Self { d_r, entries })
    }
}

const DUMP_MAGIC: &[u8; 8] = b"PPEDUMP\0";
const DUMP_VERSION: u32 = 1;

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// `k`-th moment `sum_o p(o) rho(o)^{(x) k}` on `D_R^k` dimensions.
#[derive(Clone, Debug)]
pub struct EnsembleMoment {
    pub order: usize,
    pub matrix: CMatrix,
}

/// Enumerates all `2^{L_S}` outcomes of `basis` on `S`.
pub fn build_ppe(
    state: &PureState,
    part: &Tripartition,
    basis: &MeasurementBasis,
) -> Result<PartialProjectedEnsemble> {
    let rotated = rotate_measured_region(state, part, basis)?;
    let make = |o: usize| {
        let block = conditional_block(&rotated, part, o);
        let p = block.trace().re;
        let rho = if p >= P_FLOOR { block.scale(1.0 / p) } else { block };
        EnsembleEntry { outcome: o as u64, weight: p, rho: DensityMatrix(rho) }
    };
    let d_s = part.d_s();
    let entries: Vec<_> = if d_s >= PAR_OUTCOME_THRESHOLD {
        (0..d_s).into_par_iter().map(make).collect()
    } else {
        (0..d_s).map(make).collect()
    };
    PartialProjectedEnsemble::from_entries(part.d_r(), entries)
}

/// First moment, i.e. the reduced state on `R`.
pub fn mean_state(ens: &PartialProjectedEnsemble) -> CMatrix {
    let mut m = CMatrix::zeros(ens.d_r);
    for e in &ens.entries {
        m.add_scaled(e.weight, e.rho.matrix());
    }
    m
}

pub fn moment(ens: &PartialProjectedEnsemble, k: usize) -> Result<EnsembleMoment> {
    if k == 0 {
        return Err(Error::InvalidArgument("moment order must be at least 1".into()));
    }
    let l_r = ens.d_r.trailing_zeros() as usize;
    if k * l_r > MOMENT_QUBIT_CAP {
        return Err(Error::SizeCap(format!("moment of order {k} on {l_r} qubits")));
    }
    if k == 1 {
        return Ok(EnsembleMoment { order: 1, matrix: mean_state(ens) });
    }
    let mut m = CMatrix::zeros(ens.d_r.pow(k as u32));
    for e in &ens.entries {
        let rho = e.rho.matrix();
        let power = (1..k).fold(rho.clone(), |acc, _| acc.kron(rho));
        m.add_scaled(e.weight, &power);
    }
    Ok(EnsembleMoment { order: k, matrix: m })
}

/// Second moment minus the square of the first, without forming either.
fn second_moment_fluctuation(ens: &PartialProjectedEnsemble) -> CMatrix {
    let mean = mean_state(ens);
    let mut m = CMatrix::zeros(ens.d_r * ens.d_r);
    for e in &ens.entries {
        let d = e.rho.matrix() - &mean;
        m.add_scaled(e.weight, &d.kron(&d));
    }
    m
}

/// `1/2 || rho^(2) - rho (x) rho ||_1`.
pub fn delta(ens: &PartialProjectedEnsemble) -> Result<f64> {
    // sum_o p (rho_o - mean)^{x2} equals rho^(2) - mean^{x2} exactly
    Ok(0.5 * second_moment_fluctuation(ens).trace_norm())
}

/// `sum_o p(o) Tr[obs rho(o)]^k`.
pub fn observable_moment(ens: &PartialProjectedEnsemble, obs: &CMatrix, k: usize) -> Result<f64> {
    if obs.dim() != ens.d_r {
        return Err(Error::DimensionMismatch { expected: ens.d_r, got: obs.dim() });
    }
    if !obs.is_hermitian(1e-12) {
        return Err(Error::InvalidArgument("observable is not Hermitian".into()));
    }
    Ok(ens
        .entries
        .iter()
        .map(|e| e.weight * (obs * e.rho.matrix()).trace().re.powi(k as i32))
        .sum())
}

/// Second moment of the generalized Hilbert-Schmidt ensemble,
/// `(D_E^2 I + D_E S) / (D_R D_E (D_R D_E + 1))`.
pub fn ghs_second_moment(d_r: usize, d_e: usize) -> Result<EnsembleMoment> {
    if !d_r.is_power_of_two() || !d_e.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("dimensions {d_r}, {d_e} must be powers of two")));
    }
    let (dr, de) = (d_r as f64, d_e as f64);
    let norm = dr * de * (dr * de + 1.0);
    let mut m = CMatrix::identity(d_r * d_r).scale(de * de / norm);
    m.add_scaled(de / norm, &CMatrix::swap(d_r));
    Ok(EnsembleMoment { order: 2, matrix: m })
}

/// `1/2 || rho^(2) - rho^(2)_gHS ||_1` with `D_E` taken from `part`.
pub fn ghs_distance(ens: &PartialProjectedEnsemble, part: &Tripartition) -> Result<f64> {
    if part.d_r() != ens.d_r {
        return Err(Error::DimensionMismatch { expected: part.d_r(), got: ens.d_r });
    }
    let m = moment(ens, 2)?;
    let ghs = ghs_second_moment(part.d_r(), part.d_e())?;
    trace_norm_distance(&m.matrix, &ghs.matrix)
}

/// Reduced state of a Haar-random pure state on `D_R * D_E`, `R` leftmost.
pub fn sample_ghs(rng: &mut impl Rng, d_r: usize, d_e: usize) -> DensityMatrix {
    let mut v: Vec<C64> = (0..d_r * d_e)
        .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z /= norm;
    }
    let mut rho = CMatrix::zeros(d_r);
    for r in 0..d_r {
        for rp in 0..d_r {
            rho[(r, rp)] = (0..d_e).map(|e| v[r * d_e + e] * v[rp * d_e + e].conj()).sum();
        }
    }
    DensityMatrix(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::{evolve, RegimePreset};
    use crate::state::{
        make_product_state, partial_trace, random_product_state, SiteBasis,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn ghz3() -> PureState {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![c(0.0); 8];
        amps[0] = c(h);
        amps[7] = c(h);
        PureState::from_amplitudes(3, amps).unwrap()
    }

    fn scrambled(part: &Tripartition, seed: u64, t: usize) -> PureState {
        let n = part.n_sites();
        let psi = make_product_state(&random_product_state(n, seed)).unwrap();
        evolve(&psi, &RegimePreset::Ergodic.params(n, seed ^ 0xabc), t).unwrap()
    }

    #[test]
    fn ghz_ensemble() {
        let part = Tripartition::new(1, 0, 2).unwrap();
        let ens = build_ppe(&ghz3(), &part, &MeasurementBasis::z(2)).unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens.entries()[0].outcome, 0);
        assert_eq!(ens.entries()[1].outcome, 3);
        for e in ens.entries() {
            assert!((e.weight - 0.5).abs() < 1e-15);
        }
        assert_eq!(ens.entries()[0].rho.diagonal(), vec![1.0, 0.0]);
        assert_eq!(ens.entries()[1].rho.diagonal(), vec![0.0, 1.0]);

        let m2 = moment(&ens, 2).unwrap().matrix;
        assert!(m2.max_abs_diff(&CMatrix::diagonal(&[0.5, 0.0, 0.0, 0.5])) < 1e-15);
        assert!((delta(&ens).unwrap() - 0.5).abs() < 1e-14);

        let z = CMatrix::diagonal(&[1.0, -1.0]);
        assert!((observable_moment(&ens, &z, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!(observable_moment(&ens, &z, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn product_state_has_no_fluctuations() {
        let part = Tripartition::new(2, 2, 3).unwrap();
        let psi = make_product_state(&random_product_state(7, 5)).unwrap();
        let ens = build_ppe(&psi, &part, &MeasurementBasis::x(3)).unwrap();
        assert!(delta(&ens).unwrap() < 1e-14);
        let obs = CMatrix::from_fn(4, |i, j| c((i + j) as f64));
        let first = observable_moment(&ens, &obs, 1).unwrap();
        assert!((observable_moment(&ens, &obs, 2).unwrap() - first * first).abs() < 1e-12);
    }

    #[test]
    fn empty_e_gives_pure_conditionals() {
        let part = Tripartition::new(1, 0, 5).unwrap();
        let ens = build_ppe(&scrambled(&part, 1, 4), &part, &MeasurementBasis::z(5)).unwrap();
        for e in ens.entries() {
            assert!((e.rho.purity() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn first_moment_is_basis_independent() {
        let part = Tripartition::new(2, 1, 4).unwrap();
        let psi = scrambled(&part, 3, 6);
        let reduced = partial_trace(&psi, &[0, 1]).unwrap();
        for basis in [
            MeasurementBasis::z(4),
            MeasurementBasis::x(4),
            MeasurementBasis::uniform(SiteBasis::Tilted { theta: 0.4, phi: 2.2 }, 4),
        ] {
            let ens = build_ppe(&psi, &part, &basis).unwrap();
            assert!((ens.total_weight() - 1.0).abs() < 1e-10);
            let m1 = moment(&ens, 1).unwrap().matrix;
            assert!(m1.max_abs_diff(reduced.matrix()) < 1e-10);
        }
    }

    #[test]
    fn second_moment_routes_agree() {
        let part = Tripartition::new(2, 1, 4).unwrap();
        let ens = build_ppe(&scrambled(&part, 8, 5), &part, &MeasurementBasis::z(4)).unwrap();
        let m1 = moment(&ens, 1).unwrap().matrix;
        let m2 = moment(&ens, 2).unwrap().matrix;
        assert!((m2.trace().re - 1.0).abs() < 1e-10);
        assert!(m2.hermiticity_error() < 1e-12);
        let direct = 0.5 * (&m2 - &m1.kron(&m1)).trace_norm();
        assert!((direct - delta(&ens).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn moment_size_cap() {
        let part = Tripartition::new(3, 0, 2).unwrap();
        let ens = build_ppe(&scrambled(&part, 2, 3), &part, &MeasurementBasis::z(2)).unwrap();
        assert!(moment(&ens, 4).is_ok());
        assert!(matches!(moment(&ens, 5), Err(Error::SizeCap(_))));
    }

    #[test]
    fn ghs_moment_closed_forms() {
        let m = ghs_second_moment(2, 1).unwrap().matrix;
        let mut want = CMatrix::identity(4);
        want.add_scaled(1.0, &CMatrix::swap(2));
        assert!(m.max_abs_diff(&want.scale(1.0 / 6.0)) < 1e-15);
        for (dr, de) in [(2, 1), (2, 4), (4, 2), (8, 8)] {
            let m = ghs_second_moment(dr, de).unwrap().matrix;
            assert!((m.trace().re - 1.0).abs() < 1e-13);
        }
        assert!(ghs_second_moment(3, 2).is_err());
    }

    #[test]
    fn ghs_sampling_first_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (dr, de, n) = (2, 4, 10_000);
        let mut mean = CMatrix::zeros(dr);
        let mut sq = CMatrix::zeros(dr);
        for _ in 0..n {
            let rho = sample_ghs(&mut rng, dr, de);
            mean.add_scaled(1.0 / n as f64, rho.matrix());
            let mag = CMatrix::from_fn(dr, |i, j| c(rho.matrix()[(i, j)].norm_sqr()));
            sq.add_scaled(1.0 / n as f64, &mag);
        }
        for i in 0..dr {
            for j in 0..dr {
                let target = if i == j { 0.5 } else { 0.0 };
                let var = sq[(i, j)].re - mean[(i, j)].norm_sqr();
                let sigma = (var.max(1e-30) / n as f64).sqrt();
                assert!((mean[(i, j)] - c(target)).norm() < 3.0 * sigma.max(1e-3), "{i}{j}");
            }
        }
        let pure = sample_ghs(&mut rng, 4, 1);
        assert!((pure.purity() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dump_round_trip() {
        let part = Tripartition::new(2, 1, 3).unwrap();
        let ens = build_ppe(&scrambled(&part, 4, 3), &part, &MeasurementBasis::x(3)).unwrap();
        let mut buf = Vec::new();
        ens.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"PPEDUMP\0");
        let back = PartialProjectedEnsemble::read_dump(&mut buf.as_slice()).unwrap();
        assert_eq!(back.d_r(), 4);
        assert_eq!(back.len(), ens.len());
        for (a, b) in back.entries().iter().zip(ens.entries()) {
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
            assert_eq!(a.rho.matrix(), b.rho.matrix());
        }
        buf[0] = b'X';
        assert!(matches!(
            PartialProjectedEnsemble::read_dump(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn floor_drops_and_renormalizes() {
        let up = DensityMatrix::pure(&[c(1.0), c(0.0)]);
        let ens = PartialProjectedEnsemble::from_entries(
            2,
            vec![
                EnsembleEntry { outcome: 0, weight: 0.5, rho: up.clone() },
                EnsembleEntry { outcome: 1, weight: 1e-16, rho: up.clone() },
                EnsembleEntry { outcome: 2, weight: 0.25, rho: up },
            ],
        )
        .unwrap();
        assert_eq!(ens.len(), 2);
        assert!((ens.entries()[0].weight - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn delta_is_bounded_and_relabeling_invariant(seed in 0u64..1000, t in 0usize..6) {
            let part = Tripartition::new(1, 2, 4).unwrap();
            let ens = build_ppe(&scrambled(&part, seed, t), &part, &MeasurementBasis::z(4)).unwrap();
            let d = delta(&ens).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let mut entries = ens.entries().to_vec();
            entries.reverse();
            let shuffled = PartialProjectedEnsemble::from_entries(2, entries).unwrap();
            prop_assert!((delta(&shuffled).unwrap() - d).abs() < 1e-14);
        }

        #[test]
        fn observable_moment_matches_moment_trace(seed in 0u64..1000, k in 1usize..4) {
            let part = Tripartition::new(1, 1, 4).unwrap();
            let ens = build_ppe(&scrambled(&part, seed, 3), &part, &MeasurementBasis::z(4)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = CMatrix::from_fn(2, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
            let obs = &a + &a.dagger();
            let obs_k = (1..k).fold(obs.clone(), |acc, _| acc.kron(&obs));
            let m = moment(&ens, k).unwrap().matrix;
            let via_moment = (&obs_k * &m).trace().re;
            prop_assert!((observable_moment(&ens, &obs, k).unwrap() - via_moment).abs() < 1e-10);
        }
    }
}
