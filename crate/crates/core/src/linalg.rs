//! Small dense complex matrices and a cyclic Jacobi Hermitian eigensolver.
//!
//! Matrices here are at most a few hundred rows (doubled `R` spaces, reduced
//! states of a handful of qubits), so everything is a row-major `Vec`.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Convergence threshold on the off-diagonal Frobenius mass.
pub const JACOBI_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    n: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![C64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(n: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Outer product `|v><v|`.
    pub fn outer(v: &[C64]) -> Self {
        Self::from_fn(v.len(), |i, j| v[i] * v[j].conj())
    }

    /// Replica swap `S|a,b> = |b,a>` on a `d^2`-dimensional doubled space.
    pub fn swap(d: usize) -> Self {
        let mut m = Self::zeros(d * d);
        for a in 0..d {
            for b in 0..d {
                m[(b * d + a, a * d + b)] = C64::new(1.0, 0.0);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self += w * other`, the accumulation used for ensemble moments.
    pub fn add_scaled(&mut self, w: f64, other: &CMatrix) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * w;
        }
    }

    pub fn kron(&self, other: &CMatrix) -> Self {
        let (n, m) = (self.n, other.n);
        let mut out = Self::zeros(n * m);
        for i in 0..n {
            for j in 0..n {
                let a = self[(i, j)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..m {
                    let row = (i * m + k) * n * m + j * m;
                    for l in 0..m {
                        out.data[row + l] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest `|A_ij - conj(A_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Largest deviation of `A^dagger A` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = &self.dagger() * self;
        p.max_abs_diff(&Self::identity(self.n))
    }

    /// Eigenvalues of a Hermitian matrix, ascending.
    ///
    /// Cyclic Jacobi: each pivot is first made real by a diagonal phase
    /// similarity and then annihilated by a real Givens rotation. Only the
    /// Hermitian part of `self` is used.
    pub fn eigvalsh(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.clone();
        // symmetrize so that round-off in the input cannot stall convergence
        for i in 0..n {
            a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let h = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
                a[(i, j)] = h;
                a[(j, i)] = h.conj();
            }
        }
        for _ in 0..JACOBI_MAX_SWEEPS {
            if a.off_diagonal_norm() < JACOBI_TOL {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    a.jacobi_rotate(p, q);
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
        eig.sort_by(f64::total_cmp);
        eig
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    }

    fn jacobi_rotate(&mut self, p: usize, q: usize) {
        let n = self.n;
        let apq = self[(p, q)];
        let mag = apq.norm();
        if mag < 1e-300 {
            return;
        }
        // D = diag(.., 1 at p, e^{-i phi} at q, ..): A <- D^dagger A D makes A_pq real.
        let phase = apq / mag;
        for k in 0..n {
            self[(k, q)] *= phase.conj();
        }
        for k in 0..n {
            self[(q, k)] *= phase;
        }
        let app = self[(p, p)].re;
        let aqq = self[(q, q)].re;
        let theta = (aqq - app) / (2.0 * mag);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let akp = self[(k, p)];
            let akq = self[(k, q)];
            self[(k, p)] = akp * c - akq * s;
            self[(k, q)] = akp * s + akq * c;
        }
        for k in 0..n {
            let apk = self[(p, k)];
            let aqk = self[(q, k)];
            self[(p, k)] = apk * c - aqk * s;
            self[(q, k)] = apk * s + aqk * c;
        }
        self[(p, q)] = C64::new(0.0, 0.0);
        self[(q, p)] = C64::new(0.0, 0.0);
    }

    /// Trace norm `sum |lambda_i|` of a Hermitian matrix.
    pub fn trace_norm(&self) -> f64 {
        self.eigvalsh().iter().map(|x| x.abs()).sum()
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        CMatrix { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        CMatrix { n: self.n, data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }
}

/// `exp(-i angle * sigma)` for a Pauli direction given as `(x, y, z)`
/// components of a unit vector.
pub fn pauli_rotation(angle: f64, axis: [f64; 3]) -> CMatrix {
    let (c, s) = (angle.cos(), angle.sin());
    let [x, y, z] = axis;
    let i = C64::new(0.0, 1.0);
    CMatrix::from_vec(
        2,
        vec![
            C64::new(c, 0.0) - i * s * z,
            -i * s * x - s * y,
            -i * s * x + s * y,
            C64::new(c, 0.0) + i * s * z,
        ],
    )
    .expect("2x2")
}
