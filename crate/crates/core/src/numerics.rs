//! Small dense numerical kernel shared by the estimators and the filter.
//!
//! Everything here is a pure function of its inputs except [`RngStream`],
//! which is owned by exactly one worker at a time.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default central-difference step for Jacobians.
pub const FD_JACOBIAN_STEP: f64 = 1e-5;
/// Default central-difference step for Hessians.
pub const FD_HESSIAN_STEP: f64 = 1e-3;

/// Dense symmetric matrix. Construction replaces the input by its symmetric
/// part, so `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                what: "symmetric matrix must be square (columns)",
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be >= 1".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetric part of a square matrix. Panics on non-square input.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                what: "row-major data length",
                expected: n * n,
                got: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// PSD tolerance `1e-8 * (1 + |tr M|)`.
pub fn psd_tol(m: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + m.trace().abs())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &SymMatrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    if m.dim() == 1 {
        return Ok(m[(0, 0)]);
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    Ok(eig.eigenvalues.min())
}

/// Succeeds when `λ_min(m) >= -psd_tol(m)`.
///
/// A Cholesky attempt on `m + tol·I` decides the common case; the
/// eigen-decomposition only runs to report a failure.
pub fn check_psd(m: &SymMatrix) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let tol = psd_tol(m);
    let mut shifted = m.as_matrix().clone();
    for i in 0..m.dim() {
        shifted[(i, i)] += tol;
    }
    if Cholesky::new(shifted).is_some() {
        return Ok(());
    }
    let min_eig = min_eig_sym(m)?;
    if min_eig >= -tol {
        Ok(())
    } else {
        Err(Error::NotPositiveSemidefinite { min_eig, tol })
    }
}

/// Lower-triangular `L` with `L·Lᵀ = P`.
///
/// Rank-deficient PSD input gets one diagonal jitter of
/// `1e-12 · (1 + tr(P)/n)`; if the jittered matrix still has a
/// non-positive pivot, the zero pivots are dropped (semidefinite
/// factorization). Matrices with `λ_min < -psd_tol` are rejected.
pub fn cholesky(p: &SymMatrix) -> Result<DMatrix<f64>> {
    if !p.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    if let Some(ch) = Cholesky::new(p.as_matrix().clone()) {
        return Ok(ch.l());
    }
    let tol = psd_tol(p);
    let min_eig = min_eig_sym(p)?;
    if min_eig < -tol {
        return Err(Error::NotPositiveSemidefinite { min_eig, tol });
    }
    let n = p.dim();
    let jitter = 1e-12 * (1.0 + p.trace() / n as f64);
    let mut jittered = p.as_matrix().clone();
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    if let Some(ch) = Cholesky::new(jittered.clone()) {
        return Ok(ch.l());
    }
    Ok(semidefinite_cholesky(&jittered))
}

fn semidefinite_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = 1e-14 * (1.0 + max_diag);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d <= floor {
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / djj;
        }
    }
    l
}

/// Haar-uniform random orthogonal matrix: QR of an i.i.d. standard-normal
/// matrix with the columns of Q flipped so that diag(R) > 0.
pub fn haar_orthogonal(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    assert!(n >= 1, "haar_orthogonal requires n >= 1");
    let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    if n == 1 {
        return DMatrix::from_element(1, 1, g[(0, 0)].signum());
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `‖A·Aᵀ − I‖_F`.
pub fn orthogonality_error(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    (a * a.transpose() - DMatrix::<f64>::identity(n, n)).norm()
}

fn finite_or_err(v: DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFiniteEvaluation)
    }
}

/// Central-difference Jacobian (m×n) of `f` at `x`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = finite_or_err(f(&xp)?)?;
        xp[j] = x[j] - h;
        let fm = finite_or_err(f(&xp)?)?;
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or_else(|| f(x).map(|v| v.len()), |c| Ok(c.len()))?;
    let mut jac = DMatrix::zeros(m, n);
    for (j, c) in cols.iter().enumerate() {
        jac.set_column(j, c);
    }
    Ok(jac)
}

/// Central-difference Hessians of every output component of `f` at `x`,
/// symmetrized.
pub fn fd_hessians<F>(f: F, x: &DVector<f64>, h: f64) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = x.len();
    let f0 = finite_or_err(f(x)?)?;
    let m = f0.len();
    let mut hess = vec![DMatrix::zeros(n, n); m];
    let mut xp = x.clone();
    let eval_at = |xp: &mut DVector<f64>, steps: &[(usize, f64)]| -> Result<DVector<f64>> {
        for &(i, s) in steps {
            xp[i] += s;
        }
        let v = f(xp);
        for &(i, s) in steps {
            xp[i] -= s;
        }
        finite_or_err(v?)
    };
    for i in 0..n {
        let fp = eval_at(&mut xp, &[(i, h)])?;
        let fm = eval_at(&mut xp, &[(i, -h)])?;
        let d2 = (fp - 2.0 * &f0 + fm) / (h * h);
        for (k, hk) in hess.iter_mut().enumerate() {
            hk[(i, i)] = d2[k];
        }
        for j in (i + 1)..n {
            let fpp = eval_at(&mut xp, &[(i, h), (j, h)])?;
            let fpm = eval_at(&mut xp, &[(i, h), (j, -h)])?;
            let fmp = eval_at(&mut xp, &[(i, -h), (j, h)])?;
            let fmm = eval_at(&mut xp, &[(i, -h), (j, -h)])?;
            let dij = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            for (k, hk) in hess.iter_mut().enumerate() {
                hk[(i, j)] = dij[k];
                hk[(j, i)] = dij[k];
            }
        }
    }
    Ok(hess)
}

/// Reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so distinct ids give independent sequences from one seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.standard_normal())
    }

    /// Draw from N(mean, L·Lᵀ) given a lower factor.
    pub fn correlated_normal(&mut self, mean: &DVector<f64>, factor: &DMatrix<f64>) -> DVector<f64> {
        let u = self.normal_vector(factor.ncols());
        mean + factor * u
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Derive a child seed from a base seed and a list of tags (splitmix64 chain).
pub fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(base), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Stable 64-bit FNV-1a hash of a string, used to key seeds by name.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
