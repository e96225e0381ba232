//! Numerical checks of the compensation theory: rotation sensitivity, PSD
//! compensation, the radially symmetric covariance bound and brute-force
//! scans for the optimal compensation magnitude.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::models::{random_polynomial_map, DifferentiableMap};
use crate::moments::{compensation, estimate, rotate_map, sphere_compensation, EstimatorConfig, MomentEstimate};
use crate::numerics::{haar_orthogonal, min_eig_sym, psd_tol, RngStream, SymMatrix};

/// `[[cos θ, −sin θ], [sin θ, cos θ]]`.
pub fn planar_rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

#[derive(Clone, Debug)]
pub struct EstimatorSeries {
    pub config: EstimatorConfig,
    /// Estimates on the rotated map, with `P_xz` rotated back to the
    /// original coordinates.
    pub estimates: Vec<MomentEstimate>,
}

impl EstimatorSeries {
    pub fn p_z_entry(&self, i: usize, j: usize) -> Vec<f64> {
        self.estimates.iter().map(|e| e.p_z[(i, j)]).collect()
    }

    /// Largest peak-to-peak spread over all entries of `P_z`.
    pub fn p_z_peak_to_peak(&self) -> f64 {
        peak_to_peak(self.estimates.iter().map(|e| e.p_z.as_matrix()))
    }

    pub fn p_xz_peak_to_peak(&self) -> f64 {
        peak_to_peak(self.estimates.iter().map(|e| &e.p_xz))
    }
}

fn peak_to_peak<'a>(mut it: impl Iterator<Item = &'a DMatrix<f64>>) -> f64 {
    let Some(first) = it.next() else { return 0.0 };
    let mut lo = first.clone();
    let mut hi = first.clone();
    for m in it {
        lo.zip_apply(m, |a, b| *a = a.min(b));
        hi.zip_apply(m, |a, b| *a = a.max(b));
    }
    (hi - lo).amax()
}

#[derive(Clone, Debug)]
pub struct RotationSweep {
    pub angles: Vec<f64>,
    pub series: Vec<EstimatorSeries>,
}

/// Evaluates every estimator on `u ↦ g(R(θ)u)` for `n_angles` equally spaced
/// angles in `[0, 2π)`.
pub fn rotation_sweep(g: &DifferentiableMap, estimators: &[EstimatorConfig], n_angles: usize) -> Result<RotationSweep> {
    if g.input_dim() != 2 {
        return Err(Error::DimensionMismatch {
            what: "rotation sweep input",
            expected: 2,
            got: g.input_dim(),
        });
    }
    if n_angles < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 angles, got {n_angles}"
        )));
    }
    let angles: Vec<f64> = (0..n_angles)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n_angles as f64)
        .collect();
    let rotated: Vec<(DMatrix<f64>, DifferentiableMap)> = angles
        .iter()
        .map(|&t| {
            let a = planar_rotation(t);
            rotate_map(g, &a).map(|r| (a, r))
        })
        .collect::<Result<_>>()?;
    let series = estimators
        .iter()
        .map(|cfg| {
            let estimates = rotated
                .iter()
                .map(|(a, r)| {
                    let mut e = estimate(r, cfg)?;
                    e.p_xz = a * e.p_xz;
                    Ok(e)
                })
                .collect::<Result<_>>()?;
            Ok(EstimatorSeries {
                config: *cfg,
                estimates,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RotationSweep { angles, series })
}

/// Random polynomial maps with dimensions and degree drawn uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MapFamily {
    pub max_n: usize,
    pub max_m: usize,
    pub min_degree: u32,
    pub max_degree: u32,
    pub scale: f64,
}

impl Default for MapFamily {
    fn default() -> Self {
        MapFamily {
            max_n: 5,
            max_m: 5,
            min_degree: 1,
            max_degree: 3,
            scale: 1.0,
        }
    }
}

impl MapFamily {
    /// Draws `(n, m, degree, map)` for one trial.
    pub fn draw(&self, rng: &mut RngStream) -> Result<(usize, usize, u32, DifferentiableMap)> {
        let pick = |rng: &mut RngStream, lo: usize, hi: usize| lo + (rng.next_u64_below((hi - lo + 1) as u64) as usize);
        let n = pick(rng, 1, self.max_n);
        let m = pick(rng, 1, self.max_m);
        let degree = pick(rng, self.min_degree as usize, self.max_degree as usize) as u32;
        let map = random_polynomial_map(n, m, degree, self.scale, rng)?;
        Ok((n, m, degree, map))
    }
}

trait BelowExt {
    fn next_u64_below(&mut self, bound: u64) -> u64;
}

impl BelowExt for RngStream {
    fn next_u64_below(&mut self, bound: u64) -> u64 {
        use rand::Rng;
        self.random_range(0..bound)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsdTrial {
    pub trial: u64,
    pub n: usize,
    pub m: usize,
    pub degree: u32,
    pub lambda_min: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsdReport {
    pub trials: usize,
    /// Minimum over trials of `λ_min / (1 + |tr|)`; compared with `1e-8`.
    pub min_lambda_over_trials: f64,
    /// `(trial stream id, λ_min)` of every trial below `−psd_tol`.
    pub failures: Vec<(u64, f64)>,
    pub rows: Vec<PsdTrial>,
}

impl PsdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Smallest eigenvalue of the compensation matrix over random maps from
/// `family`. Trial `i` uses the stream `(seed, i)`.
pub fn psd_compensation_check(
    cfg: &EstimatorConfig,
    family: &MapFamily,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<PsdReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let rows: Vec<PsdTrial> = exec
        .map(trials, |i| -> Result<PsdTrial> {
            let mut rng = RngStream::new(seed, i as u64);
            let (n, m, degree, g) = family.draw(&mut rng)?;
            let est = estimate(&g, cfg)?;
            let com = compensation(&est, &g)?;
            let lambda_min = min_eig_sym(&com)?;
            let tol = psd_tol(&com);
            Ok(PsdTrial {
                trial: i as u64,
                n,
                m,
                degree,
                lambda_min,
                tol,
                passed: lambda_min >= -tol,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let min_lambda_over_trials = rows
        .iter()
        .map(|r| r.lambda_min / (r.tol / 1e-8))
        .fold(f64::INFINITY, f64::min);
    let failures = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| (r.trial, r.lambda_min))
        .collect();
    Ok(PsdReport {
        trials,
        min_lambda_over_trials,
        failures,
        rows,
    })
}

/// Zero-mean, identity-covariance radially symmetric distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RadialSampler {
    Gaussian,
    /// Uniform on the sphere of radius √n.
    Sphere,
    /// Uniform direction with squared radius `n(1 − a)` or `n(1 + a)` with
    /// equal probability, `0 ≤ a < 1`.
    Mixture(f64),
}

impl RadialSampler {
    pub fn label(&self) -> &'static str {
        match self {
            RadialSampler::Gaussian => "gaussian",
            RadialSampler::Sphere => "sphere",
            RadialSampler::Mixture(_) => "mixture",
        }
    }

    pub fn sample_into(&self, rng: &mut RngStream, x: &mut [f64]) {
        let n = x.len();
        for v in x.iter_mut() {
            *v = rng.standard_normal();
        }
        let radius2 = match *self {
            RadialSampler::Gaussian => return,
            RadialSampler::Sphere => n as f64,
            RadialSampler::Mixture(a) => {
                if rng.uniform(0.0, 1.0) < 0.5 {
                    n as f64 * (1.0 - a)
                } else {
                    n as f64 * (1.0 + a)
                }
            }
        };
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = radius2.sqrt() / norm;
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

/// `c + Jx + ½[xᵀHᵢx]ᵢ` read off a map of degree at most two.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticParts {
    pub c: DVector<f64>,
    pub j: DMatrix<f64>,
    pub h: Vec<DMatrix<f64>>,
}

impl QuadraticParts {
    pub fn from_map(g: &DifferentiableMap) -> Result<Self> {
        match g.analytic_degree() {
            Some(1) | Some(2) => {}
            _ => return Err(Error::NotQuadratic),
        }
        let u0 = DVector::zeros(g.input_dim());
        Ok(QuadraticParts {
            c: g.eval(&u0)?,
            j: g.jacobian(&u0)?,
            h: g.hessians(&u0)?,
        })
    }

    /// Curvature-only part `½[xᵀHᵢx]ᵢ`.
    pub fn residual_into(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        for (o, h) in out.iter_mut().zip(&self.h) {
            let mut s = 0.0;
            for a in 0..n {
                let mut row = 0.0;
                for b in 0..n {
                    row += h[(a, b)] * x[b];
                }
                s += x[a] * row;
            }
            *o = 0.5 * s;
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.residual_into(x, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.c[i];
            for (k, xk) in x.iter().enumerate() {
                *o += self.j[(i, k)] * xk;
            }
        }
    }
}

/// Sample mean and covariance with per-entry standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McCovariance {
    pub draws: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_se: DMatrix<f64>,
}

const MC_CHUNK: usize = 1 << 15;

/// Monte-Carlo moments of `f(x)` with `x` drawn from `sampler` in `n`
/// dimensions. Draws are split into fixed-size chunks, chunk `c` using the
/// stream `(seed, c)`, so the result does not depend on `exec`.
pub fn monte_carlo_covariance<F>(
    n: usize,
    m: usize,
    sampler: RadialSampler,
    draws: usize,
    seed: u64,
    exec: Execution,
    f: F,
) -> McCovariance
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    let chunks = draws.div_ceil(MC_CHUNK);
    let values: Vec<Vec<f64>> = exec.map(chunks, |c| {
        let len = MC_CHUNK.min(draws - c * MC_CHUNK);
        let mut rng = RngStream::new(seed, c as u64);
        let mut x = vec![0.0; n];
        let mut out = vec![0.0; len * m];
        for k in 0..len {
            sampler.sample_into(&mut rng, &mut x);
            f(&x, &mut out[k * m..(k + 1) * m]);
        }
        out
    });
    let nf = draws as f64;
    let mut mean = DVector::zeros(m);
    for chunk in &values {
        for z in chunk.chunks_exact(m) {
            for i in 0..m {
                mean[i] += z[i];
            }
        }
    }
    mean /= nf;
    let mut s1 = DMatrix::<f64>::zeros(m, m);
    let mut s2 = DMatrix::<f64>::zeros(m, m);
    for chunk in &values {
        for z in chunk.chunks_exact(m) {
            for i in 0..m {
                let di = z[i] - mean[i];
                for j in i..m {
                    let p = di * (z[j] - mean[j]);
                    s1[(i, j)] += p;
                    s2[(i, j)] += p * p;
                }
            }
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    let mut cov_se = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let c = s1[(i, j)] / (nf - 1.0);
            let var = (s2[(i, j)] / nf - (s1[(i, j)] / nf).powi(2)).max(0.0);
            let se = (var / nf).sqrt();
            cov[(i, j)] = c;
            cov[(j, i)] = c;
            cov_se[(i, j)] = se;
            cov_se[(j, i)] = se;
        }
    }
    McCovariance {
        draws,
        mean,
        cov,
        cov_se,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub sampler: RadialSampler,
    pub sample: McCovariance,
    /// `JJᵀ` plus the uniform-on-sphere compensation.
    pub bound: SymMatrix,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `‖SE‖_F`, an eigenvalue perturbation scale for the sample matrix.
    pub se_band: f64,
}

impl BoundCheck {
    /// `λ_min(sample − bound) ≥ −k·SE`.
    pub fn satisfies_bound(&self, k: f64) -> bool {
        self.lambda_min >= -k * self.se_band
    }

    /// Both extreme eigenvalues within `±k·SE` of zero.
    pub fn is_tight(&self, k: f64) -> bool {
        self.lambda_min.abs() <= k * self.se_band && self.lambda_max.abs() <= k * self.se_band
    }
}

/// Compares the Monte-Carlo covariance of a quadratic map under a radially
/// symmetric input with `JJᵀ + sphere compensation`.
pub fn sphere_bound_check(
    g: &DifferentiableMap,
    sampler: RadialSampler,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<BoundCheck> {
    let q = QuadraticParts::from_map(g)?;
    let (n, m) = (g.input_dim(), g.output_dim());
    let sample = monte_carlo_covariance(n, m, sampler, draws, seed, exec, |x, out| q.eval_into(x, out));
    let bound = SymMatrix::symmetrized(&q.j * q.j.transpose() + sphere_compensation(&q.h, 2.0).into_matrix());
    let diff = SymMatrix::symmetrized(&sample.cov - bound.as_matrix());
    let eig = nalgebra::SymmetricEigen::new(diff.into_matrix());
    let se_band = sample.cov_se.norm();
    Ok(BoundCheck {
        sampler,
        lambda_min: eig.eigenvalues.min(),
        lambda_max: eig.eigenvalues.max(),
        se_band,
        bound,
        sample,
    })
}

/// Average of an estimator over Haar-random re-normalizations `u ↦ g(Au)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationAverage {
    pub draws: usize,
    pub z_mean: DVector<f64>,
    pub z_mean_se: DVector<f64>,
    pub p_xz: DMatrix<f64>,
    pub p_xz_se: DMatrix<f64>,
    pub p_z: DMatrix<f64>,
    pub p_z_se: DMatrix<f64>,
}

pub fn rotation_average(
    g: &DifferentiableMap,
    cfg: &EstimatorConfig,
    draws: usize,
    seed: u64,
    exec: Execution,
) -> Result<RotationAverage> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two rotations".into()));
    }
    let n = g.input_dim();
    let ests: Vec<MomentEstimate> = exec
        .map(draws, |i| {
            let mut rng = RngStream::new(seed, i as u64);
            let a = haar_orthogonal(n, &mut rng);
            let mut e = estimate(&rotate_map(g, &a)?, cfg)?;
            e.p_xz = &a * e.p_xz;
            Ok(e)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let stats = |get: &dyn Fn(&MomentEstimate) -> DMatrix<f64>| {
        let first = get(&ests[0]);
        let mut s1 = DMatrix::zeros(first.nrows(), first.ncols());
        let mut s2 = s1.clone();
        for e in &ests {
            let v = get(e);
            s1 += &v;
            s2 += v.component_mul(&v);
        }
        let nf = draws as f64;
        let mean = s1 / nf;
        let var = (s2 / nf - mean.component_mul(&mean)).map(|v| v.max(0.0)) * (nf / (nf - 1.0));
        let se = var.map(|v| (v / nf).sqrt());
        (mean, se)
    };
    let (zm, zse) = stats(&|e| DMatrix::from_column_slice(e.z_mean.len(), 1, e.z_mean.as_slice()));
    let (p_xz, p_xz_se) = stats(&|e| e.p_xz.clone());
    let (p_z, p_z_se) = stats(&|e| e.p_z.as_matrix().clone());
    Ok(RotationAverage {
        draws,
        z_mean: zm.column(0).into_owned(),
        z_mean_se: zse.column(0).into_owned(),
        p_xz,
        p_xz_se,
        p_z,
        p_z_se,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaScan {
    pub beta_grid: Vec<f64>,
    pub objective: Vec<f64>,
    pub argmin_index: usize,
    pub argmin_beta: f64,
    pub min_objective: f64,
}

impl BetaScan {
    fn from_objective(beta_grid: Vec<f64>, objective: Vec<f64>) -> Self {
        let (argmin_index, min_objective) = objective
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        BetaScan {
            argmin_beta: beta_grid[argmin_index],
            beta_grid,
            objective,
            argmin_index,
            min_objective,
        }
    }

    /// Spacing of the grid around the minimizer (the larger neighbour gap).
    pub fn grid_step_at_argmin(&self) -> f64 {
        let i = self.argmin_index;
        let g = &self.beta_grid;
        let left = if i > 0 { g[i] - g[i - 1] } else { 0.0 };
        let right = if i + 1 < g.len() { g[i + 1] - g[i] } else { 0.0 };
        left.max(right)
    }

    /// Local grid spacing at `beta` (larger neighbour gap of the nearest point).
    pub fn grid_step_near(&self, beta: f64) -> f64 {
        let g = &self.beta_grid;
        let i = g.partition_point(|&b| b < beta).min(g.len() - 1);
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(g.len() - 1);
        (g[i] - g[lo]).max(g[hi] - g[i])
    }
}

pub const BETA_SCAN_POINTS: usize = 400;

/// `beta0` followed by `points − 1` log-spaced values in
/// `[beta0 + 1e-4·span, beta0 + span]`.
pub fn beta_scan_grid(beta0: f64, span: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && span > 0.0);
    let lo = (1e-4 * span).ln();
    let hi = span.ln();
    let k = points - 1;
    std::iter::once(beta0)
        .chain((0..k).map(|i| beta0 + (lo + (hi - lo) * i as f64 / (k - 1).max(1) as f64).exp()))
        .collect()
}

/// Default grid spanning `[β₀, β₀ + 10(1 + σ²/max(H, ε))]`.
pub fn case1_grid(sigma2: f64, h_norm: f64, beta0: f64) -> Vec<f64> {
    let span = 10.0 * (1.0 + sigma2 / h_norm.max(1e-12));
    beta_scan_grid(beta0, span, BETA_SCAN_POINTS)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("beta grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Monte-Carlo objective `E‖(P − (1+b)P̄)/(1+b)‖²_F` with `b = β − β₀` for
/// `P = P̄ + ΔP`, `E‖ΔP‖²_F = σ²` and `‖P̄‖²_F = H` (2×2 matrices).
pub fn beta_star_scan_case1(
    sigma2: f64,
    h_norm: f64,
    beta0: f64,
    grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<BetaScan> {
    if sigma2 < 0.0 || h_norm < 0.0 {
        return Err(Error::InvalidArgument("sigma2 and H must be non-negative".into()));
    }
    check_grid(grid)?;
    const D: usize = 4;
    let p_bar = [(h_norm / 2.0).sqrt(), 0.0, 0.0, (h_norm / 2.0).sqrt()];
    let entry_std = (sigma2 / D as f64).sqrt();
    let mut rng = RngStream::new(seed, 0);
    // the objective only depends on these two sample averages
    let mut sq = 0.0;
    let mut cross = 0.0;
    for _ in 0..draws {
        let mut s = 0.0;
        let mut c = 0.0;
        for pb in p_bar {
            let d = entry_std * rng.standard_normal();
            s += d * d;
            c += d * pb;
        }
        sq += s;
        cross += c;
    }
    let nf = draws.max(1) as f64;
    let (sq, cross) = (sq / nf, cross / nf);
    let objective = grid
        .iter()
        .map(|&beta| {
            let b = beta - beta0;
            (sq - 2.0 * b * cross + b * b * h_norm) / ((1.0 + b) * (1.0 + b))
        })
        .collect();
    let scan = BetaScan::from_objective(grid.to_vec(), objective);
    if h_norm == 0.0 && scan.argmin_index + 1 == grid.len() {
        return Err(Error::DegenerateCase(
            "optimal compensation is unbounded when the mean gain is zero",
        ));
    }
    Ok(scan)
}

/// Random positive-definite matrices with mean `I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SSampler {
    Identity,
    /// Independent `χ²_k / k` diagonal entries.
    ChiSquareDiagonal {
        dof: f64,
    },
    /// `(1/k) Σ gᵢgᵢᵀ` with `k` standard-normal vectors.
    Wishart {
        dof: usize,
    },
}

impl SSampler {
    pub fn sample(&self, m: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
        Ok(match *self {
            SSampler::Identity => DMatrix::identity(m, m),
            SSampler::ChiSquareDiagonal { dof } => {
                let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| chi.sample(rng) / dof))
            }
            SSampler::Wishart { dof } => {
                if dof < m {
                    return Err(Error::InvalidArgument(
                        "Wishart degrees of freedom below dimension".into(),
                    ));
                }
                let mut w = DMatrix::zeros(m, m);
                for _ in 0..dof {
                    let g = rng.normal_vector(m);
                    w.ger(1.0 / dof as f64, &g, &g, 1.0);
                }
                w
            }
        })
    }
}

/// Monte-Carlo objective `c² tr(P̄E[S⁻²]P̄ᵀ) − 2c tr(P̄E[S⁻¹]P̄ᵀ)` with
/// `c = 1/(1 + β − β₀)` for a deterministic cross term and random `S`.
pub fn beta_star_scan_case2(
    sampler: SSampler,
    p_bar: &DMatrix<f64>,
    beta0: f64,
    grid: &[f64],
    draws: usize,
    seed: u64,
) -> Result<BetaScan> {
    check_grid(grid)?;
    let m = p_bar.ncols();
    let mut rng = RngStream::new(seed, 0);
    let mut t_inv = 0.0;
    let mut t_inv2 = 0.0;
    let pt = p_bar.transpose();
    for _ in 0..draws.max(1) {
        let s = sampler.sample(m, &mut rng)?;
        let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularInnovation)?;
        let x = chol.solve(&pt); // S⁻¹P̄ᵀ
        t_inv += (p_bar * &x).trace();
        t_inv2 += x.norm_squared();
    }
    let nf = draws.max(1) as f64;
    let (t_inv, t_inv2) = (t_inv / nf, t_inv2 / nf);
    if t_inv2 == 0.0 {
        return Err(Error::DegenerateCase(
            "objective is flat when the mean cross term is zero",
        ));
    }
    let objective = grid
        .iter()
        .map(|&beta| {
            let c = 1.0 / (1.0 + beta - beta0);
            c * c * t_inv2 - 2.0 * c * t_inv
        })
        .collect();
    Ok(BetaScan::from_objective(grid.to_vec(), objective))
}

#[derive(Serialize)]
struct ScanRow {
    beta: f64,
    objective: f64,
}

#[derive(Serialize)]
struct SweepRow<'a> {
    angle: f64,
    estimator: &'a str,
    beta: f64,
    row: usize,
    col: usize,
    p_z: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_psd_report(report: &PsdReport, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_beta_scan(scan: &BetaScan, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (&beta, &objective) in scan.beta_grid.iter().zip(&scan.objective) {
        w.serialize(ScanRow { beta, objective })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rotation_sweep(sweep: &RotationSweep, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in &sweep.series {
        let label = crate::experiments::estimator_label(&s.config);
        for (&angle, e) in sweep.angles.iter().zip(&s.estimates) {
            let m = e.p_z.dim();
            for row in 0..m {
                for col in row..m {
                    w.serialize(SweepRow {
                        angle,
                        estimator: &label,
                        beta: s.config.beta,
                        row,
                        col,
                        p_z: e.p_z[(row, col)],
                    })?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One summary line, e.g. for console output.
pub fn summary_line(name: &str, passed: bool, detail: &str, out: &mut impl Write) -> Result<()> {
    writeln!(out, "{name}: {} ({detail})", if passed { "PASS" } else { "FAIL" })?;
    Ok(())
}
