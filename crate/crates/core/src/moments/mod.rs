//! Moment estimators for `z = f(x)` with `x ~ (x̄, P_x)`.
//!
//! Every estimator works on the standardized map `g(u) = f(x̄ + Lu)` where
//! `u` has zero mean and identity covariance; [`estimate_moments`] performs the
//! standardization and maps the cross-covariance back to x-space.

mod sigma;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use sigma::{sigma_points, SigmaKind, SigmaPointSet};

use crate::error::{Error, Result};
use crate::models::DifferentiableMap;
use crate::numerics::{cholesky, min_eig_sym, orthogonality_error, psd_tol, SymMatrix};

/// Estimated `(z̄, P_z, P_xz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentEstimate {
    pub z_mean: DVector<f64>,
    pub p_z: SymMatrix,
    /// n×m cross-covariance.
    pub p_xz: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EstimatorKind {
    Ekf,
    Ekf2,
    SkfStar,
    CkfStar,
    Sskf,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Ekf,
        EstimatorKind::Ekf2,
        EstimatorKind::SkfStar,
        EstimatorKind::CkfStar,
        EstimatorKind::Sskf,
    ];

    /// Estimators that expose a compensation magnitude.
    pub const COMPENSATING: [EstimatorKind; 4] = [
        EstimatorKind::Ekf2,
        EstimatorKind::SkfStar,
        EstimatorKind::CkfStar,
        EstimatorKind::Sskf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Ekf => "EKF",
            EstimatorKind::Ekf2 => "EKF2",
            EstimatorKind::SkfStar => "SKF*",
            EstimatorKind::CkfStar => "CKF*",
            EstimatorKind::Sskf => "SSKF",
        }
    }

    /// Smallest admissible β.
    pub fn min_beta(self) -> f64 {
        match self {
            EstimatorKind::SkfStar | EstimatorKind::CkfStar => -1.0,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ekf2Mode {
    #[default]
    Gaussian,
    Sphere,
}

pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub ekf2_mode: Ekf2Mode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind, beta: f64) -> Self {
        EstimatorConfig {
            kind,
            beta,
            ekf2_mode: Ekf2Mode::Gaussian,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn ekf() -> Self {
        Self::new(EstimatorKind::Ekf, 0.0)
    }

    pub fn ekf2(beta: f64, mode: Ekf2Mode) -> Self {
        EstimatorConfig {
            ekf2_mode: mode,
            ..Self::new(EstimatorKind::Ekf2, beta)
        }
    }

    pub fn skf(beta: f64) -> Self {
        Self::new(EstimatorKind::SkfStar, beta)
    }

    pub fn ckf(beta: f64) -> Self {
        Self::new(EstimatorKind::CkfStar, beta)
    }

    pub fn sskf(beta: f64, alpha: f64) -> Self {
        EstimatorConfig {
            alpha,
            ..Self::new(EstimatorKind::Sskf, beta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind.label();
        if !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        match self.kind {
            EstimatorKind::Ekf => {}
            EstimatorKind::Ekf2 | EstimatorKind::Sskf => {
                if self.beta < 0.0 {
                    return Err(Error::NegativeBeta { kind, beta: self.beta });
                }
            }
            EstimatorKind::SkfStar | EstimatorKind::CkfStar => {
                if self.beta < -1.0 {
                    return Err(Error::BetaOutOfRange {
                        kind,
                        beta: self.beta,
                        min: -1.0,
                    });
                }
            }
        }
        if self.kind == EstimatorKind::Sskf && !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::AlphaOutOfRange(self.alpha));
        }
        Ok(())
    }
}

/// `g(u) = f(x̄ + Lu)` together with the lower Cholesky factor `L` of `P_x`.
pub fn standardize(
    x_mean: &DVector<f64>,
    p_x: &SymMatrix,
    f: &DifferentiableMap,
) -> Result<(DifferentiableMap, DMatrix<f64>)> {
    let l = cholesky(p_x)?;
    let g = f.compose_affine(x_mean.clone(), l.clone())?;
    Ok((g, l))
}

/// `u ↦ g(Au)` for orthogonal `A`.
pub fn rotate_map(g: &DifferentiableMap, a: &DMatrix<f64>) -> Result<DifferentiableMap> {
    if !a.is_square() || a.nrows() != g.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "rotation matrix",
            expected: g.input_dim(),
            got: a.nrows(),
        });
    }
    let err = orthogonality_error(a);
    if !(err <= 1e-10) {
        return Err(Error::NotOrthogonal(err));
    }
    g.compose_affine(DVector::zeros(g.input_dim()), a.clone())
}

fn origin(g: &DifferentiableMap) -> DVector<f64> {
    DVector::zeros(g.input_dim())
}

pub fn estimate_ekf(g: &DifferentiableMap) -> Result<MomentEstimate> {
    let u0 = origin(g);
    let z = g.eval(&u0)?;
    let j = g.jacobian(&u0)?;
    Ok(MomentEstimate {
        z_mean: z,
        p_z: SymMatrix::symmetrized(&j * j.transpose()),
        p_xz: j.transpose(),
    })
}

/// `[tr(HᵢHⱼ)]ᵢⱼ`.
pub fn hessian_gram(hs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = hs.len();
    DMatrix::from_fn(m, m, |i, j| hs[i].dot(&hs[j]))
}

/// `[tr(Hᵢ)tr(Hⱼ)]ᵢⱼ`.
pub fn hessian_trace_outer(hs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let t = DVector::from_iterator(hs.len(), hs.iter().map(|h| h.trace()));
    &t * t.transpose()
}

/// Gaussian-mode compensation `(β/4)[tr(HᵢHⱼ)]`.
pub fn gaussian_compensation(hs: &[DMatrix<f64>], beta: f64) -> SymMatrix {
    SymMatrix::symmetrized(hessian_gram(hs) * (beta / 4.0))
}

/// Uniform-on-sphere compensation `n[tr(HᵢHⱼ) − tr Hᵢ tr Hⱼ / n] / (2(n+2))`,
/// scaled by `β/2`.
pub fn sphere_compensation(hs: &[DMatrix<f64>], beta: f64) -> SymMatrix {
    let n = hs.first().map_or(0, |h| h.nrows()) as f64;
    if hs.is_empty() || n == 0.0 {
        return SymMatrix::symmetrized(DMatrix::zeros(hs.len().max(1), hs.len().max(1)));
    }
    let c = (hessian_gram(hs) - hessian_trace_outer(hs) / n) * (n / (2.0 * (n + 2.0)));
    SymMatrix::symmetrized(c * (beta / 2.0))
}

pub fn estimate_ekf2(g: &DifferentiableMap, beta: f64, mode: Ekf2Mode) -> Result<MomentEstimate> {
    if beta < 0.0 {
        return Err(Error::NegativeBeta { kind: "EKF2", beta });
    }
    let u0 = origin(g);
    let z0 = g.eval(&u0)?;
    let j = g.jacobian(&u0)?;
    let hs = g.hessians(&u0)?;
    let half_traces = DVector::from_iterator(hs.len(), hs.iter().map(|h| 0.5 * h.trace()));
    let comp = match mode {
        Ekf2Mode::Gaussian => gaussian_compensation(&hs, beta),
        Ekf2Mode::Sphere => sphere_compensation(&hs, beta),
    };
    Ok(MomentEstimate {
        z_mean: z0 + half_traces,
        p_z: SymMatrix::symmetrized(&j * j.transpose() + comp.into_matrix()),
        p_xz: j.transpose(),
    })
}

/// Sigma-point estimate for SKF*, CKF* and SSKF.
pub fn estimate_sigma(g: &DifferentiableMap, cfg: &EstimatorConfig) -> Result<MomentEstimate> {
    cfg.validate()?;
    let n = g.input_dim();
    let m = g.output_dim();
    let kind = match cfg.kind {
        EstimatorKind::SkfStar => SigmaKind::Skf,
        EstimatorKind::CkfStar => SigmaKind::Ckf,
        EstimatorKind::Sskf => SigmaKind::Sskf,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{} is not a sigma-point estimator",
                other.label()
            )))
        }
    };
    let set = sigma_points(kind, n, cfg.alpha);
    let beta = cfg.beta;

    if kind == SigmaKind::Sskf {
        // Work with offsets from the center value so that the large weights
        // 1/α² multiply small differences instead of raw function values.
        let g0 = g.eval(&origin(g))?;
        let k = n + 1;
        let w = set.weights[0];
        let mut d = Vec::with_capacity(k);
        for p in &set.points[..k] {
            d.push(g.eval(p)? - &g0);
        }
        let mut delta = DVector::zeros(m);
        for di in &d {
            delta.axpy(w, di, 1.0);
        }
        let a2 = cfg.alpha * cfg.alpha;
        let mut p_z = &delta * delta.transpose() * (beta - a2);
        let mut p_xz = DMatrix::zeros(n, m);
        for (p, di) in set.points[..k].iter().zip(&d) {
            p_z.ger(w, di, di, 1.0);
            // Σwξ = 0, so centering by z̄ drops out of the cross term
            p_xz.ger(w, p, di, 1.0);
        }
        return Ok(MomentEstimate {
            z_mean: g0 + delta,
            p_z: SymMatrix::symmetrized(p_z),
            p_xz,
        });
    }

    let values: Vec<DVector<f64>> = set.points.iter().map(|p| g.eval(p)).collect::<Result<_>>()?;
    let mut z_mean = DVector::zeros(m);
    for (v, &w) in values.iter().zip(&set.weights) {
        z_mean.axpy(w, v, 1.0);
    }
    let mut p_z = DMatrix::zeros(m, m);
    let mut p_xz = DMatrix::zeros(n, m);
    for ((p, v), &w) in set.points.iter().zip(&values).zip(&set.weights) {
        let r = v - &z_mean;
        p_z.ger(w, &r, &r, 1.0);
        p_xz.ger(w, p, &r, 1.0);
    }
    if beta != 0.0 {
        let r0 = g.eval(&origin(g))? - &z_mean;
        p_z.ger(beta, &r0, &r0, 1.0);
    }
    let p_z = SymMatrix::symmetrized(p_z);
    if beta < 0.0 {
        let min = min_eig_sym(&p_z)?;
        let tol = psd_tol(&p_z);
        if min < -tol {
            return Err(Error::NotPositiveSemidefinite { min_eig: min, tol });
        }
    }
    Ok(MomentEstimate { z_mean, p_z, p_xz })
}

/// Dispatches on `cfg.kind`; `g` must already be standardized.
pub fn estimate(g: &DifferentiableMap, cfg: &EstimatorConfig) -> Result<MomentEstimate> {
    cfg.validate()?;
    match cfg.kind {
        EstimatorKind::Ekf => estimate_ekf(g),
        EstimatorKind::Ekf2 => estimate_ekf2(g, cfg.beta, cfg.ekf2_mode),
        _ => estimate_sigma(g, cfg),
    }
}

/// Moments of `f(x)` for `x ~ (x̄, P_x)` with `P_xz` in x-space.
pub fn estimate_moments(
    f: &DifferentiableMap,
    x_mean: &DVector<f64>,
    p_x: &SymMatrix,
    cfg: &EstimatorConfig,
) -> Result<MomentEstimate> {
    let l = cholesky(p_x)?;
    estimate_moments_factored(f, x_mean, &l, cfg)
}

/// As [`estimate_moments`] with a precomputed factor `P_x = LLᵀ`.
pub fn estimate_moments_factored(
    f: &DifferentiableMap,
    x_mean: &DVector<f64>,
    l: &DMatrix<f64>,
    cfg: &EstimatorConfig,
) -> Result<MomentEstimate> {
    let g = f.compose_affine(x_mean.clone(), l.clone())?;
    let mut est = estimate(&g, cfg)?;
    est.p_xz = l * est.p_xz;
    Ok(est)
}

/// `P_z − g'(0)g'(0)ᵀ`.
pub fn compensation(est: &MomentEstimate, g: &DifferentiableMap) -> Result<SymMatrix> {
    let j = g.jacobian(&origin(g))?;
    Ok(SymMatrix::symmetrized(est.p_z.as_matrix() - &j * j.transpose()))
}

/// Second-order closed form approached by SSKF as α → 0:
/// `z̄ = g(0) + ½[tr Hᵢ]`, `P_z = JJᵀ + (β/4)[tr Hᵢ tr Hⱼ]`, `P_xz = Jᵀ`.
pub fn sskf_limit(g: &DifferentiableMap, beta: f64) -> Result<MomentEstimate> {
    let u0 = origin(g);
    let z0 = g.eval(&u0)?;
    let j = g.jacobian(&u0)?;
    let hs = g.hessians(&u0)?;
    let half_traces = DVector::from_iterator(hs.len(), hs.iter().map(|h| 0.5 * h.trace()));
    Ok(MomentEstimate {
        z_mean: z0 + half_traces,
        p_z: SymMatrix::symmetrized(&j * j.transpose() + hessian_trace_outer(&hs) * (beta / 4.0)),
        p_xz: j.transpose(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitRow {
    pub alpha: f64,
    /// Relative Frobenius errors (absolute when the reference is zero).
    pub z_mean_err: f64,
    pub p_z_err: f64,
    pub p_xz_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitReport {
    pub limit: MomentEstimate,
    pub rows: Vec<LimitRow>,
}

impl LimitReport {
    /// True when every error sequence is non-increasing up to `slack` and
    /// the smallest α achieves errors no larger than the largest α.
    pub fn is_converging(&self, slack: f64) -> bool {
        let mono = |f: fn(&LimitRow) -> f64| self.rows.windows(2).all(|w| f(&w[1]) <= f(&w[0]) + slack);
        mono(|r| r.z_mean_err) && mono(|r| r.p_z_err) && mono(|r| r.p_xz_err)
    }
}

fn rel_err_abs_floor(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // zero references (e.g. no curvature) fall back to absolute error
    let nb = b.norm();
    let d = (a - b).norm();
    if nb > 0.0 {
        d / nb
    } else {
        d
    }
}

/// Compares SSKF(α, β) against [`sskf_limit`] for each α of the sequence.
pub fn sskf_limit_check(g: &DifferentiableMap, beta: f64, alphas: &[f64]) -> Result<LimitReport> {
    if g.analytic_degree() != Some(2) {
        return Err(Error::NotQuadratic);
    }
    let limit = sskf_limit(g, beta)?;
    let zl = DMatrix::from_column_slice(limit.z_mean.len(), 1, limit.z_mean.as_slice());
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let est = estimate_sigma(g, &EstimatorConfig::sskf(beta, alpha))?;
        let z = DMatrix::from_column_slice(est.z_mean.len(), 1, est.z_mean.as_slice());
        rows.push(LimitRow {
            alpha,
            z_mean_err: rel_err_abs_floor(&z, &zl),
            p_z_err: rel_err_abs_floor(est.p_z.as_matrix(), limit.p_z.as_matrix()),
            p_xz_err: rel_err_abs_floor(&est.p_xz, &limit.p_xz),
        });
    }
    Ok(LimitReport { limit, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_quadratic;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn square() -> DifferentiableMap {
        make_quadratic(v(&[0.0]), m1(0.0), vec![m1(2.0)]).unwrap()
    }

    fn cube() -> DifferentiableMap {
        DifferentiableMap::new(1, 1, |u| v(&[u[0].powi(3)])).with_jacobian(|u| m1(3.0 * u[0] * u[0]))
    }

    #[test]
    fn standardize_examples() {
        let f = DifferentiableMap::new(1, 1, |x| x.clone()).with_jacobian(|_| m1(1.0));
        let (g, l) = standardize(&v(&[0.0]), &SymMatrix::from_diagonal(&[4.0]), &f).unwrap();
        assert_eq!(l, m1(2.0));
        assert_eq!(g.eval(&v(&[1.5])).unwrap()[0], 3.0);

        let (g, l) = standardize(&v(&[1.0]), &SymMatrix::identity(1), &square()).unwrap();
        assert_eq!(l, m1(1.0));
        assert_eq!(g.eval(&v(&[0.5])).unwrap()[0], 2.25);
        assert!((g.jacobian(&v(&[0.0])).unwrap()[(0, 0)] - 2.0).abs() < 1e-12);

        let bad = SymMatrix::from_diagonal(&[-1.0]);
        assert!(matches!(
            standardize(&v(&[0.0]), &bad, &f),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn ekf_examples() {
        let lin = DifferentiableMap::new(1, 1, |u| u * 2.0).with_jacobian(|_| m1(2.0));
        let e = estimate_ekf(&lin).unwrap();
        assert_eq!((e.z_mean[0], e.p_z[(0, 0)], e.p_xz[(0, 0)]), (0.0, 4.0, 2.0));

        let e = estimate_ekf(&square()).unwrap();
        assert_eq!((e.z_mean[0], e.p_z[(0, 0)], e.p_xz[(0, 0)]), (0.0, 0.0, 0.0));

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        let g = make_quadratic(v(&[0.0, 0.0]), a.clone(), vec![DMatrix::zeros(2, 2); 2]).unwrap();
        let e = estimate_ekf(&g).unwrap();
        assert_eq!(e.p_z.as_matrix(), &DMatrix::from_diagonal(&v(&[2.0, 2.0])));
        assert_eq!(e.p_xz, a);
        assert!(compensation(&e, &g).unwrap().amax() == 0.0);
    }

    #[test]
    fn ekf2_examples() {
        let e = estimate_ekf2(&square(), 2.0, Ekf2Mode::Gaussian).unwrap();
        assert_eq!((e.z_mean[0], e.p_z[(0, 0)], e.p_xz[(0, 0)]), (1.0, 2.0, 0.0));
        assert_eq!(compensation(&e, &square()).unwrap()[(0, 0)], 2.0);

        for beta in [0.0, 1.0, 2.0, 7.5] {
            let e = estimate_ekf2(&square(), beta, Ekf2Mode::Sphere).unwrap();
            assert_eq!((e.z_mean[0], e.p_z[(0, 0)]), (1.0, 0.0));
        }

        let saddle = make_quadratic(
            v(&[0.0]),
            DMatrix::zeros(1, 2),
            vec![DMatrix::from_diagonal(&v(&[2.0, -2.0]))],
        )
        .unwrap();
        let e = estimate_ekf2(&saddle, 2.0, Ekf2Mode::Sphere).unwrap();
        assert!((compensation(&e, &saddle).unwrap()[(0, 0)] - 2.0).abs() < 1e-12);

        assert!(matches!(
            estimate_ekf2(&square(), -0.1, Ekf2Mode::Gaussian),
            Err(Error::NegativeBeta { .. })
        ));
    }

    #[test]
    fn ckf_examples() {
        let e = estimate_sigma(&square(), &EstimatorConfig::ckf(0.0)).unwrap();
        assert_eq!((e.z_mean[0], e.p_z[(0, 0)], e.p_xz[(0, 0)]), (1.0, 0.0, 0.0));

        let e = estimate_sigma(&square(), &EstimatorConfig::ckf(1.5)).unwrap();
        assert_eq!(e.p_z[(0, 0)], 1.5);

        let e = estimate_sigma(&cube(), &EstimatorConfig::ckf(0.0)).unwrap();
        assert_eq!((e.z_mean[0], e.p_z[(0, 0)], e.p_xz[(0, 0)]), (0.0, 1.0, 1.0));
        assert_eq!(compensation(&e, &cube()).unwrap()[(0, 0)], 1.0);
        assert_eq!(estimate_ekf(&cube()).unwrap().p_z[(0, 0)], 0.0);
    }

    #[test]
    fn beta_bounds() {
        assert!(matches!(
            estimate_sigma(&square(), &EstimatorConfig::skf(-1.5)),
            Err(Error::BetaOutOfRange { .. })
        ));
        assert!(matches!(
            estimate(&square(), &EstimatorConfig::sskf(-0.5, 1e-3)),
            Err(Error::NegativeBeta { .. })
        ));
        assert!(matches!(
            estimate(&square(), &EstimatorConfig::sskf(2.0, 0.0)),
            Err(Error::AlphaOutOfRange(_))
        ));
        // admissible β, but the compensation term overwhelms the spread
        assert!(matches!(
            estimate_sigma(&square(), &EstimatorConfig::ckf(-1.0)),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn sskf_limit_examples() {
        let r = sskf_limit_check(&square(), 2.0, &[1e-3]).unwrap();
        let e = estimate_sigma(&square(), &EstimatorConfig::sskf(2.0, 1e-3)).unwrap();
        assert!((e.z_mean[0] - 1.0).abs() < 1e-5);
        assert!((e.p_z[(0, 0)] - 2.0).abs() < 1e-4);
        assert_eq!(r.limit.p_z[(0, 0)], 2.0);

        let bowl = make_quadratic(v(&[0.0]), DMatrix::zeros(1, 2), vec![DMatrix::identity(2, 2) * 2.0]).unwrap();
        let r = sskf_limit_check(&bowl, 2.0, &[0.5, 0.1, 1e-3]).unwrap();
        assert_eq!(r.limit.p_z[(0, 0)], 8.0);

        let lin = make_quadratic(
            v(&[1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]),
            vec![DMatrix::zeros(2, 2); 2],
        )
        .unwrap();
        let r = sskf_limit_check(&lin, 3.0, &[1.0, 0.1, 1e-3]).unwrap();
        for row in &r.rows {
            assert!(
                row.z_mean_err < 1e-9 && row.p_z_err < 1e-8 && row.p_xz_err < 1e-8,
                "{row:?}"
            );
        }

        assert!(matches!(
            sskf_limit_check(&cube(), 2.0, &[0.1]),
            Err(Error::NotQuadratic)
        ));
    }

    #[test]
    fn rotate_map_examples() {
        let g = make_quadratic(
            v(&[0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            vec![DMatrix::zeros(2, 2)],
        )
        .unwrap();
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let r = rotate_map(&g, &rot).unwrap();
        assert_eq!(r.eval(&v(&[0.3, 0.7])).unwrap()[0], -0.7);

        let s = rotate_map(&square(), &(-DMatrix::identity(1, 1))).unwrap();
        assert_eq!(s.eval(&v(&[1.5])).unwrap(), square().eval(&v(&[1.5])).unwrap());

        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(rotate_map(&g, &skew), Err(Error::NotOrthogonal(_))));
    }

    #[test]
    fn x_space_cross_covariance() {
        let f = DifferentiableMap::new(1, 1, |x| x * 3.0)
            .with_jacobian(|_| m1(3.0))
            .with_degree(1);
        for cfg in [
            EstimatorConfig::ekf(),
            EstimatorConfig::ekf2(2.0, Ekf2Mode::Gaussian),
            EstimatorConfig::ckf(0.0),
            EstimatorConfig::skf(0.0),
            EstimatorConfig::sskf(2.0, 1e-3),
        ] {
            let e = estimate_moments(&f, &v(&[1.0]), &SymMatrix::from_diagonal(&[4.0]), &cfg).unwrap();
            assert!((e.z_mean[0] - 3.0).abs() < 1e-9);
            assert!((e.p_z[(0, 0)] - 36.0).abs() < 1e-6, "{:?}", cfg.kind);
            assert!((e.p_xz[(0, 0)] - 12.0).abs() < 1e-6);
        }
    }
}
