//! Predict, update, recalibrate and back-out steps of the compensated filter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SystemModel;
use crate::moments::{estimate_moments_factored, EstimatorConfig, MomentEstimate};
use crate::numerics::{check_psd, cholesky, SymMatrix};

/// State mean and covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief {
    pub x_hat: DVector<f64>,
    pub p: SymMatrix,
}

impl Belief {
    pub fn new(x_hat: DVector<f64>, p: SymMatrix) -> Result<Self> {
        if x_hat.len() != p.dim() {
            return Err(Error::DimensionMismatch {
                what: "belief covariance",
                expected: x_hat.len(),
                got: p.dim(),
            });
        }
        if !x_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        check_psd(&p)?;
        Ok(Belief { x_hat, p })
    }

    pub fn trace(&self) -> f64 {
        self.p.trace()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub estimator: EstimatorConfig,
    #[serde(default = "yes")]
    pub recalibrate_enabled: bool,
    #[serde(default = "yes")]
    pub backout_enabled: bool,
}

fn yes() -> bool {
    true
}

impl FilterConfig {
    pub fn new(estimator: EstimatorConfig) -> Self {
        FilterConfig {
            estimator,
            recalibrate_enabled: true,
            backout_enabled: true,
        }
    }

    /// Plain predict/update filter without recalibration or back-out.
    pub fn conventional(estimator: EstimatorConfig) -> Self {
        FilterConfig {
            estimator,
            recalibrate_enabled: false,
            backout_enabled: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub z_pred: DVector<f64>,
    pub s_pre: SymMatrix,
    pub s_post: SymMatrix,
    pub k: DMatrix<f64>,
    pub nis: f64,
    pub backed_out: bool,
    pub trace_pred: f64,
    pub trace_post: f64,
}

/// Output of [`update`]: the updated mean together with everything the
/// covariance step needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub x_hat: DVector<f64>,
    pub z_pred: DVector<f64>,
    pub s_pre: SymMatrix,
    pub k: DMatrix<f64>,
    pub nis: f64,
    /// Predicted-point moments, reused when recalibration is off.
    pub moments: MomentEstimate,
}

fn symmetrize(m: DMatrix<f64>) -> SymMatrix {
    SymMatrix::symmetrized(m)
}

fn factor_innovation(s: &SymMatrix) -> Result<Cholesky<f64, Dyn>> {
    if !s.is_finite() {
        return Err(Error::SingularInnovation);
    }
    if let Some(c) = Cholesky::new(s.as_matrix().clone()) {
        return Ok(c);
    }
    let m = s.dim();
    let jitter = 1e-12 * (1.0 + s.trace().abs() / m as f64);
    let mut j = s.as_matrix().clone();
    for i in 0..m {
        j[(i, i)] += jitter;
    }
    Cholesky::new(j).ok_or(Error::SingularInnovation)
}

fn check_state(model: &SystemModel, b: &Belief) -> Result<()> {
    if b.x_hat.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "belief state",
            expected: model.state_dim(),
            got: b.x_hat.len(),
        });
    }
    Ok(())
}

/// Propagates the belief through the transition: `x̂′ = z̄`, `P′ = P_z + Q`.
pub fn predict(b: &Belief, model: &SystemModel, u: &DVector<f64>, cfg: &FilterConfig) -> Result<Belief> {
    check_state(model, b)?;
    let f = model.transition_map(u)?;
    let l = cholesky(&b.p)?;
    let est = estimate_moments_factored(&f, &b.x_hat, &l, &cfg.estimator)?;
    let p = symmetrize(est.p_z.into_matrix() + model.process_noise().as_matrix());
    check_psd(&p)?;
    Ok(Belief { x_hat: est.z_mean, p })
}

/// Mean update `x̂ + K(z − ẑ)` with `K = P_xz S⁻¹`, `S = P_z + R`.
pub fn update(b_pred: &Belief, model: &SystemModel, z: &DVector<f64>, cfg: &FilterConfig) -> Result<Update> {
    check_state(model, b_pred)?;
    if z.len() != model.meas_dim() {
        return Err(Error::DimensionMismatch {
            what: "measurement",
            expected: model.meas_dim(),
            got: z.len(),
        });
    }
    let l = cholesky(&b_pred.p)?;
    let est = estimate_moments_factored(model.measurement(), &b_pred.x_hat, &l, &cfg.estimator)?;
    let s_pre = symmetrize(est.p_z.as_matrix() + model.measurement_noise().as_matrix());
    let chol = factor_innovation(&s_pre)?;
    let k = chol.solve(&est.p_xz.transpose()).transpose();
    let r = z - &est.z_mean;
    let nis = r.dot(&chol.solve(&r)).max(0.0);
    let x_hat = &b_pred.x_hat + &k * &r;
    if !x_hat.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteEvaluation);
    }
    Ok(Update {
        x_hat,
        z_pred: est.z_mean.clone(),
        s_pre,
        k,
        nis,
        moments: est,
    })
}

/// Posterior covariance `P + K S Kᵀ − P_xz Kᵀ − K P_xzᵀ` with the moments
/// re-estimated at the updated mean (or the predicted-point moments when
/// recalibration is disabled). Returns the posterior belief and `S_post`.
pub fn recalibrate(
    b_pred: &Belief,
    upd: &Update,
    model: &SystemModel,
    cfg: &FilterConfig,
) -> Result<(Belief, SymMatrix)> {
    let est = if cfg.recalibrate_enabled {
        let l = cholesky(&b_pred.p)?;
        estimate_moments_factored(model.measurement(), &upd.x_hat, &l, &cfg.estimator)?
    } else {
        upd.moments.clone()
    };
    let s_post = symmetrize(est.p_z.as_matrix() + model.measurement_noise().as_matrix());
    let k = &upd.k;
    let pxz_kt = &est.p_xz * k.transpose();
    let p = b_pred.p.as_matrix() + k * s_post.as_matrix() * k.transpose() - &pxz_kt - pxz_kt.transpose();
    let p = symmetrize(p);
    if !p.is_finite() {
        return Err(Error::NonFiniteEvaluation);
    }
    check_psd(&p)?;
    Ok((
        Belief {
            x_hat: upd.x_hat.clone(),
            p,
        },
        s_post,
    ))
}

/// Reverts to the prior when the posterior trace exceeds the predicted one.
pub fn back_out(b_pred: &Belief, b_post: Belief, mut trace: StepTrace, cfg: &FilterConfig) -> (Belief, StepTrace) {
    let tp = b_pred.trace();
    let tq = b_post.trace();
    trace.trace_pred = tp;
    if cfg.backout_enabled && tq > tp {
        trace.backed_out = true;
        trace.trace_post = tp;
        (b_pred.clone(), trace)
    } else {
        trace.backed_out = false;
        trace.trace_post = tq;
        (b_post, trace)
    }
}

/// Measurement step (update, recalibrate, back out) on a predicted belief.
pub fn correct(
    b_pred: &Belief,
    model: &SystemModel,
    z: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(Belief, StepTrace)> {
    let upd = update(b_pred, model, z, cfg)?;
    let (b_post, s_post) = recalibrate(b_pred, &upd, model, cfg)?;
    let trace = StepTrace {
        z_pred: upd.z_pred,
        s_pre: upd.s_pre,
        s_post,
        k: upd.k,
        nis: upd.nis,
        backed_out: false,
        trace_pred: 0.0,
        trace_post: 0.0,
    };
    Ok(back_out(b_pred, b_post, trace, cfg))
}

/// One full cycle: predict with input `u`, then correct with measurement `z`.
pub fn step(
    b: &Belief,
    model: &SystemModel,
    u: &DVector<f64>,
    z: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<(Belief, StepTrace)> {
    let b_pred = predict(b, model, u, cfg)?;
    correct(&b_pred, model, z, cfg)
}
