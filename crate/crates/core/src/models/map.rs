use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{fd_hessians, fd_jacobian, FD_HESSIAN_STEP, FD_JACOBIAN_STEP};

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type HessiansFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;

/// Vector-valued map `Rⁿ → Rᵐ` with optional analytic derivatives.
///
/// Missing derivatives fall back to central finite differences. Cloning is
/// cheap (shared closures).
#[derive(Clone)]
pub struct DifferentiableMap {
    n: usize,
    m: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
    hessians: Option<Arc<HessiansFn>>,
    analytic_degree: Option<u32>,
    jacobian_step: f64,
    hessian_step: f64,
}

impl fmt::Debug for DifferentiableMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DifferentiableMap")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("analytic_hessians", &self.hessians.is_some())
            .field("analytic_degree", &self.analytic_degree)
            .finish()
    }
}

impl DifferentiableMap {
    pub fn new<F>(n: usize, m: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        DifferentiableMap {
            n,
            m,
            eval: Arc::new(eval),
            jacobian: None,
            hessians: None,
            analytic_degree: None,
            jacobian_step: FD_JACOBIAN_STEP,
            hessian_step: FD_HESSIAN_STEP,
        }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_hessians<F>(mut self, hess: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.hessians = Some(Arc::new(hess));
        self
    }

    /// Marks the map as an exact polynomial of the given total degree.
    pub fn with_degree(mut self, degree: u32) -> Self {
        self.analytic_degree = Some(degree);
        self
    }

    pub fn with_fd_steps(mut self, jacobian_step: f64, hessian_step: f64) -> Self {
        assert!(jacobian_step > 0.0 && hessian_step > 0.0);
        self.jacobian_step = jacobian_step;
        self.hessian_step = hessian_step;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    pub fn analytic_degree(&self) -> Option<u32> {
        self.analytic_degree
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn has_analytic_hessians(&self) -> bool {
        self.hessians.is_some()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "map input",
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let y = (self.eval)(x);
        debug_assert_eq!(y.len(), self.m, "map returned wrong output dimension");
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(Error::NonFiniteEvaluation)
        }
    }

    /// m×n Jacobian at `x`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        match &self.jacobian {
            Some(j) => {
                let jac = j(x);
                if jac.iter().all(|v| v.is_finite()) {
                    Ok(jac)
                } else {
                    Err(Error::NonFiniteEvaluation)
                }
            }
            None => fd_jacobian(|p| self.eval(p), x, self.jacobian_step),
        }
    }

    /// One symmetric n×n Hessian per output component.
    pub fn hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        self.check_input(x)?;
        if self.analytic_degree == Some(1) {
            return Ok(vec![DMatrix::zeros(self.n, self.n); self.m]);
        }
        match &self.hessians {
            Some(h) => {
                let hs = h(x);
                if hs.iter().all(|m| m.iter().all(|v| v.is_finite())) {
                    Ok(hs)
                } else {
                    Err(Error::NonFiniteEvaluation)
                }
            }
            None => fd_hessians(|p| self.eval(p), x, self.hessian_step),
        }
    }

    /// `u ↦ f(offset + linear·u)` with chain-ruled derivatives.
    pub fn compose_affine(&self, offset: DVector<f64>, linear: DMatrix<f64>) -> Result<DifferentiableMap> {
        if offset.len() != self.n || linear.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                what: "affine pre-composition",
                expected: self.n,
                got: linear.nrows(),
            });
        }
        let k = linear.ncols();
        let offset = Arc::new(offset);
        let linear = Arc::new(linear);
        let inner = self.clone();

        let (o, l, f) = (offset.clone(), linear.clone(), inner.clone());
        let mut out = DifferentiableMap::new(k, self.m, move |u| (f.eval)(&(&*o + &*l * u)));
        out.jacobian_step = self.jacobian_step;
        out.hessian_step = self.hessian_step;
        out.analytic_degree = self.analytic_degree;

        if let Some(jac) = &self.jacobian {
            let (o, l, jac) = (offset.clone(), linear.clone(), jac.clone());
            out.jacobian = Some(Arc::new(move |u| jac(&(&*o + &*l * u)) * &*l));
        }
        if let Some(hess) = &self.hessians {
            let (o, l, hess) = (offset, linear, hess.clone());
            out.hessians = Some(Arc::new(move |u| {
                let lt = l.transpose();
                hess(&(&*o + &*l * u)).into_iter().map(|h| &lt * h * &*l).collect()
            }));
        }
        Ok(out)
    }

    /// Largest relative discrepancy between the analytic derivatives and
    /// finite differences over the given points (0 when the map carries no
    /// analytic derivatives).
    pub fn derivative_self_test(&self, points: &[DVector<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in points {
            if self.jacobian.is_some() {
                let a = self.jacobian(x)?;
                let fd = fd_jacobian(|p| self.eval(p), x, 1e-6)?;
                worst = worst.max((&a - &fd).norm() / (1.0 + a.norm()));
            }
            if self.hessians.is_some() {
                let a = self.hessians(x)?;
                let fd = match &self.jacobian {
                    // differentiate the analytic Jacobian row by row
                    Some(_) => hessians_from_jacobian(self, x, 1e-5)?,
                    None => fd_hessians(|p| self.eval(p), x, 1e-4)?,
                };
                for (ha, hf) in a.iter().zip(&fd) {
                    worst = worst.max((ha - hf).norm() / (1.0 + ha.norm()));
                }
            }
        }
        Ok(worst)
    }
}

fn hessians_from_jacobian(map: &DifferentiableMap, x: &DVector<f64>, h: f64) -> Result<Vec<DMatrix<f64>>> {
    let (n, m) = (map.n, map.m);
    let mut out = vec![DMatrix::zeros(n, n); m];
    let mut xp = x.clone();
    for j in 0..n {
        xp[j] = x[j] + h;
        let jp = map.jacobian(&xp)?;
        xp[j] = x[j] - h;
        let jm = map.jacobian(&xp)?;
        xp[j] = x[j];
        let d = (jp - jm) / (2.0 * h);
        for (i, hi) in out.iter_mut().enumerate() {
            for k in 0..n {
                hi[(k, j)] = d[(i, k)];
            }
        }
    }
    for hi in &mut out {
        let t = hi.transpose();
        *hi = (&*hi + t) * 0.5;
    }
    Ok(out)
}
