//! Discrete-time additive-noise systems and the built-in model registry.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{make_quadratic, DifferentiableMap};
use crate::error::{Error, Result};
use crate::numerics::{check_psd, cholesky, SymMatrix};

type InputFn = dyn Fn(usize) -> DVector<f64> + Send + Sync;

/// `x_k = f(x_{k-1}, u_{k-1}) + w`, `z_k = h(x_k) + v` with `w ~ (0, Q)`,
/// `v ~ (0, R)`.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_dim: usize,
    meas_dim: usize,
    input_dim: usize,
    /// Map over the stacked vector `[x; u]`.
    transition: DifferentiableMap,
    measurement: DifferentiableMap,
    process_noise: SymMatrix,
    measurement_noise: SymMatrix,
    initial_mean: DVector<f64>,
    initial_cov: SymMatrix,
    horizon: usize,
    inputs: Arc<InputFn>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .field("input_dim", &self.input_dim)
            .field("horizon", &self.horizon)
            .finish()
    }
}

/// Builder-style description used by [`SystemModel::new`].
pub struct SystemSpec {
    pub name: String,
    pub transition: DifferentiableMap,
    pub input_dim: usize,
    pub measurement: DifferentiableMap,
    pub process_noise: SymMatrix,
    pub measurement_noise: SymMatrix,
    pub initial_mean: DVector<f64>,
    pub initial_cov: SymMatrix,
    pub horizon: usize,
    pub inputs: Arc<InputFn>,
}

impl SystemModel {
    pub fn new(spec: SystemSpec) -> Result<Self> {
        let nx = spec.initial_mean.len();
        let nu = spec.input_dim;
        let nz = spec.measurement.output_dim();
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        dim(
            "transition input (state + inputs)",
            nx + nu,
            spec.transition.input_dim(),
        )?;
        dim("transition output", nx, spec.transition.output_dim())?;
        dim("measurement input", nx, spec.measurement.input_dim())?;
        dim("process noise", nx, spec.process_noise.dim())?;
        dim("measurement noise", nz, spec.measurement_noise.dim())?;
        dim("initial covariance", nx, spec.initial_cov.dim())?;
        dim("input sequence", nu, (spec.inputs)(0).len())?;
        check_psd(&spec.process_noise)?;
        check_psd(&spec.initial_cov)?;
        // R must be positive definite, not merely PSD
        if nalgebra::Cholesky::new(spec.measurement_noise.as_matrix().clone()).is_none() {
            return Err(Error::InvalidArgument(
                "measurement noise must be positive definite".into(),
            ));
        }
        Ok(SystemModel {
            name: spec.name,
            state_dim: nx,
            meas_dim: nz,
            input_dim: nu,
            transition: spec.transition,
            measurement: spec.measurement,
            process_noise: spec.process_noise,
            measurement_noise: spec.measurement_noise,
            initial_mean: spec.initial_mean,
            initial_cov: spec.initial_cov,
            horizon: spec.horizon,
            inputs: spec.inputs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn transition(&self) -> &DifferentiableMap {
        &self.transition
    }
    pub fn measurement(&self) -> &DifferentiableMap {
        &self.measurement
    }
    pub fn process_noise(&self) -> &SymMatrix {
        &self.process_noise
    }
    pub fn measurement_noise(&self) -> &SymMatrix {
        &self.measurement_noise
    }
    pub fn initial_mean(&self) -> &DVector<f64> {
        &self.initial_mean
    }
    pub fn initial_cov(&self) -> &SymMatrix {
        &self.initial_cov
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Input applied between step `k` and `k + 1`.
    pub fn input(&self, k: usize) -> DVector<f64> {
        (self.inputs)(k)
    }

    /// State-transition map `x ↦ f(x, u)` for a fixed input.
    pub fn transition_map(&self, u: &DVector<f64>) -> Result<DifferentiableMap> {
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.input_dim,
                got: u.len(),
            });
        }
        let nx = self.state_dim;
        let stack = {
            let u = u.clone();
            move |x: &DVector<f64>| {
                let mut xu = DVector::zeros(nx + u.len());
                xu.rows_mut(0, nx).copy_from(x);
                xu.rows_mut(nx, u.len()).copy_from(&u);
                xu
            }
        };
        let f = self.transition.clone();
        let s = stack.clone();
        let mut map = DifferentiableMap::new(nx, nx, move |x| {
            f.eval(&s(x)).unwrap_or_else(|_| DVector::from_element(nx, f64::NAN))
        });
        if self.transition.has_analytic_jacobian() {
            let (f, s) = (self.transition.clone(), stack.clone());
            map = map.with_jacobian(move |x| match f.jacobian(&s(x)) {
                Ok(j) => j.columns(0, nx).into_owned(),
                Err(_) => DMatrix::from_element(nx, nx, f64::NAN),
            });
        }
        if self.transition.has_analytic_hessians() {
            let (f, s) = (self.transition.clone(), stack);
            map = map.with_hessians(move |x| match f.hessians(&s(x)) {
                Ok(hs) => hs.into_iter().map(|h| h.view((0, 0), (nx, nx)).into_owned()).collect(),
                Err(_) => vec![DMatrix::from_element(nx, nx, f64::NAN); nx],
            });
        }
        if let Some(d) = self.transition.analytic_degree() {
            map = map.with_degree(d);
        }
        Ok(map)
    }

    /// Replaces R by `std² · I`.
    pub fn with_measurement_std(mut self, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::InvalidArgument("measurement std must be positive".into()));
        }
        self.measurement_noise = SymMatrix::identity(self.meas_dim).scale(std * std);
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_initial_cov(mut self, p0: SymMatrix) -> Result<Self> {
        if p0.dim() != self.state_dim {
            return Err(Error::DimensionMismatch {
                what: "initial covariance",
                expected: self.state_dim,
                got: p0.dim(),
            });
        }
        check_psd(&p0)?;
        self.initial_cov = p0;
        Ok(self)
    }

    /// Lower Cholesky factors of (P₀, Q, R) for sampling truth trajectories.
    pub fn noise_factors(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        Ok((
            cholesky(&self.initial_cov)?,
            cholesky(&self.process_noise)?,
            cholesky(&self.measurement_noise)?,
        ))
    }
}

/// Either a bare map or a full dynamic system.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum RegistryEntry {
    Map(DifferentiableMap),
    System(SystemModel),
}

pub const REGISTRY_NAMES: [&str; 5] = ["fig2_map", "scalar_demo", "tracking3d", "terrain_nav", "generator4"];

pub fn registry_get(name: &str) -> Result<RegistryEntry> {
    match name {
        "fig2_map" => Ok(RegistryEntry::Map(fig2_map())),
        "scalar_demo" => Ok(RegistryEntry::System(scalar_demo())),
        "tracking3d" => Ok(RegistryEntry::System(tracking3d())),
        "terrain_nav" => Ok(RegistryEntry::System(terrain_nav())),
        "generator4" => Ok(RegistryEntry::System(generator4())),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Looks up a registry entry that must be a system.
pub fn system(name: &str) -> Result<SystemModel> {
    match registry_get(name)? {
        RegistryEntry::System(s) => Ok(s),
        RegistryEntry::Map(_) => Err(Error::UnknownModel(format!("{name} is a map, not a system"))),
    }
}

/// `f(x) = x₁ + 0.8x₁² + 0.6x₁x₂ − 0.4x₂²`.
pub fn fig2_map() -> DifferentiableMap {
    make_quadratic(
        DVector::zeros(1),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        vec![DMatrix::from_row_slice(2, 2, &[1.6, 0.6, 0.6, -0.8])],
    )
    .expect("fig2 map is well formed")
}

fn constant_input(u: DVector<f64>) -> Arc<InputFn> {
    Arc::new(move |_| u.clone())
}

/// Random walk `x_k = x_{k-1} + w`, `z = x + v`, Q = 1e-8, R = 1e-4.
pub fn scalar_demo() -> SystemModel {
    let id = DifferentiableMap::new(1, 1, |x| x.clone())
        .with_jacobian(|_| DMatrix::identity(1, 1))
        .with_degree(1);
    SystemModel::new(SystemSpec {
        name: "scalar_demo".into(),
        transition: id.clone(),
        input_dim: 0,
        measurement: id,
        process_noise: SymMatrix::from_diagonal(&[1e-8]),
        measurement_noise: SymMatrix::from_diagonal(&[1e-4]),
        initial_mean: DVector::zeros(1),
        initial_cov: SymMatrix::identity(1),
        horizon: 200,
        inputs: constant_input(DVector::zeros(0)),
    })
    .expect("scalar demo is well formed")
}

/// Builds a linear system `x' = F x + B u`, `z = H x` (no curvature).
#[allow(clippy::too_many_arguments)]
pub fn linear_system(
    name: &str,
    f: DMatrix<f64>,
    b: DMatrix<f64>,
    h: DMatrix<f64>,
    q: SymMatrix,
    r: SymMatrix,
    x0: DVector<f64>,
    p0: SymMatrix,
    horizon: usize,
    inputs: Arc<InputFn>,
) -> Result<SystemModel> {
    let nx = f.nrows();
    let nu = b.ncols();
    let nz = h.nrows();
    let mut fb = DMatrix::zeros(nx, nx + nu);
    fb.view_mut((0, 0), (nx, nx)).copy_from(&f);
    fb.view_mut((0, nx), (nx, nu)).copy_from(&b);
    let fb_eval = fb.clone();
    let transition = DifferentiableMap::new(nx + nu, nx, move |xu| &fb_eval * xu)
        .with_jacobian(move |_| fb.clone())
        .with_degree(1);
    let h_eval = h.clone();
    let measurement = DifferentiableMap::new(nx, nz, move |x| &h_eval * x)
        .with_jacobian(move |_| h.clone())
        .with_degree(1);
    SystemModel::new(SystemSpec {
        name: name.into(),
        transition,
        input_dim: nu,
        measurement,
        process_noise: q,
        measurement_noise: r,
        initial_mean: x0,
        initial_cov: p0,
        horizon,
        inputs,
    })
}

const TRACKING_ANCHORS: [[f64; 3]; 2] = [[-10.0, 0.0, 0.0], [10.0, 0.0, 0.0]];

/// Constant-velocity target in 3D (Δt = 1) with acceleration inputs and
/// range measurements to two fixed anchors, noise std 0.01.
pub fn tracking3d() -> SystemModel {
    let dt = 1.0;
    let mut f = DMatrix::identity(6, 6);
    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        f[(i, i + 3)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(i + 3, i)] = dt;
    }
    let mut fb = DMatrix::zeros(6, 9);
    fb.view_mut((0, 0), (6, 6)).copy_from(&f);
    fb.view_mut((0, 6), (6, 3)).copy_from(&b);
    let fb_eval = fb.clone();
    let transition = DifferentiableMap::new(9, 6, move |xu| &fb_eval * xu)
        .with_jacobian(move |_| fb.clone())
        .with_degree(1);

    let ranges = |x: &DVector<f64>| {
        DVector::from_iterator(
            2,
            TRACKING_ANCHORS
                .iter()
                .map(|a| ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2) + (x[2] - a[2]).powi(2)).sqrt()),
        )
    };
    let measurement = DifferentiableMap::new(6, 2, ranges)
        .with_jacobian(move |x| {
            let mut j = DMatrix::zeros(2, 6);
            for (i, a) in TRACKING_ANCHORS.iter().enumerate() {
                let d = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                for k in 0..3 {
                    j[(i, k)] = d[k] / r;
                }
            }
            j
        })
        .with_hessians(move |x| {
            TRACKING_ANCHORS
                .iter()
                .map(|a| {
                    let d = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
                    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                    let mut h = DMatrix::zeros(6, 6);
                    for p in 0..3 {
                        for q in 0..3 {
                            let delta = if p == q { 1.0 } else { 0.0 };
                            h[(p, q)] = delta / r - d[p] * d[q] / (r * r * r);
                        }
                    }
                    h
                })
                .collect()
        });

    // discretized white-acceleration noise, intensity 1e-4
    let qi = 1e-4;
    let mut q = DMatrix::zeros(6, 6);
    for i in 0..3 {
        q[(i, i)] = qi * dt.powi(3) / 3.0;
        q[(i, i + 3)] = qi * dt.powi(2) / 2.0;
        q[(i + 3, i)] = qi * dt.powi(2) / 2.0;
        q[(i + 3, i + 3)] = qi * dt;
    }

    SystemModel::new(SystemSpec {
        name: "tracking3d".into(),
        transition,
        input_dim: 3,
        measurement,
        process_noise: SymMatrix::symmetrized(q),
        measurement_noise: SymMatrix::from_diagonal(&[1e-4, 1e-4]),
        initial_mean: DVector::from_column_slice(&[0.0, 10.0, 5.0, 0.5, -0.3, 0.2]),
        initial_cov: SymMatrix::from_diagonal(&[1.0, 1.0, 1.0, 0.01, 0.01, 0.01]),
        horizon: 30,
        inputs: Arc::new(|k| {
            let t = k as f64;
            DVector::from_column_slice(&[0.05 * (0.3 * t).sin(), 0.05 * (0.2 * t).cos(), 0.05 * (0.1 * t).sin()])
        }),
    })
    .expect("tracking model is well formed")
}

/// Synthetic terrain elevation used by [`terrain_nav`].
pub fn terrain_height(x: f64, y: f64) -> f64 {
    20.0 * (0.1 * x).sin() * (0.13 * y).cos() + 10.0 * (0.07 * x + 0.05 * y).sin()
}

/// Planar dead-reckoning `x_k = x_{k-1} + u + w` with a terrain-elevation
/// measurement, noise std 1 m.
pub fn terrain_nav() -> SystemModel {
    let transition = DifferentiableMap::new(4, 2, |xu| DVector::from_column_slice(&[xu[0] + xu[2], xu[1] + xu[3]]))
        .with_jacobian(|_| DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]))
        .with_degree(1);
    let measurement = DifferentiableMap::new(2, 1, |x| DVector::from_element(1, terrain_height(x[0], x[1])))
        .with_jacobian(|x| {
            let (a, b) = (x[0], x[1]);
            let c = (0.07 * a + 0.05 * b).cos();
            DMatrix::from_row_slice(
                1,
                2,
                &[
                    2.0 * (0.1 * a).cos() * (0.13 * b).cos() + 0.7 * c,
                    -2.6 * (0.1 * a).sin() * (0.13 * b).sin() + 0.5 * c,
                ],
            )
        })
        .with_hessians(|x| {
            let (a, b) = (x[0], x[1]);
            let s = (0.07 * a + 0.05 * b).sin();
            let hxx = -0.2 * (0.1 * a).sin() * (0.13 * b).cos() - 0.049 * s;
            let hxy = -0.26 * (0.1 * a).cos() * (0.13 * b).sin() - 0.035 * s;
            let hyy = -0.338 * (0.1 * a).sin() * (0.13 * b).cos() - 0.025 * s;
            vec![DMatrix::from_row_slice(2, 2, &[hxx, hxy, hxy, hyy])]
        });
    SystemModel::new(SystemSpec {
        name: "terrain_nav".into(),
        transition,
        input_dim: 2,
        measurement,
        process_noise: SymMatrix::from_diagonal(&[0.01, 0.01]),
        measurement_noise: SymMatrix::identity(1),
        initial_mean: DVector::from_column_slice(&[0.0, 0.0]),
        initial_cov: SymMatrix::from_diagonal(&[4.0, 4.0]),
        horizon: 100,
        inputs: constant_input(DVector::from_column_slice(&[1.0, 0.6])),
    })
    .expect("terrain model is well formed")
}

/// Two-axis synchronous machine against an infinite bus.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorParams {
    pub inertia: f64,
    pub damping: f64,
    pub omega_s: f64,
    pub xd: f64,
    pub xd_t: f64,
    pub xq: f64,
    pub xq_t: f64,
    pub xe: f64,
    pub td0_t: f64,
    pub tq0_t: f64,
    pub dt: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            inertia: 3.0,
            damping: 2.0,
            omega_s: 2.0 * std::f64::consts::PI * 60.0,
            xd: 1.93,
            xd_t: 0.23,
            xq: 1.77,
            xq_t: 0.5,
            xe: 0.3,
            td0_t: 5.2,
            tq0_t: 0.81,
            dt: 0.01,
        }
    }
}

impl GeneratorParams {
    /// Stator currents `(i_d, i_q)` for state `[δ, ω, e'q, e'd]` and bus voltage.
    fn currents(&self, x: &[f64], vb: f64) -> (f64, f64) {
        let (delta, eq, ed) = (x[0], x[2], x[3]);
        let id = (eq - vb * delta.cos()) / (self.xd_t + self.xe);
        let iq = (vb * delta.sin() - ed) / (self.xq_t + self.xe);
        (id, iq)
    }

    pub fn electrical_power(&self, x: &[f64], vb: f64) -> f64 {
        let (id, iq) = self.currents(x, vb);
        x[3] * id + x[2] * iq + (self.xq_t - self.xd_t) * id * iq
    }

    /// Continuous-time derivative; `u = [P_m, E_fd, V_b]`.
    pub fn derivative(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let (pm, efd, vb) = (u[0], u[1], u[2]);
        let (id, iq) = self.currents(x, vb);
        let pe = self.electrical_power(x, vb);
        [
            self.omega_s * x[1],
            (pm - pe - self.damping * x[1]) / (2.0 * self.inertia),
            (efd - x[2] - (self.xd - self.xd_t) * id) / self.td0_t,
            (-x[3] + (self.xq - self.xq_t) * iq) / self.tq0_t,
        ]
    }

    pub fn rk4_step(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let h = self.dt;
        let add = |a: &[f64], k: &[f64; 4], s: f64| -> [f64; 4] {
            [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]]
        };
        let k1 = self.derivative(x, u);
        let k2 = self.derivative(&add(x, &k1, h / 2.0), u);
        let k3 = self.derivative(&add(x, &k2, h / 2.0), u);
        let k4 = self.derivative(&add(x, &k3, h), u);
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    /// Equilibrium inputs `(P_m, E_fd)` holding `δ`, `e'q` fixed at ω = 0.
    pub fn equilibrium(&self, delta: f64, eq: f64, vb: f64) -> ([f64; 4], f64, f64) {
        let ed = (self.xq - self.xq_t) * vb * delta.sin() / (self.xq + self.xe);
        let x = [delta, 0.0, eq, ed];
        let (id, _) = self.currents(&x, vb);
        let pm = self.electrical_power(&x, vb);
        let efd = eq + (self.xd - self.xd_t) * id;
        (x, pm, efd)
    }
}

/// Fourth-order generator swing model (RK4, Δt = 0.01 s) measured through
/// its active power output, noise std 1e-4.
pub fn generator4() -> SystemModel {
    let params = GeneratorParams::default();
    let vb = 1.0;
    let (x_eq, pm, efd) = params.equilibrium(0.6, 1.0, vb);

    let p = params;
    let transition = DifferentiableMap::new(7, 4, move |xu| {
        let x = [xu[0], xu[1], xu[2], xu[3]];
        DVector::from_column_slice(&p.rk4_step(&x, &[xu[4], xu[5], xu[6]]))
    });
    let measurement = DifferentiableMap::new(4, 1, move |x| {
        DVector::from_element(1, p.electrical_power(x.as_slice(), vb))
    });

    SystemModel::new(SystemSpec {
        name: "generator4".into(),
        transition,
        input_dim: 3,
        measurement,
        process_noise: SymMatrix::from_diagonal(&[1e-8, 1e-8, 1e-8, 1e-8]),
        measurement_noise: SymMatrix::from_diagonal(&[1e-8]),
        initial_mean: DVector::from_column_slice(&x_eq),
        initial_cov: SymMatrix::from_diagonal(&[0.01, 1e-4, 0.01, 0.01]),
        horizon: 100,
        inputs: Arc::new(move |k| {
            // load step after 0.3 s excites the swing mode
            let pm_k = if k >= 30 { pm * 1.1 } else { pm };
            DVector::from_column_slice(&[pm_k, efd, vb])
        }),
    })
    .expect("generator model is well formed")
}
