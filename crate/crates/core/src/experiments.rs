//! Monte-Carlo experiment drivers: the scalar noisy-Jacobian demo, filter runs
//! on the registry systems and β sweeps with geometric-mean RMSE summaries.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::filter::{step, Belief, FilterConfig};
use crate::models::{system, SystemModel};
use crate::moments::{Ekf2Mode, EstimatorConfig, EstimatorKind};
use crate::numerics::{hash_str, mix_seed, RngStream};

pub const APPLICATION_MODELS: [&str; 3] = ["tracking3d", "terrain_nav", "generator4"];
pub const DEFAULT_RUNS: usize = 2_000;
pub const PAPER_PARITY_RUNS: usize = 10_000;
/// Cells with a larger diverged fraction are flagged.
pub const DIVERGENCE_FLAG_FRACTION: f64 = 0.05;
const GEOMEAN_FLOOR: f64 = 1e-300;

/// Log-spaced grid from `lo` to `hi` with `points` entries.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn default_beta_grid() -> Vec<f64> {
    log_grid(0.01, 100.0, 9)
}

/// Short label such as `CKF*` or `EKF2-sphere`.
pub fn estimator_label(cfg: &EstimatorConfig) -> String {
    match (cfg.kind, cfg.ekf2_mode) {
        (EstimatorKind::Ekf2, Ekf2Mode::Sphere) => "EKF2-sphere".to_string(),
        (kind, _) => kind.label().to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: String,
    pub estimators: Vec<EstimatorConfig>,
    /// Applied to every compensating estimator by [`beta_sweep`]; ignored by
    /// [`run_application`], which uses each config's own β.
    pub beta_grid: Vec<f64>,
    pub runs: usize,
    /// Overrides the model's horizon when set.
    pub horizon: Option<usize>,
    pub seed: u64,
    pub recalibrate: bool,
    pub backout: bool,
}

impl ExperimentSpec {
    pub fn new(model: &str, estimators: Vec<EstimatorConfig>, runs: usize, seed: u64) -> Self {
        ExperimentSpec {
            model: model.to_string(),
            estimators,
            beta_grid: default_beta_grid(),
            runs,
            horizon: None,
            seed,
            recalibrate: true,
            backout: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators configured".into()));
        }
        for cfg in &self.estimators {
            cfg.validate()?;
            if cfg.kind == EstimatorKind::Ekf {
                continue;
            }
            for &beta in &self.beta_grid {
                EstimatorConfig { beta, ..*cfg }.validate()?;
            }
        }
        Ok(())
    }

    fn filter_config(&self, estimator: EstimatorConfig) -> FilterConfig {
        FilterConfig {
            estimator,
            recalibrate_enabled: self.recalibrate,
            backout_enabled: self.backout,
        }
    }

    /// Seed of the truth-trajectory streams. It depends on the model only, so
    /// every estimator and β sees the same noise realizations.
    fn truth_seed(&self) -> u64 {
        mix_seed(self.seed, &[hash_str(&self.model)])
    }
}

/// Per-timestep, per-state error statistics over Monte-Carlo runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McResult {
    pub model: String,
    pub estimator: String,
    pub beta: f64,
    pub runs: usize,
    pub horizon: usize,
    pub state_dim: usize,
    /// `actual_rmse[k][i]` over non-diverged runs.
    pub actual_rmse: Vec<Vec<f64>>,
    /// Square root of the mean posterior variance.
    pub estimated_rmse: Vec<Vec<f64>>,
    pub actual_geomean: f64,
    pub estimated_geomean: f64,
    pub diverged: usize,
    /// Steps where the update was reverted.
    pub backouts: usize,
    /// Steps where the posterior trace exceeded the predicted trace with
    /// back-out enabled.
    pub trace_violations: usize,
    /// Average normalized innovation squared, when the filter reports it.
    pub mean_nis: Option<f64>,
}

impl McResult {
    pub fn diverged_fraction(&self) -> f64 {
        self.diverged as f64 / self.runs as f64
    }

    pub fn flagged(&self) -> bool {
        self.diverged_fraction() > DIVERGENCE_FLAG_FRACTION
    }

    pub fn terminal_actual(&self) -> f64 {
        self.actual_rmse.last().map_or(f64::NAN, |r| r[0])
    }

    pub fn terminal_estimated(&self) -> f64 {
        self.estimated_rmse.last().map_or(f64::NAN, |r| r[0])
    }
}

/// `exp(mean(log x))` over all entries.
pub fn geometric_mean_rmse(series: &[Vec<f64>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &x in series.iter().flatten() {
        if !(x > 0.0) {
            return Err(Error::NonPositiveEntry(x));
        }
        sum += x.ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    Ok((sum / count as f64).exp())
}

fn floored_geomean(series: &[Vec<f64>]) -> f64 {
    let floored: Vec<Vec<f64>> = series
        .iter()
        .map(|r| {
            r.iter()
                .map(|&x| if x.is_nan() { x } else { x.max(GEOMEAN_FLOOR) })
                .collect()
        })
        .collect();
    geometric_mean_rmse(&floored).unwrap_or(f64::NAN)
}

/// Per-run record; `None` errors mark a diverged run.
struct RunRecord {
    sq_err: Option<Vec<f64>>,
    variance: Option<Vec<f64>>,
    nis_sum: f64,
    steps: usize,
    backouts: usize,
    trace_violations: usize,
}

struct Accumulator {
    horizon: usize,
    n: usize,
    sq_err: Vec<f64>,
    variance: Vec<f64>,
    ok_runs: usize,
    diverged: usize,
    nis_sum: f64,
    nis_steps: usize,
    backouts: usize,
    trace_violations: usize,
}

impl Accumulator {
    fn new(horizon: usize, n: usize) -> Self {
        Accumulator {
            horizon,
            n,
            sq_err: vec![0.0; horizon * n],
            variance: vec![0.0; horizon * n],
            ok_runs: 0,
            diverged: 0,
            nis_sum: 0.0,
            nis_steps: 0,
            backouts: 0,
            trace_violations: 0,
        }
    }

    fn push(&mut self, r: RunRecord) {
        self.backouts += r.backouts;
        self.trace_violations += r.trace_violations;
        match (r.sq_err, r.variance) {
            (Some(e), Some(v)) => {
                self.ok_runs += 1;
                self.nis_sum += r.nis_sum;
                self.nis_steps += r.steps;
                for (a, b) in self.sq_err.iter_mut().zip(e) {
                    *a += b;
                }
                for (a, b) in self.variance.iter_mut().zip(v) {
                    *a += b;
                }
            }
            _ => self.diverged += 1,
        }
    }

    fn finish(self, model: &str, estimator: String, beta: f64) -> McResult {
        let runs = self.ok_runs + self.diverged;
        let denom = self.ok_runs as f64;
        let table = |acc: &[f64]| -> Vec<Vec<f64>> {
            acc.chunks(self.n)
                .map(|row| {
                    row.iter()
                        .map(|s| if denom > 0.0 { (s / denom).sqrt() } else { f64::NAN })
                        .collect()
                })
                .collect()
        };
        let actual_rmse = table(&self.sq_err);
        let estimated_rmse = table(&self.variance);
        McResult {
            model: model.to_string(),
            estimator,
            beta,
            runs,
            horizon: self.horizon,
            state_dim: self.n,
            actual_geomean: floored_geomean(&actual_rmse),
            estimated_geomean: floored_geomean(&estimated_rmse),
            actual_rmse,
            estimated_rmse,
            diverged: self.diverged,
            backouts: self.backouts,
            trace_violations: self.trace_violations,
            mean_nis: (self.nis_steps > 0).then(|| self.nis_sum / self.nis_steps as f64),
        }
    }
}

fn gamma_check(gamma: f64, beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if !(beta >= 0.0) {
        return Err(Error::NegativeBeta {
            kind: "scalar demo",
            beta,
        });
    }
    Ok(())
}

/// Random-walk state observed directly, filtered with a gain built from a
/// Jacobian drawn uniformly from `[1 − γ, 1 + γ]` at every step and an
/// innovation variance inflated by `1 + β`.
pub fn run_scalar_demo(
    gamma: f64,
    beta: f64,
    runs: usize,
    horizon: usize,
    seed: u64,
    exec: Execution,
) -> Result<McResult> {
    gamma_check(gamma, beta)?;
    if runs == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("runs and horizon must be at least 1".into()));
    }
    const Q: f64 = 1e-8;
    const R: f64 = 1e-4;
    let (q_std, r_std) = (Q.sqrt(), R.sqrt());
    let base = mix_seed(seed, &[hash_str("scalar_demo")]);
    let records = exec.map(runs, |run| {
        let mut rng = RngStream::new(base, run as u64);
        let mut x = rng.standard_normal();
        let mut x_hat = 0.0;
        let mut p = 1.0;
        let mut sq_err = Vec::with_capacity(horizon);
        let mut variance = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            x += q_std * rng.standard_normal();
            let z = x + r_std * rng.standard_normal();
            let h = if gamma > 0.0 {
                rng.uniform(1.0 - gamma, 1.0 + gamma)
            } else {
                1.0
            };
            p += Q;
            let s = (1.0 + beta) * h * p * h + R;
            let k = p * h / s;
            x_hat += k * (z - x_hat);
            // P + K S K − 2 K P_xz with the filter's own S and P_xz = P Ĥ
            p = p + k * k * s - 2.0 * k * p * h;
            sq_err.push((x - x_hat).powi(2));
            variance.push(p);
        }
        RunRecord {
            sq_err: Some(sq_err),
            variance: Some(variance),
            nis_sum: 0.0,
            steps: 0,
            backouts: 0,
            trace_violations: 0,
        }
    });
    let mut acc = Accumulator::new(horizon, 1);
    for r in records {
        acc.push(r);
    }
    Ok(acc.finish("scalar_demo", format!("gamma={gamma}"), beta))
}

/// A run is declared diverged when a step fails or the squared error exceeds
/// this multiple of `1 + tr(P₀)`.
const DIVERGENCE_FACTOR: f64 = 1e8;

fn simulate_run(
    model: &SystemModel,
    cfg: &FilterConfig,
    horizon: usize,
    truth_seed: u64,
    run: usize,
) -> Result<RunRecord> {
    let n = model.state_dim();
    let (l0, lq, lr) = model.noise_factors()?;
    let mut rng = RngStream::new(truth_seed, run as u64);
    let x0 = model.initial_mean().clone();
    let mut x = rng.correlated_normal(&x0, &l0);
    let mut belief = Belief::new(x0, model.initial_cov().clone())?;
    let limit = DIVERGENCE_FACTOR * (1.0 + model.initial_cov().trace());
    let zero_z = DVector::zeros(model.meas_dim());
    let mut sq_err = Vec::with_capacity(horizon * n);
    let mut variance = Vec::with_capacity(horizon * n);
    let mut rec = RunRecord {
        sq_err: None,
        variance: None,
        nis_sum: 0.0,
        steps: 0,
        backouts: 0,
        trace_violations: 0,
    };
    let mut diverged = false;
    for k in 0..horizon {
        let u = model.input(k);
        // truth noise is drawn before the filter runs so all cells share it
        let w = rng.correlated_normal(&DVector::zeros(n), &lq);
        let v = rng.correlated_normal(&zero_z, &lr);
        if diverged {
            continue;
        }
        let mut xu = DVector::zeros(n + u.len());
        xu.rows_mut(0, n).copy_from(&x);
        xu.rows_mut(n, u.len()).copy_from(&u);
        x = model.transition().eval(&xu)? + w;
        let z = model.measurement().eval(&x)? + v;
        match step(&belief, model, &u, &z, cfg) {
            Ok((b, trace)) => {
                if trace.backed_out {
                    rec.backouts += 1;
                }
                if cfg.backout_enabled && trace.trace_post > trace.trace_pred {
                    rec.trace_violations += 1;
                }
                rec.nis_sum += trace.nis;
                rec.steps += 1;
                belief = b;
            }
            Err(_) => {
                diverged = true;
                continue;
            }
        }
        let e = &x - &belief.x_hat;
        if !e.iter().all(|v| v.is_finite()) || e.norm_squared() > limit {
            diverged = true;
            continue;
        }
        sq_err.extend(e.iter().map(|v| v * v));
        variance.extend((0..n).map(|i| belief.p[(i, i)]));
    }
    if !diverged {
        rec.sq_err = Some(sq_err);
        rec.variance = Some(variance);
    }
    Ok(rec)
}

fn run_cell(
    spec: &ExperimentSpec,
    model: &SystemModel,
    estimator: EstimatorConfig,
    exec: Execution,
) -> Result<McResult> {
    estimator.validate()?;
    let cfg = spec.filter_config(estimator);
    let horizon = spec.horizon.unwrap_or(model.horizon());
    let truth_seed = spec.truth_seed();
    let records = exec.map(spec.runs, |run| simulate_run(model, &cfg, horizon, truth_seed, run));
    let mut acc = Accumulator::new(horizon, model.state_dim());
    for r in records {
        acc.push(r?);
    }
    let beta = if estimator.kind == EstimatorKind::Ekf {
        0.0
    } else {
        estimator.beta
    };
    Ok(acc.finish(&spec.model, estimator_label(&estimator), beta))
}

/// Runs every configured estimator (with its own β) on `spec.model`.
pub fn run_application(spec: &ExperimentSpec, exec: Execution) -> Result<Vec<McResult>> {
    spec.validate()?;
    let model = system(&spec.model)?;
    spec.estimators
        .iter()
        .map(|&e| run_cell(spec, &model, e, exec))
        .collect()
}

/// Same as [`run_application`] on an explicit system.
pub fn run_on_system(spec: &ExperimentSpec, model: &SystemModel, exec: Execution) -> Result<Vec<McResult>> {
    spec.validate()?;
    spec.estimators
        .iter()
        .map(|&e| run_cell(spec, model, e, exec))
        .collect()
}

/// Runs each compensating estimator at every β of the grid (EKF once).
/// `on_cell` is called after each finished cell.
pub fn beta_sweep(spec: &ExperimentSpec, exec: Execution, on_cell: impl FnMut(&McResult)) -> Result<Vec<McResult>> {
    spec.validate()?;
    beta_sweep_on_system(spec, &system(&spec.model)?, exec, on_cell)
}

/// Same as [`beta_sweep`] on an explicit system.
pub fn beta_sweep_on_system(
    spec: &ExperimentSpec,
    model: &SystemModel,
    exec: Execution,
    mut on_cell: impl FnMut(&McResult),
) -> Result<Vec<McResult>> {
    spec.validate()?;
    if spec.beta_grid.is_empty() {
        return Err(Error::InvalidArgument("empty beta grid".into()));
    }
    let mut out = Vec::new();
    for &e in &spec.estimators {
        let betas: Vec<f64> = if e.kind == EstimatorKind::Ekf {
            vec![e.beta]
        } else {
            spec.beta_grid.clone()
        };
        for beta in betas {
            let cell = run_cell(spec, model, EstimatorConfig { beta, ..e }, exec)?;
            on_cell(&cell);
            out.push(cell);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    model: &'a str,
    estimator: &'a str,
    beta: f64,
    timestep: usize,
    state_index: usize,
    actual_rmse: f64,
    estimated_rmse: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    model: &'a str,
    estimator: &'a str,
    beta: f64,
    actual_geomean: f64,
    estimated_geomean: f64,
    diverged: usize,
    flagged: bool,
}

/// Per-timestep, per-state rows for every result.
pub fn write_series_csv(results: &[McResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        for (k, (a, e)) in r.actual_rmse.iter().zip(&r.estimated_rmse).enumerate() {
            for i in 0..r.state_dim {
                w.serialize(SeriesRow {
                    model: &r.model,
                    estimator: &r.estimator,
                    beta: r.beta,
                    timestep: k + 1,
                    state_index: i,
                    actual_rmse: a[i],
                    estimated_rmse: e[i],
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(results: &[McResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(SummaryRow {
            model: &r.model,
            estimator: &r.estimator,
            beta: r.beta,
            actual_geomean: r.actual_geomean,
            estimated_geomean: r.estimated_geomean,
            diverged: r.diverged,
            flagged: r.flagged(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Cells of one estimator ordered by β.
pub fn cells_for<'a>(results: &'a [McResult], model: &str, estimator: &str) -> Vec<&'a McResult> {
    let mut v: Vec<&McResult> = results
        .iter()
        .filter(|r| r.model == model && r.estimator == estimator)
        .collect();
    v.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    v
}

/// Index of the minimum of `values` when it is neither the first nor the last.
pub fn interior_argmin(values: &[f64]) -> Option<usize> {
    let (i, _) = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    (i > 0 && i + 1 < values.len()).then_some(i)
}
