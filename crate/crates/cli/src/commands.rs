use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use kfc_core::diagnostics::{
    beta_star_scan_case1, case1_grid, psd_compensation_check, rotation_sweep, sphere_bound_check, summary_line,
    write_rotation_sweep, MapFamily, PsdTrial, RadialSampler,
};
use kfc_core::exec::Execution;
use kfc_core::experiments::{
    beta_sweep_on_system, cells_for, estimator_label, run_on_system, run_scalar_demo, write_series_csv,
    write_summary_csv, McResult,
};
use kfc_core::models::{fig2_map, random_quadratic};
use kfc_core::moments::{Ekf2Mode, EstimatorConfig, EstimatorKind, DEFAULT_ALPHA};
use kfc_core::numerics::{mix_seed, RngStream};

use crate::config::Settings;
use crate::svg::{color, Chart, Series};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    InvariantFailure = 1,
    ConfigError = 2,
    RuntimeError = 3,
}

#[derive(Debug)]
pub struct RuntimeError(pub String);

impl<E: std::fmt::Display> From<E> for RuntimeError {
    fn from(e: E) -> Self {
        RuntimeError(e.to_string())
    }
}

type Run = Result<Status, RuntimeError>;

fn write_text(path: &Path, text: &str) -> Result<(), RuntimeError> {
    fs::write(path, text).map_err(|e| RuntimeError(format!("{}: {e}", path.display())))
}

fn log_cell(r: &McResult) {
    eprintln!(
        "cell done: model={} estimator={} beta={} actual={:.6e} estimated={:.6e} diverged={}/{}{}",
        r.model,
        r.estimator,
        r.beta,
        r.actual_geomean,
        r.estimated_geomean,
        r.diverged,
        r.runs,
        if r.flagged() { " FLAGGED" } else { "" }
    );
}

fn divergence_status(results: &[McResult]) -> Status {
    let flagged: Vec<_> = results.iter().filter(|r| r.flagged()).collect();
    for r in &flagged {
        eprintln!(
            "divergence budget exceeded: {} {} beta={} ({} of {} runs)",
            r.model, r.estimator, r.beta, r.diverged, r.runs
        );
    }
    if flagged.is_empty() {
        Status::Ok
    } else {
        Status::RuntimeError
    }
}

/// One labelled check of `diagnose`.
struct Check {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct PsdRow<'a> {
    estimator: &'a str,
    beta: f64,
    trial: u64,
    n: usize,
    m: usize,
    degree: u32,
    lambda_min: f64,
    tol: f64,
    passed: bool,
}

#[derive(Serialize)]
struct ScanRow {
    sigma2: f64,
    h_norm: f64,
    beta0: f64,
    beta: f64,
    objective: f64,
}

pub fn diagnose(s: &Settings, exec: Execution) -> Run {
    let mut checks = Vec::new();

    // rotation behavior on the planar test map
    let g = fig2_map();
    let cfgs = [
        EstimatorConfig::ekf(),
        EstimatorConfig::ekf2(0.0, Ekf2Mode::Gaussian),
        EstimatorConfig::ekf2(0.0, Ekf2Mode::Sphere),
        EstimatorConfig::skf(0.0),
        EstimatorConfig::ckf(0.0),
        EstimatorConfig::sskf(0.0, DEFAULT_ALPHA),
    ];
    let sweep = rotation_sweep(&g, &cfgs, 256)?;
    write_rotation_sweep(&sweep, &s.out.join("rotation_sweep.csv"))?;
    let scale = 1.0 + sweep.series[0].estimates[0].p_z.as_matrix().amax();
    for series in &sweep.series {
        let spread = series.p_z_peak_to_peak();
        let label = estimator_label(&series.config);
        let (passed, rule) = match series.config.kind {
            EstimatorKind::Ekf | EstimatorKind::Ekf2 => (spread < 1e-6 * scale, "< 1e-6·scale".to_string()),
            // the simplex keeps an O(α) third-moment term
            EstimatorKind::Sskf => {
                let a = series.config.alpha;
                (spread <= 10.0 * a * scale, format!("<= 10·alpha·scale, alpha={a}"))
            }
            EstimatorKind::SkfStar | EstimatorKind::CkfStar => (spread > 0.0, "> 0".to_string()),
        };
        checks.push(Check {
            name: format!("rotation {label}"),
            passed,
            detail: format!("peak-to-peak {spread:.3e} {rule}"),
        });
    }

    // compensation PSD over random maps
    let family = MapFamily {
        max_degree: s.psd_max_degree,
        ..MapFamily::default()
    };
    let mut psd_rows = csv::Writer::from_path(s.out.join("psd_report.csv"))?;
    for (i, cfg) in s.psd_estimators.iter().enumerate() {
        let report = psd_compensation_check(cfg, &family, s.psd_trials, mix_seed(s.seed, &[1, i as u64]), exec)?;
        let label = estimator_label(cfg);
        for row in &report.rows {
            let PsdTrial {
                trial,
                n,
                m,
                degree,
                lambda_min,
                tol,
                passed,
            } = *row;
            psd_rows.serialize(PsdRow {
                estimator: &label,
                beta: cfg.beta,
                trial,
                n,
                m,
                degree,
                lambda_min,
                tol,
                passed,
            })?;
        }
        checks.push(Check {
            name: format!("psd {label} beta={}", cfg.beta),
            passed: report.passed(),
            detail: format!(
                "{} of {} trials below -psd_tol, degree <= {}",
                report.failures.len(),
                report.trials,
                s.psd_max_degree
            ),
        });
    }
    psd_rows.flush()?;

    // radially symmetric inputs stay above the sphere compensation
    let mut rng = RngStream::new(mix_seed(s.seed, &[2]), 0);
    let mut worst = f64::INFINITY;
    let mut bound_ok = true;
    for i in 0..5u64 {
        let n = 1 + (i as usize) % 4;
        let m = 1 + (i as usize) % 3;
        let q = random_quadratic(n, m, 1.0, &mut rng).to_map();
        for sampler in [
            RadialSampler::Gaussian,
            RadialSampler::Sphere,
            RadialSampler::Mixture(0.5),
        ] {
            let c = sphere_bound_check(&q, sampler, s.draws, mix_seed(s.seed, &[3, i]), exec)?;
            bound_ok &= c.satisfies_bound(3.0);
            worst = worst.min(c.lambda_min / c.se_band.max(f64::MIN_POSITIVE));
        }
    }
    checks.push(Check {
        name: "sphere bound".into(),
        passed: bound_ok,
        detail: format!("worst lambda_min/SE {worst:.3}, limit -3"),
    });

    // β* scan: the minimizer moves right as the covariance noise grows
    let (h_norm, beta0) = (1.0, 0.0);
    let grid = case1_grid(4.0, h_norm, beta0);
    let mut scans = csv::Writer::from_path(s.out.join("beta_scan.csv"))?;
    let mut argmins = Vec::new();
    let mut step = 0.0f64;
    for sigma2 in [0.25, 1.0, 4.0] {
        let scan = beta_star_scan_case1(sigma2, h_norm, beta0, &grid, s.draws, mix_seed(s.seed, &[4]))?;
        for (&beta, &objective) in scan.beta_grid.iter().zip(&scan.objective) {
            scans.serialize(ScanRow {
                sigma2,
                h_norm,
                beta0,
                beta,
                objective,
            })?;
        }
        step = step.max(scan.grid_step_at_argmin());
        argmins.push(scan.argmin_beta);
    }
    scans.flush()?;
    let monotone = argmins.windows(2).all(|w| w[1] >= w[0] - step);
    checks.push(Check {
        name: "beta scan".into(),
        passed: monotone && argmins[0] >= beta0,
        detail: format!("argmin over sigma2 {{0.25, 1, 4}}: {argmins:?}"),
    });

    let mut summary = Vec::new();
    for c in &checks {
        summary_line(&c.name, c.passed, &c.detail, &mut summary)?;
    }
    let text = String::from_utf8(summary)?;
    write_text(&s.out.join("summary.txt"), &text)?;
    io::stdout().write_all(text.as_bytes())?;
    Ok(if checks.iter().all(|c| c.passed) {
        Status::Ok
    } else {
        Status::InvariantFailure
    })
}

fn sweep_chart(model: &str, results: &[McResult]) -> Chart {
    let mut labels: Vec<String> = Vec::new();
    for r in results.iter().filter(|r| r.model == model) {
        if !labels.contains(&r.estimator) {
            labels.push(r.estimator.clone());
        }
    }
    let betas: Vec<f64> = results.iter().filter(|r| r.beta > 0.0).map(|r| r.beta).collect();
    let (lo, hi) = betas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let mut series = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let cells = cells_for(results, model, label);
        // a single-β estimator (EKF) is drawn flat across the grid
        let points = |f: fn(&McResult) -> f64| -> Vec<(f64, f64)> {
            if cells.len() == 1 && lo.is_finite() {
                vec![(lo, f(cells[0])), (hi, f(cells[0]))]
            } else {
                cells.iter().map(|c| (c.beta, f(c))).collect()
            }
        };
        series.push(Series {
            label: format!("{label} actual"),
            points: points(|c| c.actual_geomean),
            color: color(i),
            dotted: false,
        });
        series.push(Series {
            label: format!("{label} estimated"),
            points: points(|c| c.estimated_geomean),
            color: color(i),
            dotted: true,
        });
    }
    Chart {
        title: format!("{model}: geometric-mean RMSE"),
        x_label: "beta".into(),
        y_label: "geometric-mean RMSE".into(),
        log_x: true,
        log_y: true,
        series,
    }
}

pub fn sweep(s: &Settings, exec: Execution) -> Run {
    let mut all = Vec::new();
    for model in &s.models {
        let spec = s.spec(model);
        let system = s.system(model)?;
        let cells = beta_sweep_on_system(&spec, &system, exec, log_cell)?;
        write_text(
            &s.out.join(format!("sweep_{model}.svg")),
            &sweep_chart(model, &cells).render(),
        )?;
        all.extend(cells);
    }
    write_series_csv(&all, &s.out.join("sweep_series.csv"))?;
    write_summary_csv(&all, &s.out.join("sweep_summary.csv"))?;
    Ok(divergence_status(&all))
}

/// Root of the summed per-state mean squared errors at each step.
fn total_rmse(series: &[Vec<f64>]) -> Vec<f64> {
    series
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn time_chart(title: String, entries: &[(String, &McResult)]) -> Chart {
    let mut series = Vec::new();
    for (i, (label, r)) in entries.iter().enumerate() {
        let pts = |v: Vec<f64>| v.into_iter().enumerate().map(|(k, y)| ((k + 1) as f64, y)).collect();
        series.push(Series {
            label: format!("{label} actual"),
            points: pts(total_rmse(&r.actual_rmse)),
            color: color(i),
            dotted: false,
        });
        series.push(Series {
            label: format!("{label} estimated"),
            points: pts(total_rmse(&r.estimated_rmse)),
            color: color(i),
            dotted: true,
        });
    }
    Chart {
        title,
        x_label: "time step".into(),
        y_label: "RMSE".into(),
        log_x: false,
        log_y: true,
        series,
    }
}

pub fn app(s: &Settings, exec: Execution) -> Run {
    let mut all = Vec::new();
    for model in &s.models {
        let spec = s.spec(model);
        let system = s.system(model)?;
        let cells = run_on_system(&spec, &system, exec)?;
        cells.iter().for_each(log_cell);
        let entries: Vec<(String, &McResult)> = cells
            .iter()
            .map(|c| (format!("{} beta={}", c.estimator, c.beta), c))
            .collect();
        let chart = time_chart(format!("{model}: RMSE over time"), &entries);
        write_text(&s.out.join(format!("app_{model}.svg")), &chart.render())?;
        all.extend(cells);
    }
    write_series_csv(&all, &s.out.join("app_series.csv"))?;
    write_summary_csv(&all, &s.out.join("app_summary.csv"))?;
    Ok(divergence_status(&all))
}

pub fn demo_scalar(s: &Settings, exec: Execution) -> Run {
    let horizon = s.horizon.unwrap_or(200);
    let mut all = Vec::new();
    for &gamma in &s.gamma {
        let mut cells = Vec::new();
        for &beta in &s.beta_grid {
            let r = run_scalar_demo(gamma, beta, s.runs, horizon, s.seed, exec)?;
            log_cell(&r);
            cells.push(r);
        }
        let entries: Vec<(String, &McResult)> = cells.iter().map(|c| (format!("beta={}", c.beta), c)).collect();
        let chart = time_chart(format!("scalar demo, gamma={gamma}"), &entries);
        write_text(&s.out.join(format!("demo_scalar_gamma_{gamma}.svg")), &chart.render())?;
        all.extend(cells);
    }
    write_series_csv(&all, &s.out.join("demo_scalar_series.csv"))?;
    write_summary_csv(&all, &s.out.join("demo_scalar_summary.csv"))?;
    Ok(divergence_status(&all))
}
