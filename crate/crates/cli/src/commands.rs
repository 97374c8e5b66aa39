//! The four subcommands. Each writes its files into the output directory and
//! returns a short text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lie_errdyn::deterministic::{two_route, ErrorProblem};
use lie_errdyn::montecarlo::{monte_carlo_compare, McConfig, Route};
use lie_errdyn::oracles::{
    oracle_c_via_dexp_derivative, oracle_dadmn_fd, oracle_short_time_drift, OracleReport, REFERENCE_ORDER,
};
use lie_errdyn::stochastic::{AlgebraSde, LogStateSde};
use lie_errdyn::systems::{
    affine_to_linear, check_affine, check_derivation, check_linear, linearize_at_identity, Classification,
    CHECK_TOL, DEFAULT_SAMPLES,
};
use lie_errdyn::{ClosedForms, DiffusionSide, LieError};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Expectation, ScenarioConfig};
use crate::error::CliError;
use crate::output::{num, CsvOut};

/// Tolerance on the derivation residual.
pub const DERIVATION_TOL: f64 = 1e-8;
/// Tolerance on `|f(I)|` for linear fields.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Finite-difference oracle tolerance.
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: u8,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

fn write_summary(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

pub fn cmd_check(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model();
    let f = cfg.vector_field(&model)?;
    let t = cfg.t0;
    f.check_tangent(t, DEFAULT_SAMPLES, cfg.seed)?;
    let lin = check_linear(&f, t, DEFAULT_SAMPLES, CHECK_TOL, cfg.seed);
    let aff = check_affine(&f, t, DEFAULT_SAMPLES, CHECK_TOL, cfg.seed);
    let observed = if lin.passed {
        Expectation::Linear
    } else if aff.passed {
        Expectation::Affine
    } else {
        Expectation::Neither
    };

    let mut s = String::new();
    writeln!(s, "group = {}", model.name()).unwrap();
    writeln!(s, "linear_residual = {}", num(lin.max_residual)).unwrap();
    writeln!(s, "affine_residual = {}", num(aff.max_residual)).unwrap();
    writeln!(s, "classification = {}", observed.name()).unwrap();

    let mut failures = Vec::new();
    if observed != Expectation::Neither {
        let linear = if lin.passed { f.clone() } else { affine_to_linear(&f)? };
        let a = linearize_at_identity(&linear, t);
        let derivation = check_derivation(&model, &a, DEFAULT_SAMPLES, cfg.seed);
        writeln!(s, "derivation_residual = {}", num(derivation)).unwrap();
        if !(derivation < DERIVATION_TOL) {
            failures.push(format!("derivation residual {derivation:.3e}"));
        }
        let at_id = linear.at_identity(t).norm();
        writeln!(s, "linear_part_at_identity = {}", num(at_id)).unwrap();
        if !(at_id < IDENTITY_TOL) {
            failures.push(format!("linear part at identity {at_id:.3e}"));
        }
    }
    if let Some(expect) = cfg.expect {
        writeln!(s, "expected = {}", expect.name()).unwrap();
        if expect != observed {
            failures.push(format!("expected {}, observed {}", expect.name(), observed.name()));
        }
    }
    writeln!(s, "status = {}", if failures.is_empty() { "pass" } else { "fail" }).unwrap();
    let file = write_summary(dir, "check.txt", &s)?;
    if failures.is_empty() {
        Ok(Outcome {
            exit_code: 0,
            summary: s,
            files: vec![file],
        })
    } else {
        Err(CliError::CheckFailed(failures.join("; ")))
    }
}

pub fn cmd_propagate(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model();
    let d = model.d();
    let problem = ErrorProblem {
        field: cfg.vector_field(&model)?,
        side: cfg.error_side(),
        disturbance: cfg.disturbance()?,
        xhat0: cfg.xhat0(&model)?,
        xi0: cfg.xi0(),
        t0: cfg.t0,
        horizon: cfg.horizon,
    };
    let report = two_route(&problem, cfg.dt)?;

    let path = dir.join("propagate.csv");
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("xi_{i}")));
    header.extend((1..=d).map(|i| format!("xi_log_{i}")));
    header.push("discrepancy_norm".into());
    header.push("status".into());
    let mut out = CsvOut::create(&path, &header)?;
    for k in 0..report.times.len() {
        let mut row = vec![num(report.times[k])];
        row.extend(report.xi[k].iter().map(|v| num(*v)));
        row.extend(report.xi_log[k].iter().map(|v| num(*v)));
        row.push(num(report.discrepancy[k]));
        row.push("ok".into());
        out.row(&row)?;
    }
    if let Some(abort) = &report.abort {
        let mut row = vec![num(abort.time)];
        row.extend(std::iter::repeat_n(String::new(), 2 * d + 1));
        row.push(format!("abort: {}", abort.reason));
        out.row(&row)?;
    }
    out.finish()?;

    let mut s = String::new();
    writeln!(s, "rows = {}", report.times.len()).unwrap();
    writeln!(s, "max_discrepancy = {}", num(report.max_discrepancy())).unwrap();
    match &report.abort {
        None => {
            writeln!(s, "status = ok").unwrap();
            Ok(Outcome {
                exit_code: 0,
                summary: s,
                files: vec![path],
            })
        }
        Some(abort) => {
            writeln!(s, "status = abort at t = {}: {}", num(abort.time), abort.reason).unwrap();
            print!("{s}");
            Err(CliError::Numerical(abort.reason.clone()))
        }
    }
}

/// Refuses to start a Monte Carlo run whose initial algebra point is
/// already singular for the noise side.
fn check_start(cfg: &ScenarioConfig, x0: &DVector<f64>, side: DiffusionSide) -> Result<(), CliError> {
    let model = cfg.model();
    let arg = match side {
        DiffusionSide::Left => -x0,
        DiffusionSide::Right => x0.clone(),
    };
    model.dexp_inv(&arg)?;
    Ok(())
}

pub fn cmd_sde(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model();
    let d = model.d();
    let noise = cfg.noise_model(&model)?;
    let route = cfg.route();
    let x0 = match route {
        Route::State => cfg.x0(),
        Route::Error(_) => cfg.xi0(),
    };
    let field = cfg.vector_field(&model)?;
    if route == Route::State && field.classify(cfg.t0) != Classification::Linear {
        return Err(CliError::Config("route: the state route needs a linear field".into()));
    }
    check_start(cfg, &x0, noise.side())?;
    let mc = McConfig {
        field,
        noise,
        route,
        x0,
        xhat0: cfg.xhat0(&model)?,
        t0: cfg.t0,
        horizon: cfg.horizon,
        dt_levels: cfg.dt_levels(),
        strong_paths: cfg.paths,
        weak_dt: cfg.dt,
        weak_paths: cfg.weak_paths,
        seed: cfg.seed,
        scheme: cfg.scheme(),
    };
    let report = monte_carlo_compare(&mc).map_err(|e| match e {
        LieError::InvalidArgument(msg) => CliError::Config(msg),
        other => CliError::Numerical(other),
    })?;

    let mut files = Vec::new();
    let mut s = String::new();
    writeln!(s, "group = {}", model.name()).unwrap();
    writeln!(s, "scheme = {}", mc.scheme.name()).unwrap();
    if let Some(strong) = &report.strong {
        let path = dir.join("sde_strong.csv");
        let mut out = CsvOut::create(&path, &["dt", "rms", "stderr"])?;
        for r in &strong.rows {
            out.row(&[num(r.dt), num(r.rms), num(r.stderr)])?;
        }
        out.finish()?;
        files.push(path);
        writeln!(s, "strong_paths = {}", strong.paths).unwrap();
        writeln!(s, "strong_excluded = {}", strong.excluded).unwrap();
        writeln!(s, "fitted_order = {}", num(strong.fitted_order)).unwrap();
        writeln!(s, "monotone = {}", strong.monotone).unwrap();
    }
    if let Some(weak) = &report.weak {
        let path = dir.join("sde_weak.csv");
        let mut out = CsvOut::create(
            &path,
            &["moment", "i", "j", "group", "group_stderr", "algebra", "algebra_stderr"],
        )?;
        for i in 0..d {
            out.row(&[
                "mean".into(),
                (i + 1).to_string(),
                String::new(),
                num(weak.group.mean[i]),
                num(weak.group.mean_stderr[i]),
                num(weak.algebra.mean[i]),
                num(weak.algebra.mean_stderr[i]),
            ])?;
        }
        for i in 0..d {
            for j in i..d {
                out.row(&[
                    "cov".into(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    num(weak.group.cov[(i, j)]),
                    num(weak.group.cov_stderr[(i, j)]),
                    num(weak.algebra.cov[(i, j)]),
                    num(weak.algebra.cov_stderr[(i, j)]),
                ])?;
            }
        }
        out.finish()?;
        files.push(path);
        writeln!(s, "weak_paths = {}", weak.paths).unwrap();
        writeln!(s, "weak_excluded_fraction = {}", num(weak.excluded_fraction())).unwrap();
        writeln!(s, "weak_max_z = {}", num(weak.max_z)).unwrap();
        writeln!(s, "weak_within_3_sigma = {}", weak.within_3_sigma).unwrap();
    }
    files.push(write_summary(dir, "sde_summary.txt", &s)?);
    Ok(Outcome {
        exit_code: 0,
        summary: s,
        files,
    })
}

pub fn cmd_oracle(cfg: &ScenarioConfig, dir: &Path) -> Result<Outcome, CliError> {
    let model = cfg.model();
    let generic = (*model).clone().with_closed_forms(ClosedForms::NONE);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reports: Vec<(usize, OracleReport, bool)> = Vec::new();

    for sample in 0..cfg.oracle.samples {
        let mut x = model.random_vector(&mut rng, 1.0);
        let scale = rng.random_range(0.0..cfg.oracle.radius);
        x *= scale / x.norm().max(f64::MIN_POSITIVE);
        let g = model.random_vector(&mut rng, 1.0);
        for (side, tag) in [(DiffusionSide::Left, "left"), (DiffusionSide::Right, "right")] {
            let oracle = oracle_c_via_dexp_derivative(&model, &x, &g, side);
            let series = generic.c_correction_series(&x, &g, side, REFERENCE_ORDER);
            let closed = model.c_correction(&x, &g, side);
            let q = |name: &str| format!("c_{name}_{tag}");
            reports.push((sample, OracleReport::compare(q("series_vs_fd"), oracle.as_slice(), series.as_slice(), ORACLE_TOL), true));
            reports.push((sample, OracleReport::compare(q("closed_vs_series"), series.as_slice(), closed.as_slice(), ORACLE_TOL), false));
        }
        for n in 1..=3 {
            let fd = oracle_dadmn_fd(&model, &x, &g, n);
            let an = model.dadmn(&x, &g, n);
            reports.push((sample, OracleReport::compare(format!("dadmn_{n}"), fd.as_slice(), an.as_slice(), ORACLE_TOL), true));
        }
        let series = generic.dexp_series(&(-&x), REFERENCE_ORDER);
        let closed = model.dexp(&(-&x));
        reports.push((sample, OracleReport::compare("dexp_right", series.as_slice(), closed.as_slice(), ORACLE_TOL), true));
    }

    let path = dir.join("oracle.csv");
    let mut out = CsvOut::create(
        &path,
        &["quantity", "sample", "abs_error", "rel_error", "tolerance", "pass", "gating"],
    )?;
    for (sample, r, gating) in &reports {
        out.row(&[
            r.quantity.clone(),
            sample.to_string(),
            num(r.abs_error),
            num(r.rel_error),
            num(r.tolerance),
            r.pass.to_string(),
            gating.to_string(),
        ])?;
    }
    out.finish()?;
    let mut files = vec![path];

    let mut s = String::new();
    let failed: Vec<&OracleReport> = reports.iter().filter(|(_, r, g)| *g && !r.pass).map(|(_, r, _)| r).collect();
    let worst = |prefix: &str| {
        reports
            .iter()
            .filter(|(_, r, _)| r.quantity.starts_with(prefix))
            .map(|(_, r, _)| r.abs_error)
            .fold(0.0, f64::max)
    };
    writeln!(s, "group = {}", model.name()).unwrap();
    writeln!(s, "samples = {}", cfg.oracle.samples).unwrap();
    for prefix in ["c_series_vs_fd", "c_closed_vs_series", "dadmn", "dexp_right"] {
        writeln!(s, "max_abs_error[{prefix}] = {}", num(worst(prefix))).unwrap();
    }

    let mut drift_failed = false;
    if cfg.oracle.drift {
        let noise = cfg.noise_model(&model)?;
        let field = cfg.vector_field(&model)?;
        let sde = LogStateSde::new(&field, &noise)
            .map_err(|e| CliError::Config(format!("oracle.drift: {e}")))?;
        let x0 = cfg.x0();
        let analytic = sde.coefficients(cfg.t0, &x0)?.drift;
        let est = oracle_short_time_drift(&field, &noise, &x0, cfg.t0, cfg.oracle.dtau, cfg.paths, 1, cfg.seed)?;
        let dpath = dir.join("oracle_drift.csv");
        let mut out = CsvOut::create(&dpath, &["i", "analytic", "empirical", "stderr"])?;
        for i in 0..model.d() {
            out.row(&[(i + 1).to_string(), num(analytic[i]), num(est.mean[i]), num(est.stderr[i])])?;
        }
        out.finish()?;
        files.push(dpath);
        let z = est.max_z(&analytic);
        writeln!(s, "drift_max_z = {}", num(z)).unwrap();
        drift_failed = !(z <= 3.0);
    }
    writeln!(s, "gating_failures = {}", failed.len() + usize::from(drift_failed)).unwrap();
    files.push(write_summary(dir, "oracle_summary.txt", &s)?);
    if failed.is_empty() && !drift_failed {
        Ok(Outcome {
            exit_code: 0,
            summary: s,
            files,
        })
    } else {
        print!("{s}");
        let first = failed.first().map(|r| r.quantity.clone()).unwrap_or_else(|| "drift".into());
        Err(CliError::CheckFailed(format!("oracle mismatch ({first})")))
    }
}
