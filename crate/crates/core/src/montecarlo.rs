//! Paired-route Monte Carlo: the log of a simulated group SDE against the
//! algebra-coordinate SDE driven by the same Brownian increments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::algebra::GroupModel;
use crate::deterministic::{
    integrate_group_ode, invariant_error, perturb, ErrorSide, GeodesicInterpolant, Integrator,
};
use crate::error::{LieError, Result};
use crate::stochastic::{
    algebra_sde_endpoint, AlgebraSde, BrownianPath, ErrorSde, GroupSdeStepper, LogStateSde,
    NoiseModel, SdeScheme,
};
use crate::systems::{step_count, VectorField};

/// Stream offset separating weak-test paths from strong-test paths.
const WEAK_STREAM_OFFSET: u64 = 1 << 40;

/// Which quantity the two routes propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// `x = log X` for a linear field.
    State,
    /// `xi = log eta` for the invariant error of an affine field.
    Error(ErrorSide),
}

#[derive(Debug, Clone)]
pub struct McConfig {
    /// Stratonovich drift.
    pub field: VectorField,
    pub noise: NoiseModel,
    pub route: Route,
    /// `x0` for [`Route::State`], `xi0` for [`Route::Error`].
    pub x0: DVector<f64>,
    /// Initial estimate for [`Route::Error`]; ignored otherwise.
    pub xhat0: DMatrix<f64>,
    pub t0: f64,
    pub horizon: f64,
    /// Step sizes of the strong test; each must be an integer multiple of the
    /// smallest.
    pub dt_levels: Vec<f64>,
    pub strong_paths: usize,
    pub weak_dt: f64,
    pub weak_paths: usize,
    pub seed: u64,
    pub scheme: SdeScheme,
}

/// One row of the strong-error table.
#[derive(Debug, Clone, PartialEq)]
pub struct StrongRow {
    pub dt: f64,
    /// `sqrt(mean |xi_group(T) - xi_alg(T)|^2)` over the retained paths.
    pub rms: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongReport {
    /// Rows sorted by decreasing `dt`.
    pub rows: Vec<StrongRow>,
    /// Least-squares slope of `ln rms` against `ln dt`.
    pub fitted_order: f64,
    /// `rms` strictly decreases as `dt` shrinks.
    pub monotone: bool,
    pub paths: usize,
    pub excluded: usize,
}

/// Sample moments of one route.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub mean_stderr: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_stderr: DMatrix<f64>,
}

impl Moments {
    pub fn from_samples(samples: &[DVector<f64>]) -> Self {
        let m = samples.len() as f64;
        let d = samples.first().map_or(0, |s| s.len());
        let mut mean = DVector::zeros(d);
        for s in samples {
            mean += s;
        }
        mean /= m;
        let centered: Vec<DVector<f64>> = samples.iter().map(|s| s - &mean).collect();
        let mut var = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for c in &centered {
            var += c.component_mul(c);
            cov += c * c.transpose();
        }
        let denom = (m - 1.0).max(1.0);
        cov /= denom;
        var /= denom;
        let mean_stderr = var.map(|v| (v / m).sqrt());
        let mut cov_stderr = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for c in &centered {
                    let p = c[i] * c[j] - cov[(i, j)];
                    acc += p * p;
                }
                cov_stderr[(i, j)] = (acc / denom / m).sqrt();
            }
        }
        Moments {
            mean,
            mean_stderr,
            cov,
            cov_stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakReport {
    pub dt: f64,
    pub paths: usize,
    pub excluded: usize,
    pub group: Moments,
    pub algebra: Moments,
    /// Largest `|a - b| / sqrt(se_a^2 + se_b^2)` over means and upper-triangular
    /// covariance entries.
    pub max_z: f64,
    /// Every compared entry lies within three combined standard errors.
    pub within_3_sigma: bool,
}

impl WeakReport {
    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / self.paths.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub strong: Option<StrongReport>,
    pub weak: Option<WeakReport>,
}

/// Everything a single path needs, prepared once per configuration.
struct Prepared {
    model: Arc<GroupModel>,
    stepper: GroupSdeStepper,
    algebra: Box<dyn AlgebraSde + Send>,
    xhat: Option<Arc<GeodesicInterpolant>>,
    x0_group: DMatrix<f64>,
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        let d = self.field.model().d();
        if self.x0.len() != d {
            return Err(LieError::Dimension {
                expected: d,
                got: self.x0.len(),
            });
        }
        if self.dt_levels.iter().any(|dt| !(*dt > 0.0)) || !(self.weak_dt > 0.0) {
            return Err(LieError::InvalidArgument("step sizes must be positive".into()));
        }
        Ok(())
    }

    fn prepare(&self, finest_dt: f64) -> Result<Prepared> {
        self.validate()?;
        let model = self.field.model().clone();
        let stepper = GroupSdeStepper::new(&self.field, &self.noise, self.scheme)?;
        match self.route {
            Route::State => Ok(Prepared {
                x0_group: model.exp(&self.x0)?,
                algebra: Box::new(LogStateSde::new(&self.field, &self.noise)?),
                stepper,
                xhat: None,
                model,
            }),
            Route::Error(side) => {
                let traj = integrate_group_ode(
                    &self.field,
                    &self.xhat0,
                    self.t0,
                    self.horizon,
                    finest_dt,
                    Integrator::Rkmk4,
                )?;
                let xhat = Arc::new(GeodesicInterpolant::new(&traj)?);
                Ok(Prepared {
                    x0_group: perturb(&model, &self.xhat0, &self.x0, side)?,
                    algebra: Box::new(ErrorSde::new(&self.field, &self.noise, side, xhat.clone())?),
                    stepper,
                    xhat: Some(xhat),
                    model,
                })
            }
        }
    }

    /// Both routes' `xi(T)` along one Brownian path, or `None` when either
    /// route aborted (singular chart, branch violation, non-finite state).
    fn run_pair(&self, prep: &Prepared, path: &BrownianPath) -> Option<(DVector<f64>, DVector<f64>)> {
        let alg = algebra_sde_endpoint(prep.algebra.as_ref(), &self.x0, self.t0, path).ok()?;
        let x_t = prep.stepper.endpoint(&prep.x0_group, self.t0, path).ok()?;
        let eta = match (&self.route, &prep.xhat) {
            (Route::Error(side), Some(xhat)) => {
                let xh = xhat.eval(self.t0 + self.horizon);
                invariant_error(&prep.model, &x_t, &xh, *side).ok()?
            }
            _ => x_t,
        };
        let grp = prep.model.log(&eta).ok()?;
        Some((grp, alg))
    }
}

fn level_factors(levels: &[f64]) -> Result<(f64, Vec<usize>)> {
    let finest = levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut factors = Vec::with_capacity(levels.len());
    for &dt in levels {
        let r = dt / finest;
        let k = r.round();
        if (r - k).abs() > 1e-9 * r {
            return Err(LieError::InvalidArgument(format!(
                "dt level {dt} is not an integer multiple of {finest}"
            )));
        }
        factors.push(k as usize);
    }
    Ok((finest, factors))
}

fn exact_steps(horizon: f64, dt: f64) -> Result<usize> {
    let steps = step_count(horizon, dt)?;
    if ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(LieError::InvalidArgument(format!(
            "dt {dt} does not divide the horizon {horizon}"
        )));
    }
    Ok(steps)
}

/// Pathwise gap between the two routes at each `dt` level, all levels driven
/// by coarsenings of one fine Brownian path per path index.
pub fn strong_convergence(cfg: &McConfig) -> Result<StrongReport> {
    if cfg.dt_levels.len() < 2 {
        return Err(LieError::InvalidArgument("need at least two dt levels".into()));
    }
    let (finest, factors) = level_factors(&cfg.dt_levels)?;
    let steps = exact_steps(cfg.horizon, finest)?;
    for &f in &factors {
        if steps % f != 0 {
            return Err(LieError::InvalidArgument("dt levels must divide the horizon".into()));
        }
    }
    let prep = cfg.prepare(finest)?;
    let channels = cfg.noise.channels();

    let per_path: Vec<Option<Vec<f64>>> = (0..cfg.strong_paths as u64)
        .into_par_iter()
        .map(|p| {
            let fine = BrownianPath::generate(cfg.seed, p, finest, steps, channels);
            factors
                .iter()
                .map(|&f| {
                    let path = fine.coarsen(f).ok()?;
                    let (g, a) = cfg.run_pair(&prep, &path)?;
                    Some((g - a).norm_squared())
                })
                .collect()
        })
        .collect();

    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    let excluded = per_path.len() - kept.len();
    if kept.is_empty() {
        return Err(LieError::InvalidArgument("every path aborted".into()));
    }
    let m = kept.len() as f64;
    let mut rows: Vec<StrongRow> = cfg
        .dt_levels
        .iter()
        .enumerate()
        .map(|(i, &dt)| {
            let sq: Vec<f64> = kept.iter().map(|v| v[i]).collect();
            let mean_sq = sq.iter().sum::<f64>() / m;
            let var_sq = sq.iter().map(|s| (s - mean_sq).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            let rms = mean_sq.sqrt();
            let stderr = if rms > 0.0 { var_sq.sqrt() / (2.0 * rms * m.sqrt()) } else { 0.0 };
            StrongRow { dt, rms, stderr }
        })
        .collect();
    rows.sort_by(|a, b| b.dt.total_cmp(&a.dt));
    let monotone = rows.windows(2).all(|w| w[1].rms < w[0].rms);
    let fitted_order = fit_order(&rows);
    Ok(StrongReport {
        rows,
        fitted_order,
        monotone,
        paths: per_path.len(),
        excluded,
    })
}

fn fit_order(rows: &[StrongRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt.ln(), r.rms.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Moments of `xi(T)` from both routes at `weak_dt`.
pub fn weak_comparison(cfg: &McConfig) -> Result<WeakReport> {
    let steps = exact_steps(cfg.horizon, cfg.weak_dt)?;
    let prep = cfg.prepare(cfg.weak_dt)?;
    let channels = cfg.noise.channels();
    let pairs: Vec<Option<(DVector<f64>, DVector<f64>)>> = (0..cfg.weak_paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = BrownianPath::generate(cfg.seed, WEAK_STREAM_OFFSET + p, cfg.weak_dt, steps, channels);
            cfg.run_pair(&prep, &path)
        })
        .collect();
    let (group, algebra): (Vec<_>, Vec<_>) = pairs.iter().flatten().cloned().unzip();
    let excluded = pairs.len() - group.len();
    if group.len() < 2 {
        return Err(LieError::InvalidArgument("too few surviving paths".into()));
    }
    let g = Moments::from_samples(&group);
    let a = Moments::from_samples(&algebra);
    let max_z = max_z_score(&g, &a);
    Ok(WeakReport {
        dt: cfg.weak_dt,
        paths: pairs.len(),
        excluded,
        within_3_sigma: max_z <= 3.0,
        max_z,
        group: g,
        algebra: a,
    })
}

/// Largest standardised difference between two sets of moments.
pub fn max_z_score(a: &Moments, b: &Moments) -> f64 {
    let z = |x: f64, y: f64, sx: f64, sy: f64| {
        let diff = (x - y).abs();
        let s = (sx * sx + sy * sy).sqrt();
        if s > 0.0 {
            diff / s
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let d = a.mean.len();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        worst = worst.max(z(a.mean[i], b.mean[i], a.mean_stderr[i], b.mean_stderr[i]));
        for j in i..d {
            worst = worst.max(z(
                a.cov[(i, j)],
                b.cov[(i, j)],
                a.cov_stderr[(i, j)],
                b.cov_stderr[(i, j)],
            ));
        }
    }
    worst
}

/// Runs the strong test when `strong_paths > 0` and the weak test when
/// `weak_paths > 0`.
pub fn monte_carlo_compare(cfg: &McConfig) -> Result<McReport> {
    Ok(McReport {
        strong: if cfg.strong_paths > 0 { Some(strong_convergence(cfg)?) } else { None },
        weak: if cfg.weak_paths > 0 { Some(weak_comparison(cfg)?) } else { None },
    })
}
