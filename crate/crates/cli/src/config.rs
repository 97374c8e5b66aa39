//! Scenario files: JSON with unknown keys rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lie_errdyn::deterministic::{Disturbance, ErrorSide};
use lie_errdyn::montecarlo::Route;
use lie_errdyn::stochastic::{NoiseModel, SdeScheme};
use lie_errdyn::systems::{FieldKind, Signal, VectorField};
use lie_errdyn::{DiffusionSide, GroupModel};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub group: GroupSpec,
    pub field: FieldSpec,
    /// Expected classification for `check`.
    #[serde(default)]
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub disturbance: Option<DisturbanceSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub error_side: SideSpec,
    #[serde(default)]
    pub route: RouteSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Log coordinates of the initial estimate.
    #[serde(default)]
    pub xhat0: Option<Vec<f64>>,
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Strong-test step sizes; defaults to `[4 dt, 2 dt, dt]`.
    #[serde(default)]
    pub dt_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub weak_paths: usize,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_paths() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum GroupSpec {
    SO3,
    SEN3 { n: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    LeftInvariant { u: SignalSpec },
    RightInvariant { u: SignalSpec },
    Commutator { u: SignalSpec },
    Sum { terms: Vec<FieldSpec> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Constant {
        value: Vec<f64>,
    },
    /// `values[0]` before `breaks[0]`, `values[i]` from `breaks[i-1]`.
    Piecewise {
        breaks: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        omega: Vec<f64>,
        phase: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Linear,
    Affine,
    Neither,
}

impl Expectation {
    pub fn name(self) -> &'static str {
        match self {
            Expectation::Linear => "linear",
            Expectation::Affine => "affine",
            Expectation::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub side: FrameSpec,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSpec {
    #[default]
    Body,
    World,
}

/// Either an isotropic `sigma` or explicit strengths given as `d` rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub side: SideSpec,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub strengths: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideSpec {
    #[default]
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSpec {
    State,
    #[default]
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    #[default]
    EmIto,
    HeunStrat,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Draws are scaled to norm at most this.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Also estimate the short-time drift at `x0` with `paths` paths.
    #[serde(default)]
    pub drift: bool,
    #[serde(default = "default_dtau")]
    pub dtau: f64,
}

fn default_samples() -> usize {
    100
}

fn default_radius() -> f64 {
    0.5
}

fn default_dtau() -> f64 {
    1e-3
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            samples: default_samples(),
            radius: default_radius(),
            drift: false,
            dtau: default_dtau(),
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.paths = paths;
            self.weak_paths = paths;
        }
        if let Some(dt) = o.dt {
            self.dt = dt;
            self.dt_levels = None;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.group.dim();
        let bad = |msg: String| Err(CliError::Config(msg));
        if let GroupSpec::SEN3 { n } = self.group {
            if n > 8 {
                return bad(format!("group: SEN3 with n = {n} is not supported (n <= 8)"));
            }
        }
        self.field.validate(d, "field")?;
        if let Some(w) = &self.disturbance {
            w.signal.validate(d, "disturbance.signal")?;
        }
        if let Some(noise) = &self.noise {
            match (&noise.sigma, &noise.strengths) {
                (Some(s), None) if s.is_finite() && *s >= 0.0 => {}
                (Some(_), None) => return bad("noise.sigma: must be finite and non-negative".into()),
                (None, Some(rows)) => {
                    if rows.len() != d {
                        return bad(format!("noise.strengths: expected {d} rows, got {}", rows.len()));
                    }
                    let m = rows[0].len();
                    if m == 0 || rows.iter().any(|r| r.len() != m) {
                        return bad("noise.strengths: rows must be non-empty and equally long".into());
                    }
                }
                _ => return bad("noise: give exactly one of sigma or strengths".into()),
            }
        }
        for (name, v) in [("x0", &self.x0), ("xhat0", &self.xhat0), ("xi0", &self.xi0)] {
            if let Some(v) = v {
                if v.len() != d {
                    return bad(format!("{name}: expected {d} entries, got {}", v.len()));
                }
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon: must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return bad("dt: must be positive and at most the horizon".into());
        }
        if let Some(levels) = &self.dt_levels {
            if levels.len() < 2 || levels.iter().any(|l| !(*l > 0.0)) {
                return bad("dt_levels: need at least two positive step sizes".into());
            }
        }
        if !(self.oracle.radius > 0.0) || !(self.oracle.dtau > 0.0) {
            return bad("oracle: radius and dtau must be positive".into());
        }
        Ok(())
    }

    pub fn model(&self) -> Arc<GroupModel> {
        Arc::new(match self.group {
            GroupSpec::SO3 => GroupModel::so3(),
            GroupSpec::SEN3 { n } => GroupModel::se_n3(n),
        })
    }

    pub fn vector_field(&self, model: &Arc<GroupModel>) -> Result<VectorField, CliError> {
        Ok(VectorField::new(model.clone(), self.field.kind()?))
    }

    pub fn disturbance(&self) -> Result<Disturbance, CliError> {
        match &self.disturbance {
            None => Ok(Disturbance::none(self.group.dim())),
            Some(w) => {
                let s = w.signal.signal()?;
                Ok(match w.side {
                    FrameSpec::Body => Disturbance::body(s),
                    FrameSpec::World => Disturbance::world(s),
                })
            }
        }
    }

    pub fn noise_model(&self, model: &GroupModel) -> Result<NoiseModel, CliError> {
        let spec = self
            .noise
            .as_ref()
            .ok_or_else(|| CliError::Config("noise: required for this command".into()))?;
        let side = match spec.side {
            SideSpec::Left => DiffusionSide::Left,
            SideSpec::Right => DiffusionSide::Right,
        };
        let strengths = match (&spec.sigma, &spec.strengths) {
            (Some(s), _) => DMatrix::identity(model.d(), model.d()) * *s,
            (None, Some(rows)) => {
                DMatrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flatten().copied())
            }
            (None, None) => unreachable!("validated"),
        };
        NoiseModel::new(model, side, strengths).map_err(|e| CliError::Config(format!("noise: {e}")))
    }

    pub fn error_side(&self) -> ErrorSide {
        match self.error_side {
            SideSpec::Left => ErrorSide::Left,
            SideSpec::Right => ErrorSide::Right,
        }
    }

    pub fn route(&self) -> Route {
        match self.route {
            RouteSpec::State => Route::State,
            RouteSpec::Error => Route::Error(self.error_side()),
        }
    }

    pub fn scheme(&self) -> SdeScheme {
        match self.scheme {
            SchemeSpec::EmIto => SdeScheme::EmIto,
            SchemeSpec::HeunStrat => SdeScheme::HeunStrat,
        }
    }

    pub fn dt_levels(&self) -> Vec<f64> {
        self.dt_levels
            .clone()
            .unwrap_or_else(|| vec![4.0 * self.dt, 2.0 * self.dt, self.dt])
    }

    fn vector_or_zero(&self, v: &Option<Vec<f64>>) -> DVector<f64> {
        match v {
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(self.group.dim()),
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        self.vector_or_zero(&self.x0)
    }

    pub fn xi0(&self) -> DVector<f64> {
        self.vector_or_zero(&self.xi0)
    }

    pub fn xhat0(&self, model: &GroupModel) -> Result<DMatrix<f64>, CliError> {
        model
            .exp(&self.vector_or_zero(&self.xhat0))
            .map_err(|e| CliError::Config(format!("xhat0: {e}")))
    }
}

impl GroupSpec {
    pub fn dim(self) -> usize {
        match self {
            GroupSpec::SO3 => 3,
            GroupSpec::SEN3 { n } => 3 * (n + 1),
        }
    }
}

impl FieldSpec {
    fn validate(&self, d: usize, at: &str) -> Result<(), CliError> {
        match self {
            FieldSpec::Zero => Ok(()),
            FieldSpec::LeftInvariant { u } | FieldSpec::RightInvariant { u } | FieldSpec::Commutator { u } => {
                u.validate(d, &format!("{at}.u"))
            }
            FieldSpec::Sum { terms } => {
                if terms.is_empty() {
                    return Err(CliError::Config(format!("{at}.terms: must not be empty")));
                }
                for (i, t) in terms.iter().enumerate() {
                    t.validate(d, &format!("{at}.terms[{i}]"))?;
                }
                Ok(())
            }
        }
    }

    fn kind(&self) -> Result<FieldKind, CliError> {
        Ok(match self {
            FieldSpec::Zero => FieldKind::Zero,
            FieldSpec::LeftInvariant { u } => FieldKind::LeftInvariant(u.signal()?),
            FieldSpec::RightInvariant { u } => FieldKind::RightInvariant(u.signal()?),
            FieldSpec::Commutator { u } => FieldKind::Commutator(u.signal()?),
            FieldSpec::Sum { terms } => {
                FieldKind::Sum(terms.iter().map(|t| t.kind()).collect::<Result<_, _>>()?)
            }
        })
    }
}

impl SignalSpec {
    fn validate(&self, d: usize, at: &str) -> Result<(), CliError> {
        let check = |name: &str, v: &[f64]| {
            if v.len() != d {
                Err(CliError::Config(format!("{at}.{name}: expected {d} entries, got {}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(CliError::Config(format!("{at}.{name}: entries must be finite")))
            } else {
                Ok(())
            }
        };
        match self {
            SignalSpec::Constant { value } => check("value", value),
            SignalSpec::Piecewise { breaks, values } => {
                for v in values {
                    check("values", v)?;
                }
                self.signal()
                    .map(|_| ())
                    .map_err(|e| CliError::Config(format!("{at}: {e}")))?;
                if breaks.iter().any(|b| !b.is_finite()) {
                    return Err(CliError::Config(format!("{at}.breaks: entries must be finite")));
                }
                Ok(())
            }
            SignalSpec::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => {
                check("offset", offset)?;
                check("amplitude", amplitude)?;
                check("omega", omega)?;
                check("phase", phase)
            }
        }
    }

    fn signal(&self) -> Result<Signal, CliError> {
        let v = |x: &Vec<f64>| DVector::from_column_slice(x);
        Ok(match self {
            SignalSpec::Constant { value } => Signal::Constant(v(value)),
            SignalSpec::Piecewise { breaks, values } => {
                Signal::piecewise(breaks.clone(), values.iter().map(v).collect())
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
            SignalSpec::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => Signal::Sinusoid {
                offset: v(offset),
                amplitude: v(amplitude),
                omega: v(omega),
                phase: v(phase),
            },
        })
    }
}
