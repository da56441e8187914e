//! Run configuration (TOML) and the compiled-in example presets.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize, Serializer};

use crate::basis::Interval;
use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizer::{LineSearch, OptimizerConfig};
use crate::system::{self, MatrixFn, ParametricSystem, PolyMatrix};

pub const DEFAULT_SEED: u64 = 42;

/// Serializes a matrix as row-major nested lists.
pub fn serialize_matrix<S: Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    matrix_to_rows(m).serialize(s)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Config(format!("{what}: matrix must be non-empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Config(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what}: entries must be finite")));
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().copied(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Illustrative,
    MassSpring,
    /// Parameter-free scalar plant `dx = -x + u`.
    Scalar,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "illustrative" => Ok(Self::Illustrative),
            "mass-spring" => Ok(Self::MassSpring),
            "scalar" => Ok(Self::Scalar),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected illustrative, mass-spring or scalar)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Illustrative => "illustrative",
            Self::MassSpring => "mass-spring",
            Self::Scalar => "scalar",
        }
    }

    pub fn system(&self) -> ParametricSystem {
        match self {
            Self::Illustrative => system::illustrative(),
            Self::MassSpring => system::mass_spring(),
            Self::Scalar => system::scalar_deterministic(),
        }
    }

    /// Settings used for the published runs: `N = 5`, step 0.01, stop at a
    /// gradient norm of 1e-3, identity weights.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            system: SystemSpec::Preset {
                preset: self.name().to_string(),
            },
            ..RunConfig::default()
        }
    }
}

/// Plant definition: a preset name or polynomial matrices in the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SystemSpec {
    Preset {
        preset: String,
    },
    Inline {
        /// Support `[a, b]` of the uniform parameter.
        interval: [f64; 2],
        /// Row-major entries, each an ascending coefficient list.
        a: Vec<Vec<Vec<f64>>>,
        b: Vec<Vec<Vec<f64>>>,
    },
}

impl SystemSpec {
    pub fn build(&self) -> Result<ParametricSystem> {
        match self {
            Self::Preset { preset } => Ok(Preset::parse(preset)?.system()),
            Self::Inline { interval, a, b } => {
                let iv = Interval::new(interval[0], interval[1])
                    .map_err(|e| Error::Config(format!("system.interval: {e}")))?;
                let a = PolyMatrix::from_rows(a.clone())
                    .map_err(|e| Error::Config(format!("system.a: {e}")))?;
                let b = PolyMatrix::from_rows(b.clone())
                    .map_err(|e| Error::Config(format!("system.b: {e}")))?;
                ParametricSystem::new(MatrixFn::Polynomial(a), MatrixFn::Polynomial(b), iv)
                    .map_err(|e| Error::Config(format!("system: {e}")))
            }
        }
    }
}

/// A weight matrix: `"identity"` or explicit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Named(String),
    Dense(Vec<Vec<f64>>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self::Named("identity".into())
    }
}

impl WeightSpec {
    fn build(&self, dim: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            Self::Named(name) if name == "identity" => DMatrix::identity(dim, dim),
            Self::Named(other) => {
                return Err(Error::Config(format!(
                    "{what}: unknown weight '{other}' (use \"identity\" or a matrix)"
                )))
            }
            Self::Dense(rows) => matrix_from_rows(rows, what)?,
        };
        if m.shape() != (dim, dim) {
            return Err(Error::Config(format!(
                "{what}: expected {dim}x{dim}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        linalg::check_spd(&m, what, 1e-12).map_err(|e| Error::Config(e.to_string()))?;
        Ok(m)
    }
}

/// `"auto"` or an explicit gain matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

impl Default for GainSpec {
    fn default() -> Self {
        Self::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PceSection {
    pub order: usize,
    /// Number of Gauss–Legendre nodes; chosen from the plant when absent.
    pub quadrature_order: Option<usize>,
}

impl Default for PceSection {
    fn default() -> Self {
        Self {
            order: 5,
            quadrature_order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub q: WeightSpec,
    pub r: WeightSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    Fixed,
    Armijo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub step_size: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub mode: StepMode,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub record_every: usize,
    pub initial_gain: GainSpec,
    /// Seed gain for the nominal Riccati solve when the automatic seeds fail.
    pub fallback_gain: Option<Vec<Vec<f64>>>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            step_size: d.step_size,
            grad_tol: d.grad_tol,
            max_iters: d.max_iters,
            mode: StepMode::Fixed,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            record_every: d.record_every,
            initial_gain: GainSpec::default(),
            fallback_gain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    /// Gauss–Legendre nodes for the true expected cost.
    pub grid_order: usize,
    /// Uniform grid size for `cost_vs_xi.csv` and the admissibility sweep.
    pub sweep_points: usize,
    /// Step for the finite-difference gradient check.
    pub fd_step: f64,
    /// Initial states for the per-state cost columns; drawn from the seed
    /// when empty.
    pub initial_states: Vec<Vec<f64>>,
    pub orders: Vec<usize>,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            grid_order: 64,
            sweep_points: 101,
            fd_step: 1e-6,
            initial_states: Vec::new(),
            orders: vec![1, 2, 3, 4, 5, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec!["json".into(), "csv".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub pce: PceSection,
    pub cost: CostSection,
    pub optimizer: OptimizerSection,
    pub validation: ValidationSection,
    pub output: OutputSection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemSpec::Preset {
                preset: "illustrative".into(),
            },
            pce: PceSection::default(),
            cost: CostSection::default(),
            optimizer: OptimizerSection::default(),
            validation: ValidationSection::default(),
            output: OutputSection::default(),
            seed: DEFAULT_SEED,
        }
    }
}

/// Fully built problem data derived from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: ParametricSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub optimizer: OptimizerConfig,
    pub initial_gain: Option<DMatrix<f64>>,
    pub fallback_gain: Option<DMatrix<f64>>,
    pub initial_states: Vec<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads TOML, or JSON when the file extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let o = &self.optimizer;
        let cfg = OptimizerConfig {
            step_size: o.step_size,
            grad_tol: o.grad_tol,
            max_iters: o.max_iters,
            line_search: match o.mode {
                StepMode::Fixed => LineSearch::Fixed,
                StepMode::Armijo => LineSearch::Armijo {
                    c: o.armijo_c,
                    shrink: o.armijo_shrink,
                },
            },
            record_every: o.record_every,
        };
        cfg.validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        Ok(cfg)
    }

    /// Validates every section and builds the plant, weights and gains.
    pub fn build(&self) -> Result<Problem> {
        let system = self.system.build()?;
        let (nx, nu) = (system.nx(), system.nu());
        let q = self.cost.q.build(nx, "cost.q")?;
        let r = self.cost.r.build(nu, "cost.r")?;
        let optimizer = self.optimizer_config()?;
        let gain = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
            let k = matrix_from_rows(rows, what)?;
            if k.shape() != (nu, nx) {
                return Err(Error::Config(format!(
                    "{what}: expected {nu}x{nx}, got {}x{}",
                    k.nrows(),
                    k.ncols()
                )));
            }
            Ok(k)
        };
        let initial_gain = match &self.optimizer.initial_gain {
            GainSpec::Named(s) if s == "auto" => None,
            GainSpec::Named(other) => {
                return Err(Error::Config(format!(
                    "optimizer.initial_gain: expected \"auto\" or a matrix, got '{other}'"
                )))
            }
            GainSpec::Explicit(rows) => Some(gain(rows, "optimizer.initial_gain")?),
        };
        let fallback_gain = self
            .optimizer
            .fallback_gain
            .as_deref()
            .map(|rows| gain(rows, "optimizer.fallback_gain"))
            .transpose()?;
        if self.validation.grid_order == 0 || self.validation.sweep_points == 0 {
            return Err(Error::Config(
                "validation: grid_order and sweep_points must be positive".into(),
            ));
        }
        if self.validation.fd_step.is_nan() || self.validation.fd_step <= 0.0 {
            return Err(Error::Config("validation.fd_step must be positive".into()));
        }
        if let Some(i) = self
            .validation
            .initial_states
            .iter()
            .position(|s| s.len() != nx)
        {
            return Err(Error::Config(format!(
                "validation.initial_states[{i}]: expected {nx} entries"
            )));
        }
        if self.pce.quadrature_order == Some(0) {
            return Err(Error::Config(
                "pce.quadrature_order must be positive".into(),
            ));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(Error::Config(format!(
                    "output.formats: unknown format '{f}'"
                )));
            }
        }
        let initial_states = if self.validation.initial_states.is_empty() {
            crate::validation::seeded_initial_states(nx, 3, self.seed)
        } else {
            self.validation.initial_states.clone()
        };
        Ok(Problem {
            system,
            q,
            r,
            optimizer,
            initial_gain,
            fallback_gain,
            initial_states,
        })
    }
}
