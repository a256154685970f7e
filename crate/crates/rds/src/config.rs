//! Experiment configuration files (JSON or TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use rds_core::degrade::CorruptionSpec;
use rds_core::denoiser::{EstimatorConfig, EstimatorMethod, GaussianPrior, GmmPrior};
use rds_core::inner::{CgConfig, GdConfig, StepNumerator};
use rds_core::operators::{build_operator, Boundary, OperatorSpec};
use rds_core::rng::RngStream;
use rds_core::robust_loss::HuberParams;
use rds_core::sampler::{InnerSolver, RSchedule, SolverConfig};
use rds_core::schedule::{GridSpacing, NoiseSchedule, TimeGrid};
use rds_core::Tensor;

use crate::error::{RdsError, Result};
use crate::io::load_tensor;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(RdsError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SuperResolution,
    Inpainting,
    GaussianDeblur,
    MotionDeblur,
    NonlinearDeblur,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SuperResolution => "super_resolution",
            Task::Inpainting => "inpainting",
            Task::GaussianDeblur => "gaussian_deblur",
            Task::MotionDeblur => "motion_deblur",
            Task::NonlinearDeblur => "nonlinear_deblur",
        }
    }

    pub fn default_operator(self) -> OperatorConfig {
        match self {
            Task::SuperResolution => OperatorConfig::Downsample { factor: 4 },
            Task::Inpainting => OperatorConfig::Inpainting { mask_ratio: 0.7 },
            Task::GaussianDeblur => OperatorConfig::GaussianBlur {
                size: 9,
                std: 1.5,
                boundary: BoundaryConfig::Replicate,
            },
            Task::MotionDeblur => OperatorConfig::MotionBlur {
                size: 9,
                length: 9,
                angle_deg: 0.0,
                std: 0.5,
                boundary: BoundaryConfig::Replicate,
            },
            Task::NonlinearDeblur => OperatorConfig::NonlinearBlur {
                size: 9,
                std: 1.5,
                gain: 3.0,
                boundary: BoundaryConfig::Replicate,
            },
        }
    }

    /// Inner iterations, Huber threshold and GD learning rate used when the config leaves them unset.
    pub fn solver_defaults(self, inner: InnerKind) -> (usize, f64, f64) {
        use InnerKind::*;
        match (self, inner) {
            (Task::SuperResolution, Gd) => (100, 0.02, 1e-4),
            (Task::SuperResolution, Cg) => (20, 0.005, 0.0),
            (Task::Inpainting, Gd) => (100, 0.01, 1e-4),
            (Task::Inpainting, Cg) => (100, 0.02, 0.0),
            (Task::GaussianDeblur, Gd) => (100, 0.02, 1e-4),
            (Task::GaussianDeblur, Cg) => (20, 0.02, 0.0),
            (Task::MotionDeblur, Gd) => (100, 0.02, 5e-5),
            (Task::MotionDeblur, Cg) => (20, 0.02, 0.0),
            (Task::NonlinearDeblur, Gd) => (100, 0.01, 5e-5),
            (Task::NonlinearDeblur, Cg) => (50, 0.01, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerKind {
    Gd,
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryConfig {
    #[default]
    Replicate,
    Zero,
}

impl From<BoundaryConfig> for Boundary {
    fn from(b: BoundaryConfig) -> Self {
        match b {
            BoundaryConfig::Replicate => Boundary::Replicate,
            BoundaryConfig::Zero => Boundary::Zero,
        }
    }
}

fn d_size() -> usize {
    9
}
fn d_blur_std() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorConfig {
    /// `mask_ratio` is the dropped fraction.
    Inpainting {
        mask_ratio: f64,
    },
    Downsample {
        factor: usize,
    },
    GaussianBlur {
        #[serde(default = "d_size")]
        size: usize,
        #[serde(default = "d_blur_std")]
        std: f64,
        #[serde(default)]
        boundary: BoundaryConfig,
    },
    MotionBlur {
        #[serde(default = "d_size")]
        size: usize,
        length: usize,
        #[serde(default)]
        angle_deg: f64,
        std: f64,
        #[serde(default)]
        boundary: BoundaryConfig,
    },
    NonlinearBlur {
        #[serde(default = "d_size")]
        size: usize,
        #[serde(default = "d_blur_std")]
        std: f64,
        gain: f64,
        #[serde(default)]
        boundary: BoundaryConfig,
    },
}

impl OperatorConfig {
    pub fn to_spec(&self) -> OperatorSpec {
        match *self {
            OperatorConfig::Inpainting { mask_ratio } => OperatorSpec::Inpaint { mask_ratio },
            OperatorConfig::Downsample { factor } => OperatorSpec::Downsample { factor },
            OperatorConfig::GaussianBlur {
                size,
                std,
                boundary,
            } => OperatorSpec::GaussianBlur {
                size,
                std,
                boundary: boundary.into(),
            },
            OperatorConfig::MotionBlur {
                size,
                length,
                angle_deg,
                std,
                boundary,
            } => OperatorSpec::MotionBlur {
                size,
                length,
                angle_deg,
                std,
                boundary: boundary.into(),
            },
            OperatorConfig::NonlinearBlur {
                size,
                std,
                gain,
                boundary,
            } => OperatorSpec::NonlinearBlur {
                size,
                std,
                gain,
                boundary: boundary.into(),
            },
        }
    }

    fn fits(&self, task: Task) -> bool {
        matches!(
            (task, self),
            (Task::SuperResolution, OperatorConfig::Downsample { .. })
                | (Task::Inpainting, OperatorConfig::Inpainting { .. })
                | (Task::GaussianDeblur, OperatorConfig::GaussianBlur { .. })
                | (Task::MotionDeblur, OperatorConfig::MotionBlur { .. })
                | (Task::NonlinearDeblur, OperatorConfig::NonlinearBlur { .. })
        )
    }
}

fn d_xi() -> f64 {
    -1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    pub sigma: f64,
    pub rho: f64,
    #[serde(default = "d_xi")]
    pub xi: f64,
}

fn d_t_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    VpLinear {
        beta_min: f64,
        beta_max: f64,
        #[serde(default = "d_t_max")]
        t_max: f64,
    },
    VpCosine {
        offset: f64,
        #[serde(default = "d_t_max")]
        t_max: f64,
    },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        match NoiseSchedule::default() {
            NoiseSchedule::VpLinear {
                beta_min,
                beta_max,
                t_max,
            } => ScheduleConfig::VpLinear {
                beta_min,
                beta_max,
                t_max,
            },
            NoiseSchedule::VpCosine { offset, t_max } => ScheduleConfig::VpCosine { offset, t_max },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    #[default]
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RScheduleConfig {
    ScaledSigma { c: f64 },
    Constant { r: f64 },
    InverseSigma { k: f64 },
}

impl Default for RScheduleConfig {
    fn default() -> Self {
        RScheduleConfig::InverseSigma { k: 1.0 }
    }
}

impl From<RScheduleConfig> for RSchedule {
    fn from(r: RScheduleConfig) -> Self {
        match r {
            RScheduleConfig::ScaledSigma { c } => RSchedule::ScaledSigma(c),
            RScheduleConfig::Constant { r } => RSchedule::Constant(r),
            RScheduleConfig::InverseSigma { k } => RSchedule::InverseSigma(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TweedieSingle,
    #[default]
    DdimMultistep,
}

fn d_estimator_steps() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub method: EstimatorKind,
    #[serde(default = "d_estimator_steps")]
    pub steps: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            method: EstimatorKind::default(),
            steps: d_estimator_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdSection {
    pub iterations: Option<usize>,
    pub eta_x: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorConfig {
    #[default]
    GradGrad,
    GradDir,
}

fn d_eta() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSection {
    pub iterations: Option<usize>,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default)]
    pub numerator: NumeratorConfig,
}

impl Default for CgSection {
    fn default() -> Self {
        CgSection {
            iterations: None,
            eta: d_eta(),
            numerator: NumeratorConfig::default(),
        }
    }
}

fn d_steps() -> usize {
    200
}
fn d_power() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Outer steps `N`.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default)]
    pub spacing: Spacing,
    #[serde(default = "d_power")]
    pub spacing_power: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Huber threshold for the robust methods; unset means the task default.
    pub delta: Option<f64>,
    /// Noise level assumed by measurement refinement; unset means `corruption.sigma`.
    pub sigma: Option<f64>,
    #[serde(default)]
    pub r_schedule: RScheduleConfig,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub gd: GdSection,
    #[serde(default)]
    pub cg: CgSection,
}

impl Default for SolverSection {
    fn default() -> Self {
        serde_json::from_value(serde_json::json!({})).expect("all solver fields default")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RobustGd,
    RobustCg,
    L2Gd,
    L2Cg,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::RobustGd => "robust_gd",
            Method::RobustCg => "robust_cg",
            Method::L2Gd => "l2_gd",
            Method::L2Cg => "l2_cg",
        }
    }

    pub fn inner_kind(self) -> InnerKind {
        match self {
            Method::RobustGd | Method::L2Gd => InnerKind::Gd,
            Method::RobustCg | Method::L2Cg => InnerKind::Cg,
        }
    }

    pub fn is_robust(self) -> bool {
        matches!(self, Method::RobustGd | Method::RobustCg)
    }
}

/// A tensor given inline or by reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueSpec {
    Constant(f64),
    Values(Vec<f64>),
    File(FileRef),
    Sinusoid(Sinusoid),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: PathBuf,
}

/// `amplitude * sin(frequency * i + phase)` over the flat index `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl ValueSpec {
    pub fn materialize(&self, shape: &[usize], field: &str) -> Result<Tensor> {
        let t = match self {
            ValueSpec::Constant(v) => Tensor::full(shape, *v),
            ValueSpec::Values(v) => Tensor::new(shape.to_vec(), v.clone())
                .map_err(|e| RdsError::Config(format!("{field}: {e}")))?,
            ValueSpec::File(f) => {
                let t = load_tensor(&f.path)?;
                if t.shape() != shape {
                    return invalid(format!(
                        "{field}: {} has shape {:?}, expected {shape:?}",
                        f.path.display(),
                        t.shape()
                    ));
                }
                t
            }
            ValueSpec::Sinusoid(s) => Tensor::from_fn(shape, |i| {
                s.amplitude * (s.frequency * i as f64 + s.phase).sin()
            }),
        };
        if !t.is_finite() {
            return invalid(format!("{field} must be finite"));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmComponent {
    pub mean: ValueSpec,
    pub var: ValueSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Gaussian {
        mean: ValueSpec,
        var: ValueSpec,
    },
    Gmm {
        weights: Vec<f64>,
        components: Vec<GmmComponent>,
    },
    /// Program and arguments of an `RDX1` server.
    External {
        command: Vec<String>,
    },
}

/// A prior that can both sample ground truth and denoise in-process.
#[derive(Debug, Clone)]
pub enum BuiltPrior {
    Analytic(rds_core::denoiser::AnalyticPrior),
    External(Vec<String>),
}

fn d_shape() -> Vec<usize> {
    vec![32, 32]
}
fn d_repeats() -> usize {
    1
}
fn d_output() -> PathBuf {
    PathBuf::from("rds-out")
}
fn d_methods() -> Vec<Method> {
    vec![Method::RobustCg, Method::L2Cg]
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Signal shape.
    #[serde(default = "d_shape")]
    pub shape: Vec<usize>,
    /// Unset means the task's default operator.
    pub operator: Option<OperatorConfig>,
    pub corruption: CorruptionConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    pub prior: PriorConfig,
    /// Fixed ground truth; unset means one draw from the prior per repeat.
    pub truth: Option<PathBuf>,
    #[serde(default = "d_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    /// Put measured seconds in the `wall_s` column; otherwise it is 0.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "d_true")]
    pub save_tensors: bool,
    #[serde(default)]
    pub pgm_previews: bool,
    /// Worker threads; unset means one per core.
    pub threads: Option<usize>,
}

/// Parse a JSON or TOML file (chosen by extension) into a JSON value.
pub fn load_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| RdsError::io(path, e))?;
    let is_toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| RdsError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| RdsError::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text)
            .map_err(|e| RdsError::Config(format!("{}: {e}", path.display())))
    }
}

/// Set `value` at a dotted path such as `solver.cg.eta`, creating tables as needed.
pub fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return invalid(format!("bad parameter path {dotted:?}"));
    }
    for (i, key) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            Value::Null => {
                *cur = Value::Object(Default::default());
                cur.as_object_mut().expect("just set")
            }
            _ => {
                return invalid(format!(
                    "cannot set {dotted}: {} is not a table",
                    parts[..i].join(".")
                ))
            }
        };
        if i + 1 == parts.len() {
            obj.insert((*key).to_owned(), value);
            return Ok(());
        }
        cur = obj.entry((*key).to_owned()).or_insert(Value::Null);
    }
    unreachable!("path has at least one part")
}

/// Interpret a command-line value as JSON when it parses, otherwise as a string.
pub fn parse_cli_value(s: &str) -> Value {
    serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_owned()))
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| RdsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_value(load_value(path)?)
    }

    pub fn operator(&self) -> OperatorConfig {
        self.operator
            .clone()
            .unwrap_or_else(|| self.task.default_operator())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.solver.schedule {
            ScheduleConfig::VpLinear {
                beta_min,
                beta_max,
                t_max,
            } => NoiseSchedule::vp_linear(beta_min, beta_max, t_max),
            ScheduleConfig::VpCosine { offset, t_max } => NoiseSchedule::vp_cosine(offset, t_max),
        }
        .map_err(|e| RdsError::Config(format!("solver.schedule: {e}")))
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let spacing = match self.solver.spacing {
            Spacing::Uniform => GridSpacing::Uniform,
            Spacing::Polynomial => GridSpacing::Polynomial(self.solver.spacing_power),
        };
        TimeGrid::new(self.solver.steps, self.schedule()?.t_max(), spacing)
            .map_err(|e| RdsError::Config(format!("solver: {e}")))
    }

    pub fn corruption_spec(&self, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            sigma: self.corruption.sigma,
            rho: self.corruption.rho,
            xi: self.corruption.xi,
            seed,
        }
    }

    /// Huber threshold used by the robust variant of `method`.
    pub fn delta_for(&self, method: Method) -> f64 {
        self.solver
            .delta
            .unwrap_or(self.task.solver_defaults(method.inner_kind()).1)
    }

    pub fn solver_config(&self, method: Method, seed: u64) -> Result<SolverConfig> {
        let kind = method.inner_kind();
        let (iters, _, eta_x) = self.task.solver_defaults(kind);
        let inner = match kind {
            InnerKind::Gd => InnerSolver::Gd(GdConfig {
                iterations: self.solver.gd.iterations.unwrap_or(iters),
                eta_x: self.solver.gd.eta_x.unwrap_or(eta_x),
            }),
            InnerKind::Cg => InnerSolver::Cg(CgConfig {
                iterations: self.solver.cg.iterations.unwrap_or(iters),
                eta: self.solver.cg.eta,
                numerator: match self.solver.cg.numerator {
                    NumeratorConfig::GradGrad => StepNumerator::GradGrad,
                    NumeratorConfig::GradDir => StepNumerator::GradDir,
                },
            }),
        };
        let huber = if method.is_robust() {
            HuberParams::new(self.delta_for(method))
                .map_err(|e| RdsError::Config(format!("solver.delta: {e}")))?
        } else {
            HuberParams::squared_l2()
        };
        let cfg = SolverConfig {
            steps: self.solver.steps,
            inner,
            huber,
            sigma: self.solver.sigma.unwrap_or(self.corruption.sigma),
            r_schedule: self.solver.r_schedule.into(),
            estimator: EstimatorConfig {
                method: match self.solver.estimator.method {
                    EstimatorKind::TweedieSingle => EstimatorMethod::TweedieSingle,
                    EstimatorKind::DdimMultistep => EstimatorMethod::DdimMultistep,
                },
                steps: self.solver.estimator.steps,
            },
            seed,
        };
        cfg.validate()
            .map_err(|e| RdsError::Config(format!("solver ({}): {e}", method.name())))?;
        Ok(cfg)
    }

    pub fn build_prior(&self) -> Result<BuiltPrior> {
        use rds_core::denoiser::AnalyticPrior;
        let shape = &self.shape;
        Ok(match &self.prior {
            PriorConfig::Gaussian { mean, var } => BuiltPrior::Analytic(AnalyticPrior::Gaussian(
                GaussianPrior::new(
                    mean.materialize(shape, "prior.mean")?,
                    var.materialize(shape, "prior.var")?,
                )
                .map_err(|e| RdsError::Config(format!("prior: {e}")))?,
            )),
            PriorConfig::Gmm {
                weights,
                components,
            } => {
                let comps = components
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        GaussianPrior::new(
                            c.mean
                                .materialize(shape, &format!("prior.components[{k}].mean"))?,
                            c.var
                                .materialize(shape, &format!("prior.components[{k}].var"))?,
                        )
                        .map_err(|e| RdsError::Config(format!("prior.components[{k}]: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                BuiltPrior::Analytic(AnalyticPrior::Gmm(
                    GmmPrior::new(weights.clone(), comps)
                        .map_err(|e| RdsError::Config(format!("prior.weights: {e}")))?,
                ))
            }
            PriorConfig::External { command } => BuiltPrior::External(command.clone()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return invalid(format!(
                "shape must be non-empty with positive dims, got {:?}",
                self.shape
            ));
        }
        let op = self.operator();
        if !op.fits(self.task) {
            return invalid(format!(
                "operator.kind does not match task {}",
                self.task.name()
            ));
        }
        match op {
            OperatorConfig::Inpainting { mask_ratio } if !(0.0..1.0).contains(&mask_ratio) => {
                return invalid(format!(
                    "operator.mask_ratio must be in [0, 1), got {mask_ratio}"
                ));
            }
            OperatorConfig::Downsample { factor: 0 } => {
                return invalid("operator.factor must be >= 1");
            }
            OperatorConfig::NonlinearBlur { gain, .. } if !(gain > 0.0 && gain.is_finite()) => {
                return invalid(format!("operator.gain must be > 0, got {gain}"));
            }
            _ => {}
        }
        build_operator(&op.to_spec(), &self.shape, &mut RngStream::new(0))
            .map_err(|e| RdsError::Config(format!("operator: {e}")))?;

        let c = &self.corruption;
        if !(c.sigma >= 0.0 && c.sigma.is_finite()) {
            return invalid(format!("corruption.sigma must be >= 0, got {}", c.sigma));
        }
        if !(0.0..1.0).contains(&c.rho) {
            return invalid(format!("corruption.rho must be in [0, 1), got {}", c.rho));
        }
        if !c.xi.is_finite() {
            return invalid("corruption.xi must be finite");
        }
        if let Some(d) = self.solver.delta {
            if !(d > 0.0) {
                return invalid(format!("solver.delta must be > 0, got {d}"));
            }
        }
        if let Some(s) = self.solver.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return invalid(format!("solver.sigma must be >= 0, got {s}"));
            }
        }
        self.time_grid()?;
        if self.methods.is_empty() {
            return invalid("methods must list at least one method");
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return invalid(format!("methods lists {} twice", m.name()));
            }
            self.solver_config(*m, 0)?;
        }
        if self.repeats == 0 {
            return invalid("repeats must be >= 1");
        }
        if self.threads == Some(0) {
            return invalid("threads must be >= 1");
        }
        match &self.prior {
            PriorConfig::External { command } => {
                if command.is_empty() {
                    return invalid("prior.command must not be empty");
                }
                if self.truth.is_none() {
                    return invalid("truth is required with an external prior");
                }
            }
            _ => {
                self.build_prior()?;
            }
        }
        Ok(())
    }

    /// The desk-scale test bed: a 32x32 Gaussian prior with a sinusoidal mean and variance 0.04.
    pub fn gaussian_testbed(task: Task, rho: f64) -> Self {
        ExperimentConfig {
            task,
            shape: d_shape(),
            operator: None,
            corruption: CorruptionConfig {
                sigma: 0.05,
                rho,
                xi: -1.0,
            },
            solver: SolverSection::default(),
            methods: d_methods(),
            prior: PriorConfig::Gaussian {
                mean: ValueSpec::Sinusoid(Sinusoid {
                    amplitude: 0.4,
                    frequency: 0.37,
                    phase: 0.0,
                }),
                var: ValueSpec::Constant(0.04),
            },
            truth: None,
            repeats: 1,
            seed: 0,
            output_dir: d_output(),
            record_wall_time: false,
            save_tensors: true,
            pgm_previews: false,
            threads: None,
        }
    }
}
