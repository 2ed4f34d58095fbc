//! Experiment configuration (TOML, `version = 1`) and its validation.

use std::fmt;
use std::path::{Path, PathBuf};

use bayesoed::models::{Rect, TimeGrid, VelocitySpec, OBSTACLES};
use bayesoed::oed::{CriterionKind, PenaltyKind, MAX_BRUTE_FORCE_SENSORS};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TwinData,
    Assimilate,
    OedSolve,
    BruteForce,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TwinData => "twin-data",
            ExperimentKind::Assimilate => "assimilate",
            ExperimentKind::OedSolve => "oed-solve",
            ExperimentKind::BruteForce => "brute-force",
        }
    }

    fn needs_oed(self) -> bool {
        matches!(self, ExperimentKind::OedSolve | ExperimentKind::BruteForce)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: Option<ModelSpec>,
    pub prior: Option<PriorSpec>,
    pub observation: Option<ObservationSpec>,
    pub noise: Option<NoiseSpec>,
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub truth: TruthSpec,
    #[serde(default)]
    pub assimilation: AssimilationSpec,
    pub oed: Option<OedSpec>,
    /// Directory of the config file; relative file references resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    ToyLinear {
        nx: usize,
        dt: f64,
        /// Seed of the random system matrix; drawn from the `model` stream
        /// when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    AdvectionDiffusion {
        nx: usize,
        ny: usize,
        kappa: f64,
        dt: f64,
        #[serde(default = "default_velocity")]
        velocity: VelocitySpec,
    },
}

fn default_velocity() -> VelocitySpec {
    VelocitySpec::Recirculating { magnitude: 1.0 }
}

impl ModelSpec {
    pub fn dt(&self) -> f64 {
        match self {
            ModelSpec::ToyLinear { dt, .. } | ModelSpec::AdvectionDiffusion { dt, .. } => *dt,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::ToyLinear { nx, .. } => *nx,
            ModelSpec::AdvectionDiffusion { nx, ny, .. } => nx * ny,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorSpec {
    Isotropic {
        variance: f64,
        #[serde(default)]
        mean: f64,
    },
    /// `scale · (L + delta·I)⁻²` on the model grid.
    Bilaplacian {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default)]
        mean: f64,
    },
}

fn default_delta() -> f64 {
    0.5
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationSpec {
    /// Every state entry observed.
    Identity,
    /// Selected state entries.
    Indices { indices: Vec<usize> },
    /// Bilinear interpolation at points of the unit square.
    Points { coordinates: Vec<[f64; 2]> },
    /// `count` points of a uniform lattice avoiding the obstacles.
    Lattice { count: usize },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub variance: Option<f64>,
    /// Whitespace-separated dense covariance matrix.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub obs_times: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TruthSpec {
    /// Draw from the prior using the `sampling` stream.
    #[default]
    PriorSample,
    /// `exp(−|x − c|² / (2 w²))` on the model grid.
    Blob { center: [f64; 2], width: f64 },
    Constant { value: f64 },
}

/// MAP solver options; unset options take the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssimilationSpec {
    pub max_iter: Option<usize>,
    /// Relative to `max(1, |initial gradient|)`.
    pub grad_tol: Option<f64>,
    pub memory: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OedSpec {
    pub criterion: CriterionKind,
    /// Whitespace-separated goal operator `P` for posterior criteria.
    #[serde(default)]
    pub goal_file: Option<PathBuf>,
    #[serde(default)]
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Also enumerate every binary design and report the full table.
    #[serde(default)]
    pub brute_force_compare: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec {
            kind: PenaltyKind::L1,
            alpha: 0.0,
            budget: None,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Relaxed,
    #[default]
    Stochastic,
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingSpec {
    #[default]
    ThresholdHalf,
    TopK,
}

/// Solver choice plus options; unset options take the library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub kind: SolverKind,
    pub eta0: Option<f64>,
    pub tau: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    /// Relaxed: uniform initial weight.
    pub init: Option<f64>,
    pub rounding: Option<RoundingSpec>,
    pub rounding_k: Option<usize>,
    /// Stochastic: uniform initial activation probability.
    pub theta0: Option<f64>,
    pub nens: Option<usize>,
    pub m: Option<usize>,
    pub baseline_batch: Option<usize>,
    pub theta_bound: Option<f64>,
    /// Threads for utility evaluation; `0` or unset lets the runtime decide.
    pub workers: Option<usize>,
}

/// One validation failure, addressed by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Parses a config file. Syntax and type errors come back as diagnostics.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
    let mut cfg = parse_config(&text).map_err(LoadError::Invalid)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    toml::from_str(text).map_err(|e| {
        let span = e
            .span()
            .map(|s| format!("line {}", text[..s.start].lines().count().max(1)))
            .unwrap_or_else(|| "config".to_owned());
        vec![Diagnostic::new(span, e.message().to_owned())]
    })
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Invalid(Vec<Diagnostic>),
}

impl ExperimentConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Number of candidate sensors implied by the observation block.
    pub fn n_obs(&self) -> Option<usize> {
        let model = self.model.as_ref()?;
        Some(match self.observation.as_ref()? {
            ObservationSpec::Identity => model.state_dim(),
            ObservationSpec::Indices { indices } => indices.len(),
            ObservationSpec::Points { coordinates } => coordinates.len(),
            ObservationSpec::Lattice { count } => *count,
        })
    }

    /// Every violation for running `kind`; empty when the config is usable.
    pub fn validate(&self, kind: ExperimentKind) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.version != CONFIG_VERSION {
            out.push(Diagnostic::new(
                "version",
                format!("unsupported config version {}, expected {CONFIG_VERSION}", self.version),
            ));
        }
        for (name, present) in [
            ("model", self.model.is_some()),
            ("prior", self.prior.is_some()),
            ("observation", self.observation.is_some()),
            ("noise", self.noise.is_some()),
            ("window", self.window.is_some()),
        ] {
            if !present {
                out.push(Diagnostic::new(name, format!("missing required `[{name}]` block")));
            }
        }
        if kind.needs_oed() && self.oed.is_none() {
            out.push(Diagnostic::new("oed", "missing required `[oed]` block"));
        }
        if let Some(m) = &self.model {
            self.check_model(m, &mut out);
        }
        if let Some(p) = &self.prior {
            check_prior(p, &mut out);
        }
        if let (Some(o), Some(m)) = (&self.observation, &self.model) {
            check_observation(o, m, &mut out);
        }
        if let Some(n) = &self.noise {
            self.check_noise(n, kind, &mut out);
        }
        if let Some(w) = &self.window {
            self.check_window(w, &mut out);
        }
        self.check_truth(&mut out);
        check_assimilation(&self.assimilation, &mut out);
        if let Some(o) = &self.oed {
            if kind.needs_oed() || self.experiment.is_some_and(|e| e.needs_oed()) {
                self.check_oed(o, kind, &mut out);
            }
        }
        out
    }

    fn check_model(&self, m: &ModelSpec, out: &mut Vec<Diagnostic>) {
        match m {
            ModelSpec::ToyLinear { nx, dt, .. } => {
                if *nx == 0 {
                    out.push(Diagnostic::new("model.nx", "must be at least 1"));
                }
                positive("model.dt", *dt, "time step", out);
            }
            ModelSpec::AdvectionDiffusion {
                nx,
                ny,
                kappa,
                dt,
                velocity,
            } => {
                for (path, v) in [("model.nx", nx), ("model.ny", ny)] {
                    if *v < 4 {
                        out.push(Diagnostic::new(path, format!("grid needs at least 4 cells per side, got {v}")));
                    }
                }
                positive("model.kappa", *kappa, "diffusivity", out);
                positive("model.dt", *dt, "time step", out);
                if let VelocitySpec::Recirculating { magnitude } = velocity {
                    if !magnitude.is_finite() {
                        out.push(Diagnostic::new("model.velocity.magnitude", "must be finite"));
                    }
                }
            }
        }
    }

    fn check_noise(&self, n: &NoiseSpec, kind: ExperimentKind, out: &mut Vec<Diagnostic>) {
        match (n.variance, &n.file) {
            (Some(_), Some(_)) => out.push(Diagnostic::new("noise", "set either `variance` or `file`, not both")),
            (None, None) => out.push(Diagnostic::new("noise", "set `variance` or `file`")),
            (Some(v), None) => {
                if !(v >= 0.0) || !v.is_finite() {
                    out.push(Diagnostic::new("noise.variance", format!("must be finite and >= 0, got {v}")));
                } else if v == 0.0 && kind != ExperimentKind::TwinData {
                    out.push(Diagnostic::new(
                        "noise.variance",
                        "zero variance is only usable for twin-data; inversion and OED need a positive definite noise covariance",
                    ));
                }
            }
            (None, Some(f)) => {
                let path = self.resolve(f);
                match crate::output::read_matrix(&path) {
                    Err(e) => out.push(Diagnostic::new("noise.file", format!("cannot read {}: {e}", path.display()))),
                    Ok(m) => {
                        if let Some(n_obs) = self.n_obs() {
                            if m.nrows() != n_obs || m.ncols() != n_obs {
                                out.push(Diagnostic::new(
                                    "noise.file",
                                    format!("expected a {n_obs}x{n_obs} matrix, got {}x{}", m.nrows(), m.ncols()),
                                ));
                            }
                        }
                    }
                }
            }
        }
    }

    fn check_window(&self, w: &WindowSpec, out: &mut Vec<Diagnostic>) {
        positive("window.dt", w.dt, "time step", out);
        if w.n_steps == 0 {
            out.push(Diagnostic::new("window.n_steps", "must be at least 1"));
        }
        if let Some(m) = &self.model {
            if w.dt > 0.0 && (w.dt - m.dt()).abs() > 1e-12 * m.dt().abs().max(1.0) {
                out.push(Diagnostic::new(
                    "window.dt",
                    format!("window step {} differs from model step {}", w.dt, m.dt()),
                ));
            }
        }
        if w.obs_times.is_empty() {
            out.push(Diagnostic::new("window.obs_times", "need at least one observation time"));
        }
        if let Ok(grid) = TimeGrid::new(w.t0, w.dt, w.n_steps) {
            for (i, &t) in w.obs_times.iter().enumerate() {
                if grid.lattice_index(t).is_none() {
                    out.push(Diagnostic::new(
                        format!("window.obs_times[{i}]"),
                        format!("time {t} is not on the lattice t0 + k*dt, k = 0..={}", w.n_steps),
                    ));
                }
            }
            let mut seen = Vec::new();
            for (i, &t) in w.obs_times.iter().enumerate() {
                if let Some(k) = grid.lattice_index(t) {
                    if seen.contains(&k) {
                        out.push(Diagnostic::new(format!("window.obs_times[{i}]"), format!("time {t} listed twice")));
                    }
                    seen.push(k);
                }
            }
        }
    }

    fn check_truth(&self, out: &mut Vec<Diagnostic>) {
        if let TruthSpec::Blob { width, center } = &self.truth {
            positive("truth.width", *width, "blob width", out);
            if !matches!(self.model, Some(ModelSpec::AdvectionDiffusion { .. }) | None) {
                out.push(Diagnostic::new("truth.kind", "blob truth needs a gridded (advection-diffusion) model"));
            }
            if center.iter().any(|c| !c.is_finite()) {
                out.push(Diagnostic::new("truth.center", "must be finite"));
            }
        }
    }

    fn check_oed(&self, o: &OedSpec, kind: ExperimentKind, out: &mut Vec<Diagnostic>) {
        let n_s = self.n_obs();
        let p = &o.penalty;
        if !(p.alpha >= 0.0) || !p.alpha.is_finite() {
            out.push(Diagnostic::new("oed.penalty.alpha", format!("must be finite and >= 0, got {}", p.alpha)));
        }
        if let (Some(k), Some(n)) = (p.budget, n_s) {
            if k > n {
                out.push(Diagnostic::new("oed.penalty.budget", format!("budget {k} exceeds {n} candidate sensors")));
            }
        }
        if p.kind == PenaltyKind::BudgetEquality && p.budget.is_none() {
            out.push(Diagnostic::new("oed.penalty.budget", "budget-equality needs a budget"));
        }
        if let Some(eps) = p.epsilon {
            if !(eps > 0.0) {
                out.push(Diagnostic::new("oed.penalty.epsilon", format!("smoothing must be > 0, got {eps}")));
            }
        }
        let s = &o.solver;
        let solver = if kind == ExperimentKind::BruteForce { SolverKind::BruteForce } else { s.kind };
        if solver == SolverKind::Relaxed && p.kind == PenaltyKind::L0 {
            out.push(Diagnostic::new(
                "oed.penalty.kind",
                "l0 cannot be used with the relaxed solver: the relaxation approach requires the OED objective function to be differentiable",
            ));
        }
        if let Some(n) = n_s {
            if (solver == SolverKind::BruteForce || o.brute_force_compare) && n > MAX_BRUTE_FORCE_SENSORS {
                out.push(Diagnostic::new(
                    "oed.solver",
                    format!("brute force is limited to {MAX_BRUTE_FORCE_SENSORS} sensors, got {n}"),
                ));
            }
        }
        if let Some(eta) = s.eta0 {
            if !(eta >= 0.0) {
                out.push(Diagnostic::new("oed.solver.eta0", format!("must be >= 0, got {eta}")));
            }
        }
        if let Some(tau) = s.tau {
            if !(tau > 0.0) {
                out.push(Diagnostic::new("oed.solver.tau", format!("must be > 0, got {tau}")));
            }
        }
        for (path, v) in [("oed.solver.nens", s.nens), ("oed.solver.m", s.m), ("oed.solver.baseline_batch", s.baseline_batch)] {
            if v == Some(0) {
                out.push(Diagnostic::new(path, "must be at least 1"));
            }
        }
        if let Some(eps) = s.theta_bound {
            if !(eps > 0.0 && eps < 0.5) {
                out.push(Diagnostic::new("oed.solver.theta_bound", format!("must lie in (0, 0.5), got {eps}")));
            }
        }
        if let Some(t) = s.theta0 {
            if !(t > 0.0 && t < 1.0) {
                out.push(Diagnostic::new("oed.solver.theta0", format!("must lie in (0, 1), got {t}")));
            }
        }
        if let Some(t) = s.init {
            if !(0.0..=1.0).contains(&t) {
                out.push(Diagnostic::new("oed.solver.init", format!("must lie in [0, 1], got {t}")));
            }
        }
        if s.rounding == Some(RoundingSpec::TopK) {
            match (s.rounding_k, n_s) {
                (None, _) => out.push(Diagnostic::new("oed.solver.rounding_k", "top-k rounding needs `rounding_k`")),
                (Some(k), Some(n)) if k > n => {
                    out.push(Diagnostic::new("oed.solver.rounding_k", format!("{k} exceeds {n} candidate sensors")))
                }
                _ => {}
            }
        }
        if let Some(f) = &o.goal_file {
            let path = self.resolve(f);
            match crate::output::read_matrix(&path) {
                Err(e) => out.push(Diagnostic::new("oed.goal_file", format!("cannot read {}: {e}", path.display()))),
                Ok(m) => {
                    if let Some(model) = &self.model {
                        if m.ncols() != model.state_dim() {
                            out.push(Diagnostic::new(
                                "oed.goal_file",
                                format!("goal operator needs {} columns, got {}", model.state_dim(), m.ncols()),
                            ));
                        }
                    }
                }
            }
        }
    }
}

fn check_assimilation(a: &AssimilationSpec, out: &mut Vec<Diagnostic>) {
    if a.max_iter == Some(0) {
        out.push(Diagnostic::new("assimilation.max_iter", "must be at least 1"));
    }
    if a.memory == Some(0) {
        out.push(Diagnostic::new("assimilation.memory", "must be at least 1"));
    }
    if let Some(t) = a.grad_tol {
        positive("assimilation.grad_tol", t, "gradient tolerance", out);
    }
}

fn positive(path: &str, v: f64, what: &str, out: &mut Vec<Diagnostic>) {
    if !(v > 0.0) || !v.is_finite() {
        out.push(Diagnostic::new(path, format!("{what} must be positive, got {v}")));
    }
}

fn check_prior(p: &PriorSpec, out: &mut Vec<Diagnostic>) {
    match p {
        PriorSpec::Isotropic { variance, .. } => positive("prior.variance", *variance, "variance", out),
        PriorSpec::Bilaplacian { delta, scale, .. } => {
            positive("prior.delta", *delta, "shift", out);
            positive("prior.scale", *scale, "scale", out);
        }
    }
}

fn in_obstacle(x: f64, y: f64) -> Option<&'static Rect> {
    OBSTACLES.iter().find(|r| r.contains(x, y))
}

fn check_observation(o: &ObservationSpec, m: &ModelSpec, out: &mut Vec<Diagnostic>) {
    let gridded = matches!(m, ModelSpec::AdvectionDiffusion { .. });
    match o {
        ObservationSpec::Identity => {}
        ObservationSpec::Indices { indices } => {
            if indices.is_empty() {
                out.push(Diagnostic::new("observation.indices", "need at least one index"));
            }
            for (i, &k) in indices.iter().enumerate() {
                if k >= m.state_dim() {
                    out.push(Diagnostic::new(
                        format!("observation.indices[{i}]"),
                        format!("index {k} out of range for {} states", m.state_dim()),
                    ));
                }
            }
        }
        ObservationSpec::Points { coordinates } => {
            if !gridded {
                out.push(Diagnostic::new("observation.kind", "point sensors need a gridded (advection-diffusion) model"));
            }
            if coordinates.is_empty() {
                out.push(Diagnostic::new("observation.coordinates", "need at least one point"));
            }
            for (i, &[x, y]) in coordinates.iter().enumerate() {
                if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                    out.push(Diagnostic::new(
                        format!("observation.coordinates[{i}]"),
                        format!("point ({x}, {y}) lies outside the unit square"),
                    ));
                } else if in_obstacle(x, y).is_some() {
                    out.push(Diagnostic::new(
                        format!("observation.coordinates[{i}]"),
                        format!("point ({x}, {y}) lies inside an obstacle"),
                    ));
                }
            }
        }
        ObservationSpec::Lattice { count } => {
            if !gridded {
                out.push(Diagnostic::new("observation.kind", "lattice sensors need a gridded (advection-diffusion) model"));
            }
            if *count == 0 {
                out.push(Diagnostic::new("observation.count", "need at least one sensor"));
            }
        }
    }
}
