//! Experiment configuration: TOML schema and validation into library types.

use std::path::PathBuf;

use memwave::delay::{DelayKernel, KernelTarget};
use memwave::operator::{build_reduction, BlockOperator, DampingSpec, SpectralOperator};
use memwave::sim::{
    DiffusionSpec, InitialData, JumpDirection, JumpSpec, NoiseSpec, NormLaw, Scheme, SimOptions,
};
use memwave::C64;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorConfig,
    #[serde(default)]
    pub delay: DelayConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub eigenvalues: EigenRule,
    pub damping: DampingConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum EigenRule {
    /// `λ_n = (nπ)²`, sine basis on `(0, 1)`.
    #[serde(rename = "dirichlet_laplacian_1d")]
    DirichletLaplacian1d { n_modes: usize },
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DampingConfig {
    /// `B = value·I`; dissipative damping has `value ≤ 0`.
    Scalar { value: f64 },
    Diagonal {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
    Dense {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayConfig {
    None {
        #[serde(default = "one")]
        horizon: f64,
    },
    /// `c₁∂_ξu(t−1) + c₂u'(t−1)` on Dirichlet modes.
    WavePoint {
        c1: f64,
        #[serde(default)]
        c2: f64,
    },
    /// Memory operators `M` (on `u`) and `N` (on `u'`) as scalar multiples
    /// of the identity per atom or density piece.
    Kernel {
        horizon: f64,
        #[serde(default)]
        m: Vec<PieceConfig>,
        #[serde(default)]
        n: Vec<PieceConfig>,
    },
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig::None { horizon: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceConfig {
    Atom { theta: f64, scale: f64 },
    Density { start: f64, end: f64, scale: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub wiener: WienerConfig,
    #[serde(default)]
    pub jumps: Option<JumpConfig>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            wiener: WienerConfig::default(),
            jumps: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WienerConfig {
    /// No Gaussian part; requires `noise.jumps`.
    None {
        #[serde(default = "one_usize")]
        dim: usize,
    },
    Variances { values: Vec<f64> },
    /// `q_j = q0/j²`, `j = 1..=dim` (default `dim` = number of modes).
    Profile { q0: f64, dim: Option<usize> },
}

impl Default for WienerConfig {
    fn default() -> Self {
        WienerConfig::Variances { values: vec![1.0] }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub rate: f64,
    pub law: LawConfig,
    /// Unit direction in noise space; isotropic when absent.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default)]
    pub truncation: f64,
    #[serde(default)]
    pub compensated: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Constant { size: f64 },
    Uniform { lo: f64, hi: f64 },
    Exponential { rate: f64 },
    Pareto { scale: f64, tail_index: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionConfig {
    #[default]
    Zero,
    /// `L` given as a full `2N × m` matrix, or `scale` on the velocity rows
    /// (`L[N+j, j] = scale`).
    Additive {
        #[serde(default)]
        scale: Option<f64>,
        #[serde(default)]
        matrix: Option<Vec<Vec<f64>>>,
    },
    /// `βu(t−1)/(1+|u|)` on the Dirichlet sine basis.
    Wave { beta: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(rename = "T", default = "ten")]
    pub horizon: f64,
    /// Default `r/128`.
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default = "hundred")]
    pub paths: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default = "sixteen")]
    pub record_every: usize,
    /// Sine coefficients of `u(0)`; zero velocity, constant history.
    #[serde(default = "unit_first_mode")]
    pub initial: Vec<f64>,
    /// Second initial condition for paired-path and uniqueness runs.
    #[serde(default)]
    pub initial_alt: Option<Vec<f64>>,
    #[serde(default)]
    pub richardson: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        toml::from_str("").expect("all simulation fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    #[default]
    DriftImplicit,
    Explicit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub b_cutoff: Option<f64>,
    #[serde(default = "b_points")]
    pub b_points: usize,
    #[serde(default = "a_grid")]
    pub a_grid: Vec<f64>,
    /// Branch parameter of the two-branch resolvent bound.
    #[serde(default = "half")]
    pub c: f64,
    #[serde(default = "dictionary")]
    pub dictionary_size: usize,
    #[serde(default = "checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "ten")]
    pub offset: f64,
    #[serde(default)]
    pub block_paths: Option<u64>,
    #[serde(default = "twenty")]
    pub green_horizon: f64,
    /// Default `r/64`.
    #[serde(default)]
    pub green_step: Option<f64>,
    #[serde(default)]
    pub decay_source: DecaySourceConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        toml::from_str("").expect("all analysis fields have defaults")
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DecaySourceConfig {
    /// Example constants when available, else the Lyapunov envelope
    /// (no delay, scalar damping), else a Green-operator fit.
    #[default]
    Auto,
    Example,
    Lyapunov,
    GreenFit,
    User { m: f64, gamma: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "out_dir")]
    pub directory: PathBuf,
    #[serde(default = "formats")]
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: out_dir(),
            formats: formats(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// `"lyapunov"` perturbs the Lyapunov operator before the residual check.
    #[serde(default)]
    pub fault: Option<String>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn ten() -> f64 {
    10.0
}
fn twenty() -> f64 {
    20.0
}
fn half() -> f64 {
    0.5
}
fn hundred() -> u64 {
    100
}
fn sixteen() -> usize {
    16
}
fn unit_first_mode() -> Vec<f64> {
    vec![1.0]
}
fn b_points() -> usize {
    2000
}
fn a_grid() -> Vec<f64> {
    (0..=20).map(|k| if k == 0 { 0.0 } else { -(k as f64) / 20.0 }).collect()
}
fn dictionary() -> usize {
    256
}
fn checkpoints() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn formats() -> Vec<String> {
    vec!["csv".into(), "txt".into()]
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<u64>,
    pub modes: Option<usize>,
}

/// A validated experiment: library objects built from the configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub raw: String,
    pub a: SpectralOperator,
    pub damping: DampingSpec,
    pub op: BlockOperator,
    pub kernel: DelayKernel,
    pub noise: NoiseSpec,
    pub diffusion: DiffusionSpec,
    pub step: f64,
}

fn invalid(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Validation {
        path: path.to_string(),
        message: msg.into(),
    }
}

fn lib(path: &str) -> impl Fn(memwave::Error) -> CliError + '_ {
    move |e| invalid(path, e.to_string())
}

pub fn parse(raw: &str) -> Result<ExperimentConfig, CliError> {
    if raw.lines().all(|l| l.trim().is_empty() || l.trim_start().starts_with('#')) {
        return Err(CliError::Usage("the configuration file is empty".into()));
    }
    toml::from_str(raw).map_err(|e| CliError::Validation {
        path: "config".into(),
        message: e.to_string().trim_end().to_string(),
    })
}

impl Experiment {
    pub fn load(raw: String, overrides: Overrides) -> Result<Self, CliError> {
        let mut config = parse(&raw)?;
        if let Some(s) = overrides.seed {
            config.simulation.master_seed = s;
        }
        if let Some(p) = overrides.paths {
            config.simulation.paths = p;
        }
        if let Some(n) = overrides.modes {
            match &mut config.operator.eigenvalues {
                EigenRule::DirichletLaplacian1d { n_modes } => *n_modes = n,
                EigenRule::Explicit { values } => {
                    if n > values.len() {
                        return Err(invalid(
                            "operator.eigenvalues",
                            format!("--modes {n} exceeds the {} listed eigenvalues", values.len()),
                        ));
                    }
                    values.truncate(n);
                }
            }
        }
        Self::build(config, raw)
    }

    fn build(config: ExperimentConfig, raw: String) -> Result<Self, CliError> {
        let a = match &config.operator.eigenvalues {
            EigenRule::DirichletLaplacian1d { n_modes } => {
                if *n_modes == 0 {
                    return Err(invalid("operator.eigenvalues.n_modes", "must be at least 1"));
                }
                SpectralOperator::dirichlet_laplacian(*n_modes)
            }
            EigenRule::Explicit { values } => {
                SpectralOperator::new(values.clone(), "explicit").map_err(lib("operator.eigenvalues"))?
            }
        };
        let n = a.n_modes();
        let damping = build_damping(&config.operator.damping, n)?;
        damping.check_dim(n).map_err(lib("operator.damping"))?;
        if !damping.is_dissipative(n) {
            return Err(invalid(
                "operator.damping",
                format!(
                    "B must be dissipative (Re<Bv,v> <= 0); max real part is {}",
                    damping.max_real_part(n)
                ),
            ));
        }
        let op = build_reduction(&a, &damping).map_err(lib("operator"))?;
        let kernel = build_kernel(&config.delay, &a)?;
        let noise = build_noise(&config.noise, n)?;
        let diffusion = build_diffusion(&config.diffusion, &a, noise.noise_dim())?;
        let sim = &config.simulation;
        if !(sim.horizon > 0.0 && sim.horizon.is_finite()) {
            return Err(invalid("simulation.T", "must be positive and finite"));
        }
        let step = sim.h.unwrap_or(kernel.horizon() / 128.0);
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid("simulation.h", "must be positive and finite"));
        }
        if sim.paths == 0 {
            return Err(invalid("simulation.paths", "must be at least 1"));
        }
        if sim.initial.len() > n {
            return Err(invalid("simulation.initial", format!("has more than {n} coefficients")));
        }
        if sim.initial_alt.as_ref().is_some_and(|v| v.len() > n) {
            return Err(invalid("simulation.initial_alt", format!("has more than {n} coefficients")));
        }
        let an = &config.analysis;
        if !(an.c > 0.0 && an.c < 1.0) {
            return Err(invalid("analysis.c", "must lie in (0, 1)"));
        }
        if an.a_grid.is_empty() || an.a_grid.iter().any(|x| !x.is_finite()) {
            return Err(invalid("analysis.a_grid", "must be a nonempty list of finite numbers"));
        }
        if an.dictionary_size == 0 {
            return Err(invalid("analysis.dictionary_size", "must be at least 1"));
        }
        if an.checkpoints.windows(2).any(|w| w[1] <= w[0]) || an.checkpoints.iter().any(|t| *t < 0.0) {
            return Err(invalid("analysis.checkpoints", "must be nonnegative and strictly increasing"));
        }
        for f in &config.output.formats {
            if f != "csv" && f != "txt" {
                return Err(invalid("output.formats", format!("unknown format {f:?} (expected \"csv\" or \"txt\")")));
            }
        }
        if let Some(f) = &config.verify.fault {
            if f != "lyapunov" {
                return Err(invalid("verify.fault", format!("unknown fault {f:?} (expected \"lyapunov\")")));
            }
        }
        Ok(Experiment {
            config,
            raw,
            a,
            damping,
            op,
            kernel,
            noise,
            diffusion,
            step,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.a.n_modes()
    }

    pub fn delay(&self) -> f64 {
        self.kernel.horizon()
    }

    pub fn seed(&self) -> u64 {
        self.config.simulation.master_seed
    }

    pub fn paths(&self) -> u64 {
        self.config.simulation.paths
    }

    pub fn scheme(&self) -> Scheme {
        match self.config.simulation.scheme {
            SchemeConfig::DriftImplicit => Scheme::DriftImplicit,
            SchemeConfig::Explicit => Scheme::Explicit,
        }
    }

    pub fn sim_options(&self, horizon: f64) -> SimOptions {
        SimOptions::new(horizon, self.step).scheme(self.scheme())
    }

    /// Horizon rounded up to a whole number of steps.
    pub fn grid_horizon(&self, t: f64) -> f64 {
        (t / self.step - 1e-9).ceil().max(1.0) * self.step
    }

    pub fn initial(&self, coeffs: &[f64]) -> Result<InitialData, CliError> {
        let sqrt = self.a.sqrt_eigenvalues();
        let n = self.n_modes();
        let mut y = DVector::zeros(2 * n);
        for (i, c) in coeffs.iter().enumerate() {
            y[i] = sqrt[i] * c;
        }
        InitialData::constant(y, self.delay()).map_err(lib("simulation.initial"))
    }

    /// `α` of the damped wave example when `B = −2αI` with a point-delay
    /// kernel on Dirichlet modes.
    pub fn wave_parameters(&self) -> Option<(f64, f64, f64)> {
        match (&self.config.operator.damping, &self.config.delay, &self.config.operator.eigenvalues) {
            (DampingConfig::Scalar { value }, DelayConfig::WavePoint { c1, c2 }, EigenRule::DirichletLaplacian1d { .. })
                if *value < 0.0 =>
            {
                Some((-value / 2.0, *c1, *c2))
            }
            _ => None,
        }
    }

    pub fn green_step(&self) -> f64 {
        self.config.analysis.green_step.unwrap_or(self.delay() / 64.0)
    }

    /// Human-readable grid summary for output headers.
    pub fn grid_summary(&self) -> String {
        let s = &self.config.simulation;
        let an = &self.config.analysis;
        format!(
            "T={} h={} r={} paths={} b_points={} b_cutoff={} a_grid=[{}] checkpoints=[{}] offset={}",
            s.horizon,
            self.step,
            self.delay(),
            s.paths,
            an.b_points,
            an.b_cutoff.map_or("default".to_string(), |c| c.to_string()),
            an.a_grid.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            an.checkpoints.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            an.offset
        )
    }
}

fn build_damping(cfg: &DampingConfig, n: usize) -> Result<DampingSpec, CliError> {
    let path = "operator.damping";
    match cfg {
        DampingConfig::Scalar { value } => {
            if !value.is_finite() {
                return Err(invalid(path, "value must be finite"));
            }
            Ok(DampingSpec::Scalar(*value))
        }
        DampingConfig::Diagonal { re, im } => {
            if re.len() != n || !(im.is_empty() || im.len() == n) {
                return Err(invalid(path, format!("diagonal needs {n} entries")));
            }
            Ok(DampingSpec::Diagonal(
                (0..n).map(|i| C64::new(re[i], im.get(i).copied().unwrap_or(0.0))).collect(),
            ))
        }
        DampingConfig::Dense { re, im } => {
            let ok = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
            if !ok(re) || !(im.is_empty() || ok(im)) {
                return Err(invalid(path, format!("dense damping needs {n}x{n} matrices")));
            }
            Ok(DampingSpec::Dense(DMatrix::from_fn(n, n, |i, j| {
                C64::new(re[i][j], im.get(i).map_or(0.0, |r| r[j]))
            })))
        }
    }
}

fn build_kernel(cfg: &DelayConfig, a: &SpectralOperator) -> Result<DelayKernel, CliError> {
    let n = a.n_modes();
    match cfg {
        DelayConfig::None { horizon } => {
            DelayKernel::new(KernelTarget::F, *horizon, 2 * n).map_err(lib("delay.horizon"))
        }
        DelayConfig::WavePoint { c1, c2 } => {
            if a.basis_label() != SpectralOperator::dirichlet_laplacian(1).basis_label() {
                return Err(invalid(
                    "delay.kind",
                    "wave_point requires operator.eigenvalues.rule = \"dirichlet_laplacian_1d\"",
                ));
            }
            DelayKernel::wave_point_delay(a, *c1, *c2).map_err(lib("delay"))
        }
        DelayConfig::Kernel { horizon, m, n: nn } => {
            let build = |target, pieces: &[PieceConfig], path: &'static str| -> Result<DelayKernel, CliError> {
                let mut k = DelayKernel::new(target, *horizon, n).map_err(lib("delay.horizon"))?;
                for p in pieces {
                    k = match *p {
                        PieceConfig::Atom { theta, scale } => k.with_atom(theta, DMatrix::identity(n, n) * scale),
                        PieceConfig::Density { start, end, scale } => {
                            k.with_density(start, end, DMatrix::identity(n, n) * scale)
                        }
                    }
                    .map_err(lib(path))?;
                }
                Ok(k)
            };
            let mk = build(KernelTarget::M, m, "delay.m")?;
            let nk = build(KernelTarget::N, nn, "delay.n")?;
            DelayKernel::combine(Some(&mk), Some(&nk), &a.sqrt_eigenvalues()).map_err(lib("delay"))
        }
    }
}

fn build_noise(cfg: &NoiseConfig, n: usize) -> Result<NoiseSpec, CliError> {
    let base = match &cfg.wiener {
        WienerConfig::None { dim } => {
            let jump = cfg
                .jumps
                .as_ref()
                .ok_or_else(|| invalid("noise.wiener", "kind = \"none\" requires noise.jumps"))?;
            return NoiseSpec::pure_jump(*dim, build_jump(jump)?).map_err(lib("noise.jumps"));
        }
        WienerConfig::Variances { values } => NoiseSpec::wiener(values.clone()).map_err(lib("noise.wiener"))?,
        WienerConfig::Profile { q0, dim } => {
            NoiseSpec::decaying_profile(*q0, dim.unwrap_or(n)).map_err(lib("noise.wiener"))?
        }
    };
    match &cfg.jumps {
        Some(j) => base.with_jumps(build_jump(j)?).map_err(lib("noise.jumps")),
        None => Ok(base),
    }
}

fn build_jump(cfg: &JumpConfig) -> Result<JumpSpec, CliError> {
    let law = match cfg.law {
        LawConfig::Constant { size } => NormLaw::Constant(size),
        LawConfig::Uniform { lo, hi } => NormLaw::Uniform { lo, hi },
        LawConfig::Exponential { rate } => NormLaw::Exponential { rate },
        LawConfig::Pareto { scale, tail_index } => NormLaw::Pareto { scale, tail_index },
    };
    let mut j = JumpSpec::new(cfg.rate, law)
        .compensated(cfg.compensated)
        .with_truncation(cfg.truncation);
    if let Some(d) = &cfg.direction {
        j = j.with_direction(JumpDirection::Fixed(DVector::from_vec(d.clone())));
    }
    Ok(j)
}

fn build_diffusion(cfg: &DiffusionConfig, a: &SpectralOperator, noise_dim: usize) -> Result<DiffusionSpec, CliError> {
    let n = a.n_modes();
    match cfg {
        DiffusionConfig::Zero => Ok(DiffusionSpec::zero(2 * n, noise_dim)),
        DiffusionConfig::Additive { scale, matrix } => match (scale, matrix) {
            (Some(s), None) => Ok(DiffusionSpec::Additive(DMatrix::from_fn(2 * n, noise_dim, |i, j| {
                if i >= n && i - n == j {
                    *s
                } else {
                    0.0
                }
            }))),
            (None, Some(m)) => {
                if m.len() != 2 * n || m.iter().any(|r| r.len() != noise_dim) {
                    return Err(invalid(
                        "diffusion.matrix",
                        format!("must be {}x{noise_dim} (state x noise dimension)", 2 * n),
                    ));
                }
                Ok(DiffusionSpec::Additive(DMatrix::from_fn(2 * n, noise_dim, |i, j| m[i][j])))
            }
            _ => Err(invalid("diffusion", "additive diffusion needs exactly one of `scale` or `matrix`")),
        },
        DiffusionConfig::Wave { beta } => {
            if noise_dim != 1 {
                return Err(invalid("diffusion.kind", "wave diffusion is driven by a scalar noise"));
            }
            DiffusionSpec::wave_example(a, *beta).map_err(lib("diffusion"))
        }
    }
}
