//! Experiment configuration: parsing, validation and sweep expansion.

use std::fmt;
use std::path::PathBuf;

use hipinn::hitrain::{derive_seed, AdamConfig, HierarchySchedule, LevelSpec, WeightingConfig};
use hipinn::nets::{FourierEmbeddingSpec, FourierNetSpec, MlpSpec, NetworkSpec};
use hipinn::problems::{problem_by_name, BoundaryCounts, ProblemSpec, SampleCounts};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One problem found while checking a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    /// Malformed text or a field of the wrong type.
    Syntax(String),
    /// Every violation found in a well-formed file.
    Invalid(Vec<Violation>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Syntax(m) => write!(f, "{m}"),
            ConfigError::Invalid(vs) => {
                writeln!(f, "{} violation(s):", vs.len())?;
                for v in vs {
                    writeln!(f, "  {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}
fn default_stride() -> usize {
    100
}
fn default_grid() -> usize {
    201
}
fn default_rel_tol() -> f64 {
    1e-10
}
fn default_head() -> usize {
    200
}
fn default_true() -> bool {
    true
}
fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Master seed; run seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: usize,
    #[serde(default)]
    pub resample: bool,
    /// Parallel runs; the `HIPINN_WORKERS` variable overrides it.
    #[serde(default)]
    pub workers: Option<usize>,
    pub problem: ProblemConfig,
    pub samples: SamplesConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    /// Defaults for levels without their own `optimizer` table.
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Defaults for levels without their own `weighting` table.
    #[serde(default)]
    pub weighting: WeightingConfig,
    pub schedule: Vec<ScheduleConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// `poisson2d`, `nonlinear_poisson2d`, `advdiff2d` or `manufactured:<id>`.
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundarySamples {
    Total(usize),
    PerGroup(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesConfig {
    pub interior: usize,
    pub boundary: BoundarySamples,
}

impl SamplesConfig {
    pub fn counts(&self) -> SampleCounts {
        SampleCounts {
            interior: self.interior,
            boundary: match &self.boundary {
                BoundarySamples::Total(n) => BoundaryCounts::Total(*n),
                BoundarySamples::PerGroup(v) => BoundaryCounts::PerGroup(v.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSolver {
    /// The exact solution when the problem has one, else finite differences.
    #[default]
    Auto,
    Exact,
    Fd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    /// Points per axis of the finite-difference solve.
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Points per axis of the comparison grid; defaults to `grid`.
    #[serde(default)]
    pub compare: Option<usize>,
    #[serde(default)]
    pub solver: ReferenceSolver,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            compare: None,
            solver: ReferenceSolver::Auto,
            rel_tol: default_rel_tol(),
        }
    }
}

impl ReferenceConfig {
    pub fn compare_points(&self) -> usize {
        self.compare.unwrap_or(self.grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Fourier,
}

/// Network description without the input dimension, which comes from the
/// problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: NetKind,
    /// MLP hidden widths.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    /// One embedding per entry.
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    /// Wavenumbers per embedding; half the first extractor width by default.
    #[serde(default)]
    pub features: Option<usize>,
    #[serde(default)]
    pub extractor: Option<Vec<usize>>,
    #[serde(default = "default_head")]
    pub head: usize,
    #[serde(default = "default_true")]
    pub output_bias: bool,
}

impl NetworkConfig {
    pub fn to_spec(&self, input_dim: usize) -> NetworkSpec {
        match self.kind {
            NetKind::Mlp => NetworkSpec::Mlp(MlpSpec {
                output_bias: self.output_bias,
                ..MlpSpec::new(input_dim, self.hidden.clone().unwrap_or_default())
            }),
            NetKind::Fourier => {
                let extractor = self.extractor.clone().unwrap_or_default();
                let m = self.features.unwrap_or(extractor.first().copied().unwrap_or(0) / 2);
                NetworkSpec::Fourier(FourierNetSpec {
                    input_dim,
                    embeddings: self
                        .sigma
                        .clone()
                        .unwrap_or_default()
                        .iter()
                        .map(|&s| FourierEmbeddingSpec::new(s, m))
                        .collect(),
                    extractor_hidden: extractor,
                    head_width: self.head,
                    output_bias: self.output_bias,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub iterations: usize,
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: Option<AdamConfig>,
    #[serde(default)]
    pub weighting: Option<WeightingConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub level: Vec<LevelConfig>,
}

/// Optional sweep axes; the run matrix is their product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Embedding σ lists for the first level of Fourier schedules.
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// First-level iteration counts for multi-level schedules; the last
    /// level absorbs the difference so the total budget is unchanged.
    #[serde(default)]
    pub transition: Option<Vec<usize>>,
    /// Hidden (MLP) or extractor (Fourier) widths for every level.
    #[serde(default)]
    pub hidden: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            transition: None,
            hidden: None,
            repeats: default_repeats(),
        }
    }
}

/// Parses and validates a TOML experiment description.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut unknown = Vec::new();
    let config: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut violations: Vec<Violation> = unknown
        .into_iter()
        .map(|path| Violation {
            path,
            message: "unknown key".into(),
        })
        .collect();
    violations.extend(validate(&config));
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Syntax(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

struct Checker(Vec<Violation>);

impl Checker {
    fn fail(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, v: usize) {
        if v == 0 {
            self.fail(path, "must be positive");
        }
    }

    fn widths(&mut self, path: &str, w: &[usize]) {
        if w.is_empty() {
            self.fail(path, "needs at least one layer");
        }
        for (i, &v) in w.iter().enumerate() {
            if v == 0 {
                self.fail(format!("{path}[{i}]"), "width must be positive");
            }
        }
    }

    fn sigmas(&mut self, path: &str, s: &[f64]) {
        if s.is_empty() {
            self.fail(path, "needs at least one embedding");
        }
        for (i, &v) in s.iter().enumerate() {
            if !(v.is_finite() && v > 0.0) {
                self.fail(format!("{path}[{i}]"), format!("sigma must be positive, got {v}"));
            }
        }
    }

    fn optimizer(&mut self, path: &str, o: &AdamConfig) {
        if let Err(e) = o.validate() {
            self.fail(path, e);
        }
    }

    fn weighting(&mut self, path: &str, w: &WeightingConfig) {
        self.positive(&format!("{path}.interval"), w.interval);
        self.positive(&format!("{path}.chunk"), w.chunk);
    }

    fn network(&mut self, path: &str, n: &NetworkConfig) {
        let extra = |c: &mut Checker, field: &str, present: bool| {
            if present {
                c.fail(format!("{path}.{field}"), format!("not used by {:?} networks", n.kind));
            }
        };
        match n.kind {
            NetKind::Mlp => {
                match &n.hidden {
                    Some(h) => self.widths(&format!("{path}.hidden"), h),
                    None => self.fail(format!("{path}.hidden"), "required for mlp networks"),
                }
                extra(self, "sigma", n.sigma.is_some());
                extra(self, "features", n.features.is_some());
                extra(self, "extractor", n.extractor.is_some());
            }
            NetKind::Fourier => {
                match &n.sigma {
                    Some(s) => self.sigmas(&format!("{path}.sigma"), s),
                    None => self.fail(format!("{path}.sigma"), "required for fourier networks"),
                }
                match &n.extractor {
                    Some(e) => self.widths(&format!("{path}.extractor"), e),
                    None => self.fail(format!("{path}.extractor"), "required for fourier networks"),
                }
                if n.features == Some(0) || (n.features.is_none() && n.extractor.as_ref().is_some_and(|e| e.first() < Some(&2)))
                {
                    self.fail(format!("{path}.features"), "must be positive");
                }
                self.positive(&format!("{path}.head"), n.head);
                extra(self, "hidden", n.hidden.is_some());
            }
        }
    }
}

fn validate(c: &ExperimentConfig) -> Vec<Violation> {
    let mut k = Checker(Vec::new());
    if c.name.trim().is_empty() {
        k.fail("name", "must not be empty");
    }
    k.positive("checkpoint_stride", c.checkpoint_stride);
    if c.workers == Some(0) {
        k.fail("workers", "must be positive");
    }
    let problem = match problem_by_name(&c.problem.name) {
        Ok(p) => Some(p),
        Err(e) => {
            k.fail("problem.name", e.to_string());
            None
        }
    };
    if let Some(p) = &problem {
        let groups = p.boundary_groups().len();
        if let BoundarySamples::PerGroup(v) = &c.samples.boundary {
            if v.len() != groups {
                k.fail(
                    "samples.boundary",
                    format!("problem has {groups} boundary group(s), got {} counts", v.len()),
                );
            }
        }
        validate_reference(&mut k, c, p);
    }
    k.positive("samples.interior", c.samples.interior);
    match &c.samples.boundary {
        BoundarySamples::Total(n) => k.positive("samples.boundary", *n),
        BoundarySamples::PerGroup(v) => {
            for (i, &n) in v.iter().enumerate() {
                k.positive(&format!("samples.boundary[{i}]"), n);
            }
        }
    }
    k.optimizer("optimizer", &c.optimizer);
    k.weighting("weighting", &c.weighting);
    if c.schedule.is_empty() {
        k.fail("schedule", "at least one schedule is required");
    }
    for (si, s) in c.schedule.iter().enumerate() {
        let sp = format!("schedule[{si}]");
        if s.level.is_empty() {
            k.fail(format!("{sp}.level"), "at least one level is required");
        }
        for (li, l) in s.level.iter().enumerate() {
            let lp = format!("{sp}.level[{li}]");
            k.positive(&format!("{lp}.iterations"), l.iterations);
            k.network(&format!("{lp}.network"), &l.network);
            if let Some(o) = &l.optimizer {
                k.optimizer(&format!("{lp}.optimizer"), o);
            }
            if let Some(w) = &l.weighting {
                k.weighting(&format!("{lp}.weighting"), w);
            }
        }
        if let Some(ts) = &c.sweep.transition {
            if s.level.len() > 1 {
                let total: usize = s.level.iter().map(|l| l.iterations).sum();
                let middle: usize = s.level[1..s.level.len() - 1].iter().map(|l| l.iterations).sum();
                for (ti, &t) in ts.iter().enumerate() {
                    if t == 0 || t + middle >= total {
                        k.fail(
                            format!("sweep.transition[{ti}]"),
                            format!("{t} leaves no iterations for the last level of {sp} (total {total})"),
                        );
                    }
                }
            }
        }
    }
    if let Some(ss) = &c.sweep.sigma {
        if ss.is_empty() {
            k.fail("sweep.sigma", "must not be empty");
        }
        for (i, s) in ss.iter().enumerate() {
            k.sigmas(&format!("sweep.sigma[{i}]"), s);
        }
    }
    if let Some(hs) = &c.sweep.hidden {
        if hs.is_empty() {
            k.fail("sweep.hidden", "must not be empty");
        }
        for (i, h) in hs.iter().enumerate() {
            k.widths(&format!("sweep.hidden[{i}]"), h);
        }
    }
    if c.sweep.transition.as_ref().is_some_and(|t| t.is_empty()) {
        k.fail("sweep.transition", "must not be empty");
    }
    k.positive("sweep.repeats", c.sweep.repeats);
    k.0
}

fn validate_reference(k: &mut Checker, c: &ExperimentConfig, p: &ProblemSpec) {
    let r = &c.reference;
    let compare = r.compare_points();
    if compare < 3 {
        k.fail("reference.compare", "needs at least 3 points per axis");
    }
    if !(r.rel_tol.is_finite() && r.rel_tol > 0.0) {
        k.fail("reference.rel_tol", "must be positive");
    }
    let fd = match r.solver {
        ReferenceSolver::Exact => {
            if p.exact.is_none() {
                k.fail("reference.solver", format!("problem {} has no exact solution", c.problem.name));
            }
            false
        }
        ReferenceSolver::Fd => true,
        ReferenceSolver::Auto => p.exact.is_none(),
    };
    if fd {
        if p.dim() != 2 {
            k.fail("reference.solver", "finite-difference references need a two-dimensional problem");
        }
        if r.grid < 3 {
            k.fail("reference.grid", "needs at least 3 points per axis");
        } else if compare >= 3 && (compare > r.grid || !(r.grid - 1).is_multiple_of(compare - 1)) {
            k.fail(
                "reference.compare",
                format!("{compare} points cannot be injected from a {} point grid", r.grid),
            );
        }
    }
}

/// One fully resolved run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunPlan {
    pub index: usize,
    pub id: String,
    pub label: String,
    pub repeat: usize,
    pub seed: u64,
    pub sigma: Option<Vec<f64>>,
    pub transition: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub schedule: HierarchySchedule,
    pub config_hash: String,
}

/// Everything that determines a run's numbers.
#[derive(Serialize)]
struct HashInput<'a> {
    problem: &'a str,
    samples: &'a SamplesConfig,
    reference: (&'a ReferenceSolver, usize, usize, String),
    checkpoint_stride: usize,
    resample: bool,
    seed: u64,
    schedule: &'a HierarchySchedule,
}

/// SHA-256 over a canonical JSON encoding, so formatting, key order and
/// spelled-out defaults do not change it.
fn run_hash(config: &ExperimentConfig, seed: u64, schedule: &HierarchySchedule) -> String {
    let r = &config.reference;
    let input = HashInput {
        problem: &config.problem.name,
        samples: &config.samples,
        reference: (&r.solver, r.grid, r.compare_points(), format!("{:e}", r.rel_tol)),
        checkpoint_stride: config.checkpoint_stride,
        resample: config.resample,
        seed,
        schedule,
    };
    let json = serde_json::to_vec(&input).expect("plain data serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

/// Axis values as options, or the single "not swept" entry.
fn axis<T: Clone>(values: Option<&Vec<T>>) -> Vec<Option<T>> {
    match values {
        Some(v) => v.iter().cloned().map(Some).collect(),
        None => vec![None],
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-.".contains(c) { c } else { '_' })
        .collect()
}

fn fmt_list<T: fmt::Display>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// Expands the sweep axes into the run matrix. The σ axis applies to the
/// first level of schedules that start with a Fourier network, the
/// transition axis to multi-level schedules only; repeats share seeds
/// across schedules so variants are compared on identical draws.
pub fn expand(config: &ExperimentConfig) -> Result<Vec<RunPlan>, ConfigError> {
    let problem = problem_by_name(&config.problem.name).map_err(|e| {
        ConfigError::Invalid(vec![Violation {
            path: "problem.name".into(),
            message: e.to_string(),
        }])
    })?;
    let dim = problem.dim();
    let mut runs = Vec::new();
    for (si, sched) in config.schedule.iter().enumerate() {
        let label = sched.label.clone().unwrap_or_else(|| format!("schedule{si}"));
        let fourier_first = sched.level[0].network.kind == NetKind::Fourier;
        let sigmas = axis(config.sweep.sigma.as_ref().filter(|_| fourier_first));
        let transitions = axis(config.sweep.transition.as_ref().filter(|_| sched.level.len() > 1));
        let hiddens = axis(config.sweep.hidden.as_ref());
        for sigma in &sigmas {
            for transition in &transitions {
                for hidden in &hiddens {
                    for repeat in 0..config.sweep.repeats {
                        let mut levels = sched.level.clone();
                        if let Some(s) = sigma {
                            levels[0].network.sigma = Some(s.clone());
                        }
                        if let Some(h) = hidden {
                            for l in &mut levels {
                                match l.network.kind {
                                    NetKind::Mlp => l.network.hidden = Some(h.clone()),
                                    NetKind::Fourier => l.network.extractor = Some(h.clone()),
                                }
                            }
                        }
                        if let Some(t) = transition {
                            let total: usize = levels.iter().map(|l| l.iterations).sum();
                            let last = levels.len() - 1;
                            levels[0].iterations = *t;
                            let used: usize = levels[..last].iter().map(|l| l.iterations).sum();
                            levels[last].iterations = total - used;
                        }
                        let schedule = HierarchySchedule {
                            levels: levels
                                .iter()
                                .map(|l| LevelSpec {
                                    network: l.network.to_spec(dim),
                                    iterations: l.iterations,
                                    optimizer: l.optimizer.clone().unwrap_or_else(|| config.optimizer.clone()),
                                    weighting: l.weighting.clone().unwrap_or_else(|| config.weighting.clone()),
                                })
                                .collect(),
                        };
                        let seed = derive_seed(config.seed, repeat as u64);
                        let index = runs.len();
                        let mut id = format!("{index:03}-{}", slug(&label));
                        if let Some(s) = sigma {
                            id += &format!("-s{}", fmt_list(s, "+"));
                        }
                        if let Some(t) = transition {
                            id += &format!("-t{t}");
                        }
                        if let Some(h) = hidden {
                            id += &format!("-h{}", fmt_list(h, "x"));
                        }
                        if config.sweep.repeats > 1 {
                            id += &format!("-r{repeat}");
                        }
                        let config_hash = run_hash(config, seed, &schedule);
                        runs.push(RunPlan {
                            index,
                            id: slug(&id),
                            label: label.clone(),
                            repeat,
                            seed,
                            sigma: sigma.clone(),
                            transition: *transition,
                            hidden: hidden.clone(),
                            schedule,
                            config_hash,
                        });
                    }
                }
            }
        }
    }
    Ok(runs)
}
