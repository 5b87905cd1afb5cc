//! Hierarchical training: the composite model, level losses, the linear
//! residual shift, Adam, adaptive loss weights and the level schedule.

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Layout, ParameterStore, StoreId, Tape, Var, PRIMARY};
use crate::nets::{init_network, NetError, Network, NetworkSpec};
use crate::problems::{
    sum_jet, BcKind, BoundaryCounts, Field, Operator, ProblemError, ProblemSpec, SampleCounts, SampleSet, Term,
};
use crate::refsolve::relative_l2_error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("empty sample set: {0}")]
    EmptySamples(String),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("composite model has no active level")]
    NoActiveLevel,
    #[error("parameter store is frozen")]
    FrozenStore,
    #[error("gradient has length {got}, parameters have {expected}")]
    GradientLength { expected: usize, got: usize },
    #[error("problem `{0}` is nonlinear; the residual shift applies to linear operators only")]
    Nonlinear(String),
    #[error("non-finite loss at iteration {iteration} (level {level}): components {components:?}")]
    NonFinite {
        iteration: usize,
        level: usize,
        components: Vec<f64>,
    },
    #[error("reference: {0}")]
    Reference(String),
}

/// SplitMix64 mix of `(master, index)`; used for per-level and per-run seeds.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Level {
    pub network: Network,
    pub params: Arc<ParameterStore>,
}

impl Level {
    pub fn term(&self) -> Term {
        Term::new(self.network.expr().clone(), Arc::clone(&self.params))
    }
}

/// `u = Σ_m v_m(·; θ_m)`; every level except the active one is frozen.
#[derive(Debug, Clone, Default)]
pub struct CompositeModel {
    levels: Vec<Level>,
    active: Option<usize>,
}

impl CompositeModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn active_index(&self) -> Option<usize> {
        self.active
    }

    pub fn active(&self) -> Option<&Level> {
        self.active.map(|i| &self.levels[i])
    }

    /// Freezes every existing level and appends `network` as the active one.
    pub fn push_level(&mut self, network: Network, mut params: ParameterStore) -> usize {
        self.freeze_all();
        params.unfreeze();
        self.levels.push(Level {
            network,
            params: Arc::new(params),
        });
        let i = self.levels.len() - 1;
        self.active = Some(i);
        i
    }

    /// Re-opens level `index` for training and freezes the others.
    pub fn activate(&mut self, index: usize) {
        self.freeze_all();
        Arc::make_mut(&mut self.levels[index].params).unfreeze();
        self.active = Some(index);
    }

    pub fn freeze_all(&mut self) {
        for l in &mut self.levels {
            if !l.params.is_frozen() {
                Arc::make_mut(&mut l.params).freeze();
            }
        }
        self.active = None;
    }

    pub fn active_params_mut(&mut self) -> Result<&mut ParameterStore, TrainError> {
        let i = self.active.ok_or(TrainError::NoActiveLevel)?;
        Ok(Arc::make_mut(&mut self.levels[i].params))
    }

    pub fn terms(&self) -> Vec<Term> {
        self.levels.iter().map(Level::term).collect()
    }

    /// Terms of every level other than the active one.
    pub fn frozen_terms(&self) -> Vec<Term> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != self.active)
            .map(|(_, l)| l.term())
            .collect()
    }

    pub fn predict(&self, points: ArrayView2<f64>) -> Result<Vec<f64>, GradError> {
        Ok(sum_jet(&self.terms(), points, 0)?.0.column(0).to_vec())
    }
}

/// Positive loss-component weights: interior first, then one per boundary
/// group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights(pub Vec<f64>);

impl LossWeights {
    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn validate(&self, components: usize) -> Result<(), TrainError> {
        if self.0.len() != components {
            return Err(TrainError::InvalidWeights(format!(
                "{} weights for {components} loss components",
                self.0.len()
            )));
        }
        if let Some(w) = self.0.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(TrainError::InvalidWeights(format!("weight {w} is not positive and finite")));
        }
        Ok(())
    }
}

/// Points, targets and cached frozen-level jets for one loss component.
#[derive(Debug, Clone)]
struct Block {
    points: Array2<f64>,
    target: Vec<f64>,
    /// Frozen composite jet at `points`.
    frozen: Option<(Array2<f64>, Layout)>,
    order: u8,
    kind: BlockKind,
}

#[derive(Debug, Clone)]
enum BlockKind {
    Interior { velocity: Option<Array2<f64>> },
    Dirichlet,
    /// Outward normal components per point (`R × n`).
    Neumann { normals: Array2<f64> },
}

fn jet_rows(jet: &Array2<f64>, layout: Layout, rows: &Range<usize>) -> (Array2<f64>, Layout) {
    let sub = Layout::jet(rows.len(), layout.dims, layout.order);
    let mut out = Array2::zeros((sub.rows(), jet.ncols()));
    for b in 0..layout.blocks() {
        let src = jet.slice(s![b * layout.samples + rows.start..b * layout.samples + rows.end, ..]);
        out.slice_mut(s![b * rows.len()..(b + 1) * rows.len(), ..]).assign(&src);
    }
    (out, sub)
}

impl Block {
    fn len(&self) -> usize {
        self.points.nrows()
    }

    fn rows(&self, rows: Range<usize>) -> Block {
        Block {
            points: self.points.slice(s![rows.clone(), ..]).to_owned(),
            target: self.target[rows.clone()].to_vec(),
            frozen: self.frozen.as_ref().map(|(j, l)| jet_rows(j, *l, &rows)),
            order: self.order,
            kind: match &self.kind {
                BlockKind::Interior { velocity } => BlockKind::Interior {
                    velocity: velocity.as_ref().map(|v| v.slice(s![rows.clone(), ..]).to_owned()),
                },
                BlockKind::Dirichlet => BlockKind::Dirichlet,
                BlockKind::Neumann { normals } => BlockKind::Neumann {
                    normals: normals.slice(s![rows, ..]).to_owned(),
                },
            },
        }
    }

    /// `N[u] − f` or `B[u] − g` as a plain column, `u = frozen + active`.
    fn residual(
        &self,
        tape: &mut Tape,
        operator: &Operator,
        active: &Network,
        params: &ParameterStore,
        store: StoreId,
    ) -> Result<Var, GradError> {
        let mut u = tape.lower(active.expr(), params, store, self.points.view(), self.order)?;
        if let Some((jet, layout)) = &self.frozen {
            let c = tape.constant(jet.clone(), *layout);
            u = tape.add(c, u);
        }
        let d = tape.derivatives(u);
        let applied = match &self.kind {
            BlockKind::Interior { velocity } => operator.apply_tape(tape, &d, velocity.as_ref()),
            BlockKind::Dirichlet => d.value,
            BlockKind::Neumann { normals } => {
                let mut acc: Option<Var> = None;
                for (k, g) in d.grad.iter().enumerate() {
                    let nk = normals.column(k);
                    if nk.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let c = tape.column(&nk.to_vec());
                    let t = tape.mul(c, *g);
                    acc = Some(match acc {
                        None => t,
                        Some(a) => tape.add(a, t),
                    });
                }
                acc.unwrap_or_else(|| tape.scale(d.value, 0.0))
            }
        };
        let target = tape.column(&self.target);
        Ok(tape.sub(applied, target))
    }
}

/// Loss value, unweighted components and gradient for the active level.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub components: Vec<f64>,
    pub gradient: Vec<f64>,
}

/// The loss of the active level of a composite:
/// `Σ_k λ_k · mean_i |residual_k(x_i)|²` with the frozen levels entering
/// through cached jets at the sample points.
#[derive(Debug, Clone)]
pub struct LevelLoss {
    operator: Operator,
    blocks: Vec<Block>,
    weights: LossWeights,
    names: Vec<String>,
}

/// Builds the active level's loss.
pub fn assemble_level_loss(
    problem: &ProblemSpec,
    composite: &CompositeModel,
    samples: &SampleSet,
    weights: &LossWeights,
) -> Result<LevelLoss, TrainError> {
    composite.active_index().ok_or(TrainError::NoActiveLevel)?;
    assemble_with_terms(problem, &composite.frozen_terms(), samples, weights)
}

fn assemble_with_terms(
    problem: &ProblemSpec,
    frozen: &[Term],
    samples: &SampleSet,
    weights: &LossWeights,
) -> Result<LevelLoss, TrainError> {
    let names = problem.component_names();
    weights.validate(names.len())?;
    if samples.interior.nrows() == 0 {
        return Err(TrainError::EmptySamples("interior".into()));
    }
    let cache = |points: &Array2<f64>, order: u8| -> Result<Option<(Array2<f64>, Layout)>, GradError> {
        if frozen.is_empty() {
            Ok(None)
        } else {
            sum_jet(frozen, points.view(), order).map(Some)
        }
    };
    let interior = &samples.interior;
    let mut blocks = vec![Block {
        points: interior.clone(),
        target: problem.source.eval(interior.view())?,
        frozen: cache(interior, 2)?,
        order: 2,
        kind: BlockKind::Interior {
            velocity: problem.operator.velocity_at(interior.view())?,
        },
    }];
    for (gi, group) in problem.boundary_groups().iter().enumerate() {
        let points = samples.group_points(group);
        if points.nrows() == 0 {
            return Err(TrainError::EmptySamples(names[gi + 1].clone()));
        }
        let mut target = Vec::with_capacity(points.nrows());
        let mut normals = Array2::zeros((points.nrows(), problem.dim()));
        let mut row = 0;
        for &s in &group.segments {
            let seg = &problem.boundary[s];
            let pts = &samples.boundary[s];
            target.extend(seg.data.eval(pts.view())?);
            normals
                .slice_mut(s![row..row + pts.nrows(), seg.face.axis])
                .fill(seg.face.normal_sign());
            row += pts.nrows();
        }
        let (order, kind) = match group.kind {
            BcKind::Dirichlet => (0, BlockKind::Dirichlet),
            BcKind::Neumann => (1, BlockKind::Neumann { normals }),
        };
        blocks.push(Block {
            frozen: cache(&points, order)?,
            points,
            target,
            order,
            kind,
        });
    }
    Ok(LevelLoss {
        operator: problem.operator.clone(),
        blocks,
        weights: weights.clone(),
        names,
    })
}

impl LevelLoss {
    pub fn component_names(&self) -> &[String] {
        &self.names
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) -> Result<(), TrainError> {
        weights.validate(self.names.len())?;
        self.weights = weights;
        Ok(())
    }

    /// Sample count of each component.
    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::len).collect()
    }

    /// Residual columns, one per component, recorded on `tape`.
    pub fn residuals(
        &self,
        tape: &mut Tape,
        active: &Network,
        params: &ParameterStore,
        store: StoreId,
    ) -> Result<Vec<Var>, GradError> {
        self.blocks
            .iter()
            .map(|b| b.residual(tape, &self.operator, active, params, store))
            .collect()
    }

    /// Records the weighted loss; returns it with the unweighted component
    /// nodes.
    pub fn record(
        &self,
        tape: &mut Tape,
        active: &Network,
        params: &ParameterStore,
        store: StoreId,
    ) -> Result<(Var, Vec<Var>), GradError> {
        let residuals = self.residuals(tape, active, params, store)?;
        let mut components = Vec::with_capacity(residuals.len());
        let mut total: Option<Var> = None;
        for (r, &lambda) in residuals.into_iter().zip(&self.weights.0) {
            let sq = tape.square(r);
            let m = tape.mean(sq);
            components.push(m);
            let w = tape.scale(m, lambda);
            total = Some(match total {
                None => w,
                Some(t) => tape.add(t, w),
            });
        }
        Ok((total.expect("at least one component"), components))
    }

    pub fn evaluate(&self, active: &Network, params: &ParameterStore) -> Result<LossEval, GradError> {
        let mut tape = Tape::new();
        let (total, comps) = self.record(&mut tape, active, params, PRIMARY)?;
        Ok(LossEval {
            total: tape.scalar(total)?,
            components: comps.iter().map(|&c| tape.scalar(c)).collect::<Result<_, _>>()?,
            gradient: tape.gradient(total, PRIMARY, params.len())?,
        })
    }

    /// Loss components without the gradient.
    pub fn components(&self, active: &Network, params: &ParameterStore) -> Result<Vec<f64>, GradError> {
        let mut tape = Tape::new();
        let (_, comps) = self.record(&mut tape, active, params, PRIMARY)?;
        comps.iter().map(|&c| tape.scalar(c)).collect()
    }

    /// `T_k = Σ_i ‖∇_θ r_{k,i}‖²` per component, in chunks of `chunk` samples.
    pub fn ntk_traces(&self, active: &Network, params: &ParameterStore, chunk: usize) -> Result<Vec<f64>, GradError> {
        let chunk = chunk.max(1);
        self.blocks
            .iter()
            .map(|b| {
                let mut trace = 0.0;
                let mut start = 0;
                while start < b.len() {
                    let end = (start + chunk).min(b.len());
                    let part = b.rows(start..end);
                    let mut tape = Tape::new();
                    let r = part.residual(&mut tape, &self.operator, active, params, PRIMARY)?;
                    let g = tape.per_sample_gradients(r, PRIMARY, params.len())?;
                    trace += g.iter().map(|v| v * v).sum::<f64>();
                    start = end;
                }
                Ok(trace)
            })
            .collect()
    }

    /// `‖∇_θ L_k‖` per unweighted component.
    pub fn gradient_norms(&self, active: &Network, params: &ParameterStore) -> Result<Vec<f64>, GradError> {
        let mut tape = Tape::new();
        let (_, comps) = self.record(&mut tape, active, params, PRIMARY)?;
        comps
            .iter()
            .map(|&c| {
                let g = tape.gradient(c, PRIMARY, params.len())?;
                Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .collect()
    }
}

/// The linear problem solved by the next level: source `f − N[u_M]` and
/// boundary data `g − B[u_M]` for the frozen composite `u_M`.
pub fn shifted_problem(problem: &ProblemSpec, frozen: &CompositeModel) -> Result<ProblemSpec, TrainError> {
    shift_by_terms(problem, &frozen.terms())
}

/// [`shifted_problem`] for an arbitrary sum of closed-form terms.
pub fn shift_by_terms(problem: &ProblemSpec, terms: &[Term]) -> Result<ProblemSpec, TrainError> {
    if !problem.is_linear() {
        return Err(TrainError::Nonlinear(problem.name.clone()));
    }
    let u = terms.to_vec();
    if u.is_empty() {
        return Ok(problem.clone());
    }
    let mut shifted = problem.clone();
    shifted.source = Field::Difference(
        Box::new(problem.source.clone()),
        Box::new(Field::Applied {
            operator: problem.operator.clone(),
            u: u.clone(),
        }),
    );
    for seg in &mut shifted.boundary {
        let applied = match seg.kind {
            BcKind::Dirichlet => Field::Value(u.clone()),
            BcKind::Neumann => Field::NormalDerivative {
                face: seg.face,
                u: u.clone(),
            },
        };
        seg.data = Field::Difference(Box::new(seg.data.clone()), Box::new(applied));
    }
    shifted.exact = None;
    shifted.name = format!("{}+shift", problem.name);
    Ok(shifted)
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-8
}
fn default_decay_steps() -> usize {
    1000
}

/// Adam hyper-parameters; the rate decays as `lr · decay_rate^(t/decay_steps)`
/// when `decay_rate` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub decay_rate: Option<f64>,
    #[serde(default = "default_decay_steps")]
    pub decay_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta(),
            beta2: default_beta(),
            eps: default_eps(),
            decay_rate: None,
            decay_steps: default_decay_steps(),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(format!("eps must be positive, got {}", self.eps));
        }
        if let Some(d) = self.decay_rate {
            if !(d > 0.0 && d <= 1.0) {
                return Err(format!("decay_rate must lie in (0, 1], got {d}"));
            }
            if self.decay_steps == 0 {
                return Err("decay_steps must be positive".into());
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        match self.decay_rate {
            Some(d) => self.lr * d.powf(step as f64 / self.decay_steps as f64),
            None => self.lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One Adam update with bias correction folded into the step size:
/// `θ ← θ − α_t·m/(√v + ε)`, `α_t = α·√(1−β₂ᵗ)/(1−β₁ᵗ)`.
pub fn adam_step(
    state: &mut AdamState,
    config: &AdamConfig,
    params: &mut ParameterStore,
    grad: &[f64],
) -> Result<(), TrainError> {
    if params.is_frozen() {
        return Err(TrainError::FrozenStore);
    }
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::GradientLength {
            expected: params.len(),
            got: grad.len(),
        });
    }
    let t = state.step + 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let lr = config.rate_at(state.step) * (1.0 - b2.powi(t as i32)).sqrt() / (1.0 - b1.powi(t as i32));
    let theta = params.values_mut().map_err(|_| TrainError::FrozenStore)?;
    for (((p, m), v), &g) in theta.iter_mut().zip(&mut state.m).zip(&mut state.v).zip(grad) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * *m / (v.sqrt() + config.eps);
    }
    state.step = t;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Weights stay at their initial values.
    Fixed,
    /// `λ_k ∝ Σ_j T_j / T_k` with per-component NTK traces `T_k`.
    #[default]
    NtkTrace,
    /// Same rule with `‖∇_θ L_k‖` in place of `T_k`.
    GradNorm,
}

fn default_interval() -> usize {
    100
}
fn default_chunk() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingConfig {
    #[serde(default)]
    pub mode: WeightingMode,
    /// Weights are recomputed at global iterations divisible by this.
    #[serde(default = "default_interval")]
    pub interval: usize,
    /// Samples per per-sample gradient chunk.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

impl Default for WeightingConfig {
    fn default() -> Self {
        Self {
            mode: WeightingMode::NtkTrace,
            interval: default_interval(),
            chunk: default_chunk(),
        }
    }
}

impl WeightingConfig {
    pub fn fixed() -> Self {
        Self {
            mode: WeightingMode::Fixed,
            ..Self::default()
        }
    }
}

/// `λ_k = (Σ_j s_j)/s_k` normalised so the smallest is 1; components with
/// `s_k = 0` keep their previous weight.
pub fn balance_weights(stats: &[f64], previous: &LossWeights) -> LossWeights {
    let total: f64 = stats.iter().sum();
    let raw: Vec<Option<f64>> = stats
        .iter()
        .map(|&s| (s > 0.0 && s.is_finite() && total.is_finite()).then(|| total / s))
        .collect();
    let min = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    LossWeights(
        raw.iter()
            .zip(&previous.0)
            .map(|(r, &p)| r.map_or(p, |v| v / min))
            .collect(),
    )
}

/// Adaptive weights from the current active parameters.
pub fn update_adaptive_weights(
    loss: &LevelLoss,
    active: &Network,
    params: &ParameterStore,
    config: &WeightingConfig,
) -> Result<LossWeights, GradError> {
    let stats = match config.mode {
        WeightingMode::Fixed => return Ok(loss.weights().clone()),
        WeightingMode::NtkTrace => loss.ntk_traces(active, params, config.chunk)?,
        WeightingMode::GradNorm => loss.gradient_norms(active, params)?,
    };
    Ok(balance_weights(&stats, loss.weights()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub network: NetworkSpec,
    pub iterations: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub weighting: WeightingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySchedule {
    pub levels: Vec<LevelSpec>,
}

impl HierarchySchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.levels.is_empty() {
            return Err(TrainError::InvalidSchedule("schedule has no levels".into()));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.iterations == 0 {
                return Err(TrainError::InvalidSchedule(format!("level {i}: iterations must be positive")));
            }
            l.network.validate()?;
            l.optimizer
                .validate()
                .map_err(|e| TrainError::InvalidSchedule(format!("level {i}: {e}")))?;
            if l.weighting.interval == 0 {
                return Err(TrainError::InvalidSchedule(format!("level {i}: weighting interval must be positive")));
            }
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }

    /// Global iteration at which each level starts.
    pub fn starts(&self) -> Vec<usize> {
        self.levels
            .iter()
            .scan(0, |acc, l| {
                let s = *acc;
                *acc += l.iterations;
                Some(s)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub level: usize,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub rel_l2_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub component_names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "level".to_string()];
        h.extend(self.component_names.iter().map(|n| format!("loss_{n}")));
        h.extend(self.component_names.iter().map(|n| format!("lambda_{n}")));
        h.push("rel_l2_error".into());
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.level.to_string()];
            row.extend(r.losses.iter().map(|v| format!("{v:e}")));
            row.extend(r.weights.iter().map(|v| format!("{v:e}")));
            row.push(r.rel_l2_error.map(|e| format!("{e:e}")).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Reference values at a set of points for relative-L2 checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub points: Array2<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    /// Checkpoint every `stride` global iterations and at the end.
    pub checkpoint_stride: usize,
    /// Draw fresh samples every iteration instead of reusing one set.
    pub resample: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint_stride: 100,
            resample: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: CompositeModel,
    pub trace: TrainingTrace,
}

struct ErrorTracker<'a> {
    reference: &'a Reference,
    frozen: Vec<f64>,
}

impl ErrorTracker<'_> {
    fn refresh_frozen(&mut self, composite: &CompositeModel) -> Result<(), TrainError> {
        let frozen = composite.frozen_terms();
        self.frozen = if frozen.is_empty() {
            vec![0.0; self.reference.values.len()]
        } else {
            sum_jet(&frozen, self.reference.points.view(), 0)?.0.column(0).to_vec()
        };
        Ok(())
    }

    fn error(&self, composite: &CompositeModel) -> Result<f64, TrainError> {
        let level = composite.active().ok_or(TrainError::NoActiveLevel)?;
        let (v, _) = sum_jet(&[level.term()], self.reference.points.view(), 0)?;
        let pred: Vec<f64> = v.column(0).iter().zip(&self.frozen).map(|(a, b)| a + b).collect();
        relative_l2_error(&pred, &self.reference.values).map_err(|e| TrainError::Reference(e.to_string()))
    }
}

fn counts_of(problem: &ProblemSpec, samples: &SampleSet) -> SampleCounts {
    SampleCounts {
        interior: samples.interior.nrows(),
        boundary: BoundaryCounts::PerGroup(
            problem
                .boundary_groups()
                .iter()
                .map(|g| g.segments.iter().map(|&s| samples.boundary[s].nrows()).sum())
                .collect(),
        ),
    }
}

/// Trains the levels of `schedule` in sequence. Each level starts from a
/// fresh network (seeded by `derive_seed(options.seed, level)`) and fresh
/// Adam moments; finished levels are frozen.
pub fn train(
    problem: &ProblemSpec,
    schedule: &HierarchySchedule,
    samples: &SampleSet,
    reference: Option<&Reference>,
    options: &TrainOptions,
) -> Result<TrainRun, TrainError> {
    schedule.validate()?;
    let stride = options.checkpoint_stride.max(1);
    let names = problem.component_names();
    let mut weights = LossWeights::ones(names.len());
    let mut trace = TrainingTrace {
        component_names: names,
        records: Vec::new(),
    };
    let mut composite = CompositeModel::new();
    let mut tracker = reference.map(|r| ErrorTracker {
        reference: r,
        frozen: Vec::new(),
    });
    let counts = counts_of(problem, samples);
    let mut global = 0;
    for (li, spec) in schedule.levels.iter().enumerate() {
        let (network, params) = init_network(&spec.network, derive_seed(options.seed, li as u64))?;
        composite.push_level(network, params);
        if let Some(t) = tracker.as_mut() {
            t.refresh_frozen(&composite)?;
        }
        let mut loss = assemble_level_loss(problem, &composite, samples, &weights)?;
        let mut adam = AdamState::new(composite.active().expect("level just pushed").params.len());
        for _ in 0..spec.iterations {
            if options.resample && global > 0 {
                let fresh = problem.sample(&counts, derive_seed(samples.seed, global as u64))?;
                loss = assemble_level_loss(problem, &composite, &fresh, &weights)?;
            }
            let level = composite.active().expect("active level");
            if spec.weighting.mode != WeightingMode::Fixed && global % spec.weighting.interval == 0 {
                weights = update_adaptive_weights(&loss, &level.network, &level.params, &spec.weighting)?;
                loss.set_weights(weights.clone())?;
            }
            let eval = loss.evaluate(&level.network, &level.params)?;
            if !eval.total.is_finite() || eval.gradient.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    iteration: global,
                    level: li,
                    components: eval.components,
                });
            }
            if global % stride == 0 {
                let err = tracker.as_ref().map(|t| t.error(&composite)).transpose()?;
                trace.records.push(TraceRecord {
                    iteration: global,
                    level: li,
                    losses: eval.components.clone(),
                    weights: weights.0.clone(),
                    rel_l2_error: err,
                });
            }
            let params = composite.active_params_mut()?;
            adam_step(&mut adam, &spec.optimizer, params, &eval.gradient)?;
            global += 1;
        }
        let level = composite.active().expect("active level");
        let components = loss.components(&level.network, &level.params)?;
        if components.iter().any(|c| !c.is_finite()) {
            return Err(TrainError::NonFinite {
                iteration: global,
                level: li,
                components,
            });
        }
        if li + 1 == schedule.levels.len() {
            let err = tracker.as_ref().map(|t| t.error(&composite)).transpose()?;
            trace.records.push(TraceRecord {
                iteration: global,
                level: li,
                losses: components,
                weights: weights.0.clone(),
                rel_l2_error: err,
            });
        }
    }
    composite.freeze_all();
    Ok(TrainRun { model: composite, trace })
}

#[cfg(test)]
mod tests;
