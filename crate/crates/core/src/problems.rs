//! PDE problems on axis-aligned boxes: residual operators, boundary
//! segments, data fields, samplers and the registered benchmarks.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grad::{
    evaluate_batch, DerivativeBundle, DerivativeVars, Expr, ExprBuilder, GradError, Layout, ParameterStore, StoreId,
    Tape, Var,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("segment {segment} has zero measure but {count} samples were requested")]
    ZeroMeasureSegment { segment: usize, count: usize },
    #[error("expected {expected} boundary counts (one per group), got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("problem `{0}` has a nonlinear operator")]
    Nonlinear(String),
}

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| self.lower[i] < v && v < self.upper[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

impl BcKind {
    pub fn name(self) -> &'static str {
        match self {
            BcKind::Dirichlet => "dirichlet",
            BcKind::Neumann => "neumann",
        }
    }
}

/// The face `x_axis = lower` or `x_axis = upper` of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub fn low(axis: usize) -> Self {
        Self { axis, upper: false }
    }

    pub fn high(axis: usize) -> Self {
        Self { axis, upper: true }
    }

    /// Component of the outward unit normal along `axis`.
    pub fn normal_sign(self) -> f64 {
        if self.upper {
            1.0
        } else {
            -1.0
        }
    }
}

/// A parameterised scalar function `x ↦ expr(x; params)`.
#[derive(Debug, Clone)]
pub struct Term {
    pub expr: Expr,
    pub params: Arc<ParameterStore>,
}

impl Term {
    /// A closed-form expression without parameters.
    pub fn closed(expr: Expr) -> Self {
        Self {
            expr,
            params: Arc::new(ParameterStore::new()),
        }
    }

    pub fn new(expr: Expr, params: Arc<ParameterStore>) -> Self {
        Self { expr, params }
    }
}

/// Jet (value and input derivatives up to `order`) of `Σ terms` at `points`,
/// as a raw tape value with the matching [`Layout`].
pub fn sum_jet(terms: &[Term], points: ArrayView2<f64>, order: u8) -> Result<(Array2<f64>, Layout), GradError> {
    let layout = Layout::jet(points.nrows(), points.ncols(), order);
    let mut acc = Array2::zeros((layout.rows(), 1));
    let mut tape = Tape::new();
    for (i, t) in terms.iter().enumerate() {
        let v = tape.lower(&t.expr, &t.params, StoreId(i.min(63) as u8), points, order)?;
        acc += tape.value(v);
    }
    Ok((acc, layout))
}

/// Data functions (sources, boundary values, shifts).
#[derive(Debug, Clone)]
pub enum Field {
    Constant(f64),
    /// `Σ u_i(x)`.
    Value(Vec<Term>),
    /// `N[Σ u_i](x)`.
    Applied { operator: Operator, u: Vec<Term> },
    /// `∂(Σ u_i)/∂n` on a face.
    NormalDerivative { face: Face, u: Vec<Term> },
    Difference(Box<Field>, Box<Field>),
}

impl Field {
    pub fn value(expr: Expr) -> Self {
        Field::Value(vec![Term::closed(expr)])
    }

    pub fn eval(&self, points: ArrayView2<f64>) -> Result<Vec<f64>, GradError> {
        let r = points.nrows();
        Ok(match self {
            Field::Constant(c) => vec![*c; r],
            Field::Value(terms) => {
                let (jet, _) = sum_jet(terms, points, 0)?;
                jet.column(0).to_vec()
            }
            Field::Applied { operator, u } => {
                let (jet, layout) = sum_jet(u, points, 2)?;
                let velocity = operator.velocity_at(points)?;
                let mut tape = Tape::new();
                let j = tape.constant(jet, layout);
                let d = tape.derivatives(j);
                let n = operator.apply_tape(&mut tape, &d, velocity.as_ref());
                tape.value(n).column(0).to_vec()
            }
            Field::NormalDerivative { face, u } => {
                let (jet, layout) = sum_jet(u, points, 1)?;
                let b = layout.grad_block(face.axis);
                (0..r).map(|i| face.normal_sign() * jet[[b * r + i, 0]]).collect()
            }
            Field::Difference(a, b) => {
                let (a, b) = (a.eval(points)?, b.eval(points)?);
                a.iter().zip(&b).map(|(x, y)| x - y).collect()
            }
        })
    }

    pub fn eval_at(&self, x: &[f64]) -> Result<f64, GradError> {
        let p = ArrayView2::from_shape((1, x.len()), x).expect("a point is a single row");
        Ok(self.eval(p)?[0])
    }
}

/// Differential operator `N`.
#[derive(Clone)]
pub enum Operator {
    /// `Δu`.
    Laplace,
    /// `−∇·((1+u²)∇u) = −(1+u²)Δu − 2u|∇u|²`.
    Quasilinear,
    /// `w·∇u − νΔu` with a closed-form velocity `w` (output width `n`).
    AdvectionDiffusion { nu: f64, velocity: Expr },
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operator::Laplace => write!(f, "Laplace"),
            Operator::Quasilinear => write!(f, "Quasilinear"),
            Operator::AdvectionDiffusion { nu, .. } => write!(f, "AdvectionDiffusion {{ nu: {nu} }}"),
        }
    }
}

impl Operator {
    pub fn is_linear(&self) -> bool {
        !matches!(self, Operator::Quasilinear)
    }

    /// Velocity at each point (`R × n`), for operators that have one.
    pub fn velocity_at(&self, points: ArrayView2<f64>) -> Result<Option<Array2<f64>>, GradError> {
        match self {
            Operator::AdvectionDiffusion { velocity, .. } => {
                Ok(Some(evaluate_batch(velocity, points, &ParameterStore::new())?))
            }
            _ => Ok(None),
        }
    }

    /// `N[u]` as a plain column, from the derivative nodes of `u`.
    pub fn apply_tape(&self, tape: &mut Tape, u: &DerivativeVars, velocity: Option<&Array2<f64>>) -> Var {
        let lap = u.laplacian.expect("operator needs second derivatives");
        match self {
            Operator::Laplace => lap,
            Operator::Quasilinear => {
                let r = tape.layout(u.value).samples;
                let u2 = tape.square(u.value);
                let ones = tape.column(&vec![1.0; r]);
                let coef = tape.add(ones, u2);
                let diffusion = tape.mul(coef, lap);
                let mut grad2 = tape.square(u.grad[0]);
                for g in &u.grad[1..] {
                    let s = tape.square(*g);
                    grad2 = tape.add(grad2, s);
                }
                let cross = tape.mul(u.value, grad2);
                let cross = tape.scale(cross, 2.0);
                let total = tape.add(diffusion, cross);
                tape.scale(total, -1.0)
            }
            Operator::AdvectionDiffusion { nu, .. } => {
                let w = velocity.expect("advection needs the velocity at the sample points");
                let mut acc = tape.scale(lap, -nu);
                for (k, g) in u.grad.iter().enumerate() {
                    let wk = tape.column(&w.column(k).to_vec());
                    let t = tape.mul(wk, *g);
                    acc = tape.add(acc, t);
                }
                acc
            }
        }
    }

    /// `N[u](x)` from a pointwise derivative bundle.
    pub fn apply_point(&self, x: &[f64], u: &DerivativeBundle) -> Result<f64, GradError> {
        Ok(match self {
            Operator::Laplace => u.laplacian,
            Operator::Quasilinear => {
                let g2: f64 = u.grad_x.iter().map(|g| g * g).sum();
                -(1.0 + u.value * u.value) * u.laplacian - 2.0 * u.value * g2
            }
            Operator::AdvectionDiffusion { nu, velocity } => {
                let p = ArrayView2::from_shape((1, x.len()), x).expect("a point is a single row");
                let w = evaluate_batch(velocity, p, &ParameterStore::new())?;
                w.row(0).iter().zip(&u.grad_x).map(|(a, b)| a * b).sum::<f64>() - nu * u.laplacian
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct BoundarySegment {
    pub kind: BcKind,
    pub face: Face,
    pub data: Field,
}

impl BoundarySegment {
    /// `B[u]` as a plain column.
    pub fn apply_tape(&self, tape: &mut Tape, u: &DerivativeVars) -> Var {
        match self.kind {
            BcKind::Dirichlet => u.value,
            BcKind::Neumann => tape.scale(u.grad[self.face.axis], self.face.normal_sign()),
        }
    }

    pub fn jet_order(&self) -> u8 {
        match self.kind {
            BcKind::Dirichlet => 0,
            BcKind::Neumann => 1,
        }
    }
}

/// Segments sharing a condition kind; each group is one loss component.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGroup {
    pub kind: BcKind,
    pub segments: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: BoxDomain,
    pub operator: Operator,
    pub source: Field,
    pub boundary: Vec<BoundarySegment>,
    pub exact: Option<Expr>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_linear(&self) -> bool {
        self.operator.is_linear()
    }

    /// Groups in order of first appearance.
    pub fn boundary_groups(&self) -> Vec<BoundaryGroup> {
        let mut groups: Vec<BoundaryGroup> = Vec::new();
        for (i, s) in self.boundary.iter().enumerate() {
            match groups.iter_mut().find(|g| g.kind == s.kind) {
                Some(g) => g.segments.push(i),
                None => groups.push(BoundaryGroup {
                    kind: s.kind,
                    segments: vec![i],
                }),
            }
        }
        groups
    }

    /// Loss component names: `interior`, then `boundary` or one per kind.
    pub fn component_names(&self) -> Vec<String> {
        let groups = self.boundary_groups();
        let mut names = vec!["interior".to_string()];
        if groups.len() == 1 {
            names.push("boundary".into());
        } else {
            names.extend(groups.iter().map(|g| g.kind.name().to_string()));
        }
        names
    }

    /// `N[u](x) − f(x)` for a pointwise bundle of `u`.
    pub fn residual_at(&self, x: &[f64], u: &DerivativeBundle) -> Result<f64, GradError> {
        Ok(self.operator.apply_point(x, u)? - self.source.eval_at(x)?)
    }

    pub fn exact_at(&self, points: ArrayView2<f64>) -> Option<Result<Vec<f64>, GradError>> {
        self.exact
            .as_ref()
            .map(|e| evaluate_batch(e, points, &ParameterStore::new()).map(|v| v.column(0).to_vec()))
    }

    pub fn sample(&self, counts: &SampleCounts, seed: u64) -> Result<SampleSet, ProblemError> {
        sample(self, counts, seed)
    }
}

/// Boundary sample counts.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCounts {
    /// Split equally across groups, then across each group's segments.
    Total(usize),
    /// One count per boundary group.
    PerGroup(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCounts {
    pub interior: usize,
    pub boundary: BoundaryCounts,
}

impl SampleCounts {
    pub fn new(interior: usize, boundary: usize) -> Self {
        Self {
            interior,
            boundary: BoundaryCounts::Total(boundary),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub interior: Array2<f64>,
    /// One point matrix per boundary segment.
    pub boundary: Vec<Array2<f64>>,
    pub seed: u64,
}

impl SampleSet {
    /// Points of a boundary group stacked in segment order.
    pub fn group_points(&self, group: &BoundaryGroup) -> Array2<f64> {
        let views: Vec<_> = group.segments.iter().map(|&s| self.boundary[s].view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("segments share the dimension")
    }
}

fn split(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Uniform i.i.d. points: interior first, then each segment in order.
pub fn sample(problem: &ProblemSpec, counts: &SampleCounts, seed: u64) -> Result<SampleSet, ProblemError> {
    let groups = problem.boundary_groups();
    let per_group = match &counts.boundary {
        BoundaryCounts::Total(n) => split(*n, groups.len().max(1)),
        BoundaryCounts::PerGroup(v) => {
            if v.len() != groups.len() {
                return Err(ProblemError::CountMismatch {
                    expected: groups.len(),
                    got: v.len(),
                });
            }
            v.clone()
        }
    };
    let mut per_segment = vec![0; problem.boundary.len()];
    for (g, &n) in groups.iter().zip(&per_group) {
        for (&s, c) in g.segments.iter().zip(split(n, g.segments.len())) {
            per_segment[s] = c;
        }
    }
    let dom = &problem.domain;
    let n = dom.dim();
    for (i, seg) in problem.boundary.iter().enumerate() {
        let degenerate = (0..n).any(|k| k != seg.face.axis && dom.upper[k] <= dom.lower[k]);
        if degenerate && per_segment[i] > 0 {
            return Err(ProblemError::ZeroMeasureSegment {
                segment: i,
                count: per_segment[i],
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = Array2::from_shape_fn((counts.interior, n), |(_, k)| {
        dom.lower[k] + (dom.upper[k] - dom.lower[k]) * open_unit(&mut rng)
    });
    let boundary = problem
        .boundary
        .iter()
        .zip(&per_segment)
        .map(|(seg, &c)| {
            let fixed = if seg.face.upper {
                dom.upper[seg.face.axis]
            } else {
                dom.lower[seg.face.axis]
            };
            Array2::from_shape_fn((c, n), |(_, k)| {
                if k == seg.face.axis {
                    fixed
                } else {
                    dom.lower[k] + (dom.upper[k] - dom.lower[k]) * rng.random::<f64>()
                }
            })
        })
        .collect();
    Ok(SampleSet {
        interior,
        boundary,
        seed,
    })
}

fn all_faces(n: usize) -> Vec<Face> {
    (0..n).flat_map(|k| [Face::low(k), Face::high(k)]).collect()
}

/// `sin(8πx₁²+4πx₂)·sin(8πx₂²+4πx₁)` scaled by `k` (`k = 1` is the benchmark).
pub fn poisson_exact(k: f64) -> Expr {
    let mut b = ExprBuilder::new(2);
    let (x1, x2) = (b.x(0), b.x(1));
    let s1 = b.mul(x1, x1);
    let s2 = b.mul(x2, x2);
    let (a1, a2) = (b.scale(s1, 8.0 * PI * k), b.scale(x2, 4.0 * PI * k));
    let p = b.add(a1, a2);
    let (c1, c2) = (b.scale(s2, 8.0 * PI * k), b.scale(x1, 4.0 * PI * k));
    let q = b.add(c1, c2);
    let (sp, sq) = (b.sin(p), b.sin(q));
    let u = b.mul(sp, sq);
    b.build(u)
}

/// Poisson problem `Δu = f` on the unit square with the high-frequency
/// exact solution and Dirichlet data taken from it.
pub fn poisson_2d() -> ProblemSpec {
    let mut p = manufactured(Family::Poisson, poisson_exact(1.0)).expect("two-dimensional exact solution");
    p.name = "poisson2d".into();
    p
}

/// `½·exp(2 + 2·sin(10πx₁² + 10πx₂))`.
pub fn nonlinear_poisson_source() -> Expr {
    let mut b = ExprBuilder::new(2);
    let (x1, x2) = (b.x(0), b.x(1));
    let s = b.mul(x1, x1);
    let a = b.scale(s, 10.0 * PI);
    let c = b.scale(x2, 10.0 * PI);
    let phase = b.add(a, c);
    let sn = b.sin(phase);
    let sn2 = b.scale(sn, 2.0);
    let two = b.constant(2.0);
    let e = b.add(two, sn2);
    let ex = b.exp(e);
    let f = b.scale(ex, 0.5);
    b.build(f)
}

/// `−∇·((1+u²)∇u) = f` on the unit square with `u = 1` on the boundary.
pub fn nonlinear_poisson_2d() -> ProblemSpec {
    ProblemSpec {
        name: "nonlinear_poisson2d".into(),
        domain: BoxDomain::unit(2),
        operator: Operator::Quasilinear,
        source: Field::value(nonlinear_poisson_source()),
        boundary: all_faces(2)
            .into_iter()
            .map(|face| BoundarySegment {
                kind: BcKind::Dirichlet,
                face,
                data: Field::Constant(1.0),
            })
            .collect(),
        exact: None,
    }
}

/// `w = (−5 sin(6πx₁)cos(6πx₂), 5 cos(6πx₁)sin(6πx₂))`.
pub fn cellular_velocity() -> Expr {
    let mut b = ExprBuilder::new(2);
    let (x1, x2) = (b.x(0), b.x(1));
    let (p1, p2) = (b.scale(x1, 6.0 * PI), b.scale(x2, 6.0 * PI));
    let (s1, c1, s2, c2) = (b.sin(p1), b.cos(p1), b.sin(p2), b.cos(p2));
    let w1 = b.mul(s1, c2);
    let w1 = b.scale(w1, -5.0);
    let w2 = b.mul(c1, s2);
    let w2 = b.scale(w2, 5.0);
    let w = b.concat(&[w1, w2]);
    b.build(w)
}

pub const ADVDIFF_NU: f64 = 0.01;

fn advdiff_operator() -> Operator {
    Operator::AdvectionDiffusion {
        nu: ADVDIFF_NU,
        velocity: cellular_velocity(),
    }
}

/// `w·∇u − νΔu = sin(4πx₂)`; `u = 0` at `x₁ = 0`, `u = 1` at `x₁ = 1`,
/// `∂u/∂n = 0` at `x₂ ∈ {0, 1}`.
pub fn advection_diffusion_2d() -> ProblemSpec {
    let mut b = ExprBuilder::new(2);
    let x2 = b.x(1);
    let p = b.scale(x2, 4.0 * PI);
    let f = b.sin(p);
    let source = Field::value(b.build(f));
    let neumann = |face| BoundarySegment {
        kind: BcKind::Neumann,
        face,
        data: Field::Constant(0.0),
    };
    let dirichlet = |face, g| BoundarySegment {
        kind: BcKind::Dirichlet,
        face,
        data: Field::Constant(g),
    };
    ProblemSpec {
        name: "advdiff2d".into(),
        domain: BoxDomain::unit(2),
        operator: advdiff_operator(),
        source,
        boundary: vec![
            neumann(Face::low(1)),
            neumann(Face::high(1)),
            dirichlet(Face::low(0), 0.0),
            dirichlet(Face::high(0), 1.0),
        ],
        exact: None,
    }
}

/// Operator and boundary layout shared by a manufactured problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// `Δu = f`, Dirichlet everywhere.
    Poisson,
    /// Quasilinear diffusion, Dirichlet everywhere.
    NonlinearPoisson,
    /// The benchmark advection-diffusion operator and boundary layout.
    AdvectionDiffusion,
}

/// A problem whose data are derived from `exact`: `f = N[exact]`,
/// `g = B[exact]` on each segment.
pub fn manufactured(family: Family, exact: Expr) -> Result<ProblemSpec, ProblemError> {
    if exact.output_width() != 1 {
        return Err(ProblemError::Dimension("exact solution must be scalar".into()));
    }
    let n = exact.input_dim();
    let operator = match family {
        Family::Poisson => Operator::Laplace,
        Family::NonlinearPoisson => Operator::Quasilinear,
        Family::AdvectionDiffusion => {
            if n != 2 {
                return Err(ProblemError::Dimension(format!(
                    "advection-diffusion family is two-dimensional, exact solution has {n} inputs"
                )));
            }
            advdiff_operator()
        }
    };
    let u = vec![Term::closed(exact.clone())];
    let faces = match family {
        Family::AdvectionDiffusion => vec![
            (BcKind::Neumann, Face::low(1)),
            (BcKind::Neumann, Face::high(1)),
            (BcKind::Dirichlet, Face::low(0)),
            (BcKind::Dirichlet, Face::high(0)),
        ],
        _ => all_faces(n).into_iter().map(|f| (BcKind::Dirichlet, f)).collect(),
    };
    let boundary = faces
        .into_iter()
        .map(|(kind, face)| BoundarySegment {
            kind,
            face,
            data: match kind {
                BcKind::Dirichlet => Field::Value(u.clone()),
                BcKind::Neumann => Field::NormalDerivative { face, u: u.clone() },
            },
        })
        .collect();
    Ok(ProblemSpec {
        name: "manufactured".into(),
        domain: BoxDomain::unit(n),
        source: Field::Applied {
            operator: operator.clone(),
            u,
        },
        operator,
        boundary,
        exact: Some(exact),
    })
}

/// `Π sin(πx_i)` in `dim` dimensions.
pub fn sine_product(dim: usize) -> Expr {
    let mut b = ExprBuilder::new(dim);
    let mut acc = None;
    for k in 0..dim {
        let x = b.x(k);
        let p = b.scale(x, PI);
        let s = b.sin(p);
        acc = Some(match acc {
            None => s,
            Some(a) => b.mul(a, s),
        });
    }
    b.build(acc.expect("dimension is positive"))
}

/// `x₁ + sin(πx₁)·cos(πx₂)`.
pub fn advdiff_smooth_exact() -> Expr {
    let mut b = ExprBuilder::new(2);
    let (x1, x2) = (b.x(0), b.x(1));
    let (p1, p2) = (b.scale(x1, PI), b.scale(x2, PI));
    let (s, c) = (b.sin(p1), b.cos(p2));
    let sc = b.mul(s, c);
    let u = b.add(x1, sc);
    b.build(u)
}

/// Identifiers accepted after `manufactured:`.
pub const MANUFACTURED_IDS: &[&str] = &[
    "sine1d",
    "sine2d",
    "poisson_half",
    "zero2d",
    "advdiff_linear",
    "advdiff_smooth",
    "nonlinear_bilinear",
    "nonlinear_sine",
];

/// Registered manufactured problems.
pub fn manufactured_by_id(id: &str) -> Result<ProblemSpec, ProblemError> {
    let (family, exact) = match id {
        "sine1d" => (Family::Poisson, sine_product(1)),
        "sine2d" => (Family::Poisson, sine_product(2)),
        "poisson_half" => (Family::Poisson, poisson_exact(0.5)),
        "zero2d" => {
            let mut b = ExprBuilder::new(2);
            let z = b.constant(0.0);
            (Family::Poisson, b.build(z))
        }
        "advdiff_linear" => {
            let mut b = ExprBuilder::new(2);
            let x = b.x(0);
            (Family::AdvectionDiffusion, b.build(x))
        }
        "advdiff_smooth" => (Family::AdvectionDiffusion, advdiff_smooth_exact()),
        "nonlinear_bilinear" => {
            let mut b = ExprBuilder::new(2);
            let (x1, x2) = (b.x(0), b.x(1));
            let p = b.mul(x1, x2);
            let one = b.constant(1.0);
            let u = b.add(one, p);
            (Family::NonlinearPoisson, b.build(u))
        }
        "nonlinear_sine" => (Family::NonlinearPoisson, sine_product(2)),
        _ => return Err(ProblemError::UnknownProblem(format!("manufactured:{id}"))),
    };
    let mut p = manufactured(family, exact)?;
    p.name = format!("manufactured:{id}");
    Ok(p)
}

/// Resolves a registered problem name.
pub fn problem_by_name(name: &str) -> Result<ProblemSpec, ProblemError> {
    match name {
        "poisson2d" => Ok(poisson_2d()),
        "nonlinear_poisson2d" => Ok(nonlinear_poisson_2d()),
        "advdiff2d" => Ok(advection_diffusion_2d()),
        _ => match name.strip_prefix("manufactured:") {
            Some(id) => manufactured_by_id(id),
            None => Err(ProblemError::UnknownProblem(name.into())),
        },
    }
}
