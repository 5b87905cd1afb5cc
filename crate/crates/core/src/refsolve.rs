//! Finite-difference reference solvers on uniform grids over `[0,1]²` and
//! the relative L2 error metric.
//!
//! Fields are stored as `n × n` matrices indexed `[j, i]`: row `j` is the
//! grid line `x₂ = j·h`, column `i` is `x₁ = i·h`.

use std::io::Write;

use ndarray::{Array2, Zip};
use thiserror::Error;

use crate::grad::{evaluate_batch, GradError, ParameterStore};
use crate::problems::{BcKind, Field, Operator, ProblemSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefError {
    #[error("grid needs at least 3 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error("field has shape {got:?}, grid expects {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("Picard iteration stagnated after {iterations} iterations (last increment {increment:e})")]
    PicardStagnation { iterations: usize, increment: f64 },
    #[error("reference has zero norm")]
    ZeroReference,
    #[error("length mismatch: approximation has {approx} values, reference {reference}")]
    Length { approx: usize, reference: usize },
    #[error("grid of {fine} points cannot be restricted to {coarse}")]
    Restriction { fine: usize, coarse: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("unsupported problem layout: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    n: usize,
}

impl Grid2D {
    pub fn new(points_per_axis: usize) -> Result<Self, RefError> {
        if points_per_axis < 3 {
            return Err(RefError::GridTooSmall(points_per_axis));
        }
        Ok(Self { n: points_per_axis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    /// All nodes as rows `(x₁, x₂)`, row-major over `[j, i]`.
    pub fn points(&self) -> Array2<f64> {
        let n = self.n;
        Array2::from_shape_fn((n * n, 2), |(p, c)| {
            let (j, i) = (p / n, p % n);
            self.coord(if c == 0 { i } else { j })
        })
    }

    pub fn field_from_fn(&self, f: impl Fn(f64, f64) -> f64) -> GridField {
        GridField {
            grid: *self,
            values: Array2::from_shape_fn((self.n, self.n), |(j, i)| f(self.coord(i), self.coord(j))),
        }
    }

    pub fn field_from(&self, field: &Field) -> Result<GridField, RefError> {
        let v = field.eval(self.points().view())?;
        GridField::new(*self, Array2::from_shape_vec((self.n, self.n), v).expect("one value per node"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid2D,
    pub values: Array2<f64>,
}

impl GridField {
    pub fn new(grid: Grid2D, values: Array2<f64>) -> Result<Self, RefError> {
        if values.dim() != (grid.n, grid.n) {
            return Err(RefError::Shape {
                expected: (grid.n, grid.n),
                got: values.dim(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: Array2::zeros((grid.n, grid.n)),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        Zip::from(&self.values)
            .and(&other.values)
            .fold(0.0, |m: f64, a, b| m.max((a - b).abs()))
    }

    /// Injection onto a coarser grid whose spacing is a multiple of ours.
    pub fn restrict(&self, coarse: Grid2D) -> Result<GridField, RefError> {
        let (nf, nc) = (self.grid.n, coarse.n);
        if nc > nf || (nf - 1) % (nc - 1) != 0 {
            return Err(RefError::Restriction { fine: nf, coarse: nc });
        }
        let r = (nf - 1) / (nc - 1);
        Ok(GridField {
            grid: coarse,
            values: Array2::from_shape_fn((nc, nc), |(j, i)| self.values[[j * r, i * r]]),
        })
    }

    /// One line per grid row `x₂ = const`, space separated.
    pub fn write_matrix<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "value"])?;
        for ((j, i), v) in self.values.indexed_iter() {
            w.write_record(&[
                format!("{:e}", self.grid.coord(i)),
                format!("{:e}", self.grid.coord(j)),
                format!("{v:e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `‖approx − reference‖₂ / ‖reference‖₂` over all values.
pub fn relative_l2_error(approx: &[f64], reference: &[f64]) -> Result<f64, RefError> {
    if approx.len() != reference.len() {
        return Err(RefError::Length {
            approx: approx.len(),
            reference: reference.len(),
        });
    }
    let norm: f64 = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(RefError::ZeroReference);
    }
    let diff: f64 = approx.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

pub fn relative_l2_error_grid(approx: &GridField, reference: &GridField) -> Result<f64, RefError> {
    relative_l2_error(&approx.flat(), &reference.flat())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖r‖/‖b‖` falls below this.
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iterations: 200_000,
            picard_tol: 1e-9,
            picard_max: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// `max |w|·h/ν`, for advection problems.
    pub cell_peclet: Option<f64>,
    pub warnings: Vec<String>,
    /// `‖u_{k+1} − u_k‖_∞` per Picard step.
    pub picard_increments: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for an SPD operator, starting from `x`.
fn cg(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], x: &mut [f64], tol: f64, max: usize) -> Result<(usize, f64), RefError> {
    let nb = norm(b);
    if nb == 0.0 {
        x.fill(0.0);
        return Ok((0, 0.0));
    }
    let mut ap = vec![0.0; b.len()];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..max {
        let rel = rr.sqrt() / nb;
        if rel < tol {
            return Ok((it, rel));
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    Err(RefError::NoConvergence {
        method: "conjugate gradient",
        iterations: max,
        residual: rr.sqrt() / nb,
    })
}

/// BiCGStab for a general nonsingular operator, starting from `x`.
fn bicgstab(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max: usize,
) -> Result<(usize, f64), RefError> {
    let n = b.len();
    let nb = norm(b);
    if nb == 0.0 {
        x.fill(0.0);
        return Ok((0, 0.0));
    }
    let mut tmp = vec![0.0; n];
    apply(x, &mut tmp);
    let mut r: Vec<f64> = b.iter().zip(&tmp).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max {
        let rel = norm(&r) / nb;
        if rel < tol {
            return Ok((it, rel));
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(RefError::NoConvergence {
                method: "BiCGStab (breakdown)",
                iterations: it,
                residual: rel,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        apply(&p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for k in 0..n {
            s[k] = r[k] - alpha * v[k];
        }
        if norm(&s) / nb < tol {
            for k in 0..n {
                x[k] += alpha * p[k];
            }
            return Ok((it + 1, norm(&s) / nb));
        }
        apply(&s, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
            r[k] = s[k] - omega * t[k];
        }
    }
    let rel = norm(&r) / nb;
    Err(RefError::NoConvergence {
        method: "BiCGStab",
        iterations: max,
        residual: rel,
    })
}

fn check(grid: Grid2D, fields: &[&GridField]) -> Result<(), RefError> {
    for f in fields {
        if f.values.dim() != (grid.n, grid.n) {
            return Err(RefError::Shape {
                expected: (grid.n, grid.n),
                got: f.values.dim(),
            });
        }
    }
    Ok(())
}

/// Interior unknowns of a Dirichlet problem, numbered `(j−1)·m + (i−1)`.
struct InteriorIndex {
    n: usize,
    m: usize,
}

impl InteriorIndex {
    fn new(grid: Grid2D) -> Self {
        Self { n: grid.n, m: grid.n - 2 }
    }

    fn len(&self) -> usize {
        self.m * self.m
    }

    fn scatter(&self, x: &[f64], boundary: &GridField) -> GridField {
        let mut out = boundary.clone();
        for j in 1..self.n - 1 {
            for i in 1..self.n - 1 {
                out.values[[j, i]] = x[(j - 1) * self.m + (i - 1)];
            }
        }
        out
    }

    fn gather(&self, field: &GridField) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for j in 1..self.n - 1 {
            for i in 1..self.n - 1 {
                x[(j - 1) * self.m + (i - 1)] = field.values[[j, i]];
            }
        }
        x
    }
}

/// Solves the flux-form problem `−∇·(k∇u) = rhs` with Dirichlet data `g`
/// and face coefficients from arithmetic averaging of nodal `k`.
fn solve_flux_form(
    grid: Grid2D,
    k: &Array2<f64>,
    rhs: &GridField,
    g: &GridField,
    guess: &GridField,
    options: &SolverOptions,
) -> Result<(GridField, usize, f64), RefError> {
    let idx = InteriorIndex::new(grid);
    let (n, m) = (grid.n, idx.m);
    let h2 = grid.h() * grid.h();
    let face = |j: usize, i: usize, jj: usize, ii: usize| 0.5 * (k[[j, i]] + k[[jj, ii]]);
    let mut b = vec![0.0; idx.len()];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let mut v = rhs.values[[j, i]];
            for (jj, ii) in [(j, i - 1), (j, i + 1), (j - 1, i), (j + 1, i)] {
                if grid.is_boundary(ii, jj) {
                    v += face(j, i, jj, ii) * g.values[[jj, ii]] / h2;
                }
            }
            b[(j - 1) * m + (i - 1)] = v;
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let p = (j - 1) * m + (i - 1);
                let mut acc = 0.0;
                for (jj, ii) in [(j, i - 1), (j, i + 1), (j - 1, i), (j + 1, i)] {
                    let c = face(j, i, jj, ii);
                    acc += c * x[p];
                    if !grid.is_boundary(ii, jj) {
                        acc -= c * x[(jj - 1) * m + (ii - 1)];
                    }
                }
                y[p] = acc / h2;
            }
        }
    };
    let mut x = idx.gather(guess);
    let (iterations, residual) = cg(apply, &b, &mut x, options.rel_tol, options.max_iterations)?;
    Ok((idx.scatter(&x, g), iterations, residual))
}

fn with_boundary(g: &GridField) -> GridField {
    let mut out = g.clone();
    let n = g.grid.n;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            out.values[[j, i]] = 0.0;
        }
    }
    out
}

/// `Δu = f` with Dirichlet data `g` (read on boundary nodes) by the
/// 5-point stencil and conjugate gradients on `−Δ_h u = −f`.
pub fn solve_poisson_fd(
    grid: Grid2D,
    f: &GridField,
    g: &GridField,
    options: &SolverOptions,
) -> Result<(GridField, SolveReport), RefError> {
    check(grid, &[f, g])?;
    let ones = Array2::from_elem((grid.n, grid.n), 1.0);
    let rhs = GridField {
        grid,
        values: -&f.values,
    };
    let (u, iterations, residual) = solve_flux_form(grid, &ones, &rhs, g, &with_boundary(g), options)?;
    Ok((
        u,
        SolveReport {
            iterations,
            relative_residual: residual,
            ..SolveReport::default()
        },
    ))
}

/// `−∇·((1+u²)∇u) = f` with Dirichlet data `g`, by Picard iteration on the
/// coefficient; each linear step is solved by conjugate gradients, warm
/// started from the previous iterate.
pub fn solve_nonlinear_poisson_fd(
    grid: Grid2D,
    f: &GridField,
    g: &GridField,
    options: &SolverOptions,
) -> Result<(GridField, SolveReport), RefError> {
    check(grid, &[f, g])?;
    let mut u = with_boundary(g);
    let mut report = SolveReport::default();
    let inner = SolverOptions {
        rel_tol: options.rel_tol.min(1e-12),
        ..*options
    };
    for it in 0..options.picard_max {
        let k = u.values.mapv(|v| 1.0 + v * v);
        let (next, iters, res) = solve_flux_form(grid, &k, f, g, &u, &inner)?;
        let inc = next.max_abs_diff(&u);
        report.iterations += iters;
        report.relative_residual = res;
        report.picard_increments.push(inc);
        u = next;
        if inc < options.picard_tol {
            return Ok((u, report));
        }
        if !inc.is_finite() {
            return Err(RefError::PicardStagnation {
                iterations: it + 1,
                increment: inc,
            });
        }
    }
    Err(RefError::PicardStagnation {
        iterations: options.picard_max,
        increment: report.picard_increments.last().copied().unwrap_or(f64::NAN),
    })
}

/// Condition type on the faces `x₂ = 0` and `x₂ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum X2Faces {
    Dirichlet,
    /// Outward normal derivative prescribed; handled by ghost nodes.
    Neumann,
}

/// Advection-diffusion data: `w·∇u − νΔu = f`, Dirichlet on `x₁ ∈ {0,1}`
/// from `g`, and on `x₂ ∈ {0,1}` either Dirichlet from `g` or Neumann with
/// outward normal derivative `g`.
#[derive(Debug, Clone)]
pub struct AdvDiffData {
    pub w1: GridField,
    pub w2: GridField,
    pub nu: f64,
    pub f: GridField,
    pub g: GridField,
    pub x2_faces: X2Faces,
}

/// Central differences for advection and the 5-point Laplacian, solved by
/// BiCGStab.
pub fn solve_advdiff_fd(
    grid: Grid2D,
    data: &AdvDiffData,
    options: &SolverOptions,
) -> Result<(GridField, SolveReport), RefError> {
    check(grid, &[&data.w1, &data.w2, &data.f, &data.g])?;
    let n = grid.n;
    let h = grid.h();
    let neumann = data.x2_faces == X2Faces::Neumann;
    let (j0, j1) = if neumann { (0, n - 1) } else { (1, n - 2) };
    let rows = j1 - j0 + 1;
    let m = n - 2;
    let id = |j: usize, i: usize| (j - j0) * m + (i - 1);
    let unknown = |j: usize, i: usize| (1..n - 1).contains(&i) && (j0..=j1).contains(&j);
    let nu = data.nu;
    let (w1, w2) = (&data.w1.values, &data.w2.values);
    // Stencil weights per node: centre, west, east, south, north.
    let coeffs = |j: usize, i: usize| {
        let (a, b) = (w1[[j, i]] / (2.0 * h), w2[[j, i]] / (2.0 * h));
        let d = nu / (h * h);
        (4.0 * d, -d - a, -d + a, -d - b, -d + b)
    };
    let mut rhs = vec![0.0; rows * m];
    for j in j0..=j1 {
        for i in 1..n - 1 {
            let (_, cw, ce, cs, cn) = coeffs(j, i);
            let mut v = data.f.values[[j, i]];
            if i == 1 {
                v -= cw * data.g.values[[j, 0]];
            }
            if i == n - 2 {
                v -= ce * data.g.values[[j, n - 1]];
            }
            if neumann {
                // Ghost: u(−h) = u(h) + 2h·q at x₂ = 0, u(1+h) = u(1−h) + 2h·q at x₂ = 1.
                if j == 0 {
                    v -= cs * 2.0 * h * data.g.values[[0, i]];
                }
                if j == n - 1 {
                    v -= cn * 2.0 * h * data.g.values[[n - 1, i]];
                }
            } else {
                if j == 1 {
                    v -= cs * data.g.values[[0, i]];
                }
                if j == n - 2 {
                    v -= cn * data.g.values[[n - 1, i]];
                }
            }
            rhs[id(j, i)] = v;
        }
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        for j in j0..=j1 {
            for i in 1..n - 1 {
                let (cc, cw, ce, mut cs, mut cn) = coeffs(j, i);
                if neumann && j == 0 {
                    cn += cs;
                    cs = 0.0;
                }
                if neumann && j == n - 1 {
                    cs += cn;
                    cn = 0.0;
                }
                let mut acc = cc * x[id(j, i)];
                if unknown(j, i - 1) {
                    acc += cw * x[id(j, i - 1)];
                }
                if unknown(j, i + 1) {
                    acc += ce * x[id(j, i + 1)];
                }
                if j > 0 && unknown(j - 1, i) {
                    acc += cs * x[id(j - 1, i)];
                }
                if unknown(j + 1, i) {
                    acc += cn * x[id(j + 1, i)];
                }
                y[id(j, i)] = acc;
            }
        }
    };
    let mut x = vec![0.0; rows * m];
    let (iterations, residual) = bicgstab(apply, &rhs, &mut x, options.rel_tol, options.max_iterations)?;
    let mut u = data.g.clone();
    if neumann {
        for j in 0..n {
            for i in 1..n - 1 {
                u.values[[j, i]] = x[id(j, i)];
            }
        }
    } else {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                u.values[[j, i]] = x[id(j, i)];
            }
        }
    }
    let wmax = Zip::from(w1).and(w2).fold(0.0, |acc: f64, a, b| acc.max(a.hypot(*b)));
    let peclet = wmax * h / nu;
    let mut warnings = Vec::new();
    if peclet > 2.0 {
        warnings.push(format!(
            "cell Peclet number {peclet:.3} exceeds 2; central differences may oscillate"
        ));
    }
    Ok((
        u,
        SolveReport {
            iterations,
            relative_residual: residual,
            cell_peclet: Some(peclet),
            warnings,
            picard_increments: Vec::new(),
        },
    ))
}

/// Boundary data of a unit-square problem on the grid nodes. Faces
/// `x₁ = const` take precedence at corners.
pub fn boundary_field(grid: Grid2D, problem: &ProblemSpec) -> Result<GridField, RefError> {
    if problem.dim() != 2 || problem.domain != crate::problems::BoxDomain::unit(2) {
        return Err(RefError::Unsupported("reference solvers need the unit square".into()));
    }
    let n = grid.n();
    let mut out = GridField::zeros(grid);
    let mut segments: Vec<_> = problem.boundary.iter().collect();
    segments.sort_by_key(|s| std::cmp::Reverse(s.face.axis));
    for seg in segments {
        let fixed = if seg.face.upper { n - 1 } else { 0 };
        let nodes: Vec<(usize, usize)> = (0..n)
            .map(|t| if seg.face.axis == 0 { (t, fixed) } else { (fixed, t) })
            .collect();
        let pts = Array2::from_shape_fn((n, 2), |(p, c)| {
            let (j, i) = nodes[p];
            grid.coord(if c == 0 { i } else { j })
        });
        for (&(j, i), v) in nodes.iter().zip(seg.data.eval(pts.view())?) {
            out.values[[j, i]] = v;
        }
    }
    Ok(out)
}

/// Finite-difference solution of a registered unit-square problem.
pub fn solve_reference(
    problem: &ProblemSpec,
    grid: Grid2D,
    options: &SolverOptions,
) -> Result<(GridField, SolveReport), RefError> {
    let g = boundary_field(grid, problem)?;
    let f = grid.field_from(&problem.source)?;
    let kind_on = |axis: usize| {
        let kinds: Vec<BcKind> = problem.boundary.iter().filter(|s| s.face.axis == axis).map(|s| s.kind).collect();
        if kinds.len() == 2 && kinds[0] == kinds[1] {
            Some(kinds[0])
        } else {
            None
        }
    };
    let (k1, k2) = (kind_on(0), kind_on(1));
    let all_dirichlet = k1 == Some(BcKind::Dirichlet) && k2 == Some(BcKind::Dirichlet);
    match &problem.operator {
        Operator::Laplace if all_dirichlet => solve_poisson_fd(grid, &f, &g, options),
        Operator::Quasilinear if all_dirichlet => solve_nonlinear_poisson_fd(grid, &f, &g, options),
        Operator::AdvectionDiffusion { nu, velocity } if k1 == Some(BcKind::Dirichlet) && k2.is_some() => {
            let n = grid.n();
            let w = evaluate_batch(velocity, grid.points().view(), &ParameterStore::new())?;
            let column = |c: usize| {
                GridField::new(grid, Array2::from_shape_vec((n, n), w.column(c).to_vec()).expect("one value per node"))
            };
            let data = AdvDiffData {
                w1: column(0)?,
                w2: column(1)?,
                nu: *nu,
                f,
                g,
                x2_faces: if k2 == Some(BcKind::Neumann) {
                    X2Faces::Neumann
                } else {
                    X2Faces::Dirichlet
                },
            };
            solve_advdiff_fd(grid, &data, options)
        }
        op => Err(RefError::Unsupported(format!(
            "{op:?} with boundary kinds {k1:?} on x1 faces and {k2:?} on x2 faces"
        ))),
    }
}

/// Observed orders `log₂(e_k / e_{k+1})` for errors on successively halved grids.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[cfg(test)]
mod tests;
