//! Batched reverse-mode tape with forward propagation of input derivatives.
//!
//! Every tape node holds a matrix whose rows are grouped into *blocks*: block
//! 0 holds values at each of `samples` points, blocks `1..=n` the first
//! derivatives along each input coordinate, and (for second order) blocks
//! `n+1..=2n` the pure second derivatives. Input derivatives are ordinary
//! tape nodes, so the reverse sweep differentiates losses built from them
//! with respect to parameters.

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::expr::{Expr, Op, Weight};
use super::{GradError, ParameterStore};

/// Tag naming which parameter store a tape node reads from. At most 64
/// stores may take part in one tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoreId(pub u8);

impl StoreId {
    fn bit(self) -> u64 {
        assert!(self.0 < 64, "store id {} out of range", self.0);
        1u64 << self.0
    }
}

/// Row structure of a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub samples: usize,
    pub dims: usize,
    /// 0: values only, 1: values and gradients, 2: plus Hessian diagonal.
    pub order: u8,
}

impl Layout {
    pub fn plain(samples: usize) -> Self {
        Self {
            samples,
            dims: 0,
            order: 0,
        }
    }

    pub fn jet(samples: usize, dims: usize, order: u8) -> Self {
        assert!(order <= 2, "derivative order {order} unsupported");
        if order == 0 {
            return Self::plain(samples);
        }
        Self { samples, dims, order }
    }

    pub fn blocks(&self) -> usize {
        1 + self.order as usize * self.dims
    }

    pub fn rows(&self) -> usize {
        self.blocks() * self.samples
    }

    pub fn grad_block(&self, k: usize) -> usize {
        debug_assert!(self.order >= 1 && k < self.dims);
        1 + k
    }

    pub fn hess_block(&self, k: usize) -> usize {
        debug_assert!(self.order == 2 && k < self.dims);
        1 + self.dims + k
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Smooth scalar functions applied elementwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sin,
    Cos,
    Tanh,
    Exp,
    Recip,
    Pow(f64),
}

/// `tanh` through `expm1`, which is markedly cheaper than the libm routine
/// and keeps full relative accuracy near zero.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

impl Unary {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => tanh(x),
            Unary::Exp => x.exp(),
            Unary::Recip => 1.0 / x,
            Unary::Pow(p) => powf(x, p),
        }
    }

    /// First three derivatives at `x`, given `y = f(x)`.
    #[inline]
    fn derivs(self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Unary::Sin => {
                let c = x.cos();
                [c, -y, -c]
            }
            Unary::Cos => {
                let s = x.sin();
                [-s, -y, s]
            }
            Unary::Tanh => {
                let d1 = 1.0 - y * y;
                let d2 = -2.0 * y * d1;
                let d3 = -2.0 * d1 * d1 - 2.0 * y * d2;
                [d1, d2, d3]
            }
            Unary::Exp => [y, y, y],
            Unary::Recip => {
                let y2 = y * y;
                [-y2, 2.0 * y2 * y, -6.0 * y2 * y2]
            }
            Unary::Pow(p) => [
                p * powf(x, p - 1.0),
                p * (p - 1.0) * powf(x, p - 2.0),
                p * (p - 1.0) * (p - 2.0) * powf(x, p - 3.0),
            ],
        }
    }
}

#[inline]
fn powf(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        1.0
    } else if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

#[derive(Debug, Clone, Copy)]
enum WeightSrc {
    Param { store: StoreId, offset: usize },
    Fixed,
}

#[derive(Debug, Clone)]
enum TOp {
    Leaf,
    Param {
        store: StoreId,
        offset: usize,
    },
    Affine {
        x: usize,
        /// `out × in`.
        w: Arc<Array2<f64>>,
        src: WeightSrc,
        bias: Option<(StoreId, usize)>,
    },
    Unary {
        x: usize,
        f: Unary,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    SumCols(usize),
    Concat(Vec<usize>),
    Block {
        x: usize,
        block: usize,
    },
    Mean(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    layout: Layout,
    op: TOp,
    /// Bitmask of stores this node depends on.
    deps: u64,
}

/// Value, gradient and Laplacian of a scalar jet, as plain tape nodes.
#[derive(Debug, Clone)]
pub struct DerivativeVars {
    pub value: Var,
    pub grad: Vec<Var>,
    pub laplacian: Option<Var>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn block_view(a: &Array2<f64>, layout: Layout, b: usize) -> ArrayView2<'_, f64> {
    let r = layout.samples;
    a.slice(s![b * r..(b + 1) * r, ..])
}

/// Sums columns when an operand was broadcast along them.
fn reduce_to_width(g: Array2<f64>, width: usize) -> Array2<f64> {
    if g.ncols() == width {
        g
    } else {
        debug_assert_eq!(width, 1);
        g.sum_axis(Axis(1)).insert_axis(Axis(1))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

enum Sink<'a> {
    Total(&'a mut [f64]),
    PerSample(&'a mut Array2<f64>),
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn layout(&self, v: Var) -> Layout {
        self.nodes[v.0].layout
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64, GradError> {
        let a = self.value(v);
        if a.dim() != (1, 1) {
            return Err(GradError::NotScalar {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        Ok(a[[0, 0]])
    }

    /// Whether `v` depends on parameters of `store`.
    pub fn depends_on(&self, v: Var, store: StoreId) -> bool {
        self.nodes[v.0].deps & store.bit() != 0
    }

    fn push(&mut self, mut value: Array2<f64>, layout: Layout, op: TOp, deps: u64) -> Var {
        debug_assert_eq!(value.nrows(), layout.rows());
        if !value.is_standard_layout() {
            value = value.as_standard_layout().into_owned();
        }
        self.nodes.push(Node {
            value,
            layout,
            op,
            deps,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant node; `value` must have `layout.rows()` rows.
    pub fn constant(&mut self, value: Array2<f64>, layout: Layout) -> Var {
        assert_eq!(value.nrows(), layout.rows(), "constant rows do not match layout");
        self.push(value, layout, TOp::Leaf, 0)
    }

    /// A plain `n × 1` constant column.
    pub fn column(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap();
        self.constant(a, Layout::plain(values.len()))
    }

    fn binary_layout(&self, a: Var, b: Var, what: &str) -> (Layout, usize) {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        assert_eq!(na.layout, nb.layout, "{what}: layouts differ");
        let (wa, wb) = (na.value.ncols(), nb.value.ncols());
        let w = match (wa, wb) {
            _ if wa == wb => wa,
            (1, w) | (w, 1) => w,
            _ => panic!("{what}: incompatible widths {wa} and {wb}"),
        };
        (na.layout, w)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (layout, _) = self.binary_layout(a, b, "add");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let deps = self.nodes[a.0].deps | self.nodes[b.0].deps;
        self.push(value, layout, TOp::Add(a.0, b.0), deps)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (layout, _) = self.binary_layout(a, b, "sub");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let deps = self.nodes[a.0].deps | self.nodes[b.0].deps;
        self.push(value, layout, TOp::Sub(a.0, b.0), deps)
    }

    /// Product with the Leibniz rule applied across derivative blocks.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (layout, w) = self.binary_layout(a, b, "mul");
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut y = Array2::zeros((layout.rows(), w));
        let blk = |m: &Array2<f64>, i: usize| block_view(m, layout, i).to_owned();
        let (a0, b0) = (blk(av, 0), blk(bv, 0));
        let r = layout.samples;
        y.slice_mut(s![0..r, ..]).assign(&(&a0 * &b0));
        for k in 0..layout.dims {
            if layout.order == 0 {
                break;
            }
            let gb = layout.grad_block(k);
            let (ak, bk) = (blk(av, gb), blk(bv, gb));
            let g = &(&ak * &b0) + &(&a0 * &bk);
            y.slice_mut(s![gb * r..(gb + 1) * r, ..]).assign(&g);
            if layout.order == 2 {
                let hb = layout.hess_block(k);
                let (ah, bh) = (blk(av, hb), blk(bv, hb));
                let h = &(&(&ah * &b0) + &(&(&ak * &bk) * 2.0)) + &(&a0 * &bh);
                y.slice_mut(s![hb * r..(hb + 1) * r, ..]).assign(&h);
            }
        }
        let deps = self.nodes[a.0].deps | self.nodes[b.0].deps;
        self.push(y, layout, TOp::Mul(a.0, b.0), deps)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let node = &self.nodes[a.0];
        let value = &node.value * factor;
        let (layout, deps) = (node.layout, node.deps);
        self.push(value, layout, TOp::Scale(a.0, factor), deps)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let node = &self.nodes[x.0];
        let layout = node.layout;
        let xs = node.value.as_slice().expect("tape values are contiguous");
        let width = node.value.ncols();
        let s = layout.samples * width;
        let n = layout.dims;
        let mut out = Vec::with_capacity(xs.len());
        out.extend(xs[..s].iter().map(|&v| f.apply(v)));
        if layout.order > 0 {
            out.resize(xs.len(), 0.0);
            let (y0, rest) = out.split_at_mut(s);
            let d: Vec<[f64; 3]> = xs[..s].iter().zip(y0.iter()).map(|(&v, &y)| f.derivs(v, y)).collect();
            for k in 0..n {
                let (gx, gy) = (&xs[(1 + k) * s..(2 + k) * s], &mut rest[k * s..(k + 1) * s]);
                for ((o, &g), dd) in gy.iter_mut().zip(gx).zip(&d) {
                    *o = dd[0] * g;
                }
                if layout.order == 2 {
                    let hx = &xs[(1 + n + k) * s..(2 + n + k) * s];
                    let hy = &mut rest[(n + k) * s..(n + k + 1) * s];
                    for (((o, &h), &g), dd) in hy.iter_mut().zip(hx).zip(gx).zip(&d) {
                        *o = dd[1] * g * g + dd[0] * h;
                    }
                }
            }
        }
        let y = Array2::from_shape_vec(node.value.raw_dim(), out).expect("shape preserved");
        let deps = node.deps;
        self.push(y, layout, TOp::Unary { x: x.0, f }, deps)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let (layout, deps) = (node.layout, node.deps);
        self.push(value, layout, TOp::SumCols(a.0), deps)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let layout = self.nodes[parts[0].0].layout;
        for p in parts {
            assert_eq!(self.nodes[p.0].layout, layout, "concat: layouts differ");
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = concatenate(Axis(1), &views).unwrap();
        let deps = parts.iter().fold(0, |d, p| d | self.nodes[p.0].deps);
        self.push(value, layout, TOp::Concat(parts.iter().map(|p| p.0).collect()), deps)
    }

    /// Extracts one derivative block as a plain node.
    pub fn block(&mut self, x: Var, block: usize) -> Var {
        let node = &self.nodes[x.0];
        assert!(block < node.layout.blocks(), "block {block} out of range");
        let value = block_view(&node.value, node.layout, block).to_owned();
        let (layout, deps) = (Layout::plain(node.layout.samples), node.deps);
        self.push(value, layout, TOp::Block { x: x.0, block }, deps)
    }

    /// Mean over every entry of a plain node, giving a `1 × 1` node.
    pub fn mean(&mut self, x: Var) -> Var {
        let node = &self.nodes[x.0];
        assert_eq!(node.layout.order, 0, "mean of a jet node");
        let m = node.value.mean().unwrap_or(0.0);
        let deps = node.deps;
        self.push(Array2::from_elem((1, 1), m), Layout::plain(1), TOp::Mean(x.0), deps)
    }

    /// Splits a scalar jet into value, gradient and Laplacian nodes.
    pub fn derivatives(&mut self, jet: Var) -> DerivativeVars {
        let layout = self.layout(jet);
        assert_eq!(self.value(jet).ncols(), 1, "derivatives of a vector-valued node");
        let value = self.block(jet, 0);
        let grad = if layout.order >= 1 {
            (0..layout.dims).map(|k| self.block(jet, layout.grad_block(k))).collect()
        } else {
            Vec::new()
        };
        let laplacian = if layout.order == 2 {
            let mut acc = self.block(jet, layout.hess_block(0));
            for k in 1..layout.dims {
                let h = self.block(jet, layout.hess_block(k));
                acc = self.add(acc, h);
            }
            Some(acc)
        } else {
            None
        };
        DerivativeVars { value, grad, laplacian }
    }

    /// Records `expr` evaluated at each row of `points`, propagating input
    /// derivatives up to `order`. Parameter references read from `params`
    /// and are attributed to `store` for differentiation.
    pub fn lower(
        &mut self,
        expr: &Expr,
        params: &ParameterStore,
        store: StoreId,
        points: ArrayView2<f64>,
        order: u8,
    ) -> Result<Var, GradError> {
        let n = expr.input_dim();
        if points.ncols() != n {
            return Err(GradError::DimensionMismatch {
                expected: n,
                got: points.ncols(),
            });
        }
        expr.check_params(params.len())?;
        let theta = params.values();
        let layout = Layout::jet(points.nrows(), n, order);
        let r = layout.samples;
        let rows = layout.rows();
        let nodes = expr.nodes();
        let mut memo: Vec<Option<Var>> = vec![None; nodes.len()];
        let get = |memo: &Vec<Option<Var>>, id: super::NodeId| memo[id.index()].expect("operand lowered first");
        for i in expr.reachable() {
            let node = &nodes[i];
            let var = match &node.op {
                Op::Constant(c) => {
                    let mut v = Array2::zeros((rows, c.len()));
                    let row = Array1::from(c.clone());
                    v.slice_mut(s![0..r, ..]).assign(&row);
                    self.push(v, layout, TOp::Leaf, 0)
                }
                Op::Param { offset, len } => {
                    let mut v = Array2::zeros((rows, *len));
                    let row = Array1::from(theta[*offset..offset + len].to_vec());
                    v.slice_mut(s![0..r, ..]).assign(&row);
                    self.push(v, layout, TOp::Param { store, offset: *offset }, store.bit())
                }
                Op::Input => {
                    let mut v = Array2::zeros((rows, n));
                    v.slice_mut(s![0..r, ..]).assign(&points);
                    for k in 0..layout.dims {
                        let b = layout.grad_block(k);
                        v.slice_mut(s![b * r..(b + 1) * r, k]).fill(1.0);
                    }
                    self.push(v, layout, TOp::Leaf, 0)
                }
                Op::InputComponent(j) => {
                    let mut v = Array2::zeros((rows, 1));
                    v.slice_mut(s![0..r, 0]).assign(&points.column(*j));
                    if layout.order >= 1 {
                        let b = layout.grad_block(*j);
                        v.slice_mut(s![b * r..(b + 1) * r, 0]).fill(1.0);
                    }
                    self.push(v, layout, TOp::Leaf, 0)
                }
                Op::Add(a, b) => {
                    let (a, b) = (get(&memo, *a), get(&memo, *b));
                    self.add(a, b)
                }
                Op::Sub(a, b) => {
                    let (a, b) = (get(&memo, *a), get(&memo, *b));
                    self.sub(a, b)
                }
                Op::Mul(a, b) => {
                    let (a, b) = (get(&memo, *a), get(&memo, *b));
                    self.mul(a, b)
                }
                Op::Div(a, b) => {
                    let (a, b) = (get(&memo, *a), get(&memo, *b));
                    let inv = self.unary(b, Unary::Recip);
                    self.mul(a, inv)
                }
                Op::Neg(a) => {
                    let a = get(&memo, *a);
                    self.scale(a, -1.0)
                }
                Op::Sin(a) => {
                    let a = get(&memo, *a);
                    self.unary(a, Unary::Sin)
                }
                Op::Cos(a) => {
                    let a = get(&memo, *a);
                    self.unary(a, Unary::Cos)
                }
                Op::Tanh(a) => {
                    let a = get(&memo, *a);
                    self.unary(a, Unary::Tanh)
                }
                Op::Exp(a) => {
                    let a = get(&memo, *a);
                    self.unary(a, Unary::Exp)
                }
                Op::Pow(a, p) => {
                    let a = get(&memo, *a);
                    self.unary(a, Unary::Pow(*p))
                }
                Op::Scale(a, c) => {
                    let a = get(&memo, *a);
                    self.scale(a, *c)
                }
                Op::Dot(a, b) => {
                    let (a, b) = (get(&memo, *a), get(&memo, *b));
                    let p = self.mul(a, b);
                    self.sum_cols(p)
                }
                Op::Sum(a) => {
                    let a = get(&memo, *a);
                    self.sum_cols(a)
                }
                Op::Affine { input, weight, bias, out } => {
                    let x = get(&memo, *input);
                    let w_in = nodes[input.index()].width;
                    let (w, src) = match weight {
                        Weight::Param { offset } => (
                            Array2::from_shape_vec((*out, w_in), theta[*offset..offset + out * w_in].to_vec()).unwrap(),
                            WeightSrc::Param {
                                store,
                                offset: *offset,
                            },
                        ),
                        Weight::Fixed(m) => (
                            Array2::from_shape_vec((*out, w_in), m.as_ref().clone()).unwrap(),
                            WeightSrc::Fixed,
                        ),
                    };
                    let bias = bias.map(|b| (b, &theta[b..b + out]));
                    self.affine(x, Arc::new(w), src, bias, store)
                }
                Op::Concat(parts) => {
                    let vars: Vec<Var> = parts.iter().map(|p| get(&memo, *p)).collect();
                    self.concat(&vars)
                }
            };
            memo[i] = Some(var);
        }
        Ok(memo[expr.root().index()].unwrap())
    }

    fn affine(
        &mut self,
        x: Var,
        w: Arc<Array2<f64>>,
        src: WeightSrc,
        bias: Option<(usize, &[f64])>,
        store: StoreId,
    ) -> Var {
        let node = &self.nodes[x.0];
        let layout = node.layout;
        let mut y = node.value.dot(&w.t());
        let mut deps = node.deps;
        if let WeightSrc::Param { store, .. } = src {
            deps |= store.bit();
        }
        let bias_ref = bias.map(|(offset, b)| {
            let r = layout.samples;
            let row = ndarray::ArrayView1::from(b);
            let mut head = y.slice_mut(s![0..r, ..]);
            head += &row;
            deps |= store.bit();
            (store, offset)
        });
        self.push(
            y,
            layout,
            TOp::Affine {
                x: x.0,
                w,
                src,
                bias: bias_ref,
            },
            deps,
        )
    }

    /// Gradient of the `1 × 1` node `root` with respect to every parameter
    /// of `store` (a store of `len` values).
    pub fn gradient(&self, root: Var, store: StoreId, len: usize) -> Result<Vec<f64>, GradError> {
        self.scalar(root)?;
        let mut grad = vec![0.0; len];
        let seed = Array2::from_elem((1, 1), 1.0);
        self.backward(root, seed, store, Sink::Total(&mut grad))?;
        Ok(grad)
    }

    /// Per-sample gradients of a plain `samples × 1` residual node: row `i`
    /// is the gradient of residual `i` with respect to `store`.
    pub fn per_sample_gradients(&self, root: Var, store: StoreId, len: usize) -> Result<Array2<f64>, GradError> {
        let node = &self.nodes[root.0];
        if node.layout.order != 0 || node.value.ncols() != 1 {
            return Err(GradError::NotScalar {
                rows: node.value.nrows(),
                cols: node.value.ncols(),
            });
        }
        let r = node.layout.samples;
        let mut acc = Array2::zeros((r, len));
        let seed = Array2::from_elem((r, 1), 1.0);
        self.backward(root, seed, store, Sink::PerSample(&mut acc))?;
        Ok(acc)
    }

    fn backward(&self, root: Var, seed: Array2<f64>, store: StoreId, mut sink: Sink<'_>) -> Result<(), GradError> {
        let bit = store.bit();
        let per_sample = matches!(sink, Sink::PerSample(_));
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].deps & bit == 0 {
            return Ok(());
        }
        adj[root.0] = Some(seed);
        let wants = |i: usize| self.nodes[i].deps & bit != 0;
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let layout = node.layout;
            match &node.op {
                TOp::Leaf => {}
                TOp::Param { store: s_id, offset } => {
                    if *s_id != store {
                        continue;
                    }
                    let r = layout.samples;
                    let head = g.slice(s![0..r, ..]);
                    let width = head.ncols();
                    match &mut sink {
                        Sink::Total(out) => {
                            let sum = head.sum_axis(Axis(0));
                            for (o, v) in out[*offset..offset + width].iter_mut().zip(sum.iter()) {
                                *o += v;
                            }
                        }
                        Sink::PerSample(acc) => {
                            let mut dst = acc.slice_mut(s![.., *offset..offset + width]);
                            dst += &head;
                        }
                    }
                }
                TOp::Affine { x, w, src, bias } => {
                    let xv = &self.nodes[*x].value;
                    if wants(*x) {
                        accumulate(&mut adj[*x], g.dot(w.as_ref()));
                    }
                    if let WeightSrc::Param { store: s_id, offset } = src {
                        if *s_id == store {
                            let (out, w_in) = w.dim();
                            match &mut sink {
                                Sink::Total(dst) => {
                                    let gw = g.t().dot(xv);
                                    let gw = gw.as_standard_layout();
                                    for (o, v) in dst[*offset..offset + out * w_in]
                                        .iter_mut()
                                        .zip(gw.as_slice().unwrap())
                                    {
                                        *o += v;
                                    }
                                }
                                Sink::PerSample(acc) => {
                                    per_sample_outer(acc, &g, xv, layout, *offset, out, w_in);
                                }
                            }
                        }
                    }
                    if let Some((s_id, offset)) = bias {
                        if *s_id == store {
                            let r = layout.samples;
                            let head = g.slice(s![0..r, ..]);
                            let out = head.ncols();
                            match &mut sink {
                                Sink::Total(dst) => {
                                    let sum = head.sum_axis(Axis(0));
                                    for (o, v) in dst[*offset..offset + out].iter_mut().zip(sum.iter()) {
                                        *o += v;
                                    }
                                }
                                Sink::PerSample(acc) => {
                                    let mut d = acc.slice_mut(s![.., *offset..offset + out]);
                                    d += &head;
                                }
                            }
                        }
                    }
                }
                TOp::Unary { x, f } => {
                    if wants(*x) {
                        let dx = unary_backward(*f, &self.nodes[*x].value, &node.value, &g, layout);
                        accumulate(&mut adj[*x], dx);
                    }
                }
                TOp::Add(a, b) | TOp::Sub(a, b) => {
                    let negate_b = matches!(node.op, TOp::Sub(..));
                    if wants(*a) {
                        let wa = self.nodes[*a].value.ncols();
                        accumulate(&mut adj[*a], reduce_to_width(g.clone(), wa));
                    }
                    if wants(*b) {
                        let wb = self.nodes[*b].value.ncols();
                        let gb = if negate_b { -&g } else { g.clone() };
                        accumulate(&mut adj[*b], reduce_to_width(gb, wb));
                    }
                }
                TOp::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if wants(*a) {
                        let da = mul_backward(&g, bv, layout);
                        accumulate(&mut adj[*a], reduce_to_width(da, av.ncols()));
                    }
                    if wants(*b) {
                        let db = mul_backward(&g, av, layout);
                        accumulate(&mut adj[*b], reduce_to_width(db, bv.ncols()));
                    }
                }
                TOp::Scale(x, c) => {
                    if wants(*x) {
                        accumulate(&mut adj[*x], g * *c);
                    }
                }
                TOp::SumCols(x) => {
                    if wants(*x) {
                        let w = self.nodes[*x].value.ncols();
                        let full = g.broadcast((g.nrows(), w)).unwrap().to_owned();
                        accumulate(&mut adj[*x], full);
                    }
                }
                TOp::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        if wants(p) {
                            accumulate(&mut adj[p], g.slice(s![.., col..col + w]).to_owned());
                        }
                        col += w;
                    }
                }
                TOp::Block { x, block } => {
                    if wants(*x) {
                        let src = &self.nodes[*x];
                        let r = src.layout.samples;
                        let mut full = Array2::zeros(src.value.raw_dim());
                        full.slice_mut(s![block * r..(block + 1) * r, ..]).assign(&g);
                        accumulate(&mut adj[*x], full);
                    }
                }
                TOp::Mean(x) => {
                    if per_sample {
                        return Err(GradError::NotSeparable);
                    }
                    if wants(*x) {
                        let src = &self.nodes[*x].value;
                        let fill = g[[0, 0]] / src.len() as f64;
                        accumulate(&mut adj[*x], Array2::from_elem(src.raw_dim(), fill));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adjoint of one Leibniz-product operand, given the other operand's jet.
fn mul_backward(g: &Array2<f64>, other: &Array2<f64>, layout: Layout) -> Array2<f64> {
    let r = layout.samples;
    let w = g.ncols();
    let mut d = Array2::zeros((layout.rows(), w));
    let gb = |i: usize| block_view(g, layout, i);
    let ob = |i: usize| block_view(other, layout, i);
    let o0 = ob(0);
    let mut d0 = &gb(0) * &o0;
    if layout.order >= 1 {
        for k in 0..layout.dims {
            let bg = layout.grad_block(k);
            d0 += &(&gb(bg) * &ob(bg));
            let mut dk = &gb(bg) * &o0;
            if layout.order == 2 {
                let bh = layout.hess_block(k);
                d0 += &(&gb(bh) * &ob(bh));
                dk += &(&(&gb(bh) * &ob(bg)) * 2.0);
                d.slice_mut(s![bh * r..(bh + 1) * r, ..]).assign(&(&gb(bh) * &o0));
            }
            d.slice_mut(s![bg * r..(bg + 1) * r, ..]).assign(&dk);
        }
    }
    d.slice_mut(s![0..r, ..]).assign(&d0);
    d
}

fn unary_backward(f: Unary, x: &Array2<f64>, y: &Array2<f64>, g: &Array2<f64>, layout: Layout) -> Array2<f64> {
    let xs = x.as_slice().unwrap();
    let ys = y.as_slice().unwrap();
    let g = g.as_standard_layout();
    let gs = g.as_slice().unwrap();
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    let ds = dx.as_slice_mut().unwrap();
    let s = layout.samples * x.ncols();
    let n = layout.dims;
    if layout.order == 0 {
        for e in 0..s {
            let [d1, _, _] = f.derivs(xs[e], ys[e]);
            ds[e] = gs[e] * d1;
        }
        return dx;
    }
    for e in 0..s {
        let [d1, d2, d3] = f.derivs(xs[e], ys[e]);
        let mut dv = gs[e] * d1;
        for k in 0..n {
            let gi = (1 + k) * s + e;
            let gv = xs[gi];
            let ag = gs[gi];
            dv += ag * d2 * gv;
            let mut dg = ag * d1;
            if layout.order == 2 {
                let hi = (1 + n + k) * s + e;
                let ah = gs[hi];
                dv += ah * (d3 * gv * gv + d2 * xs[hi]);
                dg += 2.0 * ah * d2 * gv;
                ds[hi] = ah * d1;
            }
            ds[gi] = dg;
        }
        ds[e] = dv;
    }
    dx
}

/// Accumulates `Σ_blocks g[b,i] ⊗ x[b,i]` into row `i` of `acc`.
fn per_sample_outer(
    acc: &mut Array2<f64>,
    g: &Array2<f64>,
    x: &Array2<f64>,
    layout: Layout,
    offset: usize,
    out: usize,
    w_in: usize,
) {
    let r = layout.samples;
    for i in 0..r {
        let mut row = acc.row_mut(i);
        let dst = row.as_slice_mut().unwrap();
        let dst = &mut dst[offset..offset + out * w_in];
        for b in 0..layout.blocks() {
            let gr = g.row(b * r + i);
            let xr = x.row(b * r + i);
            for (o, &go) in gr.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                for (d, &xv) in dst[o * w_in..(o + 1) * w_in].iter_mut().zip(xr.iter()) {
                    *d += go * xv;
                }
            }
        }
    }
}
