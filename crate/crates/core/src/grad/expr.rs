use std::sync::Arc;

use super::GradError;

/// Index of a node inside an [`ExprBuilder`] / [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weight matrix of an affine map, stored row-major as `out × in`.
#[derive(Debug, Clone)]
pub enum Weight {
    /// Trainable: `out * in` values starting at `offset` in the bound store.
    Param { offset: usize },
    /// Not trainable (e.g. a Fourier wavenumber matrix).
    Fixed(Arc<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub enum Op {
    Constant(Vec<f64>),
    Param { offset: usize, len: usize },
    /// The whole input point.
    Input,
    /// One coordinate of the input point.
    InputComponent(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Pow(NodeId, f64),
    Scale(NodeId, f64),
    /// Inner product of two equal-width vectors.
    Dot(NodeId, NodeId),
    /// Sum of the components of a vector.
    Sum(NodeId),
    Affine {
        input: NodeId,
        weight: Weight,
        bias: Option<usize>,
        out: usize,
    },
    Concat(Vec<NodeId>),
}

#[derive(Debug, Clone)]
pub struct ExprNode {
    pub op: Op,
    pub width: usize,
}

/// Incrementally builds an expression DAG over an `input_dim`-dimensional
/// input. Operands always precede the nodes that use them, so the node
/// vector is a valid evaluation order.
///
/// Construction methods panic on width mismatches; those are programming
/// errors in the caller, not data errors.
#[derive(Debug, Clone)]
pub struct ExprBuilder {
    input_dim: usize,
    nodes: Vec<ExprNode>,
}

impl ExprBuilder {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            nodes: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self, id: NodeId) -> usize {
        self.nodes[id.0].width
    }

    fn push(&mut self, op: Op, width: usize) -> NodeId {
        self.nodes.push(ExprNode { op, width });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> usize {
        assert!(id.0 < self.nodes.len(), "node {id:?} does not belong to this builder");
        self.nodes[id.0].width
    }

    fn broadcast_width(&self, a: NodeId, b: NodeId, what: &str) -> usize {
        let (wa, wb) = (self.check(a), self.check(b));
        match (wa, wb) {
            _ if wa == wb => wa,
            (1, w) | (w, 1) => w,
            _ => panic!("{what}: incompatible widths {wa} and {wb}"),
        }
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Constant(vec![value]), 1)
    }

    pub fn constant_vec(&mut self, values: Vec<f64>) -> NodeId {
        assert!(!values.is_empty(), "empty constant vector");
        let w = values.len();
        self.push(Op::Constant(values), w)
    }

    pub fn param(&mut self, offset: usize, len: usize) -> NodeId {
        assert!(len > 0, "empty parameter reference");
        self.push(Op::Param { offset, len }, len)
    }

    pub fn input(&mut self) -> NodeId {
        self.push(Op::Input, self.input_dim)
    }

    /// The `j`-th input coordinate (zero based).
    pub fn x(&mut self, j: usize) -> NodeId {
        assert!(j < self.input_dim, "input component {j} out of range");
        self.push(Op::InputComponent(j), 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let w = self.broadcast_width(a, b, "add");
        self.push(Op::Add(a, b), w)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let w = self.broadcast_width(a, b, "sub");
        self.push(Op::Sub(a, b), w)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let w = self.broadcast_width(a, b, "mul");
        self.push(Op::Mul(a, b), w)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let w = self.broadcast_width(a, b, "div");
        self.push(Op::Div(a, b), w)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let w = self.check(a);
        self.push(Op::Neg(a), w)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let w = self.check(a);
        self.push(Op::Sin(a), w)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let w = self.check(a);
        self.push(Op::Cos(a), w)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let w = self.check(a);
        self.push(Op::Tanh(a), w)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let w = self.check(a);
        self.push(Op::Exp(a), w)
    }

    pub fn pow(&mut self, a: NodeId, exponent: f64) -> NodeId {
        let w = self.check(a);
        self.push(Op::Pow(a, exponent), w)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let w = self.check(a);
        self.push(Op::Scale(a, factor), w)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (wa, wb) = (self.check(a), self.check(b));
        assert_eq!(wa, wb, "dot: widths differ");
        self.push(Op::Dot(a, b), 1)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.check(a);
        self.push(Op::Sum(a), 1)
    }

    /// `W·input (+ b)` with trainable `W` (`out × in`, row-major) at
    /// `weight_offset` and an optional trainable bias at `bias_offset`.
    pub fn affine(&mut self, input: NodeId, out: usize, weight_offset: usize, bias_offset: Option<usize>) -> NodeId {
        self.check(input);
        assert!(out > 0, "affine map with zero outputs");
        self.push(
            Op::Affine {
                input,
                weight: Weight::Param { offset: weight_offset },
                bias: bias_offset,
                out,
            },
            out,
        )
    }

    /// `M·input` with a fixed (non-trainable) row-major `out × in` matrix.
    pub fn fixed_linear(&mut self, input: NodeId, out: usize, matrix: Arc<Vec<f64>>) -> NodeId {
        let w_in = self.check(input);
        assert_eq!(matrix.len(), out * w_in, "fixed matrix has wrong size");
        self.push(
            Op::Affine {
                input,
                weight: Weight::Fixed(matrix),
                bias: None,
                out,
            },
            out,
        )
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let w = parts.iter().map(|&p| self.check(p)).sum();
        self.push(Op::Concat(parts.to_vec()), w)
    }

    /// Freezes the graph with `root` as its output.
    pub fn build(&self, root: NodeId) -> Expr {
        self.check(root);
        Expr {
            input_dim: self.input_dim,
            nodes: Arc::from(self.nodes[..=root.0].to_vec()),
            root,
        }
    }
}

/// An immutable expression graph with a designated output node.
#[derive(Debug, Clone)]
pub struct Expr {
    input_dim: usize,
    nodes: Arc<[ExprNode]>,
    root: NodeId,
}

impl Expr {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_width(&self) -> usize {
        self.nodes[self.root.0].width
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[ExprNode] {
        &self.nodes
    }

    /// One past the highest parameter index referenced by the graph.
    pub fn param_extent(&self) -> usize {
        let mut extent = 0;
        for id in self.reachable() {
            let node = &self.nodes[id];
            let end = match &node.op {
                Op::Param { offset, len } => offset + len,
                Op::Affine { input, weight, bias, out } => {
                    let w_in = self.nodes[input.0].width;
                    let w_end = match weight {
                        Weight::Param { offset } => offset + out * w_in,
                        Weight::Fixed(_) => 0,
                    };
                    w_end.max(bias.map_or(0, |b| b + out))
                }
                _ => 0,
            };
            extent = extent.max(end);
        }
        extent
    }

    /// Ensures every parameter reference resolves inside a store of `len`.
    pub fn check_params(&self, len: usize) -> Result<(), GradError> {
        let extent = self.param_extent();
        if extent > len {
            return Err(GradError::UnboundParameter {
                required: extent,
                available: len,
            });
        }
        Ok(())
    }

    /// Indices of the nodes the root depends on, ascending.
    pub fn reachable(&self) -> Vec<usize> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack = vec![self.root.0];
        while let Some(i) = stack.pop() {
            if mark[i] {
                continue;
            }
            mark[i] = true;
            for child in operands(&self.nodes[i].op) {
                stack.push(child.0);
            }
        }
        (0..self.nodes.len()).filter(|&i| mark[i]).collect()
    }
}

pub(crate) fn operands(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Constant(_) | Op::Param { .. } | Op::Input | Op::InputComponent(_) => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Dot(a, b) => vec![*a, *b],
        Op::Neg(a)
        | Op::Sin(a)
        | Op::Cos(a)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Pow(a, _)
        | Op::Scale(a, _)
        | Op::Sum(a) => vec![*a],
        Op::Affine { input, .. } => vec![*input],
        Op::Concat(parts) => parts.clone(),
    }
}
