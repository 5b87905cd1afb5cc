//! Expression graphs with input derivatives (value, gradient, Laplacian) and
//! reverse-mode parameter gradients of losses built from those derivatives.
//!
//! An [`Expr`] describes a function of an input point and a flat parameter
//! vector. Lowering it onto a [`Tape`] evaluates it at a batch of points and
//! forward-propagates first and pure second input derivatives as regular tape
//! nodes; [`Tape::gradient`] then differentiates any scalar built on top of
//! them with respect to the parameters of one store.

mod expr;
mod store;
mod tape;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

pub use expr::{Expr, ExprBuilder, ExprNode, NodeId, Op, Weight};
pub use store::{ParameterStore, Slice};
pub use tape::{tanh, DerivativeVars, Layout, StoreId, Tape, Unary, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("expression references parameters up to index {required} but the store holds {available}")]
    UnboundParameter { required: usize, available: usize },
    #[error("input has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected a scalar node, found shape {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("per-sample gradients requested through an operation that mixes samples")]
    NotSeparable,
    #[error("parameter store is frozen")]
    FrozenStore,
    #[error("invalid parameter layout: {0}")]
    Layout(String),
    #[error("malformed parameter snapshot: {0}")]
    Snapshot(String),
}

/// Value, input gradient and Laplacian of a scalar function at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub laplacian: f64,
}

/// Store tag used by the single-store convenience functions below.
pub const PRIMARY: StoreId = StoreId(0);

fn single_point(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("a point is a single row")
}

/// Evaluates a scalar expression at one point.
pub fn evaluate(expr: &Expr, x: &[f64], params: &ParameterStore) -> Result<f64, GradError> {
    let v = evaluate_batch(expr, single_point(x), params)?;
    if v.ncols() != 1 {
        return Err(GradError::NotScalar { rows: 1, cols: v.ncols() });
    }
    Ok(v[[0, 0]])
}

/// Evaluates an expression at every row of `points`; one output row per point.
pub fn evaluate_batch(expr: &Expr, points: ArrayView2<f64>, params: &ParameterStore) -> Result<Array2<f64>, GradError> {
    let mut tape = Tape::new();
    let v = tape.lower(expr, params, PRIMARY, points, 0)?;
    Ok(tape.value(v).clone())
}

/// Value, gradient and Laplacian of a scalar expression at one point.
pub fn input_derivatives(expr: &Expr, x: &[f64], params: &ParameterStore) -> Result<DerivativeBundle, GradError> {
    Ok(derivatives_batch(expr, single_point(x), params)?.remove(0))
}

/// [`input_derivatives`] at every row of `points`.
pub fn derivatives_batch(
    expr: &Expr,
    points: ArrayView2<f64>,
    params: &ParameterStore,
) -> Result<Vec<DerivativeBundle>, GradError> {
    if expr.output_width() != 1 {
        return Err(GradError::NotScalar {
            rows: points.nrows(),
            cols: expr.output_width(),
        });
    }
    let mut tape = Tape::new();
    let jet = tape.lower(expr, params, PRIMARY, points, 2)?;
    let layout = tape.layout(jet);
    let v = tape.value(jet);
    let r = layout.samples;
    Ok((0..r)
        .map(|i| DerivativeBundle {
            value: v[[i, 0]],
            grad_x: (0..layout.dims).map(|k| v[[layout.grad_block(k) * r + i, 0]]).collect(),
            laplacian: (0..layout.dims).map(|k| v[[layout.hess_block(k) * r + i, 0]]).sum(),
        })
        .collect())
}

/// Gradient of a scalar tape node with respect to the parameters of `store`.
pub fn parameter_gradient(tape: &Tape, loss: Var, store: StoreId, params: &ParameterStore) -> Result<Vec<f64>, GradError> {
    tape.gradient(loss, store, params.len())
}

/// `‖∇θ r_i‖²` for each sample `i` of a plain residual column.
pub fn per_sample_gradient_norms(
    tape: &Tape,
    residuals: Var,
    store: StoreId,
    params: &ParameterStore,
) -> Result<Vec<f64>, GradError> {
    let grads = tape.per_sample_gradients(residuals, store, params.len())?;
    Ok(grads.rows().into_iter().map(|row| row.dot(&row)).collect())
}
