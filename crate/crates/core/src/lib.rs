//! Hierarchical physics-informed neural networks.
//!
//! A solution is represented as a sum of networks trained level by level;
//! each new level minimises the PDE and boundary residual of the composite
//! with every earlier level frozen. The crate carries its own derivative
//! engine ([`grad`]), network builders ([`nets`]), benchmark problems
//! ([`problems`]), the level trainer ([`hitrain`]) and finite-difference
//! reference solvers ([`refsolve`]).

pub mod grad;
pub mod hitrain;
pub mod nets;
pub mod problems;
pub mod refsolve;
