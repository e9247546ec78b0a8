//! Checking polytopic linear difference inclusions (LDIs) for discrete-time
//! nonlinear systems.
//!
//! Given dynamics `x⁺ = f(x,u)`, an equilibrium pair `(x_s, u_s)` and a set of
//! vertex matrices `(Ā_i, B̄_i)`, the question is whether the deviation
//! successor `δx⁺ = f(x,u) − x_s` lies in the convex hull of the vertex images
//! `Ā_i δx + B̄_i δu` for every point of a compact region. The crate answers it
//! from both sides:
//!
//! * [`search::falsify`] hunts for a point where the hull is missed and returns
//!   a rigorously re-checked witness,
//! * [`certify::certify`] proves `sup` hull distance ≤ ε over the whole region
//!   by interval branch-and-bound,
//! * [`construct`] builds candidates from an interval Jacobian and tightens
//!   parametric families by bisection against the two deciders.
//!
//! Numeric kernels (`interval`, `expr`, `linalg`, `geometry`) are generic over
//! the scalar type through [`scalar::Real`]; the deciders run in `f64`.

pub mod certify;
pub mod construct;
pub mod expr;
pub mod farkas;
pub mod geometry;
pub mod interval;
pub mod linalg;
pub mod problem;
pub mod scalar;
pub mod search;

/// `f64` interval, the type the deciders work in.
pub type Interval64 = interval::Interval<f64>;
/// Single precision interval.
pub type Interval32 = interval::Interval<f32>;
/// `f64` expression tree.
pub type Expr64 = expr::Expr<f64>;
/// Single precision expression tree.
pub type Expr32 = expr::Expr<f32>;
/// Dense row-major `f64` matrix.
pub type Mat64 = linalg::Mat<f64>;
/// Dense row-major single precision matrix.
pub type Mat32 = linalg::Mat<f32>;
