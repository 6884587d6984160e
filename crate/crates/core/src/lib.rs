//! Difference-of-convex solvers for the quadratic eigenvalue complementarity
//! problem: find `λ` and `0 ≠ x ≥ 0` with `w = λ²Ax + λBx + Cx ≥ 0` and
//! `xᵀw = 0`.
//!
//! The crate is organized bottom-up:
//!
//! * [`linalg`] dense kernels (Cholesky, Jacobi eigenvalues, LU).
//! * [`model`] instances, iterate points, objectives, verification, file I/O.
//! * [`subproblem`] feasible regions and the interior-point convex solver.
//! * [`bounds`] eigenvalue intervals, variable boxes and curvature constants.
//! * [`dc`] the four DC decompositions, their gradients and the quartic lifting.
//! * [`dca`] the DCA drivers, initial point and solution extraction.

pub mod bounds;
pub mod dc;
pub mod dca;
pub mod linalg;
pub mod model;
pub mod subproblem;
