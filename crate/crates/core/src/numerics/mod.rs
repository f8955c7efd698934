//! Dense linear algebra and fixed-step ODE integration shared by the rest of
//! the crate.

pub mod linalg;
pub mod matrix;
pub mod ode;

pub use linalg::{
    eigenvalues, pseudoinverse, pseudoinverse_detailed, solve_linear, solve_linear_with, svd, CheckedLu,
    LinearSolution, Lu, Pseudoinverse, Svd, DEFAULT_MAX_CONDITION, DEFAULT_RANK_TOL,
};
pub use matrix::Matrix;
pub use ode::{integrate, rk4_step, FnField, Trajectory, VectorField};
