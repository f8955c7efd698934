//! Choosing a constant input that maximizes one state at steady state,
//! using a lifted linear model, and checking the choice on the true system.

mod map;
mod oracle;
mod solve;

pub use map::{objective, steady_state_map, ConstraintForm, Equilibrium, FixedPointConfig, SteadyStateEvaluator};
pub use oracle::{
    at_least_within, box_grid, brute_force_oracle, comparison_trajectories, random_inputs, settle, verify,
    OracleResult, RandomInput, SettleConfig, Settled, VerificationReport, VerifyConfig,
};
pub use solve::{latin_hypercube, solve, OptimizerConfig, StartRecord, SteadyStateProblem, SteadyStateSolution};
