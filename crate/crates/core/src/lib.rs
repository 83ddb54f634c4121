//! Adaptive planning for balanced transportation and assignment problems.
//!
//! A planner solves the direct problem with its current estimate of the
//! decision-maker's reduced gains, the decision-maker labels the plan as
//! good or bad, and the estimate is refined from the labeled plans.

pub mod env;
pub mod estimator;
pub mod matrix;
pub mod model;
pub mod session;
pub mod solver;

pub use matrix::Matrix;
pub use model::{
    evaluate, reconstruct, reduce, validate_instance, Plan, ReducedLpp, ReducedPoint,
    TransportInstance,
};
