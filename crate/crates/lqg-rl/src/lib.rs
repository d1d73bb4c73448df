//! On-line reinforcement-learning control of linear-quadratic-Gaussian systems.
//!
//! The crate simulates a discrete-time linear system with Gaussian process and
//! observation noise, estimates its state with a Kalman filter, and learns the
//! quadratic cost-to-go matrix of the geometric-stopping control problem with
//! 1-step TD updates driven by greedy actions. Classical solutions (the
//! finite-horizon Riccati recursion and the stationary Bellman fixed point)
//! are computed in-repo and serve as oracles for the learned values.
//!
//! Modules:
//! - [`model`]: system matrices, noise covariances, quadratic costs, validation
//! - [`estimator`]: Kalman predict-correct updates of the state estimate
//! - [`planner`]: Riccati recursion, Bellman operator, stationary fixed point
//! - [`learner`]: greedy control and TD(0) learning of the value matrix
//! - [`sim`]: stochastic episode engine with geometric stopping
//! - [`cli`]: the `solve` / `filter` / `learn` / `eval` workflows

pub mod cli;
pub mod estimator;
pub mod learner;
pub mod model;
pub mod planner;
pub mod sim;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
