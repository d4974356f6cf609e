//! Error taxonomy for the solver pipeline.
//!
//! Errors double as control flow for the nonlinear driver: a failed density
//! resolution or a lost stream-function monotonicity mean the current iterate
//! left the admissible neighborhood of the background, which the driver
//! reports together with the offending iterate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The 1D integration ran into the sonic transition before the duct
    /// exit: the requested length exceeds the lifespan of these inlet data.
    #[error("sonic approach at x1 = {x1_reached:.6e}: duct length exceeds the admissible lifespan; shorten the duct or move the inlet density away from sonic")]
    SonicApproach { x1_reached: f64 },

    /// No density on the subsonic branch satisfies the Bernoulli-type
    /// algebraic relation at this state.
    #[error("no subsonic density root at q = ({q1:.4e}, {q2:.4e}), z = {z:.4e}, s = {s:.4e}")]
    NoSubsonicRoot { q1: f64, q2: f64, z: f64, s: f64 },

    /// The vertical mass flux m0 + q2 dropped below m0/2, outside the
    /// neighborhood where the entropy source term is defined.
    #[error("vertical mass flux m0 + q2 = {flux:.4e} below the m0/2 floor")]
    DegenerateVerticalFlux { flux: f64 },

    /// The stream function stopped being strictly increasing across the
    /// duct, so inlet ordinates can no longer label streamlines.
    #[error("stream function monotonicity lost: min cross-duct slope {min_slope:.4e} < floor {floor:.4e}")]
    MonotonicityLost { min_slope: f64, floor: f64 },

    /// An iterate escaped the box |(phi, Psi)| <= delta.
    #[error("iterate left the box: sup |(phi, Psi)| = {sup:.4e} > delta = {delta:.4e}")]
    LeftIterationBox { sup: f64, delta: f64 },

    #[error("fixed-point iteration did not converge within {iters} iterations (last difference {last_diff:.4e})")]
    MaxItersExceeded { iters: usize, last_diff: f64 },

    #[error("assembly failure: {0}")]
    Assembly(String),

    #[error("linear solve failure: {0}")]
    LinearSolve(String),

    #[error("eigenvalue estimate failed: {0}")]
    Eigen(String),
}
