//! Steady, self-gravitating, subsonic flow in a two-dimensional duct.
//!
//! The solver realizes a perturbative scheme around a one-dimensional
//! background: the steady compressible Euler equations, coupled to a Poisson
//! equation for the gravitational potential, are rewritten in terms of a
//! stream function `psi` with `rho (u, v) = (psi_x2, -psi_x1)`. Entropy and
//! the pseudo-Bernoulli quantity ride along streamlines, while the stream
//! function and potential perturbations solve a coupled linear elliptic
//! system with frozen background coefficients. A Picard loop closes the
//! nonlinearity.
//!
//! Module layout, in pipeline order:
//!
//! * [`background`] — the planar ODE for the x1-dependent base flow, its
//!   first integral, sonic (lifespan) detection, and the subsonicity margin.
//! * [`formulation`] — the algebraic density resolver, frozen coefficients
//!   of the linearized operators, nonlinear remainder terms, and the exit
//!   pressure condition recast as stream-function data.
//! * [`elliptic`] — assembly and direct/iterative solution of the coupled
//!   linear system on the tensor grid, plus coercivity diagnostics.
//! * [`transport`] — monotone inversion of the inlet stream-function trace
//!   and composition transport of scalars along streamlines.
//! * [`driver`] — the fixed-point iteration, field reconstruction, residual
//!   reports, and the stability / uniqueness experiments.
//! * [`boundary`] — closed-form boundary data families.
//!
//! All numerics are deliberately deterministic: no threads, no
//! platform-dependent reductions, seeded randomness only in experiments.

pub mod background;
pub mod boundary;
pub mod driver;
pub mod elliptic;
pub mod error;
pub mod formulation;
pub mod grid;
pub mod linalg;
pub mod transport;

pub use background::{BackgroundParams, BackgroundSolution, CriticalData, SubsonicMargin};
pub use error::SolverError;
pub use grid::{Grid, ScalarField};
