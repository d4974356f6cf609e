//! Stream-function formulation: the algebraic density resolver, the frozen
//! coefficients of the linearized system, the nonlinear remainders, and the
//! exit pressure condition.
//!
//! With `rho (u, v) = (psi_x2, -psi_x1)` the momentum is `q = grad psi` and
//! the pseudo-Bernoulli relation becomes an algebraic equation for the
//! density given momentum, potential and entropy:
//!
//! ```text
//!   R(rho; q, z, s, k) = |q|^2/(2 rho^2) + gamma rho^{gamma-1} e^s/(gamma-1) + z - k = 0.
//! ```
//!
//! For fixed data the map rho -> R dips to a minimum at the local sonic
//! density (|q|^2/(gamma e^s))^{1/(gamma+1)} and increases beyond it; the
//! subsonic branch is the root on the increasing side, where dR/drho > 0.
//! `resolve_density` picks exactly that root (Newton, bisection-safeguarded).
//!
//! Writing `A_i = q_i / Q` and `B = Q` for the resolved density `Q`,
//! the first-order Taylor pieces of (A, B) at the background momentum
//! `(0, m0)`, potential `Phi0` and entropy `S0` give the coefficient
//! profiles of the linear solver:
//!
//! ```text
//!   a11 = 1/rho,  a22 = c^2/(rho nu),  b2 = -c2 = m0/(rho nu),  d = -rho/nu,
//! ```
//!
//! with `nu = c^2 - u^2` from the background module (off-diagonal momentum
//! derivatives vanish because the background runs straight down the duct).
//! What the first-order pieces miss is returned by the remainder functions
//! `remainder_flux` (for A) and `remainder_g` (for B), evaluated in closed
//! Taylor-remainder form; their path-integral forms survive in the test
//! suite as quadrature oracles. `remainder_f` is the vorticity source fed
//! by transverse entropy (and pseudo-Bernoulli) variation.
//!
//! The exit condition trades the prescribed pressure for a Dirichlet-type
//! condition on the stream function: given exit pressure, entropy and
//! potential, the pseudo-Bernoulli relation pins |grad psi|^2, and `exit_h`
//! returns the implied vertical derivative of the perturbation.

use crate::background::BackgroundSolution;
use crate::error::SolverError;
use crate::grid::ScalarField;

/// One iterate of the nonlinear solver: perturbations of the stream
/// function and the potential, plus the transported entropy and
/// pseudo-Bernoulli fields that close the algebraic density relation.
#[derive(Debug, Clone)]
pub struct PerturbationState {
    /// Stream-function perturbation (vanishes on walls; Dirichlet exit).
    pub phi: ScalarField,
    /// Gravitational potential perturbation.
    pub psi: ScalarField,
    /// Absolute entropy field (background level plus transported inlet
    /// perturbation).
    pub entropy: ScalarField,
    /// Pseudo-Bernoulli field; identically zero under the inlet
    /// normalization.
    pub kappa: ScalarField,
}

/// Pseudo-Bernoulli residual R(rho; q, z, s, k) as above.
#[inline]
pub fn bernoulli_residual(gamma: f64, rho: f64, q_norm2: f64, z: f64, s: f64, k: f64) -> f64 {
    0.5 * q_norm2 / (rho * rho) + gamma * rho.powf(gamma - 1.0) * s.exp() / (gamma - 1.0) + z - k
}

/// d/drho of [`bernoulli_residual`]; positive on the subsonic branch.
#[inline]
pub fn bernoulli_residual_drho(gamma: f64, rho: f64, q_norm2: f64, s: f64) -> f64 {
    -q_norm2 / (rho * rho * rho) + gamma * rho.powf(gamma - 2.0) * s.exp()
}

/// Density at which the residual's rho-derivative vanishes for this
/// momentum magnitude and entropy: the local sonic density.
#[inline]
pub fn local_sonic_density(gamma: f64, q_norm2: f64, s: f64) -> f64 {
    (q_norm2 / (gamma * s.exp())).powf(1.0 / (gamma + 1.0))
}

/// Solve R(rho) = 0 on the subsonic branch.
///
/// Newton from `guess`, kept inside a bracket that is tightened as a side
/// effect; any step leaving the bracket falls back to bisection. The search
/// stays within (local sonic density, `rho_cap`); a root outside means the
/// state left the perturbative neighborhood and is reported as such.
pub fn resolve_density(
    gamma: f64,
    q: [f64; 2],
    z: f64,
    s: f64,
    k: f64,
    guess: f64,
    rho_cap: f64,
) -> Result<f64, SolverError> {
    let q_norm2 = q[0] * q[0] + q[1] * q[1];
    let no_root = || SolverError::NoSubsonicRoot {
        q1: q[0],
        q2: q[1],
        z,
        s,
    };

    let res = |rho: f64| bernoulli_residual(gamma, rho, q_norm2, z, s, k);
    let slope = |rho: f64| bernoulli_residual_drho(gamma, rho, q_norm2, s);

    // Left end of the subsonic branch: just beyond the residual's minimum.
    let sonic = local_sonic_density(gamma, q_norm2, s);
    let mut lo = if sonic > 0.0 {
        sonic * (1.0 + 1e-9)
    } else {
        1e-12 * rho_cap
    };
    let mut hi = rho_cap;
    if !(lo < hi) || res(lo) > 0.0 || res(hi) < 0.0 {
        // Either the minimum is already positive (no root at all) or the
        // subsonic root sits beyond the cap.
        return Err(no_root());
    }

    let mut x = guess.clamp(lo, hi);
    for _ in 0..120 {
        let r = res(x);
        // An exact root happens routinely (unperturbed states reproduce the
        // background bitwise); stepping away from it would only reintroduce
        // rounding.
        if r == 0.0 {
            break;
        }
        if r < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let dr = slope(x);
        let newton_ok = dr > 0.0;
        let mut next = if newton_ok { x - r / dr } else { f64::NAN };
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * x {
            break;
        }
    }

    // Accept only a genuine subsonic root.
    let scale = (0.5 * q_norm2 / (x * x))
        .abs()
        .max(gamma * x.powf(gamma - 1.0) * s.exp() / (gamma - 1.0))
        .max(z.abs())
        .max(1e-30);
    if res(x).abs() > 1e-10 * scale || slope(x) <= 0.0 {
        return Err(no_root());
    }
    Ok(x)
}

/// Momentum map (A, B) = (q/Q, Q) at a resolved state with K = 0.
pub fn momentum_map(
    gamma: f64,
    q: [f64; 2],
    z: f64,
    s: f64,
    guess: f64,
    rho_cap: f64,
) -> Result<([f64; 2], f64), SolverError> {
    let rho = resolve_density(gamma, q, z, s, 0.0, guess, rho_cap)?;
    Ok(([q[0] / rho, q[1] / rho], rho))
}

/// Per-x1-node coefficients of the linearized coupled system. All profiles
/// are x2-independent because they are frozen at the background.
#[derive(Debug, Clone)]
pub struct CoefficientProfile {
    pub a11: Vec<f64>,
    pub a22: Vec<f64>,
    pub b2: Vec<f64>,
    /// c2 = -b2 exactly (same expression, negated once).
    pub c2: Vec<f64>,
    pub d: Vec<f64>,
    /// Two-sided ellipticity constant: lambda0 |xi|^2 <= sum a_ii xi_i^2
    /// <= |xi|^2 / lambda0.
    pub lambda0: f64,
}

impl CoefficientProfile {
    pub fn n_nodes(&self) -> usize {
        self.a11.len()
    }
}

/// Evaluate the closed-form coefficient profiles over a background.
pub fn linear_coefficients(bg: &BackgroundSolution) -> Result<CoefficientProfile, SolverError> {
    let p = &bg.params;
    let es0 = p.s0.exp();
    let n = bg.n_nodes();
    let mut a11 = Vec::with_capacity(n);
    let mut a22 = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut a_min = f64::INFINITY;
    let mut a_max = 0.0_f64;
    for i in 0..n {
        let rho = bg.rho[i];
        let nu = p.nu(rho);
        if nu <= 0.0 {
            return Err(SolverError::InvalidParams(
                "linear coefficients need a subsonic background".into(),
            ));
        }
        let c_sq = p.gamma * es0 * rho.powf(p.gamma - 1.0);
        let rho_nu = rho * nu;
        let a1 = 1.0 / rho;
        let a2 = c_sq / rho_nu;
        let b = p.m0 / rho_nu;
        a11.push(a1);
        a22.push(a2);
        b2.push(b);
        c2.push(-b);
        d.push(-rho / nu);
        a_min = a_min.min(a1.min(a2));
        a_max = a_max.max(a1.max(a2));
    }
    Ok(CoefficientProfile {
        a11,
        a22,
        b2,
        c2,
        d,
        lambda0: a_min.min(1.0 / a_max),
    })
}

/// Pointwise formulation context bound to a background profile. The node
/// index selects the x1 station (backgrounds are x2-independent).
pub struct Formulation<'a> {
    pub bg: &'a BackgroundSolution,
    rho_cap: f64,
}

impl<'a> Formulation<'a> {
    pub fn new(bg: &'a BackgroundSolution) -> Self {
        let rho_max = bg.rho.iter().fold(0.0_f64, |m, r| m.max(*r));
        Formulation {
            bg,
            rho_cap: 10.0 * rho_max,
        }
    }

    pub fn rho_cap(&self) -> f64 {
        self.rho_cap
    }

    /// Density at full state (background momentum/potential plus the
    /// perturbations `q`, `z`) with entropy `s` and pseudo-Bernoulli `k`.
    pub fn resolve(
        &self,
        i: usize,
        q: [f64; 2],
        z: f64,
        s: f64,
        k: f64,
        guess: Option<f64>,
    ) -> Result<f64, SolverError> {
        let p = &self.bg.params;
        let full_q = [q[0], p.m0 + q[1]];
        let full_z = self.bg.phi0[i] + z;
        resolve_density(
            p.gamma,
            full_q,
            full_z,
            s,
            k,
            guess.unwrap_or(self.bg.rho[i]),
            self.rho_cap,
        )
    }

    /// Vorticity source from transverse entropy / pseudo-Bernoulli slopes:
    ///
    /// ```text
    ///   f = -ds2 * B^gamma e^s / ((gamma-1)(m0 + q2)) + dk2 * B / (m0 + q2),
    /// ```
    ///
    /// with B the resolved density at the full state.
    pub fn remainder_f(
        &self,
        i: usize,
        q: [f64; 2],
        z: f64,
        s: f64,
        ds2: f64,
        dk2: f64,
        guess: Option<f64>,
    ) -> Result<f64, SolverError> {
        let p = &self.bg.params;
        let flux = p.m0 + q[1];
        if flux < 0.5 * p.m0 {
            return Err(SolverError::DegenerateVerticalFlux { flux });
        }
        let b = self.resolve(i, q, z, s, 0.0, guess)?;
        Ok(-ds2 * b.powf(p.gamma) * s.exp() / ((p.gamma - 1.0) * flux) + dk2 * b / flux)
    }

    /// First-order Taylor remainder of the momentum map A at the background:
    /// linearized-minus-full, componentwise.
    pub fn remainder_flux(
        &self,
        i: usize,
        q: [f64; 2],
        z: f64,
        s: f64,
        coeff: &CoefficientProfile,
        guess: Option<f64>,
    ) -> Result<[f64; 2], SolverError> {
        let p = &self.bg.params;
        let rho_bar = self.bg.rho[i];
        let full = self.resolve(i, q, z, s, 0.0, guess)?;
        let f1 = q[0] * coeff.a11[i] - q[0] / full;
        let f2 = p.m0 / rho_bar + q[1] * coeff.a22[i] + z * coeff.b2[i] - (p.m0 + q[1]) / full;
        Ok([f1, f2])
    }

    /// First-order Taylor remainder of the density map B at the background:
    /// full-minus-linearized.
    pub fn remainder_g(
        &self,
        i: usize,
        q: [f64; 2],
        z: f64,
        s: f64,
        coeff: &CoefficientProfile,
        guess: Option<f64>,
    ) -> Result<f64, SolverError> {
        let full = self.resolve(i, q, z, s, 0.0, guess)?;
        Ok(full - self.bg.rho[i] - q[1] * coeff.c2[i] - z * coeff.d[i])
    }

    /// Exit condition: vertical derivative of the stream-function
    /// perturbation implied by the prescribed exit pressure `p_ex`,
    /// boundary potential `phi_bd`, exit entropy `s` and pseudo-Bernoulli
    /// `k`, at the current horizontal perturbation gradient `q`.
    pub fn exit_h(&self, q: [f64; 2], s: f64, k: f64, p_ex: f64, phi_bd: f64) -> Result<f64, SolverError> {
        let p = &self.bg.params;
        if !(p_ex > 0.0) {
            return Err(SolverError::InvalidParams(format!(
                "exit pressure must be positive, got {p_ex}"
            )));
        }
        let n = self.bg.n_nodes() - 1;
        let t_exit = exit_t(p.gamma, p_ex, s, phi_bd);
        let t_bg = exit_t(p.gamma, self.bg.p[n], p.s0, self.bg.phi0[n]);
        let h1 = t_exit - t_bg;
        // k shifts the pinned |grad psi|^2 by 2 rho_ex^2 k.
        let rho_ex_sq = (p_ex / s.exp()).powf(2.0 / p.gamma);
        let q_half_sq = 0.5 * (q[0] * q[0] + q[1] * q[1]);
        Ok(-(h1 - rho_ex_sq * k + q_half_sq) / p.m0)
    }
}

/// T(p, s, phi) = (p/e^s)^{2/gamma} (phi + gamma p^{1-1/gamma} e^{s/gamma} / (gamma-1)):
/// density-squared times (potential + specific enthalpy); the pseudo-Bernoulli
/// relation makes -2T the squared stream-function gradient demanded at the exit.
fn exit_t(gamma: f64, p: f64, s: f64, phi: f64) -> f64 {
    let rho_sq = (p / s.exp()).powf(2.0 / gamma);
    let enthalpy = gamma * p.powf(1.0 - 1.0 / gamma) * (s / gamma).exp() / (gamma - 1.0);
    rho_sq * (phi + enthalpy)
}
