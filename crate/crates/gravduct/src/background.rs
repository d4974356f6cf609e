//! One-dimensional background flow.
//!
//! The duct carries a steady x2-independent base flow (rho, u, 0, p) with
//! gravity slope G = Phi'. Mass flux and entropy are algebraic constraints,
//! rho*u = m0 and p = e^{S0} rho^gamma, which collapse the steady equations
//! to a planar ODE system in (rho, G):
//!
//! ```text
//!   rho' = -rho G / nu(rho),    nu(rho) = gamma e^{S0} rho^{gamma-1} - m0^2 / rho^2,
//!   G'   = rho.
//! ```
//!
//! nu = c^2 - u^2 measures the distance to the sonic state; it vanishes at
//! rho_s = (m0^2 / (gamma e^{S0}))^{1/(gamma+1)} and the ODE degenerates
//! there. The system conserves
//!
//! ```text
//!   E(rho, G) = H(rho) + G^2/2,    H(rho) = int_{rho_s}^{rho} nu(r) dr,
//! ```
//!
//! which both powers the phase-portrait analysis (turning density, terminal
//! gravity slope, lifespan bounds) and serves as the integration accuracy
//! monitor. On the subsonic branch rho > rho_s the solution exists until the
//! duct length reaches the lifespan, at which point rho has been dragged
//! down to rho_s; the integrator detects this as a sonic-approach event.
//!
//! The potential itself is recovered by cumulative quadrature,
//! Phi0(x1) = int_0^{x1} G dt - B(0), where B is the Bernoulli quantity
//! u^2/2 + gamma e^{S0} rho^{gamma-1}/(gamma-1). Subtracting the inlet
//! Bernoulli value normalizes B + Phi0 to zero along the duct, which is the
//! gauge the two-dimensional formulation expects.

use crate::error::SolverError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundParams {
    /// Adiabatic exponent, > 1.
    pub gamma: f64,
    /// Mass flux rho*u, > 0.
    pub m0: f64,
    /// Inlet entropy constant, > 0.
    pub s0: f64,
    /// Inlet density, > 0 and off the sonic value.
    pub rho0: f64,
    /// Inlet gravity slope G(0).
    pub g0: f64,
    /// Duct length.
    pub length: f64,
}

impl BackgroundParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let fields = [
            ("gamma", self.gamma),
            ("m0", self.m0),
            ("s0", self.s0),
            ("rho0", self.rho0),
            ("g0", self.g0),
            ("length", self.length),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(SolverError::InvalidParams(format!("{name} must be finite")));
            }
        }
        if self.gamma <= 1.0 {
            return Err(SolverError::InvalidParams(format!(
                "gamma must exceed 1, got {}",
                self.gamma
            )));
        }
        if self.m0 <= 0.0 || self.s0 <= 0.0 || self.rho0 <= 0.0 || self.length <= 0.0 {
            return Err(SolverError::InvalidParams(
                "m0, s0, rho0 and length must be positive".into(),
            ));
        }
        if self.rho0 == self.critical_density() {
            return Err(SolverError::InvalidParams(
                "inlet density sits exactly on the sonic value".into(),
            ));
        }
        Ok(())
    }

    /// Sonic density rho_s = (m0^2/(gamma e^{S0}))^{1/(gamma+1)}.
    pub fn critical_density(&self) -> f64 {
        (self.m0 * self.m0 / (self.gamma * self.s0.exp())).powf(1.0 / (self.gamma + 1.0))
    }

    /// ODE denominator nu(rho) = gamma e^{S0} rho^{gamma-1} - m0^2/rho^2,
    /// equal to c^2 - u^2 along the constrained flow.
    pub fn nu(&self, rho: f64) -> f64 {
        self.gamma * self.s0.exp() * rho.powf(self.gamma - 1.0) - self.m0 * self.m0 / (rho * rho)
    }

    /// Enthalpy-like potential H(rho) = int_{rho_s}^{rho} nu, in closed form:
    /// e^{S0} rho^gamma + m0^2/rho - (1 + 1/gamma) m0^2 / rho_s.
    pub fn enthalpy(&self, rho: f64) -> Result<f64, SolverError> {
        if !(rho > 0.0) {
            return Err(SolverError::InvalidParams(format!(
                "enthalpy needs rho > 0, got {rho}"
            )));
        }
        let rho_s = self.critical_density();
        Ok(self.s0.exp() * rho.powf(self.gamma) + self.m0 * self.m0 / rho
            - (self.gamma + 1.0) / self.gamma * self.m0 * self.m0 / rho_s)
    }

    /// Conserved phase-plane quantity E(rho, G) = H(rho) + G^2/2.
    pub fn energy_level(&self, rho: f64, g: f64) -> Result<f64, SolverError> {
        Ok(self.enthalpy(rho)? + 0.5 * g * g)
    }

    /// Terminal gravity slope G_M = sqrt(2 H(rho0) + G0^2): the value G
    /// reaches when rho has been driven to the sonic density, read off the
    /// conserved quantity.
    pub fn terminal_g(&self) -> f64 {
        (2.0 * self.enthalpy(self.rho0).expect("rho0 > 0 checked by validate") + self.g0 * self.g0)
            .sqrt()
    }

    /// Turning density rho_M: the unique density on the same branch as rho0
    /// with H(rho_M) = H(rho0) + G0^2/2 (where G first vanishes, by the
    /// conserved quantity). Bracketed bisection on the monotone branch,
    /// relative tolerance 1e-14.
    pub fn turning_density(&self) -> f64 {
        let rho_s = self.critical_density();
        let target = self.enthalpy(self.rho0).unwrap() + 0.5 * self.g0 * self.g0;
        let h = |rho: f64| self.enthalpy(rho).unwrap();

        // H increases in rho on (rho_s, inf) and decreases on (0, rho_s), so
        // the target is reached by expanding the bracket away from rho0 on
        // the inlet's side of the sonic density.
        let increasing = self.rho0 > rho_s;
        let (mut lo, mut hi) = (self.rho0, self.rho0);
        if increasing {
            while h(hi) < target {
                hi *= 2.0;
            }
        } else {
            while h(lo) < target {
                lo *= 0.5;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let above = h(mid) >= target;
            if above == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
            if (hi - lo) <= 1e-14 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Lifespan bounds ((G_M - G0)/rho_M, (G_M - G0)/rho_s) for a subsonic
    /// inlet: G climbs from G0 to G_M at rate rho, and rho stays pinned
    /// between rho_s and rho_M along the way.
    pub fn lifespan_bounds(&self) -> Result<(f64, f64), SolverError> {
        if self.rho0 <= self.critical_density() {
            return Err(SolverError::InvalidParams(
                "lifespan bounds need a subsonic inlet (rho0 > sonic density)".into(),
            ));
        }
        let span = self.terminal_g() - self.g0;
        Ok((span / self.turning_density(), span / self.critical_density()))
    }

    /// Derived critical data in one bundle.
    pub fn critical_data(&self) -> CriticalData {
        let lifespan = self.lifespan_bounds().ok();
        CriticalData {
            rho_sonic: self.critical_density(),
            g_terminal: self.terminal_g(),
            rho_turning: self.turning_density(),
            lifespan,
        }
    }
}

/// Phase-plane landmarks of a parameter set.
#[derive(Debug, Clone, Copy)]
pub struct CriticalData {
    pub rho_sonic: f64,
    pub g_terminal: f64,
    pub rho_turning: f64,
    /// (lower, upper) bounds on the lifespan; `None` for a supersonic inlet.
    pub lifespan: Option<(f64, f64)>,
}

/// Profiles of the integrated background on a uniform x1 grid.
#[derive(Debug, Clone)]
pub struct BackgroundSolution {
    pub params: BackgroundParams,
    pub x1: Vec<f64>,
    pub rho: Vec<f64>,
    pub g: Vec<f64>,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub phi0: Vec<f64>,
    /// Max deviation of H(rho) + G^2/2 from its inlet value over the nodes.
    pub conservation_drift: f64,
}

impl BackgroundSolution {
    pub fn n_nodes(&self) -> usize {
        self.x1.len()
    }

    /// Bernoulli quantity u^2/2 + gamma e^{S0} rho^{gamma-1}/(gamma-1) at a node.
    pub fn bernoulli(&self, i: usize) -> f64 {
        let p = &self.params;
        0.5 * self.u[i] * self.u[i]
            + p.gamma * p.s0.exp() * self.rho[i].powf(p.gamma - 1.0) / (p.gamma - 1.0)
    }
}

/// Subsonicity margins of an integrated profile.
#[derive(Debug, Clone, Copy)]
pub struct SubsonicMargin {
    /// delta0 = 1 - max_nodes rho L^2 / (2 nu(rho)). The 2D pipeline needs
    /// delta0 > 0; nonpositive values are reported, not errored.
    pub delta0: f64,
    /// nu0 = min_nodes nu(rho), the nondegeneracy floor of the ODE.
    pub nu_min: f64,
}

/// Integration controls; the defaults match the solver pipeline.
#[derive(Debug, Clone, Copy)]
pub struct IntegrationOptions {
    /// Sonic guard: abort once nu (signed toward the inlet branch) falls
    /// below this fraction of its inlet value.
    pub nu_floor_fraction: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            nu_floor_fraction: 1e-6,
        }
    }
}

/// Classical fixed-step RK4 on the (rho, G) system over [0, L] with
/// `n_nodes` equally spaced sample nodes (so n_nodes - 1 steps).
///
/// Every stage evaluation is guarded: if the branch-signed denominator
/// margin drops below the floor, integration aborts with the abscissa
/// reached, signalling that L exceeds the lifespan of these data.
pub fn integrate(
    params: &BackgroundParams,
    n_nodes: usize,
) -> Result<BackgroundSolution, SolverError> {
    integrate_with_options(params, n_nodes, IntegrationOptions::default())
}

pub fn integrate_with_options(
    params: &BackgroundParams,
    n_nodes: usize,
    opts: IntegrationOptions,
) -> Result<BackgroundSolution, SolverError> {
    params.validate()?;
    if n_nodes < 2 {
        return Err(SolverError::InvalidParams(
            "integration needs at least 2 nodes".into(),
        ));
    }

    let branch = (params.rho0 - params.critical_density()).signum();
    let nu0 = params.nu(params.rho0);
    let floor = opts.nu_floor_fraction * nu0.abs();
    // Signed margin: positive while rho stays on the inlet branch, crossing
    // the floor as the sonic line nears (from either side).
    let margin = |rho: f64| branch * params.nu(rho);

    let steps = n_nodes - 1;
    let h = params.length / steps as f64;

    let mut x1 = Vec::with_capacity(n_nodes);
    let mut rho = Vec::with_capacity(n_nodes);
    let mut g = Vec::with_capacity(n_nodes);
    x1.push(0.0);
    rho.push(params.rho0);
    g.push(params.g0);

    let rhs = |r: f64, gg: f64| -> (f64, f64) { (-r * gg / params.nu(r), r) };

    let mut r = params.rho0;
    let mut gg = params.g0;
    for k in 0..steps {
        let x = k as f64 * h;
        // Guard all four stage states before trusting any of them.
        let guard = |rr: f64| -> Result<(), SolverError> {
            if !(rr > 0.0) || margin(rr) < floor {
                Err(SolverError::SonicApproach { x1_reached: x })
            } else {
                Ok(())
            }
        };
        guard(r)?;
        let (k1r, k1g) = rhs(r, gg);
        let (r2, g2) = (r + 0.5 * h * k1r, gg + 0.5 * h * k1g);
        guard(r2)?;
        let (k2r, k2g) = rhs(r2, g2);
        let (r3, g3) = (r + 0.5 * h * k2r, gg + 0.5 * h * k2g);
        guard(r3)?;
        let (k3r, k3g) = rhs(r3, g3);
        let (r4, g4) = (r + h * k3r, gg + h * k3g);
        guard(r4)?;
        let (k4r, k4g) = rhs(r4, g4);

        r += h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        gg += h / 6.0 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g);
        if !(r > 0.0) || margin(r) < floor {
            return Err(SolverError::SonicApproach {
                x1_reached: (k + 1) as f64 * h,
            });
        }
        x1.push(if k + 1 == steps {
            params.length
        } else {
            (k + 1) as f64 * h
        });
        rho.push(r);
        g.push(gg);
    }

    let u: Vec<f64> = rho.iter().map(|r| params.m0 / r).collect();
    let es0 = params.s0.exp();
    let p: Vec<f64> = rho.iter().map(|r| es0 * r.powf(params.gamma)).collect();

    // Phi0 is the negated Bernoulli function of the profile: the momentum
    // equation makes -B a first integral of Phi0' = G, and this gauge fixes
    // the constant so that Bernoulli + Phi0 vanishes identically. Taking the
    // algebraic expression rather than a quadrature of G matters downstream:
    // the nonlinear solver differences Taylor remainders against this gauge
    // node by node, and quadrature bias there would masquerade as flow data.
    // The expression is shared with the perturbation formulation so the
    // cancellation is exact in floating point, not merely to quadrature
    // order.
    let m2 = params.m0 * params.m0;
    let phi0: Vec<f64> = rho
        .iter()
        .map(|r| -crate::formulation::bernoulli_residual(params.gamma, *r, m2, 0.0, params.s0, 0.0))
        .collect();

    let e0 = params.energy_level(params.rho0, params.g0)?;
    let mut drift = 0.0_f64;
    for i in 0..n_nodes {
        drift = drift.max((params.energy_level(rho[i], g[i])? - e0).abs());
    }

    Ok(BackgroundSolution {
        params: *params,
        x1,
        rho,
        g,
        u,
        p,
        phi0,
        conservation_drift: drift,
    })
}

/// Subsonicity margin delta0 = 1 - max_nodes rho L^2 / (2 nu(rho)) and the
/// denominator floor nu0 over an integrated profile. Requires the profile to
/// sit on the subsonic branch (nu > 0 everywhere).
pub fn subsonic_margin(bg: &BackgroundSolution) -> Result<SubsonicMargin, SolverError> {
    let l2 = bg.params.length * bg.params.length;
    let mut worst = f64::NEG_INFINITY;
    let mut nu_min = f64::INFINITY;
    for r in &bg.rho {
        let nu = bg.params.nu(*r);
        if nu <= 0.0 {
            return Err(SolverError::InvalidParams(
                "subsonic margin is defined on the subsonic branch only".into(),
            ));
        }
        worst = worst.max(*r * l2 / (2.0 * nu));
        nu_min = nu_min.min(nu);
    }
    Ok(SubsonicMargin {
        delta0: 1.0 - worst,
        nu_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Canonical subsonic data used across the test suite.
    pub fn canon() -> BackgroundParams {
        BackgroundParams {
            gamma: 2.0,
            m0: (2.0 * std::f64::consts::E).sqrt(),
            s0: 1.0,
            rho0: 2.0,
            g0: -1.0,
            length: 0.5,
        }
    }

    fn bisect_root(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        assert!(f(lo) * f(hi) <= 0.0, "bracket does not straddle the root");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn critical_density_closed_form_cases() {
        // m0^2 = gamma e^{S0} forces rho_s = 1.
        let p = BackgroundParams { rho0: 2.0, ..canon() };
        assert!((p.critical_density() - 1.0).abs() < 1e-14);

        // gamma = 3: rho_s = (1/(3e))^{1/4}, cross-checked as the positive
        // root of gamma e^{S0} rho^{gamma+1} = m0^2.
        let p3 = BackgroundParams {
            gamma: 3.0,
            m0: 1.0,
            s0: 1.0,
            rho0: 2.0,
            g0: 0.0,
            length: 0.1,
        };
        let expected = (1.0 / (3.0 * std::f64::consts::E)).powf(0.25);
        assert!((p3.critical_density() - expected).abs() < 1e-14);
        let oracle = bisect_root(1e-6, 10.0, |r| {
            p3.gamma * p3.s0.exp() * r.powf(p3.gamma + 1.0) - p3.m0 * p3.m0
        });
        assert!((p3.critical_density() - oracle).abs() < 1e-12);

        // Doubling m0 at gamma = 2 scales rho_s by 4^{1/3}.
        let p4 = BackgroundParams {
            m0: 2.0 * (2.0 * std::f64::consts::E).sqrt(),
            rho0: 3.0,
            ..canon()
        };
        assert!((p4.critical_density() - 4.0f64.powf(1.0 / 3.0)).abs() < 1e-14);
        let oracle4 = bisect_root(1e-6, 10.0, |r| {
            p4.gamma * p4.s0.exp() * r.powf(p4.gamma + 1.0) - p4.m0 * p4.m0
        });
        assert!((p4.critical_density() - oracle4).abs() < 1e-12);
    }

    /// Adaptive Simpson quadrature, used as an independent oracle for the
    /// closed-form enthalpy.
    fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn recurse(
            f: &impl Fn(f64) -> f64,
            a: f64,
            b: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let left = simpson(f, a, m);
            let right = simpson(f, m, b);
            if depth > 40 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                recurse(f, a, m, left, 0.5 * tol, depth + 1)
                    + recurse(f, m, b, right, 0.5 * tol, depth + 1)
            }
        }
        recurse(f, a, b, simpson(f, a, b), tol, 0)
    }

    #[test]
    fn enthalpy_matches_quadrature_oracle() {
        let p = canon();
        let rho_s = p.critical_density();
        assert!(p.enthalpy(rho_s).unwrap().abs() < 1e-13);
        for rho in [0.3, 0.8, 1.5, 2.0, 3.7] {
            let h = p.enthalpy(rho).unwrap();
            let q = adaptive_simpson(&|r| p.nu(r), rho_s, rho, 1e-13);
            assert!((h - q).abs() < 1e-12, "rho {rho}: closed {h} vs quad {q}");
            if (rho - rho_s).abs() > 1e-3 {
                assert!(h > 0.0, "H must be positive off the sonic density");
            }
        }
        // Canonical spot value: H(2) = e*(4 + 1 - 3) = 2e for these data.
        let h2 = p.enthalpy(2.0).unwrap();
        assert!((h2 - 2.0 * std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn terminal_g_identity() {
        let p = BackgroundParams { g0: 0.7, ..canon() };
        let gm = p.terminal_g();
        assert!((gm * gm - p.g0 * p.g0 - 2.0 * p.enthalpy(p.rho0).unwrap()).abs() < 1e-12);

        // At a sonic inlet density the terminal slope degenerates to |G0|.
        let ps = BackgroundParams {
            rho0: p.critical_density(),
            g0: -0.4,
            ..p
        };
        assert!((ps.terminal_g() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn turning_density_bisection_oracle() {
        let p = BackgroundParams { g0: 0.0, ..canon() };
        assert!((p.turning_density() - p.rho0).abs() < 1e-12);

        let p1 = BackgroundParams { g0: 1.0, ..canon() };
        let target = p1.enthalpy(p1.rho0).unwrap() + 0.5;
        let oracle = bisect_root(p1.rho0, 10.0, |r| p1.enthalpy(r).unwrap() - target);
        let rm = p1.turning_density();
        assert!((rm - oracle).abs() < 1e-10, "rm {rm} oracle {oracle}");
        assert!(rm > p1.rho0);

        // |G0| up, turning density up (subsonic branch).
        let p2 = BackgroundParams { g0: 2.0, ..canon() };
        assert!(p2.turning_density() > p1.turning_density());

        // Supersonic branch: turning density moves down from rho0.
        let psup = BackgroundParams {
            rho0: 0.5,
            g0: 1.0,
            length: 0.05,
            ..canon()
        };
        let rm_sup = psup.turning_density();
        assert!(rm_sup < psup.rho0);
        let t_sup = psup.enthalpy(0.5).unwrap() + 0.5;
        assert!((psup.enthalpy(rm_sup).unwrap() - t_sup).abs() < 1e-11);
    }

    #[test]
    fn degenerate_interval_returns_initial_data() {
        let p = BackgroundParams { length: 1e-12, ..canon() };
        let bg = integrate(&p, 2).unwrap();
        assert!((bg.rho[1] - p.rho0).abs() < 1e-11);
        assert!((bg.g[1] - p.g0).abs() < 1e-11);
    }

    #[test]
    fn first_integral_drift_small_and_fourth_order() {
        let p = canon();
        let bg = integrate(&p, 10_001).unwrap();
        let e0 = p.energy_level(p.rho0, p.g0).unwrap();
        assert!(
            bg.conservation_drift / e0.abs() < 1e-10,
            "relative drift {:.3e}",
            bg.conservation_drift / e0.abs()
        );

        // Order from coarse runs where drift sits well above rounding
        // (by n = 101 it is already ~1e-13 for these data).
        let d1 = integrate(&p, 21).unwrap().conservation_drift;
        let d2 = integrate(&p, 41).unwrap().conservation_drift;
        let order = (d1 / d2).log2();
        assert!(order > 3.8, "measured RK4 order {order:.2}");
    }

    #[test]
    fn self_convergence_against_ten_x_resolution() {
        let p = canon();
        let coarse = integrate(&p, 501).unwrap();
        let fine = integrate(&p, 5001).unwrap();
        let n = coarse.n_nodes();
        let err_rho = (coarse.rho[n - 1] - fine.rho[fine.n_nodes() - 1]).abs();
        let err_g = (coarse.g[n - 1] - fine.g[fine.n_nodes() - 1]).abs();
        assert!(err_rho < 1e-8 && err_g < 1e-8, "{err_rho:.3e} {err_g:.3e}");
    }

    #[test]
    fn derived_profiles_and_gauge() {
        let p = canon();
        let bg = integrate(&p, 2001).unwrap();
        for i in 0..bg.n_nodes() {
            assert!((bg.u[i] * bg.rho[i] - p.m0).abs() < 1e-13);
            assert!((bg.p[i] - p.s0.exp() * bg.rho[i].powf(p.gamma)).abs() < 1e-12);
            // Gauge: Bernoulli + Phi0 = 0 along the duct (to quadrature order).
            assert!(
                (bg.bernoulli(i) + bg.phi0[i]).abs() < 1e-10,
                "gauge violated at node {i}: {:.3e}",
                bg.bernoulli(i) + bg.phi0[i]
            );
        }
        // G nondecreasing: G' = rho > 0.
        for i in 1..bg.n_nodes() {
            assert!(bg.g[i] > bg.g[i - 1]);
        }
    }

    #[test]
    fn sonic_approach_detected_within_lifespan_bounds() {
        let p = canon();
        let (lo, hi) = p.lifespan_bounds().unwrap();
        assert!(lo < hi);
        let long = BackgroundParams {
            length: hi * 1.05,
            ..p
        };
        let err = integrate(&long, 40_001).unwrap_err();
        match err {
            SolverError::SonicApproach { x1_reached } => {
                assert!(
                    x1_reached >= lo && x1_reached <= hi,
                    "abscissa {x1_reached} outside [{lo}, {hi}]"
                );
            }
            other => panic!("expected sonic approach, got {other}"),
        }
    }

    #[test]
    fn lifespan_lower_bound_grows_with_inlet_density() {
        // gamma = 3 > 2: the admissible length grows without bound in rho0.
        let bound = |rho0: f64| {
            BackgroundParams {
                gamma: 3.0,
                m0: 1.0,
                s0: 1.0,
                rho0,
                g0: 0.0,
                length: 1.0,
            }
            .lifespan_bounds()
            .unwrap()
            .0
        };
        let (b1, b2, b3) = (bound(10.0), bound(100.0), bound(1000.0));
        assert!(b2 > b1 && b3 > b2);
        assert!(b3 / b1 >= 3.0, "growth factor {:.2}", b3 / b1);
    }

    #[test]
    fn subsonic_margin_canonical_value() {
        let p = canon();
        let bg = integrate(&p, 10_001).unwrap();
        let m = subsonic_margin(&bg).unwrap();

        // Independent in-test scan of the same profile.
        let mut worst = f64::NEG_INFINITY;
        for r in &bg.rho {
            worst = worst.max(*r * p.length * p.length / (2.0 * p.nu(*r)));
        }
        assert!((m.delta0 - (1.0 - worst)).abs() < 1e-10);
        assert!(m.delta0 > 0.9 && m.delta0 < 1.0, "delta0 = {}", m.delta0);
        assert!(m.nu_min > 0.0);
    }

    #[test]
    fn margin_improves_when_the_duct_shrinks() {
        let p = canon();
        let m_full = subsonic_margin(&integrate(&p, 4001).unwrap()).unwrap();
        let half = BackgroundParams {
            length: 0.5 * p.length,
            ..p
        };
        let m_half = subsonic_margin(&integrate(&half, 4001).unwrap()).unwrap();
        assert!(m_half.delta0 > m_full.delta0);
        // The max term scales at least as fast as L^2 (same curve, shorter arc).
        assert!((1.0 - m_half.delta0) <= 0.25 * (1.0 - m_full.delta0) + 1e-12);
    }

    #[test]
    fn margin_improves_with_dense_inlet_when_g_stays_negative() {
        // gamma = 3, strongly negative G0, short duct: G stays negative and
        // the margin improves as the inlet densifies.
        let margin = |rho0: f64| {
            let p = BackgroundParams {
                gamma: 3.0,
                m0: 1.0,
                s0: 1.0,
                rho0,
                g0: -5.0,
                length: 1e-3,
            };
            let bg = integrate(&p, 2001).unwrap();
            assert!(bg.g.iter().all(|g| *g < 0.0));
            subsonic_margin(&bg).unwrap().delta0
        };
        let (d1, d2, d3) = (margin(10.0), margin(100.0), margin(1000.0));
        assert!(d2 > d1 && d3 > d2, "{d1} {d2} {d3}");
    }

    #[test]
    fn supersonic_inlet_is_integrable_but_marginless() {
        let p = BackgroundParams {
            rho0: 0.5,
            g0: 1.0,
            length: 0.02,
            ..canon()
        };
        let bg = integrate(&p, 501).unwrap();
        let rho_s = p.critical_density();
        assert!(bg.rho.iter().all(|r| *r < rho_s), "branch must be preserved");
        assert!(subsonic_margin(&bg).is_err());
    }

    #[test]
    fn parameter_validation_rejects_nonsense() {
        assert!(BackgroundParams { gamma: 1.0, ..canon() }.validate().is_err());
        assert!(BackgroundParams { m0: 0.0, ..canon() }.validate().is_err());
        assert!(BackgroundParams { rho0: -1.0, ..canon() }.validate().is_err());
        assert!(BackgroundParams { length: 0.0, ..canon() }.validate().is_err());
        assert!(integrate(&canon(), 1).is_err());
    }

    /// Cumulative quadrature on uniform nodes, fourth order: composite
    /// Simpson to even indices, a three-point parabolic half-rule to odd
    /// ones. Test-side oracle for the algebraic potential gauge.
    fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
        let n = f.len();
        let mut out = vec![0.0; n];
        if n < 2 {
            return out;
        }
        if n == 2 {
            out[1] = 0.5 * h * (f[0] + f[1]);
            return out;
        }
        for i in 1..n {
            if i == 1 {
                // Forward parabola through f0, f1, f2 integrated over [x0, x1].
                out[1] = h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2]);
            } else if i % 2 == 0 {
                out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
            } else {
                // Backward parabola through f_{i-2}, f_{i-1}, f_i over
                // [x_{i-1}, x_i].
                out[i] = out[i - 1] + h / 12.0 * (-f[i - 2] + 8.0 * f[i - 1] + 5.0 * f[i]);
            }
        }
        out
    }

    #[test]
    fn cumulative_simpson_is_fourth_order() {
        // Integrand exp(x) on [0, 1]; compare cumulative values to exp(x)-1.
        let err = |n: usize| {
            let h = 1.0 / (n - 1) as f64;
            let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).exp()).collect();
            let c = cumulative_simpson(&f, h);
            (0..n).fold(0.0_f64, |m, i| {
                m.max((c[i] - ((i as f64 * h).exp() - 1.0)).abs())
            })
        };
        let (e1, e2) = (err(65), err(129));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "cumulative quadrature order {order:.2}");
    }

    #[test]
    fn potential_gauge_matches_quadrature_of_g() {
        // The algebraic gauge Phi0 = -Bernoulli must agree with the
        // cumulative integral of G shifted by the inlet Bernoulli value:
        // both express the same first integral of Phi0' = G.
        let bg = integrate(&canon(), 201).unwrap();
        let h = bg.params.length / 200.0;
        let quad = cumulative_simpson(&bg.g, h);
        for i in 0..bg.n_nodes() {
            let expected = quad[i] - bg.bernoulli(0);
            assert!(
                (bg.phi0[i] - expected).abs() < 1e-10,
                "node {i}: gauge {} vs quadrature {}",
                bg.phi0[i],
                expected
            );
        }
    }
}
