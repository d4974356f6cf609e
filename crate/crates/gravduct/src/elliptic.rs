//! Discrete coupled linear elliptic solver on the duct rectangle.
//!
//! The system solved here is
//!
//! ```text
//!   L1(phi, Psi) = d1(a11 d1 phi) + d2(a22 d2 phi + b2 Psi) = f + div F,
//!   L2(phi, Psi) = Lap Psi - d Psi - c2 d2 phi              = g,
//! ```
//!
//! with coefficients depending on x1 only, and mixed boundary conditions:
//! phi is Dirichlet on the walls and the exit and satisfies a Neumann
//! condition at the inlet; Psi is Neumann at the inlet (prescribed d1 Psi),
//! zero-flux at the walls, Dirichlet at the exit.
//!
//! Discretization is a conservative finite-volume scheme on the tensor grid
//! with collocated unknowns and half (quarter) control volumes along the
//! boundary; eliminating the boundary half-cells reproduces the familiar
//! second-order ghost-value closures. Two structural identities are built
//! in exactly, not just to truncation order:
//!
//! - the b2-flux in the first equation and the c2-coupling in the second
//!   (with c2 = -b2) cancel in the discrete quadratic form, because the
//!   node-centered vertical derivative is the average of the adjacent face
//!   differences (one-sided at the walls, with half-cell volume weights);
//! - the load pairing of `div F` uses the same face-averaging as the
//!   operator stencil, so the discrete divergence is the negative adjoint
//!   of the discrete gradient.
//!
//! Together with the discrete Poincare inequality in x1 (trapezoid weights
//! make its constant L^2/2 exact), the continuum coercivity margin delta0
//! transfers verbatim to the discrete form; [`coercivity_check`] verifies
//! it spectrally on small grids.
//!
//! The unknowns interleave as (phi, Psi) per node with x2 fastest, giving a
//! banded matrix of half-bandwidth 2(n2+1)+1 solved by the banded LU from
//! the linalg module (default) or ILU(0)-preconditioned BiCGSTAB.

use crate::error::SolverError;
use crate::formulation::CoefficientProfile;
use crate::grid::{Grid, ScalarField};
use crate::linalg::{
    bicgstab, norm_inf, smallest_eigenvalue, BandMatrix, Coo, Csr, Ilu0, SymBandMatrix,
};

/// Relative algebraic residual demanded of every linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Data of one linear solve. Coefficients are per-x1-node profiles; field
/// data live on grid nodes; boundary arrays are indexed along their edge.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub grid: Grid,
    pub coeff: CoefficientProfile,
    /// Scalar source of the first equation.
    pub f: ScalarField,
    /// Components of the flux source F.
    pub flux1: ScalarField,
    pub flux2: ScalarField,
    /// Scalar source of the second equation.
    pub g: ScalarField,
    /// Prescribed d1 phi on the inlet (zero in the flow pipeline).
    pub phi_inlet_flux: Vec<f64>,
    /// Prescribed d1 Psi on the inlet.
    pub psi_inlet_flux: Vec<f64>,
    /// Dirichlet values for phi along the bottom wall, top wall and exit.
    pub phi_bottom: Vec<f64>,
    pub phi_top: Vec<f64>,
    pub phi_exit: Vec<f64>,
    /// Dirichlet values for Psi along the exit.
    pub psi_exit: Vec<f64>,
}

impl LinearProblem {
    /// Fully general constructor; validates shapes, finiteness and corner
    /// consistency of the Dirichlet data.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: Grid,
        coeff: CoefficientProfile,
        f: ScalarField,
        flux1: ScalarField,
        flux2: ScalarField,
        g: ScalarField,
        phi_inlet_flux: Vec<f64>,
        psi_inlet_flux: Vec<f64>,
        phi_bottom: Vec<f64>,
        phi_top: Vec<f64>,
        phi_exit: Vec<f64>,
        psi_exit: Vec<f64>,
    ) -> Result<Self, SolverError> {
        let p = LinearProblem {
            grid,
            coeff,
            f,
            flux1,
            flux2,
            g,
            phi_inlet_flux,
            psi_inlet_flux,
            phi_bottom,
            phi_top,
            phi_exit,
            psi_exit,
        };
        p.validate()?;
        Ok(p)
    }

    /// Pipeline constructor: the exit condition hands over the vertical
    /// derivative profile `exit_slope` of phi along the exit; integrating it
    /// produces the Dirichlet data on the exit and the constant wall values.
    /// The inlet phi-flux is zero in this setting.
    pub fn from_exit_slope(
        grid: Grid,
        coeff: CoefficientProfile,
        f: ScalarField,
        flux1: ScalarField,
        flux2: ScalarField,
        g: ScalarField,
        psi_inlet_flux: Vec<f64>,
        exit_slope: &[f64],
        psi_exit: Vec<f64>,
    ) -> Result<Self, SolverError> {
        let n2 = grid.n2;
        if exit_slope.len() != n2 + 1 {
            return Err(SolverError::Assembly(format!(
                "exit slope has {} entries, expected {}",
                exit_slope.len(),
                n2 + 1
            )));
        }
        let h2 = grid.h2();
        let mut phi_exit = vec![0.0; n2 + 1];
        for j in 1..=n2 {
            phi_exit[j] = phi_exit[j - 1] + 0.5 * h2 * (exit_slope[j - 1] + exit_slope[j]);
        }
        let total = phi_exit[n2];
        Self::new(
            grid,
            coeff,
            f,
            flux1,
            flux2,
            g,
            vec![0.0; n2 + 1],
            psi_inlet_flux,
            vec![0.0; grid.n1 + 1],
            vec![total; grid.n1 + 1],
            phi_exit,
            psi_exit,
        )
    }

    fn validate(&self) -> Result<(), SolverError> {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let nn = (n1 + 1) * (n2 + 1);
        if self.coeff.n_nodes() != n1 + 1 {
            return Err(SolverError::Assembly(format!(
                "coefficient profile has {} stations, grid needs {}",
                self.coeff.n_nodes(),
                n1 + 1
            )));
        }
        for (name, field) in [
            ("f", &self.f),
            ("flux1", &self.flux1),
            ("flux2", &self.flux2),
            ("g", &self.g),
        ] {
            if field.values().len() != nn {
                return Err(SolverError::Assembly(format!("field {name} has wrong size")));
            }
            if !field.all_finite() {
                return Err(SolverError::Assembly(format!("field {name} is not finite")));
            }
        }
        for (name, v, want) in [
            ("phi_inlet_flux", &self.phi_inlet_flux, n2 + 1),
            ("psi_inlet_flux", &self.psi_inlet_flux, n2 + 1),
            ("phi_bottom", &self.phi_bottom, n1 + 1),
            ("phi_top", &self.phi_top, n1 + 1),
            ("phi_exit", &self.phi_exit, n2 + 1),
            ("psi_exit", &self.psi_exit, n2 + 1),
        ] {
            if v.len() != want {
                return Err(SolverError::Assembly(format!(
                    "boundary array {name} has {} entries, expected {want}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SolverError::Assembly(format!(
                    "boundary array {name} is not finite"
                )));
            }
        }
        let profiles = [
            &self.coeff.a11,
            &self.coeff.a22,
            &self.coeff.b2,
            &self.coeff.c2,
            &self.coeff.d,
        ];
        if profiles
            .iter()
            .any(|p| p.iter().any(|x| !x.is_finite()))
        {
            return Err(SolverError::Assembly("nonfinite coefficient".into()));
        }
        if self.coeff.a11.iter().chain(&self.coeff.a22).any(|&a| a <= 0.0) {
            return Err(SolverError::Assembly(
                "diffusion coefficients must be positive".into(),
            ));
        }
        // Dirichlet data must agree where edges meet.
        let scale = norm_inf(&self.phi_exit)
            .max(norm_inf(&self.phi_bottom))
            .max(norm_inf(&self.phi_top))
            .max(1.0);
        if (self.phi_exit[0] - self.phi_bottom[n1]).abs() > 1e-12 * scale
            || (self.phi_exit[n2] - self.phi_top[n1]).abs() > 1e-12 * scale
        {
            return Err(SolverError::Assembly(
                "phi Dirichlet data disagree at the exit corners".into(),
            ));
        }
        // Exit Psi data must be flat where it meets the zero-flux walls. For
        // smooth compatible profiles the one-sided discrete slope decays like
        // h2^3 times the fourth derivative, so the threshold shrinks with the
        // mesh; data with a genuine corner slope stays O(1) and is caught.
        let h2 = self.grid.h2();
        let pb = &self.psi_exit;
        let psc = norm_inf(pb).max(1.0);
        let d_lo = (-1.5 * pb[0] + 2.0 * pb[1] - 0.5 * pb[2]) / h2;
        let d_hi = (1.5 * pb[n2] - 2.0 * pb[n2 - 1] + 0.5 * pb[n2 - 2]) / h2;
        let tol = 1e-6_f64.max(psc * (10.0 * h2 * h2).min(0.1));
        if d_lo.abs() > tol || d_hi.abs() > tol {
            return Err(SolverError::Assembly(format!(
                "psi exit data not compatible with zero-flux walls: corner slopes {d_lo:.3e}, {d_hi:.3e}"
            )));
        }
        Ok(())
    }
}

/// Assembled sparse system: banded form for the direct factorization, row
/// form for residual checks and the Krylov path, load vector alongside.
///
/// Unknowns interleave as (phi, Psi) per node with the x2 index fastest, so
/// the dof of phi at node (i, j) is `2 (i (n2 + 1) + j)` and Psi follows at
/// the next slot.
pub struct Assembled {
    pub band: BandMatrix,
    pub csr: Csr,
    pub load: Vec<f64>,
    pub n_dof: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    Krylov,
}

/// Solution fields plus algebraic and energy diagnostics.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub phi: ScalarField,
    pub psi: ScalarField,
    /// Max-norm algebraic residual of the assembled system, absolute and
    /// relative to the load.
    pub residual_inf: f64,
    pub residual_rel: f64,
    pub energy: EnergyReport,
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub h1_phi: f64,
    pub h1_psi: f64,
    /// min(lambda0, delta0): coefficient-level lower bound for the
    /// gradient-seminorm coercivity of the discrete form.
    pub coercivity_floor: f64,
}

impl CoefficientProfile {
    /// Coercivity margin delta0 = 1 - (L^2/2) max |d| implied by the zeroth
    /// order coefficient; positive iff the form controls the Psi gradient.
    pub fn coercivity_margin(&self, length: f64) -> f64 {
        let dmax = self.d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        1.0 - 0.5 * length * length * dmax
    }
}

struct Indexer {
    n2: usize,
}

impl Indexer {
    #[inline]
    fn phi(&self, i: usize, j: usize) -> usize {
        2 * (i * (self.n2 + 1) + j)
    }
    #[inline]
    fn psi(&self, i: usize, j: usize) -> usize {
        2 * (i * (self.n2 + 1) + j) + 1
    }
}

/// Optional boundary lift used by the homogenized path: phi minus the
/// x1-constant extension of its exit data, likewise for Psi.
struct Lift<'a> {
    phi_exit: &'a [f64],
    psi_exit: &'a [f64],
}

fn assemble_inner(p: &LinearProblem, lift: Option<&Lift>) -> Result<Assembled, SolverError> {
    p.validate()?;
    let grid = p.grid;
    let (n1, n2) = (grid.n1, grid.n2);
    let (h1, h2) = (grid.h1(), grid.h2());
    let ix = Indexer { n2 };
    let n_dof = 2 * (n1 + 1) * (n2 + 1);
    let halfband = 2 * (n2 + 1) + 1;
    let mut band = BandMatrix::zeros(n_dof, halfband, halfband);
    let mut coo = Coo::new(n_dof, n_dof);
    let mut load = vec![0.0; n_dof];

    let tau1 = |i: usize| if i == 0 || i == n1 { 0.5 } else { 1.0 };
    let tau2 = |j: usize| if j == 0 || j == n2 { 0.5 } else { 1.0 };
    let cf = &p.coeff;

    // Face-level access to the flux data; the homogenized path subtracts the
    // lift's contribution at exactly the stencil locations, which keeps the
    // two solution paths equal to rounding rather than to truncation order.
    let f2_face = |i: usize, j_lo: usize| -> f64 {
        let mut v = 0.5 * (p.flux2.at(i, j_lo) + p.flux2.at(i, j_lo + 1));
        if let Some(l) = lift {
            v -= cf.a22[i] * (l.phi_exit[j_lo + 1] - l.phi_exit[j_lo]) / h2;
            v -= cf.b2[i] * 0.5 * (l.psi_exit[j_lo] + l.psi_exit[j_lo + 1]);
        }
        v
    };
    let g_node = |i: usize, j: usize| -> f64 {
        let mut v = p.g.at(i, j);
        if let Some(l) = lift {
            // d2 of the phi lift with the operator's own stencil.
            let dh = if j == 0 {
                (l.phi_exit[1] - l.phi_exit[0]) / h2
            } else if j == n2 {
                (l.phi_exit[n2] - l.phi_exit[n2 - 1]) / h2
            } else {
                (l.phi_exit[j + 1] - l.phi_exit[j - 1]) / (2.0 * h2)
            };
            // Discrete vertical Laplacian of the Psi lift, matching the
            // half-cell closure at the walls.
            let lap = if j == 0 {
                2.0 * (l.psi_exit[1] - l.psi_exit[0]) / (h2 * h2)
            } else if j == n2 {
                2.0 * (l.psi_exit[n2 - 1] - l.psi_exit[n2]) / (h2 * h2)
            } else {
                (l.psi_exit[j + 1] - 2.0 * l.psi_exit[j] + l.psi_exit[j - 1]) / (h2 * h2)
            };
            v += cf.d[i] * l.psi_exit[j] + cf.c2[i] * dh - lap;
        }
        v
    };
    let phi_dirichlet = |i: usize, j: usize| -> f64 {
        if let Some(l) = lift {
            let _ = l;
            return 0.0;
        }
        if i == n1 {
            p.phi_exit[j]
        } else if j == 0 {
            p.phi_bottom[i]
        } else {
            p.phi_top[i]
        }
    };

    let put = |band: &mut BandMatrix, coo: &mut Coo, r: usize, c: usize, v: f64| {
        if v != 0.0 {
            band.add(r, c, v);
            coo.push(r, c, v);
        }
    };

    for i in 0..=n1 {
        for j in 0..=n2 {
            let rphi = ix.phi(i, j);
            let rpsi = ix.psi(i, j);
            let phi_dir = j == 0 || j == n2 || i == n1;
            let psi_dir = i == n1;

            if phi_dir {
                put(&mut band, &mut coo, rphi, rphi, 1.0);
                load[rphi] = phi_dirichlet(i, j);
            } else {
                // phi control volume: full cell in x2 (j interior), half
                // cell in x1 at the inlet.
                let len_x1face = h2; // tau2(j) = 1 here
                let len_x2face = tau1(i) * h1;
                let vol = tau1(i) * h1 * h2;

                // East face i+1/2.
                let ae = 0.5 * (cf.a11[i] + cf.a11[i + 1]);
                put(&mut band, &mut coo, rphi, rphi, ae * len_x1face / h1);
                put(&mut band, &mut coo, rphi, ix.phi(i + 1, j), -ae * len_x1face / h1);
                load[rphi] +=
                    -0.5 * (p.flux1.at(i, j) + p.flux1.at(i + 1, j)) * len_x1face;
                // West face i-1/2, or the inlet boundary face.
                if i > 0 {
                    let aw = 0.5 * (cf.a11[i] + cf.a11[i - 1]);
                    put(&mut band, &mut coo, rphi, rphi, aw * len_x1face / h1);
                    put(&mut band, &mut coo, rphi, ix.phi(i - 1, j), -aw * len_x1face / h1);
                    load[rphi] +=
                        0.5 * (p.flux1.at(i, j) + p.flux1.at(i - 1, j)) * len_x1face;
                } else {
                    load[rphi] +=
                        (-cf.a11[0] * p.phi_inlet_flux[j] + p.flux1.at(0, j)) * len_x1face;
                }
                // North face j+1/2.
                put(&mut band, &mut coo, rphi, rphi, cf.a22[i] * len_x2face / h2);
                put(&mut band, &mut coo, rphi, ix.phi(i, j + 1), -cf.a22[i] * len_x2face / h2);
                put(&mut band, &mut coo, rphi, rpsi, -cf.b2[i] * 0.5 * len_x2face);
                put(&mut band, &mut coo, rphi, ix.psi(i, j + 1), -cf.b2[i] * 0.5 * len_x2face);
                load[rphi] += -f2_face(i, j) * len_x2face;
                // South face j-1/2.
                put(&mut band, &mut coo, rphi, rphi, cf.a22[i] * len_x2face / h2);
                put(&mut band, &mut coo, rphi, ix.phi(i, j - 1), -cf.a22[i] * len_x2face / h2);
                put(&mut band, &mut coo, rphi, rpsi, cf.b2[i] * 0.5 * len_x2face);
                put(&mut band, &mut coo, rphi, ix.psi(i, j - 1), cf.b2[i] * 0.5 * len_x2face);
                load[rphi] += f2_face(i, j - 1) * len_x2face;
                // Volume source.
                load[rphi] += -p.f.at(i, j) * vol;
            }

            if psi_dir {
                put(&mut band, &mut coo, rpsi, rpsi, 1.0);
                load[rpsi] = if lift.is_some() { 0.0 } else { p.psi_exit[j] };
            } else {
                let len_x1face = tau2(j) * h2;
                let len_x2face = tau1(i) * h1;
                let vol = tau1(i) * tau2(j) * h1 * h2;

                // Laplacian faces; wall faces carry no flux.
                put(&mut band, &mut coo, rpsi, rpsi, len_x1face / h1);
                put(&mut band, &mut coo, rpsi, ix.psi(i + 1, j), -len_x1face / h1);
                if i > 0 {
                    put(&mut band, &mut coo, rpsi, rpsi, len_x1face / h1);
                    put(&mut band, &mut coo, rpsi, ix.psi(i - 1, j), -len_x1face / h1);
                } else {
                    load[rpsi] += -p.psi_inlet_flux[j] * len_x1face;
                }
                if j < n2 {
                    put(&mut band, &mut coo, rpsi, rpsi, len_x2face / h2);
                    put(&mut band, &mut coo, rpsi, ix.psi(i, j + 1), -len_x2face / h2);
                }
                if j > 0 {
                    put(&mut band, &mut coo, rpsi, rpsi, len_x2face / h2);
                    put(&mut band, &mut coo, rpsi, ix.psi(i, j - 1), -len_x2face / h2);
                }
                // Zeroth-order term.
                put(&mut band, &mut coo, rpsi, rpsi, cf.d[i] * vol);
                // Gradient coupling, one-sided at the walls: this exact
                // stencil (with the half volumes above) is what cancels the
                // b2-flux in the discrete quadratic form.
                let cc = cf.c2[i] * vol;
                if j == 0 {
                    put(&mut band, &mut coo, rpsi, ix.phi(i, 1), cc / h2);
                    put(&mut band, &mut coo, rpsi, ix.phi(i, 0), -cc / h2);
                } else if j == n2 {
                    put(&mut band, &mut coo, rpsi, ix.phi(i, n2), cc / h2);
                    put(&mut band, &mut coo, rpsi, ix.phi(i, n2 - 1), -cc / h2);
                } else {
                    put(&mut band, &mut coo, rpsi, ix.phi(i, j + 1), cc / (2.0 * h2));
                    put(&mut band, &mut coo, rpsi, ix.phi(i, j - 1), -cc / (2.0 * h2));
                }
                load[rpsi] += -g_node(i, j) * vol;
            }
        }
    }

    Ok(Assembled {
        band,
        csr: coo.to_csr(),
        load,
        n_dof,
    })
}

/// Assemble the full (inhomogeneous-boundary) system.
pub fn assemble(problem: &LinearProblem) -> Result<Assembled, SolverError> {
    assemble_inner(problem, None)
}

/// Assemble the homogeneous-boundary system obtained by subtracting the
/// x1-constant extensions of the exit data (the system the energy identity
/// and the coercivity analysis speak about). Requires the pipeline boundary
/// structure; see [`homogenize_oracle`].
pub fn assemble_homogenized(problem: &LinearProblem) -> Result<Assembled, SolverError> {
    require_pipeline_walls(problem)?;
    let lift = Lift {
        phi_exit: &problem.phi_exit,
        psi_exit: &problem.psi_exit,
    };
    assemble_inner(problem, Some(&lift))
}

/// The lifted formulation only removes the boundary data when the wall values
/// are the constant continuations of the exit profile's endpoints.
fn require_pipeline_walls(problem: &LinearProblem) -> Result<(), SolverError> {
    let n2 = problem.grid.n2;
    let scale = norm_inf(&problem.phi_exit).max(1.0);
    let flat_bottom = problem
        .phi_bottom
        .iter()
        .all(|&v| (v - problem.phi_exit[0]).abs() <= 1e-12 * scale);
    let flat_top = problem
        .phi_top
        .iter()
        .all(|&v| (v - problem.phi_exit[n2]).abs() <= 1e-12 * scale);
    if !flat_bottom || !flat_top {
        return Err(SolverError::Assembly(
            "homogenized path needs constant wall data matching the exit profile".into(),
        ));
    }
    Ok(())
}

fn solve_assembled(
    asm: Assembled,
    method: SolveMethod,
) -> Result<(Vec<f64>, f64, f64), SolverError> {
    // Factoring consumes the band storage in place; on large grids a copy
    // would transiently double the dominant allocation.
    let Assembled {
        band,
        csr,
        load,
        n_dof,
    } = asm;
    let scale = norm_inf(&load).max(1e-300);
    let x = match method {
        SolveMethod::Direct => {
            let lu = band.factor()?;
            let (x, _) = crate::linalg::solve_refined(&lu, &csr, &load, 3);
            x
        }
        SolveMethod::Krylov => {
            let ilu = Ilu0::new(&csr)?;
            let x0 = vec![0.0; n_dof];
            let (x, _) = bicgstab(&csr, &load, &x0, Some(&ilu), 1e-12, 20 * n_dof)?;
            x
        }
    };
    let abs = norm_inf(&csr.residual(&x, &load));
    let rel = abs / scale;
    Ok((x, abs, rel))
}

fn unpack(grid: Grid, x: &[f64]) -> (ScalarField, ScalarField) {
    let n2 = grid.n2;
    let phi = ScalarField::from_index_fn(grid, "phi", |i, j| x[2 * (i * (n2 + 1) + j)]);
    let psi = ScalarField::from_index_fn(grid, "psi", |i, j| x[2 * (i * (n2 + 1) + j) + 1]);
    (phi, psi)
}

fn report(p: &LinearProblem, phi: &ScalarField, psi: &ScalarField) -> EnergyReport {
    let delta0 = p.coeff.coercivity_margin(p.grid.length);
    EnergyReport {
        h1_phi: phi.h1_norm(),
        h1_psi: psi.h1_norm(),
        coercivity_floor: p.coeff.lambda0.min(delta0),
    }
}

/// Solve the coupled system as posed.
pub fn solve(problem: &LinearProblem, method: SolveMethod) -> Result<LinearSolution, SolverError> {
    let asm = assemble(problem)?;
    let (x, abs, rel) = solve_assembled(asm, method)?;
    if rel > SOLVE_TOL {
        let delta0 = problem.coeff.coercivity_margin(problem.grid.length);
        return Err(SolverError::LinearSolve(format!(
            "relative residual {rel:.3e} exceeds {SOLVE_TOL:.1e} (coercivity margin delta0 = {delta0:.3e})"
        )));
    }
    let (phi, psi) = unpack(problem.grid, &x);
    let energy = report(problem, &phi, &psi);
    Ok(LinearSolution {
        phi,
        psi,
        residual_inf: abs,
        residual_rel: rel,
        energy,
    })
}

/// Independent solution path: subtract the x1-constant extensions of the
/// exit data, solve the homogeneous-boundary system with transformed loads,
/// and add the extensions back. Requires the pipeline boundary structure
/// (constant wall data matching the exit profile's endpoints).
pub fn homogenize_oracle(
    problem: &LinearProblem,
    method: SolveMethod,
) -> Result<LinearSolution, SolverError> {
    require_pipeline_walls(problem)?;
    let lift = Lift {
        phi_exit: &problem.phi_exit,
        psi_exit: &problem.psi_exit,
    };
    let asm = assemble_inner(problem, Some(&lift))?;
    let (x, abs, rel) = solve_assembled(asm, method)?;
    if rel > SOLVE_TOL {
        return Err(SolverError::LinearSolve(format!(
            "homogenized path relative residual {rel:.3e} exceeds {SOLVE_TOL:.1e}"
        )));
    }
    let (u, v) = unpack(problem.grid, &x);
    let phi = ScalarField::from_index_fn(problem.grid, "phi", |i, j| {
        u.at(i, j) + problem.phi_exit[j]
    });
    let psi = ScalarField::from_index_fn(problem.grid, "psi", |i, j| {
        v.at(i, j) + problem.psi_exit[j]
    });
    let energy = report(problem, &phi, &psi);
    Ok(LinearSolution {
        phi,
        psi,
        residual_inf: abs,
        residual_rel: rel,
        energy,
    })
}

/// Discrete quadratic form of the symmetric part of the operator:
///
/// ```text
///   sum_faces a_face (dphi/h)^2 |face|  +  sum_faces (dPsi/h)^2 |face|
///   + sum_nodes d Psi^2 |volume|,
/// ```
///
/// valid for fields satisfying homogeneous Dirichlet data (the b2/c2
/// coupling cancels identically there).
pub fn energy_quadratic_form(
    grid: &Grid,
    coeff: &CoefficientProfile,
    phi: &ScalarField,
    psi: &ScalarField,
) -> f64 {
    let (n1, n2) = (grid.n1, grid.n2);
    let (h1, h2) = (grid.h1(), grid.h2());
    let tau1 = |i: usize| if i == 0 || i == n1 { 0.5 } else { 1.0 };
    let tau2 = |j: usize| if j == 0 || j == n2 { 0.5 } else { 1.0 };
    let mut q = 0.0;
    for i in 0..n1 {
        let ae = 0.5 * (coeff.a11[i] + coeff.a11[i + 1]);
        for j in 0..=n2 {
            let len = tau2(j) * h2;
            let dphi = (phi.at(i + 1, j) - phi.at(i, j)) / h1;
            let dpsi = (psi.at(i + 1, j) - psi.at(i, j)) / h1;
            q += (ae * dphi * dphi + dpsi * dpsi) * h1 * len;
        }
    }
    for i in 0..=n1 {
        let len = tau1(i) * h1;
        for j in 0..n2 {
            let dphi = (phi.at(i, j + 1) - phi.at(i, j)) / h2;
            let dpsi = (psi.at(i, j + 1) - psi.at(i, j)) / h2;
            q += (coeff.a22[i] * dphi * dphi + dpsi * dpsi) * h2 * len;
        }
    }
    for i in 0..=n1 {
        for j in 0..=n2 {
            let w = tau1(i) * tau2(j) * h1 * h2;
            let p = psi.at(i, j);
            q += coeff.d[i] * p * p * w;
        }
    }
    q
}

/// Report of the spectral coercivity check.
#[derive(Debug, Clone)]
pub struct CoercivityReport {
    /// Smallest eigenvalue of the symmetric discrete form relative to the
    /// discrete H1 inner product on the homogeneous test space.
    pub lambda_min: f64,
    /// Coefficient-level margin delta0 (may be <= 0 for violating data).
    pub delta0: f64,
    pub lambda0: f64,
}

/// Spectral verification of coercivity: assemble the symmetric form and the
/// H1 Gram matrix on the homogeneous test space (phi zero on walls and
/// exit, Psi zero on the exit) and locate the smallest generalized
/// eigenvalue by inertia bisection. Reports the sign rather than asserting
/// it; meant for small grids.
pub fn coercivity_check(problem: &LinearProblem) -> Result<CoercivityReport, SolverError> {
    let grid = problem.grid;
    let (n1, n2) = (grid.n1, grid.n2);
    let (h1, h2) = (grid.h1(), grid.h2());
    let cf = &problem.coeff;
    let tau1 = |i: usize| if i == 0 || i == n1 { 0.5 } else { 1.0 };
    let tau2 = |j: usize| if j == 0 || j == n2 { 0.5 } else { 1.0 };

    // Reduced numbering over free dofs only, x2 fastest, phi before Psi at
    // each node, so the band stays tight.
    let mut map = vec![usize::MAX; 2 * (n1 + 1) * (n2 + 1)];
    let ix = Indexer { n2 };
    let mut n_red = 0usize;
    for i in 0..=n1 {
        for j in 0..=n2 {
            let phi_free = !(j == 0 || j == n2 || i == n1);
            let psi_free = i != n1;
            if phi_free {
                map[ix.phi(i, j)] = n_red;
                n_red += 1;
            }
            if psi_free {
                map[ix.psi(i, j)] = n_red;
                n_red += 1;
            }
        }
    }
    let bw = 2 * (n2 + 1) + 1;
    let mut s = SymBandMatrix::zeros(n_red, bw.min(n_red - 1));
    let mut m = SymBandMatrix::zeros(n_red, bw.min(n_red - 1));

    // Pairwise face contribution helper: adds w*(u_a - u_b)^2 to the form,
    // skipping fixed (zero) dofs.
    let face = |mat: &mut SymBandMatrix, a: usize, b: usize, w: f64| {
        let (ra, rb) = (map[a], map[b]);
        if ra != usize::MAX {
            mat.add(ra, ra, w);
        }
        if rb != usize::MAX {
            mat.add(rb, rb, w);
        }
        if ra != usize::MAX && rb != usize::MAX {
            mat.add(ra, rb, -w);
        }
    };

    for i in 0..n1 {
        let ae = 0.5 * (cf.a11[i] + cf.a11[i + 1]);
        for j in 0..=n2 {
            let len = tau2(j) * h2;
            let w = h1 * len / (h1 * h1);
            face(&mut s, ix.phi(i, j), ix.phi(i + 1, j), ae * w);
            face(&mut s, ix.psi(i, j), ix.psi(i + 1, j), w);
            face(&mut m, ix.phi(i, j), ix.phi(i + 1, j), w);
            face(&mut m, ix.psi(i, j), ix.psi(i + 1, j), w);
        }
    }
    for i in 0..=n1 {
        let len = tau1(i) * h1;
        for j in 0..n2 {
            let w = h2 * len / (h2 * h2);
            face(&mut s, ix.phi(i, j), ix.phi(i, j + 1), cf.a22[i] * w);
            face(&mut s, ix.psi(i, j), ix.psi(i, j + 1), w);
            face(&mut m, ix.phi(i, j), ix.phi(i, j + 1), w);
            face(&mut m, ix.psi(i, j), ix.psi(i, j + 1), w);
        }
    }
    for i in 0..=n1 {
        for j in 0..=n2 {
            let w = tau1(i) * tau2(j) * h1 * h2;
            if map[ix.psi(i, j)] != usize::MAX {
                let r = map[ix.psi(i, j)];
                s.add(r, r, cf.d[i] * w);
                m.add(r, r, w);
            }
            if map[ix.phi(i, j)] != usize::MAX {
                let r = map[ix.phi(i, j)];
                m.add(r, r, w);
            }
        }
    }

    let lambda_min = smallest_eigenvalue(&s, &m, -1.0e3, 2.0, 1e-8)?;
    Ok(CoercivityReport {
        lambda_min,
        delta0: cf.coercivity_margin(grid.length),
        lambda0: cf.lambda0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth synthetic coefficient profiles (positive diffusion, negative
    /// zeroth-order term) for operator-level tests.
    pub fn synthetic_coeff(grid: &Grid) -> CoefficientProfile {
        let n = grid.n1 + 1;
        let mut a11 = Vec::with_capacity(n);
        let mut a22 = Vec::with_capacity(n);
        let mut b2 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for i in 0..n {
            let t = grid.x1(i) / grid.length;
            a11.push(1.0 + 0.3 * (std::f64::consts::PI * t).sin());
            a22.push(1.2 + 0.2 * (std::f64::consts::PI * t).cos());
            let b = 0.35 * (2.0 * t - 1.0);
            b2.push(b);
            c2.push(-b);
            d.push(-(0.5 + 0.3 * t));
        }
        let a_min = a11
            .iter()
            .chain(&a22)
            .fold(f64::INFINITY, |m: f64, &v| m.min(v));
        let a_max = a11.iter().chain(&a22).fold(0.0_f64, |m, &v| m.max(v));
        CoefficientProfile {
            a11,
            a22,
            b2,
            c2,
            d,
            lambda0: a_min.min(1.0 / a_max),
        }
    }

    fn zero_problem(grid: Grid, coeff: CoefficientProfile) -> LinearProblem {
        let z = || ScalarField::zeros(grid, "z");
        LinearProblem::new(
            grid,
            coeff,
            z(),
            z(),
            z(),
            z(),
            vec![0.0; grid.n2 + 1],
            vec![0.0; grid.n2 + 1],
            vec![0.0; grid.n1 + 1],
            vec![0.0; grid.n1 + 1],
            vec![0.0; grid.n2 + 1],
            vec![0.0; grid.n2 + 1],
        )
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_solution_both_paths() {
        let grid = Grid::new(0.5, 12, 10).unwrap();
        let coeff = synthetic_coeff(&grid);
        let sol = solve(&zero_problem(grid, coeff.clone()), SolveMethod::Direct).unwrap();
        assert!(sol.phi.sup_norm() < 1e-13 && sol.psi.sup_norm() < 1e-13);
        let sol2 = homogenize_oracle(&zero_problem(grid, coeff), SolveMethod::Direct).unwrap();
        assert!(sol2.phi.sup_norm() < 1e-13 && sol2.psi.sup_norm() < 1e-13);
    }

    #[test]
    fn identity_coefficients_decouple_the_blocks() {
        let grid = Grid::new(0.7, 6, 6).unwrap();
        let n = grid.n1 + 1;
        let coeff = CoefficientProfile {
            a11: vec![1.0; n],
            a22: vec![1.0; n],
            b2: vec![0.0; n],
            c2: vec![0.0; n],
            d: vec![0.0; n],
            lambda0: 1.0,
        };
        let asm = assemble(&zero_problem(grid, coeff)).unwrap();
        // No matrix entry may couple a phi dof (even) with a Psi dof (odd).
        for i in 0..asm.csr.n_rows {
            for p in asm.csr.row_ptr[i]..asm.csr.row_ptr[i + 1] {
                let j = asm.csr.col_idx[p];
                assert_eq!(i % 2, j % 2, "coupling entry at ({i}, {j})");
            }
        }
    }

    #[test]
    fn laplacian_rows_annihilate_constants() {
        let grid = Grid::new(0.5, 8, 8).unwrap();
        let n = grid.n1 + 1;
        let coeff = CoefficientProfile {
            a11: vec![1.0; n],
            a22: vec![1.0; n],
            b2: vec![0.0; n],
            c2: vec![0.0; n],
            d: vec![0.0; n],
            lambda0: 1.0,
        };
        let asm = assemble(&zero_problem(grid, coeff)).unwrap();
        // Vector with Psi = 1 everywhere, phi = 0.
        let mut v = vec![0.0; asm.n_dof];
        for k in 0..asm.n_dof / 2 {
            v[2 * k + 1] = 1.0;
        }
        let mut out = vec![0.0; asm.n_dof];
        asm.csr.matvec(&v, &mut out);
        let ix = Indexer { n2: grid.n2 };
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                let r = ix.psi(i, j);
                if i == grid.n1 {
                    continue; // Dirichlet identity row sees the 1 itself
                }
                assert!(
                    out[r].abs() < 1e-13,
                    "row ({i}, {j}) applied to constants gives {}",
                    out[r]
                );
            }
        }
    }

    #[test]
    fn solution_inherits_x2_parity_of_the_data() {
        // The coupling ties the parities together: reflecting x2 flips the
        // sign of d2(b2 Psi) and of c2 d2 phi, so even f with odd g forces
        // phi even and Psi odd (coefficients depend on x1 only).
        let grid = Grid::new(0.5, 10, 12).unwrap();
        let coeff = synthetic_coeff(&grid);
        let mut p = zero_problem(grid, coeff);
        p.f = ScalarField::from_fn(grid, "f", |x1, x2| {
            (1.0 + x1) * (std::f64::consts::PI * x2).cos()
        });
        p.g = ScalarField::from_fn(grid, "g", |x1, x2| (0.5 + x1) * x2);
        let sol = solve(&p, SolveMethod::Direct).unwrap();
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                let jm = grid.n2 - j;
                assert!(
                    (sol.phi.at(i, j) - sol.phi.at(i, jm)).abs() < 1e-11,
                    "phi asymmetry at ({i}, {j})"
                );
                assert!(
                    (sol.psi.at(i, j) + sol.psi.at(i, jm)).abs() < 1e-11,
                    "psi parity violation at ({i}, {j})"
                );
            }
        }
    }

    #[test]
    fn krylov_path_matches_direct_path() {
        let grid = Grid::new(0.5, 10, 10).unwrap();
        let coeff = synthetic_coeff(&grid);
        let mut p = zero_problem(grid, coeff);
        p.f = ScalarField::from_fn(grid, "f", |x1, x2| (x1 - x2).sin());
        p.g = ScalarField::from_fn(grid, "g", |x1, x2| x1 * x2);
        let a = solve(&p, SolveMethod::Direct).unwrap();
        let b = solve(&p, SolveMethod::Krylov).unwrap();
        assert!(a.phi.sup_diff(&b.phi) < 1e-9);
        assert!(a.psi.sup_diff(&b.psi) < 1e-9);
    }

    #[test]
    fn incompatible_psi_exit_data_is_rejected() {
        let grid = Grid::new(0.5, 8, 8).unwrap();
        let coeff = synthetic_coeff(&grid);
        let mut p = zero_problem(grid, coeff);
        // Linear exit profile has nonzero slope at the wall corners.
        p.psi_exit = (0..=grid.n2).map(|j| grid.x2(j)).collect();
        assert!(matches!(
            solve(&p, SolveMethod::Direct),
            Err(SolverError::Assembly(_))
        ));
    }
}
