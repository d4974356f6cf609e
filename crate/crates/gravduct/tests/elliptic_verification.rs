//! Grid-level verification of the coupled elliptic solver.
//!
//! The tests here pin the solver against independent references: a
//! manufactured smooth solution with known data, raw operator consistency at
//! interior nodes, agreement between the direct solve and the
//! boundary-lifted solution path, the discrete energy identity, and the
//! spectral coercivity check against a dense generalized eigensolve.

use gravduct::background::{integrate, BackgroundParams};
use gravduct::elliptic::{
    assemble, assemble_homogenized, coercivity_check, energy_quadratic_form, homogenize_oracle,
    solve, LinearProblem, SolveMethod,
};
use gravduct::formulation::{linear_coefficients, CoefficientProfile};
use gravduct::grid::{Grid, ScalarField};
use gravduct::linalg::{dot, solve_refined};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Duct half-width is fixed at 1; this is the duct length used throughout.
const ELL: f64 = 0.5;

fn canon() -> BackgroundParams {
    BackgroundParams {
        gamma: 2.0,
        m0: (2.0 * std::f64::consts::E).sqrt(),
        s0: 1.0,
        rho0: 2.0,
        g0: -1.0,
        length: ELL,
    }
}

// ---------------------------------------------------------------------------
// Synthetic smooth coefficients, duplicated analytically so the test can
// differentiate them in closed form.
// ---------------------------------------------------------------------------

fn a11_of(x1: f64) -> f64 {
    1.0 + 0.3 * (PI * x1 / ELL).sin()
}
fn da11_of(x1: f64) -> f64 {
    0.3 * PI / ELL * (PI * x1 / ELL).cos()
}
fn a22_of(x1: f64) -> f64 {
    1.2 + 0.2 * (PI * x1 / ELL).cos()
}
fn b2_of(x1: f64) -> f64 {
    0.35 * (2.0 * x1 / ELL - 1.0)
}
fn d_of(x1: f64) -> f64 {
    -(0.5 + 0.3 * x1 / ELL)
}

fn coeff_profile(grid: &Grid) -> CoefficientProfile {
    let n = grid.n1 + 1;
    let mut a11 = Vec::with_capacity(n);
    let mut a22 = Vec::with_capacity(n);
    let mut b2 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let x1 = grid.x1(i);
        a11.push(a11_of(x1));
        a22.push(a22_of(x1));
        b2.push(b2_of(x1));
        c2.push(-b2_of(x1));
        d.push(d_of(x1));
    }
    let lambda0 = a11
        .iter()
        .chain(&a22)
        .fold(f64::INFINITY, |m: f64, &v| m.min(v).min(1.0 / v));
    CoefficientProfile {
        a11,
        a22,
        b2,
        c2,
        d,
        lambda0,
    }
}

// ---------------------------------------------------------------------------
// Manufactured fields and the data they induce.
// ---------------------------------------------------------------------------

fn phi_star(x1: f64, x2: f64) -> f64 {
    (PI * x1 / (2.0 * ELL)).sin() * (PI * x2).cos()
}
fn d1_phi_star(x1: f64, x2: f64) -> f64 {
    PI / (2.0 * ELL) * (PI * x1 / (2.0 * ELL)).cos() * (PI * x2).cos()
}
fn d2_phi_star(x1: f64, x2: f64) -> f64 {
    -PI * (PI * x1 / (2.0 * ELL)).sin() * (PI * x2).sin()
}
fn psi_star(x1: f64, x2: f64) -> f64 {
    (PI * x1 / (2.0 * ELL)).cos() * (PI * x2).cos()
}
fn d2_psi_star(x1: f64, x2: f64) -> f64 {
    -PI * (PI * x1 / (2.0 * ELL)).cos() * (PI * x2).sin()
}

/// First operator applied to the manufactured pair:
/// d1(a11 d1 phi) + d2(a22 d2 phi + b2 Psi).
fn l1_star(x1: f64, x2: f64) -> f64 {
    let k1 = PI / (2.0 * ELL);
    let d11 = -k1 * k1 * phi_star(x1, x2);
    let d22 = -PI * PI * phi_star(x1, x2);
    da11_of(x1) * d1_phi_star(x1, x2) + a11_of(x1) * d11 + a22_of(x1) * d22
        + b2_of(x1) * d2_psi_star(x1, x2)
}

/// Second operator applied to the manufactured pair:
/// Lap Psi - d Psi - c2 d2 phi.
fn l2_star(x1: f64, x2: f64) -> f64 {
    let k1 = PI / (2.0 * ELL);
    let lap = -(k1 * k1 + PI * PI) * psi_star(x1, x2);
    lap - d_of(x1) * psi_star(x1, x2) - (-b2_of(x1)) * d2_phi_star(x1, x2)
}

fn flux1_star(x1: f64, x2: f64) -> f64 {
    0.2 * (PI * x1 / ELL).cos() * (PI * x2).cos()
}
fn flux2_star(x1: f64, x2: f64) -> f64 {
    0.15 * (PI * x1 / ELL).sin() * (PI * x2).sin()
}
fn div_flux_star(x1: f64, x2: f64) -> f64 {
    -0.2 * PI / ELL * (PI * x1 / ELL).sin() * (PI * x2).cos()
        + 0.15 * PI * (PI * x1 / ELL).sin() * (PI * x2).cos()
}

fn mms_problem(grid: Grid) -> LinearProblem {
    let coeff = coeff_profile(&grid);
    let f = ScalarField::from_fn(grid, "f", |x1, x2| l1_star(x1, x2) - div_flux_star(x1, x2));
    let f1 = ScalarField::from_fn(grid, "flux1", flux1_star);
    let f2 = ScalarField::from_fn(grid, "flux2", flux2_star);
    let g = ScalarField::from_fn(grid, "g", l2_star);
    let jen: Vec<f64> = (0..=grid.n2).map(|j| d1_phi_star(0.0, grid.x2(j))).collect();
    let gen0 = vec![0.0; grid.n2 + 1];
    let pbot: Vec<f64> = (0..=grid.n1).map(|i| phi_star(grid.x1(i), -1.0)).collect();
    let ptop: Vec<f64> = (0..=grid.n1).map(|i| phi_star(grid.x1(i), 1.0)).collect();
    let pex: Vec<f64> = (0..=grid.n2).map(|j| phi_star(ELL, grid.x2(j))).collect();
    let psex = vec![0.0; grid.n2 + 1];
    LinearProblem::new(grid, coeff, f, f1, f2, g, jen, gen0, pbot, ptop, pex, psex).unwrap()
}

/// Least-squares convergence order from max-norm errors under successive
/// grid doubling.
fn fit_order(errs: &[f64]) -> f64 {
    let n = errs.len() as f64;
    let kbar = (0..errs.len()).map(|k| k as f64).sum::<f64>() / n;
    let ebar = errs.iter().map(|e| e.log2()).sum::<f64>() / n;
    let num: f64 = errs
        .iter()
        .enumerate()
        .map(|(k, e)| (k as f64 - kbar) * (e.log2() - ebar))
        .sum();
    let den: f64 = (0..errs.len()).map(|k| (k as f64 - kbar).powi(2)).sum();
    -num / den
}

// ---------------------------------------------------------------------------
// Shared builders for random but admissible pipeline data.
// ---------------------------------------------------------------------------

fn zero_problem(grid: Grid, coeff: CoefficientProfile) -> LinearProblem {
    let z = |name: &str| ScalarField::from_fn(grid, name, |_, _| 0.0);
    LinearProblem::new(
        grid,
        coeff,
        z("f"),
        z("flux1"),
        z("flux2"),
        z("g"),
        vec![0.0; grid.n2 + 1],
        vec![0.0; grid.n2 + 1],
        vec![0.0; grid.n1 + 1],
        vec![0.0; grid.n1 + 1],
        vec![0.0; grid.n2 + 1],
        vec![0.0; grid.n2 + 1],
    )
    .unwrap()
}

/// Random smooth data with the pipeline boundary structure (zero phi inlet
/// flux, exit profile integrated from a slope, flat-ended psi exit data).
/// Amplitudes are drawn from `lo..hi`, with signs flipped only if `signed`.
fn random_pipeline_problem(
    grid: Grid,
    coeff: CoefficientProfile,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    signed: bool,
) -> LinearProblem {
    let mut amp = || {
        let m = rng.gen_range(lo..hi);
        if signed && rng.gen::<bool>() {
            -m
        } else {
            m
        }
    };
    let c: Vec<f64> = (0..14).map(|_| amp()).collect();
    let ell = grid.length;
    let f = ScalarField::from_fn(grid, "f", |x1, x2| {
        c[0] + c[1] * (PI * x1 / ell).sin() * (PI * x2).cos()
            + c[2] * (2.0 * PI * x2).cos() * (x1 / ell)
    });
    let f1 = ScalarField::from_fn(grid, "flux1", |x1, x2| {
        c[3] * (PI * x1 / ell).cos() * (PI * x2).cos() + c[4] * (1.0 - x2 * x2)
    });
    let f2 = ScalarField::from_fn(grid, "flux2", |x1, x2| {
        c[5] * (PI * x1 / ell).sin() * (PI * x2).sin() + c[6] * x2 * (x1 / ell)
    });
    let g = ScalarField::from_fn(grid, "g", |x1, x2| {
        c[7] + c[8] * (PI * x1 / (2.0 * ell)).cos() * (PI * x2).cos()
    });
    let g_en: Vec<f64> = (0..=grid.n2)
        .map(|j| {
            let x2 = grid.x2(j);
            c[9] * (1.0 - x2 * x2)
        })
        .collect();
    let slope: Vec<f64> = (0..=grid.n2)
        .map(|j| {
            let x2 = grid.x2(j);
            c[10] * (PI * x2).cos() + 0.3 * c[11] * x2
        })
        .collect();
    let psx: Vec<f64> = (0..=grid.n2)
        .map(|j| c[13] * (PI * (grid.x2(j) + 1.0)).cos())
        .collect();
    LinearProblem::from_exit_slope(grid, coeff, f, f1, f2, g, g_en, &slope, psx).unwrap()
}

// ---------------------------------------------------------------------------
// Tests.
// ---------------------------------------------------------------------------

/// Apply the assembled matrix to samples of the manufactured fields and
/// compare row values (scaled by cell volume) with the analytic operators at
/// interior nodes; the defect must shrink at second order.
#[test]
fn assembled_operator_is_second_order_consistent_inside() {
    let mut errs = Vec::new();
    for n in [16usize, 32] {
        let grid = Grid::new(ELL, n, n).unwrap();
        let p = zero_problem(grid, coeff_profile(&grid));
        let asm = assemble(&p).unwrap();

        let n2 = grid.n2;
        let mut x = vec![0.0; asm.n_dof];
        for i in 0..=grid.n1 {
            for j in 0..=n2 {
                let k = 2 * (i * (n2 + 1) + j);
                x[k] = phi_star(grid.x1(i), grid.x2(j));
                x[k + 1] = psi_star(grid.x1(i), grid.x2(j));
            }
        }
        let mut y = vec![0.0; asm.n_dof];
        asm.csr.matvec(&x, &mut y);

        // Rows encode the negated flux balance, so y / vol approaches -L u.
        let vol = grid.h1() * grid.h2();
        let mut worst = 0.0_f64;
        for i in 1..grid.n1 {
            for j in 1..n2 {
                let (x1, x2) = (grid.x1(i), grid.x2(j));
                let k = 2 * (i * (n2 + 1) + j);
                worst = worst.max((y[k] / vol + l1_star(x1, x2)).abs());
                worst = worst.max((y[k + 1] / vol + l2_star(x1, x2)).abs());
            }
        }
        errs.push(worst);
    }
    let ratio = errs[0] / errs[1];
    assert!(
        (3.3..4.7).contains(&ratio),
        "operator consistency defect should quarter under doubling: {errs:?} ratio {ratio:.3}"
    );
}

/// Full solve against the manufactured solution over three grid doublings:
/// both fields must converge at (close to) second order in the max norm.
#[test]
fn manufactured_solution_converges_at_second_order() {
    let mut e_phi = Vec::new();
    let mut e_psi = Vec::new();
    for n in [16usize, 32, 64] {
        let grid = Grid::new(ELL, n, n).unwrap();
        let p = mms_problem(grid);
        let sol = solve(&p, SolveMethod::Direct).unwrap();
        let (mut e1, mut e2) = (0.0_f64, 0.0_f64);
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                let (x1, x2) = (grid.x1(i), grid.x2(j));
                e1 = e1.max((sol.phi.at(i, j) - phi_star(x1, x2)).abs());
                e2 = e2.max((sol.psi.at(i, j) - psi_star(x1, x2)).abs());
            }
        }
        e_phi.push(e1);
        e_psi.push(e2);
    }
    let (op, os) = (fit_order(&e_phi), fit_order(&e_psi));
    assert!(
        op >= 1.9,
        "phi converges at order {op:.3} < 1.9 (errors {e_phi:?})"
    );
    assert!(
        os >= 1.9,
        "psi converges at order {os:.3} < 1.9 (errors {e_psi:?})"
    );
    assert!(e_phi[2] < 5e-3 && e_psi[2] < 5e-3, "absolute errors too large");
}

/// The boundary-lifted path and the direct path are algebraically equivalent
/// reformulations; their solutions must agree to rounding on admissible
/// random data, including non-square grids.
#[test]
fn lifted_and_direct_solution_paths_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0B5E_55ED);
    for draw in 0..5 {
        let grid = Grid::new(ELL, 40, 32).unwrap();
        let p = random_pipeline_problem(grid, coeff_profile(&grid), &mut rng, 0.3, 1.0, true);
        let a = solve(&p, SolveMethod::Direct).unwrap();
        let b = homogenize_oracle(&p, SolveMethod::Direct).unwrap();
        let mut gap = 0.0_f64;
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                gap = gap.max((a.phi.at(i, j) - b.phi.at(i, j)).abs());
                gap = gap.max((a.psi.at(i, j) - b.psi.at(i, j)).abs());
            }
        }
        assert!(
            gap <= 1e-8,
            "draw {draw}: solution paths diverge by {gap:.3e}"
        );
    }
}

/// On the homogenized system the face-sum quadratic form of the solution
/// equals its pairing with the load vector — the discrete analogue of
/// testing the weak form against the solution itself. The cross terms of
/// the two equations cancel exactly, so this holds to rounding.
#[test]
fn energy_identity_matches_work_pairing() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0E4E_26F1);
    for draw in 0..3 {
        let grid = Grid::new(ELL, 24, 20).unwrap();
        let coeff = coeff_profile(&grid);
        let p = random_pipeline_problem(grid, coeff.clone(), &mut rng, 0.3, 1.0, true);
        let asm = assemble_homogenized(&p).unwrap();
        let lu = asm.band.clone().factor().unwrap();
        let (x, _) = solve_refined(&lu, &asm.csr, &asm.load, 3);
        let pairing = dot(&x, &asm.load);

        let n2 = grid.n2;
        let u = ScalarField::from_index_fn(grid, "u", |i, j| x[2 * (i * (n2 + 1) + j)]);
        let v = ScalarField::from_index_fn(grid, "v", |i, j| x[2 * (i * (n2 + 1) + j) + 1]);
        let q = energy_quadratic_form(&grid, &coeff, &u, &v);

        assert!(q > 0.0, "draw {draw}: quadratic form not positive: {q:.3e}");
        let scale = q.abs().max(pairing.abs()).max(1.0);
        assert!(
            (q - pairing).abs() <= 1e-10 * scale,
            "draw {draw}: energy {q:.15e} vs pairing {pairing:.15e}"
        );
    }
}

/// With identity coefficients the smallest generalized eigenvalue has a
/// closed form: the mixed Neumann–Dirichlet Poincare constant of the duct
/// gives nu = (pi / (2 L))^2 and lambda = nu / (1 + nu), attained on the
/// Psi block (the phi block starts higher because of its wall conditions).
#[test]
fn coercivity_eigenvalue_matches_poincare_prediction() {
    let n = 32;
    let grid = Grid::new(ELL, n, n).unwrap();
    let m = n + 1;
    let coeff = CoefficientProfile {
        a11: vec![1.0; m],
        a22: vec![1.0; m],
        b2: vec![0.0; m],
        c2: vec![0.0; m],
        d: vec![0.0; m],
        lambda0: 1.0,
    };
    let rep = coercivity_check(&zero_problem(grid, coeff)).unwrap();
    let nu = (PI / (2.0 * ELL)).powi(2);
    let pred = nu / (1.0 + nu);
    assert!(rep.lambda_min > 0.0);
    assert!(
        (rep.lambda_min - pred).abs() <= 0.1 * pred,
        "smallest eigenvalue {:.6} vs Poincare prediction {pred:.6}",
        rep.lambda_min
    );
    assert!((rep.delta0 - 1.0).abs() < 1e-15);
}

/// Cross-check the banded inertia-bisection eigensolve against a dense
/// generalized eigensolve built independently in this test.
#[test]
fn coercivity_eigenvalue_matches_dense_generalized_eigensolve() {
    let (n1, n2) = (10usize, 8usize);
    let grid = Grid::new(ELL, n1, n2).unwrap();
    let coeff = coeff_profile(&grid);
    let rep = coercivity_check(&zero_problem(grid, coeff.clone())).unwrap();

    // Independent reduced numbering of the free unknowns (any bijection
    // gives the same spectrum).
    let id = |i: usize, j: usize, c: usize| 2 * (i * (n2 + 1) + j) + c;
    let mut map = vec![None; 2 * (n1 + 1) * (n2 + 1)];
    let mut n_red = 0usize;
    for i in 0..=n1 {
        for j in 0..=n2 {
            if !(j == 0 || j == n2 || i == n1) {
                map[id(i, j, 0)] = Some(n_red);
                n_red += 1;
            }
            if i != n1 {
                map[id(i, j, 1)] = Some(n_red);
                n_red += 1;
            }
        }
    }

    let mut s = DMatrix::<f64>::zeros(n_red, n_red);
    let mut m = DMatrix::<f64>::zeros(n_red, n_red);
    let face = |mat: &mut DMatrix<f64>, a: Option<usize>, b: Option<usize>, w: f64| {
        if let Some(ra) = a {
            mat[(ra, ra)] += w;
        }
        if let Some(rb) = b {
            mat[(rb, rb)] += w;
        }
        if let (Some(ra), Some(rb)) = (a, b) {
            mat[(ra, rb)] -= w;
            mat[(rb, ra)] -= w;
        }
    };
    let (h1, h2) = (grid.h1(), grid.h2());
    let tau1 = |i: usize| if i == 0 || i == n1 { 0.5 } else { 1.0 };
    let tau2 = |j: usize| if j == 0 || j == n2 { 0.5 } else { 1.0 };
    for i in 0..n1 {
        let ae = 0.5 * (coeff.a11[i] + coeff.a11[i + 1]);
        for j in 0..=n2 {
            let w = tau2(j) * h2 / h1;
            face(&mut s, map[id(i, j, 0)], map[id(i + 1, j, 0)], ae * w);
            face(&mut s, map[id(i, j, 1)], map[id(i + 1, j, 1)], w);
            face(&mut m, map[id(i, j, 0)], map[id(i + 1, j, 0)], w);
            face(&mut m, map[id(i, j, 1)], map[id(i + 1, j, 1)], w);
        }
    }
    for i in 0..=n1 {
        for j in 0..n2 {
            let w = tau1(i) * h1 / h2;
            face(&mut s, map[id(i, j, 0)], map[id(i, j + 1, 0)], coeff.a22[i] * w);
            face(&mut s, map[id(i, j, 1)], map[id(i, j + 1, 1)], w);
            face(&mut m, map[id(i, j, 0)], map[id(i, j + 1, 0)], w);
            face(&mut m, map[id(i, j, 1)], map[id(i, j + 1, 1)], w);
        }
    }
    for i in 0..=n1 {
        for j in 0..=n2 {
            let w = tau1(i) * tau2(j) * h1 * h2;
            if let Some(r) = map[id(i, j, 1)] {
                s[(r, r)] += coeff.d[i] * w;
                m[(r, r)] += w;
            }
            if let Some(r) = map[id(i, j, 0)] {
                m[(r, r)] += w;
            }
        }
    }

    let chol = m.cholesky().expect("gram matrix must be positive definite");
    let l = chol.l();
    let t = l.solve_lower_triangular(&s).unwrap();
    let b = l.solve_lower_triangular(&t.transpose()).unwrap();
    let eig = b.symmetric_eigen();
    let lmin = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v));
    assert!(
        (rep.lambda_min - lmin).abs() <= 1e-6 * lmin.abs().max(1.0),
        "banded bisection {:.9} vs dense {:.9}",
        rep.lambda_min,
        lmin
    );
}

/// Physical background coefficients sit inside the margin and must report a
/// positive eigenvalue; inflating the zeroth-order term far past 2 / L^2
/// pushes the form indefinite and the report must say so.
#[test]
fn coercivity_reflects_the_zeroth_order_margin() {
    let bg = integrate(&canon(), 17).unwrap();
    let coeff = linear_coefficients(&bg).unwrap();
    let grid = Grid::new(ELL, 16, 16).unwrap();
    let rep = coercivity_check(&zero_problem(grid, coeff)).unwrap();
    assert!(rep.delta0 > 0.0, "background margin should be positive");
    assert!(
        rep.lambda_min > 0.0,
        "background coefficients should be coercive, got {:.6}",
        rep.lambda_min
    );

    let m = 17;
    let dval = -5.0 * 2.0 / (ELL * ELL);
    let bad = CoefficientProfile {
        a11: vec![1.0; m],
        a22: vec![1.0; m],
        b2: vec![0.0; m],
        c2: vec![0.0; m],
        d: vec![dval; m],
        lambda0: 1.0,
    };
    let rep2 = coercivity_check(&zero_problem(grid, bad)).unwrap();
    assert!(rep2.delta0 <= 0.0);
    assert!(
        rep2.lambda_min <= 0.0,
        "inflated zeroth-order term should break coercivity, got {:.6}",
        rep2.lambda_min
    );
}

/// The ratio of solution energy to data size stays within a narrow band
/// over repeated draws: the stability constant of the linear solve does not
/// wander with the data.
#[test]
fn solution_bound_constant_is_stable_across_draws() {
    let bg = integrate(&canon(), 33).unwrap();
    let coeff = linear_coefficients(&bg).unwrap();
    let grid = Grid::new(ELL, 32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x57AB_1E00);
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let p = random_pipeline_problem(grid, coeff.clone(), &mut rng, 0.8, 1.2, false);
        let sol = solve(&p, SolveMethod::Direct).unwrap();
        let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let data = sup(p.f.values())
            + sup(p.flux1.values())
            + sup(p.flux2.values())
            + sup(p.g.values())
            + sup(&p.psi_inlet_flux)
            + sup(&p.phi_exit)
            + sup(&p.psi_exit);
        let c = (sol.energy.h1_phi + sol.energy.h1_psi) / data;
        ratios.push(c);
    }
    let cmax = ratios.iter().fold(0.0_f64, |m, &v| m.max(v));
    let cmin = ratios.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    assert!(
        cmax / cmin < 2.0,
        "stability constant varies too much: min {cmin:.4}, max {cmax:.4}"
    );
}
