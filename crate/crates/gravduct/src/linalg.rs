//! Linear algebra kernels sized for banded systems from tensor grids.
//!
//! The discretized coupled system interleaves two unknowns per grid node, so
//! its matrix is banded with half-bandwidth proportional to the transverse
//! node count. Everything here is written against that shape:
//!
//! - [`BandMatrix`] / [`BandLu`]: LU with partial pivoting in the classic
//!   LAPACK band layout (extra fill rows for pivoting), plus single-vector
//!   triangular solves.
//! - [`SymBandMatrix`]: lower-triangle band storage with an unpivoted LDL^T
//!   whose diagonal signs give matrix inertia; [`smallest_eigenvalue`]
//!   runs inertia bisection on the pencil (S, M) to locate the smallest
//!   generalized eigenvalue without ever forming dense matrices.
//! - [`Coo`] / [`Csr`]: sparse triplet assembly and row storage, used for
//!   cheap residual evaluation (iterative refinement) and as the operand
//!   format of the Krylov path.
//! - [`Ilu0`] + [`bicgstab`]: zero-fill incomplete factorization and a
//!   stabilized bi-conjugate gradient loop, available as an alternative to
//!   the direct factorization.

use crate::error::SolverError;

/// General banded matrix in column-major LAPACK storage with `kl` extra fill
/// rows so the factorization can pivot in place. Entry (i, j) is stored when
/// `-ku <= i - j <= kl`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    nrows: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0);
        let nrows = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            nrows,
            ab: vec![0.0; nrows * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        assert!(i < self.n && j < self.n, "index ({i}, {j}) out of range");
        let (ii, jj) = (i as isize, j as isize);
        assert!(
            jj - ii <= self.ku as isize && ii - jj <= self.kl as isize,
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        j * self.nrows + (self.kl + self.ku + i) - j
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (ii, jj) = (i as isize, j as isize);
        if jj - ii > self.ku as isize || ii - jj > self.kl as isize {
            return 0.0;
        }
        self.ab[j * self.nrows + (self.kl + self.ku + i) - j]
    }

    /// Factor in place with partial pivoting. Fails only on an exactly zero
    /// pivot; near-singularity is recorded for the caller to inspect.
    pub fn factor(mut self) -> Result<BandLu, SolverError> {
        let (n, kl, ku, nrows) = (self.n, self.kl, self.ku, self.nrows);
        let kv = kl + ku;
        let ab = &mut self.ab;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0_f64;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * nrows;
            let mut jp = 0usize;
            let mut pmax = ab[col + kv].abs();
            for t in 1..=km {
                let v = ab[col + kv + t].abs();
                if v > pmax {
                    pmax = v;
                    jp = t;
                }
            }
            ipiv[j] = j + jp;
            if pmax == 0.0 {
                return Err(SolverError::LinearSolve(format!(
                    "zero pivot at elimination step {j}"
                )));
            }
            min_pivot = min_pivot.min(pmax);
            max_pivot = max_pivot.max(pmax);
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * nrows + kv - (c - j);
                    ab.swap(base, base + jp);
                }
            }
            if km > 0 {
                let d = ab[col + kv];
                for t in 1..=km {
                    ab[col + kv + t] /= d;
                }
                for c in (j + 1)..=ju {
                    let base = c * nrows + kv - (c - j);
                    let mult = ab[base];
                    if mult != 0.0 {
                        for t in 1..=km {
                            ab[base + t] -= mult * ab[col + kv + t];
                        }
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            nrows,
            ab: self.ab,
            ipiv,
            min_pivot,
            max_pivot,
        })
    }
}

/// Factored band matrix; solves overwrite the right-hand side.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    nrows: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
    min_pivot: f64,
    max_pivot: f64,
}

impl BandLu {
    /// Crude conditioning indicator: smallest over largest pivot magnitude.
    pub fn pivot_ratio(&self) -> f64 {
        self.min_pivot / self.max_pivot
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let (n, kl, nrows) = (self.n, self.kl, self.nrows);
        let kv = self.kl + self.ku;
        for j in 0..n {
            let jp = self.ipiv[j];
            if jp != j {
                b.swap(j, jp);
            }
            let km = kl.min(n - 1 - j);
            let col = j * nrows;
            let bj = b[j];
            if bj != 0.0 {
                for t in 1..=km {
                    b[j + t] -= self.ab[col + kv + t] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * nrows;
            let xj = b[j] / self.ab[col + kv];
            b[j] = xj;
            if xj != 0.0 {
                let lm = kv.min(j);
                for t in 1..=lm {
                    b[j - t] -= self.ab[col + kv - t] * xj;
                }
            }
        }
    }
}

/// Symmetric banded matrix, lower triangle only: entry (i, j) with
/// `j <= i <= j + bw` lives at `store[j * (bw + 1) + (i - j)]`.
#[derive(Debug, Clone)]
pub struct SymBandMatrix {
    n: usize,
    bw: usize,
    store: Vec<f64>,
}

impl SymBandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        assert!(n > 0);
        SymBandMatrix {
            n,
            bw,
            store: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Accumulate into the symmetric entry; either triangle may be addressed.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r < self.n, "index ({i}, {j}) out of range");
        assert!(r - c <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        self.store[c * (self.bw + 1) + (r - c)] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            return 0.0;
        }
        self.store[c * (self.bw + 1) + (r - c)]
    }

    /// self - tau * other, with the result band wide enough for both.
    pub fn shifted(&self, other: &SymBandMatrix, tau: f64) -> SymBandMatrix {
        assert_eq!(self.n, other.n);
        let bw = self.bw.max(other.bw);
        let mut out = SymBandMatrix::zeros(self.n, bw);
        for j in 0..self.n {
            for t in 0..=bw.min(self.n - 1 - j) {
                let v = self.get(j + t, j) - tau * other.get(j + t, j);
                if v != 0.0 {
                    out.store[j * (bw + 1) + t] = v;
                }
            }
        }
        out
    }

    /// Unpivoted LDL^T; returns the inertia (negative, zero, positive counts
    /// of D). Breakdown — a diagonal entry too close to zero relative to the
    /// matrix scale while subsequent columns remain — is reported so the
    /// caller can nudge the shift and retry.
    pub fn ldlt_inertia(&self) -> Result<(usize, usize, usize), SolverError> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut fac = self.store.clone();
        let scale = self
            .store
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let zero_tol = 1e-13 * scale;
        let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);
        for j in 0..n {
            let mut d = fac[j * w];
            for k in j.saturating_sub(bw)..j {
                let l_jk = fac[k * w + (j - k)];
                let dk = fac[k * w];
                d -= l_jk * l_jk * dk;
            }
            fac[j * w] = d;
            if d.abs() <= zero_tol {
                if j + 1 == n {
                    zero += 1;
                    continue;
                }
                return Err(SolverError::Eigen(format!(
                    "ldlt breakdown at column {j}: |d| = {:.3e}",
                    d.abs()
                )));
            }
            if d < 0.0 {
                neg += 1;
            } else {
                pos += 1;
            }
            for i in (j + 1)..=(j + bw).min(n - 1) {
                let mut v = fac[j * w + (i - j)];
                for k in i.saturating_sub(bw)..j {
                    v -= fac[k * w + (i - k)] * fac[k * w + (j - k)] * fac[k * w];
                }
                fac[j * w + (i - j)] = v / d;
            }
        }
        Ok((neg, zero, pos))
    }
}

/// Count generalized eigenvalues of (s, m) strictly below `tau`, nudging the
/// shift slightly on factorization breakdown.
fn eig_count_below(
    s: &SymBandMatrix,
    m: &SymBandMatrix,
    tau: f64,
    span: f64,
) -> Result<usize, SolverError> {
    let mut last = None;
    for attempt in 0..6 {
        let nudge = attempt as f64 * attempt as f64 * 1e-11 * span;
        match s.shifted(m, tau + nudge).ldlt_inertia() {
            Ok((neg, zero, _pos)) => return Ok(neg + zero),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

/// Smallest generalized eigenvalue of `s x = lambda m x` (m positive
/// definite) located by inertia bisection inside `[lo, hi]`. Errors if an
/// eigenvalue lies below `lo`; widens `hi` automatically if none lies below.
pub fn smallest_eigenvalue(
    s: &SymBandMatrix,
    m: &SymBandMatrix,
    lo: f64,
    hi: f64,
    rel_tol: f64,
) -> Result<f64, SolverError> {
    assert!(lo < hi && rel_tol > 0.0);
    let mut lo = lo;
    let mut hi = hi;
    let span0 = hi - lo;
    if eig_count_below(s, m, lo, span0)? > 0 {
        return Err(SolverError::Eigen(format!(
            "eigenvalue below search window start {lo}"
        )));
    }
    let mut grow = 0;
    while eig_count_below(s, m, hi, span0)? == 0 {
        grow += 1;
        if grow > 60 {
            return Err(SolverError::Eigen(
                "no eigenvalue found while widening search window".into(),
            ));
        }
        hi = lo + 2.0 * (hi - lo);
    }
    let span = hi - lo;
    while hi - lo > rel_tol * lo.abs().max(hi.abs()).max(1e-30) {
        let mid = 0.5 * (lo + hi);
        if eig_count_below(s, m, mid, span)? > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Triplet accumulator for sparse assembly.
#[derive(Debug, Clone)]
pub struct Coo {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Coo {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n_rows && j < self.n_cols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn to_csr(&self) -> Csr {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(i, j, v) in &entries {
            if prev == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(j);
            vals.push(v);
            row_ptr[i + 1] = col_idx.len();
            prev = Some((i, j));
        }
        // Rows without entries inherit the previous offset.
        for i in 1..=self.n_rows {
            if row_ptr[i] < row_ptr[i - 1] {
                row_ptr[i] = row_ptr[i - 1];
            }
        }
        Csr {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

/// Compressed sparse rows with sorted column indices per row.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.col_idx[p]];
            }
            y[i] = acc;
        }
    }

    /// b - A x, freshly allocated.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_rows];
        self.matvec(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct solve with a couple of refinement passes against the sparse
/// original; returns the solution and its final relative residual.
pub fn solve_refined(lu: &BandLu, a: &Csr, b: &[f64], passes: usize) -> (Vec<f64>, f64) {
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    let scale = norm_inf(b).max(1e-300);
    let mut rel = norm_inf(&a.residual(&x, b)) / scale;
    for _ in 0..passes {
        if rel < 1e-15 {
            break;
        }
        let mut dx = a.residual(&x, b);
        lu.solve_in_place(&mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        let new_rel = norm_inf(&a.residual(&x, b)) / scale;
        if new_rel >= rel {
            break;
        }
        rel = new_rel;
    }
    (x, rel)
}

/// Zero-fill incomplete LU of a CSR matrix (sorted columns required).
#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self, SolverError> {
        assert_eq!(a.n_rows, a.n_cols);
        let n = a.n_rows;
        let mut vals = a.vals.clone();
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                if a.col_idx[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(SolverError::LinearSolve(format!(
                    "ilu0: structurally missing diagonal in row {i}"
                )));
            }
        }
        let mut scatter = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (a.row_ptr[i], a.row_ptr[i + 1]);
            for p in lo..hi {
                scatter[a.col_idx[p]] = p;
            }
            for p in lo..hi {
                let k = a.col_idx[p];
                if k >= i {
                    break;
                }
                let dkk = vals[diag[k]];
                if dkk == 0.0 {
                    return Err(SolverError::LinearSolve(format!(
                        "ilu0: zero pivot in row {k}"
                    )));
                }
                vals[p] /= dkk;
                let lik = vals[p];
                for p2 in (diag[k] + 1)..a.row_ptr[k + 1] {
                    let j = a.col_idx[p2];
                    let target = scatter[j];
                    if target != usize::MAX {
                        vals[target] -= lik * vals[p2];
                    }
                }
            }
            for p in lo..hi {
                scatter[a.col_idx[p]] = usize::MAX;
            }
            if vals[diag[i]] == 0.0 {
                return Err(SolverError::LinearSolve(format!(
                    "ilu0: zero pivot in row {i}"
                )));
            }
        }
        Ok(Ilu0 {
            n,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            vals,
            diag,
        })
    }

    /// z = (LU)^{-1} r with unit lower triangle.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        assert_eq!(r.len(), self.n);
        z.copy_from_slice(r);
        for i in 0..self.n {
            let mut acc = z[i];
            for p in self.row_ptr[i]..self.diag[i] {
                acc -= self.vals[p] * z[self.col_idx[p]];
            }
            z[i] = acc;
        }
        for i in (0..self.n).rev() {
            let mut acc = z[i];
            for p in (self.diag[i] + 1)..self.row_ptr[i + 1] {
                acc -= self.vals[p] * z[self.col_idx[p]];
            }
            z[i] = acc / self.vals[self.diag[i]];
        }
    }
}

/// Preconditioned BiCGSTAB; returns the solution and iteration count.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x0: &[f64],
    precond: Option<&Ilu0>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), SolverError> {
    let n = b.len();
    let apply_m = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m.apply(r, z),
        None => z.copy_from_slice(r),
    };
    let b_norm = norm_inf(b).max(1e-300);
    let mut x = x0.to_vec();
    let mut r = a.residual(&x, b);
    if norm_inf(&r) / b_norm <= rel_tol {
        return Ok((x, 0));
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0_f64, 1.0_f64, 1.0_f64);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return Err(SolverError::LinearSolve(
                "bicgstab breakdown: rho vanished".into(),
            ));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply_m(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            return Err(SolverError::LinearSolve(
                "bicgstab breakdown: stagnant search direction".into(),
            ));
        }
        alpha = rho / denom;
        // s lives in r's storage from here on.
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm_inf(&r) / b_norm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok((x, it));
        }
        apply_m(&r, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            return Err(SolverError::LinearSolve(
                "bicgstab breakdown: zero correction".into(),
            ));
        }
        omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] -= omega * t[i];
        }
        if norm_inf(&r) / b_norm <= rel_tol {
            return Ok((x, it));
        }
    }
    Err(SolverError::LinearSolve(format!(
        "bicgstab failed to converge in {max_iter} iterations"
    )))
}
