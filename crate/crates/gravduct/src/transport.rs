//! Streamline transport of inlet traces.
//!
//! With the stream function in hand, entropy (and any quantity riding along
//! streamlines) is determined by its inlet profile: the level set of the
//! total stream function through a point leads back to a unique inlet
//! ordinate, and the transported field is the composition with that arrival
//! map. Writing `psi~ = m0 (x2 + 1) + phi` for the total stream function,
//! the arrival map `theta` solves
//!
//! ```text
//!   psi~(0, theta(x1, x2)) = psi~(x1, x2),        theta in [-1, 1],
//! ```
//!
//! which is well posed while the inlet trace stays strictly increasing in
//! x2. Differentiating the defining relation gives the gradient without any
//! extra solves:
//!
//! ```text
//!   grad theta(x) = grad psi~(x) / psi~_x2(0, theta(x)).
//! ```
//!
//! A transported scalar is then `S(x) = S_en(theta(x))`, so its range is
//! exactly the range of the inlet trace and its streamline derivative
//! vanishes identically in the continuum.
//!
//! The inlet trace is interpolated by a Fritsch–Carlson monotone cubic: it
//! reproduces nodal values, never overshoots, and keeps the strict
//! monotonicity the inversion relies on. Each node's arrival ordinate is
//! found by bisection on the bracketing segment followed by two Newton
//! polish steps with the interpolant derivative.

use crate::error::SolverError;
use crate::grid::ScalarField;

/// Monotonicity-preserving cubic interpolant (Fritsch–Carlson derivative
/// limiting on a Hermite basis).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// Fit nodal data on a strictly increasing abscissa grid. The data need
    /// not be monotone; wherever it is, the interpolant is too.
    pub fn fit(x: Vec<f64>, y: Vec<f64>) -> Result<Self, SolverError> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(SolverError::InvalidParams(
                "monotone cubic needs at least two matching nodes".into(),
            ));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SolverError::InvalidParams(
                "monotone cubic abscissae must be strictly increasing".into(),
            ));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidParams(
                "monotone cubic data must be finite".into(),
            ));
        }

        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();

        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = s[0];
            d[1] = s[0];
        } else {
            for k in 1..n - 1 {
                if s[k - 1] * s[k] <= 0.0 {
                    d[k] = 0.0;
                } else {
                    // Weighted harmonic mean of the adjacent secants; on a
                    // uniform grid this is the plain harmonic mean.
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
                }
            }
            d[0] = endpoint_slope(h[0], h[1], s[0], s[1]);
            d[n - 1] = endpoint_slope(h[n - 2], h[n - 3], s[n - 2], s[n - 3]);
        }
        Ok(MonotoneCubic { x, y, d })
    }

    pub fn nodes(&self) -> (&[f64], &[f64]) {
        (&self.x, &self.y)
    }

    /// Index of the segment whose closed interval contains `t` (clamped to
    /// the outermost segments).
    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        if t <= self.x[0] {
            return 0;
        }
        if t >= self.x[n - 2] {
            return n - 2;
        }
        // partition_point returns the first index with x > t, so the
        // segment starts one to the left.
        self.x.partition_point(|&v| v <= t) - 1
    }

    pub fn value(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let u = t - self.x[k];
        let sk = (self.y[k + 1] - self.y[k]) / h;
        let c2 = (3.0 * sk - 2.0 * self.d[k] - self.d[k + 1]) / h;
        let c3 = (self.d[k] + self.d[k + 1] - 2.0 * sk) / (h * h);
        self.y[k] + u * (self.d[k] + u * (c2 + u * c3))
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let h = self.x[k + 1] - self.x[k];
        let u = t - self.x[k];
        let sk = (self.y[k + 1] - self.y[k]) / h;
        let c2 = (3.0 * sk - 2.0 * self.d[k] - self.d[k + 1]) / h;
        let c3 = (self.d[k] + self.d[k + 1] - 2.0 * sk) / (h * h);
        self.d[k] + u * (2.0 * c2 + 3.0 * u * c3)
    }

    /// Invert strictly increasing data: find t with value(t) = w, clamping
    /// w into the data range. Queries that hit a nodal value return the
    /// node abscissa exactly, so identities survive bit for bit.
    pub fn invert_increasing(&self, w: f64) -> f64 {
        let n = self.x.len();
        let scale = self.y[0].abs().max(self.y[n - 1].abs()).max(1.0);
        let w = w.clamp(self.y[0], self.y[n - 1]);

        // Locate the bracketing segment in the nodal values.
        let k = if w <= self.y[0] {
            0
        } else if w >= self.y[n - 2] {
            n - 2
        } else {
            self.y.partition_point(|&v| v <= w) - 1
        };
        if (w - self.y[k]).abs() <= 1e-13 * scale {
            return self.x[k];
        }
        if (w - self.y[k + 1]).abs() <= 1e-13 * scale {
            return self.x[k + 1];
        }

        let (mut lo, mut hi) = (self.x[k], self.x[k + 1]);
        while hi - lo > 1e-8 {
            let mid = 0.5 * (lo + hi);
            if self.value(mid) < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..2 {
            let dv = self.derivative(t);
            if dv > 0.0 {
                t -= (self.value(t) - w) / dv;
            }
        }
        t.clamp(self.x[k], self.x[k + 1])
    }
}

/// Non-centered three-point slope estimate with the usual shape limits:
/// zeroed if it points against the local secant, capped at three times it
/// when the secants disagree in sign.
fn endpoint_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let mut d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d * s0 <= 0.0 {
        d = 0.0;
    } else if s0 * s1 < 0.0 && d.abs() > 3.0 * s0.abs() {
        d = 3.0 * s0;
    }
    d
}

/// Inlet profile supplied in closed form, so composition adds no sampling
/// error.
pub trait InletTrace {
    fn value(&self, x2: f64) -> f64;
    fn derivative(&self, x2: f64) -> f64;
}

/// Constant trace; transports to the same constant everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTrace(pub f64);

impl InletTrace for ConstantTrace {
    fn value(&self, _x2: f64) -> f64 {
        self.0
    }
    fn derivative(&self, _x2: f64) -> f64 {
        0.0
    }
}

/// Adapter for closure pairs.
pub struct FnTrace<V, D> {
    pub value: V,
    pub derivative: D,
}

impl<V: Fn(f64) -> f64, D: Fn(f64) -> f64> InletTrace for FnTrace<V, D> {
    fn value(&self, x2: f64) -> f64 {
        (self.value)(x2)
    }
    fn derivative(&self, x2: f64) -> f64 {
        (self.derivative)(x2)
    }
}

/// The arrival map of a stream-function iterate: inlet ordinates labelling
/// the streamline through every node, with gradients from the implicit
/// relation.
#[derive(Debug, Clone)]
pub struct StreamMap {
    pub m0: f64,
    /// Interpolated inlet trace of the total stream function.
    pub trace: MonotoneCubic,
    /// Arrival ordinate theta at each node.
    pub theta: ScalarField,
    /// Gradient components of theta.
    pub dtheta1: ScalarField,
    pub dtheta2: ScalarField,
    /// Sup over nodes of |psi~(0, theta) - psi~(x)|.
    pub defect: f64,
}

/// Build the arrival map from the stream-function perturbation `phi`. The
/// monotonicity guard asks the discrete cross-duct slope of the total
/// stream function to stay above m0/2 at every node (the converged iterates
/// live above 3 m0 / 4; the looser floor tolerates transients).
pub fn build_stream_map(m0: f64, phi: &ScalarField) -> Result<StreamMap, SolverError> {
    if !(m0 > 0.0) || !m0.is_finite() {
        return Err(SolverError::InvalidParams(format!(
            "axial mass flux m0 must be positive and finite, got {m0}"
        )));
    }
    if !phi.all_finite() {
        return Err(SolverError::InvalidParams(
            "stream-function perturbation is not finite".into(),
        ));
    }
    let grid = phi.grid();
    let (n1, n2) = (grid.n1, grid.n2);
    let floor = 0.5 * m0;

    let mut min_slope = f64::INFINITY;
    for i in 0..=n1 {
        for j in 0..=n2 {
            min_slope = min_slope.min(m0 + phi.d2(i, j));
        }
    }
    // Face slopes of the inlet trace must be positive for the inversion
    // to make sense at all; the nodal guard almost always trips first.
    let mut min_face = f64::INFINITY;
    for j in 0..n2 {
        let df = (phi.at(0, j + 1) - phi.at(0, j)) / grid.h2();
        min_face = min_face.min(m0 + df);
    }
    if min_slope < floor || min_face <= 0.0 {
        return Err(SolverError::MonotonicityLost {
            min_slope: min_slope.min(min_face),
            floor,
        });
    }

    let xs: Vec<f64> = (0..=n2).map(|j| grid.x2(j)).collect();
    let ys: Vec<f64> = (0..=n2)
        .map(|j| m0 * (grid.x2(j) + 1.0) + phi.at(0, j))
        .collect();
    let trace = MonotoneCubic::fit(xs, ys)?;

    let mut theta = ScalarField::from_fn(grid, "theta", |_, _| 0.0);
    let mut defect = 0.0_f64;
    for i in 0..=n1 {
        for j in 0..=n2 {
            let w = m0 * (grid.x2(j) + 1.0) + phi.at(i, j);
            let t = trace.invert_increasing(w);
            defect = defect.max((trace.value(t) - w).abs());
            theta.set(i, j, t);
        }
    }

    let dtheta1 = ScalarField::from_index_fn(grid, "dtheta1", |i, j| {
        phi.d1(i, j) / trace.derivative(theta.at(i, j))
    });
    let dtheta2 = ScalarField::from_index_fn(grid, "dtheta2", |i, j| {
        (m0 + phi.d2(i, j)) / trace.derivative(theta.at(i, j))
    });

    Ok(StreamMap {
        m0,
        trace,
        theta,
        dtheta1,
        dtheta2,
        defect,
    })
}

/// Compose an inlet trace with the arrival map.
pub fn transport_scalar(map: &StreamMap, trace: &dyn InletTrace) -> ScalarField {
    let theta = &map.theta;
    ScalarField::from_index_fn(theta.grid(), "transported", |i, j| {
        trace.value(theta.at(i, j))
    })
}

/// Gradient of the transported scalar by the chain rule through the
/// arrival map.
pub fn transport_gradient(map: &StreamMap, trace: &dyn InletTrace) -> (ScalarField, ScalarField) {
    let theta = &map.theta;
    let g1 = ScalarField::from_index_fn(theta.grid(), "transported_d1", |i, j| {
        trace.derivative(theta.at(i, j)) * map.dtheta1.at(i, j)
    });
    let g2 = ScalarField::from_index_fn(theta.grid(), "transported_d2", |i, j| {
        trace.derivative(theta.at(i, j)) * map.dtheta2.at(i, j)
    });
    (g1, g2)
}

/// Measured transport stability: sup norms of the transported deviation
/// and its gradient against those of the inlet trace itself.
#[derive(Debug, Clone, Copy)]
pub struct TransportStability {
    pub sup_dev: f64,
    pub sup_grad: f64,
    pub trace_dev: f64,
    pub trace_grad: f64,
    /// sup_dev / trace_dev; composition keeps this at most 1.
    pub dev_ratio: f64,
    pub grad_ratio: f64,
}

/// Compare the transported field against the inlet trace around the
/// reference constant `s0`. Trace norms are sampled on the inlet nodes and
/// their midpoints.
pub fn transport_stability_check(
    map: &StreamMap,
    trace: &dyn InletTrace,
    s0: f64,
) -> TransportStability {
    let field = transport_scalar(map, trace);
    let (g1, g2) = transport_gradient(map, trace);
    let sup_dev = field
        .values()
        .iter()
        .fold(0.0_f64, |m, v| m.max((v - s0).abs()));
    let sup_grad = g1
        .values()
        .iter()
        .chain(g2.values())
        .fold(0.0_f64, |m, v| m.max(v.abs()));

    let n2 = map.theta.grid().n2;
    let mut trace_dev = 0.0_f64;
    let mut trace_grad = 0.0_f64;
    for k in 0..=2 * n2 {
        let x2 = -1.0 + k as f64 / n2 as f64;
        trace_dev = trace_dev.max((trace.value(x2) - s0).abs());
        trace_grad = trace_grad.max(trace.derivative(x2).abs());
    }

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    TransportStability {
        sup_dev,
        sup_grad,
        trace_dev,
        trace_grad,
        dev_ratio: ratio(sup_dev, trace_dev),
        grad_ratio: ratio(sup_grad, trace_grad),
    }
}
