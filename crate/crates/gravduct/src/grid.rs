//! Tensor grid on the duct and nodal scalar fields.
//!
//! The computational domain is the closed rectangle [0, L] x [-1, 1] with
//! uniform spacings h1 = L/n1 and h2 = 2/n2. Nodes are stored row-major with
//! the x2 index fastest: `idx(i, j) = i*(n2+1) + j`. All four boundary
//! segments carry nodes; boundary treatment is the business of the solvers,
//! not of the grid.
//!
//! Derivative stencils are second order throughout: centered in the
//! interior, one-sided three-point at the edges.

use crate::error::SolverError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    /// Duct length L (x1 extent).
    pub length: f64,
    /// Interval counts in x1 and x2.
    pub n1: usize,
    pub n2: usize,
}

impl Grid {
    pub fn new(length: f64, n1: usize, n2: usize) -> Result<Self, SolverError> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(SolverError::InvalidParams(format!(
                "grid length must be positive and finite, got {length}"
            )));
        }
        if n1 < 4 || n2 < 4 {
            return Err(SolverError::InvalidParams(format!(
                "grid needs at least 4 intervals per direction, got {n1}x{n2}"
            )));
        }
        Ok(Grid { length, n1, n2 })
    }

    #[inline]
    pub fn h1(&self) -> f64 {
        self.length / self.n1 as f64
    }

    #[inline]
    pub fn h2(&self) -> f64 {
        2.0 / self.n2 as f64
    }

    #[inline]
    pub fn x1(&self, i: usize) -> f64 {
        // Exact endpoint at i = n1 regardless of rounding in h1.
        if i == self.n1 {
            self.length
        } else {
            i as f64 * self.h1()
        }
    }

    #[inline]
    pub fn x2(&self, j: usize) -> f64 {
        if j == self.n2 {
            1.0
        } else {
            -1.0 + j as f64 * self.h2()
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        (self.n1 + 1) * (self.n2 + 1)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.n1 && j <= self.n2);
        i * (self.n2 + 1) + j
    }

    /// Trapezoid quadrature weight of a node (h1*h2 times 1, 1/2 or 1/4).
    #[inline]
    pub fn node_weight(&self, i: usize, j: usize) -> f64 {
        let wi = if i == 0 || i == self.n1 { 0.5 } else { 1.0 };
        let wj = if j == 0 || j == self.n2 { 0.5 } else { 1.0 };
        wi * wj * self.h1() * self.h2()
    }
}

/// Nodal values of a scalar quantity on a [`Grid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    name: String,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid, name: impl Into<String>) -> Self {
        ScalarField {
            grid,
            name: name.into(),
            values: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn constant(grid: Grid, value: f64, name: impl Into<String>) -> Self {
        ScalarField {
            grid,
            name: name.into(),
            values: vec![value; grid.n_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, name: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut field = ScalarField::zeros(grid, name);
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                let v = f(grid.x1(i), grid.x2(j));
                field.values[grid.idx(i, j)] = v;
            }
        }
        field
    }

    /// Like [`ScalarField::from_fn`] but handing the node indices to the
    /// closure instead of coordinates.
    pub fn from_index_fn(
        grid: Grid,
        name: impl Into<String>,
        f: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let mut field = ScalarField::zeros(grid, name);
        for i in 0..=grid.n1 {
            for j in 0..=grid.n2 {
                field.values[grid.idx(i, j)] = f(i, j);
            }
        }
        field
    }

    pub fn from_values(grid: Grid, name: impl Into<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.n_nodes(), "value count must match grid");
        ScalarField {
            grid,
            name: name.into(),
            values,
        }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Same values under a new name.
    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// x1-derivative, second order (centered inside, one-sided at i = 0, n1).
    pub fn d1(&self, i: usize, j: usize) -> f64 {
        let h = self.grid.h1();
        let n1 = self.grid.n1;
        if i == 0 {
            (-3.0 * self.at(0, j) + 4.0 * self.at(1, j) - self.at(2, j)) / (2.0 * h)
        } else if i == n1 {
            (3.0 * self.at(n1, j) - 4.0 * self.at(n1 - 1, j) + self.at(n1 - 2, j)) / (2.0 * h)
        } else {
            (self.at(i + 1, j) - self.at(i - 1, j)) / (2.0 * h)
        }
    }

    /// x2-derivative, second order (centered inside, one-sided at j = 0, n2).
    pub fn d2(&self, i: usize, j: usize) -> f64 {
        let h = self.grid.h2();
        let n2 = self.grid.n2;
        if j == 0 {
            (-3.0 * self.at(i, 0) + 4.0 * self.at(i, 1) - self.at(i, 2)) / (2.0 * h)
        } else if j == n2 {
            (3.0 * self.at(i, n2) - 4.0 * self.at(i, n2 - 1) + self.at(i, n2 - 2)) / (2.0 * h)
        } else {
            (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * h)
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Max over nodes of |d1| and |d2| (the C^1 part of the stopping metric).
    pub fn grad_sup_norm(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..=self.grid.n1 {
            for j in 0..=self.grid.n2 {
                m = m.max(self.d1(i, j).abs()).max(self.d2(i, j).abs());
            }
        }
        m
    }

    /// Discrete H1 norm: trapezoid node quadrature for the L2 part, face
    /// differences with transverse trapezoid weights for the gradient part.
    pub fn h1_norm(&self) -> f64 {
        let g = self.grid;
        let (h1, h2) = (g.h1(), g.h2());
        let mut sq = 0.0;
        for i in 0..=g.n1 {
            for j in 0..=g.n2 {
                let v = self.at(i, j);
                sq += g.node_weight(i, j) * v * v;
            }
        }
        for i in 0..g.n1 {
            for j in 0..=g.n2 {
                let d = (self.at(i + 1, j) - self.at(i, j)) / h1;
                let w = if j == 0 || j == g.n2 { 0.5 } else { 1.0 };
                sq += w * h1 * h2 * d * d;
            }
        }
        for i in 0..=g.n1 {
            for j in 0..g.n2 {
                let d = (self.at(i, j + 1) - self.at(i, j)) / h2;
                let w = if i == 0 || i == g.n1 { 0.5 } else { 1.0 };
                sq += w * h1 * h2 * d * d;
            }
        }
        sq.sqrt()
    }

    /// Pointwise difference sup norm against another field on the same grid.
    pub fn sup_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0.0, 8, 8).is_err());
        assert!(Grid::new(1.0, 2, 8).is_err());
        assert!(Grid::new(f64::NAN, 8, 8).is_err());
    }

    #[test]
    fn node_coordinates_hit_the_corners() {
        let g = Grid::new(0.7, 7, 5).unwrap();
        assert_eq!(g.x1(0), 0.0);
        assert_eq!(g.x1(g.n1), 0.7);
        assert_eq!(g.x2(0), -1.0);
        assert_eq!(g.x2(g.n2), 1.0);
    }

    #[test]
    fn derivative_stencils_are_second_order() {
        // f(x1,x2) = sin(2 x1) * cos(x2); compare max derivative error on two grids.
        let err = |n: usize| {
            let g = Grid::new(1.0, n, n).unwrap();
            let f = ScalarField::from_fn(g, "f", |x, y| (2.0 * x).sin() * y.cos());
            let mut e: f64 = 0.0;
            for i in 0..=g.n1 {
                for j in 0..=g.n2 {
                    let (x, y) = (g.x1(i), g.x2(j));
                    e = e.max((f.d1(i, j) - 2.0 * (2.0 * x).cos() * y.cos()).abs());
                    e = e.max((f.d2(i, j) + (2.0 * x).sin() * y.sin()).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(16), err(32));
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "measured order {order}, errors {e1:.3e} {e2:.3e}");
    }

    #[test]
    fn trapezoid_weights_integrate_linears_exactly() {
        let g = Grid::new(2.0, 9, 6).unwrap();
        // integral of (x1 + x2 + 3) over [0,2]x[-1,1] = 2*2*3 + 2*2 = 16.
        let mut total = 0.0;
        for i in 0..=g.n1 {
            for j in 0..=g.n2 {
                total += g.node_weight(i, j) * (g.x1(i) + g.x2(j) + 3.0);
            }
        }
        assert!((total - 16.0).abs() < 1e-12, "got {total}");
    }

    #[test]
    fn h1_norm_of_constant_is_l2_of_constant() {
        let g = Grid::new(1.5, 8, 8).unwrap();
        let f = ScalarField::constant(g, 2.0, "c");
        // sqrt(4 * area) with area = 3.
        assert!((f.h1_norm() - (4.0 * 3.0_f64).sqrt()).abs() < 1e-12);
    }
}
