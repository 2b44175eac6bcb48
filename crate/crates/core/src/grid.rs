//! Spatial grid conventions and the discrete operators for `u_xx` and `w_x`.
//!
//! Nodes sit at `x_k = k·dx` for `k = 1..=n_x` with `dx = 1/n_x`, so the right
//! boundary `x = 1` is the last node and the left boundary `x = 0` is a ghost
//! position used only for boundary data.
//!
//! The second-difference operator closes the zero-flux condition `u_x = 0`
//! with second-order ghost values:
//!
//! * left, at the ghost position `x_0 = 0`: `u_0 = (4u_1 − u_2)/3`, the
//!   quadratic extrapolation whose slope vanishes at `x = 0`;
//! * right, reflecting about the boundary node `x_n = 1`: `u_{n+1} = u_{n−1}`.
//!
//! The first-difference operator for the fluid uses the inflow value as
//! `w_0` and a backward difference on the last row.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    n_x: usize,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(n_x: usize) -> Result<Self> {
        if n_x < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes, got {n_x}")));
        }
        Ok(Self {
            n_x,
            dx: 1.0 / n_x as f64,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Coordinate of 1-based node `k`.
    pub fn x(&self, k: usize) -> f64 {
        k as f64 * self.dx
    }

    /// All node coordinates `x_1..x_n`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n_x).map(|k| self.x(k)).collect()
    }

    /// Quadrature weights of `∫₀¹ f dx` that make the Laplacian self-adjoint.
    ///
    /// `dx·[3/2, 1, …, 1, 1/2]`; they sum to one.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let mut q = vec![self.dx; self.n_x];
        q[0] = 1.5 * self.dx;
        q[self.n_x - 1] = 0.5 * self.dx;
        q
    }
}

/// Discretized pack (`u`) and fluid (`w`) temperatures at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub t: f64,
}

impl GridState {
    pub fn new(u: Vec<f64>, w: Vec<f64>, t: f64) -> Result<Self> {
        if u.len() != w.len() {
            return Err(Error::invalid(format!(
                "u has {} nodes but w has {}",
                u.len(),
                w.len()
            )));
        }
        Ok(Self { u, w, t })
    }

    pub fn n_x(&self) -> usize {
        self.u.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.u.iter().chain(&self.w).all(|v| v.is_finite())
    }

    /// Observation vector: `u` followed by `w`.
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(2 * self.u.len());
        obs.extend_from_slice(&self.u);
        obs.extend_from_slice(&self.w);
        obs
    }
}

/// Tridiagonal matrix stored by bands. `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        (0..n)
            .map(|k| {
                let mut acc = self.diag[k] * x[k];
                if k > 0 {
                    acc += self.lower[k] * x[k - 1];
                }
                if k + 1 < n {
                    acc += self.upper[k] * x[k + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves `M x = rhs` by Gaussian elimination with partial pivoting.
    ///
    /// Row interchanges introduce a second super-diagonal, handled as in
    /// LAPACK's `gtsv`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n {
            return Err(Error::invalid("tridiagonal solve: rhs length mismatch"));
        }
        let mut dl: Vec<f64> = self.lower.iter().skip(1).copied().collect();
        let mut d = self.diag.clone();
        let mut du: Vec<f64> = self.upper.iter().take(n.saturating_sub(1)).copied().collect();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut b = rhs.to_vec();

        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(Error::invalid("singular tridiagonal system"));
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                dl[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                }
                du[i] = temp;
                b.swap(i, i + 1);
                b[i + 1] -= fact * b[i];
            }
        }
        if d[n - 1] == 0.0 {
            return Err(Error::invalid("singular tridiagonal system"));
        }
        // dl now holds the second super-diagonal for rows that pivoted.
        for i in 0..n.saturating_sub(2) {
            du2[i] = dl[i];
        }
        let mut x = vec![0.0; n];
        x[n - 1] = b[n - 1] / d[n - 1];
        if n > 1 {
            x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        Ok(x)
    }
}

/// Bands of the second-difference operator (scaled by `1/dx²`).
pub fn laplacian_matrix(n: usize, dx: f64) -> Result<Tridiagonal> {
    if n < 2 {
        return Err(Error::invalid(format!("laplacian needs length >= 2, got {n}")));
    }
    if !(dx > 0.0) {
        return Err(Error::invalid(format!("dx must be positive, got {dx}")));
    }
    let s = 1.0 / (dx * dx);
    let mut lower = vec![s; n];
    let mut diag = vec![-2.0 * s; n];
    let mut upper = vec![s; n];
    lower[0] = 0.0;
    upper[n - 1] = 0.0;
    // u_0 = (4u_1 - u_2)/3
    diag[0] = -2.0 / 3.0 * s;
    upper[0] = 2.0 / 3.0 * s;
    // u_{n+1} = u_{n-1}
    lower[n - 1] = 2.0 * s;
    Ok(Tridiagonal { lower, diag, upper })
}

/// Discrete `u_xx` with zero-flux ends.
pub fn laplacian_u(u: &[f64], dx: f64) -> Result<Vec<f64>> {
    Ok(laplacian_matrix(u.len(), dx)?.apply(u))
}

/// Discrete `w_x`: centered inside, inflow value as `w_0`, backward at the outlet.
pub fn gradient_w(w: &[f64], w_inflow: f64, dx: f64) -> Result<Vec<f64>> {
    let n = w.len();
    if n < 2 {
        return Err(Error::invalid(format!("gradient needs length >= 2, got {n}")));
    }
    if !(dx > 0.0) {
        return Err(Error::invalid(format!("dx must be positive, got {dx}")));
    }
    let mut g = Vec::with_capacity(n);
    g.push((w[1] - w_inflow) / (2.0 * dx));
    for k in 1..n - 1 {
        g.push((w[k + 1] - w[k - 1]) / (2.0 * dx));
    }
    g.push((w[n - 1] - w[n - 2]) / dx);
    Ok(g)
}

/// Cosine series `Σ_n c_n cos(π n x_k)` sampled on the grid nodes.
pub fn fourier_initial_u(coeffs: &[f64], grid: &SpatialGrid) -> Vec<f64> {
    grid.nodes()
        .into_iter()
        .map(|x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c * (std::f64::consts::PI * n as f64 * x).cos())
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplacian_annihilates_constants() {
        let out = laplacian_u(&[3.5; 4], 0.37).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-12), "{out:?}");
    }

    #[test]
    fn laplacian_exact_on_quadratic() {
        let grid = SpatialGrid::new(17).unwrap();
        let u: Vec<f64> = grid.nodes().iter().map(|x| x * x).collect();
        let out = laplacian_u(&u, grid.dx()).unwrap();
        // Interior rows and the left closure (x² is even about 0) are exact.
        for v in &out[..16] {
            assert!((v - 2.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn laplacian_hand_example() {
        // ghosts: u_0 = (4·1 - 2)/3 = 2/3, u_4 = u_2 = 2
        let out = laplacian_u(&[1.0, 2.0, 4.0], 1.0).unwrap();
        let expected = [2.0 / 3.0, 1.0, -4.0];
        for (a, b) in out.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{out:?}");
        }
    }

    #[test]
    fn laplacian_rejects_short_input() {
        assert!(matches!(laplacian_u(&[1.0], 0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(gradient_w(&[1.0], 0.0, 0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradient_examples() {
        let g = gradient_w(&[2.0; 3], 2.0, 0.3).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let grid = SpatialGrid::new(20).unwrap();
        let g = gradient_w(&grid.nodes(), 0.0, grid.dx()).unwrap();
        assert!(g.iter().all(|v| (v - 1.0).abs() < 1e-12), "{g:?}");

        let g = gradient_w(&[0.0, 2.0, 3.0], -1.0, 1.0).unwrap();
        assert_eq!(g, vec![1.5, 1.5, 1.0]);
    }

    #[test]
    fn fourier_single_modes() {
        let grid = SpatialGrid::new(10).unwrap();
        let u = fourier_initial_u(&[1.25, 0.0, 0.0], &grid);
        assert!(u.iter().all(|v| (v - 1.25).abs() < 1e-15));
        let u = fourier_initial_u(&[0.0, 1.0, 0.0, 0.0], &grid);
        for (x, v) in grid.nodes().iter().zip(&u) {
            assert!((v - (std::f64::consts::PI * x).cos()).abs() < 1e-15);
        }
    }

    #[test]
    fn fourier_endpoint_slopes_vanish_under_refinement() {
        let coeffs = [0.3, -1.2, 0.7, 1.9, -0.4];
        let slopes = |n: usize| {
            let grid = SpatialGrid::new(n).unwrap();
            let u = fourier_initial_u(&coeffs, &grid);
            let u0 = coeffs.iter().sum::<f64>(); // value at x = 0
            let left = (u[0] - u0) / grid.dx();
            let right = (u[n - 1] - u[n - 2]) / grid.dx();
            (left.abs(), right.abs())
        };
        let (l1, r1) = slopes(200);
        let (l2, r2) = slopes(400);
        // one-sided differences of a function with zero slope: O(dx), ratio ≈ 2
        assert!((l1 / l2 - 2.0).abs() < 0.05, "{}", l1 / l2);
        assert!((r1 / r2 - 2.0).abs() < 0.05, "{}", r1 / r2);
    }

    fn richardson(f: impl Fn(usize) -> f64) -> f64 {
        f(64) / f(128)
    }

    #[test]
    fn interior_stencils_are_second_order() {
        use std::f64::consts::PI;
        let lap_err = |n: usize| {
            let grid = SpatialGrid::new(n).unwrap();
            let u: Vec<f64> = grid.nodes().iter().map(|x| (2.0 * PI * x).sin()).collect();
            let a = laplacian_u(&u, grid.dx()).unwrap();
            (1..n - 1)
                .map(|k| (a[k] + 4.0 * PI * PI * u[k]).abs())
                .fold(0.0, f64::max)
        };
        let grad_err = |n: usize| {
            let grid = SpatialGrid::new(n).unwrap();
            let xs = grid.nodes();
            let w: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
            let g = gradient_w(&w, 0.0, grid.dx()).unwrap();
            (0..n - 1)
                .map(|k| (g[k] - 3.0 * (3.0 * xs[k]).cos()).abs())
                .fold(0.0, f64::max)
        };
        let r_lap = richardson(lap_err);
        let r_grad = richardson(grad_err);
        assert!((3.0..=5.0).contains(&r_lap), "{r_lap}");
        assert!((3.0..=5.0).contains(&r_grad), "{r_grad}");
    }

    #[test]
    fn laplacian_is_self_adjoint_in_quadrature_inner_product() {
        let grid = SpatialGrid::new(9).unwrap();
        let m = laplacian_matrix(9, grid.dx()).unwrap();
        let q = grid.quadrature_weights();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for k in 0..8 {
            let a = q[k] * m.upper[k];
            let b = q[k + 1] * m.lower[k + 1];
            assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn tridiagonal_solve_with_pivoting() {
        // Weak diagonal forces row interchanges.
        let m = Tridiagonal {
            lower: vec![0.0, 3.0, -2.0, 5.0, 1.0],
            diag: vec![0.1, 0.0, 1e-3, -0.2, 4.0],
            upper: vec![2.0, 1.0, 4.0, 3.0, 0.0],
        };
        let x_true = vec![1.0, -2.0, 0.5, 3.0, -1.5];
        let b = m.apply(&x_true);
        let x = m.solve(&b).unwrap();
        for (a, e) in x.iter().zip(&x_true) {
            assert!((a - e).abs() < 1e-12, "{x:?}");
        }
    }

    proptest! {
        #[test]
        fn laplacian_is_linear(
            u in proptest::collection::vec(-10.0f64..10.0, 12),
            v in proptest::collection::vec(-10.0f64..10.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let dx = 1.0 / 12.0;
            let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = laplacian_u(&combo, dx).unwrap();
            let lu = laplacian_u(&u, dx).unwrap();
            let lv = laplacian_u(&v, dx).unwrap();
            for k in 0..12 {
                let rhs = a * lu[k] + b * lv[k];
                prop_assert!((lhs[k] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn gradient_is_affine(
            w in proptest::collection::vec(-10.0f64..10.0, 8),
            v in proptest::collection::vec(-10.0f64..10.0, 8),
            inflow in -5.0f64..5.0,
        ) {
            let dx = 0.125;
            let sum: Vec<f64> = w.iter().zip(&v).map(|(x, y)| x + y).collect();
            let lhs = gradient_w(&sum, inflow, dx).unwrap();
            let gw = gradient_w(&w, inflow, dx).unwrap();
            let gv = gradient_w(&v, 0.0, dx).unwrap();
            for k in 0..8 {
                prop_assert!((lhs[k] - gw[k] - gv[k]).abs() < 1e-10);
            }
        }
    }
}
