//! Uniform finite-difference grids on an interval (0, L) or rectangle
//! (0, L1) x (0, L2), the discrete Dirichlet Laplacian, node-weight
//! quadrature and the boundary-distance field.
//!
//! Only interior nodes are stored; boundary values are implicitly zero.
//! The 3-point (1D) / 5-point (2D) stencil together with lumped node-weight
//! quadrature makes `inner_h1` exactly the stencil bilinear form, so the
//! discrete integral identities hold to solver tolerance rather than
//! quadrature error.

use crate::error::{Error, Result};

/// Interior-node grid with spacing `h = length / (n + 1)` per axis.
///
/// 2D nodes are ordered row-major: `index = iy * n1 + ix` (x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    n_per_axis: [usize; 2],
    h: [f64; 2],
    coords: Vec<[f64; 2]>,
    d: Vec<f64>,
}

/// Values on the interior nodes of a grid (implicit zero on the boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField(pub Vec<f64>);

impl GridField {
    pub fn zeros(n: usize) -> Self {
        GridField(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        GridField(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> GridField {
        GridField(self.0.iter().map(|v| c * v).collect())
    }

    pub fn add_scaled(&self, c: f64, other: &GridField) -> GridField {
        GridField(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }
}

pub fn build_grid(dim: usize, lengths: &[f64], n_per_axis: &[usize]) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::UnsupportedDimension(dim));
    }
    if lengths.len() < dim || n_per_axis.len() < dim {
        return Err(Error::Shape(format!(
            "need {dim} lengths and node counts, got {} and {}",
            lengths.len(),
            n_per_axis.len()
        )));
    }
    let mut ls = [0.0f64; 2];
    let mut ns = [1usize; 2];
    let mut hs = [0.0f64; 2];
    for k in 0..dim {
        if !(lengths[k] > 0.0) || !lengths[k].is_finite() {
            return Err(Error::Shape(format!(
                "domain length must be positive and finite, got {}",
                lengths[k]
            )));
        }
        if n_per_axis[k] < 3 {
            return Err(Error::GridTooCoarse(n_per_axis[k]));
        }
        ls[k] = lengths[k];
        ns[k] = n_per_axis[k];
        hs[k] = lengths[k] / (n_per_axis[k] + 1) as f64;
    }

    let n_nodes = ns[0] * ns[1];
    let mut coords = Vec::with_capacity(n_nodes);
    let mut d = Vec::with_capacity(n_nodes);
    if dim == 1 {
        for ix in 0..ns[0] {
            let x = (ix + 1) as f64 * hs[0];
            coords.push([x, 0.0]);
            d.push(x.min(ls[0] - x));
        }
    } else {
        for iy in 0..ns[1] {
            let y = (iy + 1) as f64 * hs[1];
            for ix in 0..ns[0] {
                let x = (ix + 1) as f64 * hs[0];
                coords.push([x, y]);
                d.push(x.min(ls[0] - x).min(y).min(ls[1] - y));
            }
        }
    }
    Ok(Grid {
        dim,
        lengths: ls,
        n_per_axis: ns,
        h: hs,
        coords,
        d,
    })
}

impl Grid {
    pub fn build(dim: usize, lengths: &[f64], n_per_axis: &[usize]) -> Result<Grid> {
        build_grid(dim, lengths, n_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn n_per_axis(&self) -> &[usize] {
        &self.n_per_axis[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_per_axis[0] * self.n_per_axis[1]
    }

    /// Quadrature weight of one interior node (product of spacings).
    pub fn weight(&self) -> f64 {
        match self.dim {
            1 => self.h[0],
            _ => self.h[0] * self.h[1],
        }
    }

    pub fn coord(&self, node: usize) -> &[f64] {
        &self.coords[node][..self.dim]
    }

    /// Distance to the boundary, per node.
    pub fn boundary_distance(&self) -> &[f64] {
        &self.d
    }

    pub fn boundary_distance_field(&self) -> GridField {
        GridField(self.d.clone())
    }

    pub fn d_min(&self) -> f64 {
        self.d.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Smallest eigenvalue of the discrete Dirichlet Laplacian,
    /// sum over axes of 2 (1 - cos(pi h_k / L_k)) / h_k^2.
    pub fn stencil_lambda1(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                let h = self.h[k];
                2.0 * (1.0 - (std::f64::consts::PI * h / self.lengths[k]).cos()) / (h * h)
            })
            .sum()
    }

    pub fn zero_field(&self) -> GridField {
        GridField::zeros(self.n_nodes())
    }

    pub fn constant_field(&self, c: f64) -> GridField {
        GridField::constant(self.n_nodes(), c)
    }

    fn check_shape(&self, f: &GridField) -> Result<()> {
        if f.len() != self.n_nodes() {
            return Err(Error::Shape(format!(
                "field has {} values, grid has {} nodes",
                f.len(),
                self.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Discrete negative Laplacian with homogeneous Dirichlet closure.
pub fn laplacian_apply(grid: &Grid, f: &GridField) -> Result<GridField> {
    grid.check_shape(f)?;
    let v = &f.0;
    let mut out = vec![0.0; v.len()];
    match grid.dim() {
        1 => {
            let n = grid.n_per_axis[0];
            let inv_h2 = 1.0 / (grid.h[0] * grid.h[0]);
            for j in 0..n {
                let left = if j > 0 { v[j - 1] } else { 0.0 };
                let right = if j + 1 < n { v[j + 1] } else { 0.0 };
                out[j] = (2.0 * v[j] - left - right) * inv_h2;
            }
        }
        _ => {
            let (n1, n2) = (grid.n_per_axis[0], grid.n_per_axis[1]);
            let inv_h1 = 1.0 / (grid.h[0] * grid.h[0]);
            let inv_h2 = 1.0 / (grid.h[1] * grid.h[1]);
            for iy in 0..n2 {
                for ix in 0..n1 {
                    let p = iy * n1 + ix;
                    let w = if ix > 0 { v[p - 1] } else { 0.0 };
                    let e = if ix + 1 < n1 { v[p + 1] } else { 0.0 };
                    let s = if iy > 0 { v[p - n1] } else { 0.0 };
                    let nn = if iy + 1 < n2 { v[p + n1] } else { 0.0 };
                    out[p] = (2.0 * v[p] - w - e) * inv_h1 + (2.0 * v[p] - s - nn) * inv_h2;
                }
            }
        }
    }
    Ok(GridField(out))
}

/// Node-weight quadrature: w * sum_j f_j with w the node weight.
pub fn integrate(grid: &Grid, f: &GridField) -> Result<f64> {
    grid.check_shape(f)?;
    Ok(grid.weight() * f.0.iter().sum::<f64>())
}

/// Quadrature of a nodewise product, `w * sum_j f_j g_j`.
pub fn integrate_product(grid: &Grid, f: &GridField, g: &GridField) -> Result<f64> {
    grid.check_shape(f)?;
    grid.check_shape(g)?;
    Ok(grid.weight() * f.0.iter().zip(&g.0).map(|(a, b)| a * b).sum::<f64>())
}

/// Discrete Dirichlet form: integrate(laplacian_apply(f1) * f2).
/// Symmetric in its arguments up to rounding.
pub fn inner_h1(grid: &Grid, f1: &GridField, f2: &GridField) -> Result<f64> {
    let lap = laplacian_apply(grid, f1)?;
    integrate_product(grid, &lap, f2)
}

/// Mass-weighted L2 norm of a field, sqrt(w * sum f^2).
pub fn l2_norm(grid: &Grid, f: &GridField) -> Result<f64> {
    grid.check_shape(f)?;
    Ok((grid.weight() * f.0.iter().map(|v| v * v).sum::<f64>()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn grid_1d_basic() {
        let g = build_grid(1, &[1.0], &[3]).unwrap();
        assert_eq!(g.spacing(), &[0.25]);
        assert_eq!(g.n_nodes(), 3);
        let xs: Vec<f64> = (0..3).map(|p| g.coord(p)[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);
        assert_eq!(g.boundary_distance(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn grid_2d_center_distance() {
        let g = build_grid(2, &[1.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(g.n_nodes(), 9);
        // center node of the unit square
        let center = 1 * 3 + 1;
        assert_eq!(g.coord(center), &[0.5, 0.5]);
        assert_relative_eq!(g.boundary_distance()[center], 0.5);
    }

    #[test]
    fn grid_1d_length_two() {
        let g = build_grid(1, &[2.0], &[7]).unwrap();
        assert_relative_eq!(g.spacing()[0], 0.25);
        assert_relative_eq!(g.boundary_distance()[0], 0.25);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(
            build_grid(3, &[1.0, 1.0, 1.0], &[4, 4, 4]),
            Err(Error::UnsupportedDimension(3))
        ));
        assert!(matches!(
            build_grid(1, &[1.0], &[2]),
            Err(Error::GridTooCoarse(2))
        ));
    }

    #[test]
    fn laplacian_1d_example() {
        let g = build_grid(1, &[1.0], &[3]).unwrap();
        let f = GridField(vec![1.0, 2.0, 1.0]);
        let lap = laplacian_apply(&g, &f).unwrap();
        assert_eq!(lap.0, vec![0.0, 32.0, 0.0]);
    }

    #[test]
    fn laplacian_zero_field() {
        let g = build_grid(1, &[1.0], &[5]).unwrap();
        let lap = laplacian_apply(&g, &g.zero_field()).unwrap();
        assert!(lap.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_eigenvector_closed_form() {
        // f = first Dirichlet eigenvector; -Delta f = lambda1 f with
        // lambda1 = 2 (1 - cos(pi h)) / h^2 on the unit interval.
        let n = 17;
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        let h = g.spacing()[0];
        let f = GridField(
            (0..n)
                .map(|j| (std::f64::consts::PI * (j + 1) as f64 * h).sin())
                .collect(),
        );
        let lap = laplacian_apply(&g, &f).unwrap();
        let lam = 2.0 * (1.0 - (std::f64::consts::PI * h).cos()) / (h * h);
        for j in 0..n {
            assert_relative_eq!(lap.0[j], lam * f.0[j], max_relative = 1e-12, epsilon = 1e-12);
        }
        assert_relative_eq!(g.stencil_lambda1(), lam, max_relative = 1e-14);
    }

    #[test]
    fn stencil_lambda1_matches_dense_eigendecomposition() {
        // dense oracle for the smallest Rayleigh quotient of the 1D stencil
        let n = 24;
        let g = build_grid(1, &[1.0], &[n]).unwrap();
        let h = g.spacing()[0];
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 2.0 / (h * h);
            if i > 0 {
                a[(i, i - 1)] = -1.0 / (h * h);
            }
            if i + 1 < n {
                a[(i, i + 1)] = -1.0 / (h * h);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(a);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((min - g.stencil_lambda1()).abs() <= 1e-10 * (1.0 + min.abs()));
    }

    #[test]
    fn integrate_examples() {
        let g = build_grid(1, &[1.0], &[3]).unwrap();
        assert_relative_eq!(integrate(&g, &GridField(vec![1.0, 2.0, 1.0])).unwrap(), 1.0);
        assert_eq!(integrate(&g, &g.zero_field()).unwrap(), 0.0);
    }

    #[test]
    fn integrate_distance_field_exact() {
        // the tent function is integrated exactly by the node-weight rule
        let g = build_grid(1, &[1.0], &[7]).unwrap();
        let d = g.boundary_distance_field();
        assert_relative_eq!(integrate(&g, &d).unwrap(), 0.25, max_relative = 1e-14);
    }

    #[test]
    fn quadrature_second_order() {
        // smooth compactly-peaked integrand x^2 (1-x)^2, exact integral 1/30
        let err = |n: usize| {
            let g = build_grid(1, &[1.0], &[n]).unwrap();
            let f = GridField(
                (0..n)
                    .map(|j| {
                        let x = g.coord(j)[0];
                        x * x * (1.0 - x) * (1.0 - x)
                    })
                    .collect(),
            );
            (integrate(&g, &f).unwrap() - 1.0 / 30.0).abs()
        };
        let (e1, e2) = (err(31), err(63));
        // observed order at least ~2
        let order = (e1 / e2).log2();
        assert!(order > 1.7, "quadrature order {order} too low (e1={e1:.3e}, e2={e2:.3e})");
    }

    #[test]
    fn inner_h1_example_and_symmetry() {
        let g = build_grid(1, &[1.0], &[3]).unwrap();
        let f = GridField(vec![0.25, 0.5, 0.25]);
        assert_relative_eq!(inner_h1(&g, &f, &f).unwrap(), 1.0, max_relative = 1e-14);
        let zero = g.zero_field();
        assert_eq!(inner_h1(&g, &f, &zero).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = build_grid(1, &[1.0], &[3]).unwrap();
        let bad = GridField(vec![1.0, 2.0]);
        assert!(matches!(laplacian_apply(&g, &bad), Err(Error::Shape(_))));
        assert!(matches!(integrate(&g, &bad), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn prop_inner_h1_symmetric(vals1 in proptest::collection::vec(-10.0f64..10.0, 12),
                                   vals2 in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let g = build_grid(2, &[1.0, 2.0], &[4, 3]).unwrap();
            let f1 = GridField(vals1);
            let f2 = GridField(vals2);
            let a = inner_h1(&g, &f1, &f2).unwrap();
            let b = inner_h1(&g, &f2, &f1).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn prop_dirichlet_form_positive(vals in proptest::collection::vec(-10.0f64..10.0, 9)) {
            prop_assume!(vals.iter().any(|v| v.abs() > 1e-6));
            let g = build_grid(1, &[1.0], &[9]).unwrap();
            let f = GridField(vals);
            prop_assert!(inner_h1(&g, &f, &f).unwrap() > 0.0);
        }
    }
}
