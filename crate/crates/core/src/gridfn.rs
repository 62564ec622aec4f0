use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// A discretized element of H = L^2(0,1; R^n): one R^n value per grid node.
///
/// Values are stored coordinate-major: `values[i * (N + 1) + k]` is the
/// i-th coordinate at node t_k.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunctionH {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl GridFunctionH {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        GridFunctionH {
            grid,
            dim,
            values: vec![0.0; dim * grid.num_nodes()],
        }
    }

    /// Builds from a per-node closure: `f(i, t)` is coordinate i at time t.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let nodes = grid.num_nodes();
        let mut values = Vec::with_capacity(dim * nodes);
        for i in 0..dim {
            for k in 0..nodes {
                values.push(f(i, grid.node(k)));
            }
        }
        GridFunctionH { grid, dim, values }
    }

    /// Constant vector field h(t) = v.
    pub fn constant(grid: TimeGrid, v: &[f64]) -> Self {
        Self::from_fn(grid, v.len(), |i, _| v[i])
    }

    /// Constant unit vector along coordinate `axis`.
    pub fn basis(grid: TimeGrid, dim: usize, axis: usize) -> Self {
        assert!(axis < dim);
        Self::from_fn(grid, dim, |i, _| if i == axis { 1.0 } else { 0.0 })
    }

    pub fn from_raw(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * grid.num_nodes() {
            return Err(Error::Config(format!(
                "grid function needs {} values, got {}",
                dim * grid.num_nodes(),
                values.len()
            )));
        }
        Ok(GridFunctionH { grid, dim, values })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        let n = self.grid.num_nodes();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn coord_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.num_nodes();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn value_at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.grid.num_nodes() + k]
    }

    /// Euclidean norm of the vector value at node k.
    pub fn node_norm(&self, k: usize) -> f64 {
        let n = self.grid.num_nodes();
        (0..self.dim)
            .map(|i| {
                let v = self.values[i * n + k];
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_compatible(&self, other: &GridFunctionH) -> Result<()> {
        if self.grid.steps() != other.grid.steps() {
            return Err(Error::GridMismatch {
                expected: self.grid.steps(),
                got: other.grid.steps(),
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }

    /// <v, w>_H by trapezoidal quadrature of the pointwise R^n inner product.
    pub fn inner_product(&self, other: &GridFunctionH) -> Result<f64> {
        self.check_compatible(other)?;
        let nodes = self.grid.num_nodes();
        let mut acc = 0.0;
        for k in 0..nodes {
            let mut dot = 0.0;
            for i in 0..self.dim {
                dot += self.values[i * nodes + k] * other.values[i * nodes + k];
            }
            acc += self.grid.weight(k) * dot;
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner_product(self).expect("self is compatible with itself")
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> GridFunctionH {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn add_scaled(&mut self, a: f64, other: &GridFunctionH) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += a * w;
        }
    }

    /// The transform t -> integral_0^1 (1 - max(t, r)) h(r) dr, applied per
    /// coordinate. Splitting the kernel at r = t gives
    /// (1 - t) * integral_0^t h + integral_t^1 (1 - r) h(r) dr,
    /// which is O(N) via running trapezoidal sums.
    pub fn tilde_transform(&self) -> GridFunctionH {
        let nodes = self.grid.num_nodes();
        let mut out = GridFunctionH::zeros(self.grid, self.dim);
        let mut prefix = Vec::with_capacity(nodes);
        let mut weighted = vec![0.0; nodes];
        let mut weighted_prefix = Vec::with_capacity(nodes);
        for i in 0..self.dim {
            let h = self.coord(i);
            self.grid.cumulative_quadrature(h, &mut prefix);
            for k in 0..nodes {
                weighted[k] = (1.0 - self.grid.node(k)) * h[k];
            }
            self.grid.cumulative_quadrature(&weighted, &mut weighted_prefix);
            let total = weighted_prefix[nodes - 1];
            let out_i = out.coord_mut(i);
            for k in 0..nodes {
                let t = k as f64 / (nodes - 1) as f64;
                out_i[k] = (1.0 - t) * prefix[k] + (total - weighted_prefix[k]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> TimeGrid {
        TimeGrid::new(512).unwrap()
    }

    #[test]
    fn inner_product_of_constants() {
        let g = grid();
        let e1 = GridFunctionH::basis(g, 3, 0);
        let e2 = GridFunctionH::basis(g, 3, 1);
        assert_abs_diff_eq!(e1.inner_product(&e1).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e1.inner_product(&e2).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = GridFunctionH::basis(TimeGrid::new(8).unwrap(), 2, 0);
        let b = GridFunctionH::basis(TimeGrid::new(16).unwrap(), 2, 0);
        assert!(a.inner_product(&b).is_err());
    }

    #[test]
    fn tilde_of_constant_basis() {
        // h = e1 gives h~(t) = (1 - t^2)/2 on the first coordinate.
        let g = grid();
        let tilde = GridFunctionH::basis(g, 3, 0).tilde_transform();
        for k in (0..=g.steps()).step_by(37) {
            let t = g.node(k);
            assert_abs_diff_eq!(tilde.value_at(0, k), 0.5 * (1.0 - t * t), epsilon = 1e-6);
            assert_abs_diff_eq!(tilde.value_at(1, k), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn tilde_of_zero_is_zero() {
        let z = GridFunctionH::zeros(grid(), 2).tilde_transform();
        assert!(z.coord(0).iter().chain(z.coord(1)).all(|&v| v == 0.0));
    }
}
