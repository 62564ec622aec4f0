use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::gridfn::GridFunctionH;
use crate::rng::RngSpec;

/// One discretized n-dimensional Brownian path, x(t_0) = 0.
///
/// Coordinate-major storage: `values[i * (N + 1) + k]` is x^i(t_k).
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl BrownianPath {
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * grid.num_nodes() {
            return Err(Error::Config(format!(
                "path needs {} values, got {}",
                dim * grid.num_nodes(),
                values.len()
            )));
        }
        Ok(BrownianPath { grid, dim, values })
    }

    /// Deterministic path from a closure, used by the unit oracles.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let nodes = grid.num_nodes();
        let mut values = Vec::with_capacity(dim * nodes);
        for i in 0..dim {
            for k in 0..nodes {
                values.push(f(i, grid.node(k)));
            }
        }
        BrownianPath { grid, dim, values }
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

    pub fn value_at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.grid.num_nodes() + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean norm of x(t_k).
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

    /// Restriction to a grid with every `factor`-th node. The restriction of a
    /// Brownian path is again a Brownian path on the coarser grid, which gives
    /// coupled refinement pairs for convergence tests.
    pub fn restrict(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || self.grid.steps() % factor != 0 {
            return Err(Error::Config(format!(
                "cannot restrict {} steps by factor {}",
                self.grid.steps(),
                factor
            )));
        }
        let coarse = TimeGrid::new(self.grid.steps() / factor)?;
        let nodes = coarse.num_nodes();
        let mut values = Vec::with_capacity(self.dim * nodes);
        for i in 0..self.dim {
            let c = self.coord(i);
            for k in 0..nodes {
                values.push(c[k * factor]);
            }
        }
        BrownianPath::from_values(coarse, self.dim, values)
    }

    fn check_grid(&self, h: &GridFunctionH) -> Result<()> {
        if h.grid().steps() != self.grid.steps() {
            return Err(Error::GridMismatch {
                expected: self.grid.steps(),
                got: h.grid().steps(),
            });
        }
        if h.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: h.dim(),
            });
        }
        Ok(())
    }
}

/// Forward (left-endpoint) Ito sum: sum_k <h(t_k), x(t_{k+1}) - x(t_k)>.
pub fn forward_ito(h: &GridFunctionH, path: &BrownianPath) -> Result<f64> {
    path.check_grid(h)?;
    let steps = path.grid().steps();
    let mut acc = 0.0;
    for i in 0..path.dim() {
        let hv = h.coord(i);
        let x = path.coord(i);
        for k in 0..steps {
            acc += hv[k] * (x[k + 1] - x[k]);
        }
    }
    Ok(acc)
}

/// Backward (right-endpoint) Ito sum: sum_k <u(t_{k+1}), x(t_{k+1}) - x(t_k)>.
pub fn backward_ito(u: &GridFunctionH, path: &BrownianPath) -> Result<f64> {
    path.check_grid(u)?;
    let steps = path.grid().steps();
    let mut acc = 0.0;
    for i in 0..path.dim() {
        let uv = u.coord(i);
        let x = path.coord(i);
        for k in 0..steps {
            acc += uv[k + 1] * (x[k + 1] - x[k]);
        }
    }
    Ok(acc)
}

/// A reproducible ensemble of Brownian paths, generated batch by batch.
///
/// The ensemble is defined by its shape parameters and seed; batches can be
/// generated in any order (or in parallel) without changing their content.
#[derive(Debug, Clone, Copy)]
pub struct PathEnsemble {
    dim: usize,
    grid: TimeGrid,
    num_paths: usize,
    batch_size: usize,
    rng: RngSpec,
}

pub const DEFAULT_BATCH_SIZE: usize = 4096;

impl PathEnsemble {
    pub fn new(dim: usize, grid: TimeGrid, num_paths: usize, rng: RngSpec) -> Result<Self> {
        Self::with_batch_size(dim, grid, num_paths, rng, DEFAULT_BATCH_SIZE)
    }

    pub fn with_batch_size(
        dim: usize,
        grid: TimeGrid,
        num_paths: usize,
        rng: RngSpec,
        batch_size: usize,
    ) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Config("dimension must be >= 1".into()));
        }
        if num_paths < 1 {
            return Err(Error::Config("path count must be >= 1".into()));
        }
        if batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(PathEnsemble {
            dim,
            grid,
            num_paths,
            batch_size,
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn rng_spec(&self) -> RngSpec {
        self.rng
    }

    pub fn num_batches(&self) -> usize {
        self.num_paths.div_ceil(self.batch_size)
    }

    fn batch_len(&self, batch: usize) -> usize {
        let start = batch * self.batch_size;
        self.batch_size.min(self.num_paths - start)
    }

    /// Generates the paths of one batch. Content depends only on the
    /// ensemble parameters and the batch index.
    pub fn sample_batch(&self, batch: usize) -> Vec<BrownianPath> {
        assert!(batch < self.num_batches());
        let mut rng = self.rng.batch_rng(batch as u64);
        let sqrt_dt = self.grid.dt().sqrt();
        let nodes = self.grid.num_nodes();
        let len = self.batch_len(batch);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let mut values = vec![0.0; self.dim * nodes];
            // Increments are drawn node-major so the stream layout is
            // independent of the storage layout.
            for k in 1..nodes {
                for i in 0..self.dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    values[i * nodes + k] = values[i * nodes + k - 1] + sqrt_dt * z;
                }
            }
            out.push(BrownianPath {
                grid: self.grid,
                dim: self.dim,
                values,
            });
        }
        out
    }

    /// Generates every path. Only sensible for small ensembles.
    pub fn materialize(&self) -> Vec<BrownianPath> {
        (0..self.num_batches())
            .flat_map(|b| self.sample_batch(b))
            .collect()
    }

    /// Evaluates `ncols` scalar statistics per path over the whole ensemble,
    /// batch-parallel. Column order is path order, so the result is
    /// independent of how batches were scheduled.
    pub fn collect_columns<F>(&self, ncols: usize, f: F) -> Vec<Vec<f64>>
    where
        F: Fn(&BrownianPath, &mut [f64]) + Sync,
    {
        let per_batch: Vec<Vec<f64>> = (0..self.num_batches())
            .into_par_iter()
            .map(|b| {
                let paths = self.sample_batch(b);
                let mut flat = vec![0.0; paths.len() * ncols];
                for (j, p) in paths.iter().enumerate() {
                    f(p, &mut flat[j * ncols..(j + 1) * ncols]);
                }
                flat
            })
            .collect();
        let mut columns = vec![Vec::with_capacity(self.num_paths); ncols];
        for flat in &per_batch {
            for row in flat.chunks_exact(ncols) {
                for (c, v) in row.iter().enumerate() {
                    columns[c].push(*v);
                }
            }
        }
        columns
    }
}
