use crate::error::{Error, Result};

/// Uniform time grid on [0, 1] with `steps` subintervals and `steps + 1` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeGrid {
    steps: usize,
}

impl TimeGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Trapezoidal weight of node `k`: dt/2 at the endpoints, dt inside.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.steps {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    /// Trapezoidal rule for values given at all nodes. Exact on affine integrands.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.num_nodes(), "quadrature needs one value per node");
        let dt = self.dt();
        let mut acc = 0.5 * (values[0] + values[self.steps]);
        for v in &values[1..self.steps] {
            acc += v;
        }
        acc * dt
    }

    /// Running trapezoidal integral: out[k] = integral of `values` over [0, t_k].
    pub fn cumulative_quadrature(&self, values: &[f64], out: &mut Vec<f64>) {
        assert_eq!(values.len(), self.num_nodes());
        let dt = self.dt();
        out.clear();
        out.push(0.0);
        let mut acc = 0.0;
        for k in 0..self.steps {
            acc += 0.5 * dt * (values[k] + values[k + 1]);
            out.push(acc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_tiny_grids() {
        assert!(TimeGrid::new(0).is_err());
        assert!(TimeGrid::new(1).is_err());
        assert!(TimeGrid::new(2).is_ok());
    }

    #[test]
    fn quadrature_constant_is_exact() {
        let grid = TimeGrid::new(7).unwrap();
        let ones = vec![1.0; grid.num_nodes()];
        assert_abs_diff_eq!(grid.quadrature(&ones), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_affine_is_exact() {
        let grid = TimeGrid::new(9).unwrap();
        let vals: Vec<f64> = grid.nodes().collect();
        assert_abs_diff_eq!(grid.quadrature(&vals), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_quadratic_second_order() {
        let grid = TimeGrid::new(512).unwrap();
        let vals: Vec<f64> = grid.nodes().map(|t| t * t).collect();
        assert_abs_diff_eq!(grid.quadrature(&vals), 1.0 / 3.0, epsilon = 1e-5);
    }

    #[test]
    fn cumulative_matches_total() {
        let grid = TimeGrid::new(64).unwrap();
        let vals: Vec<f64> = grid.nodes().map(|t| (3.0 * t).sin()).collect();
        let mut cum = Vec::new();
        grid.cumulative_quadrature(&vals, &mut cum);
        assert_abs_diff_eq!(cum[grid.steps()], grid.quadrature(&vals), epsilon = 1e-12);
        assert_eq!(cum[0], 0.0);
    }
}
