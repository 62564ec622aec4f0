//! Per-path Malliavin objects for the quadratic functional
//! g(x) = (1/2) ||x||_H^2 of an n-dimensional Brownian path:
//! the derivative Dg, the witnesses (u, gamma) of the Malliavin condition,
//! Dgamma, D(1/gamma), the divergence values delta(u), delta(u/gamma) and
//! delta(X u/gamma), and cylindrical functionals with their gradients.

use crate::error::{Error, Result};
use crate::gridfn::GridFunctionH;
use crate::path::{backward_ito, forward_ito, BrownianPath};

/// Nodes where |D_s g| falls below this fraction of max_s |D_s g| are
/// treated as degenerate when normalizing u. The terminal node always
/// qualifies since D_1 g = 0.
pub const TOL_U_REL: f64 = 1e-12;

/// gamma below this is flagged degenerate; on Brownian samples this only
/// happens for the zero path.
pub const TOL_GAMMA: f64 = 1e-12;

/// g(x) = (1/2) integral_0^1 |x(t)|^2 dt.
pub fn eval_g(path: &BrownianPath) -> f64 {
    let grid = path.grid();
    let nodes = grid.num_nodes();
    let mut sq = vec![0.0; nodes];
    for i in 0..path.dim() {
        let x = path.coord(i);
        for k in 0..nodes {
            sq[k] += x[k] * x[k];
        }
    }
    0.5 * grid.quadrature(&sq)
}

/// D_s^i g = integral_s^1 x^i(t) dt, by suffix trapezoidal sums.
pub fn malliavin_derivative_g(path: &BrownianPath) -> GridFunctionH {
    let grid = path.grid();
    let nodes = grid.num_nodes();
    let mut dg = GridFunctionH::zeros(grid, path.dim());
    let mut prefix = Vec::with_capacity(nodes);
    for i in 0..path.dim() {
        grid.cumulative_quadrature(path.coord(i), &mut prefix);
        let total = prefix[nodes - 1];
        let out = dg.coord_mut(i);
        for k in 0..nodes {
            out[k] = total - prefix[k];
        }
    }
    dg
}

/// gamma = integral_0^1 |D_s g| ds.
pub fn gamma(path: &BrownianPath) -> f64 {
    let dg = malliavin_derivative_g(path);
    let grid = path.grid();
    let abs: Vec<f64> = (0..grid.num_nodes()).map(|k| dg.node_norm(k)).collect();
    grid.quadrature(&abs)
}

/// Everything the estimators need about one path, computed in O(n N).
#[derive(Debug, Clone)]
pub struct MalliavinRecord {
    pub g: f64,
    pub gamma: f64,
    pub dg: GridFunctionH,
    /// Unit field u = Dg/|Dg| with degenerate nodes zeroed.
    pub u: GridFunctionH,
    pub dgamma: GridFunctionH,
    /// Backward right-endpoint Ito sum of u against the path.
    pub delta_u: f64,
    /// <u, Dgamma>_H.
    pub u_dot_dgamma: f64,
    /// Renormalization that turns the backward sum into the adjoint-consistent
    /// divergence: the backward sum evaluates u at the right endpoint of each
    /// increment, and u(s) depends on the path at times <= s as well, so the
    /// sum picks up the derivative trace
    ///   sum_k dt * (n - 1) (1 - t_{k+1}) / |D_{t_{k+1}} g|.
    /// Subtracting it restores E[delta(u)] = 0 and the duality with D.
    pub divergence_trace: f64,
    /// Number of nodes where u was zeroed by the degeneracy guard.
    pub guarded_nodes: usize,
}

impl MalliavinRecord {
    pub fn compute(path: &BrownianPath) -> MalliavinRecord {
        let grid = path.grid();
        let nodes = grid.num_nodes();
        let steps = grid.steps();
        let dim = path.dim();
        let dt = grid.dt();

        let dg = malliavin_derivative_g(path);
        let abs_dg: Vec<f64> = (0..nodes).map(|k| dg.node_norm(k)).collect();
        let max_abs = abs_dg.iter().cloned().fold(0.0f64, f64::max);
        let tol = TOL_U_REL * max_abs;

        let g = eval_g(path);
        let gamma = grid.quadrature(&abs_dg);

        let mut u = GridFunctionH::zeros(grid, dim);
        let mut guarded_nodes = 0usize;
        let guarded: Vec<bool> = (0..nodes)
            .map(|k| {
                let guard = abs_dg[k] <= tol;
                if guard {
                    guarded_nodes += 1;
                }
                guard
            })
            .collect();
        for i in 0..dim {
            let src = dg.coord(i);
            let dst = u.coord_mut(i);
            for k in 0..nodes {
                if !guarded[k] {
                    dst[k] = src[k] / abs_dg[k];
                }
            }
        }

        // Dgamma^i(theta) = (1 - theta) * int_0^theta u^i
        //                 + int_theta^1 (1 - s) u^i(s) ds.
        let mut dgamma = GridFunctionH::zeros(grid, dim);
        let mut prefix = Vec::with_capacity(nodes);
        let mut weighted = vec![0.0; nodes];
        let mut weighted_prefix = Vec::with_capacity(nodes);
        for i in 0..dim {
            let ui = u.coord(i).to_vec();
            grid.cumulative_quadrature(&ui, &mut prefix);
            for k in 0..nodes {
                weighted[k] = (1.0 - grid.node(k)) * ui[k];
            }
            grid.cumulative_quadrature(&weighted, &mut weighted_prefix);
            let total = weighted_prefix[nodes - 1];
            let out = dgamma.coord_mut(i);
            for k in 0..nodes {
                out[k] = (1.0 - grid.node(k)) * prefix[k] + (total - weighted_prefix[k]);
            }
        }

        let mut u_dot = vec![0.0; nodes];
        for i in 0..dim {
            let ui = u.coord(i);
            let di = dgamma.coord(i);
            for k in 0..nodes {
                u_dot[k] += ui[k] * di[k];
            }
        }
        let u_dot_dgamma = grid.quadrature(&u_dot);

        // Backward sum with guarded nodes inheriting the last unguarded
        // direction; near s = 1 that direction is the limit x(1)/|x(1)| of u.
        let mut delta_u = 0.0;
        {
            let mut eff = vec![0.0; dim];
            let mut eff_nodes = vec![0.0; dim * nodes];
            for k in 0..nodes {
                if !guarded[k] {
                    for (i, e) in eff.iter_mut().enumerate() {
                        *e = u.value_at(i, k);
                    }
                }
                for i in 0..dim {
                    eff_nodes[i * nodes + k] = eff[i];
                }
            }
            for i in 0..dim {
                let x = path.coord(i);
                for k in 0..steps {
                    delta_u += eff_nodes[i * nodes + k + 1] * (x[k + 1] - x[k]);
                }
            }
        }

        let terminal = path.node_norm(steps);
        let mut divergence_trace = 0.0;
        for k in 1..nodes {
            let psi = if !guarded[k] {
                (1.0 - grid.node(k)) / abs_dg[k]
            } else if terminal > 0.0 {
                1.0 / terminal
            } else {
                0.0
            };
            divergence_trace += dt * psi;
        }
        divergence_trace *= (dim as f64) - 1.0;

        MalliavinRecord {
            g,
            gamma,
            dg,
            u,
            dgamma,
            delta_u,
            u_dot_dgamma,
            divergence_trace,
            guarded_nodes,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.gamma <= TOL_GAMMA
    }

    /// <Dg, u>_H; agrees with gamma up to the degeneracy guard.
    pub fn dg_dot_u(&self) -> f64 {
        self.dg.inner_product(&self.u).expect("shared grid")
    }

    /// max over nodes of |Dgamma(theta)|.
    pub fn dgamma_max_norm(&self) -> f64 {
        (0..self.dgamma.grid().num_nodes())
            .map(|k| self.dgamma.node_norm(k))
            .fold(0.0f64, f64::max)
    }

    /// D(1/gamma) = -Dgamma / gamma^2.
    pub fn d_inv_gamma(&self) -> Result<GridFunctionH> {
        if self.is_degenerate() {
            return Err(Error::DegenerateGamma(self.gamma));
        }
        Ok(self.dgamma.scaled(-1.0 / (self.gamma * self.gamma)))
    }

    /// Product-rule value delta(u)/gamma + <u, Dgamma>/gamma^2 built on the
    /// backward sum.
    pub fn delta_u_over_gamma(&self) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::DegenerateGamma(self.gamma));
        }
        Ok(self.delta_u / self.gamma + self.u_dot_dgamma / (self.gamma * self.gamma))
    }

    /// Adjoint-consistent divergence delta(u): backward sum minus the trace
    /// renormalization. This is the value with E[delta(u)] = 0.
    pub fn divergence_u(&self) -> f64 {
        self.delta_u - self.divergence_trace
    }

    /// Adjoint-consistent delta(u/gamma); the integrand of the density
    /// representation f_1(r) = E[delta(u/gamma) 1_{g > r}].
    pub fn divergence_u_over_gamma(&self) -> Result<f64> {
        Ok(self.delta_u_over_gamma()? - self.divergence_trace / self.gamma)
    }
}

/// Raw backward Ito sum of the unit field, as an operation on (path, record).
pub fn skorohod_u(record: &MalliavinRecord) -> f64 {
    record.delta_u
}

/// delta(u/gamma) via the product rule; errors on degenerate gamma.
pub fn skorohod_u_over_gamma(record: &MalliavinRecord) -> Result<f64> {
    record.delta_u_over_gamma()
}

/// A smooth cylindrical functional X = f(W(h_1), ..., W(h_d)).
pub struct CylindricalFunctional {
    label: String,
    directions: Vec<GridFunctionH>,
    f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    grad: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl CylindricalFunctional {
    pub fn new(
        label: impl Into<String>,
        directions: Vec<GridFunctionH>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        CylindricalFunctional {
            label: label.into(),
            directions,
            f: Box::new(f),
            grad: Box::new(grad),
        }
    }

    /// X identically equal to c (d = 0).
    pub fn constant(c: f64) -> Self {
        Self::new(format!("const({c})"), Vec::new(), move |_| c, |_, _| {})
    }

    /// X = W(h).
    pub fn wiener(label: impl Into<String>, h: GridFunctionH) -> Self {
        Self::new(label, vec![h], |y| y[0], |_, out| out[0] = 1.0)
    }

    /// X = tanh(W(h)); smooth and bounded.
    pub fn tanh_wiener(label: impl Into<String>, h: GridFunctionH) -> Self {
        Self::new(
            label,
            vec![h],
            |y| y[0].tanh(),
            |y, out| {
                let c = y[0].cosh();
                out[0] = 1.0 / (c * c);
            },
        )
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn directions(&self) -> &[GridFunctionH] {
        &self.directions
    }

    fn arguments(&self, path: &BrownianPath) -> Result<Vec<f64>> {
        self.directions
            .iter()
            .map(|h| forward_ito(h, path))
            .collect()
    }

    /// X(path).
    pub fn eval(&self, path: &BrownianPath) -> Result<f64> {
        let args = self.arguments(path)?;
        let v = (self.f)(&args);
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(v)
    }

    /// Partial derivatives of the outer map at the evaluated point.
    pub fn outer_gradient(&self, path: &BrownianPath) -> Result<Vec<f64>> {
        let args = self.arguments(path)?;
        let mut out = vec![0.0; self.directions.len()];
        (self.grad)(&args, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(out)
    }

    /// DX = sum_k d_k f(...) h_k as a grid function.
    pub fn gradient(&self, path: &BrownianPath) -> Result<GridFunctionH> {
        let partials = self.outer_gradient(path)?;
        let mut out = GridFunctionH::zeros(path.grid(), path.dim());
        for (p, h) in partials.iter().zip(&self.directions) {
            out.add_scaled(*p, h);
        }
        Ok(out)
    }

    /// <DX, h>_H without materializing DX, from the Gram row of the
    /// directions against h.
    pub fn gradient_inner(&self, path: &BrownianPath, h: &GridFunctionH) -> Result<f64> {
        let partials = self.outer_gradient(path)?;
        let mut acc = 0.0;
        for (p, dir) in partials.iter().zip(&self.directions) {
            acc += p * dir.inner_product(h)?;
        }
        Ok(acc)
    }
}

pub fn eval_cylindrical(x: &CylindricalFunctional, path: &BrownianPath) -> Result<f64> {
    x.eval(path)
}

pub fn grad_cylindrical(x: &CylindricalFunctional, path: &BrownianPath) -> Result<GridFunctionH> {
    x.gradient(path)
}

/// Product rule delta(X u/gamma) = X delta(u/gamma) - <DX, u>/gamma, built on
/// the backward sum.
pub fn skorohod_x_u_over_gamma(
    x: &CylindricalFunctional,
    record: &MalliavinRecord,
    path: &BrownianPath,
) -> Result<f64> {
    let xv = x.eval(path)?;
    let dx_u = x.gradient_inner(path, &record.u)?;
    Ok(xv * record.delta_u_over_gamma()? - dx_u / record.gamma)
}

/// Adjoint-consistent delta(X u/gamma), used by the density representation
/// of F_X'.
pub fn divergence_x_u_over_gamma(
    x: &CylindricalFunctional,
    record: &MalliavinRecord,
    path: &BrownianPath,
) -> Result<f64> {
    let xv = x.eval(path)?;
    let dx_u = x.gradient_inner(path, &record.u)?;
    Ok(xv * record.divergence_u_over_gamma()? - dx_u / record.gamma)
}

/// Shared deterministic test path x(t) = t e1, used by the unit oracles.
pub fn linear_test_path(grid: crate::grid::TimeGrid, dim: usize) -> BrownianPath {
    BrownianPath::from_fn(grid, dim, |i, t| if i == 0 { t } else { 0.0 })
}

/// delta(u) as an operation taking the path (computes the record internally).
pub fn skorohod_u_of_path(path: &BrownianPath) -> f64 {
    MalliavinRecord::compute(path).delta_u
}

/// Backward integral of an explicitly supplied integrand (re-exported here
/// next to the other Skorohod machinery).
pub fn backward_integral(u: &GridFunctionH, path: &BrownianPath) -> Result<f64> {
    backward_ito(u, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::path::PathEnsemble;
    use crate::rng::RngSpec;
    use approx::assert_abs_diff_eq;

    fn grid() -> TimeGrid {
        TimeGrid::new(512).unwrap()
    }

    #[test]
    fn g_of_zero_path_is_zero() {
        let p = BrownianPath::from_fn(grid(), 3, |_, _| 0.0);
        assert_eq!(eval_g(&p), 0.0);
        assert_eq!(gamma(&p), 0.0);
        let rec = MalliavinRecord::compute(&p);
        assert!(rec.is_degenerate());
        assert!(rec.delta_u_over_gamma().is_err());
        assert!(rec.d_inv_gamma().is_err());
        assert_eq!(rec.dgamma_max_norm(), 0.0);
        assert_eq!(rec.delta_u, 0.0);
    }

    #[test]
    fn linear_path_unit_oracle() {
        // x(t) = t e1: g = 1/6, Dg(s) = ((1-s^2)/2) e1, gamma = 1/3,
        // delta(u) = 1, <u, Dgamma> = 1/3, delta(u/gamma) = 6.
        let p = linear_test_path(grid(), 3);
        let rec = MalliavinRecord::compute(&p);
        assert_abs_diff_eq!(rec.g, 1.0 / 6.0, epsilon = 1e-5);
        assert_abs_diff_eq!(rec.gamma, 1.0 / 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(rec.delta_u, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rec.u_dot_dgamma, 1.0 / 3.0, epsilon = 1e-4);
        assert_abs_diff_eq!(rec.delta_u_over_gamma().unwrap(), 6.0, epsilon = 1e-3);
        for k in (0..512).step_by(41) {
            let s = p.grid().node(k);
            assert_abs_diff_eq!(rec.dg.value_at(0, k), 0.5 * (1.0 - s * s), epsilon = 1e-5);
            assert_abs_diff_eq!(rec.u.value_at(0, k), 1.0, epsilon = 1e-12);
            // Dgamma(theta) = (1 - theta^2)/2 on the first coordinate
            assert_abs_diff_eq!(rec.dgamma.value_at(0, k), 0.5 * (1.0 - s * s), epsilon = 1e-4);
        }
        // divergence trace on this path: (n-1) * int 4/(1+s) ds -> 4 ln 2
        assert_abs_diff_eq!(rec.divergence_trace, 4.0 * std::f64::consts::LN_2, epsilon = 1e-2);
    }

    #[test]
    fn constant_path_oracle() {
        // x(t) = e1: Dg(s) = (1 - s) e1, gamma = 1/2.
        let p = BrownianPath::from_fn(grid(), 3, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let rec = MalliavinRecord::compute(&p);
        assert_abs_diff_eq!(rec.gamma, 0.5, epsilon = 1e-6);
        for k in (0..512).step_by(97) {
            let s = p.grid().node(k);
            assert_abs_diff_eq!(rec.dg.value_at(0, k), 1.0 - s, epsilon = 1e-9);
        }
    }

    #[test]
    fn d_inv_gamma_on_linear_path() {
        let p = linear_test_path(grid(), 3);
        let rec = MalliavinRecord::compute(&p);
        let dig = rec.d_inv_gamma().unwrap();
        for k in (0..512).step_by(83) {
            let s = p.grid().node(k);
            assert_abs_diff_eq!(dig.value_at(0, k), -9.0 * 0.5 * (1.0 - s * s), epsilon = 5e-3);
        }
        // ||D(1/gamma)||_H <= 1/gamma^2 given |Dgamma| <= 1
        assert!(dig.norm_sq().sqrt() <= 1.0 / (rec.gamma * rec.gamma) + 1e-9);
    }

    #[test]
    fn sampled_path_invariants() {
        let e = PathEnsemble::new(3, grid(), 100, RngSpec::new(314)).unwrap();
        for p in e.materialize() {
            let rec = MalliavinRecord::compute(&p);
            // Malliavin-condition identity <Dg, u> = gamma
            assert!((rec.dg_dot_u() - rec.gamma).abs() <= 1e-8 + 1e-12 * rec.gamma.abs());
            // |Dgamma| <= 1 at every node
            assert!(rec.dgamma_max_norm() <= 1.0 + 1e-6);
            // |u| in {0, 1} at every node
            for k in 0..p.grid().num_nodes() {
                let norm = rec.u.node_norm(k);
                assert!(norm.abs() < 1e-12 || (norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilde_identity_on_sampled_paths() {
        // <Dg, h>_H = W(h~) pathwise up to O(1/N).
        let g = grid();
        let h = GridFunctionH::from_fn(g, 3, |i, t| match i {
            0 => 1.0,
            1 => t,
            _ => (std::f64::consts::PI * t).cos(),
        });
        let tilde = h.tilde_transform();
        let e = PathEnsemble::new(3, g, 100, RngSpec::new(2718)).unwrap();
        let mut max_err = 0.0f64;
        for p in e.materialize() {
            let rec = MalliavinRecord::compute(&p);
            let lhs = rec.dg.inner_product(&h).unwrap();
            let rhs = forward_ito(&tilde, &p).unwrap();
            max_err = max_err.max((lhs - rhs).abs());
        }
        assert!(max_err < 50.0 / g.steps() as f64, "max_err = {max_err}");
    }

    #[test]
    fn product_rule_consistency_bit_for_bit() {
        let p = PathEnsemble::new(3, grid(), 1, RngSpec::new(55))
            .unwrap()
            .materialize()
            .remove(0);
        let rec = MalliavinRecord::compute(&p);
        let one = CylindricalFunctional::constant(1.0);
        assert_eq!(
            skorohod_x_u_over_gamma(&one, &rec, &p).unwrap(),
            rec.delta_u_over_gamma().unwrap()
        );
        assert_eq!(
            divergence_x_u_over_gamma(&one, &rec, &p).unwrap(),
            rec.divergence_u_over_gamma().unwrap()
        );
    }

    #[test]
    fn cylindrical_eval_and_gradient() {
        let g = grid();
        let p = linear_test_path(g, 3);
        let x = CylindricalFunctional::wiener("W(e1)", GridFunctionH::basis(g, 3, 0));
        // W(e1) on x(t) = t e1 is x1(1) = 1
        assert_abs_diff_eq!(x.eval(&p).unwrap(), 1.0, epsilon = 1e-12);
        let dx = x.gradient(&p).unwrap();
        assert_abs_diff_eq!(dx.value_at(0, 10), 1.0, epsilon = 1e-12);

        let c = CylindricalFunctional::constant(2.5);
        assert_eq!(c.eval(&p).unwrap(), 2.5);
        assert_eq!(c.gradient(&p).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn cylindrical_rejects_non_finite() {
        let g = grid();
        let p = linear_test_path(g, 3);
        let bad = CylindricalFunctional::new(
            "bad",
            vec![GridFunctionH::basis(g, 3, 0)],
            |y| 1.0 / (y[0] - y[0]),
            |_, out| out[0] = 0.0,
        );
        assert!(bad.eval(&p).is_err());
    }

    #[test]
    fn gradient_matches_directional_finite_difference() {
        let g = TimeGrid::new(256).unwrap();
        let e = PathEnsemble::new(3, g, 10, RngSpec::new(17)).unwrap();
        let h1 = GridFunctionH::from_fn(g, 3, |i, t| if i == 0 { 1.0 - t } else { 0.2 });
        let h2 = GridFunctionH::basis(g, 3, 1);
        let x = CylindricalFunctional::new(
            "sin+prod",
            vec![h1, h2],
            |y| (y[0]).sin() + 0.5 * y[0] * y[1],
            |y, out| {
                out[0] = y[0].cos() + 0.5 * y[1];
                out[1] = 0.5 * y[0];
            },
        );
        let k = GridFunctionH::from_fn(g, 3, |i, t| if i == 2 { t * t } else { 0.7 - t });
        // K(t) = int_0^t k(s) ds shifts the path in the Cameron-Martin direction
        let mut kk = Vec::new();
        let mut shift = GridFunctionH::zeros(g, 3);
        for i in 0..3 {
            g.cumulative_quadrature(k.coord(i), &mut kk);
            shift.coord_mut(i).copy_from_slice(&kk);
        }
        let eps = 1e-5;
        for p in e.materialize() {
            let mut plus_vals = p.values().to_vec();
            let mut minus_vals = p.values().to_vec();
            let nodes = g.num_nodes();
            for i in 0..3 {
                for kn in 0..nodes {
                    plus_vals[i * nodes + kn] += eps * shift.value_at(i, kn);
                    minus_vals[i * nodes + kn] -= eps * shift.value_at(i, kn);
                }
            }
            let plus = BrownianPath::from_values(g, 3, plus_vals).unwrap();
            let minus = BrownianPath::from_values(g, 3, minus_vals).unwrap();
            let fd = (x.eval(&plus).unwrap() - x.eval(&minus).unwrap()) / (2.0 * eps);
            let analytic = x.gradient(&p).unwrap().inner_product(&k).unwrap();
            assert_abs_diff_eq!(fd, analytic, epsilon = 2e-2);
        }
    }

    #[test]
    fn duality_at_cylindrical_level() {
        // E[<DX, h>] = E[X W(h)] within combined SE.
        let g = TimeGrid::new(128).unwrap();
        let m = 40_000;
        let e = PathEnsemble::new(3, g, m, RngSpec::new(404)).unwrap();
        let h = GridFunctionH::from_fn(g, 3, |i, t| if i == 0 { 1.0 } else { 0.3 * t });
        let x = CylindricalFunctional::tanh_wiener(
            "tanh",
            GridFunctionH::from_fn(g, 3, |i, t| if i == 1 { 1.0 - t } else { 0.0 }),
        );
        let mut diffs = crate::stats::RunningStats::new();
        for p in e.materialize() {
            let lhs = x.gradient_inner(&p, &h).unwrap();
            let rhs = x.eval(&p).unwrap() * forward_ito(&h, &p).unwrap();
            diffs.push(lhs - rhs);
        }
        assert!(diffs.mean().abs() < 3.0 * diffs.se(), "duality violated: {} vs {}", diffs.mean(), diffs.se());
    }

    #[test]
    fn divergence_has_zero_mean() {
        let g = TimeGrid::new(128).unwrap();
        let m = 40_000;
        let e = PathEnsemble::new(3, g, m, RngSpec::new(777)).unwrap();
        let mut du = crate::stats::RunningStats::new();
        let mut dug = crate::stats::RunningStats::new();
        for p in e.materialize() {
            let rec = MalliavinRecord::compute(&p);
            du.push(rec.divergence_u());
            dug.push(rec.divergence_u_over_gamma().unwrap());
        }
        assert!(du.mean().abs() < 4.0 * du.se(), "E[delta(u)] = {} +- {}", du.mean(), du.se());
        assert!(dug.mean().abs() < 4.0 * dug.se(), "E[delta(u/gamma)] = {} +- {}", dug.mean(), dug.se());
        // |u| <= 1 keeps the variance of delta(u) near 1
        assert!(du.variance().is_finite());
    }
}
