//! Density estimation for g by three independent routes (kernel estimate,
//! Malliavin representation, Laplace inversion), kernel conditional
//! expectations, and the empirical gamma tail / inverse-moment diagnostics.

use crate::error::{Error, Result};
use crate::laplace;
use crate::malliavin::{divergence_x_u_over_gamma, CylindricalFunctional, MalliavinRecord};
use crate::path::{BrownianPath, PathEnsemble};
use crate::stats::{mean_se, ols_slope, quantile_sorted, RunningStats};

/// Per-path scalar statistics over a whole ensemble, in path order.
///
/// One generation pass produces every column, so all estimators downstream
/// consume common randomness and paired comparisons stay sharp.
pub struct MalliavinTable {
    pub g: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Backward-sum delta(u).
    pub delta_u: Vec<f64>,
    /// Adjoint-consistent delta(u), mean zero.
    pub div_u: Vec<f64>,
    /// Adjoint-consistent delta(u/gamma), the density-representation weight.
    pub div_u_over_gamma: Vec<f64>,
    /// |<Dg, u> - gamma| per path.
    pub malliavin_gap: Vec<f64>,
    /// max_theta |Dgamma(theta)| per path.
    pub dgamma_max: Vec<f64>,
    /// Z = integral_0^1 t x^1(t) dt.
    pub z_first: Vec<f64>,
    /// Extra per-path statistics requested by the caller, in request order.
    pub extras: Vec<Vec<f64>>,
    pub degenerate_count: usize,
    pub batch_size: usize,
}

/// Extra per-path statistic computed in the same pass as the table.
pub type ExtraColumn<'a> = &'a (dyn Fn(&BrownianPath, &MalliavinRecord) -> f64 + Sync);

impl MalliavinTable {
    pub fn compute(ensemble: &PathEnsemble) -> Self {
        Self::compute_with_extras(ensemble, &[])
    }

    pub fn compute_with_extras(ensemble: &PathEnsemble, extras: &[ExtraColumn<'_>]) -> Self {
        let base = 9;
        let grid = ensemble.grid();
        let columns = ensemble.collect_columns(base + extras.len(), |path, out| {
            let rec = MalliavinRecord::compute(path);
            let degenerate = rec.is_degenerate();
            out[0] = rec.g;
            out[1] = rec.gamma;
            out[2] = rec.delta_u;
            out[3] = rec.divergence_u();
            out[4] = if degenerate {
                0.0
            } else {
                rec.divergence_u_over_gamma().expect("gamma checked")
            };
            out[5] = (rec.dg_dot_u() - rec.gamma).abs();
            out[6] = rec.dgamma_max_norm();
            let tx: Vec<f64> = path
                .coord(0)
                .iter()
                .enumerate()
                .map(|(k, v)| grid.node(k) * v)
                .collect();
            out[7] = grid.quadrature(&tx);
            out[8] = if degenerate { 1.0 } else { 0.0 };
            for (j, f) in extras.iter().enumerate() {
                out[base + j] = f(path, &rec);
            }
        });
        let mut it = columns.into_iter();
        let g = it.next().unwrap();
        let gamma = it.next().unwrap();
        let delta_u = it.next().unwrap();
        let div_u = it.next().unwrap();
        let div_u_over_gamma = it.next().unwrap();
        let malliavin_gap = it.next().unwrap();
        let dgamma_max = it.next().unwrap();
        let z_first = it.next().unwrap();
        let degenerate_count = it.next().unwrap().iter().filter(|&&v| v > 0.5).count();
        let extras: Vec<Vec<f64>> = it.collect();
        MalliavinTable {
            g,
            gamma,
            delta_u,
            div_u,
            div_u_over_gamma,
            malliavin_gap,
            dgamma_max,
            z_first,
            extras,
            degenerate_count,
            batch_size: ensemble.batch_size(),
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// A density (or density-derivative) estimate on an r-grid.
#[derive(Debug, Clone)]
pub struct DensityCurve {
    pub method: String,
    pub r: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub flags: Vec<String>,
    pub bandwidth: Option<f64>,
    pub degenerate_count: usize,
}

impl DensityCurve {
    fn validate_grid(r_grid: &[f64]) -> Result<()> {
        if r_grid.is_empty() {
            return Err(Error::Config("empty r-grid".into()));
        }
        if r_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("r-grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Trapezoidal mass of the curve over its grid.
    pub fn mass(&self) -> f64 {
        let mut acc = 0.0;
        for w in self.r.windows(2).zip(self.estimate.windows(2)) {
            let (rr, ee) = w;
            acc += 0.5 * (ee[0] + ee[1]) * (rr[1] - rr[0]);
        }
        acc
    }
}

/// Silverman's rule on the g samples.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let s = RunningStats::from_slice(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = s.std_dev().min(iqr / 1.34).max(1e-12);
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

/// Default r-grid: `points` values between the 2nd and 98th percentile.
pub fn default_r_grid(samples: &[f64], points: usize) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = quantile_sorted(&sorted, 0.02);
    let hi = quantile_sorted(&sorted, 0.98);
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Gaussian-kernel density estimate of the g samples.
pub fn kde_density(samples: &[f64], r_grid: &[f64], bandwidth: f64) -> Result<DensityCurve> {
    DensityCurve::validate_grid(r_grid)?;
    if samples.is_empty() {
        return Err(Error::Config("empty ensemble".into()));
    }
    if bandwidth <= 0.0 {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    let mut estimate = Vec::with_capacity(r_grid.len());
    let mut stderr = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut s = RunningStats::new();
        for &gv in samples {
            let z = (gv - r) / bandwidth;
            s.push(INV_SQRT_2PI * (-0.5 * z * z).exp() / bandwidth);
        }
        estimate.push(s.mean());
        stderr.push(s.se());
    }
    Ok(DensityCurve {
        method: "kde".into(),
        r: r_grid.to_vec(),
        estimate,
        stderr,
        flags: vec![String::new(); r_grid.len()],
        bandwidth: Some(bandwidth),
        degenerate_count: 0,
    })
}

/// Malliavin representation f_1(r) = E[delta(u/gamma) 1_{g > r}].
pub fn malliavin_density(table: &MalliavinTable, r_grid: &[f64]) -> Result<DensityCurve> {
    malliavin_density_weighted(&table.g, &table.div_u_over_gamma, table.degenerate_count, r_grid, "malliavin")
}

/// F_X'(r) = E[delta(X u/gamma) 1_{g > r}] for a per-path weight column.
pub fn malliavin_density_weighted(
    g: &[f64],
    weight: &[f64],
    degenerate_count: usize,
    r_grid: &[f64],
    method: &str,
) -> Result<DensityCurve> {
    DensityCurve::validate_grid(r_grid)?;
    if g.is_empty() {
        return Err(Error::Config("empty ensemble".into()));
    }
    let mut estimate = Vec::with_capacity(r_grid.len());
    let mut stderr = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut s = RunningStats::new();
        for (&gv, &w) in g.iter().zip(weight) {
            s.push(if gv > r { w } else { 0.0 });
        }
        estimate.push(s.mean());
        stderr.push(s.se());
    }
    Ok(DensityCurve {
        method: method.into(),
        r: r_grid.to_vec(),
        estimate,
        stderr,
        flags: vec![String::new(); r_grid.len()],
        bandwidth: None,
        degenerate_count,
    })
}

/// Per-path column of adjoint-consistent delta(X u/gamma) values for a
/// cylindrical X (degenerate-gamma paths contribute zero and are counted).
pub fn x_divergence_column(
    x: &CylindricalFunctional,
    ensemble: &PathEnsemble,
) -> (Vec<f64>, Vec<f64>, usize) {
    let cols = ensemble.collect_columns(3, |path, out| {
        let rec = MalliavinRecord::compute(path);
        out[0] = rec.g;
        if rec.is_degenerate() {
            out[1] = 0.0;
            out[2] = 1.0;
        } else {
            out[1] = divergence_x_u_over_gamma(x, &rec, path).expect("finite cylindrical");
            out[2] = 0.0;
        }
    });
    let degenerate = cols[2].iter().filter(|&&v| v > 0.5).count();
    let mut it = cols.into_iter();
    (it.next().unwrap(), it.next().unwrap(), degenerate)
}

/// Nadaraya-Watson estimate of E[X | g = r] with a Gaussian kernel.
///
/// Returns (estimate, standard error, effective sample size).
pub fn conditional_expectation(
    x: &[f64],
    g: &[f64],
    r: f64,
    bandwidth: f64,
) -> Result<(f64, f64, f64)> {
    if bandwidth <= 0.0 {
        return Err(Error::Config("bandwidth must be positive".into()));
    }
    assert_eq!(x.len(), g.len());
    let mut wsum = 0.0;
    let mut wxsum = 0.0;
    let mut w2sum = 0.0;
    let mut weights = Vec::with_capacity(g.len());
    for (&gv, &xv) in g.iter().zip(x) {
        let z = (gv - r) / bandwidth;
        let w = (-0.5 * z * z).exp();
        weights.push(w);
        wsum += w;
        wxsum += w * xv;
        w2sum += w * w;
    }
    let ess = if w2sum > 0.0 { wsum * wsum / w2sum } else { 0.0 };
    if ess < 100.0 {
        return Err(Error::InsufficientLocalSamples {
            r,
            ess,
            required: 100.0,
        });
    }
    let est = wxsum / wsum;
    // delta-method variance of the weighted mean
    let mut var_num = 0.0;
    for (&w, &xv) in weights.iter().zip(x) {
        let d = xv - est;
        var_num += w * w * d * d;
    }
    let se = var_num.sqrt() / wsum;
    Ok((est, se, ess))
}

/// MC mean of exp(-lambda g) with standard error.
pub fn laplace_mc(g: &[f64], lambda: f64) -> Result<(f64, f64)> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    let vals: Vec<f64> = g.iter().map(|&v| (-lambda * v).exp()).collect();
    Ok(mean_se(&vals))
}

pub use crate::laplace::laplace_oracle;

/// MC-free density route: Gaver-Stehfest inversion of the closed-form
/// transform of g.
pub fn invert_laplace(dim: usize, r_grid: &[f64], order: usize) -> Result<DensityCurve> {
    DensityCurve::validate_grid(r_grid)?;
    if r_grid[0] <= 0.0 {
        return Err(Error::Config("laplace inversion needs r > 0".into()));
    }
    let mut estimate = Vec::with_capacity(r_grid.len());
    let mut flags = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let (v, flagged) = laplace::invert_density_at(r, dim, order);
        estimate.push(v);
        flags.push(if flagged { "ill-conditioned".into() } else { String::new() });
    }
    Ok(DensityCurve {
        method: "laplace-inversion".into(),
        r: r_grid.to_vec(),
        stderr: vec![0.0; r_grid.len()],
        estimate,
        flags,
        bandwidth: None,
        degenerate_count: 0,
    })
}

/// Estimate of E[gamma^{-p}] with heavy-tail diagnostics.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub exponent: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub max_sample: f64,
    /// Share of the estimate carried by the largest 1% of samples.
    pub top_share: f64,
    pub heavy_tail: bool,
}

pub fn inv_gamma_moments(gamma: &[f64], p: f64) -> Result<MomentReport> {
    if p < 0.0 {
        return Err(Error::Config("exponent must be nonnegative".into()));
    }
    let mut vals: Vec<f64> = gamma
        .iter()
        .filter(|&&gv| gv > crate::malliavin::TOL_GAMMA)
        .map(|&gv| gv.powf(-p))
        .collect();
    if vals.is_empty() {
        return Err(Error::Config("no non-degenerate gamma samples".into()));
    }
    let (estimate, stderr) = mean_se(&vals);
    vals.sort_by(|a, b| a.total_cmp(b));
    let top = vals.len().div_ceil(100);
    let top_sum: f64 = vals[vals.len() - top..].iter().sum();
    let total: f64 = vals.iter().sum();
    let top_share = if total > 0.0 { top_sum / total } else { 0.0 };
    Ok(MomentReport {
        exponent: p,
        estimate,
        stderr,
        max_sample: *vals.last().unwrap(),
        top_share,
        heavy_tail: top_share > 0.5,
    })
}

/// Empirical tail table for P(gamma < eta) with a log-log slope fit, plus
/// the variance of Z = integral t B^1(t) dt from the tail lemma's proof.
#[derive(Debug, Clone)]
pub struct TailReport {
    pub etas: Vec<f64>,
    pub probs: Vec<f64>,
    pub counts: Vec<usize>,
    /// Rungs with zero hits, excluded from the fit.
    pub empty_rungs: usize,
    pub slope: f64,
    pub slope_se: f64,
    pub z_variance: f64,
    pub z_variance_se: f64,
}

pub fn gamma_tail(gamma: &[f64], z_first: &[f64], etas: &[f64]) -> Result<TailReport> {
    if etas.is_empty() || etas.iter().any(|&e| e <= 0.0 || e >= 1.0) {
        return Err(Error::Config("eta ladder must lie in (0, 1)".into()));
    }
    let m = gamma.len() as f64;
    let mut probs = Vec::with_capacity(etas.len());
    let mut counts = Vec::with_capacity(etas.len());
    for &eta in etas {
        let c = gamma.iter().filter(|&&gv| gv < eta).count();
        counts.push(c);
        probs.push(c as f64 / m);
    }
    let mut log_eta = Vec::new();
    let mut log_p = Vec::new();
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            log_eta.push(etas[i].ln());
            log_p.push(p.ln());
        }
    }
    let empty_rungs = etas.len() - log_eta.len();
    let (slope, slope_se) = if log_eta.len() >= 2 {
        ols_slope(&log_eta, &log_p)
    } else {
        (f64::NAN, f64::NAN)
    };
    let zs = RunningStats::from_slice(z_first);
    let z_variance = zs.variance();
    // Z is Gaussian, so Var(sample variance) = 2 sigma^4 / (M - 1)
    let z_variance_se = z_variance * (2.0 / (z_first.len() as f64 - 1.0)).sqrt();
    Ok(TailReport {
        etas: etas.to_vec(),
        probs,
        counts,
        empty_rungs,
        slope,
        slope_se,
        z_variance,
        z_variance_se,
    })
}
