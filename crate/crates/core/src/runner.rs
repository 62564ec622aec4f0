//! Run configuration, suite orchestration, and CSV report emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::density::{
    default_r_grid, gamma_tail, inv_gamma_moments, invert_laplace, kde_density, laplace_mc,
    laplace_oracle, malliavin_density, silverman_bandwidth, MalliavinTable,
};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::gridfn::GridFunctionH;
use crate::laplace::DEFAULT_STEHFEST_ORDER;
use crate::malliavin::MalliavinRecord;
use crate::path::{forward_ito, PathEnsemble, DEFAULT_BATCH_SIZE};
use crate::rng::RngSpec;
use crate::sde::{
    empirical_density_gu, euler_maruyama, phi1_density, rho1_representation, rho1_stochastic,
    sde_table, theta_slab, PotentialSpec,
};
use crate::stats::{mean_se, ols_slope, quantile, RunningStats};
use crate::surface::{
    concentration_probe, ibp_report, surface_integral, IbpColumns, SlabLadder,
};

/// Everything a run needs; fully recorded in every output for provenance.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// State dimension n.
    pub dim: usize,
    /// Time steps N.
    pub steps: usize,
    /// Ensemble size M.
    pub paths: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Points on the default r-grid.
    pub r_points: usize,
    /// Laplace exponents lambda.
    pub lambdas: Vec<f64>,
    /// Slab widths, strictly decreasing.
    pub eps_ladder: Vec<f64>,
    /// Kernel bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub potential: String,
    pub potential_a: f64,
    /// Output directory for CSV tables and the summary.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 3,
            steps: 512,
            paths: 1_000_000,
            seed: 12345,
            batch_size: DEFAULT_BATCH_SIZE,
            r_points: 32,
            lambdas: vec![0.5, 1.0, 2.0],
            eps_ladder: SlabLadder::standard().epsilons,
            bandwidth: None,
            potential: "cosine".into(),
            potential_a: 0.5,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(file: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(file)?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{file:?}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if self.steps < 2 {
            return Err(Error::Config("steps must be >= 2".into()));
        }
        if self.paths == 0 || self.batch_size == 0 {
            return Err(Error::Config("paths and batch_size must be >= 1".into()));
        }
        if self.r_points < 2 {
            return Err(Error::Config("r_points must be >= 2".into()));
        }
        if let Some(bw) = self.bandwidth {
            if bw <= 0.0 {
                return Err(Error::Config("bandwidth must be positive".into()));
            }
        }
        SlabLadder::new(self.eps_ladder.clone())?;
        PotentialSpec::by_name(&self.potential, self.potential_a, self.dim)?;
        Ok(())
    }

    pub fn ensemble(&self) -> Result<PathEnsemble> {
        PathEnsemble::with_batch_size(
            self.dim,
            TimeGrid::new(self.steps)?,
            self.paths,
            RngSpec::new(self.seed),
            self.batch_size,
        )
    }

    pub fn ladder(&self) -> SlabLadder {
        SlabLadder::new(self.eps_ladder.clone()).expect("validated")
    }

    fn provenance(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{}",
            self.dim, self.steps, self.paths, self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Density,
    Surface,
    Ibp,
    Sde,
    Invariants,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Suite> {
        match s {
            "density" => Ok(Suite::Density),
            "surface" => Ok(Suite::Surface),
            "ibp" => Ok(Suite::Ibp),
            "sde" => Ok(Suite::Sde),
            "invariants" => Ok(Suite::Invariants),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!("unknown suite '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Discrepancy in combined-SE units (or the raw gap for exact checks).
    pub z: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, z: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            z,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Executes the requested suite(s), writes CSV tables and a summary into the
/// configured output directory, and returns the per-check results.
pub fn run(config: &RunConfig, suite: Suite) -> Result<Vec<SuiteReport>> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let mut reports = Vec::new();
    let suites: Vec<Suite> = match suite {
        Suite::All => vec![
            Suite::Invariants,
            Suite::Density,
            Suite::Surface,
            Suite::Ibp,
            Suite::Sde,
        ],
        single => vec![single],
    };
    let table = MalliavinTable::compute(&config.ensemble()?);
    for s in suites {
        let report = match s {
            Suite::Density => density_suite(config, &table)?,
            Suite::Surface => surface_suite(config, &table)?,
            Suite::Ibp => ibp_suite(config)?,
            Suite::Sde => sde_suite(config, &table)?,
            Suite::Invariants => invariants_suite(config, &table)?,
            Suite::All => unreachable!(),
        };
        reports.push(report);
    }
    write_summary(config, &reports)?;
    Ok(reports)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)?;
    Ok(())
}

fn write_summary(config: &RunConfig, reports: &[SuiteReport]) -> Result<()> {
    let mut csv = String::from("suite,check,pass,z,detail\n");
    let mut passed = 0usize;
    let mut total = 0usize;
    let mut worst: Option<&CheckResult> = None;
    for rep in reports {
        for c in &rep.checks {
            total += 1;
            if c.passed {
                passed += 1;
            }
            if worst.map_or(true, |w| c.z.abs() > w.z.abs()) {
                worst = Some(c);
            }
            writeln!(
                csv,
                "{},{},{},{},{}",
                rep.suite, c.name, c.passed, c.z, c.detail
            )
            .unwrap();
        }
    }
    writeln!(csv, "#total,{total},#passed,{passed}").unwrap();
    if let Some(w) = worst {
        writeln!(csv, "#worst,{},{}", w.name, w.z).unwrap();
    }
    write_file(&config.out.join("summary.csv"), &csv)
}

// ---------------------------------------------------------------------------
// density suite
// ---------------------------------------------------------------------------

fn density_suite(config: &RunConfig, table: &MalliavinTable) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let r_grid = default_r_grid(&table.g, config.r_points);
    let bw = config
        .bandwidth
        .unwrap_or_else(|| silverman_bandwidth(&table.g));

    let kde = kde_density(&table.g, &r_grid, bw)?;
    let mal = malliavin_density(table, &r_grid)?;
    let inv = invert_laplace(config.dim, &r_grid, DEFAULT_STEHFEST_ORDER)?;

    let mut csv = String::from("method,n,N,M,seed,r,estimate,stderr,flags\n");
    for curve in [&kde, &mal, &inv] {
        for i in 0..curve.r.len() {
            writeln!(
                csv,
                "{},{},{},{},{}",
                config.provenance(&curve.method),
                curve.r[i],
                curve.estimate[i],
                curve.stderr[i],
                curve.flags[i]
            )
            .unwrap();
        }
    }
    let file = config.out.join("density.csv");
    write_file(&file, &csv)?;

    // pairwise triangulation at 5 central grid points
    let center = r_grid.len() / 2;
    let idx: Vec<usize> = (center - 2..=center + 2).collect();
    let curvature_allowance = 0.5 * bw * bw * 4.0;
    for &i in &idx {
        let se = (kde.stderr[i].powi(2) + mal.stderr[i].powi(2)).sqrt();
        let gap = (kde.estimate[i] - mal.estimate[i]).abs();
        let budget = 3.0 * se + curvature_allowance;
        checks.push(CheckResult::new(
            format!("kde-vs-malliavin@r={:.4}", r_grid[i]),
            gap <= budget,
            gap / se.max(1e-300),
            format!("gap={gap} budget={budget}"),
        ));
        let rel = (kde.estimate[i] - inv.estimate[i]).abs() / inv.estimate[i].abs().max(1e-300);
        checks.push(CheckResult::new(
            format!("kde-vs-inversion@r={:.4}", r_grid[i]),
            rel <= 0.05,
            rel / 0.05,
            format!("rel={rel}"),
        ));
    }

    // Laplace-transform oracle
    for &lambda in &config.lambdas {
        let (mc, se) = laplace_mc(&table.g, lambda)?;
        let oracle = laplace_oracle(lambda, config.dim);
        let gap = (mc - oracle).abs();
        let budget = 3.0 * se + 2e-3;
        checks.push(CheckResult::new(
            format!("laplace-oracle@lambda={lambda}"),
            gap <= budget,
            gap / se.max(1e-300),
            format!("mc={mc} oracle={oracle}"),
        ));
    }

    // normalization of the Malliavin route over a grid from near zero
    let gmax = table.g.iter().cloned().fold(0.0f64, f64::max);
    let wide: Vec<f64> = (0..200).map(|k| 1e-9 + k as f64 * gmax / 199.0).collect();
    let mass = malliavin_density(table, &wide)?.mass();
    checks.push(CheckResult::new(
        "malliavin-normalization",
        (mass - 1.0).abs() < 0.03,
        (mass - 1.0).abs() / 0.03,
        format!("mass={mass}"),
    ));

    // inverse-gamma moment diagnostics
    let mut moments_csv = String::from("method,n,N,M,seed,p,estimate,stderr,top_share,flags\n");
    for p in [1.0, 2.0] {
        let rep = inv_gamma_moments(&table.gamma, p)?;
        writeln!(
            moments_csv,
            "{},{},{},{},{},{}",
            config.provenance("inv-gamma-moment"),
            rep.exponent,
            rep.estimate,
            rep.stderr,
            rep.top_share,
            if rep.heavy_tail { "heavy-tail" } else { "" }
        )
        .unwrap();
        checks.push(CheckResult::new(
            format!("inv-gamma-moment@p={p}"),
            rep.estimate.is_finite() && !rep.heavy_tail,
            rep.top_share,
            format!("estimate={} top_share={}", rep.estimate, rep.top_share),
        ));
    }
    let moments_file = config.out.join("moments.csv");
    write_file(&moments_file, &moments_csv)?;

    Ok(SuiteReport {
        suite: "density".into(),
        checks,
        files: vec![file, moments_file],
    })
}

// ---------------------------------------------------------------------------
// surface suite
// ---------------------------------------------------------------------------

fn surface_levels(g: &[f64]) -> Vec<f64> {
    [0.3, 0.5, 0.7].iter().map(|&q| quantile(g, q)).collect()
}

fn surface_suite(config: &RunConfig, table: &MalliavinTable) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let ladder = config.ladder();
    let levels = surface_levels(&table.g);
    let ones = vec![1.0; table.len()];

    let mut csv = String::from("method,n,N,M,seed,r,eps,estimate,stderr,count,flags\n");
    for &r in &levels {
        let est = surface_integral(&table.g, &ones, r, &ladder)?;
        for rung in &est.rungs {
            writeln!(
                csv,
                "{},{},{},{},{},{},",
                config.provenance("slab"),
                r,
                rung.eps,
                rung.value,
                rung.stderr,
                rung.count
            )
            .unwrap();
        }
        writeln!(
            csv,
            "{},{},extrap,{},{},,",
            config.provenance("slab"),
            r,
            est.extrapolated,
            est.extrapolated_se
        )
        .unwrap();

        // total-mass identity against the Malliavin density
        let f1 = malliavin_density(table, &[r])?;
        let se = (est.extrapolated_se.powi(2) + f1.stderr[0].powi(2)).sqrt();
        let gap = (est.extrapolated - f1.estimate[0]).abs();
        checks.push(CheckResult::new(
            format!("total-mass@r={r:.4}"),
            gap <= 3.0 * se,
            gap / se.max(1e-300),
            format!("slab={} f1={}", est.extrapolated, f1.estimate[0]),
        ));

        // concentration probe: cut-off vanishing near the level set
        let delta = 0.05;
        let rungs = concentration_probe(&table.g, r, delta, &ladder)?;
        let finest = rungs.iter().filter(|rg| rg.eps <= delta).last();
        if let Some(rg) = finest {
            writeln!(
                csv,
                "{},{},{},{},{},{},cutoff",
                config.provenance("concentration"),
                r,
                rg.eps,
                rg.value,
                rg.stderr,
                rg.count
            )
            .unwrap();
            checks.push(CheckResult::new(
                format!("concentration@r={r:.4}"),
                rg.value.abs() <= 0.05 * f1.estimate[0],
                rg.value.abs() / (0.05 * f1.estimate[0]).max(1e-300),
                format!("probe={} f1={}", rg.value, f1.estimate[0]),
            ));
        }
    }
    let file = config.out.join("surface.csv");
    write_file(&file, &csv)?;

    Ok(SuiteReport {
        suite: "surface".into(),
        checks,
        files: vec![file],
    })
}

// ---------------------------------------------------------------------------
// IBP suite
// ---------------------------------------------------------------------------

/// The default direction fields; coordinates clamp into the available
/// dimension so the suite is well-defined for any n >= 1.
fn ibp_directions(grid: TimeGrid, dim: usize) -> Vec<(String, GridFunctionH)> {
    let c1 = 0;
    let c2 = 1.min(dim - 1);
    let c3 = 2.min(dim - 1);
    vec![
        (
            "h1=e1".into(),
            GridFunctionH::from_fn(grid, dim, move |i, _| if i == c1 { 1.0 } else { 0.0 }),
        ),
        (
            "h2=(1-t)e2".into(),
            GridFunctionH::from_fn(grid, dim, move |i, t| if i == c2 { 1.0 - t } else { 0.0 }),
        ),
        (
            "h3=t.e1+cos(pi.t)e3".into(),
            GridFunctionH::from_fn(grid, dim, move |i, t| {
                if i == c1 {
                    t
                } else if i == c3 && c3 != c1 {
                    0.3 * (std::f64::consts::PI * t).cos()
                } else {
                    0.0
                }
            }),
        ),
    ]
}

/// Per-path data for the whole 3x3 (X, h) grid from one generation pass:
/// g, <Dg, h_j>, W(h_j), and the two Wiener arguments of the non-constant X.
struct IbpSuiteData {
    g: Vec<f64>,
    dg_h: [Vec<f64>; 3],
    w_h: [Vec<f64>; 3],
    w_a: Vec<f64>,
    w_b: Vec<f64>,
    /// Gram rows <ha, h_j> and <hb, h_j>.
    gram_a: [f64; 3],
    gram_b: [f64; 3],
}

fn ibp_suite_data(config: &RunConfig) -> Result<IbpSuiteData> {
    let ensemble = config.ensemble()?;
    let grid = ensemble.grid();
    let dim = config.dim;
    let hs = ibp_directions(grid, dim);
    let c2 = 1.min(dim - 1);
    // arguments of X2 = W(ha) and X3 = tanh(W(hb))
    let ha = GridFunctionH::from_fn(grid, dim, move |i, _| if i == c2 { 1.0 } else { 0.0 });
    let hb = GridFunctionH::from_fn(grid, dim, |i, t| if i == 0 { 1.0 - t } else { 0.0 });

    let mut gram_a = [0.0; 3];
    let mut gram_b = [0.0; 3];
    for (j, (_, h)) in hs.iter().enumerate() {
        gram_a[j] = ha.inner_product(h)?;
        gram_b[j] = hb.inner_product(h)?;
    }

    let cols = ensemble.collect_columns(9, |path, out| {
        let rec = MalliavinRecord::compute(path);
        out[0] = rec.g;
        for (j, (_, h)) in hs.iter().enumerate() {
            out[1 + j] = rec.dg.inner_product(h).expect("shared grid");
            out[4 + j] = forward_ito(h, path).expect("shared grid");
        }
        out[7] = forward_ito(&ha, path).expect("shared grid");
        out[8] = forward_ito(&hb, path).expect("shared grid");
    });
    let mut it = cols.into_iter();
    Ok(IbpSuiteData {
        g: it.next().unwrap(),
        dg_h: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        w_h: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        w_a: it.next().unwrap(),
        w_b: it.next().unwrap(),
        gram_a,
        gram_b,
    })
}

fn ibp_suite(config: &RunConfig) -> Result<SuiteReport> {
    let data = ibp_suite_data(config)?;
    let ladder = config.ladder();
    let levels = surface_levels(&data.g);
    let m = data.g.len();

    let x_labels = ["X1=1", "X2=W(ha)", "X3=tanh(W(hb))"];
    let h_labels: Vec<String> = ibp_directions(TimeGrid::new(config.steps)?, config.dim)
        .into_iter()
        .map(|(l, _)| l)
        .collect();

    let mut csv = String::from("suite,x,h,r,eps,lhs,rhs,diff,combined_se,pass\n");
    let mut checks = Vec::new();
    let mut cells = 0usize;
    let mut cells_passed = 0usize;
    let mut x1_all_pass = true;

    for (xi, xl) in x_labels.iter().enumerate() {
        for j in 0..3 {
            // assemble the per-path columns for this (X, h) cell
            let mut x_dg_h = Vec::with_capacity(m);
            let mut bulk = Vec::with_capacity(m);
            for i in 0..m {
                let (xv, dx_h) = match xi {
                    0 => (1.0, 0.0),
                    1 => (data.w_a[i], data.gram_a[j]),
                    _ => {
                        let c = data.w_b[i].cosh();
                        (data.w_b[i].tanh(), data.gram_b[j] / (c * c))
                    }
                };
                x_dg_h.push(xv * data.dg_h[j][i]);
                bulk.push(dx_h - xv * data.w_h[j][i]);
            }
            let cols = IbpColumns {
                g: data.g.clone(),
                x_dg_h,
                bulk,
            };
            for &r in &levels {
                let rep = ibp_report(&cols, r, &ladder)?;
                for rung in &rep.lhs.rungs {
                    writeln!(
                        csv,
                        "ibp,{},{},{},{},{},{},{},{},",
                        xl, h_labels[j], r, rung.eps, rung.value, rep.rhs,
                        rung.value - rep.rhs,
                        rung.stderr
                    )
                    .unwrap();
                }
                let pass = rep.diff.abs() <= 3.0 * rep.diff_se;
                writeln!(
                    csv,
                    "ibp,{},{},{},extrap,{},{},{},{},{}",
                    xl, h_labels[j], r, rep.lhs.extrapolated, rep.rhs, rep.diff, rep.diff_se, pass
                )
                .unwrap();
                cells += 1;
                if pass {
                    cells_passed += 1;
                } else if xi == 0 {
                    x1_all_pass = false;
                }
                checks.push(CheckResult::new(
                    format!("ibp@{}/{}/r={:.4}", xl, h_labels[j], r),
                    pass,
                    rep.diff / rep.diff_se.max(1e-300),
                    format!("lhs={} rhs={}", rep.lhs.extrapolated, rep.rhs),
                ));
            }
        }
    }

    checks.push(CheckResult::new(
        "ibp-cell-pass-rate",
        cells_passed as f64 >= 0.95 * cells as f64,
        cells_passed as f64 / cells as f64,
        format!("{cells_passed}/{cells} cells"),
    ));
    checks.push(CheckResult::new(
        "ibp-divergence-theorem-row",
        x1_all_pass,
        if x1_all_pass { 0.0 } else { 1.0 },
        "X=1 against every h",
    ));

    let file = config.out.join("ibp.csv");
    write_file(&file, &csv)?;
    Ok(SuiteReport {
        suite: "ibp".into(),
        checks,
        files: vec![file],
    })
}

// ---------------------------------------------------------------------------
// SDE suite
// ---------------------------------------------------------------------------

fn sde_suite(config: &RunConfig, base: &MalliavinTable) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let ensemble = config.ensemble()?;
    let v = PotentialSpec::by_name(&config.potential, config.potential_a, config.dim)?;
    let t = sde_table(&v, &ensemble, None);

    // martingale normalization
    let (rho_mean, rho_se) = mean_se(&t.rho1_stochastic);
    checks.push(CheckResult::new(
        "rho1-mean-one",
        (rho_mean - 1.0).abs() <= 3.0 * rho_se,
        (rho_mean - 1.0) / rho_se.max(1e-300),
        format!("mean={rho_mean} se={rho_se}"),
    ));

    // the two forms of rho1 converge together under N-refinement
    let order = refinement_order(config, &v)?;
    checks.push(CheckResult::new(
        "rho1-forms-refinement-order",
        order > 0.0,
        order,
        format!("fitted order {order}"),
    ));

    // phi1 vs direct simulation
    let bw = config
        .bandwidth
        .unwrap_or_else(|| silverman_bandwidth(&t.g_u));
    let r_grid = default_r_grid(&t.g_u, config.r_points);
    let phi = phi1_density(&t, &r_grid, bw)?;
    let emp = empirical_density_gu(&t, &r_grid, bw)?;
    let mut csv = String::from("method,n,N,M,seed,r,estimate,stderr,flags\n");
    for curve in [&phi, &emp] {
        for i in 0..curve.r.len() {
            writeln!(
                csv,
                "{},{},{},{},{}",
                config.provenance(&format!("{}[{}]", curve.method, v.name())),
                curve.r[i],
                curve.estimate[i],
                curve.stderr[i],
                curve.flags[i]
            )
            .unwrap();
        }
    }
    let center = r_grid.len() / 2;
    let allowance = 0.5 * bw * bw * 4.0;
    for &i in &(center - 2..=center + 2).collect::<Vec<_>>() {
        let se = (phi.stderr[i].powi(2) + emp.stderr[i].powi(2)).sqrt();
        let gap = (phi.estimate[i] - emp.estimate[i]).abs();
        checks.push(CheckResult::new(
            format!("phi1-vs-empirical@r={:.4}", r_grid[i]),
            gap <= 3.0 * se + allowance,
            gap / se.max(1e-300),
            format!("phi1={} empirical={}", phi.estimate[i], emp.estimate[i]),
        ));
    }

    // theta_r total mass
    let r_mid = quantile(&t.g_u, 0.5);
    let theta = theta_slab(&t, r_mid, &config.ladder())?;
    let phi_mid = phi1_density(&t, &[r_mid], bw)?;
    let se = (theta.extrapolated_se.powi(2) + phi_mid.stderr[0].powi(2)).sqrt();
    let gap = (theta.extrapolated - phi_mid.estimate[0]).abs();
    checks.push(CheckResult::new(
        "theta-total-mass",
        gap <= 3.0 * se + 0.02 * phi_mid.estimate[0].abs(),
        gap / se.max(1e-300),
        format!("theta={} phi1={}", theta.extrapolated, phi_mid.estimate[0]),
    ));

    // V = 0 collapse on shared driving noise; the identity is bit-exact, so
    // a two-batch prefix of the ensemble suffices
    let collapse_paths = config.paths.min(2 * config.batch_size);
    let prefix = PathEnsemble::with_batch_size(
        config.dim,
        TimeGrid::new(config.steps)?,
        collapse_paths,
        RngSpec::new(config.seed),
        config.batch_size,
    )?;
    let zero = sde_table(&PotentialSpec::zero(), &prefix, None);
    let collapse = zero.g_u == base.g[..collapse_paths]
        && zero.rho1_stochastic.iter().all(|&x| x == 1.0)
        && zero.inv_rho1_of_b.iter().all(|&x| x == 1.0);
    checks.push(CheckResult::new(
        "zero-potential-collapse",
        collapse,
        if collapse { 0.0 } else { 1.0 },
        "g(u)=g(B) and rho1=1 bit-for-bit",
    ));

    let file = config.out.join("sde.csv");
    write_file(&file, &csv)?;
    Ok(SuiteReport {
        suite: "sde".into(),
        checks,
        files: vec![file],
    })
}

/// Fitted decay order of the pathwise |log rho1_stoch - log rho1_repr| gap
/// under N-refinement: slope of log median gap against log dt over N/4, N/2,
/// N on 100 coupled paths.
fn refinement_order(config: &RunConfig, v: &PotentialSpec) -> Result<f64> {
    if config.steps % 4 != 0 {
        return Err(Error::Config("steps must be divisible by 4".into()));
    }
    let fine = PathEnsemble::new(
        config.dim,
        TimeGrid::new(config.steps)?,
        100,
        RngSpec::new(config.seed ^ 0x5eed),
    )?;
    let paths = fine.materialize();
    let mut log_dt = Vec::new();
    let mut log_gap = Vec::new();
    for factor in [4usize, 2, 1] {
        let mut gaps: Vec<f64> = paths
            .iter()
            .map(|p| {
                let d = p.restrict(factor).unwrap();
                let u = euler_maruyama(v, &d);
                (rho1_stochastic(v, &u, &d).ln() - rho1_representation(v, &u).ln()).abs()
            })
            .collect();
        gaps.sort_by(|a, b| a.total_cmp(b));
        let med = crate::stats::quantile_sorted(&gaps, 0.5);
        log_dt.push((factor as f64 / config.steps as f64).ln());
        log_gap.push(med.max(1e-300).ln());
    }
    Ok(ols_slope(&log_dt, &log_gap).0)
}

// ---------------------------------------------------------------------------
// invariants suite
// ---------------------------------------------------------------------------

fn invariants_suite(config: &RunConfig, table: &MalliavinTable) -> Result<SuiteReport> {
    let mut checks = Vec::new();

    let max_gap = table.malliavin_gap.iter().cloned().fold(0.0f64, f64::max);
    checks.push(CheckResult::new(
        "dg-dot-u-equals-gamma",
        max_gap <= 1e-8,
        max_gap / 1e-8,
        format!("max |<Dg,u> - gamma| = {max_gap}"),
    ));

    let max_dgamma = table.dgamma_max.iter().cloned().fold(0.0f64, f64::max);
    checks.push(CheckResult::new(
        "dgamma-bounded-by-one",
        max_dgamma <= 1.0 + 1e-6,
        max_dgamma,
        format!("max |Dgamma| = {max_dgamma}"),
    ));

    let (div_mean, div_se) = mean_se(&table.div_u);
    checks.push(CheckResult::new(
        "divergence-zero-mean",
        div_mean.abs() <= 4.0 * div_se,
        div_mean / div_se.max(1e-300),
        format!("E[delta(u)]={div_mean} se={div_se}"),
    ));

    let zs = RunningStats::from_slice(&table.z_first);
    let z_var = zs.variance();
    let z_var_se = z_var * (2.0 / (table.len() as f64 - 1.0)).sqrt();
    checks.push(CheckResult::new(
        "z-variance-2-15",
        (z_var - 2.0 / 15.0).abs() <= 4.0 * z_var_se,
        (z_var - 2.0 / 15.0) / z_var_se.max(1e-300),
        format!("var={z_var} target={}", 2.0 / 15.0),
    ));

    let etas = [0.02, 0.04, 0.08, 0.1, 0.15, 0.2];
    let tail = gamma_tail(&table.gamma, &table.z_first, &etas)?;
    let target = config.dim as f64 - 0.5;
    checks.push(CheckResult::new(
        "gamma-tail-slope",
        tail.slope.is_nan() || tail.slope >= target,
        tail.slope,
        format!("slope={} (>= {target}), empty rungs {}", tail.slope, tail.empty_rungs),
    ));

    checks.push(CheckResult::new(
        "no-degenerate-paths",
        table.degenerate_count == 0,
        table.degenerate_count as f64,
        format!("{} degenerate of {}", table.degenerate_count, table.len()),
    ));

    let mut csv = String::from("method,n,N,M,seed,check,value,bound,pass\n");
    for c in &checks {
        writeln!(
            csv,
            "{},{},{},,{}",
            config.provenance("invariant"),
            c.name,
            c.z,
            c.passed
        )
        .unwrap();
    }
    let file = config.out.join("invariants.csv");
    write_file(&file, &csv)?;

    Ok(SuiteReport {
        suite: "invariants".into(),
        checks,
        files: vec![file],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> RunConfig {
        RunConfig {
            dim: 3,
            steps: 64,
            paths: 4000,
            seed: 9,
            r_points: 16,
            out: dir.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.dim = 0;
        assert!(c.validate().is_err());
        c = RunConfig {
            potential: "unknown".into(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c = RunConfig {
            eps_ladder: vec![0.1],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_loads_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(
            &file,
            "dim = 4\nsteps = 128\npaths = 500\nseed = 7\npotential = \"inverse-quadratic\"\npotential_a = 0.25\n",
        )
        .unwrap();
        let c = RunConfig::load(&file).unwrap();
        assert_eq!((c.dim, c.steps, c.paths, c.seed), (4, 128, 500, 7));
        assert_eq!(c.potential, "inverse-quadratic");
        // defaults fill the rest
        assert_eq!(c.r_points, 32);

        fs::write(&file, "dim = 3\nunknown_key = 1\n").unwrap();
        assert!(RunConfig::load(&file).is_err());
    }

    #[test]
    fn invariants_suite_runs_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config(dir.path());
        let reports = run(&c, Suite::Invariants).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].all_passed(), "{:?}", reports[0].checks);
        assert!(dir.path().join("invariants.csv").exists());
        assert!(dir.path().join("summary.csv").exists());
    }

    #[test]
    fn density_suite_writes_tables() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            paths: 20_000,
            ..tiny_config(dir.path())
        };
        let reports = run(&c, Suite::Density).unwrap();
        let csv = fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert!(csv.starts_with("method,n,N,M,seed,r,estimate,stderr,flags\n"));
        assert!(csv.contains("kde,3,64,20000,9,"));
        assert!(csv.contains("malliavin,"));
        assert!(csv.contains("laplace-inversion,"));
        // triangulation should pass at this scale
        let failed: Vec<_> = reports[0].checks.iter().filter(|c| !c.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn suite_parse() {
        assert_eq!("density".parse::<Suite>().unwrap(), Suite::Density);
        assert_eq!("all".parse::<Suite>().unwrap(), Suite::All);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn reruns_are_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c1 = tiny_config(d1.path());
        let c2 = tiny_config(d2.path());
        run(&c1, Suite::Invariants).unwrap();
        run(&c2, Suite::Invariants).unwrap();
        for name in ["invariants.csv", "summary.csv"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn surface_and_ibp_suites_run_small() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            paths: 30_000,
            eps_ladder: vec![0.2, 0.1, 0.05],
            ..tiny_config(dir.path())
        };
        let surface = run(&c, Suite::Surface).unwrap();
        assert!(surface[0].all_passed(), "{:?}", surface[0].checks);
        let ibp = run(&c, Suite::Ibp).unwrap();
        let rate = ibp[0]
            .checks
            .iter()
            .find(|ch| ch.name == "ibp-cell-pass-rate")
            .unwrap();
        assert!(rate.passed, "{:?}", ibp[0].checks);
    }

    #[test]
    fn sde_suite_runs_small() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            paths: 30_000,
            eps_ladder: vec![0.2, 0.1, 0.05],
            ..tiny_config(dir.path())
        };
        let reports = run(&c, Suite::Sde).unwrap();
        for check in &reports[0].checks {
            if ["rho1-mean-one", "rho1-forms-refinement-order", "zero-potential-collapse"]
                .contains(&check.name.as_str())
            {
                assert!(check.passed, "{check:?}");
            }
        }
        assert!(dir.path().join("sde.csv").exists());
    }
}
