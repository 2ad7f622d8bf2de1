//! Monte Carlo size and power of the specification tests.
//!
//! Two data-generating processes are simulated for a cross-section of `n`
//! independent units, each started from `N(0, σ)` and run past a burn-in:
//!
//! * AR(1) whose coefficient changes from `ρ` to `ρ + θ` in the final
//!   step, feeding the homogeneity test;
//! * AR(2) with coefficients `(ρ1, ρ2)`, feeding the first-order test.
//!
//! A cell of the resulting [`PowerTable`] is the share of runs whose ASL is
//! below the nominal level.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::EstimationConfig;
use crate::divergence::Metric;
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::hypothesis::{test_first_order_multi, test_homogeneity_multi, GeneratorKernel, TestConfig};
use crate::panel::TransitionSample;
use crate::rng::RngContract;

pub const DEFAULT_SIGMA: f64 = 0.15;
pub const DEFAULT_BURN_IN: usize = 100;
/// Share of failed runs above which a study cell is reported as an error.
pub const MAX_FAILURE_SHARE: f64 = 0.05;

/// How to read the `0.15` in the innovation law `N(0, 0.15)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// 0.15 is the standard deviation.
    #[default]
    StdDev,
    /// 0.15 is the variance.
    Variance,
}

impl NoiseScale {
    pub fn sd(&self, nominal: f64) -> f64 {
        match self {
            NoiseScale::StdDev => nominal,
            NoiseScale::Variance => nominal.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityDgp {
    pub rho: f64,
    pub theta: f64,
    pub sigma_eps: f64,
    pub n: usize,
    pub burn_in: usize,
}

impl HomogeneityDgp {
    pub fn new(rho: f64, theta: f64, n: usize) -> Self {
        HomogeneityDgp {
            rho,
            theta,
            sigma_eps: DEFAULT_SIGMA,
            n,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) || !((self.rho + self.theta).abs() < 1.0) {
            return Err(Error::Config(format!(
                "non-stationary parameters: rho = {}, rho + theta = {}",
                self.rho,
                self.rho + self.theta
            )));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::Config("innovation standard deviation must be positive".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("need at least 2 units".into()));
        }
        Ok(())
    }

    /// Stationary standard deviation under the post-break coefficient.
    pub fn stationary_sd(&self) -> f64 {
        let r = self.rho + self.theta;
        self.sigma_eps / (1.0 - r * r).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderDgp {
    pub rho1: f64,
    pub rho2: f64,
    pub sigma_eps: f64,
    pub n: usize,
    pub burn_in: usize,
}

impl OrderDgp {
    pub fn new(rho1: f64, rho2: f64, n: usize) -> Self {
        OrderDgp {
            rho1,
            rho2,
            sigma_eps: DEFAULT_SIGMA,
            n,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = (self.rho1, self.rho2);
        // AR(2) stationarity triangle.
        if !((a + b).abs() < 1.0 && b - a < 1.0 && b.abs() < 1.0) {
            return Err(Error::Config(format!("non-stationary AR(2) coefficients ({a}, {b})")));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::Config("innovation standard deviation must be positive".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("need at least 2 units".into()));
        }
        Ok(())
    }

    pub fn stationary_sd(&self) -> f64 {
        let (a, b) = (self.rho1, self.rho2);
        let var = self.sigma_eps.powi(2) * (1.0 - b) / ((1.0 + b) * ((1.0 - b).powi(2) - a * a));
        var.sqrt()
    }

    /// Scale of the estimation grid: the stationary sd of an AR(1) with
    /// coefficient `ρ1 + ρ2`.
    pub fn grid_scale(&self) -> f64 {
        let r = self.rho1 + self.rho2;
        self.sigma_eps / (1.0 - r * r).sqrt()
    }

    /// Lag-1 autocorrelation `ρ1 / (1 − ρ2)`.
    pub fn lag1_autocorrelation(&self) -> f64 {
        self.rho1 / (1.0 - self.rho2)
    }
}

/// Simulates the break process and returns the pre-break `(y_{T-2}, y_{T-1})`
/// and post-break `(y_{T-1}, y_T)` transition pairs.
pub fn simulate_homogeneity<R: Rng>(dgp: &HomogeneityDgp, rng: &mut R) -> Result<(TransitionSample, TransitionSample)> {
    dgp.validate()?;
    let eps = Normal::new(0.0, dgp.sigma_eps).map_err(|e| Error::Config(e.to_string()))?;
    let steps = dgp.burn_in + 2;
    let mut x = Vec::with_capacity(dgp.n);
    let mut y = Vec::with_capacity(dgp.n);
    let mut z = Vec::with_capacity(dgp.n);
    for _ in 0..dgp.n {
        let mut path = Vec::with_capacity(steps + 1);
        path.push(eps.sample(rng));
        for t in 1..=steps {
            let coef = if t == steps { dgp.rho + dgp.theta } else { dgp.rho };
            path.push(coef * path[t - 1] + eps.sample(rng));
        }
        x.push(path[steps - 2]);
        y.push(path[steps - 1]);
        z.push(path[steps]);
    }
    Ok((
        TransitionSample::from_pairs(1, x, y.clone())?,
        TransitionSample::from_pairs(1, y, z)?,
    ))
}

/// Simulates the AR(2) process and returns the last three values of each
/// path as triples.
pub fn simulate_order<R: Rng>(dgp: &OrderDgp, rng: &mut R) -> Result<TransitionSample> {
    dgp.validate()?;
    let eps = Normal::new(0.0, dgp.sigma_eps).map_err(|e| Error::Config(e.to_string()))?;
    let steps = dgp.burn_in + 2;
    let mut x = Vec::with_capacity(dgp.n);
    let mut y = Vec::with_capacity(dgp.n);
    let mut z = Vec::with_capacity(dgp.n);
    for _ in 0..dgp.n {
        // path[0] = y_{-1}, path[1] = y_0
        let mut path = Vec::with_capacity(steps + 2);
        path.push(eps.sample(rng));
        path.push(eps.sample(rng));
        for t in 2..steps + 2 {
            path.push(dgp.rho1 * path[t - 1] + dgp.rho2 * path[t - 2] + eps.sample(rng));
        }
        let last = path.len() - 1;
        x.push(path[last - 2]);
        y.push(path[last - 1]);
        z.push(path[last]);
    }
    TransitionSample::from_triples(1, x, y, z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Homogeneity,
    Order,
}

impl StudyKind {
    /// Names of the row and column parameters.
    pub fn parameter_names(&self) -> (&'static str, &'static str) {
        match self {
            StudyKind::Homogeneity => ("rho", "theta"),
            StudyKind::Order => ("rho1", "rho2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStudyConfig {
    pub kind: StudyKind,
    /// `ρ` (homogeneity) or `ρ1` (order) values.
    pub row_params: Vec<f64>,
    /// `θ` (homogeneity) or `ρ2` (order) values.
    pub col_params: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub runs: usize,
    pub bootstrap: usize,
    pub nominal: f64,
    pub seed: u64,
    pub sigma: f64,
    pub noise_scale: NoiseScale,
    pub burn_in: usize,
    pub grid_points: usize,
    /// Half-width of the estimation grid in stationary standard deviations.
    pub grid_sd_multiple: f64,
    /// 0 selects the standard estimator.
    pub alpha: f64,
    #[serde(default)]
    pub generator: GeneratorKernel,
}

impl PowerStudyConfig {
    fn base(kind: StudyKind, row_params: Vec<f64>, col_params: Vec<f64>) -> Self {
        PowerStudyConfig {
            kind,
            row_params,
            col_params,
            sample_sizes: vec![50, 100, 200, 500, 1000],
            metrics: Metric::ALL.to_vec(),
            runs: 1000,
            bootstrap: 1000,
            nominal: 0.05,
            seed: 20_240_101,
            sigma: DEFAULT_SIGMA,
            noise_scale: NoiseScale::StdDev,
            burn_in: DEFAULT_BURN_IN,
            grid_points: 40,
            grid_sd_multiple: 3.0,
            alpha: 0.0,
            generator: GeneratorKernel::Observed,
        }
    }

    /// Full homogeneity grid at 1000 runs × 1000 bootstraps.
    pub fn full_homogeneity() -> Self {
        Self::base(
            StudyKind::Homogeneity,
            vec![0.05, 0.2, 0.5, 0.75],
            vec![0.0, 0.05, 0.10, 0.15, 0.20],
        )
    }

    /// Full order grid at 1000 runs × 1000 bootstraps.
    pub fn full_order() -> Self {
        Self::base(StudyKind::Order, vec![0.2, 0.5, 0.75], vec![0.0, -0.1, -0.25])
    }

    /// Reduced homogeneity study: the published table's columns, 200 × 200.
    pub fn desk_homogeneity() -> Self {
        PowerStudyConfig {
            row_params: vec![0.05, 0.2],
            col_params: vec![0.0, 0.05, 0.15, 0.25, 0.5],
            sample_sizes: vec![100, 200],
            metrics: vec![Metric::L1, Metric::Hellinger],
            runs: 200,
            bootstrap: 200,
            ..Self::base(StudyKind::Homogeneity, vec![], vec![])
        }
    }

    pub fn desk_order() -> Self {
        PowerStudyConfig {
            sample_sizes: vec![100, 200],
            metrics: vec![Metric::L1, Metric::Hellinger],
            runs: 200,
            bootstrap: 200,
            ..Self::full_order()
        }
    }

    /// A single cell with one run, for checking an installation.
    pub fn smoke(kind: StudyKind) -> Self {
        let (r, c) = match kind {
            StudyKind::Homogeneity => (0.2, 0.0),
            StudyKind::Order => (0.2, 0.0),
        };
        PowerStudyConfig {
            row_params: vec![r],
            col_params: vec![c],
            sample_sizes: vec![50],
            metrics: vec![Metric::L1],
            runs: 1,
            bootstrap: 100,
            ..Self::base(kind, vec![], vec![])
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_params.is_empty() || self.col_params.is_empty() || self.sample_sizes.is_empty() || self.metrics.is_empty() {
            return Err(Error::Config("study grid has an empty axis".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be positive".into()));
        }
        if !(self.nominal > 0.0 && self.nominal < 1.0) {
            return Err(Error::Config(format!("nominal level must lie in (0, 1), got {}", self.nominal)));
        }
        if self.grid_points < 2 || !(self.grid_sd_multiple > 0.0) {
            return Err(Error::Config("invalid grid settings".into()));
        }
        for &r in &self.row_params {
            for &c in &self.col_params {
                for &n in &self.sample_sizes {
                    match self.kind {
                        StudyKind::Homogeneity => self.homogeneity_dgp(r, c, n).validate()?,
                        StudyKind::Order => self.order_dgp(r, c, n).validate()?,
                    }
                }
            }
        }
        Ok(())
    }

    pub fn homogeneity_dgp(&self, rho: f64, theta: f64, n: usize) -> HomogeneityDgp {
        HomogeneityDgp {
            rho,
            theta,
            sigma_eps: self.noise_scale.sd(self.sigma),
            n,
            burn_in: self.burn_in,
        }
    }

    pub fn order_dgp(&self, rho1: f64, rho2: f64, n: usize) -> OrderDgp {
        OrderDgp {
            rho1,
            rho2,
            sigma_eps: self.noise_scale.sd(self.sigma),
            n,
            burn_in: self.burn_in,
        }
    }

    fn test_config(&self, scale: f64) -> Result<TestConfig> {
        let grid = Grid1D::symmetric(self.grid_sd_multiple * scale, self.grid_points)?;
        let mut cfg = TestConfig::new(EstimationConfig::new(grid, self.alpha), self.bootstrap);
        cfg.generator = self.generator;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub n: usize,
    pub row_param: f64,
    pub col_param: f64,
    pub metric: Metric,
    pub rejections: usize,
    /// Runs that completed; the rate is `rejections / completed`.
    pub completed: usize,
    pub failures: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTable {
    pub config: PowerStudyConfig,
    pub cells: Vec<PowerCell>,
}

impl PowerTable {
    pub fn cell(&self, n: usize, row: f64, col: f64, metric: Metric) -> Option<&PowerCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.metric == metric && (c.row_param - row).abs() < 1e-12 && (c.col_param - col).abs() < 1e-12)
    }

    /// Wide CSV: one block of rows per sample size and metric, one row per
    /// row parameter, one column per column parameter.
    pub fn to_csv(&self) -> String {
        let cfg = &self.config;
        let (rname, cname) = cfg.kind.parameter_names();
        let mut out = format!("n,metric,{rname}/{cname}");
        for c in &cfg.col_params {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for &n in &cfg.sample_sizes {
            for &metric in &cfg.metrics {
                for &r in &cfg.row_params {
                    out.push_str(&format!("{n},{metric},{r}"));
                    for &c in &cfg.col_params {
                        match self.cell(n, r, c, metric) {
                            Some(cell) => out.push_str(&format!(",{}", cell.rate)),
                            None => out.push(','),
                        }
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Outcome of one Monte Carlo run: reject flags per metric.
fn run_once(cfg: &PowerStudyConfig, row: f64, col: f64, n: usize, rng: &RngContract) -> Result<Vec<bool>> {
    let mut data_rng = rng.stream(0);
    let results = match cfg.kind {
        StudyKind::Homogeneity => {
            let dgp = cfg.homogeneity_dgp(row, col, n);
            let (first, second) = simulate_homogeneity(&dgp, &mut data_rng)?;
            test_homogeneity_multi(&first, &second, &cfg.metrics, rng, &cfg.test_config(dgp.stationary_sd())?)?
        }
        StudyKind::Order => {
            let dgp = cfg.order_dgp(row, col, n);
            let triples = simulate_order(&dgp, &mut data_rng)?;
            test_first_order_multi(&triples, &cfg.metrics, rng, &cfg.test_config(dgp.grid_scale())?)?
        }
    };
    Ok(results.iter().map(|r| r.rejects(cfg.nominal)).collect())
}

/// Rejection rates for one parameter combination and sample size.
pub fn run_cell(cfg: &PowerStudyConfig, row: f64, col: f64, n: usize, rng: &RngContract) -> Result<Vec<PowerCell>> {
    let outcomes: Vec<Result<Vec<bool>>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| run_once(cfg, row, col, n, &rng.child(run as u64)))
        .collect();
    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures as f64 > MAX_FAILURE_SHARE * cfg.runs as f64 {
        let first = outcomes.into_iter().find_map(|o| o.err()).unwrap();
        return Err(Error::Numerical(format!(
            "{failures} of {} runs failed at ({row}, {col}, n = {n}); first error: {first}",
            cfg.runs
        )));
    }
    let ok: Vec<Vec<bool>> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let completed = ok.len();
    Ok(cfg
        .metrics
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let rejections = ok.iter().filter(|r| r[k]).count();
            PowerCell {
                n,
                row_param: row,
                col_param: col,
                metric,
                rejections,
                completed,
                failures,
                rate: if completed > 0 {
                    rejections as f64 / completed as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect())
}

/// Runs every cell of the study grid.
pub fn run_power_study(cfg: &PowerStudyConfig) -> Result<PowerTable> {
    cfg.validate()?;
    let master = RngContract::new(cfg.seed);
    let mut cells = Vec::new();
    let mut index = 0u64;
    for &n in &cfg.sample_sizes {
        for &r in &cfg.row_params {
            for &c in &cfg.col_params {
                cells.extend(run_cell(cfg, r, c, n, &master.child(index))?);
                index += 1;
            }
        }
    }
    Ok(PowerTable {
        config: cfg.clone(),
        cells,
    })
}
