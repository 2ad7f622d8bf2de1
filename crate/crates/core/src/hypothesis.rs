//! Bootstrap specification tests for estimated transition kernels.
//!
//! * **Homogeneity**: are the kernels of two transition periods equal? Under
//!   the null the two samples of pairs are exchangeable, so replications
//!   resample both from their union.
//! * **First order**: does the two-step kernel equal the one-step kernel
//!   composed with itself? Replications resample the one-step pairs and
//!   draw the third observation from the estimated one-step kernel, which
//!   enforces the Chapman-Kolmogorov identity by construction.
//!
//! Bandwidths are estimated once on the observed data and reused in every
//! replication. The achieved significance level is the share of replicated
//! divergences strictly above the observed one.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{estimate_conditional, sample_sd, ConditionalEstimate, DensityGrid1D, EstimationConfig, KernelGrid2D};
use crate::divergence::{divergences, Metric};
use crate::dynamics::{compose, MAX_REDRAWS};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::panel::TransitionSample;
use crate::rng::RngContract;

pub const DEFAULT_REPLICATIONS: usize = 1000;
pub const MIN_REPLICATIONS: usize = 100;
/// Proposals allowed per draw before rejection sampling gives up.
pub const MAX_PROPOSALS: usize = 10_000;
/// Envelope height relative to the row maximum.
pub const ENVELOPE_FACTOR: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Homogeneity,
    FirstOrder,
}

impl TestKind {
    pub fn name(&self) -> &'static str {
        match self {
            TestKind::Homogeneity => "homogeneity",
            TestKind::FirstOrder => "first_order",
        }
    }
}

/// Which marginal weights the homogeneity statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomogeneityWeight {
    /// Marginal of the first period's conditioning variable.
    #[default]
    FirstPeriod,
    /// Average of both periods' conditioning marginals.
    Pooled,
}

/// Which one-step kernel generates the third observation in the
/// first-order test's replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKernel {
    /// The kernel estimated on the observed pairs.
    #[default]
    Observed,
    /// The kernel re-estimated on each replication's resampled pairs. The
    /// replicated statistic is then less dispersed than the observed one and
    /// the test over-rejects.
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub estimation: EstimationConfig,
    pub replications: usize,
    #[serde(default)]
    pub weight: HomogeneityWeight,
    #[serde(default)]
    pub generator: GeneratorKernel,
}

impl TestConfig {
    pub fn new(estimation: EstimationConfig, replications: usize) -> Self {
        TestConfig {
            estimation,
            replications,
            weight: HomogeneityWeight::FirstPeriod,
            generator: GeneratorKernel::Observed,
        }
    }

    fn validate(&self) -> Result<()> {
        self.estimation.validate()?;
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::Config(format!(
                "need at least {MIN_REPLICATIONS} bootstrap replications, got {}",
                self.replications
            )));
        }
        Ok(())
    }

    /// Short hash of the estimation settings, recorded with every result.
    pub fn digest(&self, kind: TestKind) -> String {
        let json = serde_json::to_string(&(kind, self)).expect("config serializes");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_kind: TestKind,
    pub metric: Metric,
    pub observed: f64,
    pub bootstrap_draws: Vec<f64>,
    pub asl: f64,
    pub seed: u64,
    pub replications: usize,
    pub sample_sizes: Vec<usize>,
    pub config_digest: String,
    /// Free-form provenance, e.g. the compared periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl TestResult {
    pub fn rejects(&self, nominal: f64) -> bool {
        self.asl < nominal
    }

    pub fn csv_header() -> &'static str {
        "test,metric,periods,n,B,observed,asl"
    }

    /// One-line summary matching [`TestResult::csv_header`].
    pub fn csv_line(&self) -> String {
        let n = self.sample_sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
        format!(
            "{},{},{},{},{},{},{}",
            self.test_kind.name(),
            self.metric,
            self.label.as_deref().unwrap_or(""),
            n,
            self.replications,
            self.observed,
            self.asl
        )
    }

    /// JSON with or without the full vector of bootstrap draws.
    pub fn to_json(&self, include_draws: bool) -> Result<String> {
        if include_draws {
            return Ok(serde_json::to_string_pretty(self)?);
        }
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("bootstrap_draws");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// `Σ_b I(draw_b > observed) / B`.
pub fn achieved_significance(observed: f64, draws: &[f64]) -> f64 {
    if draws.is_empty() {
        return f64::NAN;
    }
    draws.iter().filter(|&&d| d > observed).count() as f64 / draws.len() as f64
}

fn resample_from_pool<R: Rng>(px: &[f64], py: &[f64], n: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    for _ in 0..MAX_REDRAWS {
        let mut bx = Vec::with_capacity(n);
        let mut by = Vec::with_capacity(n);
        for _ in 0..n {
            let i = rng.gen_range(0..px.len());
            bx.push(px[i]);
            by.push(py[i]);
        }
        if sample_sd(&bx) > 0.0 && sample_sd(&by) > 0.0 {
            return Ok((bx, by));
        }
    }
    Err(Error::Degenerate(format!(
        "bootstrap resample had zero variance {MAX_REDRAWS} times in a row"
    )))
}

fn homogeneity_weight(kind: HomogeneityWeight, a: &ConditionalEstimate, b: &ConditionalEstimate) -> DensityGrid1D {
    match kind {
        HomogeneityWeight::FirstPeriod => a.marginal.clone(),
        HomogeneityWeight::Pooled => DensityGrid1D {
            grid: a.marginal.grid,
            values: a
                .marginal
                .values
                .iter()
                .zip(&b.marginal.values)
                .map(|(u, v)| 0.5 * (u + v))
                .collect(),
        },
    }
}

fn collect_results(
    kind: TestKind,
    metrics: &[Metric],
    observed: &[f64],
    draws: Vec<Vec<f64>>,
    seed: u64,
    cfg: &TestConfig,
    sample_sizes: Vec<usize>,
) -> Vec<TestResult> {
    let digest = cfg.digest(kind);
    metrics
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let column: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            TestResult {
                test_kind: kind,
                metric,
                observed: observed[k],
                asl: achieved_significance(observed[k], &column),
                bootstrap_draws: column,
                seed,
                replications: cfg.replications,
                sample_sizes: sample_sizes.clone(),
                config_digest: digest.clone(),
                label: None,
            }
        })
        .collect()
}

fn require_arity(s: &TransitionSample, arity: usize, what: &str) -> Result<()> {
    if s.arity() != arity {
        return Err(Error::Config(format!("{what} must have arity {arity}, got {}", s.arity())));
    }
    Ok(())
}

/// Time-homogeneity test for a single metric.
pub fn test_homogeneity(
    first: &TransitionSample,
    second: &TransitionSample,
    metric: Metric,
    rng: &RngContract,
    cfg: &TestConfig,
) -> Result<TestResult> {
    Ok(test_homogeneity_multi(first, second, &[metric], rng, cfg)?.remove(0))
}

/// Time-homogeneity test for several metrics; all metrics are evaluated on
/// the same bootstrap resamples.
pub fn test_homogeneity_multi(
    first: &TransitionSample,
    second: &TransitionSample,
    metrics: &[Metric],
    rng: &RngContract,
    cfg: &TestConfig,
) -> Result<Vec<TestResult>> {
    cfg.validate()?;
    require_arity(first, 2, "first sample")?;
    require_arity(second, 2, "second sample")?;
    if metrics.is_empty() {
        return Err(Error::Config("no metric requested".into()));
    }
    let est = &cfg.estimation;
    let floor = est.floor;
    let obs1 = estimate_conditional(first.x(), first.y(), est, None)?;
    let obs2 = estimate_conditional(second.x(), second.y(), est, None)?;
    let observed = divergences(
        &obs1.conditional,
        &obs2.conditional,
        &homogeneity_weight(cfg.weight, &obs1, &obs2),
        floor,
        metrics,
    )?;

    let px: Vec<f64> = first.x().iter().chain(second.x()).copied().collect();
    let py: Vec<f64> = first.y().iter().chain(second.y()).copied().collect();
    let (n1, n2) = (first.len(), second.len());

    let draws = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.stream(b as u64 + 1);
            let (x1, y1) = resample_from_pool(&px, &py, n1, &mut r)?;
            let (x2, y2) = resample_from_pool(&px, &py, n2, &mut r)?;
            let e1 = estimate_conditional(&x1, &y1, est, Some(&obs1.bandwidth))?;
            let e2 = estimate_conditional(&x2, &y2, est, Some(&obs2.bandwidth))?;
            divergences(
                &e1.conditional,
                &e2.conditional,
                &homogeneity_weight(cfg.weight, &e1, &e2),
                floor,
                metrics,
            )
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(collect_results(
        TestKind::Homogeneity,
        metrics,
        &observed,
        draws,
        rng.master_seed,
        cfg,
        vec![n1, n2],
    ))
}

/// Draws one value from the density given by `row` on `grid` using a
/// uniform proposal over the grid range and linear interpolation between
/// grid points.
pub fn sample_row<R: Rng>(grid: &Grid1D, row: &[f64], row_index: usize, rng: &mut R) -> Result<f64> {
    let top = row.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::RejectionSampling {
            row: row_index,
            proposals: 0,
        });
    }
    let envelope = ENVELOPE_FACTOR * top;
    for _ in 0..MAX_PROPOSALS {
        let z = rng.gen_range(grid.lo()..=grid.hi());
        let u: f64 = rng.gen();
        if u * envelope <= grid.interpolate(row, z) {
            return Ok(z);
        }
    }
    Err(Error::RejectionSampling {
        row: row_index,
        proposals: MAX_PROPOSALS,
    })
}

/// Nearest unflagged row to `y`, searching outward from the nearest grid
/// point.
fn nearest_supported_row(kernel: &KernelGrid2D, y: f64) -> Result<usize> {
    let start = kernel.grid_x().nearest_index(y);
    let m = kernel.rows();
    for d in 0..m {
        for i in [start.checked_sub(d), Some(start + d)].into_iter().flatten() {
            if i < m && !kernel.is_flagged(i) {
                return Ok(i);
            }
        }
    }
    Err(Error::Numerical("every kernel row is flagged".into()))
}

/// Draws `z_i ~ kernel(· | y_i)` for every conditioning value.
pub fn generate_next<R: Rng>(kernel: &KernelGrid2D, ys: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    ys.iter()
        .map(|&y| {
            let i = nearest_supported_row(kernel, y)?;
            sample_row(kernel.grid_y(), kernel.row(i), i, rng)
        })
        .collect()
}

/// First-order (Chapman-Kolmogorov) test for a single metric.
pub fn test_first_order(triples: &TransitionSample, metric: Metric, rng: &RngContract, cfg: &TestConfig) -> Result<TestResult> {
    Ok(test_first_order_multi(triples, &[metric], rng, cfg)?.remove(0))
}

/// First-order test for several metrics sharing the same replications.
pub fn test_first_order_multi(
    triples: &TransitionSample,
    metrics: &[Metric],
    rng: &RngContract,
    cfg: &TestConfig,
) -> Result<Vec<TestResult>> {
    cfg.validate()?;
    require_arity(triples, 3, "sample")?;
    if metrics.is_empty() {
        return Err(Error::Config("no metric requested".into()));
    }
    let est = &cfg.estimation;
    let floor = est.floor;
    let (x, y, z) = (triples.x(), triples.y(), triples.z().unwrap());
    let one = estimate_conditional(x, y, est, None)?;
    let two = estimate_conditional(x, z, est, None)?;
    let composed = compose(&one.conditional, &one.conditional)?;
    let observed = divergences(&two.conditional, &composed, &one.marginal, floor, metrics)?;

    let draws = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.stream(b as u64 + 1);
            let mut attempts = 0;
            loop {
                attempts += 1;
                let (bx, by) = resample_from_pool(x, y, x.len(), &mut r)?;
                let one_b = estimate_conditional(&bx, &by, est, Some(&one.bandwidth))?;
                let generator = match cfg.generator {
                    GeneratorKernel::Observed => &one.conditional,
                    GeneratorKernel::Replicate => &one_b.conditional,
                };
                let bz = generate_next(generator, &by, &mut r)?;
                if !(sample_sd(&bz) > 0.0) {
                    if attempts >= MAX_REDRAWS {
                        return Err(Error::Degenerate("generated third observations have zero variance".into()));
                    }
                    continue;
                }
                let two_b = estimate_conditional(&bx, &bz, est, Some(&two.bandwidth))?;
                let composed_b = compose(&one_b.conditional, &one_b.conditional)?;
                return divergences(&two_b.conditional, &composed_b, &one_b.marginal, floor, metrics);
            }
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(collect_results(
        TestKind::FirstOrder,
        metrics,
        &observed,
        draws,
        rng.master_seed,
        cfg,
        vec![triples.len()],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ar1_pairs(n: usize, rho: f64, seed: u64) -> TransitionSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 0.15 / (1.0 - rho * rho).sqrt();
        let start = Normal::new(0.0, sd).unwrap();
        let eps = Normal::new(0.0, 0.15).unwrap();
        let x: Vec<f64> = (0..n).map(|_| start.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|&v| rho * v + eps.sample(&mut rng)).collect();
        TransitionSample::from_pairs(1, x, y).unwrap()
    }

    fn mc_config(points: usize, b: usize) -> TestConfig {
        let sd = 0.15 / 0.75f64.sqrt();
        TestConfig::new(EstimationConfig::new(Grid1D::symmetric(3.0 * sd, points).unwrap(), 0.0), b)
    }

    #[test]
    fn asl_uses_strict_inequality() {
        assert_eq!(achieved_significance(1.0, &[0.5, 1.0, 1.5, 2.0]), 0.5);
        assert_eq!(achieved_significance(0.0, &[0.0, 0.0]), 0.0);
        assert_eq!(achieved_significance(-1.0, &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn identical_samples_never_reject() {
        let s = ar1_pairs(60, 0.5, 1);
        let r = test_homogeneity(&s, &s, Metric::L1, &RngContract::new(5), &mc_config(25, 100)).unwrap();
        assert_eq!(r.observed, 0.0);
        assert_eq!(r.asl, 1.0);
        assert_eq!(r.bootstrap_draws.len(), 100);
        assert!(r.bootstrap_draws.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn homogeneity_is_deterministic_and_detects_large_breaks() {
        let cfg = mc_config(25, 100);
        let a = ar1_pairs(300, 0.0, 2);
        let b = ar1_pairs(300, 0.9, 3);
        let rng = RngContract::new(11);
        let r1 = test_homogeneity_multi(&a, &b, &Metric::ALL, &rng, &cfg).unwrap();
        let r2 = test_homogeneity_multi(&a, &b, &Metric::ALL, &rng, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert!(r1[0].asl < 0.05, "asl {}", r1[0].asl);
        assert!(r1.iter().all(|r| r.bootstrap_draws.iter().all(|&d| d >= 0.0)));
        // Single-metric entry point agrees with the multi-metric one.
        let single = test_homogeneity(&a, &b, Metric::Hellinger, &rng, &cfg).unwrap();
        assert_eq!(single.bootstrap_draws, r1[3].bootstrap_draws);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = ar1_pairs(50, 0.5, 4);
        let rng = RngContract::new(1);
        assert!(test_homogeneity(&s, &s, Metric::L1, &rng, &mc_config(20, 50)).is_err());
        assert!(test_first_order(&s, Metric::L1, &rng, &mc_config(20, 100)).is_err());
        let t = TransitionSample::from_triples(1, s.x().to_vec(), s.y().to_vec(), s.x().to_vec()).unwrap();
        assert!(test_homogeneity(&t, &s, Metric::L1, &rng, &mc_config(20, 100)).is_err());
        assert!(test_homogeneity_multi(&s, &s, &[], &rng, &mc_config(20, 100)).is_err());
    }

    #[test]
    fn rejection_sampler_follows_the_row() {
        let g = Grid1D::new(0.0, 1.0, 51).unwrap();
        let row: Vec<f64> = g.points().iter().map(|&z| 2.0 * z).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..20_000).map(|_| sample_row(&g, &row, 0, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01, "{mean}");
        assert!(matches!(
            sample_row(&g, &[0.0; 51], 7, &mut rng),
            Err(Error::RejectionSampling { row: 7, .. })
        ));
    }

    #[test]
    fn flagged_rows_fall_back_to_nearest_supported_row() {
        let g = Grid1D::new(0.0, 1.0, 11).unwrap();
        let k = KernelGrid2D::conditional_from_fn(g, g, |x, y| {
            if x < 0.35 {
                0.0
            } else if y > 0.5 {
                1.0
            } else {
                0.0
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = generate_next(&k, &[0.0, 0.1, 0.9], &mut rng).unwrap();
        assert!(z.iter().all(|&v| v >= 0.45));
    }

    #[test]
    fn first_order_runs_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sd = 0.15 / 0.75f64.sqrt();
        let start = Normal::new(0.0, sd).unwrap();
        let eps = Normal::new(0.0, 0.15).unwrap();
        let x: Vec<f64> = (0..150).map(|_| start.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.5 * v + eps.sample(&mut rng)).collect();
        let z: Vec<f64> = y.iter().map(|&v| 0.5 * v + eps.sample(&mut rng)).collect();
        let t = TransitionSample::from_triples(1, x, y, z).unwrap();
        let cfg = mc_config(25, 100);
        let a = test_first_order_multi(&t, &[Metric::L1, Metric::Hellinger], &RngContract::new(3), &cfg).unwrap();
        let b = test_first_order_multi(&t, &[Metric::L1, Metric::Hellinger], &RngContract::new(3), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a[0].observed > 0.0);
        assert!((0.0..=1.0).contains(&a[0].asl));
        assert_eq!(a[0].test_kind, TestKind::FirstOrder);
        assert_eq!(a[0].sample_sizes, vec![150]);
    }

    #[test]
    fn result_serialization() {
        let s = ar1_pairs(40, 0.5, 8);
        let mut r = test_homogeneity(&s, &s, Metric::L2, &RngContract::new(2), &mc_config(15, 100)).unwrap();
        r.label = Some("1970-1975 vs 1990-1995".into());
        let full = r.to_json(true).unwrap();
        let back: TestResult = serde_json::from_str(&full).unwrap();
        assert_eq!(back, r);
        assert!(!r.to_json(false).unwrap().contains("bootstrap_draws"));
        assert_eq!(r.csv_line().split(',').count(), TestResult::csv_header().split(',').count());
        assert!(r.csv_line().starts_with("homogeneity,L2,1970-1975 vs 1990-1995,40+40,100,0,"));
    }

    #[test]
    fn digest_tracks_settings() {
        let a = mc_config(20, 100);
        let mut b = a;
        b.estimation.alpha = 0.5;
        assert_ne!(a.digest(TestKind::Homogeneity), b.digest(TestKind::Homogeneity));
        assert_ne!(a.digest(TestKind::Homogeneity), a.digest(TestKind::FirstOrder));
        assert_eq!(a.digest(TestKind::Homogeneity).len(), 16);
    }
}
