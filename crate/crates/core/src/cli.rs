//! Batch command-line front end.
//!
//! Every command starts from a [`RunConfig`] (read from a TOML file with
//! `--config`, or the defaults) and applies flag overrides on top. Outputs
//! are written to the output directory together with:
//!
//! * `config.resolved.toml`: the fully resolved configuration. Passing it
//!   back with `--config` reproduces the outputs byte for byte;
//! * `VERSION`: crate version and config format version;
//! * `SHA256SUMS`: checksums of every other file in the directory.
//!
//! Exit codes: 0 success, 1 I/O, 2 configuration, 3 data, 4 numerical
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{
    adaptive_density_1d, estimate_conditional, DensityGrid1D, EstimationConfig, KernelGrid2D, DEFAULT_ALPHA, DEFAULT_FLOOR,
};
use crate::divergence::{divergences, Metric};
use crate::dynamics::{compose, ergodic, ergodic_bands, BandConfig, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, ErrorCategory, Result};
use crate::grid::Grid1D;
use crate::hypothesis::{
    test_first_order_multi, test_homogeneity_multi, GeneratorKernel, HomogeneityWeight, TestConfig, TestResult, DEFAULT_REPLICATIONS,
};
use crate::montecarlo::{run_power_study, simulate_homogeneity, HomogeneityDgp, NoiseScale, PowerStudyConfig, StudyKind};
use crate::panel::{
    load_panel, make_transitions, pool_overlapping, quantile_boundaries, split_by_initial_income, IncomeGroup, PanelDataset,
    TransitionSample,
};
use crate::rng::RngContract;

pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST: &str = "SHA256SUMS";
pub const VERSION_FILE: &str = "VERSION";

pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Config => EXIT_CONFIG,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Numerical => EXIT_NUMERICAL,
        ErrorCategory::Io => EXIT_IO,
    }
}

// ---------------------------------------------------------------------------
// Declarative configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    /// Worker threads, 0 for one per core. Results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub estimation: EstimationSection,
    pub transitions: TransitionSection,
    pub test: TestSection,
    pub describe: DescribeSection,
    pub ergodic: ErgodicSection,
    pub montecarlo: MonteCarloSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: FORMAT_VERSION,
            command: String::new(),
            seed: 1,
            workers: 0,
            out: None,
            data: DataSection::default(),
            estimation: EstimationSection::default(),
            transitions: TransitionSection::default(),
            test: TestSection::default(),
            describe: DescribeSection::default(),
            ergodic: ErgodicSection::default(),
            montecarlo: MonteCarloSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    /// Checked against the input file when present.
    pub input_sha256: Option<String>,
    pub id_column: String,
    pub year_column: String,
    pub value_column: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            input: None,
            input_sha256: None,
            id_column: "country".into(),
            year_column: "year".into(),
            value_column: "value".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    /// `lo:hi:m`
    pub grid: String,
    pub alpha: f64,
    pub floor: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            grid: "-1:4:100".into(),
            alpha: DEFAULT_ALPHA,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl EstimationSection {
    pub fn to_config(&self) -> Result<EstimationConfig> {
        let cfg = EstimationConfig {
            grid: self.grid.parse()?,
            alpha: self.alpha,
            floor: self.floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionSection {
    pub tau: u32,
    /// `start-end` labels, or empty for consecutive periods covering the panel.
    pub periods: Vec<String>,
    /// With automatic periods, add a final period ending in the last panel
    /// year that overlaps its predecessor.
    pub overlap_last: bool,
    /// Pool overlapping transitions inside periods longer than one step.
    pub pool: bool,
    pub subsample: Option<IncomeGroup>,
    /// Year whose income ranking defines the sub-samples; defaults to the
    /// first panel year.
    pub base_year: Option<i32>,
}

impl Default for TransitionSection {
    fn default() -> Self {
        TransitionSection {
            tau: 5,
            periods: Vec::new(),
            overlap_last: false,
            pool: false,
            subsample: None,
            base_year: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub metrics: Vec<Metric>,
    pub bootstrap: usize,
    pub weight: HomogeneityWeight,
    pub generator: GeneratorKernel,
    pub include_draws: bool,
}

impl Default for TestSection {
    fn default() -> Self {
        TestSection {
            metrics: vec![Metric::L1, Metric::Hellinger],
            bootstrap: DEFAULT_REPLICATIONS,
            weight: HomogeneityWeight::FirstPeriod,
            generator: GeneratorKernel::Observed,
            include_draws: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescribeSection {
    pub years: Vec<i32>,
    pub probabilities: Vec<f64>,
}

impl Default for DescribeSection {
    fn default() -> Self {
        DescribeSection {
            years: Vec::new(),
            probabilities: vec![0.2, 0.4, 0.6, 0.8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicSection {
    /// Replications for the bands, 0 for a point estimate only.
    pub bootstrap: usize,
    pub coverage: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        ErgodicSection {
            bootstrap: 1000,
            coverage: 0.9,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Smoke,
    #[default]
    Desk,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smoke" => Ok(Preset::Smoke),
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected smoke, desk or full)"))),
        }
    }
}

/// A Monte Carlo study: a preset plus optional overrides. The resolved form
/// has every override filled in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub preset: Preset,
    pub study: Option<StudyKind>,
    pub runs: Option<usize>,
    pub bootstrap: Option<usize>,
    pub sample_sizes: Option<Vec<usize>>,
    pub metrics: Option<Vec<Metric>>,
    /// `ρ` or `ρ1` values.
    pub rows: Option<Vec<f64>>,
    /// `θ` or `ρ2` values.
    pub cols: Option<Vec<f64>>,
    pub noise_scale: Option<NoiseScale>,
    pub sigma: Option<f64>,
    pub nominal: Option<f64>,
    pub burn_in: Option<usize>,
    pub grid_points: Option<usize>,
    pub grid_sd_multiple: Option<f64>,
    pub alpha: Option<f64>,
    pub generator: Option<GeneratorKernel>,
}

impl MonteCarloSection {
    pub fn to_study(&self, seed: u64) -> PowerStudyConfig {
        let kind = self.study.unwrap_or(StudyKind::Homogeneity);
        let mut cfg = match (self.preset, kind) {
            (Preset::Smoke, k) => PowerStudyConfig::smoke(k),
            (Preset::Desk, StudyKind::Homogeneity) => PowerStudyConfig::desk_homogeneity(),
            (Preset::Desk, StudyKind::Order) => PowerStudyConfig::desk_order(),
            (Preset::Full, StudyKind::Homogeneity) => PowerStudyConfig::full_homogeneity(),
            (Preset::Full, StudyKind::Order) => PowerStudyConfig::full_order(),
        };
        cfg.seed = seed;
        macro_rules! set {
            ($field:ident, $target:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$target = v.clone();
                }
            };
        }
        set!(runs, runs);
        set!(bootstrap, bootstrap);
        set!(sample_sizes, sample_sizes);
        set!(metrics, metrics);
        set!(rows, row_params);
        set!(cols, col_params);
        set!(noise_scale, noise_scale);
        set!(sigma, sigma);
        set!(nominal, nominal);
        set!(burn_in, burn_in);
        set!(grid_points, grid_points);
        set!(grid_sd_multiple, grid_sd_multiple);
        set!(alpha, alpha);
        set!(generator, generator);
        cfg
    }

    fn resolved(&self, study: &PowerStudyConfig) -> Self {
        MonteCarloSection {
            preset: self.preset,
            study: Some(study.kind),
            runs: Some(study.runs),
            bootstrap: Some(study.bootstrap),
            sample_sizes: Some(study.sample_sizes.clone()),
            metrics: Some(study.metrics.clone()),
            rows: Some(study.row_params.clone()),
            cols: Some(study.col_params.clone()),
            noise_scale: Some(study.noise_scale),
            sigma: Some(study.sigma),
            nominal: Some(study.nominal),
            burn_in: Some(study.burn_in),
            grid_points: Some(study.grid_points),
            grid_sd_multiple: Some(study.grid_sd_multiple),
            alpha: Some(study.alpha),
            generator: Some(study.generator),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Flags

#[derive(Debug, Parser)]
#[command(
    name = "distdyn",
    version,
    about = "Distribution dynamics: transition kernels, ergodic densities and specification tests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-sectional densities and quantile boundaries.
    Describe(DescribeArgs),
    /// Time-homogeneity tests between transition periods.
    TestHomogeneity(TestArgs),
    /// First-order (Chapman-Kolmogorov) tests within periods.
    TestOrder(TestArgs),
    /// Ergodic densities with bootstrap bands.
    Ergodic(ErgodicArgs),
    /// Size and power study on simulated data.
    Montecarlo(MonteCarloArgs),
    /// Quick numerical checks of the installation.
    Selftest(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Describe(_) => "describe",
            Command::TestHomogeneity(_) => "test-homogeneity",
            Command::TestOrder(_) => "test-order",
            Command::Ergodic(_) => "ergodic",
            Command::Montecarlo(_) => "montecarlo",
            Command::Selftest(_) => "selftest",
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format panel (CSV, TSV or semicolon separated).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub id_column: Option<String>,
    #[arg(long)]
    pub year_column: Option<String>,
    #[arg(long)]
    pub value_column: Option<String>,
    /// Evaluation grid as lo:hi:m.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Sensitivity of the adaptive bandwidth (0 = fixed bandwidth).
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TransitionArgs {
    /// Transition length in years.
    #[arg(long)]
    pub tau: Option<u32>,
    /// Comma-separated start-end periods, or "all".
    #[arg(long, value_delimiter = ',')]
    pub periods: Vec<String>,
    /// With --periods all, add a last period ending in the final panel year.
    #[arg(long)]
    pub overlap_last: bool,
    /// Pool overlapping transitions inside long periods.
    #[arg(long)]
    pub pool: bool,
    /// Restrict to an income tercile: low, medium or high.
    #[arg(long)]
    pub subsample: Option<IncomeGroup>,
    /// Year whose ranking defines the terciles.
    #[arg(long)]
    pub base_year: Option<i32>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Years to estimate cross-sectional densities for.
    #[arg(long, value_delimiter = ',')]
    pub years: Vec<i32>,
    /// Quantile probabilities.
    #[arg(long, value_delimiter = ',')]
    pub probs: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub transitions: TransitionArgs,
    /// Divergence metric (repeatable): L1, L2, Linf, H.
    #[arg(long = "metric")]
    pub metrics: Vec<Metric>,
    /// Bootstrap replications.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Weight the homogeneity statistic by the pooled marginal.
    #[arg(long)]
    pub pooled_weight: bool,
    /// Kernel generating the third observation in first-order replications:
    /// observed or replicate.
    #[arg(long, value_parser = parse_generator)]
    pub generator: Option<GeneratorKernel>,
    /// Keep every bootstrap draw in the JSON results.
    #[arg(long)]
    pub include_draws: bool,
}

#[derive(Debug, Args)]
pub struct ErgodicArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub transitions: TransitionArgs,
    /// Band replications, 0 for a point estimate only.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub coverage: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// smoke, desk or full.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// homogeneity or order.
    #[arg(long, value_parser = parse_study)]
    pub study: Option<StudyKind>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Sample sizes (repeatable or comma separated).
    #[arg(long = "n", value_delimiter = ',')]
    pub sample_sizes: Vec<usize>,
    #[arg(long = "metric")]
    pub metrics: Vec<Metric>,
    /// Row parameter values (rho or rho1).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rows: Vec<f64>,
    /// Column parameter values (theta or rho2).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub cols: Vec<f64>,
    /// Read the innovation scale as a standard deviation (sd) or variance.
    #[arg(long, value_parser = parse_noise_scale)]
    pub noise_scale: Option<NoiseScale>,
    #[arg(long, value_parser = parse_generator)]
    pub generator: Option<GeneratorKernel>,
}

fn parse_study(s: &str) -> std::result::Result<StudyKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "homogeneity" => Ok(StudyKind::Homogeneity),
        "order" | "first-order" | "first_order" => Ok(StudyKind::Order),
        _ => Err(format!("unknown study {s:?} (expected homogeneity or order)")),
    }
}

fn parse_noise_scale(s: &str) -> std::result::Result<NoiseScale, String> {
    match s.to_ascii_lowercase().as_str() {
        "sd" | "std" | "stddev" => Ok(NoiseScale::StdDev),
        "variance" | "var" => Ok(NoiseScale::Variance),
        _ => Err(format!("unknown noise scale {s:?} (expected sd or variance)")),
    }
}

fn parse_generator(s: &str) -> std::result::Result<GeneratorKernel, String> {
    match s.to_ascii_lowercase().as_str() {
        "observed" => Ok(GeneratorKernel::Observed),
        "replicate" => Ok(GeneratorKernel::Replicate),
        _ => Err(format!("unknown generator {s:?} (expected observed or replicate)")),
    }
}

fn load_config(common: &CommonArgs, command: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_toml(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if cfg.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported config format version {} (expected {FORMAT_VERSION})",
            cfg.format_version
        )));
    }
    if !cfg.command.is_empty() && cfg.command != command {
        return Err(Error::Config(format!("config was written for `{}`, not `{command}`", cfg.command)));
    }
    cfg.command = command.to_string();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if a.input.is_some() {
        cfg.data.input = a.input.clone();
        cfg.data.input_sha256 = None;
    }
    let d = &mut cfg.data;
    for (flag, field) in [
        (&a.id_column, &mut d.id_column),
        (&a.year_column, &mut d.year_column),
        (&a.value_column, &mut d.value_column),
    ] {
        if let Some(v) = flag {
            *field = v.clone();
        }
    }
    if let Some(g) = &a.grid {
        cfg.estimation.grid = g.clone();
    }
    if let Some(alpha) = a.alpha {
        cfg.estimation.alpha = alpha;
    }
}

fn apply_transitions(cfg: &mut RunConfig, a: &TransitionArgs) {
    let t = &mut cfg.transitions;
    if let Some(tau) = a.tau {
        t.tau = tau;
    }
    if !a.periods.is_empty() {
        t.periods = if a.periods.len() == 1 && a.periods[0].eq_ignore_ascii_case("all") {
            Vec::new()
        } else {
            a.periods.clone()
        };
    }
    t.overlap_last |= a.overlap_last;
    t.pool |= a.pool;
    if a.subsample.is_some() {
        t.subsample = a.subsample;
    }
    if a.base_year.is_some() {
        t.base_year = a.base_year;
    }
}

/// Merges config file and flags into a resolved [`RunConfig`].
pub fn resolve(command: &Command) -> Result<RunConfig> {
    let name = command.name();
    let mut cfg = match command {
        Command::Describe(a) => {
            let mut cfg = load_config(&a.common, name)?;
            apply_data(&mut cfg, &a.data);
            if !a.years.is_empty() {
                cfg.describe.years = a.years.clone();
            }
            if !a.probs.is_empty() {
                cfg.describe.probabilities = a.probs.clone();
            }
            cfg
        }
        Command::TestHomogeneity(a) | Command::TestOrder(a) => {
            let mut cfg = load_config(&a.common, name)?;
            apply_data(&mut cfg, &a.data);
            apply_transitions(&mut cfg, &a.transitions);
            if !a.metrics.is_empty() {
                cfg.test.metrics = a.metrics.clone();
            }
            if let Some(b) = a.bootstrap {
                cfg.test.bootstrap = b;
            }
            if a.pooled_weight {
                cfg.test.weight = HomogeneityWeight::Pooled;
            }
            if let Some(g) = a.generator {
                cfg.test.generator = g;
            }
            cfg.test.include_draws |= a.include_draws;
            cfg
        }
        Command::Ergodic(a) => {
            let mut cfg = load_config(&a.common, name)?;
            apply_data(&mut cfg, &a.data);
            apply_transitions(&mut cfg, &a.transitions);
            if let Some(b) = a.bootstrap {
                cfg.ergodic.bootstrap = b;
            }
            if let Some(c) = a.coverage {
                cfg.ergodic.coverage = c;
            }
            cfg
        }
        Command::Montecarlo(a) => {
            let mut cfg = load_config(&a.common, name)?;
            let mc = &mut cfg.montecarlo;
            if let Some(p) = a.preset {
                mc.preset = p;
            }
            if a.study.is_some() {
                mc.study = a.study;
            }
            if a.runs.is_some() {
                mc.runs = a.runs;
            }
            if a.bootstrap.is_some() {
                mc.bootstrap = a.bootstrap;
            }
            if !a.sample_sizes.is_empty() {
                mc.sample_sizes = Some(a.sample_sizes.clone());
            }
            if !a.metrics.is_empty() {
                mc.metrics = Some(a.metrics.clone());
            }
            if !a.rows.is_empty() {
                mc.rows = Some(a.rows.clone());
            }
            if !a.cols.is_empty() {
                mc.cols = Some(a.cols.clone());
            }
            if a.noise_scale.is_some() {
                mc.noise_scale = a.noise_scale;
            }
            if a.generator.is_some() {
                mc.generator = a.generator;
            }
            cfg
        }
        Command::Selftest(a) => load_config(a, name)?,
    };
    if let Some(input) = &cfg.data.input {
        // Absolute paths keep the resolved config usable from any directory.
        cfg.data.input = Some(fs::canonicalize(input).map_err(|e| Error::Data(format!("cannot open {}: {e}", input.display())))?);
    }
    if cfg.command == "montecarlo" {
        let study = cfg.montecarlo.to_study(cfg.seed);
        cfg.montecarlo = cfg.montecarlo.resolved(&study);
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Commands

/// Files produced by a command, keyed by file name.
pub type Outputs = BTreeMap<String, Vec<u8>>;

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_input(cfg: &mut RunConfig) -> Result<PanelDataset> {
    let path = cfg
        .data
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input file given (--input)".into()))?;
    let bytes = fs::read(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let digest = sha256_hex(&bytes);
    if let Some(expected) = &cfg.data.input_sha256 {
        if *expected != digest {
            return Err(Error::Data(format!(
                "{} does not match the checksum recorded in the config",
                path.display()
            )));
        }
    }
    cfg.data.input_sha256 = Some(digest);
    let d = &cfg.data;
    load_panel(bytes.as_slice(), &d.value_column, &d.id_column, &d.year_column)
}

fn parse_period(s: &str) -> Result<(i32, i32)> {
    let bad = || Error::Config(format!("period {s:?} is not of the form start-end"));
    let (a, b) = s.trim().split_once('-').ok_or_else(bad)?;
    let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if b <= a {
        return Err(bad());
    }
    Ok((a, b))
}

/// Periods of the command; automatic periods are consecutive windows of
/// `span` years starting at the first panel year.
fn resolve_periods(panel: &PanelDataset, t: &TransitionSection, span: i32) -> Result<Vec<(i32, i32)>> {
    if !t.periods.is_empty() {
        return t.periods.iter().map(|p| parse_period(p)).collect();
    }
    let (first, last) = (panel.first_year(), panel.last_year());
    let mut out = Vec::new();
    let mut start = first;
    while start + span <= last {
        out.push((start, start + span));
        start += span;
    }
    if t.overlap_last && out.last().is_some_and(|&(_, end)| end < last) {
        out.push((last - span, last));
    }
    if out.is_empty() {
        return Err(Error::Horizon { last_start: last - span });
    }
    Ok(out)
}

fn period_label((a, b): (i32, i32)) -> String {
    format!("{a}-{b}")
}

fn sample_for(
    panel: &PanelDataset,
    (a, b): (i32, i32),
    t: &TransitionSection,
    arity: usize,
    groups: Option<&[String]>,
) -> Result<TransitionSample> {
    let span = (arity as i32 - 1) * t.tau as i32;
    let sample = if b - a == span {
        make_transitions(panel, a, t.tau, arity)?
    } else if b - a > span && t.pool {
        pool_overlapping(panel, a, b - span, t.tau, arity)?
    } else {
        return Err(Error::Config(format!(
            "period {a}-{b} does not span {span} years; use --pool to pool overlapping transitions"
        )));
    };
    match groups {
        Some(g) => sample.restrict_to(g),
        None => Ok(sample),
    }
}

fn subsample_ids(panel: &PanelDataset, t: &TransitionSection) -> Result<Option<Vec<String>>> {
    let Some(group) = t.subsample else { return Ok(None) };
    let base = t.base_year.unwrap_or(panel.first_year());
    Ok(Some(split_by_initial_income(panel, base, 3)?.get(group).to_vec()))
}

fn run_describe(cfg: &mut RunConfig) -> Result<Outputs> {
    let panel = load_input(cfg)?;
    let est = cfg.estimation.to_config()?;
    let mut out = Outputs::new();
    for &year in &cfg.describe.years {
        let section = panel.cross_section(year)?;
        let (density, _) = adaptive_density_1d(&section, &est.grid, est.alpha, None)?;
        out.insert(format!("density_{year}.csv"), density.to_csv().into_bytes());
    }
    let q = quantile_boundaries(&panel, &cfg.describe.probabilities)?;
    out.insert("quantiles.csv".into(), q.to_csv().into_bytes());
    let summary = serde_json::json!({
        "countries": panel.n_countries(),
        "first_year": panel.first_year(),
        "last_year": panel.last_year(),
    });
    out.insert("panel.json".into(), serde_json::to_string_pretty(&summary)?.into_bytes());
    Ok(out)
}

fn results_json(results: &[TestResult], include_draws: bool) -> Result<Vec<u8>> {
    let values = results
        .iter()
        .map(|r| Ok(serde_json::from_str::<serde_json::Value>(&r.to_json(include_draws)?)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(serde_json::to_string_pretty(&values)?.into_bytes())
}

fn summary_csv(results: &[TestResult]) -> Vec<u8> {
    let mut s = format!("{}\n", TestResult::csv_header());
    for r in results {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s.into_bytes()
}

fn test_config(cfg: &RunConfig) -> Result<TestConfig> {
    Ok(TestConfig {
        estimation: cfg.estimation.to_config()?,
        replications: cfg.test.bootstrap,
        weight: cfg.test.weight,
        generator: cfg.test.generator,
    })
}

fn run_test_homogeneity(cfg: &mut RunConfig) -> Result<Outputs> {
    let panel = load_input(cfg)?;
    let tcfg = test_config(cfg)?;
    let t = &cfg.transitions;
    let periods = resolve_periods(&panel, t, t.tau as i32)?;
    let groups = subsample_ids(&panel, t)?;
    let samples = periods
        .iter()
        .map(|&p| sample_for(&panel, p, t, 2, groups.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..periods.len())
        .flat_map(|i| (i + 1..periods.len()).map(move |j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Config("need at least two periods to compare".into()));
    }
    let master = RngContract::new(cfg.seed);
    let metrics = &cfg.test.metrics;
    let per_pair = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let mut rs = test_homogeneity_multi(&samples[i], &samples[j], metrics, &master.child(k as u64), &tcfg)?;
            let label = format!("{} vs {}", period_label(periods[i]), period_label(periods[j]));
            rs.iter_mut().for_each(|r| r.label = Some(label.clone()));
            Ok(rs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Outputs::new();
    let labels: Vec<String> = periods.iter().map(|&p| period_label(p)).collect();
    for (m, metric) in metrics.iter().enumerate() {
        let mut table = vec![vec![String::new(); labels.len()]; labels.len()];
        for (&(i, j), rs) in pairs.iter().zip(&per_pair) {
            table[i][j] = rs[m].asl.to_string();
        }
        let mut csv = format!("period,{}\n", labels.join(","));
        for (label, row) in labels.iter().zip(&table) {
            csv.push_str(&format!("{label},{}\n", row.join(",")));
        }
        out.insert(format!("asl_{metric}.csv"), csv.into_bytes());
    }
    let all: Vec<TestResult> = per_pair.into_iter().flatten().collect();
    out.insert("summary.csv".into(), summary_csv(&all));
    out.insert("results.json".into(), results_json(&all, cfg.test.include_draws)?);
    Ok(out)
}

fn run_test_order(cfg: &mut RunConfig) -> Result<Outputs> {
    let panel = load_input(cfg)?;
    let tcfg = test_config(cfg)?;
    let t = &cfg.transitions;
    let periods = resolve_periods(&panel, t, 2 * t.tau as i32)?;
    let groups = subsample_ids(&panel, t)?;
    let master = RngContract::new(cfg.seed);
    let per_period = periods
        .par_iter()
        .enumerate()
        .map(|(k, &p)| {
            let sample = sample_for(&panel, p, t, 3, groups.as_deref())?;
            let mut rs = test_first_order_multi(&sample, &cfg.test.metrics, &master.child(k as u64), &tcfg)?;
            rs.iter_mut().for_each(|r| r.label = Some(period_label(p)));
            Ok(rs)
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<TestResult> = per_period.into_iter().flatten().collect();
    let mut out = Outputs::new();
    out.insert("summary.csv".into(), summary_csv(&all));
    out.insert("results.json".into(), results_json(&all, cfg.test.include_draws)?);
    Ok(out)
}

fn run_ergodic(cfg: &mut RunConfig) -> Result<Outputs> {
    let panel = load_input(cfg)?;
    let est = cfg.estimation.to_config()?;
    let t = &cfg.transitions;
    let e = &cfg.ergodic;
    let periods = resolve_periods(&panel, t, t.tau as i32)?;
    let groups = subsample_ids(&panel, t)?;
    let master = RngContract::new(cfg.seed);
    let mut out = Outputs::new();
    for (k, &p) in periods.iter().enumerate() {
        let label = period_label(p).replace('-', "_");
        let sample = sample_for(&panel, p, t, 2, groups.as_deref())?;
        let kernel = estimate_conditional(sample.x(), sample.y(), &est, None)?;
        let result = if e.bootstrap == 0 {
            ergodic(&kernel.conditional, e.tol, e.max_iter)?
        } else {
            let bands = BandConfig {
                replications: e.bootstrap,
                coverage: e.coverage,
                tol: e.tol,
                max_iter: e.max_iter,
            };
            ergodic_bands(&sample, &bands, &est, &master.child(k as u64))?
        };
        let modes: Vec<f64> = result.density.local_maxima().iter().map(|&i| est.grid.point(i)).collect();
        let meta = serde_json::json!({
            "period": period_label(p),
            "tau": t.tau,
            "pooled": t.pool,
            "observations": sample.len(),
            "iterations": result.iterations,
            "residual": result.residual,
            "converged": result.converged,
            "replications": result.replications,
            "coverage": result.coverage,
            "modes": modes,
            "flagged_rows": kernel.conditional.n_flagged(),
        });
        out.insert(format!("ergodic_{label}.csv"), result.to_csv().into_bytes());
        out.insert(format!("ergodic_{label}.json"), serde_json::to_string_pretty(&meta)?.into_bytes());
        out.insert(format!("kernel_{label}.csv"), kernel.conditional.to_csv().into_bytes());
    }
    Ok(out)
}

fn run_montecarlo(cfg: &mut RunConfig) -> Result<Outputs> {
    let study = cfg.montecarlo.to_study(cfg.seed);
    let table = run_power_study(&study)?;
    let mut out = Outputs::new();
    out.insert("power_table.csv".into(), table.to_csv().into_bytes());
    out.insert("power_table.json".into(), serde_json::to_string_pretty(&table)?.into_bytes());
    Ok(out)
}

struct Check {
    name: &'static str,
    value: f64,
    expected: f64,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        (self.value - self.expected).abs() <= self.tolerance
    }
}

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

fn selftest_checks(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let g = Grid1D::new(-6.0, 7.0, 201)?;
    let a = KernelGrid2D::gaussian_conditional(g, |_| 0.0, 1.0);
    let b = KernelGrid2D::gaussian_conditional(g, |_| 1.0, 1.0);
    let d = divergences(&a, &b, &DensityGrid1D::uniform(g), DEFAULT_FLOOR, &[Metric::L1, Metric::Hellinger])?;
    checks.push(Check {
        name: "L1 of unit Gaussians one apart",
        value: d[0],
        expected: 0.7660,
        tolerance: 0.01,
    });
    checks.push(Check {
        name: "Hellinger of unit Gaussians one apart",
        value: d[1],
        expected: 0.3425,
        tolerance: 0.005,
    });

    let sd = 0.15 / 0.75f64.sqrt();
    let g = Grid1D::symmetric(3.0 * sd, 100)?;
    let k = KernelGrid2D::gaussian_conditional(g, |x| 0.5 * x, 0.15);
    let f = ergodic(&k, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let truth = DensityGrid1D::from_fn(g, |x| normal_pdf(x, 0.0, sd));
    checks.push(Check {
        name: "AR(1) ergodic density L1 error",
        value: f.density.l1_distance(&truth)?,
        expected: 0.0,
        tolerance: 0.02,
    });
    checks.push(Check {
        name: "AR(1) power iteration residual",
        value: f.residual,
        expected: 0.0,
        tolerance: DEFAULT_TOL,
    });

    let g = Grid1D::symmetric(5.0 * sd, 100)?;
    let k = KernelGrid2D::gaussian_conditional(g, |x| 0.5 * x, 0.15);
    let two = compose(&k, &k)?;
    let exact = KernelGrid2D::gaussian_conditional(g, |x| 0.25 * x, 0.15 * 1.25f64.sqrt());
    let d = divergences(&two, &exact, &DensityGrid1D::uniform(g), DEFAULT_FLOOR, &[Metric::Linf])?;
    checks.push(Check {
        name: "AR(1) two-step kernel sup error",
        value: d[0],
        expected: 0.0,
        tolerance: 0.05,
    });

    let dgp = HomogeneityDgp::new(0.2, 0.0, 60);
    let (first, second) = simulate_homogeneity(&dgp, &mut RngContract::new(seed).stream(0))?;
    let tcfg = TestConfig::new(EstimationConfig::new(Grid1D::symmetric(3.0 * dgp.stationary_sd(), 30)?, 0.0), 100);
    let rng = RngContract::new(seed);
    let r1 = test_homogeneity_multi(&first, &second, &[Metric::L1], &rng, &tcfg)?;
    let r2 = test_homogeneity_multi(&first, &second, &[Metric::L1], &rng, &tcfg)?;
    let same = r1[0].bootstrap_draws == r2[0].bootstrap_draws && r1[0].asl == r2[0].asl;
    checks.push(Check {
        name: "bootstrap reproducibility",
        value: if same { 0.0 } else { 1.0 },
        expected: 0.0,
        tolerance: 0.0,
    });
    Ok(checks)
}

fn run_selftest(cfg: &mut RunConfig) -> Result<Outputs> {
    let checks = selftest_checks(cfg.seed)?;
    let mut csv = String::from("check,value,expected,tolerance,status\n");
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!("{status}  {}: {} (expected {} ± {})", c.name, c.value, c.expected, c.tolerance);
        csv.push_str(&format!("{},{},{},{},{status}\n", c.name, c.value, c.expected, c.tolerance));
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} self-test check(s) failed")));
    }
    let mut out = Outputs::new();
    out.insert("selftest.csv".into(), csv.into_bytes());
    Ok(out)
}

/// Runs a resolved configuration. `cfg.data.input_sha256` is filled in when
/// the command reads an input file.
pub fn run_command(cfg: &mut RunConfig) -> Result<Outputs> {
    match cfg.command.as_str() {
        "describe" => run_describe(cfg),
        "test-homogeneity" => run_test_homogeneity(cfg),
        "test-order" => run_test_order(cfg),
        "ergodic" => run_ergodic(cfg),
        "montecarlo" => run_montecarlo(cfg),
        "selftest" => run_selftest(cfg),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

/// Writes `outputs` plus the resolved config, version tag and checksum
/// manifest into `dir`.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, outputs: &Outputs) -> Result<()> {
    let mut files = outputs.clone();
    files.insert(RESOLVED_CONFIG.into(), cfg.to_toml()?.into_bytes());
    files.insert(
        VERSION_FILE.into(),
        format!(
            "distdyn {}\nformat_version {FORMAT_VERSION}\nseed {}\n",
            env!("CARGO_PKG_VERSION"),
            cfg.seed
        )
        .into_bytes(),
    );
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        manifest.push_str(&format!("{}  {name}\n", sha256_hex(bytes)));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.command)?;
    let out_dir = cfg.out.clone();
    if out_dir.is_none() && cfg.command != "selftest" {
        return Err(Error::Config("no output directory given (--out)".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outputs = pool.install(|| run_command(&mut cfg))?;
    if let Some(dir) = out_dir {
        write_outputs(&dir, &cfg, &outputs)?;
        eprintln!("wrote {} file(s) to {}", outputs.len() + 3, dir.display());
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
