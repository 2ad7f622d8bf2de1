//! C ABI for `distdyn`.
//!
//! Objects cross the boundary as opaque handles written through an output
//! pointer and released with the matching `dd_*_free`. Every fallible
//! function returns a [`DdStatus`]; on failure the message is available from
//! [`dd_last_error`] on the same thread until the next failing call.
//!
//! Arrays are passed as pointer plus length. Output arrays are filled by
//! copying; a function that writes into a caller buffer fails with
//! `DD_STATUS_CONFIG` when the buffer is shorter than the data.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use distdyn::density::{estimate_conditional, DensityGrid1D, EstimationConfig, KernelGrid2D};
use distdyn::divergence::{divergences, Metric};
use distdyn::dynamics::{compose, ergodic, ergodic_bands, BandConfig, DEFAULT_MAX_ITER, DEFAULT_TOL};
use distdyn::error::{Error, ErrorCategory};
use distdyn::grid::Grid1D;
use distdyn::hypothesis::{test_first_order, test_homogeneity, TestConfig};
use distdyn::panel::{load_panel, pool_overlapping, PanelDataset, TransitionSample};
use distdyn::rng::RngContract;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    Io = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// The library panicked; this is a bug.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdMetric {
    L1 = 0,
    L2 = 1,
    Linf = 2,
    Hellinger = 3,
}

impl From<DdMetric> for Metric {
    fn from(m: DdMetric) -> Self {
        match m {
            DdMetric::L1 => Metric::L1,
            DdMetric::L2 => Metric::L2,
            DdMetric::Linf => Metric::Linf,
            DdMetric::Hellinger => Metric::Hellinger,
        }
    }
}

/// Evaluation grid and smoothing settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DdEstimation {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Adaptive-bandwidth sensitivity in [0, 1]; 0 gives a fixed bandwidth.
    pub alpha: f64,
    /// Conditioning-marginal floor below which kernel rows are flagged.
    pub floor: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DdTestResult {
    pub observed: f64,
    pub asl: f64,
    pub replications: usize,
    pub seed: u64,
}

pub struct DdPanel(PanelDataset);
pub struct DdSample(TransitionSample);
pub struct DdKernel {
    kernel: KernelGrid2D,
    marginal: Option<DensityGrid1D>,
}
pub struct DdDensity {
    density: DensityGrid1D,
    band: Option<(DensityGrid1D, DensityGrid1D)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DdStatus {
    match e.category() {
        ErrorCategory::Config => DdStatus::Config,
        ErrorCategory::Data => DdStatus::Data,
        ErrorCategory::Numerical => DdStatus::Numerical,
        ErrorCategory::Io => DdStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            DdStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            DdStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Config(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_into(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("output buffer"));
    }
    if len < src.len() {
        return Err(Failure::Lib(Error::Config(format!(
            "output buffer holds {len} values, need {}",
            src.len()
        ))));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn estimation(e: &DdEstimation) -> Result<EstimationConfig, Failure> {
    let cfg = EstimationConfig {
        grid: Grid1D::new(e.lo, e.hi, e.points)?,
        alpha: e.alpha,
        floor: e.floor,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults used by the empirical application: grid [-1, 4] with 100
/// points, alpha 0.5, floor 1e-8.
#[no_mangle]
pub extern "C" fn dd_estimation_default() -> DdEstimation {
    let d = EstimationConfig::empirical_default();
    DdEstimation {
        lo: d.grid.lo(),
        hi: d.grid.hi(),
        points: d.grid.len(),
        alpha: d.alpha,
        floor: d.floor,
    }
}

// --- panel ------------------------------------------------------------------

/// Reads a long-format panel (one row per country and year) from a
/// delimited text file with a header row.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn dd_panel_load(
    path: *const c_char,
    id_column: *const c_char,
    year_column: *const c_char,
    value_column: *const c_char,
    out: *mut *mut DdPanel,
) -> DdStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let file = File::open(path).map_err(Error::from)?;
        let panel = load_panel(
            file,
            c_str(value_column, "value_column")?,
            c_str(id_column, "id_column")?,
            c_str(year_column, "year_column")?,
        )?;
        write_out(out, DdPanel(panel))
    })
}

/// # Safety
/// `panel` must be null or a handle from [`dd_panel_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_panel_free(panel: *mut DdPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live panel handle.
#[no_mangle]
pub unsafe extern "C" fn dd_panel_n_countries(panel: *const DdPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n_countries())
}

/// # Safety
/// `panel` must be a live panel handle; `first` and `last` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dd_panel_years(panel: *const DdPanel, first: *mut i32, last: *mut i32) -> DdStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        if first.is_null() || last.is_null() {
            return Err(Failure::Null("year outputs"));
        }
        *first = p.0.first_year();
        *last = p.0.last_year();
        Ok(())
    })
}

// --- transition samples ----------------------------------------------------

/// Transition tuples starting in every year of `first_start..=last_start`
/// (a single year when the two are equal). `arity` is 2 for pairs and 3 for
/// triples.
///
/// # Safety
/// `panel` must be a live panel handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_sample_from_panel(
    panel: *const DdPanel,
    first_start: i32,
    last_start: i32,
    tau: u32,
    arity: usize,
    out: *mut *mut DdSample,
) -> DdStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        write_out(out, DdSample(pool_overlapping(&p.0, first_start, last_start, tau, arity)?))
    })
}

/// Sample from raw columns. `z` may be null for pairs.
///
/// # Safety
/// `x`, `y` (and `z` when non-null) must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_sample_from_arrays(
    x: *const f64,
    y: *const f64,
    z: *const f64,
    n: usize,
    tau: u32,
    out: *mut *mut DdSample,
) -> DdStatus {
    guard(|| {
        let (x, y) = (slice(x, n, "x")?.to_vec(), slice(y, n, "y")?.to_vec());
        let sample = if z.is_null() {
            TransitionSample::from_pairs(tau, x, y)?
        } else {
            TransitionSample::from_triples(tau, x, y, slice(z, n, "z")?.to_vec())?
        };
        write_out(out, DdSample(sample))
    })
}

/// # Safety
/// `sample` must be null or a live sample handle.
#[no_mangle]
pub unsafe extern "C" fn dd_sample_len(sample: *const DdSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `sample` must be null or a sample handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_sample_free(sample: *mut DdSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

// --- kernels ---------------------------------------------------------------

/// Conditional kernel of the sample's second column given its first.
///
/// # Safety
/// `sample` and `est` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_estimate(sample: *const DdSample, est: *const DdEstimation, out: *mut *mut DdKernel) -> DdStatus {
    guard(|| {
        let s = &deref(sample, "sample")?.0;
        let cfg = estimation(deref(est, "estimation")?)?;
        let e = estimate_conditional(s.x(), s.y(), &cfg, None)?;
        write_out(
            out,
            DdKernel {
                kernel: e.conditional,
                marginal: Some(e.marginal),
            },
        )
    })
}

/// Two-step kernel: `b` applied first, then `a`.
///
/// # Safety
/// `a` and `b` must be live kernel handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_compose(a: *const DdKernel, b: *const DdKernel, out: *mut *mut DdKernel) -> DdStatus {
    guard(|| {
        let (a, b) = (deref(a, "kernel a")?, deref(b, "kernel b")?);
        let k = compose(&a.kernel, &b.kernel)?;
        write_out(
            out,
            DdKernel {
                kernel: k,
                marginal: b.marginal.clone(),
            },
        )
    })
}

/// Grid points per axis (the kernel is `points × points`).
///
/// # Safety
/// `kernel` must be null or a live kernel handle.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_points(kernel: *const DdKernel) -> usize {
    kernel.as_ref().map_or(0, |k| k.kernel.rows())
}

/// Copies the row-major kernel values (row = conditioning point) into
/// `out`, which must hold `points * points` doubles.
///
/// # Safety
/// `kernel` must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_values(kernel: *const DdKernel, out: *mut f64, len: usize) -> DdStatus {
    guard(|| copy_into(deref(kernel, "kernel")?.kernel.values(), out, len))
}

/// Copies the conditioning marginal into `out` (`points` doubles).
///
/// # Safety
/// `kernel` must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_marginal(kernel: *const DdKernel, out: *mut f64, len: usize) -> DdStatus {
    guard(|| {
        let k = deref(kernel, "kernel")?;
        let m = k
            .marginal
            .as_ref()
            .ok_or_else(|| Error::Config("kernel has no conditioning marginal".into()))?;
        copy_into(&m.values, out, len)
    })
}

/// # Safety
/// `kernel` must be null or a kernel handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_kernel_free(kernel: *mut DdKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Weighted divergence between two kernels on the same grid. `weight` may
/// be null, in which case the conditioning marginal of `a` is used.
///
/// # Safety
/// `a`, `b` must be live kernels; `weight` null or `points` readable
/// doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_divergence(
    a: *const DdKernel,
    b: *const DdKernel,
    weight: *const f64,
    metric: DdMetric,
    floor: f64,
    out: *mut f64,
) -> DdStatus {
    guard(|| {
        let (a, b) = (deref(a, "kernel a")?, deref(b, "kernel b")?);
        if out.is_null() {
            return Err(Failure::Null("output"));
        }
        let grid = *a.kernel.grid_x();
        let w = if weight.is_null() {
            a.marginal
                .clone()
                .ok_or_else(|| Error::Config("no weight given and kernel a has no marginal".into()))?
        } else {
            DensityGrid1D::new(grid, slice(weight, grid.len(), "weight")?.to_vec())?
        };
        *out = divergences(&a.kernel, &b.kernel, &w, floor, &[metric.into()])?[0];
        Ok(())
    })
}

// --- ergodic densities -----------------------------------------------------

/// Ergodic density of a kernel by power iteration from the uniform density.
/// `tol <= 0` and `max_iter == 0` select the defaults (1e-9, 10000).
///
/// # Safety
/// `kernel` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_ergodic(kernel: *const DdKernel, tol: f64, max_iter: usize, out: *mut *mut DdDensity) -> DdStatus {
    guard(|| {
        let k = deref(kernel, "kernel")?;
        let tol = if tol > 0.0 { tol } else { DEFAULT_TOL };
        let max_iter = if max_iter > 0 { max_iter } else { DEFAULT_MAX_ITER };
        let r = ergodic(&k.kernel, tol, max_iter)?;
        if !r.converged {
            return Err(Error::Numerical(format!("power iteration did not converge in {max_iter} iterations")).into());
        }
        write_out(
            out,
            DdDensity {
                density: r.density,
                band: None,
            },
        )
    })
}

/// Ergodic density of the kernel estimated on `sample`, with pointwise
/// bootstrap bands at `coverage` from `replications` (at least 100)
/// resamples.
///
/// # Safety
/// `sample` and `est` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_ergodic_bands(
    sample: *const DdSample,
    est: *const DdEstimation,
    replications: usize,
    coverage: f64,
    seed: u64,
    out: *mut *mut DdDensity,
) -> DdStatus {
    guard(|| {
        let s = &deref(sample, "sample")?.0;
        let cfg = estimation(deref(est, "estimation")?)?;
        let bands = BandConfig {
            replications,
            coverage,
            ..BandConfig::default()
        };
        let r = ergodic_bands(s, &bands, &cfg, &RngContract::new(seed))?;
        let band = r.band_lo.zip(r.band_hi);
        write_out(out, DdDensity { density: r.density, band })
    })
}

/// # Safety
/// `density` must be null or a live density handle.
#[no_mangle]
pub unsafe extern "C" fn dd_density_len(density: *const DdDensity) -> usize {
    density.as_ref().map_or(0, |d| d.density.values.len())
}

/// # Safety
/// `density` must be live; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_density_values(density: *const DdDensity, out: *mut f64, len: usize) -> DdStatus {
    guard(|| copy_into(&deref(density, "density")?.density.values, out, len))
}

/// Copies the lower and upper band; fails with `DD_STATUS_CONFIG` when the
/// density has no bands.
///
/// # Safety
/// `density` must be live; `lo` and `hi` must each point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dd_density_bands(density: *const DdDensity, lo: *mut f64, hi: *mut f64, len: usize) -> DdStatus {
    guard(|| {
        let d = deref(density, "density")?;
        let (l, h) = d
            .band
            .as_ref()
            .ok_or_else(|| Error::Config("density has no bootstrap bands".into()))?;
        copy_into(&l.values, lo, len)?;
        copy_into(&h.values, hi, len)
    })
}

/// # Safety
/// `density` must be null or a density handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dd_density_free(density: *mut DdDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

// --- tests -----------------------------------------------------------------

fn fill(out: *mut DdTestResult, r: &distdyn::TestResult) -> Result<(), Failure> {
    let out = unsafe { out.as_mut() }.ok_or(Failure::Null("result"))?;
    *out = DdTestResult {
        observed: r.observed,
        asl: r.asl,
        replications: r.replications,
        seed: r.seed,
    };
    Ok(())
}

/// Bootstrap test that two samples of pairs share one transition kernel.
///
/// # Safety
/// `first`, `second` and `est` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_test_homogeneity(
    first: *const DdSample,
    second: *const DdSample,
    metric: DdMetric,
    est: *const DdEstimation,
    replications: usize,
    seed: u64,
    out: *mut DdTestResult,
) -> DdStatus {
    guard(|| {
        let cfg = TestConfig::new(estimation(deref(est, "estimation")?)?, replications);
        let r = test_homogeneity(
            &deref(first, "first")?.0,
            &deref(second, "second")?.0,
            metric.into(),
            &RngContract::new(seed),
            &cfg,
        )?;
        fill(out, &r)
    })
}

/// Bootstrap test of the first-order (Chapman-Kolmogorov) property on a
/// sample of triples.
///
/// # Safety
/// `triples` and `est` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dd_test_first_order(
    triples: *const DdSample,
    metric: DdMetric,
    est: *const DdEstimation,
    replications: usize,
    seed: u64,
    out: *mut DdTestResult,
) -> DdStatus {
    guard(|| {
        let cfg = TestConfig::new(estimation(deref(est, "estimation")?)?, replications);
        let r = test_first_order(&deref(triples, "triples")?.0, metric.into(), &RngContract::new(seed), &cfg)?;
        fill(out, &r)
    })
}
