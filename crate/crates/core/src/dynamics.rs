//! Conditional kernels as Markov operators on a grid.
//!
//! All integrals use trapezoid weights on the shared state grid. Flagged
//! rows (conditioning points without data support) act as zero rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{estimate_conditional, sample_sd, DensityGrid1D, EstimationConfig, KernelGrid2D, KernelKind};
use crate::error::{Error, Result};
use crate::panel::TransitionSample;
use crate::rng::{bootstrap_indices, RngContract};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Redraws allowed when a bootstrap resample has zero variance.
pub const MAX_REDRAWS: usize = 10;

fn require_conditional(k: &KernelGrid2D) -> Result<()> {
    if k.kind() != KernelKind::Conditional {
        return Err(Error::Config("operation requires a conditional kernel".into()));
    }
    Ok(())
}

/// `∫ g(z|x) f(x) dx`, renormalized to unit mass on `kernel.grid_y()`.
pub fn push_forward(kernel: &KernelGrid2D, f: &DensityGrid1D) -> Result<DensityGrid1D> {
    require_conditional(kernel)?;
    if kernel.grid_x() != &f.grid {
        return Err(Error::GridMismatch(
            "density grid differs from the kernel's conditioning grid".into(),
        ));
    }
    let weights = kernel.grid_x().trapezoid_weights();
    let coef: Vec<f64> = weights.iter().zip(&f.values).map(|(w, v)| w * v).collect();
    let values = mix_rows(kernel, &coef);
    let out = DensityGrid1D {
        grid: *kernel.grid_y(),
        values,
    };
    out.normalized()
}

/// `Σ_i coef_i · row_i` over unflagged rows.
fn mix_rows(kernel: &KernelGrid2D, coef: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; kernel.cols()];
    for (i, &c) in coef.iter().enumerate() {
        if c == 0.0 || kernel.is_flagged(i) {
            continue;
        }
        for (o, v) in out.iter_mut().zip(kernel.row(i)) {
            *o += c * v;
        }
    }
    out
}

/// Two-step kernel `∫ a(z|y) b(y|x) dy`: `b` is applied first.
///
/// Output rows are renormalized. A row is flagged when the corresponding row
/// of `b` is flagged or when all of its mass lands on flagged rows of `a`.
pub fn compose(kernel_a: &KernelGrid2D, kernel_b: &KernelGrid2D) -> Result<KernelGrid2D> {
    require_conditional(kernel_a)?;
    require_conditional(kernel_b)?;
    if kernel_b.grid_y() != kernel_a.grid_x() {
        return Err(Error::GridMismatch("intermediate grids of the composed kernels differ".into()));
    }
    let weights = kernel_a.grid_x().trapezoid_weights();
    let grid_out = *kernel_a.grid_y();
    let m = kernel_a.cols();
    let mut values = Vec::with_capacity(kernel_b.rows() * m);
    let mut flagged = Vec::with_capacity(kernel_b.rows());
    for i in 0..kernel_b.rows() {
        if kernel_b.is_flagged(i) {
            values.extend(std::iter::repeat_n(0.0, m));
            flagged.push(true);
            continue;
        }
        let coef: Vec<f64> = weights.iter().zip(kernel_b.row(i)).map(|(w, v)| w * v).collect();
        let mut row = mix_rows(kernel_a, &coef);
        let mass = grid_out.trapezoid(&row);
        if mass > 0.0 && mass.is_finite() {
            row.iter_mut().for_each(|v| *v /= mass);
            flagged.push(false);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
            flagged.push(true);
        }
        values.extend(row);
    }
    Ok(KernelGrid2D::from_parts_unchecked(
        *kernel_b.grid_x(),
        grid_out,
        values,
        KernelKind::Conditional,
        flagged,
    ))
}

/// Long-run density implied by a kernel, optionally with pointwise
/// bootstrap bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicResult {
    pub density: DensityGrid1D,
    pub iterations: usize,
    /// L1 change in the last iteration.
    pub residual: f64,
    pub converged: bool,
    pub band_lo: Option<DensityGrid1D>,
    pub band_hi: Option<DensityGrid1D>,
    /// Bootstrap replications behind the bands, zero when absent.
    #[serde(default)]
    pub replications: usize,
    #[serde(default)]
    pub coverage: Option<f64>,
}

impl ErgodicResult {
    /// CSV with columns `x,density,band_lo,band_hi` (band columns empty when
    /// no bands were computed).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,density,band_lo,band_hi\n");
        for (i, x) in self.density.grid.points().iter().enumerate() {
            let lo = self.band_lo.as_ref().map(|b| b.values[i].to_string()).unwrap_or_default();
            let hi = self.band_hi.as_ref().map(|b| b.values[i].to_string()).unwrap_or_default();
            out.push_str(&format!("{x},{},{lo},{hi}\n", self.density.values[i]));
        }
        out
    }
}

/// Power iteration from the uniform density on the grid.
pub fn ergodic(kernel: &KernelGrid2D, tol: f64, max_iter: usize) -> Result<ErgodicResult> {
    ergodic_from(kernel, &DensityGrid1D::uniform(*kernel.grid_x()), tol, max_iter)
}

/// Power iteration from `start`.
pub fn ergodic_from(kernel: &KernelGrid2D, start: &DensityGrid1D, tol: f64, max_iter: usize) -> Result<ErgodicResult> {
    require_conditional(kernel)?;
    if kernel.grid_x() != kernel.grid_y() {
        return Err(Error::GridMismatch(
            "ergodic density requires a kernel on a single state grid".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if kernel.n_flagged() == kernel.rows() {
        return Err(Error::Numerical("every kernel row is flagged".into()));
    }
    let mut f = start.normalized()?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let next = push_forward(kernel, &f)?;
        residual = next.l1_distance(&f)?;
        f = next;
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    Ok(ErgodicResult {
        density: f,
        iterations,
        residual,
        converged: residual < tol,
        band_lo: None,
        band_hi: None,
        replications: 0,
        coverage: None,
    })
}

/// Zero-based positions of the lower and upper band limits among `b` sorted
/// replicates: the `k`-th smallest and `k`-th largest, `k = ⌊b (1 − coverage) / 2⌋`
/// (at least 1).
pub fn band_positions(b: usize, coverage: f64) -> (usize, usize) {
    let k = ((b as f64 * (1.0 - coverage) / 2.0) + 1e-9).floor() as usize;
    let k = k.clamp(1, b.div_ceil(2));
    (k - 1, b - k)
}

pub(crate) fn resample_pairs<R: rand::Rng>(x: &[f64], y: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    for _ in 0..MAX_REDRAWS {
        let idx = bootstrap_indices(x.len(), rng);
        let bx: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if sample_sd(&bx) > 0.0 && sample_sd(&by) > 0.0 {
            return Ok((bx, by));
        }
    }
    Err(Error::Degenerate(format!(
        "bootstrap resample had zero variance {MAX_REDRAWS} times in a row"
    )))
}

/// Settings for [`ergodic_bands`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub replications: usize,
    pub coverage: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig {
            replications: 1000,
            coverage: 0.9,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Ergodic density of the kernel estimated on `pooled`, with pointwise
/// bootstrap bands from re-estimating kernel and ergodic density on
/// resamples of the tuples.
pub fn ergodic_bands(pooled: &TransitionSample, bands: &BandConfig, cfg: &EstimationConfig, rng: &RngContract) -> Result<ErgodicResult> {
    if bands.replications < 100 {
        return Err(Error::Config(format!("need at least 100 replications, got {}", bands.replications)));
    }
    if !(bands.coverage > 0.0 && bands.coverage < 1.0) {
        return Err(Error::Config(format!("coverage must lie in (0, 1), got {}", bands.coverage)));
    }
    let est = estimate_conditional(pooled.x(), pooled.y(), cfg, None)?;
    let mut point = ergodic(&est.conditional, bands.tol, bands.max_iter)?;

    let replicates = (0..bands.replications)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.stream(b as u64 + 1);
            let (bx, by) = resample_pairs(pooled.x(), pooled.y(), &mut r)?;
            let est = estimate_conditional(&bx, &by, cfg, None)?;
            Ok(ergodic(&est.conditional, bands.tol, bands.max_iter)?.density.values)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let (lo_pos, hi_pos) = band_positions(bands.replications, bands.coverage);
    let m = cfg.grid.len();
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    let mut column = vec![0.0; replicates.len()];
    for j in 0..m {
        for (c, rep) in column.iter_mut().zip(&replicates) {
            *c = rep[j];
        }
        column.sort_by(f64::total_cmp);
        lo[j] = column[lo_pos];
        hi[j] = column[hi_pos];
    }
    point.band_lo = Some(DensityGrid1D {
        grid: cfg.grid,
        values: lo,
    });
    point.band_hi = Some(DensityGrid1D {
        grid: cfg.grid,
        values: hi,
    });
    point.replications = bands.replications;
    point.coverage = Some(bands.coverage);
    Ok(point)
}
