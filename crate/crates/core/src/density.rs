//! Gaussian kernel density estimation on fixed grids.
//!
//! Both the standard (fixed bandwidth) and the adaptive estimator are
//! product-Gaussian: coordinate `k` of observation `i` is smoothed with
//! bandwidth `h * sigma_k * lambda_i`, where `h` is the normal reference
//! factor, `sigma_k` the sample standard deviation of coordinate `k` and
//! `lambda_i` the local multiplier (1 for the standard estimator).
//!
//! Grid evaluation is separable: the joint estimate on an `mx × my` grid is
//! the product `Kxᵀ · Ky` of two `n × m` kernel matrices, so each estimate
//! costs `n·(mx + my)` exponentials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::panel::TransitionSample;

/// Marginal densities below this value mark a conditioning row as unsupported.
pub const DEFAULT_FLOOR: f64 = 1e-8;
/// Sensitivity of the adaptive multipliers to the pilot density.
pub const DEFAULT_ALPHA: f64 = 0.5;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn std_normal_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Density values on a one-dimensional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid1D {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl DensityGrid1D {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(DensityGrid1D { grid, values })
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        DensityGrid1D { grid, values }
    }

    pub fn uniform(grid: Grid1D) -> Self {
        let v = 1.0 / (grid.hi() - grid.lo());
        DensityGrid1D {
            grid,
            values: vec![v; grid.len()],
        }
    }

    pub fn integral(&self) -> f64 {
        self.grid.trapezoid(&self.values)
    }

    /// Copy rescaled to unit trapezoid integral.
    pub fn normalized(&self) -> Result<Self> {
        let mass = self.integral();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Numerical(format!("cannot normalize density with mass {mass}")));
        }
        Ok(DensityGrid1D {
            grid: self.grid,
            values: self.values.iter().map(|v| v / mass).collect(),
        })
    }

    /// Trapezoid L1 distance to `other`.
    pub fn l1_distance(&self, other: &DensityGrid1D) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("densities live on different grids".into()));
        }
        let diff: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).collect();
        Ok(self.grid.trapezoid(&diff))
    }

    /// Interior local maxima, ignoring bumps below `1e-3` of the global maximum.
    pub fn local_maxima(&self) -> Vec<usize> {
        let v = &self.values;
        let top = v.iter().cloned().fold(0.0, f64::max);
        (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] > 1e-3 * top)
            .collect()
    }

    /// Long-form CSV: `x,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,value\n");
        for (x, v) in self.grid.points().iter().zip(&self.values) {
            out.push_str(&format!("{x},{v}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Joint,
    Conditional,
}

/// Values on a 2D grid. Row `i` corresponds to `grid_x[i]`; entry `(i, j)`
/// is the joint density at `(x_i, y_j)` or, for conditional kernels, the
/// density of `y_j` given `x_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelGrid2D {
    grid_x: Grid1D,
    grid_y: Grid1D,
    values: Vec<f64>,
    kind: KernelKind,
    /// Conditioning rows without data support; their values are all zero.
    flagged: Vec<bool>,
}

impl KernelGrid2D {
    pub fn new(grid_x: Grid1D, grid_y: Grid1D, values: Vec<f64>, kind: KernelKind, flagged: Vec<bool>) -> Result<Self> {
        if values.len() != grid_x.len() * grid_y.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid_x.len(),
                grid_y.len()
            )));
        }
        if flagged.len() != grid_x.len() {
            return Err(Error::GridMismatch("flag vector length differs from row count".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numerical("kernel values must be finite and nonnegative".into()));
        }
        Ok(KernelGrid2D {
            grid_x,
            grid_y,
            values,
            kind,
            flagged,
        })
    }

    /// Conditional kernel with row `i` given by `f(x_i, y)`; each row is
    /// normalized on the grid and rows with zero mass are flagged.
    pub fn conditional_from_fn(grid_x: Grid1D, grid_y: Grid1D, f: impl Fn(f64, f64) -> f64) -> Self {
        let ys = grid_y.points();
        let mut values = Vec::with_capacity(grid_x.len() * grid_y.len());
        let mut flagged = Vec::with_capacity(grid_x.len());
        for x in grid_x.points() {
            let mut row: Vec<f64> = ys.iter().map(|&y| f(x, y).max(0.0)).collect();
            let mass = grid_y.trapezoid(&row);
            if mass > 0.0 && mass.is_finite() {
                row.iter_mut().for_each(|v| *v /= mass);
                flagged.push(false);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
                flagged.push(true);
            }
            values.extend(row);
        }
        KernelGrid2D {
            grid_x,
            grid_y,
            values,
            kind: KernelKind::Conditional,
            flagged,
        }
    }

    /// Conditional kernel whose row at `x` is the normal density with the
    /// given mean and standard deviation.
    pub fn gaussian_conditional(grid: Grid1D, mean: impl Fn(f64) -> f64, sd: f64) -> Self {
        Self::conditional_from_fn(grid, grid, |x, y| std_normal_pdf((y - mean(x)) / sd) / sd)
    }

    pub fn grid_x(&self) -> &Grid1D {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &Grid1D {
        &self.grid_y
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.grid_x.len()
    }

    pub fn cols(&self) -> usize {
        self.grid_y.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.flagged[i]
    }

    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    pub(crate) fn from_parts_unchecked(grid_x: Grid1D, grid_y: Grid1D, values: Vec<f64>, kind: KernelKind, flagged: Vec<bool>) -> Self {
        KernelGrid2D {
            grid_x,
            grid_y,
            values,
            kind,
            flagged,
        }
    }

    /// Long-form CSV: `x,y,value`.
    pub fn to_csv(&self) -> String {
        let xs = self.grid_x.points();
        let ys = self.grid_y.points();
        let mut out = String::from("x,y,value\n");
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                out.push_str(&format!("{x},{y},{}\n", self.value(i, j)));
            }
        }
        out
    }
}

/// Normal reference bandwidth. `lambdas` is `None` until an adaptive
/// estimate fills it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSpec {
    pub h: f64,
    pub sigmas: Vec<f64>,
    pub alpha: f64,
    pub lambdas: Option<Vec<f64>>,
}

impl BandwidthSpec {
    pub fn dims(&self) -> usize {
        self.sigmas.len()
    }

    /// Kernel bandwidth in coordinate `k` for a unit multiplier.
    pub fn coordinate_bandwidth(&self, k: usize) -> f64 {
        self.h * self.sigmas[k]
    }

    fn without_lambdas(&self) -> BandwidthSpec {
        BandwidthSpec {
            h: self.h,
            sigmas: self.sigmas.clone(),
            alpha: 0.0,
            lambdas: None,
        }
    }
}

pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Normal reference rule: `h = (4 / ((d + 2) n))^(1 / (d + 4))`, applied per
/// coordinate as `h * sigma_k`.
pub fn optimal_bandwidth(columns: &[&[f64]]) -> Result<BandwidthSpec> {
    let d = columns.len();
    if d == 0 || d > 2 {
        return Err(Error::Config(format!("dimension must be 1 or 2, got {d}")));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Data("coordinate columns differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 observations, got {n}")));
    }
    let sigmas: Vec<f64> = columns.iter().map(|c| sample_sd(c)).collect();
    if let Some(k) = sigmas.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Degenerate(format!("coordinate {k} has zero variance")));
    }
    let h = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    Ok(BandwidthSpec {
        h,
        sigmas,
        alpha: 0.0,
        lambdas: None,
    })
}

/// `n × m` matrix with entry `(i, a) = φ((g_a − d_i) / s_i) / s_i`.
fn kernel_matrix(data: &[f64], scales: &[f64], grid: &Grid1D) -> Vec<f64> {
    let pts = grid.points();
    let m = pts.len();
    let mut out = vec![0.0; data.len() * m];
    for (i, (&d, &s)) in data.iter().zip(scales).enumerate() {
        let row = &mut out[i * m..(i + 1) * m];
        for (r, &g) in row.iter_mut().zip(&pts) {
            *r = std_normal_pdf((g - d) / s) / s;
        }
    }
    out
}

fn kde1_on_grid(data: &[f64], scales: &[f64], grid: &Grid1D) -> Vec<f64> {
    let m = grid.len();
    let k = kernel_matrix(data, scales, grid);
    let mut out = vec![0.0; m];
    for row in k.chunks_exact(m) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = data.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn kde2_on_grid(x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], gx: &Grid1D, gy: &Grid1D) -> Vec<f64> {
    let (mx, my) = (gx.len(), gy.len());
    let kx = kernel_matrix(x, sx, gx);
    let ky = kernel_matrix(y, sy, gy);
    let mut out = vec![0.0; mx * my];
    for (rx, ry) in kx.chunks_exact(mx).zip(ky.chunks_exact(my)) {
        for (a, &c) in rx.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out[a * my..(a + 1) * my].iter_mut().zip(ry) {
                *o += c * v;
            }
        }
    }
    let n = x.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn scaled(bw: f64, lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().map(|l| bw * l).collect()
}

fn check_dims(bw: &BandwidthSpec, d: usize) -> Result<()> {
    if bw.dims() != d {
        return Err(Error::Config(format!("bandwidth has {} coordinates, sample has {d}", bw.dims())));
    }
    Ok(())
}

/// Standard fixed-bandwidth estimate on `grid`.
pub fn pilot_density_1d(sample: &[f64], grid: &Grid1D, bw: &BandwidthSpec) -> Result<DensityGrid1D> {
    check_dims(bw, 1)?;
    let ones = vec![1.0; sample.len()];
    let values = kde1_on_grid(sample, &scaled(bw.coordinate_bandwidth(0), &ones), grid);
    Ok(DensityGrid1D { grid: *grid, values })
}

/// Standard fixed-bandwidth joint estimate of `(x, y)` on `gx × gy`.
pub fn pilot_density_2d(x: &[f64], y: &[f64], gx: &Grid1D, gy: &Grid1D, bw: &BandwidthSpec) -> Result<KernelGrid2D> {
    check_dims(bw, 2)?;
    let ones = vec![1.0; x.len()];
    let values = kde2_on_grid(
        x,
        y,
        &scaled(bw.coordinate_bandwidth(0), &ones),
        &scaled(bw.coordinate_bandwidth(1), &ones),
        gx,
        gy,
    );
    Ok(KernelGrid2D::from_parts_unchecked(
        *gx,
        *gy,
        values,
        KernelKind::Joint,
        vec![false; gx.len()],
    ))
}

/// Standard estimate evaluated at the sample points themselves.
pub fn pilot_at_points(columns: &[&[f64]], bw: &BandwidthSpec) -> Result<Vec<f64>> {
    check_dims(bw, columns.len())?;
    let n = columns[0].len();
    let hs: Vec<f64> = (0..columns.len()).map(|k| bw.coordinate_bandwidth(k)).collect();
    let norm: f64 = hs.iter().product::<f64>() * (2.0 * std::f64::consts::PI).powf(columns.len() as f64 / 2.0) * n as f64;
    let out = (0..n)
        .map(|p| {
            let mut acc = 0.0;
            for i in 0..n {
                let mut q = 0.0;
                for (col, h) in columns.iter().zip(&hs) {
                    let u = (col[p] - col[i]) / h;
                    q += u * u;
                }
                acc += (-0.5 * q).exp();
            }
            acc / norm
        })
        .collect();
    Ok(out)
}

/// Local multipliers `λ_i = (pilot_i / g)^(-alpha)`, with `g` the geometric
/// mean of the nonzero pilot values. Zero pilot values get `λ_i = 1`.
pub fn adaptive_lambdas(pilot: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(vec![1.0; pilot.len()]);
    }
    let logs: Vec<f64> = pilot.iter().filter(|&&p| p > 0.0).map(|p| p.ln()).collect();
    if logs.is_empty() {
        return Err(Error::Numerical("pilot density is zero at every sample point".into()));
    }
    let log_g = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(pilot
        .iter()
        .map(|&p| if p > 0.0 { (-alpha * (p.ln() - log_g)).exp() } else { 1.0 })
        .collect())
}

fn resolve_bandwidth(columns: &[&[f64]], alpha: f64, fixed: Option<&BandwidthSpec>) -> Result<BandwidthSpec> {
    let base = match fixed {
        Some(bw) => {
            check_dims(bw, columns.len())?;
            bw.without_lambdas()
        }
        None => optimal_bandwidth(columns)?,
    };
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let lambdas = if alpha == 0.0 {
        vec![1.0; columns[0].len()]
    } else {
        adaptive_lambdas(&pilot_at_points(columns, &base)?, alpha)?
    };
    Ok(BandwidthSpec {
        alpha,
        lambdas: Some(lambdas),
        ..base
    })
}

/// Adaptive estimate on `grid`. When `fixed` is given its `h` and `sigmas`
/// are reused instead of being re-derived from the sample; the local
/// multipliers are always computed from `sample`.
pub fn adaptive_density_1d(
    sample: &[f64],
    grid: &Grid1D,
    alpha: f64,
    fixed: Option<&BandwidthSpec>,
) -> Result<(DensityGrid1D, BandwidthSpec)> {
    let bw = resolve_bandwidth(&[sample], alpha, fixed)?;
    let lambdas = bw.lambdas.as_deref().unwrap();
    let values = kde1_on_grid(sample, &scaled(bw.coordinate_bandwidth(0), lambdas), grid);
    Ok((DensityGrid1D { grid: *grid, values }, bw))
}

/// Adaptive joint estimate of `(x, y)` on `gx × gy`. See [`adaptive_density_1d`]
/// for the meaning of `fixed`.
pub fn adaptive_density_2d(
    x: &[f64],
    y: &[f64],
    gx: &Grid1D,
    gy: &Grid1D,
    alpha: f64,
    fixed: Option<&BandwidthSpec>,
) -> Result<(KernelGrid2D, BandwidthSpec)> {
    let bw = resolve_bandwidth(&[x, y], alpha, fixed)?;
    let lambdas = bw.lambdas.as_deref().unwrap();
    let values = kde2_on_grid(
        x,
        y,
        &scaled(bw.coordinate_bandwidth(0), lambdas),
        &scaled(bw.coordinate_bandwidth(1), lambdas),
        gx,
        gy,
    );
    let joint = KernelGrid2D::from_parts_unchecked(*gx, *gy, values, KernelKind::Joint, vec![false; gx.len()]);
    Ok((joint, bw))
}

/// Integrates a joint estimate over `y` for every `x` row.
pub fn marginal_of_joint(joint: &KernelGrid2D) -> Result<DensityGrid1D> {
    if joint.kind != KernelKind::Joint {
        return Err(Error::Config("marginal requires a joint density".into()));
    }
    let values = (0..joint.rows()).map(|i| joint.grid_y.trapezoid(joint.row(i))).collect();
    Ok(DensityGrid1D {
        grid: joint.grid_x,
        values,
    })
}

/// Divides each row of `joint` by its marginal. Rows whose marginal falls
/// below `floor` are zeroed and flagged; the rest integrate to one.
pub fn conditional_of_joint(joint: &KernelGrid2D, floor: f64) -> Result<(KernelGrid2D, DensityGrid1D)> {
    if !(floor > 0.0) {
        return Err(Error::Config(format!("density floor must be positive, got {floor}")));
    }
    let marginal = marginal_of_joint(joint)?;
    let m = joint.cols();
    let mut values = joint.values.clone();
    let mut flagged = vec![false; joint.rows()];
    for (i, (row, &mass)) in values.chunks_exact_mut(m).zip(&marginal.values).enumerate() {
        if mass < floor || !mass.is_finite() {
            row.iter_mut().for_each(|v| *v = 0.0);
            flagged[i] = true;
            continue;
        }
        row.iter_mut().for_each(|v| *v /= mass);
        let renorm = joint.grid_y.trapezoid(row);
        row.iter_mut().for_each(|v| *v /= renorm);
    }
    let cond = KernelGrid2D::from_parts_unchecked(joint.grid_x, joint.grid_y, values, KernelKind::Conditional, flagged);
    Ok((cond, marginal))
}

/// Grid, smoothing and floor settings shared by every estimate in a test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub grid: Grid1D,
    pub alpha: f64,
    pub floor: f64,
}

impl EstimationConfig {
    pub fn new(grid: Grid1D, alpha: f64) -> Self {
        EstimationConfig {
            grid,
            alpha,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn empirical_default() -> Self {
        EstimationConfig::new(Grid1D::new(-1.0, 4.0, 100).unwrap(), DEFAULT_ALPHA)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config("density floor must be positive".into()));
        }
        Ok(())
    }
}

/// A conditional kernel together with the conditioning marginal and the
/// bandwidth that produced it.
#[derive(Debug, Clone)]
pub struct ConditionalEstimate {
    pub conditional: KernelGrid2D,
    pub marginal: DensityGrid1D,
    pub bandwidth: BandwidthSpec,
}

/// Estimates the kernel of `y` given `x` from the pairs `(x[i], y[i])`.
pub fn estimate_conditional(x: &[f64], y: &[f64], cfg: &EstimationConfig, fixed: Option<&BandwidthSpec>) -> Result<ConditionalEstimate> {
    let (joint, bandwidth) = adaptive_density_2d(x, y, &cfg.grid, &cfg.grid, cfg.alpha, fixed)?;
    let (conditional, marginal) = conditional_of_joint(&joint, cfg.floor)?;
    Ok(ConditionalEstimate {
        conditional,
        marginal,
        bandwidth,
    })
}

/// [`estimate_conditional`] on the `(x, y)` columns of a transition sample.
pub fn estimate_transition_kernel(sample: &TransitionSample, cfg: &EstimationConfig) -> Result<ConditionalEstimate> {
    estimate_conditional(sample.x(), sample.y(), cfg, None)
}
