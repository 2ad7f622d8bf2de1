//! Weighted distances between two conditional kernels.
//!
//! For `p ∈ {1, 2}` the distance is `[∬ |f1 − f2|^p ω(x) dy dx]^(1/p)`, the
//! Hellinger distance is `{½ ∬ (√f1 − √f2)² ω(x) dy dx}^(1/2)` and `L∞` is the
//! unweighted supremum of `|f1 − f2|` over rows whose weight exceeds the
//! density floor. Rows flagged in either kernel are dropped and the weight is
//! renormalized over the rest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::{DensityGrid1D, KernelGrid2D, KernelKind, DEFAULT_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum Metric {
    L1,
    L2,
    Linf,
    Hellinger,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::L1, Metric::L2, Metric::Linf, Metric::Hellinger];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::L1 => "L1",
            Metric::L2 => "L2",
            Metric::Linf => "Linf",
            Metric::Hellinger => "H",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Metric> for &'static str {
    fn from(m: Metric) -> Self {
        m.name()
    }
}

impl TryFrom<String> for Metric {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "linf" | "l-inf" | "sup" => Ok(Metric::Linf),
            "h" | "hellinger" => Ok(Metric::Hellinger),
            other => Err(Error::Config(format!("unknown metric {other:?} (expected L1, L2, Linf or H)"))),
        }
    }
}

/// Metric plus weight function `ω(x)`, normalized to unit mass on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSpec {
    metric: Metric,
    weight: DensityGrid1D,
    floor: f64,
}

impl DivergenceSpec {
    /// Normalizes `weight`; fails if it is negative somewhere or has no mass.
    pub fn new(metric: Metric, weight: &DensityGrid1D) -> Result<Self> {
        if weight.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Numerical("divergence weight must be nonnegative".into()));
        }
        Ok(DivergenceSpec {
            metric,
            weight: weight.normalized()?,
            floor: DEFAULT_FLOOR,
        })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn weight(&self) -> &DensityGrid1D {
        &self.weight
    }
}

fn check_pair(f1: &KernelGrid2D, f2: &KernelGrid2D, weight: &DensityGrid1D) -> Result<()> {
    if f1.kind() != KernelKind::Conditional || f2.kind() != KernelKind::Conditional {
        return Err(Error::Config("divergence requires conditional kernels".into()));
    }
    if f1.grid_x() != f2.grid_x() || f1.grid_y() != f2.grid_y() || &weight.grid != f1.grid_x() {
        return Err(Error::GridMismatch("kernels and weight must share grids".into()));
    }
    Ok(())
}

/// Effective row weights: trapezoid weight × ω, zero on excluded rows,
/// renormalized to sum to one.
fn row_weights(f1: &KernelGrid2D, f2: &KernelGrid2D, weight: &DensityGrid1D) -> Result<Vec<f64>> {
    let tw = weight.grid.trapezoid_weights();
    let mut w: Vec<f64> = (0..f1.rows())
        .map(|i| {
            if f1.is_flagged(i) || f2.is_flagged(i) {
                0.0
            } else {
                tw[i] * weight.values[i]
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("every row is excluded from the divergence".into()));
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Distance between `f1` and `f2` under `spec`.
pub fn divergence(f1: &KernelGrid2D, f2: &KernelGrid2D, spec: &DivergenceSpec) -> Result<f64> {
    Ok(divergences(f1, f2, &spec.weight, spec.floor, &[spec.metric])?[0])
}

/// Several metrics over the same pair in one pass. `weight` need not be
/// normalized.
pub fn divergences(f1: &KernelGrid2D, f2: &KernelGrid2D, weight: &DensityGrid1D, floor: f64, metrics: &[Metric]) -> Result<Vec<f64>> {
    check_pair(f1, f2, weight)?;
    let w = row_weights(f1, f2, weight)?;
    let tw = weight.grid.trapezoid_weights();
    let gy = f1.grid_y();
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut hel = 0.0;
    let mut sup: f64 = 0.0;
    let mut sup_rows = 0usize;
    let mut buf = vec![0.0; f1.cols()];
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let (r1, r2) = (f1.row(i), f2.row(i));
        for (b, (a, c)) in buf.iter_mut().zip(r1.iter().zip(r2)) {
            *b = (a - c).abs();
        }
        l1 += wi * gy.trapezoid(&buf);
        // wi / tw[i] is the renormalized weight density at x_i.
        if wi / tw[i] > floor {
            sup = buf.iter().cloned().fold(sup, f64::max);
            sup_rows += 1;
        }
        buf.iter_mut().for_each(|b| *b *= *b);
        l2 += wi * gy.trapezoid(&buf);
        for (b, (a, c)) in buf.iter_mut().zip(r1.iter().zip(r2)) {
            let d = a.sqrt() - c.sqrt();
            *b = d * d;
        }
        hel += wi * gy.trapezoid(&buf);
    }
    metrics
        .iter()
        .map(|m| match m {
            Metric::L1 => Ok(l1),
            Metric::L2 => Ok(l2.sqrt()),
            Metric::Hellinger => Ok((0.5 * hel).sqrt()),
            Metric::Linf if sup_rows == 0 => Err(Error::Numerical("no row has weight above the density floor".into())),
            Metric::Linf => Ok(sup),
        })
        .collect()
}
