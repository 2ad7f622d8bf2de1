//! Equally spaced evaluation grids and trapezoid quadrature.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An equally spaced grid of `m >= 2` points covering `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    m: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    lo: f64,
    hi: f64,
    m: usize,
}

impl TryFrom<GridRepr> for Grid1D {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        Grid1D::new(r.lo, r.hi, r.m)
    }
}

impl From<Grid1D> for GridRepr {
    fn from(g: Grid1D) -> Self {
        GridRepr {
            lo: g.lo,
            hi: g.hi,
            m: g.m,
        }
    }
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Grid(format!("need at least 2 points, got {m}")));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::Grid(format!("range [{lo}, {hi}] is empty or not finite")));
        }
        Ok(Grid1D { lo, hi, m })
    }

    /// Symmetric grid `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, m: usize) -> Result<Self> {
        Grid1D::new(-half_width, half_width, m)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.m - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.m {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weights: `step` at interior points, `step / 2` at the ends.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.m];
        w[0] = 0.5 * h;
        w[self.m - 1] = 0.5 * h;
        w
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.m);
        let inner: f64 = values[1..self.m - 1].iter().sum();
        self.step() * (inner + 0.5 * (values[0] + values[self.m - 1]))
    }

    /// Index of the grid point closest to `x`; values outside the range clamp
    /// to the end points.
    pub fn nearest_index(&self, x: f64) -> usize {
        if x <= self.lo {
            return 0;
        }
        if x >= self.hi {
            return self.m - 1;
        }
        let i = ((x - self.lo) / self.step()).round() as usize;
        i.min(self.m - 1)
    }

    /// Linear interpolation of grid values at `x`; zero outside the range.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        if !(self.lo..=self.hi).contains(&x) {
            return 0.0;
        }
        let pos = (x - self.lo) / self.step();
        let i = (pos.floor() as usize).min(self.m - 2);
        let frac = pos - i as f64;
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }

    /// Grid with the same range and `2m - 1` points (every step halved).
    pub fn refined(&self) -> Grid1D {
        Grid1D {
            lo: self.lo,
            hi: self.hi,
            m: 2 * self.m - 1,
        }
    }
}

impl fmt::Display for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.m)
    }
}

/// Parses `lo:hi:m`, e.g. `-1:4:100`.
impl FromStr for Grid1D {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Grid(format!("expected lo:hi:m, got {s:?}")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Grid(format!("cannot parse {p:?} in {s:?}")))
        };
        let m = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Grid(format!("cannot parse point count in {s:?}")))?;
        Grid1D::new(num(parts[0])?, num(parts[1])?, m)
    }
}
