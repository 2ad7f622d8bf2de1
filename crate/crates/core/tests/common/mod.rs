#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use distdyn::density::{estimate_conditional, DensityGrid1D, EstimationConfig, KernelGrid2D, KernelKind};
use distdyn::dynamics::{compose, push_forward};
use distdyn::{achieved_significance, divergences, Grid1D, Metric};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Long-format panel of `countries` economies over 1970-2019. Log income
/// follows an AR(1) around one of two club means, which gives a bimodal
/// cross-section.
pub fn write_panel(path: &Path, countries: usize, seed: u64) {
    let mut rng = distdyn::RngContract::new(seed).stream(0);
    let eps = Normal::new(0.0, 0.08).unwrap();
    let mut f = std::fs::File::create(path).unwrap();
    writeln!(f, "country,year,value").unwrap();
    for c in 0..countries {
        let club: f64 = if c % 3 == 0 { 9.5 } else { 7.5 };
        let mut v = club + rng.gen_range(-0.5..0.5);
        for year in 1970..=2019 {
            v = club + 0.9 * (v - club) + eps.sample(&mut rng);
            writeln!(f, "C{c:03},{year},{}", v.exp()).unwrap();
        }
    }
}

// --- random small instances ------------------------------------------------

/// Grid size plus raw positive cell values for one kernel.
pub fn raw_kernel(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..10.0, m * m)
}

pub fn grid(m: usize) -> Grid1D {
    Grid1D::new(-1.0, 1.0, m).unwrap()
}

/// Conditional kernel from raw values, each row scaled to unit trapezoid
/// mass.
pub fn kernel(m: usize, raw: &[f64]) -> KernelGrid2D {
    let g = grid(m);
    let mut values = raw.to_vec();
    for row in values.chunks_mut(m) {
        let mass = g.trapezoid(row);
        row.iter_mut().for_each(|v| *v /= mass);
    }
    KernelGrid2D::new(g, g, values, KernelKind::Conditional, vec![false; m]).unwrap()
}

pub fn density(m: usize, raw: &[f64]) -> DensityGrid1D {
    DensityGrid1D::new(grid(m), raw.to_vec()).unwrap().normalized().unwrap()
}

pub fn metric_axioms(m: usize, a: &[f64], b: &[f64], w: &[f64]) -> Result<(), TestCaseError> {
    let (ka, kb, w) = (kernel(m, a), kernel(m, b), density(m, w));
    let ab = divergences(&ka, &kb, &w, 1e-8, &Metric::ALL).unwrap();
    let ba = divergences(&kb, &ka, &w, 1e-8, &Metric::ALL).unwrap();
    let aa = divergences(&ka, &ka, &w, 1e-8, &Metric::ALL).unwrap();
    for k in 0..Metric::ALL.len() {
        prop_assert!((ab[k] - ba[k]).abs() <= 1e-12 * (1.0 + ab[k]), "{:?} not symmetric", Metric::ALL[k]);
        prop_assert_eq!(aa[k], 0.0);
        prop_assert!(ab[k] >= 0.0);
    }
    prop_assert!(ab[0] <= 2.0 + 1e-12, "L1 {} above 2", ab[0]);
    prop_assert!(ab[3] <= 1.0 + 1e-12, "H {} above 1", ab[3]);
    Ok(())
}

pub fn conditional_rows_normalized(x: &[f64], y: &[f64], alpha: f64) -> Result<(), TestCaseError> {
    let cfg = EstimationConfig::new(Grid1D::new(-3.0, 3.0, 25).unwrap(), alpha);
    let e = estimate_conditional(x, y, &cfg, None).unwrap();
    let k = &e.conditional;
    for i in 0..k.rows() {
        let mass = k.grid_y().trapezoid(k.row(i));
        if k.is_flagged(i) {
            prop_assert_eq!(mass, 0.0);
        } else {
            prop_assert!((mass - 1.0).abs() < 1e-9, "row {} has mass {}", i, mass);
        }
    }
    Ok(())
}

pub fn push_forward_conserves_mass(m: usize, k: &[f64], f: &[f64]) -> Result<(), TestCaseError> {
    let g = grid(m);
    let out = push_forward(&kernel(m, k), &density(m, f)).unwrap();
    prop_assert!((g.trapezoid(&out.values) - 1.0).abs() < 1e-12);
    prop_assert!(out.values.iter().all(|v| *v >= 0.0));
    // The same mixture computed directly, without renormalization.
    let (kk, ff, w) = (kernel(m, k), density(m, f), g.trapezoid_weights());
    for j in 0..m {
        let direct: f64 = (0..m).map(|i| w[i] * ff.values[i] * kk.value(i, j)).sum();
        prop_assert!((direct - out.values[j]).abs() < 1e-10);
    }
    Ok(())
}

pub fn compose_associative(m: usize, a: &[f64], b: &[f64], c: &[f64]) -> Result<(), TestCaseError> {
    let (a, b, c) = (kernel(m, a), kernel(m, b), kernel(m, c));
    let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
    let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
    for (l, r) in left.values().iter().zip(right.values()) {
        prop_assert!((l - r).abs() <= 1e-6, "{} vs {}", l, r);
    }
    Ok(())
}

pub fn asl_strict(observed: f64, draws: &[f64]) -> Result<(), TestCaseError> {
    let above = draws.iter().filter(|&&d| d > observed).count();
    prop_assert_eq!(achieved_significance(observed, draws), above as f64 / draws.len() as f64);
    // Ties never count as exceedances.
    let mut tied = draws.to_vec();
    tied.push(observed);
    prop_assert_eq!(achieved_significance(observed, &tied), above as f64 / tied.len() as f64);
    Ok(())
}

pub fn sample_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (10usize..60).prop_flat_map(|n| (prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n)))
}

pub fn sized_kernels(count: usize) -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (3usize..10).prop_flat_map(move |m| (Just(m), prop::collection::vec(raw_kernel(m), count)))
}

pub fn kernel_and_density() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (3usize..10).prop_flat_map(|m| (Just(m), raw_kernel(m), prop::collection::vec(0.01f64..10.0, m)))
}

pub fn kernels_and_weight() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (3usize..10).prop_flat_map(|m| (Just(m), raw_kernel(m), raw_kernel(m), prop::collection::vec(0.01f64..10.0, m)))
}

pub fn draws() -> impl Strategy<Value = (f64, Vec<f64>)> {
    (0.0f64..1.0, prop::collection::vec(0.0f64..1.0, 1..300))
}
