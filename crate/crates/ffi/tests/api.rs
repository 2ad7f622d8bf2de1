use std::ffi::{CStr, CString};
use std::io::Write;
use std::ptr;

use distdyn::density::{estimate_conditional, EstimationConfig};
use distdyn::hypothesis::{test_first_order, test_homogeneity, TestConfig};
use distdyn::montecarlo::{simulate_homogeneity, simulate_order, HomogeneityDgp, OrderDgp};
use distdyn::panel::TransitionSample;
use distdyn::{Grid1D, Metric, RngContract};
use distdyn_ffi::*;

fn est() -> DdEstimation {
    DdEstimation {
        lo: -0.8,
        hi: 0.8,
        points: 40,
        alpha: 0.0,
        floor: 1e-8,
    }
}

fn lib_est() -> EstimationConfig {
    EstimationConfig {
        grid: Grid1D::new(-0.8, 0.8, 40).unwrap(),
        alpha: 0.0,
        floor: 1e-8,
    }
}

fn pairs(seed: u64, n: usize) -> (TransitionSample, TransitionSample) {
    simulate_homogeneity(&HomogeneityDgp::new(0.5, 0.0, n), &mut RngContract::new(seed).stream(0)).unwrap()
}

fn to_handle(s: &TransitionSample) -> *mut DdSample {
    let mut h = ptr::null_mut();
    let z = s.z().map_or(ptr::null(), |z| z.as_ptr());
    let st = unsafe { dd_sample_from_arrays(s.x().as_ptr(), s.y().as_ptr(), z, s.len(), s.tau(), &mut h) };
    assert_eq!(st, DdStatus::Ok);
    h
}

fn last_error() -> String {
    let p = dd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn kernel_matches_library() {
    let (s, _) = pairs(3, 300);
    let lib = estimate_conditional(s.x(), s.y(), &lib_est(), None).unwrap();
    let h = to_handle(&s);
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(dd_kernel_estimate(h, &est(), &mut k), DdStatus::Ok);
        assert_eq!(dd_kernel_points(k), 40);
        let mut vals = vec![0.0; 1600];
        assert_eq!(dd_kernel_values(k, vals.as_mut_ptr(), vals.len()), DdStatus::Ok);
        assert_eq!(vals, lib.conditional.values());
        let mut m = vec![0.0; 40];
        assert_eq!(dd_kernel_marginal(k, m.as_mut_ptr(), m.len()), DdStatus::Ok);
        assert_eq!(m, lib.marginal.values);
        dd_kernel_free(k);
        dd_sample_free(h);
    }
}

#[test]
fn short_buffer_is_config_error() {
    let (s, _) = pairs(4, 100);
    let h = to_handle(&s);
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(dd_kernel_estimate(h, &est(), &mut k), DdStatus::Ok);
        let mut vals = vec![0.0; 10];
        assert_eq!(dd_kernel_values(k, vals.as_mut_ptr(), vals.len()), DdStatus::Config);
        assert!(last_error().contains("need 1600"));
        dd_kernel_free(k);
        dd_sample_free(h);
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut k = ptr::null_mut();
    unsafe {
        assert_eq!(dd_kernel_estimate(ptr::null(), &est(), &mut k), DdStatus::NullPointer);
        assert!(last_error().contains("sample"));
        assert!(k.is_null());
        assert_eq!(dd_sample_len(ptr::null()), 0);
        dd_sample_free(ptr::null_mut());
        dd_kernel_free(ptr::null_mut());
        dd_density_free(ptr::null_mut());
        dd_panel_free(ptr::null_mut());
    }
}

#[test]
fn invalid_grid_is_config_error() {
    let (s, _) = pairs(5, 100);
    let h = to_handle(&s);
    let mut k = ptr::null_mut();
    let bad = DdEstimation {
        lo: 1.0,
        hi: -1.0,
        ..est()
    };
    unsafe {
        assert_eq!(dd_kernel_estimate(h, &bad, &mut k), DdStatus::Config);
        assert!(k.is_null());
        dd_sample_free(h);
    }
}

#[test]
fn mismatched_lengths_need_z_only_for_triples() {
    let x = [0.1, 0.2, 0.3];
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            dd_sample_from_arrays(x.as_ptr(), x.as_ptr(), ptr::null(), 3, 1, &mut h),
            DdStatus::Ok
        );
        assert_eq!(dd_sample_len(h), 3);
        dd_sample_free(h);
        assert_eq!(
            dd_sample_from_arrays(x.as_ptr(), ptr::null(), ptr::null(), 3, 1, &mut h),
            DdStatus::NullPointer
        );
    }
}

#[test]
fn divergence_of_kernel_with_itself_is_zero() {
    let (s, t) = pairs(6, 300);
    let (hs, ht) = (to_handle(&s), to_handle(&t));
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(dd_kernel_estimate(hs, &est(), &mut a), DdStatus::Ok);
        assert_eq!(dd_kernel_estimate(ht, &est(), &mut b), DdStatus::Ok);
        for m in [DdMetric::L1, DdMetric::L2, DdMetric::Linf, DdMetric::Hellinger] {
            let mut d = -1.0;
            assert_eq!(dd_divergence(a, a, ptr::null(), m, 1e-8, &mut d), DdStatus::Ok);
            assert_eq!(d, 0.0);
            assert_eq!(dd_divergence(a, b, ptr::null(), m, 1e-8, &mut d), DdStatus::Ok);
            assert!(d > 0.0);
        }
        let w = vec![1.0 / 1.6; 40];
        let mut d = 0.0;
        assert_eq!(dd_divergence(a, b, w.as_ptr(), DdMetric::L1, 1e-8, &mut d), DdStatus::Ok);
        assert!(d > 0.0);
        dd_kernel_free(a);
        dd_kernel_free(b);
        dd_sample_free(hs);
        dd_sample_free(ht);
    }
}

#[test]
fn ergodic_density_integrates_to_one() {
    let (s, _) = pairs(7, 400);
    let h = to_handle(&s);
    let (mut k, mut k2, mut d) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(dd_kernel_estimate(h, &est(), &mut k), DdStatus::Ok);
        assert_eq!(dd_kernel_compose(k, k, &mut k2), DdStatus::Ok);
        assert_eq!(dd_ergodic(k, 0.0, 0, &mut d), DdStatus::Ok);
        let n = dd_density_len(d);
        assert_eq!(n, 40);
        let mut v = vec![0.0; n];
        assert_eq!(dd_density_values(d, v.as_mut_ptr(), n), DdStatus::Ok);
        let g = Grid1D::new(-0.8, 0.8, 40).unwrap();
        assert!((g.trapezoid(&v) - 1.0).abs() < 1e-9);
        let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(dd_density_bands(d, lo.as_mut_ptr(), hi.as_mut_ptr(), n), DdStatus::Config);
        dd_density_free(d);
        dd_kernel_free(k);
        dd_kernel_free(k2);
        dd_sample_free(h);
    }
}

#[test]
fn bands_bracket_the_estimate() {
    let (s, _) = pairs(8, 200);
    let h = to_handle(&s);
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(dd_ergodic_bands(h, &est(), 100, 0.9, 11, &mut d), DdStatus::Ok);
        let n = dd_density_len(d);
        let (mut v, mut lo, mut hi) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        assert_eq!(dd_density_values(d, v.as_mut_ptr(), n), DdStatus::Ok);
        assert_eq!(dd_density_bands(d, lo.as_mut_ptr(), hi.as_mut_ptr(), n), DdStatus::Ok);
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h));
        dd_density_free(d);
        dd_sample_free(h);
    }
}

#[test]
fn tests_match_library() {
    let (s, t) = pairs(9, 150);
    let cfg = TestConfig::new(lib_est(), 100);
    let lib = test_homogeneity(&s, &t, Metric::L1, &RngContract::new(21), &cfg).unwrap();
    let (hs, ht) = (to_handle(&s), to_handle(&t));
    let mut r = DdTestResult::default();
    unsafe {
        assert_eq!(dd_test_homogeneity(hs, ht, DdMetric::L1, &est(), 100, 21, &mut r), DdStatus::Ok);
    }
    assert_eq!((r.observed, r.asl, r.replications, r.seed), (lib.observed, lib.asl, 100, 21));

    let tri = simulate_order(&OrderDgp::new(0.5, 0.0, 150), &mut RngContract::new(10).stream(0)).unwrap();
    let lib = test_first_order(&tri, Metric::Hellinger, &RngContract::new(22), &cfg).unwrap();
    let ht3 = to_handle(&tri);
    unsafe {
        assert_eq!(dd_test_first_order(ht3, DdMetric::Hellinger, &est(), 100, 22, &mut r), DdStatus::Ok);
        assert_eq!(dd_test_first_order(hs, DdMetric::L1, &est(), 100, 22, &mut r), DdStatus::Config);
        dd_sample_free(hs);
        dd_sample_free(ht);
        dd_sample_free(ht3);
    }
    assert_eq!(r.observed, lib.observed);
}

#[test]
fn too_few_replications_rejected() {
    let (s, t) = pairs(12, 100);
    let (hs, ht) = (to_handle(&s), to_handle(&t));
    let mut r = DdTestResult::default();
    unsafe {
        assert_eq!(dd_test_homogeneity(hs, ht, DdMetric::L1, &est(), 10, 1, &mut r), DdStatus::Config);
        dd_sample_free(hs);
        dd_sample_free(ht);
    }
}

#[test]
fn panel_round_trip() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "country,year,value").unwrap();
    for (c, base) in [("A", 1.0), ("B", 2.0), ("C", 4.0), ("D", 8.0)] {
        for y in 2000..2006 {
            writeln!(f, "{c},{y},{}", base * (1.0 + 0.01 * (y - 2000) as f64)).unwrap();
        }
    }
    let path = CString::new(f.path().to_str().unwrap()).unwrap();
    let (id, yr, val) = (c"country", c"year", c"value");
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(
            dd_panel_load(path.as_ptr(), id.as_ptr(), yr.as_ptr(), val.as_ptr(), &mut p),
            DdStatus::Ok
        );
        assert_eq!(dd_panel_n_countries(p), 4);
        let (mut a, mut b) = (0, 0);
        assert_eq!(dd_panel_years(p, &mut a, &mut b), DdStatus::Ok);
        assert_eq!((a, b), (2000, 2005));
        let mut s = ptr::null_mut();
        assert_eq!(dd_sample_from_panel(p, 2000, 2001, 2, 3, &mut s), DdStatus::Ok, "{}", last_error());
        assert_eq!(dd_sample_len(s), 8);
        dd_sample_free(s);
        assert_eq!(dd_sample_from_panel(p, 2000, 2002, 2, 3, &mut s), DdStatus::Data);
        dd_panel_free(p);

        let missing = c"/nonexistent/panel.csv";
        assert_eq!(
            dd_panel_load(missing.as_ptr(), id.as_ptr(), yr.as_ptr(), val.as_ptr(), &mut p),
            DdStatus::Io
        );
    }
}

#[test]
fn version_and_defaults() {
    let v = unsafe { CStr::from_ptr(dd_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let d = dd_estimation_default();
    assert_eq!((d.lo, d.hi, d.points, d.alpha, d.floor), (-1.0, 4.0, 100, 0.5, 1e-8));
}
