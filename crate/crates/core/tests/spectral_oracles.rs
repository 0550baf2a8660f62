mod common;

use common::*;
use sleepvis::multitaper::{compute_dpss, concentration};

#[test]
fn default_tapers_against_the_dense_kernel() {
    let c = check_dpss();
    assert!(c.pass, "{}", c.line());
}

#[test]
fn longer_window_with_more_tapers() {
    let r = dpss_report(512, 4.0 / 512.0, 7);
    assert!(r.max_gram_err <= 1e-8, "{}", r.max_gram_err);
    assert!(r.max_concentration_err <= 1e-10);
    assert!(r.max_residual <= 1e-8, "{}", r.max_residual);
    assert!(r.concentrations.windows(2).all(|p| p[0] > p[1]));
}

#[test]
fn autocorrelation_concentration_equals_quadratic_form() {
    let set = compute_dpss(64, 0.05, 3).unwrap();
    let a = sinc_kernel(64, 0.05);
    for v in &set.tapers {
        let q: f64 = (0..64).map(|i| (0..64).map(|j| v[i] * a[i][j] * v[j]).sum::<f64>()).sum();
        assert!((q - concentration(v, 0.05)).abs() < 1e-12);
    }
}

#[test]
fn psd_against_single_taper_mean_and_naive_transform() {
    let c = check_spectral_oracle();
    assert!(c.pass, "{}", c.line());
}
