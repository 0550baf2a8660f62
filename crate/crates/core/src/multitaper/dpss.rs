//! Discrete prolate spheroidal (Slepian) sequences.
//!
//! The tapers are the eigenvectors of the symmetric tridiagonal matrix that
//! commutes with the sinc concentration kernel; eigenvalues of that matrix
//! order the tapers, and concentrations are evaluated separately against the
//! kernel itself.

use std::f64::consts::PI;

use super::MultitaperError;

/// A set of orthonormal tapers with their in-band energy concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct TaperSet {
    /// `tapers[k]` has unit energy.
    pub tapers: Vec<Vec<f64>>,
    /// Strictly decreasing, each in (0, 1).
    pub concentrations: Vec<f64>,
    pub half_bandwidth: f64,
}

impl TaperSet {
    pub fn len(&self) -> usize {
        self.tapers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tapers.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.tapers.first().map_or(0, Vec::len)
    }
}

const MAX_QL_ITERATIONS: usize = 60;

/// Eigen-decomposition of a symmetric tridiagonal matrix by the implicit QL
/// method. `diag` receives the eigenvalues; the returned rows are the
/// eigenvectors, `rows[i]` belonging to `diag[i]`.
fn tridiagonal_eigen(diag: &mut [f64], offdiag: &[f64]) -> Result<Vec<Vec<f64>>, MultitaperError> {
    let n = diag.len();
    assert_eq!(offdiag.len() + 1, n.max(1));
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(offdiag);
    let d = diag;
    let mut z: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row
        })
        .collect();

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() + dd == dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_ITERATIONS {
                return Err(MultitaperError::EigenFailure { index: l });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let (lo, hi) = z.split_at_mut(i + 1);
                let (zi, zi1) = (&mut lo[i], &mut hi[0]);
                for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                    let f = *b;
                    *b = s * *a + c * f;
                    *a = c * *a - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(z)
}

/// Fraction of a unit-energy sequence's energy inside `[-w, w]`, i.e.
/// `vᵀ A v` with the sinc kernel `A[t,t'] = sin(2πw(t−t'))/(π(t−t'))`,
/// evaluated through the autocorrelation of `v`.
pub fn concentration(v: &[f64], w: f64) -> f64 {
    let n = v.len();
    let mut total = 2.0 * w * v.iter().map(|x| x * x).sum::<f64>();
    for lag in 1..n {
        let acf: f64 = v[..n - lag].iter().zip(&v[lag..]).map(|(a, b)| a * b).sum();
        total += 2.0 * acf * (2.0 * PI * w * lag as f64).sin() / (PI * lag as f64);
    }
    total
}

/// Symmetric tapers get a positive sum; antisymmetric tapers a positive
/// first significant sample.
fn fix_sign(k: usize, v: &mut [f64]) {
    let flip = if k % 2 == 0 {
        v.iter().sum::<f64>() < 0.0
    } else {
        let threshold = (1.0 / v.len() as f64).max(1e-7);
        v.iter().find(|x| x.abs() > threshold).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Compute the `count` most concentrated DPSS tapers of length `n` for
/// normalized half-bandwidth `w_bin` (cycles per sample).
pub fn compute_dpss(n: usize, w_bin: f64, count: usize) -> Result<TaperSet, MultitaperError> {
    if !(w_bin > 0.0 && w_bin < 0.5) {
        return Err(MultitaperError::InvalidBandwidth(format!(
            "normalized half-bandwidth {w_bin} outside (0, 0.5)"
        )));
    }
    if count == 0 || count > n || count as f64 > 2.0 * n as f64 * w_bin + 1e-9 {
        return Err(MultitaperError::InvalidBandwidth(format!(
            "{count} tapers requested but 2·N·W = {}",
            2.0 * n as f64 * w_bin
        )));
    }

    let half = (n as f64 - 1.0) / 2.0;
    let cos_w = (2.0 * PI * w_bin).cos();
    let mut diag: Vec<f64> = (0..n).map(|t| (half - t as f64).powi(2) * cos_w).collect();
    let offdiag: Vec<f64> = (1..n).map(|t| (t * (n - t)) as f64 / 2.0).collect();
    let vectors = tridiagonal_eigen(&mut diag, &offdiag)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));

    let mut tapers = Vec::with_capacity(count);
    let mut concentrations = Vec::with_capacity(count);
    for (k, &idx) in order.iter().take(count).enumerate() {
        let mut v = vectors[idx].clone();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        fix_sign(k, &mut v);
        concentrations.push(concentration(&v, w_bin));
        tapers.push(v);
    }
    Ok(TaperSet {
        tapers,
        concentrations,
        half_bandwidth: w_bin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_tridiagonal_matches_closed_form() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let mut d = vec![2.0, 2.0];
        let z = tridiagonal_eigen(&mut d, &[1.0]).unwrap();
        let mut ev = d.clone();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        for (i, row) in z.iter().enumerate() {
            let av0 = 2.0 * row[0] + row[1];
            assert!((av0 - d[i] * row[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_and_sign_convention() {
        let set = compute_dpss(300, 3.0 / 300.0, 5).unwrap();
        for (k, v) in set.tapers.iter().enumerate() {
            let parity = if k % 2 == 0 { 1.0 } else { -1.0 };
            for t in 0..v.len() {
                assert!((v[v.len() - 1 - t] - parity * v[t]).abs() < 1e-10, "taper {k} t {t}");
            }
        }
        assert!(set.tapers[0].iter().sum::<f64>() > 0.0);
        assert!(set.tapers[1][0..150].iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(compute_dpss(100, 0.0, 1).is_err());
        assert!(compute_dpss(100, 0.5, 1).is_err());
        assert!(compute_dpss(100, 0.02, 5).is_err());
        assert!(compute_dpss(100, 0.02, 0).is_err());
    }

    #[test]
    fn two_sample_taper_is_the_even_pair() {
        let set = compute_dpss(2, 0.25, 1).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((set.tapers[0][0] - h).abs() < 1e-15 && (set.tapers[0][1] - h).abs() < 1e-15);
    }
}
