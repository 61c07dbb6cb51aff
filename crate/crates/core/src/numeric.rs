//! Small numerical helpers shared by the model, oracle and estimators.

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Root of a monotone increasing function by bisection in log space.
///
/// `lo` and `hi` must be positive. Stops once the bracket is narrower than
/// `rel_tol` relative to its midpoint.
pub fn bisect_log<F>(mut f: F, target: f64, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    debug_assert!(lo > 0.0 && hi > lo);
    let f_lo = f(lo)? - target;
    let f_hi = f(hi)? - target;
    if f_lo > 0.0 || f_hi < 0.0 || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::NoRoot { target, lo, hi });
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..400 {
        let mid = 0.5 * (a + b);
        if f(mid.exp())? < target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < rel_tol {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Binomial probabilities `P(m; n, p)` for `m = 0..=n`.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[n] = 1.0;
        return out;
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut ln_c = 0.0;
    for (m, slot) in out.iter_mut().enumerate() {
        if m > 0 {
            ln_c += ((n - m + 1) as f64).ln() - (m as f64).ln();
        }
        *slot = (ln_c + m as f64 * ln_p + (n - m) as f64 * ln_q).exp();
    }
    out
}

/// Binomial coefficient as a float.
pub fn choose(n: usize, m: usize) -> f64 {
    if m > n {
        return 0.0;
    }
    let m = m.min(n - m);
    let mut c = 1.0;
    for j in 0..m {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1.0];
        values.extend(std::iter::repeat_n(1e-16, 10_000));
        values.push(-1.0);
        assert!((compensated_sum(values) - 1e-12).abs() < 1e-24);
    }

    #[test]
    fn bisect_finds_square_root() {
        let r = bisect_log(|x| Ok(x * x), 2.0, 1e-3, 10.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bisect_reports_missing_root() {
        let err = bisect_log(Ok, 20.0, 1e-3, 10.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::NoRoot { .. }));
    }

    #[test]
    fn golden_section_parabola() {
        let x = golden_section(|x| (x - 2.55).powi(2), 0.0, 12.0, 1e-9);
        assert!((x - 2.55).abs() < 1e-8);
    }

    #[test]
    fn binomial_rows_are_normalized() {
        for &(n, p) in &[(0, 0.3), (5, 0.5), (17, 0.71), (40, 1e-3)] {
            let row = binomial_pmf(n, p);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        }
        assert_eq!(binomial_pmf(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(binomial_pmf(3, 1.0), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(choose(6, 3), 20.0);
    }
}
