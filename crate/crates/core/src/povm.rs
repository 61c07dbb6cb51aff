//! Single-photon POVM element of the tree-modeled PNR detector.
//!
//! A photon survives with efficiency `η` and lands on one of `N = 2^k` ports
//! uniformly at random. The single-photon outcome fires when at least one
//! photon survives and all survivors share one port:
//!
//! `c_n = Σ_{m=1}^{n} C(n, m) η^m (1-η)^{n-m} N^{1-m}`.
//!
//! Two conventions are exposed. The raw coefficients above give the
//! discrimination efficiency [`eta_pnr`]; [`normalize_pi_one`] rescales them to
//! unit sum for display.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::numeric::binomial_pmf;

/// Default number of Fock coefficients reported.
pub const DEFAULT_N_MAX: usize = 12;

/// Tail tolerance used by [`eta_pnr`].
pub const ETA_PNR_TAIL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeDetector {
    /// Detection efficiency of the whole detector.
    pub eta: f64,
    /// Tree depth.
    pub k: f64,
}

impl TreeDetector {
    pub fn new(eta: f64, k: f64) -> Result<Self> {
        check_unit("eta", eta)?;
        check_non_negative("k", k)?;
        Ok(Self { eta, k })
    }

    pub fn ports(&self) -> f64 {
        self.k.exp2()
    }

    /// Raw coefficient `c_n`.
    pub fn coefficient(&self, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let inv_n = (-self.k).exp2();
        binomial_pmf(n, self.eta)
            .into_iter()
            .enumerate()
            .skip(1)
            .map(|(m, p)| p * inv_n.powi(m as i32 - 1))
            .sum()
    }

    /// `Σ_{n > n_max} c_n`, from the geometric closed form
    /// `c_n = N [(1 - η + η/N)^n - (1 - η)^n]`. Infinite for `k = 0`.
    pub fn tail_after(&self, n_max: usize) -> f64 {
        let n = self.ports();
        let q_port = 1.0 - self.eta + self.eta / n;
        let q_vac = 1.0 - self.eta;
        if q_port >= 1.0 {
            return f64::INFINITY;
        }
        let geometric = |q: f64| {
            if q == 0.0 {
                0.0
            } else {
                q.powi(n_max as i32 + 1) / (1.0 - q)
            }
        };
        n * (geometric(q_port) - geometric(q_vac))
    }
}

/// Diagonal Fock-basis coefficients `c_0..=c_n_max` of the single-photon outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovmElement {
    pub coeffs: Vec<f64>,
    /// True once rescaled to unit sum.
    pub normalized: bool,
}

impl PovmElement {
    pub fn ideal(n_max: usize) -> Self {
        let mut coeffs = vec![0.0; n_max + 1];
        if n_max >= 1 {
            coeffs[1] = 1.0;
        }
        Self {
            coeffs,
            normalized: true,
        }
    }

    pub fn n_max(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// `1 - ½ Σ_n |c_n - δ_{n1}|` over the stored coefficients.
    pub fn discrimination_efficiency(&self) -> f64 {
        let distance: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| if n == 1 { (1.0 - c).abs() } else { c.abs() })
            .sum();
        1.0 - 0.5 * distance
    }
}

pub fn pi_one_coefficients(detector: &TreeDetector, n_max: usize) -> Result<PovmElement> {
    if n_max < 6 {
        return Err(Error::InvalidParameter {
            name: "n_max",
            reason: format!("{n_max} is below the minimum of 6"),
        });
    }
    Ok(PovmElement {
        coeffs: (0..=n_max).map(|n| detector.coefficient(n)).collect(),
        normalized: false,
    })
}

/// Divides by `Σ_{n≥1} c_n` over the stored range.
pub fn normalize_pi_one(element: &PovmElement) -> Result<PovmElement> {
    let total: f64 = element.coeffs.iter().skip(1).sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "coeffs",
            reason: "element has no weight on n ≥ 1".into(),
        });
    }
    Ok(PovmElement {
        coeffs: element.coeffs.iter().map(|c| c / total).collect(),
        normalized: true,
    })
}

/// Single-photon discrimination efficiency from the raw coefficients,
/// `1 - ½ [(1 - c_1) + Σ_{n≥2} c_n]`, summed until the remaining tail is
/// below [`ETA_PNR_TAIL`].
pub fn eta_pnr(detector: &TreeDetector) -> Result<f64> {
    if detector.k <= 0.0 {
        return Err(Error::Divergent);
    }
    let mut n_max = DEFAULT_N_MAX;
    while detector.tail_after(n_max) > ETA_PNR_TAIL {
        n_max *= 2;
        if n_max > 1 << 24 {
            return Err(Error::Divergent);
        }
    }
    let element = pi_one_coefficients(detector, n_max)?;
    Ok(element.discrimination_efficiency())
}
