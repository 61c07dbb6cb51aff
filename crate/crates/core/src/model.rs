//! Closed-form click and coincidence probabilities of the heralded source.
//!
//! Each Schmidt mode `s` carries a two-mode squeezed vacuum with mean pair
//! number `λ_s μ`. Idler photons survive with `η_i` and are routed uniformly
//! over the `N = 2^k` ports of the detector tree; signal photons are split
//! 50:50 and detected with `η_s1` or `η_s2`. The herald event is "exactly one
//! tree port clicks".
//!
//! Every probability is a signed combination of products of the form
//! `∏_s 1 / (1 + λ_s μ (1 - q (1 - τ)))`. Evaluated literally (see
//! [`product_form`]) the signs cancel badly at small `μ` and large `k`, so
//! [`probabilities`] instead builds, per mode, the eight joint probabilities
//! of (idler: no photon | all photons in one given port) × (signal 1 on/off) ×
//! (signal 2 on/off) from exact positive differences, and folds them across
//! modes. Only sums and products of non-negative numbers remain.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::jsi::SchmidtSpectrum;
use crate::numeric::{bisect_log, compensated_sum, golden_section};

/// Largest tree depth accepted; `2^k` must stay finite.
pub const MAX_TREE_DEPTH: f64 = 1000.0;

/// Search bracket for [`mu_for_g2`].
pub const MU_BRACKET: (f64, f64) = (1e-8, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Total mean pair number per pulse, spread over modes as `λ_s μ`.
    pub mu: f64,
    pub eta_i: f64,
    pub eta_s1: f64,
    pub eta_s2: f64,
    /// Tree depth; real values are treated as an effective `N = 2^k`.
    pub k: f64,
    pub spectrum: SchmidtSpectrum,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        check_non_negative("mu", self.mu)?;
        check_unit("eta_i", self.eta_i)?;
        check_unit("eta_s1", self.eta_s1)?;
        check_unit("eta_s2", self.eta_s2)?;
        check_non_negative("k", self.k)?;
        if self.k > MAX_TREE_DEPTH {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("{} exceeds the supported depth {MAX_TREE_DEPTH}", self.k),
            });
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        Self { mu, ..self.clone() }
    }

    /// The same source seen through the given detector configuration.
    pub fn with_detection(&self, detection: Detection) -> Self {
        match detection {
            Detection::Threshold => Self {
                k: 0.0,
                ..self.clone()
            },
            Detection::Pnr => self.clone(),
        }
    }

    pub fn ports(&self) -> f64 {
        self.k.exp2()
    }
}

/// How the idler detector is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// Any click heralds (tree depth forced to 0).
    Threshold,
    /// Only the single-photon bin heralds (tree depth `k`).
    Pnr,
}

impl std::str::FromStr for Detection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "pnr" => Ok(Self::Pnr),
            other => Err(Error::InvalidParameter {
                name: "detection",
                reason: format!("`{other}` is not one of threshold, pnr"),
            }),
        }
    }
}

/// Herald, twofold and threefold probabilities per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySet {
    pub p_i: f64,
    pub p_is1: f64,
    pub p_is2: f64,
    pub p_is1s2: f64,
}

impl ProbabilitySet {
    pub const ZERO: Self = Self {
        p_i: 0.0,
        p_is1: 0.0,
        p_is2: 0.0,
        p_is1s2: 0.0,
    };

    pub fn g2(&self) -> Result<f64> {
        if self.p_is1 <= 0.0 {
            return Err(Error::UndefinedRatio { count: "p_is1" });
        }
        if self.p_is2 <= 0.0 {
            return Err(Error::UndefinedRatio { count: "p_is2" });
        }
        Ok(self.p_is1s2 * self.p_i / (self.p_is1 * self.p_is2))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            self.p_i - other.p_i,
            self.p_is1 - other.p_is1,
            self.p_is2 - other.p_is2,
            self.p_is1s2 - other.p_is1s2,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

/// Joint per-mode (or accumulated) probabilities indexed by
/// `[idler][signal 1][signal 2]`, idler 0 = no surviving photon, 1 = at least
/// one photon and all of them in the designated port.
type Joint = [[[f64; 2]; 2]; 2];

struct ModeTerms {
    v: f64,
    t1: f64,
    t2: f64,
    q_d: f64,
    q_a: f64,
    delta: f64,
}

impl ModeTerms {
    /// `1 + v (1 - q (1 - τ))`
    fn denom(&self, q: f64, one_minus_q: f64, tau: f64) -> f64 {
        1.0 + self.v * one_minus_q + self.v * q * tau
    }

    fn joint(&self, eta_i: f64, spread: f64) -> Joint {
        let Self {
            v,
            t1,
            t2,
            q_d,
            q_a,
            delta,
        } = *self;
        let t12 = t1 + t2;
        // Idler-vacuum projection: q = 1 - η_i.
        let dd = |tau: f64| self.denom(q_d, eta_i, tau);
        // Designated-port projection: q = 1 - η_i + η_i / N.
        let da = |tau: f64| self.denom(q_a, eta_i * spread, tau);
        // D_D(τ) - D_A(τ)
        let gap = |tau: f64| v * delta * (1.0 - tau);

        let (d0, d1, d2, d12) = (dd(0.0), dd(t1), dd(t2), dd(t12));
        let none_offoff = 1.0 / d12;
        let none_onoff = v * q_d * t1 / (d2 * d12);
        let none_offon = v * q_d * t2 / (d1 * d12);
        let none_onon = (v * q_d).powi(2) * t1 * t2 * (d0 + d12) / (d0 * d1 * d2 * d12);

        let (a0, a1, a2, a12) = (da(0.0), da(t1), da(t2), da(t12));
        let (e0, e1, e2, e12) = (gap(0.0), gap(t1), gap(t2), gap(t12));

        let port_offoff = e12 / (a12 * d12);
        // Difference of v q Δτ / (D(τa) D(τb)) between the two projections.
        let single = |dtau: f64, da_: f64, ea: f64, db_: f64, eb: f64| {
            let num = q_a * (da_ * eb + ea * db_ + ea * eb) + delta * da_ * db_;
            v * dtau * num / (da_ * db_ * (da_ + ea) * (db_ + eb))
        };
        let port_onoff = single(t1, a2, e2, a12, e12);
        let port_offon = single(t2, a1, e1, a12, e12);

        // 1/∏a - 1/∏(a+e), telescoped so every term is positive.
        let inv_gap3 = |f: [(f64, f64); 3]| {
            let [(x1, y1), (x2, y2), (x3, y3)] = f;
            let pa = x1 * x2 * x3;
            let pd = (x1 + y1) * (x2 + y2) * (x3 + y3);
            (y1 * x2 * x3 + (x1 + y1) * y2 * x3 + (x1 + y1) * (x2 + y2) * y3) / (pa * pd)
        };
        let g_a = 1.0 / (a1 * a2 * a12) + 1.0 / (a0 * a1 * a2);
        let g_gap =
            inv_gap3([(a1, e1), (a2, e2), (a12, e12)]) + inv_gap3([(a0, e0), (a1, e1), (a2, e2)]);
        let port_onon = v * v * t1 * t2 * (delta * (q_a + q_d) * g_a + q_d * q_d * g_gap);

        [
            [[none_offoff, none_offon], [none_onoff, none_onon]],
            [[port_offoff, port_offon], [port_onoff, port_onon]],
        ]
    }
}

fn fold(acc: &Joint, mode: &Joint) -> Joint {
    let mut out = [[[0.0; 2]; 2]; 2];
    for i1 in 0..2 {
        for a1 in 0..2 {
            for b1 in 0..2 {
                let x = acc[i1][a1][b1];
                if x == 0.0 {
                    continue;
                }
                for i2 in 0..2 {
                    for a2 in 0..2 {
                        for b2 in 0..2 {
                            out[i1 | i2][a1 | a2][b1 | b2] += x * mode[i2][a2][b2];
                        }
                    }
                }
            }
        }
    }
    out
}

/// All four probabilities for the configuration encoded by `params.k`.
pub fn probabilities(params: &ModelParams) -> Result<ProbabilitySet> {
    params.validate()?;
    if params.mu == 0.0 || params.eta_i == 0.0 {
        return Ok(ProbabilitySet::ZERO);
    }
    let inv_n = (-params.k).exp2();
    // 1 - 1/N without cancellation at small k.
    let spread = -(-params.k * std::f64::consts::LN_2).exp_m1();
    let delta = params.eta_i * inv_n;
    let mut acc: Joint = [[[0.0; 2]; 2]; 2];
    acc[0][0][0] = 1.0;
    for &lambda in params.spectrum.lambdas() {
        let terms = ModeTerms {
            v: lambda * params.mu,
            t1: 0.5 * params.eta_s1,
            t2: 0.5 * params.eta_s2,
            q_d: 1.0 - params.eta_i,
            q_a: 1.0 - params.eta_i * spread,
            delta,
        };
        acc = fold(&acc, &terms.joint(params.eta_i, spread));
    }
    let n = params.ports();
    let port = acc[1];
    Ok(ProbabilitySet {
        p_i: n * (port[0][0] + port[0][1] + port[1][0] + port[1][1]),
        p_is1: n * (port[1][0] + port[1][1]),
        p_is2: n * (port[0][1] + port[1][1]),
        p_is1s2: n * port[1][1],
    })
}

/// Probability that exactly one tree port clicks.
pub fn p_idler(params: &ModelParams) -> Result<f64> {
    Ok(probabilities(params)?.p_i)
}

/// Probability that the idler detector clicks at all, `1 - ∏ 1/(1 + λ μ η_i)`.
pub fn p_idler_threshold(params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let log_vacuum = -compensated_sum(
        params
            .spectrum
            .lambdas()
            .iter()
            .map(|l| (l * params.mu * params.eta_i).ln_1p()),
    );
    Ok(-log_vacuum.exp_m1())
}

/// Probability of the multi-photon bin: some click, but not exactly one port.
pub fn p_idler_multibin(params: &ModelParams) -> Result<f64> {
    Ok((p_idler_threshold(params)? - p_idler(params)?).max(0.0))
}

/// Probability that signal arm `which` (1 or 2) clicks, regardless of the idler.
pub fn p_signal(params: &ModelParams, which: u8) -> Result<f64> {
    params.validate()?;
    let eta = signal_eta(params, which)?;
    let log_off = -compensated_sum(
        params
            .spectrum
            .lambdas()
            .iter()
            .map(|l| (0.5 * l * params.mu * eta).ln_1p()),
    );
    Ok(-log_off.exp_m1())
}

fn signal_eta(params: &ModelParams, which: u8) -> Result<f64> {
    match which {
        1 => Ok(params.eta_s1),
        2 => Ok(params.eta_s2),
        _ => Err(Error::InvalidParameter {
            name: "which_signal",
            reason: format!("{which} is not 1 or 2"),
        }),
    }
}

pub fn p_twofold(params: &ModelParams, which: u8) -> Result<f64> {
    let p = probabilities(params)?;
    match which {
        1 => Ok(p.p_is1),
        2 => Ok(p.p_is2),
        _ => signal_eta(params, which),
    }
}

pub fn p_threefold(params: &ModelParams) -> Result<f64> {
    Ok(probabilities(params)?.p_is1s2)
}

/// Heralded cross-correlation `P_is1s2 P_i / (P_is1 P_is2)`.
pub fn g2(params: &ModelParams, detection: Detection) -> Result<f64> {
    probabilities(&params.with_detection(detection))?.g2()
}

/// Mean pair number at which g²(0) reaches `target`, searched on
/// [`MU_BRACKET`]. `params.mu` is ignored.
pub fn mu_for_g2(target: f64, params: &ModelParams, detection: Detection) -> Result<f64> {
    let (lo, hi) = MU_BRACKET;
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::NoRoot { target, lo, hi });
    }
    let base = params.with_detection(detection);
    bisect_log(
        |mu| probabilities(&base.with_mu(mu))?.g2(),
        target,
        lo,
        hi,
        1e-12,
    )
}

/// Largest `g²_threshold - g²_PNR` over `μ ∈ [mu_lo, mu_hi]`, as `(μ, gap)`.
/// Log-spaced scan, then golden-section refinement around the best point.
pub fn max_g2_reduction(params: &ModelParams, mu_lo: f64, mu_hi: f64) -> Result<(f64, f64)> {
    if !(mu_lo > 0.0 && mu_hi > mu_lo && mu_hi.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "mu range",
            reason: format!("[{mu_lo}, {mu_hi}] is not a positive interval"),
        });
    }
    let gap = |log_mu: f64| -> Result<f64> {
        let p = params.with_mu(log_mu.exp());
        Ok(g2(&p, Detection::Threshold)? - g2(&p, Detection::Pnr)?)
    };
    let (lo, hi) = (mu_lo.ln(), mu_hi.ln());
    let steps = 200;
    let h = (hi - lo) / steps as f64;
    let mut best = (lo, gap(lo)?);
    for i in 1..=steps {
        let x = lo + h * i as f64;
        let v = gap(x)?;
        if v > best.1 {
            best = (x, v);
        }
    }
    let a = (best.0 - h).max(lo);
    let b = (best.0 + h).min(hi);
    let x = golden_section(|x| -gap(x).unwrap_or(f64::NEG_INFINITY), a, b, 1e-10);
    let v = gap(x)?;
    Ok(if v >= best.1 {
        (x.exp(), v)
    } else {
        (best.0.exp(), best.1)
    })
}

/// Probability that at least one of `modes` independent multiplexed sources
/// succeeds, `1 - (1 - p)^modes`.
pub fn multiplexed_success(p_single: f64, modes: u32) -> Result<f64> {
    check_unit("p_single", p_single)?;
    if modes == 0 {
        return Err(Error::InvalidParameter {
            name: "modes",
            reason: "need at least one mode".into(),
        });
    }
    if p_single == 1.0 {
        return Ok(1.0);
    }
    Ok(-(modes as f64 * (-p_single).ln_1p()).exp_m1())
}

/// The printed product expressions, evaluated term by term in log domain.
///
/// Kept as an independent route for cross-checking [`probabilities`]. Each
/// probability is `N Σ ± (∏A(τ) - ∏D(τ))`, with `A` the designated-port and `D`
/// the idler-vacuum factor at signal weight `τ`. The `A - D` difference is
/// taken as `∏D · expm1(Σ log(D_s / A_s))`, the `τ` differences by compensated
/// summation.
pub mod product_form {
    use super::*;

    /// `N (∏_s A_s(τ) - ∏_s D_s(τ))` where `A_s = 1/(1 + v(1 - q_A(1-τ)))`.
    fn herald_term(params: &ModelParams, tau: f64) -> f64 {
        let n = params.ports();
        let inv_n = (-params.k).exp2();
        let spread = -(-params.k * std::f64::consts::LN_2).exp_m1();
        let mut log_d = Vec::with_capacity(params.spectrum.len());
        let mut log_ratio = Vec::with_capacity(params.spectrum.len());
        for &lambda in params.spectrum.lambdas() {
            let v = lambda * params.mu;
            // N / (N + (N-1) v η_i (1-τ) + N v τ) written as 1/(1 + x_A)
            let x_a = v * params.eta_i * spread * (1.0 - tau) + v * tau;
            let x_d = v * params.eta_i * (1.0 - tau) + v * tau;
            log_d.push(-x_d.ln_1p());
            log_ratio.push((v * params.eta_i * inv_n * (1.0 - tau) / (1.0 + x_a)).ln_1p());
        }
        n * compensated_sum(log_d).exp() * compensated_sum(log_ratio).exp_m1()
    }

    pub fn probabilities(params: &ModelParams) -> Result<ProbabilitySet> {
        params.validate()?;
        let (t1, t2) = (0.5 * params.eta_s1, 0.5 * params.eta_s2);
        let q0 = herald_term(params, 0.0);
        let q1 = herald_term(params, t1);
        let q2 = herald_term(params, t2);
        let q12 = herald_term(params, t1 + t2);
        Ok(ProbabilitySet {
            p_i: q0,
            p_is1: q0 - q1,
            p_is2: q0 - q2,
            p_is1s2: compensated_sum([q0, -q1, -q2, q12]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambdas: &[f64], mu: f64, etas: (f64, f64, f64), k: f64) -> ModelParams {
        ModelParams {
            mu,
            eta_i: etas.0,
            eta_s1: etas.1,
            eta_s2: etas.2,
            k,
            spectrum: SchmidtSpectrum::from_weights(lambdas).unwrap(),
        }
    }

    #[test]
    fn vacuum_gives_zero() {
        let p = params(&[0.7, 0.3], 0.0, (0.5, 0.3, 0.4), 2.0);
        assert_eq!(probabilities(&p).unwrap(), ProbabilitySet::ZERO);
        assert_eq!(p_idler_threshold(&p).unwrap(), 0.0);
        assert_eq!(p_idler_multibin(&p).unwrap(), 0.0);
        assert!(matches!(
            g2(&p, Detection::Pnr),
            Err(Error::UndefinedRatio { .. })
        ));
    }

    #[test]
    fn threshold_single_mode_examples() {
        let p = params(&[1.0], 0.1, (1.0, 0.5, 0.5), 0.0);
        assert!((p_idler(&p).unwrap() - (1.0 - 1.0 / 1.1)).abs() < 1e-15);
        let p = params(&[1.0], 2.0, (0.5, 0.5, 0.5), 0.0);
        assert!((p_idler_threshold(&p).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn blocked_signal_arm_gives_zero_coincidences() {
        let p = params(&[0.6, 0.4], 0.15, (0.4, 0.0, 0.3), 1.0);
        let probs = probabilities(&p).unwrap();
        assert_eq!(probs.p_is1, 0.0);
        assert_eq!(probs.p_is1s2, 0.0);
        assert!(probs.p_is2 > 0.0);
        assert!(g2(&p, Detection::Pnr).is_err());
        assert!(p_twofold(&p, 3).is_err());
    }

    #[test]
    fn product_form_agrees_with_fold() {
        for &k in &[0.0, 1.0, 2.55, 3.0, 7.0] {
            for &mu in &[1e-3, 0.05, 0.5, 2.0] {
                let p = params(&[0.5, 0.3, 0.2], mu, (0.33, 0.18, 0.22), k);
                let a = probabilities(&p).unwrap();
                let b = product_form::probabilities(&p).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-14, "k={k} mu={mu}: {a:?} vs {b:?}");
                assert!((a.p_is1s2 - b.p_is1s2).abs() <= 1e-9 * a.p_is1s2);
            }
        }
    }

    #[test]
    fn threefold_keeps_relative_accuracy_at_tiny_mu() {
        // Leading order: P3 ≈ μ² Σλ²... use the ratio at two tiny μ values,
        // which must scale as μ² to many digits.
        let p = params(&[0.5, 0.3, 0.2], 1e-6, (0.33, 0.18, 0.22), 2.55);
        let a = p_threefold(&p).unwrap();
        let b = p_threefold(&p.with_mu(2e-6)).unwrap();
        assert!((b / a - 4.0).abs() < 1e-4);
        assert!(a > 0.0);
    }

    #[test]
    fn deep_tree_is_stable() {
        let p = params(&[0.5, 0.3, 0.2], 0.05, (0.33, 0.18, 0.22), 60.0);
        let probs = probabilities(&p).unwrap();
        // At N = 2^60 the herald is "all surviving photons in one port", so
        // P_i tends to P(exactly one idler photon survives).
        let exact_one: f64 = {
            // Σ_s [a_s/(1+a_s)^2 ∏_{r≠s} 1/(1+a_r)] with a = λ μ η_i.
            let a: Vec<f64> = p
                .spectrum
                .lambdas()
                .iter()
                .map(|l| l * p.mu * p.eta_i)
                .collect();
            let vac: f64 = a.iter().map(|x| 1.0 / (1.0 + x)).product();
            a.iter().map(|x| vac * x / (1.0 + x)).sum()
        };
        assert!(
            (probs.p_i - exact_one).abs() < 1e-14,
            "{} vs {exact_one}",
            probs.p_i
        );
        assert!(probs.p_is1s2 > 0.0 && probs.p_is1s2.is_finite());
        let at_max = probabilities(&ModelParams {
            k: MAX_TREE_DEPTH,
            ..p.clone()
        })
        .unwrap();
        assert!((at_max.p_i - exact_one).abs() < 1e-14);
        assert!(probabilities(&ModelParams { k: 1e4, ..p }).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = params(&[1.0], 0.1, (1.2, 0.5, 0.5), 0.0);
        assert!(probabilities(&p).is_err());
        let p = params(&[1.0], -0.1, (0.2, 0.5, 0.5), 0.0);
        assert!(probabilities(&p).is_err());
        let p = params(&[1.0], 0.1, (0.2, 0.5, 0.5), -1.0);
        assert!(probabilities(&p).is_err());
    }

    #[test]
    fn multiplexing_examples() {
        assert_eq!(multiplexed_success(0.0, 61).unwrap(), 0.0);
        assert_eq!(multiplexed_success(1.0, 1).unwrap(), 1.0);
        let direct = 1.0 - 0.95f64.powi(61);
        let got = multiplexed_success(0.05, 61).unwrap();
        assert!((got - direct).abs() < 1e-14);
        assert!((got - 0.956_2).abs() < 1e-4);
        assert!(multiplexed_success(0.5, 0).is_err());
        assert!(multiplexed_success(1.5, 2).is_err());
    }

    #[test]
    fn mu_for_g2_rejects_unreachable_targets() {
        let p = params(&[1.0], 0.0, (0.87, 0.87, 0.87), 2.55);
        assert!(matches!(
            mu_for_g2(50.0, &p, Detection::Pnr),
            Err(Error::NoRoot { .. })
        ));
        assert!(mu_for_g2(0.0, &p, Detection::Pnr).is_err());
        assert!(mu_for_g2(1e-12, &p, Detection::Pnr).is_err());
    }

    #[test]
    fn detection_parses() {
        assert_eq!("pnr".parse::<Detection>().unwrap(), Detection::Pnr);
        assert_eq!(
            "threshold".parse::<Detection>().unwrap(),
            Detection::Threshold
        );
        assert!("other".parse::<Detection>().is_err());
    }
}
