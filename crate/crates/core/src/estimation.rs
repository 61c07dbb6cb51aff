//! Parameter recovery from coincidence counts.
//!
//! Efficiencies come from Klyshko-style ratios at the lowest powers, μ from
//! inverting the threshold threefold probability per setting, and the tree
//! depth from a Poisson-weighted least-squares fit of the single-photon-bin
//! herald rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsi::SchmidtSpectrum;
use crate::model::{p_idler, p_threefold, Detection, ModelParams};
use crate::numeric::{bisect_log, golden_section};
use crate::tagstream::CountSummary;

/// Settings used by [`estimate_efficiencies`].
pub const EFFICIENCY_SETTINGS: usize = 4;

/// Above this implied mean pair number the Klyshko ratios are biased by
/// multi-pair emission beyond the percent level.
pub const KLYSHKO_MAX_MU: f64 = 0.02;

/// Search bracket of [`fit_mu`].
pub const FIT_MU_BRACKET: (f64, f64) = (1e-9, 20.0);

/// Search range of [`fit_tree_depth`].
pub const TREE_DEPTH_RANGE: (f64, f64) = (0.0, 12.0);

/// Count summaries ordered by increasing pump power.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SettingData {
    pub settings: Vec<CountSummary>,
}

impl SettingData {
    pub fn new(settings: Vec<CountSummary>) -> Self {
        Self { settings }
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }
}

impl From<Vec<CountSummary>> for SettingData {
    fn from(settings: Vec<CountSummary>) -> Self {
        Self { settings }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Standard error of the mean across settings.
    pub std_error: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std_error = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies {
    pub eta_i: Estimate,
    pub eta_s1: Estimate,
    pub eta_s2: Estimate,
    /// Largest `C_i / (pulses η_i)` among the settings used.
    pub max_implied_mu: f64,
    /// Set when `max_implied_mu` exceeds [`KLYSHKO_MAX_MU`].
    pub out_of_regime: bool,
}

impl Efficiencies {
    pub fn values(&self) -> [f64; 3] {
        [self.eta_i.value, self.eta_s1.value, self.eta_s2.value]
    }
}

fn nonzero(value: u64, what: &str, index: usize) -> Result<f64> {
    if value == 0 {
        return Err(Error::InsufficientData(format!(
            "setting {index}: {what} is zero"
        )));
    }
    Ok(value as f64)
}

/// Per setting: `η_i = C_is_j / C_s_j` averaged over both arms and
/// `η_s_j = 2 C_is_j / C_i`, then averaged over the four lowest settings.
pub fn estimate_efficiencies(data: &SettingData) -> Result<Efficiencies> {
    if data.len() < EFFICIENCY_SETTINGS {
        return Err(Error::InsufficientData(format!(
            "{} settings given, {EFFICIENCY_SETTINGS} required",
            data.len()
        )));
    }
    let mut eta_i = Vec::new();
    let mut eta_s1 = Vec::new();
    let mut eta_s2 = Vec::new();
    let mut max_implied_mu = 0.0f64;
    for (index, c) in data.settings.iter().take(EFFICIENCY_SETTINGS).enumerate() {
        let heralds = nonzero(c.c_i_total, "C_i", index)?;
        let s1 = nonzero(c.c_s1, "C_s1", index)?;
        let s2 = nonzero(c.c_s2, "C_s2", index)?;
        let pulses = nonzero(c.pulses, "pulse count", index)?;
        let is1 = c.c_is1 as f64;
        let is2 = c.c_is2 as f64;
        let idler = 0.5 * (is1 / s1 + is2 / s2);
        eta_i.push(idler);
        eta_s1.push(2.0 * is1 / heralds);
        eta_s2.push(2.0 * is2 / heralds);
        if idler > 0.0 {
            max_implied_mu = max_implied_mu.max(heralds / pulses / idler);
        }
    }
    Ok(Efficiencies {
        eta_i: Estimate::from_samples(&eta_i),
        eta_s1: Estimate::from_samples(&eta_s1),
        eta_s2: Estimate::from_samples(&eta_s2),
        max_implied_mu,
        out_of_regime: max_implied_mu > KLYSHKO_MAX_MU,
    })
}

/// Per setting, the μ at which the threshold threefold probability equals
/// `C_is1s2 / pulses`.
pub fn fit_mu(data: &SettingData, etas: [f64; 3], spectrum: &SchmidtSpectrum) -> Result<Vec<f64>> {
    let base = ModelParams {
        mu: 0.0,
        eta_i: etas[0],
        eta_s1: etas[1],
        eta_s2: etas[2],
        k: 0.0,
        spectrum: spectrum.clone(),
    }
    .with_detection(Detection::Threshold);
    base.validate()?;
    let (lo, hi) = FIT_MU_BRACKET;
    data.settings
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let pulses = nonzero(c.pulses, "pulse count", index)?;
            if c.c_is1s2 == 0 {
                return Ok(0.0);
            }
            let rate = c.c_is1s2 as f64 / pulses;
            bisect_log(|mu| p_threefold(&base.with_mu(mu)), rate, lo, hi, 1e-12)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFit {
    pub k: f64,
    /// Weighted sum of squared residuals at the optimum.
    pub residual: f64,
    /// Whether the objective sampled on the search range had a single local minimum.
    pub unimodal: bool,
}

/// Minimizes `Σ (C_single - pulses P_single(μ; k))² / max(C_single, 1)` over
/// `k` in [`TREE_DEPTH_RANGE`].
pub fn fit_tree_depth(
    data: &SettingData,
    mus: &[f64],
    eta_i: f64,
    spectrum: &SchmidtSpectrum,
) -> Result<DepthFit> {
    if mus.len() != data.len() {
        return Err(Error::InvalidParameter {
            name: "mus",
            reason: format!("{} values for {} settings", mus.len(), data.len()),
        });
    }
    if data.settings.iter().all(|c| c.c_i_single == 0) {
        return Err(Error::InsufficientData(
            "all single-photon-bin counts are zero".into(),
        ));
    }
    let base = ModelParams {
        mu: 0.0,
        eta_i,
        eta_s1: 0.0,
        eta_s2: 0.0,
        k: 0.0,
        spectrum: spectrum.clone(),
    };
    base.validate()?;
    for (index, c) in data.settings.iter().enumerate() {
        nonzero(c.pulses, "pulse count", index)?;
    }
    let objective = |k: f64| -> f64 {
        data.settings
            .iter()
            .zip(mus)
            .map(|(c, &mu)| {
                let params = ModelParams {
                    mu,
                    k,
                    ..base.clone()
                };
                let expected = c.pulses as f64 * p_idler(&params).unwrap_or(f64::NAN);
                let observed = c.c_i_single as f64;
                (observed - expected).powi(2) / observed.max(1.0)
            })
            .sum()
    };

    let (lo, hi) = TREE_DEPTH_RANGE;
    let steps = 120;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&k| objective(k)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "mus",
            reason: "model evaluation failed on the search range".into(),
        });
    }
    let local_minima = (0..values.len())
        .filter(|&i| {
            let left = i == 0 || values[i] < values[i - 1];
            let right = i + 1 == values.len() || values[i] <= values[i + 1];
            left && right
        })
        .count();
    let best = (0..values.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("non-empty grid");
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(steps)];
    let k = golden_section(objective, a, b, 1e-6);
    let (k, residual) = [(k, objective(k)), (lo, values[0])]
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    Ok(DepthFit {
        k,
        residual,
        unimodal: local_minima == 1,
    })
}

/// Expected counts of a setting, rounded. With a large `pulses` this is a
/// noise-free stand-in for measured data.
pub fn expected_counts(params: &ModelParams, pulses: u64) -> Result<CountSummary> {
    let threshold = crate::model::probabilities(&params.with_detection(Detection::Threshold))?;
    let pnr = crate::model::probabilities(params)?;
    let n = pulses as f64;
    let c = |p: f64| (p * n).round() as u64;
    let single = c(pnr.p_i);
    let total = c(threshold.p_i);
    Ok(CountSummary {
        pulses,
        c_i_single: single,
        c_i_multi: total.saturating_sub(single),
        c_i_total: total,
        c_s1: c(crate::model::p_signal(params, 1)?),
        c_s2: c(crate::model::p_signal(params, 2)?),
        c_is1: c(threshold.p_is1),
        c_is2: c(threshold.p_is2),
        c_is1s2: c(threshold.p_is1s2),
        c_is1_pnr: c(pnr.p_is1),
        c_is2_pnr: c(pnr.p_is2),
        c_is1s2_pnr: c(pnr.p_is1s2),
        orphans: 0,
    })
}
