//! Joint spectral intensity (JSI) grids and their Schmidt decomposition.
//!
//! The synthetic source is a Gaussian pump envelope evaluated at the sum
//! frequency times a Gaussian phase-matching function of the difference
//! frequency, clipped by rectangular signal and idler filter passbands. The
//! Gaussian stands in for the sinc phase-matching profile at matched FWHM.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect_log;

/// Speed of light in nm·THz.
const C_NM_THZ: f64 = 299_792.458;
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

pub const DEFAULT_CUTOFF: f64 = 1e-6;

/// Phase-matching FWHM (nm) that puts the default source at K = 20.6.
/// Reproduce with [`calibrate_phasematch_bandwidth`].
pub const CALIBRATED_PHASEMATCH_BANDWIDTH_NM: f64 = 8.239_393_467;

/// Intensity sampled on a signal × idler wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JsiGrid {
    signal_axis: Vec<f64>,
    idler_axis: Vec<f64>,
    intensity: DMatrix<f64>,
}

impl JsiGrid {
    /// Validates axes and entries. The intensity is stored as given; call
    /// [`JsiGrid::normalized`] to scale it to unit integral.
    pub fn new(
        signal_axis: Vec<f64>,
        idler_axis: Vec<f64>,
        intensity: DMatrix<f64>,
    ) -> Result<Self> {
        check_axis("signal_axis", &signal_axis)?;
        check_axis("idler_axis", &idler_axis)?;
        if intensity.nrows() != signal_axis.len() || intensity.ncols() != idler_axis.len() {
            return Err(Error::Malformed(format!(
                "intensity is {}x{} but axes are {}x{}",
                intensity.nrows(),
                intensity.ncols(),
                signal_axis.len(),
                idler_axis.len()
            )));
        }
        if let Some(bad) = intensity.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Malformed(format!(
                "intensity entry {bad} is not a finite non-negative number"
            )));
        }
        Ok(Self {
            signal_axis,
            idler_axis,
            intensity,
        })
    }

    pub fn signal_axis(&self) -> &[f64] {
        &self.signal_axis
    }

    pub fn idler_axis(&self) -> &[f64] {
        &self.idler_axis
    }

    pub fn intensity(&self) -> &DMatrix<f64> {
        &self.intensity
    }

    /// Mean cell area in nm², from the axis extents.
    pub fn cell_area(&self) -> f64 {
        axis_step(&self.signal_axis) * axis_step(&self.idler_axis)
    }

    pub fn normalized(&self) -> Result<Self> {
        let total = self.intensity.sum() * self.cell_area();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::ZeroIntensity);
        }
        Ok(Self {
            signal_axis: self.signal_axis.clone(),
            idler_axis: self.idler_axis.clone(),
            intensity: &self.intensity / total,
        })
    }

    /// Swaps the roles of signal and idler.
    pub fn transposed(&self) -> Self {
        Self {
            signal_axis: self.idler_axis.clone(),
            idler_axis: self.signal_axis.clone(),
            intensity: self.intensity.transpose(),
        }
    }

    /// Writes the grid as CSV: the first row holds the idler axis, the first
    /// column the signal axis.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = String::from("signal_nm\\idler_nm");
        for x in &self.idler_axis {
            write!(line, ",{x:.9}").unwrap();
        }
        writeln!(out, "{line}")?;
        for (r, s) in self.signal_axis.iter().enumerate() {
            line.clear();
            write!(line, "{s:.9}").unwrap();
            for c in 0..self.idler_axis.len() {
                write!(line, ",{:.17e}", self.intensity[(r, c)]).unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("empty JSI file".into()))?
            .map_err(|e| Error::Malformed(e.to_string()))?;
        let idler_axis = header
            .split(',')
            .skip(1)
            .map(parse_field)
            .collect::<Result<Vec<_>>>()?;
        let mut signal_axis = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Malformed(e.to_string()))?;
            let mut fields = line.split(',');
            signal_axis.push(parse_field(fields.next().unwrap_or(""))?);
            let row = fields.map(parse_field).collect::<Result<Vec<_>>>()?;
            if row.len() != idler_axis.len() {
                return Err(Error::Malformed(format!(
                    "row {} has {} values, expected {}",
                    signal_axis.len(),
                    row.len(),
                    idler_axis.len()
                )));
            }
            values.extend(row);
        }
        let intensity = DMatrix::from_row_slice(signal_axis.len(), idler_axis.len(), &values);
        Self::new(signal_axis, idler_axis, intensity)
    }
}

fn parse_field(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Malformed(format!("`{s}` is not a number")))
}

fn check_axis(name: &'static str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidParameter {
            name,
            reason: "axis is empty".into(),
        });
    }
    if axis
        .windows(2)
        .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        || axis.iter().any(|x| !x.is_finite())
    {
        return Err(Error::InvalidParameter {
            name,
            reason: "axis must be finite and strictly ascending".into(),
        });
    }
    Ok(())
}

fn axis_step(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        1.0
    } else {
        (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
    }
}

/// Parameters of the synthetic source.
///
/// Bandwidths are intensity FWHM in nm: the pump at `pump_center_nm`, the
/// phase-matching function at the degenerate wavelength `2 * pump_center_nm`.
/// Both filter bands double as the grid extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsiParams {
    pub pump_center_nm: f64,
    pub pump_bandwidth_nm: f64,
    pub phasematch_bandwidth_nm: f64,
    pub signal_band_nm: (f64, f64),
    pub idler_band_nm: (f64, f64),
    pub grid_size: usize,
}

impl Default for JsiParams {
    fn default() -> Self {
        Self {
            pump_center_nm: 770.0,
            pump_bandwidth_nm: 0.05,
            phasematch_bandwidth_nm: CALIBRATED_PHASEMATCH_BANDWIDTH_NM,
            signal_band_nm: (1523.5, 1536.5),
            idler_band_nm: (1543.5, 1556.5),
            grid_size: 128,
        }
    }
}

impl JsiParams {
    /// Same filters and grid, with the phase-matching width matched to the
    /// pump width in frequency. The sum/difference Gaussians then factorize
    /// into signal × idler marginals.
    pub fn separable(self) -> Self {
        let pump_thz = bandwidth_thz(self.pump_bandwidth_nm, self.pump_center_nm);
        let degenerate = 2.0 * self.pump_center_nm;
        Self {
            phasematch_bandwidth_nm: pump_thz * degenerate * degenerate / C_NM_THZ,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pump_center_nm", self.pump_center_nm),
            ("pump_bandwidth_nm", self.pump_bandwidth_nm),
            ("phasematch_bandwidth_nm", self.phasematch_bandwidth_nm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("{v} must be positive and finite"),
                });
            }
        }
        if self.grid_size < 16 {
            return Err(Error::InvalidParameter {
                name: "grid_size",
                reason: format!("{} is below the minimum of 16", self.grid_size),
            });
        }
        for (name, (lo, hi)) in [
            ("signal", self.signal_band_nm),
            ("idler", self.idler_band_nm),
        ] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::InvalidBand(format!(
                    "{name} band [{lo}, {hi}] is empty or inverted"
                )));
            }
        }
        let (s, i) = (self.signal_band_nm, self.idler_band_nm);
        if s.0 < i.1 && i.0 < s.1 {
            return Err(Error::InvalidBand(format!(
                "signal band [{}, {}] overlaps idler band [{}, {}]",
                s.0, s.1, i.0, i.1
            )));
        }
        Ok(())
    }
}

fn bandwidth_thz(fwhm_nm: f64, center_nm: f64) -> f64 {
    C_NM_THZ * fwhm_nm / (center_nm * center_nm)
}

fn cell_centers((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n).map(|j| lo + (j as f64 + 0.5) * h).collect()
}

/// Builds a normalized JSI grid for the parametric source.
pub fn synthesize_jsi(params: &JsiParams) -> Result<JsiGrid> {
    params.validate()?;
    let n = params.grid_size;
    let signal_axis = cell_centers(params.signal_band_nm, n);
    let idler_axis = cell_centers(params.idler_band_nm, n);

    let pump_freq = C_NM_THZ / params.pump_center_nm;
    let pump_sigma =
        bandwidth_thz(params.pump_bandwidth_nm, params.pump_center_nm) / FWHM_PER_SIGMA;
    let pm_sigma =
        bandwidth_thz(params.phasematch_bandwidth_nm, 2.0 * params.pump_center_nm) / FWHM_PER_SIGMA;
    let band_mid = |(lo, hi): (f64, f64)| C_NM_THZ / (0.5 * (lo + hi));
    let detuning0 = band_mid(params.signal_band_nm) - band_mid(params.idler_band_nm);

    let intensity = DMatrix::from_fn(n, n, |r, c| {
        let fs = C_NM_THZ / signal_axis[r];
        let fi = C_NM_THZ / idler_axis[c];
        let sum = fs + fi - pump_freq;
        let diff = fs - fi - detuning0;
        (-(sum * sum) / (2.0 * pump_sigma * pump_sigma)
            - (diff * diff) / (2.0 * pm_sigma * pm_sigma))
            .exp()
    });
    JsiGrid::new(signal_axis, idler_axis, intensity)?.normalized()
}

/// Normalized Schmidt eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtSpectrum {
    lambdas: Vec<f64>,
}

impl SchmidtSpectrum {
    /// Normalizes non-negative weights into a spectrum. Zero weights are dropped.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "lambdas",
                reason: "weights must be finite and non-negative".into(),
            });
        }
        let mut lambdas: Vec<f64> = weights.iter().copied().filter(|w| *w > 0.0).collect();
        let total: f64 = lambdas.iter().sum();
        if lambdas.is_empty() || total <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "lambdas",
                reason: "spectrum needs at least one positive weight".into(),
            });
        }
        lambdas.sort_by(|a, b| b.total_cmp(a));
        lambdas.iter_mut().for_each(|l| *l /= total);
        Ok(Self { lambdas })
    }

    pub fn single_mode() -> Self {
        Self { lambdas: vec![1.0] }
    }

    pub fn uniform(modes: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; modes])
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Writes `index,lambda` rows below a `# schmidt_number=` comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# schmidt_number={:.12}", schmidt_number(self))?;
        writeln!(out, "index,lambda")?;
        for (j, l) in self.lambdas.iter().enumerate() {
            writeln!(out, "{j},{l:.17e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut weights = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::Malformed(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("index") {
                continue;
            }
            let value = line.split(',').nth(1).ok_or_else(|| {
                Error::Malformed(format!("expected `index,lambda`, got `{line}`"))
            })?;
            weights.push(parse_field(value)?);
        }
        Self::from_weights(&weights)
    }
}

/// Effective number of modes, `1 / Σ λ²`.
pub fn schmidt_number(spectrum: &SchmidtSpectrum) -> f64 {
    1.0 / spectrum.lambdas.iter().map(|l| l * l).sum::<f64>()
}

/// Full singular value decomposition of the amplitude `sqrt(intensity)`.
#[derive(Debug, Clone)]
pub struct SchmidtModes {
    pub singular_values: Vec<f64>,
    /// Signal mode functions, one column per mode.
    pub signal_modes: DMatrix<f64>,
    /// Idler mode functions, one column per mode.
    pub idler_modes: DMatrix<f64>,
}

impl SchmidtModes {
    pub fn spectrum(&self, cutoff: f64) -> Result<SchmidtSpectrum> {
        let weights: Vec<f64> = self.singular_values.iter().map(|s| s * s).collect();
        let max = weights.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::ZeroIntensity);
        }
        let kept: Vec<f64> = weights.into_iter().filter(|w| *w >= cutoff * max).collect();
        SchmidtSpectrum::from_weights(&kept)
    }

    /// Amplitude matrix rebuilt from the retained modes.
    pub fn reconstruct_amplitude(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.signal_modes.nrows(), self.idler_modes.nrows());
        for (j, s) in self.singular_values.iter().enumerate() {
            out += *s * self.signal_modes.column(j) * self.idler_modes.column(j).transpose();
        }
        out
    }
}

pub fn schmidt_modes(jsi: &JsiGrid) -> Result<SchmidtModes> {
    if jsi.intensity.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroIntensity);
    }
    let amplitude = jsi.intensity.map(f64::sqrt);
    let svd = amplitude.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let signal_modes = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let idler_modes = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    Ok(SchmidtModes {
        singular_values: order.iter().map(|&j| svd.singular_values[j]).collect(),
        signal_modes,
        idler_modes,
    })
}

/// Schmidt spectrum of the amplitude `sqrt(intensity)`, with modes below
/// `cutoff * λ_max` dropped and the rest renormalized.
pub fn schmidt_decompose(jsi: &JsiGrid, cutoff: f64) -> Result<SchmidtSpectrum> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidParameter {
            name: "cutoff",
            reason: format!("{cutoff} is outside (0, 1)"),
        });
    }
    schmidt_modes(jsi)?.spectrum(cutoff)
}

/// Phase-matching bandwidth giving Schmidt number `target_k`, all other
/// parameters held fixed. K grows monotonically with the bandwidth.
pub fn calibrate_phasematch_bandwidth(
    base: &JsiParams,
    target_k: f64,
    rel_tol: f64,
) -> Result<f64> {
    let k_of = |bw: f64| -> Result<f64> {
        let params = JsiParams {
            phasematch_bandwidth_nm: bw,
            ..*base
        };
        Ok(schmidt_number(&schmidt_decompose(
            &synthesize_jsi(&params)?,
            DEFAULT_CUTOFF,
        )?))
    };
    bisect_log(k_of, target_k, 1e-3, 1e3, rel_tol)
}

/// Spectrum of the default (calibrated) source.
pub fn default_spectrum() -> SchmidtSpectrum {
    let jsi = synthesize_jsi(&JsiParams::default()).expect("default parameters are valid");
    schmidt_decompose(&jsi, DEFAULT_CUTOFF).expect("default grid is non-zero")
}
