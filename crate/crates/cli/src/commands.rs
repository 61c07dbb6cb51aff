use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use herald_core::estimation::{
    estimate_efficiencies, fit_mu, fit_tree_depth, DepthFit, Efficiencies, SettingData,
    EFFICIENCY_SETTINGS,
};
use herald_core::jsi::{
    default_spectrum, schmidt_decompose, schmidt_number, synthesize_jsi,
    CALIBRATED_PHASEMATCH_BANDWIDTH_NM, DEFAULT_CUTOFF,
};
use herald_core::model::{self, max_g2_reduction, mu_for_g2, Detection};
use herald_core::povm::{eta_pnr, normalize_pi_one, pi_one_coefficients, TreeDetector};
use herald_core::tagstream::{
    count_coincidences, g2_from_counts, generate_run, read_tags_binary, read_tags_csv,
    simulate_counts, try_count_coincidences, write_tags_binary, write_tags_csv, ChannelDelays,
    TimingModel,
};
use herald_core::{
    CountSummary, JsiGrid, JsiParams, ModelParams, ProbabilitySet, RunConfig, SchmidtSpectrum,
};

use crate::output::{Outputs, RunManifest};
use crate::{CliError, CliResult};

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI in nm")?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Idler path efficiency.
    #[arg(long, default_value_t = 0.3280)]
    pub eta_i: f64,
    /// Signal arm 1 efficiency (before the 50:50 split).
    #[arg(long, default_value_t = 0.1802)]
    pub eta_s1: f64,
    /// Signal arm 2 efficiency (before the 50:50 split).
    #[arg(long, default_value_t = 0.2210)]
    pub eta_s2: f64,
    /// Tree depth of the PNR detector; 0 is a threshold detector.
    #[arg(long, default_value_t = 2.55)]
    pub k: f64,
    /// Schmidt spectrum CSV as written by `herald jsi`. Defaults to the
    /// calibrated synthetic source.
    #[arg(long, value_name = "FILE")]
    pub spectrum: Option<PathBuf>,
    /// Use one spectral mode instead.
    #[arg(long, conflicts_with = "spectrum")]
    pub single_mode: bool,
}

impl ModelArgs {
    fn load_spectrum(&self) -> CliResult<SchmidtSpectrum> {
        if self.single_mode {
            return Ok(SchmidtSpectrum::single_mode());
        }
        match &self.spectrum {
            Some(path) => Ok(SchmidtSpectrum::read_csv(BufReader::new(open(path)?))?),
            None => Ok(default_spectrum()),
        }
    }

    fn params(&self, mu: f64) -> CliResult<ModelParams> {
        let p = ModelParams {
            mu,
            eta_i: self.eta_i,
            eta_s1: self.eta_s1,
            eta_s2: self.eta_s2,
            k: self.k,
            spectrum: self.load_spectrum()?,
        };
        p.validate()?;
        Ok(p)
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path)
        .map_err(|e| CliError::Usage(anyhow::anyhow!("cannot open {}: {e}", path.display())))
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JsiArgs {
    #[arg(long, default_value_t = 770.0)]
    pub pump_center: f64,
    /// Pump FWHM, nm.
    #[arg(long, default_value_t = 0.05)]
    pub pump_bandwidth: f64,
    /// Phase-matching FWHM at the degenerate wavelength, nm.
    #[arg(long, default_value_t = CALIBRATED_PHASEMATCH_BANDWIDTH_NM)]
    pub phasematch_bandwidth: f64,
    #[arg(long, value_parser = parse_band, default_value = "1523.5,1536.5")]
    pub signal_band: (f64, f64),
    #[arg(long, value_parser = parse_band, default_value = "1543.5,1556.5")]
    pub idler_band: (f64, f64),
    #[arg(long, default_value_t = 128)]
    pub grid: usize,
    /// Match the phase-matching width to the pump so the JSI factorizes.
    #[arg(long)]
    pub separable: bool,
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: f64,
    /// Decompose this JSI CSV instead of synthesizing one.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Also write the JSI grid.
    #[arg(long)]
    pub write_grid: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct JsiSummary {
    schmidt_number: f64,
    modes: usize,
    leading_lambda: f64,
}

pub fn jsi(a: &JsiArgs, argv: &[String]) -> CliResult<()> {
    let grid = match &a.input {
        Some(path) => JsiGrid::read_csv(BufReader::new(open(path)?))?.normalized()?,
        None => {
            let params = JsiParams {
                pump_center_nm: a.pump_center,
                pump_bandwidth_nm: a.pump_bandwidth,
                phasematch_bandwidth_nm: a.phasematch_bandwidth,
                signal_band_nm: a.signal_band,
                idler_band_nm: a.idler_band,
                grid_size: a.grid,
            };
            synthesize_jsi(&if a.separable {
                params.separable()
            } else {
                params
            })?
        }
    };
    let spectrum = schmidt_decompose(&grid, a.cutoff)?;
    let summary = JsiSummary {
        schmidt_number: schmidt_number(&spectrum),
        modes: spectrum.len(),
        leading_lambda: spectrum.lambdas()[0],
    };
    let mut out = Outputs::new(&a.out)?;
    if a.write_grid {
        out.write("jsi.csv", |w| grid.write_csv(w))?;
    }
    out.write("spectrum.csv", |w| spectrum.write_csv(w))?;
    out.write_json("jsi_summary.json", &summary)?;
    out.finish("jsi", None, argv, to_json(a))?;
    println!(
        "K = {:.6} ({} modes)",
        summary.schmidt_number, summary.modes
    );
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CurveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub mu_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu_max: f64,
    /// Log-spaced grid points.
    #[arg(long, default_value_t = 60)]
    pub points: usize,
    /// g²(0) level for the crossing-point search.
    #[arg(long, default_value_t = 7e-3)]
    pub g2_target: f64,
    /// Worker threads for the sweep; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct CurveSummary {
    g2_target: f64,
    mu_at_target_threshold: f64,
    mu_at_target_pnr: f64,
    mu_improvement: f64,
    max_g2_reduction: f64,
    mu_at_max_reduction: f64,
}

struct CurveRow {
    mu: f64,
    threshold: ProbabilitySet,
    pnr: ProbabilitySet,
}

pub fn curve(a: &CurveArgs, argv: &[String]) -> CliResult<()> {
    if a.points < 2 || !(a.mu_min > 0.0 && a.mu_max > a.mu_min) {
        return Err(CliError::usage(
            "need --points ≥ 2 and 0 < --mu-min < --mu-max",
        ));
    }
    let base = a.model.params(0.0)?;
    let (lo, hi) = (a.mu_min.ln(), a.mu_max.ln());
    let mus: Vec<f64> = (0..a.points)
        .map(|i| (lo + (hi - lo) * i as f64 / (a.points - 1) as f64).exp())
        .collect();
    let threads = match a.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let chunk = mus.len().div_ceil(threads);
    let rows: Vec<herald_core::Result<CurveRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = mus
            .chunks(chunk)
            .map(|part| {
                let base = &base;
                s.spawn(move || {
                    part.iter()
                        .map(|&mu| {
                            let p = base.with_mu(mu);
                            Ok(CurveRow {
                                mu,
                                threshold: model::probabilities(
                                    &p.with_detection(Detection::Threshold),
                                )?,
                                pnr: model::probabilities(&p)?,
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let rows = rows.into_iter().collect::<herald_core::Result<Vec<_>>>()?;

    let thr = mu_for_g2(a.g2_target, &base, Detection::Threshold)?;
    let pnr = mu_for_g2(a.g2_target, &base, Detection::Pnr)?;
    let (mu_gap, gap) = max_g2_reduction(&base, a.mu_min, a.mu_max)?;
    let summary = CurveSummary {
        g2_target: a.g2_target,
        mu_at_target_threshold: thr,
        mu_at_target_pnr: pnr,
        mu_improvement: pnr / thr - 1.0,
        max_g2_reduction: gap,
        mu_at_max_reduction: mu_gap,
    };

    let mut out = Outputs::new(&a.out)?;
    out.write("curve.csv", |w| {
        writeln!(
            w,
            "mu,g2_threshold,g2_pnr,g2_reduction,p_herald_threshold,p_herald_pnr"
        )?;
        for r in &rows {
            let g_thr = r.threshold.g2().unwrap_or(f64::NAN);
            let g_pnr = r.pnr.g2().unwrap_or(f64::NAN);
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.mu,
                g_thr,
                g_pnr,
                g_thr - g_pnr,
                r.threshold.p_i,
                r.pnr.p_i
            )?;
        }
        Ok(())
    })?;
    out.write_json("curve_summary.json", &summary)?;
    out.finish("curve", None, argv, to_json(a))?;
    println!(
        "mu(g2 = {}) threshold {:.4e}, PNR {:.4e} (+{:.1}%); max reduction {:.4} at mu {:.3e}",
        a.g2_target,
        thr,
        pnr,
        100.0 * summary.mu_improvement,
        gap,
        mu_gap
    );
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PovmArgs {
    #[arg(long, default_value_t = 0.71)]
    pub eta: f64,
    #[arg(long, default_value_t = 2.55)]
    pub k: f64,
    #[arg(long, default_value_t = 12)]
    pub n_max: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct PovmSummary {
    eta: f64,
    k: f64,
    /// Absent for a threshold detector.
    eta_pnr: Option<f64>,
}

pub fn povm(a: &PovmArgs, argv: &[String]) -> CliResult<()> {
    let detector = TreeDetector::new(a.eta, a.k)?;
    let raw = pi_one_coefficients(&detector, a.n_max)?;
    let norm = normalize_pi_one(&raw)?;
    let eta = match eta_pnr(&detector) {
        Ok(v) => Some(v),
        Err(herald_core::Error::Divergent) => None,
        Err(e) => return Err(e.into()),
    };
    let mut out = Outputs::new(&a.out)?;
    out.write("povm.csv", |w| {
        writeln!(w, "n,c_raw,c_normalized")?;
        for (n, (c, c_norm)) in raw.coeffs.iter().zip(&norm.coeffs).enumerate() {
            writeln!(w, "{n},{c},{c_norm}")?;
        }
        Ok(())
    })?;
    out.write_json(
        "povm_summary.json",
        &PovmSummary {
            eta: a.eta,
            k: a.k,
            eta_pnr: eta,
        },
    )?;
    out.finish("povm", None, argv, to_json(a))?;
    match eta {
        Some(v) => println!("eta_pnr = {v:.6}"),
        None => println!("eta_pnr diverges for k = 0"),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum TagFormat {
    Csv,
    Binary,
}

impl TagFormat {
    fn infer(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => TagFormat::Binary,
            _ => TagFormat::Csv,
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            TagFormat::Csv => "tags.csv",
            TagFormat::Binary => "tags.bin",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DelayArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub clock_period: u64,
    #[arg(long, default_value_t = 25_000, allow_hyphen_values = true)]
    pub delay_idler: i64,
    #[arg(long, default_value_t = 31_000, allow_hyphen_values = true)]
    pub delay_signal1: i64,
    #[arg(long, default_value_t = 33_500, allow_hyphen_values = true)]
    pub delay_signal2: i64,
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub delay_clock: i64,
}

impl DelayArgs {
    fn delays(&self) -> ChannelDelays {
        ChannelDelays {
            idler: self.delay_idler,
            signal1: self.delay_signal1,
            signal2: self.delay_signal2,
            clock: self.delay_clock,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TimingArgs {
    #[command(flatten)]
    pub delays: DelayArgs,
    /// Signal detector σ, ps.
    #[arg(long, default_value_t = 50.0)]
    pub signal_jitter: f64,
    /// Idler detector σ, ps.
    #[arg(long, default_value_t = 10.0)]
    pub idler_jitter: f64,
    /// Single-photon idler tag center relative to the idler delay, ps.
    #[arg(long, default_value_t = 50, allow_hyphen_values = true)]
    pub idler_single_offset: i64,
    /// Multi-photon idler tag center relative to the idler delay, ps.
    #[arg(long, default_value_t = -50, allow_hyphen_values = true)]
    pub idler_multi_offset: i64,
}

impl TimingArgs {
    fn timing(&self) -> TimingModel {
        TimingModel {
            clock_period: self.delays.clock_period,
            channel_delays: self.delays.delays(),
            signal_jitter: self.signal_jitter,
            idler_single_offset: self.idler_single_offset,
            idler_multi_offset: self.idler_multi_offset,
            idler_jitter: self.idler_jitter,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Mean pair number per pulse.
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub pulses: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TagFormat::Csv)]
    pub format: TagFormat,
    /// Also write per-pulse ground truth.
    #[arg(long)]
    pub labels: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> CliResult<()> {
    let params = a.model.params(a.mu)?;
    let mut run = generate_run(&params, a.pulses, a.timing.timing(), a.seed)?;
    if a.labels {
        run = run.with_labels();
    }
    let mut out = Outputs::new(&a.out)?;
    let mut tags = 0u64;
    let counted = run.by_ref().inspect(|_| tags += 1);
    match a.format {
        TagFormat::Csv => out.write(a.format.file_name(), |w| write_tags_csv(w, counted))?,
        TagFormat::Binary => out.write(a.format.file_name(), |w| write_tags_binary(w, counted))?,
    };
    if a.labels {
        let labels = run.take_labels();
        out.write("labels.csv", |w| {
            writeln!(w, "pulse,pairs,idler_clicks,signal1,signal2")?;
            for l in &labels {
                let o = l.outcome;
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    l.pulse, o.pairs, o.idler_clicks, o.signal1 as u8, o.signal2 as u8
                )?;
            }
            Ok(())
        })?;
    }
    out.finish("simulate", Some(a.seed), argv, to_json(a))?;
    println!("{tags} tags over {} pulses", a.pulses);
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CountArgs {
    /// Tag file (`.csv` or `.bin`).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<TagFormat>,
    #[command(flatten)]
    pub delays: DelayArgs,
    /// Coincidence half-width, ps.
    #[arg(long, default_value_t = 1_000)]
    pub window: u64,
    /// Idler tags earlier than this (ps, relative to the idler delay) are
    /// multi-photon events.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    pub pnr_boundary: i64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

fn print_g2(counts: &CountSummary) {
    for d in [Detection::Threshold, Detection::Pnr] {
        match g2_from_counts(counts, d) {
            Ok(g) => println!("g2 {d:?}: {:.5} ± {:.5}", g.value, g.sigma),
            Err(e) => println!("g2 {d:?}: {e}"),
        }
    }
}

pub fn count(a: &CountArgs, argv: &[String]) -> CliResult<()> {
    let cfg = RunConfig {
        clock_period: a.delays.clock_period,
        window: a.window,
        channel_delays: a.delays.delays(),
        pnr_bin_boundary: a.pnr_boundary,
    };
    let file = open(&a.input)?;
    let counts = match a.format.unwrap_or_else(|| TagFormat::infer(&a.input)) {
        TagFormat::Csv => try_count_coincidences(read_tags_csv(BufReader::new(file)), &cfg)?,
        TagFormat::Binary => try_count_coincidences(read_tags_binary(BufReader::new(file)), &cfg)?,
    };
    if counts == CountSummary::default() {
        return Err(CliError::usage(format!(
            "{} contains no tags",
            a.input.display()
        )));
    }
    let mut out = Outputs::new(&a.out)?;
    out.write_json("counts.json", &counts)?;
    out.finish("count", None, argv, to_json(a))?;
    print_g2(&counts);
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// CountSummary JSON files (object or list), in order of increasing power.
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    pub counts: Vec<PathBuf>,
    /// Fixed efficiencies `eta_i,eta_s1,eta_s2` instead of estimating them.
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    /// Schmidt spectrum CSV; defaults to the calibrated synthetic source.
    #[arg(long, value_name = "FILE")]
    pub spectrum: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub efficiencies: Option<Efficiencies>,
    pub etas_used: [f64; 3],
    pub mus: Vec<f64>,
    /// Settings entering the depth fit (those with a positive μ).
    pub depth_settings: Vec<usize>,
    pub tree_depth: DepthFit,
}

fn fit_settings(
    data: &SettingData,
    etas: Option<&[f64]>,
    spectrum: &SchmidtSpectrum,
) -> CliResult<FitReport> {
    if data.is_empty() {
        return Err(CliError::usage("no count summaries given"));
    }
    let (efficiencies, etas_used) = match etas {
        Some(&[a, b, c]) => (None, [a, b, c]),
        Some(_) => return Err(CliError::usage("--etas needs three values")),
        None => {
            let e = estimate_efficiencies(data)?;
            (Some(e), e.values())
        }
    };
    let mus = fit_mu(data, etas_used, spectrum)?;
    let depth_settings: Vec<usize> = (0..mus.len()).filter(|&i| mus[i] > 0.0).collect();
    let subset = SettingData::new(depth_settings.iter().map(|&i| data.settings[i]).collect());
    let subset_mus: Vec<f64> = depth_settings.iter().map(|&i| mus[i]).collect();
    let tree_depth = fit_tree_depth(&subset, &subset_mus, etas_used[0], spectrum)?;
    Ok(FitReport {
        efficiencies,
        etas_used,
        mus,
        depth_settings,
        tree_depth,
    })
}

fn read_counts(path: &Path) -> CliResult<Vec<CountSummary>> {
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| CliError::Usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|c| vec![c])
    };
    parsed.map_err(|e| CliError::Usage(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn fit(a: &FitArgs, argv: &[String]) -> CliResult<()> {
    let mut settings = Vec::new();
    for path in &a.counts {
        settings.extend(read_counts(path)?);
    }
    let spectrum = match &a.spectrum {
        Some(path) => SchmidtSpectrum::read_csv(BufReader::new(open(path)?))?,
        None => default_spectrum(),
    };
    let report = fit_settings(&SettingData::new(settings), a.etas.as_deref(), &spectrum)?;
    let mut out = Outputs::new(&a.out)?;
    out.write_json("fit.json", &report)?;
    out.finish("fit", None, argv, to_json(a))?;
    print_fit(&report);
    Ok(())
}

fn print_fit(r: &FitReport) {
    let [ei, e1, e2] = r.etas_used;
    println!("etas = ({ei:.4}, {e1:.4}, {e2:.4})");
    let mus: Vec<String> = r.mus.iter().map(|m| format!("{m:.4e}")).collect();
    println!("mu = [{}]", mus.join(", "));
    println!(
        "k = {:.3} (residual {:.3})",
        r.tree_depth.k, r.tree_depth.residual
    );
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub timing: TimingArgs,
    /// Mean pair numbers of the power sweep, ascending.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1e-3,2e-3,3e-3,4e-3,0.05,0.1,0.2,0.4,0.8"
    )]
    pub mus: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub pulses: u64,
    /// Pulses for the four lowest settings, which set the efficiencies.
    /// Defaults to `--pulses`.
    #[arg(long)]
    pub pulses_low: Option<u64>,
    /// Sample counts directly instead of generating and counting time tags.
    #[arg(long, conflicts_with = "write_tags")]
    pub fast: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Keep each setting's tag stream as `tags_<i>.bin`.
    #[arg(long)]
    pub write_tags: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct PipelineReport {
    true_etas: [f64; 3],
    true_k: f64,
    true_mus: Vec<f64>,
    fit: FitReport,
}

pub fn pipeline(a: &PipelineArgs, argv: &[String]) -> CliResult<()> {
    let mus = a.mus.clone();
    if mus.is_empty() || mus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::usage("--mus must be a non-empty ascending list"));
    }
    let base = a.model.params(0.0)?;
    let timing = a.timing.timing();
    let cfg = RunConfig::from_timing(&timing);
    let mut out = Outputs::new(&a.out)?;
    let tag_paths: Vec<Option<PathBuf>> = (0..mus.len())
        .map(|i| a.write_tags.then(|| out.path(&format!("tags_{i}.bin"))))
        .collect();

    let results: Vec<CliResult<CountSummary>> = std::thread::scope(|s| {
        let handles: Vec<_> = mus
            .iter()
            .enumerate()
            .map(|(i, &mu)| {
                let params = base.with_mu(mu);
                let path = tag_paths[i].clone();
                let pulses = match a.pulses_low {
                    Some(n) if i < EFFICIENCY_SETTINGS => n,
                    _ => a.pulses,
                };
                let seed = a.seed.wrapping_add(i as u64);
                s.spawn(move || -> CliResult<CountSummary> {
                    if a.fast {
                        return Ok(simulate_counts(&params, pulses, seed)?);
                    }
                    let run = generate_run(&params, pulses, timing, seed)?;
                    match path {
                        None => Ok(count_coincidences(run, &cfg)?),
                        Some(path) => {
                            let mut w = BufWriter::new(File::create(&path)?);
                            write_tags_binary(&mut w, run)?;
                            w.flush()?;
                            drop(w);
                            let r = BufReader::new(File::open(&path)?);
                            Ok(try_count_coincidences(read_tags_binary(r), &cfg)?)
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pipeline worker panicked"))
            .collect()
    });
    let counts = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let data = SettingData::new(counts);
    let fit = fit_settings(&data, None, &base.spectrum)?;
    out.write_json("counts.json", &data)?;
    let report = PipelineReport {
        true_etas: [base.eta_i, base.eta_s1, base.eta_s2],
        true_k: base.k,
        true_mus: mus,
        fit,
    };
    out.write_json("fit.json", &report)?;
    out.finish("pipeline", Some(a.seed), argv, to_json(a))?;
    print_fit(&report.fit);
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Write outputs here instead of the original directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn replay(a: &ReplayArgs) -> CliResult<()> {
    let manifest: RunManifest = serde_json::from_reader(BufReader::new(open(&a.manifest)?))?;
    if manifest.command == "replay" || manifest.args.is_empty() {
        return Err(CliError::usage(
            "manifest does not describe a replayable command",
        ));
    }
    let mut args = manifest.args;
    if let Some(out) = &a.out {
        args.push("--out".into());
        args.push(out.display().to_string());
    }
    crate::run(args)
}
