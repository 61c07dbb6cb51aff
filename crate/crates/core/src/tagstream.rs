//! Time-tag streams: simulation, coincidence counting and g²(0) from counts.
//!
//! A pulse slot is `round((time - delay) / clock_period)` for each channel's
//! delay. The PNR idler detector is read out through its slew rate: multi-photon
//! pulses rise faster and cross the trigger level earlier, so idler tags before
//! `pnr_bin_boundary` (relative to the slot, after delay correction) land in
//! the multi-photon bin and later tags in the single-photon bin.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Detection, ModelParams};
use crate::oracle::{OutcomeSampler, PulseOutcome, PulseSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Idler,
    Signal1,
    Signal2,
    Clock,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Idler,
        Channel::Signal1,
        Channel::Signal2,
        Channel::Clock,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Malformed(format!("unknown channel code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Idler => "idler",
            Channel::Signal1 => "signal1",
            Channel::Signal2 => "signal2",
            Channel::Clock => "clock",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    pub channel: Channel,
    /// Picoseconds since run start.
    pub time: u64,
}

/// Fixed per-channel offsets in ps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChannelDelays {
    pub idler: i64,
    pub signal1: i64,
    pub signal2: i64,
    pub clock: i64,
}

impl ChannelDelays {
    pub fn get(&self, channel: Channel) -> i64 {
        match channel {
            Channel::Idler => self.idler,
            Channel::Signal1 => self.signal1,
            Channel::Signal2 => self.signal2,
            Channel::Clock => self.clock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub clock_period: u64,
    /// Coincidence half-width around the slot center, ps.
    pub window: u64,
    pub channel_delays: ChannelDelays,
    /// Idler tags earlier than this (relative to the delay-corrected slot
    /// center) are multi-photon events.
    pub pnr_bin_boundary: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_timing(&TimingModel::default())
    }
}

impl RunConfig {
    /// Analysis settings matched to a generator: same delays, boundary halfway
    /// between the two idler arrival-time centers.
    pub fn from_timing(timing: &TimingModel) -> Self {
        Self {
            clock_period: timing.clock_period,
            window: 1_000,
            channel_delays: timing.channel_delays,
            pnr_bin_boundary: (timing.idler_single_offset + timing.idler_multi_offset)
                .div_euclid(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clock_period == 0 {
            return Err(Error::InvalidParameter {
                name: "clock_period",
                reason: "must be positive".into(),
            });
        }
        if 2 * self.window >= self.clock_period {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: format!("{} ps must be below half the clock period", self.window),
            });
        }
        Ok(())
    }
}

/// Arrival-time model of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    pub clock_period: u64,
    pub channel_delays: ChannelDelays,
    /// Gaussian σ of each signal detector, ps.
    pub signal_jitter: f64,
    /// Center of single-photon idler tags relative to the idler delay, ps.
    pub idler_single_offset: i64,
    /// Center of multi-photon idler tags; earlier than the single-photon center.
    pub idler_multi_offset: i64,
    pub idler_jitter: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            clock_period: 1_000_000,
            channel_delays: ChannelDelays {
                idler: 25_000,
                signal1: 31_000,
                signal2: 33_500,
                clock: 0,
            },
            signal_jitter: 50.0,
            idler_single_offset: 50,
            idler_multi_offset: -50,
            idler_jitter: 10.0,
        }
    }
}

impl TimingModel {
    fn validate(&self) -> Result<()> {
        RunConfig::from_timing(self).validate()?;
        if !(self.signal_jitter >= 0.0 && self.idler_jitter >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "jitter",
                reason: "must be non-negative".into(),
            });
        }
        if self.idler_multi_offset >= self.idler_single_offset {
            return Err(Error::InvalidParameter {
                name: "idler_multi_offset",
                reason: "multi-photon tags must arrive before single-photon tags".into(),
            });
        }
        Ok(())
    }
}

/// Ground truth for one pulse that produced at least one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseLabel {
    pub pulse: u64,
    pub outcome: PulseOutcome,
}

/// Lazily generated, time-ordered tag stream. Pulse `p` sits at
/// `(p + 1) * clock_period`.
pub struct TagGenerator {
    outcomes: OutcomeSampler,
    pulses: PulseSampler,
    timing: TimingModel,
    total: u64,
    rng: ChaCha8Rng,
    next_pulse: u64,
    next_event: Option<(u64, u32)>,
    buffer: Vec<TagRecord>,
    labels: Option<Vec<PulseLabel>>,
    signal_noise: Option<Normal<f64>>,
    idler_noise: Option<Normal<f64>>,
}

/// Starts a simulated run of `pulses` pulses.
///
/// Integer `k` routes photons explicitly over `2^k` ports; real `k` uses the
/// effective single-port probability `N^{1-j}` for `j` surviving photons.
pub fn generate_run(
    params: &ModelParams,
    pulses: u64,
    timing: TimingModel,
    seed: u64,
) -> Result<TagGenerator> {
    timing.validate()?;
    let noise = |sigma: f64| (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pulse_sampler = PulseSampler::new(&params.spectrum, params.mu)?;
    let next_event = pulse_sampler.next_nonempty(&mut rng);
    Ok(TagGenerator {
        outcomes: OutcomeSampler::from_params(params)?,
        pulses: pulse_sampler,
        timing,
        total: pulses,
        rng,
        next_pulse: 0,
        next_event,
        buffer: Vec::with_capacity(4),
        labels: None,
        signal_noise: noise(timing.signal_jitter),
        idler_noise: noise(timing.idler_jitter),
    })
}

impl TagGenerator {
    /// Record ground-truth labels of every non-empty pulse.
    pub fn with_labels(mut self) -> Self {
        self.labels = Some(Vec::new());
        self
    }

    pub fn take_labels(&mut self) -> Vec<PulseLabel> {
        self.labels.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn jitter(&mut self, idler: bool) -> i64 {
        let limit = (self.timing.clock_period / 8) as f64;
        let dist = if idler {
            self.idler_noise
        } else {
            self.signal_noise
        };
        dist.map_or(0, |d| {
            d.sample(&mut self.rng).clamp(-limit, limit).round() as i64
        })
    }

    fn fill_pulse(&mut self) {
        let pulse = self.next_pulse;
        self.next_pulse += 1;
        let t0 = (pulse + 1) as i64 * self.timing.clock_period as i64;
        let delays = self.timing.channel_delays;
        self.buffer.push(TagRecord {
            channel: Channel::Clock,
            time: (t0 + delays.clock) as u64,
        });

        let outcome = match self.next_event {
            Some((0, pairs)) => {
                let o = self.outcomes.sample(pairs, &mut self.rng);
                self.next_event = self.pulses.next_nonempty(&mut self.rng);
                Some(o)
            }
            Some((gap, pairs)) => {
                self.next_event = Some((gap - 1, pairs));
                None
            }
            None => None,
        };
        let Some(o) = outcome else { return };
        if let Some(labels) = self.labels.as_mut() {
            labels.push(PulseLabel { pulse, outcome: o });
        }
        if o.idler_clicks > 0 {
            let center = if o.idler_clicks == 1 {
                self.timing.idler_single_offset
            } else {
                self.timing.idler_multi_offset
            };
            let dt = self.jitter(true);
            self.buffer.push(TagRecord {
                channel: Channel::Idler,
                time: (t0 + delays.idler + center + dt) as u64,
            });
        }
        if o.signal1 {
            let dt = self.jitter(false);
            self.buffer.push(TagRecord {
                channel: Channel::Signal1,
                time: (t0 + delays.signal1 + dt) as u64,
            });
        }
        if o.signal2 {
            let dt = self.jitter(false);
            self.buffer.push(TagRecord {
                channel: Channel::Signal2,
                time: (t0 + delays.signal2 + dt) as u64,
            });
        }
        // Emitted in reverse so `pop` yields ascending times.
        self.buffer.sort_by_key(|t| std::cmp::Reverse(t.time));
    }
}

impl Iterator for TagGenerator {
    type Item = TagRecord;

    fn next(&mut self) -> Option<TagRecord> {
        if self.buffer.is_empty() {
            if self.next_pulse >= self.total {
                return None;
            }
            self.fill_pulse();
        }
        self.buffer.pop()
    }
}

/// Coincidence counts of a run. Twofold and threefold counts come in a
/// threshold variant (any idler tag) and a PNR variant (single-photon bin only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountSummary {
    pub pulses: u64,
    pub c_i_single: u64,
    pub c_i_multi: u64,
    pub c_i_total: u64,
    pub c_s1: u64,
    pub c_s2: u64,
    pub c_is1: u64,
    pub c_is2: u64,
    pub c_is1s2: u64,
    pub c_is1_pnr: u64,
    pub c_is2_pnr: u64,
    pub c_is1s2_pnr: u64,
    /// Tags outside the coincidence window of every slot.
    pub orphans: u64,
}

impl CountSummary {
    /// Counts a pulse from its detector outcome.
    pub fn record(&mut self, o: &PulseOutcome) {
        self.record_slot(
            (o.idler_clicks > 0).then_some(o.idler_clicks == 1),
            o.signal1,
            o.signal2,
        );
    }

    /// `idler`: `None` without idler tag, `Some(true)` for a single-photon tag.
    fn record_slot(&mut self, idler: Option<bool>, s1: bool, s2: bool) {
        self.c_s1 += s1 as u64;
        self.c_s2 += s2 as u64;
        let Some(single) = idler else { return };
        self.c_i_total += 1;
        self.c_is1 += s1 as u64;
        self.c_is2 += s2 as u64;
        self.c_is1s2 += (s1 && s2) as u64;
        if single {
            self.c_i_single += 1;
            self.c_is1_pnr += s1 as u64;
            self.c_is2_pnr += s2 as u64;
            self.c_is1s2_pnr += (s1 && s2) as u64;
        } else {
            self.c_i_multi += 1;
        }
    }

    /// `(C_i, C_is1, C_is2, C_is1s2)` for the given readout.
    pub fn herald_counts(&self, detection: Detection) -> [u64; 4] {
        match detection {
            Detection::Threshold => [self.c_i_total, self.c_is1, self.c_is2, self.c_is1s2],
            Detection::Pnr => [
                self.c_i_single,
                self.c_is1_pnr,
                self.c_is2_pnr,
                self.c_is1s2_pnr,
            ],
        }
    }

    /// Sums counts of independent runs at the same setting.
    pub fn merge(&mut self, other: &CountSummary) {
        self.pulses += other.pulses;
        self.c_i_single += other.c_i_single;
        self.c_i_multi += other.c_i_multi;
        self.c_i_total += other.c_i_total;
        self.c_s1 += other.c_s1;
        self.c_s2 += other.c_s2;
        self.c_is1 += other.c_is1;
        self.c_is2 += other.c_is2;
        self.c_is1s2 += other.c_is1s2;
        self.c_is1_pnr += other.c_is1_pnr;
        self.c_is2_pnr += other.c_is2_pnr;
        self.c_is1s2_pnr += other.c_is1s2_pnr;
        self.orphans += other.orphans;
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct SlotState {
    idler_rel: Option<i64>,
    s1: bool,
    s2: bool,
}

/// Single-pass coincidence counter. Holds at most a couple of open slots.
pub struct CoincidenceCounter {
    cfg: RunConfig,
    summary: CountSummary,
    open: BTreeMap<i64, SlotState>,
    last_time: Option<u64>,
}

impl CoincidenceCounter {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            summary: CountSummary::default(),
            open: BTreeMap::new(),
            last_time: None,
        })
    }

    pub fn push(&mut self, tag: TagRecord) -> Result<()> {
        if let Some(previous) = self.last_time {
            if tag.time < previous {
                return Err(Error::Unsorted {
                    previous,
                    time: tag.time,
                });
            }
        }
        self.last_time = Some(tag.time);
        if tag.channel == Channel::Clock {
            self.summary.pulses += 1;
            return Ok(());
        }
        let period = self.cfg.clock_period as i64;
        let corrected = tag.time as i64 - self.cfg.channel_delays.get(tag.channel);
        let slot = (corrected + period / 2).div_euclid(period);
        let rel = corrected - slot * period;
        self.flush_before(slot - 1);
        if rel.unsigned_abs() > self.cfg.window {
            self.summary.orphans += 1;
            return Ok(());
        }
        let state = self.open.entry(slot).or_default();
        match tag.channel {
            Channel::Idler => state.idler_rel = Some(state.idler_rel.map_or(rel, |r| r.min(rel))),
            Channel::Signal1 => state.s1 = true,
            Channel::Signal2 => state.s2 = true,
            Channel::Clock => unreachable!(),
        }
        Ok(())
    }

    fn flush_before(&mut self, slot: i64) {
        while let Some(entry) = self.open.first_entry() {
            if *entry.key() >= slot {
                break;
            }
            let state = entry.remove();
            let idler = state.idler_rel.map(|rel| rel >= self.cfg.pnr_bin_boundary);
            self.summary.record_slot(idler, state.s1, state.s2);
        }
    }

    pub fn finish(mut self) -> CountSummary {
        self.flush_before(i64::MAX);
        self.summary
    }
}

/// Counts a whole stream.
pub fn count_coincidences<I>(stream: I, cfg: &RunConfig) -> Result<CountSummary>
where
    I: IntoIterator<Item = TagRecord>,
{
    let mut counter = CoincidenceCounter::new(*cfg)?;
    for tag in stream {
        counter.push(tag)?;
    }
    Ok(counter.finish())
}

/// Fallible-stream variant for file readers.
pub fn try_count_coincidences<I>(stream: I, cfg: &RunConfig) -> Result<CountSummary>
where
    I: IntoIterator<Item = Result<TagRecord>>,
{
    let mut counter = CoincidenceCounter::new(*cfg)?;
    for tag in stream {
        counter.push(tag?)?;
    }
    Ok(counter.finish())
}

/// Counts straight from sampled pulse outcomes, skipping time tags. Matches
/// what [`count_coincidences`] reports on a cleanly separated stream.
pub fn simulate_counts(params: &ModelParams, pulses: u64, seed: u64) -> Result<CountSummary> {
    let outcomes = OutcomeSampler::from_params(params)?;
    let sampler = PulseSampler::new(&params.spectrum, params.mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = CountSummary {
        pulses,
        ..Default::default()
    };
    let mut index = 0u64;
    while let Some((gap, pairs)) = sampler.next_nonempty(&mut rng) {
        index += gap;
        if index >= pulses {
            break;
        }
        index += 1;
        summary.record(&outcomes.sample(pairs, &mut rng));
    }
    Ok(summary)
}

/// Counts implied by ground-truth labels.
pub fn counts_from_labels(labels: &[PulseLabel], pulses: u64) -> CountSummary {
    let mut summary = CountSummary {
        pulses,
        ..Default::default()
    };
    for label in labels {
        summary.record(&label.outcome);
    }
    summary
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub value: f64,
    /// First-order Poisson propagation of all four counts.
    pub sigma: f64,
}

/// `C_is1s2 C_i / (C_is1 C_is2)` with
/// `σ = g² sqrt(1/C_is1s2 + 1/C_i + 1/C_is1 + 1/C_is2)`.
pub fn g2_from_counts(counts: &CountSummary, detection: Detection) -> Result<G2Result> {
    let [c_i, c_is1, c_is2, c_is1s2] = counts.herald_counts(detection);
    for (name, value) in [
        ("C_i", c_i),
        ("C_is1", c_is1),
        ("C_is2", c_is2),
        ("C_is1s2", c_is1s2),
    ] {
        if value == 0 {
            return Err(Error::UndefinedRatio { count: name });
        }
    }
    let [c_i, c_is1, c_is2, c_is1s2] = [c_i, c_is1, c_is2, c_is1s2].map(|c| c as f64);
    let value = c_is1s2 * c_i / (c_is1 * c_is2);
    let sigma = value * (1.0 / c_is1s2 + 1.0 / c_i + 1.0 / c_is1 + 1.0 / c_is2).sqrt();
    Ok(G2Result { value, sigma })
}

pub fn write_tags_csv<W: Write, I: IntoIterator<Item = TagRecord>>(
    mut out: W,
    tags: I,
) -> std::io::Result<()> {
    writeln!(out, "channel,time_ps")?;
    for tag in tags {
        writeln!(out, "{},{}", tag.channel.name(), tag.time)?;
    }
    Ok(())
}

pub fn read_tags_csv<R: BufRead>(input: R) -> impl Iterator<Item = Result<TagRecord>> {
    input.lines().enumerate().filter_map(|(line_no, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Malformed(e.to_string()))),
        };
        let line = line.trim();
        if line.is_empty() || (line_no == 0 && line.starts_with("channel")) {
            return None;
        }
        let parsed = line
            .split_once(',')
            .ok_or_else(|| {
                Error::Malformed(format!("line {}: expected `channel,time_ps`", line_no + 1))
            })
            .and_then(|(ch, t)| {
                Ok(TagRecord {
                    channel: ch.trim().parse()?,
                    time: t.trim().parse().map_err(|_| {
                        Error::Malformed(format!("line {}: bad time `{t}`", line_no + 1))
                    })?,
                })
            });
        Some(parsed)
    })
}

/// 9-byte records: channel code, then the time as little-endian `u64`.
pub fn write_tags_binary<W: Write, I: IntoIterator<Item = TagRecord>>(
    mut out: W,
    tags: I,
) -> std::io::Result<()> {
    for tag in tags {
        out.write_all(&[tag.channel.code()])?;
        out.write_all(&tag.time.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tags_binary<R: Read>(mut input: R) -> impl Iterator<Item = Result<TagRecord>> {
    std::iter::from_fn(move || {
        let mut record = [0u8; 9];
        let mut filled = 0;
        while filled < record.len() {
            match input.read(&mut record[filled..]) {
                Ok(0) if filled == 0 => return None,
                Ok(0) => return Some(Err(Error::Malformed("truncated binary tag record".into()))),
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(Error::Malformed(e.to_string()))),
            }
        }
        let time = u64::from_le_bytes(record[1..].try_into().unwrap());
        Some(Channel::from_code(record[0]).map(|channel| TagRecord { channel, time }))
    })
}

/// Noise-free tags for hand-built pulse outcomes, pulses `0..=max`.
pub fn tags_for_outcomes(outcomes: &[(u64, PulseOutcome)], timing: &TimingModel) -> Vec<TagRecord> {
    let mut tags = Vec::new();
    let last = outcomes.iter().map(|(p, _)| *p).max().map_or(0, |p| p + 1);
    let d = timing.channel_delays;
    for pulse in 0..last {
        let t0 = (pulse + 1) as i64 * timing.clock_period as i64;
        let mut slot = vec![TagRecord {
            channel: Channel::Clock,
            time: (t0 + d.clock) as u64,
        }];
        for (_, o) in outcomes.iter().filter(|(p, _)| *p == pulse) {
            if o.idler_clicks > 0 {
                let off = if o.idler_clicks == 1 {
                    timing.idler_single_offset
                } else {
                    timing.idler_multi_offset
                };
                slot.push(TagRecord {
                    channel: Channel::Idler,
                    time: (t0 + d.idler + off) as u64,
                });
            }
            if o.signal1 {
                slot.push(TagRecord {
                    channel: Channel::Signal1,
                    time: (t0 + d.signal1) as u64,
                });
            }
            if o.signal2 {
                slot.push(TagRecord {
                    channel: Channel::Signal2,
                    time: (t0 + d.signal2) as u64,
                });
            }
        }
        slot.sort_by_key(|t| t.time);
        tags.extend(slot);
    }
    tags
}

/// Fraction of idler tags in the multi-photon bin.
pub fn multi_photon_fraction(counts: &CountSummary) -> Option<f64> {
    (counts.c_i_total > 0).then(|| counts.c_i_multi as f64 / counts.c_i_total as f64)
}
