//! Exact truncated Fock-space reference for the full experiment, plus a
//! Monte-Carlo sampler of the same model.
//!
//! Per Schmidt mode the pair number is geometric. Given `n` pairs, the idler
//! photons are thinned binomially with `η_i` and routed through a depth-`k`
//! tree of 50:50 splitters onto threshold detectors; each signal photon is
//! lost, reaches arm 1, or reaches arm 2 with probabilities
//! `(1 - (η_s1 + η_s2)/2, η_s1/2, η_s2/2)`. Modes are combined by convolving
//! the per-mode distributions of (surviving idler photons, arm-1 click, arm-2
//! click); routing only depends on the total idler photon number.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_unit, Error, Result};
use crate::jsi::SchmidtSpectrum;
use crate::model::{ModelParams, ProbabilitySet};
use crate::numeric::binomial_pmf;

/// Pair-number law of one two-mode squeezed mode, truncated at `n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    pub probs: Vec<f64>,
    /// `P(n > n_max)`.
    pub tail: f64,
}

/// `P(n) = mean^n / (1 + mean)^{n+1}` for `n = 0..=n_max`.
pub fn pair_distribution(mean: f64, n_max: usize) -> Result<PairDistribution> {
    check_non_negative("mean", mean)?;
    let ratio = mean / (1.0 + mean);
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 / (1.0 + mean);
    for _ in 0..=n_max {
        probs.push(p);
        p *= ratio;
    }
    Ok(PairDistribution {
        probs,
        tail: ratio.powi(n_max as i32 + 1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub spectrum: SchmidtSpectrum,
    pub mu: f64,
    pub eta_i: f64,
    pub eta_s1: f64,
    pub eta_s2: f64,
    pub k: u32,
    /// Pair-number truncation per mode.
    pub n_max: usize,
}

impl OracleConfig {
    /// Oracle counterpart of integer-depth model parameters, with the
    /// smallest `n_max ≥ 6` whose truncation bound is below `tolerance`.
    pub fn from_params(params: &ModelParams, tolerance: f64) -> Result<Self> {
        params.validate()?;
        if params.k.fract() != 0.0 || params.k > 16.0 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("oracle needs an integer depth ≤ 16, got {}", params.k),
            });
        }
        let mut cfg = Self {
            spectrum: params.spectrum.clone(),
            mu: params.mu,
            eta_i: params.eta_i,
            eta_s1: params.eta_s1,
            eta_s2: params.eta_s2,
            k: params.k as u32,
            n_max: 6,
        };
        while cfg.truncation_bound() >= tolerance {
            cfg.n_max += 1;
            if cfg.n_max > 2000 {
                return Err(Error::Truncation {
                    bound: cfg.truncation_bound(),
                    tolerance,
                });
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        check_non_negative("mu", self.mu)?;
        check_unit("eta_i", self.eta_i)?;
        check_unit("eta_s1", self.eta_s1)?;
        check_unit("eta_s2", self.eta_s2)?;
        if self.n_max < 6 {
            return Err(Error::InvalidParameter {
                name: "n_max",
                reason: format!("{} is below the minimum of 6", self.n_max),
            });
        }
        if self.k > 16 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("{} ports are too many to enumerate", 1u64 << self.k),
            });
        }
        Ok(())
    }

    /// Probability mass dropped by the truncation, `1 - ∏_s (1 - tail_s)`.
    /// Bounds the absolute error of every reported probability.
    pub fn truncation_bound(&self) -> f64 {
        let log_kept: f64 = self
            .spectrum
            .lambdas()
            .iter()
            .map(|l| {
                let mean = l * self.mu;
                let tail = (mean / (1.0 + mean)).powi(self.n_max as i32 + 1);
                (-tail).ln_1p()
            })
            .sum();
        -log_kept.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub probabilities: ProbabilitySet,
    pub truncation_bound: f64,
}

impl OracleResult {
    /// The probabilities, or a truncation error when the bound exceeds `tolerance`.
    pub fn within(&self, tolerance: f64) -> Result<ProbabilitySet> {
        if self.truncation_bound > tolerance {
            return Err(Error::Truncation {
                bound: self.truncation_bound,
                tolerance,
            });
        }
        Ok(self.probabilities)
    }
}

/// `[n][arm1 on][arm2 on]`: signal click pattern given `n` pairs, by explicit
/// enumeration of the trinomial (lost, arm 1, arm 2).
fn signal_flags(n_max: usize, t1: f64, t2: f64) -> Vec<[[f64; 2]; 2]> {
    (0..=n_max)
        .map(|n| {
            let mut out = [[0.0; 2]; 2];
            let first = binomial_pmf(n, t1);
            for (a, pa) in first.iter().enumerate() {
                let rest = n - a;
                let cond = if t1 < 1.0 { t2 / (1.0 - t1) } else { 0.0 };
                for (b, pb) in binomial_pmf(rest, cond).iter().enumerate() {
                    out[(a > 0) as usize][(b > 0) as usize] += pa * pb;
                }
            }
            out
        })
        .collect()
}

/// Distribution over `[photons][arm1][arm2]`, convolved over all modes.
/// With `thin_idler` the photon index counts surviving idler photons,
/// otherwise emitted idler photons.
fn convolved_counts(cfg: &OracleConfig, thin_idler: bool) -> Result<Vec<[[f64; 2]; 2]>> {
    let flags = signal_flags(cfg.n_max, 0.5 * cfg.eta_s1, 0.5 * cfg.eta_s2);
    let mut acc = vec![[[0.0; 2]; 2]];
    acc[0][0][0] = 1.0;
    for &lambda in cfg.spectrum.lambdas() {
        let pairs = pair_distribution(lambda * cfg.mu, cfg.n_max)?;
        let mut mode = vec![[[0.0; 2]; 2]; cfg.n_max + 1];
        for (n, pn) in pairs.probs.iter().enumerate() {
            let idler = if thin_idler {
                binomial_pmf(n, cfg.eta_i)
            } else {
                let mut v = vec![0.0; n + 1];
                v[n] = 1.0;
                v
            };
            for (j, pj) in idler.iter().enumerate() {
                for f1 in 0..2 {
                    for f2 in 0..2 {
                        mode[j][f1][f2] += pn * pj * flags[n][f1][f2];
                    }
                }
            }
        }
        let mut next = vec![[[0.0; 2]; 2]; acc.len() + cfg.n_max];
        for (j1, x) in acc.iter().enumerate() {
            for (j2, y) in mode.iter().enumerate() {
                for a1 in 0..2 {
                    for b1 in 0..2 {
                        if x[a1][b1] == 0.0 {
                            continue;
                        }
                        for a2 in 0..2 {
                            for b2 in 0..2 {
                                next[j1 + j2][a1 | a2][b1 | b2] += x[a1][b1] * y[a2][b2];
                            }
                        }
                    }
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

fn aggregate(counts: &[[[f64; 2]; 2]], mut herald: impl FnMut(usize) -> f64) -> ProbabilitySet {
    let mut out = ProbabilitySet::ZERO;
    for (j, c) in counts.iter().enumerate() {
        let h = herald(j);
        if h == 0.0 {
            continue;
        }
        out.p_i += h * (c[0][0] + c[0][1] + c[1][0] + c[1][1]);
        out.p_is1 += h * (c[1][0] + c[1][1]);
        out.p_is2 += h * (c[0][1] + c[1][1]);
        out.p_is1s2 += h * c[1][1];
    }
    out
}

/// Exact probabilities with the idler loss applied before the tree.
pub fn exact_probabilities(cfg: &OracleConfig) -> Result<OracleResult> {
    cfg.validate()?;
    let counts = convolved_counts(cfg, true)?;
    let mut tree = Tree::new(cfg.k);
    let probabilities = aggregate(&counts, |j| tree.exactly_one_click(j, 1.0));
    Ok(OracleResult {
        probabilities,
        truncation_bound: cfg.truncation_bound(),
    })
}

/// Same quantity with the idler loss applied at the detectors after routing.
pub fn exact_probabilities_loss_at_ports(cfg: &OracleConfig) -> Result<OracleResult> {
    cfg.validate()?;
    let counts = convolved_counts(cfg, false)?;
    let mut tree = Tree::new(cfg.k);
    let probabilities = aggregate(&counts, |n| tree.exactly_one_click(n, cfg.eta_i));
    Ok(OracleResult {
        probabilities,
        truncation_bound: cfg.truncation_bound(),
    })
}

/// Joint distribution of (number of clicking idler ports, arm 1, arm 2).
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeLattice {
    /// `[clicking ports][arm1][arm2]`
    pub probs: Vec<[[f64; 2]; 2]>,
    pub truncation_bound: f64,
}

impl OutcomeLattice {
    pub fn total(&self) -> f64 {
        self.probs.iter().flatten().flatten().sum()
    }
}

pub fn outcome_lattice(cfg: &OracleConfig) -> Result<OutcomeLattice> {
    cfg.validate()?;
    let counts = convolved_counts(cfg, true)?;
    let tree = Tree::new(cfg.k);
    let mut probs = vec![[[0.0; 2]; 2]; tree.ports() + 1];
    for (j, c) in counts.iter().enumerate() {
        for (clicks, p) in tree.occupancy(j).iter().enumerate() {
            for a in 0..2 {
                for b in 0..2 {
                    probs[clicks][a][b] += p * c[a][b];
                }
            }
        }
    }
    Ok(OutcomeLattice {
        probs,
        truncation_bound: cfg.truncation_bound(),
    })
}

/// Exact probability that exactly one of the `2^k` detectors clicks when
/// `n_photons` enter the tree and each detector has efficiency `eta`.
pub fn povm_click_probability(n_photons: usize, eta: f64, k: u32) -> Result<f64> {
    check_unit("eta", eta)?;
    if k > 16 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("{k} is too deep to enumerate"),
        });
    }
    Ok(Tree::new(k).exactly_one_click(n_photons, eta))
}

/// Click probability of each individual port as the only clicking port.
pub fn single_port_click_probabilities(n_photons: usize, eta: f64, k: u32) -> Vec<f64> {
    fn recurse(n: usize, eta: f64, depth: u32) -> Vec<f64> {
        if depth == 0 {
            return vec![if n == 0 {
                0.0
            } else {
                1.0 - (1.0 - eta).powi(n as i32)
            }];
        }
        let half = 1usize << (depth - 1);
        let mut out = vec![0.0; 2 * half];
        for (left, p) in binomial_pmf(n, 0.5).iter().enumerate() {
            let right = n - left;
            let quiet_left = (1.0 - eta).powi(left as i32);
            let quiet_right = (1.0 - eta).powi(right as i32);
            let l = recurse(left, eta, depth - 1);
            let r = recurse(right, eta, depth - 1);
            for j in 0..half {
                out[j] += p * l[j] * quiet_right;
                out[half + j] += p * quiet_left * r[j];
            }
        }
        out
    }
    recurse(n_photons, eta, k)
}

/// Memoized enumeration of photon routing through a balanced splitter tree.
struct Tree {
    depth: u32,
    occupancy: HashMap<(u32, usize), Vec<f64>>,
    one_click: HashMap<(u32, usize, u64), f64>,
}

impl Tree {
    fn new(depth: u32) -> Self {
        Self {
            depth,
            occupancy: HashMap::new(),
            one_click: HashMap::new(),
        }
    }

    fn ports(&self) -> usize {
        1 << self.depth
    }

    /// Distribution of the number of occupied ports for `n` photons.
    fn occupancy(&self, n: usize) -> Vec<f64> {
        let mut memo = HashMap::new();
        occupancy_rec(self.depth, n, &mut memo)
    }

    /// `P(exactly one detector clicks | n photons)`, detectors with efficiency `eta`.
    fn exactly_one_click(&mut self, n: usize, eta: f64) -> f64 {
        if eta == 1.0 {
            let dist = self
                .occupancy
                .entry((self.depth, n))
                .or_insert_with(|| occupancy_rec(self.depth, n, &mut HashMap::new()));
            return dist.get(1).copied().unwrap_or(0.0);
        }
        one_click_rec(self.depth, n, eta, &mut self.one_click)
    }
}

fn occupancy_rec(depth: u32, n: usize, memo: &mut HashMap<(u32, usize), Vec<f64>>) -> Vec<f64> {
    if let Some(v) = memo.get(&(depth, n)) {
        return v.clone();
    }
    let out = if depth == 0 {
        if n == 0 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 1.0]
        }
    } else {
        let mut out = vec![0.0; (1 << depth) + 1];
        for (left, p) in binomial_pmf(n, 0.5).iter().enumerate() {
            let l = occupancy_rec(depth - 1, left, memo);
            let r = occupancy_rec(depth - 1, n - left, memo);
            for (a, pa) in l.iter().enumerate() {
                for (b, pb) in r.iter().enumerate() {
                    out[a + b] += p * pa * pb;
                }
            }
        }
        out
    };
    memo.insert((depth, n), out.clone());
    out
}

fn one_click_rec(
    depth: u32,
    n: usize,
    eta: f64,
    memo: &mut HashMap<(u32, usize, u64), f64>,
) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let key = (depth, n, eta.to_bits());
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let value = if depth == 0 {
        1.0 - (1.0 - eta).powi(n as i32)
    } else {
        binomial_pmf(n, 0.5)
            .iter()
            .enumerate()
            .map(|(left, p)| {
                let right = n - left;
                let quiet = |m: usize| (1.0 - eta).powi(m as i32);
                p * (one_click_rec(depth - 1, left, eta, memo) * quiet(right)
                    + quiet(left) * one_click_rec(depth - 1, right, eta, memo))
            })
            .sum()
    };
    memo.insert(key, value);
    value
}

/// Samples the total pair number of successive pulses, skipping runs of
/// empty pulses in one draw.
#[derive(Debug, Clone)]
pub struct PulseSampler {
    means: Vec<f64>,
    /// `cumulative[s] = Σ_{r<s} ln(1 + mean_r)`
    cumulative: Vec<f64>,
    p_nonempty: f64,
    gap: Option<Geometric>,
}

impl PulseSampler {
    pub fn new(spectrum: &SchmidtSpectrum, mu: f64) -> Result<Self> {
        check_non_negative("mu", mu)?;
        let means: Vec<f64> = spectrum.lambdas().iter().map(|l| l * mu).collect();
        let mut cumulative = Vec::with_capacity(means.len() + 1);
        cumulative.push(0.0);
        for m in &means {
            cumulative.push(cumulative.last().unwrap() + m.ln_1p());
        }
        let p_nonempty = -(-cumulative.last().unwrap()).exp_m1();
        let gap = if p_nonempty > 0.0 {
            Some(
                Geometric::new(p_nonempty).map_err(|e| Error::InvalidParameter {
                    name: "mu",
                    reason: e.to_string(),
                })?,
            )
        } else {
            None
        };
        Ok(Self {
            means,
            cumulative,
            p_nonempty,
            gap,
        })
    }

    pub fn p_nonempty(&self) -> f64 {
        self.p_nonempty
    }

    /// Number of empty pulses before the next pulse with pairs, and that
    /// pulse's total pair number. `None` when `μ = 0`.
    pub fn next_nonempty<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(u64, u32)> {
        let gap = self.gap.as_ref()?.sample(rng);
        let total = *self.cumulative.last().unwrap();
        // First non-vacuum mode: exponential race truncated to the total.
        let u: f64 = rng.random();
        let e = -(-u * self.p_nonempty).ln_1p();
        let mut s = self.first_above(0, e.min(total));
        let mut pairs = 1 + self.extra_pairs(s, rng);
        loop {
            let e = -(1.0 - rng.random::<f64>()).ln();
            let start = s + 1;
            if start >= self.means.len()
                || self.cumulative[self.means.len()] - self.cumulative[start] <= e
            {
                break;
            }
            s = self.first_above(start, self.cumulative[start] + e);
            pairs += 1 + self.extra_pairs(s, rng);
        }
        Some((gap, pairs))
    }

    /// Smallest mode `s ≥ start` with `cumulative[s + 1] > level`.
    fn first_above(&self, start: usize, level: f64) -> usize {
        let idx = self.cumulative[start + 1..].partition_point(|c| *c <= level);
        (start + idx).min(self.means.len() - 1)
    }

    fn extra_pairs<R: Rng + ?Sized>(&self, mode: usize, rng: &mut R) -> u32 {
        let mean = self.means[mode];
        let geo = Geometric::new(1.0 / (1.0 + mean)).expect("valid probability");
        geo.sample(rng) as u32
    }
}

/// What the detectors saw in one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PulseOutcome {
    pub pairs: u32,
    /// Number of tree ports that clicked.
    pub idler_clicks: u32,
    pub signal1: bool,
    pub signal2: bool,
}

/// Samples detector responses for a pulse with `pairs` pairs.
///
/// Integer depths route each surviving idler photon to one of `2^k` ports.
/// Other depths use the effective tree: `j` survivors share one port with
/// probability `N^{1-j}`, otherwise the pulse is reported as two clicks.
#[derive(Debug, Clone, Copy)]
pub struct OutcomeSampler {
    pub eta_i: f64,
    pub eta_s1: f64,
    pub eta_s2: f64,
    pub k: f64,
}

impl OutcomeSampler {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if params.k > 30.0 && params.k.fract() == 0.0 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("explicit routing supports depths ≤ 30, got {}", params.k),
            });
        }
        Ok(Self {
            eta_i: params.eta_i,
            eta_s1: params.eta_s1,
            eta_s2: params.eta_s2,
            k: params.k,
        })
    }

    fn idler_clicks<R: Rng + ?Sized>(&self, survivors: u64, rng: &mut R) -> u32 {
        if survivors <= 1 {
            return survivors as u32;
        }
        if self.k.fract() == 0.0 {
            let ports = 1u64 << self.k as u32;
            let mut hit: Vec<u64> = (0..survivors).map(|_| rng.random_range(0..ports)).collect();
            hit.sort_unstable();
            hit.dedup();
            return hit.len() as u32;
        }
        let shared = (-(survivors as f64 - 1.0) * self.k).exp2();
        if rng.random::<f64>() < shared {
            1
        } else {
            2
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, pairs: u32, rng: &mut R) -> PulseOutcome {
        let n = pairs as u64;
        let survivors = binomial(n, self.eta_i, rng);
        let idler_clicks = self.idler_clicks(survivors, rng);
        let t1 = 0.5 * self.eta_s1;
        let t2 = 0.5 * self.eta_s2;
        let arm1 = binomial(n, t1, rng);
        let cond = if t1 < 1.0 { t2 / (1.0 - t1) } else { 0.0 };
        let arm2 = binomial(n - arm1, cond, rng);
        PulseOutcome {
            pairs,
            idler_clicks,
            signal1: arm1 > 0,
            signal2: arm2 > 0,
        }
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    Binomial::new(n, p.min(1.0))
        .expect("valid binomial")
        .sample(rng)
}

/// Monte-Carlo estimate of the four probabilities, with binomial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub shots: u64,
    pub probabilities: ProbabilitySet,
    pub std_errors: ProbabilitySet,
}

pub fn monte_carlo_probabilities(
    params: &ModelParams,
    shots: u64,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let outcome = OutcomeSampler::from_params(params)?;
    let pulses = PulseSampler::new(&params.spectrum, params.mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 4];
    let mut index = 0u64;
    while let Some((gap, pairs)) = pulses.next_nonempty(&mut rng) {
        index += gap;
        if index >= shots {
            break;
        }
        index += 1;
        let o = outcome.sample(pairs, &mut rng);
        if o.idler_clicks == 1 {
            counts[0] += 1;
            counts[1] += o.signal1 as u64;
            counts[2] += o.signal2 as u64;
            counts[3] += (o.signal1 && o.signal2) as u64;
        }
    }
    let shots_f = shots as f64;
    let p = |c: u64| c as f64 / shots_f;
    let se = |c: u64| {
        let q = p(c);
        (q * (1.0 - q) / shots_f).sqrt()
    };
    Ok(MonteCarloEstimate {
        shots,
        probabilities: ProbabilitySet {
            p_i: p(counts[0]),
            p_is1: p(counts[1]),
            p_is2: p(counts[2]),
            p_is1s2: p(counts[3]),
        },
        std_errors: ProbabilitySet {
            p_i: se(counts[0]),
            p_is1: se(counts[1]),
            p_is2: se(counts[2]),
            p_is1s2: se(counts[3]),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambdas: &[f64], mu: f64, etas: (f64, f64, f64), k: u32, n_max: usize) -> OracleConfig {
        OracleConfig {
            spectrum: SchmidtSpectrum::from_weights(lambdas).unwrap(),
            mu,
            eta_i: etas.0,
            eta_s1: etas.1,
            eta_s2: etas.2,
            k,
            n_max,
        }
    }

    #[test]
    fn pair_distribution_examples() {
        let d = pair_distribution(0.0, 6).unwrap();
        assert_eq!(d.probs[0], 1.0);
        assert!(d.probs[1..].iter().all(|p| *p == 0.0));
        let d = pair_distribution(1.0, 10).unwrap();
        assert_eq!(&d.probs[..3], &[0.5, 0.25, 0.125]);
        for mean in [0.01, 0.3, 1.0, 4.0] {
            let d = pair_distribution(mean, 12).unwrap();
            assert!((d.probs.iter().sum::<f64>() + d.tail - 1.0).abs() < 1e-15);
        }
        assert!(pair_distribution(-1.0, 6).is_err());
    }

    #[test]
    fn vacuum_gives_zero() {
        let r = exact_probabilities(&cfg(&[0.7, 0.3], 0.0, (0.5, 0.3, 0.4), 2, 8)).unwrap();
        assert_eq!(r.probabilities, ProbabilitySet::ZERO);
        assert_eq!(r.truncation_bound, 0.0);
    }

    #[test]
    fn single_mode_threshold() {
        let r = exact_probabilities(&cfg(&[1.0], 0.1, (1.0, 0.3, 0.4), 0, 30)).unwrap();
        assert!((r.probabilities.p_i - (1.0 - 1.0 / 1.1)).abs() < 1e-14);
        assert!(r.truncation_bound < 1e-30);
    }

    #[test]
    fn click_probability_examples() {
        assert!((povm_click_probability(1, 0.37, 3).unwrap() - 0.37).abs() < 1e-15);
        assert!((povm_click_probability(2, 0.5, 1).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(povm_click_probability(0, 0.5, 2).unwrap(), 0.0);
    }

    #[test]
    fn ports_are_symmetric() {
        for k in 1..=3 {
            for n in 1..=6 {
                let per_port = single_port_click_probabilities(n, 0.6, k);
                let first = per_port[0];
                assert!(per_port.iter().all(|p| (p - first).abs() < 1e-15));
                let total: f64 = per_port.iter().sum();
                assert!((total - povm_click_probability(n, 0.6, k).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn occupancy_is_normalized() {
        let tree = Tree::new(3);
        for n in 0..12 {
            assert!((tree.occupancy(n).iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn lattice_sums_to_kept_mass() {
        let c = cfg(&[0.7, 0.3], 0.2, (0.5, 0.3, 0.4), 2, 10);
        let lattice = outcome_lattice(&c).unwrap();
        assert!((lattice.total() - (1.0 - c.truncation_bound())).abs() <= 1e-12);
        let direct = exact_probabilities(&c).unwrap().probabilities;
        let single: f64 = lattice.probs[1].iter().flatten().sum();
        assert!((single - direct.p_i).abs() < 1e-14);
    }

    #[test]
    fn truncation_state_is_reported() {
        let r = exact_probabilities(&cfg(&[1.0], 0.5, (0.5, 0.3, 0.4), 1, 6)).unwrap();
        assert!(matches!(r.within(1e-10), Err(Error::Truncation { .. })));
        let c = OracleConfig::from_params(
            &ModelParams {
                mu: 0.5,
                eta_i: 0.5,
                eta_s1: 0.3,
                eta_s2: 0.4,
                k: 1.0,
                spectrum: SchmidtSpectrum::single_mode(),
            },
            1e-11,
        )
        .unwrap();
        assert!(c.truncation_bound() < 1e-11);
        assert!(exact_probabilities(&c).unwrap().within(1e-11).is_ok());
    }

    #[test]
    fn sampler_mean_pairs() {
        let spectrum = SchmidtSpectrum::from_weights(&[0.5, 0.3, 0.2]).unwrap();
        let sampler = PulseSampler::new(&spectrum, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut pulses, mut pairs) = (0u64, 0u64);
        for _ in 0..200_000 {
            let (gap, n) = sampler.next_nonempty(&mut rng).unwrap();
            pulses += gap + 1;
            pairs += n as u64;
        }
        let mean = pairs as f64 / pulses as f64;
        // Var of the total is Σ ν(1+ν); 4σ band.
        let var: f64 = [0.2f64, 0.12, 0.08].iter().map(|v| v * (1.0 + v)).sum();
        assert!(
            (mean - 0.4).abs() < 4.0 * (var / pulses as f64).sqrt(),
            "mean {mean}"
        );
        assert!(PulseSampler::new(&spectrum, 0.0)
            .unwrap()
            .next_nonempty(&mut rng)
            .is_none());
    }

    #[test]
    fn sampler_empty_fraction() {
        let spectrum = SchmidtSpectrum::from_weights(&[0.6, 0.4]).unwrap();
        let sampler = PulseSampler::new(&spectrum, 0.05).unwrap();
        let expected = 1.0 - 1.0 / (1.03 * 1.02);
        assert!((sampler.p_nonempty() - expected).abs() < 1e-15);
    }
}
