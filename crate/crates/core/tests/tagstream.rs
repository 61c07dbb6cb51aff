use herald_core::model::{self, Detection};
use herald_core::tagstream::{
    count_coincidences, counts_from_labels, g2_from_counts, generate_run, multi_photon_fraction,
    read_tags_binary, try_count_coincidences, write_tags_binary, TimingModel,
};
use herald_core::{Channel, Error, ModelParams, RunConfig, SchmidtSpectrum};

fn params(mu: f64, k: f64) -> ModelParams {
    ModelParams {
        mu,
        eta_i: 0.6,
        eta_s1: 0.4,
        eta_s2: 0.5,
        k,
        spectrum: SchmidtSpectrum::uniform(4).unwrap(),
    }
}

#[test]
fn vacuum_run_has_only_clock_tags() {
    let run = generate_run(&params(0.0, 2.0), 10_000, TimingModel::default(), 1).unwrap();
    let tags: Vec<_> = run.collect();
    assert_eq!(tags.len(), 10_000);
    assert!(tags.iter().all(|t| t.channel == Channel::Clock));
    let c = count_coincidences(tags, &RunConfig::default()).unwrap();
    assert_eq!(c.pulses, 10_000);
    assert_eq!(
        g2_from_counts(&c, Detection::Threshold).unwrap_err(),
        Error::UndefinedRatio { count: "C_i" }
    );
}

#[test]
fn bright_pulses_fill_the_multi_photon_bin() {
    let run = generate_run(&params(5.0, 2.0), 50_000, TimingModel::default(), 2).unwrap();
    let c = count_coincidences(run, &RunConfig::default()).unwrap();
    assert!(c.c_i_multi > c.c_i_single, "{c:?}");
    assert!(multi_photon_fraction(&c).unwrap() > 0.5);
}

#[test]
fn binary_file_round_trip_preserves_counts() {
    let timing = TimingModel::default();
    let mut run = generate_run(&params(0.5, 3.0), 100_000, timing, 3)
        .unwrap()
        .with_labels();
    let mut bytes = Vec::new();
    write_tags_binary(&mut bytes, run.by_ref()).unwrap();
    let labels = run.take_labels();
    let counted = try_count_coincidences(
        read_tags_binary(bytes.as_slice()),
        &RunConfig::from_timing(&timing),
    )
    .unwrap();
    assert_eq!(counted, counts_from_labels(&labels, 100_000));
}

#[test]
fn pnr_gap_matches_model() {
    let p = ModelParams {
        mu: 0.5,
        eta_i: 0.328,
        eta_s1: 0.1802,
        eta_s2: 0.221,
        k: 2.55,
        spectrum: SchmidtSpectrum::uniform(20).unwrap(),
    };
    let timing = TimingModel::default();
    let c = count_coincidences(
        generate_run(&p, 4_000_000, timing, 4).unwrap(),
        &RunConfig::from_timing(&timing),
    )
    .unwrap();
    let thr = g2_from_counts(&c, Detection::Threshold).unwrap();
    let pnr = g2_from_counts(&c, Detection::Pnr).unwrap();
    let measured = thr.value - pnr.value;
    let predicted =
        model::g2(&p, Detection::Threshold).unwrap() - model::g2(&p, Detection::Pnr).unwrap();
    // The PNR counts are a subset of the threshold ones; the σ of the
    // difference is bounded by the sum.
    let sigma = thr.sigma + pnr.sigma;
    assert!(measured > 0.0);
    assert!(
        (measured - predicted).abs() < 3.0 * sigma,
        "{measured} vs {predicted} ± {sigma}"
    );
}

#[test]
fn misaligned_delays_produce_orphans() {
    let timing = TimingModel::default();
    let mut cfg = RunConfig::from_timing(&timing);
    cfg.channel_delays.signal1 += 10_000;
    let c = count_coincidences(
        generate_run(&params(0.3, 2.0), 100_000, timing, 5).unwrap(),
        &cfg,
    )
    .unwrap();
    assert_eq!(c.c_s1, 0);
    assert!(c.orphans > 0);
}
