mod common;

use proptest::prelude::*;

use herald_core::estimation::{fit_mu, SettingData};
use herald_core::jsi::schmidt_number;
use herald_core::model::{
    self, p_idler, p_idler_multibin, p_idler_threshold, probabilities, product_form, Detection,
};
use herald_core::povm::{normalize_pi_one, pi_one_coefficients, TreeDetector};
use herald_core::tagstream::{
    count_coincidences, counts_from_labels, generate_run, read_tags_binary, read_tags_csv,
    write_tags_binary, write_tags_csv, RunConfig, TimingModel,
};
use herald_core::{Channel, CountSummary, ModelParams, SchmidtSpectrum, TagRecord};

fn spectrum() -> impl Strategy<Value = SchmidtSpectrum> {
    prop::collection::vec(0.01f64..1.0, 1..6)
        .prop_map(|w| SchmidtSpectrum::from_weights(&w).unwrap())
}

fn model_params() -> impl Strategy<Value = ModelParams> {
    (
        spectrum(),
        0.0f64..3.0,
        0.0f64..=1.0,
        0.0f64..=1.0,
        0.0f64..=1.0,
        0.0f64..8.0,
    )
        .prop_map(|(spectrum, mu, eta_i, eta_s1, eta_s2, k)| ModelParams {
            mu,
            eta_i,
            eta_s1,
            eta_s2,
            k,
            spectrum,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn probability_ordering(p in model_params()) {
        let s = probabilities(&p).unwrap();
        let eps = 1e-15;
        prop_assert!(s.p_is1s2 >= -eps);
        prop_assert!(s.p_is1s2 <= s.p_is1.min(s.p_is2) + eps);
        prop_assert!(s.p_is1.max(s.p_is2) <= s.p_i + eps);
        prop_assert!(s.p_i <= 1.0 + eps);
    }

    #[test]
    fn single_bin_below_threshold(p in model_params()) {
        let single = p_idler(&p).unwrap();
        let threshold = p_idler_threshold(&p).unwrap();
        prop_assert!(single <= threshold + 1e-15);
        prop_assert!(p_idler_multibin(&p).unwrap() >= -1e-15);
    }

    #[test]
    fn depth_zero_is_threshold(p in model_params()) {
        let p = ModelParams { k: 0.0, ..p };
        let s = probabilities(&p).unwrap();
        let r = common::threshold_reference(&p);
        prop_assert!(s.max_abs_diff(&r) < 1e-12, "{:?} vs {:?}", s, r);
        prop_assert!((p_idler(&p).unwrap() - p_idler_threshold(&p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn product_form_agrees(p in model_params()) {
        let a = probabilities(&p).unwrap();
        let b = product_form::probabilities(&p).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn threefold_grows_with_mu(p in model_params(), factor in 1.01f64..4.0) {
        prop_assume!(p.mu > 1e-4 && p.eta_i > 0.01 && p.eta_s1 > 0.01 && p.eta_s2 > 0.01);
        let thr = p.with_detection(Detection::Threshold);
        let lo = model::p_threefold(&thr).unwrap();
        let hi = model::p_threefold(&thr.with_mu(p.mu * factor)).unwrap();
        prop_assert!(hi > lo);
    }

    #[test]
    fn povm_coefficients_bounded(eta in 0.0f64..=1.0, k in 0.0f64..10.0) {
        let d = TreeDetector::new(eta, k).unwrap();
        let e = pi_one_coefficients(&d, 12).unwrap();
        for (n, c) in e.coeffs.iter().enumerate() {
            let threshold_click = 1.0 - (1.0 - eta).powi(n as i32);
            prop_assert!(*c >= 0.0 && *c <= threshold_click + 1e-15);
        }
        if eta > 0.0 {
            let norm = normalize_pi_one(&e).unwrap();
            prop_assert!((norm.coeffs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_invariants(w in prop::collection::vec(0.0f64..1.0, 1..40)) {
        prop_assume!(w.iter().any(|x| *x > 0.0));
        let s = SchmidtSpectrum::from_weights(&w).unwrap();
        let l = s.lambdas();
        prop_assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(l.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(l.iter().all(|x| *x > 0.0));
        let k = schmidt_number(&s);
        prop_assert!(k >= 1.0 - 1e-12 && k <= l.len() as f64 + 1e-9);
    }

    #[test]
    fn tag_formats_round_trip(raw in prop::collection::vec((0u8..4, any::<u64>()), 0..50)) {
        let tags: Vec<TagRecord> = raw
            .into_iter()
            .map(|(c, t)| TagRecord { channel: Channel::from_code(c).unwrap(), time: t })
            .collect();
        let mut csv = Vec::new();
        write_tags_csv(&mut csv, tags.iter().copied()).unwrap();
        let back: Vec<_> = read_tags_csv(csv.as_slice()).collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(&back, &tags);
        let mut bin = Vec::new();
        write_tags_binary(&mut bin, tags.iter().copied()).unwrap();
        let back: Vec<_> = read_tags_binary(bin.as_slice()).collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, tags);
    }

    #[test]
    fn fit_mu_scale_consistent(c3 in 1u64..10_000, pulses in 1_000_000u64..100_000_000) {
        let etas = [0.33, 0.18, 0.22];
        let spectrum = SchmidtSpectrum::uniform(10).unwrap();
        let one = SettingData::new(vec![CountSummary { pulses, c_is1s2: c3, ..Default::default() }]);
        let two = SettingData::new(vec![CountSummary { pulses: 2 * pulses, c_is1s2: 2 * c3, ..Default::default() }]);
        let a = fit_mu(&one, etas, &spectrum);
        let b = fit_mu(&two, etas, &spectrum);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a[0] / b[0] - 1.0).abs() < 1e-8),
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "inconsistent outcomes {:?}", other),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn counter_reproduces_labels(seed in any::<u64>(), mu in 0.0f64..2.0, k in 0u32..4) {
        let params = ModelParams {
            mu,
            eta_i: 0.6,
            eta_s1: 0.5,
            eta_s2: 0.7,
            k: k as f64,
            spectrum: SchmidtSpectrum::from_weights(&[0.5, 0.3, 0.2]).unwrap(),
        };
        let timing = TimingModel::default();
        let pulses = 20_000;
        let mut run = generate_run(&params, pulses, timing, seed).unwrap().with_labels();
        let tags: Vec<_> = run.by_ref().collect();
        let labels = run.take_labels();
        prop_assert!(tags.windows(2).all(|w| w[0].time <= w[1].time));
        let counted = count_coincidences(tags, &RunConfig::from_timing(&timing)).unwrap();
        prop_assert_eq!(counted, counts_from_labels(&labels, pulses));
    }
}
