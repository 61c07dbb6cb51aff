use herald_core::{ModelParams, ProbabilitySet};

/// Threshold-detector probabilities by inclusion-exclusion over "no click"
/// events, written independently of the library.
pub fn threshold_reference(p: &ModelParams) -> ProbabilitySet {
    let none = |q_i: f64, q_1: f64, q_2: f64| -> f64 {
        // Each pair is missed by the idler w.p. q_i and by arm j w.p. q_j; the
        // two arms exclude each other for one photon.
        p.spectrum
            .lambdas()
            .iter()
            .map(|l| {
                let nu = l * p.mu;
                let miss = q_i * (1.0 - (1.0 - q_1) - (1.0 - q_2));
                1.0 / (1.0 + nu * (1.0 - miss))
            })
            .product()
    };
    let t1 = p.eta_s1 / 2.0;
    let t2 = p.eta_s2 / 2.0;
    let (a1, a2) = (1.0 - t1, 1.0 - t2);
    let qi = 1.0 - p.eta_i;
    let idle = none(qi, 1.0, 1.0);
    let p_i = 1.0 - idle;
    let p_is = |a: f64, b: f64| 1.0 - idle - none(1.0, a, b) + none(qi, a, b);
    let p_is1 = p_is(a1, 1.0);
    let p_is2 = p_is(1.0, a2);
    let p_is1s2 = 1.0 - idle - none(1.0, a1, 1.0) - none(1.0, 1.0, a2)
        + none(qi, a1, 1.0)
        + none(qi, 1.0, a2)
        + none(1.0, a1, a2)
        - none(qi, a1, a2);
    ProbabilitySet {
        p_i,
        p_is1,
        p_is2,
        p_is1s2,
    }
}
