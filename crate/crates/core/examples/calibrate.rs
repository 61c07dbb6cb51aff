//! Prints the phase-matching bandwidth giving K = 20.6 on the default grid.

use herald_core::jsi::{
    calibrate_phasematch_bandwidth, schmidt_decompose, schmidt_number, synthesize_jsi,
    DEFAULT_CUTOFF,
};
use herald_core::JsiParams;

fn main() -> herald_core::Result<()> {
    let base = JsiParams::default();
    let bw = calibrate_phasematch_bandwidth(&base, 20.6, 1e-12)?;
    let params = JsiParams {
        phasematch_bandwidth_nm: bw,
        ..base
    };
    let spectrum = schmidt_decompose(&synthesize_jsi(&params)?, DEFAULT_CUTOFF)?;
    println!("phasematch_bandwidth_nm = {bw:.9}");
    println!(
        "K = {:.6}, modes = {}",
        schmidt_number(&spectrum),
        spectrum.len()
    );
    Ok(())
}
