//! Generate a noisy mission dataset from a known circuit plus a k·I·|I|
//! term and write it as canonical CSV.
//!
//! cargo run --example synth_dataset -- [out.csv]

use std::path::PathBuf;

use evtol_surrogate::data::{quadratic_nonlinearity, synthesize, write_canonical_csv, CycleTrace, MissionProfile, Phase, SynthOptions};
use evtol_surrogate::ecm::{EcmParams, OcvCurve, RcBranch};

fn main() -> evtol_surrogate::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("missions.csv"));
    let truth = EcmParams::new(
        0.02,
        [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
        3.0,
        OcvCurve::new(vec![(0.0, 3.0), (0.1, 3.45), (0.5, 3.7), (0.9, 4.0), (1.0, 4.2)])?,
    )?;
    let profile = MissionProfile {
        dt_s: 1.0,
        takeoff: Phase { current_a: 15.0, duration_s: 60.0 },
        cruise: Phase { current_a: 6.0, duration_s: 600.0 },
        landing: Phase { current_a: 15.0, duration_s: 60.0 },
        rest_s: 300.0,
        power_reduction: 0.1,
        recharge_current_a: Some(6.0),
    };
    let opts = SynthOptions {
        noise_std_v: 0.005,
        n_missions: 3,
        seed: 42,
        dt_jitter: 0.1,
        ..SynthOptions::default()
    };
    let trace = synthesize(&profile, &truth, quadratic_nonlinearity(2e-4), &opts)?;

    let worst = trace.nonlinear_v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{} samples, largest nonlinear term {:.1} mV", trace.samples.len(), 1e3 * worst);
    let cycle = CycleTrace { cell: "SYN01".into(), cycle: 1, samples: trace.samples };
    write_canonical_csv(&out, &[cycle])?;
    println!("wrote {}", out.display());
    Ok(())
}
