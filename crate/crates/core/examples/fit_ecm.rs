//! Identify R0 and both RC branches from a simulated pulse-and-rest trace,
//! then compare with the parameters that generated it.
//!
//! cargo run --example fit_ecm

use evtol_surrogate::ecm::{fit_params, segment_trace, simulate, EcmParams, EcmState, OcvCurve, RcBranch, SegmentOptions};

fn main() -> evtol_surrogate::Result<()> {
    let ocv = OcvCurve::new(vec![(0.0, 3.0), (0.5, 3.7), (1.0, 4.2)])?;
    let truth = EcmParams::new(
        0.015,
        [RcBranch { r: 0.008, tau: 12.0 }, RcBranch { r: 0.025, tau: 150.0 }],
        3.0,
        ocv.clone(),
    )?;

    // rest, two discharge pulses with long relaxations in between
    let mut profile = vec![(1.0, 0.0); 10];
    for current in [10.0, 6.0] {
        profile.extend(std::iter::repeat_n((1.0, current), 120));
        profile.extend(std::iter::repeat_n((1.0, 0.0), 900));
    }
    let traj = simulate(&truth, EcmState::rested(0.9), &profile)?;
    let dt: Vec<f64> = profile.iter().map(|p| p.0).collect();
    let current: Vec<f64> = profile.iter().map(|p| p.1).collect();
    let voltage = traj.v_phy();

    let (pulses, rests) = segment_trace(&dt, &current, &voltage, SegmentOptions::default())?;
    let fit = fit_params(&rests, &pulses, truth.capacity_ah, ocv)?;
    println!("{} pulse onsets, {} relaxation segments", pulses.len(), rests.len());
    println!("{:>10} {:>10} {:>10}", "", "truth", "fitted");
    println!("{:>10} {:>10.5} {:>10.5}", "r0", truth.r0, fit.params.r0);
    for j in 0..2 {
        let (a, b) = (truth.branches[j], fit.params.branches[j]);
        println!("{:>10} {:>10.5} {:>10.5}", format!("r{}", j + 1), a.r, b.r);
        println!("{:>10} {:>10.3} {:>10.3}", format!("tau{}", j + 1), a.tau, b.tau);
    }
    println!("relaxation residual rms: {:.2e} V", fit.residual_rms);
    Ok(())
}
