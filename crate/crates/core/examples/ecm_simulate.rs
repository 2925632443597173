//! Fly one mission through the second-order circuit model and print the
//! terminal voltage at phase boundaries.
//!
//! cargo run --example ecm_simulate

use evtol_surrogate::data::{MissionProfile, Phase};
use evtol_surrogate::ecm::{simulate, EcmParams, EcmState, OcvCurve, RcBranch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> evtol_surrogate::Result<()> {
    let params = EcmParams::new(
        0.02,
        [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
        3.0,
        OcvCurve::new(vec![(0.0, 3.0), (0.1, 3.45), (0.5, 3.7), (0.9, 4.0), (1.0, 4.2)])?,
    )?;
    let mission = MissionProfile {
        dt_s: 1.0,
        takeoff: Phase { current_a: 15.0, duration_s: 60.0 },
        cruise: Phase { current_a: 6.0, duration_s: 600.0 },
        landing: Phase { current_a: 15.0, duration_s: 60.0 },
        rest_s: 300.0,
        power_reduction: 0.0,
        recharge_current_a: None,
    };
    let profile = mission.current_profile(&mut ChaCha8Rng::seed_from_u64(0), 0.0);
    let traj = simulate(&params, EcmState::rested(1.0), &profile)?;

    println!("{:>6} {:>8} {:>7} {:>9} {:>9} {:>8}", "t_s", "I_A", "soc", "v_rc1", "v_rc2", "v_phy");
    let mut t = 0.0;
    for (k, ((dt, current), step)) in profile.iter().zip(&traj.steps).enumerate() {
        t += dt;
        let boundary = k + 1 == profile.len() || profile[k + 1].1 != *current || k == 0;
        if boundary {
            println!(
                "{t:>6.0} {current:>8.2} {:>7.4} {:>9.5} {:>9.5} {:>8.4}",
                step.state.soc, step.state.v_rc[0], step.state.v_rc[1], step.v_phy
            );
        }
    }
    println!("soc clamp events: {}", traj.soc_clamps);
    Ok(())
}
