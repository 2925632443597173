//! Train a pure data-driven network and a residual network on the same
//! synthetic missions and compare them on an unseen operating point.
//!
//! cargo run --release --example fnn_vs_pinn

use evtol_surrogate::data::{quadratic_nonlinearity, synthesize, MissionProfile, Phase, SynthOptions};
use evtol_surrogate::ecm::{EcmParams, OcvCurve, RcBranch};
use evtol_surrogate::features::{build_rows, fit_normalizer, physics_trace, FeatureMode, Sample, Scaling};
use evtol_surrogate::metrics::evaluate;
use evtol_surrogate::nn::{train, Dataset, MlpModel, MlpSpec, Surrogate, TrainConfig};

fn missions(truth: &EcmParams, reduction: f64, temp_c: f64, cycle: u32, seed: u64) -> evtol_surrogate::Result<Vec<Sample>> {
    let profile = MissionProfile {
        dt_s: 1.0,
        takeoff: Phase { current_a: 15.0, duration_s: 60.0 },
        cruise: Phase { current_a: 6.0, duration_s: 400.0 },
        landing: Phase { current_a: 15.0, duration_s: 60.0 },
        rest_s: 200.0,
        power_reduction: reduction,
        recharge_current_a: Some(6.0),
    };
    let opts = SynthOptions { noise_std_v: 0.005, seed, temp_c, cycle, dt_jitter: 0.1, ..SynthOptions::default() };
    Ok(synthesize(&profile, truth, quadratic_nonlinearity(2e-4), &opts)?.samples)
}

fn fit(mode: FeatureMode, ecm: &EcmParams, train_set: &[Vec<Sample>], test: &[Sample]) -> evtol_surrogate::Result<f64> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for t in train_set {
        let physics = (mode == FeatureMode::Pinn).then(|| physics_trace(ecm, t)).transpose()?;
        rows.extend(build_rows(mode, t, physics.as_ref().map(|p| p.steps.as_slice()))?);
        match &physics {
            Some(p) => targets.extend(t.iter().zip(&p.steps).map(|(s, st)| s.voltage_v - st.v_phy)),
            None => targets.extend(t.iter().map(|s| s.voltage_v)),
        }
    }
    let normalizer = fit_normalizer(&rows, &targets, Scaling::Zscore)?;
    let z = rows.iter().map(|r| normalizer.normalize_row(r)).collect::<Result<Vec<_>, _>>()?;
    let zt: Vec<f64> = targets.iter().map(|t| normalizer.normalize_target(*t)).collect();
    let spec = MlpSpec::new(mode.input_dim(), 1, 32)?;
    let init = match mode {
        FeatureMode::Fnn => MlpModel::he_uniform(spec, 7),
        FeatureMode::Pinn => MlpModel::residual_init(spec, 7),
    };
    let (model, report) = train(init, &Dataset::from_rows(&z, &zt)?, &TrainConfig::default())?;
    println!("{mode}: {} epochs, loss {:.3e} -> {:.3e}", report.loss_history.len(), report.initial_loss, report.final_loss());
    let ecm = (mode == FeatureMode::Pinn).then(|| ecm.clone());
    let surrogate = Surrogate::new(mode, model, normalizer, ecm)?;
    let pred = surrogate.predict_trace(test)?;
    let actual: Vec<f64> = test.iter().map(|s| s.voltage_v).collect();
    Ok(evaluate(&pred.v_pred, &actual)?.rmse_mv)
}

fn main() -> evtol_surrogate::Result<()> {
    let ecm = EcmParams::new(
        0.02,
        [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
        3.0,
        OcvCurve::new(vec![(0.0, 3.0), (0.1, 3.45), (0.5, 3.7), (0.9, 4.0), (1.0, 4.2)])?,
    )?;
    let train_set = vec![
        missions(&ecm, 0.0, 20.0, 1, 1)?,
        missions(&ecm, 0.1, 25.0, 50, 2)?,
        missions(&ecm, 0.3, 30.0, 1000, 3)?,
        missions(&ecm, 0.4, 35.0, 300, 4)?,
    ];
    let test = missions(&ecm, 0.2, 27.0, 600, 5)?;
    let fnn = fit(FeatureMode::Fnn, &ecm, &train_set, &test)?;
    let pinn = fit(FeatureMode::Pinn, &ecm, &train_set, &test)?;
    println!("test RMSE: FNN {fnn:.2} mV, PINN {pinn:.2} mV (noise floor 5 mV)");
    Ok(())
}
