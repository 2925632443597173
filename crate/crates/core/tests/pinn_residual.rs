//! The residual head on top of the circuit model: exact physics at
//! initialization, and recovery of a known constant offset.

use evtol_surrogate::data::{synthesize, MissionProfile, Phase, SynthOptions};
use evtol_surrogate::ecm::{EcmParams, OcvCurve, RcBranch};
use evtol_surrogate::features::{build_rows, fit_normalizer, physics_trace, FeatureMode, Sample, Scaling};
use evtol_surrogate::nn::{predict_pinn, train, Dataset, MlpModel, MlpSpec, Surrogate, TrainConfig};

fn truth() -> EcmParams {
    EcmParams::new(
        0.02,
        [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
        3.0,
        OcvCurve::new(vec![(0.0, 3.0), (0.2, 3.5), (0.6, 3.75), (1.0, 4.2)]).unwrap(),
    )
    .unwrap()
}

fn profile(power_reduction: f64) -> MissionProfile {
    MissionProfile {
        dt_s: 1.0,
        takeoff: Phase { current_a: 12.0, duration_s: 30.0 },
        cruise: Phase { current_a: 5.0, duration_s: 200.0 },
        landing: Phase { current_a: 12.0, duration_s: 30.0 },
        rest_s: 100.0,
        power_reduction,
        recharge_current_a: Some(4.0),
    }
}

fn trace(offset: f64, reduction: f64, temp_c: f64, cycle: u32, seed: u64) -> Vec<Sample> {
    let opts = SynthOptions {
        seed,
        temp_c,
        cycle,
        dt_jitter: 0.1,
        ..SynthOptions::default()
    };
    synthesize(&profile(reduction), &truth(), |_| offset, &opts).unwrap().samples
}

#[test]
fn zero_initialized_head_reproduces_physics() {
    let ecm = truth();
    let mut samples = trace(0.0, 0.0, 25.0, 1, 1);
    // vary the operating point so no feature column is constant
    for (i, s) in samples.iter_mut().enumerate() {
        s.temp_c = 20.0 + (i % 7) as f64;
        s.cycle = 1 + (i % 3) as u32;
    }
    let physics = physics_trace(&ecm, &samples).unwrap();
    let rows = build_rows(FeatureMode::Pinn, &samples, Some(&physics.steps)).unwrap();
    let normalizer = fit_normalizer(&rows, &vec![0.0; rows.len()], Scaling::Zscore).unwrap();
    let model = MlpModel::residual_init(MlpSpec::new(9, 2, 16).unwrap(), 5);
    let surrogate = Surrogate::new(FeatureMode::Pinn, model, normalizer, Some(ecm)).unwrap();
    let pred = surrogate.predict_trace(&samples).unwrap();
    assert_eq!(pred.v_pred, physics.v_phy());
    // without offset or noise the generator is the circuit itself
    let measured: Vec<f64> = samples.iter().map(|s| s.voltage_v).collect();
    assert_eq!(pred.v_pred, measured);
}

#[test]
fn additive_head() {
    let mut model = MlpModel::zeros(MlpSpec::new(9, 1, 4).unwrap());
    model.layers[1].b[0] = 0.05;
    let v = predict_pinn(&model, &[0.3; 9], 3.7).unwrap();
    assert!((v - 3.75).abs() < 1e-15);
}

#[test]
fn learns_a_constant_offset() {
    let c = 0.03;
    let ecm = truth();
    let train_traces = [
        trace(c, 0.0, 20.0, 1, 11),
        trace(c, 0.1, 25.0, 50, 12),
        trace(c, 0.3, 30.0, 1000, 13),
    ];
    let test = trace(c, 0.2, 27.0, 600, 14);

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for t in &train_traces {
        let physics = physics_trace(&ecm, t).unwrap();
        rows.extend(build_rows(FeatureMode::Pinn, t, Some(&physics.steps)).unwrap());
        targets.extend(t.iter().zip(&physics.steps).map(|(s, p)| s.voltage_v - p.v_phy));
    }
    let normalizer = fit_normalizer(&rows, &targets, Scaling::Zscore).unwrap();
    let z: Vec<Vec<f64>> = rows.iter().map(|r| normalizer.normalize_row(r).unwrap()).collect();
    let data = Dataset::from_rows(&z, &targets).unwrap();
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 64,
        seed: 3,
        patience: None,
        ..TrainConfig::default()
    };
    let (model, report) = train(MlpModel::residual_init(MlpSpec::new(9, 1, 16).unwrap(), 3), &data, &cfg).unwrap();
    assert!(report.final_loss() < report.initial_loss);

    let surrogate = Surrogate::new(FeatureMode::Pinn, model, normalizer, Some(ecm)).unwrap();
    let pred = surrogate.predict_trace(&test).unwrap();
    let phy = pred.v_phy.unwrap();
    let worst = pred
        .v_pred
        .iter()
        .zip(&phy)
        .map(|(v, p)| (v - p - c).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "residual head deviates from the offset by {worst} V");
}
