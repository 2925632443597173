//! Analytic backprop against central finite differences, and the forward
//! pass against a hand-written dense evaluation.

use evtol_surrogate::nn::{backward, dataset_loss, Dataset, MlpModel, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(spec: MlpSpec, rng: &mut ChaCha8Rng) -> MlpModel {
    let mut model = MlpModel::zeros(spec);
    let params: Vec<f64> = (0..model.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    model.set_flat_params(&params).unwrap();
    model
}

fn random_data(input_dim: usize, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let inputs: Vec<f64> = (0..n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Dataset::new(input_dim, inputs, targets).unwrap()
}

/// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|)`.
fn max_relative_error(model: &MlpModel, data: &Dataset) -> f64 {
    let (_, grads) = backward(model, data).unwrap();
    let analytic = grads.flat();
    let theta = model.flat_params();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[k].abs());
        let mut p = theta.clone();
        p[k] = theta[k] + h;
        probe.set_flat_params(&p).unwrap();
        let up = dataset_loss(&probe, data).unwrap();
        p[k] = theta[k] - h;
        probe.set_flat_params(&p).unwrap();
        let down = dataset_loss(&probe, data).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(numeric.abs());
        if scale > 0.0 {
            worst = worst.max((analytic[k] - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn one_hidden_layer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(MlpSpec::new(9, 1, 8).unwrap(), &mut rng);
    let data = random_data(9, 16, &mut rng);
    let err = max_relative_error(&model, &data);
    assert!(err <= 1e-5, "max relative error {err:e}");
}

#[test]
fn two_hidden_layers_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = random_model(MlpSpec::new(9, 2, 8).unwrap(), &mut rng);
        let data = random_data(9, 16, &mut rng);
        let err = max_relative_error(&model, &data);
        assert!(err <= 1e-5, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn forward_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = random_model(MlpSpec::new(5, 2, 6).unwrap(), &mut rng);
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

    let mut a = x.clone();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            z[o] = layer.b[o];
            for i in 0..layer.in_dim {
                z[o] += layer.w[o * layer.in_dim + i] * a[i];
            }
            if l < last {
                z[o] = z[o].max(0.0);
            }
        }
        a = z;
    }
    let y = model.forward(&x).unwrap();
    assert!((y - a[0]).abs() <= 1e-12 * (1.0 + a[0].abs()), "{y} vs {}", a[0]);
}
