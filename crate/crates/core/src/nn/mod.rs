//! Small dense feed-forward network: ReLU hidden layers, linear scalar output.
//!
//! The same network serves both surrogate families. In FNN mode its output
//! is a normalized voltage; in PINN mode it is the residual `ΔV` in volts,
//! added to the circuit-model voltage by [`predict_pinn`].
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`.

mod file;
mod train;

pub use file::{LayerFile, ModelFile, Surrogate, TracePrediction};
pub use train::{train, OptimizerKind, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape. `hidden_layers = 0` gives a plain linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub neurons_per_layer: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: usize, neurons_per_layer: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_layers,
            neurons_per_layer,
            output_dim: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be positive".into()));
        }
        if self.hidden_layers > 0 && self.neurons_per_layer == 0 {
            return Err(Error::InvalidInput("neurons_per_layer must be positive".into()));
        }
        if self.output_dim != 1 {
            return Err(Error::InvalidInput(format!(
                "output_dim must be 1, got {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.neurons_per_layer));
            fan_in = self.neurons_per_layer;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

/// Trainable parameter count including biases.
pub fn param_count(spec: &MlpSpec) -> usize {
    spec.layer_dims().iter().map(|(i, o)| i * o + o).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.w.chunks_exact(self.in_dim).zip(&self.b)) {
            *o = b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub spec: MlpSpec,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub layers: Vec<Dense>,
}

impl MlpModel {
    pub fn zeros(spec: MlpSpec) -> Self {
        Self {
            spec,
            seed: 0,
            layers: spec.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    /// He-uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn he_uniform(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(spec);
        model.seed = seed;
        for layer in &mut model.layers {
            let limit = (6.0 / layer.in_dim as f64).sqrt();
            for w in &mut layer.w {
                *w = rng.random_range(-limit..limit);
            }
        }
        model
    }

    /// He-uniform init with the output layer zeroed, so the network starts
    /// out predicting exactly zero residual.
    pub fn residual_init(spec: MlpSpec, seed: u64) -> Self {
        let mut model = Self::he_uniform(spec, seed);
        if let Some(out) = model.layers.last_mut() {
            out.w.fill(0.0);
            out.b.fill(0.0);
        }
        model
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for p in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *p = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(&l.b).all(|p| p.is_finite()))
    }

    pub fn scratch(&self) -> Scratch {
        Scratch::new(&self.spec)
    }

    pub fn forward(&self, row: &[f64]) -> Result<f64> {
        let mut scratch = self.scratch();
        self.forward_with(row, &mut scratch)
    }

    /// Allocation-free forward pass.
    pub fn forward_with(&self, row: &[f64], scratch: &mut Scratch) -> Result<f64> {
        if row.len() != self.spec.input_dim {
            return Err(Error::InvalidInput(format!(
                "input has {} features, model expects {}",
                row.len(),
                self.spec.input_dim
            )));
        }
        Ok(self.forward_unchecked(row, scratch))
    }

    #[inline]
    fn forward_unchecked(&self, row: &[f64], scratch: &mut Scratch) -> f64 {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = scratch.acts.split_at_mut(l);
            let input: &[f64] = if l == 0 { row } else { &before[l - 1] };
            let out = &mut after[0];
            layer.apply(input, out);
            if l < last {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        scratch.acts[last][0]
    }
}

/// Per-layer activation buffers reused across forward/backward passes.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(spec: &MlpSpec) -> Self {
        let acts: Vec<Vec<f64>> = spec.layer_dims().iter().map(|&(_, o)| vec![0.0; o]).collect();
        Self {
            deltas: acts.clone(),
            acts,
        }
    }
}

/// Row-major inputs with one scalar target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || inputs.len() != input_dim * targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} input values do not form {} rows of {input_dim}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            input_dim,
            inputs,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("rows differ in length".into()));
        }
        Self::new(dim, rows.concat(), targets.to_vec())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            input_dim: self.input_dim,
            inputs: indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// `(1/N)·Σ(ŷ - y)²`.
pub fn loss_mse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("MSE of an empty set".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

/// Gradient of the batch MSE, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    fn clear(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
    }

    /// Same ordering as [`MlpModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b).copied())
            .collect()
    }
}

/// Mean training loss over the whole dataset.
pub fn dataset_loss(model: &MlpModel, data: &Dataset) -> Result<f64> {
    check_dims(model, data)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("MSE of an empty set".into()));
    }
    let mut scratch = model.scratch();
    let sse: f64 = (0..data.len())
        .map(|i| {
            let e = model.forward_unchecked(data.row(i), &mut scratch) - data.targets[i];
            e * e
        })
        .sum();
    Ok(sse / data.len() as f64)
}

pub fn predict(model: &MlpModel, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(model, data)?;
    let mut scratch = model.scratch();
    Ok((0..data.len())
        .map(|i| model.forward_unchecked(data.row(i), &mut scratch))
        .collect())
}

fn check_dims(model: &MlpModel, data: &Dataset) -> Result<()> {
    if data.input_dim != model.spec.input_dim {
        return Err(Error::InvalidInput(format!(
            "dataset has {} features, model expects {}",
            data.input_dim, model.spec.input_dim
        )));
    }
    Ok(())
}

/// Analytic gradient of the batch MSE. Returns `(loss, gradients)`.
pub fn backward(model: &MlpModel, batch: &Dataset) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let mut scratch = model.scratch();
    let indices: Vec<usize> = (0..batch.len()).collect();
    let loss = backward_into(model, batch, &indices, &mut grads, &mut scratch)?;
    Ok((loss, grads))
}

/// Accumulates the gradient of the MSE over `indices` into `grads`
/// (cleared first).
pub(crate) fn backward_into(
    model: &MlpModel,
    data: &Dataset,
    indices: &[usize],
    grads: &mut Gradients,
    scratch: &mut Scratch,
) -> Result<f64> {
    check_dims(model, data)?;
    if indices.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    grads.clear();
    let scale = 2.0 / indices.len() as f64;
    let last = model.layers.len() - 1;
    let mut sse = 0.0;

    for &i in indices {
        let x = data.row(i);
        let y_hat = model.forward_unchecked(x, scratch);
        let err = y_hat - data.targets[i];
        if !err.is_finite() {
            return Err(Error::NonFinite(format!(
                "prediction {y_hat} for sample {i} of a batch of {}",
                indices.len()
            )));
        }
        sse += err * err;
        scratch.deltas[last][0] = scale * err;

        for l in (0..=last).rev() {
            let layer = &model.layers[l];
            let grad = &mut grads.layers[l];
            let input: &[f64] = if l == 0 { x } else { &scratch.acts[l - 1] };
            let (lower, upper) = scratch.deltas.split_at_mut(l);
            let delta = &upper[0];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad.b[o] += d;
                let row = &mut grad.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                let prev = &mut lower[l - 1];
                let act = &scratch.acts[l - 1];
                for (k, p) in prev.iter_mut().enumerate() {
                    *p = if act[k] > 0.0 {
                        delta
                            .iter()
                            .enumerate()
                            .map(|(o, d)| d * layer.w[o * layer.in_dim + k])
                            .sum()
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    Ok(sse / indices.len() as f64)
}

/// `v_phy + ΔV(row)`; `row` is the normalized PINN feature vector.
pub fn predict_pinn(model: &MlpModel, row: &[f64], v_phy: f64) -> Result<f64> {
    Ok(v_phy + model.forward(row)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts_match_formula() {
        assert_eq!(param_count(&MlpSpec::new(5, 1, 32).unwrap()), 225);
        assert_eq!(param_count(&MlpSpec::new(9, 1, 32).unwrap()), 353);
        assert_eq!(param_count(&MlpSpec::new(9, 2, 64).unwrap()), 4865);
        assert_eq!(param_count(&MlpSpec::new(5, 4, 128).unwrap()), 50433);
        assert_eq!(param_count(&MlpSpec::new(9, 0, 0).unwrap()), 10);
    }

    #[test]
    fn param_count_matches_stored_parameters() {
        for &(i, h, n) in &[(5, 1, 32), (9, 2, 64), (5, 4, 128), (9, 0, 0), (3, 3, 7)] {
            let spec = MlpSpec::new(i, h, n).unwrap();
            let model = MlpModel::he_uniform(spec, 1);
            assert_eq!(model.flat_params().len(), param_count(&spec));
            assert_eq!(model.param_count(), param_count(&spec));
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(0, 1, 32).is_err());
        assert!(MlpSpec::new(5, 1, 0).is_err());
        let bad = MlpSpec {
            output_dim: 2,
            ..MlpSpec::new(5, 1, 4).unwrap()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let model = MlpModel::zeros(MlpSpec::new(9, 2, 16).unwrap());
        assert_eq!(model.forward(&[1.0, -2.0, 3.0, 0.5, 9.0, -1.0, 0.0, 2.0, 7.0]).unwrap(), 0.0);
    }

    #[test]
    fn dead_relu_passes_only_output_bias() {
        let mut model = MlpModel::zeros(MlpSpec::new(3, 1, 1).unwrap());
        model.layers[0].w = vec![1.0, 1.0, 1.0];
        model.layers[1].w = vec![5.0];
        model.layers[1].b = vec![0.25];
        assert_eq!(model.forward(&[-1.0, -2.0, 0.5]).unwrap(), 0.25);
        assert_eq!(model.forward(&[1.0, 2.0, 0.5]).unwrap(), 0.25 + 5.0 * 3.5);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = MlpModel::zeros(MlpSpec::new(5, 1, 4).unwrap());
        assert!(model.forward(&[1.0; 9]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((loss_mse(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0]).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(loss_mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert!(loss_mse(&[], &[]).is_err());
        assert!(loss_mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn he_init_is_seeded_and_bounded() {
        let spec = MlpSpec::new(9, 2, 8).unwrap();
        let a = MlpModel::he_uniform(spec, 7);
        assert_eq!(a, MlpModel::he_uniform(spec, 7));
        assert_ne!(a.flat_params(), MlpModel::he_uniform(spec, 8).flat_params());
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.layers[0].w.iter().all(|w| w.abs() <= limit));
        assert!(a.layers.iter().all(|l| l.b.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn residual_init_predicts_physics_exactly() {
        let model = MlpModel::residual_init(MlpSpec::new(9, 2, 64).unwrap(), 3);
        let row = [0.3, -1.2, 0.7, 0.1, -0.9, 1.1, 2.0, -0.4, 0.6];
        assert_eq!(predict_pinn(&model, &row, 3.712_345).unwrap(), 3.712_345);
        assert!(model.layers[0].w.iter().any(|w| *w != 0.0));
    }

    #[test]
    fn pinn_head_is_additive() {
        let mut model = MlpModel::zeros(MlpSpec::new(9, 1, 4).unwrap());
        model.layers[1].b = vec![0.05];
        assert!((predict_pinn(&model, &[0.0; 9], 3.7).unwrap() - 3.75).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_batch_has_zero_gradient() {
        let model = MlpModel::he_uniform(MlpSpec::new(4, 2, 6).unwrap(), 11);
        let rows: Vec<Vec<f64>> = (0..8).map(|k| vec![k as f64 * 0.1, -0.3, 0.5, 1.0 - k as f64 * 0.2]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| model.forward(r).unwrap()).collect();
        let (loss, g) = backward(&model, &Dataset::from_rows(&rows, &targets).unwrap()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_model_gradient_is_least_squares_gradient() {
        // y_hat = w·x + b, dL/dw = (2/N)·Xᵀ(Xw + b - y), dL/db = (2/N)·Σ(Xw + b - y)
        let mut model = MlpModel::zeros(MlpSpec::new(3, 0, 0).unwrap());
        let w = [0.4, -1.1, 0.25];
        let b = 0.3;
        model.layers[0].w = w.to_vec();
        model.layers[0].b = vec![b];
        let rows = vec![
            vec![1.0, 2.0, -1.0],
            vec![0.5, -0.5, 3.0],
            vec![-2.0, 0.0, 1.5],
            vec![0.2, 0.7, 0.9],
        ];
        let y = [1.0, -0.5, 2.0, 0.1];
        let (loss, g) = backward(&model, &Dataset::from_rows(&rows, &y).unwrap()).unwrap();

        let resid: Vec<f64> = rows
            .iter()
            .zip(&y)
            .map(|(r, t)| r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b - t)
            .collect();
        let n = rows.len() as f64;
        let expected_loss = resid.iter().map(|e| e * e).sum::<f64>() / n;
        assert!((loss - expected_loss).abs() < 1e-14);
        for j in 0..3 {
            let expected = 2.0 / n * rows.iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>();
            assert!((g.layers[0].w[j] - expected).abs() < 1e-14);
        }
        assert!((g.layers[0].b[0] - 2.0 / n * resid.iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn flat_params_round_trip() {
        let spec = MlpSpec::new(5, 2, 3).unwrap();
        let a = MlpModel::he_uniform(spec, 4);
        let mut b = MlpModel::zeros(spec);
        b.set_flat_params(&a.flat_params()).unwrap();
        assert_eq!(a.layers, b.layers);
        assert!(b.set_flat_params(&[0.0; 3]).is_err());
    }
}
