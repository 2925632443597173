use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, Dense, MlpModel, MlpSpec, Scratch};
use crate::ecm::EcmParams;
use crate::error::{Error, Result};
use crate::features::{build_rows, physics_trace, FeatureMode, Normalizer, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    /// `out_dim` rows of `in_dim` weights.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Self-describing JSON weight document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub spec: MlpSpec,
    pub seed: u64,
    pub mode: FeatureMode,
    pub normalizer: Normalizer,
    /// Circuit parameters used for the physics voltage (PINN only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecm: Option<EcmParams>,
    pub layers: Vec<LayerFile>,
}

/// A trained network together with everything needed to turn raw samples
/// into voltage predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub mode: FeatureMode,
    pub model: MlpModel,
    pub normalizer: Normalizer,
    pub ecm: Option<EcmParams>,
}

/// Predictions over one contiguous trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePrediction {
    pub v_pred: Vec<f64>,
    /// Circuit-model voltage, PINN only.
    pub v_phy: Option<Vec<f64>>,
}

impl Surrogate {
    pub fn new(mode: FeatureMode, model: MlpModel, normalizer: Normalizer, ecm: Option<EcmParams>) -> Result<Self> {
        let s = Self {
            mode,
            model,
            normalizer,
            ecm,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.mode.input_dim();
        if self.model.spec.input_dim != dim || self.normalizer.input_dim() != dim || self.normalizer.mode != self.mode {
            return Err(Error::ModelFile(format!(
                "{} surrogate needs {dim} inputs; network has {}, normalizer has {}",
                self.mode,
                self.model.spec.input_dim,
                self.normalizer.input_dim()
            )));
        }
        if self.mode == FeatureMode::Pinn && self.ecm.is_none() {
            return Err(Error::ModelFile("PINN surrogate carries no circuit parameters".into()));
        }
        Ok(())
    }

    /// Predict the terminal voltage along a trace that starts rested.
    pub fn predict_trace(&self, samples: &[Sample]) -> Result<TracePrediction> {
        let physics = match (&self.ecm, self.mode) {
            (Some(ecm), FeatureMode::Pinn) => Some(physics_trace(ecm, samples)?),
            _ => None,
        };
        let rows = build_rows(self.mode, samples, physics.as_ref().map(|t| t.steps.as_slice()))?;
        let mut scratch = self.model.scratch();
        let mut v_pred = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let z = self.normalizer.normalize_row(row)?;
            let out = self.model.forward_with(&z, &mut scratch)?;
            v_pred.push(match &physics {
                Some(t) => t.steps[i].v_phy + out,
                None => self.normalizer.denormalize_target(out),
            });
        }
        Ok(TracePrediction {
            v_pred,
            v_phy: physics.map(|t| t.v_phy()),
        })
    }

    /// Output for one already-normalized feature row, in volts.
    pub fn predict_normalized(&self, z: &[f64], v_phy: f64, scratch: &mut Scratch) -> Result<f64> {
        let out = self.model.forward_with(z, scratch)?;
        Ok(match self.mode {
            FeatureMode::Pinn => v_phy + out,
            FeatureMode::Fnn => self.normalizer.denormalize_target(out),
        })
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            spec: self.model.spec,
            seed: self.model.seed,
            mode: self.mode,
            normalizer: self.normalizer.clone(),
            ecm: self.ecm.clone(),
            layers: self
                .model
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: l.w.chunks_exact(l.in_dim).map(<[f64]>::to_vec).collect(),
                    b: l.b.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        file.spec.validate()?;
        let dims = file.spec.layer_dims();
        if dims.len() != file.layers.len() {
            return Err(Error::ModelFile(format!(
                "spec implies {} layers, file has {}",
                dims.len(),
                file.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(dims.len());
        for (k, ((in_dim, out_dim), lf)) in dims.into_iter().zip(file.layers).enumerate() {
            if lf.w.len() != out_dim || lf.w.iter().any(|r| r.len() != in_dim) || lf.b.len() != out_dim {
                return Err(Error::ModelFile(format!(
                    "layer {k} does not have shape {out_dim}×{in_dim}"
                )));
            }
            let layer = Dense {
                in_dim,
                out_dim,
                w: lf.w.concat(),
                b: lf.b,
            };
            if layer.w.iter().chain(&layer.b).any(|p| !p.is_finite()) {
                return Err(Error::ModelFile(format!("layer {k} holds non-finite parameters")));
            }
            layers.push(layer);
        }
        let model = MlpModel {
            spec: file.spec,
            seed: file.seed,
            layers,
        };
        if model.param_count() != param_count(&file.spec) {
            return Err(Error::ModelFile(format!(
                "stored parameter count {} disagrees with spec ({})",
                model.param_count(),
                param_count(&file.spec)
            )));
        }
        if let Some(ecm) = &file.ecm {
            ecm.validate()?;
        }
        Surrogate::new(file.mode, model, file.normalizer, file.ecm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file())?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }
}
