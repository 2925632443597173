//! Input vectors for the two surrogate families and their normalization.
//!
//! Feature order is a frozen contract:
//!
//! - FNN:  `[Δt, I, SOC, T, N]`
//! - PINN: `[Δt, I, SOC, T, N, OCV, V_RC1, V_RC2, V_phy]`
//!
//! The PINN vector always starts with the FNN vector for the same sample.

use serde::{Deserialize, Serialize};

use crate::ecm::{self, EcmParams, EcmState, EcmStep, Trajectory};
use crate::error::{Error, Result};

pub const FNN_FEATURES: [&str; 5] = ["dt_s", "current_a", "soc", "temp_c", "cycle"];
pub const PINN_FEATURES: [&str; 9] = [
    "dt_s", "current_a", "soc", "temp_c", "cycle", "ocv_v", "v_rc1", "v_rc2", "v_phy",
];

/// One time step of measured cell quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Absolute time (s).
    pub t_s: f64,
    /// Step time Δt (s).
    pub dt_s: f64,
    /// Current (A), positive on discharge.
    pub current_a: f64,
    /// Measured terminal voltage (V).
    pub voltage_v: f64,
    pub temp_c: f64,
    pub soc: f64,
    pub cycle: u32,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("t_s", self.t_s),
            ("dt_s", self.dt_s),
            ("current_a", self.current_a),
            ("voltage_v", self.voltage_v),
            ("temp_c", self.temp_c),
            ("soc", self.soc),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("sample field {name} is not finite ({v})")));
        }
        if self.dt_s <= 0.0 {
            return Err(Error::InvalidInput(format!("sample dt_s must be positive, got {}", self.dt_s)));
        }
        if self.cycle < 1 {
            return Err(Error::InvalidInput("sample cycle number must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureMode {
    #[serde(rename = "FNN")]
    Fnn,
    #[serde(rename = "PINN")]
    Pinn,
}

impl FeatureMode {
    pub fn input_dim(self) -> usize {
        self.feature_names().len()
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            FeatureMode::Fnn => &FNN_FEATURES,
            FeatureMode::Pinn => &PINN_FEATURES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Fnn => "FNN",
            FeatureMode::Pinn => "PINN",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub mode: FeatureMode,
    pub values: Vec<f64>,
}

pub fn build_fnn_row(s: &Sample) -> FeatureRow {
    FeatureRow {
        mode: FeatureMode::Fnn,
        values: vec![s.dt_s, s.current_a, s.soc, s.temp_c, f64::from(s.cycle)],
    }
}

/// `ocv_v`, `state` and `v_phy` must come from the same time step as `s`.
pub fn build_pinn_row(s: &Sample, ocv_v: f64, state: &EcmState, v_phy: f64) -> FeatureRow {
    let mut values = build_fnn_row(s).values;
    values.extend_from_slice(&[ocv_v, state.v_rc[0], state.v_rc[1], v_phy]);
    FeatureRow {
        mode: FeatureMode::Pinn,
        values,
    }
}

/// Run the circuit model along a contiguous trace, starting rested.
///
/// SOC is taken from the samples, which carry either a dataset column or a
/// coulomb-counted value produced at ingestion.
pub fn physics_trace(params: &EcmParams, samples: &[Sample]) -> Result<Trajectory> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("empty trace".into()))?;
    let profile: Vec<(f64, f64)> = samples.iter().map(|s| (s.dt_s, s.current_a)).collect();
    let soc: Vec<f64> = samples.iter().map(|s| s.soc).collect();
    ecm::simulate_with_soc(params, EcmState::rested(first.soc), &profile, &soc)
}

/// Feature rows for a trace; `physics` is required in PINN mode.
pub fn build_rows(mode: FeatureMode, samples: &[Sample], physics: Option<&[EcmStep]>) -> Result<Vec<FeatureRow>> {
    match mode {
        FeatureMode::Fnn => Ok(samples.iter().map(build_fnn_row).collect()),
        FeatureMode::Pinn => {
            let physics = physics.ok_or_else(|| Error::InvalidInput("PINN rows need a physics trace".into()))?;
            if physics.len() != samples.len() {
                return Err(Error::InvalidInput(format!(
                    "physics trace length {} does not match {} samples",
                    physics.len(),
                    samples.len()
                )));
            }
            Ok(samples
                .iter()
                .zip(physics)
                .map(|(s, p)| build_pinn_row(s, p.ocv_v, &p.state, p.v_phy))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// `(x - mean) / std` with population std.
    #[default]
    Zscore,
    /// `(x - min) / (max - min)`.
    Minmax,
}

/// Per-feature affine scaling fitted on training data only.
///
/// For z-score scaling `shift`/`scale` hold the mean and population standard
/// deviation; for min–max they hold the minimum and the range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub scaling: Scaling,
    pub mode: FeatureMode,
    pub feature_shift: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_shift: f64,
    pub target_scale: f64,
}

fn column_stats(scaling: Scaling, values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    match scaling {
        Scaling::Zscore => {
            let n = values.clone().count() as f64;
            let mean = values.clone().sum::<f64>() / n;
            let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        }
        Scaling::Minmax => {
            let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            (lo, hi - lo)
        }
    }
}

fn is_degenerate(shift: f64, scale: f64) -> bool {
    !(scale.is_finite() && scale > 4.0 * f64::EPSILON * shift.abs().max(f64::MIN_POSITIVE))
}

pub fn fit_normalizer(rows: &[FeatureRow], targets: &[f64], scaling: Scaling) -> Result<Normalizer> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 training rows to fit a normalizer, got {}",
            rows.len()
        )));
    }
    if targets.len() != rows.len() {
        return Err(Error::InvalidInput(format!(
            "{} targets for {} rows",
            targets.len(),
            rows.len()
        )));
    }
    let mode = rows[0].mode;
    let dim = mode.input_dim();
    if let Some(bad) = rows.iter().find(|r| r.mode != mode || r.values.len() != dim) {
        return Err(Error::InvalidInput(format!(
            "mixed feature rows: expected {mode} with {dim} values, found {} with {}",
            bad.mode,
            bad.values.len()
        )));
    }
    let mut feature_shift = Vec::with_capacity(dim);
    let mut feature_scale = Vec::with_capacity(dim);
    for (c, name) in mode.feature_names().iter().enumerate() {
        let (shift, scale) = column_stats(scaling, rows.iter().map(|r| r.values[c]));
        if is_degenerate(shift, scale) {
            return Err(Error::ConstantFeature((*name).to_string()));
        }
        feature_shift.push(shift);
        feature_scale.push(scale);
    }
    // the PINN residual is learned in volts; its target transform is identity
    let (target_shift, target_scale) = match mode {
        FeatureMode::Pinn => (0.0, 1.0),
        FeatureMode::Fnn => {
            let (shift, scale) = column_stats(scaling, targets.iter().copied());
            if is_degenerate(shift, scale) {
                return Err(Error::ConstantFeature("target".into()));
            }
            (shift, scale)
        }
    };
    Ok(Normalizer {
        scaling,
        mode,
        feature_shift,
        feature_scale,
        target_shift,
        target_scale,
    })
}

impl Normalizer {
    pub fn input_dim(&self) -> usize {
        self.feature_shift.len()
    }

    pub fn normalize_row(&self, row: &FeatureRow) -> Result<Vec<f64>> {
        if row.values.len() != self.input_dim() || row.mode != self.mode {
            return Err(Error::InvalidInput(format!(
                "normalizer fitted for {} rows of {} values, got {} row of {}",
                self.mode,
                self.input_dim(),
                row.mode,
                row.values.len()
            )));
        }
        Ok(self.normalize_values(&row.values))
    }

    pub(crate) fn normalize_values(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.feature_shift.iter().zip(&self.feature_scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn denormalize_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.feature_shift.iter().zip(&self.feature_scale))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn normalize_target(&self, v: f64) -> f64 {
        (v - self.target_shift) / self.target_scale
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_shift
    }
}
