//! Accuracy and latency figures for a trained surrogate.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpModel;

/// Error statistics of a prediction, errors in mV and R² in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub max_error_mv: f64,
    pub mae_mv: f64,
    pub rmse_mv: f64,
    pub r2_pct: f64,
}

/// Compare predicted and measured voltages (both in volts).
///
/// R² uses the mean of `actual` for the total sum of squares.
pub fn evaluate(pred: &[f64], actual: &[f64]) -> Result<ErrorMetrics> {
    if pred.is_empty() || pred.len() != actual.len() {
        return Err(Error::InvalidInput(format!(
            "need equal non-zero lengths, got {} predictions and {} actuals",
            pred.len(),
            actual.len()
        )));
    }
    if pred.iter().chain(actual).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite voltage in evaluation".into()));
    }
    let n = pred.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let sst: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedR2);
    }
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut max = 0.0f64;
    for (p, y) in pred.iter().zip(actual) {
        let e = p - y;
        sse += e * e;
        sae += e.abs();
        max = max.max(e.abs());
    }
    let mae = sae / n;
    let rmse = (sse / n).sqrt();
    Ok(ErrorMetrics {
        max_error_mv: 1e3 * max,
        mae_mv: 1e3 * mae,
        rmse_mv: 1e3 * rmse,
        r2_pct: 100.0 * (1.0 - sse / sst),
    })
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub hidden_layers: usize,
    pub neurons: usize,
    pub max_error_mv: f64,
    pub mae_mv: f64,
    pub rmse_mv: f64,
    pub r2_pct: f64,
    pub param_count: usize,
    /// Absent unless timing was requested.
    pub mean_inference_us: Option<f64>,
}

pub const REPORT_HEADER: [&str; 9] = [
    "model",
    "hidden_layers",
    "neurons",
    "max_error_mv",
    "mae_mv",
    "rmse_mv",
    "r2_pct",
    "param_count",
    "mean_inference_us",
];

impl EvalReport {
    pub fn new(model_tag: &str, hidden_layers: usize, neurons: usize, metrics: ErrorMetrics, param_count: usize) -> Self {
        Self {
            model_tag: model_tag.to_string(),
            hidden_layers,
            neurons,
            max_error_mv: metrics.max_error_mv,
            mae_mv: metrics.mae_mv,
            rmse_mv: metrics.rmse_mv,
            r2_pct: metrics.r2_pct,
            param_count,
            mean_inference_us: None,
        }
    }

    pub fn csv_header() -> String {
        REPORT_HEADER.join(",")
    }

    /// Fixed-precision CSV row in [`REPORT_HEADER`] order.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{},{}",
            self.model_tag,
            self.hidden_layers,
            self.neurons,
            self.max_error_mv,
            self.mae_mv,
            self.rmse_mv,
            self.r2_pct,
            self.param_count,
            self.mean_inference_us.map(|t| format!("{t:.4}")).unwrap_or_default()
        )
    }
}

/// Wall-clock latency of single-row forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Mean latency per row (µs).
    pub mean_us: f64,
    /// Standard deviation of the per-row latency across repetitions (µs).
    pub std_us: f64,
    pub repetitions: usize,
    pub rows: usize,
    /// Mean wall time of one full pass over all rows (µs).
    pub mean_pass_us: f64,
}

/// Mean per-row inference latency over `repetitions` passes through `rows`,
/// after one untimed warmup pass. Runs on the calling thread.
pub fn time_inference(model: &MlpModel, rows: &[Vec<f64>], repetitions: usize) -> Result<Timing> {
    if repetitions == 0 {
        return Err(Error::InvalidInput("timing needs at least one repetition".into()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("timing needs at least one row".into()));
    }
    let mut scratch = model.scratch();
    for r in rows {
        black_box(model.forward_with(black_box(r), &mut scratch)?);
    }
    let mut pass_us = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for r in rows {
            black_box(model.forward_with(black_box(r), &mut scratch)?);
        }
        pass_us.push(start.elapsed().as_secs_f64() * 1e6);
    }
    let n = rows.len() as f64;
    let mean_pass = pass_us.iter().sum::<f64>() / repetitions as f64;
    let var = pass_us.iter().map(|t| (t - mean_pass).powi(2)).sum::<f64>() / repetitions as f64;
    Ok(Timing {
        mean_us: mean_pass / n,
        std_us: var.sqrt() / n,
        repetitions,
        rows: rows.len(),
        mean_pass_us: mean_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Vec<f64> {
        (0..n).map(|k| 3.5 + 0.01 * k as f64).collect()
    }

    #[test]
    fn identity_is_perfect() {
        let y = ramp(50);
        let m = evaluate(&y, &y).unwrap();
        assert_eq!(m.max_error_mv, 0.0);
        assert_eq!(m.mae_mv, 0.0);
        assert_eq!(m.rmse_mv, 0.0);
        assert_eq!(m.r2_pct, 100.0);
    }

    #[test]
    fn constant_offset() {
        let y = ramp(50);
        let p: Vec<f64> = y.iter().map(|v| v + 0.010).collect();
        let m = evaluate(&p, &y).unwrap();
        for v in [m.max_error_mv, m.mae_mv, m.rmse_mv] {
            assert!((v - 10.0).abs() < 1e-9, "{m:?}");
        }
    }

    #[test]
    fn hand_computed_bundle() {
        let y = [3.0, 3.5, 4.0];
        let p = [3.1, 3.5, 3.8];
        let m = evaluate(&p, &y).unwrap();
        assert!((m.max_error_mv - 200.0).abs() < 1e-9);
        assert!((m.mae_mv - 100.0).abs() < 1e-9);
        assert!((m.rmse_mv - (0.05f64 / 3.0).sqrt() * 1e3).abs() < 1e-9);
        assert!((m.r2_pct - 100.0 * (1.0 - 0.05 / 0.5)).abs() < 1e-9);
    }

    #[test]
    fn evaluate_errors() {
        assert!(matches!(evaluate(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedR2)));
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_row_follows_header_order() {
        let mut r = EvalReport::new(
            "PINN",
            2,
            64,
            ErrorMetrics {
                max_error_mv: 110.0,
                mae_mv: 9.652,
                rmse_mv: 20.1,
                r2_pct: 99.2,
            },
            4865,
        );
        assert_eq!(EvalReport::csv_header(), "model,hidden_layers,neurons,max_error_mv,mae_mv,rmse_mv,r2_pct,param_count,mean_inference_us");
        assert_eq!(r.csv_row(), "PINN,2,64,110.000,9.652,20.100,99.200,4865,");
        r.mean_inference_us = Some(1.25);
        assert!(r.csv_row().ends_with(",4865,1.2500"));
    }

    #[test]
    fn zero_repetitions_rejected() {
        let model = MlpModel::zeros(MlpSpec::new(5, 1, 4).unwrap());
        assert!(time_inference(&model, &[vec![0.0; 5]], 0).is_err());
        assert!(time_inference(&model, &[], 5).is_err());
        assert!(time_inference(&model, &[vec![0.0; 9]], 5).is_err());
    }

    proptest! {
        #[test]
        fn metric_ordering_and_permutation_invariance(
            pairs in proptest::collection::vec((3.0f64..4.2, -0.3f64..0.3), 2..100),
            rot in 0usize..100,
        ) {
            let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let Ok(m) = evaluate(&pred, &actual) else { return Ok(()); };
            prop_assert!(m.rmse_mv >= m.mae_mv);
            prop_assert!(m.max_error_mv >= m.rmse_mv);
            prop_assert!(m.r2_pct <= 100.0);

            let k = rot % actual.len();
            let mut a2 = actual.clone();
            let mut p2 = pred.clone();
            a2.rotate_left(k);
            p2.rotate_left(k);
            a2.reverse();
            p2.reverse();
            let m2 = evaluate(&p2, &a2).unwrap();
            prop_assert!((m.mae_mv - m2.mae_mv).abs() <= 1e-9);
            prop_assert!((m.rmse_mv - m2.rmse_mv).abs() <= 1e-9);
            prop_assert_eq!(m.max_error_mv, m2.max_error_mv);
            prop_assert!((m.r2_pct - m2.r2_pct).abs() <= 1e-9);
        }
    }
}
