//! Second-order RC equivalent-circuit model.
//!
//! The circuit is an OCV source in series with an ohmic resistance `R0` and
//! two parallel RC branches. Positive current means discharge, so the
//! terminal voltage under load is
//!
//! ```text
//! V = OCV(SOC) - I·R0 - V_RC1 - V_RC2
//! ```
//!
//! Each branch is advanced with the exact zero-order-hold solution of its
//! first-order ODE:
//!
//! ```text
//! V_RCj[i] = exp(-Δt/τj)·V_RCj[i-1] + Rj·(1 - exp(-Δt/τj))·I[i]
//! ```
//!
//! so composing `n` steps of `Δt/n` under constant current gives the same
//! state as one step of `Δt`.

mod fit;

pub use fit::{fit_params, segment_trace, FitReport, PulseSegment, RelaxationSegment, SegmentOptions};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// One parallel RC branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcBranch {
    /// Resistance (Ω).
    pub r: f64,
    /// Time constant τ = R·C (s).
    pub tau: f64,
}

/// Piecewise-linear open-circuit-voltage curve over SOC.
///
/// Knots span exactly `[0, 1]` in SOC and OCV increases strictly with SOC.
/// A malformed curve is rejected when it is built, so [`OcvCurve::lookup`]
/// never fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct OcvCurve {
    knots: Vec<(f64, f64)>,
}

impl OcvCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config(format!(
                "OCV curve needs at least 2 knots, got {}",
                knots.len()
            )));
        }
        for &(soc, v) in &knots {
            if !soc.is_finite() || !v.is_finite() {
                return Err(Error::Config(format!("OCV knot ({soc}, {v}) is not finite")));
            }
            if !(0.0..=1.0).contains(&soc) {
                return Err(Error::Config(format!("OCV knot soc {soc} outside [0, 1]")));
            }
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(Error::Config(
                "OCV knots must start at soc = 0 and end at soc = 1".into(),
            ));
        }
        for pair in knots.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config(format!(
                    "OCV knot soc values must be strictly increasing ({} then {})",
                    pair[0].0, pair[1].0
                )));
            }
            if pair[1].1 <= pair[0].1 {
                return Err(Error::Config(format!(
                    "OCV must increase strictly with soc ({} V then {} V)",
                    pair[0].1, pair[1].1
                )));
            }
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Linear interpolation between knots; SOC outside `[0, 1]` takes the
    /// boundary knot value.
    pub fn lookup(&self, soc: f64) -> f64 {
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if soc.is_nan() || soc <= first.0 {
            return first.1;
        }
        if soc >= last.0 {
            return last.1;
        }
        // index of the first knot strictly above soc
        let hi = self.knots.partition_point(|&(s, _)| s <= soc);
        let (s0, v0) = self.knots[hi - 1];
        let (s1, v1) = self.knots[hi];
        v0 + (v1 - v0) * (soc - s0) / (s1 - s0)
    }
}

impl TryFrom<Vec<[f64; 2]>> for OcvCurve {
    type Error = Error;

    fn try_from(raw: Vec<[f64; 2]>) -> Result<Self> {
        OcvCurve::new(raw.into_iter().map(|[s, v]| (s, v)).collect())
    }
}

impl From<OcvCurve> for Vec<[f64; 2]> {
    fn from(curve: OcvCurve) -> Self {
        curve.knots.into_iter().map(|(s, v)| [s, v]).collect()
    }
}

/// Free-function form of [`OcvCurve::lookup`].
pub fn ocv_lookup(curve: &OcvCurve, soc: f64) -> f64 {
    curve.lookup(soc)
}

/// Parameters of the second-order model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EcmParamsRaw", into = "EcmParamsRaw")]
pub struct EcmParams {
    /// Ohmic resistance (Ω).
    pub r0: f64,
    /// Fast and slow RC branches.
    pub branches: [RcBranch; 2],
    /// Nominal capacity (A·h).
    pub capacity_ah: f64,
    pub ocv: OcvCurve,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EcmParamsRaw {
    r0: f64,
    branches: Vec<RcBranch>,
    capacity_ah: f64,
    ocv_knots: OcvCurve,
}

impl TryFrom<EcmParamsRaw> for EcmParams {
    type Error = Error;

    fn try_from(raw: EcmParamsRaw) -> Result<Self> {
        let branches: [RcBranch; 2] = raw.branches.try_into().map_err(|b: Vec<RcBranch>| {
            Error::Config(format!(
                "ecm.branches must hold exactly 2 RC branches, got {}",
                b.len()
            ))
        })?;
        EcmParams::new(raw.r0, branches, raw.capacity_ah, raw.ocv_knots)
    }
}

impl From<EcmParams> for EcmParamsRaw {
    fn from(p: EcmParams) -> Self {
        EcmParamsRaw {
            r0: p.r0,
            branches: p.branches.to_vec(),
            capacity_ah: p.capacity_ah,
            ocv_knots: p.ocv,
        }
    }
}

impl EcmParams {
    pub fn new(r0: f64, branches: [RcBranch; 2], capacity_ah: f64, ocv: OcvCurve) -> Result<Self> {
        let params = Self {
            r0,
            branches,
            capacity_ah,
            ocv,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("ecm.r0", self.r0)?;
        for (j, b) in self.branches.iter().enumerate() {
            positive(&format!("ecm.branches[{j}].r"), b.r)?;
            positive(&format!("ecm.branches[{j}].tau"), b.tau)?;
        }
        positive("ecm.capacity_ah", self.capacity_ah)
    }
}

/// Evolving circuit state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmState {
    /// Polarization voltages `[V_RC1, V_RC2]` (V).
    pub v_rc: [f64; 2],
    /// State of charge in `[0, 1]`.
    pub soc: f64,
}

impl EcmState {
    /// Fully relaxed state at the given SOC.
    pub fn rested(soc: f64) -> Self {
        Self {
            v_rc: [0.0, 0.0],
            soc,
        }
    }
}

/// Advance one RC branch by `dt_s` under constant `current_a`.
pub fn step_rc(prev: f64, current_a: f64, dt_s: f64, r_j: f64, tau_j: f64) -> Result<f64> {
    ensure_finite("V_RC", prev)?;
    ensure_finite("current", current_a)?;
    ensure_finite("dt", dt_s)?;
    ensure_finite("R", r_j)?;
    ensure_finite("tau", tau_j)?;
    if dt_s <= 0.0 {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt_s}")));
    }
    if tau_j <= 0.0 {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau_j}")));
    }
    let decay = (-dt_s / tau_j).exp();
    // -expm1 keeps 1 - e^(-x) accurate for dt << tau
    Ok(decay * prev + r_j * (-(-dt_s / tau_j).exp_m1()) * current_a)
}

/// `OCV - I·R0 - V_RC1 - V_RC2`.
pub fn terminal_voltage(ocv_v: f64, current_a: f64, r0: f64, v_rc1: f64, v_rc2: f64) -> Result<f64> {
    ensure_finite("OCV", ocv_v)?;
    ensure_finite("current", current_a)?;
    ensure_finite("R0", r0)?;
    ensure_finite("V_RC1", v_rc1)?;
    ensure_finite("V_RC2", v_rc2)?;
    Ok(ocv_v - current_a * r0 - v_rc1 - v_rc2)
}

/// Coulomb-counting SOC update. Returns the new SOC and whether it had to be
/// clamped into `[0, 1]`.
pub fn update_soc(soc: f64, current_a: f64, dt_s: f64, capacity_ah: f64) -> (f64, bool) {
    let raw = soc - current_a * dt_s / (3600.0 * capacity_ah);
    let clamped = raw.clamp(0.0, 1.0);
    (clamped, clamped != raw)
}

/// One simulated step: state after the step, OCV used, and physics voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmStep {
    pub state: EcmState,
    pub ocv_v: f64,
    pub v_phy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<EcmStep>,
    /// Number of steps whose coulomb-counted SOC was clamped into `[0, 1]`.
    pub soc_clamps: usize,
}

impl Trajectory {
    pub fn v_phy(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.v_phy).collect()
    }
}

/// Advance the full state by one step of `(dt_s, current_a)`.
pub fn step(params: &EcmParams, state: &EcmState, dt_s: f64, current_a: f64) -> Result<(EcmStep, bool)> {
    let (soc, clamped) = update_soc(state.soc, current_a, dt_s, params.capacity_ah);
    step_with_soc(params, state, dt_s, current_a, soc).map(|s| (s, clamped))
}

fn step_with_soc(params: &EcmParams, state: &EcmState, dt_s: f64, current_a: f64, soc: f64) -> Result<EcmStep> {
    let mut v_rc = [0.0; 2];
    for (j, branch) in params.branches.iter().enumerate() {
        v_rc[j] = step_rc(state.v_rc[j], current_a, dt_s, branch.r, branch.tau)?;
    }
    let ocv_v = params.ocv.lookup(soc);
    let v_phy = terminal_voltage(ocv_v, current_a, params.r0, v_rc[0], v_rc[1])?;
    Ok(EcmStep {
        state: EcmState { v_rc, soc },
        ocv_v,
        v_phy,
    })
}

/// Run the model over a `(dt_s, current_a)` profile with coulomb-counted SOC.
///
/// Step `i` holds `current_a[i]` constant for `dt_s[i]`; the reported OCV and
/// voltage use the SOC at the end of the step.
pub fn simulate(params: &EcmParams, init: EcmState, profile: &[(f64, f64)]) -> Result<Trajectory> {
    if profile.is_empty() {
        return Err(Error::InvalidInput("empty current profile".into()));
    }
    let mut state = init;
    let mut steps = Vec::with_capacity(profile.len());
    let mut soc_clamps = 0;
    for (i, &(dt_s, current_a)) in profile.iter().enumerate() {
        let (s, clamped) = step(params, &state, dt_s, current_a).map_err(|e| e.at_step(i))?;
        soc_clamps += usize::from(clamped);
        state = s.state;
        steps.push(s);
    }
    Ok(Trajectory { steps, soc_clamps })
}

/// Like [`simulate`], but the SOC at each step is taken from `soc` (for
/// example a dataset-provided column) instead of coulomb counting.
pub fn simulate_with_soc(
    params: &EcmParams,
    init: EcmState,
    profile: &[(f64, f64)],
    soc: &[f64],
) -> Result<Trajectory> {
    if profile.is_empty() {
        return Err(Error::InvalidInput("empty current profile".into()));
    }
    if soc.len() != profile.len() {
        return Err(Error::InvalidInput(format!(
            "soc sequence length {} does not match profile length {}",
            soc.len(),
            profile.len()
        )));
    }
    let mut state = init;
    let mut steps = Vec::with_capacity(profile.len());
    let mut soc_clamps = 0;
    for (i, (&(dt_s, current_a), &soc_i)) in profile.iter().zip(soc).enumerate() {
        ensure_finite("soc", soc_i).map_err(|e| e.at_step(i))?;
        let clamped = soc_i.clamp(0.0, 1.0);
        soc_clamps += usize::from(clamped != soc_i);
        let s = step_with_soc(params, &state, dt_s, current_a, clamped).map_err(|e| e.at_step(i))?;
        state = s.state;
        steps.push(s);
    }
    Ok(Trajectory { steps, soc_clamps })
}
