//! Identification of `R0`, `Rj`, `τj` from pulse and relaxation data.
//!
//! `R0` comes from the instantaneous voltage step at a current step. The RC
//! branches come from relaxation after load: during rest the terminal voltage
//! is
//!
//! ```text
//! V(t) = V∞ - R1·g1(τ1)·exp(-t/τ1) - R2·g2(τ2)·exp(-t/τ2)
//! ```
//!
//! where `gj(τ)` is the unit-resistance branch voltage at the moment the
//! current was interrupted, obtained by running the preceding current history
//! through [`step_rc`]. For fixed time constants the model is linear in
//! `(V∞, R1, R2)`, so those are solved by linear least squares and only the
//! two time constants are searched (log-spaced grid, then Nelder–Mead).

use nalgebra::{DMatrix, DVector};

use super::{step_rc, EcmParams, OcvCurve, RcBranch};
use crate::error::{Error, Result};

/// Smallest branch resistance written into fitted parameters. A branch that
/// fits to zero (or slightly negative) resistance is floored here so the
/// result still satisfies the model invariants.
pub const MIN_BRANCH_RESISTANCE: f64 = 1e-9;

const MIN_RELAXATION_POINTS: usize = 6;

/// Voltage and current on both sides of a current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSegment {
    pub i_before: f64,
    pub v_before: f64,
    pub i_after: f64,
    pub v_after: f64,
    /// Sample period across the step. When known, the RC charge built up
    /// during that period is removed from the ohmic estimate (assumes the
    /// branches were in steady state at `i_before`).
    pub dt_s: Option<f64>,
}

/// A rest period following a known current history.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSegment {
    /// `(dt_s, current_a)` from a fully rested state up to the interruption.
    pub history: Vec<(f64, f64)>,
    /// Time since the interruption for each rest sample (s).
    pub t_s: Vec<f64>,
    /// Terminal voltage at each rest sample (V).
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: EcmParams,
    /// Branches as fitted, ordered by time constant, before flooring.
    pub raw_branches: [RcBranch; 2],
    /// Mean `-ΔV/ΔI` over pulse segments, before RC correction.
    pub r0_raw: f64,
    /// Root of the summed squared relaxation residuals (V).
    pub residual_norm: f64,
    /// RMS relaxation residual per point (V).
    pub residual_rms: f64,
}

/// Fit a second-order model. Capacity and OCV are not identifiable from
/// pulse/relaxation data and are passed through.
pub fn fit_params(
    rest_segments: &[RelaxationSegment],
    pulse_segments: &[PulseSegment],
    capacity_ah: f64,
    ocv: OcvCurve,
) -> Result<FitReport> {
    if pulse_segments.is_empty() {
        return Err(Error::Fit("need at least one pulse segment to identify R0".into()));
    }
    if rest_segments.is_empty() {
        return Err(Error::Fit("need at least one relaxation segment to identify the RC branches".into()));
    }
    for (k, seg) in rest_segments.iter().enumerate() {
        check_relaxation(k, seg)?;
    }

    let problem = RelaxationProblem::new(rest_segments);
    let (tau_a, tau_b) = problem.search()?;
    let solution = problem.solve(tau_a, tau_b)?;

    let mut fitted = [
        RcBranch { r: solution.r[0], tau: tau_a },
        RcBranch { r: solution.r[1], tau: tau_b },
    ];
    fitted.sort_by(|x, y| x.tau.total_cmp(&y.tau));
    let raw_branches = fitted;
    let branches = fitted.map(|b| RcBranch {
        r: b.r.max(MIN_BRANCH_RESISTANCE),
        tau: b.tau,
    });

    let mut r0_raw = 0.0;
    let mut r0 = 0.0;
    for (k, p) in pulse_segments.iter().enumerate() {
        let di = p.i_after - p.i_before;
        let dv = p.v_after - p.v_before;
        if !di.is_finite() || !dv.is_finite() || di.abs() < 1e-9 {
            return Err(Error::Fit(format!("pulse segment {k} has no current step (ΔI = {di})")));
        }
        let raw = -dv / di;
        let correction = match p.dt_s {
            Some(dt) if dt > 0.0 => branches
                .iter()
                .map(|b| b.r * -(-dt / b.tau).exp_m1())
                .sum::<f64>(),
            _ => 0.0,
        };
        r0_raw += raw;
        r0 += raw - correction;
    }
    let n = pulse_segments.len() as f64;
    r0_raw /= n;
    r0 /= n;
    if !(r0 > 0.0) {
        return Err(Error::Fit(format!("identified R0 = {r0} Ω is not positive")));
    }

    let params = EcmParams::new(r0, branches, capacity_ah, ocv)?;
    Ok(FitReport {
        params,
        raw_branches,
        r0_raw,
        residual_norm: solution.sse.sqrt(),
        residual_rms: (solution.sse / problem.n_points as f64).sqrt(),
    })
}

fn check_relaxation(k: usize, seg: &RelaxationSegment) -> Result<()> {
    if seg.t_s.len() != seg.v.len() {
        return Err(Error::Fit(format!(
            "relaxation segment {k}: {} times but {} voltages",
            seg.t_s.len(),
            seg.v.len()
        )));
    }
    if seg.v.len() < MIN_RELAXATION_POINTS {
        return Err(Error::Fit(format!(
            "relaxation segment {k} has {} points, need at least {MIN_RELAXATION_POINTS}",
            seg.v.len()
        )));
    }
    if seg.history.is_empty() {
        return Err(Error::Fit(format!("relaxation segment {k} has no current history")));
    }
    if seg.history.iter().all(|&(_, i)| i == 0.0) {
        return Err(Error::Fit(format!("relaxation segment {k} follows no load")));
    }
    if seg.t_s.iter().chain(&seg.v).any(|x| !x.is_finite()) {
        return Err(Error::Fit(format!("relaxation segment {k} contains non-finite values")));
    }
    let (lo, hi) = seg
        .v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        return Err(Error::Fit(format!(
            "relaxation segment {k} has constant voltage ({lo} V); nothing to fit"
        )));
    }
    Ok(())
}

struct Solution {
    r: [f64; 2],
    sse: f64,
}

struct RelaxationProblem<'a> {
    segments: &'a [RelaxationSegment],
    n_points: usize,
    tau_min: f64,
    tau_max: f64,
}

impl<'a> RelaxationProblem<'a> {
    fn new(segments: &'a [RelaxationSegment]) -> Self {
        let n_points = segments.iter().map(|s| s.v.len()).sum();
        let min_dt = segments
            .iter()
            .flat_map(|s| s.t_s.windows(2).map(|w| w[1] - w[0]).chain(s.t_s.first().copied()))
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let span = segments
            .iter()
            .filter_map(|s| s.t_s.last().copied())
            .fold(0.0, f64::max);
        Self {
            segments,
            n_points,
            tau_min: (0.2 * min_dt).max(1e-6),
            tau_max: (10.0 * span).max(1.0),
        }
    }

    /// Unit-resistance branch voltage at interruption for each segment.
    fn interruption_gain(&self, tau: f64) -> Vec<f64> {
        self.segments
            .iter()
            .map(|s| {
                s.history.iter().fold(0.0, |v, &(dt, i)| {
                    step_rc(v, i, dt, 1.0, tau).unwrap_or(f64::NAN)
                })
            })
            .collect()
    }

    fn solve(&self, tau_a: f64, tau_b: f64) -> Result<Solution> {
        let n_seg = self.segments.len();
        let cols = n_seg + 2;
        let ga = self.interruption_gain(tau_a);
        let gb = self.interruption_gain(tau_b);
        let mut a = DMatrix::<f64>::zeros(self.n_points, cols);
        let mut y = DVector::<f64>::zeros(self.n_points);
        let mut row = 0;
        for (k, seg) in self.segments.iter().enumerate() {
            for (&t, &v) in seg.t_s.iter().zip(&seg.v) {
                a[(row, k)] = 1.0;
                a[(row, n_seg)] = -ga[k] * (-t / tau_a).exp();
                a[(row, n_seg + 1)] = -gb[k] * (-t / tau_b).exp();
                y[row] = v;
                row += 1;
            }
        }
        // column scaling keeps the SVD rank threshold meaningful
        let scales: Vec<f64> = (0..cols)
            .map(|c| {
                let n = a.column(c).norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        for (c, s) in scales.iter().enumerate() {
            a.column_mut(c).scale_mut(1.0 / s);
        }
        let svd = a.clone().svd(true, true);
        let x = svd
            .solve(&y, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::Fit(format!("least-squares solve failed: {e}")))?;
        let sse = (&a * &x - &y).norm_squared();
        let r = [x[n_seg] / scales[n_seg], x[n_seg + 1] / scales[n_seg + 1]];
        if !sse.is_finite() || r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit("relaxation fit produced non-finite values".into()));
        }
        Ok(Solution { r, sse })
    }

    fn objective(&self, log_tau: [f64; 2]) -> f64 {
        let lo = self.tau_min.ln();
        let hi = self.tau_max.ln();
        if log_tau.iter().any(|u| *u < lo || *u > hi) {
            return f64::INFINITY;
        }
        match self.solve(log_tau[0].exp(), log_tau[1].exp()) {
            Ok(s) => s.sse,
            Err(_) => f64::INFINITY,
        }
    }

    fn search(&self) -> Result<(f64, f64)> {
        const GRID: usize = 24;
        let lo = self.tau_min.ln();
        let hi = self.tau_max.ln();
        let node = |i: usize| lo + (hi - lo) * i as f64 / (GRID - 1) as f64;
        let mut best = ([node(0), node(1)], f64::INFINITY);
        for i in 0..GRID {
            for j in (i + 1)..GRID {
                let u = [node(i), node(j)];
                let f = self.objective(u);
                if f < best.1 {
                    best = (u, f);
                }
            }
        }
        if !best.1.is_finite() {
            return Err(Error::Fit("no finite relaxation fit on the time-constant grid".into()));
        }
        let step = (hi - lo) / (GRID - 1) as f64;
        let (u, f) = nelder_mead(|u| self.objective(u), best.0, step, 2000, 1e-14);
        // restart from the first optimum with a tenth of the simplex size
        let (u, _) = nelder_mead(|u| self.objective(u), u, 0.1 * step, 2000, 1e-14);
        if !f.is_finite() {
            return Err(Error::Fit("relaxation fit did not converge".into()));
        }
        Ok((u[0].exp(), u[1].exp()))
    }
}

/// Minimal 2-D Nelder–Mead with standard coefficients.
fn nelder_mead<F: Fn([f64; 2]) -> f64>(
    f: F,
    start: [f64; 2],
    step: f64,
    max_iter: usize,
    ftol: f64,
) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + step, start[1]],
        [start[0], start[1] + step],
    ];
    let mut values = simplex.map(&f);
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..max_iter {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let spread = (values[2] - values[0]).abs();
        if spread <= ftol * (values[0].abs() + ftol) {
            break;
        }
        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = lerp(centroid, simplex[2], -1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = lerp(centroid, simplex[2], -2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] {
                lerp(centroid, reflected, 0.5)
            } else {
                lerp(centroid, simplex[2], 0.5)
            };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = lerp(simplex[0], simplex[k], 0.5);
                    values[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best], values[best])
}

/// Thresholds for cutting a measured trace into fit segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    /// Currents with magnitude below this count as rest (A).
    pub rest_current_a: f64,
    /// Shortest rest run used as a relaxation segment.
    pub min_rest_points: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            rest_current_a: 0.05,
            min_rest_points: 20,
        }
    }
}

/// Cut a trace that starts from a rested cell into pulse onsets
/// (rest → load transitions) and relaxation segments (rest runs after load).
pub fn segment_trace(
    dt_s: &[f64],
    current_a: &[f64],
    voltage_v: &[f64],
    opts: SegmentOptions,
) -> Result<(Vec<PulseSegment>, Vec<RelaxationSegment>)> {
    let n = dt_s.len();
    if current_a.len() != n || voltage_v.len() != n {
        return Err(Error::InvalidInput("trace columns differ in length".into()));
    }
    let at_rest = |k: usize| current_a[k].abs() < opts.rest_current_a;

    let mut pulses = Vec::new();
    for k in 1..n {
        if at_rest(k - 1) && !at_rest(k) {
            pulses.push(PulseSegment {
                i_before: current_a[k - 1],
                v_before: voltage_v[k - 1],
                i_after: current_a[k],
                v_after: voltage_v[k],
                dt_s: Some(dt_s[k]),
            });
        }
    }

    let mut relaxations = Vec::new();
    let mut k = 0;
    while k < n {
        if !at_rest(k) {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && at_rest(k) {
            k += 1;
        }
        let loaded_before = (0..start).any(|j| !at_rest(j));
        if loaded_before && k - start >= opts.min_rest_points {
            let history: Vec<(f64, f64)> = (0..start).map(|j| (dt_s[j], current_a[j])).collect();
            let mut t = 0.0;
            let t_s = (start..k)
                .map(|j| {
                    t += dt_s[j];
                    t
                })
                .collect();
            relaxations.push(RelaxationSegment {
                history,
                t_s,
                v: voltage_v[start..k].to_vec(),
            });
        }
    }
    Ok((pulses, relaxations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::{simulate, EcmState};

    fn curve() -> OcvCurve {
        OcvCurve::new(vec![(0.0, 3.0), (1.0, 4.2)]).unwrap()
    }

    /// Closed-form relaxation after a constant pulse from rest, independent
    /// of `simulate`.
    fn analytic_relaxation(branches: &[(f64, f64)], current: f64, pulse_s: f64, v_inf: f64) -> RelaxationSegment {
        let history = vec![(1.0, current); pulse_s as usize];
        let t_s: Vec<f64> = (1..=1000).map(f64::from).collect();
        let v = t_s
            .iter()
            .map(|&t| {
                v_inf
                    - branches
                        .iter()
                        .map(|&(r, tau)| r * current * (1.0 - (-pulse_s / tau).exp()) * (-t / tau).exp())
                        .sum::<f64>()
            })
            .collect();
        RelaxationSegment { history, t_s, v }
    }

    #[test]
    fn recovers_two_branches_from_simulated_relaxation() {
        let truth = EcmParams::new(
            0.02,
            [RcBranch { r: 0.01, tau: 10.0 }, RcBranch { r: 0.02, tau: 100.0 }],
            3.0,
            curve(),
        )
        .unwrap();
        let mut profile = vec![(1.0, 0.0); 5];
        profile.extend(vec![(1.0, 10.0); 300]);
        profile.extend(vec![(1.0, 0.0); 1000]);
        let traj = simulate(&truth, EcmState::rested(0.9), &profile).unwrap();
        let dt: Vec<f64> = profile.iter().map(|p| p.0).collect();
        let cur: Vec<f64> = profile.iter().map(|p| p.1).collect();
        let (pulses, rests) = segment_trace(&dt, &cur, &traj.v_phy(), SegmentOptions::default()).unwrap();
        assert_eq!(pulses.len(), 1);
        assert_eq!(rests.len(), 1);

        let report = fit_params(&rests, &pulses, 3.0, curve()).unwrap();
        let p = &report.params;
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(p.branches[0].r, 0.01) < 0.01, "{p:?}");
        assert!(rel(p.branches[0].tau, 10.0) < 0.01, "{p:?}");
        assert!(rel(p.branches[1].r, 0.02) < 0.01, "{p:?}");
        assert!(rel(p.branches[1].tau, 100.0) < 0.01, "{p:?}");
        // the OCV slope over one sample biases R0 by ~1e-6 Ω
        assert!(rel(p.r0, 0.02) < 0.01, "{p:?}");
        assert!(report.residual_rms < 1e-6);
    }

    #[test]
    fn recovers_branches_from_closed_form_relaxation() {
        let seg = analytic_relaxation(&[(0.01, 10.0), (0.02, 100.0)], 10.0, 300.0, 3.9);
        let pulse = PulseSegment {
            i_before: 0.0,
            v_before: 4.0,
            i_after: 10.0,
            v_after: 3.8,
            dt_s: None,
        };
        let report = fit_params(&[seg], &[pulse], 3.0, curve()).unwrap();
        let b = report.params.branches;
        assert!(((b[0].r - 0.01) / 0.01).abs() < 0.01);
        assert!(((b[0].tau - 10.0) / 10.0).abs() < 0.01);
        assert!(((b[1].r - 0.02) / 0.02).abs() < 0.01);
        assert!(((b[1].tau - 100.0) / 100.0).abs() < 0.01);
    }

    #[test]
    fn ohmic_drop_gives_r0() {
        let seg = analytic_relaxation(&[(0.01, 10.0), (0.02, 100.0)], 10.0, 300.0, 3.9);
        let pulse = PulseSegment {
            i_before: 0.0,
            v_before: 4.0,
            i_after: 10.0,
            v_after: 3.8,
            dt_s: None,
        };
        let report = fit_params(&[seg], &[pulse], 3.0, curve()).unwrap();
        assert!((report.params.r0 - 0.02).abs() < 1e-15);
        assert_eq!(report.r0_raw, report.params.r0);
    }

    #[test]
    fn single_exponential_leaves_second_branch_near_zero() {
        let seg = analytic_relaxation(&[(0.015, 30.0)], 8.0, 200.0, 3.7);
        let pulse = PulseSegment {
            i_before: 0.0,
            v_before: 3.9,
            i_after: 8.0,
            v_after: 3.74,
            dt_s: None,
        };
        let report = fit_params(&[seg], &[pulse], 3.0, curve()).unwrap();
        let raw = report.raw_branches;
        let (main, other) = if (raw[0].r - 0.015).abs() < (raw[1].r - 0.015).abs() {
            (raw[0], raw[1])
        } else {
            (raw[1], raw[0])
        };
        assert!(((main.r - 0.015) / 0.015).abs() < 0.01, "{raw:?}");
        assert!(((main.tau - 30.0) / 30.0).abs() < 0.01, "{raw:?}");
        assert!(other.r.abs() < 1e-4, "{raw:?}");
        assert!(report.params.branches.iter().all(|b| b.r >= MIN_BRANCH_RESISTANCE));
    }

    #[test]
    fn degenerate_segments_are_rejected() {
        let pulse = PulseSegment {
            i_before: 0.0,
            v_before: 4.0,
            i_after: 10.0,
            v_after: 3.8,
            dt_s: None,
        };
        let flat = RelaxationSegment {
            history: vec![(1.0, 5.0); 10],
            t_s: (1..=50).map(f64::from).collect(),
            v: vec![3.7; 50],
        };
        let err = fit_params(&[flat], &[pulse], 3.0, curve()).unwrap_err();
        assert!(err.to_string().contains("constant voltage"), "{err}");

        let short = RelaxationSegment {
            history: vec![(1.0, 5.0); 10],
            t_s: vec![1.0, 2.0, 3.0],
            v: vec![3.6, 3.65, 3.67],
        };
        assert!(fit_params(&[short], &[pulse], 3.0, curve()).is_err());

        let seg = analytic_relaxation(&[(0.01, 10.0)], 10.0, 100.0, 3.9);
        assert!(fit_params(&[seg.clone()], &[], 3.0, curve()).is_err());
        assert!(fit_params(&[], &[pulse], 3.0, curve()).is_err());
        let no_step = PulseSegment { i_after: 0.0, ..pulse };
        assert!(fit_params(&[seg], &[no_step], 3.0, curve()).is_err());
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let (x, f) = nelder_mead(|u| (u[0] - 1.5).powi(2) + 3.0 * (u[1] + 0.5).powi(2), [0.0, 0.0], 1.0, 500, 1e-16);
        assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 0.5).abs() < 1e-6);
        assert!(f < 1e-12);
    }
}
