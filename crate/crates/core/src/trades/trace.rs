use std::io::Write;

use serde::Serialize;

use super::{FIT_FLOOR, MIN_TRANSIENT, PASS_R_SQUARED, TRANSIENT_FRACTION};

pub const CSV_HEADER: &str = "t,err_x,est_err_max,disagreement,step_norm";

/// Per-iterate diagnostics. The first five columns are written to CSV; the
/// rest feed the invariant checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub t: Vec<usize>,
    /// `|x^t - x*|`, NaN without an equilibrium.
    pub err_x: Vec<f64>,
    /// `max_i |phi_i(x_i^t) + z_i^t - sigma(x^t)|`.
    pub est_err_max: Vec<f64>,
    /// `|z_perp^t - h(x^t)|`.
    pub disagreement: Vec<f64>,
    /// `|x^t - x^(t-1)|`, NaN at `t = 0`.
    pub step_norm: Vec<f64>,
    /// `|sum_i z_i^t|`.
    pub tracker_sum: Vec<f64>,
    pub tracker_norm: Vec<f64>,
    /// Largest per-agent membership residual of `x^t`.
    pub feasibility: Vec<f64>,
}

impl IterationTrace {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push(
        &mut self,
        t: usize,
        err_x: f64,
        est: f64,
        disagreement: f64,
        step_norm: f64,
        tracker_sum: f64,
        tracker_norm: f64,
        feasibility: f64,
    ) {
        debug_assert!(self.t.last().is_none_or(|&last| last < t));
        self.t.push(t);
        self.err_x.push(err_x);
        self.est_err_max.push(est);
        self.disagreement.push(disagreement);
        self.step_norm.push(step_norm);
        self.tracker_sum.push(tracker_sum);
        self.tracker_norm.push(tracker_norm);
        self.feasibility.push(feasibility);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.err_x.iter().any(|e| !e.is_nan())
    }

    /// Largest `|sum_i z_i| / max(1, |z|)` over the recorded iterates.
    pub fn max_tracker_sum_ratio(&self) -> f64 {
        self.tracker_sum
            .iter()
            .zip(&self.tracker_norm)
            .map(|(s, n)| s / n.max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn max_feasibility(&self) -> f64 {
        self.feasibility.iter().copied().fold(0.0, f64::max)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for k in 0..self.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                self.t[k],
                self.err_x[k],
                self.est_err_max[k],
                self.disagreement[k],
                self.step_norm[k]
            )?;
        }
        Ok(())
    }
}

/// Least-squares fit of `log e_t = log a1 - a2 t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub a1: f64,
    pub a2: f64,
    pub r_squared: f64,
    pub samples: usize,
    /// Worst per-iteration ratio `(e_{k+1}/e_k)^(1/dt)` inside the window.
    pub worst_ratio: f64,
}

impl RateFit {
    fn empty() -> Self {
        Self {
            a1: f64::NAN,
            a2: f64::NAN,
            r_squared: f64::NAN,
            samples: 0,
            worst_ratio: f64::NAN,
        }
    }
}

/// Fits the exponential rate on samples with `t >= max(50, 5% of the last
/// t)` and value above the floating-point floor. Needs three points.
pub fn fit_rate(t: &[usize], e: &[f64]) -> RateFit {
    let last = t.last().copied().unwrap_or(0);
    let skip = MIN_TRANSIENT.max((TRANSIENT_FRACTION * last as f64).ceil() as usize);
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(e)
        .filter(|&(&ti, &ei)| ti >= skip && ei > FIT_FLOOR && ei.is_finite())
        .map(|(&ti, &ei)| (ti as f64, ei.ln()))
        .collect();
    if pts.len() < 3 {
        return RateFit::empty();
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let worst_ratio = pts
        .windows(2)
        .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).exp())
        .fold(0.0, f64::max);
    RateFit {
        a1: intercept.exp(),
        a2: -slope,
        r_squared,
        samples: pts.len(),
        worst_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
    /// A NaN or infinity appeared; the trace ends at the last finite iterate.
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    ErrX,
    StepNorm,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub fit_target: FitTarget,
    pub fit: RateFit,
    /// `exp(-a2)`: the sustained per-iteration contraction.
    pub contraction: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub hit_max_iter: bool,
    pub final_err_x: Option<f64>,
    pub final_step_norm: f64,
    pub final_est_err_max: f64,
    pub max_tracker_sum_ratio: f64,
    pub max_feasibility_residual: f64,
    pub verdict: Verdict,
}

impl ConvergenceReport {
    /// Fits on `err_x` when available and on the step norm otherwise.
    /// `Pass` needs `a2 > 0` and `R^2 >= 0.98`; a run that stopped before
    /// leaving the transient window passes when it converged.
    pub fn from_trace(trace: &IterationTrace, stop: StopReason) -> Self {
        let (target, series) = if trace.has_errors() {
            (FitTarget::ErrX, &trace.err_x)
        } else {
            (FitTarget::StepNorm, &trace.step_norm)
        };
        let fit = fit_rate(&trace.t, series);
        let verdict = if stop == StopReason::NonFinite {
            Verdict::Fail
        } else if fit.samples >= 3 {
            if fit.a2 > 0.0 && fit.r_squared >= PASS_R_SQUARED {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        } else if stop == StopReason::Converged {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        let last = |v: &Vec<f64>| v.last().copied().unwrap_or(f64::NAN);
        Self {
            fit_target: target,
            contraction: (-fit.a2).exp(),
            fit,
            iterations: trace.t.last().copied().unwrap_or(0),
            stop,
            hit_max_iter: stop == StopReason::MaxIter,
            final_err_x: trace.has_errors().then(|| last(&trace.err_x)),
            final_step_norm: last(&trace.step_norm),
            final_est_err_max: last(&trace.est_err_max),
            max_tracker_sum_ratio: trace.max_tracker_sum_ratio(),
            max_feasibility_residual: trace.max_feasibility(),
            verdict,
        }
    }
}
