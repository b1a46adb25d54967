//! Unlearning a target client from a recorded DPFL run.
//!
//! The pipeline has two halves. Local model retraction: the target computes
//! the reference model `w_ref = (N w^t - w_i^t)/(N-1)` from the clean round
//! aggregate and ascends its own loss inside an l2 ball of radius `delta`
//! around it. Global noise calibration: the server compares the noise scale
//! already implied by eta-DP, `sigma1 = sqrt(2) d / (2 eta)`, with the scale
//! an epsilon-indistinguishability request needs, `sigma2 = d / sqrt(eps)`;
//! when the gap `sigma1 - sigma2` is negative it tops the retracted model up
//! with Gaussian noise of scale `sqrt(sigma2^2 - sigma1^2)` so the total
//! variance reaches `sigma2^2`.
//!
//! The distance bound `d` comes from a configurable policy; the default is
//! the diameter `2C` of the clipped parameter ball, with a `history-max`
//! alternative that uses the largest observed drift between consecutive
//! global models. A from-scratch retrain without the target is provided as
//! the comparison baseline.

use crate::dpfl::{run_dpfl, RunHistory, TrainSetup};
use crate::error::{Error, Result};
use crate::models::{grad, loss, LabeledDataset, ModelSpec};
use crate::vecnum::{
    gaussian_sample, lbfgs_maximize, BallConstraint, LbfgsOptions, MaximizeOutcome, ParamVector,
    RngStream,
};
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};

/// A client's request to be forgotten.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnlearnRequest {
    pub target: usize,
    /// Requested indistinguishability level.
    pub epsilon: f64,
    /// Retraction ball radius.
    pub delta: f64,
    /// History round to unlearn from.
    pub round: usize,
}

impl UnlearnRequest {
    /// Enforce `eps_min <= epsilon < eta^2/2`. Requests at or above the
    /// upper limit are rejected as already guaranteed by eta-DP itself.
    pub fn validate(&self, eta: f64, eps_min: f64) -> Result<()> {
        let limit = indistinguishability_level(eta);
        if !self.epsilon.is_finite() || self.epsilon < eps_min {
            return Err(Error::InvalidParam(format!(
                "epsilon {} below the minimum {eps_min}",
                self.epsilon
            )));
        }
        if self.epsilon >= limit {
            return Err(Error::AlreadyGuaranteed { epsilon: self.epsilon, limit });
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(Error::InvalidParam(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Indistinguishability level already achieved by an eta-DP mechanism:
/// `eta^2 / 2`.
pub fn indistinguishability_level(eta: f64) -> f64 {
    eta * eta / 2.0
}

/// `w_ref = (N w^t - w_i^t) / (N - 1)` using the recorded clean aggregate.
pub fn reference_model(history: &RunHistory, round: usize, target: usize) -> Result<ParamVector> {
    let n = history.privacy.num_clients;
    if n < 2 {
        return Err(Error::SoleClient);
    }
    let record = history.round(round)?;
    let submission = record
        .submissions
        .get(target)
        .ok_or_else(|| Error::InvalidParam(format!("client {target} not in round {round}")))?;
    let mut out = record.global.scale(n as f64);
    out.add_scaled(-1.0, submission);
    Ok(out.scale(1.0 / (n as f64 - 1.0)))
}

/// Noise scale required for `eta^2/2`-indistinguishability:
/// `sqrt(2) d / (2 eta)`.
pub fn sigma_tilde1(d: f64, eta: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidParam(format!("distance bound must be > 0, got {d}")));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidParam(format!("eta must be > 0, got {eta}")));
    }
    Ok(std::f64::consts::SQRT_2 * d / (2.0 * eta))
}

/// Noise scale required for `epsilon`-indistinguishability: `d / sqrt(eps)`.
pub fn sigma_tilde2(d: f64, epsilon: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidParam(format!("distance bound must be > 0, got {d}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParam(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(d / epsilon.sqrt())
}

/// How the parameter-distance bound `d` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DBoundPolicy {
    /// Diameter of the C-clipped parameter ball: `2C`.
    ClipDiameter,
    /// Largest drift between consecutive recorded global models; falls back
    /// to `2C` when the history is constant or empty.
    HistoryMax,
}

impl DBoundPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            DBoundPolicy::ClipDiameter => "2c",
            DBoundPolicy::HistoryMax => "history-max",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "2c" => Ok(DBoundPolicy::ClipDiameter),
            "history-max" => Ok(DBoundPolicy::HistoryMax),
            other => Err(Error::InvalidParam(format!(
                "unknown d policy `{other}` (expected `2c` or `history-max`)"
            ))),
        }
    }
}

/// Upper bound on the distance between model parameters under the policy.
pub fn bound_d(history: &RunHistory, policy: DBoundPolicy) -> f64 {
    let fallback = 2.0 * history.privacy.clip;
    match policy {
        DBoundPolicy::ClipDiameter => fallback,
        DBoundPolicy::HistoryMax => {
            let mut max_drift: f64 = 0.0;
            let mut prev = &history.initial;
            for record in &history.rounds {
                max_drift = max_drift.max(record.global.dist(prev));
                prev = &record.global;
            }
            if max_drift > 0.0 {
                max_drift
            } else {
                fallback
            }
        }
    }
}

/// Ascend the target's loss within the retraction ball around the reference
/// model. A zero radius returns the reference model itself.
pub fn local_model_retraction(
    history: &RunHistory,
    req: &UnlearnRequest,
    spec: &ModelSpec,
    target_data: &LabeledDataset,
    opts: &LbfgsOptions,
) -> Result<MaximizeOutcome> {
    let w_ref = reference_model(history, req.round, req.target)?;
    let ball = BallConstraint::new(w_ref, req.delta)?;
    let objective = |w: &ParamVector| loss(spec, w, target_data).unwrap_or(f64::NAN);
    let gradient = |w: &ParamVector| {
        grad(spec, w, target_data).unwrap_or_else(|_| ParamVector::zeros(w.dim()))
    };
    let outcome = lbfgs_maximize(objective, gradient, &ball, opts)?;
    debug_assert!(outcome.point.dist(&ball.center) <= req.delta + 1e-9);
    Ok(outcome)
}

/// Everything the calibration step decides, persisted alongside the
/// unlearned model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub d: f64,
    pub d_policy: DBoundPolicy,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Noise gap `sigma1 - sigma2`.
    pub gap: f64,
    /// Extra per-coordinate noise scale; zero when the gap is nonnegative.
    pub sigma_cali: f64,
    pub noise_added: bool,
    pub epsilon: f64,
    pub eta: f64,
}

/// Compare the implied and required noise scales and top up with calibrated
/// Gaussian noise when the gap is negative, so
/// `sigma1^2 + sigma_cali^2 = sigma2^2`.
pub fn calibrate(
    w_lr: &ParamVector,
    d: f64,
    eta: f64,
    epsilon: f64,
    policy: DBoundPolicy,
    stream: &RngStream,
) -> Result<(ParamVector, CalibrationReport)> {
    let sigma1 = sigma_tilde1(d, eta)?;
    let sigma2 = sigma_tilde2(d, epsilon)?;
    let gap = sigma1 - sigma2;
    let mut report = CalibrationReport {
        d,
        d_policy: policy,
        sigma1,
        sigma2,
        gap,
        sigma_cali: 0.0,
        noise_added: false,
        epsilon,
        eta,
    };
    if gap >= 0.0 {
        return Ok((w_lr.clone(), report));
    }
    report.sigma_cali = (sigma2 * sigma2 - sigma1 * sigma1).sqrt();
    report.noise_added = true;
    let noise = gaussian_sample(report.sigma_cali, w_lr.dim(), stream)?;
    Ok((w_lr.add(&noise), report))
}

/// Result of a full unlearning pass.
#[derive(Clone, Debug)]
pub struct UnlearnOutcome {
    pub model: ParamVector,
    pub retracted: ParamVector,
    pub report: CalibrationReport,
    pub retraction_iterations: usize,
    pub elapsed: Duration,
}

/// Retract, bound the distance, and calibrate in one pass.
pub fn unlearn(
    history: &RunHistory,
    req: &UnlearnRequest,
    spec: &ModelSpec,
    target_data: &LabeledDataset,
    opts: &LbfgsOptions,
    policy: DBoundPolicy,
    eps_min: f64,
    stream: &RngStream,
) -> Result<UnlearnOutcome> {
    req.validate(history.privacy.eta, eps_min)?;
    let start = Instant::now();
    let retraction = local_model_retraction(history, req, spec, target_data, opts)?;
    let d = bound_d(history, policy);
    let (model, report) = calibrate(
        &retraction.point,
        d,
        history.privacy.eta,
        req.epsilon,
        policy,
        &stream.child("calibration"),
    )?;
    let elapsed = start.elapsed();
    Ok(UnlearnOutcome {
        model,
        retracted: retraction.point,
        report,
        retraction_iterations: retraction.iterations,
        elapsed,
    })
}

/// Rerun DPFL from scratch without the target client, recomputing `m` for
/// the smaller cohort. Returns the new history and the wall-clock spent.
pub fn retrain_baseline(
    setup: &TrainSetup,
    remaining: &[LabeledDataset],
    stream: &RngStream,
) -> Result<(RunHistory, Duration)> {
    if remaining.is_empty() {
        return Err(Error::SoleClient);
    }
    let mut setup = setup.clone();
    setup.privacy.num_clients = remaining.len();
    setup.privacy.min_client_size = remaining.iter().map(|d| d.len()).min().unwrap_or(0);
    let start = Instant::now();
    let history = run_dpfl(&setup, remaining, stream)?;
    Ok((history, start.elapsed()))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        /// Whenever noise is added, sigma1^2 + sigma_cali^2 = sigma2^2.
        #[test]
        fn variance_additivity(
            d in 0.01f64..100.0,
            eta in 0.1f64..10.0,
            eps in 0.01f64..10.0
        ) {
            let w = ParamVector::zeros(2);
            let (_, report) =
                calibrate(&w, d, eta, eps, DBoundPolicy::ClipDiameter, &RngStream::new(0)).unwrap();
            if report.noise_added {
                let lhs = report.sigma1 * report.sigma1 + report.sigma_cali * report.sigma_cali;
                let rhs = report.sigma2 * report.sigma2;
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
                prop_assert!(report.gap < 0.0);
            } else {
                prop_assert!(report.gap >= 0.0);
                prop_assert_eq!(report.sigma_cali, 0.0);
            }
        }
    }
}
