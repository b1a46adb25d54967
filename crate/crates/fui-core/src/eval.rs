//! Evaluation harness: membership inference, prediction loss, privacy
//! parameter sweeps, and the convergence diagnostic.
//!
//! The membership-inference attack follows the shadow-model recipe: train
//! shadow models on data similar to the target's, label their training
//! examples as members and held-out examples as nonmembers, fit a logistic
//! attack classifier on two features per example (cross-entropy loss and
//! max predicted probability), and apply it to the target model's member
//! and nonmember pools. Precision and recall are reported for the member
//! class.

use crate::config::Config;
use crate::dpfl::RunHistory;
use crate::error::{Error, Result};
use crate::models::{
    accuracy, example_scores, grad, local_sgd, loss, LabeledDataset, ModelKind, ModelSpec,
};
use crate::pipeline::{self, Experiment};
use crate::vecnum::{ParamVector, RngStream};
use serde::{Deserialize, Serialize};

/// Metrics for one method on one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub accuracy: f64,
    pub prediction_loss: f64,
    pub runtime_s: f64,
    pub mia_precision: f64,
    pub mia_recall: f64,
}

/// Summed cross-entropy over the test set, no regularizer.
pub fn prediction_loss(spec: &ModelSpec, w: &ParamVector, test: &LabeledDataset) -> Result<f64> {
    let mut bare = *spec;
    bare.l2_reg = 0.0;
    Ok(loss(&bare, w, test)? * test.len() as f64)
}

/// One shadow model's data: what it trains on (members) and what it never
/// sees (nonmembers).
#[derive(Clone, Debug)]
pub struct ShadowSplit {
    pub train: LabeledDataset,
    pub holdout: LabeledDataset,
}

#[derive(Clone, Debug)]
pub struct ShadowConfig {
    pub splits: Vec<ShadowSplit>,
    /// SGD settings for shadow training, mirroring the target's budget.
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
}

/// Mean/std scaler fit on attack features.
struct Scaler {
    mean: [f64; 2],
    std: [f64; 2],
}

impl Scaler {
    fn fit(rows: &[(f64, f64)]) -> Scaler {
        let n = rows.len() as f64;
        let mut mean = [0.0; 2];
        for (a, b) in rows {
            mean[0] += a / n;
            mean[1] += b / n;
        }
        let mut var = [0.0; 2];
        for (a, b) in rows {
            var[0] += (a - mean[0]).powi(2) / n;
            var[1] += (b - mean[1]).powi(2) / n;
        }
        Scaler { mean, std: [var[0].sqrt().max(1e-12), var[1].sqrt().max(1e-12)] }
    }

    fn apply(&self, rows: &[(f64, f64)]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * 2);
        for (a, b) in rows {
            out.push((a - self.mean[0]) / self.std[0]);
            out.push((b - self.mean[1]) / self.std[1]);
        }
        out
    }
}

/// Shadow-model membership inference. Returns (precision, recall) for the
/// member class on `member_data` vs `nonmember_data`.
pub fn mia_attack(
    spec: &ModelSpec,
    target_model: &ParamVector,
    member_data: &LabeledDataset,
    nonmember_data: &LabeledDataset,
    shadow: &ShadowConfig,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if member_data.is_empty() || nonmember_data.is_empty() {
        return Err(Error::InvalidParam("member and nonmember sets must be nonempty".into()));
    }
    if shadow.splits.is_empty() {
        return Err(Error::InvalidParam("at least one shadow split is required".into()));
    }

    // Attack training set from the shadows.
    let mut feats: Vec<(f64, f64)> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (k, split) in shadow.splits.iter().enumerate() {
        let shadow_model = local_sgd(
            spec,
            &spec.zero_params(),
            &split.train,
            shadow.lr,
            shadow.batch.min(split.train.len()),
            shadow.epochs,
            &stream.child(format!("shadow-{k}-sgd")),
        )?;
        for row in example_scores(spec, &shadow_model, &split.train)? {
            feats.push(row);
            labels.push(1);
        }
        for row in example_scores(spec, &shadow_model, &split.holdout)? {
            feats.push(row);
            labels.push(0);
        }
    }

    let scaler = Scaler::fit(&feats);
    let attack_data = LabeledDataset::new(scaler.apply(&feats), labels, 2)?;
    let attack_spec = ModelSpec::softmax(2, 2, 1e-4);
    let attack_model = local_sgd(
        &attack_spec,
        &attack_spec.zero_params(),
        &attack_data,
        0.5,
        64.min(attack_data.len()),
        80,
        &stream.child("attack-sgd"),
    )?;

    // Apply to the target's examples.
    let member_feats = example_scores(spec, target_model, member_data)?;
    let nonmember_feats = example_scores(spec, target_model, nonmember_data)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut tn = 0usize;
    let mut classify = |rows: &[(f64, f64)], truth_member: bool| -> Result<()> {
        let data = LabeledDataset::new(scaler.apply(rows), vec![0; rows.len()], 2)?;
        for i in 0..data.len() {
            let probe = data.subset(&[i]);
            let scores = example_scores(&attack_spec, &attack_model, &probe)?;
            // Label 0 was assigned above; cross-entropy of class 0 recovers
            // p(class 0), so member means p0 < 0.5.
            let p_nonmember = (-scores[0].0).exp();
            let said_member = p_nonmember < 0.5;
            match (said_member, truth_member) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Ok(())
    };
    classify(&member_feats, true)?;
    classify(&nonmember_feats, false)?;

    debug_assert_eq!(tp + fp + fn_ + tn, member_data.len() + nonmember_data.len());
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    Ok((precision, recall))
}

/// One row of the privacy-parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub epsilon: f64,
    pub accuracy_fui: f64,
    pub accuracy_retrain: f64,
    pub noise_added: bool,
}

/// Full pipeline at a single (eta, epsilon) grid point.
///
/// The epsilon here parameterizes the mechanism directly and may exceed the
/// strategy-game interval; sweeping past `2 eta^2` is exactly what exposes
/// the no-added-noise plateau.
pub fn sweep_point(config: &Config, eta: f64, epsilon: f64, target: usize) -> Result<SweepPoint> {
    let mut cfg = config.clone();
    cfg.eta = eta;
    // Keep the stored epsilon inside the config's validity window; the
    // sweep passes the requested value straight to calibration.
    cfg.epsilon = config.epsilon.min(eta * eta / 4.0);
    cfg.eps_min = cfg.eps_min.min(cfg.epsilon / 2.0);
    let exp = pipeline::prepare(&cfg)?;
    sweep_point_prepared(&exp, &cfg, eta, epsilon, target)
}

fn sweep_point_prepared(
    exp: &Experiment,
    cfg: &Config,
    eta: f64,
    epsilon: f64,
    target: usize,
) -> Result<SweepPoint> {
    let (history, _) = pipeline::train(exp, cfg)?;
    let (retrained, _) = pipeline::retrain_without(exp, cfg, target)?;
    let retraction = crate::fui::local_model_retraction(
        &history,
        &crate::fui::UnlearnRequest {
            target,
            epsilon,
            delta: cfg.delta(),
            round: history.rounds.last().map(|r| r.round).unwrap_or(1),
        },
        &exp.spec,
        &exp.shards[target],
        &cfg.lbfgs_options(),
    )?;
    let d = crate::fui::bound_d(&history, cfg.d_policy);
    let (unlearned, report) = crate::fui::calibrate(
        &retraction.point,
        d,
        eta,
        epsilon,
        cfg.d_policy,
        &sweep_calibration_stream(exp, eta, epsilon),
    )?;
    Ok(SweepPoint {
        eta,
        epsilon,
        accuracy_fui: accuracy(&exp.spec, &unlearned, &exp.test)?,
        accuracy_retrain: accuracy(&exp.spec, retrained.final_global(), &exp.test)?,
        noise_added: report.noise_added,
    })
}

/// Per-grid-point calibration stream, keyed by the parameter values so the
/// draws are independent across points yet reproducible for a standalone
/// run at the same point.
fn sweep_calibration_stream(exp: &Experiment, eta: f64, epsilon: f64) -> RngStream {
    exp.stream().child("unlearn").child(format!("calibration-eta-{eta}-eps-{epsilon}"))
}

/// Run the full pipeline over the (eta, epsilon) grid with a fixed base
/// seed. Training, retraining, and retraction are shared across epsilons at
/// fixed eta; the rows are bitwise identical to independent single-point
/// runs.
pub fn privacy_sweep(
    config: &Config,
    eta_grid: &[f64],
    eps_grid: &[f64],
    target: usize,
) -> Result<Vec<SweepPoint>> {
    if eta_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::InvalidParam("sweep grids must be nonempty".into()));
    }
    for &v in eta_grid.iter().chain(eps_grid) {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParam(format!("sweep grids must be positive, got {v}")));
        }
    }
    let mut rows = Vec::with_capacity(eta_grid.len() * eps_grid.len());
    for &eta in eta_grid {
        let mut cfg = config.clone();
        cfg.eta = eta;
        cfg.epsilon = config.epsilon.min(eta * eta / 4.0);
        cfg.eps_min = cfg.eps_min.min(cfg.epsilon / 2.0);
        let shared = (|| {
            let exp = pipeline::prepare(&cfg)?;
            let (history, _) = pipeline::train(&exp, &cfg)?;
            let (retrained, _) = pipeline::retrain_without(&exp, &cfg, target)?;
            let acc = accuracy(&exp.spec, retrained.final_global(), &exp.test)?;
            Ok((exp, history, acc))
        })()
        .map_err(|e: Error| e.context(format!("sweep at eta = {eta}")))?;
        let (exp, history, acc_retrain) = shared;
        let last_round = history.rounds.last().map(|r| r.round).unwrap_or(1);
        let d = crate::fui::bound_d(&history, cfg.d_policy);
        for &epsilon in eps_grid {
            let point = (|| {
                let retraction = crate::fui::local_model_retraction(
                    &history,
                    &crate::fui::UnlearnRequest {
                        target,
                        epsilon,
                        delta: cfg.delta(),
                        round: last_round,
                    },
                    &exp.spec,
                    &exp.shards[target],
                    &cfg.lbfgs_options(),
                )?;
                let (unlearned, report) = crate::fui::calibrate(
                    &retraction.point,
                    d,
                    eta,
                    epsilon,
                    cfg.d_policy,
                    &sweep_calibration_stream(&exp, eta, epsilon),
                )?;
                Ok(SweepPoint {
                    eta,
                    epsilon,
                    accuracy_fui: accuracy(&exp.spec, &unlearned, &exp.test)?,
                    accuracy_retrain: acc_retrain,
                    noise_added: report.noise_added,
                })
            })()
            .map_err(|e: Error| e.context(format!("sweep point (eta = {eta}, epsilon = {epsilon})")))?;
            rows.push(point);
        }
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Convergence diagnostic for a strongly convex run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceDiag {
    /// `F(w^t) - F(w*)` for t = 0..=T on the union training data.
    pub gaps: Vec<f64>,
    pub mu_hat: f64,
    pub upsilon_hat: f64,
    pub sigma2_hat: f64,
    /// Optimality-gap bound curve with the estimated constants.
    pub bound: Vec<f64>,
    pub optimum_loss: f64,
    /// Local updates per round used in the bound.
    pub local_updates: usize,
}

/// Long centralized optimization of the union loss (the oracle for `w*`):
/// gradient descent with backtracking until the gradient norm is tiny.
pub fn centralized_minimum(
    spec: &ModelSpec,
    data: &LabeledDataset,
    max_iters: usize,
) -> Result<ParamVector> {
    let mut w = spec.zero_params();
    let mut step = 1.0;
    let mut value = loss(spec, &w, data)?;
    for _ in 0..max_iters {
        let g = grad(spec, &w, data)?;
        let gnorm2 = g.dot(&g);
        if gnorm2.sqrt() < 1e-10 {
            break;
        }
        loop {
            let mut cand = w.clone();
            cand.add_scaled(-step, &g);
            let cand_value = loss(spec, &cand, data)?;
            if cand_value <= value - 0.25 * step * gnorm2 {
                w = cand;
                value = cand_value;
                step *= 1.2;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                return Ok(w);
            }
        }
    }
    Ok(w)
}

/// Estimate curvature bounds and stochastic-gradient variance, then emit
/// the per-round optimality gaps next to the `O(1/t)` bound curve built
/// from those estimates.
pub fn convergence_report(
    history: &RunHistory,
    spec: &ModelSpec,
    full_train: &LabeledDataset,
    batch: usize,
    local_epochs: usize,
) -> Result<ConvergenceDiag> {
    if spec.kind != ModelKind::SoftmaxRegression || spec.l2_reg <= 0.0 {
        return Err(Error::InvalidParam(
            "convergence diagnostic requires the strongly convex config (softmax regression, l2_reg > 0)"
                .into(),
        ));
    }
    let w_star = centralized_minimum(spec, full_train, 20_000)?;
    let optimum_loss = loss(spec, &w_star, full_train)?;

    let mut gaps = Vec::with_capacity(history.rounds.len() + 1);
    gaps.push(loss(spec, &history.initial, full_train)? - optimum_loss);
    for record in &history.rounds {
        gaps.push(loss(spec, &record.global, full_train)? - optimum_loss);
    }

    // Curvature probes: second differences along random unit directions at
    // w* and at the initial model.
    use rand::Rng;
    let mut rng = RngStream::new(history.seed).child("curvature").rng();
    let dim = spec.param_dim();
    let h = 1e-3;
    let mut mu_hat = f64::INFINITY;
    let mut upsilon_hat: f64 = 0.0;
    for base in [&w_star, &history.initial] {
        for _ in 0..24 {
            let mut u = ParamVector::from_vec((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            let norm = u.norm();
            if norm == 0.0 {
                continue;
            }
            u = u.scale(1.0 / norm);
            let mut wp = base.clone();
            wp.add_scaled(h, &u);
            let mut wm = base.clone();
            wm.add_scaled(-h, &u);
            let second = (loss(spec, &wp, full_train)? - 2.0 * loss(spec, base, full_train)?
                + loss(spec, &wm, full_train)?)
                / (h * h);
            mu_hat = mu_hat.min(second);
            upsilon_hat = upsilon_hat.max(second);
        }
    }
    mu_hat = mu_hat.max(1e-12);

    // Stochastic-gradient variance at w*.
    let batch_eff = batch.min(full_train.len()).max(1);
    let g_full = grad(spec, &w_star, full_train)?;
    let mut rng2 = RngStream::new(history.seed).child("gradvar").rng();
    let mut sigma2_hat = 0.0;
    let probes = 32;
    for _ in 0..probes {
        let indices: Vec<usize> =
            (0..batch_eff).map(|_| rng2.gen_range(0..full_train.len())).collect();
        let g_b = grad(spec, &w_star, &full_train.subset(&indices))?;
        sigma2_hat += g_b.sub(&g_full).dot(&g_b.sub(&g_full)) / probes as f64;
    }

    let n = history.privacy.num_clients as f64;
    let m = history.privacy.min_client_size.max(1);
    let local_updates = (local_epochs * m.div_ceil(batch_eff.min(m))).max(1);
    let k = local_updates as f64;
    let init_term: f64 = n * history.initial.dist(&w_star).powi(2);
    let bound: Vec<f64> = (0..gaps.len())
        .map(|t| {
            upsilon_hat / (2.0 * mu_hat * (t as f64 + 1.0))
                * (init_term / k + 2.0 * sigma2_hat / (mu_hat * mu_hat * k))
        })
        .collect();

    Ok(ConvergenceDiag {
        gaps,
        mu_hat,
        upsilon_hat,
        sigma2_hat,
        bound,
        optimum_loss,
        local_updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn prediction_loss_hand_values() {
        // w = 0 on a 2-class test set of 100 examples: 100 ln 2.
        let spec = ModelSpec::softmax(2, 2, 0.5);
        let data = gen_synthetic(2, 2, 100, 1.0, &RngStream::new(1)).unwrap();
        let pl = prediction_loss(&spec, &spec.zero_params(), &data).unwrap();
        assert!((pl - 100.0 * 2f64.ln()).abs() < 1e-9, "{pl}");

        // Saturated-correct single sample: ~0.
        let spec1 = ModelSpec::softmax(1, 2, 0.0);
        let w = ParamVector::from_vec(vec![40.0, -40.0, 0.0, 0.0]).unwrap();
        let one = LabeledDataset::new(vec![1.0], vec![0], 1).unwrap();
        assert!(prediction_loss(&spec1, &w, &one).unwrap() < 1e-12);
    }

    #[test]
    fn prediction_loss_consistency_and_additivity() {
        let spec = ModelSpec::softmax(2, 3, 0.01);
        let data = gen_synthetic(3, 2, 60, 1.0, &RngStream::new(2)).unwrap();
        let w = ParamVector::from_vec((0..spec.param_dim()).map(|i| 0.1 * i as f64).collect())
            .unwrap();
        // |test| * mean loss at l2 = 0.
        let mut bare = spec;
        bare.l2_reg = 0.0;
        let direct = prediction_loss(&spec, &w, &data).unwrap();
        let via_mean = loss(&bare, &w, &data).unwrap() * 60.0;
        assert!((direct - via_mean).abs() < 1e-9);
        // Additive over disjoint subsets.
        let first = data.subset(&(0..25).collect::<Vec<_>>());
        let second = data.subset(&(25..60).collect::<Vec<_>>());
        let split_sum = prediction_loss(&spec, &w, &first).unwrap()
            + prediction_loss(&spec, &w, &second).unwrap();
        assert!((direct - split_sum).abs() < 1e-9);
    }

    #[test]
    fn spearman_handles_ties_and_order() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        let tied = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        assert!(tied > 0.9, "{tied}");
    }

    #[test]
    fn mia_rejects_empty_pools() {
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let data = gen_synthetic(2, 2, 10, 1.0, &RngStream::new(3)).unwrap();
        let empty = LabeledDataset::new(vec![], vec![], 2).unwrap();
        let shadow = ShadowConfig {
            splits: vec![ShadowSplit { train: data.clone(), holdout: data.clone() }],
            lr: 0.1,
            batch: 5,
            epochs: 2,
        };
        assert!(mia_attack(&spec, &spec.zero_params(), &empty, &data, &shadow, &RngStream::new(0))
            .is_err());
    }

    #[test]
    fn mia_separable_construction_is_perfect() {
        // Members drawn from blobs the model was trained on to saturation;
        // nonmembers drawn from a shifted distribution the model gets
        // wrong. Attack features separate them exactly.
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let members = gen_synthetic(2, 2, 60, 0.05, &RngStream::new(10)).unwrap();
        let model = local_sgd(&spec, &spec.zero_params(), &members, 1.0, 10, 150, &RngStream::new(11))
            .unwrap();
        // Nonmembers: same features, flipped labels, so their loss is huge.
        let flipped: Vec<usize> = members.labels().iter().map(|&y| 1 - y).collect();
        let mut feats = Vec::new();
        for i in 0..members.len() {
            feats.extend_from_slice(members.row(i));
        }
        let nonmembers = LabeledDataset::new(feats, flipped, 2).unwrap();

        let shadow_members = gen_synthetic(2, 2, 60, 0.05, &RngStream::new(12)).unwrap();
        let shadow_flipped: Vec<usize> = shadow_members.labels().iter().map(|&y| 1 - y).collect();
        let mut sfeats = Vec::new();
        for i in 0..shadow_members.len() {
            sfeats.extend_from_slice(shadow_members.row(i));
        }
        let shadow_holdout = LabeledDataset::new(sfeats, shadow_flipped, 2).unwrap();
        let shadow = ShadowConfig {
            splits: vec![ShadowSplit { train: shadow_members, holdout: shadow_holdout }],
            lr: 1.0,
            batch: 10,
            epochs: 150,
        };
        let (precision, recall) =
            mia_attack(&spec, &model, &members, &nonmembers, &shadow, &RngStream::new(13)).unwrap();
        assert_eq!(precision, 1.0);
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn mia_null_case_is_near_chance() {
        // Member and nonmember pools drawn from the identical distribution,
        // and neither was seen by the model: precision ~ 0.5 over 2000
        // examples.
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let train = gen_synthetic(2, 2, 400, 1.0, &RngStream::new(20)).unwrap();
        let model =
            local_sgd(&spec, &spec.zero_params(), &train, 0.5, 50, 40, &RngStream::new(21)).unwrap();
        let members = gen_synthetic(2, 2, 1000, 1.0, &RngStream::new(22)).unwrap();
        let nonmembers = gen_synthetic(2, 2, 1000, 1.0, &RngStream::new(23)).unwrap();
        let shadow_train = gen_synthetic(2, 2, 400, 1.0, &RngStream::new(24)).unwrap();
        let shadow_holdout = gen_synthetic(2, 2, 400, 1.0, &RngStream::new(25)).unwrap();
        let shadow = ShadowConfig {
            splits: vec![ShadowSplit { train: shadow_train, holdout: shadow_holdout }],
            lr: 0.5,
            batch: 50,
            epochs: 40,
        };
        let (precision, _recall) =
            mia_attack(&spec, &model, &members, &nonmembers, &shadow, &RngStream::new(26)).unwrap();
        assert!((precision - 0.5).abs() <= 0.05, "null precision {precision}");
    }

    #[test]
    fn mia_is_bitwise_reproducible() {
        let spec = ModelSpec::softmax(2, 2, 0.0);
        let members = gen_synthetic(2, 2, 80, 1.0, &RngStream::new(40)).unwrap();
        let nonmembers = gen_synthetic(2, 2, 80, 1.0, &RngStream::new(41)).unwrap();
        let model =
            local_sgd(&spec, &spec.zero_params(), &members, 0.5, 20, 20, &RngStream::new(42)).unwrap();
        let shadow = ShadowConfig {
            splits: vec![ShadowSplit {
                train: gen_synthetic(2, 2, 80, 1.0, &RngStream::new(43)).unwrap(),
                holdout: gen_synthetic(2, 2, 80, 1.0, &RngStream::new(44)).unwrap(),
            }],
            lr: 0.5,
            batch: 20,
            epochs: 20,
        };
        let a = mia_attack(&spec, &model, &members, &nonmembers, &shadow, &RngStream::new(45)).unwrap();
        let b = mia_attack(&spec, &model, &members, &nonmembers, &shadow, &RngStream::new(45)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn convergence_diag_requires_convexity() {
        let mlp = ModelSpec::mlp(2, 4, 2, 0.01);
        let data = gen_synthetic(2, 2, 30, 1.0, &RngStream::new(30)).unwrap();
        let history = RunHistory {
            initial: mlp.zero_params(),
            rounds: vec![],
            privacy: crate::dpfl::PrivacyParams {
                eta: 5.0,
                clip: 1.0,
                min_client_size: 10,
                rounds: 0,
                exposures: 1,
                num_clients: 3,
            },
            client_sizes: vec![10, 10, 10],
            seed: 0,
        };
        assert!(convergence_report(&history, &mlp, &data, 10, 1).is_err());
    }

    #[test]
    fn convergence_gap_at_zero_matches_definition() {
        use crate::data::partition_even;
        use crate::dpfl::{run_dpfl, PrivacyParams, TrainSetup};
        let spec = ModelSpec::softmax(2, 2, 0.01);
        let data = gen_synthetic(2, 2, 60, 0.8, &RngStream::new(31)).unwrap();
        let plan = partition_even(&data, 3, &RngStream::new(32)).unwrap();
        let shards: Vec<_> = (0..3).map(|c| data.subset(&plan.client_indices(c))).collect();
        let setup = TrainSetup {
            model: spec,
            // eta this large drives both noise scales to numerical zero.
            privacy: PrivacyParams {
                eta: 1e9,
                clip: 10.0,
                min_client_size: 20,
                rounds: 6,
                exposures: 1,
                num_clients: 3,
            },
            lr: 0.3,
            batch: 20,
            local_epochs: 1,
            threads: 1,
        };
        let history = run_dpfl(&setup, &shards, &RngStream::new(33)).unwrap();
        let diag = convergence_report(&history, &spec, &data, 20, 1).unwrap();
        let direct = loss(&spec, &history.initial, &data).unwrap() - diag.optimum_loss;
        assert!((diag.gaps[0] - direct).abs() < 1e-12);
        assert!(diag.gaps.iter().all(|&g| g >= -1e-9));
        assert!(diag.mu_hat <= diag.upsilon_hat);
        assert!(diag.mu_hat > 0.0);
        assert_eq!(diag.bound.len(), diag.gaps.len());
        // Noise-free-ish strongly convex run: trailing-3 average of the gap
        // is nonincreasing after round 3.
        let avg = |t: usize| (diag.gaps[t] + diag.gaps[t - 1] + diag.gaps[t - 2]) / 3.0;
        for t in 3..diag.gaps.len() - 1 {
            assert!(avg(t + 1) <= avg(t) + 1e-9, "gap rose at {t}");
        }
    }
}
