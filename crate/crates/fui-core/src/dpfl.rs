//! The eta-DP federated loop.
//!
//! Each round, every client trains from the last broadcast model, clips its
//! parameters to l2 norm `C`, adds uplink Gaussian noise, and submits; the
//! server aggregates submissions weighted by dataset size, records the clean
//! aggregate, adds downlink noise when the round count demands it, and
//! broadcasts. Noise scales follow the Gaussian-mechanism sensitivity
//! argument: `sigma_U = (2C/m)/eta` on the uplink and the piecewise
//! `sigma_D` on the downlink, zero whenever `T <= L*sqrt(N)` (evaluated
//! exactly in integer arithmetic, so the boundary lands on the zero branch).
//!
//! Every random draw is keyed by `(seed, round, client, purpose)`, so a run
//! replays bitwise and any submission can be recomputed from its parts.

use crate::error::{Error, Result};
use crate::models::{local_sgd, LabeledDataset, ModelSpec};
use crate::vecnum::{gaussian_sample, ParamVector, RngStream};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// DP budget eta.
    pub eta: f64,
    /// Clipping threshold C on the local model norm.
    pub clip: f64,
    /// Smallest client dataset size m.
    pub min_client_size: usize,
    /// Number of aggregation rounds T.
    pub rounds: usize,
    /// Local-model exposures L.
    pub exposures: usize,
    /// Number of clients N.
    pub num_clients: usize,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidParam(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::InvalidParam(format!("clip must be > 0, got {}", self.clip)));
        }
        if self.min_client_size == 0 {
            return Err(Error::InvalidParam("min client size must be >= 1".into()));
        }
        if self.exposures == 0 {
            return Err(Error::InvalidParam("exposures must be >= 1".into()));
        }
        if self.num_clients == 0 {
            return Err(Error::InvalidParam("num_clients must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uplink noise scale `(2C/m)/eta`.
pub fn uplink_sigma(pp: &PrivacyParams) -> f64 {
    (2.0 * pp.clip / pp.min_client_size as f64) / pp.eta
}

/// Downlink noise scale: `2C(T^2 - L^2 N)/(m N eta)` when `T > L*sqrt(N)`,
/// zero otherwise. The branch condition `T <= L*sqrt(N)` is decided as
/// `T^2 <= L^2 N` in integers so a perfect-square boundary is exact.
pub fn downlink_sigma(pp: &PrivacyParams) -> f64 {
    let t2 = (pp.rounds as u128) * (pp.rounds as u128);
    let l2n = (pp.exposures as u128) * (pp.exposures as u128) * (pp.num_clients as u128);
    if t2 <= l2n {
        return 0.0;
    }
    2.0 * pp.clip * (t2 - l2n) as f64
        / (pp.min_client_size as f64 * pp.num_clients as f64 * pp.eta)
}

/// Scale `w` onto the l2 ball of radius `c` if it lies outside; inside the
/// ball the vector is returned bit-for-bit.
pub fn clip(w: &ParamVector, c: f64) -> ParamVector {
    let norm = w.norm();
    if norm <= c {
        w.clone()
    } else {
        w.scale(c / norm)
    }
}

/// Dataset-size-weighted average of client submissions.
pub fn aggregate(submissions: &[(ParamVector, usize)]) -> Result<ParamVector> {
    let first = submissions
        .first()
        .ok_or_else(|| Error::InvalidParam("aggregate of zero submissions".into()))?;
    let total: usize = submissions.iter().map(|(_, n)| *n).sum();
    if total == 0 {
        return Err(Error::InvalidParam("aggregate weights sum to zero".into()));
    }
    let mut out = ParamVector::zeros(first.0.dim());
    for (w, n) in submissions {
        out.add_scaled(*n as f64 / total as f64, w);
    }
    Ok(out)
}

/// Everything a round leaves behind. `global` is the clean aggregate before
/// downlink noise; `clipped` keeps the pre-noise uplink vectors so the noise
/// decomposition of each submission can be re-checked.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global: ParamVector,
    pub broadcast: ParamVector,
    pub submissions: Vec<ParamVector>,
    pub clipped: Vec<ParamVector>,
}

/// Full trace of a DPFL run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunHistory {
    pub initial: ParamVector,
    pub rounds: Vec<RoundRecord>,
    pub privacy: PrivacyParams,
    pub client_sizes: Vec<usize>,
    pub seed: u64,
}

impl RunHistory {
    /// The clean global model after the last round (the initial model when
    /// no rounds ran).
    pub fn final_global(&self) -> &ParamVector {
        self.rounds.last().map(|r| &r.global).unwrap_or(&self.initial)
    }

    pub fn round(&self, t: usize) -> Result<&RoundRecord> {
        self.rounds
            .iter()
            .find(|r| r.round == t)
            .ok_or_else(|| Error::InvalidParam(format!("round {t} not in history")))
    }
}

/// Per-run training knobs shared by every client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub model: ModelSpec,
    pub privacy: PrivacyParams,
    pub lr: f64,
    /// Requested batch size; capped at each client's dataset size.
    pub batch: usize,
    pub local_epochs: usize,
    pub threads: usize,
}

/// Run `T` rounds of DPFL over the given client shards. The global model
/// starts at zero; every step is deterministic given the stream.
pub fn run_dpfl(
    setup: &TrainSetup,
    client_data: &[LabeledDataset],
    stream: &RngStream,
) -> Result<RunHistory> {
    setup.model.validate()?;
    setup.privacy.validate()?;
    let n = setup.privacy.num_clients;
    if client_data.len() != n {
        return Err(Error::InvalidParam(format!(
            "privacy params say {n} clients, got {} shards",
            client_data.len()
        )));
    }
    let actual_min = client_data.iter().map(|d| d.len()).min().unwrap_or(0);
    if actual_min != setup.privacy.min_client_size {
        return Err(Error::InvalidParam(format!(
            "privacy params say m = {}, partition has m = {actual_min}",
            setup.privacy.min_client_size
        )));
    }

    let dim = setup.model.param_dim();
    let sigma_u = uplink_sigma(&setup.privacy);
    let sigma_d = downlink_sigma(&setup.privacy);
    let initial = ParamVector::zeros(dim);
    let mut broadcast = initial.clone();
    let mut rounds = Vec::with_capacity(setup.privacy.rounds);

    for t in 1..=setup.privacy.rounds {
        let round_stream = stream.child(format!("round-{t}"));
        let client_update = |i: usize| -> Result<(ParamVector, ParamVector)> {
            let data = &client_data[i];
            let client_stream = round_stream.child(format!("client-{i}"));
            let batch = setup.batch.min(data.len());
            let trained = local_sgd(
                &setup.model,
                &broadcast,
                data,
                setup.lr,
                batch,
                setup.local_epochs,
                &client_stream.child("sgd"),
            )
            .map_err(|e| e.in_round(t, i))?;
            let clipped = clip(&trained, setup.privacy.clip);
            let noise = gaussian_sample(sigma_u, dim, &client_stream.child("uplink"))
                .map_err(|e| e.in_round(t, i))?;
            let submission = clipped.add(&noise);
            Ok((clipped, submission))
        };

        // Client updates are independent; aggregation consumes them in
        // ascending client id regardless of completion order.
        let results: Vec<(ParamVector, ParamVector)> = if setup.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(setup.threads)
                .build()
                .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
            use rayon::prelude::*;
            pool.install(|| (0..n).into_par_iter().map(client_update).collect::<Result<_>>())?
        } else {
            (0..n).map(client_update).collect::<Result<_>>()?
        };

        let weighted: Vec<(ParamVector, usize)> = results
            .iter()
            .map(|(_, sub)| sub.clone())
            .zip(client_data.iter().map(|d| d.len()))
            .collect();
        let global = aggregate(&weighted)?;
        let next_broadcast = if sigma_d > 0.0 {
            let noise = gaussian_sample(sigma_d, dim, &round_stream.child("downlink"))?;
            global.add(&noise)
        } else {
            global.clone()
        };

        let (clipped, submissions): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        rounds.push(RoundRecord {
            round: t,
            global,
            broadcast: next_broadcast.clone(),
            submissions,
            clipped,
        });
        broadcast = next_broadcast;
    }

    Ok(RunHistory {
        initial,
        rounds,
        privacy: setup.privacy,
        client_sizes: client_data.iter().map(|d| d.len()).collect(),
        seed: stream.seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, partition_even};

    fn pv(values: &[f64]) -> ParamVector {
        ParamVector::from_vec(values.to_vec()).unwrap()
    }

    fn params(eta: f64, clip: f64, m: usize, t: usize, l: usize, n: usize) -> PrivacyParams {
        PrivacyParams {
            eta,
            clip,
            min_client_size: m,
            rounds: t,
            exposures: l,
            num_clients: n,
        }
    }

    #[test]
    fn uplink_sigma_closed_form() {
        assert!((uplink_sigma(&params(5.0, 1.0, 100, 1, 1, 10)) - 0.004).abs() < 1e-15);
        assert!((uplink_sigma(&params(4.0, 2.0, 50, 1, 1, 10)) - 0.02).abs() < 1e-15);
        // C = 0 is degenerate but exercised by tests on the closed form.
        assert_eq!(uplink_sigma(&params(5.0, 0.0, 100, 1, 1, 10)), 0.0);
    }

    #[test]
    fn downlink_sigma_branches() {
        // T = 3 <= sqrt(10) => zero branch.
        assert_eq!(downlink_sigma(&params(5.0, 1.0, 100, 3, 1, 10)), 0.0);
        // T = 4 > sqrt(10): 2*(16-10)/(100*10*5).
        assert!((downlink_sigma(&params(5.0, 1.0, 100, 4, 1, 10)) - 0.0024).abs() < 1e-15);
        // Exact boundary T = L*sqrt(N) on a perfect square goes to zero.
        assert_eq!(downlink_sigma(&params(5.0, 1.0, 100, 6, 2, 9)), 0.0);
        assert!(downlink_sigma(&params(5.0, 1.0, 100, 7, 2, 9)) > 0.0);
    }

    #[test]
    fn clip_matches_hand_values() {
        let w = pv(&[3.0, 4.0]);
        let clipped = clip(&w, 1.0);
        assert!(clipped.dist(&pv(&[0.6, 0.8])) < 1e-15);
        // Inside the ball: unchanged bitwise.
        let small = pv(&[0.3, 0.4]);
        assert_eq!(clip(&small, 1.0), small);
        let zero = ParamVector::zeros(2);
        assert_eq!(clip(&zero, 1.0), zero);
    }

    #[test]
    fn aggregate_weighted_mean() {
        let out = aggregate(&[(pv(&[0.0]), 1), (pv(&[4.0]), 3)]).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-15);

        let same = aggregate(&[(pv(&[1.5, -2.0]), 7), (pv(&[1.5, -2.0]), 3)]).unwrap();
        assert!(same.dist(&pv(&[1.5, -2.0])) < 1e-15);

        let mean = aggregate(&[(pv(&[1.0]), 5), (pv(&[3.0]), 5)]).unwrap();
        assert!((mean[0] - 2.0).abs() < 1e-15);

        assert!(aggregate(&[]).is_err());
    }

    fn tiny_setup(t: usize, eta: f64, n: usize, m: usize) -> TrainSetup {
        TrainSetup {
            model: ModelSpec::softmax(2, 2, 0.001),
            privacy: params(eta, 1.0, m, t, 1, n),
            lr: 0.2,
            batch: 100,
            local_epochs: 3,
            threads: 1,
        }
    }

    fn shards(n: usize, per_client: usize, seed: u64) -> Vec<LabeledDataset> {
        let data = gen_synthetic(2, 2, n * per_client, 0.8, &RngStream::new(seed)).unwrap();
        let plan = partition_even(&data, n, &RngStream::new(seed + 1)).unwrap();
        (0..n).map(|c| data.subset(&plan.client_indices(c))).collect()
    }

    #[test]
    fn zero_rounds_leaves_only_the_initial_model() {
        let setup = tiny_setup(0, 5.0, 3, 10);
        let history = run_dpfl(&setup, &shards(3, 10, 40), &RngStream::new(41)).unwrap();
        assert!(history.rounds.is_empty());
        assert_eq!(history.final_global(), &history.initial);
        assert_eq!(history.initial, ParamVector::zeros(6));
    }

    #[test]
    fn noise_free_single_client_round_is_the_clipped_sgd_output() {
        // sigma_U = 0 via clip -> 0 is not allowed; instead use a huge eta
        // and m so the noise is zero only when forced. Here we force both
        // scales to zero by construction: eta huge makes sigma_U tiny, so
        // instead run with one client and compare against a manual trace
        // with the same stream.
        let mut setup = tiny_setup(1, 5.0, 1, 12);
        setup.privacy.clip = 10.0;
        let data = shards(1, 12, 50);
        let history = run_dpfl(&setup, &data, &RngStream::new(51)).unwrap();

        let stream = RngStream::new(51).child("round-1").child("client-0");
        let trained = local_sgd(
            &setup.model,
            &ParamVector::zeros(6),
            &data[0],
            setup.lr,
            setup.batch.min(12),
            setup.local_epochs,
            &stream.child("sgd"),
        )
        .unwrap();
        let clipped = clip(&trained, setup.privacy.clip);
        let noise = gaussian_sample(
            uplink_sigma(&setup.privacy),
            6,
            &stream.child("uplink"),
        )
        .unwrap();
        let expected = clipped.add(&noise);
        assert_eq!(history.rounds[0].submissions[0], expected);
        // Single client: the aggregate is the submission itself.
        assert_eq!(history.rounds[0].global, expected);
        // T = 1 <= sqrt(1) keeps the downlink clean.
        assert_eq!(history.rounds[0].broadcast, history.rounds[0].global);
    }

    #[test]
    fn submissions_decompose_into_clip_plus_replayable_noise() {
        let setup = tiny_setup(2, 5.0, 3, 10);
        let history = run_dpfl(&setup, &shards(3, 10, 60), &RngStream::new(61)).unwrap();
        let sigma_u = uplink_sigma(&setup.privacy);
        for record in &history.rounds {
            for i in 0..3 {
                assert!(record.clipped[i].norm() <= setup.privacy.clip + 1e-12);
                let noise = gaussian_sample(
                    sigma_u,
                    6,
                    &RngStream::new(61)
                        .child(format!("round-{}", record.round))
                        .child(format!("client-{i}"))
                        .child("uplink"),
                )
                .unwrap();
                assert_eq!(record.submissions[i], record.clipped[i].add(&noise));
            }
        }
    }

    #[test]
    fn zero_downlink_sigma_broadcasts_the_aggregate_bitwise() {
        // N = 10, L = 1, T = 3 <= sqrt(10).
        let setup = tiny_setup(3, 5.0, 10, 4);
        let history = run_dpfl(&setup, &shards(10, 4, 70), &RngStream::new(71)).unwrap();
        assert_eq!(downlink_sigma(&setup.privacy), 0.0);
        for record in &history.rounds {
            assert_eq!(record.broadcast, record.global);
        }
    }

    #[test]
    fn replay_reproduces_history_bitwise() {
        let setup = tiny_setup(4, 2.0, 4, 8);
        let shards = shards(4, 8, 80);
        let a = run_dpfl(&setup, &shards, &RngStream::new(81)).unwrap();
        let b = run_dpfl(&setup, &shards, &RngStream::new(81)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threaded_run_matches_sequential() {
        let mut setup = tiny_setup(2, 5.0, 4, 8);
        let shards = shards(4, 8, 90);
        let sequential = run_dpfl(&setup, &shards, &RngStream::new(91)).unwrap();
        setup.threads = 4;
        let threaded = run_dpfl(&setup, &shards, &RngStream::new(91)).unwrap();
        assert_eq!(sequential, threaded);
    }

    #[test]
    fn training_improves_accuracy_on_blobs() {
        use crate::models::accuracy;
        let setup = TrainSetup {
            model: ModelSpec::softmax(2, 2, 0.001),
            privacy: params(5.0, 1.0, 25, 5, 1, 10),
            lr: 0.5,
            batch: 100,
            local_epochs: 5,
            threads: 1,
        };
        let all = gen_synthetic(2, 2, 250, 1.0, &RngStream::new(100)).unwrap();
        let plan = partition_even(&all, 10, &RngStream::new(101)).unwrap();
        let shards: Vec<_> = (0..10).map(|c| all.subset(&plan.client_indices(c))).collect();
        let test = gen_synthetic(2, 2, 200, 1.0, &RngStream::new(102)).unwrap();
        let history = run_dpfl(&setup, &shards, &RngStream::new(103)).unwrap();
        let acc0 = accuracy(&setup.model, &history.initial, &test).unwrap();
        let acc = accuracy(&setup.model, history.final_global(), &test).unwrap();
        assert!(acc > acc0, "final {acc} <= initial {acc0}");
    }

    #[test]
    fn mismatched_partition_m_is_rejected() {
        let setup = tiny_setup(1, 5.0, 3, 11);
        let err = run_dpfl(&setup, &shards(3, 10, 40), &RngStream::new(41)).unwrap_err();
        assert!(matches!(err, Error::InvalidParam(_)));
    }

    #[test]
    fn client_errors_carry_round_context() {
        let mut setup = tiny_setup(2, 5.0, 3, 10);
        setup.lr = -1.0;
        let err = run_dpfl(&setup, &shards(3, 10, 40), &RngStream::new(41)).unwrap_err();
        match err {
            Error::InRound { round: 1, client: 0, source } => {
                assert!(matches!(*source, Error::InvalidParam(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
