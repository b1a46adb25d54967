//! End-to-end orchestration: dataset construction, training, unlearning,
//! retraining, and membership inference, all derived from one [`Config`]
//! and one seed.
//!
//! Random streams hang off the base seed by fixed labels (`data`, `split`,
//! `partition`, `train`, `unlearn`, `retrain`, `mia`), so the privacy
//! parameters can vary between calls while the data and every draw stay
//! reproducible; two runs with the same seed are bitwise identical.

use crate::config::{Config, DatasetKind, ModelChoice};
use crate::data::{self, PartitionPlan};
use crate::dpfl::{run_dpfl, PrivacyParams, RunHistory, TrainSetup};
use crate::error::{Error, Result};
use crate::eval::{self, ShadowSplit};
use crate::fui::{self, UnlearnOutcome, UnlearnRequest};
use crate::models::{LabeledDataset, ModelSpec};
use crate::vecnum::{ParamVector, RngStream};
use std::time::{Duration, Instant};

/// A prepared experiment: data, split, partition, and shards.
pub struct Experiment {
    pub config: Config,
    pub spec: ModelSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub plan: PartitionPlan,
    pub shards: Vec<LabeledDataset>,
    pub dataset_name: String,
}

impl Experiment {
    pub fn stream(&self) -> RngStream {
        RngStream::new(self.config.seed)
    }
}

/// Build the dataset named by the config, hold out the test split, and
/// partition the training data evenly across clients.
pub fn prepare(config: &Config) -> Result<Experiment> {
    config.validate()?;
    let stream = RngStream::new(config.seed);
    let (train, test, input_dim, num_classes, dataset_name) = match config.dataset {
        DatasetKind::Synthetic => {
            let all = data::gen_synthetic(
                config.synth_classes,
                config.synth_dim,
                config.synth_samples,
                config.synth_spread,
                &stream.child("data"),
            )?;
            let (train, test) = data::split_train_test(&all, config.test_fraction, &stream.child("split"))?;
            (train, test, config.synth_dim, config.synth_classes, "synthetic".to_string())
        }
        DatasetKind::Csv => {
            let text = std::fs::read_to_string(&config.csv_path)
                .map_err(|e| Error::Csv(format!("{}: {e}", config.csv_path)))?;
            let schema_text = std::fs::read_to_string(&config.csv_schema)
                .map_err(|e| Error::Schema(format!("{}: {e}", config.csv_schema)))?;
            let schema = data::parse_schema(&schema_text)?;
            let label = schema
                .label_column()
                .ok_or_else(|| Error::Schema("schema has no label column".into()))?
                .to_string();
            let (train, test, codec) =
                data::ingest_csv_split(&text, &label, &schema, config.test_fraction, &stream.child("split"))?;
            let name = std::path::Path::new(&config.csv_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".to_string());
            let dims = (codec.input_dim(), codec.num_classes());
            (train, test, dims.0, dims.1, name)
        }
    };

    let spec = match config.model {
        ModelChoice::Softmax => ModelSpec::softmax(input_dim, num_classes, config.l2_reg),
        ModelChoice::Mlp => ModelSpec::mlp(input_dim, config.hidden_dim, num_classes, config.l2_reg),
    };
    spec.validate()?;

    let plan = data::partition_even(&train, config.clients, &stream.child("partition"))?;
    let shards: Vec<LabeledDataset> =
        (0..config.clients).map(|c| train.subset(&plan.client_indices(c))).collect();

    Ok(Experiment {
        config: config.clone(),
        spec,
        train,
        test,
        plan,
        shards,
        dataset_name,
    })
}

/// Training setup for a (possibly privacy-overridden) config over prepared
/// shards.
pub fn setup_for(exp: &Experiment, config: &Config) -> TrainSetup {
    TrainSetup {
        model: exp.spec,
        privacy: PrivacyParams {
            eta: config.eta,
            clip: config.clip,
            min_client_size: exp.plan.min_client_size(),
            rounds: config.rounds,
            exposures: config.exposures,
            num_clients: config.clients,
        },
        lr: config.lr,
        batch: config.batch,
        local_epochs: config.local_epochs,
        threads: config.threads,
    }
}

/// Run DPFL over the experiment's shards.
pub fn train(exp: &Experiment, config: &Config) -> Result<(RunHistory, Duration)> {
    let setup = setup_for(exp, config);
    let start = Instant::now();
    let history = run_dpfl(&setup, &exp.shards, &exp.stream().child("train"))?;
    Ok((history, start.elapsed()))
}

/// Unlearn `target` from the given history. `round` defaults to the last
/// recorded round.
pub fn unlearn_target(
    exp: &Experiment,
    config: &Config,
    history: &RunHistory,
    target: usize,
    round: Option<usize>,
    epsilon: Option<f64>,
) -> Result<UnlearnOutcome> {
    if target >= exp.shards.len() {
        return Err(Error::InvalidParam(format!(
            "target {target} out of range for {} clients",
            exp.shards.len()
        )));
    }
    let last = history.rounds.last().map(|r| r.round).unwrap_or(0);
    if last == 0 {
        return Err(Error::InvalidParam("history has no rounds to unlearn from".into()));
    }
    let req = UnlearnRequest {
        target,
        epsilon: epsilon.unwrap_or(config.epsilon),
        delta: config.delta(),
        round: round.unwrap_or(last),
    };
    fui::unlearn(
        history,
        &req,
        &exp.spec,
        &exp.shards[target],
        &config.lbfgs_options(),
        config.d_policy,
        config.eps_min,
        &exp.stream().child("unlearn"),
    )
}

/// Retrain from scratch without `target`.
pub fn retrain_without(
    exp: &Experiment,
    config: &Config,
    target: usize,
) -> Result<(RunHistory, Duration)> {
    if target >= exp.shards.len() {
        return Err(Error::InvalidParam(format!(
            "target {target} out of range for {} clients",
            exp.shards.len()
        )));
    }
    let remaining: Vec<LabeledDataset> = exp
        .shards
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, d)| d.clone())
        .collect();
    let setup = setup_for(exp, config);
    fui::retrain_baseline(&setup, &remaining, &exp.stream().child("retrain"))
}

/// Shadow datasets mirroring the experiment's data source: fresh draws from
/// the generator for synthetic data, a carve-out of the non-target shards
/// for CSV data.
pub fn shadow_splits(exp: &Experiment, config: &Config, target: usize) -> Result<Vec<ShadowSplit>> {
    let stream = exp.stream().child("mia");
    let mut splits = Vec::with_capacity(config.mia_shadows);
    match exp.config.dataset {
        DatasetKind::Synthetic => {
            let n = exp.train.len().max(2 * exp.config.synth_classes);
            let holdout_n = exp.test.len().max(exp.config.synth_classes);
            for k in 0..config.mia_shadows {
                let train = data::gen_synthetic(
                    exp.config.synth_classes,
                    exp.config.synth_dim,
                    n,
                    exp.config.synth_spread,
                    &stream.child(format!("shadow-{k}-train")),
                )?;
                let holdout = data::gen_synthetic(
                    exp.config.synth_classes,
                    exp.config.synth_dim,
                    holdout_n,
                    exp.config.synth_spread,
                    &stream.child(format!("shadow-{k}-holdout")),
                )?;
                splits.push(ShadowSplit { train, holdout });
            }
        }
        DatasetKind::Csv => {
            let pool_indices: Vec<usize> = (0..exp.shards.len())
                .filter(|&i| i != target)
                .flat_map(|i| exp.plan.client_indices(i))
                .collect();
            if pool_indices.len() < 4 {
                return Err(Error::InvalidParam("too little data for shadow training".into()));
            }
            let pool = exp.train.subset(&pool_indices);
            for k in 0..config.mia_shadows {
                let (train, holdout) =
                    data::split_train_test(&pool, 0.5, &stream.child(format!("shadow-{k}-split")))?;
                splits.push(ShadowSplit { train, holdout });
            }
        }
    }
    Ok(splits)
}

/// Membership inference against `model`: members are the target's training
/// shard, nonmembers the held-out test split.
pub fn mia_for(
    exp: &Experiment,
    config: &Config,
    model: &ParamVector,
    target: usize,
) -> Result<(f64, f64)> {
    let shadows = shadow_splits(exp, config, target)?;
    eval::mia_attack(
        &exp.spec,
        model,
        &exp.shards[target],
        &exp.test,
        &eval::ShadowConfig {
            splits: shadows,
            lr: config.lr,
            batch: config.batch,
            epochs: config.local_epochs * config.rounds.max(1),
        },
        &exp.stream().child("mia").child("attack"),
    )
}
