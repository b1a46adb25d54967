//! Run-directory persistence.
//!
//! Layout under a run root:
//!
//! ```text
//! meta.json            config snapshot, seed, privacy params, client sizes
//! initial.fv           starting global model
//! rounds/<t>/global.fv       clean aggregate of round t
//! rounds/<t>/broadcast.fv    noisy broadcast of round t
//! rounds/<t>/client_<i>.fv   submission of client i in round t
//! train.json           training wall clock
//! unlearned.fv, calibration.json      written by unlearn
//! retrained.fv, retrain.json          written by retrain
//! metrics.csv          appended by mia/bench
//! ```
//!
//! `meta.json` is written before any round data, and CSV appends go through
//! a temp file plus rename so interrupted runs never corrupt earlier rows.
//! Every `.fv` file uses the `FUI1` binary codec.

use crate::config::Config;
use crate::dpfl::{PrivacyParams, RoundRecord, RunHistory};
use crate::error::{Error, Result};
use crate::fui::CalibrationReport;
use crate::vecnum::{codec, ParamVector};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    pub seed: u64,
    pub config: String,
    pub privacy: PrivacyParams,
    pub client_sizes: Vec<usize>,
    pub param_dim: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainTiming {
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub target: usize,
    pub round: usize,
    pub delta: f64,
    pub retraction_iterations: usize,
    pub runtime_s: f64,
    #[serde(flatten)]
    pub report: CalibrationReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrainRecord {
    pub target: usize,
    pub runtime_s: f64,
}

/// One `metrics.csv` row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub accuracy: f64,
    pub prediction_loss: f64,
    pub runtime_s: f64,
    pub mia_precision: f64,
    pub mia_recall: f64,
}

pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(RunDirectory { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("meta.json").exists() {
            return Err(Error::RunDir(format!("{} has no meta.json", root.display())));
        }
        Ok(RunDirectory { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_vector(&self, rel: impl AsRef<Path>, v: &ParamVector) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        atomic_write(&path, &codec::encode(v))
    }

    fn read_vector(&self, rel: impl AsRef<Path>) -> Result<ParamVector> {
        let path = self.root.join(rel);
        let bytes =
            fs::read(&path).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?;
        codec::decode(&bytes)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let path = self.root.join(rel);
        atomic_write(&path, serde_json::to_string_pretty(value)?.as_bytes())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let path = self.root.join(rel);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Persist a training run: meta first, then round data.
    pub fn save_run(&self, config: &Config, history: &RunHistory) -> Result<()> {
        let meta = Meta {
            seed: history.seed,
            config: config.to_text(),
            privacy: history.privacy,
            client_sizes: history.client_sizes.clone(),
            param_dim: history.initial.dim(),
        };
        self.write_json("meta.json", &meta)?;
        self.write_vector("initial.fv", &history.initial)?;
        for record in &history.rounds {
            let dir = PathBuf::from("rounds").join(record.round.to_string());
            self.write_vector(dir.join("global.fv"), &record.global)?;
            self.write_vector(dir.join("broadcast.fv"), &record.broadcast)?;
            for (i, sub) in record.submissions.iter().enumerate() {
                self.write_vector(dir.join(format!("client_{i}.fv")), sub)?;
            }
        }
        Ok(())
    }

    pub fn load_meta(&self) -> Result<Meta> {
        self.read_json("meta.json")
    }

    /// Rebuild the run history from disk. The pre-noise clipped uplink
    /// vectors are not persisted; they are recovered by subtracting the
    /// replayed noise from each submission, which reproduces them up to
    /// rounding.
    pub fn load_run(&self) -> Result<(Config, RunHistory)> {
        use crate::dpfl::uplink_sigma;
        use crate::vecnum::{gaussian_sample, RngStream};

        let meta = self.load_meta()?;
        let config = crate::config::parse_config(&meta.config)?;
        let initial = self.read_vector("initial.fv")?;
        let sigma_u = uplink_sigma(&meta.privacy);
        let stream = RngStream::new(meta.seed).child("train");
        let mut rounds = Vec::with_capacity(meta.privacy.rounds);
        for t in 1..=meta.privacy.rounds {
            let dir = PathBuf::from("rounds").join(t.to_string());
            let global = self.read_vector(dir.join("global.fv"))?;
            let broadcast = self.read_vector(dir.join("broadcast.fv"))?;
            let mut submissions = Vec::with_capacity(meta.privacy.num_clients);
            let mut clipped = Vec::with_capacity(meta.privacy.num_clients);
            for i in 0..meta.privacy.num_clients {
                let sub = self.read_vector(dir.join(format!("client_{i}.fv")))?;
                let noise = gaussian_sample(
                    sigma_u,
                    sub.dim(),
                    &stream.child(format!("round-{t}")).child(format!("client-{i}")).child("uplink"),
                )?;
                clipped.push(sub.sub(&noise));
                submissions.push(sub);
            }
            rounds.push(RoundRecord { round: t, global, broadcast, submissions, clipped });
        }
        Ok((
            config,
            RunHistory {
                initial,
                rounds,
                privacy: meta.privacy,
                client_sizes: meta.client_sizes,
                seed: meta.seed,
            },
        ))
    }

    pub fn save_train_timing(&self, timing: &TrainTiming) -> Result<()> {
        self.write_json("train.json", timing)
    }

    pub fn load_train_timing(&self) -> Result<TrainTiming> {
        self.read_json("train.json")
    }

    pub fn save_unlearned(&self, model: &ParamVector, record: &UnlearnRecord) -> Result<()> {
        self.write_vector("unlearned.fv", model)?;
        self.write_json("calibration.json", record)
    }

    pub fn load_unlearned(&self) -> Result<(ParamVector, UnlearnRecord)> {
        Ok((self.read_vector("unlearned.fv")?, self.read_json("calibration.json")?))
    }

    pub fn save_retrained(&self, model: &ParamVector, record: &RetrainRecord) -> Result<()> {
        self.write_vector("retrained.fv", model)?;
        self.write_json("retrain.json", record)
    }

    pub fn load_retrained(&self) -> Result<(ParamVector, RetrainRecord)> {
        Ok((self.read_vector("retrained.fv")?, self.read_json("retrain.json")?))
    }

    /// Append one metrics row, rewriting the file atomically.
    pub fn append_metrics(&self, row: &MetricsRow) -> Result<()> {
        let path = self.root.join("metrics.csv");
        let mut text = if path.exists() {
            fs::read_to_string(&path)?
        } else {
            "method,dataset,seed,accuracy,prediction_loss,runtime_s,mia_precision,mia_recall\n"
                .to_string()
        };
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.method,
            row.dataset,
            row.seed,
            row.accuracy,
            row.prediction_loss,
            row.runtime_s,
            row.mia_precision,
            row.mia_recall
        ));
        atomic_write(&path, text.as_bytes())
    }

    pub fn read_metrics(&self) -> Result<Vec<MetricsRow>> {
        let path = self.root.join("metrics.csv");
        let text =
            fs::read_to_string(&path).map_err(|e| Error::RunDir(format!("{}: {e}", path.display())))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for r in reader.deserialize() {
            rows.push(r.map_err(|e| Error::Csv(e.to_string()))?);
        }
        Ok(rows)
    }

    /// Write `game_sweep.csv` rows.
    pub fn save_game_sweep(&self, rows: &[crate::game::SweepRow]) -> Result<()> {
        let mut text = String::from("param,value,combo,p,epsilon,utility_server,utility_client,feasible\n");
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.param,
                r.value,
                r.combo.as_str(),
                r.p,
                r.epsilon,
                r.utility_server,
                r.utility_client,
                r.feasible
            ));
        }
        atomic_write(&self.root.join("game_sweep.csv"), text.as_bytes())
    }

    /// Write the privacy sweep as `sweep.csv`.
    pub fn save_privacy_sweep(&self, rows: &[crate::eval::SweepPoint]) -> Result<()> {
        let mut text = String::from("eta,epsilon,accuracy_fui,accuracy_retrain,noise_added\n");
        for r in rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eta, r.epsilon, r.accuracy_fui, r.accuracy_retrain, r.noise_added
            ));
        }
        atomic_write(&self.root.join("sweep.csv"), text.as_bytes())
    }
}

/// Write via a sibling temp file and rename into place.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, partition_even};
    use crate::dpfl::{run_dpfl, TrainSetup};
    use crate::models::ModelSpec;
    use crate::vecnum::RngStream;

    fn small_history(seed: u64) -> (Config, RunHistory) {
        let config = Config {
            clients: 3,
            rounds: 2,
            synth_samples: 30,
            synth_dim: 2,
            local_epochs: 2,
            ..Config::default()
        };
        let data = gen_synthetic(2, 2, 30, 1.0, &RngStream::new(seed).child("data")).unwrap();
        let plan = partition_even(&data, 3, &RngStream::new(seed).child("partition")).unwrap();
        let shards: Vec<_> = (0..3).map(|c| data.subset(&plan.client_indices(c))).collect();
        let setup = TrainSetup {
            model: ModelSpec::softmax(2, 2, config.l2_reg),
            privacy: PrivacyParams {
                eta: config.eta,
                clip: config.clip,
                min_client_size: 10,
                rounds: config.rounds,
                exposures: config.exposures,
                num_clients: 3,
            },
            lr: 0.3,
            batch: 100,
            local_epochs: 2,
            threads: 1,
        };
        let history = run_dpfl(&setup, &shards, &RngStream::new(seed).child("train")).unwrap();
        (config, history)
    }

    #[test]
    fn run_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (config, history) = small_history(7);
        let run = RunDirectory::create(dir.path().join("run")).unwrap();
        run.save_run(&config, &history).unwrap();

        let (loaded_config, loaded) = RunDirectory::open(run.root()).unwrap().load_run().unwrap();
        assert_eq!(loaded_config.rounds, config.rounds);
        assert_eq!(loaded.initial, history.initial);
        assert_eq!(loaded.rounds.len(), history.rounds.len());
        for (a, b) in loaded.rounds.iter().zip(&history.rounds) {
            assert_eq!(a.global, b.global);
            assert_eq!(a.broadcast, b.broadcast);
            assert_eq!(a.submissions, b.submissions);
            // Clipped vectors are reconstructed, not stored.
            for (ca, cb) in a.clipped.iter().zip(&b.clipped) {
                assert!(ca.dist(cb) < 1e-9);
            }
        }
    }

    #[test]
    fn meta_is_written_before_rounds() {
        let dir = tempfile::tempdir().unwrap();
        let (config, history) = small_history(8);
        let run = RunDirectory::create(dir.path().join("run")).unwrap();
        run.save_run(&config, &history).unwrap();
        assert!(run.root().join("meta.json").exists());
        assert!(run.root().join("rounds/1/global.fv").exists());
        assert!(run.root().join("rounds/2/client_2.fv").exists());
        // Opening a directory without meta.json fails.
        assert!(RunDirectory::open(dir.path().join("empty")).is_err());
    }

    #[test]
    fn metrics_rows_survive_appends() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDirectory::create(dir.path().join("run")).unwrap();
        for (m, acc) in [("original", 0.9), ("fui", 0.85)] {
            run.append_metrics(&MetricsRow {
                method: m.into(),
                dataset: "synthetic".into(),
                seed: 1,
                accuracy: acc,
                prediction_loss: 12.5,
                runtime_s: 0.5,
                mia_precision: 0.5,
                mia_recall: 0.4,
            })
            .unwrap();
        }
        let rows = run.read_metrics().unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, "original");
        assert_eq!(rows[1].accuracy, 0.85);
        // No stray temp file left behind.
        assert!(!run.root().join("metrics.tmp").exists());
    }
}
