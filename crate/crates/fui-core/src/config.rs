//! Flat `key = value` configuration.
//!
//! One line per knob, `#` starts a comment, unknown keys are errors. Every
//! parse error carries its line number; constraint violations name the
//! precondition they break. Defaults follow the experiment constants
//! (eta = 5, epsilon = 5, 10 clients, lr = 0.001, batch = 100, game
//! constants a = 1.5, b = 10, r = 25, s = 2, psi_s = 5, psi_c = 3).

use crate::error::{Error, Result};
use crate::fui::DBoundPolicy;
use crate::game::GameParams;
use crate::vecnum::{HessianMode, LbfgsOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

impl DatasetKind {
    fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Softmax,
    Mlp,
}

impl ModelChoice {
    fn as_str(&self) -> &'static str {
        match self {
            ModelChoice::Softmax => "softmax",
            ModelChoice::Mlp => "mlp",
        }
    }
}

/// Every tunable in one place. `delta` is optional and defaults to the
/// clipping threshold when unset.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub clients: usize,
    pub rounds: usize,
    pub exposures: usize,
    pub clip: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub lbfgs_max_iter: usize,
    /// 0 selects the dense inverse-Hessian representation.
    pub lbfgs_history: usize,
    pub l2_reg: f64,
    pub lr: f64,
    pub batch: usize,
    pub local_epochs: usize,
    pub eps_min: f64,
    pub p_max: f64,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub s: f64,
    pub l: f64,
    pub psi_s: f64,
    pub psi_c: f64,
    pub d_policy: DBoundPolicy,
    pub dataset: DatasetKind,
    pub model: ModelChoice,
    pub hidden_dim: usize,
    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_samples: usize,
    pub synth_spread: f64,
    pub csv_path: String,
    pub csv_schema: String,
    pub test_fraction: f64,
    pub threads: usize,
    pub mia_shadows: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            clients: 10,
            rounds: 10,
            exposures: 1,
            clip: 1.0,
            eta: 5.0,
            epsilon: 5.0,
            delta: None,
            alpha: 0.1,
            tau: 1e-6,
            lbfgs_max_iter: 500,
            lbfgs_history: 10,
            l2_reg: 1e-3,
            lr: 0.001,
            batch: 100,
            local_epochs: 20,
            eps_min: 0.1,
            p_max: 15.0,
            a: 1.5,
            b: 10.0,
            r: 25.0,
            s: 2.0,
            l: 0.0,
            psi_s: 5.0,
            psi_c: 3.0,
            d_policy: DBoundPolicy::ClipDiameter,
            dataset: DatasetKind::Synthetic,
            model: ModelChoice::Softmax,
            hidden_dim: 16,
            synth_classes: 2,
            synth_dim: 8,
            synth_samples: 5000,
            synth_spread: 1.0,
            csv_path: String::new(),
            csv_schema: String::new(),
            test_fraction: 0.2,
            threads: 1,
            mia_shadows: 1,
        }
    }
}

impl Config {
    /// Retraction radius: explicit `delta` or the clipping threshold.
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.clip)
    }

    pub fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            step: self.alpha,
            tol: self.tau,
            max_iter: self.lbfgs_max_iter,
            init_scale: 1.0,
            mode: if self.lbfgs_history == 0 {
                HessianMode::Dense
            } else {
                HessianMode::Limited(self.lbfgs_history)
            },
        }
    }

    pub fn game_params(&self, d_rest: u64) -> GameParams {
        GameParams {
            a: self.a,
            b: self.b,
            r: self.r,
            s: self.s,
            l: self.l,
            psi_s: self.psi_s,
            psi_c: self.psi_c,
            p_max: self.p_max,
            eps_min: self.eps_min,
            eta: self.eta,
            d_rest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {v}")));
            }
            Ok(())
        }
        positive("clip", self.clip)?;
        positive("eta", self.eta)?;
        positive("epsilon", self.epsilon)?;
        positive("alpha", self.alpha)?;
        positive("tau", self.tau)?;
        positive("lr", self.lr)?;
        positive("eps_min", self.eps_min)?;
        positive("p_max", self.p_max)?;
        positive("a", self.a)?;
        positive("b", self.b)?;
        positive("r", self.r)?;
        positive("s", self.s)?;
        positive("psi_s", self.psi_s)?;
        positive("psi_c", self.psi_c)?;
        positive("synth_spread", self.synth_spread)?;
        if !(self.l.is_finite() && self.l >= 0.0) {
            return Err(Error::InvalidParam("l must be >= 0".into()));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(Error::InvalidParam("l2_reg must be >= 0".into()));
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidParam("delta must be >= 0".into()));
            }
        }
        if self.clients == 0 || self.exposures == 0 || self.batch == 0 {
            return Err(Error::InvalidParam(
                "clients, exposures, and batch must be >= 1".into(),
            ));
        }
        if self.lbfgs_max_iter == 0 {
            return Err(Error::InvalidParam("lbfgs_max_iter must be >= 1".into()));
        }
        if self.threads == 0 || self.mia_shadows == 0 {
            return Err(Error::InvalidParam("threads and mia_shadows must be >= 1".into()));
        }
        if self.synth_classes < 2 {
            return Err(Error::InvalidParam("synth_classes must be >= 2".into()));
        }
        if self.synth_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidParam("synth_dim and hidden_dim must be >= 1".into()));
        }
        if self.synth_samples < self.synth_classes {
            return Err(Error::InvalidParam(
                "synth_samples must cover every class at least once".into(),
            ));
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(Error::InvalidParam("test_fraction must be in (0, 1)".into()));
        }
        let limit = self.eta * self.eta / 2.0;
        if self.epsilon >= limit {
            return Err(Error::InvalidParam(format!(
                "epsilon must satisfy epsilon < eta^2/2: {} >= {limit}",
                self.epsilon
            )));
        }
        if self.eps_min >= limit {
            return Err(Error::InvalidParam(format!(
                "eps_min must satisfy eps_min < eta^2/2: {} >= {limit}",
                self.eps_min
            )));
        }
        if self.dataset == DatasetKind::Csv {
            if self.csv_path.is_empty() {
                return Err(Error::InvalidParam("csv dataset requires csv_path".into()));
            }
            if self.csv_schema.is_empty() {
                return Err(Error::InvalidParam("csv dataset requires csv_schema".into()));
            }
        }
        Ok(())
    }

    /// Serialize as the flat format; parsing the output yields an equal
    /// config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("clients", self.clients.to_string());
        kv("rounds", self.rounds.to_string());
        kv("exposures", self.exposures.to_string());
        kv("clip", self.clip.to_string());
        kv("eta", self.eta.to_string());
        kv("epsilon", self.epsilon.to_string());
        if let Some(d) = self.delta {
            kv("delta", d.to_string());
        }
        kv("alpha", self.alpha.to_string());
        kv("tau", self.tau.to_string());
        kv("lbfgs_max_iter", self.lbfgs_max_iter.to_string());
        kv("lbfgs_history", self.lbfgs_history.to_string());
        kv("l2_reg", self.l2_reg.to_string());
        kv("lr", self.lr.to_string());
        kv("batch", self.batch.to_string());
        kv("local_epochs", self.local_epochs.to_string());
        kv("eps_min", self.eps_min.to_string());
        kv("p_max", self.p_max.to_string());
        kv("a", self.a.to_string());
        kv("b", self.b.to_string());
        kv("r", self.r.to_string());
        kv("s", self.s.to_string());
        kv("l", self.l.to_string());
        kv("psi_s", self.psi_s.to_string());
        kv("psi_c", self.psi_c.to_string());
        kv("d_policy", self.d_policy.as_str().to_string());
        kv("dataset", self.dataset.as_str().to_string());
        kv("model", self.model.as_str().to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("synth_classes", self.synth_classes.to_string());
        kv("synth_dim", self.synth_dim.to_string());
        kv("synth_samples", self.synth_samples.to_string());
        kv("synth_spread", self.synth_spread.to_string());
        if !self.csv_path.is_empty() {
            kv("csv_path", self.csv_path.clone());
        }
        if !self.csv_schema.is_empty() {
            kv("csv_schema", self.csv_schema.clone());
        }
        kv("test_fraction", self.test_fraction.to_string());
        kv("threads", self.threads.to_string());
        kv("mia_shadows", self.mia_shadows.to_string());
        out
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::ConfigLine {
        line,
        msg: format!("cannot parse `{raw}` as a value for `{key}`"),
    })
}

/// Parse the flat format over [`Config::default`] and validate the result.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
            line: lineno,
            msg: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.seed = parse_value(lineno, key, value)?,
            "clients" => cfg.clients = parse_value(lineno, key, value)?,
            "rounds" => cfg.rounds = parse_value(lineno, key, value)?,
            "exposures" => cfg.exposures = parse_value(lineno, key, value)?,
            "clip" => cfg.clip = parse_value(lineno, key, value)?,
            "eta" => cfg.eta = parse_value(lineno, key, value)?,
            "epsilon" => cfg.epsilon = parse_value(lineno, key, value)?,
            "delta" => cfg.delta = Some(parse_value(lineno, key, value)?),
            "alpha" => cfg.alpha = parse_value(lineno, key, value)?,
            "tau" => cfg.tau = parse_value(lineno, key, value)?,
            "lbfgs_max_iter" => cfg.lbfgs_max_iter = parse_value(lineno, key, value)?,
            "lbfgs_history" => cfg.lbfgs_history = parse_value(lineno, key, value)?,
            "l2_reg" => cfg.l2_reg = parse_value(lineno, key, value)?,
            "lr" => cfg.lr = parse_value(lineno, key, value)?,
            "batch" => cfg.batch = parse_value(lineno, key, value)?,
            "local_epochs" => cfg.local_epochs = parse_value(lineno, key, value)?,
            "eps_min" => cfg.eps_min = parse_value(lineno, key, value)?,
            "p_max" => cfg.p_max = parse_value(lineno, key, value)?,
            "a" => cfg.a = parse_value(lineno, key, value)?,
            "b" => cfg.b = parse_value(lineno, key, value)?,
            "r" => cfg.r = parse_value(lineno, key, value)?,
            "s" => cfg.s = parse_value(lineno, key, value)?,
            "l" => cfg.l = parse_value(lineno, key, value)?,
            "psi_s" => cfg.psi_s = parse_value(lineno, key, value)?,
            "psi_c" => cfg.psi_c = parse_value(lineno, key, value)?,
            "d_policy" => cfg.d_policy = DBoundPolicy::parse(value)?,
            "dataset" => {
                cfg.dataset = match value {
                    "synthetic" => DatasetKind::Synthetic,
                    "csv" => DatasetKind::Csv,
                    other => {
                        return Err(Error::ConfigLine {
                            line: lineno,
                            msg: format!("unknown dataset `{other}`"),
                        })
                    }
                }
            }
            "model" => {
                cfg.model = match value {
                    "softmax" => ModelChoice::Softmax,
                    "mlp" => ModelChoice::Mlp,
                    other => {
                        return Err(Error::ConfigLine {
                            line: lineno,
                            msg: format!("unknown model `{other}`"),
                        })
                    }
                }
            }
            "hidden_dim" => cfg.hidden_dim = parse_value(lineno, key, value)?,
            "synth_classes" => cfg.synth_classes = parse_value(lineno, key, value)?,
            "synth_dim" => cfg.synth_dim = parse_value(lineno, key, value)?,
            "synth_samples" => cfg.synth_samples = parse_value(lineno, key, value)?,
            "synth_spread" => cfg.synth_spread = parse_value(lineno, key, value)?,
            "csv_path" => cfg.csv_path = value.to_string(),
            "csv_schema" => cfg.csv_schema = value.to_string(),
            "test_fraction" => cfg.test_fraction = parse_value(lineno, key, value)?,
            "threads" => cfg.threads = parse_value(lineno, key, value)?,
            "mia_shadows" => cfg.mia_shadows = parse_value(lineno, key, value)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.eta, 5.0);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.batch, 100);
        assert_eq!(cfg.clients, 10);
    }

    #[test]
    fn overriding_with_the_default_is_idempotent() {
        let cfg = parse_config("eta = 5\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn epsilon_above_the_eta_bound_is_rejected() {
        let err = parse_config("eta = 5\nepsilon = 20\n").unwrap_err();
        match err {
            Error::InvalidParam(msg) => assert!(msg.contains("eta^2/2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_named() {
        match parse_config("bogus = 1\n").unwrap_err() {
            Error::UnknownKey(k) => assert_eq!(k, "bogus"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_errors_carry_line_numbers() {
        match parse_config("seed = 1\nrounds = soon\n").unwrap_err() {
            Error::ConfigLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# a comment\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn round_trips_through_text() {
        let mut cfg = parse_config("seed = 9\ndelta = 0.25\nd_policy = history-max\n").unwrap();
        cfg.csv_path = "data/things.csv".into();
        cfg.csv_schema = "data/things.schema".into();
        let reparsed = parse_config(&cfg.to_text()).unwrap();
        assert_eq!(cfg, reparsed);

        let default_text = Config::default().to_text();
        assert_eq!(parse_config(&default_text).unwrap(), Config::default());
    }

    #[test]
    fn delta_defaults_to_clip() {
        let cfg = parse_config("clip = 0.5\n").unwrap();
        assert_eq!(cfg.delta(), 0.5);
        let cfg2 = parse_config("clip = 0.5\ndelta = 2\n").unwrap();
        assert_eq!(cfg2.delta(), 2.0);
    }

    #[test]
    fn csv_dataset_requires_paths() {
        assert!(parse_config("dataset = csv\n").is_err());
    }
}
