//! Command-line driver: train a DPFL run, unlearn a client from it, retrain
//! without the client, score models with membership inference, solve or
//! sweep the strategy game, and sweep privacy parameters.
//!
//! Exit status: 0 on success, 1 on usage errors (bad flags, bad config,
//! out-of-range requests), 2 on runtime failures.

use clap::{Args, Parser, Subcommand};
use fui_core::config::{parse_config, Config};
use fui_core::error::Error;
use fui_core::eval;
use fui_core::game::{self, SweepParam};
use fui_core::models::accuracy;
use fui_core::pipeline;
use fui_core::rundir::{MetricsRow, RetrainRecord, RunDirectory, TrainTiming, UnlearnRecord};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fui", about = "DPFL unlearning simulator", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run DPFL training and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unlearn a client from a recorded run.
    Unlearn {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        target: usize,
        /// Requested indistinguishability level; config value when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
        /// History round to unlearn from; defaults to the last round.
        #[arg(long)]
        round: Option<usize>,
        /// Retraction radius override.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Retrain from scratch without the target client.
    Retrain {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        target: usize,
    },
    /// Score a model with membership inference and append to metrics.csv.
    Mia {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_parser = ["original", "unlearned", "retrained"])]
        model: String,
        /// Target client; defaults to the one recorded by unlearn/retrain.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Strategy-game commands.
    Game {
        #[command(subcommand)]
        command: GameCommand,
    },
    /// Privacy-parameter sweep writing sweep.csv.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated eta grid.
        #[arg(long, default_value = "0.4,0.7,1.0,1.4,1.9")]
        eta_grid: String,
        /// Comma-separated epsilon grid.
        #[arg(long, default_value = "0.5,1.0,1.5,2.5,4.0,8.0")]
        epsilon_grid: String,
        #[arg(long, default_value_t = 0)]
        target: usize,
    },
    /// Train, unlearn, retrain, and score everything in one pass.
    Bench {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        target: usize,
    },
}

#[derive(Subcommand)]
enum GameCommand {
    /// Solve the two-stage game and print the equilibrium.
    Solve {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        target: usize,
    },
    /// Sweep one parameter over a grid and write game_sweep.csv.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// One of d_rest, a, b, r, s, p_max.
        #[arg(long)]
        param: String,
        /// Comma-separated grid; a built-in grid when omitted.
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value_t = 0)]
        target: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are success, anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidParam(_)
        | Error::AlreadyGuaranteed { .. }
        | Error::UnknownKey(_)
        | Error::ConfigLine { .. } => 1,
        _ => 2,
    }
}

/// Load a config file (or defaults) and apply the FUI_SEED override.
fn load_config(arg: &ConfigArg) -> Result<Config, Error> {
    let mut cfg = match &arg.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidParam(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => Config::default(),
    };
    if let Ok(seed) = std::env::var("FUI_SEED") {
        cfg.seed = seed
            .parse()
            .map_err(|_| Error::InvalidParam(format!("FUI_SEED must be an integer, got `{seed}`")))?;
    }
    Ok(cfg)
}

fn parse_grid(raw: &str) -> Result<Vec<f64>, Error> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParam(format!("bad grid value `{t}`")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let exp = pipeline::prepare(&cfg)?;
            let (history, elapsed) = pipeline::train(&exp, &cfg)?;
            let run = RunDirectory::create(&out)?;
            run.save_run(&cfg, &history)?;
            run.save_train_timing(&TrainTiming { runtime_s: elapsed.as_secs_f64() })?;
            let acc = accuracy(&exp.spec, history.final_global(), &exp.test)?;
            println!(
                "trained {} rounds over {} clients in {:.3}s; test accuracy {:.4}",
                history.rounds.len(),
                cfg.clients,
                elapsed.as_secs_f64(),
                acc
            );
            println!("run written to {}", run.root().display());
            Ok(())
        }
        Command::Unlearn { run, target, epsilon, round, delta } => {
            let dir = RunDirectory::open(&run)?;
            let (mut cfg, history) = dir.load_run()?;
            if let Some(d) = delta {
                cfg.delta = Some(d);
            }
            let exp = pipeline::prepare(&cfg)?;
            let outcome = pipeline::unlearn_target(&exp, &cfg, &history, target, round, epsilon)?;
            let record = UnlearnRecord {
                target,
                round: round.unwrap_or_else(|| history.rounds.last().map(|r| r.round).unwrap_or(0)),
                delta: cfg.delta(),
                retraction_iterations: outcome.retraction_iterations,
                runtime_s: outcome.elapsed.as_secs_f64(),
                report: outcome.report,
            };
            dir.save_unlearned(&outcome.model, &record)?;
            let acc = accuracy(&exp.spec, &outcome.model, &exp.test)?;
            println!(
                "unlearned client {target}: gap {:.6}, noise_added {}, sigma_cali {:.6}, test accuracy {:.4} ({:.3}s)",
                outcome.report.gap,
                outcome.report.noise_added,
                outcome.report.sigma_cali,
                acc,
                outcome.elapsed.as_secs_f64()
            );
            Ok(())
        }
        Command::Retrain { run, target } => {
            let dir = RunDirectory::open(&run)?;
            let (cfg, _) = dir.load_run()?;
            let exp = pipeline::prepare(&cfg)?;
            let (history, elapsed) = pipeline::retrain_without(&exp, &cfg, target)?;
            dir.save_retrained(
                history.final_global(),
                &RetrainRecord { target, runtime_s: elapsed.as_secs_f64() },
            )?;
            let acc = accuracy(&exp.spec, history.final_global(), &exp.test)?;
            println!(
                "retrained without client {target} in {:.3}s; test accuracy {:.4}",
                elapsed.as_secs_f64(),
                acc
            );
            Ok(())
        }
        Command::Mia { run, model, target } => {
            let dir = RunDirectory::open(&run)?;
            let (cfg, history) = dir.load_run()?;
            let exp = pipeline::prepare(&cfg)?;
            let (method, vector, runtime_s, recorded_target) = match model.as_str() {
                "original" => {
                    let timing = dir.load_train_timing()?;
                    ("original", history.final_global().clone(), timing.runtime_s, None)
                }
                "unlearned" => {
                    let (v, rec) = dir.load_unlearned()?;
                    ("fui", v, rec.runtime_s, Some(rec.target))
                }
                "retrained" => {
                    let (v, rec) = dir.load_retrained()?;
                    ("retrain", v, rec.runtime_s, Some(rec.target))
                }
                _ => unreachable!("clap validates the model name"),
            };
            let target = target.or(recorded_target).ok_or_else(|| {
                Error::InvalidParam("--target is required for --model original".into())
            })?;
            let (precision, recall) = pipeline::mia_for(&exp, &cfg, &vector, target)?;
            let row = MetricsRow {
                method: method.into(),
                dataset: exp.dataset_name.clone(),
                seed: cfg.seed,
                accuracy: accuracy(&exp.spec, &vector, &exp.test)?,
                prediction_loss: eval::prediction_loss(&exp.spec, &vector, &exp.test)?,
                runtime_s,
                mia_precision: precision,
                mia_recall: recall,
            };
            dir.append_metrics(&row)?;
            println!(
                "{method}: accuracy {:.4}, prediction loss {:.3}, MIA precision {:.3} recall {:.3}",
                row.accuracy, row.prediction_loss, precision, recall
            );
            Ok(())
        }
        Command::Game { command } => run_game(command),
        Command::Sweep { config, out, eta_grid, epsilon_grid, target } => {
            let cfg = load_config(&config)?;
            let rows = eval::privacy_sweep(&cfg, &parse_grid(&eta_grid)?, &parse_grid(&epsilon_grid)?, target)?;
            let dir = RunDirectory::create(&out)?;
            dir.save_privacy_sweep(&rows)?;
            println!("wrote {} sweep rows to {}", rows.len(), out.join("sweep.csv").display());
            Ok(())
        }
        Command::Bench { config, out, target } => {
            let cfg = load_config(&config)?;
            let exp = pipeline::prepare(&cfg)?;
            let dir = RunDirectory::create(&out)?;

            let (history, train_time) = pipeline::train(&exp, &cfg)?;
            dir.save_run(&cfg, &history)?;
            dir.save_train_timing(&TrainTiming { runtime_s: train_time.as_secs_f64() })?;

            let outcome = pipeline::unlearn_target(&exp, &cfg, &history, target, None, None)?;
            dir.save_unlearned(
                &outcome.model,
                &UnlearnRecord {
                    target,
                    round: history.rounds.last().map(|r| r.round).unwrap_or(0),
                    delta: cfg.delta(),
                    retraction_iterations: outcome.retraction_iterations,
                    runtime_s: outcome.elapsed.as_secs_f64(),
                    report: outcome.report,
                },
            )?;

            let (retrained, retrain_time) = pipeline::retrain_without(&exp, &cfg, target)?;
            dir.save_retrained(
                retrained.final_global(),
                &RetrainRecord { target, runtime_s: retrain_time.as_secs_f64() },
            )?;

            println!(
                "{:<10} {:>9} {:>16} {:>10} {:>9} {:>7}",
                "method", "accuracy", "prediction_loss", "runtime_s", "precision", "recall"
            );
            for (method, vector, runtime_s) in [
                ("original", history.final_global().clone(), train_time.as_secs_f64()),
                ("fui", outcome.model.clone(), outcome.elapsed.as_secs_f64()),
                ("retrain", retrained.final_global().clone(), retrain_time.as_secs_f64()),
            ] {
                let (precision, recall) = pipeline::mia_for(&exp, &cfg, &vector, target)?;
                let row = MetricsRow {
                    method: method.into(),
                    dataset: exp.dataset_name.clone(),
                    seed: cfg.seed,
                    accuracy: accuracy(&exp.spec, &vector, &exp.test)?,
                    prediction_loss: eval::prediction_loss(&exp.spec, &vector, &exp.test)?,
                    runtime_s,
                    mia_precision: precision,
                    mia_recall: recall,
                };
                dir.append_metrics(&row)?;
                println!(
                    "{:<10} {:>9.4} {:>16.3} {:>10.3} {:>9.3} {:>7.3}",
                    method, row.accuracy, row.prediction_loss, row.runtime_s, precision, recall
                );
            }
            println!("artifacts written to {}", dir.root().display());
            Ok(())
        }
    }
}

fn run_game(command: GameCommand) -> Result<(), Error> {
    match command {
        GameCommand::Solve { config, target } => {
            let cfg = load_config(&config)?;
            let exp = pipeline::prepare(&cfg)?;
            let gp = cfg.game_params(exp.plan.rest_size(target) as u64);
            match game::server_optimal(&gp) {
                game::ServerOutcome::NoUnlearning => {
                    println!("no penalty factor leaves the client willing to unlearn");
                }
                game::ServerOutcome::Equilibrium(eq) => {
                    let diag = game::diagnose_best_response(eq.p, &gp);
                    println!("equilibrium: p* = {:.6}, epsilon* = {:.6}", eq.p, eq.epsilon);
                    println!(
                        "utilities: server {:.6}, client {:.6}",
                        eq.utility_server, eq.utility_client
                    );
                    println!(
                        "stage-2 concave: {}; closed form agrees: {}",
                        diag.concave, diag.closed_form_agrees
                    );
                }
            }
            Ok(())
        }
        GameCommand::Sweep { config, out, param, values, target } => {
            let cfg = load_config(&config)?;
            let exp = pipeline::prepare(&cfg)?;
            let gp = cfg.game_params(exp.plan.rest_size(target) as u64);
            let param = SweepParam::parse(&param)?;
            let grid = match values {
                Some(raw) => parse_grid(&raw)?,
                None => param.default_grid(),
            };
            let rows = game::simulate_strategies(&gp, param, &grid, &exp.stream().child("game"))?;
            let dir = RunDirectory::create(&out)?;
            dir.save_game_sweep(&rows)?;
            println!(
                "wrote {} game rows to {}",
                rows.len(),
                out.join("game_sweep.csv").display()
            );
            Ok(())
        }
    }
}
