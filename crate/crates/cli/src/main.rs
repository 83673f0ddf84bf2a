use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use piggo_core::gekf::{FilterScales, MeasurementNoiseSource};
use piggo_core::graph::StructuralGraph;
use piggo_core::harness::{
    emit_report, evaluate, predict_filtered, predict_open_loop, render_table, run_experiment,
    train_model, ExperimentConfig, GeneratedSystem, ModelKind, NmseNormalisation, PredictionSeries, ReportRow,
    CORE_PRESETS, PRESETS,
};
use piggo_core::model::PiggoModel;
use piggo_core::sim::TrajectoryDataset;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "piggo", version, about = "Physics-guided graph ODE training and graph EKF virtual sensing")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and/or test systems of an experiment.
    Generate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value = "both")]
        which: Which,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated system directory.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// System directory written by `generate`.
        #[arg(long)]
        system: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Open-loop prediction from rest under the measured loads.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drive the model with the noise-free loads instead.
        #[arg(long)]
        clean_input: bool,
    },
    /// Filtered prediction with the graph EKF.
    Filter {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        system: PathBuf,
        /// Training system directory, used for the default model-error scale.
        #[arg(long)]
        train_system: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// NMSE of open-loop and filtered predictions against the truth.
    Evaluate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        open_loop: PathBuf,
        #[arg(long)]
        filtered: PathBuf,
        #[arg(long, default_value = "case")]
        case: String,
        /// Only score the unmeasured nodes.
        #[arg(long)]
        unmeasured_only: bool,
        /// Divide by the squared norm of the truth.
        #[arg(long)]
        squared_norm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Comparison table (and plots) from evaluation files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        rows: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Full pipeline for a list of presets.
    RunAll {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Presets to run (default: the non-stretch matrix).
        #[arg(long, value_delimiter = ',')]
        presets: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Train,
    Test,
    Both,
}

/// Experiment selection with flag overrides, applied in this order:
/// preset (or config file), then individual flags.
#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    #[arg(long, default_value = "sobol-16-32")]
    preset: String,
    /// TOML experiment config; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed of the preset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    sample_dt: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    /// Record noise-free data.
    #[arg(long)]
    noise_free: bool,
    /// Hidden widths of the message network, e.g. 32,32.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Model-error acceleration scale of the filter, m/s^2.
    #[arg(long)]
    model_error: Option<f64>,
    /// Initial filter variance of displacement and velocity, e.g. 1e-8,1e-6.
    #[arg(long, value_delimiter = ',')]
    initial_variance: Option<Vec<f64>>,
    /// Filter measurement noise: dataset, residual or a variance.
    #[arg(long)]
    measurement_noise: Option<String>,
    #[arg(long)]
    squared_norm: bool,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml(
                &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            )?,
            None => ExperimentConfig::preset(&self.preset, self.seed)?,
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(e) = self.epochs {
            cfg.training.max_epochs = e;
        }
        if let Some(dt) = self.sample_dt {
            cfg.data.sample_dt = dt;
        }
        if let Some(p) = self.sparsity {
            cfg.train.sparsity = p;
            cfg.test.sparsity = p;
        }
        if let Some(s) = self.snr {
            cfg.data.snr = Some(s);
        }
        if self.noise_free {
            cfg.data.snr = None;
        }
        if let Some(h) = &self.hidden {
            cfg.training.architecture.hidden = h.clone();
        }
        if let Some(e) = self.model_error {
            cfg.filter.model_error = Some(e);
        }
        if let Some(v) = &self.initial_variance {
            let [u, du] = v[..] else {
                bail!(piggo_core::Error::Invalid(
                    "--initial-variance takes two values: displacement,velocity".into()
                ));
            };
            cfg.filter.initial_variance = Some((u, du));
        }
        if let Some(m) = &self.measurement_noise {
            cfg.filter.measurement = match m.as_str() {
                "dataset" => MeasurementNoiseSource::Dataset,
                "residual" => MeasurementNoiseSource::Residual,
                v => MeasurementNoiseSource::Override(
                    v.parse()
                        .map_err(|_| piggo_core::Error::Invalid(format!("bad measurement noise {v:?}")))?,
                ),
            };
        }
        if self.squared_norm {
            cfg.normalisation = NmseNormalisation::SquaredNorm;
        }
        Ok(())
    }
}

fn save_system(sys: &GeneratedSystem, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    sys.truth.save(dir.join("truth.toml"))?;
    sys.nominal.save(dir.join("nominal.toml"))?;
    sys.data.save(dir.join("data.txt"))?;
    std::fs::write(dir.join("forcing.json"), serde_json::to_string_pretty(&sys.forcing)?)?;
    Ok(())
}

fn load_system(dir: &Path) -> Result<(StructuralGraph, TrajectoryDataset)> {
    let nominal = StructuralGraph::load(dir.join("nominal.toml"))
        .with_context(|| format!("loading nominal graph from {}", dir.display()))?;
    let data =
        TrajectoryDataset::load(dir.join("data.txt")).with_context(|| format!("loading data from {}", dir.display()))?;
    if data.node_count() != nominal.node_count() {
        return Err(piggo_core::Error::ShapeMismatch {
            expected: nominal.node_count(),
            got: data.node_count(),
        }
        .into());
    }
    Ok((nominal, data))
}

fn load_system_full(dir: &Path) -> Result<GeneratedSystem> {
    let (nominal, data) = load_system(dir)?;
    let truth = StructuralGraph::load(dir.join("truth.toml"))?;
    let forcing = serde_json::from_str(&std::fs::read_to_string(dir.join("forcing.json"))?)?;
    Ok(GeneratedSystem {
        truth,
        nominal,
        data,
        forcing,
    })
}

fn progress(epoch: usize, loss: f64) {
    if epoch % 10 == 0 {
        info!("epoch {epoch}: loss {loss:.6e}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { exp, which, out } => {
            let cfg = exp.resolve()?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            if matches!(which, Which::Train | Which::Both) {
                save_system(&cfg.generate_train()?, &out.join("train"))?;
            }
            if matches!(which, Which::Test | Which::Both) {
                save_system(&cfg.generate_test()?, &out.join("test"))?;
            }
            println!("wrote {}", out.display());
        }
        Command::Train { exp, system, out } => {
            let cfg = exp.resolve()?;
            let sys = load_system_full(&system)?;
            let (model, report) = train_model(&cfg.training, &sys, progress)?;
            model.save(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "epochs": report.loss_history.len(),
                    "best_epoch": report.best_epoch,
                    "best_loss": report.best_loss,
                    "stopped_early": report.stopped_early,
                })
            );
        }
        Command::Predict {
            model,
            system,
            out,
            clean_input,
        } => {
            let model = PiggoModel::load(&model)?;
            let (nominal, data) = load_system(&system)?;
            let loads = if clean_input { &data.true_forces } else { &data.observed_forces };
            predict_open_loop(&model, &nominal, &data.times, loads)?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Filter {
            exp,
            model,
            system,
            train_system,
            out,
        } => {
            let cfg = exp.resolve()?;
            let model = PiggoModel::load(&model)?;
            let (nominal, data) = load_system(&system)?;
            let scales = match (&train_system, cfg.filter.model_error) {
                (Some(dir), _) => FilterScales::from_training(&load_system(dir)?.1),
                (None, Some(model_error)) => FilterScales { model_error },
                (None, None) => bail!(piggo_core::Error::Invalid(
                    "filter needs --model-error or --train-system".into()
                )),
            };
            let (series, _, _) = predict_filtered(&model, &nominal, &data, &cfg.filter, &scales)?;
            series.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            system,
            open_loop,
            filtered,
            case,
            unmeasured_only,
            squared_norm,
            out,
        } => {
            let (_, data) = load_system(&system)?;
            let truth = PredictionSeries::truth(&data);
            let norm = if squared_norm {
                NmseNormalisation::SquaredNorm
            } else {
                NmseNormalisation::Norm
            };
            let nodes = unmeasured_only.then(|| data.mask.unmeasured_nodes());
            let row = ReportRow {
                case,
                open_loop: evaluate(
                    ModelKind::OpenLoop,
                    &PredictionSeries::load(&open_loop)?,
                    &truth,
                    nodes.as_deref(),
                    norm,
                )?,
                filtered: evaluate(
                    ModelKind::Filtered,
                    &PredictionSeries::load(&filtered)?,
                    &truth,
                    nodes.as_deref(),
                    norm,
                )?,
            };
            std::fs::write(&out, serde_json::to_string_pretty(&row)?)?;
            print!("{}", render_table(std::slice::from_ref(&row)));
        }
        Command::Report { rows, out, plots } => {
            let rows = rows
                .iter()
                .map(|p| -> Result<ReportRow> {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(|e| piggo_core::Error::Parse(e.to_string()).into())
                })
                .collect::<Result<Vec<_>>>()?;
            emit_report(&rows, &out, plots)?;
            print!("{}", render_table(&rows));
        }
        Command::RunAll {
            exp,
            presets,
            out,
            plots,
        } => {
            let presets = presets.unwrap_or_else(|| CORE_PRESETS.iter().map(|s| s.to_string()).collect());
            let mut rows = Vec::new();
            for name in &presets {
                let mut cfg = ExperimentConfig::preset(name, exp.seed)?;
                exp.apply(&mut cfg)?;
                cfg.validate()?;
                info!("running {name}");
                let outcome = run_experiment(&cfg, progress)?;
                outcome.write(&out.join(name), plots)?;
                info!("{name} finished in {:.0} s", outcome.seconds);
                rows.push(outcome.row);
            }
            emit_report(&rows, &out, plots)?;
            print!("{}", render_table(&rows));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<piggo_core::Error>() {
            return match e {
                piggo_core::Error::Diverged { .. } | piggo_core::Error::NonfiniteLoss { .. } => EXIT_DIVERGED,
                piggo_core::Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_INVALID,
            };
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if exit_code(&e) == EXIT_INVALID {
                eprintln!("known presets: {}", PRESETS.join(", "));
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
