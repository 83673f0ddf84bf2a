use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gekf::{filter_trajectory, FilterConfig, FilterOutput, FilterScales, NoiseConfig};
use crate::graph::{GraphState, StructuralGraph};
use crate::harness::nmse::NmseNormalisation;
use crate::harness::plots::signal_overlay;
use crate::harness::report::{emit_report, evaluate, sanitize, EvaluationReport, ModelKind, ReportRow};
use crate::harness::series::{PredictionSeries, Variable};
use crate::harness::system::{derive_seed, generate_system, DataConfig, GeneratedSystem, SystemKind, SystemSpec};
use crate::model::{rollout, train_with_progress, ArchitectureConfig, PiggoModel, TrainingConfig, TrainingReport};
use crate::sim::{ParameterDistributions, TrajectoryDataset};

/// Everything needed to reproduce one train-then-predict run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub system: SystemKind,
    pub distributions: ParameterDistributions,
    pub train: SystemSpec,
    pub test: SystemSpec,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub filter: FilterConfig,
    pub normalisation: NmseNormalisation,
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "sobol-16-32",
    "sobol-16-32-sparse",
    "bridge-8-16",
    "bridge-8-16-sparse",
    "sobol-16-64",
    "bridge-8-24",
];

/// Presets run by default; the 64-node and 24 m cases are stretch runs.
pub const CORE_PRESETS: [&str; 4] = ["sobol-16-32", "sobol-16-32-sparse", "bridge-8-16", "bridge-8-16-sparse"];

impl ExperimentConfig {
    /// Named experiment; train and test structures draw their parameters from
    /// separate seed streams of `seed`.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let (system, train_size, train_len, test_size, test_len, sparsity, sample_dt) = match name {
            "sobol-16-32" => (SystemKind::Sobol, 16.0, 4.0, 32.0, 8.0, 75.0, 0.005),
            "sobol-16-32-sparse" => (SystemKind::Sobol, 16.0, 4.0, 32.0, 8.0, 87.5, 0.005),
            "sobol-16-64" => (SystemKind::Sobol, 16.0, 4.0, 64.0, 8.0, 75.0, 0.005),
            "bridge-8-16" => (SystemKind::Bridge, 8.0, 2.0, 16.0, 4.0, 75.0, 0.002),
            "bridge-8-16-sparse" => (SystemKind::Bridge, 8.0, 2.0, 16.0, 4.0, 87.5, 0.002),
            "bridge-8-24" => (SystemKind::Bridge, 8.0, 2.0, 24.0, 4.0, 75.0, 0.002),
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown preset {name:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        let training = TrainingConfig {
            window: train_len,
            seed: derive_seed(seed, 3),
            max_epochs: 300,
            patience: 25,
            architecture: ArchitectureConfig {
                hidden: vec![32, 32],
                ..ArchitectureConfig::default()
            },
            ..TrainingConfig::default()
        };
        Ok(ExperimentConfig {
            name: name.to_string(),
            system,
            distributions: system.distributions(),
            train: SystemSpec {
                size: train_size,
                duration: train_len,
                sparsity,
                seed: derive_seed(seed, 100),
            },
            test: SystemSpec {
                size: test_size,
                duration: test_len,
                sparsity,
                seed: derive_seed(seed, 200),
            },
            data: DataConfig {
                sample_dt,
                ..DataConfig::default()
            },
            training,
            filter: FilterConfig::default(),
            normalisation: NmseNormalisation::Norm,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.stride()?;
        self.training.validate()?;
        for spec in [&self.train, &self.test] {
            if !(spec.duration > 0.0) {
                return Err(Error::Invalid(format!("duration {} must be positive", spec.duration)));
            }
            if !(0.0..100.0).contains(&spec.sparsity) {
                return Err(Error::Invalid(format!("sparsity {}% outside [0, 100)", spec.sparsity)));
            }
        }
        if self.train.seed == self.test.seed {
            return Err(Error::Invalid("train and test systems must use different seeds".into()));
        }
        Ok(())
    }

    pub fn generate_train(&self) -> Result<GeneratedSystem> {
        generate_system(self.system, &self.distributions, &self.train, &self.data)
    }

    pub fn generate_test(&self) -> Result<GeneratedSystem> {
        generate_system(self.system, &self.distributions, &self.test, &self.data)
    }
}

/// Fits a fresh model to a training system.
pub fn train_model(
    cfg: &TrainingConfig,
    system: &GeneratedSystem,
    progress: impl FnMut(usize, f64),
) -> Result<(PiggoModel, TrainingReport)> {
    let mut model = PiggoModel::for_dataset(&cfg.architecture, &system.nominal, &system.data, cfg.seed)?;
    if cfg.physics_start {
        model.silence_messages();
    }
    train_with_progress(model, &system.nominal, &system.data, cfg, progress)
}

/// Open-loop prediction from rest, driven by `loads` (`[step][node]`).
pub fn predict_open_loop(
    model: &PiggoModel,
    graph: &StructuralGraph,
    times: &[f64],
    loads: &[Vec<crate::Vec2>],
) -> Result<PredictionSeries> {
    if times.len() < 2 {
        return Err(Error::Invalid("prediction needs at least two samples".into()));
    }
    let dt = crate::sim::uniform_step(times)?;
    let r = rollout(model, graph, GraphState::zeros(graph.node_count()), loads, dt)?;
    Ok(PredictionSeries::from_rollout(times, &r))
}

/// Filters the observations of `data` with the model as transition.
pub fn predict_filtered(
    model: &PiggoModel,
    graph: &StructuralGraph,
    data: &TrajectoryDataset,
    cfg: &FilterConfig,
    scales: &FilterScales,
) -> Result<(PredictionSeries, FilterOutput, NoiseConfig)> {
    let noise = NoiseConfig::build(cfg, graph, data, scales)?;
    let out = filter_trajectory(model, graph, data, &noise, false)?;
    Ok((PredictionSeries::from_filter(&data.times, &out), out, noise))
}

/// Offline fit on the training system: open-loop NMSE at the unmeasured
/// nodes, driven by the noise-free loads and by the measured loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineQuality {
    pub clean_input: EvaluationReport,
    pub measured_input: EvaluationReport,
}

pub fn offline_quality(model: &PiggoModel, system: &GeneratedSystem, norm: NmseNormalisation) -> Result<OfflineQuality> {
    let data = &system.data;
    let truth = PredictionSeries::truth(data);
    let unmeasured = data.mask.unmeasured_nodes();
    let clean = predict_open_loop(model, &system.nominal, &data.times, &data.true_forces)?;
    let measured = predict_open_loop(model, &system.nominal, &data.times, &data.observed_forces)?;
    Ok(OfflineQuality {
        clean_input: evaluate(ModelKind::OpenLoop, &clean, &truth, Some(&unmeasured), norm)?,
        measured_input: evaluate(ModelKind::OpenLoop, &measured, &truth, Some(&unmeasured), norm)?,
    })
}

/// Result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub train_system: GeneratedSystem,
    pub test_system: GeneratedSystem,
    pub model: PiggoModel,
    pub training: TrainingReport,
    pub offline: OfflineQuality,
    pub filter_scales: FilterScales,
    pub truth: PredictionSeries,
    pub open_loop: PredictionSeries,
    pub filtered: PredictionSeries,
    pub row: ReportRow,
    pub seconds: f64,
}

/// Generates both systems, trains on the small one and predicts the large
/// one open loop and with the filter. NMSE is taken over every test node.
pub fn run_experiment(cfg: &ExperimentConfig, progress: impl FnMut(usize, f64)) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let train_system = cfg.generate_train()?;
    let test_system = cfg.generate_test()?;
    let (model, training) = train_model(&cfg.training, &train_system, progress)?;
    let offline = offline_quality(&model, &train_system, cfg.normalisation)?;
    let data = &test_system.data;
    let truth = PredictionSeries::truth(data);
    let open_loop = predict_open_loop(&model, &test_system.nominal, &data.times, &data.observed_forces)?;
    let filter_scales = FilterScales::from_training(&train_system.data);
    let (filtered, _, _) = predict_filtered(&model, &test_system.nominal, data, &cfg.filter, &filter_scales)?;
    let row = ReportRow {
        case: format!("{} ({}%)", cfg.name, cfg.test.sparsity),
        open_loop: evaluate(ModelKind::OpenLoop, &open_loop, &truth, None, cfg.normalisation)?,
        filtered: evaluate(ModelKind::Filtered, &filtered, &truth, None, cfg.normalisation)?,
    };
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        train_system,
        test_system,
        model,
        training,
        offline,
        filter_scales,
        truth,
        open_loop,
        filtered,
        row,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Run record sufficient to regenerate every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config: ExperimentConfig,
    pub filter_scales: FilterScales,
    pub train_forcing_seed: u64,
    pub train_noise_seed: u64,
    pub test_forcing_seed: u64,
    pub test_noise_seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    pub offline: OfflineQuality,
    pub report: ReportRow,
    pub seconds: f64,
}

impl ExperimentOutcome {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            filter_scales: self.filter_scales,
            train_forcing_seed: derive_seed(self.config.train.seed, 1),
            train_noise_seed: derive_seed(self.config.train.seed, 2),
            test_forcing_seed: derive_seed(self.config.test.seed, 1),
            test_noise_seed: derive_seed(self.config.test.seed, 2),
            epochs: self.training.loss_history.len(),
            best_epoch: self.training.best_epoch,
            best_loss: self.training.best_loss,
            stopped_early: self.training.stopped_early,
            offline: self.offline.clone(),
            report: self.row.clone(),
            seconds: self.seconds,
        }
    }

    /// Writes the manifest, model, table, per-node NMSE, prediction series,
    /// the unmeasured-node comparison with 95% bands and, with `plots`,
    /// SVG figures.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())?)?;
        std::fs::write(dir.join("config.toml"), self.config.to_toml()?)?;
        self.model.save(dir.join("model.bin"))?;
        emit_report(std::slice::from_ref(&self.row), dir, plots)?;
        let mut loss = csv::Writer::from_path(dir.join("training_loss.csv"))?;
        loss.write_record(["epoch", "loss"])?;
        for (e, l) in self.training.loss_history.iter().enumerate() {
            loss.write_record([e.to_string(), format!("{l:e}")])?;
        }
        loss.flush()?;
        self.open_loop.save(dir.join("open_loop.csv"))?;
        self.filtered.save(dir.join("gekf.csv"))?;
        self.write_comparison(&dir.join("unmeasured_predictions.csv"))?;
        if plots {
            let stem = sanitize(&self.config.name);
            if let Some(&node) = self.test_system.data.mask.unmeasured_nodes().first() {
                for v in [Variable::Displacement, Variable::Acceleration] {
                    signal_overlay(
                        &self.truth,
                        &self.open_loop,
                        &self.filtered,
                        v,
                        node,
                        0,
                        &dir.join(format!("{stem}_node{node}_{}.svg", v.label())),
                    )?;
                }
            }
        }
        Ok(())
    }

    fn write_comparison(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time", "node", "variable", "direction", "truth", "open_loop", "gekf", "gekf_lower", "gekf_upper",
        ])?;
        let nodes = self.test_system.data.mask.unmeasured_nodes();
        for (k, t) in self.truth.times.iter().enumerate() {
            for &node in &nodes {
                for v in Variable::ALL {
                    let (lo, hi) = self
                        .filtered
                        .band(v, k, node)
                        .unwrap_or((self.filtered.variable(v)[k][node], self.filtered.variable(v)[k][node]));
                    for (d, dir) in ["x", "y"].iter().enumerate() {
                        w.write_record([
                            format!("{t}"),
                            node.to_string(),
                            v.label().to_string(),
                            dir.to_string(),
                            format!("{:e}", self.truth.variable(v)[k][node][d]),
                            format!("{:e}", self.open_loop.variable(v)[k][node][d]),
                            format!("{:e}", self.filtered.variable(v)[k][node][d]),
                            format!("{:e}", lo[d]),
                            format!("{:e}", hi[d]),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("sobol-16-32", 1).unwrap();
        cfg.name = "tiny".into();
        cfg.train.size = 8.0;
        cfg.train.duration = 2.0;
        cfg.test.size = 10.0;
        cfg.test.duration = 2.0;
        cfg.data.sample_dt = 0.01;
        cfg.training.window = 0.5;
        cfg.training.max_epochs = 3;
        cfg.training.architecture.hidden = vec![8];
        cfg
    }

    #[test]
    fn presets_follow_the_experiment_matrix() {
        let s = ExperimentConfig::preset("sobol-16-32", 0).unwrap();
        assert_eq!((s.train.size, s.train.duration), (16.0, 4.0));
        assert_eq!((s.test.size, s.test.duration), (32.0, 8.0));
        assert_eq!(s.test.sparsity, 75.0);
        assert_eq!(ExperimentConfig::preset("sobol-16-32-sparse", 0).unwrap().train.sparsity, 87.5);
        let b = ExperimentConfig::preset("bridge-8-16", 0).unwrap();
        assert_eq!((b.train.size, b.train.duration, b.test.size, b.test.duration), (8.0, 2.0, 16.0, 4.0));
        assert_eq!(ExperimentConfig::preset("sobol-16-64", 0).unwrap().test.size, 64.0);
        assert_eq!(ExperimentConfig::preset("bridge-8-24", 0).unwrap().test.size, 24.0);
        assert!(ExperimentConfig::preset("nope", 0).is_err());
        for p in PRESETS {
            let c = ExperimentConfig::preset(p, 4).unwrap();
            assert_ne!(c.train.seed, c.test.seed);
            c.validate().unwrap();
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let c = ExperimentConfig::preset("bridge-8-16", 9).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let cfg = tiny();
        let a = run_experiment(&cfg, |_, _| {}).unwrap();
        let b = run_experiment(&cfg, |_, _| {}).unwrap();
        assert_eq!(a.row, b.row);
        assert_eq!(a.offline, b.offline);
        assert!(a.row.open_loop.global.iter().chain(&a.row.filtered.global).all(|v| v.is_finite() && *v >= 0.0));
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path(), true).unwrap();
        for f in [
            "manifest.json",
            "config.toml",
            "model.bin",
            "nmse_table.txt",
            "open_loop.csv",
            "gekf.csv",
            "unmeasured_predictions.csv",
            "training_loss.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.config, cfg);
        let back = PredictionSeries::load(dir.path().join("gekf.csv")).unwrap();
        assert_eq!(back.len(), a.filtered.len());
    }
}
