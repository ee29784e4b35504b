//! `owl`: synthesize streams, calibrate agents, run experiments and grids,
//! compare report sets.

mod compare;
mod grid;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use owl_core::checkpoint::save_agent;
use owl_core::discovery::PartitionMode;
use owl_core::features::{load_features, synthesize_stream, write_features, StreamConfig, StreamData};
use owl_core::manager::QualityGate;
use owl_core::ood::{DetectorConfig, DetectorKind};
use owl_core::pipeline::{
    run_experiment, run_stream, Agent, AgentConfig, ExperimentConfig, ExperimentReport, LearnerChoice, Mode,
};

#[derive(Parser, Debug)]
#[command(name = "owl", version, about = "Open-world learning without labels on feature streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write pretrain/validation/stream feature files for one seed.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Calibrate the detector threshold and quality gate on validation data.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Run one experiment and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        agent: AgentFlags,
        /// Directory holding pretrain.owlf, validation.owlf and stream.owlf
        /// to use instead of a synthetic stream.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write an agent checkpoint per seed into `--out`.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Run every cell of an experiment grid.
    Grid {
        /// Grid definition (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for cells.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[command(flatten)]
        agent: AgentFlags,
    },
    /// Paired t-tests between two report sets (directories or report files).
    Compare {
        a: PathBuf,
        b: PathBuf,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum GateFlag {
    On,
    Off,
    /// Group detected unknowns by ground truth (upper bound).
    Labels,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PartitionFlag {
    Fp,
    Sp,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DetectorFlag {
    Softmax,
    Energy,
    Evm,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum LearnerFlag {
    Oncm,
    Onno,
    Ogmm,
    Ocbcl,
    Oscail,
    Mevm,
    Fevm,
}

#[derive(Args, Debug, Clone, Default)]
struct AgentFlags {
    #[arg(long, value_enum)]
    partition_mode: Option<PartitionFlag>,
    #[arg(long, value_enum)]
    gate: Option<GateFlag>,
    #[arg(long, value_enum)]
    detector: Option<DetectorFlag>,
    #[arg(long, value_enum)]
    learner: Option<LearnerFlag>,
    /// Force unknown outside the pretraining bounding box widened by this factor.
    #[arg(long, value_name = "SLACK")]
    clamp: Option<f64>,
}

impl AgentFlags {
    fn apply(&self, agent: &mut AgentConfig) {
        if let Some(p) = self.partition_mode {
            agent.manager.partition_mode = match p {
                PartitionFlag::Fp => PartitionMode::Fp,
                PartitionFlag::Sp => PartitionMode::Sp,
            };
        }
        match self.gate {
            Some(GateFlag::On) => agent.manager.gate_enabled = true,
            Some(GateFlag::Off) => agent.manager.gate_enabled = false,
            Some(GateFlag::Labels) => agent.mode = Mode::WithLabel,
            None => {}
        }
        if let Some(d) = self.detector {
            let kind = match d {
                DetectorFlag::Softmax => DetectorKind::Softmax,
                DetectorFlag::Energy => DetectorKind::Energy,
                DetectorFlag::Evm => DetectorKind::EvmScore,
            };
            agent.detector = DetectorConfig { kind, ..agent.detector.clone() };
        }
        if let Some(slack) = self.clamp {
            agent.clamp_slack = Some(slack);
        }
        if let Some(l) = self.learner {
            agent.learner = match l {
                LearnerFlag::Oncm => LearnerChoice::Oncm,
                LearnerFlag::Onno => LearnerChoice::Onno,
                LearnerFlag::Ogmm => LearnerChoice::Ogmm,
                LearnerFlag::Ocbcl => LearnerChoice::Ocbcl,
                LearnerFlag::Oscail => LearnerChoice::Oscail,
                LearnerFlag::Mevm => LearnerChoice::Mevm,
                LearnerFlag::Fevm => LearnerChoice::Fevm,
            };
        }
    }
}

pub(crate) fn read_json<V: serde::de::DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(common: &Common, flags: Option<&AgentFlags>) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(f) = flags {
        f.apply(&mut config.agent);
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().context("--out <dir> is required")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn synth(common: &Common) -> Result<()> {
    let config = load_config(common, None)?;
    let dir = out_dir(common)?;
    let seed = config.run_seeds()[0];
    let stream = StreamConfig { seed, ..config.stream.clone() };
    let data = synthesize_stream::<f32>(&stream, &config.geometry)?;
    write_features(&data.pretrain, &dir.join("pretrain.owlf"))?;
    write_features(&data.validation, &dir.join("validation.owlf"))?;
    let mut all = data.batches[0].clone();
    for b in &data.batches[1..] {
        for ((v, l), id) in b.vectors.iter().zip(&b.labels).zip(&b.source_ids) {
            all.push(v.clone(), *l, id.clone());
        }
    }
    write_features(&all, &dir.join("stream.owlf"))?;
    log::info!("wrote {} stream items for seed {seed} to {}", all.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct Calibration {
    method: String,
    seed: u64,
    detector: Option<DetectorConfig>,
    gate: Option<QualityGate>,
}

fn calibrate(common: &Common, flags: &AgentFlags) -> Result<()> {
    let config = load_config(common, Some(flags))?;
    let seed = config.run_seeds()[0];
    let stream = StreamConfig { seed, ..config.stream.clone() };
    let data = synthesize_stream::<f64>(&stream, &config.geometry)?;
    let agent = Agent::pretrain(AgentConfig { seed, ..config.agent.clone() }, &data.pretrain, &data.validation)?;
    let detector = match &agent.core {
        owl_core::pipeline::AgentCore::Lc { detector, .. } => Some(detector.clone()),
        owl_core::pipeline::AgentCore::Fevm { .. } => None,
    };
    let out = Calibration { method: config.method(), seed, detector, gate: agent.gate.clone() };
    match &common.out {
        Some(_) => write_json(&out_dir(common)?.join("calibration.json"), &out),
        None => {
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
    }
}

fn load_data_dir(dir: &Path, config: &ExperimentConfig, seed: u64) -> Result<StreamData<f64>> {
    let pretrain = load_features::<f64, _>(&[dir.join("pretrain.owlf")])?;
    let validation = load_features::<f64, _>(&[dir.join("validation.owlf")])?;
    let stream = load_features::<f64, _>(&[dir.join("stream.owlf")])?;
    Ok(StreamData::from_sets(pretrain, validation, stream, config.stream.batch_size, seed)?)
}

fn run(common: &Common, flags: &AgentFlags, data: Option<&Path>, checkpoint: bool) -> Result<()> {
    let config = load_config(common, Some(flags))?;
    if checkpoint && common.out.is_none() {
        bail!("--checkpoint needs --out <dir>");
    }
    let report = if data.is_some() || checkpoint {
        let mut runs = Vec::new();
        for seed in config.run_seeds() {
            let data = match data {
                Some(dir) => load_data_dir(dir, &config, seed)?,
                None => synthesize_stream(&StreamConfig { seed, ..config.stream.clone() }, &config.geometry)?,
            };
            let mut agent =
                Agent::pretrain(AgentConfig { seed, ..config.agent.clone() }, &data.pretrain, &data.validation)?;
            runs.push(run_stream(&mut agent, &data, seed, config.window)?);
            if checkpoint {
                save_agent(&agent, &out_dir(common)?.join(format!("agent__seed{seed}.owlc")))?;
            }
        }
        ExperimentReport::from_runs(&config, runs)
    } else {
        run_experiment::<f64>(&config)?
    };
    log::info!("{}: OWM {:.4} ± {:.4}", report.method, report.owm_mean, report.owm_std);
    match &common.out {
        Some(_) => write_json(&out_dir(common)?.join("report.json"), &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => synth(&common),
        Command::Calibrate { common, agent } => calibrate(&common, &agent),
        Command::Run { common, agent, data, checkpoint } => run(&common, &agent, data.as_deref(), checkpoint),
        Command::Grid { config, out, parallel, agent } => grid::run_grid(&config, &out, parallel, &agent),
        Command::Compare { a, b } => compare::compare(&a, &b),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OWL_LOG", "warn")).init();
    // clap exits with status 2 and usage text on bad flags
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
