use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::features::{synthesize_stream, BlobGeometry, StreamConfig, StreamData};
use crate::manager::ManagerConfig;
use crate::metrics::{owm_with, OwmInputs, OwmSlots};
use crate::scalar::Scalar;
use crate::types::{GroundTruth, Prediction};

use super::agent::{Agent, AgentConfig, LearnerChoice, Mode};

/// Batches scored at the end of every run.
pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub stream: StreamConfig,
    pub geometry: BlobGeometry,
    pub agent: AgentConfig,
    /// Run seeds; empty means `stream.seed .. stream.seed + stream.run_count`.
    pub seeds: Vec<u64>,
    pub window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            stream: StreamConfig::default(),
            geometry: BlobGeometry::default(),
            agent: AgentConfig::default(),
            seeds: Vec::new(),
            window: DEFAULT_WINDOW,
        }
    }
}

impl ExperimentConfig {
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.stream.run_count as u64).map(|i| self.stream.seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.agent.validate()?;
        if self.window == 0 {
            return Err(OwlError::InvalidConfig("window must be positive".into()));
        }
        if self.run_seeds().is_empty() {
            return Err(OwlError::InvalidConfig("no seeds to run".into()));
        }
        Ok(())
    }

    pub fn method(&self) -> String {
        self.name.clone().unwrap_or_else(|| method_name(&self.agent))
    }
}

/// Row label in the style of the result tables, e.g. `SM OOD + LC + ONCM + Finch SP`.
pub fn method_name(config: &AgentConfig) -> String {
    let base = match config.learner {
        LearnerChoice::Fevm => "TOWL-FMEVM".to_string(),
        other => format!("{} OOD + LC + {}", config.detector.kind.short_name(), other.name()),
    };
    match config.mode {
        Mode::NoAdaption => format!("{base} (no adaption)"),
        Mode::WithLabel => format!("{base} (with label)"),
        Mode::Towl => {
            let m: &ManagerConfig = &config.manager;
            let gate = if m.gate_enabled { "" } else { ", no gate" };
            format!("{base} + Finch {}{gate}", m.partition_mode.short_name())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch: usize,
    pub n_kk: usize,
    pub n_ku: usize,
    pub n_uk: usize,
    pub n_uu: usize,
    pub acc_kk: f64,
    pub b3_uu: f64,
    pub owm: f64,
    pub discovered_classes: usize,
    pub buffer_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub batches: usize,
    pub n_kk: usize,
    pub n_ku: usize,
    pub n_uk: usize,
    pub n_uu: usize,
    pub acc_kk: f64,
    pub b3_uu: f64,
    pub owm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub batches: Vec<BatchReport>,
    pub window: WindowReport,
    pub inserted: usize,
    pub learned_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub unknown_classes: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
    /// Last-window OWM of each run, in seed order.
    pub owm: Vec<f64>,
    pub owm_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub owm_std: f64,
}

impl ExperimentReport {
    /// Aggregates finished runs; `runs` should follow the config's seed order.
    pub fn from_runs(config: &ExperimentConfig, runs: Vec<RunReport>) -> Self {
        let owm: Vec<f64> = runs.iter().map(|r| r.window.owm).collect();
        let (owm_mean, owm_std) = mean_std(&owm);
        Self {
            method: config.method(),
            unknown_classes: config.stream.unknown_class_count,
            config: config.clone(),
            runs,
            owm,
            owm_mean,
            owm_std,
        }
    }
}

fn score(truth: &[GroundTruth], predictions: &[Prediction]) -> Result<(OwmInputs, f64, f64, f64)> {
    let inputs = OwmInputs::from_predictions(truth, predictions)?;
    let s = owm_with::<f64>(&inputs, OwmSlots::default())?;
    Ok((inputs, s.known_score, s.unknown_score, s.owm))
}

/// Steps a pretrained agent through every batch of `data` and scores it.
pub fn run_stream<T: Scalar>(agent: &mut Agent<T>, data: &StreamData<T>, seed: u64, window: usize) -> Result<RunReport> {
    let mut truth_all = Vec::with_capacity(data.stream_len());
    let mut pred_all = Vec::with_capacity(data.stream_len());
    let mut batches = Vec::with_capacity(data.batches.len());
    let mut inserted = 0;
    let mut learned_classes = 0;
    let mut stream_index = 0;
    for (b, batch) in data.batches.iter().enumerate() {
        let start = truth_all.len();
        for (f, &label) in batch.vectors.iter().zip(&batch.labels) {
            let out = agent.step(f, stream_index, Some(label))?;
            stream_index += 1;
            inserted += usize::from(out.inserted);
            learned_classes += out.learned;
            truth_all.push(GroundTruth { label, known: data.is_known(label) });
            pred_all.push(out.prediction);
        }
        let (i, acc, b3, owm) = score(&truth_all[start..], &pred_all[start..])?;
        log::debug!("seed {seed} batch {b}: owm {owm:.4} buffer {}", agent.buffer.len());
        batches.push(BatchReport {
            batch: b,
            n_kk: i.n_kk,
            n_ku: i.n_ku,
            n_uk: i.n_uk,
            n_uu: i.n_uu,
            acc_kk: acc,
            b3_uu: b3,
            owm,
            discovered_classes: agent.discovered_ids().len(),
            buffer_len: agent.buffer.len(),
        });
    }
    let used = window.min(data.batches.len());
    let from: usize = data.batches[..data.batches.len() - used].iter().map(|b| b.len()).sum();
    let (i, acc, b3, owm) = score(&truth_all[from..], &pred_all[from..])?;
    Ok(RunReport {
        seed,
        batches,
        window: WindowReport {
            batches: used,
            n_kk: i.n_kk,
            n_ku: i.n_ku,
            n_uk: i.n_uk,
            n_uu: i.n_uu,
            acc_kk: acc,
            b3_uu: b3,
            owm,
        },
        inserted,
        learned_classes,
    })
}

/// Synthesizes the stream for `seed`, pretrains and runs one agent.
pub fn run_seed<T: Scalar>(config: &ExperimentConfig, seed: u64) -> Result<RunReport> {
    let stream = StreamConfig { seed, ..config.stream.clone() };
    let data = synthesize_stream::<T>(&stream, &config.geometry)?;
    let agent_config = AgentConfig { seed, ..config.agent.clone() };
    let mut agent = Agent::pretrain(agent_config, &data.pretrain, &data.validation)?;
    run_stream(&mut agent, &data, seed, config.window)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every seed (in parallel) and aggregates the last-window OWM.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let runs = config
        .run_seeds()
        .par_iter()
        .map(|&seed| run_seed::<T>(config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::from_runs(config, runs))
}
