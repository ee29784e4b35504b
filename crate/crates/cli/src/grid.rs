use std::fs;
use std::path::Path;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use owl_core::manager::ManagerConfig;
use owl_core::ood::{DetectorConfig, DetectorKind};
use owl_core::pipeline::{run_experiment, ExperimentConfig, ExperimentReport, LearnerChoice, Mode};

use crate::{write_json, AgentFlags};

/// A named manager/mode combination, e.g. gated TOWL or the labeled upper bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub manager: ManagerConfig,
}

/// Cross product of detectors × learners × variants × unknown-class counts × seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub detectors: Vec<DetectorKind>,
    pub learners: Vec<LearnerChoice>,
    pub variants: Vec<Variant>,
    pub unknown_classes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            base: ExperimentConfig::default(),
            detectors: vec![DetectorKind::Softmax],
            learners: vec![LearnerChoice::Fevm],
            variants: vec![Variant { name: "towl".into(), mode: Mode::Towl, manager: ManagerConfig::default() }],
            unknown_classes: vec![5],
            seeds: (0..5).collect(),
        }
    }
}

pub struct Cell {
    pub name: String,
    pub config: ExperimentConfig,
}

fn learner_tag(l: LearnerChoice) -> String {
    serde_json::to_value(l).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

impl GridSpec {
    pub fn cells(&self, flags: &AgentFlags) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        let base = &self.base.stream;
        let unknown_pool = base.unknown_class_count * base.images_per_unknown_class;
        for &u in &self.unknown_classes {
            if u == 0 || unknown_pool % u != 0 {
                bail!("{u} unknown classes cannot split an unknown pool of {unknown_pool} items evenly");
            }
            for &detector in &self.detectors {
                for &learner in &self.learners {
                    for variant in &self.variants {
                        let mut config = self.base.clone();
                        config.stream.unknown_class_count = u;
                        config.stream.images_per_unknown_class = unknown_pool / u;
                        config.seeds = self.seeds.clone();
                        config.agent.detector = DetectorConfig { kind: detector, ..config.agent.detector.clone() };
                        config.agent.learner = learner;
                        config.agent.mode = variant.mode;
                        config.agent.manager = variant.manager.clone();
                        flags.apply(&mut config.agent);
                        config.name = None;
                        let name = format!("{}-{}-{}-u{u}", detector.short_name().to_lowercase(), learner_tag(learner), variant.name);
                        config.validate().with_context(|| format!("cell {name}"))?;
                        cells.push(Cell { name, config });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    cell: &'a str,
    method: &'a str,
    unknown_classes: usize,
    owm_mean: f64,
    owm_std: f64,
}

pub fn run_grid(spec_path: &Path, out: &Path, parallel: usize, flags: &AgentFlags) -> Result<()> {
    let spec: GridSpec = crate::read_json(spec_path)?;
    if spec.seeds.is_empty() {
        bail!("grid has no seeds");
    }
    let cells = spec.cells(flags)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel.max(1)).build()?;
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|c| spec.seeds.iter().map(move |&s| (c, s))).collect();
    let failures = Mutex::new(Vec::new());
    let results: Vec<Option<ExperimentReport>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let config = ExperimentConfig { seeds: vec![seed], ..cell.config.clone() };
                let outcome = run_experiment::<f64>(&config).map_err(anyhow::Error::from).and_then(|report| {
                    write_json(&out.join(format!("{}__seed{seed}.json", cell.name)), &report)?;
                    Ok(report)
                });
                match outcome {
                    Ok(r) => Some(r),
                    Err(e) => {
                        failures.lock().unwrap().push(format!("{} seed {seed}: {e:#}", cell.name));
                        None
                    }
                }
            })
            .collect()
    });

    let mut csv = csv::Writer::from_path(out.join("aggregate.csv"))?;
    for (c, cell) in cells.iter().enumerate() {
        let runs: Vec<_> = results[c * spec.seeds.len()..(c + 1) * spec.seeds.len()]
            .iter()
            .flatten()
            .flat_map(|r| r.runs.iter().cloned())
            .collect();
        if runs.len() != spec.seeds.len() {
            continue;
        }
        let report = ExperimentReport::from_runs(&cell.config, runs);
        csv.serialize(AggregateRow {
            cell: &cell.name,
            method: &report.method,
            unknown_classes: report.unknown_classes,
            owm_mean: report.owm_mean,
            owm_std: report.owm_std,
        })?;
    }
    csv.flush()?;

    let failures = failures.into_inner().unwrap();
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        bail!("{} of {} grid jobs failed", failures.len(), jobs.len());
    }
    Ok(())
}
