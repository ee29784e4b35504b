use serde::{Deserialize, Serialize};

use crate::error::{check_dim, OwlError, Result};
use crate::evm::{EvmModel, FeatureBank};
use crate::features::FeatureSet;
use crate::learners::{DiscoveredLearner, LearnerKind, LearnerParams};
use crate::linear::{LinearHead, TrainOptions};
use crate::manager::{
    manage_step, manage_step_labeled, ManageOutcome, ManagerConfig, QualityGate, ResidualBuffer, ResidualEntry,
    SvmOptions,
};
use crate::ood::{calibrate_threshold, knownness_score, DetectorConfig, DetectorKind, FeatureBounds, RangeCheck};
use crate::scalar::{argmax, softmax, Scalar};
use crate::types::{ClassId, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Detect, discover, manage and learn without labels.
    #[default]
    #[serde(alias = "towl_lc", alias = "towl_fevm")]
    Towl,
    /// Never learns; the control case.
    NoAdaption,
    /// Detected unknowns are grouped by their true label; the upper bound.
    WithLabel,
}

/// Discovered-class learner next to a linear known head, or a single EVM
/// for known and discovered classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    Oncm,
    Onno,
    Ogmm,
    Ocbcl,
    Oscail,
    Mevm,
    Fevm,
}

impl LearnerChoice {
    pub const ALL: [LearnerChoice; 7] = [
        LearnerChoice::Oncm,
        LearnerChoice::Onno,
        LearnerChoice::Ogmm,
        LearnerChoice::Ocbcl,
        LearnerChoice::Oscail,
        LearnerChoice::Mevm,
        LearnerChoice::Fevm,
    ];

    pub fn discovered_kind(&self) -> Option<LearnerKind> {
        Some(match self {
            LearnerChoice::Oncm => LearnerKind::Oncm,
            LearnerChoice::Onno => LearnerKind::Onno,
            LearnerChoice::Ogmm => LearnerKind::Ogmm,
            LearnerChoice::Ocbcl => LearnerKind::Ocbcl,
            LearnerChoice::Oscail => LearnerKind::Oscail,
            LearnerChoice::Mevm => LearnerKind::Mevm,
            LearnerChoice::Fevm => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.discovered_kind() {
            Some(k) => k.name(),
            None => "FMEVM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub mode: Mode,
    pub learner: LearnerChoice,
    /// Ignored by the FEVM agent, which gates on EVM probabilities directly.
    pub detector: DetectorConfig,
    pub manager: ManagerConfig,
    pub params: LearnerParams,
    pub head: TrainOptions,
    pub svm: SvmOptions,
    /// Bounding-box slack; `None` disables the feature-range clamp.
    pub clamp_slack: Option<f64>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Towl,
            learner: LearnerChoice::Fevm,
            detector: DetectorConfig::default(),
            manager: ManagerConfig::default(),
            params: LearnerParams::default(),
            head: TrainOptions::default(),
            svm: SvmOptions::default(),
            clamp_slack: None,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.manager.validate()?;
        self.params.evm.validate()?;
        if let Some(s) = self.clamp_slack {
            if !(s >= 1.0) {
                return Err(OwlError::InvalidConfig("clamp slack must be ≥ 1".into()));
            }
        }
        Ok(())
    }

    /// Gate calibration only matters when unlabeled management runs with the gate on.
    fn needs_gate(&self) -> bool {
        self.mode == Mode::Towl && self.manager.gate_enabled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome<T> {
    pub prediction: Prediction,
    /// `[unknown, known classes..., discovered classes...]`
    pub probabilities: Vec<T>,
    pub inserted: bool,
    pub learned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgentCore<T> {
    Lc {
        head: LinearHead<T>,
        detector: DetectorConfig,
        /// Known-class EVM feeding the EVM-score detector.
        detector_evm: Option<EvmModel<T>>,
        learner: DiscoveredLearner<T>,
    },
    Fevm {
        model: EvmModel<T>,
        bank: FeatureBank<T>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent<T> {
    pub config: AgentConfig,
    pub dim: usize,
    pub known_ids: Vec<ClassId>,
    pub core: AgentCore<T>,
    pub gate: Option<QualityGate>,
    pub bounds: Option<FeatureBounds<T>>,
    pub buffer: ResidualBuffer<T>,
    pub next_class_id: ClassId,
}

fn known_groups<T: Scalar>(set: &FeatureSet<T>) -> Result<Vec<(ClassId, Vec<Vec<T>>)>> {
    set.by_label()
        .into_iter()
        .map(|(label, rows)| {
            usize::try_from(label)
                .map(|id| (id, rows))
                .map_err(|_| OwlError::InvalidInput(format!("pretraining label {label} is not a class id")))
        })
        .collect()
}

impl<T: Scalar> Agent<T> {
    /// Trains the known-class model on `pretrain` and calibrates the detector
    /// and quality gate on the labeled `validation` set.
    pub fn pretrain(config: AgentConfig, pretrain: &FeatureSet<T>, validation: &FeatureSet<T>) -> Result<Self> {
        config.validate()?;
        if pretrain.is_empty() {
            return Err(OwlError::InsufficientData("empty pretraining set".into()));
        }
        check_dim(pretrain.dim, validation.dim)?;
        let dim = pretrain.dim;
        let groups = known_groups(pretrain)?;
        let known_ids: Vec<ClassId> = groups.iter().map(|(id, _)| *id).collect();
        let refs: Vec<(ClassId, &[Vec<T>])> = groups.iter().map(|(id, r)| (*id, r.as_slice())).collect();
        let known_validation: Vec<&Vec<T>> = validation
            .vectors
            .iter()
            .zip(&validation.labels)
            .filter(|(_, &l)| l >= 0 && known_ids.contains(&(l as usize)))
            .map(|(v, _)| v)
            .collect();

        let core = match config.learner.discovered_kind() {
            Some(kind) => {
                let head = LinearHead::fit(dim, &refs, &config.head)?;
                let detector_evm = match config.detector.kind {
                    DetectorKind::EvmScore => Some(EvmModel::train(dim, &refs, config.params.evm.clone())?),
                    _ => None,
                };
                let mut scores = Vec::with_capacity(known_validation.len());
                for v in &known_validation {
                    let input = match &detector_evm {
                        Some(m) => m.class_probabilities(v)?,
                        None => head.logits(v)?,
                    };
                    scores.push(knownness_score(&config.detector, &input)?);
                }
                let detector = calibrate_threshold(&config.detector, &scores)?;
                log::debug!("detector {:?} threshold {:?}", detector.kind, detector.threshold);
                let learner = DiscoveredLearner::new(kind, dim, &config.params, config.seed)?;
                AgentCore::Lc { head, detector, detector_evm, learner }
            }
            None => {
                let model = EvmModel::train(dim, &refs, config.params.evm.clone())?;
                let mut bank = FeatureBank::new(config.params.evm.bank_cap);
                for (id, rows) in &groups {
                    bank.add(*id, rows);
                }
                AgentCore::Fevm { model, bank }
            }
        };

        let gate = if config.needs_gate() {
            let gate = QualityGate::calibrate(&validation.vectors, &validation.labels, &config.manager, &config.svm)?;
            log::debug!("quality gate {gate:?}");
            Some(gate)
        } else {
            None
        };
        let bounds = match config.clamp_slack {
            Some(slack) => Some(FeatureBounds::learn(&pretrain.vectors, slack)?),
            None => None,
        };
        let next_class_id = known_ids.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            config,
            dim,
            known_ids,
            core,
            gate,
            bounds,
            buffer: ResidualBuffer::new(),
            next_class_id,
        })
    }

    pub fn discovered_ids(&self) -> Vec<ClassId> {
        match &self.core {
            AgentCore::Lc { learner, .. } => learner.class_ids(),
            AgentCore::Fevm { model, .. } => model
                .class_ids()
                .into_iter()
                .filter(|id| !self.known_ids.contains(id))
                .collect(),
        }
    }

    fn out_of_range(&self, f: &[T]) -> bool {
        self.bounds.as_ref().is_some_and(|b| b.check(f) == RangeCheck::OutOfRange)
    }

    /// Classifies one item without touching the buffer or the models.
    /// Returns the outcome with `learned = 0`.
    pub fn classify(&self, f: &[T]) -> Result<StepOutcome<T>> {
        check_dim(self.dim, f.len())?;
        let forced_unknown = self.out_of_range(f);
        match &self.core {
            AgentCore::Lc { head, detector, detector_evm, learner } => {
                let logits = head.logits(f)?;
                let known = !forced_unknown && {
                    let input = match detector_evm {
                        Some(m) => m.class_probabilities(f)?,
                        None => logits.clone(),
                    };
                    detector.is_known(knownness_score(detector, &input)?)?
                };
                let discovered = learner.class_ids();
                let mut p = vec![T::zero(); 1 + self.known_ids.len() + discovered.len()];
                if known {
                    let q = softmax(&logits);
                    p[1..=q.len()].copy_from_slice(&q);
                    let best = argmax(&q).expect("known head has classes");
                    return Ok(StepOutcome {
                        prediction: Prediction::Known(head.class_ids[best]),
                        probabilities: p,
                        inserted: false,
                        learned: 0,
                    });
                }
                let a = learner.predict(f)?;
                p[0] = a.p_unknown;
                let offset = 1 + self.known_ids.len();
                p[offset..].copy_from_slice(&a.p_classes);
                let inserted = a.p_unknown > a.max_class();
                let prediction = match (inserted, a.argmax_class()) {
                    (false, Some(i)) => Prediction::Discovered(discovered[i]),
                    _ => Prediction::Unknown,
                };
                Ok(StepOutcome { prediction, probabilities: p, inserted, learned: 0 })
            }
            AgentCore::Fevm { model, .. } => {
                let ids = model.class_ids();
                if forced_unknown {
                    let mut p = vec![T::zero(); 1 + ids.len()];
                    p[0] = T::one();
                    return Ok(StepOutcome { prediction: Prediction::Unknown, probabilities: p, inserted: true, learned: 0 });
                }
                let a = model.predict(f)?;
                let inserted = a.p_unknown > a.max_class();
                let prediction = match (inserted, a.argmax_class()) {
                    (false, Some(i)) if self.known_ids.contains(&ids[i]) => Prediction::Known(ids[i]),
                    (false, Some(i)) => Prediction::Discovered(ids[i]),
                    _ => Prediction::Unknown,
                };
                Ok(StepOutcome { prediction, probabilities: a.to_vec(), inserted, learned: 0 })
            }
        }
    }

    /// Classifies one stream item, buffers it when nominated unknown, runs
    /// novelty management and learns any admitted clusters. `label` is only
    /// read in the labeled upper-bound mode.
    pub fn step(&mut self, f: &[T], stream_index: usize, label: Option<i64>) -> Result<StepOutcome<T>> {
        let mut outcome = self.classify(f)?;
        if self.config.mode == Mode::NoAdaption {
            return Ok(outcome);
        }
        if outcome.inserted {
            let label = match self.config.mode {
                Mode::WithLabel => Some(label.ok_or_else(|| {
                    OwlError::InvalidInput("labeled mode needs ground truth for every item".into())
                })?),
                _ => None,
            };
            self.buffer.push(ResidualEntry { feature: f.to_vec(), stream_index, label });
        }
        let managed = match self.config.mode {
            Mode::WithLabel => manage_step_labeled(&mut self.buffer, &self.config.manager)?,
            _ => manage_step(&mut self.buffer, &self.config.manager, self.gate.as_ref())?,
        };
        outcome.learned = self.learn(managed)?;
        Ok(outcome)
    }

    fn learn(&mut self, managed: ManageOutcome<T>) -> Result<usize> {
        if managed.admitted.is_empty() {
            return Ok(0);
        }
        let clusters: Vec<(ClassId, Vec<Vec<T>>)> = managed
            .admitted
            .into_iter()
            .map(|entries| {
                let id = self.next_class_id;
                self.next_class_id += 1;
                (id, entries.into_iter().map(|e| e.feature).collect())
            })
            .collect();
        log::debug!(
            "learning {} clusters of sizes {:?}",
            clusters.len(),
            clusters.iter().map(|(_, c)| c.len()).collect::<Vec<_>>()
        );
        match &mut self.core {
            AgentCore::Lc { learner, .. } => learner.learn(&clusters)?,
            AgentCore::Fevm { model, bank } => model.increment(bank, &clusters)?,
        }
        Ok(clusters.len())
    }
}
