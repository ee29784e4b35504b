use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use owl_core::features::{synthesize_stream, BlobGeometry, StreamConfig, StreamData};
use owl_core::learners::{augment_probabilities, DiscoveredLearner, LearnerKind, LearnerParams};
use owl_core::linear::LinearHead;
use owl_core::manager::{ManagerConfig, ResidualBuffer};
use owl_core::ood::{DetectorConfig, DetectorKind};
use owl_core::pipeline::{
    run_experiment, run_stream, Agent, AgentConfig, AgentCore, ExperimentConfig, LearnerChoice, Mode,
};
use owl_core::Prediction;

fn hand_agent(threshold: f64, learner: DiscoveredLearner<f64>) -> Agent<f64> {
    let mut head = LinearHead::zeros(2, vec![0, 1]);
    head.bias = vec![0.7f64.ln(), 0.3f64.ln()];
    let detector = DetectorConfig { threshold: Some(threshold), ..DetectorConfig::new(DetectorKind::Softmax) };
    let config = AgentConfig {
        learner: LearnerChoice::Oncm,
        manager: ManagerConfig { gate_enabled: false, ..ManagerConfig::default() },
        ..AgentConfig::default()
    };
    Agent {
        config,
        dim: 2,
        known_ids: vec![0, 1],
        core: AgentCore::Lc { head, detector, detector_evm: None, learner },
        gate: None,
        bounds: None,
        buffer: ResidualBuffer::new(),
        next_class_id: 2,
    }
}

fn empty_ncm() -> DiscoveredLearner<f64> {
    DiscoveredLearner::new(LearnerKind::Oncm, 2, &LearnerParams::default(), 0).unwrap()
}

#[test]
fn lc_known_path_places_head_probabilities() {
    let mut agent = hand_agent(0.4, empty_ncm());
    let out = agent.step(&[0.3, -0.2], 0, None).unwrap();
    assert_eq!(out.prediction, Prediction::Known(0));
    assert!(!out.inserted);
    assert_abs_diff_eq!(out.probabilities[0], 0.0);
    assert_abs_diff_eq!(out.probabilities[1], 0.7, epsilon = 1e-12);
    assert_abs_diff_eq!(out.probabilities[2], 0.3, epsilon = 1e-12);
    assert!(agent.buffer.is_empty());
}

#[test]
fn lc_rejected_item_with_fewer_than_three_classes_is_unknown_and_buffered() {
    let mut agent = hand_agent(0.9, empty_ncm());
    let out = agent.step(&[0.3, -0.2], 5, None).unwrap();
    assert_eq!(out.prediction, Prediction::Unknown);
    assert!(out.inserted);
    assert_eq!(out.probabilities, vec![1.0, 0.0, 0.0]);
    assert_eq!(agent.buffer.entries[0].stream_index, 5);
}

#[test]
fn lc_rejected_item_near_a_discovered_class_is_not_buffered() {
    let mut learner = empty_ncm();
    let blob = |x: f64, y: f64| vec![vec![x, y], vec![x + 0.1, y], vec![x, y + 0.1]];
    learner.learn(&[(2, blob(10.0, 0.0)), (3, blob(0.0, 10.0)), (4, blob(-10.0, -10.0))]).unwrap();
    let mut agent = hand_agent(0.9, learner);
    let out = agent.step(&[10.0, 0.0], 0, None).unwrap();
    assert_eq!(out.prediction, Prediction::Discovered(2));
    assert!(!out.inserted);
    // no mass on the known slots
    assert_eq!(&out.probabilities[1..3], &[0.0, 0.0]);
    assert!(out.probabilities[0] < out.probabilities[3]);
    assert_abs_diff_eq!(out.probabilities.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
}

#[test]
fn fevm_insert_rule_examples() {
    let a = augment_probabilities(&[0.1f64, 0.2]).unwrap();
    assert_abs_diff_eq!(a.p_unknown, 0.8 / 1.1, epsilon = 1e-12);
    assert_abs_diff_eq!(a.p_unknown, 0.7273, epsilon = 1e-4);
    assert_abs_diff_eq!(a.p_classes[0], 0.0909, epsilon = 1e-4);
    assert_abs_diff_eq!(a.p_classes[1], 0.1818, epsilon = 1e-4);
    assert!(a.p_unknown > a.max_class());

    let b = augment_probabilities(&[0.6f64, 0.3]).unwrap();
    assert_abs_diff_eq!(b.p_unknown, 0.3077, epsilon = 1e-4);
    assert_abs_diff_eq!(b.p_classes[0], 0.4615, epsilon = 1e-4);
    assert_abs_diff_eq!(b.p_classes[1], 0.2308, epsilon = 1e-4);
    assert!(b.p_unknown < b.max_class());
    assert_eq!(b.argmax_class(), Some(0));

    let c = augment_probabilities(&[1.0f64, 0.2]).unwrap();
    assert_eq!(c.p_unknown, 0.0);
}

fn small_stream(unknown: usize, seed: u64) -> StreamData<f64> {
    let config = StreamConfig {
        known_class_count: 5,
        unknown_class_count: unknown,
        images_per_unknown_class: if unknown == 0 { 0 } else { 120 / unknown },
        images_per_known_class: if unknown == 0 { 48 } else { 24 },
        pretrain_per_class: 30,
        validation_per_class: 40,
        batch_size: 20,
        batch_count: 12,
        run_count: 1,
        seed,
    };
    synthesize_stream(&config, &BlobGeometry { dim: 12, spread: 0.15, ..BlobGeometry::default() }).unwrap()
}

fn small_manager() -> ManagerConfig {
    ManagerConfig { psi: 40, gamma: 1, rho: 8, ..ManagerConfig::default() }
}

#[test]
fn stream_invariants_hold_for_every_agent() {
    let data = small_stream(3, 11);
    for learner in LearnerChoice::ALL {
        for mode in [Mode::Towl, Mode::WithLabel, Mode::NoAdaption] {
            let config = AgentConfig { learner, mode, manager: small_manager(), seed: 11, ..AgentConfig::default() };
            let mut agent = Agent::pretrain(config, &data.pretrain, &data.validation).unwrap();
            let mut inserted = BTreeSet::new();
            let mut discovered = 0;
            let mut index = 0;
            for batch in &data.batches {
                for (f, &label) in batch.vectors.iter().zip(&batch.labels) {
                    let out = agent.step(f, index, Some(label)).unwrap();
                    let total: f64 = out.probabilities.iter().sum();
                    assert!((total - 1.0).abs() < 1e-9, "{learner:?} {mode:?} sum {total}");
                    assert!(out.probabilities.iter().all(|&p| p >= 0.0));
                    // p is produced before this step's learning
                    assert_eq!(out.probabilities.len(), 1 + agent.known_ids.len() + discovered);
                    if out.inserted {
                        assert_eq!(out.prediction, Prediction::Unknown);
                        inserted.insert(index);
                    }
                    if learner != LearnerChoice::Fevm {
                        let k = agent.known_ids.len();
                        let known_mass: f64 = out.probabilities[1..=k].iter().sum();
                        let other_mass: f64 = out.probabilities[k + 1..].iter().sum();
                        assert!(known_mass == 0.0 || other_mass == 0.0, "{learner:?}: mixed known and discovered mass");
                    }
                    for e in &agent.buffer.entries {
                        assert!(inserted.contains(&e.stream_index));
                        assert_eq!(e.label.is_some(), mode == Mode::WithLabel);
                    }
                    let now = agent.discovered_ids().len();
                    assert!(now >= discovered, "{learner:?} class count decreased");
                    discovered = now;
                    index += 1;
                }
            }
            if mode == Mode::NoAdaption {
                assert_eq!(discovered, 0);
                assert!(agent.buffer.is_empty());
            }
        }
    }
}

#[test]
fn labeled_and_unlabeled_modes_see_the_same_stream() {
    let data = small_stream(3, 2);
    let mut totals = Vec::new();
    for mode in [Mode::Towl, Mode::WithLabel] {
        let config = AgentConfig { mode, manager: small_manager(), ..AgentConfig::default() };
        let mut agent = Agent::pretrain(config, &data.pretrain, &data.validation).unwrap();
        let report = run_stream(&mut agent, &data, 2, 5).unwrap();
        totals.push(report.batches.iter().map(|b| b.n_kk + b.n_ku + b.n_uk + b.n_uu).collect::<Vec<_>>());
    }
    assert_eq!(totals[0], totals[1]);
    assert!(totals[0].iter().all(|&n| n == 20));
}

#[test]
fn no_adaption_on_known_only_stream_with_accepting_detector_scores_one() {
    let data = small_stream(0, 5);
    let config = AgentConfig { mode: Mode::NoAdaption, learner: LearnerChoice::Oncm, ..AgentConfig::default() };
    let mut agent = Agent::pretrain(config, &data.pretrain, &data.validation).unwrap();
    if let AgentCore::Lc { detector, .. } = &mut agent.core {
        detector.threshold = Some(0.0);
    }
    let report = run_stream(&mut agent, &data, 5, 10).unwrap();
    assert_eq!(report.window.n_kk, 200);
    assert_eq!(report.window.owm, 1.0);
}

#[test]
fn experiment_reports_are_deterministic_and_carry_every_seed() {
    let config = ExperimentConfig {
        stream: StreamConfig::desk_scale(5),
        seeds: vec![0, 1, 2, 3, 4],
        ..ExperimentConfig::default()
    };
    let a = run_experiment::<f64>(&config).unwrap();
    let b = run_experiment::<f64>(&config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.owm.len(), 5);
    assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    let mean = a.owm.iter().sum::<f64>() / 5.0;
    assert_abs_diff_eq!(a.owm_mean, mean, epsilon = 1e-12);
    assert!(a.owm_std >= 0.0);
}

#[test]
fn f32_agent_runs_the_same_protocol() {
    let config = ExperimentConfig { seeds: vec![3], ..ExperimentConfig::default() };
    let r = run_experiment::<f32>(&config).unwrap();
    assert!(r.owm_mean > 0.5, "{}", r.owm_mean);
}
