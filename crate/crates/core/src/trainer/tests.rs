use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{evaluate, Paths};
use super::*;
use crate::embedding::{gen_synthetic_stream, SyntheticParams, SyntheticStream, TaskStatus};
use crate::prototypes::ReplayMode;

fn stream(tasks: usize, classes: usize, seed: u64) -> SyntheticStream {
    gen_synthetic_stream(&SyntheticParams {
        seed,
        tasks,
        classes_per_task: classes,
        dim: 8,
        train_per_class: 12,
        test_per_class: 6,
        separation: 6.0,
        text_noise: 0.5,
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        lambda1: 2,
        lambda2: 2,
        logit_scale: 5.0,
        ..TrainConfig::default()
    }
}

fn model(s: &SyntheticStream, cfg: TrainConfig) -> Model {
    Model::new(s.registry.clone(), &s.text, None, cfg).unwrap()
}

fn batch_of(s: &SyntheticStream, task: usize, n: usize) -> Vec<(Vec<f64>, u32)> {
    s.train[task]
        .records()
        .iter()
        .step_by(3)
        .take(n)
        .map(|r| (r.vector_f64(), r.class_id))
        .collect()
}

fn task_id(s: &SyntheticStream, k: usize) -> u32 {
    s.registry.tasks()[k].task_id
}

/// Model with `learned` tasks trained and the next one current.
fn mid_stream(s: &SyntheticStream, cfg: TrainConfig, learned: usize) -> Model {
    let mut m = model(s, cfg);
    for k in 0..learned {
        train_task(&mut m, task_id(s, k), &s.train[k]).unwrap();
    }
    begin_task(&mut m, task_id(s, learned), &s.train[learned]).unwrap();
    m
}

fn cross_entropy(z: &[f64], target: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - z[target]
}

fn target_of(m: &Model, class_id: u32) -> usize {
    m.seen_classes().unwrap().iter().position(|&c| c == class_id).unwrap()
}

#[test]
fn combined_logits_add_text_and_adapter_logits() {
    let s = stream(2, 3, 1);
    let m = mid_stream(&s, small_config(), 1);
    let x = s.test.records()[0].vector_f64();
    let z = combined_logits(&m.adapter, &m.text, &x).unwrap();
    let t = m.text.seen_logits(&x).unwrap();
    let l = m.adapter.lada_logits(&x).unwrap();
    assert_eq!(z.len(), 6);
    for k in 0..6 {
        assert_eq!(z[k], t[k] + l[k]);
    }
}

#[test]
fn single_class_loss_is_zero() {
    let s = stream(1, 1, 2);
    let m = mid_stream(&s, small_config(), 0);
    assert_eq!(loss_current(&m, &batch_of(&s, 0, 4)).unwrap(), 0.0);
}

#[test]
fn tied_logits_give_ln_two() {
    let s = stream(1, 2, 3);
    let mut m = mid_stream(&s, small_config(), 0);
    let v = m.text.entries()[0].vector.clone();
    m.text.entries_mut()[1].vector = v;
    let w = m.adapter.blocks()[0].weights().to_vec();
    let rows = m.adapter.blocks()[0].num_rows();
    let block = &mut m.adapter.blocks_mut()[1];
    assert_eq!(block.num_rows(), rows);
    block.weights_mut().copy_from_slice(&w);
    let loss = loss_current(&m, &batch_of(&s, 0, 5)).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "{loss}");
}

#[test]
fn current_loss_matches_cross_entropy_oracle() {
    let s = stream(3, 2, 4);
    let m = mid_stream(&s, small_config(), 1);
    let batch = batch_of(&s, 1, 7);
    let oracle: f64 = batch
        .iter()
        .map(|(x, c)| cross_entropy(&combined_logits(&m.adapter, &m.text, x).unwrap(), target_of(&m, *c)))
        .sum::<f64>()
        / batch.len() as f64;
    let got = loss_current(&m, &batch).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn sum_mode_adds_the_two_head_losses() {
    let s = stream(3, 2, 5);
    let cfg = TrainConfig {
        loss_mode: LossMode::SumLosses,
        ..small_config()
    };
    let m = mid_stream(&s, cfg, 1);
    let batch = batch_of(&s, 1, 6);
    let oracle: f64 = batch
        .iter()
        .map(|(x, c)| {
            let t = target_of(&m, *c);
            cross_entropy(&m.text.seen_logits(x).unwrap(), t) + cross_entropy(&m.adapter.lada_logits(x).unwrap(), t)
        })
        .sum::<f64>()
        / batch.len() as f64;
    let got = loss_current(&m, &batch).unwrap();
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn with_one_path_off_joint_and_sum_differ_by_the_uniform_term() {
    let s = stream(2, 3, 6);
    let joint = mid_stream(&s, small_config(), 1);
    let mut sum = joint.clone();
    sum.config.loss_mode = LossMode::SumLosses;
    let batch = batch_of(&s, 1, 6);
    let lada_only = Paths {
        text: false,
        lada: true,
    };
    let lj = evaluate(&joint, &batch, &ReplayDraw::none(), false, lada_only).unwrap().0;
    let ls = evaluate(&sum, &batch, &ReplayDraw::none(), false, lada_only).unwrap().0;
    // The text head sees all-zero logits, so it contributes ln M per sample.
    let uniform = (joint.seen_classes().unwrap().len() as f64).ln();
    assert!((ls.current_task_loss - lj.current_task_loss - uniform).abs() < 1e-12);
}

#[test]
fn replay_with_a_single_class_is_zero() {
    let s = stream(1, 1, 7);
    let mut m = model(&s, small_config());
    train_task(&mut m, task_id(&s, 0), &s.train[0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(loss_replay(&m, &mut rng).unwrap(), 0.0);
}

#[test]
fn replay_loss_matches_weighted_oracle_in_both_modes() {
    let s = stream(3, 2, 8);
    for mode in [ReplayMode::Augmented, ReplayMode::Plain] {
        let cfg = TrainConfig {
            replay_mode: mode,
            ..small_config()
        };
        let m = mid_stream(&s, cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draw = ReplayDraw::draw(&m.prototypes, &mut rng, mode);
        let classes = m.prototypes.classes().len() as f64;
        assert_eq!(classes, 4.0);
        let oracle: f64 = draw
            .augmented
            .iter()
            .map(|e| {
                let z = combined_logits(&m.adapter, &m.text, &e.vector).unwrap();
                e.weight * cross_entropy(&z, target_of(&m, e.class_id))
            })
            .sum::<f64>()
            / classes;
        let got = loss_value(&m, &[], &draw).unwrap().replay_loss;
        assert!((got - oracle).abs() < 1e-12, "{mode:?}: {got} vs {oracle}");
        let weights: f64 = draw.augmented.iter().map(|e| e.weight).sum();
        assert!((weights - classes).abs() < 1e-9);
    }
}

#[test]
fn gradients_match_finite_differences_in_both_loss_modes() {
    let s = stream(3, 2, 10);
    for loss_mode in [LossMode::JointLogits, LossMode::SumLosses] {
        let cfg = TrainConfig {
            loss_mode,
            ..small_config()
        };
        let m = mid_stream(&s, cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draw = ReplayDraw::draw(&m.prototypes, &mut rng, ReplayMode::Augmented);
        let report = gradcheck::check_gradients(&m, &batch_of(&s, 2, 8), &draw, 1e-5).unwrap();
        assert!(report.checked > 0);
        assert!(report.max_rel_error < 1e-5, "{loss_mode:?}: {report:?}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let s = stream(2, 2, 12);
    let cfg = TrainConfig {
        lr: 0.0,
        ..small_config()
    };
    let mut m = mid_stream(&s, cfg, 1);
    let before = m.clone();
    let mut opt = OptimizerState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    grad_step(&mut m, &batch_of(&s, 1, 8), &mut opt, &mut rng).unwrap();
    assert_eq!(m.adapter, before.adapter);
    assert_eq!(m.text, before.text);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn learned_tasks_stay_bit_identical() {
    let s = stream(3, 2, 13);
    let mut m = model(&s, small_config());
    train_task(&mut m, task_id(&s, 0), &s.train[0]).unwrap();
    let blocks = m.adapter.blocks().to_vec();
    let text: Vec<_> = m.text.entries().iter().filter(|e| e.frozen).cloned().collect();
    for k in 1..3 {
        train_task(&mut m, task_id(&s, k), &s.train[k]).unwrap();
        for b in &blocks {
            assert_eq!(m.adapter.block(b.class_id).unwrap(), b);
        }
        for e in &text {
            assert_eq!(m.text.entry(e.class_id).unwrap(), e);
        }
    }
}

#[test]
fn zero_epochs_still_freeze_and_distill() {
    let s = stream(2, 2, 14);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_config()
    };
    let mut m = model(&s, cfg);
    let report = train_task(&mut m, task_id(&s, 0), &s.train[0]).unwrap();
    assert_eq!(report.steps, 0);
    assert!(m.adapter.blocks().iter().all(|b| b.frozen));
    assert_eq!(m.prototypes.classes().len(), 2);
    assert_eq!(m.registry.status(task_id(&s, 0)).unwrap(), TaskStatus::Learned);
    assert!(m.trainable_params().is_empty());
}

#[test]
fn non_finite_loss_is_a_numerical_error() {
    let s = stream(1, 2, 15);
    let mut m = mid_stream(&s, small_config(), 0);
    m.text.entries_mut()[0].vector[0] = f64::NAN;
    let mut opt = OptimizerState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = grad_step(&mut m, &batch_of(&s, 0, 4), &mut opt, &mut rng).unwrap_err();
    assert!(matches!(err, LadaError::Numerical { step: 1, .. }), "{err}");
}

#[test]
fn batch_outside_the_current_task_is_rejected() {
    let s = stream(2, 2, 16);
    let m = mid_stream(&s, small_config(), 1);
    let err = loss_current(&m, &batch_of(&s, 0, 2)).unwrap_err();
    assert!(matches!(err, LadaError::Contract(_)));
}

#[test]
fn training_fits_the_training_set() {
    let s = stream(2, 4, 17);
    let cfg = TrainConfig {
        epochs: 10,
        logit_scale: 100.0,
        lambda1: 4,
        ..TrainConfig::default()
    };
    let mut m = model(&s, cfg);
    for k in 0..2 {
        let report = train_task(&mut m, task_id(&s, k), &s.train[k]).unwrap();
        let first = report.epoch_losses.first().unwrap().total;
        let last = report.epoch_losses.last().unwrap().total;
        assert!(last <= first + 1e-12, "task {k}: {first} -> {last}");
    }
    let seen = m.seen_classes().unwrap();
    let (mut hit, mut n) = (0, 0);
    for set in &s.train {
        for r in set.records() {
            let z = combined_logits(&m.adapter, &m.text, &r.vector_f64()).unwrap();
            hit += usize::from(seen[crate::linalg::argmax(&z).unwrap()] == r.class_id);
            n += 1;
        }
    }
    assert!(hit as f64 >= 0.95 * n as f64, "{hit}/{n}");
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let s = stream(2, 2, 18);
    let run = || {
        let mut m = model(&s, small_config());
        for k in 0..2 {
            train_task(&mut m, task_id(&s, k), &s.train[k]).unwrap();
        }
        m
    };
    let (a, b) = (run(), run());
    assert_eq!(a.adapter, b.adapter);
    assert_eq!(a.text, b.text);
    assert_eq!(a.prototypes, b.prototypes);
}

#[test]
fn checkpoint_round_trip_is_byte_stable() {
    let s = stream(3, 2, 19);
    let mut m = model(&s, small_config());
    train_task(&mut m, task_id(&s, 0), &s.train[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&m, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    for f in ["manifest.json", "tensors.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(loaded.registry, m.registry);
    let mut rounded = m.prototypes.clone();
    for c in rounded.classes_mut() {
        for comp in &mut c.components {
            comp.mean.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
    }
    assert_eq!(loaded.prototypes, rounded);
    assert_eq!(loaded.config, m.config);
}

#[test]
fn truncated_tensors_fail_the_integrity_check() {
    let s = stream(1, 2, 20);
    let mut m = model(&s, small_config());
    train_task(&mut m, task_id(&s, 0), &s.train[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m, dir.path()).unwrap();
    let path = dir.path().join("tensors.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(LadaError::Integrity(_))));
}
