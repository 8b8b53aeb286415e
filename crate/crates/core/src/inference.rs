//! Task-agnostic prediction.
//!
//! Stage one takes the argmax of the text logits over seen and unseen classes.
//! An unseen winner is returned as is. Otherwise the seen classes are rescored
//! with `(1 − α)·text + α·lada` and the best of those wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterState;
use crate::embedding::{ClassRegistry, EmbeddingSet};
use crate::error::{LadaError, Result};
use crate::text_head::{TextClassifier, UnseenBank};
use crate::trainer::Model;

pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Weight on the adapter logits when fusing.
    pub alpha: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { alpha: DEFAULT_ALPHA }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LadaError::Parameter(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    SeenFused,
    UnseenDirect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u32,
    pub route: Route,
    /// Classes scored by the deciding stage, aligned with `scores`.
    pub class_ids: Vec<u32>,
    pub scores: Vec<f64>,
}

/// Index of the best score; equal scores go to the lowest class id.
pub fn argmax_by_class(scores: &[f64], class_ids: &[u32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        best = match best {
            Some(b) if s < scores[b] || (s == scores[b] && class_ids[i] > class_ids[b]) => Some(b),
            _ => Some(i),
        };
    }
    best
}

/// Fused seen-class scores `(1 − α)·text + α·lada`.
pub fn fuse(text: &[f64], lada: &[f64], alpha: f64) -> Vec<f64> {
    text.iter().zip(lada).map(|(t, l)| (1.0 - alpha) * t + alpha * l).collect()
}

pub fn predict(
    i: &[f64],
    adapter: &AdapterState,
    text: &TextClassifier,
    bank: &UnseenBank,
    cfg: &InferenceConfig,
) -> Result<Prediction> {
    let seen = text.seen_class_ids();
    if seen.is_empty() && bank.is_empty() {
        return Err(LadaError::Contract("no classes to predict from".into()));
    }
    let stage1 = text.text_logits(Some(bank), i)?;
    let ids: Vec<u32> = seen.iter().chain(bank.class_ids()).copied().collect();
    let top = argmax_by_class(&stage1, &ids).expect("at least one class");
    if top >= seen.len() {
        return Ok(Prediction {
            class_id: ids[top],
            route: Route::UnseenDirect,
            class_ids: ids,
            scores: stage1,
        });
    }
    let lada = adapter.lada_logits(i)?;
    if adapter.class_ids() != seen {
        return Err(LadaError::Contract(format!(
            "adapter covers {} classes, text head {} seen",
            lada.len(),
            seen.len()
        )));
    }
    let fused = fuse(&stage1[..seen.len()], &lada, cfg.alpha);
    let best = argmax_by_class(&fused, &seen).expect("seen is non-empty");
    Ok(Prediction {
        class_id: seen[best],
        route: Route::SeenFused,
        class_ids: seen,
        scores: fused,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: u32,
    pub n: usize,
    pub correct: usize,
    /// Samples whose predicted class belongs to this task.
    pub in_task: usize,
    pub accuracy: f64,
    pub task_recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RouteCounts {
    pub seen_fused: usize,
    pub unseen_direct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Tasks with at least one test sample, registry order.
    pub per_task: Vec<TaskEval>,
    pub n: usize,
    pub overall: f64,
    pub route_counts: RouteCounts,
    /// `task_confusion[a][b]`: samples of task position a predicted into task position b.
    pub task_confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn task(&self, task_id: u32) -> Option<&TaskEval> {
        self.per_task.iter().find(|t| t.task_id == task_id)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scores `(true class, predicted class, route)` triples against the registry.
pub fn tally(registry: &ClassRegistry, outcomes: &[(u32, u32, Route)]) -> Result<EvalReport> {
    let k = registry.num_tasks();
    let mut n = vec![0usize; k];
    let mut correct = vec![0usize; k];
    let mut confusion = vec![vec![0usize; k]; k];
    let mut routes = RouteCounts::default();
    let position = |class_id: u32| -> Result<usize> {
        let task = registry
            .task_of(class_id)
            .ok_or_else(|| LadaError::Registry(format!("class {class_id} is not registered")))?;
        registry.position(task)
    };
    for &(truth, predicted, route) in outcomes {
        let t = position(truth)?;
        let p = position(predicted)?;
        n[t] += 1;
        correct[t] += usize::from(truth == predicted);
        confusion[t][p] += 1;
        match route {
            Route::SeenFused => routes.seen_fused += 1,
            Route::UnseenDirect => routes.unseen_direct += 1,
        }
    }
    let per_task = registry
        .tasks()
        .iter()
        .enumerate()
        .filter(|(t, _)| n[*t] > 0)
        .map(|(t, d)| TaskEval {
            task_id: d.task_id,
            n: n[t],
            correct: correct[t],
            in_task: confusion[t][t],
            accuracy: correct[t] as f64 / n[t] as f64,
            task_recall: confusion[t][t] as f64 / n[t] as f64,
        })
        .collect();
    let total: usize = n.iter().sum();
    let hits: usize = correct.iter().sum();
    Ok(EvalReport {
        per_task,
        n: total,
        overall: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        route_counts: routes,
        task_confusion: confusion,
    })
}

/// Predicts every record of `test` (in parallel) and scores the results.
pub fn batch_eval(model: &Model, test: &EmbeddingSet, bank: &UnseenBank, cfg: &InferenceConfig) -> Result<EvalReport> {
    cfg.validate()?;
    test.validate_against(&model.registry)?;
    if test.dim() != model.dim() {
        return Err(LadaError::Shape {
            expected: model.dim(),
            actual: test.dim(),
        });
    }
    let outcomes = test
        .records()
        .par_iter()
        .map(|r| {
            let p = predict(&r.vector_f64(), &model.adapter, &model.text, bank, cfg)?;
            Ok((r.class_id, p.class_id, p.route))
        })
        .collect::<Result<Vec<_>>>()?;
    tally(&model.registry, &outcomes)
}

/// Fraction of `test` whose vanilla text argmax over every registered class is correct.
pub fn zero_shot_accuracy(model: &Model, test: &EmbeddingSet) -> Result<EvalReport> {
    test.validate_against(&model.registry)?;
    let bank = UnseenBank::new(model.dim(), model.vanilla.clone())?;
    let empty = TextClassifier::from_entries(model.dim(), model.text.logit_scale(), Vec::new());
    let adapter = AdapterState::new(model.adapter.config().clone(), model.dim())?;
    let outcomes = test
        .records()
        .par_iter()
        .map(|r| {
            let p = predict(&r.vector_f64(), &adapter, &empty, &bank, &InferenceConfig::default())?;
            Ok((r.class_id, p.class_id, p.route))
        })
        .collect::<Result<Vec<_>>>()?;
    tally(&model.registry, &outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{gen_synthetic_stream, SyntheticParams, SyntheticStream};
    use crate::linalg::dot;
    use crate::trainer::{train_task, TrainConfig};
    use proptest::prelude::*;

    fn stream() -> SyntheticStream {
        gen_synthetic_stream(&SyntheticParams {
            seed: 3,
            tasks: 3,
            classes_per_task: 3,
            dim: 8,
            train_per_class: 10,
            test_per_class: 5,
            separation: 5.0,
            text_noise: 0.8,
        })
        .unwrap()
    }

    fn trained(s: &SyntheticStream, tasks: usize) -> Model {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            lambda1: 3,
            lambda2: 2,
            ..TrainConfig::default()
        };
        let mut m = Model::new(s.registry.clone(), &s.text, None, cfg).unwrap();
        for k in 0..tasks {
            train_task(&mut m, s.registry.tasks()[k].task_id, &s.train[k]).unwrap();
        }
        m
    }

    /// Both stages written out from the raw definitions.
    fn oracle(m: &Model, bank: &UnseenBank, x: &[f64], alpha: f64) -> (u32, Route) {
        let s = m.text.logit_scale();
        let beta = m.adapter.config().beta;
        let seen: Vec<&crate::text_head::TextEntry> = m.text.entries().iter().filter(|e| e.active).collect();
        let mut best: Option<(f64, u32, bool)> = None;
        let cands = seen
            .iter()
            .map(|e| (s * dot(x, &e.vector), e.class_id, false))
            .chain(bank.class_ids().iter().zip(bank.vectors()).map(|(c, v)| (s * dot(x, v), *c, true)));
        for (z, c, unseen) in cands {
            if best.is_none_or(|(bz, bc, _)| z > bz || (z == bz && c < bc)) {
                best = Some((z, c, unseen));
            }
        }
        let (_, c, unseen) = best.unwrap();
        if unseen {
            return (c, Route::UnseenDirect);
        }
        let mut best: Option<(f64, u32)> = None;
        for e in seen {
            let block = m.adapter.block(e.class_id).unwrap();
            let lada: f64 = block.rows().map(|w| (-beta * (1.0 - dot(w, x))).exp()).sum();
            let z = (1.0 - alpha) * s * dot(x, &e.vector) + alpha * lada;
            if best.is_none_or(|(bz, bc)| z > bz || (z == bz && e.class_id < bc)) {
                best = Some((z, e.class_id));
            }
        }
        (best.unwrap().1, Route::SeenFused)
    }

    #[test]
    fn predictions_match_the_two_stage_oracle() {
        let s = stream();
        let m = trained(&s, 1);
        let bank = m.unseen_bank();
        assert_eq!(bank.len(), 6);
        let mut routes = [0, 0];
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            let cfg = InferenceConfig { alpha };
            for r in s.test.records() {
                let x = r.vector_f64();
                let p = predict(&x, &m.adapter, &m.text, &bank, &cfg).unwrap();
                assert_eq!((p.class_id, p.route), oracle(&m, &bank, &x, alpha));
                routes[usize::from(p.route == Route::UnseenDirect)] += 1;
            }
        }
        assert!(routes[0] > 0 && routes[1] > 0, "{routes:?}");
    }

    #[test]
    fn routing_is_sound() {
        let s = stream();
        let m = trained(&s, 2);
        let bank = m.unseen_bank();
        let seen = m.seen_classes().unwrap();
        for r in s.test.records() {
            let p = predict(&r.vector_f64(), &m.adapter, &m.text, &bank, &InferenceConfig::default()).unwrap();
            match p.route {
                Route::SeenFused => assert!(seen.contains(&p.class_id)),
                Route::UnseenDirect => assert!(bank.class_ids().contains(&p.class_id)),
            }
        }
    }

    #[test]
    fn without_unseen_classes_every_route_is_fused() {
        let s = stream();
        let m = trained(&s, 3);
        let report = batch_eval(&m, &s.test, &m.unseen_bank(), &InferenceConfig::default()).unwrap();
        assert_eq!(report.route_counts.unseen_direct, 0);
        assert_eq!(report.route_counts.seen_fused, s.test.len());
    }

    #[test]
    fn zero_alpha_is_text_argmax_over_seen() {
        let s = stream();
        let m = trained(&s, 2);
        let cfg = InferenceConfig { alpha: 0.0 };
        let empty = UnseenBank::empty(m.dim());
        let seen = m.seen_classes().unwrap();
        for r in s.test.records() {
            let x = r.vector_f64();
            let p = predict(&x, &m.adapter, &m.text, &empty, &cfg).unwrap();
            let t = m.text.seen_logits(&x).unwrap();
            assert_eq!(p.class_id, seen[argmax_by_class(&t, &seen).unwrap()]);
        }
    }

    #[test]
    fn no_classes_is_a_contract_error() {
        let s = stream();
        let m = Model::new(s.registry.clone(), &s.text, None, TrainConfig::default()).unwrap();
        let x = s.test.records()[0].vector_f64();
        let err = predict(&x, &m.adapter, &m.text, &UnseenBank::empty(8), &InferenceConfig::default());
        assert!(matches!(err, Err(LadaError::Contract(_))));
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        assert!(InferenceConfig { alpha: 1.5 }.validate().is_err());
        assert!(InferenceConfig { alpha: -0.1 }.validate().is_err());
        assert!(InferenceConfig { alpha: 1.0 }.validate().is_ok());
    }

    #[test]
    fn hand_built_tally() {
        let reg = ClassRegistry::from_class_counts(&[2, 2]).unwrap();
        // Classes 0,1 in task 0; 2,3 in task 1.
        let outcomes = [
            (0, 0, Route::SeenFused),
            (0, 1, Route::SeenFused),
            (1, 2, Route::UnseenDirect),
            (2, 2, Route::UnseenDirect),
        ];
        let r = tally(&reg, &outcomes).unwrap();
        let t0 = r.task(0).unwrap();
        assert_eq!((t0.n, t0.accuracy, t0.task_recall), (3, 1.0 / 3.0, 2.0 / 3.0));
        let t1 = r.task(1).unwrap();
        assert_eq!((t1.n, t1.accuracy, t1.task_recall), (1, 1.0, 1.0));
        assert_eq!(r.overall, 0.5);
        assert_eq!(r.route_counts, RouteCounts { seen_fused: 2, unseen_direct: 2 });
        assert_eq!(r.task_confusion, vec![vec![2, 1], vec![0, 1]]);
    }

    #[test]
    fn all_correct_gives_full_accuracy_and_recall() {
        let reg = ClassRegistry::from_class_counts(&[2, 1]).unwrap();
        let outcomes: Vec<_> = (0..3).map(|c| (c, c, Route::SeenFused)).collect();
        let r = tally(&reg, &outcomes).unwrap();
        assert!(r.per_task.iter().all(|t| t.accuracy == 1.0 && t.task_recall == 1.0));
    }

    #[test]
    fn unregistered_class_is_a_registry_error() {
        let reg = ClassRegistry::from_class_counts(&[2]).unwrap();
        assert!(matches!(
            tally(&reg, &[(7, 0, Route::SeenFused)]),
            Err(LadaError::Registry(_))
        ));
    }

    #[test]
    fn report_json_has_the_documented_fields() {
        let reg = ClassRegistry::from_class_counts(&[1]).unwrap();
        let r = tally(&reg, &[(0, 0, Route::SeenFused)]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json_string()).unwrap();
        for key in ["per_task", "overall", "route_counts"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["per_task"][0]["task_recall"], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let s = stream();
        let m = trained(&s, 1);
        let err = predict(&[0.0; 5], &m.adapter, &m.text, &m.unseen_bank(), &InferenceConfig::default());
        assert!(matches!(err, Err(LadaError::Shape { .. })));
    }

    proptest! {
        #[test]
        fn ties_go_to_the_lowest_class_id(scores in proptest::collection::vec(0u8..3, 1..12)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let ids: Vec<u32> = (0..scores.len() as u32).rev().collect();
            let best = argmax_by_class(&scores, &ids).unwrap();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let lowest = ids.iter().zip(&scores).filter(|(_, s)| **s == max).map(|(c, _)| *c).min().unwrap();
            prop_assert_eq!(ids[best], lowest);
        }

        #[test]
        fn scaling_fused_scores_keeps_the_winner(
            scores in proptest::collection::vec(-50.0f64..50.0, 1..10),
            c in 0.01f64..100.0,
        ) {
            let ids: Vec<u32> = (0..scores.len() as u32).collect();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            prop_assert_eq!(argmax_by_class(&scores, &ids), argmax_by_class(&scaled, &ids));
        }

        #[test]
        fn raising_a_lada_logit_never_lowers_its_rank(
            text in proptest::collection::vec(-5.0f64..5.0, 2..8),
            bump in 0.0f64..10.0,
            alpha in 0.01f64..1.0,
            seed in 0usize..100,
        ) {
            let lada: Vec<f64> = text.iter().map(|t| (t * 1.7).sin()).collect();
            let j = seed % text.len();
            let rank = |f: &[f64]| f.iter().filter(|v| **v > f[j]).count();
            let before = fuse(&text, &lada, alpha);
            let mut raised = lada.clone();
            raised[j] += bump;
            let after = fuse(&text, &raised, alpha);
            prop_assert!(rank(&after) <= rank(&before));
        }
    }
}
