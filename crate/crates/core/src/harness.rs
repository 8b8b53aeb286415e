//! Experiment plumbing: run configuration, synthetic data on disk, the
//! task-by-task benchmark loop, evaluation and checkpoint inspection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{
    gen_synthetic_stream, load_lse, normalize_set, save_lse, ClassRegistry, EmbeddingSet, SyntheticParams, TaskStatus,
};
use crate::error::{LadaError, Result};
use crate::inference::{batch_eval, zero_shot_accuracy, EvalReport, InferenceConfig};
use crate::metrics::{AccuracyMatrix, Summary};
use crate::prototypes::ReplayMode;
use crate::trainer::{
    load_checkpoint, save_checkpoint, train_task, LossMode, Model, TaskReport, TrainConfig,
};

/// Everything a run depends on. Flat TOML; relative paths resolve against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub replay_mode: ReplayMode,
    pub beta: f64,
    pub lambda1: usize,
    pub lambda2: usize,
    pub logit_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub alpha: f64,
    pub registry: PathBuf,
    pub text: PathBuf,
    /// Vectors used for classes not learned yet; defaults to `text`.
    pub unseen_text: Option<PathBuf>,
    pub test: PathBuf,
    /// One LSE file per task, registry order.
    pub train: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            seed: t.seed,
            epochs: t.epochs,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            loss_mode: t.loss_mode,
            replay_mode: t.replay_mode,
            beta: t.beta,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            logit_scale: t.logit_scale,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            alpha: InferenceConfig::default().alpha,
            registry: PathBuf::new(),
            text: PathBuf::new(),
            unseen_text: None,
            test: PathBuf::new(),
            train: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document, then applies `key=value` overrides (values in TOML syntax;
    /// bare words are taken as strings).
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| LadaError::Config(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| LadaError::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| LadaError::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        cfg.inference_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LadaError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.registry);
        fix(&mut self.text);
        fix(&mut self.test);
        if let Some(p) = self.unseen_text.as_mut() {
            fix(p);
        }
        self.train.iter_mut().for_each(fix);
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            loss_mode: self.loss_mode,
            replay_mode: self.replay_mode,
            seed: self.seed,
            beta: self.beta,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            logit_scale: self.logit_scale,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig { alpha: self.alpha }
    }

    fn require_paths(&self) -> Result<()> {
        for (name, p) in [("registry", &self.registry), ("text", &self.text), ("test", &self.test)] {
            if p.as_os_str().is_empty() {
                return Err(LadaError::Config(format!("{name} path is not set")));
            }
        }
        if self.train.is_empty() {
            return Err(LadaError::Config("no train files listed".into()));
        }
        Ok(())
    }
}

/// Caps the worker pool used for loss evaluation and batch inference.
/// Must run before any parallel work; later calls fail.
pub fn set_thread_limit(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(LadaError::Config("thread limit must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| LadaError::Config(e.to_string()))
}

/// Loads an LSE file and brings every vector to unit norm.
pub fn load_normalized(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    normalize_set(&load_lse(path)?)
}

/// All inputs of a run, loaded and checked against the registry.
pub struct RunInputs {
    pub registry: ClassRegistry,
    pub text: EmbeddingSet,
    pub unseen_text: Option<EmbeddingSet>,
    pub test: EmbeddingSet,
    pub train: Vec<EmbeddingSet>,
}

impl RunInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        cfg.require_paths()?;
        let registry = ClassRegistry::load(&cfg.registry)?;
        if cfg.train.len() != registry.num_tasks() {
            return Err(LadaError::Config(format!(
                "{} train files for {} registered tasks",
                cfg.train.len(),
                registry.num_tasks()
            )));
        }
        let text = load_normalized(&cfg.text)?;
        let unseen_text = cfg.unseen_text.as_ref().map(load_normalized).transpose()?;
        let test = load_normalized(&cfg.test)?;
        test.validate_against(&registry)?;
        let train = cfg.train.iter().map(load_normalized).collect::<Result<Vec<_>>>()?;
        for set in &train {
            set.validate_against(&registry)?;
        }
        Ok(RunInputs {
            registry,
            text,
            unseen_text,
            test,
            train,
        })
    }

    pub fn model(&self, cfg: &RunConfig) -> Result<Model> {
        Model::new(self.registry.clone(), &self.text, self.unseen_text.as_ref(), cfg.train_config())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShot {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub config: RunConfig,
    pub task_ids: Vec<u32>,
    pub zero_shot: ZeroShot,
    #[serde(flatten)]
    pub metrics: Summary,
}

impl BenchmarkSummary {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub struct BenchmarkOutcome {
    pub matrix: AccuracyMatrix,
    pub summary: BenchmarkSummary,
    pub reports: Vec<TaskReport>,
    pub evals: Vec<EvalReport>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| LadaError::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| LadaError::io(path, e))
}

/// Accuracy of every registered task, registry order. Tasks without test data are an error.
fn accuracy_column(registry: &ClassRegistry, report: &EvalReport) -> Result<Vec<f64>> {
    registry
        .tasks()
        .iter()
        .map(|t| {
            report
                .task(t.task_id)
                .map(|e| e.accuracy)
                .ok_or_else(|| LadaError::EmptyInput(format!("task {} has no test samples", t.task_id)))
        })
        .collect()
}

/// Trains every task in order, evaluating all tasks after each one.
///
/// Writes `config.toml`, `matrix.csv` (after every column), `eval/after_{j}.json`,
/// `checkpoints/after_{j}/` and `summary.json` under `out`.
pub fn run_benchmark(cfg: &RunConfig, out: &Path) -> Result<BenchmarkOutcome> {
    let inputs = RunInputs::load(cfg)?;
    let mut model = inputs.model(cfg)?;
    let infer = cfg.inference_config();
    let task_ids: Vec<u32> = inputs.registry.tasks().iter().map(|t| t.task_id).collect();

    mkdir(out)?;
    mkdir(&out.join("eval"))?;
    mkdir(&out.join("checkpoints"))?;
    write(&out.join("config.toml"), cfg.to_toml_string())?;

    let zero = zero_shot_accuracy(&model, &inputs.test)?;
    let zero_col = accuracy_column(&inputs.registry, &zero)?;
    write(&out.join("eval").join("zero_shot.json"), zero.to_json_string())?;

    let mut matrix = AccuracyMatrix::new(task_ids.clone())?;
    let mut reports = Vec::new();
    let mut evals = Vec::new();
    for (j, (&task_id, train)) in task_ids.iter().zip(&inputs.train).enumerate() {
        reports.push(train_task(&mut model, task_id, train)?);
        for (k, &t) in task_ids.iter().enumerate() {
            let expected = if k <= j { TaskStatus::Learned } else { TaskStatus::Unseen };
            if model.registry.status(t)? != expected {
                return Err(LadaError::State(format!("task {t} is not {expected:?} after step {}", j + 1)));
            }
        }
        let report = batch_eval(&model, &inputs.test, &model.unseen_bank(), &infer)?;
        matrix.set_column(j + 1, accuracy_column(&model.registry, &report)?)?;
        write(&out.join("matrix.csv"), matrix.to_csv())?;
        write(
            &out.join("eval").join(format!("after_{}.json", j + 1)),
            report.to_json_string(),
        )?;
        save_checkpoint(&model, out.join("checkpoints").join(format!("after_{}", j + 1)))?;
        evals.push(report);
    }

    let summary = BenchmarkSummary {
        config: cfg.clone(),
        task_ids,
        zero_shot: ZeroShot {
            mean: zero_col.iter().sum::<f64>() / zero_col.len() as f64,
            per_task: zero_col,
        },
        metrics: matrix.summary()?,
    };
    write(&out.join("summary.json"), summary.to_json_string())?;
    Ok(BenchmarkOutcome {
        matrix,
        summary,
        reports,
        evals,
    })
}

/// Trains up to `count` not-yet-learned tasks, starting from `resume` if given.
pub fn train_tasks(cfg: &RunConfig, resume: Option<Model>, count: Option<usize>) -> Result<(Model, Vec<TaskReport>)> {
    let inputs = RunInputs::load(cfg)?;
    let mut model = match resume {
        Some(m) => {
            if m.registry != inputs.registry_with_statuses(&m.registry)? {
                return Err(LadaError::Incompatible("checkpoint registry differs from the run registry".into()));
            }
            m
        }
        None => inputs.model(cfg)?,
    };
    let pending: Vec<(u32, &EmbeddingSet)> = inputs
        .registry
        .tasks()
        .iter()
        .zip(&inputs.train)
        .filter(|(t, _)| model.registry.status(t.task_id).ok() == Some(TaskStatus::Unseen))
        .map(|(t, s)| (t.task_id, s))
        .collect();
    let mut reports = Vec::new();
    for (task_id, set) in pending.into_iter().take(count.unwrap_or(usize::MAX)) {
        reports.push(train_task(&mut model, task_id, set)?);
    }
    Ok((model, reports))
}

impl RunInputs {
    fn registry_with_statuses(&self, other: &ClassRegistry) -> Result<ClassRegistry> {
        let mut r = self.registry.clone();
        let statuses: Vec<_> = other.tasks().iter().map(|t| (t.task_id, t.status)).collect();
        r.set_statuses(&statuses)?;
        Ok(r)
    }
}

/// Evaluates a checkpoint on a test file, routing unlearned classes through the unseen bank.
pub fn eval_checkpoint(ckpt: &Path, test: &Path, infer: &InferenceConfig) -> Result<EvalReport> {
    let model = load_checkpoint(ckpt)?;
    let test = load_normalized(test)?;
    batch_eval(&model, &test, &model.unseen_bank(), infer)
}

/// Human-readable dump of a checkpoint.
pub fn inspect(model: &Model) -> String {
    let mut out = String::new();
    let d = model.dim();
    writeln!(out, "dimension: {d}").unwrap();
    writeln!(out, "adapter blocks: {}", model.adapter.blocks().len()).unwrap();
    writeln!(out, "adapter parameters: {}", model.adapter.param_count()).unwrap();
    for t in model.registry.tasks() {
        let blocks: Vec<_> = model.adapter.blocks().iter().filter(|b| b.task_id == t.task_id).collect();
        let params: usize = blocks.iter().map(|b| b.param_count()).sum();
        let protos: usize = model
            .prototypes
            .classes()
            .iter()
            .filter(|p| p.task_id == t.task_id)
            .map(|p| p.components.len())
            .sum();
        writeln!(
            out,
            "task {}: {:?}, {} classes, {} blocks, {} parameters, {} prototypes",
            t.task_id,
            t.status,
            t.class_ids.len(),
            blocks.len(),
            params,
            protos
        )
        .unwrap();
        for b in blocks {
            writeln!(out, "  class {}: {} x {} rows{}", b.class_id, b.num_rows(), d, if b.frozen { ", frozen" } else { "" })
                .unwrap();
        }
    }
    writeln!(out, "config:").unwrap();
    let cfg = toml::to_string(&model.config).expect("config serializes");
    for line in cfg.lines() {
        writeln!(out, "  {line}").unwrap();
    }
    out
}

/// Writes a synthetic stream plus a ready-to-run `benchmark.toml`. Returns the config path.
pub fn write_synthetic(params: &SyntheticParams, out: &Path) -> Result<PathBuf> {
    let stream = gen_synthetic_stream(params)?;
    mkdir(out)?;
    let mut train = Vec::new();
    for (k, set) in stream.train.iter().enumerate() {
        let name = format!("task_{}_train.lse", k + 1);
        save_lse(set, out.join(&name))?;
        train.push(PathBuf::from(name));
    }
    save_lse(&stream.test, out.join("test.lse"))?;
    save_lse(&stream.text, out.join("text.lse"))?;
    stream.registry.save(out.join("registry.json"))?;
    let cfg = RunConfig {
        seed: params.seed,
        registry: "registry.json".into(),
        text: "text.lse".into(),
        test: "test.lse".into(),
        train,
        ..RunConfig::default()
    };
    let path = out.join("benchmark.toml");
    write(&path, cfg.to_toml_string())?;
    Ok(path)
}
