//! Multi-task training: pick a task, draw a batch from its data, update the
//! parameters that task is allowed to touch, and evaluate on dev at a fixed
//! interval until the mean dev score stops improving.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::config::{RunConfig, SamplingMode};
use crate::corpus::{
    generate_synthetic_corpus, load_conll_ner, load_jsonl, sentence_count, split_documents,
    Document, SyntheticConfig,
};
use crate::metrics::{MetricReport, TaskMetrics};
use crate::model::Model;
use crate::params::{AdamConfig, ParamStore};
use crate::{Error, Result, Task};

/// Train/dev/test documents of one task.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

pub type TaskData = BTreeMap<Task, Splits>;

/// Read a data file: JSONL by extension, otherwise CoNLL columns (NER only).
pub fn load_docs(path: &str, task: Task) -> Result<Vec<Document>> {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".jsonl") || lower.ends_with(".json") {
        load_jsonl(path)
    } else if task == Task::Ner {
        load_conll_ner(path)
    } else {
        Err(Error::Config(format!(
            "data: {path} is not JSONL; column files only carry NER annotations, not {task}"
        )))
    }
}

/// Load (or generate) the data of every configured task. Missing dev/test
/// files are carved out of the training documents 8:1:1.
pub fn load_data(cfg: &RunConfig) -> Result<TaskData> {
    let mut out = TaskData::new();
    if cfg.data.synthetic_docs > 0 {
        let docs = generate_synthetic_corpus(cfg.seed, cfg.data.synthetic_docs, &SyntheticConfig::default());
        let (train, dev, test) = split_documents(&docs, (0.8, 0.1, 0.1), cfg.seed)?;
        for &t in &cfg.tasks {
            out.insert(
                t,
                Splits {
                    train: train.clone(),
                    dev: dev.clone(),
                    test: test.clone(),
                },
            );
        }
        return Ok(out);
    }
    let mut cache: HashMap<(String, Task), Vec<Document>> = HashMap::new();
    let mut get = |path: &str, task: Task| -> Result<Vec<Document>> {
        let key = (path.to_string(), if task == Task::Ner { Task::Ner } else { Task::Re });
        if let Some(d) = cache.get(&key) {
            return Ok(d.clone());
        }
        let d = load_docs(path, task)?;
        cache.insert(key, d.clone());
        Ok(d)
    };
    for &t in &cfg.tasks {
        let train_path = cfg.data.train_path(t).ok_or_else(|| {
            Error::Config(format!("data.train: no training data for task {t}"))
        })?;
        let train = get(train_path, t)?;
        let splits = match (cfg.data.dev_path(t), cfg.data.test_path(t)) {
            (Some(dev), test) => Splits {
                train,
                dev: get(dev, t)?,
                test: match test {
                    Some(p) => get(p, t)?,
                    None => Vec::new(),
                },
            },
            (None, _) => {
                let (train, dev, test) = split_documents(&train, (0.8, 0.1, 0.1), cfg.seed)?;
                Splits { train, dev, test }
            }
        };
        if splits.train.is_empty() || sentence_count(&splits.train) == 0 {
            return Err(Error::Config(format!("data: training set for {t} is empty")));
        }
        out.insert(t, splits);
    }
    Ok(out)
}

/// Distinct training documents across tasks, in task order then file order.
pub fn all_train_docs(data: &TaskData) -> Vec<&Document> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for splits in data.values() {
        for d in &splits.train {
            if seen.insert(d.doc_id.as_str()) {
                out.push(d);
            }
        }
    }
    out
}

/// Which task to train next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    pub tasks: Vec<Task>,
    pub sizes: Vec<usize>,
}

impl SamplingPolicy {
    pub fn new(mode: SamplingMode, tasks: Vec<Task>, sizes: Vec<usize>) -> Result<Self> {
        if tasks.is_empty() || tasks.len() != sizes.len() {
            return Err(Error::Config("sampling needs one size per task and at least one task".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("data: training set for {} is empty", tasks[i])));
        }
        Ok(Self { mode, tasks, sizes })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        match self.mode {
            SamplingMode::Uniform => vec![1.0 / self.tasks.len() as f64; self.tasks.len()],
            SamplingMode::Proportional => {
                let total: usize = self.sizes.iter().sum();
                self.sizes.iter().map(|&s| s as f64 / total as f64).collect()
            }
        }
    }

    pub fn sampler(&self) -> TaskSampler {
        let weights: Vec<f64> = match self.mode {
            SamplingMode::Uniform => vec![1.0; self.tasks.len()],
            SamplingMode::Proportional => self.sizes.iter().map(|&s| s as f64).collect(),
        };
        TaskSampler {
            tasks: self.tasks.clone(),
            dist: WeightedIndex::new(weights).expect("positive weights"),
        }
    }
}

pub struct TaskSampler {
    tasks: Vec<Task>,
    dist: WeightedIndex<f64>,
}

impl TaskSampler {
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> Task {
        self.tasks[self.dist.sample(rng)]
    }
}

/// One training unit: a sentence, or a whole document for coreference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unit {
    pub doc: usize,
    pub sentence: Option<usize>,
}

/// Endless shuffled passes over the training units of one task.
pub struct BatchStream {
    units: Vec<Unit>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(task: Task, docs: &[Document], batch: usize, seed: u64) -> Result<Self> {
        let mut units = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            match task {
                Task::Cr => {
                    if doc.token_count() > 0 {
                        units.push(Unit { doc: d, sentence: None });
                    }
                }
                Task::Re => {
                    for s in 0..doc.sentences.len() {
                        let mut heads: Vec<usize> =
                            doc.sentence_spans(&doc.mentions, s).iter().map(|m| m.end).collect();
                        heads.dedup();
                        if heads.len() >= 2 {
                            units.push(Unit { doc: d, sentence: Some(s) });
                        }
                    }
                }
                Task::Ner | Task::Emd => {
                    for s in 0..doc.sentences.len() {
                        units.push(Unit { doc: d, sentence: Some(s) });
                    }
                }
            }
        }
        if units.is_empty() {
            return Err(Error::Config(format!("data: no usable training units for {task}")));
        }
        let batch = if task == Task::Cr { 1 } else { batch };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        units.shuffle(&mut rng);
        Ok(Self {
            units,
            cursor: 0,
            batch,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn next_batch(&mut self) -> Vec<Unit> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch.min(self.units.len()) {
            if self.cursor == self.units.len() {
                self.units.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.units[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Loss and gradient norm of one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub grad_norm: f64,
}

/// The batch loss for `task` as a graph node (sentence losses summed, then
/// averaged over the batch).
pub fn batch_loss(
    model: &Model,
    graph: &mut Graph,
    task: Task,
    docs: &[Document],
    batch: &[Unit],
) -> Result<Option<crate::autograd::Var>> {
    let needed = model.closure(&[task]);
    let mut terms = Vec::with_capacity(batch.len());
    for unit in batch {
        let doc = &docs[unit.doc];
        match (task, unit.sentence) {
            (Task::Cr, _) => terms.push(model.coref_loss(graph, doc)?),
            (_, Some(s)) => {
                let offsets = doc.sentence_offsets();
                let sref = Model::sentence_ref(doc, s, &offsets);
                let st = model.encode_sentence(graph, &sref, &needed)?;
                match task {
                    Task::Ner | Task::Emd => {
                        let layer = if task == Task::Ner { &doc.ner } else { &doc.mentions };
                        let gold = doc.sentence_spans(layer, s);
                        terms.push(model.tagging_loss(graph, &st, task, &gold, sref.tokens.len())?);
                    }
                    Task::Re => {
                        if let Some(l) = model.relation_loss(graph, &st, doc, s, &offsets)? {
                            terms.push(l);
                        }
                    }
                    Task::Cr => unreachable!(),
                }
            }
            (_, None) => {
                return Err(Error::Config(format!("{task} batches are made of sentences")));
            }
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let total = graph.add_scalars(&terms);
    Ok(Some(graph.scale(total, 1.0 / batch.len() as f64)))
}

/// One optimizer update for `task`, restricted to that task's scope.
pub fn train_step(
    model: &mut Model,
    task: Task,
    docs: &[Document],
    batch: &[Unit],
    adam: &AdamConfig,
    update: usize,
    dropout_seed: u64,
) -> Result<StepOutcome> {
    let mut graph = Graph::training(dropout_seed);
    let Some(loss) = batch_loss(model, &mut graph, task, docs, batch)? else {
        return Ok(StepOutcome {
            loss: 0.0,
            grad_norm: 0.0,
        });
    };
    let value = graph.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            task,
            update: update as u64,
            loss: value,
        });
    }
    let grads = graph.backward(loss);
    let scope = model.wiring.update_scope(task);
    let grad_norm = model.store.adam_step(&grads, &scope, adam);
    Ok(StepOutcome {
        loss: value,
        grad_norm,
    })
}

/// Tracks the monitored dev score and decides when to stop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMonitor {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_update: usize,
    pub evaluations_without_improvement: usize,
    pub history: Vec<(usize, f64)>,
}

impl ConvergenceMonitor {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_update: 0,
            evaluations_without_improvement: 0,
            history: Vec::new(),
        }
    }

    /// Record a score; returns `(improved, stop)`.
    pub fn observe(&mut self, update: usize, score: f64) -> (bool, bool) {
        if let Some(&(last, _)) = self.history.last() {
            assert!(update >= last, "update counter went backwards");
        }
        self.history.push((update, score));
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_update = update;
            self.evaluations_without_improvement = 0;
            (true, false)
        } else {
            self.evaluations_without_improvement += 1;
            (false, self.evaluations_without_improvement > self.patience)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub update: usize,
    pub mean: f64,
    pub dev: MetricReport,
    /// Mean training loss per task since the previous evaluation.
    pub train_loss: BTreeMap<Task, f64>,
}

/// Best dev score of one task and the update where it was first reached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBest {
    pub score: f64,
    pub update: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Resolved configuration in the input format.
    pub config: String,
    pub seed: u64,
    pub setup: Option<String>,
    pub tasks: Vec<Task>,
    pub encoder_input_dims: BTreeMap<Task, usize>,
    pub parameter_count: usize,
    pub sampling: SamplingPolicy,
    pub sampling_probabilities: Vec<f64>,
    pub sample_counts: BTreeMap<Task, usize>,
    pub eval_interval: usize,
    pub updates: usize,
    pub stop_reason: String,
    pub monitored_metric: String,
    pub best_update: usize,
    pub best_dev: MetricReport,
    pub task_best: BTreeMap<Task, TaskBest>,
    pub evaluations: Vec<Evaluation>,
    pub mean_loss: BTreeMap<Task, f64>,
}

pub struct TrainOutcome {
    /// Model holding the best-dev parameters.
    pub model: Model,
    /// Parameters at the last update.
    pub final_params: ParamStore,
    pub report: TrainReport,
}

/// Dev metrics of every configured task.
pub fn evaluate_all(model: &Model, data: &TaskData, gold_mentions: bool, dev: bool) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for (&task, splits) in data {
        let docs: Vec<&Document> = if dev { splits.dev.iter() } else { splits.test.iter() }.collect();
        if docs.is_empty() {
            continue;
        }
        report.tasks.insert(task, model.evaluate(task, &docs, gold_mentions)?);
    }
    Ok(report)
}

/// Run training to convergence (or `trainer.max_updates`).
pub fn train(cfg: &RunConfig, data: &TaskData) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = Model::new(cfg, &all_train_docs(data))?;
    train_model(cfg, data, model)
}

/// Train an already built model.
pub fn train_model(cfg: &RunConfig, data: &TaskData, mut model: Model) -> Result<TrainOutcome> {
    let tasks: Vec<Task> = model.wiring.tasks();
    for t in &tasks {
        if !data.contains_key(t) {
            return Err(Error::Config(format!("data: no data loaded for task {t}")));
        }
    }
    let tc = &cfg.trainer;
    let sizes: Vec<usize> = tasks.iter().map(|t| sentence_count(&data[t].train)).collect();
    let policy = SamplingPolicy::new(tc.sampling, tasks.clone(), sizes)?;
    let sampler = policy.sampler();
    let mut streams = BTreeMap::new();
    for (k, &t) in tasks.iter().enumerate() {
        let seed = cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(k as u64 + 1);
        streams.insert(t, BatchStream::new(t, &data[&t].train, tc.batch_size, seed)?);
    }
    let eval_interval = if tc.eval_interval > 0 {
        tc.eval_interval
    } else {
        streams
            .values()
            .map(|s| s.len().div_ceil(s.batch_size()))
            .min()
            .unwrap_or(1)
            .max(1)
    };
    let adam = AdamConfig {
        lr: tc.lr,
        clip_norm: tc.clip_norm,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a5c);
    let mut monitor = ConvergenceMonitor::new(tc.patience);
    let mut sample_counts: BTreeMap<Task, usize> = tasks.iter().map(|&t| (t, 0)).collect();
    let mut loss_sums: BTreeMap<Task, f64> = BTreeMap::new();
    let mut window: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
    let mut evaluations = Vec::new();
    let mut task_best: BTreeMap<Task, TaskBest> = BTreeMap::new();
    let mut best_params = model.store.clone();
    let mut best_dev = MetricReport::default();
    let mut stop_reason = format!("reached trainer.max_updates = {}", tc.max_updates);
    let mut updates = 0;

    while updates < tc.max_updates {
        let task = sampler.sample(&mut rng);
        let batch = streams.get_mut(&task).expect("stream per task").next_batch();
        updates += 1;
        let dropout_seed = cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ updates as u64;
        let out = train_step(
            &mut model,
            task,
            &data[&task].train,
            &batch,
            &adam,
            updates,
            dropout_seed,
        )?;
        *sample_counts.get_mut(&task).expect("task counted") += 1;
        *loss_sums.entry(task).or_default() += out.loss;
        let w = window.entry(task).or_default();
        w.0 += out.loss;
        w.1 += 1;

        if updates % eval_interval == 0 || updates == tc.max_updates {
            let dev = evaluate_all(&model, data, cfg.gold_mentions, true)?;
            let mean = dev.mean_primary();
            for (t, m) in &dev.tasks {
                let s = m.primary();
                let e = task_best.entry(*t).or_insert(TaskBest { score: s, update: updates });
                if s > e.score {
                    *e = TaskBest { score: s, update: updates };
                }
            }
            log::info!("update {updates}: dev mean {mean:.4}");
            let (improved, stop) = monitor.observe(updates, mean);
            if improved {
                best_params = model.store.clone();
                best_dev = dev.clone();
            }
            let train_loss = std::mem::take(&mut window)
                .into_iter()
                .map(|(t, (sum, n))| (t, sum / n as f64))
                .collect();
            evaluations.push(Evaluation {
                update: updates,
                mean,
                dev,
                train_loss,
            });
            if stop {
                stop_reason = format!(
                    "no improvement in {} evaluations (patience {})",
                    monitor.evaluations_without_improvement, tc.patience
                );
                break;
            }
        }
    }
    let mean_loss = loss_sums
        .iter()
        .map(|(t, s)| (*t, s / sample_counts[t].max(1) as f64))
        .collect();
    let final_params = std::mem::replace(&mut model.store, best_params);
    let report = TrainReport {
        config: cfg.to_text(),
        seed: cfg.seed,
        setup: cfg.setup.clone(),
        tasks,
        encoder_input_dims: model.encoder_input_dims(),
        parameter_count: model.store.total_size(),
        sampling_probabilities: policy.probabilities(),
        sampling: policy,
        sample_counts,
        eval_interval,
        updates,
        stop_reason,
        monitored_metric: "mean of per-task primary dev F1 (coreference: average of MUC, B3, CEAFe F1)".into(),
        best_update: monitor.best_update,
        best_dev,
        task_best,
        evaluations,
        mean_loss,
    };
    Ok(TrainOutcome {
        model,
        final_params,
        report,
    })
}

/// One row of a speed-of-training comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub task: Task,
    pub single_updates: usize,
    pub multi_updates: usize,
    /// `(multi − single) / single × 100`
    pub delta_updates_pct: f64,
    /// Difference in F1 points, multi minus single.
    pub delta_f1: f64,
}

/// Compare updates-to-best and best dev F1 per shared task.
pub fn compare_speed(multi: &TrainReport, single: &TrainReport) -> Vec<SpeedRow> {
    multi
        .task_best
        .iter()
        .filter_map(|(task, m)| {
            let s = single.task_best.get(task)?;
            let delta_updates_pct = if s.update == 0 {
                0.0
            } else {
                (m.update as f64 - s.update as f64) / s.update as f64 * 100.0
            };
            Some(SpeedRow {
                task: *task,
                single_updates: s.update,
                multi_updates: m.update,
                delta_updates_pct,
                delta_f1: (m.score - s.score) * 100.0,
            })
        })
        .collect()
}

pub fn format_speed_rows(rows: &[SpeedRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{:<4} {:+.0}% {:+.2}\n",
                r.task.as_str().to_uppercase(),
                r.delta_updates_pct,
                r.delta_f1
            )
        })
        .collect()
}

/// Write a report as pretty JSON.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// The primary score of `task` in a report, if evaluated.
pub fn primary(report: &MetricReport, task: Task) -> Option<f64> {
    report.tasks.get(&task).map(TaskMetrics::primary)
}
