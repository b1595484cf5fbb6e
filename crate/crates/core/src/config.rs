//! Run configuration: a flat file of dotted `key = value` lines.
//!
//! ```text
//! # comments start with '#'
//! setup = A-GM
//! data.train = corpus/train.jsonl
//! encoder.hidden = 32
//! trainer.patience = 5
//! ```
//!
//! Lines are applied in order, so a later `tasks = ...` overrides what a
//! `setup` line chose. Every key has a default; [`RunConfig::to_text`] writes
//! the fully resolved configuration back in the same format.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coref::CorefConfig;
use crate::embedder::CharCnnConfig;
use crate::relation::RelationConfig;
use crate::{Error, Result, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Proportional,
    Uniform,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::Proportional => "proportional",
            SamplingMode::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub word: bool,
    /// Width of randomly initialised word vectors when no file is given.
    pub word_dim: usize,
    pub word_vectors: Option<String>,
    pub word_trainable: bool,
    pub chars: bool,
    pub char_cnn: CharCnnConfig,
    pub context: bool,
    pub context_dim: usize,
    /// Precomputed contextual vectors; without it a fixed hash stand-in is used.
    pub context_cache: Option<String>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            word: true,
            word_dim: 50,
            word_vectors: None,
            word_trainable: true,
            chars: true,
            char_cnn: CharCnnConfig::default(),
            context: true,
            context_dim: 16,
            context_cache: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Input dropout of every encoder during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 1,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub sampling: SamplingMode,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub patience: usize,
    /// Updates between dev evaluations; 0 means one epoch of the smallest
    /// training set.
    pub eval_interval: usize,
    pub max_updates: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingMode::Proportional,
            batch_size: 8,
            lr: 1e-3,
            clip_norm: 5.0,
            patience: 5,
            eval_interval: 0,
            max_updates: 20_000,
        }
    }
}

/// Paths for one split triple. Empty dev/test fall back to a document split
/// of the training data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitPaths {
    pub train: Option<String>,
    pub dev: Option<String>,
    pub test: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub shared: SplitPaths,
    pub ner: SplitPaths,
    pub emd: SplitPaths,
    pub cr: SplitPaths,
    pub re: SplitPaths,
    /// Generate this many synthetic documents instead of reading files.
    pub synthetic_docs: usize,
}

impl DataConfig {
    pub fn for_task(&self, task: Task) -> &SplitPaths {
        match task {
            Task::Ner => &self.ner,
            Task::Emd => &self.emd,
            Task::Cr => &self.cr,
            Task::Re => &self.re,
        }
    }

    fn for_task_mut(&mut self, task: Task) -> &mut SplitPaths {
        match task {
            Task::Ner => &mut self.ner,
            Task::Emd => &mut self.emd,
            Task::Cr => &mut self.cr,
            Task::Re => &mut self.re,
        }
    }

    /// Training path for `task`, falling back to the shared one.
    pub fn train_path(&self, task: Task) -> Option<&str> {
        self.for_task(task)
            .train
            .as_deref()
            .or(self.shared.train.as_deref())
    }

    pub fn dev_path(&self, task: Task) -> Option<&str> {
        let own = self.for_task(task);
        if own.train.is_some() {
            own.dev.as_deref()
        } else {
            own.dev.as_deref().or(self.shared.dev.as_deref())
        }
    }

    pub fn test_path(&self, task: Task) -> Option<&str> {
        let own = self.for_task(task);
        if own.train.is_some() {
            own.test.as_deref()
        } else {
            own.test.as_deref().or(self.shared.test.as_deref())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub setup: Option<String>,
    pub tasks: Vec<Task>,
    /// Bottom-to-top order of the tagging tasks.
    pub order: Vec<Task>,
    pub gold_mentions: bool,
    pub seed: u64,
    pub data: DataConfig,
    pub embed: EmbedConfig,
    pub encoder: EncoderConfig,
    pub crf_mask_invalid: bool,
    pub coref: CorefConfig,
    pub relation: RelationConfig,
    pub trainer: TrainerConfig,
    /// Checkpoint used for probing/evaluation: `best` (best dev) or `final`.
    pub probe_checkpoint: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setup: Some("A".into()),
            tasks: vec![Task::Ner, Task::Emd, Task::Re, Task::Cr],
            order: vec![Task::Ner, Task::Emd],
            gold_mentions: false,
            seed: 0,
            data: DataConfig::default(),
            embed: EmbedConfig::default(),
            encoder: EncoderConfig::default(),
            crf_mask_invalid: true,
            coref: CorefConfig::default(),
            relation: RelationConfig::default(),
            trainer: TrainerConfig::default(),
            probe_checkpoint: "best".into(),
        }
    }
}

/// Task list and tagging order for a setup letter, with an optional `-GM`
/// suffix.
pub fn setup_tasks(name: &str) -> Result<(Vec<Task>, Vec<Task>, bool)> {
    let upper = name.trim().to_ascii_uppercase();
    let (letter, gm) = match upper.strip_suffix("-GM") {
        Some(l) => (l, true),
        None => (upper.as_str(), false),
    };
    use Task::*;
    let standard = vec![Ner, Emd];
    let swapped = vec![Emd, Ner];
    let (tasks, order) = match letter {
        "A" => (vec![Ner, Emd, Re, Cr], standard),
        "B" => (vec![Ner], standard),
        "C" => (vec![Emd], standard),
        "D" => (vec![Re], standard),
        "E" => (vec![Cr], standard),
        "F" => (vec![Ner, Emd], standard),
        "G" => (vec![Emd, Re], standard),
        "H" => (vec![Emd, Cr], standard),
        "I" => (vec![Ner, Emd, Re], standard),
        "J" => (vec![Ner, Emd, Cr], standard),
        "K" => (vec![Emd, Ner], swapped),
        "L" => (vec![Emd, Ner, Re, Cr], swapped),
        _ => return Err(Error::Config(format!("setup: unknown setup {name:?}"))),
    };
    if gm && !tasks.contains(&Cr) {
        return Err(Error::Config(format!(
            "setup: {name} asks for gold mentions but has no coreference task"
        )));
    }
    Ok((tasks, order, gm))
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected {what}, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_tasks(key: &str, value: &str) -> Result<Vec<Task>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t = Task::parse(part)
            .ok_or_else(|| Error::Config(format!("{key}: unknown task {part:?}")))?;
        if out.contains(&t) {
            return Err(Error::Config(format!("{key}: task {t} listed twice")));
        }
        out.push(t);
    }
    Ok(out)
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse_value(key, p, "an integer list"))
        .collect()
}

fn opt_path(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty() && v != "none").then(|| v.to_string())
}

fn show_opt(v: &Option<String>) -> String {
    v.clone().unwrap_or_else(|| "none".into())
}

fn show_tasks(ts: &[Task]) -> String {
    ts.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
}

fn show<T: Display>(v: T) -> String {
    v.to_string()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| parse_value::<usize>(key, v, "a non-negative integer");
        let real = |v: &str| parse_value::<f64>(key, v, "a number");
        match key {
            "setup" => {
                let (tasks, order, gm) = setup_tasks(value)?;
                self.setup = Some(value.to_ascii_uppercase());
                self.tasks = tasks;
                self.order = order;
                self.gold_mentions = gm;
            }
            "tasks" => {
                let v = parse_tasks(key, value)?;
                if v != self.tasks {
                    self.setup = None;
                }
                self.tasks = v;
            }
            "order" => {
                let v = parse_tasks(key, value)?;
                if v != self.order {
                    self.setup = None;
                }
                self.order = v;
            }
            "gold_mentions" => self.gold_mentions = parse_bool(key, value)?,
            "seed" => self.seed = parse_value(key, value, "an unsigned integer")?,
            "data.train" => self.data.shared.train = opt_path(value),
            "data.dev" => self.data.shared.dev = opt_path(value),
            "data.test" => self.data.shared.test = opt_path(value),
            "data.synthetic_docs" => self.data.synthetic_docs = int(value)?,
            "embed.word" => self.embed.word = parse_bool(key, value)?,
            "embed.word_dim" => self.embed.word_dim = int(value)?,
            "embed.word_vectors" => self.embed.word_vectors = opt_path(value),
            "embed.word_trainable" => self.embed.word_trainable = parse_bool(key, value)?,
            "embed.chars" => self.embed.chars = parse_bool(key, value)?,
            "embed.char_dim" => self.embed.char_cnn.char_dim = int(value)?,
            "embed.char_widths" => self.embed.char_cnn.widths = parse_list(key, value)?,
            "embed.char_filters" => self.embed.char_cnn.filters_per_width = int(value)?,
            "embed.context" => self.embed.context = parse_bool(key, value)?,
            "embed.context_dim" => self.embed.context_dim = int(value)?,
            "embed.context_cache" => self.embed.context_cache = opt_path(value),
            "encoder.hidden" => self.encoder.hidden = int(value)?,
            "encoder.layers" => self.encoder.layers = int(value)?,
            "encoder.dropout" => self.encoder.dropout = real(value)?,
            "crf.mask_invalid" => self.crf_mask_invalid = parse_bool(key, value)?,
            "coref.max_width" => self.coref.max_width = int(value)?,
            "coref.ratio" => self.coref.ratio = real(value)?,
            "coref.max_antecedents" => self.coref.max_antecedents = int(value)?,
            "coref.feature_dim" => self.coref.feature_dim = int(value)?,
            "coref.hidden" => self.coref.hidden = int(value)?,
            "coref.dropout" => self.coref.dropout = real(value)?,
            "relation.hidden" => self.relation.hidden = int(value)?,
            "relation.threshold" => self.relation.threshold = real(value)?,
            "trainer.sampling" => {
                self.trainer.sampling = match value {
                    "proportional" => SamplingMode::Proportional,
                    "uniform" => SamplingMode::Uniform,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected proportional or uniform, got {value:?}"
                        )))
                    }
                }
            }
            "trainer.batch_size" => self.trainer.batch_size = int(value)?,
            "trainer.lr" => self.trainer.lr = real(value)?,
            "trainer.clip_norm" => self.trainer.clip_norm = real(value)?,
            "trainer.patience" => self.trainer.patience = int(value)?,
            "trainer.eval_interval" => self.trainer.eval_interval = int(value)?,
            "trainer.max_updates" => self.trainer.max_updates = int(value)?,
            "probe.checkpoint" => match value {
                "best" | "final" => self.probe_checkpoint = value.into(),
                _ => {
                    return Err(Error::Config(format!(
                        "{key}: expected best or final, got {value:?}"
                    )))
                }
            },
            _ => {
                let parts: Vec<&str> = key.split('.').collect();
                match parts.as_slice() {
                    ["data", task, split] => {
                        let t = Task::parse(task)
                            .ok_or_else(|| Error::Config(format!("{key}: unknown task {task:?}")))?;
                        let paths = self.data.for_task_mut(t);
                        let slot = match *split {
                            "train" => &mut paths.train,
                            "dev" => &mut paths.dev,
                            "test" => &mut paths.test,
                            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                        };
                        *slot = opt_path(value);
                    }
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
            }
        }
        Ok(())
    }

    /// Field-level checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("tasks: at least one task is required".into()));
        }
        for t in self.tasks.iter().filter(|t| t.is_tagging()) {
            if !self.order.contains(t) {
                return Err(Error::Config(format!("order: task {t} is configured but not ordered")));
            }
        }
        if let Some(t) = self.order.iter().find(|t| !t.is_tagging()) {
            return Err(Error::Config(format!("order: only ner and emd can be ordered, found {t}")));
        }
        if self.gold_mentions && !self.tasks.contains(&Task::Cr) {
            return Err(Error::Config(
                "gold_mentions: requires the coreference task".into(),
            ));
        }
        if self.data.synthetic_docs == 0 {
            for &t in &self.tasks {
                if self.data.train_path(t).is_none() {
                    return Err(Error::Config(format!(
                        "data.train: no training data for task {t} (set data.train, data.{t}.train or data.synthetic_docs)"
                    )));
                }
            }
        }
        if !self.embed.word && !self.embed.chars && !self.embed.context {
            return Err(Error::Config(
                "embed: at least one of embed.word, embed.chars, embed.context must be on".into(),
            ));
        }
        if self.embed.word && self.embed.word_vectors.is_none() && self.embed.word_dim == 0 {
            return Err(Error::Config("embed.word_dim: must be positive".into()));
        }
        if self.embed.chars
            && (self.embed.char_cnn.char_dim == 0
                || self.embed.char_cnn.filters_per_width == 0
                || self.embed.char_cnn.widths.is_empty()
                || self.embed.char_cnn.widths.contains(&0))
        {
            return Err(Error::Config(
                "embed.char_*: char_dim, char_filters and every char width must be positive".into(),
            ));
        }
        if self.embed.context && self.embed.context_dim == 0 {
            return Err(Error::Config("embed.context_dim: must be positive".into()));
        }
        if self.encoder.hidden == 0 || self.encoder.layers == 0 {
            return Err(Error::Config("encoder.hidden and encoder.layers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.encoder.dropout) {
            return Err(Error::Config("encoder.dropout must be in [0, 1)".into()));
        }
        self.coref.validate()?;
        self.relation.validate()?;
        let tr = &self.trainer;
        if tr.batch_size == 0 {
            return Err(Error::Config("trainer.batch_size: must be positive".into()));
        }
        if !(tr.lr > 0.0 && tr.lr.is_finite()) {
            return Err(Error::Config("trainer.lr: must be a positive number".into()));
        }
        if !(tr.clip_norm >= 0.0 && tr.clip_norm.is_finite()) {
            return Err(Error::Config("trainer.clip_norm: must be non-negative".into()));
        }
        if tr.max_updates == 0 {
            return Err(Error::Config("trainer.max_updates: must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("setup".into(), show_opt(&self.setup)),
            ("tasks".into(), show_tasks(&self.tasks)),
            ("order".into(), show_tasks(&self.order)),
            ("gold_mentions".into(), show(self.gold_mentions)),
            ("seed".into(), show(self.seed)),
            ("data.train".into(), show_opt(&self.data.shared.train)),
            ("data.dev".into(), show_opt(&self.data.shared.dev)),
            ("data.test".into(), show_opt(&self.data.shared.test)),
        ];
        for t in Task::ALL {
            let p = self.data.for_task(t);
            for (split, v) in [("train", &p.train), ("dev", &p.dev), ("test", &p.test)] {
                if v.is_some() {
                    out.push((format!("data.{t}.{split}"), show_opt(v)));
                }
            }
        }
        let e = &self.embed;
        let widths = e
            .char_cnn
            .widths
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        out.extend([
            ("data.synthetic_docs".into(), show(self.data.synthetic_docs)),
            ("embed.word".into(), show(e.word)),
            ("embed.word_dim".into(), show(e.word_dim)),
            ("embed.word_vectors".into(), show_opt(&e.word_vectors)),
            ("embed.word_trainable".into(), show(e.word_trainable)),
            ("embed.chars".into(), show(e.chars)),
            ("embed.char_dim".into(), show(e.char_cnn.char_dim)),
            ("embed.char_widths".into(), widths),
            ("embed.char_filters".into(), show(e.char_cnn.filters_per_width)),
            ("embed.context".into(), show(e.context)),
            ("embed.context_dim".into(), show(e.context_dim)),
            ("embed.context_cache".into(), show_opt(&e.context_cache)),
            ("encoder.hidden".into(), show(self.encoder.hidden)),
            ("encoder.layers".into(), show(self.encoder.layers)),
            ("encoder.dropout".into(), show(self.encoder.dropout)),
            ("crf.mask_invalid".into(), show(self.crf_mask_invalid)),
            ("coref.max_width".into(), show(self.coref.max_width)),
            ("coref.ratio".into(), show(self.coref.ratio)),
            ("coref.max_antecedents".into(), show(self.coref.max_antecedents)),
            ("coref.feature_dim".into(), show(self.coref.feature_dim)),
            ("coref.hidden".into(), show(self.coref.hidden)),
            ("coref.dropout".into(), show(self.coref.dropout)),
            ("relation.hidden".into(), show(self.relation.hidden)),
            ("relation.threshold".into(), show(self.relation.threshold)),
            ("trainer.sampling".into(), self.trainer.sampling.as_str().into()),
            ("trainer.batch_size".into(), show(self.trainer.batch_size)),
            ("trainer.lr".into(), show(self.trainer.lr)),
            ("trainer.clip_norm".into(), show(self.trainer.clip_norm)),
            ("trainer.patience".into(), show(self.trainer.patience)),
            ("trainer.eval_interval".into(), show(self.trainer.eval_interval)),
            ("trainer.max_updates".into(), show(self.trainer.max_updates)),
            ("probe.checkpoint".into(), self.probe_checkpoint.clone()),
        ]);
        out
    }

    /// The resolved configuration in the input format. Parsing it back
    /// yields an equal configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            // a setup line would be applied before tasks/order, which follow it
            if k == "setup" && v == "none" {
                continue;
            }
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
