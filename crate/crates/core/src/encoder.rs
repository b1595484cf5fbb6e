//! Bidirectional LSTM encoders and the wiring that stacks them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::{Error, Result, Task};

/// One direction of one LSTM layer. Gate order in the packed matrices is
/// input, forget, cell candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    /// `d_in × 4h`
    pub input_weight: ParamId,
    /// `h × 4h`
    pub recurrent_weight: ParamId,
    /// `1 × 4h`
    pub bias: ParamId,
}

impl LstmCell {
    fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut bias = Matrix::zeros(1, 4 * hidden);
        // forget-gate bias starts at 1
        for k in hidden..2 * hidden {
            bias.set(0, k, 1.0);
        }
        Self {
            input_weight: store.add(
                format!("{prefix}.wx"),
                group,
                Matrix::xavier(input_dim, 4 * hidden, rng),
            ),
            recurrent_weight: store.add(
                format!("{prefix}.wh"),
                group,
                Matrix::xavier(hidden, 4 * hidden, rng),
            ),
            bias: store.add(format!("{prefix}.b"), group, bias),
        }
    }

    fn run(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        inputs: Var,
        hidden: usize,
        reverse: bool,
    ) -> Var {
        let n = graph.shape(inputs).0;
        let wx = graph.param(store, self.input_weight);
        let wh = graph.param(store, self.recurrent_weight);
        let b = graph.param(store, self.bias);
        let projected = graph.matmul(inputs, wx);
        let projected = graph.add_row(projected, b);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outputs = vec![None; n];
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let mut gates = graph.slice_rows(projected, t, 1);
            if let Some(hp) = h {
                let rec = graph.matmul(hp, wh);
                gates = graph.add(gates, rec);
            }
            let i = graph.slice_cols(gates, 0, hidden);
            let i = graph.sigmoid(i);
            let f = graph.slice_cols(gates, hidden, hidden);
            let f = graph.sigmoid(f);
            let g = graph.slice_cols(gates, 2 * hidden, hidden);
            let g = graph.tanh(g);
            let o = graph.slice_cols(gates, 3 * hidden, hidden);
            let o = graph.sigmoid(o);
            let ig = graph.mul(i, g);
            let cell = match c {
                Some(cp) => {
                    let fc = graph.mul(f, cp);
                    graph.add(fc, ig)
                }
                None => ig,
            };
            let tc = graph.tanh(cell);
            let hid = graph.mul(o, tc);
            outputs[t] = Some(hid);
            h = Some(hid);
            c = Some(cell);
        }
        let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step ran")).collect();
        graph.concat_rows(&rows)
    }
}

/// A multi-layer bidirectional LSTM whose output row `t` is
/// `[forward state at t ; backward state at t]` of the top layer.
#[derive(Clone, Debug)]
pub struct BiRecurrentEncoder {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: Vec<(LstmCell, LstmCell)>,
    /// Input dropout probability, applied only on training graphs.
    pub dropout: f64,
}

impl BiRecurrentEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 || layers == 0 {
            return Err(Error::Config(format!(
                "{prefix}: encoder needs hidden > 0 and layers > 0"
            )));
        }
        let mut cells = Vec::with_capacity(layers);
        for l in 0..layers {
            let d_in = if l == 0 { input_dim } else { 2 * hidden };
            let fw = LstmCell::new(store, &format!("{prefix}.l{l}.fw"), group, d_in, hidden, rng);
            let bw = LstmCell::new(store, &format!("{prefix}.l{l}.bw"), group, d_in, hidden, rng);
            cells.push((fw, bw));
        }
        Ok(Self {
            input_dim,
            hidden,
            layers: cells,
            dropout: 0.0,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|(f, b)| [f, b])
            .flat_map(|c| [c.input_weight, c.recurrent_weight, c.bias])
            .collect()
    }

    /// Encode an `n × input_dim` matrix into `n × 2h`.
    pub fn encode(&self, graph: &mut Graph, store: &ParamStore, inputs: Var) -> Result<Var> {
        let (n, d) = graph.shape(inputs);
        if d != self.input_dim {
            return Err(Error::Dimension(format!(
                "encoder expects input width {}, got {d}",
                self.input_dim
            )));
        }
        if n == 0 {
            return Err(Error::Dimension("cannot encode an empty sequence".into()));
        }
        let mut x = graph.input_dropout(inputs, self.dropout);
        for (fw, bw) in &self.layers {
            let f = fw.run(graph, store, x, self.hidden, false);
            let b = bw.run(graph, store, x, self.hidden, true);
            x = graph.concat_cols(&[f, b]);
        }
        Ok(x)
    }
}

/// Where an encoder's input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    /// The shared word representation.
    Embedding,
    /// The output of another task's encoder.
    Task(Task),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Embedding => f.write_str("g_e"),
            Source::Task(t) => write!(f, "g_{t}"),
        }
    }
}

/// Task levels, bottom first, and the input concatenation of every encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyWiring {
    levels: Vec<Vec<Task>>,
    inputs: BTreeMap<Task, Vec<Source>>,
}

impl HierarchyWiring {
    /// Check and build an arbitrary wiring.
    pub fn new(levels: Vec<Vec<Task>>, inputs: BTreeMap<Task, Vec<Source>>) -> Result<Self> {
        let mut level_of = BTreeMap::new();
        for (l, tasks) in levels.iter().enumerate() {
            if tasks.is_empty() {
                return Err(Error::Config(format!("hierarchy level {} is empty", l + 1)));
            }
            for &t in tasks {
                if level_of.insert(t, l).is_some() {
                    return Err(Error::Config(format!("task {t} appears twice in the hierarchy")));
                }
            }
        }
        if level_of.is_empty() {
            return Err(Error::Config("hierarchy has no tasks".into()));
        }
        if let (Some(cr), Some(re)) = (level_of.get(&Task::Cr), level_of.get(&Task::Re)) {
            if cr != re {
                return Err(Error::Config("cr and re must share a level".into()));
            }
        }
        for (&task, &lvl) in &level_of {
            let srcs = inputs
                .get(&task)
                .ok_or_else(|| Error::Config(format!("no input wiring for task {task}")))?;
            if srcs.is_empty() {
                return Err(Error::Config(format!("task {task} has an empty input list")));
            }
            for src in srcs {
                if *src == Source::Task(Task::Cr) {
                    return Err(Error::Config(format!(
                        "task {task} reads g_cr, which spans whole documents and cannot feed another encoder"
                    )));
                }
                if let Source::Task(other) = src {
                    match level_of.get(other) {
                        Some(&ol) if ol < lvl => {}
                        Some(_) => {
                            return Err(Error::Config(format!(
                                "task {task} reads g_{other}, which is not at a lower level"
                            )))
                        }
                        None => {
                            return Err(Error::Config(format!(
                                "task {task} reads g_{other}, which is not configured"
                            )))
                        }
                    }
                }
            }
        }
        if inputs.keys().any(|t| !level_of.contains_key(t)) {
            return Err(Error::Config("input wiring names an unconfigured task".into()));
        }
        Ok(Self { levels, inputs })
    }

    /// The stacked wiring: tagging tasks in `order`, one per level, then CR
    /// and RE together on top. Every encoder reads `g_e` plus the output of
    /// the level directly below it.
    pub fn standard(tasks: &[Task], order: &[Task]) -> Result<Self> {
        let configured: BTreeSet<Task> = tasks.iter().copied().collect();
        if configured.is_empty() {
            return Err(Error::Config("no tasks configured".into()));
        }
        if let Some(t) = order.iter().find(|t| !t.is_tagging()) {
            return Err(Error::Config(format!(
                "hierarchy order may only list ner and emd, found {t}"
            )));
        }
        let mut seen = BTreeSet::new();
        if order.iter().any(|t| !seen.insert(*t)) {
            return Err(Error::Config("hierarchy order repeats a task".into()));
        }
        for t in configured.iter().filter(|t| t.is_tagging()) {
            if !order.contains(t) {
                return Err(Error::Config(format!(
                    "task {t} is configured but missing from the hierarchy order"
                )));
            }
        }
        let chain: Vec<Task> = order
            .iter()
            .copied()
            .filter(|t| configured.contains(t))
            .collect();
        let mut levels: Vec<Vec<Task>> = chain.iter().map(|&t| vec![t]).collect();
        let mut inputs = BTreeMap::new();
        for (k, &t) in chain.iter().enumerate() {
            let mut srcs = vec![Source::Embedding];
            if k > 0 {
                srcs.push(Source::Task(chain[k - 1]));
            }
            inputs.insert(t, srcs);
        }
        let top: Vec<Task> = [Task::Cr, Task::Re]
            .into_iter()
            .filter(|t| configured.contains(t))
            .collect();
        for &t in &top {
            let mut srcs = vec![Source::Embedding];
            if let Some(&below) = chain.last() {
                srcs.push(Source::Task(below));
            }
            inputs.insert(t, srcs);
        }
        if !top.is_empty() {
            levels.push(top);
        }
        Self::new(levels, inputs)
    }

    pub fn levels(&self) -> &[Vec<Task>] {
        &self.levels
    }

    pub fn tasks(&self) -> Vec<Task> {
        self.levels.iter().flatten().copied().collect()
    }

    pub fn contains(&self, task: Task) -> bool {
        self.inputs.contains_key(&task)
    }

    /// 1-based level.
    pub fn level_of(&self, task: Task) -> Option<usize> {
        self.levels
            .iter()
            .position(|l| l.contains(&task))
            .map(|l| l + 1)
    }

    pub fn inputs(&self, task: Task) -> &[Source] {
        self.inputs.get(&task).map_or(&[], Vec::as_slice)
    }

    /// Tasks whose encoders feed `task`, directly or transitively.
    pub fn ancestors(&self, task: Task) -> BTreeSet<Task> {
        let mut out = BTreeSet::new();
        let mut stack = vec![task];
        while let Some(t) = stack.pop() {
            for src in self.inputs(t) {
                if let Source::Task(o) = src {
                    if out.insert(*o) {
                        stack.push(*o);
                    }
                }
            }
        }
        out
    }

    /// Parameter groups an update for `task` may change: the task itself,
    /// the levels below it that feed it, and the embeddings.
    pub fn update_scope(&self, task: Task) -> Vec<Group> {
        let mut groups = vec![Group::Embedding, Group::of_task(task)];
        groups.extend(self.ancestors(task).into_iter().map(Group::of_task));
        groups.sort();
        groups.dedup();
        groups
    }
}
