//! Named parameter storage grouped by hierarchy level, with an Adam optimiser.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;
use crate::{Error, Result, Task};

/// The hierarchy group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Embedding,
    Ner,
    Emd,
    Cr,
    Re,
}

impl Group {
    pub fn of_task(task: Task) -> Self {
        match task {
            Task::Ner => Group::Ner,
            Task::Emd => Group::Emd,
            Task::Cr => Group::Cr,
            Task::Re => Group::Re,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Embedding => "embedding",
            Group::Ner => "ner",
            Group::Emd => "emd",
            Group::Cr => "cr",
            Group::Re => "re",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "embedding" => Group::Embedding,
            "ner" => Group::Ner,
            "emd" => Group::Emd,
            "cr" => Group::Cr,
            "re" => Group::Re,
            _ => return None,
        })
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Matrix,
    m: Matrix,
    v: Matrix,
    steps: u64,
}

impl Param {
    pub fn adam_steps(&self) -> u64 {
        self.steps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, group: Group, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.clone(),
            group,
            value,
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            steps: 0,
        });
        self.by_name.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace a parameter's value, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Matrix) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {name}: expected shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// One Adam update restricted to `grads` whose group is in `allowed`.
    /// Parameters without a gradient keep their values and moment estimates.
    /// Returns the pre-clipping global gradient norm.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<ParamId, Matrix>,
        allowed: &[Group],
        cfg: &AdamConfig,
    ) -> f64 {
        let scoped: Vec<(&ParamId, &Matrix)> = grads
            .iter()
            .filter(|(id, _)| allowed.contains(&self.params[id.0].group))
            .collect();
        let norm = scoped.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt();
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        for (id, grad) in scoped {
            let p = &mut self.params[id.0];
            p.steps += 1;
            let t = p.steps as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let value = p.value.data_mut();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for (k, &g) in grad.data().iter().enumerate() {
                let g = g * scale;
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                value[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        norm
    }
}
