//! Feed-forward building blocks shared by the task heads.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Matrix;

/// `x·W + b`, with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(
                format!("{prefix}.weight"),
                group,
                Matrix::xavier(input_dim, output_dim, rng),
            ),
            bias: store.add(format!("{prefix}.bias"), group, Matrix::zeros(1, output_dim)),
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = graph.param(store, self.weight);
        let b = graph.param(store, self.bias);
        let y = graph.matmul(x, w);
        graph.add_row(y, b)
    }
}

/// Linear layers with ReLU between them and no activation on the output.
#[derive(Clone, Debug)]
pub struct Ffnn {
    pub layers: Vec<Linear>,
}

impl Ffnn {
    /// `dims` lists the input width, every hidden width and the output width.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an ffnn needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{prefix}.{k}"), group, w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                h = graph.relu(h);
            }
            h = layer.forward(graph, store, h);
        }
        h
    }
}
