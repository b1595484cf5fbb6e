#![allow(dead_code)]

use hmtl::RunConfig;

/// Desk-scale settings shared by the training tests: a 50-document synthetic
/// corpus and narrow layers.
pub const DESK: &str = "\
data.synthetic_docs = 50
encoder.hidden = 32
embed.word_dim = 32
embed.char_filters = 10
trainer.patience = 20
trainer.lr = 3e-3
coref.hidden = 32
relation.hidden = 32
";

pub fn desk_config(setup: &str, max_updates: usize, seed: u64) -> RunConfig {
    let text = format!("{DESK}setup = {setup}\ntrainer.max_updates = {max_updates}\nseed = {seed}\n");
    RunConfig::parse(&text).expect("valid desk config")
}

/// Central difference of `f` around the current value of one coordinate.
pub fn central_difference(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// `|a − n| ≤ rel · max(|a|, |n|, 1e-3)`: relative, with a floor so
/// near-zero gradients are compared at an absolute 1e-6.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64) -> bool {
    (analytic - numeric).abs() <= rel * analytic.abs().max(numeric.abs()).max(1e-3)
}
