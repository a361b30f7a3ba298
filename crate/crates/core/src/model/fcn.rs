//! Character embedding and the fully-convolutional word encoder.

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Looks up the embedding of every character of one word and arranges them
/// as a `1 × embed_dim × word_len` image, column `t` holding character `t`.
pub fn embed_word<T: Scalar>(g: &mut Graph<T>, embedding: Var, ids: &[u8]) -> Result<Var> {
    let ids: Vec<usize> = ids.iter().map(|&c| c as usize).collect();
    let image = g.embedding(embedding, &ids, ids.len())?;
    let dim = g.shape(image)[2];
    g.reshape(image, vec![1, dim, ids.len()])
}

/// Runs the FCN stack on `[N × C × H × W]` images (or a single `[C × H × W]`
/// image): relu between layers, nothing after the last.
fn fcn_stack<T: Scalar>(g: &mut Graph<T>, config: &ModelConfig, p: &ModelParams<Var>, mut x: Var) -> Result<Var> {
    let last = config.fcn.len() - 1;
    for (i, (spec, layer)) in config.fcn.iter().zip(&p.fcn).enumerate() {
        x = g.conv2d(x, layer.weight, layer.bias, spec.stride)?;
        if i < last {
            x = g.relu(x)?;
        }
    }
    Ok(x)
}

/// Topic vector of one embedded word: the flattened FCN output through a
/// sigmoid, so every component lies in (0, 1).
pub fn word_to_topic<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &ModelParams<Var>,
    image: Var,
) -> Result<Var> {
    let expected = [1, config.embed_dim, config.word_len];
    if g.shape(image) != expected {
        return Err(Error::dim(
            "word_to_topic",
            format!("expected a {expected:?} character image, got {:?}", g.shape(image)),
        ));
    }
    let out = fcn_stack(g, config, p, image)?;
    let flat = g.reshape(out, vec![config.topic_dim()?])?;
    g.sigmoid(flat)
}

/// Topic vectors for consecutive words: `chars` is `[n × word_len]`, the
/// result `[n × topic_dim]`. Each row depends only on its own word.
pub fn word_topics<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &ModelParams<Var>,
    chars: &[u8],
) -> Result<Var> {
    let l = config.word_len;
    if chars.is_empty() || !chars.len().is_multiple_of(l) {
        return Err(Error::dim(
            "word_topics",
            format!("{} character ids do not split into words of {l}", chars.len()),
        ));
    }
    let n = chars.len() / l;
    let ids: Vec<usize> = chars.iter().map(|&c| c as usize).collect();
    let images = g.embedding(p.embedding, &ids, l)?;
    let out = fcn_stack(g, config, p, images)?;
    let flat = g.reshape(out, vec![n, config.topic_dim()?])?;
    g.sigmoid(flat)
}

/// Topic vectors for a whole batch: `chars` is `[B × W × word_len]`, the
/// result `[B × W × topic_dim]`. Padding words get vectors too; masking
/// happens downstream.
pub fn batch_topics<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &ModelParams<Var>,
    chars: &[u8],
    batch: usize,
    words: usize,
) -> Result<Var> {
    if chars.len() != batch * words * config.word_len {
        return Err(Error::dim(
            "batch_topics",
            format!(
                "{} character ids for a {batch}×{words}×{} batch",
                chars.len(),
                config.word_len
            ),
        ));
    }
    let flat = word_topics(g, config, p, chars)?;
    g.reshape(flat, vec![batch, words, config.topic_dim()?])
}
