//! The character-to-topic FCN, the BiLSTM attention stage and the residual
//! classifier head, plus model-wide configuration, initialization and
//! parameter counting.

mod check;
mod classifier;
mod fcn;
mod params;
mod recurrent;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::text::{EncodedDocument, ALPHABET_SIZE, WORD_LEN};

pub use check::{model_grad_check, ModelGradCheck, NamedCheck, NOISE_ULPS};
pub use classifier::{classify, residual_block, Classification};
pub use fcn::{batch_topics, embed_word, word_to_topic, word_topics};
pub use params::{
    Affine, AttentionParams, BiLstmParams, HeadParams, LstmParams, ModelParams, ResidualBlockParams,
};
pub use recurrent::{assemble_sentence, attention_weights, bilstm, lstm_step, BiLstmOutput, Sentence};

/// One convolution of the character FCN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alphabet: usize,
    pub embed_dim: usize,
    pub word_len: usize,
    pub fcn: Vec<ConvSpec>,
    pub hidden: usize,
    pub blocks: usize,
    pub bottleneck: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// The reference architecture for `classes` output labels.
    pub fn with_classes(classes: usize) -> Self {
        let embed_dim = 100;
        ModelConfig {
            alphabet: ALPHABET_SIZE,
            embed_dim,
            word_len: WORD_LEN,
            fcn: vec![
                ConvSpec { filters: 10, kernel: (embed_dim, 4), stride: (1, 1) },
                ConvSpec { filters: 20, kernel: (1, 4), stride: (1, 1) },
                ConvSpec { filters: 30, kernel: (1, 4), stride: (1, 2) },
            ],
            hidden: 100,
            blocks: 10,
            bottleneck: 70,
            classes,
        }
    }

    /// Output `(channels, height, width)` after each FCN layer, starting with
    /// the `1 × embed_dim × word_len` input image.
    pub fn fcn_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = (1, self.embed_dim, self.word_len);
        let mut out = vec![shape];
        for (i, layer) in self.fcn.iter().enumerate() {
            let (_, h, w) = shape;
            let (kh, kw) = layer.kernel;
            let (sh, sw) = layer.stride;
            if kh == 0 || kw == 0 || sh == 0 || sw == 0 || layer.filters == 0 {
                return Err(Error::Config(format!("fcn layer {} has a zero size", i + 1)));
            }
            if kh > h || kw > w {
                return Err(Error::Config(format!(
                    "fcn layer {} kernel {kh}x{kw} does not fit its {h}x{w} input",
                    i + 1
                )));
            }
            shape = (layer.filters, (h - kh) / sh + 1, (w - kw) / sw + 1);
            out.push(shape);
        }
        Ok(out)
    }

    /// Dimension of a topic vector: the flattened FCN output.
    pub fn topic_dim(&self) -> Result<usize> {
        let &(c, h, w) = self.fcn_shapes()?.last().expect("at least the input shape");
        Ok(c * h * w)
    }

    pub fn sentence_dim(&self) -> Result<usize> {
        Ok(self.topic_dim()? + 2 * self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alphabet", self.alphabet),
            ("embed_dim", self.embed_dim),
            ("word_len", self.word_len),
            ("hidden", self.hidden),
            ("bottleneck", self.bottleneck),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.alphabet > 256 {
            return Err(Error::Config("alphabet must fit byte ids".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.fcn.is_empty() {
            return Err(Error::Config("fcn needs at least one layer".into()));
        }
        self.topic_dim().map(|_| ())
    }

    /// Shape of every parameter tensor, in canonical order.
    pub fn shapes(&self) -> Result<ModelParams<Vec<usize>>> {
        self.validate()?;
        let (topic, sentence) = (self.topic_dim()?, self.sentence_dim()?);
        let mut in_channels = 1;
        let fcn = self
            .fcn
            .iter()
            .map(|l| {
                let weight = vec![l.filters, in_channels, l.kernel.0, l.kernel.1];
                in_channels = l.filters;
                Affine { weight, bias: vec![l.filters] }
            })
            .collect();
        let h = self.hidden;
        let gate = vec![h, h + topic];
        let lstm = LstmParams {
            w_f: gate.clone(),
            w_i: gate.clone(),
            w_c: gate.clone(),
            w_o: gate,
            b_f: vec![h],
            b_i: vec![h],
            b_c: vec![h],
            b_o: vec![h],
        };
        let block = ResidualBlockParams {
            down_weight: vec![self.bottleneck, sentence],
            down_bias: vec![self.bottleneck],
            up_weight: vec![sentence, self.bottleneck],
            up_bias: vec![sentence],
        };
        Ok(ModelParams {
            embedding: vec![self.alphabet, self.embed_dim],
            fcn,
            bilstm: BiLstmParams { forward: lstm.clone(), backward: lstm },
            attention: AttentionParams { weight: vec![2 * h], bias: vec![1] },
            head: HeadParams {
                blocks: vec![block; self.blocks],
                out: Affine { weight: vec![self.classes, sentence], bias: vec![self.classes] },
            },
        })
    }
}

/// Model stage a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Embedding,
    Fcn,
    Bilstm,
    Attention,
    ResidualBlocks,
    Output,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Embedding,
        Stage::Fcn,
        Stage::Bilstm,
        Stage::Attention,
        Stage::ResidualBlocks,
        Stage::Output,
    ];

    pub fn of(name: &str) -> Option<Stage> {
        let stage = if name == "embedding" {
            Stage::Embedding
        } else if name.starts_with("fcn.") {
            Stage::Fcn
        } else if name.starts_with("bilstm.") {
            Stage::Bilstm
        } else if name.starts_with("attention.") {
            Stage::Attention
        } else if name.starts_with("head.block") {
            Stage::ResidualBlocks
        } else if name.starts_with("head.out") {
            Stage::Output
        } else {
            return None;
        };
        Some(stage)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Embedding => "embedding",
            Stage::Fcn => "fcn",
            Stage::Bilstm => "bilstm",
            Stage::Attention => "attention",
            Stage::ResidualBlocks => "residual_blocks",
            Stage::Output => "output",
        }
    }
}

/// Scalar learnables per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub embedding: usize,
    pub fcn: usize,
    pub bilstm: usize,
    pub attention: usize,
    pub residual_blocks: usize,
    pub output: usize,
}

impl ParamCount {
    /// Tallies `(name, numel)` pairs. Names outside every stage are an error.
    pub fn from_named<'a>(items: impl IntoIterator<Item = (&'a str, usize)>) -> Result<Self> {
        let mut c = ParamCount::default();
        for (name, n) in items {
            let stage = Stage::of(name)
                .ok_or_else(|| Error::Config(format!("parameter {name:?} belongs to no stage")))?;
            *c.get_mut(stage) += n;
        }
        Ok(c)
    }

    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Embedding => self.embedding,
            Stage::Fcn => self.fcn,
            Stage::Bilstm => self.bilstm,
            Stage::Attention => self.attention,
            Stage::ResidualBlocks => self.residual_blocks,
            Stage::Output => self.output,
        }
    }

    fn get_mut(&mut self, stage: Stage) -> &mut usize {
        match stage {
            Stage::Embedding => &mut self.embedding,
            Stage::Fcn => &mut self.fcn,
            Stage::Bilstm => &mut self.bilstm,
            Stage::Attention => &mut self.attention,
            Stage::ResidualBlocks => &mut self.residual_blocks,
            Stage::Output => &mut self.output,
        }
    }

    pub fn total(&self) -> usize {
        Stage::ALL.iter().map(|&s| self.get(s)).sum()
    }
}

/// Counts the learnables of any parameter layout.
pub fn count_params<P>(params: &ModelParams<P>, numel: impl Fn(&P) -> usize) -> ParamCount {
    let named = params.named();
    ParamCount::from_named(named.iter().map(|(n, p)| (n.as_str(), numel(p))))
        .expect("model parameter names always map to a stage")
}

/// Output of one document's forward pass. All vars live in the graph that
/// produced them.
#[derive(Clone, Copy, Debug)]
pub struct DocForward {
    /// `[W × topic_dim]`
    pub topics: Var,
    /// `[W × 2·hidden]`
    pub h: Var,
    /// `[W]`
    pub weights: Var,
    pub sentence: Sentence,
    pub logits: Var,
    pub probs: Var,
}

/// Full forward pass over one document. `chars` is `[W × word_len]` and
/// `mask` marks the real words (a prefix).
pub fn forward_document<T: Scalar>(
    g: &mut Graph<T>,
    config: &ModelConfig,
    p: &ModelParams<Var>,
    chars: &[u8],
    mask: &[bool],
) -> Result<DocForward> {
    if chars.len() != mask.len() * config.word_len {
        return Err(Error::dim(
            "forward_document",
            format!("{} character ids for {} words of {}", chars.len(), mask.len(), config.word_len),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyDocument);
    }
    let topics = word_topics(g, config, p, chars)?;
    let rnn = bilstm(g, &p.bilstm, topics, mask)?;
    let weights = attention_weights(g, &p.attention, rnn.h, mask)?;
    let sentence = assemble_sentence(g, topics, weights, rnn.s_pos)?;
    let Classification { logits, probs } = classify(g, &p.head, sentence.s)?;
    Ok(DocForward {
        topics,
        h: rnn.h,
        weights,
        sentence,
        logits,
        probs,
    })
}

/// Xavier-uniform bound for a weight tensor.
fn xavier_bound(name: &str, shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [o, c, kh, kw] => (c * kh * kw, o * kh * kw),
        [rows, cols] => (*cols, *rows),
        // the attention vector maps 2·hidden inputs to one score
        [n] => (*n, 1),
        _ => panic!("unexpected weight shape {shape:?} for {name}"),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn is_bias(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf == "bias" || leaf.ends_with("_bias") || leaf.starts_with("b_")
}

/// A model: configuration plus parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Tdsm<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Scalar> Tdsm<T> {
    /// Seeded training initialization. Character embeddings are uniform
    /// with unit variance, other weights Xavier-uniform, biases zero except
    /// the forget gate bias of 1. The output layer and the up-projection of
    /// every residual block start at zero, so the head begins as the
    /// identity followed by a uniform prediction.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, true)
    }

    /// Like [`Tdsm::init`] but with every weight drawn at random, so no
    /// gradient is structurally zero. Used by gradient checks.
    pub fn init_dense(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, false)
    }

    fn init_with(config: ModelConfig, seed: u64, zero_head: bool) -> Result<Self> {
        let shapes = config.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes.try_map(&mut |name, shape| {
            let n: usize = shape.iter().product();
            let mut uniform = |a: f64| (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-a..a))).collect();
            let data = if name.ends_with(".b_f") {
                vec![T::one(); n]
            } else if is_bias(name) || (zero_head && (name == "head.out.weight" || name.ends_with(".up_weight"))) {
                vec![T::zero(); n]
            } else if name == "embedding" {
                uniform(3f64.sqrt())
            } else {
                uniform(xavier_bound(name, shape))
            };
            Tensor::new(shape.clone(), data)
        })?;
        Ok(Tdsm { config, params })
    }

    /// Wraps existing tensors after checking them against the configuration.
    pub fn from_params(config: ModelConfig, params: ModelParams<Tensor<T>>) -> Result<Self> {
        let shapes = config.shapes()?;
        let expected = shapes.named();
        for ((name, shape), tensor) in expected.iter().zip(params.leaves()) {
            if tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::Checkpoint(format!("{name} holds non-finite values")));
            }
        }
        Ok(Tdsm { config, params })
    }

    pub fn count_params(&self) -> ParamCount {
        count_params(&self.params, |t| t.numel())
    }

    pub fn cast<U: Scalar>(&self) -> Tdsm<U> {
        Tdsm {
            config: self.config.clone(),
            params: self.params.map(|_, t| t.cast()),
        }
    }

    /// Records every parameter in `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<ModelParams<Var>> {
        self.params.try_map(&mut |_, t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
    }

    /// Class probabilities for the real words of `doc`.
    pub fn predict(&self, doc: &EncodedDocument) -> Result<Vec<T>> {
        if doc.n_words == 0 {
            return Err(Error::EmptyDocument);
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let out = forward_document(&mut g, &self.config, &p, doc.word_rows(), &vec![true; doc.n_words])?;
        Ok(g.value(out.probs).data().to_vec())
    }
}

#[cfg(test)]
mod tests;
