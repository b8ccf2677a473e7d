//! The two CNN classifiers: event detection over one sentence, and cloze QA
//! over a sentence and a query.
//!
//! Embeddings `W` go through one same-length convolution per window (relu
//! after each) and the outputs are combined by elementwise max into the
//! intermediate representation `I`. In QA mode the query runs through the
//! same convolutions, is max-pooled over positions into `q`, and every row of
//! `I` is multiplied elementwise by `q`. Max-pooling `I` over positions gives
//! `D_seq`, over dimensions gives the decision representation `D_dim`; an
//! affine map of their concatenation gives the logit.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Graph, Tensor};
use crate::data::{Example, PAD_ID};
use crate::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    #[default]
    Event,
    Qa,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub window_sizes: Vec<usize>,
    /// Sentences are truncated or padded to this length.
    pub max_len: usize,
    pub vocab_size: usize,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            window_sizes: vec![3, 5],
            max_len: 16,
            vocab_size: 200,
            mode: Mode::Event,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.embed_dim == 0 || self.max_len == 0 || self.vocab_size < 3 {
            return Err(Error::invalid("embed_dim, max_len must be positive and vocab_size >= 3"));
        }
        if self.window_sizes.is_empty() || self.window_sizes.iter().any(|w| w % 2 == 0) {
            return Err(Error::invalid("window sizes must be a nonempty list of odd integers"));
        }
        Ok(())
    }

    /// Width of the classifier input, `d + n_max`.
    pub fn classifier_width(&self) -> usize {
        self.embed_dim + self.max_len
    }
}

/// Weights of one convolution: `kernel` is `[w, d, d]`, `bias` is `[d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub window: usize,
    pub kernel: Array,
    pub bias: Array,
}

/// All trainable parameters, plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `[vocab, d]`; row 0 is the padding embedding.
    pub embedding: Array,
    pub convs: Vec<ConvParams>,
    /// `[d + n_max]`
    pub classifier_weight: Array,
    /// `[]`
    pub classifier_bias: Array,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
}

impl ModelParams {
    /// Seeded initialization: uniform embeddings with a zero padding row,
    /// Glorot-uniform kernels and classifier weights, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let embedding = embedding_from(&mut rng, config.vocab_size, d);
        let convs = config
            .window_sizes
            .iter()
            .map(|&w| {
                let limit = libm::sqrt(6.0 / ((w * d + d) as f64));
                ConvParams {
                    window: w,
                    kernel: uniform(&mut rng, &[w, d, d], limit),
                    bias: Array::zeros(&[d]),
                }
            })
            .collect();
        let width = config.classifier_width();
        let classifier_weight = uniform(&mut rng, &[width], libm::sqrt(6.0 / (width + 1) as f64));
        Ok(Self {
            embedding,
            convs,
            classifier_weight,
            classifier_bias: Array::scalar(0.0),
        })
    }

    /// Parameters in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Array)> {
        let mut out = vec![(String::from("embedding"), &self.embedding)];
        for c in &self.convs {
            out.push((format!("conv{}.kernel", c.window), &c.kernel));
            out.push((format!("conv{}.bias", c.window), &c.bias));
        }
        out.push((String::from("classifier.weight"), &self.classifier_weight));
        out.push((String::from("classifier.bias"), &self.classifier_bias));
        out
    }

    /// Mutable parameters in the order of [`ModelParams::named`].
    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let mut out = vec![&mut self.embedding];
        for c in &mut self.convs {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    /// Rebuilds parameters from named arrays, checking every shape against
    /// `config`.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Array)>) -> Result<Self, Error> {
        let template = Self::shapes(config)?;
        if tensors.len() != template.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, got {}",
                template.len(),
                tensors.len()
            )));
        }
        let mut arrays = Vec::with_capacity(tensors.len());
        for ((name, array), (want_name, want_shape)) in tensors.into_iter().zip(&template) {
            if &name != want_name || array.shape() != want_shape.as_slice() {
                return Err(Error::invalid(format!(
                    "tensor {name} {:?} does not match expected {want_name} {want_shape:?}",
                    array.shape()
                )));
            }
            arrays.push(array);
        }
        let mut it = arrays.into_iter();
        let embedding = it.next().unwrap();
        let convs = config
            .window_sizes
            .iter()
            .map(|&window| ConvParams {
                window,
                kernel: it.next().unwrap(),
                bias: it.next().unwrap(),
            })
            .collect();
        Ok(Self {
            embedding,
            convs,
            classifier_weight: it.next().unwrap(),
            classifier_bias: it.next().unwrap(),
        })
    }

    /// Expected names and shapes for `config`.
    pub fn shapes(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>, Error> {
        config.validate()?;
        let d = config.embed_dim;
        let mut out = vec![(String::from("embedding"), vec![config.vocab_size, d])];
        for &w in &config.window_sizes {
            out.push((format!("conv{w}.kernel"), vec![w, d, d]));
            out.push((format!("conv{w}.bias"), vec![d]));
        }
        out.push((String::from("classifier.weight"), vec![config.classifier_width()]));
        out.push((String::from("classifier.bias"), vec![]));
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, a)| a.is_finite())
    }

    /// Registers every parameter as a leaf of `graph`.
    pub fn bind(&self, graph: &Graph) -> BoundParams {
        BoundParams {
            embedding: graph.leaf(self.embedding.clone()),
            convs: self
                .convs
                .iter()
                .map(|c| (graph.leaf(c.kernel.clone()), graph.leaf(c.bias.clone())))
                .collect(),
            classifier_weight: graph.leaf(self.classifier_weight.clone()),
            classifier_bias: graph.leaf(self.classifier_bias.clone()),
        }
    }
}

pub(crate) const EMBED_INIT: f64 = 0.25;

fn embedding_from(rng: &mut ChaCha8Rng, vocab_size: usize, dim: usize) -> Array {
    let mut embedding = uniform(rng, &[vocab_size, dim], EMBED_INIT);
    embedding.data_mut()[..dim].fill(0.0);
    embedding
}

/// The embedding table [`ModelParams::init`] would draw for `seed`: uniform
/// rows with a zero padding row. Used for rows a pretrained file does not
/// cover.
pub fn init_embedding(vocab_size: usize, dim: usize, seed: u64) -> Array {
    embedding_from(&mut ChaCha8Rng::seed_from_u64(seed), vocab_size, dim)
}

/// Parameters as graph leaves, in the order of [`ModelParams::named`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub embedding: Tensor,
    pub convs: Vec<(Tensor, Tensor)>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Tensor,
}

impl BoundParams {
    pub fn leaves(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embedding];
        for (k, b) in &self.convs {
            out.push(k);
            out.push(b);
        }
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out
    }

    /// Inverse of [`BoundParams::leaves`] for a model with `windows` convolutions.
    pub fn from_leaves(leaves: &[Tensor], windows: usize) -> BoundParams {
        assert_eq!(leaves.len(), 2 * windows + 3, "one tensor per parameter");
        BoundParams {
            embedding: leaves[0].clone(),
            convs: (0..windows)
                .map(|i| (leaves[1 + 2 * i].clone(), leaves[2 + 2 * i].clone()))
                .collect(),
            classifier_weight: leaves[2 * windows + 1].clone(),
            classifier_bias: leaves[2 * windows + 2].clone(),
        }
    }
}

/// Every representation of one forward pass, all connected to `logit`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `W`: `[n_max, d]`
    pub word: Tensor,
    /// `I`: `[n_max, d]`
    pub intermediate: Tensor,
    /// `D_seq`: `[d]`
    pub seq_pool: Tensor,
    /// `D_dim`: `[n_max]`
    pub decision: Tensor,
    /// `q`: `[d]`, QA mode only.
    pub query: Option<Tensor>,
    /// Pre-sigmoid positive-class score, shape `[]`.
    pub logit: Tensor,
    /// Real (unpadded, truncated) sentence length.
    pub length: usize,
}

/// Looks up embeddings for `tokens`, truncated or padded with the padding id
/// to `rows` rows.
fn lookup(tokens: &[u32], rows: usize, params: &BoundParams, config: &ModelConfig) -> Result<Tensor, Error> {
    let d = config.embed_dim;
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for vocabulary of {}",
            config.vocab_size
        )));
    }
    let index: Vec<usize> = (0..rows)
        .flat_map(|i| {
            let id = tokens.get(i).copied().unwrap_or(PAD_ID) as usize;
            (0..d).map(move |a| id * d + a)
        })
        .collect();
    Ok(params.embedding.gather(Arc::from(index), &[rows, d]))
}

/// Embedding matrix `[n_max, d]` for a token sequence.
pub fn embed(tokens: &[u32], params: &BoundParams, config: &ModelConfig) -> Result<Tensor, Error> {
    lookup(tokens, config.max_len, params, config)
}

fn conv_stack(x: &Tensor, params: &BoundParams) -> Tensor {
    params
        .convs
        .iter()
        .map(|(k, b)| x.conv1d_same(k, b).relu())
        .reduce(|acc, c| acc.maximum(&c))
        .expect("at least one convolution")
}

/// Runs the classifier on one example. `dropout_mask`, when given, scales
/// the classifier input elementwise (shape `[d + n_max]`).
pub fn encode(
    example: &Example,
    params: &BoundParams,
    config: &ModelConfig,
    dropout_mask: Option<&Array>,
) -> Result<ForwardTrace, Error> {
    let n = config.max_len;
    let d = config.embed_dim;
    let query = match (config.mode, &example.query) {
        (Mode::Event, None) => None,
        (Mode::Qa, Some(q)) if !q.is_empty() => Some(q),
        (Mode::Event, Some(_)) => return Err(Error::invalid("event mode takes no query")),
        (Mode::Qa, _) => return Err(Error::invalid("qa mode needs a nonempty query")),
    };

    let word = embed(&example.tokens, params, config)?;
    let mut intermediate = conv_stack(&word, params);
    let query = match query {
        Some(q) => {
            let rows = q.len().min(n);
            let q_emb = lookup(q, rows, params, config)?;
            let pooled = conv_stack(&q_emb, params).maxpool_axis(0);
            let tiled: Vec<usize> = (0..n).flat_map(|_| 0..d).collect();
            intermediate = intermediate.mul(&pooled.gather(Arc::from(tiled), &[n, d]));
            Some(pooled)
        }
        None => None,
    };

    let seq_pool = intermediate.maxpool_axis(0);
    let decision = intermediate.maxpool_axis(1);
    let mut features = seq_pool.concat(&decision);
    if let Some(mask) = dropout_mask {
        assert_eq!(mask.shape(), features.shape(), "dropout mask shape");
        features = features.mul(&Tensor::constant(mask.clone()));
    }
    let logit = features
        .dot(&params.classifier_weight)
        .add(&params.classifier_bias);
    Ok(ForwardTrace {
        word,
        intermediate,
        seq_pool,
        decision,
        query,
        logit,
        length: example.tokens.len().min(n),
    })
}

/// Positive-class probability and the thresholded label (`p >= 0.5`).
pub fn predict(logit: f64) -> (f64, bool) {
    let p = crate::autodiff::sigmoid(logit);
    (p, p >= 0.5)
}

/// Inference-mode logit for one example.
pub fn logit(example: &Example, params: &ModelParams, config: &ModelConfig) -> Result<f64, Error> {
    let graph = Graph::new();
    let bound = params.bind(&graph);
    Ok(encode(example, &bound, config, None)?.logit.item())
}
