//! Dual-encoder regressor: a hashed-embedding text encoder and a dense image
//! encoder whose outputs are concatenated and fed to an MLP head.
//!
//! Hidden units use SiLU, `x * sigmoid(x)`. The text encoder averages the
//! embedding rows of the token ids and applies one dense layer; the image
//! encoder flattens the (C, H, W) tensor through `image_hidden_dims` and a
//! final layer of width `image_embed_dim`. Items without a picture use a
//! learned placeholder embedding (or zeros, see [`MissingImage`]).

mod forward;
mod schedule;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use self::forward::{silu, silu_grad, BatchGradient};
pub use self::schedule::{clip_gradients, global_norm, lr_at, warmup_steps};
pub use self::train::{
    predict_items, train, train_with, Checkpoint, EarlyStopping, EpochEval, EpochRecord, StopVerdict, TrainConfig,
    TrainOutcome,
};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingImage {
    #[default]
    Learned,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutScope {
    /// After every hidden activation of the head.
    #[default]
    Head,
    /// Also on the fused encoder output.
    HeadAndFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub text_embed_dim: usize,
    /// (channels, height, width)
    pub image_input: [usize; 3],
    pub image_hidden_dims: Vec<usize>,
    pub image_embed_dim: usize,
    pub head_hidden_dims: Vec<usize>,
    pub dropout: f64,
    pub dropout_scope: DropoutScope,
    pub missing_image: MissingImage,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::corpus::DEFAULT_VOCAB_SIZE,
            text_embed_dim: 16,
            image_input: [3, 32, 32],
            image_hidden_dims: Vec::new(),
            image_embed_dim: 8,
            head_hidden_dims: vec![16],
            dropout: 0.1,
            dropout_scope: DropoutScope::Head,
            missing_image: MissingImage::Learned,
            delta: crate::loss::DEFAULT_DELTA,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.vocab_size, self.text_embed_dim, self.image_embed_dim]
            .into_iter()
            .chain(self.image_input)
            .chain(self.image_hidden_dims.iter().copied())
            .chain(self.head_hidden_dims.iter().copied());
        if dims.into_iter().any(|d| d == 0) {
            return Err(Error::Config("all model dimensions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        crate::loss::Huber::new(self.delta)?;
        Ok(())
    }

    pub fn image_input_len(&self) -> usize {
        self.image_input.iter().product()
    }

    pub fn fused_dim(&self) -> usize {
        self.text_embed_dim + self.image_embed_dim
    }

    /// (inputs, outputs) of every image encoder layer.
    pub fn image_layer_dims(&self) -> Vec<(usize, usize)> {
        chain_dims(self.image_input_len(), &self.image_hidden_dims, self.image_embed_dim)
    }

    /// (inputs, outputs) of every head layer; the last one has one output.
    pub fn head_layer_dims(&self) -> Vec<(usize, usize)> {
        chain_dims(self.fused_dim(), &self.head_hidden_dims, 1)
    }
}

fn chain_dims(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let widths: Vec<usize> = std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain([output])
        .collect();
    widths.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-limit..limit));
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()),
        );
    }

    fn same_shape(&self, inputs: usize, outputs: usize) -> bool {
        self.inputs == inputs
            && self.outputs == outputs
            && self.weight.len() == inputs * outputs
            && self.bias.len() == outputs
    }
}

/// Every learned value of the model. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// `vocab_size x text_embed_dim`, row-major.
    pub embedding: Vec<f64>,
    pub text_proj: Dense,
    pub image_layers: Vec<Dense>,
    pub placeholder: Vec<f64>,
    pub head: Vec<Dense>,
}

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.text_embed_dim;
        Self {
            embedding: vec![0.0; config.vocab_size * d],
            text_proj: Dense::zeros(d, d),
            image_layers: config
                .image_layer_dims()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
            placeholder: vec![0.0; config.image_embed_dim],
            head: config
                .head_layer_dims()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    /// Seeded initialisation: embeddings ~ N(0, 0.5^2), dense layers
    /// Glorot-uniform, biases and placeholder zero.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = rng::stream(config.seed, "init");
        let normal = Normal::new(0.0, 0.5).expect("valid std");
        let d = config.text_embed_dim;
        let embedding = (0..config.vocab_size * d).map(|_| normal.sample(&mut rng)).collect();
        let text_proj = Dense::glorot(d, d, &mut rng);
        let image_layers = config
            .image_layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        let head = config
            .head_layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        Self {
            embedding,
            text_proj,
            image_layers,
            placeholder: vec![0.0; config.image_embed_dim],
            head,
        }
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.text_embed_dim;
        let layers_match = |layers: &[Dense], dims: Vec<(usize, usize)>| {
            layers.len() == dims.len() && layers.iter().zip(dims).all(|(l, (i, o))| l.same_shape(i, o))
        };
        let ok = self.embedding.len() == config.vocab_size * d
            && self.text_proj.same_shape(d, d)
            && layers_match(&self.image_layers, config.image_layer_dims())
            && self.placeholder.len() == config.image_embed_dim
            && layers_match(&self.head, config.head_layer_dims());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: "parameters matching the model config".into(),
                actual: "mismatched tensor sizes".into(),
            })
        }
    }

    /// Named flat views over every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("embedding".into(), &self.embedding),
            ("text_proj.weight".into(), &self.text_proj.weight),
            ("text_proj.bias".into(), &self.text_proj.bias),
        ];
        for (k, l) in self.image_layers.iter().enumerate() {
            out.push((format!("image.{k}.weight"), &l.weight));
            out.push((format!("image.{k}.bias"), &l.bias));
        }
        out.push(("placeholder".into(), &self.placeholder));
        for (k, l) in self.head.iter().enumerate() {
            out.push((format!("head.{k}.weight"), &l.weight));
            out.push((format!("head.{k}.bias"), &l.bias));
        }
        out
    }

    /// Mutable views in the same order as [`Parameters::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            &mut self.embedding,
            &mut self.text_proj.weight,
            &mut self.text_proj.bias,
        ];
        for l in &mut self.image_layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.placeholder);
        for l in &mut self.head {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Parameters) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += alpha * s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = Parameters::init(&config);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }
}
