use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderKind, ModelConfig, ModelError};

const EMBEDDING_STD: f64 = 0.02;

/// Affine map `x -> x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weight = Array2::from_shape_simple_fn((input, output), &mut draw);
        let bias = Array1::from_shape_simple_fn(output, &mut draw);
        Linear { weight, bias }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(dim),
            bias: Array1::zeros(dim),
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gain: Array1::zeros(dim),
            bias: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

/// Bag-of-tokens baseline: logits are the sum of the rows of `map.weight`
/// selected by the input tokens, plus the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct BowParams {
    pub map: Linear,
}

/// All trainable tensors of a classifier. Values are held in double precision.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Parameters {
    Transformer(TransformerParams),
    LinearBow(BowParams),
}

/// Read-only view of one tensor in manifest order.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Name and shape of every tensor, in the fixed manifest order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    Parameters::zeros(config)
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect()
}

impl Parameters {
    /// Parameters with every entry zero, shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Parameters {
        let (v, d, k) = (config.vocab_size, config.embed_dim, config.num_classes);
        match config.encoder {
            EncoderKind::LinearBow => Parameters::LinearBow(BowParams {
                map: Linear::zeros(v, k),
            }),
            EncoderKind::Transformer => Parameters::Transformer(TransformerParams {
                token_embedding: Array2::zeros((v, d)),
                position_embedding: Array2::zeros((config.max_len, d)),
                layers: (0..config.num_layers)
                    .map(|_| EncoderLayer {
                        attn_norm: LayerNorm::zeros(d),
                        query: Linear::zeros(d, d),
                        key: Linear::zeros(d, d),
                        value: Linear::zeros(d, d),
                        output: Linear::zeros(d, d),
                        ffn_norm: LayerNorm::zeros(d),
                        ffn_in: Linear::zeros(d, config.ffn_dim),
                        ffn_out: Linear::zeros(config.ffn_dim, d),
                    })
                    .collect(),
                final_norm: LayerNorm::zeros(d),
                head: Linear::zeros(d, k),
            }),
        }
    }

    pub fn encoder(&self) -> EncoderKind {
        match self {
            Parameters::Transformer(_) => EncoderKind::Transformer,
            Parameters::LinearBow(_) => EncoderKind::LinearBow,
        }
    }

    /// Mutable views of every tensor in manifest order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        match self {
            Parameters::LinearBow(p) => push_linear_mut(&mut out, "bow", &mut p.map),
            Parameters::Transformer(p) => {
                push_mut(&mut out, "embed.token", &mut p.token_embedding);
                push_mut(&mut out, "embed.position", &mut p.position_embedding);
                for (i, layer) in p.layers.iter_mut().enumerate() {
                    let prefix = format!("layer{i}");
                    push_norm_mut(&mut out, &format!("{prefix}.attn_norm"), &mut layer.attn_norm);
                    push_linear_mut(&mut out, &format!("{prefix}.query"), &mut layer.query);
                    push_linear_mut(&mut out, &format!("{prefix}.key"), &mut layer.key);
                    push_linear_mut(&mut out, &format!("{prefix}.value"), &mut layer.value);
                    push_linear_mut(&mut out, &format!("{prefix}.output"), &mut layer.output);
                    push_norm_mut(&mut out, &format!("{prefix}.ffn_norm"), &mut layer.ffn_norm);
                    push_linear_mut(&mut out, &format!("{prefix}.ffn_in"), &mut layer.ffn_in);
                    push_linear_mut(&mut out, &format!("{prefix}.ffn_out"), &mut layer.ffn_out);
                }
                push_norm_mut(&mut out, "final_norm", &mut p.final_norm);
                push_linear_mut(&mut out, "head", &mut p.head);
            }
        }
        out
    }

    /// Read-only views of every tensor in manifest order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        match self {
            Parameters::LinearBow(p) => push_linear(&mut out, "bow", &p.map),
            Parameters::Transformer(p) => {
                push(&mut out, "embed.token", &p.token_embedding);
                push(&mut out, "embed.position", &p.position_embedding);
                for (i, layer) in p.layers.iter().enumerate() {
                    let prefix = format!("layer{i}");
                    push_norm(&mut out, &format!("{prefix}.attn_norm"), &layer.attn_norm);
                    push_linear(&mut out, &format!("{prefix}.query"), &layer.query);
                    push_linear(&mut out, &format!("{prefix}.key"), &layer.key);
                    push_linear(&mut out, &format!("{prefix}.value"), &layer.value);
                    push_linear(&mut out, &format!("{prefix}.output"), &layer.output);
                    push_norm(&mut out, &format!("{prefix}.ffn_norm"), &layer.ffn_norm);
                    push_linear(&mut out, &format!("{prefix}.ffn_in"), &layer.ffn_in);
                    push_linear(&mut out, &format!("{prefix}.ffn_out"), &layer.ffn_out);
                }
                push_norm(&mut out, "final_norm", &p.final_norm);
                push_linear(&mut out, "head", &p.head);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Sets every entry to zero, keeping shapes.
    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.fill(0.0);
        }
    }

    /// `self += scale * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            debug_assert_eq!(dst.shape, src.shape);
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    /// Rounds every entry to the nearest 32-bit float, the precision models
    /// are stored at.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

fn push<'a, D: ndarray::Dimension>(
    out: &mut Vec<TensorRef<'a>>,
    name: &str,
    a: &'a ndarray::Array<f64, D>,
) {
    out.push(TensorRef {
        name: name.to_string(),
        shape: a.shape().to_vec(),
        data: a.as_slice().expect("standard layout"),
    });
}

fn push_linear<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, lin: &'a Linear) {
    push(out, &format!("{prefix}.weight"), &lin.weight);
    push(out, &format!("{prefix}.bias"), &lin.bias);
}

fn push_norm<'a>(out: &mut Vec<TensorRef<'a>>, prefix: &str, norm: &'a LayerNorm) {
    push(out, &format!("{prefix}.gain"), &norm.gain);
    push(out, &format!("{prefix}.bias"), &norm.bias);
}

fn push_mut<'a, D: ndarray::Dimension>(
    out: &mut Vec<TensorMut<'a>>,
    name: &str,
    a: &'a mut ndarray::Array<f64, D>,
) {
    let shape = a.shape().to_vec();
    out.push(TensorMut {
        name: name.to_string(),
        shape,
        data: a.as_slice_mut().expect("standard layout"),
    });
}

fn push_linear_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, lin: &'a mut Linear) {
    push_mut(out, &format!("{prefix}.weight"), &mut lin.weight);
    push_mut(out, &format!("{prefix}.bias"), &mut lin.bias);
}

fn push_norm_mut<'a>(out: &mut Vec<TensorMut<'a>>, prefix: &str, norm: &'a mut LayerNorm) {
    push_mut(out, &format!("{prefix}.gain"), &mut norm.gain);
    push_mut(out, &format!("{prefix}.bias"), &mut norm.bias);
}

/// Draws fresh parameters: affine maps uniform in +-1/sqrt(fan_in), embeddings
/// normal(0, 0.02), layer norms at identity. Deterministic in `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Parameters, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, d, k) = (config.vocab_size, config.embed_dim, config.num_classes);
    Ok(match config.encoder {
        EncoderKind::LinearBow => Parameters::LinearBow(BowParams {
            map: Linear::init(v, k, &mut rng),
        }),
        EncoderKind::Transformer => {
            let normal = Normal::new(0.0, EMBEDDING_STD).expect("valid std");
            let token_embedding = Array2::from_shape_simple_fn((v, d), || normal.sample(&mut rng));
            let position_embedding =
                Array2::from_shape_simple_fn((config.max_len, d), || normal.sample(&mut rng));
            let layers = (0..config.num_layers)
                .map(|_| EncoderLayer {
                    attn_norm: LayerNorm::new(d),
                    query: Linear::init(d, d, &mut rng),
                    key: Linear::init(d, d, &mut rng),
                    value: Linear::init(d, d, &mut rng),
                    output: Linear::init(d, d, &mut rng),
                    ffn_norm: LayerNorm::new(d),
                    ffn_in: Linear::init(d, config.ffn_dim, &mut rng),
                    ffn_out: Linear::init(config.ffn_dim, d, &mut rng),
                })
                .collect();
            Parameters::Transformer(TransformerParams {
                token_embedding,
                position_embedding,
                layers,
                final_norm: LayerNorm::new(d),
                head: Linear::init(d, k, &mut rng),
            })
        }
    })
}
