//! Per-example forward and backward passes.
//!
//! Only the non-pad tokens of a sequence take part: pad positions are
//! excluded from the attention keys and from the pooled mean, so the outputs at
//! real positions never depend on them. Running on the compacted sequence (with
//! the original position indices) is therefore exact, not an approximation.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerNorm, Linear, TransformerParams};
use super::{ModelConfig, Parameters};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// The real tokens of one sequence and the positions they occupied.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
}

impl TokenSeq {
    pub fn from_ids(ids: &[u32]) -> TokenSeq {
        TokenSeq {
            ids: ids.to_vec(),
            positions: (0..ids.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    norm1: NormCache,
    n1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// attention weights per head, each `[T, T]`
    attn: Vec<Array2<f64>>,
    context: Array2<f64>,
    drop_attn: Option<Array2<f64>>,
    norm2: NormCache,
    n2: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    drop_ffn: Option<Array2<f64>>,
}

/// Intermediate values kept for the backward pass.
pub struct ExampleCache {
    seq: TokenSeq,
    inner: Option<TransformerCache>,
}

struct TransformerCache {
    drop_embed: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
    pooled: Array1<f64>,
}

fn affine(x: &Array2<f64>, lin: &Linear) -> Array2<f64> {
    x.dot(&lin.weight) + &lin.bias
}

fn layer_norm(x: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row *= *s;
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    ln: &LayerNorm,
    grad: &mut LayerNorm,
) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let s = cache.inv_std[i];
        row.assign(&((&g - mean_g - &(&xh * mean_gx)) * s));
    }
    dx
}

fn affine_backward(x: &Array2<f64>, dy: &Array2<f64>, lin: &Linear, grad: &mut Linear) -> Array2<f64> {
    grad.weight += &x.t().dot(dy);
    grad.bias += &dy.sum_axis(Axis(0));
    dy.dot(&lin.weight.t())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    }))
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn row_softmax_in_place(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Logits of one sequence. Dropout is applied iff `dropout` carries a generator.
pub fn forward_example(
    params: &Parameters,
    config: &ModelConfig,
    seq: &TokenSeq,
    dropout: Option<&mut ChaCha8Rng>,
) -> (Array1<f64>, ExampleCache) {
    match params {
        Parameters::LinearBow(p) => {
            let mut logits = p.map.bias.clone();
            for &id in &seq.ids {
                logits += &p.map.weight.row(id as usize);
            }
            (
                logits,
                ExampleCache {
                    seq: seq.clone(),
                    inner: None,
                },
            )
        }
        Parameters::Transformer(p) => {
            let (logits, cache) = transformer_forward(p, config, seq, dropout);
            (
                logits,
                ExampleCache {
                    seq: seq.clone(),
                    inner: Some(cache),
                },
            )
        }
    }
}

fn transformer_forward(
    p: &TransformerParams,
    config: &ModelConfig,
    seq: &TokenSeq,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> (Array1<f64>, TransformerCache) {
    let d = config.embed_dim;
    let heads = config.num_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let t = seq.len();
    let rate = config.dropout_rate;

    let mut x = Array2::zeros((t, d));
    for (i, (&id, &pos)) in seq.ids.iter().zip(&seq.positions).enumerate() {
        let row = &p.token_embedding.row(id as usize) + &p.position_embedding.row(pos);
        x.row_mut(i).assign(&row);
    }
    let drop_embed = dropout_mask((t, d), rate, dropout.as_deref_mut());
    x = apply_mask(x, &drop_embed);

    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (n1, norm1) = layer_norm(&x, &layer.attn_norm);
        let q = affine(&n1, &layer.query);
        let k = affine(&n1, &layer.key);
        let v = affine(&n1, &layer.value);
        let mut context = Array2::zeros((t, d));
        let mut attn = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            row_softmax_in_place(&mut scores);
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }
        let attn_out = affine(&context, &layer.output);
        let drop_attn = dropout_mask((t, d), rate, dropout.as_deref_mut());
        x = x + apply_mask(attn_out, &drop_attn);

        let (n2, norm2) = layer_norm(&x, &layer.ffn_norm);
        let pre_act = affine(&n2, &layer.ffn_in);
        let act = pre_act.mapv(gelu);
        let ffn_out = affine(&act, &layer.ffn_out);
        let drop_ffn = dropout_mask((t, d), rate, dropout.as_deref_mut());
        x = x + apply_mask(ffn_out, &drop_ffn);

        layers.push(LayerCache {
            norm1,
            n1,
            q,
            k,
            v,
            attn,
            context,
            drop_attn,
            norm2,
            n2,
            pre_act,
            act,
            drop_ffn,
        });
    }

    let (xf, final_norm) = layer_norm(&x, &p.final_norm);
    let pooled = if t == 0 {
        Array1::zeros(d)
    } else {
        xf.mean_axis(Axis(0)).expect("non-empty")
    };
    let logits = pooled.dot(&p.head.weight) + &p.head.bias;
    (
        logits,
        TransformerCache {
            drop_embed,
            layers,
            final_norm,
            pooled,
        },
    )
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
pub fn backward_example(
    params: &Parameters,
    config: &ModelConfig,
    cache: &ExampleCache,
    dlogits: ArrayView1<f64>,
    grads: &mut Parameters,
) {
    match (params, grads, &cache.inner) {
        (Parameters::LinearBow(_), Parameters::LinearBow(g), None) => {
            g.map.bias += &dlogits;
            for &id in &cache.seq.ids {
                let mut row = g.map.weight.row_mut(id as usize);
                row += &dlogits;
            }
        }
        (Parameters::Transformer(p), Parameters::Transformer(g), Some(c)) => {
            transformer_backward(p, config, &cache.seq, c, dlogits, g)
        }
        _ => panic!("parameter, gradient and cache kinds disagree"),
    }
}

fn transformer_backward(
    p: &TransformerParams,
    config: &ModelConfig,
    seq: &TokenSeq,
    c: &TransformerCache,
    dlogits: ArrayView1<f64>,
    g: &mut TransformerParams,
) {
    let d = config.embed_dim;
    let heads = config.num_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let t = seq.len();

    g.head.bias += &dlogits;
    for (i, &pi) in c.pooled.iter().enumerate() {
        let mut row = g.head.weight.row_mut(i);
        row.scaled_add(pi, &dlogits);
    }
    if t == 0 {
        return;
    }
    let dpooled = p.head.weight.dot(&dlogits);
    let dxf = Array2::from_shape_fn((t, d), |(_, j)| dpooled[j] / t as f64);
    let mut dx = layer_norm_backward(&dxf, &c.final_norm, &p.final_norm, &mut g.final_norm);

    for ((layer, lc), lg) in p.layers.iter().zip(&c.layers).zip(g.layers.iter_mut()).rev() {
        // feed-forward branch
        let dy = apply_mask(dx.clone(), &lc.drop_ffn);
        let dact = affine_backward(&lc.act, &dy, &layer.ffn_out, &mut lg.ffn_out);
        let dpre = dact * &lc.pre_act.mapv(gelu_grad);
        let dn2 = affine_backward(&lc.n2, &dpre, &layer.ffn_in, &mut lg.ffn_in);
        dx += &layer_norm_backward(&dn2, &lc.norm2, &layer.ffn_norm, &mut lg.ffn_norm);

        // attention branch
        let dout = apply_mask(dx.clone(), &lc.drop_attn);
        let dcontext = affine_backward(&lc.context, &dout, &layer.output, &mut lg.output);
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for (h, a) in lc.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dc = dcontext.slice(cols);
            let da = dc.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dc));
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let ar = a.row(i);
                let dar = da.row(i);
                let inner = ar.dot(&dar);
                ds.row_mut(i).assign(&(&ar * &(&dar - inner)));
            }
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        let mut dn1 = affine_backward(&lc.n1, &dq, &layer.query, &mut lg.query);
        dn1 += &affine_backward(&lc.n1, &dk, &layer.key, &mut lg.key);
        dn1 += &affine_backward(&lc.n1, &dv, &layer.value, &mut lg.value);
        dx += &layer_norm_backward(&dn1, &lc.norm1, &layer.attn_norm, &mut lg.attn_norm);
    }

    let dx0 = apply_mask(dx, &c.drop_embed);
    for (i, (&id, &pos)) in seq.ids.iter().zip(&seq.positions).enumerate() {
        let row = dx0.row(i);
        let mut te = g.token_embedding.row_mut(id as usize);
        te += &row;
        let mut pe = g.position_embedding.row_mut(pos);
        pe += &row;
    }
}
