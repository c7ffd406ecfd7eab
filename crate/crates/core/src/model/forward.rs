use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{Block, Head, ModelConfig, Parameters, LN_EPS};
use crate::error::{Error, Result};
use crate::serializer::Segment;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Clone, Debug)]
pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    g: &Array1<f64>,
    b: &Array1<f64>,
) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| v * rs);
    }
    let out = &xhat * g + b;
    (out, LnCache { xhat, rstd })
}

/// Row-wise softmax of one vector, max-shifted.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let z = exp.sum();
    exp / z
}

#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    pub ln1: LnCache,
    pub h1: Array2<f64>,
    pub qkv: Array2<f64>,
    /// Attention probabilities per head, zero above the diagonal.
    pub probs: Vec<Array2<f64>>,
    pub attn: Array2<f64>,
    pub ln2: LnCache,
    pub h2: Array2<f64>,
    pub fc_pre: Array2<f64>,
    pub fc_act: Array2<f64>,
}

/// Activations of one forward pass, enough for exact backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub tokens: Vec<usize>,
    pub segments: Vec<Segment>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) lnf: LnCache,
    /// Final hidden states after the last layer norm, `len x d`.
    pub hidden: Array2<f64>,
    /// LM logits `len x V`; absent when produced by [`forward_hidden`].
    pub logits: Option<Array2<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn check_inputs(cfg: &ModelConfig, tokens: &[usize], segments: &[Segment]) -> Result<()> {
    if tokens.len() != segments.len() {
        return Err(Error::Shape(format!(
            "{} tokens but {} segment ids",
            tokens.len(),
            segments.len()
        )));
    }
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

pub(crate) fn embed(
    params: &Parameters,
    cfg: &ModelConfig,
    tokens: &[usize],
    segments: &[Segment],
    offset: usize,
) -> Array2<f64> {
    let d = cfg.model_dim;
    let mut x = Array2::zeros((tokens.len(), d));
    for (p, (mut row, (&tok, &seg))) in x
        .rows_mut()
        .into_iter()
        .zip(tokens.iter().zip(segments))
        .enumerate()
    {
        row.assign(&params.tok_emb.row(tok));
        row += &params.pos_emb.row(offset + p);
        if cfg.use_segment_embedding {
            row += &params.seg_emb.row(seg.index());
        }
    }
    x
}

fn qkv_projection(block: &Block, h: &Array2<f64>) -> Array2<f64> {
    let d = block.b_q.len();
    let mut qkv = h.dot(&block.w_qkv);
    for mut row in qkv.rows_mut() {
        row.slice_mut(s![..d]).zip_mut_with(&block.b_q, |x, &b| *x += b);
        row.slice_mut(s![2 * d..]).zip_mut_with(&block.b_v, |x, &b| *x += b);
    }
    qkv
}

fn block_forward(block: &Block, cfg: &ModelConfig, x: Array2<f64>) -> (Array2<f64>, BlockCache) {
    let n = x.nrows();
    let d = cfg.model_dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let (h1, ln1) = layer_norm(&x, &block.ln1_g, &block.ln1_b);
    let qkv = qkv_projection(block, &h1);
    let mut attn = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut p = q.dot(&k.t());
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let max = row
                .slice(s![..=i])
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
            let mut z = 0.0;
            for (j, val) in row.iter_mut().enumerate() {
                if j <= i {
                    *val = (*val * scale - max).exp();
                    z += *val;
                } else {
                    *val = 0.0;
                }
            }
            row.slice_mut(s![..=i]).mapv_inplace(|v| v / z);
        }
        attn.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
        probs.push(p);
    }
    let mut x_mid = x;
    x_mid += &(attn.dot(&block.w_o) + &block.b_o);
    let (h2, ln2) = layer_norm(&x_mid, &block.ln2_g, &block.ln2_b);
    let fc_pre = h2.dot(&block.w_fc) + &block.b_fc;
    let fc_act = fc_pre.mapv(gelu);
    let mut x_out = x_mid;
    x_out += &(fc_act.dot(&block.w_proj) + &block.b_proj);
    let cache = BlockCache {
        ln1,
        h1,
        qkv,
        probs,
        attn,
        ln2,
        h2,
        fc_pre,
        fc_act,
    };
    (x_out, cache)
}

/// Forward pass up to the final hidden states, without LM logits.
pub fn forward_hidden(
    params: &Parameters,
    tokens: &[usize],
    segments: &[Segment],
    cfg: &ModelConfig,
) -> Result<ForwardCache> {
    check_inputs(cfg, tokens, segments)?;
    let mut x = embed(params, cfg, tokens, segments, 0);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = block_forward(block, cfg, x);
        blocks.push(cache);
        x = next;
    }
    let (hidden, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        segments: segments.to_vec(),
        blocks,
        lnf,
        hidden,
        logits: None,
    })
}

/// Full forward pass with LM logits at every position.
///
/// Attention is strictly causal, so the logits at position `t` depend only
/// on `tokens[..=t]`.
pub fn forward(
    params: &Parameters,
    tokens: &[usize],
    segments: &[Segment],
    cfg: &ModelConfig,
) -> Result<ForwardCache> {
    let mut cache = forward_hidden(params, tokens, segments, cfg)?;
    cache.logits = Some(cache.hidden.dot(&params.tok_emb.t()));
    Ok(cache)
}

/// Intermediate activations of a classifier head.
#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    pub z1: Array1<f64>,
    pub a1: Array1<f64>,
    pub z2: Array1<f64>,
    pub a2: Array1<f64>,
}

pub(crate) fn head_forward(hidden: ArrayView1<f64>, head: &Head) -> (Array1<f64>, HeadCache) {
    let z1 = hidden.dot(&head.w1) + &head.b1;
    let a1 = z1.mapv(|v| v.max(0.0));
    let z2 = a1.dot(&head.w2) + &head.b2;
    let a2 = z2.mapv(|v| v.max(0.0));
    let logits = a2.dot(&head.w3) + &head.b3;
    (logits, HeadCache { z1, a1, z2, a2 })
}

/// `W3 relu(W2 relu(W1 h + b1) + b2) + b3` for one hidden vector.
pub fn classifier_forward(hidden: ArrayView1<f64>, head: &Head) -> Array1<f64> {
    head_forward(hidden, head).0
}

/// Key/value cache for incremental greedy decoding.
pub struct DecodeState<'a> {
    params: &'a Parameters,
    cfg: &'a ModelConfig,
    keys: Vec<Array2<f64>>,
    values: Vec<Array2<f64>>,
    len: usize,
    last_hidden: Option<Array1<f64>>,
}

impl<'a> DecodeState<'a> {
    pub fn new(params: &'a Parameters, cfg: &'a ModelConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            params,
            cfg,
            keys: (0..cfg.n_layers).map(|_| Array2::zeros((0, d))).collect(),
            values: (0..cfg.n_layers).map(|_| Array2::zeros((0, d))).collect(),
            len: 0,
            last_hidden: None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Final hidden state at the most recently fed position.
    pub fn last_hidden(&self) -> Option<ArrayView1<'_, f64>> {
        self.last_hidden.as_ref().map(|h| h.view())
    }

    /// Feeds a chunk of tokens and returns the LM logits at its last position.
    pub fn feed(&mut self, tokens: &[usize], segments: &[Segment]) -> Result<Array1<f64>> {
        check_inputs(self.cfg, tokens, segments)?;
        if self.len + tokens.len() > self.cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.len + tokens.len(),
                max: self.cfg.max_seq_len,
            });
        }
        let cfg = self.cfg;
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let start = self.len;
        let n_new = tokens.len();
        let mut x = embed(self.params, cfg, tokens, segments, start);
        for (l, block) in self.params.blocks.iter().enumerate() {
            let (h1, _) = layer_norm(&x, &block.ln1_g, &block.ln1_b);
            let qkv = qkv_projection(block, &h1);
            let k_all = ndarray::concatenate(
                Axis(0),
                &[self.keys[l].view(), qkv.slice(s![.., d..2 * d])],
            )
            .expect("key widths agree");
            let v_all = ndarray::concatenate(
                Axis(0),
                &[self.values[l].view(), qkv.slice(s![.., 2 * d..])],
            )
            .expect("value widths agree");
            let mut attn = Array2::zeros((n_new, d));
            for h in 0..cfg.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let q = qkv.slice(s![.., cols.clone()]);
                let k = k_all.slice(s![.., cols.clone()]);
                let v = v_all.slice(s![.., cols.clone()]);
                let mut p = q.dot(&k.t());
                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                    let visible = start + i;
                    let max = row
                        .slice(s![..=visible])
                        .fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
                    let mut z = 0.0;
                    for (j, val) in row.iter_mut().enumerate() {
                        if j <= visible {
                            *val = (*val * scale - max).exp();
                            z += *val;
                        } else {
                            *val = 0.0;
                        }
                    }
                    row.mapv_inplace(|v| v / z);
                }
                attn.slice_mut(s![.., cols]).assign(&p.dot(&v));
            }
            self.keys[l] = k_all;
            self.values[l] = v_all;
            x += &(attn.dot(&block.w_o) + &block.b_o);
            let (h2, _) = layer_norm(&x, &block.ln2_g, &block.ln2_b);
            let act = (h2.dot(&block.w_fc) + &block.b_fc).mapv(gelu);
            x += &(act.dot(&block.w_proj) + &block.b_proj);
        }
        let last = x.slice(s![n_new - 1..n_new, ..]).to_owned();
        let (hidden, _) = layer_norm(&last, &self.params.lnf_g, &self.params.lnf_b);
        let hidden = hidden.row(0).to_owned();
        let logits = self.params.tok_emb.dot(&hidden);
        self.len += n_new;
        self.last_hidden = Some(hidden);
        Ok(logits)
    }
}

pub(crate) fn logits_rows(params: &Parameters, hidden: ArrayView2<f64>) -> Array2<f64> {
    hidden.dot(&params.tok_emb.t())
}
