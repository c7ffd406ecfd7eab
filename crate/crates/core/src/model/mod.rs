//! Miniature decoder-only transformer with four classifier heads.
//!
//! Pre-layer-norm blocks with GELU feed-forward of width `4d`, learned
//! positional embeddings, and an LM head tied to the token embedding. The
//! classifier heads read the final hidden state at the `<EOB>` position
//! through a three-layer MLP (`d -> d/2 -> d/4 -> classes`).

mod backward;
mod checkpoint;
mod forward;
mod gradcheck;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};

pub use backward::{
    backward, classification_loss, classification_loss_grad, lm_loss, lm_loss_grad, loss,
    loss_and_grad, Label, Objective,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION};
pub use forward::{classifier_forward, forward, forward_hidden, softmax, DecodeState, ForwardCache};
pub use gradcheck::{grad_check, GradCheckReport, ObjectiveKind};

pub(crate) const LN_EPS: f64 = 1e-5;

/// The four task-oriented predictors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    FurnitureAction,
    FurnitureAttribute,
    FashionAction,
    FashionAttribute,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [
        HeadKind::FurnitureAction,
        HeadKind::FurnitureAttribute,
        HeadKind::FashionAction,
        HeadKind::FashionAttribute,
    ];

    pub fn action(domain: Domain) -> Self {
        match domain {
            Domain::Furniture => HeadKind::FurnitureAction,
            Domain::Fashion => HeadKind::FashionAction,
        }
    }

    pub fn attribute(domain: Domain) -> Self {
        match domain {
            Domain::Furniture => HeadKind::FurnitureAttribute,
            Domain::Fashion => HeadKind::FashionAttribute,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            HeadKind::FurnitureAction => Domain::Furniture.n_actions(),
            HeadKind::FurnitureAttribute => Domain::Furniture.n_attributes(),
            HeadKind::FashionAction => Domain::Fashion.n_actions(),
            HeadKind::FashionAttribute => Domain::Fashion.n_attributes(),
        }
    }

    pub fn multi_label(self) -> bool {
        self == HeadKind::FashionAttribute
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::FurnitureAction => "furniture_action",
            HeadKind::FurnitureAttribute => "furniture_attribute",
            HeadKind::FashionAction => "fashion_action",
            HeadKind::FashionAttribute => "fashion_attribute",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub classes: usize,
}

fn default_heads() -> Vec<HeadSpec> {
    HeadKind::ALL
        .iter()
        .map(|&kind| HeadSpec {
            kind,
            classes: kind.classes(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub use_segment_embedding: bool,
    pub init_std: f64,
    pub heads: Vec<HeadSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            model_dim: 64,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 256,
            use_segment_embedding: true,
            init_std: 0.02,
            heads: default_heads(),
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("model.{field}"),
                message: message.to_string(),
            })
        };
        if self.vocab_size == 0 {
            return bad("vocab_size", "must be positive");
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(4) {
            return bad("model_dim", "must be a positive multiple of 4");
        }
        if self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return bad("n_heads", "must divide model_dim");
        }
        if self.n_layers == 0 {
            return bad("n_layers", "must be positive");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len", "must be positive");
        }
        if self.heads != default_heads() {
            return bad(
                "heads",
                "heads must be furniture_action:7, furniture_attribute:60, fashion_action:5, fashion_attribute:7",
            );
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w_qkv: Array2<f64>,
    /// Query and value biases. A key bias shifts every score in a row equally,
    /// so it cannot change the output and is omitted.
    pub b_q: Array1<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_fc: Array2<f64>,
    pub b_fc: Array1<f64>,
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// All learnable tensors. The LM head has no tensor of its own: it reads `tok_emb`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tok_emb: Array2<f64>,
    pub seg_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub heads: Vec<Head>,
}

impl Parameters {
    /// All-zero tensors except layer-norm gains, which are one.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let z1 = |n| Array1::zeros(n);
        let z2 = |r, c| Array2::zeros((r, c));
        Self {
            tok_emb: z2(cfg.vocab_size, d),
            seg_emb: z2(crate::serializer::Segment::COUNT, d),
            pos_emb: z2(cfg.max_seq_len, d),
            blocks: (0..cfg.n_layers)
                .map(|_| Block {
                    ln1_g: Array1::ones(d),
                    ln1_b: z1(d),
                    w_qkv: z2(d, 3 * d),
                    b_q: z1(d),
                    b_v: z1(d),
                    w_o: z2(d, d),
                    b_o: z1(d),
                    ln2_g: Array1::ones(d),
                    ln2_b: z1(d),
                    w_fc: z2(d, 4 * d),
                    b_fc: z1(4 * d),
                    w_proj: z2(4 * d, d),
                    b_proj: z1(d),
                })
                .collect(),
            lnf_g: Array1::ones(d),
            lnf_b: z1(d),
            heads: HeadKind::ALL
                .iter()
                .map(|k| Head {
                    w1: z2(d, d / 2),
                    b1: z1(d / 2),
                    w2: z2(d / 2, d / 4),
                    b2: z1(d / 4),
                    w3: z2(d / 4, k.classes()),
                    b3: z1(k.classes()),
                })
                .collect(),
        }
    }

    /// Same shapes as `zeros`, every entry zero (layer-norm gains included).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Normal(0, init_std) trunk weights and embeddings, zero biases, unit
    /// gains. Classifier weights are Normal(0, 1/sqrt(fan_in)): at init_std
    /// a three-layer head starts too close to the zero saddle to learn within
    /// the few epochs that train the action task.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.init_std)
            .map_err(|e| Error::Config {
                field: "model.init_std".into(),
                message: e.to_string(),
            })?;
        for (name, mut t) in params.tensors_mut() {
            if is_weight(&name) {
                if name.starts_with("heads.") {
                    let std = 1.0 / (t.shape()[0] as f64).sqrt();
                    t.mapv_inplace(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng));
                } else {
                    t.mapv_inplace(|_| normal.sample(&mut rng));
                }
            }
        }
        Ok(params)
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        &self.heads[kind.index()]
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> &mut Head {
        &mut self.heads[kind.index()]
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view().into_dyn()),
            ("seg_emb".to_string(), self.seg_emb.view().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view().into_dyn()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.extend([
                (p("ln1_g"), b.ln1_g.view().into_dyn()),
                (p("ln1_b"), b.ln1_b.view().into_dyn()),
                (p("w_qkv"), b.w_qkv.view().into_dyn()),
                (p("b_q"), b.b_q.view().into_dyn()),
                (p("b_v"), b.b_v.view().into_dyn()),
                (p("w_o"), b.w_o.view().into_dyn()),
                (p("b_o"), b.b_o.view().into_dyn()),
                (p("ln2_g"), b.ln2_g.view().into_dyn()),
                (p("ln2_b"), b.ln2_b.view().into_dyn()),
                (p("w_fc"), b.w_fc.view().into_dyn()),
                (p("b_fc"), b.b_fc.view().into_dyn()),
                (p("w_proj"), b.w_proj.view().into_dyn()),
                (p("b_proj"), b.b_proj.view().into_dyn()),
            ]);
        }
        out.push(("lnf_g".to_string(), self.lnf_g.view().into_dyn()));
        out.push(("lnf_b".to_string(), self.lnf_b.view().into_dyn()));
        for (kind, h) in HeadKind::ALL.iter().zip(&self.heads) {
            let p = |n: &str| format!("heads.{}.{n}", kind.name());
            out.extend([
                (p("w1"), h.w1.view().into_dyn()),
                (p("b1"), h.b1.view().into_dyn()),
                (p("w2"), h.w2.view().into_dyn()),
                (p("b2"), h.b2.view().into_dyn()),
                (p("w3"), h.w3.view().into_dyn()),
                (p("b3"), h.b3.view().into_dyn()),
            ]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("tok_emb".to_string(), self.tok_emb.view_mut().into_dyn()),
            ("seg_emb".to_string(), self.seg_emb.view_mut().into_dyn()),
            ("pos_emb".to_string(), self.pos_emb.view_mut().into_dyn()),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.extend([
                (p("ln1_g"), b.ln1_g.view_mut().into_dyn()),
                (p("ln1_b"), b.ln1_b.view_mut().into_dyn()),
                (p("w_qkv"), b.w_qkv.view_mut().into_dyn()),
                (p("b_q"), b.b_q.view_mut().into_dyn()),
                (p("b_v"), b.b_v.view_mut().into_dyn()),
                (p("w_o"), b.w_o.view_mut().into_dyn()),
                (p("b_o"), b.b_o.view_mut().into_dyn()),
                (p("ln2_g"), b.ln2_g.view_mut().into_dyn()),
                (p("ln2_b"), b.ln2_b.view_mut().into_dyn()),
                (p("w_fc"), b.w_fc.view_mut().into_dyn()),
                (p("b_fc"), b.b_fc.view_mut().into_dyn()),
                (p("w_proj"), b.w_proj.view_mut().into_dyn()),
                (p("b_proj"), b.b_proj.view_mut().into_dyn()),
            ]);
        }
        out.push(("lnf_g".to_string(), self.lnf_g.view_mut().into_dyn()));
        out.push(("lnf_b".to_string(), self.lnf_b.view_mut().into_dyn()));
        for (kind, h) in HeadKind::ALL.iter().zip(self.heads.iter_mut()) {
            let p = |n: &str| format!("heads.{}.{n}", kind.name());
            out.extend([
                (p("w1"), h.w1.view_mut().into_dyn()),
                (p("b1"), h.b1.view_mut().into_dyn()),
                (p("w2"), h.w2.view_mut().into_dyn()),
                (p("b2"), h.b2.view_mut().into_dyn()),
                (p("w3"), h.w3.view_mut().into_dyn()),
                (p("b3"), h.b3.view_mut().into_dyn()),
            ]);
        }
        out
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, &b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// True when every tensor of `kind`'s head equals the one in `other`.
    pub fn head_eq(&self, other: &Parameters, kind: HeadKind) -> bool {
        self.head(kind) == other.head(kind)
    }
}

/// Weights and embeddings are randomly initialised; biases and layer-norm parameters are not.
fn is_weight(name: &str) -> bool {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    leaf.starts_with("w") || leaf.ends_with("_emb")
}
