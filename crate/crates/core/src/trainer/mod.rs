//! Two-phase training: LM-only epochs, then iterative multi-task epochs
//! where each batch updates the shared model with one sampled task loss.

mod optim;
mod sampler;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Domain};
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, HeadKind, Label, ModelConfig, Objective, Parameters};
use crate::serializer::{build_example, AttributeTarget, SerializedExample, SerializerConfig};
use crate::tokenizer::Vocab;

pub use optim::{adamw_step, lr_schedule, AdamWConfig, OptimizerState};
pub use sampler::{domain_sampler, task_sampler, Batch, DomainSampler, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub lm_epochs: usize,
    pub mt_epochs: usize,
    pub seed: u64,
    pub multi_task: bool,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 8,
            lm_epochs: 6,
            mt_epochs: 20,
            seed: 0,
            multi_task: true,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: format!("train.{field}"),
                message,
            })
        };
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if self.lm_epochs + self.mt_epochs == 0 {
            return bad("mt_epochs", "lm_epochs + mt_epochs must be positive".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm", format!("must be positive, got {c}"));
            }
        }
        self.adamw().check()
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.lm_epochs + self.mt_epochs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Lm,
    MultiTask,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub lm: Option<f64>,
    pub api_action: Option<f64>,
    pub api_attribute: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub steps: u64,
    pub lr_end: f64,
    /// Batches drawn per task, in `TaskKind::ALL` order.
    pub task_batches: [usize; 3],
    pub mean_loss: TaskLosses,
    /// Filled by the epoch observer, typically with a dev-set report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub log: Vec<EpochRecord>,
    pub skipped_examples: usize,
}

/// Serializes every turn, skipping (and counting) those longer than the limit.
pub fn prepare_examples(
    corpus: &[Dialogue],
    cfg: &SerializerConfig,
    vocab: &Vocab,
) -> Result<(Vec<SerializedExample>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for d in corpus {
        for t in 0..d.turns.len() {
            match build_example(d, t, cfg, vocab) {
                Ok(ex) => out.push(ex),
                Err(Error::SequenceTooLong { len, max }) => {
                    log::warn!("skipping {} turn {t}: {len} tokens exceed {max}", d.dialogue_id);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((out, skipped))
}

fn objective_for<'a>(
    ex: &'a SerializedExample,
    task: TaskKind,
    label: &'a mut Label,
    targets: &'a mut Vec<usize>,
) -> Objective<'a> {
    match task {
        TaskKind::Lm => {
            targets.clear();
            targets.extend_from_slice(&ex.tokens[1..]);
            Objective::Lm {
                targets,
                mask: &ex.loss_mask[1..],
            }
        }
        TaskKind::ApiAction => {
            *label = Label::Class(ex.action_label);
            Objective::Classify {
                head: HeadKind::action(ex.domain),
                tap: ex.eob_index,
                label,
            }
        }
        TaskKind::ApiAttribute => {
            *label = match &ex.attribute_label {
                AttributeTarget::Class(c) => Label::Class(*c),
                AttributeTarget::Flags(f) => Label::MultiHot(f.clone()),
            };
            Objective::Classify {
                head: HeadKind::attribute(ex.domain),
                tap: ex.eob_index,
                label,
            }
        }
    }
}

/// Mean loss and mean gradient of one task over one batch.
pub fn batch_loss_and_grad(
    params: &Parameters,
    cfg: &ModelConfig,
    examples: &[&SerializedExample],
    task: TaskKind,
    grads: &mut Parameters,
) -> Result<f64> {
    for (_, mut g) in grads.tensors_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    let mut label = Label::Class(0);
    let mut targets = Vec::new();
    for ex in examples {
        let obj = objective_for(ex, task, &mut label, &mut targets);
        total += loss_and_grad(params, &ex.tokens, &ex.segment_ids, cfg, obj, grads)?;
    }
    let n = examples.len() as f64;
    grads.scale(1.0 / n);
    Ok(total / n)
}

/// Trains on the given corpora without an epoch observer.
pub fn train(
    corpora: &[&[Dialogue]],
    ser: &SerializerConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
) -> Result<TrainOutcome> {
    train_with(corpora, ser, model_cfg, cfg, vocab, &mut |_, _| Ok(()))
}

/// Trains on the given corpora, calling `observer` after every epoch with
/// the epoch record (which it may annotate) and the current parameters.
///
/// With multi-domain on, both domains must be present. With it off, exactly
/// one domain must be present. With multi-task off every epoch is LM-only.
pub fn train_with(
    corpora: &[&[Dialogue]],
    ser: &SerializerConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocab,
    observer: &mut dyn FnMut(&mut EpochRecord, &Parameters) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.check()?;
    ser.check()?;
    model_cfg.check()?;
    if model_cfg.vocab_size != vocab.len() {
        return Err(Error::Config {
            field: "model.vocab_size".into(),
            message: format!("is {} but the vocabulary has {} tokens", model_cfg.vocab_size, vocab.len()),
        });
    }
    if model_cfg.max_seq_len < ser.max_tokens {
        return Err(Error::Config {
            field: "model.max_seq_len".into(),
            message: format!("{} is below serializer.max_tokens {}", model_cfg.max_seq_len, ser.max_tokens),
        });
    }
    if model_cfg.use_segment_embedding != ser.features.segment_embedding {
        return Err(Error::Config {
            field: "model.use_segment_embedding".into(),
            message: "must mirror serializer.features.segment_embedding".into(),
        });
    }

    let mut by_domain: Vec<(Domain, Vec<SerializedExample>)> = Vec::new();
    let mut skipped = 0;
    for domain in Domain::ALL {
        let dialogues: Vec<Dialogue> = corpora
            .iter()
            .flat_map(|c| c.iter())
            .filter(|d| d.domain == domain)
            .cloned()
            .collect();
        if dialogues.is_empty() {
            continue;
        }
        let (examples, s) = prepare_examples(&dialogues, ser, vocab)?;
        skipped += s;
        if !examples.is_empty() {
            by_domain.push((domain, examples));
        }
    }
    match (ser.features.multi_domain, by_domain.len()) {
        (true, 2) | (false, 1) => {}
        (true, _) => {
            return Err(Error::InvalidArgument(
                "multi-domain training needs both a furniture and a fashion corpus".into(),
            ))
        }
        (false, 0) => return Err(Error::InvalidArgument("no trainable examples".into())),
        (false, _) => {
            return Err(Error::InvalidArgument(
                "multi-domain is off: train one domain per model".into(),
            ))
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(1);
    let mut params = Parameters::init(model_cfg, rand::Rng::random(&mut init_rng))?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(2);
    let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    task_rng.set_stream(3);

    let sizes: Vec<(Domain, usize)> = by_domain.iter().map(|(d, e)| (*d, e.len())).collect();
    let sampler = DomainSampler::new(&sizes, cfg.batch_size)?;
    let total_steps = (sampler.batches_per_epoch() * cfg.total_epochs()) as u64;
    let mut state = OptimizerState::new(&params);
    let mut grads = params.zeros_like();
    let mut log = Vec::with_capacity(cfg.total_epochs());
    let adamw = cfg.adamw();

    for epoch in 0..cfg.total_epochs() {
        let phase = if epoch < cfg.lm_epochs || !cfg.multi_task {
            Phase::Lm
        } else {
            Phase::MultiTask
        };
        let mut sums = [0.0f64; 3];
        let mut counts = [0usize; 3];
        let mut lr_t = 0.0;
        for batch in sampler.epoch(&mut batch_rng) {
            let task = match phase {
                Phase::Lm => TaskKind::Lm,
                Phase::MultiTask => task_sampler(epoch - cfg.lm_epochs, cfg.mt_epochs, &mut task_rng),
            };
            let examples = &by_domain
                .iter()
                .find(|(d, _)| *d == batch.domain)
                .expect("sampled domain is present")
                .1;
            let members: Vec<&SerializedExample> = batch.indices.iter().map(|&i| &examples[i]).collect();
            let value = batch_loss_and_grad(&params, model_cfg, &members, task, &mut grads)?;
            if let Some(limit) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            lr_t = lr_schedule(state.t, total_steps, cfg.lr);
            adamw_step(&mut params, &grads, &mut state, lr_t, &adamw)?;
            sums[task.index()] += value;
            counts[task.index()] += 1;
        }
        let mean = |k: TaskKind| (counts[k.index()] > 0).then(|| sums[k.index()] / counts[k.index()] as f64);
        let mut record = EpochRecord {
            epoch,
            phase,
            steps: state.t,
            lr_end: lr_t,
            task_batches: counts,
            mean_loss: TaskLosses {
                lm: mean(TaskKind::Lm),
                api_action: mean(TaskKind::ApiAction),
                api_attribute: mean(TaskKind::ApiAttribute),
            },
            dev: None,
        };
        log::info!(
            "epoch {epoch} {phase:?}: lm {:?} action {:?} attribute {:?}",
            record.mean_loss.lm,
            record.mean_loss.api_action,
            record.mean_loss.api_attribute
        );
        observer(&mut record, &params)?;
        log.push(record);
    }
    Ok(TrainOutcome {
        params,
        log,
        skipped_examples: skipped,
    })
}
