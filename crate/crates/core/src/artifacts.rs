//! Training-run directories and the model bundle loaded back from them.
//!
//! A run directory holds `config.json` (resolved configuration), `vocab.json`,
//! `intents.json`, `run.json` (trained domains), `train_log.jsonl` and one
//! `ckpt-{epoch}.bin` per epoch. With a dev corpus, `ckpt-best.bin` holds the
//! epoch with the highest dev joint accuracy.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::corpus::{Dialogue, Domain};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, Parameters};
use crate::serializer::{IntentVocab, SerializerConfig};
use crate::tokenizer::Vocab;
use crate::trainer::{train_with, EpochRecord};

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const INTENTS_FILE: &str = "intents.json";
pub const RUN_FILE: &str = "run.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "ckpt-best.bin";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt-{epoch}.bin")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub domains: Vec<Domain>,
    pub skipped_examples: usize,
}

/// Everything needed to decode: weights plus the configuration and
/// vocabularies they were trained with.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: Parameters,
    pub model: ModelConfig,
    pub serializer: SerializerConfig,
    pub vocab: Vocab,
    pub intents: IntentVocab,
    pub domains: Vec<Domain>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl TrainedModel {
    /// Loads a checkpoint together with the run files next to it.
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let (model, params) = load_checkpoint(checkpoint)?;
        let config = Config::load(&dir.join(CONFIG_FILE))?;
        if config.model != model {
            return Err(Error::Checkpoint(format!(
                "model section of {} does not match the checkpoint header",
                dir.join(CONFIG_FILE).display()
            )));
        }
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        if vocab.len() != model.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} tokens, checkpoint expects {}",
                vocab.len(),
                model.vocab_size
            )));
        }
        let intents = IntentVocab::load(&dir.join(INTENTS_FILE))?;
        let info: RunInfo = read_json(&dir.join(RUN_FILE))?;
        Ok(Self {
            params,
            model,
            serializer: config.serializer,
            vocab,
            intents,
            domains: info.domains,
        })
    }
}

pub struct TrainedRun {
    pub model: TrainedModel,
    pub log: Vec<EpochRecord>,
    pub out_dir: PathBuf,
}

/// Builds the vocabularies, resolves `config`, trains and writes the run
/// directory. A dev corpus is evaluated after every epoch.
pub fn train_to_dir(
    corpora: &[&[Dialogue]],
    mut config: Config,
    out_dir: &Path,
    dev: Option<&[Dialogue]>,
    eval_opts: &EvalOptions,
) -> Result<TrainedRun> {
    let vocab = Vocab::build(corpora, &config.serializer)?;
    let intents = IntentVocab::from_dialogues(corpora.iter().copied());
    config.resolve(vocab.len())?;
    let domains: Vec<Domain> = Domain::ALL
        .into_iter()
        .filter(|d| corpora.iter().any(|c| c.iter().any(|x| x.domain == *d)))
        .collect();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join(CONFIG_FILE), config.to_json()?)
        .map_err(|e| Error::io(out_dir.join(CONFIG_FILE), e))?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    intents.save(&out_dir.join(INTENTS_FILE))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut bundle = TrainedModel {
        params: Parameters::zeros(&config.model),
        model: config.model.clone(),
        serializer: config.serializer,
        vocab,
        intents,
        domains: domains.clone(),
    };
    let mut best_joint = f64::NEG_INFINITY;
    let vocab = bundle.vocab.clone();
    let outcome = {
        let bundle_ref = &mut bundle;
        let mut observer = |record: &mut EpochRecord, params: &Parameters| -> Result<()> {
            let path = out_dir.join(checkpoint_name(record.epoch));
            save_checkpoint(&path, params, &bundle_ref.model)?;
            if let Some(dev) = dev {
                bundle_ref.params = params.clone();
                let report = evaluate(bundle_ref, dev, None, eval_opts)?.report;
                if report.overall.joint_accuracy > best_joint {
                    best_joint = report.overall.joint_accuracy;
                    save_checkpoint(&out_dir.join(BEST_CHECKPOINT), params, &bundle_ref.model)?;
                }
                record.dev = Some(serde_json::to_value(&report)?);
            }
            let line = serde_json::to_string(record)?;
            writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
            Ok(())
        };
        train_with(
            corpora,
            &config.serializer,
            &config.model,
            &config.train,
            &vocab,
            &mut observer,
        )?
    };
    let info = RunInfo {
        domains,
        skipped_examples: outcome.skipped_examples,
    };
    std::fs::write(out_dir.join(RUN_FILE), serde_json::to_string_pretty(&info)?)
        .map_err(|e| Error::io(out_dir.join(RUN_FILE), e))?;
    bundle.params = outcome.params;
    Ok(TrainedRun {
        model: bundle,
        log: outcome.log,
        out_dir: out_dir.to_path_buf(),
    })
}
