//! Dialogue data model, JSONL ingestion, validation and synthetic corpora.
//!
//! A corpus file holds one dialogue per line. Action and attribute names are
//! mapped to class indices through a per-domain [`DomainManifest`].

mod io;
mod synth;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{dialogues_to_jsonl, load_corpus, load_corpus_any, load_corpus_with, write_corpus};
pub use synth::{synth_corpus, synth_corpus_with, SynthStyle};
pub use validate::{check_intent, validate, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Furniture,
    Fashion,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Furniture, Domain::Fashion];

    pub fn n_actions(self) -> usize {
        match self {
            Domain::Furniture => 7,
            Domain::Fashion => 5,
        }
    }

    pub fn n_attributes(self) -> usize {
        match self {
            Domain::Furniture => 60,
            Domain::Fashion => 7,
        }
    }

    /// Fashion attributes are multi-label; furniture attributes are a single class.
    pub fn multi_label_attributes(self) -> bool {
        matches!(self, Domain::Fashion)
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Furniture => "furniture",
            Domain::Fashion => "fashion",
        }
    }

    /// Offset of this domain's actions in the global action-token numbering.
    pub fn action_offset(self) -> usize {
        match self {
            Domain::Furniture => 0,
            Domain::Fashion => Domain::Furniture.n_actions(),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "furniture" => Ok(Domain::Furniture),
            "fashion" => Ok(Domain::Fashion),
            other => Err(Error::InvalidArgument(format!(
                "unknown domain `{other}` (expected furniture or fashion)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisualObject {
    pub object_id: String,
    pub position: String,
    pub colors: Vec<String>,
    pub class_name: String,
    pub decor_styles: Vec<String>,
    /// Attributes beyond the four named ones, rendered in key order.
    pub extra: BTreeMap<String, Vec<String>>,
}

/// One dialog act: an intent such as `DA:ASK:GET:FURNITURE.dimensions` plus slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BeliefFrame {
    pub intent: String,
    pub slots: Vec<(String, String)>,
}

impl BeliefFrame {
    pub fn new(intent: impl Into<String>, slots: &[(&str, &str)]) -> Self {
        Self {
            intent: intent.into(),
            slots: slots
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeLabel {
    /// Furniture: one class out of 60.
    Single(usize),
    /// Fashion: one flag per attribute class.
    Multi(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiAction {
    pub action: usize,
    pub attributes: AttributeLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub user_utterance: String,
    pub system_response: String,
    pub action: ApiAction,
    pub visual: Vec<VisualObject>,
    pub belief: Vec<BeliefFrame>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub domain: Domain,
    pub turns: Vec<Turn>,
}

/// Ordered action and attribute class names for one domain; index = class id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainManifest {
    pub domain: Domain,
    pub actions: Vec<String>,
    pub attributes: Vec<String>,
}

const FURNITURE_MANIFEST: &str = include_str!("../../manifests/furniture.json");
const FASHION_MANIFEST: &str = include_str!("../../manifests/fashion.json");

impl DomainManifest {
    /// The manifest shipped with the crate.
    pub fn builtin(domain: Domain) -> Self {
        let raw = match domain {
            Domain::Furniture => FURNITURE_MANIFEST,
            Domain::Fashion => FASHION_MANIFEST,
        };
        let manifest: DomainManifest =
            serde_json::from_str(raw).expect("builtin manifest is valid JSON");
        manifest.check().expect("builtin manifest is consistent");
        manifest
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DomainManifest = serde_json::from_str(&text)?;
        manifest.check()?;
        Ok(manifest)
    }

    fn check(&self) -> Result<()> {
        let bad = |field: &str, message: String| Error::Config {
            field: field.to_string(),
            message,
        };
        if self.actions.len() != self.domain.n_actions() {
            return Err(bad(
                "actions",
                format!(
                    "{} needs {} action classes, manifest lists {}",
                    self.domain,
                    self.domain.n_actions(),
                    self.actions.len()
                ),
            ));
        }
        if self.attributes.len() != self.domain.n_attributes() {
            return Err(bad(
                "attributes",
                format!(
                    "{} needs {} attribute classes, manifest lists {}",
                    self.domain,
                    self.domain.n_attributes(),
                    self.attributes.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }
}

/// The manifests of both domains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifests {
    pub furniture: DomainManifest,
    pub fashion: DomainManifest,
}

impl Default for Manifests {
    fn default() -> Self {
        Self {
            furniture: DomainManifest::builtin(Domain::Furniture),
            fashion: DomainManifest::builtin(Domain::Fashion),
        }
    }
}

impl Manifests {
    pub fn get(&self, domain: Domain) -> &DomainManifest {
        match domain {
            Domain::Furniture => &self.furniture,
            Domain::Fashion => &self.fashion,
        }
    }
}

/// Mean number of turns per dialogue.
pub fn mean_turns(dialogues: &[Dialogue]) -> f64 {
    if dialogues.is_empty() {
        return 0.0;
    }
    let total: usize = dialogues.iter().map(|d| d.turns.len()).sum();
    total as f64 / dialogues.len() as f64
}
