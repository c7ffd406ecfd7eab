//! Closed whitespace vocabulary with atomic special tokens.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::Dialogue;
use crate::error::{Error, Result};
use crate::serializer::{
    is_special_token, render_example, special_tokens, SerializerConfig, BELIEF_PROMPT,
    SYSTEM_PREFIX, UNK, USER_PREFIX,
};

/// Splits text on whitespace, cutting special tokens out of the surrounding
/// text so `word<EOB>` yields `word` and `<EOB>`.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        'scan: while !rest.is_empty() {
            let mut from = 0;
            while let Some(open) = rest[from..].find('<').map(|i| i + from) {
                if let Some(close) = rest[open..].find('>').map(|i| i + open) {
                    if is_special_token(&rest[open..=close]) {
                        if open > 0 {
                            out.push(&rest[..open]);
                        }
                        out.push(&rest[open..=close]);
                        rest = &rest[close + 1..];
                        continue 'scan;
                    }
                }
                from = open + 1;
            }
            out.push(rest);
            break;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_special: usize,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = special_tokens();
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(Error::Config {
                field: "vocab".into(),
                message: "vocabulary must start with the special tokens in declaration order"
                    .into(),
            });
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config {
                    field: format!("vocab[{i}]"),
                    message: format!("duplicate token `{t}`"),
                });
            }
        }
        Ok(Self {
            n_special: specials.len(),
            tokens,
            index,
        })
    }

    /// Specials, then role and prompt words, then corpus words in first-occurrence order.
    pub fn build<C: AsRef<[Dialogue]>>(corpora: &[C], cfg: &SerializerConfig) -> Result<Self> {
        if corpora.iter().all(|c| c.as_ref().is_empty()) {
            return Err(Error::InvalidArgument(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut tokens = special_tokens();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut add = |tok: &str, tokens: &mut Vec<String>| {
            if seen.insert(tok.to_string()) {
                tokens.push(tok.to_string());
            }
        };
        for fixed in [SYSTEM_PREFIX, USER_PREFIX, BELIEF_PROMPT] {
            for tok in split_tokens(fixed) {
                add(tok, &mut tokens);
            }
        }
        for corpus in corpora {
            for dialogue in corpus.as_ref() {
                for t in 0..dialogue.turns.len() {
                    let rendered = render_example(dialogue, t, cfg)?;
                    for tok in &rendered.tokens {
                        add(tok, &mut tokens);
                    }
                }
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.index[UNK]
    }

    pub fn n_special(&self) -> usize {
        self.n_special
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.n_special
    }

    /// Id of a single token, `unk_id` when unknown.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or_else(|| self.unk_id())
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text).into_iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.tokens)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_tokens(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
