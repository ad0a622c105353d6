use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token table with the unknown token at index 0 and the rest sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(expressions: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = expressions.into_iter().flat_map(tokenize).collect();
        let tokens = std::iter::once(UNKNOWN_TOKEN.to_string()).chain(words.into_iter().filter(|w| w != UNKNOWN_TOKEN)).collect();
        Self::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return Err(Error::Checkpoint(format!("vocabulary must start with {UNKNOWN_TOKEN}")));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Token indices of an expression. Empty expressions are rejected.
    pub fn encode(&self, expression: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> = tokenize(expression).iter().map(|t| self.lookup(t)).collect();
        if ids.is_empty() {
            return Err(Error::Input("empty expression".into()));
        }
        Ok(ids)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
