//! Token ids, reserved tokens and the closed whitespace vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered list of token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `token ⊕ self`.
    pub fn prepend(&self, token: u32) -> Self {
        let mut ids = Vec::with_capacity(self.0.len() + 1);
        ids.push(token);
        ids.extend_from_slice(&self.0);
        Self(ids)
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

impl AsRef<[u32]> for TokenSequence {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

/// Reserved ids shared by every model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: u32,
    pub bos: u32,
    pub eos: u32,
    pub cls: u32,
    pub unk: u32,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self { pad: 0, bos: 1, eos: 2, cls: 3, unk: 4 }
    }
}

impl SpecialTokens {
    pub fn all(&self) -> [u32; 5] {
        [self.pad, self.bos, self.eos, self.cls, self.unk]
    }

    pub const SURFACE: [&'static str; 5] = ["<pad>", "<s>", "</s>", "<cls>", "<unk>"];
}

/// A language and the reserved token that selects it as output language.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageToken {
    pub code: String,
    pub id: u32,
}

/// Surface form of the language-code token for `code`.
pub fn language_surface(code: &str) -> String {
    format!("<2{code}>")
}

/// Bidirectional map between whitespace tokens and ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, unk: u32) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("vocabulary entry {i} is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        if unk as usize >= tokens.len() {
            return Err(Error::Config("unk id outside vocabulary".into()));
        }
        Ok(Self { tokens, index, unk })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace tokenization; unknown tokens map to `unk`. Returns the ids
    /// and the number of unknown tokens.
    pub fn encode(&self, text: &str) -> (TokenSequence, usize) {
        let mut unknown = 0;
        let ids = text
            .split_whitespace()
            .map(|w| {
                self.id(w).unwrap_or_else(|| {
                    unknown += 1;
                    self.unk
                })
            })
            .collect();
        (TokenSequence(ids), unknown)
    }

    /// Joins token surfaces with single spaces, dropping the listed ids.
    pub fn decode(&self, ids: &[u32], skip: &[u32]) -> String {
        ids.iter()
            .filter(|id| !skip.contains(id))
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
