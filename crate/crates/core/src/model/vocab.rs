use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    #[default]
    Char,
    Word,
}

/// Token inventory. Ids 0..4 are pad, begin, end and unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabFile", try_from = "VocabFile")]
pub struct Vocabulary {
    mode: Tokenization,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    mode: Tokenization,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        Self {
            mode: v.mode,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabFile> for Vocabulary {
    type Error = ModelError;

    fn try_from(f: VocabFile) -> Result<Self, ModelError> {
        Vocabulary::from_tokens(f.mode, f.tokens)
    }
}

fn units(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Char => text.chars().map(String::from).collect(),
        Tokenization::Word => text.split_whitespace().map(String::from).collect(),
    }
}

impl Vocabulary {
    /// Reserved tokens followed by the most frequent units of `corpus`, ties
    /// broken lexicographically, up to `max_size` entries in total.
    pub fn build<S: AsRef<str>>(corpus: &[S], mode: Tokenization, max_size: usize) -> Result<Self, ModelError> {
        if max_size < RESERVED.len() + 1 {
            return Err(ModelError::Vocab(format!(
                "max size {max_size} leaves no room beyond the {} reserved tokens",
                RESERVED.len()
            )));
        }
        if corpus.is_empty() {
            return Err(ModelError::Vocab("empty corpus".into()));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for u in units(text.as_ref(), mode) {
                *counts.entry(u).or_default() += 1;
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .take(max_size)
            .collect();
        Self::from_tokens(mode, tokens)
    }

    pub fn from_tokens(mode: Tokenization, tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(ModelError::Vocab("reserved tokens must come first".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { mode, tokens, index })
    }

    pub fn mode(&self) -> Tokenization {
        self.mode
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        units(text, self.mode)
            .iter()
            .map(|u| self.id(u).unwrap_or(UNK))
            .collect()
    }

    /// Renders ids up to the first end token, dropping pad and begin tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let parts = ids
            .iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]));
        match self.mode {
            Tokenization::Char => parts.collect(),
            Tokenization::Word => parts.collect::<Vec<_>>().join(" "),
        }
    }
}
