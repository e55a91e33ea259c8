//! Frequency-ranked token vocabularies with four reserved ids.

use std::collections::HashMap;

use asttf_model::{BOS, EOS, PAD, UNK};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Display names of the reserved ids. Text that literally spells one of
/// these is an ordinary token and gets its own id.
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    min_freq: usize,
    /// Kept tokens; token `k` has id `k + 4`.
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    min_freq: usize,
    tokens: Vec<String>,
}

impl Vocab {
    /// Keeps tokens seen at least `min_freq` times, most frequent first,
    /// ties in lexicographic order.
    pub fn build<'a, I, S>(sequences: I, min_freq: usize) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for seq in sequences {
            seen_any = true;
            for t in seq {
                *counts.entry(t).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(CliError::EmptyCorpus);
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Ok(Self::from_tokens(min_freq, kept.into_iter().map(|(t, _)| t.to_owned()).collect()))
    }

    fn from_tokens(min_freq: usize, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(k, t)| (t.clone(), k + RESERVED.len())).collect();
        Self { min_freq, tokens, index }
    }

    /// Size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        match id {
            PAD | UNK | BOS | EOS => RESERVED[id],
            _ => self.tokens.get(id - RESERVED.len()).map_or(RESERVED[UNK], String::as_str),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            min_freq: self.min_freq,
            tokens: self.tokens.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let file: VocabFile = serde_json::from_str(text)?;
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = file.tokens.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(CliError::Data(format!("vocabulary lists `{dup}` twice")));
        }
        Ok(Self::from_tokens(file.min_freq, file.tokens))
    }
}
