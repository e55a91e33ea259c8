//! JSON Lines corpora of (code, summary) examples.

use std::fmt::Write as _;

use asttf_core::minilang::{generate, parse_source, SizeClass};
use asttf_core::AstTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// One line of a corpus file. Exactly one of `source` and `ast` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusExample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ast: Option<Value>,
    pub summary: String,
}

impl CorpusExample {
    pub fn from_source(id: impl Into<String>, source: impl Into<String>, summary: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: Some(source.into()),
            ast: None,
            summary: summary.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (&self.source, &self.ast) {
            (Some(_), Some(_)) => return Err("both `source` and `ast` are present".into()),
            (None, None) => return Err("one of `source` or `ast` is required".into()),
            _ => {}
        }
        if self.summary.trim().is_empty() {
            return Err("summary is empty".into());
        }
        Ok(())
    }

    pub fn tree(&self) -> Result<AstTree, CliError> {
        let fail = |msg: String| CliError::Example {
            id: self.id.clone(),
            message: msg,
        };
        match (&self.source, &self.ast) {
            (Some(src), None) => parse_source(src).map_err(|e| fail(e.to_string())),
            (None, Some(doc)) => AstTree::from_json_value(doc).map_err(|e| fail(e.to_string())),
            _ => Err(fail(self.validate().expect_err("exactly one side missing or doubled"))),
        }
    }
}

pub fn parse_jsonl(text: &str) -> Result<Vec<CorpusExample>, CliError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CliError::Corpus { line: k + 1, message };
        let ex: CorpusExample = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        ex.validate().map_err(bad)?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(CliError::EmptyCorpus);
    }
    Ok(out)
}

pub fn read_corpus(path: &std::path::Path) -> Result<Vec<CorpusExample>, CliError> {
    parse_jsonl(&crate::read_file(path)?)
}

pub fn to_jsonl(corpus: &[CorpusExample]) -> String {
    let mut out = String::new();
    for ex in corpus {
        let _ = writeln!(out, "{}", serde_json::to_string(ex).expect("corpus examples serialize"));
    }
    out
}

/// `n` synthetic MiniLang examples. Example `i` draws its own seed from a
/// stream keyed by `seed`, so a corpus of `n` is a prefix of one of `n + 1`.
pub fn generate_corpus(n: usize, seed: u64, size: SizeClass) -> Vec<CorpusExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ex = generate(rng.gen(), size);
            CorpusExample::from_source(format!("ex{i:06}"), ex.source, ex.summary.join(" "))
        })
        .collect()
}
