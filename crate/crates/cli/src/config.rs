//! Run configuration: the model fields plus the pipeline knobs, read from a
//! single flat JSON object.

use asttf_core::{Method, PdOptions};
use asttf_model::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub method: Method,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Code positions kept per example.
    pub max_code_len: usize,
    pub min_freq: usize,
    pub pd_max_path_len: usize,
    pub pd_max_paths: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pd = PdOptions::default();
        Self {
            method: Method::Pot,
            lr: 1e-3,
            steps: 2000,
            batch: 8,
            max_code_len: 512,
            min_freq: 2,
            pd_max_path_len: pd.max_path_len,
            pd_max_paths: pd.max_paths,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
}

const PIPELINE_KEYS: [&str; 8] = [
    "method",
    "lr",
    "steps",
    "batch",
    "max_code_len",
    "min_freq",
    "pd_max_path_len",
    "pd_max_paths",
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let doc: Value = serde_json::from_str(text)?;
        let Value::Object(all) = doc else {
            return Err(CliError::Data("config must be a JSON object".into()));
        };
        let (pipe, model): (Map<String, Value>, Map<String, Value>) =
            all.into_iter().partition(|(k, _)| PIPELINE_KEYS.contains(&k.as_str()));
        let cfg = Self {
            model: serde_json::from_value(Value::Object(model))?,
            pipeline: serde_json::from_value(Value::Object(pipe))?,
        };
        Ok(cfg)
    }

    /// Model fields first, then pipeline fields, as one object.
    pub fn to_json(&self) -> String {
        let mut all = match serde_json::to_value(&self.model).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("ModelConfig is a struct"),
        };
        if let Value::Object(p) = serde_json::to_value(&self.pipeline).expect("config serializes") {
            all.extend(p);
        }
        serde_json::to_string_pretty(&Value::Object(all)).expect("config serializes") + "\n"
    }

    pub fn pd_options(&self) -> PdOptions {
        PdOptions {
            max_path_len: self.pipeline.pd_max_path_len,
            max_paths: self.pipeline.pd_max_paths,
        }
    }

    /// Checks everything that does not depend on the corpus. Vocabulary
    /// sizes are filled in at training time, so they are not checked here.
    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.pipeline;
        if p.batch == 0 || p.max_code_len == 0 {
            return Err(CliError::Data("batch and max_code_len must be at least 1".into()));
        }
        if !(p.lr.is_finite() && p.lr > 0.0) {
            return Err(CliError::Data(format!("lr must be positive, got {}", p.lr)));
        }
        if p.pd_max_path_len < 2 {
            return Err(CliError::Data("pd_max_path_len must be at least 2".into()));
        }
        if self.model.max_summary_len < 2 {
            return Err(CliError::Data("max_summary_len must leave room for BOS and one token".into()));
        }
        let mut probe = self.model.clone();
        probe.code_vocab = probe.code_vocab.max(4);
        probe.summary_vocab = probe.summary_vocab.max(4);
        probe.validate()?;
        Ok(())
    }
}
