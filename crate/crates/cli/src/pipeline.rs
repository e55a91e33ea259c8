//! Corpus to model inputs, training runs, evaluation and checkpoints.

use std::fs;
use std::path::Path;

use asttf_core::linearize::{linearize, LinearSeq, Method, PdOptions};
use asttf_core::metrics::{bleu_corpus, meteor_exact, rouge_l, tokenize_summary, EvalPair, MetricError};
use asttf_core::relations::{ClipRadius, RelationSet};
use asttf_core::AstTree;
use asttf_model::{batch_loss, encode, greedy_decode, Model, ModelInput, StepStats, Trainer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::CorpusExample;
use crate::vocab::Vocab;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeOptions {
    pub method: Method,
    pub k_anc: u32,
    pub k_sib: u32,
    pub max_code_len: usize,
    /// Decoder length including BOS; summaries keep one less token.
    pub max_summary_len: usize,
    pub pd: PdOptions,
}

impl EncodeOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            method: cfg.pipeline.method,
            k_anc: cfg.model.k_anc,
            k_sib: cfg.model.k_sib,
            max_code_len: cfg.pipeline.max_code_len,
            max_summary_len: cfg.model.max_summary_len,
            pd: cfg.pd_options(),
        }
    }
}

/// FNV-1a of the example id; seeds path sampling so it does not depend on
/// corpus order.
pub fn example_seed(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Parsed tree and its linearization cut to `max_code_len` positions.
pub fn linearize_example(ex: &CorpusExample, opts: &EncodeOptions) -> Result<(AstTree, LinearSeq), CliError> {
    let tree = ex.tree()?;
    let mut seq = linearize(&tree, opts.method, opts.pd, example_seed(&ex.id)).map_err(|e| CliError::Data(e.to_string()))?;
    seq.truncate(opts.max_code_len);
    Ok((tree, seq))
}

pub fn relation_set(tree: &AstTree, seq: &LinearSeq, opts: &EncodeOptions) -> Result<RelationSet, CliError> {
    RelationSet::build(tree, seq, ClipRadius::Finite(opts.k_anc), ClipRadius::Finite(opts.k_sib))
        .map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabs {
    pub code: Vocab,
    pub summary: Vocab,
}

impl Vocabs {
    pub fn build(corpus: &[CorpusExample], opts: &EncodeOptions, min_freq: usize) -> Result<Self, CliError> {
        let seqs = corpus
            .iter()
            .map(|ex| linearize_example(ex, opts).map(|(_, s)| s))
            .collect::<Result<Vec<_>, _>>()?;
        let summaries: Vec<Vec<String>> = corpus.iter().map(|ex| tokenize_summary(&ex.summary)).collect();
        Ok(Self {
            code: Vocab::build(seqs.iter().map(|s| s.texts()), min_freq)?,
            summary: Vocab::build(summaries.iter().map(|s| s.iter().map(String::as_str)), min_freq)?,
        })
    }
}

pub fn encode_example(ex: &CorpusExample, vocabs: &Vocabs, opts: &EncodeOptions) -> Result<ModelInput, CliError> {
    let (tree, seq) = linearize_example(ex, opts)?;
    let rel = relation_set(&tree, &seq, opts)?;
    let code_ids = vocabs.code.encode(seq.texts());
    let words = tokenize_summary(&ex.summary);
    let keep = words.len().min(opts.max_summary_len - 1);
    let summary_ids = vocabs.summary.encode(words[..keep].iter().map(String::as_str));
    let input = ModelInput::new(code_ids, &rel, summary_ids);
    input.validate()?;
    Ok(input)
}

pub fn encode_corpus(corpus: &[CorpusExample], vocabs: &Vocabs, opts: &EncodeOptions) -> Result<Vec<ModelInput>, CliError> {
    corpus.iter().map(|ex| encode_example(ex, vocabs, opts)).collect()
}

/// Batches of similar code length. Each epoch shuffles, sorts pools of
/// `16 * batch` examples by length, cuts them into batches and shuffles the
/// batch order.
pub fn bucketed_batches(lens: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(16 * batch) {
        pool.sort_by_key(|&i| lens[i]);
        batches.extend(pool.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub vocabs: Vocabs,
    pub config: RunConfig,
    pub losses: Vec<f64>,
}

/// Builds vocabularies, sizes the model to them and runs
/// `cfg.pipeline.steps` Adam steps. `progress` sees every step.
pub fn train(corpus: &[CorpusExample], cfg: &RunConfig, mut progress: impl FnMut(usize, &StepStats)) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let opts = EncodeOptions::from_config(cfg);
    let vocabs = Vocabs::build(corpus, &opts, cfg.pipeline.min_freq)?;
    let inputs = encode_corpus(corpus, &vocabs, &opts)?;
    let mut config = cfg.clone();
    config.model.code_vocab = vocabs.code.len();
    config.model.summary_vocab = vocabs.summary.len();
    let mut trainer = Trainer::new(Model::init(config.model.clone())?, cfg.pipeline.lr);
    let lens: Vec<usize> = inputs.iter().map(ModelInput::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed ^ 0x0ba7_c4e5);
    let mut losses = Vec::with_capacity(cfg.pipeline.steps);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    while losses.len() < cfg.pipeline.steps {
        if queue.is_empty() {
            queue = bucketed_batches(&lens, cfg.pipeline.batch, &mut rng);
            queue.reverse();
        }
        let idx = queue.pop().expect("refilled above");
        let batch: Vec<&ModelInput> = idx.iter().map(|&i| &inputs[i]).collect();
        let stats = trainer.train_step(&batch)?;
        losses.push(stats.loss);
        progress(losses.len(), &stats);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        vocabs,
        config,
        losses,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub bleu: f64,
    pub meteor_exact: f64,
    pub rouge_l: f64,
    pub exact_match: f64,
    /// Token-weighted mean cross-entropy under teacher forcing.
    pub loss: f64,
    pub hypotheses: Vec<String>,
}

/// Metric report as printed by `eval`: percentages with two decimals,
/// loss unscaled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub meteor_exact: f64,
    pub rouge_l: f64,
    pub n_pairs: usize,
    pub exact_match: f64,
    pub loss: f64,
}

fn percent(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

impl EvalResult {
    pub fn report(&self) -> EvalReport {
        EvalReport {
            bleu: percent(self.bleu),
            meteor_exact: percent(self.meteor_exact),
            rouge_l: percent(self.rouge_l),
            n_pairs: self.hypotheses.len(),
            exact_match: percent(self.exact_match),
            loss: self.loss,
        }
    }
}

/// Teacher-forced loss, averaged over every target token in `inputs`.
pub fn corpus_loss(model: &Model, inputs: &[ModelInput], batch: usize) -> Result<f64, CliError> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for chunk in inputs.chunks(batch.max(1)) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        let n: usize = chunk.iter().map(|x| x.summary_ids.len() + 1).sum();
        total += batch_loss(model, &refs)? * n as f64;
        tokens += n;
    }
    Ok(total / tokens as f64)
}

pub fn summarize(model: &Model, vocabs: &Vocabs, input: &ModelInput) -> Result<String, CliError> {
    let memory = encode(model, input)?;
    let ids = greedy_decode(model, &memory, model.config.max_summary_len)?;
    Ok(vocabs.summary.decode(&ids))
}

/// Greedy summaries of every example scored against the raw reference
/// summaries, plus the teacher-forced loss.
pub fn evaluate(model: &Model, vocabs: &Vocabs, corpus: &[CorpusExample], opts: &EncodeOptions, batch: usize) -> Result<EvalResult, CliError> {
    let inputs = encode_corpus(corpus, vocabs, opts)?;
    let loss = corpus_loss(model, &inputs, batch)?;
    let hypotheses = inputs.iter().map(|x| summarize(model, vocabs, x)).collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<EvalPair> = hypotheses.iter().zip(corpus).map(|(h, ex)| EvalPair::new(h, &ex.summary)).collect();
    let exact = pairs.iter().filter(|p| p.hypothesis == p.reference).count();
    let bleu = match bleu_corpus(&pairs, 4) {
        Err(MetricError::EmptyHypotheses) => 0.0,
        other => other?,
    };
    Ok(EvalResult {
        bleu,
        meteor_exact: meteor_exact(&pairs)?,
        rouge_l: rouge_l(&pairs)?,
        exact_match: exact as f64 / pairs.len() as f64,
        loss,
        hypotheses,
    })
}

pub const RUN_FILE: &str = "run.json";
pub const CODE_VOCAB_FILE: &str = "code_vocab.json";
pub const SUMMARY_VOCAB_FILE: &str = "summary_vocab.json";

/// Everything `eval` and `summarize` need, as `(file name, bytes)`.
pub fn checkpoint_files(model: &Model, vocabs: &Vocabs, cfg: &RunConfig) -> Vec<(&'static str, Vec<u8>)> {
    let (mut files, _) = model.checkpoint_files();
    files.push((RUN_FILE, cfg.to_json().into_bytes()));
    files.push((CODE_VOCAB_FILE, vocabs.code.to_json().into_bytes()));
    files.push((SUMMARY_VOCAB_FILE, vocabs.summary.to_json().into_bytes()));
    files
}

pub fn save_checkpoint(dir: &Path, model: &Model, vocabs: &Vocabs, cfg: &RunConfig) -> Result<(), CliError> {
    let files = checkpoint_files(model, vocabs, cfg);
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Vocabs, RunConfig), CliError> {
    let model = Model::load(dir)?;
    let mut cfg = RunConfig::from_json(&crate::read_file(&dir.join(RUN_FILE))?)?;
    cfg.model = model.config.clone();
    let vocabs = Vocabs {
        code: Vocab::from_json(&crate::read_file(&dir.join(CODE_VOCAB_FILE))?)?,
        summary: Vocab::from_json(&crate::read_file(&dir.join(SUMMARY_VOCAB_FILE))?)?,
    };
    if vocabs.code.len() != model.config.code_vocab || vocabs.summary.len() != model.config.summary_vocab {
        return Err(CliError::Data("checkpoint vocabularies do not match the model config".into()));
    }
    Ok((model, vocabs, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use asttf_core::minilang::SizeClass;

    fn opts(method: Method) -> EncodeOptions {
        EncodeOptions {
            method,
            k_anc: 5,
            k_sib: 5,
            max_code_len: 512,
            max_summary_len: 32,
            pd: PdOptions::default(),
        }
    }

    fn void_f() -> (Vec<CorpusExample>, Vocabs) {
        let corpus = vec![CorpusExample::from_source("v", "void f() { }", "does nothing")];
        let vocabs = Vocabs::build(&corpus, &opts(Method::Pot), 1).unwrap();
        (corpus, vocabs)
    }

    #[test]
    fn void_method_pot_input() {
        let (corpus, vocabs) = void_f();
        let x = encode_example(&corpus[0], &vocabs, &opts(Method::Pot)).unwrap();
        assert_eq!(x.code_ids.len(), 3);
        assert!(x.code_ids.iter().all(|&i| i >= 4));
        let anc: Vec<(usize, usize)> = x.anc.iter().map(|p| (p.row, p.col)).collect();
        let sib: Vec<(usize, usize)> = x.sib.iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(anc, [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0), (2, 2)]);
        assert_eq!(sib, [(0, 0), (1, 1), (1, 2), (2, 1), (2, 2)]);
        assert_eq!(vocabs.summary.decode(&x.summary_ids), "does nothing");
    }

    #[test]
    fn void_method_sbt_brackets_are_diagonal_only() {
        let (corpus, _) = void_f();
        let o = opts(Method::Sbt);
        let vocabs = Vocabs::build(&corpus, &o, 1).unwrap();
        let x = encode_example(&corpus[0], &vocabs, &o).unwrap();
        assert_eq!(x.len(), 12);
        let (_, seq) = linearize_example(&corpus[0], &o).unwrap();
        for (i, node) in seq.node_ids().enumerate() {
            if node.is_none() {
                for pairs in [&x.anc, &x.sib] {
                    let touching: Vec<_> = pairs.iter().filter(|p| p.row == i || p.col == i).collect();
                    assert_eq!(touching.len(), 1, "position {i}");
                    assert_eq!((touching[0].row, touching[0].col), (i, i));
                }
            }
        }
    }

    #[test]
    fn over_cap_inputs_stay_valid() {
        let corpus = generate_corpus(4, 1, SizeClass::Medium);
        let mut o = opts(Method::Sbt);
        o.max_code_len = 40;
        o.max_summary_len = 3;
        let vocabs = Vocabs::build(&corpus, &o, 1).unwrap();
        for ex in &corpus {
            let x = encode_example(ex, &vocabs, &o).unwrap();
            assert_eq!(x.len(), 40);
            assert!(x.summary_ids.len() <= 2);
            x.validate().unwrap();
        }
    }

    #[test]
    fn buckets_cover_every_example_once() {
        let lens: Vec<usize> = (0..37).map(|i| (i * 7) % 11).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = bucketed_batches(&lens, 4, &mut rng);
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() <= 4));
        for b in &batches {
            assert!(b.windows(2).all(|w| lens[w[0]] <= lens[w[1]]));
        }
    }

    #[test]
    fn percent_rounds_to_two_decimals() {
        assert_eq!(percent(0.466_449), 46.64);
        assert_eq!(percent(1.0), 100.0);
    }
}
