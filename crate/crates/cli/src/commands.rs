//! Subcommands of the `asttf` binary. Each command builds its complete
//! output in memory and writes it only after every input checked out.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use asttf_core::linearize::{LinearRecord, Method};
use asttf_core::minilang::{parse_source, SizeClass};
use asttf_core::relations::sparsity_stats;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{generate_corpus, read_corpus, to_jsonl, CorpusExample};
use crate::diagnostics::{gradcheck_report, random_trees, timing};
use crate::pipeline::{self, encode_example, linearize_example, relation_set, EncodeOptions};
use crate::{read_file, CliError, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "asttf", version, about = "AST-relation transformer for code summarization")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic MiniLang corpus.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "small")]
        size: Size,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse MiniLang into JSON ASTs.
    Parse {
        /// A single source file; prints its AST.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        /// Rewrites every source example of a corpus into AST form.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linearize every example: one {method, tokens, node_ids} line each.
    Linearize {
        #[command(flatten)]
        io: CorpusIo,
        #[arg(long, default_value = "pot")]
        method: Method,
    },
    /// Allowed ancestry and sibling pairs per example.
    Relations {
        #[command(flatten)]
        io: CorpusIo,
        #[command(flatten)]
        rel: RelFlags,
        /// Emit per-example reduction counts instead of the pairs.
        #[arg(long)]
        stats: bool,
    },
    /// Corpus size, sequence length and sparsity summary.
    Stats {
        #[command(flatten)]
        io: CorpusIo,
        #[command(flatten)]
        rel: RelFlags,
    },
    /// Train a model and write a checkpoint directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the loss every this many steps (0 for never).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Score greedy summaries of a corpus against its references.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate summaries with a trained checkpoint.
    Summarize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and of a tiny model.
    Gradcheck,
    /// Wall time of each linearization over random trees.
    Timing {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        min_nodes: usize,
        #[arg(long, default_value_t = 200)]
        max_nodes: usize,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Size {
    Small,
    Medium,
}

#[derive(Debug, Args)]
struct CorpusIo {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RelFlags {
    #[arg(long, default_value = "pot")]
    method: Method,
    #[arg(long, default_value_t = 5)]
    k_anc: u32,
    #[arg(long, default_value_t = 5)]
    k_sib: u32,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Flat JSON of model and pipeline fields; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    k_anc: Option<u32>,
    #[arg(long)]
    k_sib: Option<u32>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_freq: Option<usize>,
}

impl Overrides {
    fn resolve(&self, seed: Option<u64>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json(&read_file(path)?)?,
            None => RunConfig::default(),
        };
        let p = &mut cfg.pipeline;
        if let Some(m) = self.method {
            p.method = m;
        }
        if let Some(v) = self.steps {
            p.steps = v;
        }
        if let Some(v) = self.batch {
            p.batch = v;
        }
        if let Some(v) = self.lr {
            p.lr = v;
        }
        if let Some(v) = self.min_freq {
            p.min_freq = v;
        }
        if let Some(v) = self.k_anc {
            cfg.model.k_anc = v;
        }
        if let Some(v) = self.k_sib {
            cfg.model.k_sib = v;
        }
        if let Some(v) = seed {
            cfg.model.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const DEFAULT_SEED: u64 = 42;

/// Runs one command line (program name first) and returns the exit code.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn json_line(out: &mut String, value: &impl Serialize) {
    let _ = writeln!(out, "{}", serde_json::to_string(value).expect("records serialize"));
}

fn pretty(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn rel_options(rel: &RelFlags) -> EncodeOptions {
    let run = RunConfig::default();
    EncodeOptions {
        method: rel.method,
        k_anc: rel.k_anc,
        k_sib: rel.k_sib,
        ..EncodeOptions::from_config(&run)
    }
}

#[derive(Serialize)]
struct RelationRecord<'a> {
    id: &'a str,
    n: usize,
    /// `[row, col, distance]` triples.
    anc: Vec<[i64; 3]>,
    sib: Vec<[i64; 3]>,
}

#[derive(Serialize)]
struct Summary<'a> {
    id: &'a str,
    summary: String,
}

#[derive(Serialize)]
struct MeanMax {
    mean: f64,
    max: usize,
}

impl MeanMax {
    fn of(xs: impl Iterator<Item = usize>) -> Self {
        let (mut sum, mut n, mut max) = (0usize, 0usize, 0usize);
        for x in xs {
            sum += x;
            n += 1;
            max = max.max(x);
        }
        Self {
            mean: sum as f64 / n.max(1) as f64,
            max,
        }
    }
}

#[derive(Serialize)]
struct CorpusStats {
    examples: usize,
    nodes: MeanMax,
    summary_tokens: MeanMax,
    pot_len: MeanMax,
    sbt_len: MeanMax,
    pd_len: MeanMax,
    method: Method,
    k_anc: u32,
    k_sib: u32,
    /// Mean of `1 - |allowed_anc ∪ allowed_sib| / n^2` over examples.
    mean_reduction: f64,
    min_reduction: f64,
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Gen { n, size, out } => {
            let size = match size {
                Size::Small => SizeClass::Small,
                Size::Medium => SizeClass::Medium,
            };
            let corpus = generate_corpus(n, seed.unwrap_or(DEFAULT_SEED), size);
            emit(out.as_deref(), &to_jsonl(&corpus), stdout)
        }
        Command::Parse { input, corpus, out } => {
            let text = if let Some(path) = input {
                let tree = parse_source(&read_file(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                tree.to_json() + "\n"
            } else {
                let corpus = read_corpus(corpus.as_deref().expect("clap requires one of input or corpus"))?;
                let converted = corpus
                    .into_iter()
                    .map(|ex| {
                        let tree = ex.tree()?;
                        Ok(CorpusExample {
                            source: None,
                            ast: Some(tree.to_json_value()),
                            ..ex
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                to_jsonl(&converted)
            };
            emit(out.as_deref(), &text, stdout)
        }
        Command::Linearize { io, method } => {
            let corpus = read_corpus(&io.corpus)?;
            let opts = EncodeOptions {
                method,
                max_code_len: usize::MAX,
                ..rel_options(&RelFlags { method, k_anc: 5, k_sib: 5 })
            };
            let mut text = String::new();
            for ex in &corpus {
                let (_, seq) = linearize_example(ex, &opts)?;
                json_line(&mut text, &LinearRecord::from(&seq));
            }
            emit(io.out.as_deref(), &text, stdout)
        }
        Command::Relations { io, rel, stats } => {
            let corpus = read_corpus(&io.corpus)?;
            let opts = EncodeOptions {
                max_code_len: usize::MAX,
                ..rel_options(&rel)
            };
            let mut text = String::new();
            for ex in &corpus {
                let (tree, seq) = linearize_example(ex, &opts)?;
                let set = relation_set(&tree, &seq, &opts)?;
                if stats {
                    json_line(&mut text, &sparsity_stats(&set));
                } else {
                    let triples = |pairs: &[asttf_core::relations::RelPair]| {
                        pairs.iter().map(|p| [p.row as i64, p.col as i64, p.dist as i64]).collect()
                    };
                    json_line(
                        &mut text,
                        &RelationRecord {
                            id: &ex.id,
                            n: set.n,
                            anc: triples(&set.allowed_anc),
                            sib: triples(&set.allowed_sib),
                        },
                    );
                }
            }
            emit(io.out.as_deref(), &text, stdout)
        }
        Command::Stats { io, rel } => {
            let corpus = read_corpus(&io.corpus)?;
            let base = EncodeOptions {
                max_code_len: usize::MAX,
                ..rel_options(&rel)
            };
            let mut trees = Vec::with_capacity(corpus.len());
            let mut lens = [Vec::new(), Vec::new(), Vec::new()];
            let mut reductions = Vec::with_capacity(corpus.len());
            for ex in &corpus {
                for (k, m) in Method::ALL.into_iter().enumerate() {
                    let opts = EncodeOptions { method: m, ..base };
                    let (tree, seq) = linearize_example(ex, &opts)?;
                    lens[k].push(seq.len());
                    if m == rel.method {
                        reductions.push(sparsity_stats(&relation_set(&tree, &seq, &opts)?).reduction);
                    }
                    if k == 0 {
                        trees.push(tree.len());
                    }
                }
            }
            let report = CorpusStats {
                examples: corpus.len(),
                nodes: MeanMax::of(trees.into_iter()),
                summary_tokens: MeanMax::of(corpus.iter().map(|ex| ex.summary.split_whitespace().count())),
                pot_len: MeanMax::of(lens[0].iter().copied()),
                sbt_len: MeanMax::of(lens[1].iter().copied()),
                pd_len: MeanMax::of(lens[2].iter().copied()),
                method: rel.method,
                k_anc: rel.k_anc,
                k_sib: rel.k_sib,
                mean_reduction: reductions.iter().sum::<f64>() / reductions.len() as f64,
                min_reduction: reductions.iter().copied().fold(f64::INFINITY, f64::min),
            };
            emit(io.out.as_deref(), &pretty(&report), stdout)
        }
        Command::Train {
            corpus,
            out,
            overrides,
            log_every,
        } => {
            let cfg = overrides.resolve(seed)?;
            if out.is_file() {
                return Err(CliError::Data(format!("{} is a file, expected a checkpoint directory", out.display())));
            }
            let corpus = read_corpus(&corpus)?;
            let outcome = pipeline::train(&corpus, &cfg, |step, stats| {
                if log_every > 0 && step % log_every == 0 {
                    let _ = writeln!(stderr, "step {step} loss {:.4} grad_norm {:.3}", stats.loss, stats.grad_norm);
                }
            })?;
            pipeline::save_checkpoint(&out, &outcome.model, &outcome.vocabs, &outcome.config)?;
            #[derive(Serialize)]
            struct TrainReport {
                steps: usize,
                final_loss: f64,
                parameters: usize,
                code_vocab: usize,
                summary_vocab: usize,
            }
            let report = TrainReport {
                steps: outcome.losses.len(),
                final_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
                parameters: outcome.model.param_count(),
                code_vocab: outcome.vocabs.code.len(),
                summary_vocab: outcome.vocabs.summary.len(),
            };
            emit(None, &pretty(&report), stdout)
        }
        Command::Eval { checkpoint, corpus, out } => {
            let (model, vocabs, cfg) = pipeline::load_checkpoint(&checkpoint)?;
            let corpus = read_corpus(&corpus)?;
            let res = pipeline::evaluate(&model, &vocabs, &corpus, &EncodeOptions::from_config(&cfg), cfg.pipeline.batch)?;
            emit(out.as_deref(), &pretty(&res.report()), stdout)
        }
        Command::Summarize {
            checkpoint,
            input,
            corpus,
            out,
        } => {
            let (model, vocabs, cfg) = pipeline::load_checkpoint(&checkpoint)?;
            let corpus = match (input, corpus) {
                (Some(path), _) => vec![CorpusExample::from_source(path.display().to_string(), read_file(&path)?, "?")],
                (None, Some(path)) => read_corpus(&path)?,
                (None, None) => unreachable!("clap requires one of input or corpus"),
            };
            let opts = EncodeOptions::from_config(&cfg);
            let mut text = String::new();
            for ex in &corpus {
                let x = encode_example(ex, &vocabs, &opts)?;
                json_line(
                    &mut text,
                    &Summary {
                        id: &ex.id,
                        summary: pipeline::summarize(&model, &vocabs, &x)?,
                    },
                );
            }
            emit(out.as_deref(), &text, stdout)
        }
        Command::Gradcheck => {
            let report = gradcheck_report(seed.unwrap_or(DEFAULT_SEED))?;
            emit(None, &pretty(&report), stdout)?;
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Data("gradient check exceeded tolerance".into()))
            }
        }
        Command::Timing { n, min_nodes, max_nodes } => {
            if n == 0 || min_nodes == 0 || min_nodes > max_nodes {
                return Err(CliError::Usage("timing needs n >= 1 and 1 <= min_nodes <= max_nodes".into()));
            }
            let trees = random_trees(n, seed.unwrap_or(DEFAULT_SEED), min_nodes, max_nodes);
            let summary = timing(&trees, RunConfig::default().pd_options());
            emit(None, &pretty(&summary), stdout)
        }
    }
}

