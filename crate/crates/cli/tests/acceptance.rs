//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use asttf::diagnostics::{gradcheck_report, random_input, random_trees, tiny_config, timing, MODEL_TOLERANCE, PRIMITIVE_TOLERANCE};
use asttf::pipeline::{corpus_loss, encode_corpus, load_checkpoint, save_checkpoint, train, EncodeOptions};
use asttf::{evaluate, generate_corpus, RunConfig};
use asttf_core::linearize::{pd, pot, sbt, LinearSeq, Method, PdOptions};
use asttf_core::metrics::{bleu_corpus, meteor_exact, rouge_l, EvalPair};
use asttf_core::minilang::SizeClass;
use asttf_core::relations::{ancestry_matrix, oracle_relations, sibling_matrix, ClipRadius, RelationSet, SparseRel};
use asttf_model::checks::{mask_report, max_disallowed_gradient, padding_deviation, score_counts};
use asttf_model::{Model, ModelConfig, ModelInput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch directory");
    dir
}

/// Published full-scale scores; only restated, never recomputed here.
const PUBLISHED: [(&str, &str); 4] = [
    ("Java BLEU", "46.64"),
    ("Java METEOR", "28.49"),
    ("Java ROUGE-L", "55.21"),
    ("Python BLEU", "33.82"),
];

fn c1_statement() -> Outcome {
    let text = fs::read_to_string(workspace_root().join("paper.md")).map_err(|e| format!("published results unavailable: {e}"))?;
    let row = text
        .lines()
        .find(|l| PUBLISHED.iter().all(|(_, v)| l.contains(v)))
        .ok_or("no results row carries all four quoted scores")?;
    let nums: Vec<&str> = row
        .split(|c: char| !(c.is_ascii_digit() || c == '.'))
        .filter(|s| s.len() == 5 && s.as_bytes()[2] == b'.')
        .collect();
    let in_order = PUBLISHED.iter().zip(&nums).all(|((_, v), n)| v == n);
    let quoted: Vec<String> = PUBLISHED.iter().map(|(k, v)| format!("{k} {v}")).collect();
    check(
        in_order,
        format!(
            "full-scale scores ({}) are NOT reproducible at desk scale (corpora and training budget unavailable); criteria 2-11 substitute",
            quoted.join(", ")
        ),
    )
}

fn c2_linearization_laws() -> Outcome {
    let start = Instant::now();
    let trees = random_trees(1000, 2, 1, 200);
    let opts = PdOptions::default();
    let bound = opts.max_paths * opts.max_path_len + opts.max_paths.saturating_sub(1);
    let (mut bad_pot, mut bad_sbt, mut bad_pd, mut longest_pd) = (0, 0, 0, 0);
    for (k, t) in trees.iter().enumerate() {
        bad_pot += usize::from(pot(t).len() != t.len());
        bad_sbt += usize::from(sbt(t).len() != 4 * t.len());
        let p = pd(t, opts, k as u64).map_err(|e| e.to_string())?.len();
        longest_pd = longest_pd.max(p);
        bad_pd += usize::from(p > bound);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        bad_pot + bad_sbt + bad_pd == 0 && secs < 10.0,
        format!("1000 trees: |POT|!=N {bad_pot}, |SBT|!=4N {bad_sbt}, PD over bound {bound}: {bad_pd} (longest {longest_pd}); {secs:.2}s"),
    )
}

fn same_rel(a: &SparseRel, b: &SparseRel) -> bool {
    a.n() == b.n() && a.iter().eq(b.iter())
}

fn antisymmetric_zero_diag(r: &SparseRel) -> bool {
    (0..r.n()).all(|i| r.get(i, i) == Some(0)) && r.iter().all(|(i, j, d)| r.get(j, i) == Some(-d))
}

fn c3_relation_oracle() -> Outcome {
    let start = Instant::now();
    let trees = random_trees(1000, 3, 1, 50);
    let (mut checked, mut mismatches, mut law_breaks) = (0, 0, 0);
    for (k, t) in trees.iter().enumerate() {
        let seqs: [LinearSeq; 3] = [pot(t), sbt(t), pd(t, PdOptions::default(), k as u64).map_err(|e| e.to_string())?];
        for seq in &seqs {
            let a = ancestry_matrix(t, seq).map_err(|e| e.to_string())?;
            let s = sibling_matrix(t, seq).map_err(|e| e.to_string())?;
            let (oa, os) = oracle_relations(t, seq).map_err(|e| e.to_string())?;
            mismatches += usize::from(!same_rel(&a, &oa) || !same_rel(&s, &os));
            law_breaks += usize::from(!antisymmetric_zero_diag(&a) || !antisymmetric_zero_diag(&s));
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && law_breaks == 0 && secs < 30.0,
        format!("{checked} sequences (POT/SBT/PD): {mismatches} oracle mismatches, {law_breaks} antisymmetry/diagonal violations; {secs:.2}s"),
    )
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn c4_sparsity() -> Outcome {
    let corpus = generate_corpus(500, 4, SizeClass::Medium);
    let cfg = ModelConfig {
        k_anc: 5,
        k_sib: 5,
        ..tiny_config(8)
    };
    let model = Model::init(cfg).map_err(|e| e.to_string())?;
    let mut values = Vec::with_capacity(corpus.len());
    let mut min_n = usize::MAX;
    for ex in &corpus {
        let tree = ex.tree().map_err(|e| e.to_string())?;
        min_n = min_n.min(tree.len());
        let seq = pot(&tree);
        let rel = RelationSet::build(&tree, &seq, ClipRadius::Finite(5), ClipRadius::Finite(5)).map_err(|e| e.to_string())?;
        let input = ModelInput::new(vec![4; seq.len()], &rel, vec![4]);
        let traces = score_counts(&model, &input).map_err(|e| e.to_string())?;
        values.push(traces[0].reduction());
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let path = scratch("sparsity").join("reduction.json");
    fs::write(&path, serde_json::to_string(&values).expect("floats serialize")).map_err(|e| e.to_string())?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let dist = [0.0, 0.1, 0.5, 0.9, 1.0].map(|q| format!("q{:.0}={:.3}", q * 100.0, quantile(&sorted, q)));
    check(
        mean >= 0.80 && min_n >= 150,
        format!(
            "500 trees (N >= {min_n}), K=5: mean reduction {mean:.4} [{}] vs published claim 90-95%; distribution in {}",
            dist.join(" "),
            path.display()
        ),
    )
}

fn c5_timing() -> Outcome {
    let start = Instant::now();
    let trees = random_trees(10_000, 5, 10, 200);
    // Best of three per method damps scheduler noise.
    let mut best = [Duration::MAX; 3];
    for _ in 0..3 {
        let t = timing(&trees, PdOptions::default());
        for (b, row) in best.iter_mut().zip(&t.rows) {
            *b = (*b).min(row.total);
        }
    }
    let [p, s, d] = best.map(|x| x.as_secs_f64());
    let secs = start.elapsed().as_secs_f64();
    check(
        p <= 0.5 * s && p <= 0.5 * d && secs < 120.0,
        format!("10000 trees: POT {p:.3}s, SBT {s:.3}s, PD {d:.3}s; POT/SBT {:.3}, POT/PD {:.3}; {secs:.1}s", p / s, p / d),
    )
}

fn c6_gradients() -> Outcome {
    let start = Instant::now();
    let r = gradcheck_report(6).map_err(|e| e.to_string())?;
    let worst = r.primitives.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).expect("primitives checked");
    let secs = start.elapsed().as_secs_f64();
    check(
        r.pass && secs < 120.0,
        format!(
            "{} primitives, worst {} {:.2e} (< {PRIMITIVE_TOLERANCE:e}); tiny model {:.2e} over {} coords (< {MODEL_TOLERANCE:e}); {secs:.1}s",
            r.primitives.len(),
            worst.op,
            worst.max_rel_error,
            r.model_max_rel_error,
            r.model_coords
        ),
    )
}

fn random_inputs(count: usize, seed: u64, vocab: usize) -> Vec<ModelInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_input(rng.gen(), rng.gen_range(2..40), vocab, 4)).collect()
}

fn default_model(vocab: usize) -> Result<Model, String> {
    Model::init(ModelConfig {
        code_vocab: vocab,
        summary_vocab: vocab,
        ..ModelConfig::default()
    })
    .map_err(|e| e.to_string())
}

fn c7_locality() -> Outcome {
    let model = default_model(50)?;
    let mut worst = 0.0f64;
    for x in random_inputs(50, 7, 50) {
        worst = worst.max(max_disallowed_gradient(&model, &x).map_err(|e| e.to_string())?);
    }
    check(worst <= 1e-9, format!("50 inputs: max |d out_i / d x_j| over disallowed (i, j) = {worst:e}"))
}

fn c8_masks() -> Outcome {
    let model = default_model(50)?;
    let inputs = random_inputs(50, 8, 50);
    let (mut row_err, mut disallowed, mut stray, mut pad_dev) = (0.0f64, 0.0f64, 0, 0.0f64);
    for (k, x) in inputs.iter().enumerate() {
        let r = mask_report(&model, x).map_err(|e| e.to_string())?;
        row_err = row_err.max(r.max_row_sum_error);
        disallowed = disallowed.max(r.max_disallowed_weight);
        stray += r.stray_pairs;
        let other = &inputs[(k + 1) % inputs.len()];
        pad_dev = pad_dev.max(padding_deviation(&model, x, other, 1 + k % 7).map_err(|e| e.to_string())?);
    }
    check(
        row_err < 1e-9 && disallowed == 0.0 && stray == 0 && pad_dev < 1e-9,
        format!("50 inputs: max |row sum - 1| {row_err:e}, max disallowed weight {disallowed:e}, stray pairs {stray}, padding deviation {pad_dev:e}"),
    )
}

/// Names occurring once in 64 examples would be UNK under min_freq 2 and
/// could never be produced, so the overfit run keeps every token.
fn overfit(method: Method) -> Result<(f64, f64, f64, f64), String> {
    let corpus = generate_corpus(64, 42, SizeClass::Small);
    let mut cfg = RunConfig::default();
    cfg.pipeline.method = method;
    cfg.pipeline.steps = 2000;
    cfg.pipeline.min_freq = 1;
    let start = Instant::now();
    let out = train(&corpus, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let res = evaluate(&out.model, &out.vocabs, &corpus, &EncodeOptions::from_config(&out.config), cfg.pipeline.batch)
        .map_err(|e| e.to_string())?;
    let last = out.losses[out.losses.len() - 20..].iter().sum::<f64>() / 20.0;
    Ok((res.bleu, res.exact_match, last, start.elapsed().as_secs_f64()))
}

fn c9_overfit() -> Outcome {
    let (pb, pe, pl, pt) = overfit(Method::Pot)?;
    let (sb, se, sl, st) = overfit(Method::Sbt)?;
    check(
        pb >= 0.95 && pe >= 0.90 && sb >= 0.90 && pt < 900.0 && st < 900.0,
        format!(
            "64 pairs, 2000 steps: POT BLEU {pb:.4} exact {:.1}% train loss {pl:.2e} in {pt:.0}s; SBT BLEU {sb:.4} exact {:.1}% train loss {sl:.2e} in {st:.0}s",
            pe * 100.0,
            se * 100.0
        ),
    )
}

fn c10_metric_goldens() -> Outcome {
    let ident = [EvalPair::new("the cat sat on the mat", "the cat sat on the mat"), EvalPair::new("a b c d", "a b c d")];
    let bleu = bleu_corpus(&ident, 4).map_err(|e| e.to_string())?;
    let rouge_id = rouge_l(&ident).map_err(|e| e.to_string())?;
    let rouge = rouge_l(&[EvalPair::new("a c", "a b c")]).map_err(|e| e.to_string())?;
    let meteor = meteor_exact(&[EvalPair::new("a b c", "a b c")]).map_err(|e| e.to_string())?;
    // P = R = 1, one chunk of three matches: 1 - 0.5 * (1/3)^3
    let meteor_want = 1.0 - 0.5 / 27.0;
    check(
        bleu == 1.0 && rouge_id == 1.0 && (rouge - 0.8).abs() <= 1e-9 && (meteor - 0.981481).abs() <= 1e-6 && (meteor - meteor_want).abs() < 1e-12,
        format!("identity BLEU {bleu}, identity ROUGE-L {rouge_id}, \"a c\"/\"a b c\" ROUGE-L {rouge:.12}, 3-token METEOR {meteor:.6}"),
    )
}

fn run_binary(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_asttf")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("asttf {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c11_determinism() -> Outcome {
    let config = r#"{"steps": 150, "batch": 8, "seed": 11}"#;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let dir = scratch(&format!("determinism_{run}"));
        fs::write(dir.join("c.json"), config).map_err(|e| e.to_string())?;
        run_binary(&["gen", "--n", "24", "--seed", "11", "--out", "corpus.jsonl"], &dir)?;
        run_binary(&["train", "--config", "c.json", "--corpus", "corpus.jsonl", "--out", "ck", "--log-every", "0"], &dir)?;
        reports.push(run_binary(&["eval", "--checkpoint", "ck", "--corpus", "corpus.jsonl"], &dir)?);
    }
    let identical = reports[0] == reports[1];

    let corpus = generate_corpus(24, 12, SizeClass::Small);
    let mut cfg = RunConfig::default();
    // Stop early so the loss is still far from zero and quantization shows.
    cfg.pipeline.steps = 20;
    let out = train(&corpus, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let opts = EncodeOptions::from_config(&out.config);
    let inputs = encode_corpus(&corpus, &out.vocabs, &opts).map_err(|e| e.to_string())?;
    let before = corpus_loss(&out.model, &inputs, 8).map_err(|e| e.to_string())?;
    let dir = scratch("roundtrip");
    save_checkpoint(&dir, &out.model, &out.vocabs, &out.config).map_err(|e| e.to_string())?;
    let (loaded, vocabs, _) = load_checkpoint(&dir).map_err(|e| e.to_string())?;
    let same_vocab = vocabs == out.vocabs;
    let after = corpus_loss(&loaded, &inputs, 8).map_err(|e| e.to_string())?;
    let delta = (after - before).abs();
    check(
        identical && same_vocab && delta <= 1e-6,
        format!(
            "metrics JSON identical across runs: {identical} ({} bytes); eval loss {before:.6} -> {after:.6} after f32 checkpoint, delta {delta:.2e}",
            reports[0].len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("non-reproducibility statement", c1_statement),
        ("linearization laws", c2_linearization_laws),
        ("relation oracle equivalence", c3_relation_oracle),
        ("sparsity reduction", c4_sparsity),
        ("preprocessing timing", c5_timing),
        ("gradient correctness", c6_gradients),
        ("locality invariant", c7_locality),
        ("mask and softmax invariants", c8_masks),
        ("overfit sanity", c9_overfit),
        ("metric golden values", c10_metric_goldens),
        ("determinism and persistence", c11_determinism),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if filter.is_some_and(|only| only != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{id:>2}] {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
