//! Self-checks exposed through `gradcheck` and `timing`, shared with the
//! acceptance runner.

use asttf_core::linearize::{pot, timing_report, Method, PdOptions, TimingRow};
use asttf_core::relations::{ClipRadius, RelationSet};
use asttf_core::AstTree;
use asttf_model::checks::model_gradcheck;
use asttf_model::{Model, ModelConfig, ModelInput};
use asttf_tensor::check_primitives;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// d_model 8, two heads per branch, one encoder and one decoder layer.
pub fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        heads_per_branch: 2,
        enc_layers: 1,
        dec_layers: 1,
        d_ff: 16,
        code_vocab: vocab,
        summary_vocab: vocab,
        max_summary_len: 8,
        ..ModelConfig::default()
    }
}

/// POT input over a random tree of `n` nodes with random token ids.
pub fn random_input(seed: u64, n: usize, vocab: usize, summary_len: usize) -> ModelInput {
    let tree = AstTree::random(seed, n, 3);
    let seq = pot(&tree);
    let rel = RelationSet::build(&tree, &seq, ClipRadius::Finite(5), ClipRadius::Finite(5)).expect("pot covers the tree");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let code = (0..seq.len()).map(|_| rng.gen_range(4..vocab)).collect();
    let summary = (0..summary_len).map(|_| rng.gen_range(4..vocab)).collect();
    ModelInput::new(code, &rel, summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_error: f64,
    pub coords: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub primitives: Vec<OpCheck>,
    pub model_max_rel_error: f64,
    pub model_coords: usize,
    pub pass: bool,
}

/// Every tape primitive in isolation, then the tiny model (N = 12, V = 20)
/// end to end.
pub fn gradcheck_report(seed: u64) -> Result<GradcheckReport, CliError> {
    let primitives: Vec<OpCheck> = check_primitives(seed)
        .into_iter()
        .map(|(op, r)| OpCheck {
            op,
            max_rel_error: r.max_rel_error,
            coords: r.coords_checked,
        })
        .collect();
    let model = Model::init(ModelConfig { seed, ..tiny_config(20) })?;
    let x = random_input(seed, 12, 20, 5);
    let res = model_gradcheck(&model, &[&x], seed)?;
    let pass = primitives.iter().all(|p| p.max_rel_error < PRIMITIVE_TOLERANCE) && res.max_rel_error < MODEL_TOLERANCE;
    Ok(GradcheckReport {
        primitives,
        model_max_rel_error: res.max_rel_error,
        model_coords: res.coords_checked,
        pass,
    })
}

/// `count` random trees with sizes drawn from `min_nodes..=max_nodes`.
pub fn random_trees(count: usize, seed: u64, min_nodes: usize, max_nodes: usize) -> Vec<AstTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(min_nodes..=max_nodes);
            AstTree::random(rng.gen(), n, 4)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingSummary {
    pub rows: Vec<TimingRow>,
    pub pot_over_sbt: f64,
    pub pot_over_pd: f64,
}

pub fn timing(trees: &[AstTree], pd: PdOptions) -> TimingSummary {
    let rows = timing_report(trees, &Method::ALL, pd);
    let secs = |m: Method| rows.iter().find(|r| r.method == m).expect("all methods timed").total.as_secs_f64();
    let pot_s = secs(Method::Pot);
    TimingSummary {
        pot_over_sbt: pot_s / secs(Method::Sbt),
        pot_over_pd: pot_s / secs(Method::Pd),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradcheck_report_passes() {
        let r = gradcheck_report(3).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.model_coords > 0);
    }

    #[test]
    fn random_trees_respect_the_size_range() {
        let trees = random_trees(50, 1, 5, 9);
        assert!(trees.iter().all(|t| (5..=9).contains(&t.len())));
    }
}
