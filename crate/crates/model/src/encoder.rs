//! Dual-branch tree-structure attention encoder.

use std::sync::Arc;

use asttf_tensor::{PairIndex, Tape, TensorError, Var};
use rand_chacha::ChaCha8Rng;

use crate::batch::{BranchPairs, EncoderBatch};
use crate::params::{BranchParams, EncLayerParams};
use crate::{Model, ModelError};

/// Attention weights of one branch in one layer, `[pairs, heads]`.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    pub pairs: Arc<PairIndex>,
    pub weights: Var,
}

impl BranchTrace {
    /// Score evaluations per head.
    pub fn scores(&self) -> usize {
        self.pairs.len()
    }
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub anc: BranchTrace,
    pub sib: BranchTrace,
    /// What dense attention would evaluate per head and branch: `sum len^2`.
    pub dense_scores: usize,
}

impl LayerTrace {
    /// `1 - (|A| + |S|) / (2 * dense)`: fraction of score evaluations saved
    /// relative to two dense branches.
    pub fn reduction(&self) -> f64 {
        1.0 - (self.anc.scores() + self.sib.scores()) as f64 / (2 * self.dense_scores) as f64
    }
}

fn branch(
    tape: &mut Tape,
    vars: &[Var],
    p: &BranchParams,
    x: Var,
    bp: &BranchPairs,
    heads: usize,
    d_head: usize,
) -> Result<(Var, BranchTrace), ModelError> {
    let q = tape.matmul(x, vars[p.wq])?;
    let k = tape.matmul(x, vars[p.wk])?;
    let v = tape.matmul(x, vars[p.wv])?;
    let (rows, cols) = (bp.pairs.rows(), bp.pairs.cols());
    // content-content, content-relation, relation-content
    let c2c = tape.pair_dot(q, k, rows, cols, heads)?;
    let c2r = tape.pair_dot(q, vars[p.r_key], rows, &bp.buckets, heads)?;
    let r2c = tape.pair_dot(k, vars[p.r_query], cols, &bp.buckets, heads)?;
    let s = tape.add(c2c, c2r)?;
    let s = tape.add(s, r2c)?;
    let s = tape.mul_scalar(s, 1.0 / (3.0 * d_head as f64).sqrt());
    let w = tape.pair_softmax(s, &bp.pairs)?;
    let out = tape.pair_weighted_sum(w, v, &bp.pairs)?;
    Ok((
        out,
        BranchTrace {
            pairs: bp.pairs.clone(),
            weights: w,
        },
    ))
}

/// Tree-structure multi-head attention: both branches, concatenation,
/// output projection, residual and layer norm. `x` is `[B * L, d_model]`.
pub fn tree_mha(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    layer: &EncLayerParams,
    x: Var,
    batch: &EncoderBatch,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LayerTrace), ModelError> {
    for bp in [&batch.anc, &batch.sib] {
        for (b, &len) in batch.lens.iter().enumerate() {
            if let Some(r) = (b * batch.stride..b * batch.stride + len).find(|&r| bp.pairs.row_range(r).is_empty()) {
                return Err(TensorError::EmptyRow { row: r }.into());
            }
        }
    }
    let c = &model.config;
    let (anc, anc_trace) = branch(tape, vars, &layer.anc, x, &batch.anc, c.heads_per_branch, c.d_head())?;
    let (sib, sib_trace) = branch(tape, vars, &layer.sib, x, &batch.sib, c.heads_per_branch, c.d_head())?;
    let cat = tape.concat_last_dim(&[anc, sib])?;
    let mut proj = tape.matmul(cat, vars[layer.w_o])?;
    if let Some(rng) = dropout {
        proj = tape.dropout(proj, c.dropout, rng);
    }
    let res = tape.add(x, proj)?;
    let out = tape.layer_norm(res, vars[layer.ln1.0], vars[layer.ln1.1])?;
    let trace = LayerTrace {
        anc: anc_trace,
        sib: sib_trace,
        dense_scores: batch.lens.iter().map(|n| n * n).sum(),
    };
    Ok((out, trace))
}

pub(crate) fn feed_forward(
    tape: &mut Tape,
    vars: &[Var],
    x: Var,
    ff1: (usize, usize),
    ff2: (usize, usize),
    norm: (usize, usize),
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<Var, ModelError> {
    let h = tape.matmul(x, vars[ff1.0])?;
    let h = tape.add_row(h, vars[ff1.1])?;
    let h = tape.relu(h);
    let h = tape.matmul(h, vars[ff2.0])?;
    let mut h = tape.add_row(h, vars[ff2.1])?;
    if let Some((rng, p)) = dropout {
        h = tape.dropout(h, p, rng);
    }
    let res = tape.add(x, h)?;
    Ok(tape.layer_norm(res, vars[norm.0], vars[norm.1])?)
}

/// One encoder layer: tree attention, then the position-wise feed-forward block.
pub fn encoder_layer(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    layer: usize,
    x: Var,
    batch: &EncoderBatch,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, LayerTrace), ModelError> {
    let p = &model.layout.enc[layer];
    let (h, trace) = tree_mha(tape, model, vars, p, x, batch, dropout.as_deref_mut())?;
    let rate = model.config.dropout;
    let out = feed_forward(tape, vars, h, p.ff1, p.ff2, p.ln2, dropout.map(|r| (r, rate)))?;
    Ok((out, trace))
}

/// Embeds the code tokens and runs every encoder layer. No position
/// embeddings: structure enters only through the relation pairs.
pub fn encoder_forward(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    batch: &EncoderBatch,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Vec<LayerTrace>), ModelError> {
    let mut x = tape.embedding(vars[model.layout.code_emb], &batch.ids)?;
    let mut traces = Vec::with_capacity(model.layout.enc.len());
    for l in 0..model.layout.enc.len() {
        let (y, t) = encoder_layer(tape, model, vars, l, x, batch, dropout.as_deref_mut())?;
        x = y;
        traces.push(t);
    }
    Ok((x, traces))
}
