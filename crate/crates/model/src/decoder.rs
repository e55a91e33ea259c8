//! Standard post-norm transformer decoder with learned positions.

use std::sync::Arc;

use asttf_tensor::{PairIndex, Tape, Var};
use rand_chacha::ChaCha8Rng;

use crate::batch::DecoderBatch;
use crate::encoder::feed_forward;
use crate::params::AttnParams;
use crate::{Model, ModelError};

/// Scaled dot-product attention restricted to `pairs`; queries come from
/// `q_in`, keys and values from `kv_in`.
fn attention(
    tape: &mut Tape,
    vars: &[Var],
    p: &AttnParams,
    q_in: Var,
    kv_in: Var,
    pairs: &Arc<PairIndex>,
    heads: usize,
    d_head: usize,
) -> Result<Var, ModelError> {
    let q = tape.matmul(q_in, vars[p.wq])?;
    let k = tape.matmul(kv_in, vars[p.wk])?;
    let v = tape.matmul(kv_in, vars[p.wv])?;
    let s = tape.pair_dot(q, k, pairs.rows(), pairs.cols(), heads)?;
    let s = tape.mul_scalar(s, 1.0 / (d_head as f64).sqrt());
    let w = tape.pair_softmax(s, pairs)?;
    let o = tape.pair_weighted_sum(w, v, pairs)?;
    Ok(tape.matmul(o, vars[p.wo])?)
}

/// Logits `[B * M, summary_vocab]` for the decoder inputs in `dec`, attending
/// to the packed encoder `memory`.
pub fn decoder_forward(
    tape: &mut Tape,
    model: &Model,
    vars: &[Var],
    memory: Var,
    dec: &DecoderBatch,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let c = &model.config;
    let l = &model.layout;
    let (heads, dh, rate) = (c.heads_per_branch, c.d_head(), c.dropout);
    let tok = tape.embedding(vars[l.summary_emb], &dec.ids)?;
    let pos = tape.embedding(vars[l.dec_pos], &dec.positions)?;
    let mut y = tape.add(tok, pos)?;
    for p in &l.dec {
        let mut a = attention(tape, vars, &p.self_attn, y, y, &dec.self_pairs, heads, dh)?;
        if let Some(rng) = dropout.as_deref_mut() {
            a = tape.dropout(a, rate, rng);
        }
        let r = tape.add(y, a)?;
        y = tape.layer_norm(r, vars[p.ln1.0], vars[p.ln1.1])?;

        let mut a = attention(tape, vars, &p.cross_attn, y, memory, &dec.cross_pairs, heads, dh)?;
        if let Some(rng) = dropout.as_deref_mut() {
            a = tape.dropout(a, rate, rng);
        }
        let r = tape.add(y, a)?;
        y = tape.layer_norm(r, vars[p.ln2.0], vars[p.ln2.1])?;

        y = feed_forward(tape, vars, y, p.ff1, p.ff2, p.ln3, dropout.as_deref_mut().map(|r| (r, rate)))?;
    }
    let logits = tape.matmul(y, vars[l.out.0])?;
    Ok(tape.add_row(logits, vars[l.out.1])?)
}
