//! Measurable structural properties of the model, shared by the tests and
//! the acceptance runner.

use std::collections::HashSet;

use asttf_tensor::{finite_diff_check, GradCheck, Tape, Tensor};

use crate::batch::{DecoderBatch, EncoderBatch, ModelInput};
use crate::decoder::decoder_forward;
use crate::encoder::{encoder_forward, encoder_layer, LayerTrace};
use crate::{Model, ModelError};

/// Largest `|d out_i / d x_j|` over pairs `(i, j)` that are in neither
/// allowed set, for the first encoder layer. Input rows are the embedded
/// tokens, perturbed by a deterministic ramp so no two rows coincide.
pub fn max_disallowed_gradient(model: &Model, input: &ModelInput) -> Result<f64, ModelError> {
    let c = &model.config;
    let batch = EncoderBatch::new(&[input], c.k_anc, c.k_sib, None)?;
    let n = input.len();
    let d = c.d_model;
    let allowed: HashSet<(usize, usize)> = input.anc.iter().chain(&input.sib).map(|p| (p.row, p.col)).collect();
    let emb = &model.params[model.layout.code_emb];
    let mut x0 = Vec::with_capacity(n * d);
    for (i, &id) in input.code_ids.iter().enumerate() {
        x0.extend(emb.row(id).iter().enumerate().map(|(k, v)| v + 0.01 * ((i * d + k) as f64).sin()));
    }
    let x0 = Tensor::new(&[n, d], x0)?;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let x = tape.param(x0.clone());
        let (out, _) = encoder_layer(&mut tape, model, &vars, 0, x, &batch, None)?;
        let mut sel = vec![0.0; n * d];
        for (k, s) in sel[i * d..(i + 1) * d].iter_mut().enumerate() {
            *s = 1.0 + k as f64 / d as f64;
        }
        let sel = tape.constant(Tensor::new(&[n, d], sel)?);
        let picked = tape.mul(out, sel)?;
        let loss = tape.sum(picked);
        let grads = tape.backward(loss)?;
        let g = grads.get(x).expect("input reaches the loss");
        for j in (0..n).filter(|&j| !allowed.contains(&(i, j))) {
            worst = g.row(j).iter().fold(worst, |m, v| m.max(v.abs()));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskReport {
    /// Largest `|sum_j w_ij - 1|` over rows, heads, branches and layers.
    pub max_row_sum_error: f64,
    /// Largest weight placed on a pair outside the allowed set.
    pub max_disallowed_weight: f64,
    /// Pairs carrying weight that are not in the allowed set.
    pub stray_pairs: usize,
}

/// Scatters every layer's attention weights into dense `n x n` maps and
/// checks them against the allowed sets.
pub fn mask_report(model: &Model, input: &ModelInput) -> Result<MaskReport, ModelError> {
    let c = &model.config;
    let batch = EncoderBatch::new(&[input], c.k_anc, c.k_sib, None)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let (_, traces) = encoder_forward(&mut tape, model, &vars, &batch, None)?;
    let n = input.len();
    let h = c.heads_per_branch;
    let mut report = MaskReport {
        max_row_sum_error: 0.0,
        max_disallowed_weight: 0.0,
        stray_pairs: 0,
    };
    for t in &traces {
        for (bt, allowed) in [(&t.anc, &input.anc), (&t.sib, &input.sib)] {
            let allowed: HashSet<(usize, usize)> = allowed.iter().map(|p| (p.row, p.col)).collect();
            let w = tape.value(bt.weights);
            let mut dense = vec![0.0; h * n * n];
            for q in 0..bt.pairs.len() {
                let (r, col) = (bt.pairs.rows()[q], bt.pairs.cols()[q]);
                if !allowed.contains(&(r, col)) {
                    report.stray_pairs += 1;
                }
                for head in 0..h {
                    dense[head * n * n + r * n + col] += w.at(q, head);
                }
            }
            for head in 0..h {
                for i in 0..n {
                    let row = &dense[head * n * n + i * n..head * n * n + (i + 1) * n];
                    let sum: f64 = row.iter().sum();
                    report.max_row_sum_error = report.max_row_sum_error.max((sum - 1.0).abs());
                    for (j, &v) in row.iter().enumerate() {
                        if !allowed.contains(&(i, j)) {
                            report.max_disallowed_weight = report.max_disallowed_weight.max(v.abs());
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Largest difference in the real memory rows of `input` between encoding
/// it alone and encoding it padded to `len + extra` inside a batch with `other`.
pub fn padding_deviation(model: &Model, input: &ModelInput, other: &ModelInput, extra: usize) -> Result<f64, ModelError> {
    let c = &model.config;
    let n = input.len();
    let run = |inputs: &[&ModelInput], pad: Option<usize>| -> Result<Tensor, ModelError> {
        let batch = EncoderBatch::new(inputs, c.k_anc, c.k_sib, pad)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let (mem, _) = encoder_forward(&mut tape, model, &vars, &batch, None)?;
        Ok(tape.value(mem).clone())
    };
    let alone = run(&[input], None)?;
    let pad = n.max(other.len()) + extra;
    let padded = run(&[input, other], Some(pad))?;
    let mut worst = 0.0f64;
    for i in 0..n {
        for (a, b) in alone.row(i).iter().zip(padded.row(i)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Per-layer attention counters for one input.
pub fn score_counts(model: &Model, input: &ModelInput) -> Result<Vec<LayerTrace>, ModelError> {
    let c = &model.config;
    let batch = EncoderBatch::new(&[input], c.k_anc, c.k_sib, None)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let (_, traces) = encoder_forward(&mut tape, model, &vars, &batch, None)?;
    Ok(traces)
}

/// Largest change in the logits at positions before `t` when the decoder
/// input at `t` is replaced by `replacement`.
pub fn causality_deviation(model: &Model, memory: &Tensor, prefix: &[usize], t: usize, replacement: usize) -> Result<f64, ModelError> {
    let a = crate::decode_logits(model, memory, prefix)?;
    let mut changed = prefix.to_vec();
    changed[t] = replacement;
    let b = crate::decode_logits(model, memory, &changed)?;
    let mut worst = 0.0f64;
    for i in 0..t {
        for (x, y) in a.row(i).iter().zip(b.row(i)) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Logits for a batch of prefixes over a batch of inputs, for comparing
/// batched against single decoding.
pub fn batched_logits(model: &Model, inputs: &[&ModelInput], prefixes: &[Vec<usize>]) -> Result<Tensor, ModelError> {
    let c = &model.config;
    let enc = EncoderBatch::new(inputs, c.k_anc, c.k_sib, None)?;
    let dec = DecoderBatch::new(prefixes, None, &enc.lens, enc.stride, c.max_summary_len)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let (mem, _) = encoder_forward(&mut tape, model, &vars, &enc, None)?;
    let logits = decoder_forward(&mut tape, model, &vars, mem, &dec, None)?;
    Ok(tape.value(logits).clone())
}

/// Finite-difference check of the full model loss against backprop.
pub fn model_gradcheck(model: &Model, batch: &[&ModelInput], seed: u64) -> Result<GradCheck, ModelError> {
    let (_, analytic) = crate::loss_and_grads(model, batch)?;
    let mut params = model.params.clone();
    let mut probe = model.clone();
    Ok(finite_diff_check(
        &mut params,
        &analytic,
        |ps| {
            probe.params.clone_from_slice(ps);
            crate::batch_loss(&probe, batch).expect("loss evaluated once already")
        },
        1e-5,
        seed,
    ))
}
