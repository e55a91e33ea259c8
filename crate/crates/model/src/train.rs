//! Teacher-forced training, evaluation loss and greedy decoding.

use asttf_tensor::{clip_grad_norm, Adam, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{DecoderBatch, EncoderBatch, ModelInput};
use crate::decoder::decoder_forward;
use crate::encoder::encoder_forward;
use crate::{Model, ModelError, BOS, EOS, PAD};

pub const GRAD_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Mean token cross-entropy over the non-pad summary positions of `batch`.
/// With `dropout` set the tape runs in training mode.
fn batch_loss_on_tape(
    tape: &mut Tape,
    model: &Model,
    trainable: bool,
    batch: &[&ModelInput],
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Vec<asttf_tensor::Var>, asttf_tensor::Var), ModelError> {
    let c = &model.config;
    let enc = EncoderBatch::new(batch, c.k_anc, c.k_sib, None)?;
    let dec = DecoderBatch::teacher_forced(batch, &enc.lens, enc.stride, c.max_summary_len)?;
    let vars = model.bind(tape, trainable);
    let (memory, _) = encoder_forward(tape, model, &vars, &enc, dropout.as_deref_mut())?;
    let logits = decoder_forward(tape, model, &vars, memory, &dec, dropout)?;
    let loss = tape.cross_entropy(logits, &dec.targets, Some(PAD))?;
    Ok((vars, loss))
}

/// Evaluation-mode loss (no dropout).
pub fn batch_loss(model: &Model, batch: &[&ModelInput]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let (_, loss) = batch_loss_on_tape(&mut tape, model, false, batch, None)?;
    Ok(tape.value(loss).item())
}

/// Loss and gradients of every parameter, evaluation mode.
pub fn loss_and_grads(model: &Model, batch: &[&ModelInput]) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let (vars, loss) = batch_loss_on_tape(&mut tape, model, true, batch, None)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .zip(&model.params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
        .collect();
    Ok((value, g))
}

/// Owns the model being trained, its optimizer state and the dropout stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, lr: f64) -> Self {
        let opt = Adam::new(&model.params, lr);
        // Dropout masks get their own stream so they do not shift with init.
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x5eed_d509);
        Self { model, opt, rng }
    }

    pub fn steps_taken(&self) -> u64 {
        self.opt.steps_taken()
    }

    /// One Adam step on `batch`; returns the training-mode loss before the update.
    pub fn train_step(&mut self, batch: &[&ModelInput]) -> Result<StepStats, ModelError> {
        let mut tape = Tape::new();
        let (vars, loss) = batch_loss_on_tape(&mut tape, &self.model, true, batch, Some(&mut self.rng))?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let mut g: Vec<Tensor> = vars
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
            .collect();
        drop(tape);
        let grad_norm = clip_grad_norm(&mut g, GRAD_CLIP);
        self.opt.step(&mut self.model.params, &g)?;
        Ok(StepStats { loss: value, grad_norm })
    }
}

/// Encoder memory `[len, d_model]` for one input, evaluation mode.
pub fn encode(model: &Model, input: &ModelInput) -> Result<Tensor, ModelError> {
    let c = &model.config;
    let enc = EncoderBatch::new(&[input], c.k_anc, c.k_sib, None)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let (memory, _) = encoder_forward(&mut tape, model, &vars, &enc, None)?;
    Ok(tape.value(memory).clone())
}

/// Logits `[prefix.len(), summary_vocab]` given one example's memory.
pub fn decode_logits(model: &Model, memory: &Tensor, prefix: &[usize]) -> Result<Tensor, ModelError> {
    let n = memory.dims2().0;
    let dec = DecoderBatch::new(&[prefix.to_vec()], None, &[n], n, model.config.max_summary_len)?;
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let mem = tape.constant(memory.clone());
    let logits = decoder_forward(&mut tape, model, &vars, mem, &dec, None)?;
    Ok(tape.value(logits).clone())
}

/// Argmax decoding from BOS until EOS, `max_len` tokens, or the position
/// table runs out. Ties go to the lowest token id. EOS is not returned.
pub fn greedy_decode(model: &Model, memory: &Tensor, max_len: usize) -> Result<Vec<usize>, ModelError> {
    let mut out = Vec::new();
    let mut prefix = vec![BOS];
    while out.len() < max_len && prefix.len() <= model.config.max_summary_len {
        let logits = decode_logits(model, memory, &prefix)?;
        let last = logits.row(prefix.len() - 1);
        let mut best = 0;
        for (k, &x) in last.iter().enumerate() {
            if x > last[best] {
                best = k;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        prefix.push(best);
    }
    Ok(out)
}
