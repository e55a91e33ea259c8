//! Model inputs and their padded, packed batch form.
//!
//! A batch of `B` sequences padded to length `L` becomes `B * L` rows; example
//! `b` owns rows `b * L .. b * L + len_b`. Attention pairs use these global row
//! numbers, so pad rows simply never appear in any pair.

use std::sync::Arc;

use asttf_core::relations::{RelPair, RelationSet};
use asttf_tensor::PairIndex;

use crate::{ModelError, BOS, EOS, PAD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub code_ids: Vec<usize>,
    /// Allowed ancestry pairs with clipped distances, row-major.
    pub anc: Vec<RelPair>,
    pub sib: Vec<RelPair>,
    /// Summary token ids without BOS/EOS framing.
    pub summary_ids: Vec<usize>,
}

impl ModelInput {
    pub fn new(code_ids: Vec<usize>, rel: &RelationSet, summary_ids: Vec<usize>) -> Self {
        Self {
            code_ids,
            anc: rel.allowed_anc.clone(),
            sib: rel.allowed_sib.clone(),
            summary_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.code_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code_ids.is_empty()
    }

    /// Keeps the first `cap` positions and the pairs among them.
    pub fn truncate(&mut self, cap: usize) {
        if self.code_ids.len() <= cap {
            return;
        }
        self.code_ids.truncate(cap);
        self.anc.retain(|p| p.row < cap && p.col < cap);
        self.sib.retain(|p| p.row < cap && p.col < cap);
    }

    /// Relation indices in range, pairs row-major without repeats, and every
    /// position attending at least to itself in both branches.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.code_ids.len();
        if n == 0 {
            return Err(ModelError::Input("empty code sequence".into()));
        }
        for (name, pairs) in [("ancestry", &self.anc), ("sibling", &self.sib)] {
            if let Some(p) = pairs.iter().find(|p| p.row >= n || p.col >= n) {
                return Err(ModelError::Input(format!("{name} pair ({}, {}) outside length {n}", p.row, p.col)));
            }
            if pairs.windows(2).any(|w| (w[0].row, w[0].col) >= (w[1].row, w[1].col)) {
                return Err(ModelError::Input(format!("{name} pairs are not strictly row-major")));
            }
            let mut diag = vec![false; n];
            for p in pairs.iter().filter(|p| p.row == p.col) {
                diag[p.row] = true;
            }
            if let Some(i) = diag.iter().position(|&d| !d) {
                return Err(ModelError::Input(format!("{name} pairs miss the diagonal at {i}")));
            }
        }
        Ok(())
    }
}

/// One attention branch: pairs plus the relative-table row of each pair.
#[derive(Debug, Clone)]
pub struct BranchPairs {
    pub pairs: Arc<PairIndex>,
    pub buckets: Arc<[usize]>,
}

impl BranchPairs {
    fn build(inputs: &[&ModelInput], stride: usize, k: u32, pick: fn(&ModelInput) -> &[RelPair]) -> Result<Self, ModelError> {
        let total: usize = inputs.iter().map(|x| pick(x).len()).sum();
        let (mut rows, mut cols, mut buckets) = (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
        let k = k as i32;
        for (b, x) in inputs.iter().enumerate() {
            for p in pick(x) {
                rows.push(b * stride + p.row);
                cols.push(b * stride + p.col);
                buckets.push((p.dist.clamp(-k, k) + k) as usize);
            }
        }
        Ok(Self {
            pairs: Arc::new(PairIndex::new(inputs.len() * stride, rows, cols)?),
            buckets: buckets.into(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBatch {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    /// Padded length `L`.
    pub stride: usize,
    pub anc: BranchPairs,
    pub sib: BranchPairs,
}

impl EncoderBatch {
    /// Pads to the longest input, or to `pad_to` when given.
    pub fn new(inputs: &[&ModelInput], k_anc: u32, k_sib: u32, pad_to: Option<usize>) -> Result<Self, ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for x in inputs {
            x.validate()?;
        }
        let longest = inputs.iter().map(|x| x.len()).max().unwrap_or(0);
        let stride = pad_to.unwrap_or(longest);
        if stride < longest {
            return Err(ModelError::Input(format!("pad length {stride} below sequence length {longest}")));
        }
        let mut ids = Vec::with_capacity(inputs.len() * stride);
        for x in inputs {
            ids.extend_from_slice(&x.code_ids);
            ids.resize(ids.len() + stride - x.len(), PAD);
        }
        Ok(Self {
            ids,
            lens: inputs.iter().map(|x| x.len()).collect(),
            stride,
            anc: BranchPairs::build(inputs, stride, k_anc, |x| &x.anc)?,
            sib: BranchPairs::build(inputs, stride, k_sib, |x| &x.sib)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lens.len()
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderBatch {
    /// Decoder inputs, BOS first, padded.
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// Next-token targets (EOS last), PAD where ignored.
    pub targets: Vec<usize>,
    pub lens: Vec<usize>,
    pub stride: usize,
    /// Causal self-attention pairs.
    pub self_pairs: Arc<PairIndex>,
    /// Every real decoder row against every real memory row of its example.
    pub cross_pairs: Arc<PairIndex>,
}

impl DecoderBatch {
    /// `prefixes` start with BOS. `mem_lens` and `mem_stride` describe the
    /// packed encoder memory.
    pub fn new(
        prefixes: &[Vec<usize>],
        targets: Option<&[Vec<usize>]>,
        mem_lens: &[usize],
        mem_stride: usize,
        max_len: usize,
    ) -> Result<Self, ModelError> {
        if prefixes.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if prefixes.len() != mem_lens.len() {
            return Err(ModelError::Input("decoder and encoder batch sizes differ".into()));
        }
        if let Some(p) = prefixes.iter().find(|p| p.len() > max_len) {
            return Err(ModelError::Length { len: p.len(), max: max_len });
        }
        if prefixes.iter().any(Vec::is_empty) {
            return Err(ModelError::Input("decoder prefix must hold at least BOS".into()));
        }
        let stride = prefixes.iter().map(Vec::len).max().unwrap_or(0);
        let rows = prefixes.len() * stride;
        let (mut ids, mut positions, mut tgt) = (Vec::with_capacity(rows), Vec::with_capacity(rows), Vec::with_capacity(rows));
        let (mut sr, mut sc, mut cr, mut cc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (b, p) in prefixes.iter().enumerate() {
            ids.extend_from_slice(p);
            ids.resize(ids.len() + stride - p.len(), PAD);
            positions.extend(0..stride);
            match targets {
                Some(t) => {
                    if t[b].len() != p.len() {
                        return Err(ModelError::Input("target and prefix lengths differ".into()));
                    }
                    tgt.extend_from_slice(&t[b]);
                    tgt.resize(tgt.len() + stride - p.len(), PAD);
                }
                None => tgt.resize(tgt.len() + stride, PAD),
            }
            for i in 0..p.len() {
                for j in 0..=i {
                    sr.push(b * stride + i);
                    sc.push(b * stride + j);
                }
                for j in 0..mem_lens[b] {
                    cr.push(b * stride + i);
                    cc.push(b * mem_stride + j);
                }
            }
        }
        Ok(Self {
            ids,
            positions,
            targets: tgt,
            lens: prefixes.iter().map(Vec::len).collect(),
            stride,
            self_pairs: Arc::new(PairIndex::new(rows, sr, sc)?),
            cross_pairs: Arc::new(PairIndex::new(rows, cr, cc)?),
        })
    }

    /// Teacher forcing: input `[BOS] + summary`, target `summary + [EOS]`.
    pub fn teacher_forced(inputs: &[&ModelInput], mem_lens: &[usize], mem_stride: usize, max_len: usize) -> Result<Self, ModelError> {
        let mut prefixes = Vec::with_capacity(inputs.len());
        let mut targets = Vec::with_capacity(inputs.len());
        for x in inputs {
            let mut p = Vec::with_capacity(x.summary_ids.len() + 1);
            p.push(BOS);
            p.extend_from_slice(&x.summary_ids);
            let mut t = x.summary_ids.clone();
            t.push(EOS);
            prefixes.push(p);
            targets.push(t);
        }
        Self::new(&prefixes, Some(&targets), mem_lens, mem_stride, max_len)
    }
}
