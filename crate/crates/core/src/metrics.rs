//! Summary evaluation: corpus BLEU, exact-match METEOR and ROUGE-L.
//!
//! Inputs are token lists; use [`tokenize_summary`] to lowercase and split
//! raw text. All scores are fractions in `[0, 1]`.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    pub fn new(hypothesis: &str, reference: &str) -> Self {
        Self {
            hypothesis: tokenize_summary(hypothesis),
            reference: tokenize_summary(reference),
        }
    }
}

pub fn tokenize_summary(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no evaluation pairs")]
    NoPairs,
    #[error("every hypothesis is empty")]
    EmptyHypotheses,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU: clipped n-gram counts pooled over all pairs, geometric
/// mean of the modified precisions for orders `1..=max_n`, times the brevity
/// penalty. No smoothing, so any zero precision gives 0.
pub fn bleu_corpus(pairs: &[EvalPair], max_n: usize) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    if pairs.iter().all(|p| p.hypothesis.is_empty()) {
        return Err(MetricError::EmptyHypotheses);
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for pair in pairs {
        hyp_len += pair.hypothesis.len();
        ref_len += pair.reference.len();
        for n in 1..=max_n {
            let refs = ngram_counts(&pair.reference, n);
            for (gram, count) in ngram_counts(&pair.hypothesis, n) {
                matched[n - 1] += count.min(refs.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let precision = (log_sum / max_n as f64).exp();
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * precision)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_pair(pair: &EvalPair) -> f64 {
    let l = lcs_len(&pair.hypothesis, &pair.reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / pair.hypothesis.len() as f64;
    let r = l as f64 / pair.reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean ROUGE-L F1 over pairs.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    Ok(pairs.iter().map(rouge_l_pair).sum::<f64>() / pairs.len() as f64)
}

/// Exact unigram alignment with the most matches, and among those the
/// fewest chunks. Returns `(matches, chunks)`.
pub fn meteor_alignment(hyp: &[String], reference: &[String]) -> (usize, usize) {
    // Reference positions that could be claimed by more than one hypothesis
    // token (or vice versa) need tracking; everything else is forced.
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        ref_positions.entry(w.as_str()).or_default().push(j);
    }
    let candidates: Vec<&[usize]> = hyp
        .iter()
        .map(|w| ref_positions.get(w.as_str()).map_or(&[][..], Vec::as_slice))
        .collect();
    let mut search = AlignSearch {
        candidates,
        memo: HashMap::new(),
    };
    let (matches, links) = search.best(0, None, RefSet::default());
    let chunks = matches - links;
    (matches, chunks)
}

/// Set of claimed reference positions (references are at most 128 tokens
/// in practice; longer ones spill into the vector).
#[derive(Clone, Default, PartialEq, Eq, Hash)]
struct RefSet {
    low: u128,
    high: Vec<usize>,
}

impl RefSet {
    fn contains(&self, j: usize) -> bool {
        if j < 128 {
            self.low & (1u128 << j) != 0
        } else {
            self.high.contains(&j)
        }
    }

    fn with(&self, j: usize) -> Self {
        let mut next = self.clone();
        if j < 128 {
            next.low |= 1u128 << j;
        } else {
            next.high.push(j);
            next.high.sort_unstable();
        }
        next
    }
}

struct AlignSearch<'a> {
    candidates: Vec<&'a [usize]>,
    memo: HashMap<(usize, Option<usize>, RefSet), (usize, usize)>,
}

impl AlignSearch<'_> {
    /// Best `(matches, links)` for hypothesis suffix `i..`, where `prev` is the
    /// reference position aligned to hypothesis token `i - 1` (if any). A link
    /// is a pair of adjacent hypothesis tokens aligned to adjacent reference
    /// tokens; `chunks = matches - links`.
    fn best(&mut self, i: usize, prev: Option<usize>, used: RefSet) -> (usize, usize) {
        if i == self.candidates.len() {
            return (0, 0);
        }
        let key = (i, prev, used);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let used = &key.2;
        let mut best = self.best(i + 1, None, used.clone());
        for &j in self.candidates[i] {
            if used.contains(j) {
                continue;
            }
            let (m, l) = self.best(i + 1, Some(j), used.with(j));
            let link = usize::from(prev.is_some_and(|p| p + 1 == j));
            let cand = (m + 1, l + link);
            if cand > best {
                best = cand;
            }
        }
        self.memo.insert(key, best);
        best
    }
}

pub fn meteor_pair(pair: &EvalPair) -> f64 {
    let (m, chunks) = meteor_alignment(&pair.hypothesis, &pair.reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / pair.hypothesis.len() as f64;
    let r = m as f64 / pair.reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean exact-match METEOR over pairs (no stemming or synonym stages).
pub fn meteor_exact(pairs: &[EvalPair]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::NoPairs);
    }
    Ok(pairs.iter().map(meteor_pair).sum::<f64>() / pairs.len() as f64)
}
