//! Reverse-mode tape. Every op appends a node holding its forward value; the
//! backward sweep walks the nodes in reverse once.

use std::sync::Arc;

use rand::Rng;

use crate::tensor::{gemm, shape_err, Tensor, TensorError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse (row, col) pairs grouped by row: the pairs of output row `r` are
/// `offsets[r]..offsets[r + 1]`. Rows may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndex {
    rows: Arc<[usize]>,
    cols: Arc<[usize]>,
    offsets: Vec<usize>,
}

impl PairIndex {
    /// `rows` must be non-decreasing and below `n_rows`.
    pub fn new(n_rows: usize, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self, TensorError> {
        if rows.len() != cols.len() {
            return shape_err("pair rows and cols differ in length");
        }
        if rows.windows(2).any(|w| w[0] > w[1]) {
            return shape_err("pairs must be grouped by row");
        }
        if rows.last().is_some_and(|&r| r >= n_rows) {
            return shape_err("pair row out of range");
        }
        let mut offsets = vec![0; n_rows + 1];
        for &r in &rows {
            offsets[r + 1] += 1;
        }
        for r in 0..n_rows {
            offsets[r + 1] += offsets[r];
        }
        Ok(Self {
            rows: rows.into(),
            cols: cols.into(),
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn rows(&self) -> &Arc<[usize]> {
        &self.rows
    }

    pub fn cols(&self) -> &Arc<[usize]> {
        &self.cols
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Concat(Vec<Var>),
    Embedding {
        table: Var,
        ids: Arc<[usize]>,
    },
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Arc<[usize]>,
        ignore: Option<usize>,
        probs: Vec<f64>,
        count: usize,
    },
    MaskedSoftmax {
        x: Var,
        allowed: Arc<[Vec<usize>]>,
    },
    PairDot {
        a: Var,
        b: Var,
        ia: Arc<[usize]>,
        ib: Arc<[usize]>,
        heads: usize,
        broadcast_b: bool,
    },
    PairSoftmax {
        x: Var,
        pairs: Arc<PairIndex>,
    },
    PairWeightedSum {
        w: Var,
        v: Var,
        pairs: Arc<PairIndex>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the leaves that require them, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not reach the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn expect_2d(t: &Tensor, what: &str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => shape_err(format!("{what} must be 2-D, got {s:?}")),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = expect_2d(self.value(a), "matmul lhs")?;
        let (k2, n) = expect_2d(self.value(b), "matmul rhs")?;
        if k != k2 {
            return shape_err(format!("matmul inner dims {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), self.ng(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return shape_err(format!("add {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape(), data)?;
        Ok(self.push(t, Op::Add(a, b), self.ng(&[a, b])))
    }

    /// `a [n, m] + b [m]`, broadcasting `b` over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (_, m) = expect_2d(self.value(a), "add_row lhs")?;
        if self.value(b).shape() != [m] {
            return shape_err(format!("add_row bias {:?} vs width {m}", self.value(b).shape()));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(m) {
            for (x, y) in row.iter_mut().zip(bias) {
                *x += y;
            }
        }
        let t = Tensor::new(self.value(a).shape(), data)?;
        Ok(self.push(t, Op::AddRow(a, b), self.ng(&[a, b])))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return shape_err(format!("mul {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape(), data)?;
        Ok(self.push(t, Op::Mul(a, b), self.ng(&[a, b])))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|p| p * s).collect()).expect("same shape");
        self.push(t, Op::Scale(a, s), self.ng(&[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.ng(&[a]))
    }

    pub fn concat_last_dim(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(&first) = parts.first() else {
            return shape_err("concat of nothing");
        };
        let (rows, _) = expect_2d(self.value(first), "concat part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect_2d(self.value(p), "concat part")?;
            if r != rows {
                return shape_err(format!("concat rows {r} vs {rows}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let t = Tensor::new(&[rows, total], data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), self.ng(parts)))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (vocab, d) = expect_2d(self.value(table), "embedding table")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return shape_err(format!("token id {bad} outside vocabulary of {vocab}"));
        }
        let tab = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tab.row(i));
        }
        let t = Tensor::new(&[ids.len(), d], data)?;
        let ids = ids.into();
        Ok(self.push(t, Op::Embedding { table, ids }, self.ng(&[table])))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|p| p.max(0.0)).collect()).expect("same shape");
        self.push(t, Op::Relu(a), self.ng(&[a]))
    }

    /// Normalizes each row of `x [n, d]`, then applies `gain [d]` and `bias [d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (n, d) = expect_2d(self.value(x), "layer_norm input")?;
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return shape_err("layer_norm gain/bias must match the row width");
        }
        let (xv, g, b) = (self.value(x), self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(s);
            for k in 0..d {
                let h = (row[k] - mean) * s;
                xhat.push(h);
                out.push(h * g[k] + b[k]);
            }
        }
        let t = Tensor::new(&[n, d], out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(t, op, self.ng(&[x, gain, bias])))
    }

    /// Inverted dropout: kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(t, Op::Dropout { x, mask }, self.ng(&[x]))
    }

    /// Mean token cross-entropy of `logits [n, V]` against `targets`,
    /// skipping rows whose target equals `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: Option<usize>) -> Result<Var, TensorError> {
        let (n, v) = expect_2d(self.value(logits), "logits")?;
        if targets.len() != n {
            return shape_err(format!("{} targets for {n} rows", targets.len()));
        }
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(n * v);
        let mut total = 0.0;
        let mut count = 0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            probs.extend(row.iter().map(|x| (x - max).exp() / z));
            if Some(t) == ignore {
                continue;
            }
            if t >= v {
                return shape_err(format!("target {t} outside {v} classes"));
            }
            total += z.ln() + max - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::NoTargets);
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.into(),
            ignore,
            probs,
            count,
        };
        Ok(self.push(Tensor::scalar(total / count as f64), op, self.ng(&[logits])))
    }

    /// Row softmax of `x [n, m]` restricted to `allowed[i]` columns; other
    /// entries are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, allowed: &[Vec<usize>]) -> Result<Var, TensorError> {
        let (n, m) = expect_2d(self.value(x), "masked_softmax input")?;
        if allowed.len() != n {
            return shape_err(format!("{} allowed rows for {n} score rows", allowed.len()));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; n * m];
        for (i, cols) in allowed.iter().enumerate() {
            if cols.is_empty() {
                return Err(TensorError::EmptyRow { row: i });
            }
            if let Some(&bad) = cols.iter().find(|&&j| j >= m) {
                return shape_err(format!("allowed column {bad} outside width {m}"));
            }
            let row = xv.row(i);
            let max = cols.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = cols.iter().map(|&j| (row[j] - max).exp()).sum();
            for &j in cols {
                out[i * m + j] = (row[j] - max).exp() / z;
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        let op = Op::MaskedSoftmax {
            x,
            allowed: allowed.to_vec().into(),
        };
        Ok(self.push(t, op, self.ng(&[x])))
    }

    /// Per-head dot products over index pairs: `out[p, h] = a[ia[p], h] . b[ib[p], h]`
    /// where `[r, h]` is the `h`-th block of `d_head` columns. When `b` is only
    /// `d_head` wide it is shared by every head.
    pub fn pair_dot(&mut self, a: Var, b: Var, ia: &Arc<[usize]>, ib: &Arc<[usize]>, heads: usize) -> Result<Var, TensorError> {
        let (ra, wa) = expect_2d(self.value(a), "pair_dot lhs")?;
        let (rb, wb) = expect_2d(self.value(b), "pair_dot rhs")?;
        if heads == 0 || wa % heads != 0 {
            return shape_err(format!("width {wa} not divisible into {heads} heads"));
        }
        let dh = wa / heads;
        let broadcast_b = wb == dh && heads > 1;
        if wb != wa && !broadcast_b {
            return shape_err(format!("pair_dot widths {wa} vs {wb}"));
        }
        if ia.len() != ib.len() {
            return shape_err("pair_dot index lists differ in length");
        }
        if ia.iter().any(|&i| i >= ra) || ib.iter().any(|&i| i >= rb) {
            return shape_err("pair_dot index out of range");
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ia.len() * heads);
        for (&i, &j) in ia.iter().zip(ib.iter()) {
            let (x, y) = (av.row(i), bv.row(j));
            for h in 0..heads {
                let xs = &x[h * dh..(h + 1) * dh];
                let ys = if broadcast_b { y } else { &y[h * dh..(h + 1) * dh] };
                out.push(xs.iter().zip(ys).map(|(p, q)| p * q).sum());
            }
        }
        let t = Tensor::new(&[ia.len(), heads], out)?;
        let op = Op::PairDot {
            a,
            b,
            ia: ia.clone(),
            ib: ib.clone(),
            heads,
            broadcast_b,
        };
        Ok(self.push(t, op, self.ng(&[a, b])))
    }

    /// Softmax of `x [P, H]` within each row group of `pairs`, per head.
    pub fn pair_softmax(&mut self, x: Var, pairs: &Arc<PairIndex>) -> Result<Var, TensorError> {
        let (p, heads) = expect_2d(self.value(x), "pair_softmax input")?;
        if p != pairs.len() {
            return shape_err(format!("{p} scores for {} pairs", pairs.len()));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; p * heads];
        for r in 0..pairs.n_rows() {
            let range = pairs.row_range(r);
            if range.is_empty() {
                continue;
            }
            for h in 0..heads {
                let max = range.clone().map(|q| xv[q * heads + h]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for q in range.clone() {
                    let e = (xv[q * heads + h] - max).exp();
                    out[q * heads + h] = e;
                    z += e;
                }
                for q in range.clone() {
                    out[q * heads + h] /= z;
                }
            }
        }
        let t = Tensor::new(&[p, heads], out)?;
        let op = Op::PairSoftmax {
            x,
            pairs: pairs.clone(),
        };
        Ok(self.push(t, op, self.ng(&[x])))
    }

    /// `out[row(p), h] += w[p, h] * v[col(p), h]` over head blocks; output has
    /// one row per row group of `pairs`.
    pub fn pair_weighted_sum(&mut self, w: Var, v: Var, pairs: &Arc<PairIndex>) -> Result<Var, TensorError> {
        let (p, heads) = expect_2d(self.value(w), "pair weights")?;
        let (rv, width) = expect_2d(self.value(v), "pair values")?;
        if p != pairs.len() {
            return shape_err(format!("{p} weights for {} pairs", pairs.len()));
        }
        if heads == 0 || width % heads != 0 {
            return shape_err(format!("width {width} not divisible into {heads} heads"));
        }
        if pairs.cols().iter().any(|&c| c >= rv) {
            return shape_err("pair column out of range");
        }
        let dh = width / heads;
        let (wv, vv) = (self.value(w).data(), self.value(v));
        let mut out = vec![0.0; pairs.n_rows() * width];
        for (q, (&r, &c)) in pairs.rows().iter().zip(pairs.cols().iter()).enumerate() {
            let src = vv.row(c);
            let dst = &mut out[r * width..(r + 1) * width];
            for h in 0..heads {
                let wt = wv[q * heads + h];
                for k in h * dh..(h + 1) * dh {
                    dst[k] += wt * src[k];
                }
            }
        }
        let t = Tensor::new(&[pairs.n_rows(), width], out)?;
        let op = Op::PairWeightedSum {
            w,
            v,
            pairs: pairs.clone(),
        };
        Ok(self.push(t, op, self.ng(&[w, v])))
    }

    /// Gradients of scalar `loss` with respect to every trainable leaf.
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::filled(nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop(nodes, i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Zero-initialized gradient slot for `v`, or `None` if `v` needs no gradient.
fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

fn backprop(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[i].value;
    let val = |v: Var| &nodes[v.0].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2();
            let n = val(*b).dims2().1;
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = G * B^T
                gemm(m, n, k, g.data(), false, val(*b).data(), true, ga.data_mut(), true);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // dB = A^T * G
                gemm(k, m, n, val(*a).data(), true, g.data(), false, gb.data_mut(), true);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = slot(nodes, grads, *v) {
                    gv.add_assign(g);
                }
            }
        }
        Op::AddRow(a, b) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.add_assign(g);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                let m = gb.len();
                for row in g.data().chunks_exact(m) {
                    for (x, y) in gb.data_mut().iter_mut().zip(row) {
                        *x += y;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((x, gi), y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv) {
                    *x += gi * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for ((x, gi), y) in gb.data_mut().iter_mut().zip(g.data()).zip(av) {
                    *x += gi * y;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (x, gi) in ga.data_mut().iter_mut().zip(g.data()) {
                    *x += gi * s;
                }
            }
        }
        Op::Sum(a) => {
            let gi = g.item();
            if let Some(ga) = slot(nodes, grads, *a) {
                for x in ga.data_mut() {
                    *x += gi;
                }
            }
        }
        Op::Concat(parts) => {
            let (rows, total) = g.dims2();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).dims2().1;
                if let Some(gp) = slot(nodes, grads, *p) {
                    for r in 0..rows {
                        let src = &g.data()[r * total + offset..r * total + offset + w];
                        for (x, y) in gp.data_mut()[r * w..(r + 1) * w].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(gt) = slot(nodes, grads, *table) {
                let d = gt.dims2().1;
                for (r, &id) in ids.iter().enumerate() {
                    let src = g.row(r);
                    for (x, y) in gt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *x += y;
                    }
                }
            }
        }
        Op::Relu(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((x, gi), o) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                    if *o > 0.0 {
                        *x += gi;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (n, d) = g.dims2();
            let gv = val(*gain).data().to_vec();
            if let Some(gb) = slot(nodes, grads, *bias) {
                for row in g.data().chunks_exact(d) {
                    for (s, y) in gb.data_mut().iter_mut().zip(row) {
                        *s += y;
                    }
                }
            }
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (row, hrow) in g.data().chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for ((s, y), h) in gg.data_mut().iter_mut().zip(row).zip(hrow) {
                        *s += y * h;
                    }
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let mut dh = vec![0.0; d];
                for i in 0..n {
                    let grow = g.row(i);
                    let hrow = &xhat[i * d..(i + 1) * d];
                    for k in 0..d {
                        dh[k] = grow[k] * gv[k];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / d as f64;
                    let mean_dhh = dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let dst = &mut gx.data_mut()[i * d..(i + 1) * d];
                    for k in 0..d {
                        dst[k] += inv_std[i] * (dh[k] - mean_dh - hrow[k] * mean_dhh);
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                for ((s, gi), m) in gx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *s += gi * m;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            ignore,
            probs,
            count,
        } => {
            let scale = g.item() / *count as f64;
            if let Some(gl) = slot(nodes, grads, *logits) {
                let v = gl.dims2().1;
                for (i, &t) in targets.iter().enumerate() {
                    if Some(t) == *ignore {
                        continue;
                    }
                    let dst = &mut gl.data_mut()[i * v..(i + 1) * v];
                    for (k, s) in dst.iter_mut().enumerate() {
                        let onehot = if k == t { 1.0 } else { 0.0 };
                        *s += scale * (probs[i * v + k] - onehot);
                    }
                }
            }
        }
        Op::MaskedSoftmax { x, allowed } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let m = g.dims2().1;
                for (i, cols) in allowed.iter().enumerate() {
                    let dot: f64 = cols.iter().map(|&j| out.data()[i * m + j] * g.data()[i * m + j]).sum();
                    for &j in cols {
                        let y = out.data()[i * m + j];
                        gx.data_mut()[i * m + j] += y * (g.data()[i * m + j] - dot);
                    }
                }
            }
        }
        Op::PairDot {
            a,
            b,
            ia,
            ib,
            heads,
            broadcast_b,
        } => {
            let heads = *heads;
            let wa = val(*a).dims2().1;
            let wb = val(*b).dims2().1;
            let dh = wa / heads;
            let boff = |h: usize| if *broadcast_b { 0 } else { h * dh };
            if nodes[a.0].needs_grad {
                let bv = val(*b).data();
                let ga = slot(nodes, grads, *a).expect("needs grad");
                let gad = ga.data_mut();
                for (p, (&i, &j)) in ia.iter().zip(ib.iter()).enumerate() {
                    for h in 0..heads {
                        let gp = g.data()[p * heads + h];
                        if gp == 0.0 {
                            continue;
                        }
                        let src = &bv[j * wb + boff(h)..j * wb + boff(h) + dh];
                        for (x, y) in gad[i * wa + h * dh..i * wa + (h + 1) * dh].iter_mut().zip(src) {
                            *x += gp * y;
                        }
                    }
                }
            }
            if nodes[b.0].needs_grad {
                let av = val(*a).data();
                let gb = slot(nodes, grads, *b).expect("needs grad");
                let gbd = gb.data_mut();
                for (p, (&i, &j)) in ia.iter().zip(ib.iter()).enumerate() {
                    for h in 0..heads {
                        let gp = g.data()[p * heads + h];
                        if gp == 0.0 {
                            continue;
                        }
                        let src = &av[i * wa + h * dh..i * wa + (h + 1) * dh];
                        for (x, y) in gbd[j * wb + boff(h)..j * wb + boff(h) + dh].iter_mut().zip(src) {
                            *x += gp * y;
                        }
                    }
                }
            }
        }
        Op::PairSoftmax { x, pairs } => {
            if let Some(gx) = slot(nodes, grads, *x) {
                let heads = g.dims2().1;
                let (y, gd) = (out.data(), g.data());
                for r in 0..pairs.n_rows() {
                    let range = pairs.row_range(r);
                    for h in 0..heads {
                        let dot: f64 = range.clone().map(|q| y[q * heads + h] * gd[q * heads + h]).sum();
                        for q in range.clone() {
                            let k = q * heads + h;
                            gx.data_mut()[k] += y[k] * (gd[k] - dot);
                        }
                    }
                }
            }
        }
        Op::PairWeightedSum { w, v, pairs } => {
            let heads = val(*w).dims2().1;
            let width = val(*v).dims2().1;
            let dh = width / heads;
            if nodes[w.0].needs_grad {
                let vv = val(*v);
                let gw = slot(nodes, grads, *w).expect("needs grad");
                for (q, (&r, &c)) in pairs.rows().iter().zip(pairs.cols().iter()).enumerate() {
                    let (grow, vrow) = (g.row(r), vv.row(c));
                    for h in 0..heads {
                        let s: f64 = (h * dh..(h + 1) * dh).map(|k| grow[k] * vrow[k]).sum();
                        gw.data_mut()[q * heads + h] += s;
                    }
                }
            }
            if nodes[v.0].needs_grad {
                let wv = val(*w).data();
                let gv = slot(nodes, grads, *v).expect("needs grad");
                for (q, (&r, &c)) in pairs.rows().iter().zip(pairs.cols().iter()).enumerate() {
                    let grow = g.row(r);
                    let dst = &mut gv.data_mut()[c * width..(c + 1) * width];
                    for h in 0..heads {
                        let wt = wv[q * heads + h];
                        for k in h * dh..(h + 1) * dh {
                            dst[k] += wt * grow[k];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn masked_softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1.0, 1.0, 1.0]));
        let y = tape.masked_softmax(x, &[vec![0]]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.0]);
        let x = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = tape.masked_softmax(x, &[vec![0, 1]]).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
        assert_eq!(tape.masked_softmax(x, &[vec![]]).unwrap_err(), TensorError::EmptyRow { row: 0 });
    }

    #[test]
    fn masked_softmax_is_finite_for_huge_scores() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1e300, -1e300, 5.0, 800.0, 799.0, -800.0]));
        let y = tape.masked_softmax(x, &[vec![0, 1], vec![0, 1, 2]]).unwrap();
        let v = tape.value(y);
        assert!(v.is_finite());
        assert_eq!(v.at(0, 0), 1.0);
        assert_eq!(v.at(0, 2), 0.0);
        assert!((v.row(1).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_is_log_v() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 10]));
        let l = tape.cross_entropy(x, &[0, 4, 9], None).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 2.302585).abs() < 1e-6);
        let all_ignored = tape.cross_entropy(x, &[0, 0, 0], Some(0));
        assert_eq!(all_ignored.unwrap_err(), TensorError::NoTargets);
    }

    #[test]
    fn sum_gives_all_ones_and_matmul_gives_b_transpose() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let s = tape.sum(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.param(t(&[3, 2], &[1.0, -1.0, 0.5, 2.0, 0.0, 3.0]));
        let ab = tape.matmul(a, b).unwrap();
        let s = tape.sum(ab);
        let g = tape.backward(s).unwrap();
        // dA[i, k] = sum_j B[k, j]
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 2.5, 3.0, 0.0, 2.5, 3.0]);
        // dB[k, j] = sum_i A[i, k]
        assert_eq!(g.get(b).unwrap().data(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn double_backward_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(2.0));
        let s = tape.mul(w, w).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 4.0);
        assert_eq!(tape.backward(s).unwrap_err(), TensorError::GraphConsumed);
    }

    #[test]
    fn constants_get_no_gradient_and_loss_must_be_scalar() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::filled(&[2], 3.0));
        let w = tape.param(Tensor::filled(&[2], 1.0));
        let p = tape.mul(c, w).unwrap();
        assert!(matches!(tape.backward(p), Err(TensorError::NotScalar(_))));
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::filled(&[3], 1.0));
        let z = tape.mul_scalar(w, 0.0);
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape(_))));
        let e = tape.constant(Tensor::zeros(&[4, 3]));
        assert!(tape.embedding(e, &[4]).is_err());
        assert!(PairIndex::new(2, vec![1, 0], vec![0, 0]).is_err());
        assert!(PairIndex::new(2, vec![0, 2], vec![0, 0]).is_err());
    }

    #[test]
    fn pair_softmax_rows_sum_to_one() {
        let pairs = Arc::new(PairIndex::new(3, vec![0, 0, 2, 2, 2], vec![0, 1, 0, 1, 2]).unwrap());
        let mut tape = Tape::new();
        let x = tape.constant(t(&[5, 2], &[0.3, -1.0, 2.0, 0.5, 1.0, 1.0, -3.0, 0.0, 0.2, 9.0]));
        let w = tape.pair_softmax(x, &pairs).unwrap();
        let v = tape.value(w);
        for h in 0..2 {
            assert!((v.at(0, h) + v.at(1, h) - 1.0).abs() < 1e-12);
            assert!((v.at(2, h) + v.at(3, h) + v.at(4, h) - 1.0).abs() < 1e-12);
        }
    }
}
