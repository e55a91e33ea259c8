use std::sync::Arc;

use asttf_tensor::{check_primitives, PairIndex, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_primitive_matches_central_differences() {
    for seed in [1, 100, 7777] {
        for (name, res) in check_primitives(seed) {
            assert!(res.coords_checked > 0, "{name}");
            assert!(res.max_rel_error < 1e-6, "{name} (seed {seed}): {:e}", res.max_rel_error);
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn sparse_attention_matches_dense_masked_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, d) = (4, 3);
    let q = rand_tensor(&mut rng, &[n, d]);
    let k = rand_tensor(&mut rng, &[n, d]);
    let v = rand_tensor(&mut rng, &[n, d]);
    let allowed = [vec![0, 2], vec![1], vec![0, 1, 2], vec![1, 3]];
    let (rows, cols): (Vec<usize>, Vec<usize>) =
        allowed.iter().enumerate().flat_map(|(i, c)| c.iter().map(move |&j| (i, j))).unzip();
    let pairs = Arc::new(PairIndex::new(n, rows.clone(), cols.clone()).unwrap());

    let mut t = Tape::new();
    let (qv, kv, vv) = (t.constant(q.clone()), t.constant(k.clone()), t.constant(v));
    let s = t.pair_dot(qv, kv, &rows.into(), &cols.into(), 1).unwrap();
    let w = t.pair_softmax(s, &pairs).unwrap();
    let sparse = t.pair_weighted_sum(w, vv, &pairs).unwrap();

    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            scores[i * n + j] = (0..d).map(|c| q.at(i, c) * k.at(j, c)).sum();
        }
    }
    let sv = t.constant(Tensor::new(&[n, n], scores).unwrap());
    let probs = t.masked_softmax(sv, &allowed).unwrap();
    let dense = t.matmul(probs, vv).unwrap();
    for (a, b) in t.value(sparse).data().iter().zip(t.value(dense).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}
