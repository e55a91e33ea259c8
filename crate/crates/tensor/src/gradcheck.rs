use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{PairIndex, Tape, Var};
use crate::tensor::Tensor;

/// Most coordinates probed per tensor; larger tensors are subsampled.
pub const MAX_COORDS_PER_TENSOR: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic[t]` with central differences of `loss_fn` for each
/// tensor in `params`. Coordinates are perturbed in place and restored.
pub fn finite_diff_check(
    params: &mut [Tensor],
    analytic: &[Tensor],
    mut loss_fn: impl FnMut(&[Tensor]) -> f64,
    eps: f64,
    seed: u64,
) -> GradCheck {
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for t in 0..params.len() {
        let n = params[t].len();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            sample(&mut rng, n, MAX_COORDS_PER_TENSOR).into_vec()
        };
        for k in coords {
            let orig = params[t].data()[k];
            params[t].data_mut()[k] = orig + eps;
            let plus = loss_fn(params);
            params[t].data_mut()[k] = orig - eps;
            let minus = loss_fn(params);
            params[t].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[t].data()[k], numeric));
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: worst,
        coords_checked: checked,
    }
}

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized to shape")
}

/// Checks one op: random inputs of `shapes`, output reduced by a fixed
/// random weighting so every output entry matters.
pub fn check_op(shapes: &[&[usize]], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Tensor> = shapes.iter().map(|s| uniform_tensor(&mut rng, s)).collect();
    let weight_seed = rng.gen::<u64>();
    let run = |ps: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let c = tape.constant(uniform_tensor(&mut ChaCha8Rng::seed_from_u64(weight_seed), &shape));
        let weighted = tape.mul(out, c).expect("same shape");
        let loss = tape.sum(weighted);
        (tape, loss, vars)
    };
    let (mut tape, loss, vars) = run(&params);
    let mut grads = tape.backward(loss).expect("fresh tape");
    let analytic: Vec<Tensor> = vars.iter().zip(&params).map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();
    finite_diff_check(
        &mut params,
        &analytic,
        |ps| {
            let (tape, loss, _) = run(ps);
            tape.value(loss).item()
        },
        1e-5,
        seed,
    )
}

/// Finite-difference check of every primitive in isolation.
pub fn check_primitives(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let ia: Arc<[usize]> = vec![0, 0, 1, 2, 2, 2].into();
    let ib: Arc<[usize]> = vec![1, 3, 0, 2, 3, 1].into();
    let buckets: Arc<[usize]> = vec![0, 2, 1, 1, 0, 2].into();
    // output row 3 has no pairs on purpose
    let pairs = Arc::new(PairIndex::new(4, ia.to_vec(), ib.to_vec()).expect("grouped rows"));
    let allowed = vec![vec![0, 2], vec![1], vec![0, 1, 2, 3], vec![3, 1]];
    let s = seed;
    vec![
        ("matmul", check_op(&[&[3, 4], &[4, 5]], s, |t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add", check_op(&[&[3, 4], &[3, 4]], s + 1, |t, v| t.add(v[0], v[1]).unwrap())),
        ("add_row", check_op(&[&[3, 4], &[4]], s + 2, |t, v| t.add_row(v[0], v[1]).unwrap())),
        ("mul", check_op(&[&[2, 3], &[2, 3]], s + 3, |t, v| t.mul(v[0], v[1]).unwrap())),
        ("mul_scalar", check_op(&[&[2, 3]], s + 4, |t, v| t.mul_scalar(v[0], -1.7))),
        ("sum", check_op(&[&[2, 3]], s + 5, |t, v| t.sum(v[0]))),
        (
            "concat_last_dim",
            check_op(&[&[3, 2], &[3, 4], &[3, 1]], s + 6, |t, v| t.concat_last_dim(v).unwrap()),
        ),
        (
            "embedding_lookup",
            check_op(&[&[5, 3]], s + 7, |t, v| t.embedding(v[0], &[4, 0, 4, 2]).unwrap()),
        ),
        ("relu", check_op(&[&[4, 5]], s + 8, |t, v| t.relu(v[0]))),
        (
            "layer_norm",
            check_op(&[&[3, 6], &[6], &[6]], s + 9, |t, v| t.layer_norm(v[0], v[1], v[2]).unwrap()),
        ),
        (
            "dropout",
            check_op(&[&[4, 4]], s + 10, |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(99))),
        ),
        (
            "cross_entropy",
            check_op(&[&[4, 6]], s + 11, |t, v| t.cross_entropy(v[0], &[1, 0, 5, 3], Some(0)).unwrap()),
        ),
        (
            "masked_softmax",
            check_op(&[&[4, 4]], s + 12, |t, v| t.masked_softmax(v[0], &allowed).unwrap()),
        ),
        (
            "pair_dot",
            check_op(&[&[3, 6], &[4, 6]], s + 13, |t, v| t.pair_dot(v[0], v[1], &ia, &ib, 2).unwrap()),
        ),
        (
            "pair_dot_shared_table",
            check_op(&[&[3, 6], &[3, 3]], s + 14, |t, v| t.pair_dot(v[0], v[1], &ia, &buckets, 2).unwrap()),
        ),
        (
            "pair_softmax",
            check_op(&[&[6, 2]], s + 15, |t, v| t.pair_softmax(v[0], &pairs).unwrap()),
        ),
        (
            "pair_weighted_sum",
            check_op(&[&[6, 2], &[4, 6]], s + 16, |t, v| t.pair_weighted_sum(v[0], v[1], &pairs).unwrap()),
        ),
    ]
}
