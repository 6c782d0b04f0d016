use jam_autodiff::{finite_diff_check, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

/// Entries bounded away from zero so kinks are never straddled by the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let v: f64 = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Contracts a tensor-valued op with fixed random weights to get a scalar.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(&mut rng, r, c));
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

fn check<F>(f: F, params: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    finite_diff_check(f, params, STEP, None).unwrap().max_rel_error
}

#[test]
fn matmul_adjoint_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, 2, 3);
    let b = random(&mut rng, 3, 1);
    let err = check(
        |g, v| {
            let m = g.matmul(v[0], v[1])?;
            weighted_sum(g, m, 1)
        },
        &[a, b],
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn every_primitive_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..20u64 {
        let (r, c) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let x = random(&mut rng, r, c);
        let y = random(&mut rng, r, c);
        let kinked = away_from_zero(&mut rng, r, c);
        let cases: Vec<(&str, f64)> = vec![
            (
                "add",
                check(
                    |g, v| {
                        let o = g.add(v[0], v[1])?;
                        weighted_sum(g, o, trial)
                    },
                    &[x.clone(), y.clone()],
                ),
            ),
            (
                "sub",
                check(
                    |g, v| {
                        let o = g.sub(v[0], v[1])?;
                        weighted_sum(g, o, trial)
                    },
                    &[x.clone(), y.clone()],
                ),
            ),
            (
                "mul",
                check(
                    |g, v| {
                        let o = g.mul(v[0], v[1])?;
                        weighted_sum(g, o, trial)
                    },
                    &[x.clone(), y.clone()],
                ),
            ),
            (
                "abs",
                check(
                    |g, v| {
                        let o = g.abs(v[0])?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&kinked),
                ),
            ),
            (
                "relu",
                check(
                    |g, v| {
                        let o = g.relu(v[0])?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&kinked),
                ),
            ),
            (
                "sigmoid",
                check(
                    |g, v| {
                        let o = g.sigmoid(v[0])?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&x),
                ),
            ),
            (
                "softmax",
                check(
                    |g, v| {
                        let o = g.row_softmax(v[0], 0.7)?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&x),
                ),
            ),
            (
                "row_sums",
                check(
                    |g, v| {
                        let o = g.row_sums(v[0])?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&x),
                ),
            ),
            (
                "col_sums",
                check(
                    |g, v| {
                        let o = g.col_sums(v[0])?;
                        weighted_sum(g, o, trial)
                    },
                    std::slice::from_ref(&x),
                ),
            ),
        ];
        for (name, err) in cases {
            assert!(err < TOL, "{name} trial {trial}: {err}");
        }
    }
}

#[test]
fn layer_norm_and_attention_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let x = random(&mut rng, 3, 4);
        let err = check(
            |g, v| {
                let o = g.layer_norm(v[0], 1e-5)?;
                weighted_sum(g, o, trial)
            },
            &[x],
        );
        assert!(err < TOL, "layer_norm {err}");

        let q = random(&mut rng, 6, 4);
        let k = random(&mut rng, 6, 4);
        let val = random(&mut rng, 6, 4);
        let err = check(
            |g, v| {
                let o = g.attention(v[0], v[1], v[2], 3, 2)?;
                weighted_sum(g, o, trial)
            },
            &[q, k, val],
        );
        assert!(err < TOL, "attention {err}");
    }
}

#[test]
fn structural_ops_adjoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random(&mut rng, 2, 3);
    let b = random(&mut rng, 2, 1);
    let row = random(&mut rng, 1, 3);
    let col = random(&mut rng, 2, 1);
    let err = check(
        |g, v| {
            let cat = g.concat_cols(&[v[0], v[1]])?;
            let sel = g.index_select(cat, &[1, 0, 1])?;
            let re = g.reshape(sel, 4, 3)?;
            let br = g.broadcast_rows(v[2], 4)?;
            let s = g.add(re, br)?;
            let bc = g.broadcast_cols(v[3], 6)?;
            let bc = g.reshape(bc, 4, 3)?;
            let p = g.mul(s, bc)?;
            let p = g.scale(p, -1.7)?;
            let p = g.add_row(p, v[2])?;
            weighted_sum(g, p, 3)
        },
        &[a, b, row, col],
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn group_matmul_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..10 {
        let left = random(&mut rng, 2, 3);
        let x = random(&mut rng, 6, 4);
        let err = check(
            |g, v| {
                let o = g.group_matmul(&left, v[0])?;
                weighted_sum(g, o, trial)
            },
            &[x],
        );
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn group_matmul_matches_blockwise_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let left = random(&mut rng, 2, 3);
    let x = random(&mut rng, 9, 2);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let out = g.group_matmul(&left, xv).unwrap();
    for b in 0..3 {
        let block = g.constant(Tensor::from_fn(3, 2, |r, c| x.get(b * 3 + r, c)));
        let l = g.constant(left.clone());
        let want = g.matmul(l, block).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((g.value(out).get(b * 2 + r, c) - g.value(want).get(r, c)).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn backward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut g = Graph::new();
        let x = g.leaf(random(&mut rng, 4, 6));
        let w = g.leaf(random(&mut rng, 6, 6));
        let h = g.matmul(x, w).unwrap();
        let a = g.attention(h, h, h, 2, 3).unwrap();
        let n = g.layer_norm(a, 1e-5).unwrap();
        let s = g.row_softmax(n, 0.3).unwrap();
        let loss = weighted_sum(&mut g, s, 8).unwrap();
        g.backward(loss).unwrap();
        (g.grad(x).unwrap(), g.grad(w).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_normalized_and_shift_invariant(
        vals in prop::collection::vec(-50.0f64..50.0, 1..8),
        shift in -100.0f64..100.0,
        tau in 0.01f64..5.0,
    ) {
        let n = vals.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vals.clone()));
        let xs = g.constant(Tensor::row(vals.iter().map(|v| v + shift).collect()));
        let y = g.row_softmax(x, tau).unwrap();
        let ys = g.row_softmax(xs, tau).unwrap();
        let total: f64 = g.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(g.value(y).cols(), n);
        prop_assert!(g.value(y).max_abs_diff(g.value(ys)) < 1e-9);
    }

    #[test]
    fn matmul_gradient_property(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let a = random(&mut rng, m, k);
        let b = random(&mut rng, k, n);
        let err = check(|g, v| { let o = g.matmul(v[0], v[1])?; weighted_sum(g, o, seed) }, &[a, b]);
        prop_assert!(err < TOL);
    }
}
