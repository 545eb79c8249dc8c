mod common;

use cftnet::tensor::{Tape, Var, BN_EPSILON};
use common::{check_gradients, random_tensor, rng};
use proptest::prelude::*;
use rand::Rng;

/// Random linear functional of `v`. Its stream is offset from the input
/// stream so the weights are not a multiple of the inputs.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let mut r = rng(seed.wrapping_add(1 << 32));
    let w = (0..tape.value(v).len()).map(|_| r.random_range(-1.0..1.0)).collect();
    tape.weighted_sum(v, w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv2d_matches_finite_differences(
        seed in 0u64..1000,
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..8, w in 3usize..8,
        kh in 1usize..4, kw in 1usize..4,
        stride in 1usize..3, padding in 0usize..2,
    ) {
        prop_assume!(h + 2 * padding >= kh && w + 2 * padding >= kw);
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[n, cin, h, w], -1.0, 1.0);
        let k = random_tensor(&mut r, &[cout, cin, kh, kw], -1.0, 1.0);
        let b = random_tensor(&mut r, &[cout], -1.0, 1.0);
        let g = check_gradients(&[x, k, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, padding).unwrap();
            project(t, y, seed)
        }, None, false);
        prop_assert!(g.max_rel < 1e-4, "{g:?}");
    }

    #[test]
    fn linear_matches_finite_differences(seed in 0u64..1000, n in 1usize..5, i in 1usize..9, o in 1usize..7) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[n, i], -1.0, 1.0);
        let w = random_tensor(&mut r, &[o, i], -1.0, 1.0);
        let b = random_tensor(&mut r, &[o], -1.0, 1.0);
        let g = check_gradients(&[x, w, b], |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            project(t, y, seed)
        }, None, false);
        prop_assert!(g.max_rel < 1e-4, "{g:?}");
    }

    #[test]
    fn batch_norm_train_matches_finite_differences(seed in 0u64..1000, n in 2usize..5, c in 1usize..4, hw in 1usize..4) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[n, c, hw, hw], -2.0, 2.0);
        let gamma = random_tensor(&mut r, &[c], 0.5, 1.5);
        let beta = random_tensor(&mut r, &[c], -1.0, 1.0);
        let g = check_gradients(&[x, gamma, beta], |t, v| {
            let (y, _, _) = t.batch_norm_train(v[0], v[1], v[2], BN_EPSILON).unwrap();
            project(t, y, seed)
        }, None, false);
        prop_assert!(g.max_rel < 1e-4, "{g:?}");
    }

    #[test]
    fn conv_relu_pool_chain(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, &[2, 2, 6, 6], -1.0, 1.0);
        let k = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = random_tensor(&mut r, &[3], -1.0, 1.0);
        let g = check_gradients(&[x, k, b], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1).unwrap();
            let y = t.relu(y).unwrap();
            let y = t.maxpool2(y).unwrap();
            let y = t.flatten(y).unwrap();
            project(t, y, seed)
        }, None, true);
        prop_assert!(g.max_rel < 1e-4, "{g:?}");
    }
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    let mut r = rng(9);
    let x = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let g = check_gradients(&[x], |t, v| {
        let a = t.scale(v[0], 3.0).unwrap();
        let b = t.add(a, v[0]).unwrap();
        let c = t.relu(b).unwrap();
        t.sum(c).unwrap()
    }, None, true);
    assert!(g.max_rel < 1e-6, "{g:?}");
}
