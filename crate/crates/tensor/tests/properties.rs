use avcrn_tensor::{soft_threshold_value, Conv2dSpec, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn soft_threshold_shrinks_toward_zero(x in -10.0f64..10.0, tau in 0.0f64..5.0) {
        let y = soft_threshold_value(x, tau);
        prop_assert!(y.abs() <= x.abs());
        prop_assert!(y * x >= 0.0);
        prop_assert_eq!(y == 0.0, x.abs() <= tau);
        prop_assert!(((x.abs() - y.abs()) - x.abs().min(tau)).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn conv_output_extent_formula(h in 1usize..30, k in 1usize..6, s in 1usize..4, p in 0usize..3) {
        let spec = Conv2dSpec::new((s, 1), (p, 0));
        let expected = (h + 2 * p).checked_sub(k).map(|r| r / s + 1);
        prop_assert_eq!(spec.conv_out((h, 7), (k, 1)).map(|o| o.0), expected);
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform(&[2, 3, 8, 6], -1.0, 1.0, &mut rng));
        let k = tape.leaf(Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng));
        let y = tape.conv2d(x, k, None, Conv2dSpec::new((2, 1), (1, 1))).unwrap();
        let y = tape.elu(y).unwrap();
        let p = tape.global_avg_pool_abs(y).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        (g.wrt(x), g.wrt(k))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(&[3]));
    let unused = tape.leaf(Tensor::ones(&[2, 2]));
    let l = tape.sum(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(x).data(), &[1.0; 3]);
    assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::ones(&[3]));
    let y = tape.neg(x).unwrap();
    assert!(tape.backward(y).is_err());
}

#[test]
fn non_finite_values_are_caught() {
    let mut tape = Tape::<f64>::new();
    tape.set_check_finite(true);
    let x = tape.leaf(Tensor::full(&[2], f64::MAX));
    let y = tape.add(x, x);
    assert!(y.is_err());
}
