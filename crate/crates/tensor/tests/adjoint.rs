//! `conv_transpose2d` is the exact adjoint of `conv2d`:
//! <conv(x), y> == <x, convT(y)> for random geometries.

use avcrn_tensor::{Conv2dSpec, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn inner_product_identity_on_random_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 100 {
        let batch = rng.random_range(1..=2);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let kh = rng.random_range(1..=4);
        let kw = rng.random_range(1..=4);
        let stride = (rng.random_range(1..=3), rng.random_range(1..=3));
        let pad = (rng.random_range(0..kh), rng.random_range(0..kw));
        let h = rng.random_range(kh.max(1)..=10);
        let w = rng.random_range(kw.max(1)..=10);
        let spec = Conv2dSpec::new(stride, pad);
        let Some((oh, ow)) = spec.conv_out((h, w), (kh, kw)) else { continue };
        // output padding that makes the transpose land back on (h, w)
        let base = spec.conv_transpose_out((oh, ow), (kh, kw));
        let Some((bh, bw)) = base else { continue };
        if h < bh || w < bw || h - bh >= stride.0 || w - bw >= stride.1 {
            continue;
        }
        let spec_t = spec.with_output_padding((h - bh, w - bw));

        let x = Tensor::<f64>::uniform(&[batch, cin, h, w], -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[cout, cin, kh, kw], -1.0, 1.0, &mut rng);
        let y = Tensor::<f64>::uniform(&[batch, cout, oh, ow], -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let kv = tape.constant(k.clone());
        let yv = tape.constant(y.clone());
        let cx = tape.conv2d(xv, kv, None, spec).unwrap();
        let ty = tape.conv_transpose2d(yv, kv, None, spec_t).unwrap();
        assert_eq!(tape.shape(ty), x.shape());
        let lhs = tape.value(cx).dot(&y).unwrap();
        let rhs = x.dot(tape.value(ty)).unwrap();
        worst = worst.max((lhs - rhs).abs());
        cases += 1;
    }
    assert!(worst <= 1e-10, "adjoint gap {worst}");
}

#[test]
fn transpose_backward_data_matches_conv_forward() {
    // the data gradient of conv2d is the transposed convolution of the upstream gradient
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = Conv2dSpec::new((2, 1), (1, 1));
    let x = Tensor::<f64>::uniform(&[1, 3, 10, 6], -1.0, 1.0, &mut rng);
    let k = Tensor::<f64>::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let kv = tape.constant(k.clone());
    let y = tape.conv2d(xv, kv, None, spec).unwrap();
    let g = Tensor::<f64>::uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let gv = tape.constant(g.clone());
    let prod = tape.mul(y, gv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let dx = tape.backward(loss).unwrap().wrt(xv);

    let mut t2 = Tape::new();
    let gv = t2.constant(g);
    let kv = t2.constant(k);
    let ty = t2
        .conv_transpose2d(gv, kv, None, spec.with_output_padding((1, 0)))
        .unwrap();
    assert!(t2.value(ty).max_abs_diff(&dx).unwrap() < 1e-12);
}
