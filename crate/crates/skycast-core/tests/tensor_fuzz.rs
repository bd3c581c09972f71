//! Property-based checks of the tensor kernels over randomized shapes,
//! values and strides.

mod support;

use proptest::prelude::*;
use skycast_core::tensor::{Graph, Tensor};
use support::gradient::{assert_grads_match, fd_grad};
use support::reference::{self as r, Ref};
use support::tolerances::CONV_FORWARD_ABS;

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f32>> {
    proptest::collection::vec(-1.0f32..1.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The im2col forward pass agrees with the nested-loop f64 reference for
    /// arbitrary shapes and both strides, and its outputs are always finite
    /// for finite inputs.
    #[test]
    fn conv_forward_matches_reference(
        (n, c, h, w, f, stride, x, wt, b) in (1usize..3, 1usize..4, 1usize..9, 1usize..9, 1usize..5, 1usize..3)
            .prop_flat_map(|(n, c, h, w, f, stride)| {
                (
                    Just(n), Just(c), Just(h), Just(w), Just(f), Just(stride),
                    unit_vec(n * c * h * w),
                    unit_vec(f * c * 9),
                    unit_vec(f),
                )
            })
    ) {
        let mut g = Graph::new();
        let xn = g.leaf(Tensor::from_vec(vec![n, c, h, w], x.clone()).unwrap());
        let wn = g.leaf(Tensor::from_vec(vec![f, c, 3, 3], wt.clone()).unwrap());
        let bn = g.leaf(Tensor::from_vec(vec![f], b.clone()).unwrap());
        let y = g.conv2d(xn, wn, bn, stride).unwrap();
        let got = g.value(y).unwrap();
        let expect = r::conv2d(
            &Ref::new(vec![n, c, h, w], to64(&x)),
            &Ref::new(vec![f, c, 3, 3], to64(&wt)),
            &Ref::new(vec![f], to64(&b)),
            stride,
        );
        prop_assert_eq!(got.shape(), expect.shape.as_slice());
        for (i, (&a, &e)) in got.data().iter().zip(&expect.data).enumerate() {
            prop_assert!(a.is_finite(), "non-finite output at {}", i);
            prop_assert!(
                (a as f64 - e).abs() < CONV_FORWARD_ABS,
                "element {}: {} vs {}", i, a, e
            );
        }
    }

    /// Dense forward agrees with the f64 reference.
    #[test]
    fn dense_forward_matches_reference(
        (n, d_in, d_out, x, wt, b) in (1usize..5, 1usize..12, 1usize..12)
            .prop_flat_map(|(n, d_in, d_out)| {
                (
                    Just(n), Just(d_in), Just(d_out),
                    unit_vec(n * d_in),
                    unit_vec(d_out * d_in),
                    unit_vec(d_out),
                )
            })
    ) {
        let mut g = Graph::new();
        let xn = g.leaf(Tensor::from_vec(vec![n, d_in], x.clone()).unwrap());
        let wn = g.leaf(Tensor::from_vec(vec![d_out, d_in], wt.clone()).unwrap());
        let bn = g.leaf(Tensor::from_vec(vec![d_out], b.clone()).unwrap());
        let y = g.dense(xn, wn, bn).unwrap();
        let expect = r::dense(
            &Ref::new(vec![n, d_in], to64(&x)),
            &Ref::new(vec![d_out, d_in], to64(&wt)),
            &Ref::new(vec![d_out], to64(&b)),
        );
        for (&a, &e) in g.value(y).unwrap().data().iter().zip(&expect.data) {
            prop_assert!((a as f64 - e).abs() < CONV_FORWARD_ABS, "{} vs {}", a, e);
        }
    }
}

proptest! {
    // Finite differencing is expensive; a handful of random geometries is
    // enough to catch stride- or padding-dependent gradient bugs.
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn conv_gradients_match_reference_on_random_geometry(
        (n, c, h, w, f, stride, x, wt, b) in (1usize..3, 1usize..3, 2usize..6, 2usize..6, 1usize..3, 1usize..3)
            .prop_flat_map(|(n, c, h, w, f, stride)| {
                (
                    Just(n), Just(c), Just(h), Just(w), Just(f), Just(stride),
                    unit_vec(n * c * h * w),
                    unit_vec(f * c * 9),
                    unit_vec(f),
                )
            })
    ) {
        let mut g = Graph::new();
        let xn = g.leaf(Tensor::from_vec(vec![n, c, h, w], x.clone()).unwrap().with_grad());
        let wn = g.leaf(Tensor::from_vec(vec![f, c, 3, 3], wt.clone()).unwrap().with_grad());
        let bn = g.leaf(Tensor::from_vec(vec![f], b.clone()).unwrap().with_grad());
        let y = g.conv2d(xn, wn, bn, stride).unwrap();
        let loss = g.mean(y).unwrap();
        g.backward(loss).unwrap();

        let eval = |xd: &[f64], wd: &[f64], bd: &[f64]| {
            let y = r::conv2d(
                &Ref::new(vec![n, c, h, w], xd.to_vec()),
                &Ref::new(vec![f, c, 3, 3], wd.to_vec()),
                &Ref::new(vec![f], bd.to_vec()),
                stride,
            );
            r::mean(&y)
        };
        let (x64, w64, b64) = (to64(&x), to64(&wt), to64(&b));
        assert_grads_match("fuzz/x", g.grad(xn).unwrap().unwrap(), &fd_grad(&x, |p| eval(p, &w64, &b64)));
        assert_grads_match("fuzz/w", g.grad(wn).unwrap().unwrap(), &fd_grad(&wt, |p| eval(&x64, p, &b64)));
        assert_grads_match("fuzz/b", g.grad(bn).unwrap().unwrap(), &fd_grad(&b, |p| eval(&x64, &w64, p)));
    }
}
