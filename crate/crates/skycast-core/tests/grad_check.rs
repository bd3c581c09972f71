//! Analytic gradients versus central finite differences on an independent
//! 64-bit reference forward pass.
//!
//! Each case builds the same computation twice: once on the f32 graph (whose
//! `backward` produces the gradients under test) and once with the plain
//! nested-loop f64 implementations in `support::reference`, which are
//! differentiated numerically.

mod support;

use rand_chacha::ChaCha8Rng;
use skycast_core::seed::{rng_for, uniform01};
use skycast_core::tensor::{Graph, Tensor};
use support::gradient::{assert_grads_match, fd_grad};
use support::reference::{self as r, Ref};

fn rv(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n)
        .map(|_| ((uniform01(rng) * 2.0 - 1.0) * scale) as f32)
        .collect()
}

fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

#[test]
fn conv2d_stride1_gradients() {
    let mut rng = rng_for(101, "grad-conv-s1");
    let (n, c, h, w, f) = (2, 2, 5, 5, 3);
    let x = rv(&mut rng, n * c * h * w, 0.8);
    let wt = rv(&mut rng, f * c * 9, 0.5);
    let b = rv(&mut rng, f, 0.3);
    let t = rv(&mut rng, n * f * h * w, 0.8);

    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![n, c, h, w], x.clone()).unwrap().with_grad());
    let wn = g.leaf(Tensor::from_vec(vec![f, c, 3, 3], wt.clone()).unwrap().with_grad());
    let bn = g.leaf(Tensor::from_vec(vec![f], b.clone()).unwrap().with_grad());
    let tn = g.leaf(Tensor::from_vec(vec![n, f, h, w], t.clone()).unwrap());
    let y = g.conv2d(xn, wn, bn, 1).unwrap();
    let loss = g.mse(y, tn).unwrap();
    g.backward(loss).unwrap();

    let tref = Ref::from_f32(&[n, f, h, w], &t);
    let eval = |xd: &[f64], wd: &[f64], bd: &[f64]| {
        let y = r::conv2d(
            &Ref::new(vec![n, c, h, w], xd.to_vec()),
            &Ref::new(vec![f, c, 3, 3], wd.to_vec()),
            &Ref::new(vec![f], bd.to_vec()),
            1,
        );
        r::mse(&y, &tref)
    };
    let (w64, b64, x64) = (to64(&wt), to64(&b), to64(&x));
    assert_grads_match(
        "conv-s1/x",
        g.grad(xn).unwrap().unwrap(),
        &fd_grad(&x, |p| eval(p, &w64, &b64)),
    );
    assert_grads_match(
        "conv-s1/w",
        g.grad(wn).unwrap().unwrap(),
        &fd_grad(&wt, |p| eval(&x64, p, &b64)),
    );
    assert_grads_match(
        "conv-s1/b",
        g.grad(bn).unwrap().unwrap(),
        &fd_grad(&b, |p| eval(&x64, &w64, p)),
    );
}

#[test]
fn conv2d_stride2_gradients_on_odd_sizes() {
    let mut rng = rng_for(102, "grad-conv-s2");
    let (n, c, h, w, f) = (2, 3, 7, 5, 2);
    let (oh, ow) = (4, 3);
    let x = rv(&mut rng, n * c * h * w, 0.8);
    let wt = rv(&mut rng, f * c * 9, 0.5);
    let b = rv(&mut rng, f, 0.3);
    let t = rv(&mut rng, n * f * oh * ow, 0.8);

    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![n, c, h, w], x.clone()).unwrap().with_grad());
    let wn = g.leaf(Tensor::from_vec(vec![f, c, 3, 3], wt.clone()).unwrap().with_grad());
    let bn = g.leaf(Tensor::from_vec(vec![f], b.clone()).unwrap().with_grad());
    let tn = g.leaf(Tensor::from_vec(vec![n, f, oh, ow], t.clone()).unwrap());
    let y = g.conv2d(xn, wn, bn, 2).unwrap();
    assert_eq!(g.value(y).unwrap().shape(), &[n, f, oh, ow]);
    let loss = g.mse(y, tn).unwrap();
    g.backward(loss).unwrap();

    let tref = Ref::from_f32(&[n, f, oh, ow], &t);
    let eval = |xd: &[f64], wd: &[f64], bd: &[f64]| {
        let y = r::conv2d(
            &Ref::new(vec![n, c, h, w], xd.to_vec()),
            &Ref::new(vec![f, c, 3, 3], wd.to_vec()),
            &Ref::new(vec![f], bd.to_vec()),
            2,
        );
        r::mse(&y, &tref)
    };
    let (w64, b64, x64) = (to64(&wt), to64(&b), to64(&x));
    assert_grads_match(
        "conv-s2/x",
        g.grad(xn).unwrap().unwrap(),
        &fd_grad(&x, |p| eval(p, &w64, &b64)),
    );
    assert_grads_match(
        "conv-s2/w",
        g.grad(wn).unwrap().unwrap(),
        &fd_grad(&wt, |p| eval(&x64, p, &b64)),
    );
    assert_grads_match(
        "conv-s2/b",
        g.grad(bn).unwrap().unwrap(),
        &fd_grad(&b, |p| eval(&x64, &w64, p)),
    );
}

#[test]
fn dense_relu_chain_gradients() {
    let mut rng = rng_for(103, "grad-dense");
    let (n, d0, d1, d2) = (3, 6, 5, 2);
    let x = rv(&mut rng, n * d0, 0.9);
    let w1 = rv(&mut rng, d1 * d0, 0.6);
    let b1 = rv(&mut rng, d1, 0.2);
    let w2 = rv(&mut rng, d2 * d1, 0.6);
    let b2 = rv(&mut rng, d2, 0.2);
    let t = rv(&mut rng, n * d2, 0.9);

    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![n, d0], x.clone()).unwrap().with_grad());
    let w1n = g.leaf(Tensor::from_vec(vec![d1, d0], w1.clone()).unwrap().with_grad());
    let b1n = g.leaf(Tensor::from_vec(vec![d1], b1.clone()).unwrap().with_grad());
    let w2n = g.leaf(Tensor::from_vec(vec![d2, d1], w2.clone()).unwrap().with_grad());
    let b2n = g.leaf(Tensor::from_vec(vec![d2], b2.clone()).unwrap().with_grad());
    let tn = g.leaf(Tensor::from_vec(vec![n, d2], t.clone()).unwrap());
    let h1 = g.dense(xn, w1n, b1n).unwrap();
    let a1 = g.relu(h1).unwrap();
    let h2 = g.dense(a1, w2n, b2n).unwrap();
    let loss = g.mse(h2, tn).unwrap();
    g.backward(loss).unwrap();

    let tref = Ref::from_f32(&[n, d2], &t);
    let eval = |xd: &[f64], w1d: &[f64], b1d: &[f64], w2d: &[f64], b2d: &[f64]| {
        let h1 = r::dense(
            &Ref::new(vec![n, d0], xd.to_vec()),
            &Ref::new(vec![d1, d0], w1d.to_vec()),
            &Ref::new(vec![d1], b1d.to_vec()),
        );
        let a1 = r::relu(&h1);
        let h2 = r::dense(
            &a1,
            &Ref::new(vec![d2, d1], w2d.to_vec()),
            &Ref::new(vec![d2], b2d.to_vec()),
        );
        r::mse(&h2, &tref)
    };
    let (x64, w164, b164, w264, b264) = (to64(&x), to64(&w1), to64(&b1), to64(&w2), to64(&b2));
    assert_grads_match(
        "dense/x",
        g.grad(xn).unwrap().unwrap(),
        &fd_grad(&x, |p| eval(p, &w164, &b164, &w264, &b264)),
    );
    assert_grads_match(
        "dense/w1",
        g.grad(w1n).unwrap().unwrap(),
        &fd_grad(&w1, |p| eval(&x64, p, &b164, &w264, &b264)),
    );
    assert_grads_match(
        "dense/b1",
        g.grad(b1n).unwrap().unwrap(),
        &fd_grad(&b1, |p| eval(&x64, &w164, p, &w264, &b264)),
    );
    assert_grads_match(
        "dense/w2",
        g.grad(w2n).unwrap().unwrap(),
        &fd_grad(&w2, |p| eval(&x64, &w164, &b164, p, &b264)),
    );
    assert_grads_match(
        "dense/b2",
        g.grad(b2n).unwrap().unwrap(),
        &fd_grad(&b2, |p| eval(&x64, &w164, &b164, &w264, p)),
    );
}

#[test]
fn residual_block_gradients() {
    // x -> conv -> relu -> conv -> (+x) -> relu -> mean, exercising the
    // fan-out of x into both the trunk and the skip connection.
    let mut rng = rng_for(104, "grad-residual");
    let (n, c, h, w) = (2, 3, 4, 4);
    let x = rv(&mut rng, n * c * h * w, 0.8);
    let w1 = rv(&mut rng, c * c * 9, 0.4);
    let b1 = rv(&mut rng, c, 0.2);
    let w2 = rv(&mut rng, c * c * 9, 0.4);
    let b2 = rv(&mut rng, c, 0.2);

    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![n, c, h, w], x.clone()).unwrap().with_grad());
    let w1n = g.leaf(Tensor::from_vec(vec![c, c, 3, 3], w1.clone()).unwrap().with_grad());
    let b1n = g.leaf(Tensor::from_vec(vec![c], b1.clone()).unwrap().with_grad());
    let w2n = g.leaf(Tensor::from_vec(vec![c, c, 3, 3], w2.clone()).unwrap().with_grad());
    let b2n = g.leaf(Tensor::from_vec(vec![c], b2.clone()).unwrap().with_grad());
    let c1 = g.conv2d(xn, w1n, b1n, 1).unwrap();
    let a1 = g.relu(c1).unwrap();
    let c2 = g.conv2d(a1, w2n, b2n, 1).unwrap();
    let s = g.add(c2, xn).unwrap();
    let out = g.relu(s).unwrap();
    let loss = g.mean(out).unwrap();
    g.backward(loss).unwrap();

    let eval = |xd: &[f64], w1d: &[f64], b1d: &[f64], w2d: &[f64], b2d: &[f64]| {
        let xr = Ref::new(vec![n, c, h, w], xd.to_vec());
        let c1 = r::conv2d(
            &xr,
            &Ref::new(vec![c, c, 3, 3], w1d.to_vec()),
            &Ref::new(vec![c], b1d.to_vec()),
            1,
        );
        let a1 = r::relu(&c1);
        let c2 = r::conv2d(
            &a1,
            &Ref::new(vec![c, c, 3, 3], w2d.to_vec()),
            &Ref::new(vec![c], b2d.to_vec()),
            1,
        );
        let s = r::add(&c2, &xr);
        r::mean(&r::relu(&s))
    };
    let (x64, w164, b164, w264, b264) = (to64(&x), to64(&w1), to64(&b1), to64(&w2), to64(&b2));
    assert_grads_match(
        "residual/x",
        g.grad(xn).unwrap().unwrap(),
        &fd_grad(&x, |p| eval(p, &w164, &b164, &w264, &b264)),
    );
    assert_grads_match(
        "residual/w1",
        g.grad(w1n).unwrap().unwrap(),
        &fd_grad(&w1, |p| eval(&x64, p, &b164, &w264, &b264)),
    );
    assert_grads_match(
        "residual/w2",
        g.grad(w2n).unwrap().unwrap(),
        &fd_grad(&w2, |p| eval(&x64, &w164, &b164, p, &b264)),
    );
    assert_grads_match(
        "residual/b1",
        g.grad(b1n).unwrap().unwrap(),
        &fd_grad(&b1, |p| eval(&x64, &w164, p, &w264, &b264)),
    );
    assert_grads_match(
        "residual/b2",
        g.grad(b2n).unwrap().unwrap(),
        &fd_grad(&b2, |p| eval(&x64, &w164, &b164, &w264, p)),
    );
}

#[test]
fn narrow_concat_gradients() {
    // Split a feature matrix into two column ranges, transform one, rejoin,
    // regress. Narrow must route gradients only into its slice.
    let mut rng = rng_for(105, "grad-narrow");
    let (n, d) = (3, 6);
    let x = rv(&mut rng, n * d, 0.9);
    let w = rv(&mut rng, 4 * 2, 0.6);
    let b = rv(&mut rng, 4, 0.2);
    let t = rv(&mut rng, n * 8, 0.9);

    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![n, d], x.clone()).unwrap().with_grad());
    let wn = g.leaf(Tensor::from_vec(vec![4, 2], w.clone()).unwrap().with_grad());
    let bn = g.leaf(Tensor::from_vec(vec![4], b.clone()).unwrap().with_grad());
    let tn = g.leaf(Tensor::from_vec(vec![n, 8], t.clone()).unwrap());
    let left = g.narrow(xn, 1, 0, 4).unwrap();
    let right = g.narrow(xn, 1, 4, 2).unwrap();
    let h = g.dense(right, wn, bn).unwrap();
    let a = g.relu(h).unwrap();
    let joined = g.concat(left, a, 1).unwrap();
    let loss = g.mse(joined, tn).unwrap();
    g.backward(loss).unwrap();

    let tref = Ref::from_f32(&[n, 8], &t);
    let eval = |xd: &[f64], wd: &[f64], bd: &[f64]| {
        let xr = Ref::new(vec![n, d], xd.to_vec());
        let left = r::narrow_cols(&xr, 0, 4);
        let right = r::narrow_cols(&xr, 4, 2);
        let h = r::dense(
            &right,
            &Ref::new(vec![4, 2], wd.to_vec()),
            &Ref::new(vec![4], bd.to_vec()),
        );
        let joined = r::concat_cols(&left, &r::relu(&h));
        r::mse(&joined, &tref)
    };
    let (x64, w64, b64) = (to64(&x), to64(&w), to64(&b));
    assert_grads_match(
        "narrow/x",
        g.grad(xn).unwrap().unwrap(),
        &fd_grad(&x, |p| eval(p, &w64, &b64)),
    );
    assert_grads_match(
        "narrow/w",
        g.grad(wn).unwrap().unwrap(),
        &fd_grad(&w, |p| eval(&x64, p, &b64)),
    );
    assert_grads_match(
        "narrow/b",
        g.grad(bn).unwrap().unwrap(),
        &fd_grad(&b, |p| eval(&x64, &w64, p)),
    );
}

#[test]
fn mean_gradient_is_uniform() {
    let mut rng = rng_for(106, "grad-mean");
    let x = rv(&mut rng, 12, 1.0);
    let mut g = Graph::new();
    let xn = g.leaf(Tensor::from_vec(vec![3, 4], x.clone()).unwrap().with_grad());
    let loss = g.mean(xn).unwrap();
    g.backward(loss).unwrap();
    let eval = |xd: &[f64]| r::mean(&Ref::new(vec![3, 4], xd.to_vec()));
    assert_grads_match("mean/x", g.grad(xn).unwrap().unwrap(), &fd_grad(&x, eval));
    for &gv in g.grad(xn).unwrap().unwrap() {
        assert_eq!(gv, 1.0 / 12.0);
    }
}

/// A miniature of the full dual-branch forecast network: convolutional trunk
/// with a residual block and strided downsampling on the image, a small
/// residual dense branch on the metadata vector, concatenated into a
/// regression head. Every operation the real model uses appears here.
#[test]
fn dual_branch_miniature_gradients() {
    let mut rng = rng_for(107, "grad-mini-net");
    let (n, cin, s) = (2, 2, 7);
    let cf = 4; // trunk filters
    let meta_d = 5;

    let img = rv(&mut rng, n * cin * s * s, 0.9);
    let meta = rv(&mut rng, n * meta_d, 0.9);
    let target = rv(&mut rng, n, 0.9);

    // Parameters in declaration order.
    let shapes: Vec<(&str, Vec<usize>)> = vec![
        ("stem_w", vec![cf, cin, 3, 3]),
        ("stem_b", vec![cf]),
        ("res1_w", vec![cf, cf, 3, 3]),
        ("res1_b", vec![cf]),
        ("res2_w", vec![cf, cf, 3, 3]),
        ("res2_b", vec![cf]),
        ("down_w", vec![cf, cf, 3, 3]),
        ("down_b", vec![cf]),
        ("fc1_w", vec![8, cf * 2 * 2]),
        ("fc1_b", vec![8]),
        ("fc2_w", vec![4, 8]),
        ("fc2_b", vec![4]),
        ("ann1_w", vec![4, meta_d]),
        ("ann1_b", vec![4]),
        ("ann2_w", vec![4, 4]),
        ("ann2_b", vec![4]),
        ("head_w", vec![3, 8]),
        ("head_b", vec![3]),
        ("out_w", vec![1, 3]),
        ("out_b", vec![1]),
    ];
    let params: Vec<(String, Vec<usize>, Vec<f32>)> = shapes
        .into_iter()
        .map(|(name, shape)| {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let scale = (1.0 / fan_in as f64).sqrt();
            let v = rv(&mut rng, shape.iter().product(), scale.max(0.2));
            (name.to_string(), shape, v)
        })
        .collect();

    // f32 graph.
    let mut g = Graph::new();
    let img_n = g.leaf(
        Tensor::from_vec(vec![n, cin, s, s], img.clone())
            .unwrap()
            .with_grad(),
    );
    let meta_n = g.leaf(Tensor::from_vec(vec![n, meta_d], meta.clone()).unwrap().with_grad());
    let target_n = g.leaf(Tensor::from_vec(vec![n, 1], target.clone()).unwrap());
    let pn: Vec<_> = params
        .iter()
        .map(|(_, shape, v)| {
            g.leaf(
                Tensor::from_vec(shape.clone(), v.clone())
                    .unwrap()
                    .with_grad(),
            )
        })
        .collect();

    let stem = g.conv2d(img_n, pn[0], pn[1], 2).unwrap(); // [n,cf,4,4]
    let stem = g.relu(stem).unwrap();
    let r1 = g.conv2d(stem, pn[2], pn[3], 1).unwrap();
    let r1 = g.relu(r1).unwrap();
    let r2 = g.conv2d(r1, pn[4], pn[5], 1).unwrap();
    let sum = g.add(r2, stem).unwrap();
    let res = g.relu(sum).unwrap();
    let down = g.conv2d(res, pn[6], pn[7], 2).unwrap(); // [n,cf,2,2]
    let down = g.relu(down).unwrap();
    let flat = g.flatten(down).unwrap(); // [n, cf*4]
    let fc1 = g.dense(flat, pn[8], pn[9]).unwrap();
    let fc1 = g.relu(fc1).unwrap();
    let fc2 = g.dense(fc1, pn[10], pn[11]).unwrap();
    let cnn_out = g.relu(fc2).unwrap(); // [n,4]

    let a1 = g.dense(meta_n, pn[12], pn[13]).unwrap();
    let a1 = g.relu(a1).unwrap();
    let a2 = g.dense(a1, pn[14], pn[15]).unwrap();
    let a2s = g.add(a2, a1).unwrap();
    let ann_out = g.relu(a2s).unwrap(); // [n,4]

    let merged = g.concat(cnn_out, ann_out, 1).unwrap(); // [n,8]
    let h = g.dense(merged, pn[16], pn[17]).unwrap();
    let h = g.relu(h).unwrap();
    let pred = g.dense(h, pn[18], pn[19]).unwrap(); // [n,1]
    let loss = g.mse(pred, target_n).unwrap();
    g.backward(loss).unwrap();

    // f64 reference: leaves[0] = image, leaves[1] = metadata, then params.
    let target_ref = Ref::from_f32(&[n, 1], &target);
    let shapes64: Vec<Vec<usize>> = std::iter::once(vec![n, cin, s, s])
        .chain(std::iter::once(vec![n, meta_d]))
        .chain(params.iter().map(|(_, s, _)| s.clone()))
        .collect();
    let eval = |leaves: &[Vec<f64>]| -> f64 {
        let t = |i: usize| Ref::new(shapes64[i].clone(), leaves[i].clone());
        let p = |i: usize| t(i + 2);
        let stem = r::relu(&r::conv2d(&t(0), &p(0), &p(1), 2));
        let r1 = r::relu(&r::conv2d(&stem, &p(2), &p(3), 1));
        let r2 = r::conv2d(&r1, &p(4), &p(5), 1);
        let res = r::relu(&r::add(&r2, &stem));
        let down = r::relu(&r::conv2d(&res, &p(6), &p(7), 2));
        let flat = r::flatten(&down);
        let fc1 = r::relu(&r::dense(&flat, &p(8), &p(9)));
        let cnn_out = r::relu(&r::dense(&fc1, &p(10), &p(11)));
        let a1 = r::relu(&r::dense(&t(1), &p(12), &p(13)));
        let a2 = r::dense(&a1, &p(14), &p(15));
        let ann_out = r::relu(&r::add(&a2, &a1));
        let merged = r::concat_cols(&cnn_out, &ann_out);
        let h = r::relu(&r::dense(&merged, &p(16), &p(17)));
        let pred = r::dense(&h, &p(18), &p(19));
        r::mse(&pred, &target_ref)
    };

    let mut leaves64: Vec<Vec<f64>> = Vec::new();
    leaves64.push(to64(&img));
    leaves64.push(to64(&meta));
    for (_, _, v) in &params {
        leaves64.push(to64(v));
    }

    let analytic: Vec<(String, Vec<f32>)> = std::iter::once((
        "image".to_string(),
        g.grad(img_n).unwrap().unwrap().to_vec(),
    ))
    .chain(std::iter::once((
        "metadata".to_string(),
        g.grad(meta_n).unwrap().unwrap().to_vec(),
    )))
    .chain(
        params
            .iter()
            .zip(&pn)
            .map(|((name, _, _), &id)| (name.clone(), g.grad(id).unwrap().unwrap().to_vec())),
    )
    .collect();

    let f32_leaves: Vec<&[f32]> = std::iter::once(img.as_slice())
        .chain(std::iter::once(meta.as_slice()))
        .chain(params.iter().map(|(_, _, v)| v.as_slice()))
        .collect();

    for (idx, (name, a)) in analytic.iter().enumerate() {
        let numeric = fd_grad(f32_leaves[idx], |p| {
            let mut all = leaves64.clone();
            all[idx] = p.to_vec();
            eval(&all)
        });
        assert_grads_match(&format!("mini-net/{name}"), a, &numeric);
    }
}
