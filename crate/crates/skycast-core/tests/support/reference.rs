//! Independent 64-bit forward implementations of every network operation,
//! written as plain nested loops with no shared code with the crate under
//! test. The gradient checks differentiate these numerically; using f64
//! keeps finite-difference noise far below the comparison tolerance.

/// A dense row-major f64 tensor for reference computations.
#[derive(Debug, Clone)]
pub struct Ref {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Ref {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self::new(shape.to_vec(), data.iter().map(|&v| v as f64).collect())
    }
}

/// 3×3 convolution, zero padding 1, stride 1 or 2.
pub fn conv2d(x: &Ref, w: &Ref, b: &Ref, stride: usize) -> Ref {
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let f = w.shape[0];
    assert_eq!(w.shape[1], c);
    let oh = (h + stride - 1) / stride;
    let ow = (wd + stride - 1) / stride;
    let mut out = vec![0.0f64; n * f * oh * ow];
    for ni in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data[fi];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - 1;
                                let ix = (ox * stride + kx) as isize - 1;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data[((fi * c + ci) * 3 + ky) * 3 + kx]
                                    * x.data[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((ni * f + fi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ref::new(vec![n, f, oh, ow], out)
}

/// Fully connected layer: `out[n][o] = b[o] + Σ_i w[o][i]·x[n][i]`.
pub fn dense(x: &Ref, w: &Ref, b: &Ref) -> Ref {
    let (n, d_in) = (x.shape[0], x.shape[1]);
    let d_out = w.shape[0];
    assert_eq!(w.shape[1], d_in);
    let mut out = vec![0.0f64; n * d_out];
    for ni in 0..n {
        for o in 0..d_out {
            let mut acc = b.data[o];
            for i in 0..d_in {
                acc += w.data[o * d_in + i] * x.data[ni * d_in + i];
            }
            out[ni * d_out + o] = acc;
        }
    }
    Ref::new(vec![n, d_out], out)
}

pub fn relu(x: &Ref) -> Ref {
    Ref::new(x.shape.clone(), x.data.iter().map(|&v| v.max(0.0)).collect())
}

pub fn add(a: &Ref, b: &Ref) -> Ref {
    assert_eq!(a.shape, b.shape);
    Ref::new(
        a.shape.clone(),
        a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    )
}

/// Concatenation of two rank-2 tensors along axis 1.
pub fn concat_cols(a: &Ref, b: &Ref) -> Ref {
    assert_eq!(a.shape.len(), 2);
    assert_eq!(a.shape[0], b.shape[0]);
    let (n, la, lb) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Vec::with_capacity(n * (la + lb));
    for i in 0..n {
        out.extend_from_slice(&a.data[i * la..][..la]);
        out.extend_from_slice(&b.data[i * lb..][..lb]);
    }
    Ref::new(vec![n, la + lb], out)
}

/// Columns `start..start+len` of a rank-2 tensor.
pub fn narrow_cols(x: &Ref, start: usize, len: usize) -> Ref {
    assert_eq!(x.shape.len(), 2);
    let (n, d) = (x.shape[0], x.shape[1]);
    let mut out = Vec::with_capacity(n * len);
    for i in 0..n {
        out.extend_from_slice(&x.data[i * d + start..][..len]);
    }
    Ref::new(vec![n, len], out)
}

pub fn flatten(x: &Ref) -> Ref {
    let rest: usize = x.shape[1..].iter().product();
    Ref::new(vec![x.shape[0], rest], x.data.clone())
}

pub fn mean(x: &Ref) -> f64 {
    x.data.iter().sum::<f64>() / x.data.len() as f64
}

pub fn mse(a: &Ref, b: &Ref) -> f64 {
    assert_eq!(a.shape, b.shape);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}
