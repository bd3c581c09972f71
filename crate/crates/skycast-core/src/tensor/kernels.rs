//! f32 compute kernels for convolution and dense layers.
//!
//! All convolutions use a fixed 3×3 kernel with zero padding of one pixel,
//! so the output spatial size is `ceil(size / stride)`.
//!
//! Accumulation order is part of each kernel's contract: every output element
//! is a sum taken in ascending `(channel, ky, kx)` order for convolutions and
//! ascending input-feature order for dense layers, seeded with the bias term.
//! Batch samples are independent, which keeps results identical whether the
//! batch loop runs serially or in parallel.

use rayon::prelude::*;

/// Kernel size of every convolution in the engine.
pub(crate) const KERNEL: usize = 3;
/// Zero padding applied on each border.
pub(crate) const PAD: usize = 1;

/// Spatial output size of a padded 3×3 convolution: `ceil(size / stride)`.
pub fn conv_out_size(size: usize, stride: usize) -> usize {
    size.div_ceil(stride)
}

/// Lowers one `[c, h, w]` sample into a `[c*9, oh*ow]` patch matrix.
///
/// Row `c*9 + ky*3 + kx` holds, for every output position, the input value at
/// `(y*stride + ky - 1, x*stride + kx - 1)`, or zero outside the image.
fn im2col(x: &[f32], c: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize, col: &mut [f32]) {
    let j = oh * ow;
    debug_assert_eq!(col.len(), c * KERNEL * KERNEL * j);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..][..h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let dst_all = &mut col[row * j..][..j];
                // Output columns whose sampled x coordinate is inside the
                // image: those ox with 0 <= ox*stride + kx - PAD < w, i.e.
                // the half-open range lo..end (empty when end <= lo).
                let lo = if kx >= PAD { 0 } else { (PAD - kx).div_ceil(stride) };
                let end = if w + PAD > kx {
                    ((w + PAD - kx - 1) / stride + 1).min(ow)
                } else {
                    0
                };
                for oy in 0..oh {
                    let dst = &mut dst_all[oy * ow..][..ow];
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize || lo >= end {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy as usize) * w..][..w];
                    dst[..lo].fill(0.0);
                    if stride == 1 {
                        // Contiguous run: ix = ox + kx - PAD.
                        let base = lo + kx - PAD;
                        dst[lo..end].copy_from_slice(&src[base..base + (end - lo)]);
                    } else {
                        for ox in lo..end {
                            dst[ox] = src[ox * stride + kx - PAD];
                        }
                    }
                    dst[end..].fill(0.0);
                }
                row += 1;
            }
        }
    }
}

/// Transposed lowering: `colt[j * (c*9) + row]` equals `col[row * j + j_idx]`.
/// Used by the weight-gradient kernel so its inner loop is contiguous.
fn im2col_t(x: &[f32], c: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize, colt: &mut [f32]) {
    let k = c * KERNEL * KERNEL;
    debug_assert_eq!(colt.len(), k * oh * ow);
    colt.fill(0.0);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..][..h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[(iy as usize) * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            colt[(oy * ow + ox) * k + row] = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Batched 3×3 convolution forward pass.
///
/// * `input`: `[n, c, h, w]`, `weights`: `[f, c, 3, 3]`, `bias`: `[f]`
/// * returns `[n, f, oh, ow]` with `oh = ceil(h/stride)`, `ow = ceil(w/stride)`.
pub(crate) fn conv2d_forward(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    f: usize,
    bias: &[f32],
    stride: usize,
) -> Vec<f32> {
    let oh = conv_out_size(h, stride);
    let ow = conv_out_size(w, stride);
    let k = c * KERNEL * KERNEL;
    let j = oh * ow;
    let chw = c * h * w;
    let mut out = vec![0.0f32; n * f * j];
    out.par_chunks_mut(f * j).enumerate().for_each(|(ni, o)| {
        let mut col = vec![0.0f32; k * j];
        im2col(&input[ni * chw..][..chw], c, h, w, stride, oh, ow, &mut col);
        for fi in 0..f {
            let wrow = &weights[fi * k..][..k];
            let orow = &mut o[fi * j..][..j];
            orow.fill(bias[fi]);
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &col[kk * j..][..j];
                for (ov, &cv) in orow.iter_mut().zip(crow) {
                    *ov += wv * cv;
                }
            }
        }
    });
    out
}

/// Scatters a `[c*9, oh*ow]` gradient patch matrix back onto one `[c, h, w]`
/// input-gradient sample, adding contributions in ascending row order.
fn col2im_add(gcol: &[f32], c: usize, h: usize, w: usize, stride: usize, oh: usize, ow: usize, gin: &mut [f32]) {
    let j = oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut gin[ci * h * w..][..h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let src_all = &gcol[row * j..][..j];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[(iy as usize) * w..][..w];
                    let src = &src_all[oy * ow..][..ow];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - PAD as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Gradients of the 3×3 convolution.
///
/// Returns `(grad_input, grad_weights, grad_bias)`; each of the first two is
/// computed only when requested (e.g. the input gradient is useless on the
/// first layer of a network, and weight gradients are useless when ascending
/// an activation with frozen parameters). Per-sample contributions to the
/// weight and bias gradients are accumulated in ascending sample order.
pub(crate) fn conv2d_backward(
    input: &[f32],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    weights: &[f32],
    f: usize,
    stride: usize,
    grad_out: &[f32],
    need_grad_input: bool,
    need_grad_weights: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>, Vec<f32>) {
    let oh = conv_out_size(h, stride);
    let ow = conv_out_size(w, stride);
    let k = c * KERNEL * KERNEL;
    let j = oh * ow;
    let chw = c * h * w;

    // Per-sample partial results, computed independently, then reduced in
    // ascending sample order so the sum sequence is fixed.
    struct Partial {
        gw: Option<Vec<f32>>,
        gb: Vec<f32>,
        gin: Option<Vec<f32>>,
    }
    let partials: Vec<Partial> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let x = &input[ni * chw..][..chw];
            let go = &grad_out[ni * f * j..][..f * j];
            let mut gb = vec![0.0f32; f];
            for fi in 0..f {
                let mut s = 0.0f32;
                for &g in &go[fi * j..][..j] {
                    s += g;
                }
                gb[fi] = s;
            }
            let gw = need_grad_weights.then(|| {
                let mut colt = vec![0.0f32; j * k];
                im2col_t(x, c, h, w, stride, oh, ow, &mut colt);
                let mut gw = vec![0.0f32; f * k];
                for fi in 0..f {
                    let gorow = &go[fi * j..][..j];
                    let gwrow = &mut gw[fi * k..][..k];
                    for (jj, &g) in gorow.iter().enumerate() {
                        let crow = &colt[jj * k..][..k];
                        for (gv, &cv) in gwrow.iter_mut().zip(crow) {
                            *gv += g * cv;
                        }
                    }
                }
                gw
            });
            let gin = need_grad_input.then(|| {
                let mut gcol = vec![0.0f32; k * j];
                for (kk, grow) in gcol.chunks_mut(j).enumerate() {
                    for fi in 0..f {
                        let wv = weights[fi * k + kk];
                        let gorow = &go[fi * j..][..j];
                        for (gv, &g) in grow.iter_mut().zip(gorow) {
                            *gv += wv * g;
                        }
                    }
                }
                let mut gin = vec![0.0f32; chw];
                col2im_add(&gcol, c, h, w, stride, oh, ow, &mut gin);
                gin
            });
            Partial { gw, gb, gin }
        })
        .collect();

    let mut gw = need_grad_weights.then(|| vec![0.0f32; f * k]);
    let mut gb = vec![0.0f32; f];
    let mut gin = need_grad_input.then(|| vec![0.0f32; n * chw]);
    for (ni, p) in partials.into_iter().enumerate() {
        if let (Some(gw), Some(pg)) = (gw.as_mut(), p.gw) {
            for (a, b) in gw.iter_mut().zip(&pg) {
                *a += b;
            }
        }
        for (a, b) in gb.iter_mut().zip(&p.gb) {
            *a += b;
        }
        if let (Some(gin), Some(pg)) = (gin.as_mut(), p.gin) {
            gin[ni * chw..][..chw].copy_from_slice(&pg);
        }
    }
    (gin, gw, gb)
}

/// Dense layer forward pass: `out[n][o] = bias[o] + Σ_i weights[o][i] · x[n][i]`,
/// accumulated in ascending `i` order.
///
/// * `x`: `[n, d_in]`, `weights`: `[d_out, d_in]`, `bias`: `[d_out]`
/// * returns `[n, d_out]`.
pub(crate) fn dense_forward(
    x: &[f32],
    n: usize,
    d_in: usize,
    weights: &[f32],
    d_out: usize,
    bias: &[f32],
) -> Vec<f32> {
    // Transposed weights make the inner loop contiguous over outputs.
    let mut wt = vec![0.0f32; d_in * d_out];
    for o in 0..d_out {
        for i in 0..d_in {
            wt[i * d_out + o] = weights[o * d_in + i];
        }
    }
    let mut out = vec![0.0f32; n * d_out];
    out.par_chunks_mut(d_out).enumerate().for_each(|(ni, orow)| {
        orow.copy_from_slice(bias);
        let xrow = &x[ni * d_in..][..d_in];
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = &wt[i * d_out..][..d_out];
            for (ov, &wv) in orow.iter_mut().zip(wrow) {
                *ov += xv * wv;
            }
        }
    });
    out
}

/// Gradients of the dense layer; sample contributions accumulate in ascending
/// sample order.
pub(crate) fn dense_backward(
    x: &[f32],
    n: usize,
    d_in: usize,
    weights: &[f32],
    d_out: usize,
    grad_out: &[f32],
    need_grad_input: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let mut gw = vec![0.0f32; d_out * d_in];
    let mut gb = vec![0.0f32; d_out];
    for ni in 0..n {
        let go = &grad_out[ni * d_out..][..d_out];
        let xrow = &x[ni * d_in..][..d_in];
        for (o, &g) in go.iter().enumerate() {
            gb[o] += g;
            let gwrow = &mut gw[o * d_in..][..d_in];
            for (gv, &xv) in gwrow.iter_mut().zip(xrow) {
                *gv += g * xv;
            }
        }
    }
    // Dense layers are cheap relative to the convolutions; weight gradients
    // are always produced.
    let gx = need_grad_input.then(|| {
        let mut gx = vec![0.0f32; n * d_in];
        gx.par_chunks_mut(d_in).enumerate().for_each(|(ni, gxrow)| {
            let go = &grad_out[ni * d_out..][..d_out];
            for (o, &g) in go.iter().enumerate() {
                let wrow = &weights[o * d_in..][..d_in];
                for (gv, &wv) in gxrow.iter_mut().zip(wrow) {
                    *gv += g * wv;
                }
            }
        });
        gx
    });
    (gx, gw, gb)
}
