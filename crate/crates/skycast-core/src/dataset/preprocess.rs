//! Image preprocessing: luminance conversion and exact area-averaged
//! downsizing to the square network resolution.

use super::DatasetError;
use crate::tensor::Tensor;
use image::RgbImage;
use std::path::Path;

/// Loads an image file and preprocesses it to an `[S, S]` grayscale tensor
/// in `[0, 1]`.
pub fn preprocess_image(path: &Path, size: usize) -> Result<Tensor, DatasetError> {
    let img = image::open(path).map_err(|source| DatasetError::ImageDecode {
        path: path.to_path_buf(),
        source,
    })?;
    luminance_resize(&img.to_rgb8(), size)
}

/// Converts RGB to Rec. 601 luminance (0.299 R + 0.587 G + 0.114 B),
/// area-averages down to `size`×`size`, and scales to `[0, 1]`.
///
/// Area averaging integrates the luminance over each output pixel's exact
/// source rectangle (fractional edges weighted by overlap), so the result
/// is independent of how the source dimensions divide the target. All
/// accumulation is f64; the output tensor is f32.
pub fn luminance_resize(rgb: &RgbImage, size: usize) -> Result<Tensor, DatasetError> {
    let (w, h) = rgb.dimensions();
    if size == 0 {
        return Err(DatasetError::InvalidConfig {
            details: "image size must be positive".to_string(),
        });
    }
    if (w as usize) < size || (h as usize) < size {
        return Err(DatasetError::ImageTooSmall {
            width: w,
            height: h,
            target: size,
        });
    }

    // Row-luminance buffer, f64, in [0, 255].
    let mut lum = vec![0.0_f64; (w as usize) * (h as usize)];
    for (i, px) in rgb.pixels().enumerate() {
        let [r, g, b] = px.0;
        lum[i] = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    }

    let col_spans = axis_spans(w as usize, size);
    let row_spans = axis_spans(h as usize, size);
    let inv_cell = (size as f64) * (size as f64) / ((w as f64) * (h as f64) * 255.0);

    let mut out = vec![0.0_f32; size * size];
    for (oy, row_span) in row_spans.iter().enumerate() {
        for (ox, col_span) in col_spans.iter().enumerate() {
            let mut acc = 0.0_f64;
            for &(iy, wy) in row_span {
                let base = iy * (w as usize);
                let mut row_acc = 0.0_f64;
                for &(ix, wx) in col_span {
                    row_acc += lum[base + ix] * wx;
                }
                acc += row_acc * wy;
            }
            out[oy * size + ox] = (acc * inv_cell) as f32;
        }
    }
    Ok(Tensor::from_vec(vec![size, size], out).expect("sized buffer"))
}

/// For each output cell along one axis, the source indices it overlaps and
/// the fractional overlap lengths.
fn axis_spans(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = (o + 1) as f64 * scale;
            let first = start.floor() as usize;
            // `end` is an exclusive bound; a cell boundary landing exactly on
            // an integer contributes nothing from the next source pixel.
            let last = (end.ceil() as usize).min(src);
            let mut spans = Vec::with_capacity(last - first);
            for i in first..last {
                let lo = (i as f64).max(start);
                let hi = ((i + 1) as f64).min(end);
                if hi > lo {
                    spans.push((i, hi - lo));
                }
            }
            spans
        })
        .collect()
}
