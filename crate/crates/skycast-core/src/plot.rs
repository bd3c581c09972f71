//! Minimal chart rendering: a line plot with axes, ticks, and numeric
//! labels (a built-in 3×5 glyph set — no font dependencies), plus a
//! grayscale tile-grid writer shared by the introspection exports.

use image::{Rgb, RgbImage};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Plot emission failure.
#[derive(Debug, Error)]
pub enum PlotError {
    /// No points, or a non-finite coordinate.
    #[error("cannot plot: {details}")]
    InvalidData {
        /// What was wrong.
        details: String,
    },
    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Path being written.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },
}

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FRAME: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const ZERO_LINE: Rgb<u8> = Rgb([150, 150, 150]);
const SERIES: Rgb<u8> = Rgb([31, 119, 180]);

const MARGIN_LEFT: u32 = 64;
const MARGIN_RIGHT: u32 = 20;
const MARGIN_TOP: u32 = 20;
const MARGIN_BOTTOM: u32 = 44;

/// 3×5 bitmaps for the characters a numeric axis label can contain.
/// Each glyph row is 3 bits, top to bottom.
fn glyph(c: char) -> Option<[u8; 5]> {
    let g = match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        ' ' => [0b000; 5],
        _ => return None,
    };
    Some(g)
}

/// Draws `text` with its top-left corner at (x, y), scale 2 (6×10 px per
/// glyph, 2 px advance gap). Unknown characters render as blanks.
fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    let scale = 2i32;
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..3 {
                    if row & (0b100 >> rx) != 0 {
                        for sy in 0..scale {
                            for sx in 0..scale {
                                let px = cx + rx as i32 * scale + sx;
                                let py = y + ry as i32 * scale + sy;
                                if px >= 0
                                    && py >= 0
                                    && (px as u32) < img.width()
                                    && (py as u32) < img.height()
                                {
                                    img.put_pixel(px as u32, py as u32, color);
                                }
                            }
                        }
                    }
                }
            }
        }
        cx += 3 * scale + scale;
    }
}

fn text_width(text: &str) -> i32 {
    text.chars().count() as i32 * 8 - 2
}

fn draw_line(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    // Bresenham, with a 2×2 brush for visibility.
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        for oy in 0..2 {
            for ox in 0..2 {
                let (px, py) = (x + ox, y + oy);
                if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Tick positions covering [lo, hi] at a "nice" step (1, 2, or 5 times a
/// power of ten), aiming for about `target` ticks.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw_step = span / target.max(2) as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    } * mag;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor() as i32).clamp(0, 6) as usize
    };
    let s = format!("{v:.decimals$}");
    // Avoid the "-0" label.
    if s.starts_with("-0") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

/// Renders a line plot of `points` (sorted by x by the caller or not —
/// they are drawn in the given order) and writes it as a PNG.
///
/// When `zero_line` is set and 0 lies inside the y range, a horizontal
/// reference line is drawn at y = 0.
pub fn save_line_plot(
    path: &Path,
    points: &[(f64, f64)],
    width: u32,
    height: u32,
    zero_line: bool,
) -> Result<(), PlotError> {
    if points.is_empty() {
        return Err(PlotError::InvalidData {
            details: "no points".into(),
        });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(PlotError::InvalidData {
            details: "non-finite coordinate".into(),
        });
    }
    let width = width.max(MARGIN_LEFT + MARGIN_RIGHT + 80);
    let height = height.max(MARGIN_TOP + MARGIN_BOTTOM + 60);

    let (mut x_min, mut x_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    let (mut y_min, mut y_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    if zero_line {
        y_min = y_min.min(0.0);
        y_max = y_max.max(0.0);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    // Breathing room above and below the data.
    let y_pad = (y_max - y_min) * 0.08;
    y_min -= y_pad;
    y_max += y_pad;

    let plot_w = (width - MARGIN_LEFT - MARGIN_RIGHT) as f64;
    let plot_h = (height - MARGIN_TOP - MARGIN_BOTTOM) as f64;
    let to_px = |x: f64| MARGIN_LEFT as f64 + (x - x_min) / (x_max - x_min) * plot_w;
    let to_py = |y: f64| MARGIN_TOP as f64 + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut img = RgbImage::from_pixel(width, height, BG);

    // Gridlines and labels.
    let y_ticks = nice_ticks(y_min, y_max, 5);
    let y_step = if y_ticks.len() >= 2 {
        y_ticks[1] - y_ticks[0]
    } else {
        (y_max - y_min) / 5.0
    };
    for &ty in &y_ticks {
        let py = to_py(ty) as i32;
        for px in MARGIN_LEFT..(width - MARGIN_RIGHT) {
            img.put_pixel(px, py.clamp(0, height as i32 - 1) as u32, GRID);
        }
        let label = format_tick(ty, y_step);
        draw_text(
            &mut img,
            MARGIN_LEFT as i32 - text_width(&label) - 6,
            py - 5,
            &label,
            FRAME,
        );
    }
    let x_ticks = nice_ticks(x_min, x_max, 8);
    let x_step = if x_ticks.len() >= 2 {
        x_ticks[1] - x_ticks[0]
    } else {
        (x_max - x_min) / 8.0
    };
    for &tx in &x_ticks {
        let px = to_px(tx) as i32;
        for py in (height - MARGIN_BOTTOM)..(height - MARGIN_BOTTOM + 5) {
            if px >= 0 && (px as u32) < width {
                img.put_pixel(px as u32, py, FRAME);
            }
        }
        let label = format_tick(tx, x_step);
        draw_text(
            &mut img,
            px - text_width(&label) / 2,
            (height - MARGIN_BOTTOM) as i32 + 8,
            &label,
            FRAME,
        );
    }

    if zero_line && y_min < 0.0 && y_max > 0.0 {
        let py = to_py(0.0) as i32;
        let mut px = MARGIN_LEFT as i32;
        while px < (width - MARGIN_RIGHT) as i32 {
            for o in 0..4 {
                let p = px + o;
                if (p as u32) < width - MARGIN_RIGHT {
                    img.put_pixel(p as u32, py as u32, ZERO_LINE);
                }
            }
            px += 8;
        }
    }

    // Frame.
    for px in MARGIN_LEFT..(width - MARGIN_RIGHT) {
        img.put_pixel(px, MARGIN_TOP, FRAME);
        img.put_pixel(px, height - MARGIN_BOTTOM, FRAME);
    }
    for py in MARGIN_TOP..=(height - MARGIN_BOTTOM) {
        img.put_pixel(MARGIN_LEFT, py, FRAME);
        img.put_pixel(width - MARGIN_RIGHT - 1, py, FRAME);
    }

    // Series polyline and markers.
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        draw_line(
            &mut img,
            to_px(x0) as i32,
            to_py(y0) as i32,
            to_px(x1) as i32,
            to_py(y1) as i32,
            SERIES,
        );
    }
    for &(x, y) in points {
        let (cx, cy) = (to_px(x) as i32, to_py(y) as i32);
        for oy in -2..=2i32 {
            for ox in -2..=2i32 {
                let (px, py) = (cx + ox, cy + oy);
                if px >= 0 && py >= 0 && (px as u32) < width && (py as u32) < height {
                    img.put_pixel(px as u32, py as u32, SERIES);
                }
            }
        }
    }

    img.save(path).map_err(|e| io_from_image(path, e))
}

/// Writes grayscale maps as a tiled grid PNG. Each map is `map_h`×`map_w`
/// in row-major order; each is min-max normalized to [0, 255] on its own
/// (a constant map renders mid-gray). Tiles are separated by a 2 px gutter.
pub fn save_gray_tiles(
    path: &Path,
    maps: &[Vec<f32>],
    map_h: usize,
    map_w: usize,
    columns: usize,
) -> Result<(), PlotError> {
    if maps.is_empty() || map_h == 0 || map_w == 0 || columns == 0 {
        return Err(PlotError::InvalidData {
            details: "empty tile grid".into(),
        });
    }
    for (i, m) in maps.iter().enumerate() {
        if m.len() != map_h * map_w {
            return Err(PlotError::InvalidData {
                details: format!(
                    "map {i} has {} values, expected {}",
                    m.len(),
                    map_h * map_w
                ),
            });
        }
    }
    let gutter = 2usize;
    let rows = maps.len().div_ceil(columns);
    let width = columns * map_w + (columns - 1) * gutter;
    let height = rows * map_h + (rows - 1) * gutter;
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([40, 40, 40]));

    for (i, map) in maps.iter().enumerate() {
        let (lo, hi) = map.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
        let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
        let (tile_row, tile_col) = (i / columns, i % columns);
        let (ox, oy) = (
            tile_col * (map_w + gutter),
            tile_row * (map_h + gutter),
        );
        for y in 0..map_h {
            for x in 0..map_w {
                let v = map[y * map_w + x];
                let byte = if scale > 0.0 {
                    ((v - lo) * scale).round().clamp(0.0, 255.0) as u8
                } else {
                    128
                };
                img.put_pixel((ox + x) as u32, (oy + y) as u32, Rgb([byte, byte, byte]));
            }
        }
    }
    img.save(path).map_err(|e| io_from_image(path, e))
}

fn io_from_image(path: &Path, e: image::ImageError) -> PlotError {
    let source = match e {
        image::ImageError::IoError(io) => io,
        other => std::io::Error::other(other),
    };
    PlotError::Io {
        path: path.to_path_buf(),
        source,
    }
}
