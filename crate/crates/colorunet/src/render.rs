//! Raster output: PNG writing for in-memory images, grayscale rendering
//! of scalar diagnostic maps, and the loss-curve plot.
//!
//! Plots are cosmetic companions to the CSV files that carry the actual
//! numbers; nothing downstream asserts on their pixels.

use std::path::Path;

use ndarray::Array2;

use crate::colorspace::RgbImage;
use crate::decoder::RATIO_CAP;
use crate::unet::TrainLogRow;
use crate::{Error, Result};

/// Writes an image as 8-bit PNG, rounding [0,1] channels to [0,255].
pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let (w, h) = (img.width(), img.height());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let p = img.pixel(x, y);
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)),
            );
        }
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a [0,1] scalar plane as grayscale PNG.
pub fn write_gray_png(path: &Path, plane: &Array2<f32>) -> Result<()> {
    let (h, w) = plane.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), &v) in plane.indexed_iter() {
        buf.put_pixel(
            c as u32,
            r as u32,
            image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]),
        );
    }
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Gray level for a top-class probability: the identity. Probabilities
/// already live in [0,1] and brighter = more confident.
pub fn top1_gray(top1: &Array2<f32>) -> Array2<f32> {
    top1.clone()
}

/// Gray level for a top1/top2 ratio: log10 scaled against the cap, so 1
/// maps to black and the capped one-hot ratio to white. Monotone in the
/// ratio.
pub fn ratio_gray(ratio: &Array2<f32>) -> Array2<f32> {
    let span = RATIO_CAP.log10();
    ratio.mapv(|r| ((r.max(1.0) as f64).log10() / span) as f32)
}

const PLOT_W: usize = 800;
const PLOT_H: usize = 480;
const MARGIN: usize = 40;

fn draw_line(img: &mut RgbImage, a: (usize, usize), b: (usize, usize), color: [f32; 3]) {
    let (x0, y0) = (a.0 as f64, a.1 as f64);
    let (x1, y1) = (b.0 as f64, b.1 as f64);
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round() as usize;
        let y = (y0 + (y1 - y0) * t).round() as usize;
        if x < img.width() && y < img.height() {
            img.set_pixel(x, y, color);
        }
    }
}

fn draw_dot(img: &mut RgbImage, x: usize, y: usize, color: [f32; 3]) {
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            let px = x as i64 + dx;
            let py = y as i64 + dy;
            if px >= 0 && py >= 0 && (px as usize) < img.width() && (py as usize) < img.height() {
                img.set_pixel(px as usize, py as usize, color);
            }
        }
    }
}

/// Draws the training log: axes, the per-iteration training loss as a
/// polyline, and validation losses as dots.
pub fn draw_loss_curve(rows: &[TrainLogRow]) -> Result<RgbImage> {
    if rows.is_empty() {
        return Err(Error::Data("no training-log rows to plot".into()));
    }
    let max_iter = rows.iter().map(|r| r.iter).max().unwrap().max(1);
    let mut max_loss = 0.0f64;
    for r in rows {
        if !r.train_loss.is_finite() {
            return Err(Error::Data(format!(
                "non-finite loss in log row {}",
                r.iter
            )));
        }
        max_loss = max_loss.max(r.train_loss).max(r.val_loss.unwrap_or(0.0));
    }
    if max_loss <= 0.0 {
        max_loss = 1.0;
    }

    let mut img = RgbImage::from_fn(PLOT_W, PLOT_H, |_, _| [1.0, 1.0, 1.0])?;
    let axis = [0.3, 0.3, 0.3];
    let train_color = [0.12, 0.35, 0.8];
    let val_color = [0.85, 0.2, 0.15];
    let x0 = MARGIN;
    let x1 = PLOT_W - MARGIN;
    let y0 = PLOT_H - MARGIN;
    let y1 = MARGIN;
    draw_line(&mut img, (x0, y0), (x1, y0), axis);
    draw_line(&mut img, (x0, y0), (x0, y1), axis);

    let to_px = |iter: usize, loss: f64| -> (usize, usize) {
        let fx = iter as f64 / max_iter as f64;
        let fy = (loss / max_loss).clamp(0.0, 1.0);
        (
            x0 + (fx * (x1 - x0) as f64).round() as usize,
            y0 - (fy * (y0 - y1) as f64).round() as usize,
        )
    };

    let mut prev: Option<(usize, usize)> = None;
    for r in rows {
        let p = to_px(r.iter, r.train_loss);
        if let Some(q) = prev {
            draw_line(&mut img, q, p, train_color);
        }
        prev = Some(p);
    }
    for r in rows {
        if let Some(v) = r.val_loss {
            let (x, y) = to_px(r.iter, v);
            draw_dot(&mut img, x, y, val_color);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn png_round_trip_preserves_values_within_quantization() {
        let img = RgbImage::from_fn(9, 5, |x, y| {
            [
                x as f32 / 8.0,
                y as f32 / 4.0,
                (x + y) as f32 / 12.0,
            ]
        })
        .unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.png");
        write_rgb_png(&path, &img).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!((back.width(), back.height()), (9, 5));
        for y in 0..5 {
            for x in 0..9 {
                let want = img.pixel(x, y);
                let got = back.get_pixel(x as u32, y as u32).0;
                for k in 0..3 {
                    assert!((got[k] as f32 / 255.0 - want[k]).abs() <= 0.5 / 255.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn gray_png_writes_the_plane() {
        let plane = Array2::from_shape_fn((4, 6), |(r, c)| (r * 6 + c) as f32 / 23.0);
        let dir = tempdir().unwrap();
        let path = dir.path().join("gray.png");
        write_gray_png(&path, &plane).unwrap();
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!((back.width(), back.height()), (6, 4));
        assert_eq!(back.get_pixel(5, 3).0[0], 255);
        assert_eq!(back.get_pixel(0, 0).0[0], 0);
    }

    #[test]
    fn scalar_map_scales_are_monotone_and_bounded() {
        let ratios = Array2::from_shape_fn((1, 5), |(_, c)| {
            [1.0f32, 10.0, 1e3, 1e6, 1e10][c]
        });
        let g = ratio_gray(&ratios);
        for c in 1..5 {
            assert!(g[[0, c]] > g[[0, c - 1]]);
        }
        assert_eq!(g[[0, 0]], 0.0);
        assert!((g[[0, 4]] - 1.0).abs() < 1e-6);

        let top1 = Array2::from_shape_fn((1, 3), |(_, c)| [0.1f32, 0.5, 1.0][c]);
        let g = top1_gray(&top1);
        assert_eq!(g[[0, 1]], 0.5);
    }

    #[test]
    fn loss_curve_renders_train_line_and_val_dots() {
        let rows: Vec<TrainLogRow> = (1..=100)
            .map(|i| TrainLogRow {
                iter: i,
                phase: if i <= 60 { 1 } else { 2 },
                lr: 1e-3,
                train_loss: 3.0 * (-(i as f64) / 40.0).exp() + 0.2,
                val_loss: if i % 25 == 0 { Some(3.2 * (-(i as f64) / 40.0).exp() + 0.25) } else { None },
            })
            .collect();
        let img = draw_loss_curve(&rows).unwrap();
        assert_eq!((img.width(), img.height()), (800, 480));
        let mut blue = 0;
        let mut red = 0;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = img.pixel(x, y);
                if p == [0.12, 0.35, 0.8] {
                    blue += 1;
                }
                if p == [0.85, 0.2, 0.15] {
                    red += 1;
                }
            }
        }
        assert!(blue > 100, "train polyline missing ({blue} px)");
        assert!(red >= 4 * 9 - 9, "val dots missing ({red} px)");

        assert!(draw_loss_curve(&[]).is_err());
        let dir = tempdir().unwrap();
        write_rgb_png(&dir.path().join("curve.png"), &img).unwrap();
    }
}
