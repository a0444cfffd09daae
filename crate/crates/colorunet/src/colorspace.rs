//! RGB/YUV conversion and the image containers used throughout the crate.
//!
//! The YUV variant here is the analog form: Y is the usual luma weighting
//! of linear-range RGB in [0,1], and the chrominance planes are scaled
//! differences U = 0.492 (B - Y), V = 0.877 (R - Y). Computing U and V as
//! differences rather than as independent matrix rows makes every gray
//! pixel land exactly on u = v = 0, which the discretizer relies on.
//!
//! Conversions run in f64 and store planes as f32.

use ndarray::Array2;

use crate::{Error, Result};

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;
pub const KU: f64 = 0.492;
pub const KV: f64 = 0.877;

/// Largest |u| reachable from RGB in the unit cube: u peaks at pure blue,
/// where Y = KB, so u = KU * (1 - KB).
pub const U_MAX: f64 = KU * (1.0 - KB);
/// Largest |v|, reached at pure red: v = KV * (1 - KR).
pub const V_MAX: f64 = KV * (1.0 - KR);

/// Slack for validating chroma ranges; conversion is f64 but storage is
/// f32, so extremes can round a hair past the analytic bound.
const RANGE_EPS: f64 = 1e-5;

/// Interleaved RGB image with components in [0, 1].
#[derive(Debug, Clone)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Wraps interleaved RGB data (row-major, 3 floats per pixel).
    /// Components outside [0, 1] are a data error.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "rgb buffer has {} floats, expected {} for {width}x{height}",
                data.len(),
                width * height * 3
            )));
        }
        if let Some(bad) = data.iter().find(|c| !c.is_finite() || **c < 0.0 || **c > 1.0) {
            return Err(Error::Data(format!(
                "rgb component {bad} outside the unit interval"
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    /// All-black image.
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height * 3])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Planar YUV image; `y` in [0, 1], `u` in [-U_MAX, U_MAX], `v` in
/// [-V_MAX, V_MAX]. All three planes share one shape.
#[derive(Debug, Clone)]
pub struct YuvImage {
    y: Array2<f32>,
    u: Array2<f32>,
    v: Array2<f32>,
}

impl YuvImage {
    pub fn new(y: Array2<f32>, u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        if y.dim() != u.dim() || y.dim() != v.dim() {
            return Err(Error::Shape(format!(
                "yuv planes disagree: y {:?}, u {:?}, v {:?}",
                y.dim(),
                u.dim(),
                v.dim()
            )));
        }
        let (h, w) = y.dim();
        if h == 0 || w == 0 {
            return Err(Error::Data(format!("empty image {w}x{h}")));
        }
        let check = |plane: &Array2<f32>, lo: f64, hi: f64, name: &str| -> Result<()> {
            for &p in plane.iter() {
                let p = p as f64;
                if !p.is_finite() || p < lo - RANGE_EPS || p > hi + RANGE_EPS {
                    return Err(Error::Data(format!(
                        "{name} value {p} outside [{lo}, {hi}]"
                    )));
                }
            }
            Ok(())
        };
        check(&y, 0.0, 1.0, "y")?;
        check(&u, -U_MAX, U_MAX, "u")?;
        check(&v, -V_MAX, V_MAX, "v")?;
        Ok(YuvImage { y, u, v })
    }

    pub fn width(&self) -> usize {
        self.y.ncols()
    }

    pub fn height(&self) -> usize {
        self.y.nrows()
    }

    pub fn y(&self) -> &Array2<f32> {
        &self.y
    }

    pub fn u(&self) -> &Array2<f32> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f32> {
        &self.v
    }
}

fn yuv_of(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    (y, KU * (b - y), KV * (r - y))
}

fn rgb_of(y: f64, u: f64, v: f64) -> (f64, f64, f64) {
    let r = y + v / KV;
    let b = y + u / KU;
    let g = (y - KR * r - KB * b) / KG;
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

pub fn rgb_to_yuv(img: &RgbImage) -> YuvImage {
    let (w, h) = (img.width(), img.height());
    let mut y = Array2::zeros((h, w));
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            let [r, g, b] = img.pixel(col, row);
            let (py, pu, pv) = yuv_of(r as f64, g as f64, b as f64);
            y[[row, col]] = py as f32;
            u[[row, col]] = pu as f32;
            v[[row, col]] = pv as f32;
        }
    }
    YuvImage { y, u, v }
}

/// Inverse of [`rgb_to_yuv`]; out-of-gamut results are clamped to [0, 1]
/// per channel.
pub fn yuv_to_rgb(img: &YuvImage) -> RgbImage {
    let (h, w) = img.y.dim();
    let mut data = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let (r, g, b) = rgb_of(
                img.y[[row, col]] as f64,
                img.u[[row, col]] as f64,
                img.v[[row, col]] as f64,
            );
            data.push(r as f32);
            data.push(g as f32);
            data.push(b as f32);
        }
    }
    RgbImage {
        width: w,
        height: h,
        data,
    }
}

/// Luma plane alone, for feeding the network its grayscale input.
pub fn luminance(img: &RgbImage) -> Array2<f32> {
    let (w, h) = (img.width(), img.height());
    Array2::from_shape_fn((h, w), |(row, col)| {
        let [r, g, b] = img.pixel(col, row);
        (KR * r as f64 + KG * g as f64 + KB * b as f64) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn primary_colors_map_to_expected_yuv() {
        // Pure red: Y = 0.299, U = 0.492 * (0 - 0.299), V = 0.877 * (1 - 0.299).
        let (y, u, v) = yuv_of(1.0, 0.0, 0.0);
        assert!((y - 0.299).abs() < 1e-12);
        assert!((u + 0.147108).abs() < 1e-12);
        assert!((v - 0.614777).abs() < 1e-12);

        // Pure blue reaches the positive u extreme.
        let (y, u, v) = yuv_of(0.0, 0.0, 1.0);
        assert!((y - 0.114).abs() < 1e-12);
        assert!((u - U_MAX).abs() < 1e-12);
        assert!((v + 0.877 * 0.114).abs() < 1e-12);

        // White is chroma-free to rounding (the luma weights sum to 1
        // only within one ulp).
        let (_, u, v) = yuv_of(1.0, 1.0, 1.0);
        assert!(u.abs() < 1e-12 && v.abs() < 1e-12);
    }

    #[test]
    fn gray_pixels_have_exactly_zero_chroma() {
        // The difference form guarantees this to f64 rounding, not merely
        // to conversion tolerance.
        for i in 0..=100 {
            let g = i as f64 / 100.0;
            let (y, u, v) = yuv_of(g, g, g);
            assert!((y - g).abs() < 1e-12, "gray {g} luma drifted to {y}");
            assert!(u.abs() < 1e-12 && v.abs() < 1e-12, "gray {g} chroma ({u}, {v})");
        }
    }

    #[test]
    fn round_trip_is_tight_for_random_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (r, g, b) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            let (y, u, v) = yuv_of(r, g, b);
            let (r2, g2, b2) = rgb_of(y, u, v);
            assert!(
                (r - r2).abs() < 1e-9 && (g - g2).abs() < 1e-9 && (b - b2).abs() < 1e-9,
                "({r}, {g}, {b}) -> ({r2}, {g2}, {b2})"
            );
        }
    }

    #[test]
    fn image_round_trip_through_f32_planes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = RgbImage::from_fn(64, 48, |_, _| {
            [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
        })
        .unwrap();
        let back = yuv_to_rgb(&rgb_to_yuv(&img));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn yuv_validation_rejects_out_of_range_chroma() {
        let y = Array2::from_elem((2, 2), 0.5f32);
        let u = Array2::from_elem((2, 2), 0.9f32); // beyond U_MAX
        let v = Array2::zeros((2, 2));
        assert!(matches!(YuvImage::new(y, u, v), Err(Error::Data(_))));
    }

    #[test]
    fn rgb_validation_rejects_bad_buffers() {
        assert!(matches!(
            RgbImage::new(2, 2, vec![0.0; 11]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            RgbImage::new(2, 2, vec![1.5; 12]),
            Err(Error::Data(_))
        ));
        assert!(matches!(RgbImage::new(0, 2, vec![]), Err(Error::Data(_))));
    }

    #[test]
    fn luminance_matches_y_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = RgbImage::from_fn(17, 9, |_, _| {
            [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
        })
        .unwrap();
        let yuv = rgb_to_yuv(&img);
        let luma = luminance(&img);
        for (a, b) in luma.iter().zip(yuv.y().iter()) {
            assert_eq!(a, b);
        }
    }
}
