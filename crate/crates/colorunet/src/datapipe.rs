//! Corpus preparation: loading images into the fixed training frame,
//! train/validation splitting, the sevenfold augmentation, and assembly
//! of (luma, labels, mask) samples.
//!
//! Images are downscaled with Lanczos-3 so the longer side matches the
//! frame, never upscaled, and placed in the top-left corner. The mask is
//! 1 exactly on pixels originating from the source image and 0 on frame
//! padding, which the loss ignores. Augmentation never touches hue:
//! flips, additive luma-safe Gaussian noise, and crops all preserve the
//! chrominance statistics the labels are built from.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::colorspace::{rgb_to_yuv, RgbImage};
use crate::discretizer::ColorDiscretizer;
use crate::{Error, Result};

/// Side length of the square training frame.
pub const DEFAULT_FRAME: usize = 256;

pub const DEFAULT_NOISE_LOW: f64 = 0.02;
pub const DEFAULT_NOISE_HIGH: f64 = 0.05;
pub const DEFAULT_CROP_FRACTION: (f64, f64) = (0.6, 0.9);

/// One training record: the luminance input, per-pixel class labels, and
/// the validity mask (1 on source pixels, 0 on padding, where the label
/// is arbitrary and ignored).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub luma: Array2<f32>,
    pub labels: Array2<u32>,
    pub mask: Array2<f32>,
    pub source: String,
}

/// A single content-preserving deformation. Composite variants apply a
/// sequence of these in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Deformation {
    FlipHorizontal,
    /// Additive Gaussian noise, standard deviation in [0,1] channel
    /// units, clamped back into range. Applied to content pixels only.
    Noise { sigma: f64 },
    /// Uniform-random sub-rectangle of the content, each side drawn from
    /// the configured fraction range, re-anchored into the frame.
    RandomCrop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    pub noise_levels: Vec<f64>,
    /// Inclusive bounds on the crop side fraction.
    pub crop_fraction: (f64, f64),
    /// Each entry is one output variant; the empty sequence passes the
    /// image through unchanged.
    pub variants: Vec<Vec<Deformation>>,
}

impl AugmentationSpec {
    /// The sevenfold default: original, flip, two noise intensities, two
    /// independent random crops, and flip with mild noise.
    pub fn sevenfold(noise_levels: (f64, f64), crop_fraction: (f64, f64)) -> Self {
        let (lo, hi) = noise_levels;
        AugmentationSpec {
            noise_levels: vec![lo, hi],
            crop_fraction,
            variants: vec![
                vec![],
                vec![Deformation::FlipHorizontal],
                vec![Deformation::Noise { sigma: lo }],
                vec![Deformation::Noise { sigma: hi }],
                vec![Deformation::RandomCrop],
                vec![Deformation::RandomCrop],
                vec![
                    Deformation::FlipHorizontal,
                    Deformation::Noise { sigma: lo },
                ],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_fraction;
        if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi > 1.0 || lo > hi {
            return Err(Error::Config(format!(
                "crop fraction range ({lo}, {hi}) must satisfy 0 < low <= high <= 1"
            )));
        }
        for v in &self.variants {
            for d in v {
                if let Deformation::Noise { sigma } = d {
                    if !sigma.is_finite() || *sigma < 0.0 {
                        return Err(Error::Config(format!("bad noise level {sigma}")));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec::sevenfold(
            (DEFAULT_NOISE_LOW, DEFAULT_NOISE_HIGH),
            DEFAULT_CROP_FRACTION,
        )
    }
}

/// Extents of the content rectangle recorded by a mask. The mask must be
/// a solid rectangle anchored at the top-left corner, which is the only
/// shape this pipeline produces.
pub fn content_extent(mask: &Array2<f32>) -> Result<(usize, usize)> {
    let (h, w) = mask.dim();
    let mut ch = 0;
    let mut cw = 0;
    for ((r, c), &m) in mask.indexed_iter() {
        if m != 0.0 && m != 1.0 {
            return Err(Error::Data(format!("mask value {m} is not binary")));
        }
        if m == 1.0 {
            ch = ch.max(r + 1);
            cw = cw.max(c + 1);
        }
    }
    if ch == 0 || cw == 0 {
        return Err(Error::Data("mask selects no pixels".into()));
    }
    for ((r, c), &m) in mask.indexed_iter() {
        let inside = r < ch && c < cw;
        if (m == 1.0) != inside {
            return Err(Error::Data(format!(
                "mask is not a top-left rectangle (pixel {r},{c} breaks {ch}x{cw})"
            )));
        }
    }
    let _ = (h, w);
    Ok((ch, cw))
}

fn decode_rgb(img: image::DynamicImage) -> Result<RgbImage> {
    let rgb = img.to_rgb8();
    let (cw, ch) = (rgb.width() as usize, rgb.height() as usize);
    RgbImage::from_fn(cw, ch, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        [
            p[0] as f32 / 255.0,
            p[1] as f32 / 255.0,
            p[2] as f32 / 255.0,
        ]
    })
}

/// Decodes an image at its native size into [0, 1] RGB. Grayscale files
/// decode to equal channels.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    decode_rgb(img)
}

/// Loads an image and fits it into a square frame of the given side:
/// Lanczos-3 downscale when the longer side exceeds the frame (images
/// already fitting pass through untouched), anchored top-left, binary
/// mask marking the content rectangle.
pub fn load_and_fit(path: &Path, frame: usize) -> Result<(RgbImage, Array2<f32>)> {
    if frame == 0 {
        return Err(Error::Config("zero frame size".into()));
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let img = if img.width().max(img.height()) as usize > frame {
        img.resize(frame as u32, frame as u32, image::imageops::FilterType::Lanczos3)
    } else {
        img
    };
    fit_content(&decode_rgb(img)?, frame)
}

/// Places already-decoded content top-left in a fresh frame with its
/// mask. The content must fit.
fn fit_content(content: &RgbImage, frame: usize) -> Result<(RgbImage, Array2<f32>)> {
    let (cw, ch) = (content.width(), content.height());
    if cw > frame || ch > frame {
        return Err(Error::Shape(format!(
            "content {cw}x{ch} exceeds the {frame}x{frame} frame"
        )));
    }
    let mut out = RgbImage::zeros(frame, frame)?;
    for y in 0..ch {
        for x in 0..cw {
            out.set_pixel(x, y, content.pixel(x, y));
        }
    }
    let mut mask = Array2::zeros((frame, frame));
    mask.slice_mut(ndarray::s![..ch, ..cw]).fill(1.0);
    Ok((out, mask))
}

fn apply_flip(img: &mut RgbImage, ch: usize, cw: usize) {
    for y in 0..ch {
        for x in 0..cw / 2 {
            let a = img.pixel(x, y);
            let b = img.pixel(cw - 1 - x, y);
            img.set_pixel(x, y, b);
            img.set_pixel(cw - 1 - x, y, a);
        }
    }
}

fn apply_noise(img: &mut RgbImage, ch: usize, cw: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, sigma)
        .map_err(|e| Error::Config(format!("bad noise level {sigma}: {e}")))?;
    for y in 0..ch {
        for x in 0..cw {
            let mut p = img.pixel(x, y);
            for v in &mut p {
                *v = (*v as f64 + dist.sample(rng)).clamp(0.0, 1.0) as f32;
            }
            img.set_pixel(x, y, p);
        }
    }
    Ok(())
}

fn apply_crop(
    img: &RgbImage,
    ch: usize,
    cw: usize,
    frac: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<RgbImage> {
    let side = |extent: usize, rng: &mut ChaCha8Rng| -> usize {
        let f = if frac.0 >= frac.1 {
            frac.0
        } else {
            rng.random_range(frac.0..=frac.1)
        };
        ((extent as f64 * f).round() as usize).clamp(1, extent)
    };
    let nh = side(ch, rng);
    let nw = side(cw, rng);
    let top = if ch > nh { rng.random_range(0..=ch - nh) } else { 0 };
    let left = if cw > nw { rng.random_range(0..=cw - nw) } else { 0 };
    RgbImage::from_fn(nw, nh, |x, y| img.pixel(left + x, top + y))
}

/// Applies the configured variant list to one fitted image. Every variant
/// draws from its own substream of `seed`, so outputs are reproducible
/// and independent of list order. The frame side is taken from the
/// input.
pub fn augment(
    img: &RgbImage,
    mask: &Array2<f32>,
    spec: &AugmentationSpec,
    seed: u64,
) -> Result<Vec<(RgbImage, Array2<f32>)>> {
    spec.validate()?;
    if img.width() != mask.ncols() || img.height() != mask.nrows() {
        return Err(Error::Shape(format!(
            "image {}x{} does not match mask {}x{}",
            img.width(),
            img.height(),
            mask.ncols(),
            mask.nrows()
        )));
    }
    let frame = img.width();
    if img.height() != frame {
        return Err(Error::Shape("augmentation expects a square frame".into()));
    }
    let (ch0, cw0) = content_extent(mask)?;
    let mut out = Vec::with_capacity(spec.variants.len());
    for (vi, variant) in spec.variants.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(vi as u64);
        let mut cur = img.clone();
        let (mut ch, mut cw) = (ch0, cw0);
        for step in variant {
            match step {
                Deformation::FlipHorizontal => apply_flip(&mut cur, ch, cw),
                Deformation::Noise { sigma } => apply_noise(&mut cur, ch, cw, *sigma, &mut rng)?,
                Deformation::RandomCrop => {
                    let cropped = apply_crop(&cur, ch, cw, spec.crop_fraction, &mut rng)?;
                    let (refit, _) = fit_content(&cropped, frame)?;
                    cur = refit;
                    ch = cropped.height();
                    cw = cropped.width();
                }
            }
        }
        let mut m = Array2::zeros((frame, frame));
        m.slice_mut(ndarray::s![..ch, ..cw]).fill(1.0);
        out.push((cur, m));
    }
    Ok(out)
}

/// Recursively collects PNG and JPEG files under `root` (extensions
/// matched case-insensitively), sorted for determinism.
pub fn scan_images(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
                if matches!(ext.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg") {
                    out.push(path);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    if root.is_file() {
        out.push(root.to_path_buf());
    } else {
        walk(root, &mut out)?;
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no PNG or JPEG files under {}",
            root.display()
        )));
    }
    Ok(out)
}

/// Seed-deterministic disjoint exhaustive split. The validation side
/// takes floor(n * val_fraction) entries; both sides come back sorted.
pub fn split(
    paths: &[PathBuf],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} must be in [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..paths.len()).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = (paths.len() as f64 * val_fraction).floor() as usize;
    let mut val: Vec<PathBuf> = order[..n_val].iter().map(|&i| paths[i].clone()).collect();
    let mut train: Vec<PathBuf> = order[n_val..].iter().map(|&i| paths[i].clone()).collect();
    if train.is_empty() {
        return Err(Error::Data("split leaves the training side empty".into()));
    }
    train.sort();
    val.sort();
    Ok((train, val))
}

/// Writes the two split manifests (one path per line) into `dir`.
pub fn write_split_manifests(dir: &Path, train: &[PathBuf], val: &[PathBuf]) -> Result<()> {
    let write = |name: &str, list: &[PathBuf]| -> Result<()> {
        let path = dir.join(name);
        let mut body = String::new();
        for p in list {
            body.push_str(&p.display().to_string());
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("train_manifest.txt", train)?;
    write("val_manifest.txt", val)
}

/// Binds an image and its mask into a training record: luminance input,
/// encoded chroma labels, mask carried through.
pub fn make_sample(
    img: &RgbImage,
    mask: &Array2<f32>,
    disc: &ColorDiscretizer,
    source: &str,
) -> Result<Sample> {
    if img.height() != mask.nrows() || img.width() != mask.ncols() {
        return Err(Error::Shape(format!(
            "image {}x{} does not match mask {}x{}",
            img.width(),
            img.height(),
            mask.ncols(),
            mask.nrows()
        )));
    }
    let yuv = rgb_to_yuv(img);
    let labels = disc.encode(&yuv);
    Ok(Sample {
        luma: yuv.y().clone(),
        labels,
        mask: mask.clone(),
        source: source.to_string(),
    })
}

/// Loads, optionally augments, and encodes a path list in parallel.
/// Output order follows the input order (variants consecutive per
/// source); per-image seeds derive from `seed` and the index, so results
/// do not depend on thread count.
pub fn prepare_samples(
    paths: &[PathBuf],
    disc: &ColorDiscretizer,
    spec: Option<&AugmentationSpec>,
    frame: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let nested: Vec<Vec<Sample>> = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<Vec<Sample>> {
            let (img, mask) = load_and_fit(path, frame)?;
            match spec {
                Some(spec) => {
                    let variants = augment(&img, &mask, spec, seed.wrapping_add(i as u64))?;
                    variants
                        .iter()
                        .enumerate()
                        .map(|(vi, (vimg, vmask))| {
                            make_sample(vimg, vmask, disc, &format!("{}#{vi}", path.display()))
                        })
                        .collect()
                }
                None => Ok(vec![make_sample(
                    &img,
                    &mask,
                    disc,
                    &path.display().to_string(),
                )?]),
            }
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Accumulates chroma statistics for discretizer fitting from a path
/// list, without augmentation (deformations preserve chroma statistics
/// by construction, so fitting on originals loses nothing).
pub fn fit_discretizer_on_paths(
    paths: &[PathBuf],
    frame: usize,
    grid_step: f64,
    n: usize,
    lambda: f64,
) -> Result<ColorDiscretizer> {
    let yuvs: Vec<crate::colorspace::YuvImage> = paths
        .par_iter()
        .map(|path| -> Result<crate::colorspace::YuvImage> {
            let (img, mask) = load_and_fit(path, frame)?;
            let (ch, cw) = content_extent(&mask)?;
            // Only content pixels may shape the chroma statistics.
            let content = RgbImage::from_fn(cw, ch, |x, y| img.pixel(x, y))?;
            Ok(rgb_to_yuv(&content))
        })
        .collect::<Result<_>>()?;
    ColorDiscretizer::fit(yuvs.iter(), grid_step, n, lambda)
}
