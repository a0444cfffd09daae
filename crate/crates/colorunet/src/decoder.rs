//! From per-pixel class probabilities to color: the annealed mean over
//! bin means, colorized images, confidence diagnostics, and bin-frequency
//! histograms.
//!
//! The annealing kernel sharpens or flattens a distribution z through
//! f_T(z)_i = exp(log z_i / T) / Σ_j exp(log z_j / T). At T = 1 it is the
//! identity; as T → 0 it approaches the argmax indicator. Probabilities
//! are floored at a small ε before the log, since one-hot distributions
//! would otherwise hit log 0.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};

use crate::colorspace::{yuv_to_rgb, RgbImage, YuvImage};
use crate::discretizer::ColorDiscretizer;
use crate::nn::softmax_channels;
use crate::{Error, Result};

/// Floor applied to probabilities before the log inside the annealing
/// kernel.
pub const ANNEAL_EPS: f64 = 1e-10;
/// Cap on the top1/top2 confidence ratio, reached exactly on one-hot
/// pixels.
pub const RATIO_CAP: f64 = 1e10;
/// Decode temperature used when none is configured.
pub const DEFAULT_TEMPERATURE: f64 = 0.4;

const SUM_TOL: f32 = 1e-5;

/// Per-pixel probability distributions over the color bins, stored
/// bin-major as (n, height, width).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    probs: Array3<f32>,
}

impl ProbabilityVolume {
    /// Validates that every pixel's vector is nonnegative and sums to 1
    /// within 1e-5.
    pub fn new(probs: Array3<f32>) -> Result<Self> {
        let (n, h, w) = probs.dim();
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Shape("empty probability volume".into()));
        }
        for r in 0..h {
            for c in 0..w {
                let mut sum = 0.0f64;
                for b in 0..n {
                    let p = probs[[b, r, c]];
                    if !p.is_finite() || p < 0.0 {
                        return Err(Error::Data(format!(
                            "probability {p} at bin {b}, pixel ({r},{c})"
                        )));
                    }
                    sum += p as f64;
                }
                if (sum - 1.0).abs() > SUM_TOL as f64 {
                    return Err(Error::Data(format!(
                        "pixel ({r},{c}) probabilities sum to {sum}"
                    )));
                }
            }
        }
        Ok(ProbabilityVolume { probs })
    }

    /// Softmaxes one sample of a logit batch into a volume.
    pub fn from_logits(logits: &Array4<f32>, sample: usize) -> Result<Self> {
        if sample >= logits.dim().0 {
            return Err(Error::Shape(format!(
                "sample {sample} out of range for batch of {}",
                logits.dim().0
            )));
        }
        let probs = softmax_channels(logits);
        Ok(ProbabilityVolume {
            probs: probs.index_axis(Axis(0), sample).to_owned(),
        })
    }

    pub fn n(&self) -> usize {
        self.probs.dim().0
    }

    pub fn height(&self) -> usize {
        self.probs.dim().1
    }

    pub fn width(&self) -> usize {
        self.probs.dim().2
    }

    pub fn probs(&self) -> &Array3<f32> {
        &self.probs
    }

    /// One pixel's distribution.
    pub fn pixel(&self, r: usize, c: usize) -> Vec<f32> {
        (0..self.n()).map(|b| self.probs[[b, r, c]]).collect()
    }
}

/// Per-pixel certainty diagnostics: the winning class probability and
/// its ratio to the runner-up.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMaps {
    /// Max class probability per pixel, in [1/n, 1].
    pub top1: Array2<f32>,
    /// top1 / top2 per pixel, ≥ 1, capped at [`RATIO_CAP`].
    pub ratio: Array2<f32>,
}

/// Applies the annealing kernel to one distribution. Output is a valid
/// distribution sharing the input's argmax for every temperature.
pub fn anneal_distribution(z: &[f32], temperature: f64) -> Result<Vec<f64>> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::Config(format!(
            "temperature {temperature} must be positive"
        )));
    }
    // Max-subtracted in log space for stability at small T.
    let scaled: Vec<f64> = z
        .iter()
        .map(|&p| (p as f64).max(ANNEAL_EPS).ln() / temperature)
        .collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scaled.iter().map(|&s| (s - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}

/// Annealed-mean chroma decode: per pixel, sharpen the distribution with
/// the kernel at the given temperature, then take the expectation of the
/// bin means. Returns the (u, v) planes.
pub fn annealed_mean(
    probs: &ProbabilityVolume,
    temperature: f64,
    d: &ColorDiscretizer,
) -> Result<(Array2<f32>, Array2<f32>)> {
    if probs.n() != d.n() {
        return Err(Error::Shape(format!(
            "volume has {} bins, discretizer has {}",
            probs.n(),
            d.n()
        )));
    }
    let (n, h, w) = probs.probs.dim();
    let means: Vec<(f64, f64)> = (0..n)
        .map(|b| {
            let bin = &d.bins()[b];
            (bin.mean_u, bin.mean_v)
        })
        .collect();
    let mut u = Array2::<f32>::zeros((h, w));
    let mut v = Array2::<f32>::zeros((h, w));
    let mut z = vec![0.0f32; n];
    for r in 0..h {
        for c in 0..w {
            for (b, zb) in z.iter_mut().enumerate() {
                *zb = probs.probs[[b, r, c]];
            }
            let f = anneal_distribution(&z, temperature)?;
            let mut du = 0.0f64;
            let mut dv = 0.0f64;
            for (fi, &(mu, mv)) in f.iter().zip(&means) {
                du += fi * mu;
                dv += fi * mv;
            }
            u[[r, c]] = du as f32;
            v[[r, c]] = dv as f32;
        }
    }
    Ok((u, v))
}

/// Combines a luminance plane with annealed-mean chroma into an RGB
/// image (clamped to gamut).
pub fn colorize(
    y: &Array2<f32>,
    probs: &ProbabilityVolume,
    temperature: f64,
    d: &ColorDiscretizer,
) -> Result<RgbImage> {
    if y.dim() != (probs.height(), probs.width()) {
        return Err(Error::Shape(format!(
            "luminance {:?} does not match volume {}x{}",
            y.dim(),
            probs.height(),
            probs.width()
        )));
    }
    let (u, v) = annealed_mean(probs, temperature, d)?;
    let yuv = YuvImage::new(y.clone(), u, v)?;
    Ok(yuv_to_rgb(&yuv))
}

/// Per-pixel top1 and top1/top2 maps.
pub fn confidence(probs: &ProbabilityVolume) -> Result<ConfidenceMaps> {
    let (n, h, w) = probs.probs.dim();
    if n < 2 {
        return Err(Error::Shape(
            "confidence ratio needs at least two bins".into(),
        ));
    }
    let mut top1 = Array2::<f32>::zeros((h, w));
    let mut ratio = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut a = f64::NEG_INFINITY;
            let mut b = f64::NEG_INFINITY;
            for bi in 0..n {
                let p = probs.probs[[bi, r, c]] as f64;
                if p > a {
                    b = a;
                    a = p;
                } else if p > b {
                    b = p;
                }
            }
            top1[[r, c]] = a as f32;
            ratio[[r, c]] = (a / b.max(ANNEAL_EPS)).min(RATIO_CAP) as f32;
        }
    }
    Ok(ConfidenceMaps { top1, ratio })
}

/// Normalized bin counts of a label map.
pub fn histogram_from_labels(labels: &Array2<u32>, n: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Data("empty label map".into()));
    }
    let mut counts = vec![0u64; n];
    for &l in labels {
        let l = l as usize;
        if l >= n {
            return Err(Error::Data(format!("label {l} out of range for {n} bins")));
        }
        counts[l] += 1;
    }
    let total = labels.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / total).collect())
}

/// Mean probability vector over all pixels of a volume.
pub fn histogram_from_probs(probs: &ProbabilityVolume) -> Vec<f64> {
    let (n, h, w) = probs.probs.dim();
    let pixels = (h * w) as f64;
    (0..n)
        .map(|b| {
            probs
                .probs
                .index_axis(Axis(0), b)
                .iter()
                .map(|&p| p as f64)
                .sum::<f64>()
                / pixels
        })
        .collect()
}

/// Writes a histogram as `bin_index,mean_u,mean_v,frequency` CSV.
pub fn write_histogram_csv(path: &Path, d: &ColorDiscretizer, freq: &[f64]) -> Result<()> {
    if freq.len() != d.n() {
        return Err(Error::Shape(format!(
            "{} frequencies for {} bins",
            freq.len(),
            d.n()
        )));
    }
    let mut body = String::from("bin_index,mean_u,mean_v,frequency\n");
    for (i, (bin, f)) in d.bins().iter().zip(freq).enumerate() {
        body.push_str(&format!("{i},{},{},{f}\n", bin.mean_u, bin.mean_v));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorspace::rgb_to_yuv;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Discretizer with three known bin means from solid-color images.
    fn three_bin_discretizer() -> ColorDiscretizer {
        let colors = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]];
        let yuvs: Vec<_> = colors
            .iter()
            .map(|c| rgb_to_yuv(&RgbImage::from_fn(4, 4, |_, _| *c).unwrap()))
            .collect();
        ColorDiscretizer::fit(yuvs.iter(), 0.1, 3, 0.5).unwrap()
    }

    fn random_volume(n: usize, h: usize, w: usize, seed: u64) -> ProbabilityVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Array3::<f32>::zeros((n, h, w));
        for r in 0..h {
            for c in 0..w {
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                for (b, &x) in raw.iter().enumerate() {
                    probs[[b, r, c]] = (x / s) as f32;
                }
            }
        }
        ProbabilityVolume::new(probs).unwrap()
    }

    fn one_hot_volume(n: usize, h: usize, w: usize, hot: usize) -> ProbabilityVolume {
        let mut probs = Array3::<f32>::zeros((n, h, w));
        probs.index_axis_mut(Axis(0), hot).fill(1.0);
        ProbabilityVolume::new(probs).unwrap()
    }

    #[test]
    fn volume_validation_rejects_bad_distributions() {
        let mut probs = Array3::<f32>::zeros((2, 2, 2));
        probs.index_axis_mut(Axis(0), 0).fill(0.6);
        probs.index_axis_mut(Axis(0), 1).fill(0.6);
        assert!(ProbabilityVolume::new(probs).is_err());
        let mut probs = Array3::<f32>::zeros((2, 1, 1));
        probs[[0, 0, 0]] = 1.5;
        probs[[1, 0, 0]] = -0.5;
        assert!(ProbabilityVolume::new(probs).is_err());
    }

    #[test]
    fn from_logits_matches_channel_softmax() {
        let mut logits = Array4::<f32>::zeros((2, 3, 2, 2));
        logits[[1, 0, 0, 0]] = 2.0;
        logits[[1, 1, 0, 0]] = 1.0;
        let vol = ProbabilityVolume::from_logits(&logits, 1).unwrap();
        let z = vol.pixel(0, 0);
        let e: Vec<f64> = [2.0f64, 1.0, 0.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (got, want) in z.iter().zip(&e) {
            assert!((*got as f64 - want / s).abs() < 1e-6);
        }
        assert!(ProbabilityVolume::from_logits(&logits, 2).is_err());
    }

    #[test]
    fn temperature_one_is_the_identity() {
        let d = three_bin_discretizer();
        let vol = random_volume(3, 4, 5, 1);
        let (u, v) = annealed_mean(&vol, 1.0, &d).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                let z = vol.pixel(r, c);
                let mut eu = 0.0f64;
                let mut ev = 0.0f64;
                for (b, &p) in z.iter().enumerate() {
                    eu += p as f64 * d.bins()[b].mean_u;
                    ev += p as f64 * d.bins()[b].mean_v;
                }
                assert!((u[[r, c]] as f64 - eu).abs() < 1e-6, "u at ({r},{c})");
                assert!((v[[r, c]] as f64 - ev).abs() < 1e-6, "v at ({r},{c})");
            }
        }
    }

    #[test]
    fn uniform_distributions_decode_to_the_mean_of_means_at_any_temperature() {
        let d = three_bin_discretizer();
        let vol = ProbabilityVolume::new(Array3::from_elem((3, 2, 2), 1.0 / 3.0)).unwrap();
        let eu: f64 = d.bins().iter().map(|b| b.mean_u).sum::<f64>() / 3.0;
        let ev: f64 = d.bins().iter().map(|b| b.mean_v).sum::<f64>() / 3.0;
        for t in [0.05, 0.4, 1.0, 3.0] {
            let (u, v) = annealed_mean(&vol, t, &d).unwrap();
            for r in 0..2 {
                for c in 0..2 {
                    assert!((u[[r, c]] as f64 - eu).abs() < 1e-6);
                    assert!((v[[r, c]] as f64 - ev).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn low_temperature_approaches_the_argmax_mean() {
        let d = three_bin_discretizer();
        let mut probs = Array3::<f32>::zeros((3, 2, 2));
        probs.index_axis_mut(Axis(0), 0).fill(0.2);
        probs.index_axis_mut(Axis(0), 1).fill(0.5);
        probs.index_axis_mut(Axis(0), 2).fill(0.3);
        let vol = ProbabilityVolume::new(probs).unwrap();
        let (u, v) = annealed_mean(&vol, 0.01, &d).unwrap();
        assert!((u[[0, 0]] as f64 - d.bins()[1].mean_u).abs() < 1e-6);
        assert!((v[[0, 0]] as f64 - d.bins()[1].mean_v).abs() < 1e-6);
    }

    #[test]
    fn cooling_converges_monotonically_toward_the_argmax_mean() {
        let d = three_bin_discretizer();
        let mut probs = Array3::<f32>::zeros((3, 1, 1));
        probs[[0, 0, 0]] = 0.5;
        probs[[1, 0, 0]] = 0.3;
        probs[[2, 0, 0]] = 0.2;
        let vol = ProbabilityVolume::new(probs).unwrap();
        let target = (d.bins()[0].mean_u, d.bins()[0].mean_v);
        let mut last = f64::INFINITY;
        for t in [1.0, 0.5, 0.1, 0.01] {
            let (u, v) = annealed_mean(&vol, t, &d).unwrap();
            let dist = ((u[[0, 0]] as f64 - target.0).powi(2)
                + (v[[0, 0]] as f64 - target.1).powi(2))
            .sqrt();
            assert!(dist <= last + 1e-12, "distance grew at T={t}");
            last = dist;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn annealing_preserves_normalization_and_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(2..12);
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let z: Vec<f32> = raw.iter().map(|&x| (x / s) as f32).collect();
            let argmax = |v: &[f64]| {
                v.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let zin: Vec<f64> = z.iter().map(|&p| p as f64).collect();
            for t in [0.1, 0.4, 1.0, 2.5] {
                let f = anneal_distribution(&z, t).unwrap();
                let sum: f64 = f.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(f.iter().all(|&p| p >= 0.0));
                assert_eq!(argmax(&f), argmax(&zin), "argmax moved at T={t}");
            }
        }
    }

    #[test]
    fn non_positive_temperatures_are_rejected() {
        assert!(anneal_distribution(&[0.5, 0.5], 0.0).is_err());
        assert!(anneal_distribution(&[0.5, 0.5], -1.0).is_err());
        assert!(anneal_distribution(&[0.5, 0.5], f64::NAN).is_err());
    }

    #[test]
    fn one_hot_volume_colorizes_to_the_bin_mean_chroma() {
        let d = three_bin_discretizer();
        let vol = one_hot_volume(3, 3, 3, 2);
        let y = Array2::from_elem((3, 3), 0.5f32);
        let out = colorize(&y, &vol, DEFAULT_TEMPERATURE, &d).unwrap();
        let bin = &d.bins()[2];
        let expect = yuv_to_rgb(
            &YuvImage::new(
                y.clone(),
                Array2::from_elem((3, 3), bin.mean_u as f32),
                Array2::from_elem((3, 3), bin.mean_v as f32),
            )
            .unwrap(),
        );
        for yy in 0..3 {
            for xx in 0..3 {
                let a = out.pixel(xx, yy);
                let b = expect.pixel(xx, yy);
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn colorize_preserves_luminance_in_gamut() {
        let d = three_bin_discretizer();
        let vol = random_volume(3, 4, 4, 3);
        // Mid-gray luminance keeps every blended chroma inside gamut.
        let y = Array2::from_elem((4, 4), 0.5f32);
        let out = colorize(&y, &vol, 1.0, &d).unwrap();
        let lum = crate::colorspace::luminance(&out);
        for (&a, &b) in lum.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn lower_temperatures_move_farther_from_the_expectation_decode() {
        let d = three_bin_discretizer();
        let mut probs = Array3::<f32>::zeros((3, 2, 2));
        probs.index_axis_mut(Axis(0), 0).fill(0.6);
        probs.index_axis_mut(Axis(0), 1).fill(0.25);
        probs.index_axis_mut(Axis(0), 2).fill(0.15);
        let vol = ProbabilityVolume::new(probs).unwrap();
        let (u1, v1) = annealed_mean(&vol, 1.0, &d).unwrap();
        let dist_from_t1 = |t: f64| {
            let (u, v) = annealed_mean(&vol, t, &d).unwrap();
            let mut acc = 0.0f64;
            for r in 0..2 {
                for c in 0..2 {
                    acc += (((u[[r, c]] - u1[[r, c]]) as f64).powi(2)
                        + ((v[[r, c]] - v1[[r, c]]) as f64).powi(2))
                    .sqrt();
                }
            }
            acc / 4.0
        };
        assert!(dist_from_t1(0.2) > dist_from_t1(0.5));
        assert!(dist_from_t1(0.5) > 0.0);
    }

    #[test]
    fn confidence_maps_match_hand_computations() {
        // Uniform: top1 = 1/n, ratio = 1.
        let vol = ProbabilityVolume::new(Array3::from_elem((4, 2, 2), 0.25)).unwrap();
        let maps = confidence(&vol).unwrap();
        assert!((maps.top1[[0, 0]] - 0.25).abs() < 1e-7);
        assert!((maps.ratio[[0, 0]] - 1.0).abs() < 1e-7);

        // One-hot: top1 = 1, ratio capped.
        let vol = one_hot_volume(4, 1, 1, 3);
        let maps = confidence(&vol).unwrap();
        assert_eq!(maps.top1[[0, 0]], 1.0);
        assert_eq!(maps.ratio[[0, 0]], RATIO_CAP as f32);

        // Hand-built 3-bin pixel.
        let mut probs = Array3::<f32>::zeros((3, 1, 1));
        probs[[0, 0, 0]] = 0.5;
        probs[[1, 0, 0]] = 0.3;
        probs[[2, 0, 0]] = 0.2;
        let maps = confidence(&ProbabilityVolume::new(probs).unwrap()).unwrap();
        assert!((maps.top1[[0, 0]] - 0.5).abs() < 1e-7);
        assert!((maps.ratio[[0, 0]] - 5.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn label_histograms_count_and_normalize() {
        let labels = Array2::from_elem((4, 4), 2u32);
        let h = histogram_from_labels(&labels, 5).unwrap();
        assert_eq!(h, vec![0.0, 0.0, 1.0, 0.0, 0.0]);

        let mut labels = Array2::zeros((2, 2));
        labels[[0, 0]] = 1u32;
        let h = histogram_from_labels(&labels, 2).unwrap();
        assert_eq!(h, vec![0.75, 0.25]);
        assert!(histogram_from_labels(&Array2::from_elem((2, 2), 9u32), 2).is_err());
    }

    #[test]
    fn probability_histograms_average_and_stay_normalized() {
        let vol = ProbabilityVolume::new(Array3::from_elem((4, 3, 3), 0.25)).unwrap();
        let h = histogram_from_probs(&vol);
        for f in &h {
            assert!((f - 0.25).abs() < 1e-7);
        }

        let vol = random_volume(5, 3, 4, 9);
        let h = histogram_from_probs(&vol);
        let sum: f64 = h.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn concatenated_images_average_their_histograms_by_pixel_count() {
        let a = Array2::from_elem((2, 2), 0u32);
        let b = Array2::from_elem((2, 4), 1u32);
        let ha = histogram_from_labels(&a, 2).unwrap();
        let hb = histogram_from_labels(&b, 2).unwrap();
        let mut joined = Array2::zeros((2, 6));
        joined.slice_mut(ndarray::s![.., ..2]).assign(&a);
        joined.slice_mut(ndarray::s![.., 2..]).assign(&b);
        let hj = histogram_from_labels(&joined, 2).unwrap();
        for k in 0..2 {
            let want = (ha[k] * 4.0 + hb[k] * 8.0) / 12.0;
            assert!((hj[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_csv_has_the_documented_columns() {
        let d = three_bin_discretizer();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        write_histogram_csv(&path, &d, &[0.5, 0.25, 0.25]).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines[0], "bin_index,mean_u,mean_v,frequency");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].ends_with(",0.5"));
        assert!(write_histogram_csv(&path, &d, &[1.0]).is_err());
    }
}
