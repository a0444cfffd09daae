//! Frame-sequence colorization with temporal smoothing of the class
//! probabilities.
//!
//! Per-frame predictions flicker because nearby frames can fall into
//! different but similarly-likely bins. Smoothing replaces frame t's
//! distribution with the exponentially decayed sum over the trailing
//! window, p̂_t = Σ_{i=0..min(t,T_w)} p_{t−i}·e^{−α·i}, renormalized per
//! pixel. The window is truncated at the sequence start, a constant
//! sequence is a fixed point, and a huge decay coefficient degenerates
//! to per-frame decoding.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};

use crate::colorspace::RgbImage;
use crate::decoder::{annealed_mean, colorize, ProbabilityVolume};
use crate::discretizer::ColorDiscretizer;
use crate::unet::{ColorUNet, DOWNSCALE};
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 20;
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Trailing-window length and decay coefficient of the smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingSpec {
    /// Frames of history blended into each output (in addition to the
    /// current frame). Zero disables smoothing.
    pub window: usize,
    /// Per-frame decay exponent; weight of an i-frame-old prediction is
    /// e^(-alpha * i).
    pub alpha: f64,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec {
            window: DEFAULT_WINDOW,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl SmoothingSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "decay coefficient {} must be finite and nonnegative",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// An ordered list of luminance planes with uniform network-compatible
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Array2<f32>>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Array2<f32>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Data("empty frame sequence".into()))?;
        let (h, w) = first.dim();
        if h == 0 || w == 0 || h % DOWNSCALE != 0 || w % DOWNSCALE != 0 {
            return Err(Error::Shape(format!(
                "frame {h}x{w} must have both extents positive multiples of {DOWNSCALE}"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "frame {i} is {:?}, sequence is {h}x{w}",
                    f.dim()
                )));
            }
        }
        Ok(FrameSequence { frames })
    }

    pub fn frames(&self) -> &[Array2<f32>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dim()
    }
}

/// Streaming smoother holding at most window+1 volumes, so memory is
/// bounded regardless of sequence length.
#[derive(Debug, Clone)]
pub struct TemporalSmoother {
    spec: SmoothingSpec,
    /// Newest at the back.
    history: VecDeque<Array3<f32>>,
}

impl TemporalSmoother {
    pub fn new(spec: SmoothingSpec) -> Result<Self> {
        spec.validate()?;
        Ok(TemporalSmoother {
            spec,
            history: VecDeque::with_capacity(spec.window + 1),
        })
    }

    /// Frames currently held.
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Drops all history, e.g. at a scene cut.
    pub fn reset(&mut self) {
        self.history.clear();
    }

    /// Ingests the next frame's distribution and returns the smoothed
    /// one.
    pub fn push(&mut self, vol: &ProbabilityVolume) -> Result<ProbabilityVolume> {
        let dim = vol.probs().dim();
        if let Some(prev) = self.history.back() {
            if prev.dim() != dim {
                return Err(Error::Shape(format!(
                    "frame volume {:?} does not match sequence {:?}",
                    dim,
                    prev.dim()
                )));
            }
        }
        if self.history.len() == self.spec.window + 1 {
            self.history.pop_front();
        }
        self.history.push_back(vol.probs().clone());

        let (n, h, w) = dim;
        let mut acc = Array3::<f64>::zeros(dim);
        for (age, frame) in self.history.iter().rev().enumerate() {
            let weight = (-self.spec.alpha * age as f64).exp();
            if weight == 0.0 {
                break;
            }
            acc.zip_mut_with(frame, |a, &p| *a += weight * p as f64);
        }
        // Per-pixel renormalization back to a distribution.
        let mut out = Array3::<f32>::zeros(dim);
        for r in 0..h {
            for c in 0..w {
                let mut sum = 0.0f64;
                for b in 0..n {
                    sum += acc[[b, r, c]];
                }
                if sum <= 0.0 {
                    return Err(Error::Numeric(format!(
                        "smoothed distribution at pixel ({r},{c}) sums to {sum}"
                    )));
                }
                for b in 0..n {
                    out[[b, r, c]] = (acc[[b, r, c]] / sum) as f32;
                }
            }
        }
        ProbabilityVolume::new(out)
    }
}

/// Smooths a whole probability sequence. Output length equals input
/// length; frame t blends at most the trailing window of predictions.
pub fn smooth(seq: &[ProbabilityVolume], spec: SmoothingSpec) -> Result<Vec<ProbabilityVolume>> {
    let mut smoother = TemporalSmoother::new(spec)?;
    seq.iter().map(|vol| smoother.push(vol)).collect()
}

/// A colorized sequence together with the decoded chroma planes before
/// and after smoothing, for stability analysis.
#[derive(Debug, Clone)]
pub struct SequenceColorization {
    pub frames: Vec<RgbImage>,
    pub raw_uv: Vec<(Array2<f32>, Array2<f32>)>,
    pub smoothed_uv: Vec<(Array2<f32>, Array2<f32>)>,
}

/// Runs the network over each frame (eval mode, in order), smooths the
/// probability stream, and decodes with the annealed mean.
pub fn colorize_sequence(
    frames: &FrameSequence,
    net: &mut ColorUNet<f32>,
    d: &ColorDiscretizer,
    temperature: f64,
    spec: SmoothingSpec,
) -> Result<SequenceColorization> {
    let (h, w) = frames.dims();
    let mut smoother = TemporalSmoother::new(spec)?;
    let mut out = SequenceColorization {
        frames: Vec::with_capacity(frames.len()),
        raw_uv: Vec::with_capacity(frames.len()),
        smoothed_uv: Vec::with_capacity(frames.len()),
    };
    for luma in frames.frames() {
        let mut x = Array4::<f32>::zeros((1, 1, h, w));
        x.index_axis_mut(Axis(0), 0)
            .index_axis_mut(Axis(0), 0)
            .assign(luma);
        let logits = net.forward(&x, false)?;
        let vol = ProbabilityVolume::from_logits(&logits, 0)?;
        out.raw_uv.push(annealed_mean(&vol, temperature, d)?);
        let smoothed = smoother.push(&vol)?;
        out.smoothed_uv.push(annealed_mean(&smoothed, temperature, d)?);
        out.frames.push(colorize(luma, &smoothed, temperature, d)?);
    }
    Ok(out)
}

/// Frame-to-frame chroma movement for one transition, before and after
/// smoothing. The metric is the mean over pixels of |Δu| + |Δv|.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    /// Transition t → t+1, indexed by t.
    pub transition: usize,
    pub raw_tv: f64,
    pub smoothed_tv: f64,
}

fn mean_uv_tv(a: &(Array2<f32>, Array2<f32>), b: &(Array2<f32>, Array2<f32>)) -> f64 {
    let pixels = a.0.len() as f64;
    let mut acc = 0.0f64;
    for (x, y) in a.0.iter().zip(b.0.iter()) {
        acc += (*x as f64 - *y as f64).abs();
    }
    for (x, y) in a.1.iter().zip(b.1.iter()) {
        acc += (*x as f64 - *y as f64).abs();
    }
    acc / pixels
}

/// Per-transition total-variation comparison of the two decoded chroma
/// sequences.
pub fn stability_report(
    raw: &[(Array2<f32>, Array2<f32>)],
    smoothed: &[(Array2<f32>, Array2<f32>)],
) -> Result<Vec<StabilityRow>> {
    if raw.len() != smoothed.len() {
        return Err(Error::Shape(format!(
            "raw sequence has {} frames, smoothed has {}",
            raw.len(),
            smoothed.len()
        )));
    }
    Ok((1..raw.len())
        .map(|t| StabilityRow {
            transition: t - 1,
            raw_tv: mean_uv_tv(&raw[t - 1], &raw[t]),
            smoothed_tv: mean_uv_tv(&smoothed[t - 1], &smoothed[t]),
        })
        .collect())
}

/// Writes a stability report as `transition,raw_tv,smoothed_tv` CSV.
pub fn write_stability_csv(path: &Path, rows: &[StabilityRow]) -> Result<()> {
    let mut body = String::from("transition,raw_tv,smoothed_tv\n");
    for r in rows {
        body.push_str(&format!("{},{},{}\n", r.transition, r.raw_tv, r.smoothed_tv));
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
