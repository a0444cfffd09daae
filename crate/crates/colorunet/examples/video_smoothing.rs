//! Temporal smoothing on a deliberately flickering sequence.
//!
//! Per-frame colorization is independent across frames, so two nearly
//! identical frames can decode to visibly different colors. The
//! smoother replaces each frame's distribution with an exponentially
//! decayed average over a trailing window before decoding, which damps
//! the flicker without any retraining.
//!
//! This example skips the network entirely: it hand-builds probability
//! volumes for a two-bin palette, perturbs them with per-frame jitter,
//! and compares frame-to-frame chroma movement before and after
//! smoothing.
//!
//! Run with:
//! ```bash
//! cargo run --example video_smoothing
//! ```

use colorunet::colorspace::{rgb_to_yuv, RgbImage};
use colorunet::decoder::{annealed_mean, ProbabilityVolume};
use colorunet::discretizer::ColorDiscretizer;
use colorunet::video::{stability_report, TemporalSmoother, SmoothingSpec};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> colorunet::Result<()> {
    // Two-bin palette from a red/blue corpus.
    let img = RgbImage::from_fn(16, 16, |x, _| {
        if x < 8 {
            [0.8, 0.15, 0.1]
        } else {
            [0.1, 0.2, 0.85]
        }
    })?;
    let disc = ColorDiscretizer::fit([&rgb_to_yuv(&img)], 0.1, 2, 0.5)?;

    // Ten frames of a static scene whose per-pixel distributions jitter
    // around (0.6, 0.4): the kind of flicker independent per-frame
    // prediction produces.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let volumes: Vec<ProbabilityVolume> = (0..10)
        .map(|_| {
            let mut probs = Array3::<f32>::zeros((2, 16, 16));
            for r in 0..16 {
                for c in 0..16 {
                    let p = (0.6 + rng.random_range(-0.25..0.25f32)).clamp(0.05, 0.95);
                    probs[[0, r, c]] = p;
                    probs[[1, r, c]] = 1.0 - p;
                }
            }
            ProbabilityVolume::new(probs)
        })
        .collect::<colorunet::Result<_>>()?;

    let spec = SmoothingSpec::default();
    let mut smoother = TemporalSmoother::new(spec)?;
    let mut raw_uv = Vec::new();
    let mut smoothed_uv = Vec::new();
    for vol in &volumes {
        raw_uv.push(annealed_mean(vol, 0.4, &disc)?);
        let smoothed = smoother.push(vol)?;
        smoothed_uv.push(annealed_mean(&smoothed, 0.4, &disc)?);
    }

    let rows = stability_report(&raw_uv, &smoothed_uv)?;
    println!(
        "window {} decay {} on {} frames",
        spec.window,
        spec.alpha,
        volumes.len()
    );
    println!("{:>10} {:>12} {:>12} {:>8}", "transition", "raw", "smoothed", "ratio");
    for r in &rows {
        println!(
            "{:>10} {:>12.6} {:>12.6} {:>8.2}",
            r.transition,
            r.raw_tv,
            r.smoothed_tv,
            r.smoothed_tv / r.raw_tv
        );
    }
    let better = rows.iter().filter(|r| r.smoothed_tv <= r.raw_tv).count();
    println!("\nsmoothing reduced chroma movement on {better}/{} transitions", rows.len());
    println!("(a huge decay rate degenerates to per-frame decoding: each frame dominates its window)");
    Ok(())
}
