//! Fits a chrominance discretizer on a synthetic corpus and inspects
//! the result: bin means, frequencies, rebalancing weights, and the
//! degradation introduced by snapping every pixel to its nearest bin.
//!
//! Run with:
//! ```bash
//! cargo run --example fit_discretizer
//! ```

use colorunet::colorspace::{rgb_to_yuv, yuv_to_rgb, RgbImage, YuvImage};
use colorunet::discretizer::ColorDiscretizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> colorunet::Result<()> {
    // Four color families with different abundances: a common brick red,
    // a common sky blue, a rarer green, a rare yellow.
    let palette: [([f32; 3], f64); 4] = [
        ([0.82, 0.16, 0.12], 0.45),
        ([0.12, 0.24, 0.86], 0.35),
        ([0.05, 0.78, 0.16], 0.15),
        ([0.90, 0.86, 0.12], 0.05),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut images: Vec<YuvImage> = Vec::new();
    for _ in 0..12 {
        let img = RgbImage::from_fn(48, 32, |_, _| {
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            let mut color = palette[0].0;
            for (rgb, share) in palette {
                acc += share;
                if draw < acc {
                    color = rgb;
                    break;
                }
            }
            // Small jitter keeps each family a cloud, not a point.
            color.map(|c| (c + rng.random_range(-0.03..0.03f32)).clamp(0.0, 1.0))
        })?;
        images.push(rgb_to_yuv(&img));
    }

    let disc = ColorDiscretizer::fit(&images, 0.1, 4, 0.5)?;
    println!("{:>3} {:>9} {:>9} {:>10} {:>8}", "bin", "mean_u", "mean_v", "frequency", "weight");
    for (i, bin) in disc.bins().iter().enumerate() {
        println!(
            "{i:>3} {:>9.4} {:>9.4} {:>10.4} {:>8.4}",
            bin.mean_u, bin.mean_v, bin.frequency, bin.weight
        );
    }
    println!("(rare bins get the large weights; the expectation of weight under frequency is 1)");

    // Encode + decode an image and measure the chroma error of snapping.
    let probe = &images[0];
    let labels = disc.encode(probe);
    let recon = disc.decode_labels(&labels, probe.y())?;
    let (h, w) = probe.y().dim();
    let mut err = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            err += (probe.u()[[r, c]] - recon.u()[[r, c]]).abs() as f64
                + (probe.v()[[r, c]] - recon.v()[[r, c]]).abs() as f64;
        }
    }
    println!(
        "\nmean |Δu|+|Δv| after snapping to the nearest of {} bins: {:.4}",
        disc.n(),
        err / (h * w) as f64
    );
    let rt = yuv_to_rgb(&recon);
    println!(
        "round-tripped image is {}x{} (decode stays in gamut by clamping)",
        rt.width(),
        rt.height()
    );
    Ok(())
}
