//! Trains a small model on a synthetic world, then colorizes a held-out
//! grayscale image at several temperatures and writes the results plus
//! confidence maps as PNGs.
//!
//! Temperature interpolates between the distribution's mean (T = 1,
//! desaturated but safe) and its mode (T -> 0, vivid but riskier).
//!
//! Run with:
//! ```bash
//! cargo run --example colorize_image
//! ```

use colorunet::colorspace::{luminance, rgb_to_yuv, RgbImage};
use colorunet::datapipe::make_sample;
use colorunet::decoder::{colorize, confidence, ProbabilityVolume};
use colorunet::discretizer::ColorDiscretizer;
use colorunet::nn::{Adam, AdamConfig};
use colorunet::render::{ratio_gray, top1_gray, write_gray_png, write_rgb_png};
use colorunet::unet::{train, ColorUNet, ColorUNetConfig, TrainConfig};
use ndarray::{s, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn world_image(boundary: usize) -> colorunet::Result<RgbImage> {
    // Bright side is always warm red, dark side always cool blue, so
    // luminance fully determines color.
    RgbImage::from_fn(32, 32, move |x, _| {
        if x < boundary {
            [0.8, 0.15, 0.1]
        } else {
            [0.1, 0.2, 0.85]
        }
    })
}

fn main() -> colorunet::Result<()> {
    let images: Vec<RgbImage> = (0..6)
        .map(|i| world_image(10 + 2 * i))
        .collect::<colorunet::Result<_>>()?;
    let yuvs: Vec<_> = images.iter().map(rgb_to_yuv).collect();
    let disc = ColorDiscretizer::fit(&yuvs, 0.1, 2, 0.5)?;
    let mask = Array2::from_elem((32, 32), 1.0f32);
    let samples: Vec<_> = images
        .iter()
        .map(|img| make_sample(img, &mask, &disc, "world"))
        .collect::<colorunet::Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = ColorUNet::<f32>::new(
        ColorUNetConfig {
            num_classes: disc.n(),
            base_filters: 4,
            ..ColorUNetConfig::default()
        },
        &mut rng,
    )?;
    let cfg = TrainConfig {
        batch_size: 3,
        phase1_steps: 50,
        phase2_steps: 0,
        val_every: 0,
        ..TrainConfig::default()
    };
    let mut adam = Adam::new(AdamConfig::default());
    train(&mut net, &mut adam, &samples, &[], &disc.weights_f32(), &cfg, None, |_| Ok(()))?;

    // A boundary the training set never saw.
    let held_out = world_image(17)?;
    let y = luminance(&held_out);
    let mut x = Array4::<f32>::zeros((1, 1, 32, 32));
    x.slice_mut(s![0, 0, .., ..]).assign(&y);
    let logits = net.forward(&x, false)?;
    let vol = ProbabilityVolume::from_logits(&logits, 0)?;

    let dir = std::env::temp_dir().join("colorunet_colorize_image");
    std::fs::create_dir_all(&dir).expect("create output dir");
    for t in [1.0, 0.4, 0.01] {
        let img = colorize(&y, &vol, t, &disc)?;
        let path = dir.join(format!("colorized_t{t}.png"));
        write_rgb_png(&path, &img)?;
        println!("T = {t:<4} -> {}", path.display());
    }
    let maps = confidence(&vol)?;
    write_gray_png(&dir.join("top1.png"), &top1_gray(&maps.top1))?;
    write_gray_png(&dir.join("ratio.png"), &ratio_gray(&maps.ratio))?;
    let mean_top1 = maps.top1.mean().unwrap_or(0.0);
    println!("confidence maps written; mean top1 probability {mean_top1:.3}");
    Ok(())
}
