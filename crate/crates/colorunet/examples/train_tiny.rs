//! Overfits a tiny network on an in-memory two-color world, then saves,
//! reloads, and resumes it to show the checkpoint round trip.
//!
//! Run with:
//! ```bash
//! cargo run --example train_tiny
//! ```

use colorunet::colorspace::{rgb_to_yuv, RgbImage};
use colorunet::datapipe::make_sample;
use colorunet::discretizer::ColorDiscretizer;
use colorunet::nn::{Adam, AdamConfig};
use colorunet::unet::{
    load_training_state, save_training_state, train, ColorUNet, ColorUNetConfig, TrainConfig,
};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> colorunet::Result<()> {
    // Left half red, right half blue, boundary varying per image: the
    // color is predictable from luminance structure alone.
    let images: Vec<RgbImage> = (0..6)
        .map(|i| {
            RgbImage::from_fn(32, 32, |x, _| {
                if x < 10 + 2 * i {
                    [0.8, 0.15, 0.1]
                } else {
                    [0.1, 0.2, 0.85]
                }
            })
        })
        .collect::<colorunet::Result<_>>()?;
    let yuvs: Vec<_> = images.iter().map(rgb_to_yuv).collect();
    let disc = ColorDiscretizer::fit(&yuvs, 0.1, 2, 0.5)?;

    let mask = Array2::from_elem((32, 32), 1.0f32);
    let samples: Vec<_> = images
        .iter()
        .enumerate()
        .map(|(i, img)| make_sample(img, &mask, &disc, &format!("synthetic {i}")))
        .collect::<colorunet::Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = ColorUNet::<f32>::new(
        ColorUNetConfig {
            num_classes: disc.n(),
            base_filters: 4,
            ..ColorUNetConfig::default()
        },
        &mut rng,
    )?;
    let mut adam = Adam::new(AdamConfig::default());
    let cfg = TrainConfig {
        batch_size: 3,
        phase1_steps: 40,
        phase1_lr: 1e-3,
        phase2_steps: 10,
        phase2_lr: 1e-4,
        val_every: 0,
        checkpoint_every: 0,
        seed: 3,
    };
    let weights = disc.weights_f32();
    let outcome = train(&mut net, &mut adam, &samples, &[], &weights, &cfg, None, |row| {
        if row.iter % 10 == 0 || row.iter == 1 {
            println!(
                "iter {:>2} phase {} lr {:<6} loss {:.4}",
                row.iter, row.phase, row.lr, row.train_loss
            );
        }
        Ok(())
    })?;
    println!(
        "\nloss {:.4} -> {:.4} over {} iterations",
        outcome.initial_loss, outcome.final_loss, outcome.iterations
    );
    assert!(outcome.final_loss < outcome.initial_loss);

    // Round trip through disk, then resume for a few more steps.
    let path = std::env::temp_dir().join("colorunet_train_tiny.cunw");
    save_training_state(&mut net, &adam, &path)?;
    let (mut revived, mut adam2) = load_training_state(&path)?;
    let resume = TrainConfig {
        phase1_steps: 0,
        phase2_steps: 5,
        ..cfg
    };
    let more = train(&mut revived, &mut adam2, &samples, &[], &weights, &resume, None, |_| Ok(()))?;
    println!(
        "resumed from {} for {} steps: loss {:.4}",
        path.display(),
        more.iterations,
        more.final_loss
    );
    Ok(())
}
