//! Writes the seven deformation variants of one image as a PNG gallery.
//!
//! Run with:
//! ```bash
//! cargo run --example augmentation_gallery
//! ```
//! Outputs land in a `colorunet_augmentation_gallery` directory under
//! the system temp dir.

use colorunet::colorspace::RgbImage;
use colorunet::datapipe::{augment, content_extent, AugmentationSpec};
use colorunet::render::write_rgb_png;
use ndarray::Array2;

fn main() -> colorunet::Result<()> {
    // A recognizable 96x64 test card (quadrants plus a diagonal stripe)
    // sitting top-left in a square 96 frame, the datapipe's layout.
    let img = RgbImage::from_fn(96, 96, |x, y| {
        if y >= 64 {
            return [0.0, 0.0, 0.0];
        }
        if (x + y) % 17 < 2 {
            return [0.95, 0.95, 0.95];
        }
        match (x < 48, y < 32) {
            (true, true) => [0.85, 0.2, 0.15],
            (false, true) => [0.15, 0.35, 0.8],
            (true, false) => [0.1, 0.7, 0.25],
            (false, false) => [0.9, 0.8, 0.2],
        }
    })?;
    let mut mask = Array2::zeros((96, 96));
    mask.slice_mut(ndarray::s![..64, ..]).fill(1.0f32);

    let spec = AugmentationSpec::default();
    let variants = augment(&img, &mask, &spec, 42)?;
    let labels = [
        "original",
        "hflip",
        "noise (sigma 0.02)",
        "noise (sigma 0.05)",
        "crop A",
        "crop B",
        "hflip + noise (sigma 0.02)",
    ];

    let dir = std::env::temp_dir().join("colorunet_augmentation_gallery");
    std::fs::create_dir_all(&dir).expect("create gallery dir");
    println!("variant  content  description");
    for (i, (vimg, vmask)) in variants.iter().enumerate() {
        let (ch, cw) = content_extent(vmask)?;
        let path = dir.join(format!("variant_{i}.png"));
        write_rgb_png(&path, vimg)?;
        println!("{i:>7}  {cw:>3}x{ch:<3}  {}", labels[i]);
    }
    println!("\n{} variants -> {}", variants.len(), dir.display());
    println!("(crops re-anchor top-left without resampling; the same seed reproduces them bit-exactly)");
    Ok(())
}
