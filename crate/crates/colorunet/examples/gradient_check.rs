//! Verifies the network's analytic gradients against central finite
//! differences.
//!
//! The whole engine is layer-wise reverse mode with hand-written
//! backward passes, so this check is the ground truth for every other
//! result: a tiny ColorUNet runs in f64, a handful of coordinates of
//! every parameter tensor are perturbed by ±ε, and the numeric slope of
//! the loss is compared against the accumulated gradient.
//!
//! One subtlety worth knowing when reading the output: convolution
//! biases that feed straight into a batchnorm have exactly zero
//! gradient (the normalization subtracts the per-channel mean, so a
//! constant shift cannot change the loss). Those coordinates are
//! reported as `zero/zero`.
//!
//! Run with:
//! ```bash
//! cargo run --example gradient_check
//! ```

use colorunet::nn::weighted_masked_cross_entropy;
use colorunet::unet::{ColorUNet, ColorUNetConfig};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-3;

fn main() -> colorunet::Result<()> {
    let config = ColorUNetConfig {
        num_classes: 3,
        base_filters: 2,
        ..ColorUNetConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = ColorUNet::<f64>::new(config, &mut rng)?;

    let x = Array4::from_shape_fn((2, 1, 8, 8), |_| rng.random::<f64>());
    let labels = Array3::from_shape_fn((2, 8, 8), |_| rng.random_range(0..3u32));
    let mask = Array3::from_shape_fn((2, 8, 8), |_| if rng.random_bool(0.8) { 1.0 } else { 0.0 });
    let weights = [1.0, 0.5, 2.0];

    let loss_of = |net: &mut ColorUNet<f64>| -> colorunet::Result<f64> {
        let logits = net.forward(&x, true)?;
        let (loss, _) = weighted_masked_cross_entropy(&logits, &labels, &mask, &weights)?;
        Ok(loss)
    };

    // Analytic pass.
    net.zero_grad();
    let logits = net.forward(&x, true)?;
    let (loss, dlogits) = weighted_masked_cross_entropy(&logits, &labels, &mask, &weights)?;
    net.backward(&dlogits)?;
    println!("loss at the probe point: {loss:.6}");

    let (names, values, grads): (Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>) = {
        let params = net.params_mut();
        let names = params.iter().map(|p| p.name.clone()).collect();
        let values = params.iter().map(|p| p.value.to_vec()).collect();
        let grads = params.iter().map(|p| p.grad.to_vec()).collect();
        (names, values, grads)
    };

    let mut probe_rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut zeros = 0usize;
    println!("{:<28} {:>8} {:>12}", "tensor", "coords", "max rel err");
    for (pi, name) in names.iter().enumerate() {
        let len = values[pi].len();
        let picks: Vec<usize> = (0..3.min(len))
            .map(|_| probe_rng.random_range(0..len))
            .collect();
        let mut tensor_worst: f64 = 0.0;
        for &j in &picks {
            let numeric = {
                let eval = |delta: f64| -> colorunet::Result<f64> {
                    let mut probe = net.clone();
                    probe.params_mut()[pi].value[j] = values[pi][j] + delta;
                    loss_of(&mut probe)
                };
                (eval(EPS)? - eval(-EPS)?) / (2.0 * EPS)
            };
            let analytic = grads[pi][j];
            if numeric.abs() < 1e-6 && analytic.abs() < 1e-6 {
                zeros += 1;
                continue;
            }
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8);
            tensor_worst = tensor_worst.max(rel);
            checked += 1;
            assert!(
                rel < TOL,
                "{name}[{j}]: numeric {numeric:.6e} vs analytic {analytic:.6e}"
            );
        }
        worst = worst.max(tensor_worst);
        let shown = if tensor_worst == 0.0 {
            "zero/zero".to_string()
        } else {
            format!("{tensor_worst:.3e}")
        };
        println!("{name:<28} {:>8} {shown:>12}", picks.len());
    }
    println!("\n{checked} coordinates checked, {zeros} exact zeros, worst relative error {worst:.3e} (tolerance {TOL:.0e})");
    Ok(())
}
