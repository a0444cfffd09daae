//! Per-pixel weighted, masked cross-entropy over channel logits, and the
//! channel softmax shared with decoding.
//!
//! Loss and normalizer accumulate in f64 regardless of the tensor type:
//! summing hundreds of thousands of per-pixel terms in f32 loses enough
//! precision to matter at the tolerances this crate promises.

use ndarray::{Array3, Array4};

use super::Elem;
use crate::{Error, Result};

/// Softmax across the channel axis of an NCHW tensor, with per-pixel max
/// subtraction.
pub fn softmax_channels<T: Elem>(logits: &Array4<T>) -> Array4<T> {
    let (n, c, h, w) = logits.dim();
    let mut out = Array4::<T>::zeros((n, c, h, w));
    let plane = h * w;
    let ls = logits.as_slice().expect("logits are contiguous");
    let os = out.as_slice_mut().unwrap();
    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(ls[base + ci * plane + p].to_wide());
            }
            let mut sum = 0.0f64;
            for ci in 0..c {
                let e = (ls[base + ci * plane + p].to_wide() - maxv).exp();
                os[base + ci * plane + p] = T::from_wide(e);
                sum += e;
            }
            for ci in 0..c {
                let v = os[base + ci * plane + p].to_wide() / sum;
                os[base + ci * plane + p] = T::from_wide(v);
            }
        }
    }
    out
}

/// Rebalanced masked cross-entropy.
///
/// `loss = sum_i m_i w(l_i) (lse(z_i) - z_i[l_i]) / sum_i m_i w(l_i)`
///
/// Returns the scalar loss and `d loss / d logits`. The mask is
/// real-valued and nonnegative; a mask selecting nothing is an error
/// rather than 0/0.
pub fn weighted_masked_cross_entropy<T: Elem>(
    logits: &Array4<T>,
    labels: &Array3<u32>,
    mask: &Array3<T>,
    class_weights: &[T],
) -> Result<(f64, Array4<T>)> {
    let (n, c, h, w) = logits.dim();
    if labels.dim() != (n, h, w) || mask.dim() != (n, h, w) {
        return Err(Error::Shape(format!(
            "loss shapes disagree: logits {:?}, labels {:?}, mask {:?}",
            logits.dim(),
            labels.dim(),
            mask.dim()
        )));
    }
    if class_weights.len() != c {
        return Err(Error::Shape(format!(
            "{} class weights for {c} channels",
            class_weights.len()
        )));
    }

    let plane = h * w;
    let ls = logits.as_slice().expect("logits are contiguous");
    let lab = labels.as_slice().expect("labels are contiguous");
    let ms = mask.as_slice().expect("mask is contiguous");

    // First pass: the normalizer.
    let mut denom = 0.0f64;
    for i in 0..n * plane {
        let l = lab[i] as usize;
        if l >= c {
            return Err(Error::Data(format!("label {l} out of range for {c} classes")));
        }
        let m = ms[i].to_wide();
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Data(format!("mask value {m} is not a nonnegative weight")));
        }
        denom += m * class_weights[l].to_wide();
    }
    if denom <= 0.0 {
        return Err(Error::Data("mask and weights select no pixels".into()));
    }

    let mut grad = Array4::<T>::zeros((n, c, h, w));
    let gs = grad.as_slice_mut().unwrap();
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; c];
    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let flat = ni * plane + p;
            let l = lab[flat] as usize;
            let coef = ms[flat].to_wide() * class_weights[l].to_wide() / denom;
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(ls[base + ci * plane + p].to_wide());
            }
            let mut sum = 0.0f64;
            for ci in 0..c {
                let e = (ls[base + ci * plane + p].to_wide() - maxv).exp();
                probs[ci] = e;
                sum += e;
            }
            let lse = maxv + sum.ln();
            total += coef * (lse - ls[base + l * plane + p].to_wide());
            if coef != 0.0 {
                for ci in 0..c {
                    let soft = probs[ci] / sum;
                    let delta = if ci == l { 1.0 } else { 0.0 };
                    gs[base + ci * plane + p] = T::from_wide(coef * (soft - delta));
                }
            }
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use ndarray::{Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_rows_are_distributions_and_order_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let logits: Array4<f32> =
            Array4::from_shape_fn((2, 5, 3, 4), |_| rng.random_range(-4.0..4.0));
        let p = softmax_channels(&logits);
        for ni in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    let mut sum = 0.0f64;
                    for c in 0..5 {
                        let v = p[[ni, c, y, x]];
                        assert!(v > 0.0 && v < 1.0);
                        sum += v as f64;
                    }
                    assert!((sum - 1.0).abs() < 1e-6);
                    // argmax of probabilities equals argmax of logits
                    let am_l = (0..5)
                        .max_by(|&a, &b| logits[[ni, a, y, x]].total_cmp(&logits[[ni, b, y, x]]))
                        .unwrap();
                    let am_p = (0..5)
                        .max_by(|&a, &b| p[[ni, a, y, x]].total_cmp(&p[[ni, b, y, x]]))
                        .unwrap();
                    assert_eq!(am_l, am_p);
                }
            }
        }
    }

    #[test]
    fn uniform_logits_cost_ln_of_class_count() {
        // All-equal logits make every pixel cost exactly ln(c), and the
        // weighted mean of a constant is that constant.
        let logits: Array4<f32> = Array4::from_elem((2, 32, 8, 8), 0.7);
        let labels: Array3<u32> = Array3::from_shape_fn((2, 8, 8), |(n, y, x)| {
            ((n + 3 * y + 5 * x) % 32) as u32
        });
        let mask: Array3<f32> = Array3::from_shape_fn((2, 8, 8), |(_, y, x)| {
            if (y + x) % 3 == 0 {
                0.0
            } else {
                1.0
            }
        });
        let weights: Vec<f32> = (0..32).map(|i| 0.5 + (i as f32) * 0.1).collect();
        let (loss, _) = weighted_masked_cross_entropy(&logits, &labels, &mask, &weights).unwrap();
        assert!(
            (loss - (32.0f64).ln()).abs() < 1e-6,
            "loss {loss} vs ln 32 {}",
            (32.0f64).ln()
        );
    }

    #[test]
    fn masked_pixels_contribute_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut logits: Array4<f64> =
            Array4::from_shape_fn((1, 4, 2, 2), |_| rng.random_range(-2.0..2.0));
        let labels: Array3<u32> = Array3::from_shape_fn((1, 2, 2), |_| rng.random_range(0..4));
        let mut mask: Array3<f64> = Array3::from_elem((1, 2, 2), 1.0);
        mask[[0, 1, 1]] = 0.0;
        let weights = [1.0, 2.0, 0.5, 1.5];
        let (loss, grad) =
            weighted_masked_cross_entropy(&logits, &labels, &mask, &weights).unwrap();
        // Perturbing the masked pixel's logits changes nothing.
        for c in 0..4 {
            logits[[0, c, 1, 1]] += 10.0;
            assert_eq!(grad[[0, c, 1, 1]], 0.0);
        }
        let (loss2, _) =
            weighted_masked_cross_entropy(&logits, &labels, &mask, &weights).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let logits: Array4<f64> =
            Array4::from_shape_fn((2, 3, 3, 2), |_| rng.random_range(-2.0..2.0));
        let labels: Array3<u32> = Array3::from_shape_fn((2, 3, 2), |_| rng.random_range(0..3));
        let mask: Array3<f64> =
            Array3::from_shape_fn((2, 3, 2), |_| if rng.random_bool(0.7) { 1.0 } else { 0.0 });
        let weights = [0.5, 1.0, 2.5];
        let (_, grad) = weighted_masked_cross_entropy(&logits, &labels, &mask, &weights).unwrap();
        check_grads(
            logits.as_slice().unwrap(),
            grad.as_slice().unwrap(),
            1e-6,
            1e-3,
            |probe| {
                let lp = Array4::from_shape_vec(logits.dim(), probe.to_vec()).unwrap();
                weighted_masked_cross_entropy(&lp, &labels, &mask, &weights)
                    .unwrap()
                    .0
            },
            "cross entropy dlogits",
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let logits: Array4<f32> = Array4::zeros((1, 3, 2, 2));
        let labels: Array3<u32> = Array3::zeros((1, 2, 2));
        let zero_mask: Array3<f32> = Array3::zeros((1, 2, 2));
        let w = [1.0f32, 1.0, 1.0];
        assert!(matches!(
            weighted_masked_cross_entropy(&logits, &labels, &zero_mask, &w),
            Err(Error::Data(_))
        ));
        let mask = Array3::from_elem((1, 2, 2), 1.0f32);
        let bad_labels: Array3<u32> = Array3::from_elem((1, 2, 2), 7);
        assert!(matches!(
            weighted_masked_cross_entropy(&logits, &bad_labels, &mask, &w),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            weighted_masked_cross_entropy(&logits, &labels, &mask, &w[..2]),
            Err(Error::Shape(_))
        ));
    }
}
