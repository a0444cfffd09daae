//! 2D convolution, its two adjoints, and the transpose convolution built
//! from them.
//!
//! Everything reduces to one im2col/col2im pair plus a matrix product, so
//! the three hot paths all run through the tuned gemm kernels:
//!
//! * forward:          y = W · col(x)
//! * backward data:    dx = col⁻¹(Wᵀ · dy)
//! * backward filter:  dW = dy · col(x)ᵀ
//!
//! A transpose convolution with stride 2, padding 1 and output padding 1
//! (so it exactly doubles H and W) is the data-adjoint of the matching
//! stride-2 convolution, which fixes all three of its passes:
//! forward = backward-data, backward-data = forward, and its filter
//! gradient is backward-filter with the two activation roles swapped.

use ndarray::{Array1, Array2, Array4, ArrayView3, ArrayViewMut3, Axis};
use rand::Rng;

use super::{fan_in_uniform, Elem, ParamRef};
use crate::{Error, Result};

/// Output extent of a convolution along one axis.
fn conv_extent(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Shape(format!(
            "input extent {input} with pad {pad} smaller than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Valid output-column range `[lo, hi)` for kernel column `v`: the columns
/// whose sampled input column `ox * stride + v - pad` lands inside `[0, w)`.
fn ox_bounds(wo: usize, stride: usize, v: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = if v >= pad {
        0
    } else {
        (pad - v).div_ceil(stride)
    };
    let hi_inclusive = w as isize - 1 + pad as isize - v as isize;
    let hi = if hi_inclusive < 0 {
        0
    } else {
        hi_inclusive as usize / stride + 1
    };
    (lo.min(wo), hi.min(wo))
}

/// Unrolls one sample (C, H, W) into the (C·k·k, ho·wo) patch matrix for a
/// k×k kernel. Padding positions stay zero.
fn im2col<T: Elem>(
    x: &ArrayView3<'_, T>,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<T> {
    let (c, h, w) = x.dim();
    let xs = x.as_slice().expect("im2col input must be contiguous");
    let mut col = Array2::<T>::zeros((c * k * k, ho * wo));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c {
        let xbase = ci * h * w;
        for u in 0..k {
            for v in 0..k {
                let row = ((ci * k + u) * k + v) * (ho * wo);
                let (ox0, ox1) = ox_bounds(wo, stride, v, pad, w);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * stride + u) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = xbase + iy as usize * w;
                    let dst = &mut cs[row + oy * wo + ox0..row + oy * wo + ox1];
                    let ix0 = ox0 * stride + v - pad;
                    if stride == 1 {
                        dst.copy_from_slice(&xs[src + ix0..src + ix0 + (ox1 - ox0)]);
                    } else {
                        let mut ix = ix0;
                        for d in dst {
                            *d = xs[src + ix];
                            ix += stride;
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-adds a patch matrix back onto the input
/// grid of one sample.
fn col2im_acc<T: Elem>(
    col: &Array2<T>,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut ArrayViewMut3<'_, T>,
) {
    let (c, h, w) = out.dim();
    let (_, cols) = col.dim();
    let wo = (w + 2 * pad - k) / stride + 1;
    let ho = cols / wo;
    let cs = col.as_slice().expect("col2im input must be contiguous");
    let os = out.as_slice_mut().expect("col2im output must be contiguous");
    for ci in 0..c {
        let obase = ci * h * w;
        for u in 0..k {
            for v in 0..k {
                let row = ((ci * k + u) * k + v) * cols;
                let (ox0, ox1) = ox_bounds(wo, stride, v, pad, w);
                if ox0 >= ox1 {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * stride + u) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = obase + iy as usize * w;
                    let src = &cs[row + oy * wo + ox0..row + oy * wo + ox1];
                    let ix0 = ox0 * stride + v - pad;
                    if stride == 1 {
                        let d = &mut os[dst + ix0..dst + ix0 + (ox1 - ox0)];
                        for (o, s) in d.iter_mut().zip(src) {
                            *o = *o + *s;
                        }
                    } else {
                        let mut ix = ix0;
                        for s in src {
                            os[dst + ix] = os[dst + ix] + *s;
                            ix += stride;
                        }
                    }
                }
            }
        }
    }
}

/// Plain convolution, NCHW, weights (Co, Ci, k, k), square kernel.
pub fn conv2d_forward<T: Elem>(
    x: &Array4<T>,
    w: &Array4<T>,
    bias: Option<&Array1<T>>,
    stride: usize,
    pad: usize,
) -> Result<Array4<T>> {
    let (n, ci, h, wid) = x.dim();
    let (co, ci2, k, k2) = w.dim();
    if ci != ci2 || k != k2 {
        return Err(Error::Shape(format!(
            "conv weight {:?} incompatible with input {:?}",
            w.dim(),
            x.dim()
        )));
    }
    if let Some(b) = bias {
        if b.len() != co {
            return Err(Error::Shape(format!(
                "bias length {} for {co} output channels",
                b.len()
            )));
        }
    }
    let ho = conv_extent(h, k, stride, pad)?;
    let wo = conv_extent(wid, k, stride, pad)?;
    let w2 = w
        .to_shape((co, ci * k * k))
        .expect("conv weight is contiguous");
    let mut y = Array4::<T>::zeros((n, co, ho, wo));
    for ni in 0..n {
        let col = im2col(&x.index_axis(Axis(0), ni), k, stride, pad, ho, wo);
        let out2 = w2.dot(&col);
        let mut yn = y.index_axis_mut(Axis(0), ni);
        yn.assign(
            &out2
                .into_shape_with_order((co, ho, wo))
                .expect("gemm output is contiguous"),
        );
        if let Some(b) = bias {
            for (mut ch, bv) in yn.outer_iter_mut().zip(b.iter()) {
                let bv = *bv;
                ch.mapv_inplace(|t| t + bv);
            }
        }
    }
    Ok(y)
}

/// Gradient of a convolution with respect to its input: scatters `dy`
/// through the kernel onto an input of spatial size `out_hw`.
pub fn conv2d_backward_data<T: Elem>(
    dy: &Array4<T>,
    w: &Array4<T>,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Result<Array4<T>> {
    let (n, co, ho, wo) = dy.dim();
    let (co2, ci, k, _) = w.dim();
    if co != co2 {
        return Err(Error::Shape(format!(
            "output grad channels {co} do not match weight {:?}",
            w.dim()
        )));
    }
    let (h, wid) = out_hw;
    if conv_extent(h, k, stride, pad)? != ho || conv_extent(wid, k, stride, pad)? != wo {
        return Err(Error::Shape(format!(
            "output grad {ho}x{wo} inconsistent with input {h}x{wid}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    let w2 = w
        .to_shape((co, ci * k * k))
        .expect("conv weight is contiguous");
    let w2t = w2.t();
    let mut dx = Array4::<T>::zeros((n, ci, h, wid));
    for ni in 0..n {
        let dyn2 = dy
            .index_axis(Axis(0), ni)
            .into_shape_with_order((co, ho * wo))
            .expect("grad view is contiguous");
        let dcol = w2t.dot(&dyn2);
        col2im_acc(&dcol, k, stride, pad, &mut dx.index_axis_mut(Axis(0), ni));
    }
    Ok(dx)
}

/// Gradient of a convolution with respect to its weights and bias,
/// accumulated into `dw` / `db`.
pub fn conv2d_backward_filter<T: Elem>(
    x: &Array4<T>,
    dy: &Array4<T>,
    stride: usize,
    pad: usize,
    dw: &mut Array4<T>,
    mut db: Option<&mut Array1<T>>,
) -> Result<()> {
    let (n, ci, h, wid) = x.dim();
    let (n2, co, ho, wo) = dy.dim();
    let (co2, ci2, k, _) = dw.dim();
    if n != n2 || ci != ci2 || co != co2 {
        return Err(Error::Shape(format!(
            "filter grad shapes disagree: x {:?}, dy {:?}, dw {:?}",
            x.dim(),
            dy.dim(),
            dw.dim()
        )));
    }
    if conv_extent(h, k, stride, pad)? != ho || conv_extent(wid, k, stride, pad)? != wo {
        return Err(Error::Shape(format!(
            "output grad {ho}x{wo} inconsistent with input {h}x{wid}, kernel {k}, stride {stride}, pad {pad}"
        )));
    }
    let mut dw2 = dw
        .view_mut()
        .into_shape_with_order((co, ci * k * k))
        .expect("filter grad is contiguous");
    for ni in 0..n {
        let col = im2col(&x.index_axis(Axis(0), ni), k, stride, pad, ho, wo);
        let dyn2 = dy
            .index_axis(Axis(0), ni)
            .into_shape_with_order((co, ho * wo))
            .expect("grad view is contiguous");
        dw2.zip_mut_with(&dyn2.dot(&col.t()), |a, &b| *a = *a + b);
        if let Some(db) = db.as_deref_mut() {
            for (dbc, dyc) in db.iter_mut().zip(dyn2.outer_iter()) {
                *dbc = *dbc + dyc.sum();
            }
        }
    }
    Ok(())
}

/// 3×3 convolution layer, stride 1, padding 1 (shape preserving).
#[derive(Debug, Clone)]
pub struct Conv2d<T: Elem> {
    weight: Array4<T>,
    bias: Array1<T>,
    dweight: Array4<T>,
    dbias: Array1<T>,
    cache: Option<Array4<T>>,
}

impl<T: Elem> Conv2d<T> {
    pub const KERNEL: usize = 3;

    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let k = Self::KERNEL;
        let mut weight = Array4::zeros((out_channels, in_channels, k, k));
        fan_in_uniform(rng, in_channels * k * k, weight.as_slice_mut().unwrap());
        Conv2d {
            weight,
            bias: Array1::zeros(out_channels),
            dweight: Array4::zeros((out_channels, in_channels, k, k)),
            dbias: Array1::zeros(out_channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let y = conv2d_forward(x, &self.weight, Some(&self.bias), 1, 1)?;
        self.cache = train.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("conv backward without cached forward".into()))?;
        conv2d_backward_filter(&x, dy, 1, 1, &mut self.dweight, Some(&mut self.dbias))?;
        let (_, _, h, w) = x.dim();
        conv2d_backward_data(dy, &self.weight, 1, 1, (h, w))
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            dims: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.dweight.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            dims: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.dbias.as_slice_mut().unwrap(),
        });
    }

    pub fn zero_grad(&mut self) {
        self.dweight.fill(T::zero());
        self.dbias.fill(T::zero());
    }
}

/// Transpose convolution, 3×3 kernel, stride 2, padding 1, output padding
/// 1: doubles both spatial extents. Weights are stored (Cin, Cout, k, k),
/// the layout of the stride-2 convolution it is adjoint to.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Elem> {
    weight: Array4<T>,
    bias: Array1<T>,
    dweight: Array4<T>,
    dbias: Array1<T>,
    cache: Option<Array4<T>>,
}

impl<T: Elem> ConvTranspose2d<T> {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const PAD: usize = 1;

    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let k = Self::KERNEL;
        let mut weight = Array4::zeros((in_channels, out_channels, k, k));
        // Each output position receives at most ceil(k/s)^2 = 4 taps per
        // input channel; fan-in scaling uses the dense bound for symmetry
        // with Conv2d.
        fan_in_uniform(rng, in_channels * k * k, weight.as_slice_mut().unwrap());
        ConvTranspose2d {
            weight,
            bias: Array1::zeros(out_channels),
            dweight: Array4::zeros((in_channels, out_channels, k, k)),
            dbias: Array1::zeros(out_channels),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let (_, _, h, w) = x.dim();
        let mut y = conv2d_backward_data(x, &self.weight, Self::STRIDE, Self::PAD, (2 * h, 2 * w))?;
        for mut sample in y.outer_iter_mut() {
            for (mut ch, bv) in sample.outer_iter_mut().zip(self.bias.iter()) {
                let bv = *bv;
                ch.mapv_inplace(|t| t + bv);
            }
        }
        self.cache = train.then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("transpose conv backward without cached forward".into()))?;
        // Filter gradient: the adjoint pairing swaps the activation roles,
        // so dy acts as the convolution input and x as its output grad.
        conv2d_backward_filter(dy, &x, Self::STRIDE, Self::PAD, &mut self.dweight, None)?;
        for dyn_ in dy.outer_iter() {
            for (dbc, dyc) in self.dbias.iter_mut().zip(dyn_.outer_iter()) {
                *dbc = *dbc + dyc.sum();
            }
        }
        conv2d_forward(dy, &self.weight, None, Self::STRIDE, Self::PAD)
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            dims: self.weight.shape().to_vec(),
            value: self.weight.as_slice_mut().unwrap(),
            grad: self.dweight.as_slice_mut().unwrap(),
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            dims: self.bias.shape().to_vec(),
            value: self.bias.as_slice_mut().unwrap(),
            grad: self.dbias.as_slice_mut().unwrap(),
        });
    }

    pub fn zero_grad(&mut self) {
        self.dweight.fill(T::zero());
        self.dbias.fill(T::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn forward_matches_hand_computed_sums() {
        // All-ones 3x3 kernel over a 3x3 ramp, pad 1: center sees all nine
        // values, the corner sees its 2x2 neighborhood.
        let x = Array4::from_shape_vec(
            (1, 1, 3, 3),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let w = Array4::from_elem((1, 1, 3, 3), 1.0);
        let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.dim(), (1, 1, 3, 3));
        assert_eq!(y[[0, 0, 1, 1]], 45.0);
        assert_eq!(y[[0, 0, 0, 0]], 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(y[[0, 0, 2, 2]], 5.0 + 6.0 + 8.0 + 9.0);
    }

    #[test]
    fn forward_stride_two_halves_even_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand4(&mut rng, (2, 3, 8, 6));
        let w = rand4(&mut rng, (4, 3, 3, 3));
        let y = conv2d_forward(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.dim(), (2, 4, 4, 3));
    }

    #[test]
    fn transpose_center_tap_scatters_to_even_positions() {
        // One input pixel `a`, kernel with only the center weight set:
        // the doubled output holds `a` at (0, 0) and zeros elsewhere.
        let mut up: ConvTranspose2d<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            ConvTranspose2d::new(1, 1, &mut rng)
        };
        up.weight.fill(0.0);
        up.weight[[0, 0, 1, 1]] = 1.0;
        let x = Array4::from_elem((1, 1, 1, 1), 2.5);
        let y = up.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 2.5);
        assert_eq!(y[[0, 0, 0, 1]], 0.0);
        assert_eq!(y[[0, 0, 1, 0]], 0.0);
        assert_eq!(y[[0, 0, 1, 1]], 0.0);
    }

    #[test]
    fn transpose_doubles_spatial_extents() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut up: ConvTranspose2d<f64> = ConvTranspose2d::new(3, 2, &mut rng);
        let x = rand4(&mut rng, (2, 3, 5, 7));
        let y = up.forward(&x, false).unwrap();
        assert_eq!(y.dim(), (2, 2, 10, 14));
    }

    #[test]
    fn transpose_is_adjoint_of_stride_two_conv() {
        // <conv(a), b> == <a, transpose(b)> for zero bias: the defining
        // property, checked on random tensors.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rand4(&mut rng, (3, 2, 3, 3)); // conv layout: 2 channels in, 3 out
        let a = rand4(&mut rng, (1, 2, 8, 8));
        let b = rand4(&mut rng, (1, 3, 4, 4));
        let conv_a = conv2d_forward(&a, &w, None, 2, 1).unwrap();
        let lhs: f64 = conv_a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let tb = conv2d_backward_data(&b, &w, 2, 1, (8, 8)).unwrap();
        let rhs: f64 = a.iter().zip(tb.iter()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand4(&mut rng, (2, 3, 5, 4));
        let w = rand4(&mut rng, (4, 3, 3, 3));
        let b = Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5));
        // Fixed projection makes the scalar loss sensitive to every output.
        let r = rand4(&mut rng, (2, 4, 5, 4));
        let loss_of = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| {
            let y = conv2d_forward(x, w, Some(b), 1, 1).unwrap();
            y.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>()
        };

        let dx = conv2d_backward_data(&r, &w, 1, 1, (5, 4)).unwrap();
        let mut dw = Array4::zeros(w.dim());
        let mut db = Array1::zeros(4);
        conv2d_backward_filter(&x, &r, 1, 1, &mut dw, Some(&mut db)).unwrap();

        check_grads(
            x.as_slice().unwrap(),
            dx.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| {
                let xp = Array4::from_shape_vec(x.dim(), probe.to_vec()).unwrap();
                loss_of(&xp, &w, &b)
            },
            "conv dx",
        );
        check_grads(
            w.as_slice().unwrap(),
            dw.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| {
                let wp = Array4::from_shape_vec(w.dim(), probe.to_vec()).unwrap();
                loss_of(&x, &wp, &b)
            },
            "conv dw",
        );
        check_grads(
            b.as_slice().unwrap(),
            db.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| loss_of(&x, &w, &Array1::from_vec(probe.to_vec())),
            "conv db",
        );
    }

    #[test]
    fn transpose_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand4(&mut rng, (2, 3, 3, 4));
        let r = rand4(&mut rng, (2, 2, 6, 8));
        let mut layer: ConvTranspose2d<f64> = ConvTranspose2d::new(3, 2, &mut rng);
        let w0 = layer.weight.clone();
        let b0 = layer.bias.clone();

        layer.forward(&x, true).unwrap();
        let dx = layer.backward(&r).unwrap();
        let dw = layer.dweight.clone();
        let db = layer.dbias.clone();

        // Oracle: the layer's linear map through the free functions.
        let run = |xv: &Array4<f64>, wv: &Array4<f64>, bv: &Array1<f64>| {
            let mut y = conv2d_backward_data(xv, wv, 2, 1, (6, 8)).unwrap();
            for mut sample in y.outer_iter_mut() {
                for (mut ch, b) in sample.outer_iter_mut().zip(bv.iter()) {
                    let b = *b;
                    ch.mapv_inplace(|t| t + b);
                }
            }
            y.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>()
        };

        check_grads(
            x.as_slice().unwrap(),
            dx.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| {
                let xp = Array4::from_shape_vec(x.dim(), probe.to_vec()).unwrap();
                run(&xp, &w0, &b0)
            },
            "transpose dx",
        );
        check_grads(
            w0.as_slice().unwrap(),
            dw.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| {
                let wp = Array4::from_shape_vec(w0.dim(), probe.to_vec()).unwrap();
                run(&x, &wp, &b0)
            },
            "transpose dw",
        );
        check_grads(
            b0.as_slice().unwrap(),
            db.as_slice().unwrap(),
            1e-5,
            1e-3,
            |probe| run(&x, &w0, &Array1::from_vec(probe.to_vec())),
            "transpose db",
        );
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut conv: Conv2d<f32> = Conv2d::new(1, 1, &mut rng);
        let dy = Array4::zeros((1, 1, 2, 2));
        assert!(conv.backward(&dy).is_err());
        // Eval-mode forward does not arm the cache.
        let x = Array4::zeros((1, 1, 2, 2));
        conv.forward(&x, false).unwrap();
        assert!(conv.backward(&dy).is_err());
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Array4<f32> = rand4(&mut rng, (1, 3, 4, 4)).mapv(|v| v as f32);
        let w: Array4<f32> = Array4::zeros((2, 5, 3, 3));
        assert!(matches!(
            conv2d_forward(&x, &w, None, 1, 1),
            Err(Error::Shape(_))
        ));
        let dy: Array4<f32> = Array4::zeros((1, 2, 3, 3));
        assert!(matches!(
            conv2d_backward_data(&dy, &w, 2, 1, (4, 4)),
            Err(Error::Shape(_))
        ));
    }
}
