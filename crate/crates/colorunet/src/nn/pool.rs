//! 2×2 max pooling with stride 2. Requires even spatial extents; the
//! backward pass routes each gradient to the first maximum in scan order
//! (row-major within the window).

use ndarray::Array4;

use super::Elem;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MaxPool2 {
    /// Window-local offset (0..4, row-major) of the chosen element, plus
    /// the input shape, kept for the backward pass.
    cache: Option<(Array4<u8>, (usize, usize, usize, usize))>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { cache: None }
    }

    pub fn forward<T: Elem>(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let (n, c, h, w) = x.dim();
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "max pool needs even nonzero extents, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Array4::<T>::zeros((n, c, ho, wo));
        let mut arg = Array4::<u8>::zeros((n, c, ho, wo));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (iy, ix) = (oy * 2, ox * 2);
                        let mut best = x[[ni, ci, iy, ix]];
                        let mut best_k = 0u8;
                        for (k, (dy, dx)) in
                            [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate().skip(1)
                        {
                            let v = x[[ni, ci, iy + dy, ix + dx]];
                            if v > best {
                                best = v;
                                best_k = k as u8;
                            }
                        }
                        y[[ni, ci, oy, ox]] = best;
                        arg[[ni, ci, oy, ox]] = best_k;
                    }
                }
            }
        }
        self.cache = train.then_some((arg, (n, c, h, w)));
        Ok(y)
    }

    pub fn backward<T: Elem>(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let (arg, dims) = self
            .cache
            .take()
            .ok_or_else(|| Error::Shape("max pool backward without cached forward".into()))?;
        if dy.dim() != arg.dim() {
            return Err(Error::Shape(format!(
                "pool backward shape {:?} does not match forward {:?}",
                dy.dim(),
                arg.dim()
            )));
        }
        let mut dx = Array4::<T>::zeros(dims);
        for ((idx, &g), &k) in dy.indexed_iter().zip(arg.iter()) {
            let (ni, ci, oy, ox) = idx;
            let (dyy, dxx) = ((k / 2) as usize, (k % 2) as usize);
            dx[[ni, ci, oy * 2 + dyy, ox * 2 + dxx]] = g;
        }
        Ok(dx)
    }
}

impl Default for MaxPool2 {
    fn default() -> Self {
        Self::new()
    }
}
