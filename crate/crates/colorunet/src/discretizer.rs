//! Chrominance discretization: the (u, v) plane is covered by a square
//! lattice, cells are ranked by how often training pixels fall in them,
//! and the `n` most frequent cells become the classes of the
//! classification problem. Each kept cell is represented by the mean
//! chrominance of its own pixels, so decoding a class yields a color that
//! actually occurs in the corpus rather than a cell center.
//!
//! Class weights follow the rebalancing rule
//! `w(b) ∝ ((1 - lambda) * p(b) + lambda / n)^-1`, rescaled so that the
//! frequency-weighted mean of the weights is one. `lambda = 1` recovers
//! uniform weights; `lambda = 0` weights every class by inverse frequency.

use std::path::Path;

use ndarray::Array2;

use crate::colorspace::{YuvImage, U_MAX, V_MAX};
use crate::fmtio::{ChecksumReader, ChecksumWriter};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CDSC";
pub const VERSION: u32 = 1;

pub const DEFAULT_GRID_STEP: f64 = 0.1;
pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Square lattice over the reachable chroma rectangle. Cell ids run
/// row-major: `id = vi * cols + ui`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaGrid {
    step: f64,
    u_min: f64,
    v_min: f64,
    cols: usize,
    rows: usize,
}

impl ChromaGrid {
    pub fn new(step: f64) -> Result<Self> {
        if !step.is_finite() || step <= 0.0 || step > 2.0 * U_MAX.min(V_MAX) {
            return Err(Error::Config(format!("grid step {step} out of range")));
        }
        let cols = ((2.0 * U_MAX) / step).ceil() as usize;
        let rows = ((2.0 * V_MAX) / step).ceil() as usize;
        Ok(ChromaGrid {
            step,
            u_min: -U_MAX,
            v_min: -V_MAX,
            cols,
            rows,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn cells(&self) -> usize {
        self.cols * self.rows
    }

    /// Cell id of a chroma pair. Values at the top edge of the range fall
    /// into the last cell rather than a phantom one past it.
    pub fn cell_of(&self, u: f64, v: f64) -> usize {
        let ui = (((u - self.u_min) / self.step) as usize).min(self.cols - 1);
        let vi = (((v - self.v_min) / self.step) as usize).min(self.rows - 1);
        vi * self.cols + ui
    }

    /// Half-open bounds `(u0, u1, v0, v1)` of a cell.
    pub fn cell_bounds(&self, cell: usize) -> (f64, f64, f64, f64) {
        let ui = cell % self.cols;
        let vi = cell / self.cols;
        let u0 = self.u_min + ui as f64 * self.step;
        let v0 = self.v_min + vi as f64 * self.step;
        (u0, u0 + self.step, v0, v0 + self.step)
    }
}

/// One kept chroma class.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaBin {
    /// Lattice cell this class came from.
    pub cell: usize,
    /// Mean chrominance of the training pixels inside the cell.
    pub mean_u: f64,
    pub mean_v: f64,
    /// Fraction of all training pixels that fell in this cell, renormalized
    /// over the kept cells so the frequencies sum to one.
    pub frequency: f64,
    /// Rebalancing weight applied to this class in the training loss.
    pub weight: f64,
}

/// Fitted discretizer: the kept bins plus the lattice they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDiscretizer {
    grid: ChromaGrid,
    lambda: f64,
    bins: Vec<ChromaBin>,
}

/// Streaming accumulator so corpora never need to be resident at once:
/// feed images one by one, then `fit`.
pub struct DiscretizerBuilder {
    grid: ChromaGrid,
    /// Per-cell (pixel count, sum u, sum v).
    cells: Vec<(u64, f64, f64)>,
    total: u64,
}

impl DiscretizerBuilder {
    pub fn new(grid_step: f64) -> Result<Self> {
        let grid = ChromaGrid::new(grid_step)?;
        let cells = vec![(0, 0.0, 0.0); grid.cells()];
        Ok(DiscretizerBuilder {
            grid,
            cells,
            total: 0,
        })
    }

    /// Accumulates every pixel of the image.
    pub fn observe(&mut self, img: &YuvImage) {
        for (&u, &v) in img.u().iter().zip(img.v().iter()) {
            let cell = self.grid.cell_of(u as f64, v as f64);
            let entry = &mut self.cells[cell];
            entry.0 += 1;
            entry.1 += u as f64;
            entry.2 += v as f64;
        }
        self.total += (img.width() * img.height()) as u64;
    }

    /// Ranks cells by count and keeps the `n` most frequent. Ties rank the
    /// lower cell id first so fitting is order-independent.
    pub fn fit(self, n: usize, lambda: f64) -> Result<ColorDiscretizer> {
        if n == 0 {
            return Err(Error::Config("cannot fit a discretizer with n = 0".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
        }
        if self.total == 0 {
            return Err(Error::Data("no pixels observed before fitting".into()));
        }
        let occupied = self.cells.iter().filter(|c| c.0 > 0).count();
        if occupied < n {
            return Err(Error::Data(format!(
                "corpus occupies {occupied} grid cells, fewer than the {n} requested bins"
            )));
        }

        let mut ranked: Vec<usize> = (0..self.cells.len())
            .filter(|&i| self.cells[i].0 > 0)
            .collect();
        ranked.sort_by(|&a, &b| {
            self.cells[b]
                .0
                .cmp(&self.cells[a].0)
                .then_with(|| a.cmp(&b))
        });
        ranked.truncate(n);
        // Stable presentation order: by cell id.
        ranked.sort_unstable();

        let kept_total: u64 = ranked.iter().map(|&i| self.cells[i].0).sum();
        let mut bins: Vec<ChromaBin> = ranked
            .iter()
            .map(|&i| {
                let (count, su, sv) = self.cells[i];
                ChromaBin {
                    cell: i,
                    mean_u: su / count as f64,
                    mean_v: sv / count as f64,
                    frequency: count as f64 / kept_total as f64,
                    weight: 0.0,
                }
            })
            .collect();

        let freq: Vec<f64> = bins.iter().map(|b| b.frequency).collect();
        let weights = compute_weights(&freq, lambda)?;
        for (bin, w) in bins.iter_mut().zip(weights) {
            bin.weight = w;
        }

        Ok(ColorDiscretizer {
            grid: self.grid,
            lambda,
            bins,
        })
    }
}

/// Rebalancing weights for a frequency vector summing to one. Each weight
/// is `((1 - lambda) * p + lambda / n)^-1`, rescaled so the expectation of
/// the weight under `p` equals one.
pub fn compute_weights(freq: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = freq.len();
    if n == 0 {
        return Err(Error::Data("empty frequency vector".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let sum: f64 = freq.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("frequencies sum to {sum}, not 1")));
    }
    let mut raw = Vec::with_capacity(n);
    for &p in freq {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Data(format!("frequency {p} outside [0, 1]")));
        }
        let mix = (1.0 - lambda) * p + lambda / n as f64;
        if mix <= 0.0 {
            return Err(Error::Data(format!(
                "class with frequency {p} has no mass under lambda {lambda}"
            )));
        }
        raw.push(1.0 / mix);
    }
    // Scale so sum_b p(b) w(b) = 1.
    let z: f64 = freq.iter().zip(&raw).map(|(p, w)| p * w).sum();
    Ok(raw.into_iter().map(|w| w / z).collect())
}

impl ColorDiscretizer {
    /// Fits from a slice of images in one call; the builder form streams.
    pub fn fit<'a, I>(images: I, grid_step: f64, n: usize, lambda: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a YuvImage>,
    {
        let mut builder = DiscretizerBuilder::new(grid_step)?;
        for img in images {
            builder.observe(img);
        }
        builder.fit(n, lambda)
    }

    pub fn n(&self) -> usize {
        self.bins.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &ChromaGrid {
        &self.grid
    }

    pub fn bins(&self) -> &[ChromaBin] {
        &self.bins
    }

    pub fn bin_mean(&self, label: usize) -> (f64, f64) {
        let b = &self.bins[label];
        (b.mean_u, b.mean_v)
    }

    /// Per-class loss weights as f32, indexed by label.
    pub fn weights_f32(&self) -> Vec<f32> {
        self.bins.iter().map(|b| b.weight as f32).collect()
    }

    /// Nearest kept bin (Euclidean distance to the bin mean) for one
    /// chroma pair. Ties break toward the lowest label.
    pub fn nearest_bin(&self, u: f64, v: f64) -> u32 {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, b) in self.bins.iter().enumerate() {
            let d = (u - b.mean_u).powi(2) + (v - b.mean_v).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as u32
    }

    /// Label map of an image: every pixel's chroma is assigned to the
    /// nearest kept bin.
    pub fn encode(&self, img: &YuvImage) -> Array2<u32> {
        let (h, w) = img.y().dim();
        Array2::from_shape_fn((h, w), |(row, col)| {
            self.nearest_bin(img.u()[[row, col]] as f64, img.v()[[row, col]] as f64)
        })
    }

    /// Reconstructs a YUV image from a label map and a luma plane by
    /// substituting each label's bin mean for the pixel's chroma.
    pub fn decode_labels(&self, labels: &Array2<u32>, y: &Array2<f32>) -> Result<YuvImage> {
        if labels.dim() != y.dim() {
            return Err(Error::Shape(format!(
                "label map {:?} does not match luma plane {:?}",
                labels.dim(),
                y.dim()
            )));
        }
        let n = self.n() as u32;
        let mut u = Array2::zeros(labels.dim());
        let mut v = Array2::zeros(labels.dim());
        for ((idx, &label), (uv, vv)) in labels
            .indexed_iter()
            .zip(u.iter_mut().zip(v.iter_mut()))
        {
            if label >= n {
                return Err(Error::Data(format!(
                    "label {label} at {idx:?} out of range for {n} bins"
                )));
            }
            let (mu, mv) = self.bin_mean(label as usize);
            *uv = mu as f32;
            *vv = mv as f32;
        }
        YuvImage::new(y.clone(), u, v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ChecksumWriter::create(path)?;
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.bins.len() as u32)?;
        w.f64(self.lambda)?;
        w.f64(self.grid.step)?;
        w.f64(self.grid.u_min)?;
        w.f64(self.grid.v_min)?;
        w.u32(self.grid.cols as u32)?;
        w.u32(self.grid.rows as u32)?;
        for b in &self.bins {
            w.u64(b.cell as u64)?;
            w.f64(b.mean_u)?;
            w.f64(b.mean_v)?;
            w.f64(b.frequency)?;
            w.f64(b.weight)?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = ChecksumReader::open(path)?;
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported discretizer version {version}",
                path.display()
            )));
        }
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(Error::Format(format!(
                "{}: discretizer declares zero bins",
                path.display()
            )));
        }
        let lambda = r.f64()?;
        let step = r.f64()?;
        let u_min = r.f64()?;
        let v_min = r.f64()?;
        let cols = r.u32()? as usize;
        let rows = r.u32()? as usize;
        if cols == 0 || rows == 0 {
            return Err(Error::Format(format!(
                "{}: degenerate grid {cols}x{rows}",
                path.display()
            )));
        }
        let grid = ChromaGrid {
            step,
            u_min,
            v_min,
            cols,
            rows,
        };
        let mut bins = Vec::with_capacity(n);
        for _ in 0..n {
            let cell = r.u64()? as usize;
            if cell >= grid.cells() {
                return Err(Error::Format(format!(
                    "{}: bin cell {cell} outside grid",
                    path.display()
                )));
            }
            bins.push(ChromaBin {
                cell,
                mean_u: r.f64()?,
                mean_v: r.f64()?,
                frequency: r.f64()?,
                weight: r.f64()?,
            });
        }
        r.finish()?;
        Ok(ColorDiscretizer { grid, lambda, bins })
    }
}
