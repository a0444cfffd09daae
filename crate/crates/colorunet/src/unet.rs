//! The colorization network: a three-level contracting path over the luma
//! plane, two expanding groups that concatenate skip tensors from the
//! matching resolution, and an output cell projecting to per-pixel class
//! logits.
//!
//! Cells are uniform: every convolution is 3×3 stride 1 pad 1 followed by
//! batchnorm and a rectifier, every downsample is 2×2 max pooling, every
//! upsample is a 3×3 stride-2 transpose convolution (also batchnorm and
//! rectified) that exactly doubles the spatial extents. The two skip
//! tensors are the pre-pool activations of the second and third down
//! groups; the first group's activations are not skipped. The final
//! projection carries no batchnorm and no rectifier, so logits are
//! unbounded.
//!
//! With base filters `f` and multipliers `[1, 2, 4]`, channels run
//! `in → f → 2f → 4f` down to the bottleneck at 1/8 resolution, then
//! `4f → 4f → 2f → f → classes` back up, with concatenations doubling the
//! width at the entry of each expanding group.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datapipe::Sample;
use crate::nn::checkpoint::{read_tensors, write_tensors, ArchEcho, TensorEntry};
use crate::nn::{
    weighted_masked_cross_entropy, Adam, BatchNorm2d, Conv2d, ConvTranspose2d, Elem, MaxPool2,
    ParamRef, Relu, StateRef,
};
use crate::{Error, Result};

/// Downsampling factor of the full contracting path.
pub const DOWNSCALE: usize = 8;
const NUM_DOWN_GROUPS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorUNetConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    /// Fixed at 3 by the skip wiring; kept in the config so checkpoints
    /// can refuse a mismatched reader.
    pub num_down_groups: usize,
    /// Channel multiplier of each down group, deepest last.
    pub group_multipliers: [usize; NUM_DOWN_GROUPS],
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ColorUNetConfig {
    fn default() -> Self {
        ColorUNetConfig {
            input_channels: 1,
            num_classes: 32,
            base_filters: 32,
            num_down_groups: NUM_DOWN_GROUPS,
            group_multipliers: [1, 2, 4],
            bn_momentum: crate::nn::batchnorm::DEFAULT_MOMENTUM,
            bn_eps: crate::nn::batchnorm::DEFAULT_EPS,
        }
    }
}

impl ColorUNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_down_groups != NUM_DOWN_GROUPS {
            return Err(Error::Config(format!(
                "the architecture is fixed at {NUM_DOWN_GROUPS} down groups, got {}",
                self.num_down_groups
            )));
        }
        if self.input_channels == 0 || self.num_classes == 0 || self.base_filters == 0 {
            return Err(Error::Config("zero-sized network dimension".into()));
        }
        if self.group_multipliers.iter().any(|&m| m == 0) {
            return Err(Error::Config("zero channel multiplier".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config(format!(
                "bad batchnorm constants: momentum {}, eps {}",
                self.bn_momentum, self.bn_eps
            )));
        }
        Ok(())
    }
}

/// conv → batchnorm → relu, the unit every group is built from.
#[derive(Debug, Clone)]
struct ConvBnRelu<T: Elem> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu,
}

impl<T: Elem> ConvBnRelu<T> {
    fn new(cin: usize, cout: usize, cfg: &ColorUNetConfig, rng: &mut ChaCha8Rng) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(cin, cout, rng),
            bn: BatchNorm2d::new(cout, cfg.bn_momentum, cfg.bn_eps),
            relu: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let y = self.conv.forward(x, train)?;
        let y = self.bn.forward(&y, train)?;
        Ok(self.relu.forward(&y, train))
    }

    fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let dy = self.relu.backward(dy)?;
        let dy = self.bn.backward(&dy)?;
        self.conv.backward(&dy)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.conv.params_mut(&format!("{prefix}.conv"), out);
        self.bn.params_mut(&format!("{prefix}.bn"), out);
    }

    fn states_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateRef<'a, T>>) {
        self.bn.states_mut(&format!("{prefix}.bn"), out);
    }

    fn zero_grad(&mut self) {
        self.conv.zero_grad();
        self.bn.zero_grad();
    }
}

/// [conv-bn-relu] ×2 then max pool. Forward also returns the pre-pool
/// activation, the tensor a skip connection taps.
#[derive(Debug, Clone)]
struct DownGroup<T: Elem> {
    a: ConvBnRelu<T>,
    b: ConvBnRelu<T>,
    pool: MaxPool2,
}

impl<T: Elem> DownGroup<T> {
    fn new(cin: usize, cout: usize, cfg: &ColorUNetConfig, rng: &mut ChaCha8Rng) -> Self {
        DownGroup {
            a: ConvBnRelu::new(cin, cout, cfg, rng),
            b: ConvBnRelu::new(cout, cout, cfg, rng),
            pool: MaxPool2::new(),
        }
    }

    fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<(Array4<T>, Array4<T>)> {
        let pre = self.b.forward(&self.a.forward(x, train)?, train)?;
        let pooled = self.pool.forward(&pre, train)?;
        Ok((pooled, pre))
    }

    /// `dskip` is the gradient arriving through the skip connection into
    /// the pre-pool activation, when this group feeds one.
    fn backward(&mut self, dpooled: &Array4<T>, dskip: Option<&Array4<T>>) -> Result<Array4<T>> {
        let mut dpre = self.pool.backward(dpooled)?;
        if let Some(ds) = dskip {
            if ds.dim() != dpre.dim() {
                return Err(Error::Shape(format!(
                    "skip gradient {:?} does not match pre-pool activation {:?}",
                    ds.dim(),
                    dpre.dim()
                )));
            }
            dpre.zip_mut_with(ds, |a, &b| *a = *a + b);
        }
        self.a.backward(&self.b.backward(&dpre)?)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.a.params_mut(&format!("{prefix}.a"), out);
        self.b.params_mut(&format!("{prefix}.b"), out);
    }

    fn states_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateRef<'a, T>>) {
        self.a.states_mut(&format!("{prefix}.a"), out);
        self.b.states_mut(&format!("{prefix}.b"), out);
    }

    fn zero_grad(&mut self) {
        self.a.zero_grad();
        self.b.zero_grad();
    }
}

/// Transpose-conv (bn, relu), concatenate the skip tensor on the channel
/// axis, then two conv cells.
#[derive(Debug, Clone)]
struct UpGroup<T: Elem> {
    up: ConvTranspose2d<T>,
    ubn: BatchNorm2d<T>,
    urelu: Relu,
    a: ConvBnRelu<T>,
    b: ConvBnRelu<T>,
    up_channels: usize,
}

impl<T: Elem> UpGroup<T> {
    fn new(
        cin: usize,
        up_out: usize,
        skip: usize,
        cout: usize,
        cfg: &ColorUNetConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        UpGroup {
            up: ConvTranspose2d::new(cin, up_out, rng),
            ubn: BatchNorm2d::new(up_out, cfg.bn_momentum, cfg.bn_eps),
            urelu: Relu::new(),
            a: ConvBnRelu::new(up_out + skip, cout, cfg, rng),
            b: ConvBnRelu::new(cout, cout, cfg, rng),
            up_channels: up_out,
        }
    }

    fn forward(&mut self, x: &Array4<T>, skip: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let t = self.up.forward(x, train)?;
        let t = self.ubn.forward(&t, train)?;
        let t = self.urelu.forward(&t, train);
        let (_, _, th, tw) = t.dim();
        let (_, _, sh, sw) = skip.dim();
        if (th, tw) != (sh, sw) {
            return Err(Error::Shape(format!(
                "skip tensor {sh}x{sw} does not match upsampled {th}x{tw}"
            )));
        }
        // Built by hand so the result is standard-layout; the convolution
        // kernels below require contiguous input.
        let (n, cu, h, w) = t.dim();
        let cs = skip.dim().1;
        let mut cat = Array4::zeros((n, cu + cs, h, w));
        cat.slice_mut(ndarray::s![.., ..cu, .., ..]).assign(&t);
        cat.slice_mut(ndarray::s![.., cu.., .., ..]).assign(skip);
        self.b.forward(&self.a.forward(&cat, train)?, train)
    }

    /// Returns gradients for the group input and for the skip tensor.
    fn backward(&mut self, dy: &Array4<T>) -> Result<(Array4<T>, Array4<T>)> {
        let dcat = self.a.backward(&self.b.backward(dy)?)?;
        let dup = dcat
            .slice_axis(Axis(1), (0..self.up_channels).into())
            .to_owned();
        let dskip = dcat
            .slice_axis(Axis(1), (self.up_channels..dcat.dim().1).into())
            .to_owned();
        let dt = self.urelu.backward(&dup)?;
        let dt = self.ubn.backward(&dt)?;
        Ok((self.up.backward(&dt)?, dskip))
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.up.params_mut(&format!("{prefix}.up"), out);
        self.ubn.params_mut(&format!("{prefix}.ubn"), out);
        self.a.params_mut(&format!("{prefix}.a"), out);
        self.b.params_mut(&format!("{prefix}.b"), out);
    }

    fn states_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateRef<'a, T>>) {
        self.ubn.states_mut(&format!("{prefix}.ubn"), out);
        self.a.states_mut(&format!("{prefix}.a"), out);
        self.b.states_mut(&format!("{prefix}.b"), out);
    }

    fn zero_grad(&mut self) {
        self.up.zero_grad();
        self.ubn.zero_grad();
        self.a.zero_grad();
        self.b.zero_grad();
    }
}

/// Final upsample back to input resolution and the linear projection to
/// class logits. No concatenation, no batchnorm or rectifier on the
/// projection output.
#[derive(Debug, Clone)]
struct OutputCell<T: Elem> {
    up: ConvTranspose2d<T>,
    ubn: BatchNorm2d<T>,
    urelu: Relu,
    proj: Conv2d<T>,
}

impl<T: Elem> OutputCell<T> {
    fn new(cin: usize, mid: usize, classes: usize, cfg: &ColorUNetConfig, rng: &mut ChaCha8Rng) -> Self {
        OutputCell {
            up: ConvTranspose2d::new(cin, mid, rng),
            ubn: BatchNorm2d::new(mid, cfg.bn_momentum, cfg.bn_eps),
            urelu: Relu::new(),
            proj: Conv2d::new(mid, classes, rng),
        }
    }

    fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let t = self.up.forward(x, train)?;
        let t = self.ubn.forward(&t, train)?;
        let t = self.urelu.forward(&t, train);
        self.proj.forward(&t, train)
    }

    fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let dt = self.proj.backward(dy)?;
        let dt = self.urelu.backward(&dt)?;
        let dt = self.ubn.backward(&dt)?;
        self.up.backward(&dt)
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.up.params_mut(&format!("{prefix}.up"), out);
        self.ubn.params_mut(&format!("{prefix}.ubn"), out);
        self.proj.params_mut(&format!("{prefix}.proj"), out);
    }

    fn states_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<StateRef<'a, T>>) {
        self.ubn.states_mut(&format!("{prefix}.ubn"), out);
    }

    fn zero_grad(&mut self) {
        self.up.zero_grad();
        self.ubn.zero_grad();
        self.proj.zero_grad();
    }
}

#[derive(Debug, Clone)]
pub struct ColorUNet<T: Elem> {
    config: ColorUNetConfig,
    down1: DownGroup<T>,
    down2: DownGroup<T>,
    down3: DownGroup<T>,
    up1: UpGroup<T>,
    up2: UpGroup<T>,
    out: OutputCell<T>,
}

impl<T: Elem> ColorUNet<T> {
    /// Builds the network with fan-in-scaled uniform weights drawn from
    /// `rng` in a fixed construction order, so one seed pins every
    /// parameter.
    pub fn new(config: ColorUNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let f = config.base_filters;
        let [m1, m2, m3] = config.group_multipliers;
        let (c1, c2, c3) = (f * m1, f * m2, f * m3);
        Ok(ColorUNet {
            down1: DownGroup::new(config.input_channels, c1, &config, rng),
            down2: DownGroup::new(c1, c2, &config, rng),
            down3: DownGroup::new(c2, c3, &config, rng),
            up1: UpGroup::new(c3, c3, c3, c3, &config, rng),
            up2: UpGroup::new(c3, c2, c2, c2, &config, rng),
            out: OutputCell::new(c2, c1, config.num_classes, &config, rng),
            config,
        })
    }

    pub fn config(&self) -> &ColorUNetConfig {
        &self.config
    }

    /// Spatial constraint on inputs: both extents divisible by the full
    /// downsampling factor and large enough to survive three pools.
    pub fn validate_input_size(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % DOWNSCALE != 0 || w % DOWNSCALE != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} must have both extents positive multiples of {DOWNSCALE}"
            )));
        }
        Ok(())
    }

    /// Runs the network. `train` keeps the caches `backward` consumes and
    /// uses batch statistics in the norms; eval mode uses running
    /// statistics and caches nothing.
    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Result<Array4<T>> {
        let (_, c, h, w) = x.dim();
        if c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.config.input_channels
            )));
        }
        self.validate_input_size(h, w)?;
        let (p1, _) = self.down1.forward(x, train)?;
        let (p2, skip2) = self.down2.forward(&p1, train)?;
        let (p3, skip3) = self.down3.forward(&p2, train)?;
        let y = self.up1.forward(&p3, &skip3, train)?;
        let y = self.up2.forward(&y, &skip2, train)?;
        self.out.forward(&y, train)
    }

    /// Backpropagates `dlogits`, accumulating parameter gradients. The
    /// gradient with respect to the input is discarded.
    pub fn backward(&mut self, dlogits: &Array4<T>) -> Result<()> {
        let dy = self.out.backward(dlogits)?;
        let (dy, dskip2) = self.up2.backward(&dy)?;
        let (dp3, dskip3) = self.up1.backward(&dy)?;
        let dp2 = self.down3.backward(&dp3, Some(&dskip3))?;
        let dp1 = self.down2.backward(&dp2, Some(&dskip2))?;
        self.down1.backward(&dp1, None)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.down1.zero_grad();
        self.down2.zero_grad();
        self.down3.zero_grad();
        self.up1.zero_grad();
        self.up2.zero_grad();
        self.out.zero_grad();
    }

    /// Every trainable tensor with its gradient, in a fixed order under
    /// stable names.
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::with_capacity(64);
        self.down1.params_mut("down1", &mut out);
        self.down2.params_mut("down2", &mut out);
        self.down3.params_mut("down3", &mut out);
        self.up1.params_mut("up1", &mut out);
        self.up2.params_mut("up2", &mut out);
        self.out.params_mut("out", &mut out);
        out
    }

    /// Batchnorm running statistics, checkpointed alongside parameters.
    pub fn states_mut(&mut self) -> Vec<StateRef<'_, T>> {
        let mut out = Vec::with_capacity(32);
        self.down1.states_mut("down1", &mut out);
        self.down2.states_mut("down2", &mut out);
        self.down3.states_mut("down3", &mut out);
        self.up1.states_mut("up1", &mut out);
        self.up2.states_mut("up2", &mut out);
        self.out.states_mut("out", &mut out);
        out
    }

    fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        vec![
            &mut self.down1.a.bn,
            &mut self.down1.b.bn,
            &mut self.down2.a.bn,
            &mut self.down2.b.bn,
            &mut self.down3.a.bn,
            &mut self.down3.b.bn,
            &mut self.up1.ubn,
            &mut self.up1.a.bn,
            &mut self.up1.b.bn,
            &mut self.up2.ubn,
            &mut self.up2.a.bn,
            &mut self.up2.b.bn,
            &mut self.out.ubn,
        ]
    }

    /// True once a training batch has established batchnorm statistics.
    pub fn trained(&mut self) -> bool {
        self.batchnorms_mut().iter().all(|bn| bn.initialized())
    }

    fn arch_echo(&mut self) -> ArchEcho {
        ArchEcho {
            base_filters: self.config.base_filters as u32,
            input_channels: self.config.input_channels as u32,
            num_classes: self.config.num_classes as u32,
            group_multipliers: self.config.group_multipliers.iter().map(|&m| m as u32).collect(),
            trained: self.trained(),
        }
    }

    /// Writes parameters and running statistics as an f32 checkpoint.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let arch = self.arch_echo();
        let mut tensors = Vec::new();
        for p in self.params_mut() {
            tensors.push(TensorEntry {
                name: p.name,
                dims: p.dims,
                data: p.value.iter().map(|v| v.to_wide() as f32).collect(),
            });
        }
        for s in self.states_mut() {
            tensors.push(TensorEntry {
                name: s.name,
                dims: s.dims,
                data: s.value.iter().map(|v| v.to_wide() as f32).collect(),
            });
        }
        write_tensors(path, &arch, &tensors)
    }

    /// Rebuilds a network from a checkpoint. The architecture comes from
    /// the file; batchnorm constants are the crate defaults, which only
    /// matter if training continues.
    pub fn load(path: &Path) -> Result<Self> {
        let (arch, tensors) = read_tensors(path)?;
        if arch.group_multipliers.len() != NUM_DOWN_GROUPS {
            return Err(Error::Format(format!(
                "{}: checkpoint has {} down groups, this build supports {NUM_DOWN_GROUPS}",
                path.display(),
                arch.group_multipliers.len()
            )));
        }
        let mut mult = [0usize; NUM_DOWN_GROUPS];
        for (d, s) in mult.iter_mut().zip(&arch.group_multipliers) {
            *d = *s as usize;
        }
        let config = ColorUNetConfig {
            input_channels: arch.input_channels as usize,
            num_classes: arch.num_classes as usize,
            base_filters: arch.base_filters as usize,
            num_down_groups: NUM_DOWN_GROUPS,
            group_multipliers: mult,
            ..ColorUNetConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ColorUNet::new(config, &mut rng)?;
        net.fill_from_tensors(&tensors, path)?;
        for bn in net.batchnorms_mut() {
            bn.set_initialized(arch.trained);
        }
        Ok(net)
    }

    fn fill_from_tensors(&mut self, tensors: &[TensorEntry], path: &Path) -> Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, &TensorEntry> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut fill = |name: &str, dims: &[usize], value: &mut [T]| -> Result<()> {
            let t = by_name.remove(name).ok_or_else(|| {
                Error::Format(format!("{}: missing tensor {name}", path.display()))
            })?;
            if t.dims != dims {
                return Err(Error::Format(format!(
                    "{}: tensor {name} has dims {:?}, expected {:?}",
                    path.display(),
                    t.dims,
                    dims
                )));
            }
            for (dst, src) in value.iter_mut().zip(&t.data) {
                *dst = T::from_wide(*src as f64);
            }
            Ok(())
        };
        for p in self.params_mut() {
            fill(&p.name, &p.dims, p.value)?;
        }
        for s in self.states_mut() {
            fill(&s.name, &s.dims, s.value)?;
        }
        if let Some(name) = by_name.keys().next() {
            return Err(Error::Format(format!(
                "{}: unknown tensor {name}",
                path.display()
            )));
        }
        Ok(())
    }
}

/// Learning schedule and batching for [`train`]. Two phases with separate
/// learning rates; iteration counts of zero skip a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub phase1_steps: usize,
    pub phase1_lr: f64,
    pub phase2_steps: usize,
    pub phase2_lr: f64,
    /// Validation cadence in iterations; 0 disables validation.
    pub val_every: usize,
    /// Periodic checkpoint cadence in iterations; 0 disables.
    pub checkpoint_every: usize,
    /// Seed for batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            phase1_steps: 600,
            phase1_lr: 1e-3,
            phase2_steps: 300,
            phase2_lr: 1e-4,
            val_every: 50,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iter: usize,
    pub phase: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_val_loss: Option<f64>,
}

/// Deterministic epoch sampler: indices reshuffle each pass, batches take
/// consecutive runs, a short tail at the end of a pass becomes a smaller
/// batch.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler {
            order: (0..n).collect(),
            pos: usize::MAX, // force a shuffle on first use
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        use rand::seq::SliceRandom;
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let slice = &self.order[self.pos..end];
        self.pos = end;
        slice
    }
}

/// Stacks samples into batch tensors.
fn assemble_batch(
    set: &[Sample],
    idx: &[usize],
) -> Result<(Array4<f32>, Array3<u32>, Array3<f32>)> {
    let (h, w) = set[idx[0]].luma.dim();
    let b = idx.len();
    let mut input = Array4::<f32>::zeros((b, 1, h, w));
    let mut labels = Array3::<u32>::zeros((b, h, w));
    let mut mask = Array3::<f32>::zeros((b, h, w));
    for (bi, &si) in idx.iter().enumerate() {
        let s = &set[si];
        if s.luma.dim() != (h, w) {
            return Err(Error::Shape(format!(
                "sample {} is {:?}, batch frame is {h}x{w}",
                s.source,
                s.luma.dim()
            )));
        }
        input
            .index_axis_mut(Axis(0), bi)
            .index_axis_mut(Axis(0), 0)
            .assign(&s.luma);
        labels.index_axis_mut(Axis(0), bi).assign(&s.labels);
        mask.index_axis_mut(Axis(0), bi).assign(&s.mask);
    }
    Ok((input, labels, mask))
}

/// Validation loss: weighted mean over the whole set, assembled from
/// per-batch sums so batch boundaries cannot skew it.
fn validation_loss(
    net: &mut ColorUNet<f32>,
    val: &[Sample],
    weights: &[f32],
    batch: usize,
) -> Result<f64> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for chunk in (0..val.len()).collect::<Vec<_>>().chunks(batch) {
        let (input, labels, mask) = assemble_batch(val, chunk)?;
        let logits = net.forward(&input, false)?;
        let (loss, _) = weighted_masked_cross_entropy(&logits, &labels, &mask, weights)?;
        // Reweigh by this batch's normalizer to get a set-wide mean.
        let mut d = 0.0f64;
        for (l, m) in labels.iter().zip(mask.iter()) {
            d += *m as f64 * weights[*l as usize] as f64;
        }
        num += loss * d;
        den += d;
    }
    if den <= 0.0 {
        return Err(Error::Data("validation set selects no pixels".into()));
    }
    Ok(num / den)
}

/// Runs the two-phase training loop. Emits one log row per iteration
/// through `on_row`; writes periodic checkpoints (and, on a numeric
/// failure, the last good state) into `checkpoint_dir` when given.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &mut ColorUNet<f32>,
    adam: &mut Adam<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    class_weights: &[f32],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_row: impl FnMut(&TrainLogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if class_weights.len() != net.config.num_classes {
        return Err(Error::Shape(format!(
            "{} class weights for {} classes",
            class_weights.len(),
            net.config.num_classes
        )));
    }
    let total = cfg.phase1_steps + cfg.phase2_steps;
    if total == 0 {
        return Err(Error::Config("zero training iterations".into()));
    }

    let mut sampler = BatchSampler::new(train_set.len(), cfg.batch_size, cfg.seed);
    let mut initial_loss = None;
    let mut final_loss = 0.0;
    let mut final_val = None;
    // On a numeric failure the parameters have not been stepped yet, so
    // they are the last good state; preserve them when a directory exists.
    let save_last_good = |net: &mut ColorUNet<f32>| -> String {
        match checkpoint_dir {
            Some(dir) => {
                let path = dir.join("last_good.cunw");
                // Best effort: the numeric error matters more than this write.
                let _ = net.save(&path);
                format!("; last good parameters in {}", path.display())
            }
            None => String::new(),
        }
    };

    for iter in 1..=total {
        let (phase, lr) = if iter <= cfg.phase1_steps {
            (1u8, cfg.phase1_lr)
        } else {
            (2u8, cfg.phase2_lr)
        };
        let idx = sampler.next_batch().to_vec();
        let (input, labels, mask) = assemble_batch(train_set, &idx)?;
        net.zero_grad();
        let logits = net.forward(&input, true)?;
        let (loss, dlogits) = weighted_masked_cross_entropy(&logits, &labels, &mask, class_weights)?;
        if !loss.is_finite() {
            let hint = save_last_good(net);
            return Err(Error::Numeric(format!(
                "non-finite training loss at iteration {iter}{hint}"
            )));
        }
        net.backward(&dlogits)?;
        if let Err(e) = adam.step(lr, &mut net.params_mut()) {
            if let Error::Numeric(msg) = e {
                let hint = save_last_good(net);
                return Err(Error::Numeric(format!("at iteration {iter}: {msg}{hint}")));
            }
            return Err(e);
        }

        initial_loss.get_or_insert(loss);
        final_loss = loss;

        let val_loss = if !val_set.is_empty()
            && cfg.val_every > 0
            && (iter % cfg.val_every == 0 || iter == total)
        {
            let v = validation_loss(net, val_set, class_weights, cfg.batch_size)?;
            final_val = Some(v);
            Some(v)
        } else {
            None
        };

        on_row(&TrainLogRow {
            iter,
            phase,
            lr,
            train_loss: loss,
            val_loss,
        })?;

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && iter != total {
                let path = dir.join(format!("checkpoint_{iter:06}.cunw"));
                save_training_state(net, adam, &path)?;
            }
        }
    }

    Ok(TrainOutcome {
        iterations: total,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
        final_loss,
        final_val_loss: final_val,
    })
}

/// Path of the optimizer sidecar next to a model checkpoint.
pub fn adam_sidecar_path(model: &Path) -> PathBuf {
    let mut os = model.as_os_str().to_os_string();
    os.push(".adam");
    PathBuf::from(os)
}

/// Saves the model plus the optimizer moments in a sidecar file sharing
/// the checkpoint container format.
pub fn save_training_state(
    net: &mut ColorUNet<f32>,
    adam: &Adam<f32>,
    model_path: &Path,
) -> Result<()> {
    net.save(model_path)?;
    let (t, m, v) = adam.snapshot();
    let mut tensors = Vec::new();
    tensors.push(TensorEntry {
        name: "t".into(),
        dims: vec![1],
        data: vec![t as f32],
    });
    let params = net.params_mut();
    if !m.is_empty() && m.len() != params.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, model has {}",
            m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let (ms, vs): (&[f32], &[f32]) = if m.is_empty() {
            (&[], &[])
        } else {
            (&m[i], &v[i])
        };
        let zero = vec![0.0f32; p.value.len()];
        tensors.push(TensorEntry {
            name: format!("m.{}", p.name),
            dims: p.dims.clone(),
            data: if ms.is_empty() { zero.clone() } else { ms.to_vec() },
        });
        tensors.push(TensorEntry {
            name: format!("v.{}", p.name),
            dims: p.dims.clone(),
            data: if vs.is_empty() { zero } else { vs.to_vec() },
        });
    }
    let arch = net.arch_echo();
    write_tensors(&adam_sidecar_path(model_path), &arch, &tensors)
}

/// Restores a model checkpoint together with its optimizer sidecar.
pub fn load_training_state(model_path: &Path) -> Result<(ColorUNet<f32>, Adam<f32>)> {
    let mut net = ColorUNet::<f32>::load(model_path)?;
    let sidecar = adam_sidecar_path(model_path);
    let (_, tensors) = read_tensors(&sidecar)?;
    use std::collections::HashMap;
    let by_name: HashMap<&str, &TensorEntry> =
        tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let t = by_name
        .get("t")
        .and_then(|e| e.data.first())
        .ok_or_else(|| Error::Format(format!("{}: missing step counter", sidecar.display())))?;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for p in net.params_mut() {
        let fetch = |prefix: &str| -> Result<Vec<f32>> {
            let name = format!("{prefix}.{}", p.name);
            let e = by_name.get(name.as_str()).ok_or_else(|| {
                Error::Format(format!("{}: missing tensor {name}", sidecar.display()))
            })?;
            if e.data.len() != p.value.len() {
                return Err(Error::Format(format!(
                    "{}: tensor {name} has {} values, expected {}",
                    sidecar.display(),
                    e.data.len(),
                    p.value.len()
                )));
            }
            Ok(e.data.clone())
        };
        m.push(fetch("m")?);
        v.push(fetch("v")?);
    }
    let mut adam = Adam::new(crate::nn::AdamConfig::default());
    adam.restore(*t as u64, m, v)?;
    Ok((net, adam))
}

/// Downsampled extents of the two skip tensors for an input of `h` by `w`.
pub fn skip_extents(h: usize, w: usize) -> [(usize, usize); 2] {
    [(h / 2, w / 2), (h / 4, w / 4)]
}
