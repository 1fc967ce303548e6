//! Two-convolution, two-fully-connected regression network with the
//! geometry feature concatenated into the first fully connected layer.
//!
//! Layers: conv 5x5 (20 maps) -> ReLU -> max-pool -> conv 5x5 (50 maps) ->
//! ReLU -> max-pool -> [flatten, features] -> fc 500 -> ReLU -> fc 2.
//! All parameters live in one flat vector; see [`ParamLayout`] for the
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::{gemm, Real};
use super::RegressorError;

pub const KERNEL: usize = 5;
pub const CONV1_MAPS: usize = 20;
pub const CONV2_MAPS: usize = 50;
pub const FC1_UNITS: usize = 500;
pub const OUTPUTS: usize = 2;

const KK: usize = KERNEL * KERNEL;

/// Input size, feature width and the padding/pooling choices that make the
/// deeper layers line up for smaller inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnArchitecture {
    pub in_width: usize,
    pub in_height: usize,
    pub feature_dim: usize,
    pub conv1_pad: usize,
    pub pool1: usize,
    pub conv2_pad: usize,
    pub pool2: usize,
}

fn conv_out(n: usize, pad: usize) -> usize {
    (n + 2 * pad).saturating_sub(KERNEL - 1)
}

impl CnnArchitecture {
    /// Picks padding and pooling strides for an input size. 60x36 uses the
    /// plain layout (valid convolutions, 2x2 pooling). Smaller inputs drop
    /// the first pooling and pad the first convolution until its maps reach
    /// 28x16 (or as close as two pixels of padding allow), and pad the
    /// second convolution when its input is smaller than 6 pixels.
    pub fn for_input(
        in_width: usize,
        in_height: usize,
        feature_dim: usize,
    ) -> Result<Self, RegressorError> {
        if in_width == 0 || in_height == 0 {
            return Err(RegressorError::InvalidArchitecture(format!(
                "input {in_width}x{in_height}"
            )));
        }
        let (conv1_pad, pool1) = if in_width >= 56 && in_height >= 32 {
            (0, 2)
        } else {
            let pad = (0..=2)
                .find(|&p| conv_out(in_width, p) >= 28 && conv_out(in_height, p) >= 16)
                .unwrap_or(2);
            (pad, 1)
        };
        let (w1, h1) = (conv_out(in_width, conv1_pad) / pool1, conv_out(in_height, conv1_pad) / pool1);
        let conv2_pad = if w1.min(h1) >= 6 { 0 } else { 2 };
        let (w2, h2) = (conv_out(w1, conv2_pad), conv_out(h1, conv2_pad));
        let pool2 = if w2.min(h2) >= 2 { 2 } else { 1 };
        let arch = Self {
            in_width,
            in_height,
            feature_dim,
            conv1_pad,
            pool1,
            conv2_pad,
            pool2,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), RegressorError> {
        let ok = self.pool1 >= 1
            && self.pool2 >= 1
            && self.conv1_out().0 >= 1
            && self.conv1_out().1 >= 1
            && self.pool2_out().0 >= 1
            && self.pool2_out().1 >= 1;
        if ok {
            Ok(())
        } else {
            Err(RegressorError::InvalidArchitecture(format!("{self:?}")))
        }
    }

    pub fn conv1_out(&self) -> (usize, usize) {
        (conv_out(self.in_width, self.conv1_pad), conv_out(self.in_height, self.conv1_pad))
    }

    pub fn pool1_out(&self) -> (usize, usize) {
        let (w, h) = self.conv1_out();
        (w / self.pool1, h / self.pool1)
    }

    pub fn conv2_out(&self) -> (usize, usize) {
        let (w, h) = self.pool1_out();
        (conv_out(w, self.conv2_pad), conv_out(h, self.conv2_pad))
    }

    pub fn pool2_out(&self) -> (usize, usize) {
        let (w, h) = self.conv2_out();
        (w / self.pool2, h / self.pool2)
    }

    /// Width of the flattened second pooling output.
    pub fn flat_dim(&self) -> usize {
        let (w, h) = self.pool2_out();
        CONV2_MAPS * w * h
    }

    pub fn fc_input(&self) -> usize {
        self.flat_dim() + self.feature_dim
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// `key=value` summary used in checkpoints.
    pub fn describe(&self) -> String {
        format!(
            "input={}x{} features={} conv1_pad={} pool1={} conv2_pad={} pool2={}",
            self.in_width,
            self.in_height,
            self.feature_dim,
            self.conv1_pad,
            self.pool1,
            self.conv2_pad,
            self.pool2
        )
    }

    pub fn parse(text: &str) -> Result<Self, RegressorError> {
        let bad = || RegressorError::Checkpoint(format!("bad architecture '{text}'"));
        let get = |key: &str| -> Result<String, RegressorError> {
            text.split_whitespace()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(bad)
        };
        let input = get("input")?;
        let (w, h) = input.split_once('x').ok_or_else(bad)?;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        let arch = Self {
            in_width: num(w)?,
            in_height: num(h)?,
            feature_dim: num(&get("features")?)?,
            conv1_pad: num(&get("conv1_pad")?)?,
            pool1: num(&get("pool1")?)?,
            conv2_pad: num(&get("conv2_pad")?)?,
            pool2: num(&get("pool2")?)?,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Offsets of each parameter block in the flat vector, in storage order:
/// conv1 weights `[map][ky][kx]`, conv1 bias, conv2 weights
/// `[map][in_map][ky][kx]`, conv2 bias, fc1 weights `[unit][input]`, fc1
/// bias, fc2 weights `[output][unit]`, fc2 bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv1_w: usize,
    pub conv1_b: usize,
    pub conv2_w: usize,
    pub conv2_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
    pub total: usize,
    fc_in: usize,
}

impl ParamLayout {
    fn new(arch: &CnnArchitecture) -> Self {
        let fc_in = arch.fc_input();
        let sizes = [
            CONV1_MAPS * KK,
            CONV1_MAPS,
            CONV2_MAPS * CONV1_MAPS * KK,
            CONV2_MAPS,
            FC1_UNITS * fc_in,
            FC1_UNITS,
            OUTPUTS * FC1_UNITS,
            OUTPUTS,
        ];
        let mut off = [0; 9];
        for i in 0..8 {
            off[i + 1] = off[i] + sizes[i];
        }
        Self {
            conv1_w: off[0],
            conv1_b: off[1],
            conv2_w: off[2],
            conv2_b: off[3],
            fc1_w: off[4],
            fc1_b: off[5],
            fc2_w: off[6],
            fc2_b: off[7],
            total: off[8],
            fc_in,
        }
    }

    /// Block boundaries with names, for per-layer reporting.
    pub fn blocks(&self) -> [(&'static str, std::ops::Range<usize>); 8] {
        [
            ("conv1_w", self.conv1_w..self.conv1_b),
            ("conv1_b", self.conv1_b..self.conv2_w),
            ("conv2_w", self.conv2_w..self.conv2_b),
            ("conv2_b", self.conv2_b..self.fc1_w),
            ("fc1_w", self.fc1_w..self.fc1_b),
            ("fc1_b", self.fc1_b..self.fc2_w),
            ("fc2_w", self.fc2_w..self.fc2_b),
            ("fc2_b", self.fc2_b..self.total),
        ]
    }

    /// Fan-in of the layer owning a weight block.
    fn fan_in(&self, name: &str) -> usize {
        match name {
            "conv1_w" => KK,
            "conv2_w" => CONV1_MAPS * KK,
            "fc1_w" => self.fc_in,
            "fc2_w" => FC1_UNITS,
            _ => 0,
        }
    }
}

struct Parts<'a, T> {
    c1w: &'a [T],
    c1b: &'a [T],
    c2w: &'a [T],
    c2b: &'a [T],
    f1w: &'a [T],
    f1b: &'a [T],
    f2w: &'a [T],
    f2b: &'a [T],
}

struct PartsMut<'a, T> {
    c1w: &'a mut [T],
    c1b: &'a mut [T],
    c2w: &'a mut [T],
    c2b: &'a mut [T],
    f1w: &'a mut [T],
    f1b: &'a mut [T],
    f2w: &'a mut [T],
    f2b: &'a mut [T],
}

fn split<'a, T>(v: &'a [T], l: &ParamLayout) -> Parts<'a, T> {
    Parts {
        c1w: &v[l.conv1_w..l.conv1_b],
        c1b: &v[l.conv1_b..l.conv2_w],
        c2w: &v[l.conv2_w..l.conv2_b],
        c2b: &v[l.conv2_b..l.fc1_w],
        f1w: &v[l.fc1_w..l.fc1_b],
        f1b: &v[l.fc1_b..l.fc2_w],
        f2w: &v[l.fc2_w..l.fc2_b],
        f2b: &v[l.fc2_b..l.total],
    }
}

fn split_mut<'a, T>(v: &'a mut [T], l: &ParamLayout) -> PartsMut<'a, T> {
    let (c1w, rest) = v.split_at_mut(l.conv1_b);
    let (c1b, rest) = rest.split_at_mut(l.conv2_w - l.conv1_b);
    let (c2w, rest) = rest.split_at_mut(l.conv2_b - l.conv2_w);
    let (c2b, rest) = rest.split_at_mut(l.fc1_w - l.conv2_b);
    let (f1w, rest) = rest.split_at_mut(l.fc1_b - l.fc1_w);
    let (f1b, rest) = rest.split_at_mut(l.fc2_w - l.fc1_b);
    let (f2w, f2b) = rest.split_at_mut(l.fc2_b - l.fc2_w);
    PartsMut {
        c1w,
        c1b,
        c2w,
        c2b,
        f1w,
        f1b,
        f2w,
        f2b,
    }
}

/// Output columns `[lo, hi)` whose input column `ox + kx - pad` lies inside
/// `0..w`.
fn valid_cols(w: usize, pad: usize, kx: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).min(ow);
    let hi = (w + pad).saturating_sub(kx).min(ow).max(lo);
    (lo, hi)
}

/// Unfolds `channels x h x w` into `(channels * 25) x (oh * ow)` patches,
/// zero outside the (padded) input.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    input: &[T],
    channels: usize,
    h: usize,
    w: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let hw = oh * ow;
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let (lo, hi) = valid_cols(w, pad, kx, ow);
                let row = &mut col[(c * KK + ky * KERNEL + kx) * hw..][..hw];
                for oy in 0..oh {
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    let iy = (oy + ky).wrapping_sub(pad);
                    if iy >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let start = iy * w + lo + kx - pad;
                        dst[lo..hi].copy_from_slice(&plane[start..start + hi - lo]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients into `grad`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    col: &[T],
    channels: usize,
    h: usize,
    w: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    grad: &mut [T],
) {
    let hw = oh * ow;
    for c in 0..channels {
        let plane = &mut grad[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let (lo, hi) = valid_cols(w, pad, kx, ow);
                let row = &col[(c * KK + ky * KERNEL + kx) * hw..][..hw];
                for oy in 0..oh {
                    let iy = (oy + ky).wrapping_sub(pad);
                    if iy >= h || hi == lo {
                        continue;
                    }
                    let start = iy * w + lo + kx - pad;
                    let dst = &mut plane[start..start + hi - lo];
                    for (d, &v) in dst.iter_mut().zip(&row[oy * ow + lo..oy * ow + hi]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// ReLU of the `s x s` max-pool (stride `s`) of `maps x h x w`. `idx`
/// receives the flat input index of the first maximum in scan order.
fn relu_maxpool<T: Real>(
    input: &[T],
    maps: usize,
    h: usize,
    w: usize,
    s: usize,
    out: &mut [T],
    idx: &mut [u32],
) {
    let (oh, ow) = (h / s, w / s);
    for m in 0..maps {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut at = 0;
                for dy in 0..s {
                    for dx in 0..s {
                        let i = m * h * w + (oy * s + dy) * w + ox * s + dx;
                        if input[i] > best {
                            best = input[i];
                            at = i;
                        }
                    }
                }
                let o = m * oh * ow + oy * ow + ox;
                out[o] = best.max(T::zero());
                idx[o] = at as u32;
            }
        }
    }
}

fn add_row_bias<T: Real>(out: &mut [T], bias: &[T], cols: usize) {
    for (row, &b) in out.chunks_mut(cols).zip(bias) {
        for v in row {
            *v = *v + b;
        }
    }
}

/// Network inputs and targets for a batch, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub len: usize,
    /// `len x (height * width)`, intensities scaled to `[0, 1]`.
    pub images: Vec<T>,
    /// `len x feature_dim`.
    pub features: Vec<T>,
    /// `len x 2`, yaw then pitch in radians.
    pub targets: Vec<T>,
}

impl<T: Real> Default for Batch<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Batch<T> {
    pub fn new() -> Self {
        Self {
            len: 0,
            images: Vec::new(),
            features: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn push(&mut self, image: &[T], features: &[T], target: [T; 2]) {
        self.images.extend_from_slice(image);
        self.features.extend_from_slice(features);
        self.targets.extend_from_slice(&target);
        self.len += 1;
    }

    pub fn clear(&mut self) {
        self.len = 0;
        self.images.clear();
        self.features.clear();
        self.targets.clear();
    }
}

/// Per-batch activations kept for the backward pass.
struct Cache<T> {
    n: usize,
    pool1: Vec<T>,
    idx1: Vec<u32>,
    idx2: Vec<u32>,
    /// `n x fc_in`: flattened second pooling output plus features.
    fc_in: Vec<T>,
    /// `n x 500`, after ReLU.
    hidden: Vec<T>,
    /// `n x 2`.
    out: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<T> {
    pub arch: CnnArchitecture,
    pub params: Vec<T>,
}

impl<T: Real> Cnn<T> {
    pub fn zeros(arch: CnnArchitecture) -> Self {
        Self {
            params: vec![T::zero(); arch.param_count()],
            arch,
        }
    }

    /// Fan-in scaled uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`
    /// and zero biases.
    pub fn init(arch: CnnArchitecture, seed: u64) -> Self {
        let mut net = Self::zeros(arch);
        let layout = arch.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, range) in layout.blocks() {
            let fan_in = layout.fan_in(name);
            if fan_in == 0 {
                continue;
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[range] {
                *p = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        net
    }

    pub fn layout(&self) -> ParamLayout {
        self.arch.layout()
    }

    fn forward_cache(&self, batch: &Batch<T>) -> Cache<T> {
        let a = &self.arch;
        let l = a.layout();
        let p = split(&self.params, &l);
        let n = batch.len;
        let in_len = a.in_width * a.in_height;
        let (cw1, ch1) = a.conv1_out();
        let (pw1, ph1) = a.pool1_out();
        let (cw2, ch2) = a.conv2_out();
        let (hw1, hw2) = (cw1 * ch1, cw2 * ch2);
        let p1_len = CONV1_MAPS * pw1 * ph1;
        let flat = a.flat_dim();
        let d = a.fc_input();

        let mut col1 = vec![T::zero(); KK * hw1];
        let mut act1 = vec![T::zero(); CONV1_MAPS * hw1];
        let mut col2 = vec![T::zero(); CONV1_MAPS * KK * hw2];
        let mut act2 = vec![T::zero(); CONV2_MAPS * hw2];
        let mut cache = Cache {
            n,
            pool1: vec![T::zero(); n * p1_len],
            idx1: vec![0; n * p1_len],
            idx2: vec![0; n * flat],
            fc_in: vec![T::zero(); n * d],
            hidden: vec![T::zero(); n * FC1_UNITS],
            out: vec![T::zero(); n * OUTPUTS],
        };

        for b in 0..n {
            let x = &batch.images[b * in_len..(b + 1) * in_len];
            im2col(x, 1, a.in_height, a.in_width, a.conv1_pad, ch1, cw1, &mut col1);
            gemm(false, false, CONV1_MAPS, hw1, KK, p.c1w, &col1, T::zero(), &mut act1);
            add_row_bias(&mut act1, p.c1b, hw1);
            let pool1 = &mut cache.pool1[b * p1_len..(b + 1) * p1_len];
            let idx1 = &mut cache.idx1[b * p1_len..(b + 1) * p1_len];
            relu_maxpool(&act1, CONV1_MAPS, ch1, cw1, a.pool1, pool1, idx1);

            im2col(pool1, CONV1_MAPS, ph1, pw1, a.conv2_pad, ch2, cw2, &mut col2);
            gemm(false, false, CONV2_MAPS, hw2, CONV1_MAPS * KK, p.c2w, &col2, T::zero(), &mut act2);
            add_row_bias(&mut act2, p.c2b, hw2);
            let row = &mut cache.fc_in[b * d..(b + 1) * d];
            let idx2 = &mut cache.idx2[b * flat..(b + 1) * flat];
            relu_maxpool(&act2, CONV2_MAPS, ch2, cw2, a.pool2, &mut row[..flat], idx2);
            row[flat..].copy_from_slice(&batch.features[b * a.feature_dim..(b + 1) * a.feature_dim]);
        }

        gemm(false, true, n, FC1_UNITS, d, &cache.fc_in, p.f1w, T::zero(), &mut cache.hidden);
        for row in cache.hidden.chunks_mut(FC1_UNITS) {
            for (v, &bias) in row.iter_mut().zip(p.f1b) {
                *v = (*v + bias).max(T::zero());
            }
        }
        gemm(false, true, n, OUTPUTS, FC1_UNITS, &cache.hidden, p.f2w, T::zero(), &mut cache.out);
        for row in cache.out.chunks_mut(OUTPUTS) {
            for (v, &bias) in row.iter_mut().zip(p.f2b) {
                *v = *v + bias;
            }
        }
        cache
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<(), RegressorError> {
        let a = &self.arch;
        let n = batch.len;
        if batch.images.len() != n * a.in_width * a.in_height
            || batch.features.len() != n * a.feature_dim
            || batch.targets.len() != n * OUTPUTS
        {
            return Err(RegressorError::ShapeMismatch(format!(
                "batch of {n} does not match {}",
                a.describe()
            )));
        }
        Ok(())
    }

    /// Outputs (yaw, pitch) for every batch entry; targets are ignored.
    pub fn forward(&self, batch: &Batch<T>) -> Result<Vec<[T; 2]>, RegressorError> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch);
        Ok(cache.out.chunks(OUTPUTS).map(|c| [c[0], c[1]]).collect())
    }

    /// Sum over the batch of squared L2 output errors.
    pub fn loss(&self, batch: &Batch<T>) -> Result<T, RegressorError> {
        self.check_batch(batch)?;
        let cache = self.forward_cache(batch);
        Ok(cache
            .out
            .iter()
            .zip(&batch.targets)
            .map(|(&y, &t)| (y - t) * (y - t))
            .sum())
    }

    /// Loss and its gradient with respect to every parameter; `grad` is
    /// overwritten.
    pub fn loss_and_gradient(&self, batch: &Batch<T>, grad: &mut [T]) -> Result<T, RegressorError> {
        self.check_batch(batch)?;
        if grad.len() != self.params.len() {
            return Err(RegressorError::ShapeMismatch("gradient length".into()));
        }
        let cache = self.forward_cache(batch);
        let a = &self.arch;
        let l = a.layout();
        let p = split(&self.params, &l);
        grad.fill(T::zero());
        let g = split_mut(grad, &l);
        let n = cache.n;
        let d = a.fc_input();
        let two = T::from_f64(2.0);

        let mut loss = T::zero();
        let mut d_out = vec![T::zero(); n * OUTPUTS];
        for ((dy, &y), &t) in d_out.iter_mut().zip(&cache.out).zip(&batch.targets) {
            let e = y - t;
            loss = loss + e * e;
            *dy = two * e;
        }

        // fc2
        gemm(true, false, OUTPUTS, FC1_UNITS, n, &d_out, &cache.hidden, T::one(), g.f2w);
        for row in d_out.chunks(OUTPUTS) {
            for (gb, &v) in g.f2b.iter_mut().zip(row) {
                *gb = *gb + v;
            }
        }
        let mut d_hidden = vec![T::zero(); n * FC1_UNITS];
        gemm(false, false, n, FC1_UNITS, OUTPUTS, &d_out, p.f2w, T::zero(), &mut d_hidden);
        for (dh, &h) in d_hidden.iter_mut().zip(&cache.hidden) {
            if h <= T::zero() {
                *dh = T::zero();
            }
        }

        // fc1
        gemm(true, false, FC1_UNITS, d, n, &d_hidden, &cache.fc_in, T::one(), g.f1w);
        for row in d_hidden.chunks(FC1_UNITS) {
            for (gb, &v) in g.f1b.iter_mut().zip(row) {
                *gb = *gb + v;
            }
        }
        let mut d_fc_in = vec![T::zero(); n * d];
        gemm(false, false, n, d, FC1_UNITS, &d_hidden, p.f1w, T::zero(), &mut d_fc_in);

        // convolutions, one sample at a time
        let in_len = a.in_width * a.in_height;
        let (cw1, ch1) = a.conv1_out();
        let (pw1, ph1) = a.pool1_out();
        let (cw2, ch2) = a.conv2_out();
        let (hw1, hw2) = (cw1 * ch1, cw2 * ch2);
        let p1_len = CONV1_MAPS * pw1 * ph1;
        let flat = a.flat_dim();
        let mut col1 = vec![T::zero(); KK * hw1];
        let mut col2 = vec![T::zero(); CONV1_MAPS * KK * hw2];
        let mut d_col2 = vec![T::zero(); CONV1_MAPS * KK * hw2];
        let mut d_act2 = vec![T::zero(); CONV2_MAPS * hw2];
        let mut d_pool1 = vec![T::zero(); p1_len];
        let mut d_act1 = vec![T::zero(); CONV1_MAPS * hw1];

        for b in 0..n {
            let pooled2 = &cache.fc_in[b * d..b * d + flat];
            let d_pooled2 = &d_fc_in[b * d..b * d + flat];
            let idx2 = &cache.idx2[b * flat..(b + 1) * flat];
            d_act2.fill(T::zero());
            for j in 0..flat {
                if pooled2[j] > T::zero() {
                    let k = idx2[j] as usize;
                    d_act2[k] = d_act2[k] + d_pooled2[j];
                }
            }
            for (gb, row) in g.c2b.iter_mut().zip(d_act2.chunks(hw2)) {
                *gb = *gb + row.iter().copied().sum();
            }
            let pool1 = &cache.pool1[b * p1_len..(b + 1) * p1_len];
            im2col(pool1, CONV1_MAPS, ph1, pw1, a.conv2_pad, ch2, cw2, &mut col2);
            gemm(false, true, CONV2_MAPS, CONV1_MAPS * KK, hw2, &d_act2, &col2, T::one(), g.c2w);
            gemm(true, false, CONV1_MAPS * KK, hw2, CONV2_MAPS, p.c2w, &d_act2, T::zero(), &mut d_col2);
            d_pool1.fill(T::zero());
            col2im(&d_col2, CONV1_MAPS, ph1, pw1, a.conv2_pad, ch2, cw2, &mut d_pool1);

            let idx1 = &cache.idx1[b * p1_len..(b + 1) * p1_len];
            d_act1.fill(T::zero());
            for j in 0..p1_len {
                if pool1[j] > T::zero() {
                    let k = idx1[j] as usize;
                    d_act1[k] = d_act1[k] + d_pool1[j];
                }
            }
            for (gb, row) in g.c1b.iter_mut().zip(d_act1.chunks(hw1)) {
                *gb = *gb + row.iter().copied().sum();
            }
            let x = &batch.images[b * in_len..(b + 1) * in_len];
            im2col(x, 1, a.in_height, a.in_width, a.conv1_pad, ch1, cw1, &mut col1);
            gemm(false, true, CONV1_MAPS, KK, hw1, &d_act1, &col1, T::one(), g.c1w);
        }
        Ok(loss)
    }

    /// Converts the parameters to another precision.
    pub fn cast<U: Real>(&self) -> Cnn<U> {
        Cnn {
            arch: self.arch,
            params: self.params.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_shapes_for_the_resolution_grid() {
        let a = CnnArchitecture::for_input(60, 36, 2).unwrap();
        assert_eq!((a.conv1_out(), a.pool1_out(), a.conv2_out(), a.pool2_out()), ((56, 32), (28, 16), (24, 12), (12, 6)));
        assert_eq!(a.fc_input(), 3602);
        let b = CnnArchitecture::for_input(30, 18, 2).unwrap();
        assert_eq!((b.pool1_out(), b.pool2_out()), ((28, 16), (12, 6)));
        let c = CnnArchitecture::for_input(15, 9, 2).unwrap();
        assert_eq!((c.pool1_out(), c.conv2_out(), c.pool2_out()), ((15, 9), (11, 5), (5, 2)));
        let d = CnnArchitecture::for_input(8, 5, 2).unwrap();
        assert_eq!((d.pool1_out(), d.conv2_out(), d.pool2_out()), ((8, 5), (8, 5), (4, 2)));
        for arch in [a, b, c, d] {
            assert_eq!(CnnArchitecture::parse(&arch.describe()).unwrap(), arch);
        }
        assert!(CnnArchitecture::for_input(1, 1, 0).is_ok());
    }

    fn one_sample(arch: &CnnArchitecture) -> Batch<f64> {
        let mut batch = Batch::new();
        let img: Vec<f64> = (0..arch.in_width * arch.in_height).map(|i| (i % 7) as f64 / 7.0).collect();
        batch.push(&img, &vec![0.1; arch.feature_dim], [0.0, 0.0]);
        batch
    }

    #[test]
    fn zero_network_outputs_its_final_bias() {
        let arch = CnnArchitecture::for_input(60, 36, 2).unwrap();
        let mut net = Cnn::<f64>::zeros(arch);
        let batch = one_sample(&arch);
        assert_eq!(net.forward(&batch).unwrap(), vec![[0.0, 0.0]]);
        let l = arch.layout();
        net.params[l.fc2_b] = 0.1;
        net.params[l.fc2_b + 1] = -0.2;
        assert_eq!(net.forward(&batch).unwrap(), vec![[0.1, -0.2]]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let arch = CnnArchitecture::for_input(15, 9, 2).unwrap();
        let net = Cnn::<f64>::zeros(arch);
        let mut batch = one_sample(&arch);
        batch.images.pop();
        assert!(matches!(net.forward(&batch), Err(RegressorError::ShapeMismatch(_))));
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let (c, h, w, pad) = (2, 6, 7, 2);
        let (oh, ow) = (conv_out(h, pad), conv_out(w, pad));
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let y: Vec<f64> = (0..c * KK * oh * ow).map(|i| ((i * 13) % 11) as f64 - 5.0).collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, c, h, w, pad, oh, ow, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, pad, oh, ow, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn im2col_matches_direct_indexing() {
        for (h, w, pad) in [(6, 7, 0), (3, 2, 2), (1, 1, 2), (8, 5, 1)] {
            let (oh, ow) = (conv_out(h, pad), conv_out(w, pad));
            let x: Vec<f64> = (0..2 * h * w).map(|i| i as f64 + 1.0).collect();
            let mut col = vec![-1.0; 2 * KK * oh * ow];
            im2col(&x, 2, h, w, pad, oh, ow, &mut col);
            for c in 0..2 {
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (iy, ix) = ((oy + ky) as isize - pad as isize, (ox + kx) as isize - pad as isize);
                                let want = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    0.0
                                } else {
                                    x[c * h * w + iy as usize * w + ix as usize]
                                };
                                let got = col[(c * KK + ky * KERNEL + kx) * oh * ow + oy * ow + ox];
                                assert_eq!(got, want);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_prefers_the_first_maximum() {
        let input = [1.0, 3.0, 3.0, 0.0, -1.0, -2.0, -3.0, -1.0];
        let mut out = [0.0; 2];
        let mut idx = [0u32; 2];
        relu_maxpool(&input, 2, 2, 2, 2, &mut out, &mut idx);
        assert_eq!(out, [3.0, 0.0]);
        assert_eq!(idx, [1, 4]);
    }

    #[test]
    fn duplicated_sample_doubles_its_gradient() {
        let arch = CnnArchitecture::for_input(15, 9, 2).unwrap();
        let net = Cnn::<f64>::init(arch, 1);
        let mut single = one_sample(&arch);
        single.targets = vec![0.3, -0.1];
        let mut double = single.clone();
        let (img, feat, t) = (single.images.clone(), single.features.clone(), [0.3, -0.1]);
        double.push(&img, &feat, t);
        let mut g1 = vec![0.0; net.params.len()];
        let mut g2 = vec![0.0; net.params.len()];
        let l1 = net.loss_and_gradient(&single, &mut g1).unwrap();
        let l2 = net.loss_and_gradient(&double, &mut g2).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12 * l1.abs().max(1.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let arch = CnnArchitecture::for_input(15, 9, 2).unwrap();
        let net = Cnn::<f64>::init(arch, 2);
        let mut batch = one_sample(&arch);
        let out = net.forward(&batch).unwrap()[0];
        batch.targets = out.to_vec();
        let mut g = vec![1.0; net.params.len()];
        assert_eq!(net.loss_and_gradient(&batch, &mut g).unwrap(), 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
