//! Utterance encoder: convolutional frame extractor, temporal average
//! pooling and an affine projection to the embedding.
//!
//! The input `n_mels x T` matrix is a one-channel image. After the last
//! stage the remaining mel axis is averaged away, leaving `T' x D` frame
//! features with `D` equal to the last channel width.
//!
//! * `Resnet34`: 3x3 stem, then residual stages of 3/4/6/3 basic blocks.
//!   Stages 2-4 open with a stride-2 block (both axes), so `T' = ceil(T/8)`.
//! * `Small`: two conv-bn-relu blocks with stride 2, so `T' = ceil(T/4)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{bail, Result};
use crate::features::FeatureMatrix;
use crate::nn::{relu_backward, relu_in_place, BatchNorm2d, Conv2d, Linear, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Arch {
    Resnet34,
    Small,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EncoderConfig {
    pub arch: Arch,
    pub channel_widths: Vec<usize>,
    pub embedding_dim: usize,
    /// Expected input height.
    pub n_mels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            arch: Arch::Resnet34,
            channel_widths: vec![32, 64, 128, 256],
            embedding_dim: 256,
            n_mels: 40,
        }
    }
}

const RESNET34_DEPTHS: [usize; 4] = [3, 4, 6, 3];

impl EncoderConfig {
    pub fn small() -> Self {
        EncoderConfig { arch: Arch::Small, channel_widths: vec![16, 32], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            bail!(Config, "embedding_dim must be at least 1");
        }
        if self.n_mels == 0 {
            bail!(Config, "n_mels must be at least 1");
        }
        let want = match self.arch {
            Arch::Resnet34 => 4,
            Arch::Small => 2,
        };
        if self.channel_widths.len() != want {
            bail!(Config, "{:?} needs {want} channel widths, got {}", self.arch, self.channel_widths.len());
        }
        if self.channel_widths.contains(&0) {
            bail!(Config, "channel widths must be positive");
        }
        Ok(())
    }

    /// Total downsampling of the time axis.
    pub fn time_stride(&self) -> usize {
        match self.arch {
            Arch::Resnet34 => 8,
            Arch::Small => 4,
        }
    }

    /// Shortest input accepted: one full stride's worth of frames.
    pub fn min_frames(&self) -> usize {
        self.time_stride()
    }

    /// Frame-feature count for an input of `frames` frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        let halvings = self.time_stride().trailing_zeros();
        (0..halvings).fold(frames, |t, _| t.div_ceil(2))
    }

    pub fn frame_dim(&self) -> usize {
        *self.channel_widths.last().unwrap_or(&0)
    }
}

/// `T' x D` frame-level features, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FrameFeatures {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Mean of the frame features over time.
pub fn temporal_average_pool(ff: &FrameFeatures) -> Vec<f32> {
    let mut acc = vec![0.0f64; ff.dim];
    for t in 0..ff.frames {
        for (a, &v) in acc.iter_mut().zip(ff.frame(t)) {
            *a += f64::from(v);
        }
    }
    acc.into_iter().map(|a| (a / ff.frames as f64) as f32).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Debug, Clone)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
    out: Vec<Tensor>,
}

impl ConvBnRelu {
    fn new<R: RngCore + ?Sized>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(in_c, out_c, 3, (stride, stride), rng),
            bn: BatchNorm2d::new(out_c),
            out: Vec::new(),
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = self.bn.infer(self.conv.infer(x));
        relu_in_place(&mut y);
        y
    }

    fn forward(&mut self, xs: Vec<Tensor>) -> Vec<Tensor> {
        let mut ys = self.bn.forward(self.conv.forward(xs));
        ys.iter_mut().for_each(relu_in_place);
        self.out = ys.clone();
        ys
    }

    fn backward(&mut self, mut grads: Vec<Tensor>) -> Vec<Tensor> {
        for (g, o) in grads.iter_mut().zip(&self.out) {
            relu_backward(g, o);
        }
        self.out.clear();
        let g = self.bn.backward(grads);
        self.conv.backward(&g)
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
    mid: Vec<Tensor>,
    out: Vec<Tensor>,
}

impl BasicBlock {
    fn new<R: RngCore + ?Sized>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let shortcut = (stride != 1 || in_c != out_c)
            .then(|| (Conv2d::new(in_c, out_c, 1, (stride, stride), rng), BatchNorm2d::new(out_c)));
        BasicBlock {
            conv1: Conv2d::new(in_c, out_c, 3, (stride, stride), rng),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, (1, 1), rng),
            bn2: BatchNorm2d::new(out_c),
            shortcut,
            mid: Vec::new(),
            out: Vec::new(),
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut a = self.bn1.infer(self.conv1.infer(x));
        relu_in_place(&mut a);
        let mut y = self.bn2.infer(self.conv2.infer(&a));
        match &self.shortcut {
            Some((c, b)) => add_into(&mut y, &b.infer(c.infer(x))),
            None => add_into(&mut y, x),
        }
        relu_in_place(&mut y);
        y
    }

    fn forward(&mut self, xs: Vec<Tensor>) -> Vec<Tensor> {
        let skip = match &mut self.shortcut {
            Some((c, b)) => b.forward(c.forward(xs.clone())),
            None => xs.clone(),
        };
        let mut a = self.bn1.forward(self.conv1.forward(xs));
        a.iter_mut().for_each(relu_in_place);
        self.mid = a.clone();
        let mut ys = self.bn2.forward(self.conv2.forward(a));
        for (y, s) in ys.iter_mut().zip(&skip) {
            add_into(y, s);
            relu_in_place(y);
        }
        self.out = ys.clone();
        ys
    }

    fn backward(&mut self, mut grads: Vec<Tensor>) -> Vec<Tensor> {
        for (g, o) in grads.iter_mut().zip(&self.out) {
            relu_backward(g, o);
        }
        self.out.clear();
        let skip_grads = match &mut self.shortcut {
            Some((c, b)) => {
                let g = b.backward(grads.clone());
                c.backward(&g)
            }
            None => grads.clone(),
        };
        let g = self.bn2.backward(grads);
        let mut g = self.conv2.backward(&g);
        for (gi, m) in g.iter_mut().zip(&self.mid) {
            relu_backward(gi, m);
        }
        self.mid.clear();
        let g = self.bn1.backward(g);
        let mut g = self.conv1.backward(&g);
        for (gi, s) in g.iter_mut().zip(&skip_grads) {
            add_into(gi, s);
        }
        g
    }
}

fn add_into(y: &mut Tensor, x: &Tensor) {
    for (a, b) in y.data.iter_mut().zip(&x.data) {
        *a += b;
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Block {
    Plain(ConvBnRelu),
    Residual(BasicBlock),
}

impl Block {
    fn convs_bns(&self) -> Vec<(&Conv2d, Option<&BatchNorm2d>)> {
        match self {
            Block::Plain(b) => vec![(&b.conv, Some(&b.bn))],
            Block::Residual(b) => {
                let mut v = vec![(&b.conv1, Some(&b.bn1)), (&b.conv2, Some(&b.bn2))];
                if let Some((c, n)) = &b.shortcut {
                    v.push((c, Some(n)));
                }
                v
            }
        }
    }

    fn convs_bns_mut(&mut self) -> Vec<(&mut Conv2d, &mut BatchNorm2d)> {
        match self {
            Block::Plain(b) => vec![(&mut b.conv, &mut b.bn)],
            Block::Residual(b) => {
                let mut v = vec![(&mut b.conv1, &mut b.bn1), (&mut b.conv2, &mut b.bn2)];
                if let Some((c, n)) = &mut b.shortcut {
                    v.push((c, n));
                }
                v
            }
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Block::Plain(b) => b.infer(x),
            Block::Residual(b) => b.infer(x),
        }
    }

    fn forward(&mut self, xs: Vec<Tensor>) -> Vec<Tensor> {
        match self {
            Block::Plain(b) => b.forward(xs),
            Block::Residual(b) => b.forward(xs),
        }
    }

    fn backward(&mut self, g: Vec<Tensor>) -> Vec<Tensor> {
        match self {
            Block::Plain(b) => b.backward(g),
            Block::Residual(b) => b.backward(g),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    blocks: Vec<Block>,
    head: Linear,
    pooled: Vec<(usize, usize, usize)>,
}

impl Encoder {
    pub fn new<R: RngCore + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = &config.channel_widths;
        let mut blocks = Vec::new();
        match config.arch {
            Arch::Small => {
                blocks.push(Block::Plain(ConvBnRelu::new(1, w[0], 2, rng)));
                blocks.push(Block::Plain(ConvBnRelu::new(w[0], w[1], 2, rng)));
            }
            Arch::Resnet34 => {
                blocks.push(Block::Plain(ConvBnRelu::new(1, w[0], 1, rng)));
                let mut in_c = w[0];
                for (stage, (&width, &depth)) in w.iter().zip(&RESNET34_DEPTHS).enumerate() {
                    for i in 0..depth {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        blocks.push(Block::Residual(BasicBlock::new(in_c, width, stride, rng)));
                        in_c = width;
                    }
                }
            }
        }
        if let Some(Block::Plain(b)) = blocks.first_mut() {
            b.conv.input_grad = false;
        }
        let head = Linear::new(config.frame_dim(), config.embedding_dim, rng);
        Ok(Encoder { config, blocks, head, pooled: Vec::new() })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check_input(&self, f: &FeatureMatrix) -> Result<Tensor> {
        if f.n_mels() != self.config.n_mels {
            bail!(Input, "encoder expects {} mel bands, got {}", self.config.n_mels, f.n_mels());
        }
        if f.frames() < self.config.min_frames() {
            bail!(
                Input,
                "input has {} frames; {:?} needs at least {}",
                f.frames(),
                self.config.arch,
                self.config.min_frames()
            );
        }
        Ok(Tensor { c: 1, h: f.n_mels(), w: f.frames(), data: f.values().to_vec() })
    }

    /// Frame-level features in inference mode.
    pub fn extract_frames(&self, f: &FeatureMatrix) -> Result<FrameFeatures> {
        let mut x = self.check_input(f)?;
        for b in &self.blocks {
            x = b.infer(&x);
        }
        let mut data = vec![0.0f32; x.w * x.c];
        for c in 0..x.c {
            let plane = x.channel(c);
            for t in 0..x.w {
                let s: f64 = (0..x.h).map(|h| f64::from(plane[h * x.w + t])).sum();
                data[t * x.c + c] = (s / x.h as f64) as f32;
            }
        }
        Ok(FrameFeatures { frames: x.w, dim: x.c, data })
    }

    /// Inference-mode embedding.
    pub fn embed(&self, f: &FeatureMatrix) -> Result<Embedding> {
        let pooled = temporal_average_pool(&self.extract_frames(f)?);
        Ok(Embedding(self.head.infer(&pooled)))
    }

    /// Training-mode forward over a batch; batch statistics are used and
    /// activations cached for [`Encoder::backward`].
    pub fn forward_train(&mut self, batch: &[FeatureMatrix]) -> Result<Vec<Vec<f32>>> {
        if batch.is_empty() {
            bail!(Input, "empty training batch");
        }
        let mut xs = batch.iter().map(|f| self.check_input(f)).collect::<Result<Vec<_>>>()?;
        for b in &mut self.blocks {
            xs = b.forward(xs);
        }
        self.pooled = xs.iter().map(|x| (x.c, x.h, x.w)).collect();
        let pooled = xs
            .iter()
            .map(|x| {
                (0..x.c)
                    .map(|c| (x.channel(c).iter().map(|&v| f64::from(v)).sum::<f64>() / x.plane() as f64) as f32)
                    .collect()
            })
            .collect();
        Ok(self.head.forward(pooled))
    }

    /// Accumulates parameter gradients given `dL/d(embedding)` per item.
    pub fn backward(&mut self, grad_embeddings: &[Vec<f32>]) {
        let g = self.head.backward(grad_embeddings);
        let mut grads: Vec<Tensor> = g
            .iter()
            .zip(&self.pooled)
            .map(|(gv, &(c, h, w))| {
                let mut t = Tensor::zeros(c, h, w);
                let inv = 1.0 / (h * w) as f32;
                for (plane, &g) in t.data.chunks_mut(h * w).zip(gv.iter()) {
                    plane.iter_mut().for_each(|v| *v = g * inv);
                }
                t
            })
            .collect();
        for b in self.blocks.iter_mut().rev() {
            grads = b.backward(grads);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    /// Trainable parameters in a fixed order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for b in &self.blocks {
            for (c, n) in b.convs_bns() {
                f(&c.weight);
                if let Some(n) = n {
                    f(&n.gamma);
                    f(&n.beta);
                }
            }
        }
        f(&self.head.weight);
        f(&self.head.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.blocks {
            for (c, n) in b.convs_bns_mut() {
                f(&mut c.weight);
                f(&mut n.gamma);
                f(&mut n.beta);
            }
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    /// Running batch-norm statistics (mean then variance per layer).
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&[f32])) {
        for b in &self.blocks {
            for (_, n) in b.convs_bns() {
                if let Some(n) = n {
                    f(&n.running_mean);
                    f(&n.running_var);
                }
            }
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&mut [f32])) {
        for b in &mut self.blocks {
            for (_, n) in b.convs_bns_mut() {
                f(&mut n.running_mean);
                f(&mut n.running_var);
            }
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}
