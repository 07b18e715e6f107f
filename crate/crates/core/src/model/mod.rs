//! The collaborative attention network.
//!
//! Pipeline: shared stem and early stages, one unshared final stage per
//! branch (stride 1), adaptive max+avg concatenation pooling into a global
//! 1×1 block plus an `n×1` part map, collaborative attention over adjacent
//! parts, a shared linear embedding, and one cosine-softmax head per stream.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{BackboneConfig, BranchSpec, ModelConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, CanError, Result};
use crate::losses::CenterBank;
use crate::nn::{Conv2dLayer, LinearLayer, DEFAULT_NORM_EPS};
use crate::tensor::{ReduceMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    Global,
    Local(usize),
}

/// One embedded feature stream and where it comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub branch: usize,
    pub part_count: usize,
    pub kind: StreamKind,
}

impl StreamInfo {
    pub fn name(&self) -> String {
        match self.kind {
            StreamKind::Global => format!("b{}.global", self.branch),
            StreamKind::Local(k) => format!("b{}.local{}", self.branch, k),
        }
    }

    pub fn is_global(&self) -> bool {
        self.kind == StreamKind::Global
    }
}

/// Stream layout for a branch spec: branches in order, global first, then
/// locals top to bottom.
pub fn stream_layout(branches: &BranchSpec, collaborative_attention: bool) -> Vec<StreamInfo> {
    let mut out = Vec::new();
    for (b, &n) in branches.part_counts.iter().enumerate() {
        out.push(StreamInfo {
            branch: b,
            part_count: n,
            kind: StreamKind::Global,
        });
        let locals = match (n, collaborative_attention) {
            (1, _) => 0,
            (n, true) => n - 1,
            (n, false) => n,
        };
        for k in 0..locals {
            out.push(StreamInfo {
                branch: b,
                part_count: n,
                kind: StreamKind::Local(k),
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2dLayer,
    pub conv2: Conv2dLayer,
    pub shortcut: Option<Conv2dLayer>,
}

impl ResidualBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1 = Conv2dLayer::new(store, &format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, true, rng)?;
        let conv2 = Conv2dLayer::new(store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, true, rng)?;
        // Start the residual branch small so the identity path dominates at init.
        let w = store.value(conv2.weight).map(|v| 0.5 * v);
        store.set_value(conv2.weight, w)?;
        let shortcut = if in_ch != out_ch || stride != 1 {
            Some(Conv2dLayer::new(store, &format!("{name}.shortcut"), in_ch, out_ch, 1, stride, 0, false, rng)?)
        } else {
            None
        };
        Ok(ResidualBlock { conv1, conv2, shortcut })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(tape, store, x)?,
            None => x,
        };
        let sum = tape.add(h, skip)?;
        tape.relu(sum)
    }
}

/// Model outputs for one batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Embedded streams, each B×d, in stream order.
    pub features: Vec<Var>,
    /// Cosine logits, each B×num_classes, one per stream.
    pub logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct CanModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub stem: Conv2dLayer,
    pub shared_stages: Vec<ResidualBlock>,
    /// One final stage per branch; never shared.
    pub branch_stages: Vec<ResidualBlock>,
    pub embedding: ParamId,
    pub heads: Vec<LinearLayer>,
    pub centers: Vec<CenterBank>,
    pub streams: Vec<StreamInfo>,
}

impl CanModel {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = &config.backbone;
        let stem = Conv2dLayer::new(&mut store, "stem", 3, bb.stem_width, 3, bb.stem_stride, 1, true, &mut rng)?;
        let mut shared_stages = Vec::new();
        let mut in_ch = bb.stem_width;
        let last = bb.widths.len() - 1;
        for s in 0..last {
            shared_stages.push(ResidualBlock::new(
                &mut store,
                &format!("stage{s}"),
                in_ch,
                bb.widths[s],
                bb.strides[s],
                &mut rng,
            )?);
            in_ch = bb.widths[s];
        }
        let mut branch_stages = Vec::new();
        for b in 0..config.branches.part_counts.len() {
            branch_stages.push(ResidualBlock::new(
                &mut store,
                &format!("branch{b}.stage{last}"),
                in_ch,
                bb.widths[last],
                bb.strides[last],
                &mut rng,
            )?);
        }
        let pooled = 2 * bb.widths[last];
        let embedding = store.add(
            "embed.weight",
            crate::nn::uniform(&[config.embed_dim, pooled], (3.0 / pooled as f64).sqrt(), &mut rng),
        )?;
        let streams = stream_layout(&config.branches, config.collaborative_attention);
        let mut heads = Vec::with_capacity(streams.len());
        let mut centers = Vec::with_capacity(streams.len());
        for i in 0..streams.len() {
            heads.push(LinearLayer::new(
                &mut store,
                &format!("head{i}"),
                config.embed_dim,
                config.num_classes,
                false,
                &mut rng,
            )?);
            centers.push(CenterBank::new(config.num_classes, config.embed_dim));
        }
        Ok(CanModel {
            config,
            store,
            stem,
            shared_stages,
            branch_stages,
            embedding,
            heads,
            centers,
            streams,
        })
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.streams.len() * self.config.embed_dim
    }

    /// Per-branch feature maps B×C×H'×W'. The stem and shared stages run once.
    pub fn backbone_forward(&self, tape: &mut Tape, images: Var) -> Result<Vec<Var>> {
        let bb = &self.config.backbone;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != bb.input_h || shape[3] != bb.input_w {
            return Err(shape_err!(
                "expected B×3×{}×{} images, got {:?}",
                bb.input_h,
                bb.input_w,
                shape
            ));
        }
        let x = self.stem.forward(tape, &self.store, images)?;
        let mut x = tape.relu(x)?;
        for stage in &self.shared_stages {
            x = stage.forward(tape, &self.store, x)?;
        }
        self.branch_stages
            .iter()
            .map(|stage| stage.forward(tape, &self.store, x))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, images: Var) -> Result<ForwardOutput> {
        let maps = self.backbone_forward(tape, images)?;
        let mut pooled = Vec::with_capacity(self.streams.len());
        for (map, &n) in maps.iter().zip(&self.config.branches.part_counts) {
            let (global, local) = branch_pool(tape, *map, n)?;
            pooled.push(global);
            if n >= 2 {
                if self.config.collaborative_attention {
                    pooled.extend(collaborative_attention(tape, local)?);
                } else {
                    for k in 0..n {
                        pooled.push(tape.slice(local, 2, k, 1)?);
                    }
                }
            }
        }
        debug_assert_eq!(pooled.len(), self.streams.len());
        let features = embed(tape, &self.store, &pooled, self.embedding)?;
        let logits = features
            .iter()
            .zip(&self.heads)
            .map(|(&f, head)| head.cosine_forward(tape, &self.store, f, self.config.cosine_scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardOutput { features, logits })
    }

    /// Embedded streams (B×d each) as plain tensors, no gradients kept.
    pub fn embed_streams(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let x = tape.leaf(images.clone());
        let out = self.forward(&mut tape, x)?;
        Ok(out.features.iter().map(|&f| tape.value(f).clone()).collect())
    }

    /// L2-normalized concatenation of all embedded streams, one row per image.
    pub fn inference_descriptors(&self, images: &Tensor) -> Result<Tensor> {
        let streams = self.embed_streams(images)?;
        let refs: Vec<&Tensor> = streams.iter().collect();
        let cat = Tensor::concat(&refs, 1)?;
        crate::nn::l2_normalize(&cat, DEFAULT_NORM_EPS)
    }

    /// Descriptor of a single `3×H×W` image.
    pub fn inference_descriptor(&self, image: &Tensor) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        let d = self.inference_descriptors(&image.reshape(&shape)?)?;
        d.reshape(&[self.descriptor_dim()])
    }
}

/// Global 1×1 block and `n×1` part map, each the channel concatenation of
/// adaptive max and adaptive average pooling (2C channels).
pub fn branch_pool(tape: &mut Tape, map: Var, n: usize) -> Result<(Var, Var)> {
    let shape = tape.shape(map).to_vec();
    if shape.len() != 4 {
        return Err(shape_err!("branch_pool expects B×C×H×W, got {:?}", shape));
    }
    if n == 0 || n > shape[2] {
        return Err(CanError::InvalidArgument(format!(
            "cannot cut a height-{} map into {} parts",
            shape[2], n
        )));
    }
    let pool = |tape: &mut Tape, oh: usize| -> Result<Var> {
        let mx = tape.adaptive_pool2d(map, oh, 1, ReduceMode::Max)?;
        let av = tape.adaptive_pool2d(map, oh, 1, ReduceMode::Mean)?;
        tape.concat(&[mx, av], 1)
    };
    let global = pool(tape, 1)?;
    let local = pool(tape, n)?;
    Ok((global, local))
}

/// For a B×2C×n×1 part map, returns n−1 blocks (B×2C×1×1): block k is the
/// spatial max over parts k and k+1 stacked together.
pub fn collaborative_attention(tape: &mut Tape, local: Var) -> Result<Vec<Var>> {
    let shape = tape.shape(local).to_vec();
    if shape.len() != 4 || shape[3] != 1 {
        return Err(shape_err!("collaborative attention expects B×C×n×1, got {:?}", shape));
    }
    let n = shape[2];
    if n < 2 {
        return Err(CanError::InvalidArgument(format!(
            "collaborative attention needs at least 2 parts, got {n}"
        )));
    }
    (0..n - 1)
        .map(|k| {
            let pair = tape.slice(local, 2, k, 2)?;
            let m = tape.reduce(pair, 2, ReduceMode::Max)?;
            tape.reshape(m, &[shape[0], shape[1], 1, 1])
        })
        .collect()
}

/// Projects every pooled stream (B×2C×1×1 or B×2C) with the one shared
/// weight `d × 2C`; returns B×d per stream.
pub fn embed(tape: &mut Tape, store: &ParamStore, streams: &[Var], weight: ParamId) -> Result<Vec<Var>> {
    let w_shape = store.value(weight).shape().to_vec();
    let in_dim = w_shape[1];
    let mut flat = Vec::with_capacity(streams.len());
    let mut batch = None;
    for &s in streams {
        let shape = tape.shape(s).to_vec();
        let b = shape[0];
        let c: usize = shape[1..].iter().product();
        if c != in_dim {
            return Err(shape_err!("embedding expects {} channels, stream has {:?}", in_dim, shape));
        }
        if *batch.get_or_insert(b) != b {
            return Err(shape_err!("streams disagree on batch size"));
        }
        flat.push(tape.reshape(s, &[b, c])?);
    }
    let Some(b) = batch else { return Ok(Vec::new()) };
    let stacked = tape.concat(&flat, 0)?;
    let w = tape.param(store, weight);
    let projected = tape.matmul_nt(stacked, w)?;
    (0..streams.len()).map(|i| tape.slice(projected, 0, i * b, b)).collect()
}
