//! The two-stream network.
//!
//! Two independent backbones (one fed RGB, one fed replicated-grey images)
//! are fused elementwise at their final feature stage into a joint branch.
//! The joint tensor is split into horizontal parts; every branch goes
//! through GAP, an FC embedding and a classifier head. The retrieval
//! feature is the concatenation (grey, rgb, joint) of the branch
//! embeddings.

mod backbone;

pub use backbone::{Backbone, BackboneKind};

use ndarray::{Array2, Array4, ArrayView2, Ix2};
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::dataset::{load_rgb_image, AugmentConfig, ImageRecord, PKBatch};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Linear, NodeId, ParamStore, Tape};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Elementwise sum.
    Plus,
    /// Elementwise product.
    Multiply,
    /// Channel concatenation followed by a learned 1x1 reduction back to
    /// the input channel count.
    Concat,
}

/// Embedding widths per branch; the retrieval feature has
/// `grey + rgb + joint` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchDims {
    pub grey: usize,
    pub rgb: usize,
    pub joint: usize,
}

impl Default for BranchDims {
    fn default() -> Self {
        BranchDims {
            grey: 256,
            rgb: 512,
            joint: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub backbone: BackboneKind,
    /// Number of training identities (`C`). Resolved from the dataset when
    /// left at 0 in a config file.
    pub num_classes: usize,
    pub dims: BranchDims,
    pub n_parts: usize,
    pub fusion: FusionMode,
    /// Disable the last downsampling stage, doubling the final feature map
    /// resolution.
    pub final_stride_one: bool,
    /// Insert a batch-norm between each FC embedding and its classifier.
    pub bn_neck: bool,
    /// L2-normalize rows of extracted features.
    pub l2_normalize: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            backbone: BackboneKind::Standard50,
            num_classes: 0,
            dims: BranchDims::default(),
            n_parts: 2,
            fusion: FusionMode::Plus,
            final_stride_one: true,
            bn_neck: false,
            l2_normalize: false,
        }
    }
}

impl NetworkConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        NetworkConfig {
            num_classes,
            ..NetworkConfig::default()
        }
    }

    /// Desk-scale preset: small backbone, everything else unchanged.
    pub fn toy(num_classes: usize) -> Self {
        NetworkConfig {
            backbone: BackboneKind::ToyCnn,
            num_classes,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config(
                "network.num_classes must be at least 1 (or resolvable from the dataset)".into(),
            ));
        }
        if self.n_parts == 0 {
            return Err(Error::Config("network.n_parts must be at least 1".into()));
        }
        if self.dims.joint % self.n_parts != 0 {
            return Err(Error::Config(format!(
                "joint dim {} not divisible by n_parts {}",
                self.dims.joint, self.n_parts
            )));
        }
        if self.dims.grey == 0 || self.dims.rgb == 0 || self.dims.joint == 0 {
            return Err(Error::Config("branch dims must be positive".into()));
        }
        Ok(())
    }

    pub fn global_dim(&self) -> usize {
        self.dims.grey + self.dims.rgb + self.dims.joint
    }

    /// Input height/width must be divisible by the backbone stride.
    pub fn stride_divisor(&self) -> usize {
        if self.final_stride_one {
            16
        } else {
            32
        }
    }

    /// Column range of a branch inside the concatenated global feature.
    /// Concatenation order is fixed: grey, rgb, joint.
    pub fn branch_columns(&self, branch: Branch) -> Range<usize> {
        let g = self.dims.grey;
        let r = self.dims.rgb;
        let j = self.dims.joint;
        match branch {
            Branch::Grey => 0..g,
            Branch::Rgb => g..g + r,
            Branch::Joint => g + r..g + r + j,
            Branch::Global => 0..g + r + j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Grey,
    Rgb,
    Joint,
    Global,
}

impl Branch {
    pub fn name(&self) -> &'static str {
        match self {
            Branch::Grey => "grey",
            Branch::Rgb => "rgb",
            Branch::Joint => "joint",
            Branch::Global => "global",
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grey" => Ok(Branch::Grey),
            "rgb" => Ok(Branch::Rgb),
            "joint" => Ok(Branch::Joint),
            "global" => Ok(Branch::Global),
            other => Err(Error::InvalidArgument(format!(
                "unknown branch {other:?} (expected grey|rgb|joint|global)"
            ))),
        }
    }
}

/// Tape node ids of every head output from one forward pass.
#[derive(Debug, Clone)]
pub struct HeadNodes {
    pub emb_grey: NodeId,
    pub emb_rgb: NodeId,
    pub emb_parts: Vec<NodeId>,
    pub emb_joint: NodeId,
    pub emb_global: NodeId,
    pub logits_grey: NodeId,
    pub logits_rgb: NodeId,
    pub logits_parts: Vec<NodeId>,
    pub logits_global: NodeId,
}

/// Owned copies of the head outputs.
#[derive(Debug, Clone)]
pub struct NetworkOutput {
    pub emb_grey: Array2<f32>,
    pub emb_rgb: Array2<f32>,
    pub emb_parts: Vec<Array2<f32>>,
    pub emb_joint: Array2<f32>,
    pub emb_global: Array2<f32>,
    pub logits_grey: Array2<f32>,
    pub logits_rgb: Array2<f32>,
    pub logits_parts: Vec<Array2<f32>>,
    pub logits_global: Array2<f32>,
}

impl NetworkOutput {
    pub fn from_tape(tape: &Tape, heads: &HeadNodes) -> Self {
        let mat = |id: NodeId| -> Array2<f32> {
            tape.value(id)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("head outputs are matrices")
                .to_owned()
        };
        NetworkOutput {
            emb_grey: mat(heads.emb_grey),
            emb_rgb: mat(heads.emb_rgb),
            emb_parts: heads.emb_parts.iter().map(|&id| mat(id)).collect(),
            emb_joint: mat(heads.emb_joint),
            emb_global: mat(heads.emb_global),
            logits_grey: mat(heads.logits_grey),
            logits_rgb: mat(heads.logits_rgb),
            logits_parts: heads.logits_parts.iter().map(|&id| mat(id)).collect(),
            logits_global: mat(heads.logits_global),
        }
    }
}

/// Split a feature tensor into `n_parts` contiguous horizontal bands
/// (top-to-bottom order).
pub fn part_split(tape: &mut Tape, t: NodeId, n_parts: usize) -> Result<Vec<NodeId>> {
    let h = tape.value(t).shape()[2];
    if n_parts == 0 || h % n_parts != 0 {
        return Err(Error::Shape(format!(
            "feature height {h} not divisible into {n_parts} parts"
        )));
    }
    let band = h / n_parts;
    Ok((0..n_parts)
        .map(|i| tape.slice_h(t, i * band, (i + 1) * band))
        .collect())
}

struct Head {
    fc: Linear,
    bn: Option<BatchNorm>,
    cls: Linear,
}

impl Head {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        emb_dim: usize,
        num_classes: usize,
        bn_neck: bool,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let fc = Linear::new(store, &format!("{prefix}.fc"), in_dim, emb_dim, rng);
        let bn = bn_neck.then(|| BatchNorm::new(store, &format!("{prefix}.bn"), emb_dim));
        let cls = Linear::new(store, &format!("{prefix}.cls"), emb_dim, num_classes, rng);
        Head { fc, bn, cls }
    }

    /// Returns (embedding, logits). The triplet loss consumes the raw
    /// embedding; the classifier sees the post-BN value when bn_neck is on.
    fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        pooled: NodeId,
        training: bool,
    ) -> (NodeId, NodeId) {
        let emb = self.fc.forward(tape, store, pooled);
        let cls_in = match &self.bn {
            Some(bn) => bn.forward(tape, store, emb, training),
            None => emb,
        };
        let logits = self.cls.forward(tape, store, cls_in);
        (emb, logits)
    }
}

pub struct TwoStreamNet {
    pub cfg: NetworkConfig,
    pub store: ParamStore,
    grey_backbone: Backbone,
    rgb_backbone: Backbone,
    fuse_reduce: Option<Conv2d>,
    head_grey: Head,
    head_rgb: Head,
    head_parts: Vec<Head>,
    global_bn: Option<BatchNorm>,
    global_cls: Linear,
}

impl TwoStreamNet {
    /// Build a freshly initialized network; identical `(cfg, seed)` give
    /// bitwise identical parameters.
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = rng::stream(seed, "model-init", &[]);
        let c = cfg.backbone.out_channels();

        let grey_backbone = Backbone::new(
            &mut store,
            "grey",
            cfg.backbone,
            cfg.final_stride_one,
            &mut rng,
        );
        let rgb_backbone = Backbone::new(
            &mut store,
            "rgb",
            cfg.backbone,
            cfg.final_stride_one,
            &mut rng,
        );
        let fuse_reduce = matches!(cfg.fusion, FusionMode::Concat).then(|| {
            Conv2d::new(&mut store, "fuse.reduce", 2 * c, c, 1, 1, 0, true, &mut rng)
        });

        let part_dim = cfg.dims.joint / cfg.n_parts;
        let head_grey = Head::new(
            &mut store,
            "head.grey",
            c,
            cfg.dims.grey,
            cfg.num_classes,
            cfg.bn_neck,
            &mut rng,
        );
        let head_rgb = Head::new(
            &mut store,
            "head.rgb",
            c,
            cfg.dims.rgb,
            cfg.num_classes,
            cfg.bn_neck,
            &mut rng,
        );
        let head_parts = (0..cfg.n_parts)
            .map(|i| {
                Head::new(
                    &mut store,
                    &format!("head.part{i}"),
                    c,
                    part_dim,
                    cfg.num_classes,
                    cfg.bn_neck,
                    &mut rng,
                )
            })
            .collect();
        let global_bn = cfg
            .bn_neck
            .then(|| BatchNorm::new(&mut store, "head.global.bn", cfg.global_dim()));
        let global_cls = Linear::new(
            &mut store,
            "head.global.cls",
            cfg.global_dim(),
            cfg.num_classes,
            &mut rng,
        );

        Ok(TwoStreamNet {
            cfg,
            store,
            grey_backbone,
            rgb_backbone,
            fuse_reduce,
            head_grey,
            head_rgb,
            head_parts,
            global_bn,
            global_cls,
        })
    }

    fn validate_input(&self, rgb: &Array4<f32>, grey: &Array4<f32>) -> Result<()> {
        if rgb.dim() != grey.dim() {
            return Err(Error::Shape(format!(
                "rgb batch {:?} and grey batch {:?} differ",
                rgb.dim(),
                grey.dim()
            )));
        }
        let (_, c, h, w) = rgb.dim();
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {c}")));
        }
        let div = self.cfg.stride_divisor();
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} incompatible with backbone stride (must be divisible by {div})"
            )));
        }
        Ok(())
    }

    /// Fuse the two stream tensors into the joint tensor.
    pub fn fuse(&self, tape: &mut Tape, t_rgb: NodeId, t_grey: NodeId) -> Result<NodeId> {
        if tape.value(t_rgb).shape() != tape.value(t_grey).shape() {
            return Err(Error::Shape(format!(
                "fuse inputs differ: {:?} vs {:?}",
                tape.value(t_rgb).shape(),
                tape.value(t_grey).shape()
            )));
        }
        Ok(match self.cfg.fusion {
            FusionMode::Plus => tape.add(t_rgb, t_grey),
            FusionMode::Multiply => tape.mul(t_rgb, t_grey),
            FusionMode::Concat => {
                let cat = tape.concat_channels(t_rgb, t_grey);
                self.fuse_reduce
                    .as_ref()
                    .expect("reduce layer exists for concat fusion")
                    .forward(tape, &self.store, cat)
            }
        })
    }

    /// Full forward pass over a paired batch. `training` selects batch-norm
    /// statistics and whether the tape records gradients.
    pub fn forward(
        &mut self,
        rgb: &Array4<f32>,
        grey: &Array4<f32>,
        training: bool,
    ) -> Result<(Tape, HeadNodes)> {
        self.validate_input(rgb, grey)?;
        let mut tape = Tape::new(training);
        let x_rgb = tape.leaf(rgb.clone().into_dyn());
        let x_grey = tape.leaf(grey.clone().into_dyn());

        let t_rgb = self
            .rgb_backbone
            .forward(&mut tape, &mut self.store, x_rgb, training);
        let t_grey = self
            .grey_backbone
            .forward(&mut tape, &mut self.store, x_grey, training);
        let t_joint = self.fuse_with_store(&mut tape, t_rgb, t_grey)?;
        let parts = part_split(&mut tape, t_joint, self.cfg.n_parts)?;

        let v_grey = tape.gap(t_grey);
        let v_rgb = tape.gap(t_rgb);
        let (emb_grey, logits_grey) =
            self.head_grey
                .forward(&mut tape, &mut self.store, v_grey, training);
        let (emb_rgb, logits_rgb) =
            self.head_rgb
                .forward(&mut tape, &mut self.store, v_rgb, training);

        let mut emb_parts = Vec::with_capacity(parts.len());
        let mut logits_parts = Vec::with_capacity(parts.len());
        for (part, head) in parts.iter().zip(&self.head_parts) {
            let pooled = tape.gap(*part);
            let (emb, logits) = head.forward(&mut tape, &mut self.store, pooled, training);
            emb_parts.push(emb);
            logits_parts.push(logits);
        }
        let emb_joint = tape.concat_features(&emb_parts);
        let emb_global = tape.concat_features(&[emb_grey, emb_rgb, emb_joint]);
        let cls_in = match &self.global_bn {
            Some(bn) => bn.forward(&mut tape, &mut self.store, emb_global, training),
            None => emb_global,
        };
        let logits_global = self.global_cls.forward(&mut tape, &self.store, cls_in);

        Ok((
            tape,
            HeadNodes {
                emb_grey,
                emb_rgb,
                emb_parts,
                emb_joint,
                emb_global,
                logits_grey,
                logits_rgb,
                logits_parts,
                logits_global,
            },
        ))
    }

    // `fuse` borrows &self while forward holds &mut self.store mutations;
    // route through a helper that only touches what it needs.
    fn fuse_with_store(&self, tape: &mut Tape, t_rgb: NodeId, t_grey: NodeId) -> Result<NodeId> {
        self.fuse(tape, t_rgb, t_grey)
    }

    /// Forward over a PK batch.
    pub fn forward_batch(&mut self, batch: &PKBatch, training: bool) -> Result<(Tape, HeadNodes)> {
        self.forward(&batch.rgb, &batch.grey, training)
    }

    /// Evaluation-mode feature extraction: rows ordered as `records`, each
    /// row the concatenated (grey, rgb, joint) embedding. Deterministic:
    /// no augmentation randomness, flip disabled.
    pub fn extract_features(
        &mut self,
        records: &[ImageRecord],
        aug: &AugmentConfig,
        batch_size: usize,
    ) -> Result<Array2<f32>> {
        let n = records.len();
        let d = self.cfg.global_dim();
        let mut out = Array2::<f32>::zeros((n, d));
        let bs = batch_size.max(1);
        for start in (0..n).step_by(bs) {
            let end = (start + bs).min(n);
            let mut rgb = Array4::<f32>::zeros((end - start, 3, aug.height, aug.width));
            let mut grey = rgb.clone();
            for (bi, rec) in records[start..end].iter().enumerate() {
                let img = load_rgb_image(&rec.image_path)?;
                let pair = aug.eval_pair(&img);
                rgb.index_axis_mut(ndarray::Axis(0), bi).assign(&pair.rgb);
                grey.index_axis_mut(ndarray::Axis(0), bi).assign(&pair.grey);
            }
            let (tape, heads) = self.forward(&rgb, &grey, false)?;
            let emb = tape
                .value(heads.emb_global)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("global embedding is a matrix");
            out.slice_mut(ndarray::s![start..end, ..]).assign(&emb);
        }
        if self.cfg.l2_normalize {
            for mut row in out.rows_mut() {
                let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm > 0.0 {
                    row.mapv_inplace(|v| v / norm);
                }
            }
        }
        Ok(out)
    }
}

/// Select the columns of one branch (or a concatenation of branches) from a
/// global feature matrix, preserving concatenation order.
pub fn branch_submatrix(
    features: &ArrayView2<f32>,
    cfg: &NetworkConfig,
    branches: &[Branch],
) -> Result<Array2<f32>> {
    if features.ncols() != cfg.global_dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match configured global dim {}",
            features.ncols(),
            cfg.global_dim()
        )));
    }
    let mut cols: Vec<usize> = Vec::new();
    for b in branches {
        cols.extend(cfg.branch_columns(*b));
    }
    let mut out = Array2::<f32>::zeros((features.nrows(), cols.len()));
    for (oi, &c) in cols.iter().enumerate() {
        out.column_mut(oi).assign(&features.column(c));
    }
    Ok(out)
}

/// Batch shape helper used by tests and the checkpoint config echo.
pub fn expected_feature_map(
    cfg: &NetworkConfig,
    height: usize,
    width: usize,
) -> (usize, usize, usize) {
    let div = cfg.stride_divisor();
    (cfg.backbone.out_channels(), height / div, width / div)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn toy_cfg() -> NetworkConfig {
        NetworkConfig::toy(4)
    }

    fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Array4<f32> {
        let mut rng = crate::rng::stream(seed, "batch", &[]);
        Array4::from_shape_fn((n, 3, h, w), |_| rng.gen_range(-1.0f32..1.0))
    }

    #[test]
    fn toy_backbone_obeys_the_shape_contract() {
        let mut net = TwoStreamNet::new(toy_cfg(), 1).unwrap();
        let rgb = random_batch(2, 96, 32, 3);
        let grey = random_batch(2, 96, 32, 4);
        let (tape, heads) = net.forward(&rgb, &grey, false).unwrap();
        let out = NetworkOutput::from_tape(&tape, &heads);
        assert_eq!(out.emb_grey.dim(), (2, 256));
        assert_eq!(out.emb_rgb.dim(), (2, 512));
        assert_eq!(out.emb_joint.dim(), (2, 512));
        assert_eq!(out.emb_global.dim(), (2, 1280));
        assert_eq!(out.emb_parts.len(), 2);
        assert_eq!(out.emb_parts[0].dim(), (2, 256));
        assert_eq!(out.logits_global.dim(), (2, 4));
        assert_eq!(out.logits_parts.len(), 2);
    }

    #[test]
    fn final_stride_switch_halves_the_map() {
        let mut cfg = toy_cfg();
        let mut net = TwoStreamNet::new(cfg.clone(), 1).unwrap();
        let (c, h, w) = expected_feature_map(&net.cfg, 96, 32);
        assert_eq!((c, h, w), (64, 6, 2));

        cfg.final_stride_one = false;
        net = TwoStreamNet::new(cfg, 1).unwrap();
        let (c, h, w) = expected_feature_map(&net.cfg, 96, 32);
        assert_eq!((c, h, w), (64, 3, 1));
    }

    #[test]
    fn incompatible_input_size_is_rejected() {
        let mut net = TwoStreamNet::new(toy_cfg(), 1).unwrap();
        let rgb = random_batch(1, 90, 32, 5);
        let grey = rgb.clone();
        assert!(matches!(
            net.forward(&rgb, &grey, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn eval_mode_is_deterministic_and_rowwise() {
        let mut net = TwoStreamNet::new(toy_cfg(), 7).unwrap();
        let one = random_batch(1, 96, 32, 9);
        let mut dup = Array4::<f32>::zeros((2, 3, 96, 32));
        dup.index_axis_mut(ndarray::Axis(0), 0)
            .assign(&one.index_axis(ndarray::Axis(0), 0));
        dup.index_axis_mut(ndarray::Axis(0), 1)
            .assign(&one.index_axis(ndarray::Axis(0), 0));
        let (tape, heads) = net.forward(&dup, &dup, false).unwrap();
        let out = NetworkOutput::from_tape(&tape, &heads);
        assert_eq!(
            out.emb_global.row(0).to_owned(),
            out.emb_global.row(1).to_owned(),
            "identical inputs give identical rows in eval mode"
        );
        let (tape2, heads2) = net.forward(&dup, &dup, false).unwrap();
        let out2 = NetworkOutput::from_tape(&tape2, &heads2);
        assert_eq!(out.emb_global, out2.emb_global, "repeat calls agree bitwise");
    }

    #[test]
    fn rgb_embedding_ignores_the_grey_stream_under_plus_fusion() {
        let mut net = TwoStreamNet::new(toy_cfg(), 3).unwrap();
        let rgb = random_batch(2, 96, 32, 11);
        let grey_a = random_batch(2, 96, 32, 12);
        let grey_b = random_batch(2, 96, 32, 13);
        let (t1, h1) = net.forward(&rgb, &grey_a, false).unwrap();
        let o1 = NetworkOutput::from_tape(&t1, &h1);
        let (t2, h2) = net.forward(&rgb, &grey_b, false).unwrap();
        let o2 = NetworkOutput::from_tape(&t2, &h2);
        assert_eq!(o1.emb_rgb, o2.emb_rgb, "rgb head sees only the rgb stream");
        assert_ne!(o1.emb_joint, o2.emb_joint, "joint head sees the grey stream");
        assert_ne!(o1.emb_grey, o2.emb_grey);
    }

    #[test]
    fn fusion_identities() {
        for (mode, fill, check_equal) in [
            (FusionMode::Plus, 0.0f32, true),
            (FusionMode::Multiply, 1.0, true),
        ] {
            let cfg = NetworkConfig {
                fusion: mode,
                ..toy_cfg()
            };
            let net = TwoStreamNet::new(cfg, 1).unwrap();
            let mut tape = Tape::new(false);
            let a = tape.leaf(
                crate::nn::Arr::from_shape_fn(ndarray::IxDyn(&[1, 4, 6, 2]), |ix| {
                    (ix[1] + 2 * ix[2] + ix[3]) as f32 * 0.25 - 1.0
                }),
            );
            let b = tape.leaf(crate::nn::Arr::from_elem(ndarray::IxDyn(&[1, 4, 6, 2]), fill));
            let fused = net.fuse(&mut tape, a, b).unwrap();
            if check_equal {
                assert_eq!(tape.value(fused), tape.value(a), "{mode:?} identity");
            }
            // plus(t, t) = 2t
            if matches!(mode, FusionMode::Plus) {
                let doubled = net.fuse(&mut tape, a, a).unwrap();
                assert_eq!(
                    tape.value(doubled).to_owned(),
                    tape.value(a).mapv(|v| 2.0 * v)
                );
            }
        }
    }

    #[test]
    fn concat_fusion_restores_channel_count() {
        let cfg = NetworkConfig {
            fusion: FusionMode::Concat,
            ..toy_cfg()
        };
        let mut net = TwoStreamNet::new(cfg, 2).unwrap();
        let rgb = random_batch(1, 96, 32, 20);
        let grey = random_batch(1, 96, 32, 21);
        let (tape, heads) = net.forward(&rgb, &grey, false).unwrap();
        let out = NetworkOutput::from_tape(&tape, &heads);
        assert_eq!(out.emb_global.dim(), (1, 1280));
    }

    #[test]
    fn part_split_requires_divisible_height() {
        let mut tape = Tape::new(false);
        let t = tape.leaf(crate::nn::Arr::zeros(ndarray::IxDyn(&[1, 8, 24, 8])));
        assert_eq!(part_split(&mut tape, t, 2).unwrap().len(), 2);
        assert_eq!(part_split(&mut tape, t, 1).unwrap().len(), 1);
        assert!(part_split(&mut tape, t, 5).is_err());
    }

    #[test]
    fn branch_submatrix_slices_the_concatenation() {
        let cfg = toy_cfg();
        let mut m = Array2::<f32>::zeros((2, cfg.global_dim()));
        for (j, v) in m.row_mut(0).iter_mut().enumerate() {
            *v = j as f32;
        }
        let rgb = branch_submatrix(&m.view(), &cfg, &[Branch::Rgb]).unwrap();
        assert_eq!(rgb.dim(), (2, 512));
        assert_eq!(rgb[(0, 0)], 256.0);
        assert_eq!(rgb[(0, 511)], 767.0);
        let combo = branch_submatrix(&m.view(), &cfg, &[Branch::Grey, Branch::Joint]).unwrap();
        assert_eq!(combo.dim(), (2, 768));
        assert_eq!(combo[(0, 256)], 768.0);
    }

    #[test]
    fn gradients_reach_every_parameter_group() {
        use crate::losses::{total_loss, LossConfig};
        let mut net = TwoStreamNet::new(toy_cfg(), 5).unwrap();
        let rgb = random_batch(8, 96, 32, 30);
        let grey = random_batch(8, 96, 32, 31);
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let (mut tape, heads) = net.forward(&rgb, &grey, true).unwrap();
        let (node, report) =
            total_loss(&mut tape, &heads, &labels, &LossConfig::default()).unwrap();
        assert!(report.total.is_finite());
        net.store.zero_grads();
        tape.backward(node, &mut net.store);

        let mut zero_grad_params = Vec::new();
        for p in net.store.iter() {
            if p.kind == crate::nn::ParamKind::Trainable {
                let norm: f32 = p.grad.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm == 0.0 {
                    zero_grad_params.push(p.name.clone());
                }
            }
        }
        assert!(
            zero_grad_params.is_empty(),
            "parameters with zero gradient: {zero_grad_params:?}"
        );
    }
}
