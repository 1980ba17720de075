//! Reverse-mode computation tape.
//!
//! Each training step builds a fresh [`Tape`]: leaves are batch inputs and
//! parameter snapshots, interior nodes record the op plus whatever the
//! backward pass needs (im2col patches, argmax indices, normalized
//! activations). [`Tape::backward`] walks nodes in reverse insertion order —
//! already a topological order — and accumulates parameter gradients into the
//! [`ParamStore`]. Everything runs on one thread with a fixed reduction
//! order, so results are bitwise reproducible.

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix4, IxDyn, Slice};

use super::conv;
use super::params::{ParamId, ParamStore};
use super::Arr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    Add,
    Mul,
    Scale(f32),
    Relu,
    /// parents: [x, w] or [x, w, b]
    Conv2d {
        stride: usize,
        pad: usize,
        cols: Option<Array2<f32>>,
    },
    MaxPool2d {
        argmax: Option<Vec<usize>>,
    },
    /// parents: [x, gamma, beta]; `batch_stats` false means running
    /// statistics were used (evaluation mode).
    BatchNorm {
        batch_stats: bool,
        xhat: Option<Arr>,
        inv_std: Option<Array1<f32>>,
    },
    Gap,
    /// parents: [x, w, b]
    Linear,
    SliceH {
        from: usize,
        to: usize,
    },
    /// Channel concatenation of two tensors (axis 1 of NCHW).
    ConcatC,
    /// Feature concatenation of k matrices (axis 1 of NxD).
    ConcatFeat {
        dims: Vec<usize>,
    },
    /// Scalar-valued function with precomputed input gradients
    /// (cross-entropy, triplet, ...). Gradients scale linearly with the
    /// upstream scalar.
    ScalarFn {
        grads: Option<Vec<Arr>>,
    },
    /// y = sum_i weights[i] * parent_i over same-shaped inputs.
    WeightedSum {
        weights: Vec<f32>,
    },
}

struct Node {
    value: Arr,
    parents: Vec<usize>,
    param: Option<ParamId>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Tape {
    /// `recording = false` gives an inference-only tape: ops skip their
    /// backward caches and [`Tape::backward`] must not be called.
    pub fn new(recording: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            recording,
        }
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn value(&self, id: NodeId) -> &Arr {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f32 {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.len(), 1);
        v.iter().next().copied().unwrap()
    }

    fn push(&mut self, value: Arr, parents: Vec<usize>, param: Option<ParamId>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            parents,
            param,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Arr) -> NodeId {
        self.push(value, vec![], None, Op::Leaf)
    }

    /// Leaf node backed by a parameter; its gradient accumulates into the
    /// store during [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.get(id).value.clone();
        self.push(value, vec![], Some(id), Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "add: shape mismatch"
        );
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(value, vec![a.0, b.0], None, Op::Add)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            "mul: shape mismatch"
        );
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(value, vec![a.0, b.0], None, Op::Mul)
    }

    pub fn scale(&mut self, x: NodeId, c: f32) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v * c);
        self.push(value, vec![x.0], None, Op::Scale(c))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.mapv(|v| v.max(0.0));
        self.push(value, vec![x.0], None, Op::Relu)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let xv = as4(&self.nodes[x.0].value);
        let wv = as4(&self.nodes[w.0].value);
        let bv = b.map(|bb| as1(&self.nodes[bb.0].value));
        let (out, cols) = conv::conv2d_forward(&xv, &wv, bv.as_ref(), stride, pad);
        let mut parents = vec![x.0, w.0];
        if let Some(bb) = b {
            parents.push(bb.0);
        }
        let cols = self.recording.then_some(cols);
        self.push(
            out.into_dyn(),
            parents,
            None,
            Op::Conv2d { stride, pad, cols },
        )
    }

    pub fn maxpool2d(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        let xv = as4(&self.nodes[x.0].value);
        let (out, argmax) = conv::maxpool2d_forward(&xv, k, stride, pad);
        let argmax = self.recording.then_some(argmax);
        self.push(
            out.into_dyn(),
            vec![x.0],
            None,
            Op::MaxPool2d { argmax },
        )
    }

    /// Normalize per channel (axis 1) with the supplied statistics.
    /// The caller computes batch or running statistics and updates any
    /// running buffers; `batch_stats` records which flavour was used.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &Array1<f32>,
        var: &Array1<f32>,
        eps: f32,
        batch_stats: bool,
    ) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let c = xv.shape()[1];
        assert_eq!(mean.len(), c);
        assert_eq!(var.len(), c);
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let gamma_v = as1(&self.nodes[gamma.0].value).to_owned();
        let beta_v = as1(&self.nodes[beta.0].value).to_owned();

        let mut xhat = xv.clone();
        apply_per_channel(&mut xhat, |ch, v| (v - mean[ch]) * inv_std[ch]);
        let mut out = xhat.clone();
        apply_per_channel(&mut out, |ch, v| v * gamma_v[ch] + beta_v[ch]);

        let (xhat, inv_std) = if self.recording {
            (Some(xhat), Some(inv_std))
        } else {
            (None, None)
        };
        self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            None,
            Op::BatchNorm {
                batch_stats,
                xhat,
                inv_std,
            },
        )
    }

    /// Global average pooling: (N,C,H,W) -> (N,C).
    pub fn gap(&mut self, x: NodeId) -> NodeId {
        let xv = as4(&self.nodes[x.0].value);
        let (n, c, h, w) = xv.dim();
        let mut out = Array2::<f32>::zeros((n, c));
        for b in 0..n {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for y in 0..h {
                    for xx in 0..w {
                        acc += xv[(b, ch, y, xx)];
                    }
                }
                out[(b, ch)] = acc / (h * w) as f32;
            }
        }
        self.push(out.into_dyn(), vec![x.0], None, Op::Gap)
    }

    /// x (N,I) * w^T (I,O) + b -> (N,O)
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xv = as2(&self.nodes[x.0].value);
        let wv = as2(&self.nodes[w.0].value);
        let bv = as1(&self.nodes[b.0].value);
        let mut out = xv.dot(&wv.t());
        out += &bv.insert_axis(Axis(0));
        self.push(out.into_dyn(), vec![x.0, w.0, b.0], None, Op::Linear)
    }

    /// Horizontal band x[:, :, from..to, :].
    pub fn slice_h(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert!(from < to && to <= xv.shape()[2], "slice_h out of range");
        let out = xv
            .slice_axis(Axis(2), Slice::from(from..to))
            .as_standard_layout()
            .to_owned();
        self.push(out, vec![x.0], None, Op::SliceH { from, to })
    }

    /// Channel concatenation (axis 1) of two NCHW tensors.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out = ndarray::concatenate(Axis(1), &[av.view(), bv.view()])
            .expect("concat_channels shapes");
        self.push(
            out.as_standard_layout().to_owned(),
            vec![a.0, b.0],
            None,
            Op::ConcatC,
        )
    }

    /// Feature concatenation (axis 1) of (N,D_i) matrices.
    pub fn concat_features(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let views: Vec<_> = xs.iter().map(|id| self.nodes[id.0].value.view()).collect();
        let dims: Vec<usize> = views.iter().map(|v| v.shape()[1]).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_features shapes");
        let parents = xs.iter().map(|id| id.0).collect();
        self.push(
            out.as_standard_layout().to_owned(),
            parents,
            None,
            Op::ConcatFeat { dims },
        )
    }

    /// Scalar node computed outside the tape, with precomputed gradients
    /// w.r.t. each parent.
    pub fn scalar_fn(&mut self, value: f32, parents: &[NodeId], grads: Vec<Arr>) -> NodeId {
        debug_assert_eq!(parents.len(), grads.len());
        for (p, g) in parents.iter().zip(&grads) {
            debug_assert_eq!(self.nodes[p.0].value.shape(), g.shape());
        }
        let parents = parents.iter().map(|id| id.0).collect();
        let grads = self.recording.then_some(grads);
        self.push(
            scalar_arr(value),
            parents,
            None,
            Op::ScalarFn { grads },
        )
    }

    /// Weighted sum of same-shaped nodes (used for loss totals).
    pub fn weighted_sum(&mut self, xs: &[NodeId], weights: &[f32]) -> NodeId {
        assert_eq!(xs.len(), weights.len());
        assert!(!xs.is_empty());
        let mut value: Arr = self.nodes[xs[0].0].value.mapv(|v| v * weights[0]);
        for (id, &w) in xs.iter().zip(weights).skip(1) {
            value.zip_mut_with(&self.nodes[id.0].value, |acc, &v| *acc += w * v);
        }
        let parents = xs.iter().map(|id| id.0).collect();
        self.push(
            value,
            parents,
            None,
            Op::WeightedSum {
                weights: weights.to_vec(),
            },
        )
    }

    /// Reverse pass from `loss` (must be scalar-shaped). Parameter gradients
    /// are accumulated into `store`; call `store.zero_grads()` beforehand if
    /// fresh gradients are wanted.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) {
        assert!(self.recording, "backward on a non-recording tape");
        let mut grads: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(pid) = self.nodes[i].param {
                store.accumulate_grad(pid, &g);
                continue;
            }
            for (parent, pg) in self.op_backward(i, &g) {
                match &mut grads[parent] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
        }
    }

    fn op_backward(&self, i: usize, g: &Arr) -> Vec<(usize, Arr)> {
        let node = &self.nodes[i];
        let p = &node.parents;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add => vec![(p[0], g.clone()), (p[1], g.clone())],
            Op::Mul => {
                let a = &self.nodes[p[0]].value;
                let b = &self.nodes[p[1]].value;
                vec![(p[0], g * b), (p[1], g * a)]
            }
            Op::Scale(c) => vec![(p[0], g.mapv(|v| v * c))],
            Op::Relu => {
                let mut dx = g.clone();
                dx.zip_mut_with(&node.value, |d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
                vec![(p[0], dx)]
            }
            Op::Conv2d { stride, pad, cols } => {
                let cols = cols.as_ref().expect("conv cache");
                let w = as4(&self.nodes[p[1]].value);
                let xshape = self.nodes[p[0]].value.shape();
                let with_bias = p.len() == 3;
                let grads = conv::conv2d_backward(
                    &as4(g),
                    cols,
                    &w,
                    (xshape[0], xshape[1], xshape[2], xshape[3]),
                    *stride,
                    *pad,
                    with_bias,
                );
                let mut out = vec![
                    (p[0], grads.dx.into_dyn()),
                    (p[1], grads.dw.into_dyn()),
                ];
                if let Some(db) = grads.db {
                    out.push((p[2], db.into_dyn()));
                }
                out
            }
            Op::MaxPool2d { argmax, .. } => {
                let argmax = argmax.as_ref().expect("maxpool cache");
                let xshape = self.nodes[p[0]].value.shape();
                let dx = conv::maxpool2d_backward(
                    &as4(g),
                    argmax,
                    (xshape[0], xshape[1], xshape[2], xshape[3]),
                );
                vec![(p[0], dx.into_dyn())]
            }
            Op::BatchNorm {
                batch_stats,
                xhat,
                inv_std,
            } => {
                let xhat = xhat.as_ref().expect("bn cache");
                let inv_std = inv_std.as_ref().expect("bn cache");
                let gamma = as1(&self.nodes[p[1]].value).to_owned();
                let c = xhat.shape()[1];
                let m = (xhat.len() / c) as f32;

                // Per-channel reductions of g and g*xhat.
                let mut dbeta = Array1::<f32>::zeros(c);
                let mut dgamma = Array1::<f32>::zeros(c);
                per_channel_fold(g, |ch, v| dbeta[ch] += v);
                {
                    let gx = g * xhat;
                    per_channel_fold(&gx, |ch, v| dgamma[ch] += v);
                }

                let mut dx = g.clone();
                if *batch_stats {
                    // dx = gamma*inv_std * (g - dbeta/m - xhat*dgamma/m)
                    let mut tmp = xhat.clone();
                    apply_per_channel(&mut tmp, |ch, v| v * dgamma[ch] / m);
                    dx.zip_mut_with(&tmp, |d, &t| *d -= t);
                    apply_per_channel(&mut dx, |ch, v| {
                        (v - dbeta[ch] / m) * gamma[ch] * inv_std[ch]
                    });
                } else {
                    apply_per_channel(&mut dx, |ch, v| v * gamma[ch] * inv_std[ch]);
                }
                vec![
                    (p[0], dx),
                    (p[1], dgamma.into_dyn()),
                    (p[2], dbeta.into_dyn()),
                ]
            }
            Op::Gap => {
                let xshape = self.nodes[p[0]].value.shape();
                let (n, c, h, w) = (xshape[0], xshape[1], xshape[2], xshape[3]);
                let g2 = as2(g);
                let mut dx = ArrayD::<f32>::zeros(IxDyn(&[n, c, h, w]));
                let scale = 1.0 / (h * w) as f32;
                let ds = dx.as_slice_mut().expect("freshly allocated");
                for b in 0..n {
                    for ch in 0..c {
                        let gv = g2[(b, ch)] * scale;
                        let base = (b * c + ch) * h * w;
                        for t in 0..h * w {
                            ds[base + t] += gv;
                        }
                    }
                }
                vec![(p[0], dx)]
            }
            Op::Linear => {
                let x = as2(&self.nodes[p[0]].value);
                let w = as2(&self.nodes[p[1]].value);
                let g2 = as2(g);
                let dx = g2.dot(&w);
                let dw = g2.t().dot(&x);
                let db = g2.sum_axis(Axis(0));
                vec![
                    (p[0], dx.into_dyn()),
                    (p[1], dw.into_dyn()),
                    (p[2], db.into_dyn()),
                ]
            }
            Op::SliceH { from, to } => {
                let xshape = self.nodes[p[0]].value.shape();
                let mut dx = ArrayD::<f32>::zeros(IxDyn(xshape));
                dx.slice_axis_mut(Axis(2), Slice::from(*from..*to))
                    .assign(g);
                vec![(p[0], dx)]
            }
            Op::ConcatC => {
                let c0 = self.nodes[p[0]].value.shape()[1];
                let c1 = self.nodes[p[1]].value.shape()[1];
                let ga = g
                    .slice_axis(Axis(1), Slice::from(0..c0))
                    .as_standard_layout()
                    .to_owned();
                let gb = g
                    .slice_axis(Axis(1), Slice::from(c0..c0 + c1))
                    .as_standard_layout()
                    .to_owned();
                vec![(p[0], ga), (p[1], gb)]
            }
            Op::ConcatFeat { dims } => {
                let mut out = Vec::with_capacity(p.len());
                let mut off = 0;
                for (parent, d) in p.iter().zip(dims) {
                    let gp = g
                        .slice_axis(Axis(1), Slice::from(off..off + d))
                        .as_standard_layout()
                        .to_owned();
                    out.push((*parent, gp));
                    off += d;
                }
                out
            }
            Op::ScalarFn { grads } => {
                let grads = grads.as_ref().expect("scalar_fn cache");
                let gs = g.iter().next().copied().unwrap();
                p.iter()
                    .zip(grads)
                    .map(|(parent, pg)| (*parent, pg.mapv(|v| v * gs)))
                    .collect()
            }
            Op::WeightedSum { weights } => p
                .iter()
                .zip(weights)
                .map(|(parent, &w)| (*parent, g.mapv(|v| v * w)))
                .collect(),
        }
    }
}

pub(crate) fn scalar_arr(v: f32) -> Arr {
    ArrayD::from_elem(IxDyn(&[1]), v)
}

fn as1(a: &Arr) -> ndarray::ArrayView1<'_, f32> {
    a.view().into_dimensionality::<Ix1>().expect("1-d tensor")
}

fn as2(a: &Arr) -> ndarray::ArrayView2<'_, f32> {
    a.view().into_dimensionality::<Ix2>().expect("2-d tensor")
}

fn as4(a: &Arr) -> ndarray::ArrayView4<'_, f32> {
    a.view().into_dimensionality::<Ix4>().expect("4-d tensor")
}

/// In-place per-channel map over a tensor whose axis 1 is channels.
fn apply_per_channel(a: &mut Arr, mut f: impl FnMut(usize, f32) -> f32) {
    let c = a.shape()[1];
    let inner: usize = a.shape()[2..].iter().product();
    let s = a.as_slice_mut().expect("standard layout");
    for (i, v) in s.iter_mut().enumerate() {
        let ch = (i / inner) % c;
        *v = f(ch, *v);
    }
}

/// Per-channel fold (axis 1 is channels).
fn per_channel_fold(a: &Arr, mut f: impl FnMut(usize, f32)) {
    let c = a.shape()[1];
    let inner: usize = a.shape()[2..].iter().product();
    if let Some(s) = a.as_slice() {
        for (i, &v) in s.iter().enumerate() {
            f((i / inner) % c, v);
        }
    } else {
        for (ix, &v) in a.indexed_iter() {
            f(ix[1], v);
        }
    }
}
