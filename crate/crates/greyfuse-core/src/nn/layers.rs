//! Parameter-holding layer definitions.
//!
//! A layer registers its tensors in a [`ParamStore`] under a dotted name
//! prefix at construction time and replays itself onto a [`Tape`] each
//! forward pass.

use ndarray::{Array1, ArrayD, Axis, IxDyn};
use rand::Rng;

use super::params::{uniform_fan_in, ParamId, ParamKind, ParamStore};
use super::tape::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = store.add(
            format!("{prefix}.w"),
            uniform_fan_in(&[cout, cin, k, k], fan_in, rng),
            ParamKind::Trainable,
        );
        let b = bias.then(|| {
            store.add(
                format!("{prefix}.b"),
                ArrayD::zeros(IxDyn(&[cout])),
                ParamKind::Trainable,
            )
        });
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(
            format!("{prefix}.w"),
            uniform_fan_in(&[out_features, in_features], in_features, rng),
            ParamKind::Trainable,
        );
        let b = store.add(
            format!("{prefix}.b"),
            ArrayD::zeros(IxDyn(&[out_features])),
            ParamKind::Trainable,
        );
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Batch normalization over axis 1 of an NCHW tensor (or an NxD matrix).
/// Training mode normalizes with batch statistics and updates the running
/// buffers; evaluation mode uses the running buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{prefix}.gamma"),
            ArrayD::ones(IxDyn(&[channels])),
            ParamKind::Trainable,
        );
        let beta = store.add(
            format!("{prefix}.beta"),
            ArrayD::zeros(IxDyn(&[channels])),
            ParamKind::Trainable,
        );
        let running_mean = store.add(
            format!("{prefix}.running_mean"),
            ArrayD::zeros(IxDyn(&[channels])),
            ParamKind::Buffer,
        );
        let running_var = store.add(
            format!("{prefix}.running_var"),
            ArrayD::ones(IxDyn(&[channels])),
            ParamKind::Buffer,
        );
        BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: NodeId,
        training: bool,
    ) -> NodeId {
        let (mean, var) = if training {
            let xv = tape.value(x);
            let c = xv.shape()[1];
            let m = xv.len() / c;
            let mut mean = Array1::<f32>::zeros(c);
            let mut var = Array1::<f32>::zeros(c);
            for (ch, lane) in xv.axis_iter(Axis(1)).enumerate() {
                let mu: f32 = lane.iter().sum::<f32>() / m as f32;
                let v: f32 = lane.iter().map(|x| (x - mu) * (x - mu)).sum::<f32>() / m as f32;
                mean[ch] = mu;
                var[ch] = v;
            }
            // Running buffers track the unbiased variance.
            let unbias = if m > 1 { m as f32 / (m - 1) as f32 } else { 1.0 };
            let rho = self.momentum;
            {
                let rm = &mut store.get_mut(self.running_mean).value;
                rm.zip_mut_with(&mean.clone().into_dyn(), |r, &b| {
                    *r = (1.0 - rho) * *r + rho * b
                });
            }
            {
                let rv = &mut store.get_mut(self.running_var).value;
                rv.zip_mut_with(&var.mapv(|v| v * unbias).into_dyn(), |r, &b| {
                    *r = (1.0 - rho) * *r + rho * b
                });
            }
            (mean, var)
        } else {
            let mean = store
                .get(self.running_mean)
                .value
                .iter()
                .copied()
                .collect::<Array1<f32>>();
            let var = store
                .get(self.running_var)
                .value
                .iter()
                .copied()
                .collect::<Array1<f32>>();
            (mean, var)
        };
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        tape.batch_norm(x, gamma, beta, &mean, &var, self.eps, training)
    }
}

/// Conv + BatchNorm + ReLU, the building unit of both backbones.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv2d::new(
            store,
            &format!("{prefix}.conv"),
            cin,
            cout,
            k,
            stride,
            pad,
            false,
            rng,
        );
        let bn = BatchNorm::new(store, &format!("{prefix}.bn"), cout);
        ConvBnRelu { conv, bn }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: NodeId,
        training: bool,
    ) -> NodeId {
        let x = self.conv.forward(tape, store, x);
        let x = self.bn.forward(tape, store, x, training);
        tape.relu(x)
    }
}
