//! Stream backbones.
//!
//! Both obey the same output contract: an input of H x W maps to feature
//! maps of H/16 x W/16 when the final downsampling stage is disabled
//! (`final_stride_one`), H/32 x W/32 otherwise. `standard-50` is the
//! bottleneck residual network with stage depths [3, 4, 6, 3] and 2048
//! output channels; `toy-cnn` is a five-stage plain net with 64 output
//! channels, small enough for CPU desk runs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{BatchNorm, Conv2d, ConvBnRelu, NodeId, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "standard-50")]
    Standard50,
    #[serde(rename = "toy-cnn")]
    ToyCnn,
}

impl BackboneKind {
    pub fn out_channels(&self) -> usize {
        match self {
            BackboneKind::Standard50 => 2048,
            BackboneKind::ToyCnn => 64,
        }
    }
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    down: Option<(Conv2d, BatchNorm)>,
}

impl Bottleneck {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        mid: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cout = mid * 4;
        let conv1 = Conv2d::new(store, &format!("{prefix}.conv1"), cin, mid, 1, 1, 0, false, rng);
        let bn1 = BatchNorm::new(store, &format!("{prefix}.bn1"), mid);
        let conv2 = Conv2d::new(
            store,
            &format!("{prefix}.conv2"),
            mid,
            mid,
            3,
            stride,
            1,
            false,
            rng,
        );
        let bn2 = BatchNorm::new(store, &format!("{prefix}.bn2"), mid);
        let conv3 = Conv2d::new(store, &format!("{prefix}.conv3"), mid, cout, 1, 1, 0, false, rng);
        let bn3 = BatchNorm::new(store, &format!("{prefix}.bn3"), cout);
        let down = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(
                    store,
                    &format!("{prefix}.down.conv"),
                    cin,
                    cout,
                    1,
                    stride,
                    0,
                    false,
                    rng,
                ),
                BatchNorm::new(store, &format!("{prefix}.down.bn"), cout),
            )
        });
        Bottleneck {
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            down,
        }
    }

    fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: NodeId, training: bool) -> NodeId {
        let y = self.conv1.forward(tape, store, x);
        let y = self.bn1.forward(tape, store, y, training);
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, store, y);
        let y = self.bn2.forward(tape, store, y, training);
        let y = tape.relu(y);
        let y = self.conv3.forward(tape, store, y);
        let y = self.bn3.forward(tape, store, y, training);
        let shortcut = match &self.down {
            Some((conv, bn)) => {
                let s = conv.forward(tape, store, x);
                bn.forward(tape, store, s, training)
            }
            None => x,
        };
        let y = tape.add(y, shortcut);
        tape.relu(y)
    }
}

enum Body {
    Toy {
        stages: Vec<ConvBnRelu>,
    },
    Resnet {
        stem: ConvBnRelu,
        layers: Vec<Vec<Bottleneck>>,
    },
}

/// One stream's feature extractor; parameters are registered under
/// `<prefix>.*` and not shared with the other stream.
pub struct Backbone {
    kind: BackboneKind,
    body: Body,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: BackboneKind,
        final_stride_one: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let last_stride = if final_stride_one { 1 } else { 2 };
        let body = match kind {
            BackboneKind::ToyCnn => {
                let dims = [(3, 16, 2), (16, 32, 2), (32, 48, 2), (48, 64, 2), (64, 64, last_stride)];
                let stages = dims
                    .iter()
                    .enumerate()
                    .map(|(i, &(cin, cout, stride))| {
                        ConvBnRelu::new(
                            store,
                            &format!("{prefix}.stage{i}"),
                            cin,
                            cout,
                            3,
                            stride,
                            1,
                            rng,
                        )
                    })
                    .collect();
                Body::Toy { stages }
            }
            BackboneKind::Standard50 => {
                let stem = ConvBnRelu::new(store, &format!("{prefix}.stem"), 3, 64, 7, 2, 3, rng);
                let plan: [(usize, usize, usize, usize); 4] = [
                    // (blocks, cin, mid, stride)
                    (3, 64, 64, 1),
                    (4, 256, 128, 2),
                    (6, 512, 256, 2),
                    (3, 1024, 512, last_stride),
                ];
                let mut layers = Vec::with_capacity(4);
                for (li, &(blocks, cin, mid, stride)) in plan.iter().enumerate() {
                    let mut layer = Vec::with_capacity(blocks);
                    for b in 0..blocks {
                        let (cin_b, stride_b) = if b == 0 { (cin, stride) } else { (mid * 4, 1) };
                        layer.push(Bottleneck::new(
                            store,
                            &format!("{prefix}.layer{}.{b}", li + 1),
                            cin_b,
                            mid,
                            stride_b,
                            rng,
                        ));
                    }
                    layers.push(layer);
                }
                Body::Resnet { stem, layers }
            }
        };
        Backbone { kind, body }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParamStore,
        x: NodeId,
        training: bool,
    ) -> NodeId {
        match &self.body {
            Body::Toy { stages } => {
                let mut h = x;
                for s in stages {
                    h = s.forward(tape, store, h, training);
                }
                h
            }
            Body::Resnet { stem, layers } => {
                let mut h = stem.forward(tape, store, x, training);
                h = tape.maxpool2d(h, 3, 2, 1);
                for layer in layers {
                    for block in layer {
                        h = block.forward(tape, store, h, training);
                    }
                }
                h
            }
        }
    }
}
