//! SGD with momentum and L2 weight decay.

use super::params::{ParamKind, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
        }
    }

    /// One update over every trainable parameter:
    /// `v <- mu*v + (g + wd*theta); theta <- theta - lr*v`.
    pub fn step(&self, store: &mut ParamStore, lr: f32) {
        let mu = self.momentum;
        let wd = self.weight_decay;
        for p in store.iter_mut() {
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let value = p.value.as_slice_mut().expect("standard layout");
            let grad = p.grad.as_slice().expect("standard layout");
            let mom = p.momentum.as_slice_mut().expect("standard layout");
            for i in 0..value.len() {
                let g = grad[i] + wd * value[i];
                mom[i] = mu * mom[i] + g;
                value[i] -= lr * mom[i];
            }
        }
    }
}
