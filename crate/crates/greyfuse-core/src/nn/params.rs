//! Named parameter storage shared by the network, the optimizer and the
//! checkpoint format.
//!
//! Parameters live outside the computation tape and are addressed by
//! [`ParamId`]. Canonical dotted names (`rgb.layer2.0.bn1.gamma`, ...) give
//! checkpoints a stable key space. Buffers (batch-norm running statistics)
//! are stored alongside trainable parameters but receive no gradient.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use super::Arr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Arr,
    pub grad: Arr,
    pub momentum: Arr,
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// iteration order everywhere (optimizer steps, checksums, checkpoints).
#[derive(Debug, Default, Clone)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Arr, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        let zeros = ArrayD::zeros(value.raw_dim());
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id.0);
        self.entries.push(Parameter {
            name,
            kind,
            grad: zeros.clone(),
            momentum: zeros,
            value,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Accumulate `g` into the gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &Arr) {
        let p = &mut self.entries[id.0];
        debug_assert_eq!(p.kind, ParamKind::Trainable);
        p.grad += g;
    }

    /// Total number of scalar elements across trainable parameters.
    pub fn num_trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and little-endian values of every entry
    /// (parameters and buffers) in insertion order. Two stores with the same
    /// checksum hold bitwise identical state.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.entries {
            hasher.update(p.name.as_bytes());
            hasher.update([0u8]);
            for d in p.value.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Zero-mean scaled-uniform initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Arr {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data length agree")
}
