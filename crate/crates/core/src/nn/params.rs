//! Trainable parameter storage.
//!
//! All parameters of a model live in one `ParamStore` and are addressed by
//! `ParamId`. Parameter groups (shared encoder vs per-task heads) are plain
//! id lists, which keeps group-scoped operations (clipping, optimizer steps,
//! checksums) trivial.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::nn::tensor::Tensor;

/// Handle to one parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct ParamNode {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<ParamNode>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(ParamNode {
            name: name.into(),
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn node(&self, id: ParamId) -> &ParamNode {
        &self.params[id.0]
    }

    pub fn node_mut(&mut self, id: ParamId) -> &mut ParamNode {
        &mut self.params[id.0]
    }

    pub fn zero_grads(&mut self, ids: &[ParamId]) {
        for id in ids {
            for g in self.params[id.0].grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn zero_all_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn total_elements(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.params[id.0].value.numel()).sum()
    }

    /// SHA-256 over the little-endian bytes of the listed parameter values.
    /// Used to audit group isolation (a group's checksum changes iff one of
    /// its tensors changed).
    pub fn checksum(&self, ids: &[ParamId]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for id in ids {
            for v in self.params[id.0].value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    pub fn snapshot(&self, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter().map(|id| self.params[id.0].value.clone()).collect()
    }

    pub fn restore(&mut self, ids: &[ParamId], snapshot: &[Tensor]) -> Result<()> {
        if ids.len() != snapshot.len() {
            return Err(CoreError::Shape("snapshot length mismatch".into()));
        }
        for (id, t) in ids.iter().zip(snapshot) {
            if self.params[id.0].value.shape() != t.shape() {
                return Err(CoreError::Shape(format!(
                    "snapshot shape mismatch for {}",
                    self.params[id.0].name
                )));
            }
            self.params[id.0].value = t.clone();
        }
        Ok(())
    }
}

/// Xavier/Glorot uniform initialization for a weight matrix.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("consistent shape")
}

/// Zero-mean Gaussian init, used for embedding tables.
pub fn normal_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    // Box-Muller keeps us off rand_distr for one distribution.
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * std);
        if data.len() < numel {
            data.push(r * theta.sin() * std);
        }
    }
    Tensor::new(shape, data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn grads_zeroed_selectively() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(vec![2]), true);
        let b = store.add("b", Tensor::zeros(vec![2]), true);
        store.node_mut(a).grad.data_mut()[0] = 1.0;
        store.node_mut(b).grad.data_mut()[0] = 2.0;
        store.zero_grads(&[a]);
        assert_eq!(store.node(a).grad.data(), &[0.0, 0.0]);
        assert_eq!(store.node(b).grad.data()[0], 2.0);
    }

    #[test]
    fn checksum_tracks_group_changes() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros(vec![3]), true);
        let b = store.add("b", Tensor::zeros(vec![3]), true);
        let before_a = store.checksum(&[a]);
        let before_b = store.checksum(&[b]);
        store.node_mut(a).value.data_mut()[1] = 5.0;
        assert_ne!(store.checksum(&[a]), before_a);
        assert_eq!(store.checksum(&[b]), before_b);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            xavier_uniform(&mut r1, 4, 8).data(),
            xavier_uniform(&mut r2, 4, 8).data()
        );
        assert_eq!(
            normal_init(&mut r1, vec![5], 0.1).data(),
            normal_init(&mut r2, vec![5], 0.1).data()
        );
    }
}
