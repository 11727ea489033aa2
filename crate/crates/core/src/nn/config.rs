use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::rng::derive_seed;
use crate::textenc::AugmentConfig;

/// Encoder hyperparameters. Defaults are the desk-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_hashes: usize,
    pub hash_buckets: usize,
    pub downsample_rate: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub label_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            num_hashes: 4,
            hash_buckets: 512,
            downsample_rate: 4,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_len: 128,
            dropout_p: 0.10,
            label_count: 1,
        }
    }
}

impl ModelConfig {
    /// Desk defaults for a given label count, with `ffn_dim = 4 * hidden_dim`.
    pub fn desk(label_count: usize) -> Self {
        Self { label_count, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        let d = self.hidden_dim;
        if d == 0 || self.num_hashes == 0 || self.num_heads == 0 {
            return bad("hidden_dim, num_hashes and num_heads must be positive".into());
        }
        if !d.is_multiple_of(self.num_hashes) {
            return bad(format!("hidden_dim {d} not divisible by num_hashes {}", self.num_hashes));
        }
        if !d.is_multiple_of(self.num_heads) {
            return bad(format!("hidden_dim {d} not divisible by num_heads {}", self.num_heads));
        }
        if self.downsample_rate == 0 {
            return bad("downsample_rate must be at least 1".into());
        }
        if self.label_count == 0 {
            return bad("label_count must be at least 1".into());
        }
        if self.hash_buckets == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return bad("hash_buckets, ffn_dim and max_len must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} not in [0,1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn slice_dim(&self) -> usize {
        self.hidden_dim / self.num_hashes
    }

    /// Sequence length after downsampling.
    pub fn groups(&self) -> usize {
        self.max_len.div_ceil(self.downsample_rate)
    }
}

/// Codepoint hash family `h_k(cp) = ((cp * a_k + c_k) mod p) mod buckets`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSpec {
    pub prime: u64,
    pub multipliers: Vec<u64>,
    pub offsets: Vec<u64>,
}

/// 2^31 - 1.
pub const HASH_PRIME: u64 = 2_147_483_647;

impl HashSpec {
    /// The fixed constants for `num_hashes` functions.
    pub fn standard(num_hashes: usize) -> Self {
        let odd = |x: u64| (x % (HASH_PRIME - 1)) | 1;
        Self {
            prime: HASH_PRIME,
            multipliers: (0..num_hashes as u64).map(|k| odd(derive_seed(0x4D55_4C54, &[k]))).collect(),
            offsets: (0..num_hashes as u64).map(|k| odd(derive_seed(0x4F46_4653, &[k]))).collect(),
        }
    }

    pub fn bucket(&self, k: usize, codepoint: u32, buckets: usize) -> usize {
        let v = (codepoint as u64 * self.multipliers[k] + self.offsets[k]) % self.prime;
        (v % buckets as u64) as usize
    }
}

/// Optimizer and loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub rng_seed: u64,
    pub augment: AugmentConfig,
    pub p_lang_unknown: f64,
    /// Threshold used for validation exact-match accuracy.
    pub eval_threshold: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 10,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            rng_seed: 0,
            augment: AugmentConfig::default(),
            p_lang_unknown: 0.25,
            eval_threshold: 0.5,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.p_lang_unknown) {
            return bad(format!("p_lang_unknown {} not in [0,1]", self.p_lang_unknown));
        }
        if !(self.eval_threshold > 0.0 && self.eval_threshold < 1.0) {
            return bad(format!("eval_threshold {} not in (0,1)", self.eval_threshold));
        }
        self.augment.validate().map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::desk(20).validate().is_ok());
        let c = ModelConfig { hidden_dim: 63, ..ModelConfig::desk(2) };
        assert!(matches!(c.validate(), Err(ModelError::InvalidConfig(_))));
        let c = ModelConfig { downsample_rate: 0, ..ModelConfig::desk(2) };
        assert!(c.validate().is_err());
        let c = ModelConfig { dropout_p: 1.0, ..ModelConfig::desk(2) };
        assert!(c.validate().is_err());
        let t = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(t.validate().is_err());
    }

    #[test]
    fn hash_constants_are_odd_and_in_range() {
        let h = HashSpec::standard(8);
        for (a, c) in h.multipliers.iter().zip(&h.offsets) {
            assert!(a % 2 == 1 && *a < HASH_PRIME);
            assert!(c % 2 == 1 && *c < HASH_PRIME);
        }
        assert_eq!(HashSpec::standard(4), HashSpec::standard(4));
        assert!(h.bucket(0, 0x10FFFF, 512) < 512);
    }
}
