//! Network configuration and the named-tensor parameter store.

use indexmap::IndexMap;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("d_model {d_model} must be divisible by num_heads {num_heads}")]
    HeadsDontDivide { d_model: usize, num_heads: usize },
    #[error("{field} must be >= 1")]
    ZeroField { field: &'static str },
    #[error("ln_epsilon must be positive, got {0}")]
    BadEpsilon(f64),
}

/// Geometry of the emotion injection transformer and its V-A encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EITConfig {
    /// Number of emotion injection blocks.
    pub num_blocks: usize,
    /// Transformer hidden width.
    pub d_model: usize,
    /// Width of the prompt-feature space the network maps into and out of.
    pub d_prompt: usize,
    /// Fixed token-sequence length (shorter inputs are right-padded).
    pub l: usize,
    /// Tokens emitted per V-A scalar by the encoder MLPs.
    #[serde(default = "default_l_e")]
    pub l_e: usize,
    pub num_heads: usize,
    /// Feed-forward hidden width.
    pub d_ffn: usize,
    /// Hidden width of each V-A encoder MLP.
    pub mlp_hidden: usize,
    #[serde(default = "default_ln_epsilon")]
    pub ln_epsilon: f64,
    /// Debug switch restoring the causal mask the architecture removes.
    #[serde(default)]
    pub causal_mask: bool,
}

fn default_l_e() -> usize {
    1
}

fn default_ln_epsilon() -> f64 {
    1e-5
}

impl EITConfig {
    /// GPT-2-small geometry, 12 blocks, sized for a 77x2048 prompt space.
    pub fn full_scale() -> Self {
        Self {
            num_blocks: 12,
            d_model: 768,
            d_prompt: 2048,
            l: 77,
            l_e: 1,
            num_heads: 12,
            d_ffn: 3072,
            mlp_hidden: 256,
            ln_epsilon: 1e-5,
            causal_mask: false,
        }
    }

    /// Tiny geometry for desk-scale tests.
    pub fn desk_scale() -> Self {
        Self {
            num_blocks: 2,
            d_model: 8,
            d_prompt: 16,
            l: 4,
            l_e: 1,
            num_heads: 2,
            d_ffn: 16,
            mlp_hidden: 16,
            ln_epsilon: 1e-5,
            causal_mask: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("num_blocks", self.num_blocks),
            ("d_model", self.d_model),
            ("d_prompt", self.d_prompt),
            ("l", self.l),
            ("l_e", self.l_e),
            ("num_heads", self.num_heads),
            ("d_ffn", self.d_ffn),
            ("mlp_hidden", self.mlp_hidden),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField { field });
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(ConfigError::HeadsDontDivide {
                d_model: self.d_model,
                num_heads: self.num_heads,
            });
        }
        if !(self.ln_epsilon > 0.0) {
            return Err(ConfigError::BadEpsilon(self.ln_epsilon));
        }
        Ok(())
    }

    /// Parses the declarative key-value config format.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Ordered map of named parameter tensors. Insertion order is fixed by the
/// initializer, which keeps optimizer sweeps and checkpoints deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Array2<f64>>,
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(
            self.entries.insert(name.clone(), value).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Adds `grad` into the accumulator entry of the same name.
    pub fn accumulate(&mut self, name: &str, grad: &Array2<f64>) {
        *self.get_mut(name) += grad;
    }

    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Array2::zeros(v.raw_dim())))
            .collect();
        Self { entries }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// All learnable parameters plus the geometry they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct EITParams {
    pub config: EITConfig,
    pub set: ParamSet,
}

impl EITParams {
    /// Fresh parameters: truncated-normal (std 0.02) weights, zero biases,
    /// unit LayerNorm scales, zero positional embedding, and a zero output
    /// projection so the network starts as the identity mapping.
    pub fn init(config: &EITConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::default();
        let c = config;
        let e_dim = c.l_e * c.d_model;

        let mut w = |set: &mut ParamSet, name: String, rows: usize, cols: usize| {
            set.insert(name, trunc_normal(&mut rng, rows, cols, 0.02));
        };
        let zeros = |set: &mut ParamSet, name: String, rows: usize, cols: usize| {
            set.insert(name, Array2::zeros((rows, cols)));
        };
        let ones = |set: &mut ParamSet, name: String, cols: usize| {
            set.insert(name, Array2::ones((1, cols)));
        };

        for axis in ["v", "a"] {
            w(&mut set, format!("va_enc.{axis}.w1"), 1, c.mlp_hidden);
            zeros(&mut set, format!("va_enc.{axis}.b1"), 1, c.mlp_hidden);
            w(&mut set, format!("va_enc.{axis}.w2"), c.mlp_hidden, e_dim);
            zeros(&mut set, format!("va_enc.{axis}.b2"), 1, e_dim);
        }
        w(&mut set, "p_in.w".into(), c.d_prompt, c.d_model);
        zeros(&mut set, "p_in.b".into(), 1, c.d_model);
        zeros(&mut set, "pos_emb".into(), c.l, c.d_model);
        for i in 0..c.num_blocks {
            let pre = format!("block{i}");
            for (ln, attn) in [("ln1", "self_attn"), ("ln2", "cross_v"), ("ln3", "cross_a")] {
                ones(&mut set, format!("{pre}.{ln}.g"), c.d_model);
                zeros(&mut set, format!("{pre}.{ln}.b"), 1, c.d_model);
                for proj in ["wq", "wk", "wv", "wo"] {
                    w(&mut set, format!("{pre}.{attn}.{proj}"), c.d_model, c.d_model);
                }
                for bias in ["bq", "bk", "bv", "bo"] {
                    zeros(&mut set, format!("{pre}.{attn}.{bias}"), 1, c.d_model);
                }
            }
            ones(&mut set, format!("{pre}.ln4.g"), c.d_model);
            zeros(&mut set, format!("{pre}.ln4.b"), 1, c.d_model);
            w(&mut set, format!("{pre}.ffn.w1"), c.d_model, c.d_ffn);
            zeros(&mut set, format!("{pre}.ffn.b1"), 1, c.d_ffn);
            w(&mut set, format!("{pre}.ffn.w2"), c.d_ffn, c.d_model);
            zeros(&mut set, format!("{pre}.ffn.b2"), 1, c.d_model);
        }
        ones(&mut set, "ln_f.g".into(), c.d_model);
        zeros(&mut set, "ln_f.b".into(), 1, c.d_model);
        // Zero output head: the residual path starts as the identity.
        zeros(&mut set, "p_out.w".into(), c.d_model, c.d_prompt);
        zeros(&mut set, "p_out.b".into(), 1, c.d_prompt);

        Ok(Self {
            config: config.clone(),
            set,
        })
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    })
}
