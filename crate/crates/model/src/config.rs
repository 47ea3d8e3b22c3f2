//! Network configuration and named presets.

use serde::{Deserialize, Serialize};

use nets_core::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Per-object LSTM over the input steps.
    #[default]
    Lstm,
    /// Two-layer feed-forward over the flattened input steps.
    Feedforward,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Ball, summed attackers, summed defenders.
    #[default]
    Sum,
    /// All eleven embeddings in object order; not permutation invariant.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetsConfig {
    /// Hidden width; also the query, key and value widths.
    pub d_h: usize,
    /// Attention layers. Zero leaves only the embedding (the LSTM baseline).
    pub layers: usize,
    pub heads: usize,
    /// Input steps.
    pub steps: usize,
    pub horizon: usize,
    pub classes: usize,
    #[serde(default)]
    pub embedding: EmbeddingKind,
    #[serde(default = "one")]
    pub lstm_layers: usize,
    #[serde(default)]
    pub pooling: Pooling,
    /// Conventional post-norm block with two residuals instead of the single
    /// residual around `LN(FF(LN(Att)))`.
    #[serde(default)]
    pub standard_block: bool,
    #[serde(default = "yes")]
    pub layer_norm: bool,
    /// Model outputs are multiplied by this to give velocities in ft/s.
    #[serde(default = "ten")]
    pub velocity_scale: f64,
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn ten() -> f64 {
    10.0
}

impl NetsConfig {
    /// 8 layers, width 256, 64 heads.
    pub fn full() -> Self {
        Self::sized(256, 8, 64)
    }

    /// The best row of the architecture grid: 16 layers.
    pub fn full_deep() -> Self {
        Self::sized(256, 16, 64)
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self::sized(32, 2, 4)
    }

    /// Tiny network for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            horizon: 4,
            ..Self::sized(8, 2, 2)
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "full-deep" => Ok(Self::full_deep()),
            "desk" => Ok(Self::desk()),
            "gradcheck" => Ok(Self::gradcheck()),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?} (expected full, full-deep, desk or gradcheck)"
            ))),
        }
    }

    fn sized(d_h: usize, layers: usize, heads: usize) -> Self {
        Self {
            d_h,
            layers,
            heads,
            steps: 10,
            horizon: 10,
            classes: 3,
            embedding: EmbeddingKind::Lstm,
            lstm_layers: 1,
            pooling: Pooling::Sum,
            standard_block: false,
            layer_norm: true,
            velocity_scale: 10.0,
            seed: 0,
        }
    }

    pub fn head_width(&self) -> usize {
        self.d_h / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_h == 0 || self.heads == 0 {
            return bad("d_h and heads must be positive".into());
        }
        if self.d_h % self.heads != 0 {
            return bad(format!("d_h = {} is not divisible by {} heads", self.d_h, self.heads));
        }
        if self.steps < 1 || self.horizon < 1 || self.classes < 2 || self.lstm_layers < 1 {
            return bad("steps, horizon and lstm_layers must be at least 1, classes at least 2".into());
        }
        if !(self.velocity_scale.is_finite() && self.velocity_scale > 0.0) {
            return bad("velocity_scale must be positive".into());
        }
        Ok(())
    }

    /// Names of fields whose values differ, for checkpoint compatibility errors.
    pub fn differing_fields(&self, other: &NetsConfig) -> Vec<String> {
        let (a, b) = (serde_json::to_value(self).unwrap(), serde_json::to_value(other).unwrap());
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.iter()
            .filter(|(k, v)| *k != "seed" && b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["full", "full-deep", "desk", "gradcheck"] {
            NetsConfig::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(NetsConfig::full().head_width(), 4);
        assert!(NetsConfig::preset("huge").is_err());
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = NetsConfig {
            heads: 3,
            ..NetsConfig::desk()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn differing_fields_by_name() {
        let a = NetsConfig::desk();
        let b = NetsConfig {
            layers: 3,
            seed: 9,
            ..NetsConfig::desk()
        };
        assert_eq!(a.differing_fields(&b), vec!["layers".to_string()]);
    }
}
