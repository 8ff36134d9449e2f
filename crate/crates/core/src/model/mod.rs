//! Two-branch masked restoration network with cross-scale attention,
//! uncertainty heads and a trend-guided auxiliary decoder.

mod forward;
mod layout;

pub use forward::{Bound, FeaturePair, ForwardNodes, ModelInput, RestorationOutput};
pub use layout::ModelParams;

use crate::error::{Error, Result};

/// Slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Lower bound added to every predicted uncertainty.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Global window length.
    pub global_len: usize,
    /// Heartbeat length.
    pub beat_len: usize,
    /// Hidden encoder widths; the global encoder appends `feature_dim`
    /// as one extra block, the local encoder replaces the last width with it.
    pub channels: Vec<usize>,
    /// Token width shared by both branches.
    pub feature_dim: usize,
    pub seed: u64,
    /// Fuse the branches through attention over the joint token sequence.
    pub cross_attention: bool,
    /// Predict per-point uncertainty; when off, σ is fixed at 1.
    pub uncertainty: bool,
    /// Run the trend decoder.
    pub trend_module: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            global_len: 512,
            beat_len: 96,
            channels: vec![16, 32, 64],
            feature_dim: 64,
            seed: 0,
            cross_attention: true,
            uncertainty: true,
            trend_module: true,
        }
    }
}

impl ModelConfig {
    /// Small configuration for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            global_len: 64,
            beat_len: 16,
            channels: vec![4, 8],
            feature_dim: 8,
            ..Self::default()
        }
    }

    /// Every module switched off: plain two-branch reconstruction.
    pub fn baseline(mut self) -> Self {
        self.cross_attention = false;
        self.uncertainty = false;
        self.trend_module = false;
        self
    }

    pub fn global_blocks(&self) -> usize {
        self.channels.len() + 1
    }

    pub fn local_blocks(&self) -> usize {
        self.channels.len()
    }

    /// Number of global tokens after the encoder.
    pub fn global_tokens(&self) -> usize {
        self.global_len >> self.global_blocks()
    }

    pub fn local_tokens(&self) -> usize {
        self.beat_len >> self.local_blocks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::contract(format!(
                "channels must be a non-empty list of positive widths, got {:?}",
                self.channels
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::contract("feature_dim must be positive"));
        }
        let gs = 1usize << self.global_blocks();
        let ls = 1usize << self.local_blocks();
        if self.global_len == 0 || self.global_len % gs != 0 {
            return Err(Error::contract(format!(
                "global_len {} must be a positive multiple of {gs}",
                self.global_len
            )));
        }
        if self.beat_len == 0 || self.beat_len % ls != 0 {
            return Err(Error::contract(format!(
                "beat_len {} must be a positive multiple of {ls}",
                self.beat_len
            )));
        }
        if self.beat_len > self.global_len {
            return Err(Error::contract("beat_len cannot exceed global_len"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_is_enforced() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
        let bad = ModelConfig { global_len: 520, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { beat_len: 100, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { feature_dim: 0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn token_counts() {
        let c = ModelConfig::default();
        assert_eq!((c.global_tokens(), c.local_tokens()), (32, 12));
    }
}
