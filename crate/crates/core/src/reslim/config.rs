//! Model hyperparameters and the published size presets.

use serde::{Deserialize, Serialize};

use super::ReslimError;

/// Quad-tree compression settings, in token-grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionCfg {
    pub min_side: usize,
    pub max_side: usize,
    pub threshold: f64,
}

/// Scales the resolution-embedding table is keyed by.
pub const SUPPORTED_SCALES: [usize; 4] = [1, 2, 4, 8];

/// Hidden width of the decoder and residual-path convolutions.
pub const CONV_HIDDEN: usize = 16;

/// Architecture and objective hyperparameters of one model instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReslimConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub scale_factor: usize,
    #[serde(default)]
    pub compression: Option<CompressionCfg>,
    /// Input channel feeding the residual path for each output variable.
    pub residual_channel_map: Vec<usize>,
    /// Per-input-channel normalization; empty means identity.
    #[serde(default)]
    pub norm_mean: Vec<f64>,
    #[serde(default)]
    pub norm_std: Vec<f64>,
    #[serde(default = "default_tv_weight")]
    pub tv_weight: f64,
    #[serde(default = "default_huber_delta")]
    pub huber_delta: f64,
}

fn default_patch() -> usize {
    2
}

fn default_tv_weight() -> f64 {
    1e-3
}

fn default_huber_delta() -> f64 {
    1e-3
}

impl ReslimConfig {
    /// Small instance for experiments and tests; identity residual map.
    pub fn toy(
        embed_dim: usize,
        num_layers: usize,
        num_heads: usize,
        channels: usize,
        scale_factor: usize,
    ) -> Self {
        ReslimConfig {
            embed_dim,
            num_layers,
            num_heads,
            patch_size: 2,
            in_channels: channels,
            out_channels: channels,
            scale_factor,
            compression: None,
            residual_channel_map: (0..channels).collect(),
            norm_mean: Vec::new(),
            norm_std: Vec::new(),
            tv_weight: default_tv_weight(),
            huber_delta: default_huber_delta(),
        }
    }

    fn preset(embed_dim: usize, num_layers: usize, num_heads: usize) -> Self {
        ReslimConfig {
            embed_dim,
            num_layers,
            num_heads,
            patch_size: 2,
            in_channels: 23,
            out_channels: 3,
            scale_factor: 4,
            compression: None,
            residual_channel_map: vec![0, 1, 2],
            norm_mean: Vec::new(),
            norm_std: Vec::new(),
            tv_weight: default_tv_weight(),
            huber_delta: default_huber_delta(),
        }
    }

    /// 256-dim embedding, 6 layers, 4 heads.
    pub fn preset_9_5m() -> Self {
        Self::preset(256, 6, 4)
    }

    /// 1024-dim embedding, 8 layers, 16 heads.
    pub fn preset_126m() -> Self {
        Self::preset(1024, 8, 16)
    }

    /// 3072-dim embedding, 8 layers, 24 heads.
    pub fn preset_1b() -> Self {
        Self::preset(3072, 8, 24)
    }

    /// 8192-dim embedding, 11 layers, 32 heads.
    pub fn preset_10b() -> Self {
        Self::preset(8192, 11, 32)
    }

    pub fn validate(&self) -> Result<(), ReslimError> {
        let fail = |msg: String| Err(ReslimError::Config(msg));
        if self.embed_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return fail("embed_dim, num_layers and num_heads must be positive".into());
        }
        if self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.embed_dim % 4 != 0 {
            return fail(format!(
                "embed_dim {} must be a multiple of 4 for the 2-D position encoding",
                self.embed_dim
            ));
        }
        if self.patch_size == 0 {
            return fail("patch_size must be positive".into());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        if !SUPPORTED_SCALES.contains(&self.scale_factor) {
            return Err(ReslimError::UnknownScaleFactor(self.scale_factor));
        }
        if self.residual_channel_map.len() != self.out_channels {
            return fail(format!(
                "residual_channel_map has {} entries for {} output channels",
                self.residual_channel_map.len(),
                self.out_channels
            ));
        }
        if let Some(&bad) = self.residual_channel_map.iter().find(|&&c| c >= self.in_channels) {
            return fail(format!("residual_channel_map entry {bad} out of range"));
        }
        if !self.norm_mean.is_empty() || !self.norm_std.is_empty() {
            if self.norm_mean.len() != self.in_channels || self.norm_std.len() != self.in_channels {
                return fail("norm_mean/norm_std must have one entry per input channel".into());
            }
            if self.norm_std.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
                return fail("norm_std entries must be positive and finite".into());
            }
        }
        if self.tv_weight < 0.0 || !self.tv_weight.is_finite() {
            return fail("tv_weight must be >= 0".into());
        }
        if self.huber_delta <= 0.0 || !self.huber_delta.is_finite() {
            return fail("huber_delta must be > 0".into());
        }
        if let Some(c) = &self.compression {
            let ratio = c.max_side.checked_div(c.min_side).unwrap_or(0);
            if c.min_side == 0 || ratio * c.min_side != c.max_side || !ratio.is_power_of_two() {
                return fail(format!(
                    "compression max_side {} must be a power-of-two multiple of min_side {}",
                    c.max_side, c.min_side
                ));
            }
            if !(0.0..=1.0).contains(&c.threshold) {
                return fail(format!("compression threshold {} outside [0, 1]", c.threshold));
            }
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Analytic parameter count for this configuration; construction is
    /// verified against it.
    pub fn estimated_param_count(&self) -> usize {
        let d = self.embed_dim;
        let p2 = self.patch_size * self.patch_size;
        let k = self.out_channels;
        let var_embed = self.in_channels * (p2 * d + d);
        let var_table = self.in_channels * d;
        let agg = d + 2 * d * d;
        let res_table = SUPPORTED_SCALES.len() * d;
        let block = 12 * d * d + 13 * d;
        let final_norm = 2 * d;
        let heads: usize = SUPPORTED_SCALES.iter().map(|s| (d + 1) * p2 * s * s * k).sum();
        let conv_pair = |cin: usize, cout: usize| {
            CONV_HIDDEN * cin * 9 + CONV_HIDDEN + cout * CONV_HIDDEN * 9 + cout
        };
        let mut total = var_embed
            + var_table
            + agg
            + res_table
            + self.num_layers * block
            + final_norm
            + heads
            + conv_pair(k, k)   // decoder refinement
            + conv_pair(k, k); // residual refinement
        if let Some(c) = &self.compression {
            let ms2 = c.min_side * c.min_side;
            let n_scales = (c.max_side / c.min_side).trailing_zeros() as usize + 1;
            total += d; // 1x1 feature projection
            total += ms2 * d * d; // token embedding
            total += n_scales * d; // scale table
            total += d * ms2 * d; // token projection back
            total += d * d * 9 + d; // seam smoothing conv
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_shapes() {
        let cases = [
            (ReslimConfig::preset_9_5m(), 256, 6, 4),
            (ReslimConfig::preset_126m(), 1024, 8, 16),
            (ReslimConfig::preset_1b(), 3072, 8, 24),
            (ReslimConfig::preset_10b(), 8192, 11, 32),
        ];
        for (cfg, d, l, h) in cases {
            assert_eq!((cfg.embed_dim, cfg.num_layers, cfg.num_heads), (d, l, h));
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut c = ReslimConfig::toy(16, 1, 3, 1, 4);
        assert!(c.validate().is_err()); // 16 % 3 != 0
        c.num_heads = 4;
        c.validate().unwrap();
        c.scale_factor = 3;
        assert!(matches!(c.validate(), Err(ReslimError::UnknownScaleFactor(3))));
        c.scale_factor = 4;
        c.residual_channel_map = vec![5];
        assert!(c.validate().is_err());
    }
}
