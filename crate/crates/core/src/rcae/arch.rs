use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorops::{conv_geometry, Padding};

/// Shape hyperparameters of the autoencoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Side length of a square input block.
    pub block: usize,
    /// Frames per instance.
    pub time_steps: usize,
    /// Filters in every strided conv/deconv layer.
    pub conv_filters: usize,
    /// Hidden channels of each recurrent layer.
    pub lstm_filters: usize,
    pub kernel: usize,
    /// Number of stride-2 layers on each side.
    pub depth: usize,
}

impl Architecture {
    /// 90×90 blocks, 128 conv filters, 64 recurrent filters.
    pub fn paper() -> Self {
        Self {
            block: 90,
            time_steps: 20,
            conv_filters: 128,
            lstm_filters: 64,
            kernel: 3,
            depth: 4,
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            block: 24,
            time_steps: 20,
            conv_filters: 8,
            lstm_filters: 8,
            kernel: 3,
            depth: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 || self.time_steps == 0 || self.conv_filters == 0 || self.lstm_filters == 0 {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("need at least one strided layer".into()));
        }
        Ok(())
    }

    /// Spatial side after the strided encoder.
    pub fn latent_side(&self) -> usize {
        (0..self.depth).fold(self.block, |n, _| conv_geometry(n, self.kernel, 2, Padding::Same).0)
    }

    /// Spatial side reached by the strided decoder before the final resize.
    pub fn decoder_side(&self) -> usize {
        self.latent_side() << self.depth
    }

    /// Channels of one latent step (both encoder recurrent layers).
    pub fn latent_channels(&self) -> usize {
        2 * self.lstm_filters
    }

    /// Length of one flattened latent step.
    pub fn latent_dim(&self) -> usize {
        self.latent_side() * self.latent_side() * self.latent_channels()
    }
}
