use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_extent;

/// Principal landmarks of the 68-point (300-W) scheme: brow corners, eye
/// corners, nose tip, mouth corners and chin tip.
pub const PRINCIPAL_68: [usize; 12] = [8, 17, 21, 22, 26, 30, 36, 39, 42, 45, 48, 54];

/// Kernel height/width, stride and padding shared by all eight convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvKernel {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvKernel {
    fn default() -> Self {
        ConvKernel {
            kh: 3,
            kw: 3,
            stride: 1,
            padding: 1,
        }
    }
}

/// Topology and initialization of a [`super::CftNet`].
///
/// Stored as TOML; every field has a default and unknown keys are rejected.
///
/// ```toml
/// input_size = [50, 50, 3]          # height, width, channels
/// block_channels = [32, 64, 128, 256]
/// conv_kernel = { kh = 3, kw = 3, stride = 1, padding = 1 }
/// fc_units = 256
/// n_landmarks = 68
/// principal_indices = [8, 17, 21, 22, 26, 30, 36, 39, 42, 45, 48, 54]
/// init_scale = 0.01                 # weights ~ N(0, 1) * init_scale
/// seed = 0
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_size: [usize; 3],
    pub block_channels: [usize; 4],
    pub conv_kernel: ConvKernel,
    pub fc_units: usize,
    pub n_landmarks: usize,
    pub principal_indices: Vec<usize>,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: [50, 50, 3],
            block_channels: [32, 64, 128, 256],
            conv_kernel: ConvKernel::default(),
            fc_units: 256,
            n_landmarks: 68,
            principal_indices: PRINCIPAL_68.to_vec(),
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Spatial extents seen by the network for one config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// `(height, width)` after each pool.
    pub pooled: [(usize, usize); 4],
    /// Flattened width of each pool output.
    pub head_inputs: [usize; 4],
}

impl NetworkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: NetworkConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("network config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    pub fn height(&self) -> usize {
        self.input_size[0]
    }

    pub fn width(&self) -> usize {
        self.input_size[1]
    }

    pub fn channels(&self) -> usize {
        self.input_size[2]
    }

    pub fn n_principal(&self) -> usize {
        self.principal_indices.len()
    }

    pub fn n_elaborate(&self) -> usize {
        self.n_landmarks - self.principal_indices.len()
    }

    /// Output widths of every head pair: `(2·|P|, 2·(L − |P|))`.
    pub fn head_widths(&self) -> (usize, usize) {
        (2 * self.n_principal(), 2 * self.n_elaborate())
    }

    /// Landmark indices not in the principal subset, ascending.
    pub fn elaborate_indices(&self) -> Vec<usize> {
        (0..self.n_landmarks)
            .filter(|i| self.principal_indices.binary_search(i).is_err())
            .collect()
    }

    pub fn validate(&self) -> Result<ShapePlan> {
        let [h, w, c] = self.input_size;
        if h < 16 || w < 16 {
            return Err(Error::config(format!(
                "input_size: {h}x{w} does not survive four 2x2 poolings (need at least 16)"
            )));
        }
        if c == 0 {
            return Err(Error::config("input_size: channel count must be positive"));
        }
        if self.block_channels.contains(&0) {
            return Err(Error::config("block_channels: every block needs at least one channel"));
        }
        if self.fc_units == 0 {
            return Err(Error::config("fc_units: must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale: must be finite and non-negative"));
        }
        if self.principal_indices.is_empty() {
            return Err(Error::config("principal_indices: must not be empty"));
        }
        if !self.principal_indices.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::config("principal_indices: must be unique and sorted ascending"));
        }
        if let Some(&bad) = self.principal_indices.iter().find(|&&i| i >= self.n_landmarks) {
            return Err(Error::config(format!(
                "principal_indices: index {bad} out of range for n_landmarks = {}",
                self.n_landmarks
            )));
        }
        let k = self.conv_kernel;
        if k.stride == 0 {
            return Err(Error::config("conv_kernel: stride must be at least 1"));
        }
        let (mut hh, mut ww) = (h, w);
        let mut pooled = [(0, 0); 4];
        let mut head_inputs = [0; 4];
        for b in 0..4 {
            for _ in 0..2 {
                match (
                    conv_output_extent(hh, k.kh, k.stride, k.padding),
                    conv_output_extent(ww, k.kw, k.stride, k.padding),
                ) {
                    (Some(a), Some(bb)) => (hh, ww) = (a, bb),
                    _ => {
                        return Err(Error::config(format!(
                            "conv_kernel: {}x{}/{}/{} does not fit {hh}x{ww} maps in block {}",
                            k.kh,
                            k.kw,
                            k.stride,
                            k.padding,
                            b + 1
                        )))
                    }
                }
            }
            if hh < 2 || ww < 2 {
                return Err(Error::config(format!(
                    "conv_kernel: block {} maps shrink to {hh}x{ww}, too small to pool",
                    b + 1
                )));
            }
            (hh, ww) = (hh / 2, ww / 2);
            pooled[b] = (hh, ww);
            head_inputs[b] = self.block_channels[b] * hh * ww;
        }
        Ok(ShapePlan {
            pooled,
            head_inputs,
        })
    }
}
