//! The five encoder-decoder architectures and their parameter layout.
//!
//! All five share one trunk: `depth` encoder stages (two 3x3 convs, then a
//! 2x2 max pool), a two-conv bottleneck, and `depth` decoder stages (a 2x2
//! stride-2 transposed conv followed by a 3x3 conv). They differ only in
//! which decoder stages receive the pre-pool encoder map of matching
//! resolution:
//!
//! | architecture   | stages with a skip                                  |
//! |----------------|-----------------------------------------------------|
//! | `fcn16s`       | none; only the bottleneck features reach the decoder |
//! | `fcn8s`        | the deepest encoder stage                           |
//! | `fcn4s`        | the two deepest encoder stages                      |
//! | `unet`         | every stage                                         |
//! | `resskip`      | every stage, each skip passing through residual blocks |
//!
//! A skip is merged by channel concatenation and a 3x3 conv back to the
//! stage width.

mod checkpoint;
mod network;
mod params;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointManifest, GroupEntry,
};
pub use network::{LayerInfo, LayerKind, Model};
pub use params::{FilterGroup, GroupRole, ParamSet};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Reduction;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A differentiable image-to-image map with externally held parameters.
pub trait Network<T: Scalar> {
    fn check_params(&self, params: &ParamSet<T>) -> Result<()>;

    fn forward(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Batch loss and its gradient with respect to every parameter group.
    fn loss_and_grad(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
        reduction: Reduction,
    ) -> Result<(T, ParamSet<T>)>;
}

impl<T: Scalar> Network<T> for Model {
    fn check_params(&self, params: &ParamSet<T>) -> Result<()> {
        Model::check_params(self, params)
    }

    fn forward(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Model::forward(self, params, x)
    }

    fn loss_and_grad(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        target: &Tensor<T>,
        reduction: Reduction,
    ) -> Result<(T, ParamSet<T>)> {
        Model::loss_and_grad(self, params, x, target, reduction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Fcn16s,
    Fcn8s,
    Fcn4s,
    Unet,
    Resskip,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Fcn16s,
        Architecture::Fcn8s,
        Architecture::Fcn4s,
        Architecture::Unet,
        Architecture::Resskip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Fcn16s => "fcn16s",
            Architecture::Fcn8s => "fcn8s",
            Architecture::Fcn4s => "fcn4s",
            Architecture::Unet => "unet",
            Architecture::Resskip => "resskip",
        }
    }

    /// Number of deepest encoder stages that carry a skip connection.
    pub fn skip_count(self, depth: usize) -> usize {
        match self {
            Architecture::Fcn16s => 0,
            Architecture::Fcn8s => depth.min(1),
            Architecture::Fcn4s => depth.min(2),
            Architecture::Unet | Architecture::Resskip => depth,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown architecture `{s}` (expected one of fcn16s, fcn8s, fcn4s, unet, resskip)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub arch: Architecture,
    /// Number of pooling stages.
    pub depth: usize,
    /// Channels at full resolution; stage `s` uses `base_channels * 2^s`.
    pub base_channels: usize,
    /// Residual blocks on the skip of stage `s` (0 = full resolution).
    /// Only meaningful for [`Architecture::Resskip`].
    #[serde(default)]
    pub residual_blocks_per_skip: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ArchitectureSpec {
    pub fn new(arch: Architecture, depth: usize, base_channels: usize) -> Self {
        let residual_blocks_per_skip = match arch {
            Architecture::Resskip => Self::default_residual_blocks(depth),
            _ => Vec::new(),
        };
        Self {
            arch,
            depth,
            base_channels,
            residual_blocks_per_skip,
            in_channels: 1,
            out_channels: 1,
        }
    }

    /// More residual blocks at finer resolutions: `depth - s` at stage `s`.
    pub fn default_residual_blocks(depth: usize) -> Vec<usize> {
        (0..depth).map(|s| depth - s).collect()
    }

    pub fn with_channels(mut self, in_channels: usize, out_channels: usize) -> Self {
        self.in_channels = in_channels;
        self.out_channels = out_channels;
        self
    }

    pub fn with_residual_blocks(mut self, blocks: Vec<usize>) -> Self {
        self.residual_blocks_per_skip = blocks;
        self
    }

    /// Required divisor of the input height and width.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn has_skip(&self, stage: usize) -> bool {
        stage < self.depth && stage + self.arch.skip_count(self.depth) >= self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::InvalidArgument(format!(
                "depth must be in 1..=8, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(
                "channel counts must be positive".into(),
            ));
        }
        match self.arch {
            Architecture::Resskip if self.residual_blocks_per_skip.len() != self.depth => {
                Err(Error::InvalidArgument(format!(
                    "resskip needs {} residual block counts, got {}",
                    self.depth,
                    self.residual_blocks_per_skip.len()
                )))
            }
            Architecture::Resskip => Ok(()),
            _ if self.residual_blocks_per_skip.iter().any(|&n| n > 0) => Err(
                Error::InvalidArgument(format!("{} takes no residual blocks", self.arch)),
            ),
            _ => Ok(()),
        }
    }
}
