//! Image-pair datasets: loading, splitting, augmentation, patch extraction
//! and synthetic task generation.

mod augment;
mod io;
mod synth;

pub use augment::{augment8, crop_patches, flip_horizontal, patch_origins, rotate90};
pub use io::{
    decode_ftsr, decode_pgm, encode_ftsr, load_dir, read_ftsr, read_image_file, read_pgm, save_dir,
    write_ftsr, write_pgm, DatasetManifest, FileFormat,
};
pub use synth::{synth_generate, SynthSpec, SynthTask};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One input/target example. Both tensors are `[C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T> {
    pub id: String,
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

impl<T: Scalar> ImagePair<T> {
    pub fn new(id: impl Into<String>, input: Tensor<T>, target: Tensor<T>) -> Result<Self> {
        let id = id.into();
        let (ri, rt) = (input.shape(), target.shape());
        if ri.len() != 3 || rt.len() != 3 || ri[1..] != rt[1..] {
            return Err(Error::shape(
                "ImagePair",
                format!("{id}: input {ri:?} and target {rt:?} must be [C, H, W] with equal H, W"),
            ));
        }
        Ok(Self { id, input, target })
    }

    /// `(height, width)`.
    pub fn extents(&self) -> (usize, usize) {
        (self.input.shape()[1], self.input.shape()[2])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split_ratio: Option<f64>,
    #[serde(default)]
    pub augmented: bool,
    #[serde(default)]
    pub patches: Option<(usize, usize)>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub pairs: Vec<ImagePair<T>>,
    pub split: Split,
    pub provenance: Provenance,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(pairs: Vec<ImagePair<T>>, source: impl Into<String>) -> Self {
        Self {
            pairs,
            split: Split::All,
            provenance: Provenance {
                source: source.into(),
                ..Provenance::default()
            },
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.id.as_str()).collect()
    }

    /// Stacks the selected pairs into `[B, C, H, W]` input and target batches.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let inputs: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.pairs[i].input).collect();
        let targets: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.pairs[i].target).collect();
        Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
    }

    /// Consecutive batches of at most `batch_size` pairs in dataset order.
    pub fn batches(
        &self,
        batch_size: usize,
    ) -> impl Iterator<Item = Result<(Tensor<T>, Tensor<T>)>> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            pairs: self
                .pairs
                .iter()
                .map(|p| ImagePair {
                    id: p.id.clone(),
                    input: p.input.cast(),
                    target: p.target.cast(),
                })
                .collect(),
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }
}

/// Deterministic shuffled split; the train side receives `round(ratio * n)`
/// pairs. Both sides keep the original relative order.
pub fn split<T: Scalar>(
    dataset: &Dataset<T>,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).min(n);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let mut provenance = dataset.provenance.clone();
    provenance.seed = Some(seed);
    provenance.split_ratio = Some(ratio);
    if n_train == 0 || n_train == n {
        provenance.notes.push(format!(
            "degenerate split: {n} pairs at ratio {ratio} gives {n_train} train / {} test",
            n - n_train
        ));
    }
    let take = |idx: &[usize], split: Split| Dataset {
        pairs: idx.iter().map(|&i| dataset.pairs[i].clone()).collect(),
        split,
        provenance: provenance.clone(),
    };
    Ok((take(&train_idx, Split::Train), take(&test_idx, Split::Test)))
}
