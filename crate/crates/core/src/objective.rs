//! Squared-error regression objective.
//!
//! The loss is `(1/N) * sum_i sum_t (y_t^i - yhat_t^i)^2`: summed over the
//! `M` elements of each sample, averaged over the `N` samples. A
//! per-element mean is available for comparing runs across image sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Sum over the elements of a sample, mean over samples.
    #[default]
    SumPerSample,
    /// Mean over every element.
    MeanPerElement,
}

impl Reduction {
    /// Factor applied to the total squared error for a tensor of `shape`
    /// whose leading axis indexes samples.
    pub fn scale<T: Scalar>(self, shape: &[usize]) -> T {
        let n = shape.first().copied().unwrap_or(1).max(1);
        let m: usize = shape.iter().skip(1).product();
        match self {
            Reduction::SumPerSample => T::one() / T::from_usize_lossy(n),
            Reduction::MeanPerElement => T::one() / T::from_usize_lossy(n * m.max(1)),
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum-per-sample" | "sum" => Ok(Reduction::SumPerSample),
            "mean-per-element" | "mean" => Ok(Reduction::MeanPerElement),
            other => Err(format!(
                "unknown reduction `{other}` (expected sum-per-sample or mean-per-element)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub n_samples: usize,
    pub n_elements_per_sample: usize,
    pub reduction: Reduction,
}

/// Squared-error loss between `pred` and `target`; the leading axis of both
/// is the sample axis.
pub fn mse<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    reduction: Reduction,
) -> Result<LossValue<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "mse",
            format!(
                "prediction {:?} vs target {:?}",
                pred.shape(),
                target.shape()
            ),
        ));
    }
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    let n = pred.shape()[0];
    Ok(LossValue {
        value: total * reduction.scale::<T>(pred.shape()),
        n_samples: n,
        n_elements_per_sample: pred.len() / n,
        reduction,
    })
}
