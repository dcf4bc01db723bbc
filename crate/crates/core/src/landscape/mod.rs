//! Loss-landscape geometry around a trained solution.
//!
//! * [`sample_directions`] draws two random directions with every conv filter
//!   normalised to unit L2 norm on its own.
//! * [`evaluate_surface`] evaluates `f(a, b) = L(theta' + a*u + b*v)` on an
//!   `(n+1) x (n+1)` grid over `[-r, r]^2`.
//! * [`sharpness`] estimates the box-constrained sharpness
//!   `(max_{sigma in C_eps} L(theta + sigma) - L(theta)) / (1 + L(theta))`,
//!   `C_eps = { z : |z_i| <= eps * (|theta_i| + 1) }`, by multistart projected
//!   gradient ascent.
//!
//! Everything is written against the [`Objective`] trait so the same code
//! runs on real models ([`DatasetObjective`]) and on analytic toy losses.

mod directions;
mod export;
mod sharpness;
mod surface;

pub use directions::{sample_directions, DirectionPair};
pub use export::{
    append_sharpness_report, export_surface, import_surface, sidecar_path, SharpnessRecord,
    SurfaceFormat, SurfaceMetadata,
};
pub use sharpness::{sharpness, Ascent, MaximizerConfig, SharpnessResult, SharpnessSpec, Start};
pub use surface::{evaluate_surface, perturb, point_loss, GridSpec, LossSurface};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{Model, Network, ParamSet};
use crate::objective::Reduction;
use crate::scalar::Scalar;

/// A scalar loss over a parameter set.
pub trait Objective<T: Scalar> {
    fn loss(&self, params: &ParamSet<T>) -> Result<T>;

    fn loss_and_grad(&self, params: &ParamSet<T>) -> Result<(T, ParamSet<T>)>;
}

/// Loss of a model over a whole dataset, evaluated batch by batch in a fixed
/// order.
pub struct DatasetObjective<'a, T, M: ?Sized = Model> {
    pub model: &'a M,
    pub dataset: &'a Dataset<T>,
    pub reduction: Reduction,
    pub batch_size: usize,
}

impl<'a, T: Scalar, M: Network<T> + ?Sized> DatasetObjective<'a, T, M> {
    pub fn new(model: &'a M, dataset: &'a Dataset<T>, reduction: Reduction) -> Self {
        Self {
            model,
            dataset,
            reduction,
            batch_size: 16,
        }
    }

    fn check(&self) -> Result<()> {
        if self.dataset.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    fn total_scale(&self) -> Result<T> {
        let mut shape = vec![self.dataset.len()];
        shape.extend_from_slice(self.dataset.pairs[0].target.shape());
        Ok(self.reduction.scale::<T>(&shape))
    }
}

impl<T: Scalar, M: Network<T> + ?Sized> Objective<T> for DatasetObjective<'_, T, M> {
    fn loss(&self, params: &ParamSet<T>) -> Result<T> {
        self.check()?;
        let mut total = T::zero();
        for batch in self.dataset.batches(self.batch_size) {
            let (x, y) = batch?;
            let pred = self.model.forward(params, &x)?;
            total += pred
                .data()
                .iter()
                .zip(y.data())
                .map(|(&p, &t)| (p - t) * (p - t))
                .sum::<T>();
        }
        Ok(total * self.total_scale()?)
    }

    fn loss_and_grad(&self, params: &ParamSet<T>) -> Result<(T, ParamSet<T>)> {
        self.check()?;
        let n = T::from_usize_lossy(self.dataset.len());
        let mut loss = T::zero();
        let mut grad = params.zeros_like();
        for batch in self.dataset.batches(self.batch_size) {
            let (x, y) = batch?;
            let weight = T::from_usize_lossy(x.shape()[0]) / n;
            let (l, g) = self.model.loss_and_grad(params, &x, &y, self.reduction)?;
            loss += weight * l;
            grad.add_scaled(&g, weight)?;
        }
        Ok((loss, grad))
    }
}
