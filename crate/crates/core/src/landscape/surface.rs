use serde::{Deserialize, Serialize};

use super::{DirectionPair, Objective};
use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::objective::Reduction;
use crate::scalar::Scalar;

/// Grid over `[-r, r]^2` with `n + 1` coordinates per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub r: f64,
}

impl GridSpec {
    pub fn new(n: usize, r: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be >= 2, got {n}"
            )));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid radius must be positive, got {r}"
            )));
        }
        Ok(Self { n, r })
    }

    /// `-r + 2r t/n`, evaluated as `r (2t - n) / n` so that coordinate `n - t`
    /// is the exact negation of coordinate `t` and the middle one is exactly 0.
    pub fn coord(&self, t: usize) -> f64 {
        let steps = 2.0 * t as f64 - self.n as f64;
        self.r * steps / self.n as f64
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..=self.n).map(|t| self.coord(t)).collect()
    }
}

/// `(n+1) x (n+1)` loss values; `values[t][k]` is the loss at
/// `(alpha_t, beta_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSurface<T> {
    pub grid: GridSpec,
    pub values: Vec<Vec<T>>,
    pub center_loss: T,
    pub seed: u64,
    pub dataset: String,
    pub reduction: Reduction,
}

impl<T: Scalar> LossSurface<T> {
    pub fn alphas(&self) -> Vec<f64> {
        self.grid.coords()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.grid.coords()
    }

    /// Value at the grid centre, present when `n` is even.
    pub fn center_cell(&self) -> Option<T> {
        (self.grid.n % 2 == 0).then(|| self.values[self.grid.n / 2][self.grid.n / 2])
    }

    pub fn mean(&self) -> T {
        let count = T::from_usize_lossy((self.grid.n + 1) * (self.grid.n + 1));
        self.values.iter().flatten().copied().sum::<T>() / count
    }

    pub fn min(&self) -> T {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(T::neg_infinity(), T::max)
    }

    /// The grid turned by 180 degrees, i.e. `values[n-t][n-k]`.
    pub fn rotated_180(&self) -> Vec<Vec<T>> {
        self.values
            .iter()
            .rev()
            .map(|row| row.iter().rev().copied().collect())
            .collect()
    }
}

/// `center + alpha * u + beta * v`, group by group.
pub fn perturb<T: Scalar>(
    center: &ParamSet<T>,
    dirs: &DirectionPair<T>,
    alpha: T,
    beta: T,
) -> Result<ParamSet<T>> {
    let step = dirs.u.zip_map(&dirs.v, |u, v| alpha * u + beta * v)?;
    center.zip_map(&step, |c, s| c + s)
}

/// Loss at `center + alpha * u + beta * v`. `center` is not modified.
pub fn point_loss<T: Scalar, O: Objective<T>>(
    objective: &O,
    center: &ParamSet<T>,
    dirs: &DirectionPair<T>,
    alpha: T,
    beta: T,
) -> Result<T> {
    objective.loss(&perturb(center, dirs, alpha, beta)?)
}

/// Evaluates every grid cell in row-major `(t, k)` order.
pub fn evaluate_surface<T: Scalar, O: Objective<T>>(
    objective: &O,
    center: &ParamSet<T>,
    dirs: &DirectionPair<T>,
    grid: GridSpec,
    dataset: &str,
    reduction: Reduction,
) -> Result<LossSurface<T>> {
    let grid = GridSpec::new(grid.n, grid.r)?;
    let center_loss = objective.loss(center)?;
    let coords: Vec<T> = grid.coords().into_iter().map(T::from_f64_lossy).collect();
    let mut values = Vec::with_capacity(grid.n + 1);
    for &alpha in &coords {
        let row = coords
            .iter()
            .map(|&beta| point_loss(objective, center, dirs, alpha, beta))
            .collect::<Result<Vec<T>>>()?;
        values.push(row);
    }
    Ok(LossSurface {
        grid,
        values,
        center_loss,
        seed: dirs.seed,
        dataset: dataset.to_string(),
        reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::sample_directions;
    use crate::models::{FilterGroup, GroupRole};
    use crate::tensor::Tensor;

    /// `L(theta) = sum theta_i^2` over every parameter.
    pub(crate) struct SumOfSquares;

    impl Objective<f64> for SumOfSquares {
        fn loss(&self, p: &ParamSet<f64>) -> Result<f64> {
            Ok(p.iter_values().map(|x| x * x).sum())
        }

        fn loss_and_grad(&self, p: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
            Ok((self.loss(p)?, p.map(|x| 2.0 * x)))
        }
    }

    fn scalar_params(values: &[f64]) -> ParamSet<f64> {
        ParamSet::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| FilterGroup {
                    name: format!("w{i}"),
                    role: GroupRole::ConvFilter,
                    tensor: Tensor::new(vec![1], vec![v]).unwrap(),
                })
                .collect(),
        )
    }

    #[test]
    fn grid_coordinates() {
        let g = GridSpec::new(40, 0.5).unwrap();
        let c = g.coords();
        assert_eq!(c.len(), 41);
        assert_eq!(c[0], -0.5);
        assert_eq!(c[40], 0.5);
        assert_eq!(c[20], 0.0);
        for t in 0..=40 {
            assert_eq!(c[40 - t], -c[t]);
            assert!((c[t] - (-0.5 + 2.0 * 0.5 * t as f64 / 40.0)).abs() < 1e-15);
        }
        assert!(GridSpec::new(1, 0.5).is_err());
        assert!(GridSpec::new(4, 0.0).is_err());
    }

    #[test]
    fn one_dimensional_quadratic_slice() {
        let center = scalar_params(&[0.0]);
        let dirs = DirectionPair {
            u: scalar_params(&[1.0]),
            v: scalar_params(&[0.0]),
            seed: 0,
        };
        for a in [-0.5, -0.1, 0.0, 0.3] {
            assert_eq!(
                point_loss(&SumOfSquares, &center, &dirs, a, 0.0).unwrap(),
                a * a
            );
        }
    }

    #[test]
    fn separable_quadratic_surface() {
        let center = scalar_params(&[0.0, 0.0]);
        let dirs = DirectionPair {
            u: scalar_params(&[1.0, 0.0]),
            v: scalar_params(&[0.0, 1.0]),
            seed: 0,
        };
        let s = evaluate_surface(
            &SumOfSquares,
            &center,
            &dirs,
            GridSpec::new(6, 0.3).unwrap(),
            "toy",
            Reduction::SumPerSample,
        )
        .unwrap();
        let c = s.alphas();
        for t in 0..=6 {
            for k in 0..=6 {
                assert!((s.values[t][k] - (c[t] * c[t] + c[k] * c[k])).abs() < 1e-12);
            }
        }
        assert_eq!(s.center_cell(), Some(0.0));
    }

    #[test]
    fn origin_and_sign_symmetry() {
        let center = scalar_params(&[0.3, -1.2, 0.7]);
        let dirs = sample_directions(&center, 4);
        let at0 = point_loss(&SumOfSquares, &center, &dirs, 0.0, 0.0).unwrap();
        assert_eq!(at0, SumOfSquares.loss(&center).unwrap());
        let a = point_loss(&SumOfSquares, &center, &dirs, 0.2, -0.1).unwrap();
        let b = point_loss(&SumOfSquares, &center, &dirs.negated(), -0.2, 0.1).unwrap();
        assert_eq!(a, b);
    }
}
