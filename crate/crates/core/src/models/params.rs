use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupRole {
    /// One output filter of a convolution (or transposed convolution).
    ConvFilter,
    /// All biases of one layer.
    Bias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterGroup<T> {
    pub name: String,
    pub role: GroupRole,
    pub tensor: Tensor<T>,
}

/// Model parameters as an ordered list of filter groups.
///
/// Every output channel of every convolution is its own group; each layer's
/// biases form one further group. The order is fixed by the architecture, so
/// anything drawn group by group from a seeded stream is reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    groups: Vec<FilterGroup<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(groups: Vec<FilterGroup<T>>) -> Self {
        Self { groups }
    }

    pub fn groups(&self) -> &[FilterGroup<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [FilterGroup<T>] {
        &mut self.groups
    }

    pub fn into_groups(self) -> Vec<FilterGroup<T>> {
        self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Total number of scalar parameters (the dimension `m` of parameter space).
    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.len()).sum()
    }

    /// Number of convolution filters, `|theta|`.
    pub fn filter_count(&self) -> usize {
        self.filters().count()
    }

    /// Conv-filter groups in enumeration order, with their group index.
    pub fn filters(&self) -> impl Iterator<Item = (usize, &FilterGroup<T>)> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.role == GroupRole::ConvFilter)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| FilterGroup {
                    name: g.name.clone(),
                    role: g.role,
                    tensor: g.tensor.map(&f),
                })
                .collect(),
        }
    }

    fn check_aligned(&self, other: &Self) -> Result<()> {
        let aligned = self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.tensor.shape() == b.tensor.shape());
        if aligned {
            Ok(())
        } else {
            Err(Error::shape("ParamSet", "parameter sets are not aligned"))
        }
    }

    /// Elementwise combination of two aligned parameter sets.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_aligned(other)?;
        Ok(Self {
            groups: self
                .groups
                .iter()
                .zip(&other.groups)
                .map(|(a, b)| FilterGroup {
                    name: a.name.clone(),
                    role: a.role,
                    tensor: a.tensor.zip_map(&b.tensor, &f).expect("aligned"),
                })
                .collect(),
        })
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        self.check_aligned(other)?;
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, &y) in a.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_aligned(other)?;
        Ok(self
            .groups
            .iter()
            .zip(&other.groups)
            .map(|(a, b)| {
                a.tensor
                    .data()
                    .iter()
                    .zip(b.tensor.data())
                    .map(|(&x, &y)| x * y)
                    .sum::<T>()
            })
            .sum())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = T> + '_ {
        self.groups
            .iter()
            .flat_map(|g| g.tensor.data().iter().copied())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter_values().collect()
    }

    /// Rebuilds a parameter set shaped like `self` from flat values.
    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "ParamSet::with_flat",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut offset = 0;
        let groups = self
            .groups
            .iter()
            .map(|g| {
                let n = g.tensor.len();
                let t = Tensor::new(g.tensor.shape().to_vec(), flat[offset..offset + n].to_vec())
                    .expect("shape taken from an existing tensor");
                offset += n;
                FilterGroup {
                    name: g.name.clone(),
                    role: g.role,
                    tensor: t,
                }
            })
            .collect();
        Ok(Self { groups })
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.tensor.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            groups: self
                .groups
                .iter()
                .map(|g| FilterGroup {
                    name: g.name.clone(),
                    role: g.role,
                    tensor: g.tensor.cast(),
                })
                .collect(),
        }
    }
}
