use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::models::{FilterGroup, GroupRole, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Two random directions aligned group-for-group with a parameter set.
/// Conv filters have unit L2 norm; bias groups are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionPair<T> {
    pub u: ParamSet<T>,
    pub v: ParamSet<T>,
    pub seed: u64,
}

impl<T: Scalar> DirectionPair<T> {
    /// The same plane with both directions reversed.
    pub fn negated(&self) -> Self {
        Self {
            u: self.u.map(|x| -x),
            v: self.v.map(|x| -x),
            seed: self.seed,
        }
    }
}

fn unit_gaussian<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    loop {
        let draw: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let norm = draw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let data = draw.iter().map(|&x| T::from_f64_lossy(x / norm)).collect();
            return Tensor::new(shape.to_vec(), data).expect("shape from existing group");
        }
    }
}

fn draw<T: Scalar>(params: &ParamSet<T>, rng: &mut ChaCha8Rng) -> ParamSet<T> {
    ParamSet::new(
        params
            .groups()
            .iter()
            .map(|g| FilterGroup {
                name: g.name.clone(),
                role: g.role,
                tensor: match g.role {
                    GroupRole::ConvFilter => unit_gaussian(g.tensor.shape(), rng),
                    GroupRole::Bias => Tensor::zeros(g.tensor.shape()),
                },
            })
            .collect(),
    )
}

/// Draws each filter's direction from `N(0, I)` in the filter's own shape and
/// divides it by its own norm. `u` comes from stream 0 and `v` from stream 1
/// of a ChaCha generator seeded with `seed`.
pub fn sample_directions<T: Scalar>(params: &ParamSet<T>, seed: u64) -> DirectionPair<T> {
    let mut ru = ChaCha8Rng::seed_from_u64(seed);
    ru.set_stream(0);
    let mut rv = ChaCha8Rng::seed_from_u64(seed);
    rv.set_stream(1);
    DirectionPair {
        u: draw(params, &mut ru),
        v: draw(params, &mut rv),
        seed,
    }
}
