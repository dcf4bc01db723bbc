use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::models::ParamSet;
use crate::scalar::Scalar;

/// Direction of one ascent step, in coordinates where the box is `[-1, 1]^m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ascent {
    /// Every coordinate moves a full step along the sign of its gradient.
    Sign,
    /// The box-scaled gradient, divided by its largest magnitude so that the
    /// steepest coordinate moves a full step.
    Scaled,
}

impl std::str::FromStr for Ascent {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sign" => Ok(Ascent::Sign),
            "scaled" => Ok(Ascent::Scaled),
            other => Err(format!(
                "unknown ascent `{other}` (expected sign or scaled)"
            )),
        }
    }
}

/// Where the ascent runs begin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// The first run starts at the centre, the others at a uniform random
    /// point within one step of it.
    Local,
    /// Every run starts at a uniform random point of the whole box.
    Uniform,
}

impl std::str::FromStr for Start {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "local" => Ok(Start::Local),
            "uniform" => Ok(Start::Uniform),
            other => Err(format!(
                "unknown start `{other}` (expected local or uniform)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximizerConfig {
    /// Independent ascent runs.
    pub starts: usize,
    pub steps: usize,
    /// Per-step move as a fraction of each coordinate's half-width
    /// `eps * (|theta_i| + 1)`.
    pub step_fraction: f64,
    pub ascent: Ascent,
    pub start: Start,
}

impl Default for MaximizerConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            steps: 20,
            step_fraction: 0.1,
            ascent: Ascent::Scaled,
            start: Start::Local,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessSpec {
    pub epsilon: f64,
    pub maximizer: MaximizerConfig,
    pub seed: u64,
}

impl SharpnessSpec {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            maximizer: MaximizerConfig::default(),
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessResult {
    pub phi: f64,
    pub center_loss: f64,
    /// Largest loss found inside the box.
    pub max_loss: f64,
    pub evaluations: usize,
}

/// Box-constrained sharpness of `objective` at `center`.
///
/// The inner maximum runs over every parameter, biases included. It is
/// approximated by projected gradient ascent: each start places `z` as
/// [`Start`] says, then repeats `z <- clamp(z + step * d)` where `d`
/// follows [`Ascent`].
/// The best loss seen on any iterate (and at the centre itself) is used, so
/// the result is a lower bound on the exact sharpness and never negative.
pub fn sharpness<T: Scalar, O: Objective<T>>(
    objective: &O,
    center: &ParamSet<T>,
    spec: &SharpnessSpec,
) -> Result<SharpnessResult> {
    if !(spec.epsilon > 0.0 && spec.epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {}",
            spec.epsilon
        )));
    }
    let cfg = spec.maximizer;
    if cfg.starts == 0 || !(cfg.step_fraction > 0.0) {
        return Err(Error::InvalidArgument(
            "maximizer needs at least one start and a positive step".into(),
        ));
    }
    let theta = center.to_flat();
    let eps = T::from_f64_lossy(spec.epsilon);
    let half: Vec<T> = theta.iter().map(|&t| eps * (t.abs() + T::one())).collect();
    let frac = T::from_f64_lossy(cfg.step_fraction);
    let step: Vec<T> = half.iter().map(|&h| h * frac).collect();

    let center_loss = objective.loss(center)?;
    let mut best = center_loss;
    let mut evaluations = 1;
    let at = |z: &[T]| -> Result<ParamSet<T>> {
        let p: Vec<T> = theta.iter().zip(z).map(|(&t, &d)| t + d).collect();
        center.with_flat(&p)
    };

    for start in 0..cfg.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(start as u64);
        let reach: &[T] = match cfg.start {
            Start::Local => &step,
            Start::Uniform => &half,
        };
        let mut z: Vec<T> = if cfg.start == Start::Local && start == 0 {
            vec![T::zero(); theta.len()]
        } else {
            reach
                .iter()
                .map(|&h| h * T::from_f64_lossy(rng.random_range(-1.0..=1.0)))
                .collect()
        };
        for _ in 0..cfg.steps {
            let (l, g) = objective.loss_and_grad(&at(&z)?)?;
            evaluations += 1;
            if l > best {
                best = l;
            }
            let g = g.to_flat();
            let peak = g
                .iter()
                .zip(&half)
                .fold(T::zero(), |m, (&gi, &hi)| m.max((gi * hi).abs()));
            if peak == T::zero() || !peak.is_finite() {
                break;
            }
            for (((zi, &gi), &si), &hi) in z.iter_mut().zip(&g).zip(&step).zip(&half) {
                let dir = match cfg.ascent {
                    Ascent::Sign => {
                        if gi > T::zero() {
                            T::one()
                        } else if gi < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    }
                    Ascent::Scaled => gi * hi / peak,
                };
                *zi = (*zi + si * dir).max(-hi).min(hi);
            }
        }
        let l = objective.loss(&at(&z)?)?;
        evaluations += 1;
        if l > best {
            best = l;
        }
    }
    if !best.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss inside the epsilon = {} box",
            spec.epsilon
        )));
    }
    let phi = (best - center_loss) / (T::one() + center_loss);
    Ok(SharpnessResult {
        phi: phi.as_f64(),
        center_loss: center_loss.as_f64(),
        max_loss: best.as_f64(),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FilterGroup, GroupRole};
    use crate::tensor::Tensor;

    struct Fn2<F>(F);

    impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective<f64> for Fn2<F> {
        fn loss(&self, p: &ParamSet<f64>) -> Result<f64> {
            Ok((self.0)(&p.to_flat()).0)
        }

        fn loss_and_grad(&self, p: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
            let (l, g) = (self.0)(&p.to_flat());
            Ok((l, p.with_flat(&g)?))
        }
    }

    fn params(values: &[f64]) -> ParamSet<f64> {
        ParamSet::new(vec![FilterGroup {
            name: "w".into(),
            role: GroupRole::ConvFilter,
            tensor: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        }])
    }

    #[test]
    fn constant_loss_has_zero_sharpness() {
        let f = Fn2(|x: &[f64]| (2.5, vec![0.0; x.len()]));
        let r = sharpness(&f, &params(&[0.1, 0.2]), &SharpnessSpec::new(0.1, 0)).unwrap();
        assert_eq!(r.phi, 0.0);
    }

    #[test]
    fn quadratic_at_origin_gives_eps_squared() {
        let f = Fn2(|x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]));
        for eps in [0.05, 0.1, 0.2] {
            let r = sharpness(&f, &params(&[0.0]), &SharpnessSpec::new(eps, 1)).unwrap();
            assert!(
                (r.phi - eps * eps).abs() <= 0.01 * eps * eps,
                "{eps}: {}",
                r.phi
            );
        }
    }

    #[test]
    fn box_scales_with_parameter_magnitude() {
        // at theta = 3 the box is [3 - 4 eps, 3 + 4 eps]
        let f = Fn2(|x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]));
        let r = sharpness(&f, &params(&[3.0]), &SharpnessSpec::new(0.1, 2)).unwrap();
        let expected = (3.4f64 * 3.4 - 9.0) / 10.0;
        assert!((r.phi - expected).abs() < 1e-12, "{}", r.phi);
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let f = Fn2(|x: &[f64]| (x[0], vec![1.0]));
        assert!(sharpness(&f, &params(&[0.0]), &SharpnessSpec::new(0.0, 0)).is_err());
        assert!(sharpness(&f, &params(&[0.0]), &SharpnessSpec::new(-1.0, 0)).is_err());
    }
}
