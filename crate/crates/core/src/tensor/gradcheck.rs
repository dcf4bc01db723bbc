//! Central finite-difference checks of the tape's analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn evaluate<T, F>(build: &F, point: &[Tensor<T>]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let v = g.value(root);
    if !v.is_scalar() {
        return Err(Error::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

fn analytic<T, F>(build: &F, point: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    let mut grads = g.backward(root)?;
    Ok(vars
        .iter()
        .zip(point)
        .map(|(&v, t)| grads.take_or_zeros(v, t.shape()))
        .collect())
}

fn check_coords<T, F>(
    build: &F,
    point: &[Tensor<T>],
    fd_step: f64,
    coords: &[(usize, usize)],
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let grads = analytic(build, point)?;
    let h = T::from_f64_lossy(fd_step);
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for &(t, i) in coords {
        let orig = probe[t].data()[i];
        probe[t].data_mut()[i] = orig + h;
        let up = evaluate(build, &probe)?;
        probe[t].data_mut()[i] = orig - h;
        let down = evaluate(build, &probe)?;
        probe[t].data_mut()[i] = orig;
        let numeric = (up - down).as_f64() / (2.0 * fd_step);
        let exact = grads[t].data()[i].as_f64();
        let err = (exact - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Largest `|analytic - numeric| / max(1, |numeric|)` over every coordinate
/// of every tensor in `point`. `build` receives one differentiable leaf per
/// tensor and must return a scalar node.
pub fn grad_check<T, F>(build: F, point: &[Tensor<T>], fd_step: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect();
    check_coords(&build, point, fd_step, &coords)
}

/// Like [`grad_check`] but over `samples` coordinates drawn without
/// replacement from all tensors in `point`.
pub fn grad_check_sampled<T, F>(
    build: F,
    point: &[Tensor<T>],
    fd_step: f64,
    samples: usize,
    seed: u64,
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> = sample(&mut rng, all.len(), samples.min(all.len()))
        .into_iter()
        .map(|i| all[i])
        .collect();
    check_coords(&build, point, fd_step, &picked)
}
