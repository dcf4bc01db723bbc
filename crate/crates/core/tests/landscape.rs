mod common;

use common::{loop_loss, scalar_params, tiny_problem, Quadratic};
use fcnscape::landscape::{
    evaluate_surface, point_loss, sample_directions, sharpness, DatasetObjective, GridSpec,
    Objective, SharpnessSpec,
};
use fcnscape::models::{Architecture, FilterGroup, GroupRole, ParamSet};
use fcnscape::objective::Reduction;
use fcnscape::tensor::Tensor;
use fcnscape::Result;

#[test]
fn acceptance_surface_fidelity() {
    common::surface_fidelity().unwrap();
}

#[test]
fn acceptance_sharpness_oracle() {
    common::sharpness_oracle().unwrap();
}

#[test]
fn origin_equals_loop_loss_for_every_architecture() {
    for arch in Architecture::ALL {
        let (model, params, data) = tiny_problem(arch, 5);
        let objective = DatasetObjective::new(&model, &data, Reduction::SumPerSample);
        let dirs = sample_directions(&params, 1);
        let at0 = point_loss(&objective, &params, &dirs, 0.0, 0.0).unwrap();
        assert_eq!(
            at0.to_bits(),
            loop_loss(&model, &params, &data).to_bits(),
            "{arch}"
        );
    }
}

/// Any smooth function of the flattened parameters.
struct Analytic<F>(F);

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective<f64> for Analytic<F> {
    fn loss(&self, p: &ParamSet<f64>) -> Result<f64> {
        Ok((self.0)(&p.to_flat()).0)
    }

    fn loss_and_grad(&self, p: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
        let (l, g) = (self.0)(&p.to_flat());
        Ok((l, p.with_flat(&g)?))
    }
}

fn box_grid_max(center: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64, points: usize) -> f64 {
    let axis = |c: f64| -> Vec<f64> {
        let h = eps * (c.abs() + 1.0);
        (0..=points)
            .map(|k| c - h + 2.0 * h * k as f64 / points as f64)
            .collect()
    };
    match center {
        [a] => axis(*a)
            .into_iter()
            .map(|x| f(&[x]))
            .fold(f64::MIN, f64::max),
        [a, b] => {
            let (xs, ys) = (axis(*a), axis(*b));
            xs.iter()
                .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
                .map(|(x, y)| f(&[x, y]))
                .fold(f64::MIN, f64::max)
        }
        _ => unreachable!(),
    }
}

#[test]
fn maximizer_recovers_grid_maximum_in_one_and_two_dimensions() {
    let one = |p: &[f64]| {
        let x = p[0];
        (
            (3.0 * x).sin() + x * x,
            vec![3.0 * (3.0 * x).cos() + 2.0 * x],
        )
    };
    for (c, eps) in [(0.5, 0.2), (-0.3, 0.1), (0.0, 0.05)] {
        let center = scalar_params(&[c]);
        let r = sharpness(&Analytic(one), &center, &SharpnessSpec::new(eps, 0)).unwrap();
        let grid = box_grid_max(&[c], eps, |p| one(p).0, 4000);
        let l0 = one(&[c]).0;
        let exact = (grid - l0) / (1.0 + l0);
        assert!(
            (r.phi - exact).abs() <= 0.01 * exact.abs(),
            "c = {c}: {} vs {exact}",
            r.phi
        );
    }

    // concave bump with an interior maximum plus a tilted plane
    let two = |p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let l = 1.0 + x + 0.5 * y - 4.0 * (x * x + y * y) + 0.5 * x * y;
        (l, vec![1.0 - 8.0 * x + 0.5 * y, 0.5 - 8.0 * y + 0.5 * x])
    };
    for (c, eps) in [([0.0, 0.0], 0.2), ([0.3, -0.2], 0.1), ([-0.5, 0.4], 0.2)] {
        let center = scalar_params(&c);
        let r = sharpness(&Analytic(two), &center, &SharpnessSpec::new(eps, 4)).unwrap();
        let grid = box_grid_max(&c, eps, |p| two(p).0, 400);
        let l0 = two(&c).0;
        let exact = (grid - l0) / (1.0 + l0);
        assert!(
            (r.phi - exact).abs() <= 0.01 * exact.abs(),
            "c = {c:?}: {} vs {exact}",
            r.phi
        );
    }
}

#[test]
fn vanishing_box_gives_vanishing_sharpness() {
    let center = scalar_params(&[0.4, -1.1, 2.0]);
    let r = sharpness(&Quadratic, &center, &SharpnessSpec::new(1e-8, 0)).unwrap();
    assert!(r.phi >= 0.0 && r.phi < 1e-6);
}

#[test]
fn sharpness_is_non_negative_on_models() {
    for arch in [Architecture::Fcn16s, Architecture::Resskip] {
        let (model, params, data) = tiny_problem(arch, 3);
        let objective = DatasetObjective::new(&model, &data, Reduction::MeanPerElement);
        let r = sharpness(&objective, &params, &SharpnessSpec::new(0.01, 1)).unwrap();
        assert!(r.phi >= 0.0 && r.max_loss >= r.center_loss);
    }
}

/// `scale * sum theta_i^2`.
struct Bowl(f64);

impl Objective<f64> for Bowl {
    fn loss(&self, p: &ParamSet<f64>) -> Result<f64> {
        Ok(self.0 * p.iter_values().map(|x| x * x).sum::<f64>())
    }

    fn loss_and_grad(&self, p: &ParamSet<f64>) -> Result<(f64, ParamSet<f64>)> {
        Ok((self.loss(p)?, p.map(|x| 2.0 * self.0 * x)))
    }
}

#[test]
fn direction_seed_does_not_change_the_ranking() {
    let center = ParamSet::new(
        (0..6)
            .map(|i| FilterGroup {
                name: format!("f{i}"),
                role: GroupRole::ConvFilter,
                tensor: Tensor::from_fn(&[2, 3, 3], |k| ((k + i) as f64 * 0.37).sin() * 0.1),
            })
            .collect(),
    );
    let grid = GridSpec::new(10, 0.5).unwrap();
    let mut preserved = 0;
    for seed in 0..5 {
        let dirs = sample_directions(&center, seed);
        let rise = |o: &Bowl| {
            let s =
                evaluate_surface(o, &center, &dirs, grid, "toy", Reduction::SumPerSample).unwrap();
            s.mean() - s.center_loss
        };
        preserved += usize::from(rise(&Bowl(10.0)) > rise(&Bowl(1.0)));
    }
    assert!(preserved >= 4);
}

#[test]
fn rejects_non_positive_epsilon() {
    let center = scalar_params(&[0.0]);
    assert!(sharpness(&Quadratic, &center, &SharpnessSpec::new(0.0, 0)).is_err());
    assert!(sharpness(&Quadratic, &center, &SharpnessSpec::new(-0.1, 0)).is_err());
}
