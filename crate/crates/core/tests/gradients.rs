//! Finite-difference checks of every differentiable op and every
//! architecture at ten random points each.

mod common;

use common::{network_worst, op_cases, op_worst, random, rng, NET_TOL, OP_TOL};
use fcnscape::models::{Architecture, ArchitectureSpec, Model, ParamSet};

#[test]
fn every_op() {
    for (name, shapes, out, op) in op_cases() {
        let worst = op_worst(&shapes, &out, &op);
        assert!(worst < OP_TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn every_architecture_end_to_end() {
    for arch in Architecture::ALL {
        let worst = network_worst(arch);
        assert!(worst < NET_TOL, "{arch}: worst relative error {worst:e}");
    }
}

#[test]
fn f32_matches_f64_forward() {
    let model = Model::build(&ArchitectureSpec::new(Architecture::Unet, 2, 3)).unwrap();
    let p: ParamSet<f64> = model.init_params(7);
    let x = random(&[1, 1, 8, 8], &mut rng(1));
    let y64 = model.forward(&p, &x).unwrap();
    let y32 = model.forward(&p.cast::<f32>(), &x.cast::<f32>()).unwrap();
    assert!(y64.max_abs_diff(&y32.cast::<f64>()).unwrap() < 1e-4);
}
