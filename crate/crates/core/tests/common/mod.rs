//! Independent oracles and the checks behind the acceptance criteria.
//! Each check returns a one-line summary on success and the reason on
//! failure.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fcnscape::data::{
    decode_ftsr, encode_ftsr, read_ftsr, read_pgm, synth_generate, write_ftsr, write_pgm, Dataset,
    SynthSpec, SynthTask,
};
use fcnscape::landscape::{
    evaluate_surface, export_surface, import_surface, sample_directions, sharpness,
    DatasetObjective, GridSpec, Objective, SharpnessSpec, SurfaceFormat, SurfaceMetadata,
};
use fcnscape::metrics::{
    connected_components, psnr, rand_score, ssim, voi_score, LabelMap, SsimConfig,
};
use fcnscape::models::{
    read_checkpoint, write_checkpoint, Architecture, ArchitectureSpec, FilterGroup, GroupRole,
    Model, ParamSet,
};
use fcnscape::objective::Reduction;
use fcnscape::tensor::{grad_check, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- gradients

pub const GRAD_POINTS: u64 = 10;
pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> fcnscape::Result<Var>>;

/// Every differentiable op: name, input shapes, output shape, builder.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Vec<usize>, OpFn)> {
    vec![
        (
            "conv3x3",
            vec![vec![2, 3, 5, 6], vec![4, 3, 3, 3], vec![4]],
            vec![2, 4, 5, 6],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
        ),
        (
            "conv1x1",
            vec![vec![1, 2, 4, 4], vec![3, 2, 1, 1]],
            vec![1, 3, 4, 4],
            Box::new(|g, v| g.conv2d(v[0], v[1], None, 1, 0)),
        ),
        (
            "maxpool",
            vec![vec![2, 3, 6, 8]],
            vec![2, 3, 3, 4],
            Box::new(|g, v| g.maxpool2d(v[0], 2)),
        ),
        (
            "upsample",
            vec![vec![2, 3, 3, 4], vec![2, 3, 2, 2], vec![2]],
            vec![2, 2, 6, 8],
            Box::new(|g, v| g.upsample2x(v[0], v[1], Some(v[2]))),
        ),
        (
            "relu",
            vec![vec![2, 3, 4, 4]],
            vec![2, 3, 4, 4],
            Box::new(|g, v| Ok(g.relu(v[0]))),
        ),
        (
            "concat",
            vec![vec![2, 3, 4, 4], vec![2, 1, 4, 4]],
            vec![2, 4, 4, 4],
            Box::new(|g, v| g.concat_channels(v[0], v[1])),
        ),
        (
            "add",
            vec![vec![2, 3, 4, 4], vec![2, 3, 4, 4]],
            vec![2, 3, 4, 4],
            Box::new(|g, v| g.add(v[0], v[1])),
        ),
        (
            "mul",
            vec![vec![3, 5], vec![3, 5]],
            vec![3, 5],
            Box::new(|g, v| g.mul(v[0], v[1])),
        ),
        (
            "mse-sum",
            vec![vec![3, 2, 4, 4], vec![3, 2, 4, 4]],
            vec![],
            Box::new(|g, v| g.mse(v[0], v[1], Reduction::SumPerSample)),
        ),
        (
            "mse-mean",
            vec![vec![3, 2, 4, 4], vec![3, 2, 4, 4]],
            vec![],
            Box::new(|g, v| g.mse(v[0], v[1], Reduction::MeanPerElement)),
        ),
    ]
}

/// Worst finite-difference error of one op over the random points. Non-scalar
/// outputs are reduced with random weights so every element counts.
pub fn op_worst(shapes: &[Vec<usize>], out_shape: &[usize], op: &OpFn) -> f64 {
    let mut worst = 0.0f64;
    for point in 0..GRAD_POINTS {
        let mut r = rng(point);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(s, &mut r)).collect();
        let weights = (!out_shape.is_empty()).then(|| random(out_shape, &mut r));
        let err = grad_check(
            |g, v| {
                let y = op(g, v)?;
                match &weights {
                    Some(w) => {
                        let w = g.constant(w.clone());
                        let p = g.mul(y, w)?;
                        Ok(g.sum(p))
                    }
                    None => Ok(y),
                }
            },
            &inputs,
            1e-6,
        )
        .expect("op evaluates");
        worst = worst.max(err);
    }
    worst
}

/// Worst error of the tape gradient of a whole network against central
/// differences of its loss, over 24 sampled coordinates at each point.
///
/// Points are jittered away from the initialisation: zero biases behind a
/// dead channel put a ReLU exactly on its kink, where central differences
/// return the mean of the two one-sided slopes.
pub fn network_worst(arch: Architecture) -> f64 {
    let model = Model::build(&ArchitectureSpec::new(arch, 2, 3)).unwrap();
    let reduction = Reduction::SumPerSample;
    let h = 1e-6;
    let mut worst = 0.0f64;
    for point in 0..GRAD_POINTS {
        let mut r = rng(100 + point);
        let init: ParamSet<f64> = model.init_params(point);
        let flat: Vec<f64> = init
            .to_flat()
            .iter()
            .map(|v| v + 0.05 * r.random_range(-1.0..1.0))
            .collect();
        let params = init.with_flat(&flat).unwrap();
        let x = random(&[2, 1, 8, 8], &mut r);
        let y = random(&[2, 1, 8, 8], &mut r);
        let (_, grad) = model.loss_and_grad(&params, &x, &y, reduction).unwrap();
        let grad = grad.to_flat();
        let loss_at = |i: usize, delta: f64| {
            let mut f = flat.clone();
            f[i] += delta;
            model
                .loss(&params.with_flat(&f).unwrap(), &x, &y, reduction)
                .unwrap()
                .value
        };
        for _ in 0..24 {
            let i = r.random_range(0..flat.len());
            let numeric = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
            worst = worst.max((grad[i] - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    worst
}

pub fn gradient_checks() -> Check {
    let t = Instant::now();
    let mut op_max = 0.0f64;
    for (name, shapes, out, op) in op_cases() {
        let e = op_worst(&shapes, &out, &op);
        ensure(e < OP_TOL, || format!("{name}: relative error {e:e}"))?;
        op_max = op_max.max(e);
    }
    let mut net_max = 0.0f64;
    for arch in Architecture::ALL {
        let e = network_worst(arch);
        ensure(e < NET_TOL, || format!("{arch}: relative error {e:e}"))?;
        net_max = net_max.max(e);
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "ops worst {op_max:.1e} (< 1e-4), architectures worst {net_max:.1e} (< 1e-3), {secs:.1} s"
    ))
}

// ---------------------------------------------------------------- landscape

/// A small blobs dataset and untrained model for landscape checks.
pub fn tiny_problem(arch: Architecture, count: usize) -> (Model, ParamSet<f64>, Dataset<f64>) {
    let data: Dataset<f64> =
        synth_generate(&SynthSpec::new(SynthTask::Blobs, count, 8, 11)).unwrap();
    let model = Model::build(&ArchitectureSpec::new(arch, 2, 2)).unwrap();
    let params = model.init_params(5);
    (model, params, data)
}

/// Dataset loss by a plain loop: one sample at a time, squared errors summed
/// in sample order, divided by the sample count.
pub fn loop_loss(model: &Model, params: &ParamSet<f64>, data: &Dataset<f64>) -> f64 {
    let mut total = 0.0;
    for pair in &data.pairs {
        let x = Tensor::stack(&[&pair.input]).unwrap();
        let y = model.forward(params, &x).unwrap();
        for (p, t) in y.data().iter().zip(pair.target.data()) {
            total += (p - t) * (p - t);
        }
    }
    total * (1.0 / data.len() as f64)
}

pub fn surface_fidelity() -> Check {
    let (model, params, data) = tiny_problem(Architecture::Unet, 4);
    let objective = DatasetObjective::new(&model, &data, Reduction::SumPerSample);
    let oracle = loop_loss(&model, &params, &data);
    let dirs = sample_directions(&params, 9);
    let mut cells = 0;
    for n in (4..=40).step_by(2) {
        let grid = GridSpec::new(n, 0.5).unwrap();
        let s = evaluate_surface(
            &objective,
            &params,
            &dirs,
            grid,
            "train",
            Reduction::SumPerSample,
        )
        .unwrap();
        let c = s.values[n / 2][n / 2];
        ensure(c.to_bits() == oracle.to_bits(), || {
            format!("n = {n}: centre {c:e} vs loop oracle {oracle:e}")
        })?;
        cells += (n + 1) * (n + 1);
        if n % 12 == 4 {
            let neg = evaluate_surface(
                &objective,
                &params,
                &dirs.negated(),
                grid,
                "train",
                Reduction::SumPerSample,
            )
            .unwrap();
            ensure(s.rotated_180() == neg.values, || {
                format!("n = {n}: sign symmetry broken")
            })?;
        }
    }
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let d = sample_directions(&params, seed);
        for dir in [&d.u, &d.v] {
            for g in dir.groups() {
                match g.role {
                    GroupRole::ConvFilter => worst = worst.max((g.tensor.l2_norm() - 1.0).abs()),
                    GroupRole::Bias => ensure(g.tensor.data().iter().all(|&x| x == 0.0), || {
                        "bias direction not zero".into()
                    })?,
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("filter norm off by {worst:e}"))?;
    Ok(format!(
        "centre bit-identical for n = 4..40 ({cells} cells), filter norms within {worst:.0e}, sign symmetry exact"
    ))
}

/// `L(theta) = sum theta_i^2`.
pub struct Quadratic;

impl Objective<f64> for Quadratic {
    fn loss(&self, p: &ParamSet<f64>) -> fcnscape::Result<f64> {
        Ok(p.iter_values().map(|x| x * x).sum())
    }

    fn loss_and_grad(&self, p: &ParamSet<f64>) -> fcnscape::Result<(f64, ParamSet<f64>)> {
        Ok((self.loss(p)?, p.map(|x| 2.0 * x)))
    }
}

pub fn scalar_params(values: &[f64]) -> ParamSet<f64> {
    ParamSet::new(vec![FilterGroup {
        name: "w".into(),
        role: GroupRole::ConvFilter,
        tensor: Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
    }])
}

pub fn sharpness_oracle() -> Check {
    let t = Instant::now();
    let center = scalar_params(&[0.0]);
    let mut detail = Vec::new();
    for eps in [0.05, 0.1, 0.2] {
        let phi = sharpness(&Quadratic, &center, &SharpnessSpec::new(eps, 0))
            .unwrap()
            .phi;
        // dense grid over the box [-eps, eps]
        let grid = (0..=2000)
            .map(|k| {
                let z = -eps + 2.0 * eps * k as f64 / 2000.0;
                z * z
            })
            .fold(0.0, f64::max);
        let analytic = eps * eps;
        ensure((grid - analytic).abs() <= 1e-12, || {
            format!("grid oracle {grid} vs {analytic}")
        })?;
        let rel = (phi - analytic).abs() / analytic;
        ensure(rel < 0.01, || {
            format!("eps = {eps}: phi {phi} vs {analytic}")
        })?;
        detail.push(format!("{phi:.5}"));
    }
    let mut models = 1;
    for arch in Architecture::ALL {
        let (model, params, data) = tiny_problem(arch, 4);
        let objective = DatasetObjective::new(&model, &data, Reduction::SumPerSample);
        let mut last = 0.0;
        for eps in [0.05, 0.1, 0.2] {
            let phi = sharpness(&objective, &params, &SharpnessSpec::new(eps, 3))
                .unwrap()
                .phi;
            ensure(phi >= last, || {
                format!("{arch}: phi({eps}) = {phi:e} < {last:e}")
            })?;
            last = phi;
        }
        models += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "quadratic phi = {} for eps 0.05/0.1/0.2, monotone in eps on {models} models, {secs:.1} s",
        detail.join("/")
    ))
}

// ---------------------------------------------------------------- metrics

/// Random `h x w` labels in `0..k`, drawn as blocks so segments have some
/// extent.
pub fn random_labels(r: &mut ChaCha8Rng, h: usize, w: usize, k: u32) -> LabelMap {
    let block = r.random_range(1..=3);
    let mut cells = BTreeMap::new();
    let labels = (0..h * w)
        .map(|i| {
            let key = ((i / w) / block, (i % w) / block);
            *cells.entry(key).or_insert_with(|| r.random_range(0..k))
        })
        .collect();
    LabelMap::new(h, w, labels).unwrap()
}

fn included(gt: &LabelMap, fg: bool) -> Vec<usize> {
    (0..gt.labels.len())
        .filter(|&i| !fg || gt.labels[i] != 0)
        .collect()
}

/// Rand F-score by counting every ordered pixel pair.
pub fn rand_oracle(pred: &LabelMap, gt: &LabelMap, fg: bool) -> Option<f64> {
    let idx = included(gt, fg);
    if idx.is_empty() {
        return None;
    }
    let (mut both, mut same_pred, mut same_gt) = (0u64, 0u64, 0u64);
    for &a in &idx {
        for &b in &idx {
            let sp = pred.labels[a] == pred.labels[b];
            let sg = gt.labels[a] == gt.labels[b];
            both += u64::from(sp && sg);
            same_pred += u64::from(sp);
            same_gt += u64::from(sg);
        }
    }
    let p = both as f64 / same_pred as f64;
    let r = both as f64 / same_gt as f64;
    Some(2.0 * p * r / (p + r))
}

/// Information score from an explicit joint probability table.
pub fn voi_oracle(pred: &LabelMap, gt: &LabelMap, fg: bool) -> Option<f64> {
    let idx = included(gt, fg);
    if idx.is_empty() {
        return None;
    }
    let mut pl: Vec<u32> = idx.iter().map(|&i| pred.labels[i]).collect();
    let mut gl: Vec<u32> = idx.iter().map(|&i| gt.labels[i]).collect();
    pl.sort_unstable();
    pl.dedup();
    gl.sort_unstable();
    gl.dedup();
    let mut table = vec![vec![0.0f64; gl.len()]; pl.len()];
    let unit = 1.0 / idx.len() as f64;
    for &i in &idx {
        let a = pl.iter().position(|&l| l == pred.labels[i]).unwrap();
        let b = gl.iter().position(|&l| l == gt.labels[i]).unwrap();
        table[a][b] += unit;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..gl.len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let h = |p: &[f64]| {
        -p.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * x.ln())
            .sum::<f64>()
    };
    let (h_pred, h_gt) = (h(&rows), h(&cols));
    let mut mi = 0.0;
    for (a, row) in table.iter().enumerate() {
        for (b, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (rows[a] * cols[b])).ln();
            }
        }
    }
    let mi = mi.max(0.0);
    let ratio = |h: f64, other: f64| {
        if h > 0.0 {
            (mi / h).min(1.0)
        } else if mi.abs() < 1e-15 && other == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let (s, m) = (ratio(h_pred, h_gt), ratio(h_gt, h_pred));
    Some(if s + m > 0.0 {
        2.0 * s * m / (s + m)
    } else {
        0.0
    })
}

/// Component count by recursive flood fill.
pub fn flood_fill_count(mask: &LabelMap) -> usize {
    fn fill(mask: &LabelMap, seen: &mut [bool], y: usize, x: usize) {
        let i = y * mask.width + x;
        if seen[i] || mask.labels[i] == 0 {
            return;
        }
        seen[i] = true;
        if y > 0 {
            fill(mask, seen, y - 1, x);
        }
        if y + 1 < mask.height {
            fill(mask, seen, y + 1, x);
        }
        if x > 0 {
            fill(mask, seen, y, x - 1);
        }
        if x + 1 < mask.width {
            fill(mask, seen, y, x + 1);
        }
    }
    let mut seen = vec![false; mask.labels.len()];
    let mut count = 0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            let i = y * mask.width + x;
            if mask.labels[i] != 0 && !seen[i] {
                count += 1;
                fill(mask, &mut seen, y, x);
            }
        }
    }
    count
}

/// SSIM with two-pass window moments.
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize, win: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut windows = 0;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let cells: Vec<(f64, f64)> = (y0..y0 + win)
                .flat_map(|y| (x0..x0 + win).map(move |x| (y, x)))
                .map(|(y, x)| (a[y * w + x], b[y * w + x]))
                .collect();
            let n = cells.len() as f64;
            let ma = cells.iter().map(|c| c.0).sum::<f64>() / n;
            let mb = cells.iter().map(|c| c.1).sum::<f64>() / n;
            let va = cells.iter().map(|c| (c.0 - ma).powi(2)).sum::<f64>() / n;
            let vb = cells.iter().map(|c| (c.1 - mb).powi(2)).sum::<f64>() / n;
            let cov = cells.iter().map(|c| (c.0 - ma) * (c.1 - mb)).sum::<f64>() / n;
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            windows += 1;
        }
    }
    total / windows as f64
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

pub fn metric_oracles() -> Check {
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let k = 1 + case as u32 % 5;
        let pred = random_labels(&mut r, 8, 8, k + 1);
        let gt = random_labels(&mut r, 8, 8, k);
        for fg in [true, false] {
            let (a, b) = (
                rand_score(&pred, &gt, fg).unwrap(),
                rand_oracle(&pred, &gt, fg),
            );
            ensure(close(a, b, 1e-9), || {
                format!("map {case}: rand {a:?} vs oracle {b:?}")
            })?;
            let (c, d) = (
                voi_score(&pred, &gt, fg).unwrap(),
                voi_oracle(&pred, &gt, fg),
            );
            ensure(close(c, d, 1e-9), || {
                format!("map {case}: voi {c:?} vs oracle {d:?}")
            })?;
            for (x, y) in [(a, b), (c, d)] {
                if let (Some(x), Some(y)) = (x, y) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
        let mask =
            LabelMap::new(8, 8, gt.labels.iter().map(|&l| u32::from(l != 0)).collect()).unwrap();
        let cc = connected_components(&mask).segment_count();
        ensure(cc == flood_fill_count(&mask), || {
            format!("map {case}: components {cc}")
        })?;
    }

    let a = Tensor::from_fn(&[1, 8, 8], |_| r.random_range(0.0..1.0));
    ensure(psnr(&a, &a, 1.0).unwrap() == f64::INFINITY, || {
        "psnr of identical inputs".into()
    })?;
    ensure(
        (ssim(
            &a,
            &a,
            &SsimConfig {
                window: 7,
                ..Default::default()
            },
        )
        .unwrap()
            - 1.0)
            .abs()
            < 1e-12,
        || "ssim of identical inputs".into(),
    )?;
    let mut last = f64::INFINITY;
    for step in 1..=5 {
        let b = a.map(|v| v + 0.05 * step as f64);
        let p = psnr(&a, &b, 1.0).unwrap();
        ensure(p < last, || {
            format!("psnr not decreasing at offset step {step}")
        })?;
        last = p;
    }
    let b = Tensor::from_fn(&[1, 8, 8], |_| r.random_range(0.0..1.0));
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / 64.0;
    let p = psnr(&a, &b, 1.0).unwrap();
    ensure((p - 10.0 * (1.0 / mse).log10()).abs() < 1e-9, || {
        "psnr vs loop oracle".into()
    })?;
    for win in [3, 5, 7] {
        let s = ssim(
            &a,
            &b,
            &SsimConfig {
                window: win,
                ..Default::default()
            },
        )
        .unwrap();
        let o = ssim_oracle(a.data(), b.data(), 8, 8, win);
        ensure((s - o).abs() < 1e-9, || {
            format!("ssim window {win}: {s} vs oracle {o}")
        })?;
    }
    let offset = a.map(|v| v + 0.5);
    ensure(
        ssim(
            &a,
            &offset,
            &SsimConfig {
                window: 7,
                ..Default::default()
            },
        )
        .unwrap()
            < 1.0,
        || "ssim of offset image".into(),
    )?;
    Ok(format!(
        "rand/voi match pair-counting and entropy oracles on 50 maps (worst {worst:.0e}), psnr/ssim properties hold"
    ))
}

// ---------------------------------------------------------------- formats

pub fn format_round_trips(dir: &Path) -> Check {
    let specials = [
        0.0,
        -0.0,
        1e-310,
        -f64::MAX,
        f64::MIN_POSITIVE,
        1.0 / 3.0,
        f64::INFINITY,
        f64::NAN,
    ];
    let mut r = rng(5);
    let t = Tensor::from_fn(&[2, 3, 4], |i| {
        if i < specials.len() {
            specials[i]
        } else {
            r.random_range(-1e3..1e3)
        }
    });
    let path = dir.join("t.ftsr");
    write_ftsr(&path, &t).unwrap();
    let back: Tensor<f64> = read_ftsr(&path).unwrap();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(back.shape() == t.shape() && bits(&back) == bits(&t), || {
        "f64 FTSR round trip".into()
    })?;
    let t32 = t.cast::<f32>();
    let back32: Tensor<f32> = decode_ftsr(&encode_ftsr(&t32)).unwrap();
    let bits32 = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits32(&back32) == bits32(&t32), || {
        "f32 FTSR round trip".into()
    })?;

    let img = Tensor::from_fn(&[1, 5, 7], |i| ((i * 37) % 256) as f64 / 255.0);
    let pgm = dir.join("t.pgm");
    write_pgm(&pgm, &img).unwrap();
    let back: Tensor<f64> = read_pgm(&pgm).unwrap();
    ensure(bits(&back) == bits(&img), || {
        "PGM round trip of 8-bit levels".into()
    })?;

    for arch in Architecture::ALL {
        let model = Model::build(&ArchitectureSpec::new(arch, 2, 3)).unwrap();
        let params: ParamSet<f64> = model.init_params(1);
        let mut prov = serde_json::Map::new();
        prov.insert("note".into(), "round trip".into());
        let path = dir.join(format!("{arch}.ckpt"));
        let manifest = write_checkpoint(&path, model.spec(), 1, &params, prov).unwrap();
        let c = read_checkpoint::<f64>(&path).unwrap();
        let flat_bits =
            |p: &ParamSet<f64>| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(
            c.manifest == manifest
                && c.params == params
                && flat_bits(&c.params) == flat_bits(&params),
            || format!("{arch} checkpoint round trip"),
        )?;
    }

    let (model, params, data) = tiny_problem(Architecture::Fcn8s, 3);
    let objective = DatasetObjective::new(&model, &data, Reduction::SumPerSample);
    let dirs = sample_directions(&params, 2);
    let s = evaluate_surface(
        &objective,
        &params,
        &dirs,
        GridSpec::new(6, 0.5).unwrap(),
        "train",
        Reduction::SumPerSample,
    )
    .unwrap();
    let meta = SurfaceMetadata::of(&s);
    for (name, format) in [
        ("s.csv", SurfaceFormat::Csv),
        ("s.json", SurfaceFormat::Json),
    ] {
        let path = dir.join(name);
        export_surface(&s, &meta, &path, format).unwrap();
        let (back, m) = import_surface(&path).unwrap();
        let same = back.values.iter().flatten().map(|v| v.to_bits()).eq(s
            .values
            .iter()
            .flatten()
            .map(|v| v.to_bits()));
        ensure(
            same && m == meta && back.center_loss.to_bits() == s.center_loss.to_bits(),
            || format!("surface {name} round trip"),
        )?;
    }
    Ok("FTSR (f64, f32, special values), PGM, checkpoints of 5 architectures, CSV and JSON surfaces bit-exact".into())
}

// ---------------------------------------------------------------- pipeline

pub fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fcnscape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn collect(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>, root: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(&path, out, root);
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("csv" | "json" | "ckpt" | "bin" | "ftsr")
        ) {
            out.insert(
                path.strip_prefix(root).unwrap().to_path_buf(),
                fs::read(&path).unwrap(),
            );
        }
    }
}

/// synth, train, surface and sharpness through the binary; returns every
/// CSV/JSON/checkpoint/tensor artifact by relative path.
pub fn pipeline(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let (data, train, surf, sharp) = (p("data"), p("train"), p("surface"), p("sharpness"));
    let ckpt = p("train/best.ckpt");
    let steps: [Vec<&str>; 4] = [
        vec![
            "synth", "--task", "blobs", "--count", "8", "--size", "16", "--seed", "3", "--out",
            &data,
        ],
        vec![
            "train",
            "--data",
            &data,
            "--arch",
            "unet",
            "--depth",
            "2",
            "--base",
            "4",
            "--epochs",
            "3",
            "--batch",
            "4",
            "--lr",
            "0.01",
            "--reduction",
            "mean-per-element",
            "--seed",
            "3",
            "--out",
            &train,
        ],
        vec![
            "surface",
            "--checkpoint",
            &ckpt,
            "--n",
            "6",
            "--seed",
            "3",
            "--out",
            &surf,
        ],
        vec![
            "sharpness",
            "--checkpoint",
            &ckpt,
            "--eps",
            "0.05",
            "--eps",
            "0.1",
            "--repeats",
            "2",
            "--steps",
            "3",
            "--seed",
            "3",
            "--out",
            &sharp,
        ],
    ];
    for args in &steps {
        let out = run_cli(args);
        if !out.status.success() {
            return Err(format!(
                "`{}` failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    let mut files = BTreeMap::new();
    collect(root, &mut files, root);
    Ok(files)
}

pub fn pipeline_determinism(root: &Path) -> Check {
    let first = pipeline(root)?;
    fs::remove_dir_all(root).unwrap();
    let second = pipeline(root)?;
    ensure(first.keys().eq(second.keys()), || {
        "different artifact sets".into()
    })?;
    for (path, bytes) in &first {
        ensure(&second[path] == bytes, || {
            format!("{} differs between runs", path.display())
        })?;
    }
    let n = |ext: &str| {
        first
            .keys()
            .filter(|p| p.extension().is_some_and(|e| e == ext))
            .count()
    };
    Ok(format!(
        "{} artifacts byte-identical across reruns ({} csv, {} json)",
        first.len(),
        n("csv"),
        n("json")
    ))
}
