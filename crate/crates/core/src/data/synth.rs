//! Synthetic image-to-image tasks.
//!
//! `blobs` is a segmentation analogue: noisy renderings of ellipses and
//! strokes with their clean binary masks as targets. `denoise` is a
//! restoration analogue: smooth textures as targets, Gaussian-corrupted
//! copies as inputs. Pair `i` is drawn from stream `i` of a ChaCha generator
//! seeded with the dataset seed, so every pair is reproducible on its own.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImagePair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    Blobs,
    Denoise,
}

impl std::str::FromStr for SynthTask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blobs" => Ok(SynthTask::Blobs),
            "denoise" => Ok(SynthTask::Denoise),
            other => Err(format!(
                "unknown task `{other}` (expected blobs or denoise)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Input channels (and target channels for `denoise`).
    pub channels: usize,
    /// Per-image noise standard deviation is drawn uniformly from this range.
    pub noise: (f64, f64),
}

impl SynthSpec {
    pub fn new(task: SynthTask, count: usize, size: usize, seed: u64) -> Self {
        let noise = match task {
            SynthTask::Blobs => (0.08, 0.16),
            SynthTask::Denoise => (0.05, 0.2),
        };
        Self {
            task,
            count,
            size,
            seed,
            channels: 1,
            noise,
        }
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn blob_mask(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let n = size as f64;
    let mut mask = vec![0.0; size * size];
    let ellipses = rng.random_range(2..=4);
    for _ in 0..ellipses {
        let cx = rng.random_range(0.1 * n..0.9 * n);
        let cy = rng.random_range(0.1 * n..0.9 * n);
        let ra = rng.random_range(0.08 * n..0.22 * n);
        let rb = rng.random_range(0.08 * n..0.22 * n);
        let theta: f64 = rng.random_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let u = (c * dx + s * dy) / ra;
                let v = (-s * dx + c * dy) / rb;
                if u * u + v * v <= 1.0 {
                    mask[y * size + x] = 1.0;
                }
            }
        }
    }
    let strokes = rng.random_range(0..=2);
    for _ in 0..strokes {
        let (x0, y0) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let (x1, y1) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let half_width = rng.random_range(0.6..1.4);
        let (ex, ey) = (x1 - x0, y1 - y0);
        let len2 = (ex * ex + ey * ey).max(1e-9);
        for y in 0..size {
            for x in 0..size {
                let px = x as f64 + 0.5 - x0;
                let py = y as f64 + 0.5 - y0;
                let t = ((px * ex + py * ey) / len2).clamp(0.0, 1.0);
                let (qx, qy) = (px - t * ex, py - t * ey);
                if (qx * qx + qy * qy).sqrt() <= half_width {
                    mask[y * size + x] = 1.0;
                }
            }
        }
    }
    mask
}

fn blobs_pair(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> (Vec<f64>, Vec<f64>, f64) {
    let size = spec.size;
    let mask = blob_mask(rng, size);
    let sigma = rng.random_range(spec.noise.0..=spec.noise.1);
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut input = Vec::with_capacity(spec.channels * size * size);
    for _ in 0..spec.channels {
        let bg = rng.random_range(0.1..0.3);
        let fg = rng.random_range(0.6..0.9);
        let (gx, gy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        for y in 0..size {
            for x in 0..size {
                let shade =
                    gx * (x as f64 / size as f64 - 0.5) + gy * (y as f64 / size as f64 - 0.5);
                let clean = if mask[y * size + x] > 0.0 {
                    fg
                } else {
                    bg + shade
                };
                input.push(clamp01(clean + noise.sample(rng)));
            }
        }
    }
    (input, mask, sigma)
}

fn texture(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let n = size as f64;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let bumps: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.0..n),
                rng.random_range(0.0..n),
                rng.random_range(0.1 * n..0.3 * n),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut t = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64 / n, y as f64 / n);
            let mut v: f64 = waves
                .iter()
                .map(|&(a, fx, fy, ph)| a * (2.0 * PI * (fx * xf + fy * yf) + ph).sin())
                .sum();
            for &(cx, cy, r, a) in &bumps {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += 2.0 * a * (-d2 / (2.0 * r * r)).exp();
            }
            t.push(v);
        }
    }
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    t.iter().map(|&v| 0.1 + 0.8 * (v - lo) / span).collect()
}

fn denoise_pair(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> (Vec<f64>, Vec<f64>, f64) {
    let mut target = Vec::with_capacity(spec.channels * spec.size * spec.size);
    for _ in 0..spec.channels {
        target.extend(texture(rng, spec.size));
    }
    let sigma = if spec.noise.0 == spec.noise.1 {
        spec.noise.0
    } else {
        rng.random_range(spec.noise.0..=spec.noise.1)
    };
    let input = if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("finite sigma");
        target
            .iter()
            .map(|&v| clamp01(v + noise.sample(rng)))
            .collect()
    } else {
        target.clone()
    };
    (input, target, sigma)
}

/// Generates `spec.count` pairs of `spec.size` x `spec.size` images.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    if spec.size == 0 || spec.channels == 0 || spec.channels > 3 {
        return Err(Error::InvalidArgument(format!(
            "synthetic images need a positive size and 1..=3 channels (size {}, channels {})",
            spec.size, spec.channels
        )));
    }
    let (lo, hi) = spec.noise;
    if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bad noise range {lo}..{hi}"
        )));
    }
    let plane = spec.size * spec.size;
    let mut pairs = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        let (input, target, _sigma) = match spec.task {
            SynthTask::Blobs => blobs_pair(&mut rng, spec),
            SynthTask::Denoise => denoise_pair(&mut rng, spec),
        };
        let to_t = |v: Vec<f64>| -> Result<Tensor<T>> {
            let c = v.len() / plane;
            Tensor::new(
                vec![c, spec.size, spec.size],
                v.into_iter().map(T::from_f64_lossy).collect(),
            )
        };
        pairs.push(ImagePair::new(
            format!("{:05}", i),
            to_t(input)?,
            to_t(target)?,
        )?);
    }
    let task = match spec.task {
        SynthTask::Blobs => "blobs",
        SynthTask::Denoise => "denoise",
    };
    let mut d = Dataset::new(pairs, format!("synth:{task}"));
    d.provenance.seed = Some(spec.seed);
    Ok(d)
}
