//! Image quality and segmentation scores.

mod segmentation;

pub use segmentation::{binarize, connected_components, rand_score, voi_score, LabelMap};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `10 log10(max_val^2 / mse)` over all elements; `+inf` for identical
/// inputs.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, max_val: f64) -> Result<f64> {
    same_shape("psnr", pred, target)?;
    if !(max_val > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "max_val must be positive, got {max_val}"
        )));
    }
    let mse = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).as_f64();
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub max_val: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            k1: 0.01,
            k2: 0.03,
            max_val: 1.0,
        }
    }
}

/// Mean SSIM over every `window x window` square that fits inside the image,
/// with uniform weights and population (1/w^2) moments. Tensors of rank > 2
/// are treated as a stack of planes over their last two axes; the result is
/// the mean over planes.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    same_shape("ssim", pred, target)?;
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(Error::shape(
            "ssim",
            format!("need at least 2 axes, got {shape:?}"),
        ));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let win = cfg.window;
    if win == 0 || win % 2 == 0 || win > h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "SSIM window must be odd and at most {}, got {win}",
            h.min(w)
        )));
    }
    let c1 = (cfg.k1 * cfg.max_val).powi(2);
    let c2 = (cfg.k2 * cfg.max_val).powi(2);
    let area = (win * win) as f64;
    let planes = pred.len() / (h * w);
    let mut total = 0.0;
    for plane in 0..planes {
        let a = &pred.data()[plane * h * w..(plane + 1) * h * w];
        let b = &target.data()[plane * h * w..(plane + 1) * h * w];
        let mut acc = 0.0;
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + win {
                    for x in x0..x0 + win {
                        let (p, q) = (a[y * w + x].as_f64(), b[y * w + x].as_f64());
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / area, sb / area);
                let va = saa / area - ma * ma;
                let vb = sbb / area - mb * mb;
                let cov = sab / area - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / ((h - win + 1) * (w - win + 1)) as f64;
    }
    Ok(total / planes as f64)
}

/// The four scores of one prediction, or their average over a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Decibels; `+inf` (written as the string `"inf"`) for a perfect
    /// prediction.
    #[serde(with = "db")]
    pub psnr: f64,
    pub ssim: f64,
    pub rand: Option<f64>,
    pub voi: Option<f64>,
}

mod db {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Db {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Db::Finite(*v).serialize(s)
        } else {
            Db::Text(
                if *v > 0.0 {
                    "inf"
                } else if *v < 0.0 {
                    "-inf"
                } else {
                    "nan"
                }
                .into(),
            )
            .serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Db::deserialize(d)? {
            Db::Finite(v) => Ok(v),
            Db::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub ssim: SsimConfig,
    /// Prediction and target maps are split into foreground and background
    /// at this value before segments are labelled.
    pub threshold: f64,
    pub foreground_restricted: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            threshold: 0.5,
            foreground_restricted: true,
        }
    }
}

/// Segment labels of the first channel of a `[C, H, W]` map: 4-connected
/// components of the pixels at or above `threshold`.
pub fn segment<T: Scalar>(image: &Tensor<T>, threshold: f64) -> Result<LabelMap> {
    let (_, h, w) = match image.shape() {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::shape(
                "segment",
                format!("expected [C, H, W], got {other:?}"),
            ))
        }
    };
    let plane = Tensor::new(vec![h, w], image.data()[..h * w].to_vec())?;
    Ok(connected_components(&binarize(&plane, threshold)?))
}

/// Scores one `[C, H, W]` prediction against its target.
pub fn evaluate_pair<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    cfg: &EvalConfig,
) -> Result<QualityReport> {
    let p = segment(pred, cfg.threshold)?;
    let g = segment(target, cfg.threshold)?;
    let window = SsimConfig {
        window: cfg
            .ssim
            .window
            .min(odd_floor(pred.shape()[1].min(pred.shape()[2]))),
        ..cfg.ssim
    };
    Ok(QualityReport {
        psnr: psnr(pred, target, cfg.ssim.max_val)?,
        ssim: ssim(pred, target, &window)?,
        rand: rand_score(&p, &g, cfg.foreground_restricted)?,
        voi: voi_score(&p, &g, cfg.foreground_restricted)?,
    })
}

fn odd_floor(n: usize) -> usize {
    if n % 2 == 0 {
        n.saturating_sub(1).max(1)
    } else {
        n
    }
}

/// Per-image reports averaged over a dataset. Undefined segment scores are
/// left out of their average.
pub fn average(reports: &[QualityReport]) -> Option<QualityReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mean_opt = |f: fn(&QualityReport) -> Option<f64>| {
        let v: Vec<f64> = reports.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Some(QualityReport {
        psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        rand: mean_opt(|r| r.rand),
        voi: mean_opt(|r| r.voi),
    })
}

/// Fixed-width table with one row per named report.
pub fn format_table(rows: &[(String, QualityReport)]) -> String {
    let cell = |v: Option<f64>| match v {
        Some(x) if x.is_infinite() => format!("{:>10}", "inf"),
        Some(x) => format!("{x:>10.4}"),
        None => format!("{:>10}", "-"),
    };
    let mut s = format!(
        "{:<16}{:>10}{:>10}{:>10}{:>10}\n",
        "model", "psnr", "ssim", "rand", "voi"
    );
    for (name, r) in rows {
        writeln!(
            s,
            "{name:<16}{}{}{}{}",
            cell(Some(r.psnr)),
            cell(Some(r.ssim)),
            cell(r.rand),
            cell(r.voi)
        )
        .unwrap();
    }
    s
}
