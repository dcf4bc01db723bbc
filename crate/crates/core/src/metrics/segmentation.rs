use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A 2-D map of segment labels, row-major. Label 0 marks background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "LabelMap::new",
                format!("{} labels for a {height}x{width} map", labels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Number of distinct non-zero labels.
    pub fn segment_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// 1 where a `[H, W]` or `[1, H, W]` image is at least `threshold`, else 0.
pub fn binarize<T: Scalar>(image: &Tensor<T>, threshold: f64) -> Result<LabelMap> {
    let (h, w) = plane_extents(image)?;
    let labels = image.data()[..h * w]
        .iter()
        .map(|v| u32::from(v.as_f64() >= threshold))
        .collect();
    LabelMap::new(h, w, labels)
}

fn plane_extents<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize)> {
    match image.shape() {
        [h, w] | [1, h, w] => Ok((*h, *w)),
        other => Err(Error::shape(
            "binarize",
            format!("expected [H, W] or [1, H, W], got {other:?}"),
        )),
    }
}

/// 4-connected components of the non-zero pixels. Components are numbered
/// from 1 in the raster order of their first pixel.
pub fn connected_components(binary: &LabelMap) -> LabelMap {
    let (h, w) = (binary.height, binary.width);
    let mut out = vec![0u32; h * w];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if binary.labels[start] == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if binary.labels[j] != 0 && out[j] == 0 {
                    out[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    LabelMap {
        height: h,
        width: w,
        labels: out,
    }
}

/// Pixel counts `n_ij` of (pred label, gt label) pairs.
struct Contingency {
    joint: BTreeMap<(u32, u32), u64>,
    pred: BTreeMap<u32, u64>,
    gt: BTreeMap<u32, u64>,
    total: u64,
}

fn contingency(pred: &LabelMap, gt: &LabelMap, foreground_restricted: bool) -> Result<Contingency> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::shape(
            "segmentation score",
            format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height, pred.width, gt.height, gt.width
            ),
        ));
    }
    let mut c = Contingency {
        joint: BTreeMap::new(),
        pred: BTreeMap::new(),
        gt: BTreeMap::new(),
        total: 0,
    };
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if foreground_restricted && g == 0 {
            continue;
        }
        *c.joint.entry((p, g)).or_default() += 1;
        *c.pred.entry(p).or_default() += 1;
        *c.gt.entry(g).or_default() += 1;
        c.total += 1;
    }
    Ok(c)
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// F-score form of the Rand index: precision `sum n_ij^2 / sum s_i^2` over
/// prediction segments, recall `sum n_ij^2 / sum t_j^2` over ground-truth
/// segments. With `foreground_restricted`, pixels whose ground-truth label is
/// 0 are left out; `None` if that leaves nothing.
pub fn rand_score(
    pred: &LabelMap,
    gt: &LabelMap,
    foreground_restricted: bool,
) -> Result<Option<f64>> {
    let c = contingency(pred, gt, foreground_restricted)?;
    if c.total == 0 {
        return Ok(None);
    }
    let sq = |m: &mut dyn Iterator<Item = u64>| m.map(|n| (n as f64) * (n as f64)).sum::<f64>();
    let joint = sq(&mut c.joint.values().copied());
    let precision = joint / sq(&mut c.pred.values().copied());
    let recall = joint / sq(&mut c.gt.values().copied());
    Ok(Some(harmonic(precision, recall)))
}

fn entropy(counts: &mut dyn Iterator<Item = u64>, total: f64) -> f64 {
    -counts
        .map(|n| {
            let p = n as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Information-theoretic score: with `I` the mutual information of the two
/// labelings, the split score is `I / H(pred)`, the merge score `I / H(gt)`,
/// and the result their harmonic mean. Natural logarithms throughout.
///
/// A zero entropy makes its ratio 1 if `I` and the other entropy are also 0
/// (both labelings are a single segment) and 0 otherwise.
pub fn voi_score(
    pred: &LabelMap,
    gt: &LabelMap,
    foreground_restricted: bool,
) -> Result<Option<f64>> {
    let c = contingency(pred, gt, foreground_restricted)?;
    if c.total == 0 {
        return Ok(None);
    }
    let n = c.total as f64;
    let h_pred = entropy(&mut c.pred.values().copied(), n);
    let h_gt = entropy(&mut c.gt.values().copied(), n);
    let h_joint = entropy(&mut c.joint.values().copied(), n);
    let mi = (h_pred + h_gt - h_joint).max(0.0);
    let ratio = |h: f64, other: f64| {
        if h > 0.0 {
            (mi / h).min(1.0)
        } else if mi == 0.0 && other == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    Ok(Some(harmonic(ratio(h_pred, h_gt), ratio(h_gt, h_pred))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: &[&[u32]]) -> LabelMap {
        LabelMap::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn components_on_small_cases() {
        let all = map(&[&[1, 1, 1], &[1, 1, 1], &[1, 1, 1]]);
        assert_eq!(connected_components(&all).labels, vec![1; 9]);
        let checker = map(&[&[1, 0], &[0, 1]]);
        assert_eq!(connected_components(&checker).labels, vec![1, 0, 0, 2]);
        let u = map(&[&[1, 0, 1], &[1, 0, 1], &[1, 1, 1]]);
        assert_eq!(connected_components(&u).segment_count(), 1);
    }

    #[test]
    fn rand_hand_case() {
        let gt = map(&[&[1, 1], &[2, 2]]);
        let one = map(&[&[5, 5], &[5, 5]]);
        let s = rand_score(&one, &gt, true).unwrap().unwrap();
        assert!((s - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rand_score(&gt, &gt, true).unwrap(), Some(1.0));
    }

    #[test]
    fn all_background_is_undefined() {
        let gt = map(&[&[0, 0], &[0, 0]]);
        assert_eq!(rand_score(&gt, &gt, true).unwrap(), None);
        assert_eq!(voi_score(&gt, &gt, true).unwrap(), None);
        assert_eq!(rand_score(&gt, &gt, false).unwrap(), Some(1.0));
    }

    #[test]
    fn voi_identity_and_independence() {
        let gt = map(&[&[1, 1], &[2, 2]]);
        assert!((voi_score(&gt, &gt, false).unwrap().unwrap() - 1.0).abs() < 1e-12);
        // columns against rows: a product distribution
        let cols = map(&[&[1, 2], &[1, 2]]);
        assert!(voi_score(&cols, &gt, false).unwrap().unwrap().abs() < 1e-12);
        let single = map(&[&[3, 3], &[3, 3]]);
        assert_eq!(voi_score(&single, &single, false).unwrap(), Some(1.0));
        assert_eq!(voi_score(&single, &gt, false).unwrap(), Some(0.0));
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let a = map(&[&[1, 1]]);
        let b = map(&[&[1], &[1]]);
        assert!(rand_score(&a, &b, false).is_err());
        assert!(voi_score(&a, &b, false).is_err());
    }
}
