use super::{Dataset, ImagePair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rotates every channel of a square `[C, N, N]` tensor by 90 degrees
/// counter-clockwise.
pub fn rotate90<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = t.shape()[..] else {
        return Err(Error::shape(
            "rotate90",
            format!("expected [C, H, W], got {:?}", t.shape()),
        ));
    };
    if h != w {
        return Err(Error::InvalidArgument(format!(
            "rotation needs square images, got {h}x{w}"
        )));
    }
    let n = h;
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        let plane = &src[ch * n * n..(ch + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                out.push(plane[j * n + (n - 1 - i)]);
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Mirrors every channel of a `[C, H, W]` tensor left to right.
pub fn flip_horizontal<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, w] = t.shape()[..] else {
        return Err(Error::shape(
            "flip_horizontal",
            format!("expected [C, H, W], got {:?}", t.shape()),
        ));
    };
    let mut out = t.data().to_vec();
    for row in out.chunks_exact_mut(w) {
        row.reverse();
    }
    Tensor::new(t.shape().to_vec(), out)
}

const VARIANTS: [(&str, bool, usize); 8] = [
    ("r0", false, 0),
    ("r90", false, 1),
    ("r180", false, 2),
    ("r270", false, 3),
    ("r0f", true, 0),
    ("r90f", true, 1),
    ("r180f", true, 2),
    ("r270f", true, 3),
];

/// Expands each pair into its eight dihedral variants (four rotations, each
/// with and without a horizontal flip), applied identically to input and
/// target. Ids get a `_<transform>` suffix.
pub fn augment8<T: Scalar>(dataset: &Dataset<T>) -> Result<Dataset<T>> {
    let mut pairs = Vec::with_capacity(dataset.len() * 8);
    for pair in &dataset.pairs {
        let (h, w) = pair.extents();
        if h != w {
            return Err(Error::InvalidArgument(format!(
                "augment8 needs square images; `{}` is {h}x{w}",
                pair.id
            )));
        }
        for (name, flip, turns) in VARIANTS {
            let mut x = pair.input.clone();
            let mut y = pair.target.clone();
            if flip {
                x = flip_horizontal(&x)?;
                y = flip_horizontal(&y)?;
            }
            for _ in 0..turns {
                x = rotate90(&x)?;
                y = rotate90(&y)?;
            }
            pairs.push(ImagePair {
                id: format!("{}_{name}", pair.id),
                input: x,
                target: y,
            });
        }
    }
    let mut provenance = dataset.provenance.clone();
    provenance.augmented = true;
    Ok(Dataset {
        pairs,
        split: dataset.split,
        provenance,
    })
}

/// Patch origins along one axis: stride `size - overlap`, with the last
/// patch snapped to the border when the stride does not tile the extent.
pub fn patch_origins(extent: usize, size: usize, overlap: usize) -> Result<Vec<usize>> {
    if size == 0 || size > extent || overlap >= size {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} with overlap {overlap} does not fit extent {extent}"
        )));
    }
    let stride = size - overlap;
    let mut origins: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|o| o + size <= extent)
        .collect();
    let last = *origins.last().expect("size <= extent");
    if last + size < extent {
        origins.push(extent - size);
    }
    Ok(origins)
}

fn crop<T: Scalar>(t: &Tensor<T>, oy: usize, ox: usize, size: usize) -> Tensor<T> {
    let [c, _, w] = t.shape()[..] else {
        unreachable!("ImagePair tensors are rank 3")
    };
    let h = t.shape()[1];
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in oy..oy + size {
            let start = ch * h * w + y * w + ox;
            out.extend_from_slice(&t.data()[start..start + size]);
        }
    }
    Tensor::new(vec![c, size, size], out).expect("crop inside bounds")
}

/// Square patches of `size` at stride `size - overlap`, covering every pixel.
pub fn crop_patches<T: Scalar>(
    pair: &ImagePair<T>,
    size: usize,
    overlap: usize,
) -> Result<Vec<ImagePair<T>>> {
    let (h, w) = pair.extents();
    let ys = patch_origins(h, size, overlap)?;
    let xs = patch_origins(w, size, overlap)?;
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &oy in &ys {
        for &ox in &xs {
            out.push(ImagePair {
                id: format!("{}_y{oy}_x{ox}", pair.id),
                input: crop(&pair.input, oy, ox, size),
                target: crop(&pair.target, oy, ox, size),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(n: usize, id: &str) -> ImagePair<f64> {
        let x = Tensor::from_fn(&[1, n, n], |i| i as f64 / (n * n) as f64);
        let y = Tensor::from_fn(&[2, n, n], |i| ((i * 7) % 11) as f64 / 11.0);
        ImagePair::new(id, x, y).unwrap()
    }

    #[test]
    fn eight_times_data() {
        let d = Dataset::new((0..5).map(|i| pair(4, &format!("p{i}"))).collect(), "t");
        let a = augment8(&d).unwrap();
        assert_eq!(a.len(), 40);
        assert!(a.provenance.augmented);
        assert_eq!(a.pairs[9].id, "p1_r90");
        let ids: std::collections::HashSet<_> = a.ids().into_iter().collect();
        assert_eq!(ids.len(), 40);
    }

    #[test]
    fn constant_image_gives_identical_copies() {
        let t = Tensor::full(&[1, 3, 3], 0.5);
        let d = Dataset::new(vec![ImagePair::new("c", t.clone(), t).unwrap()], "t");
        let a = augment8(&d).unwrap();
        assert!(a
            .pairs
            .iter()
            .all(|p| p.input == a.pairs[0].input && p.target == a.pairs[0].target));
    }

    #[test]
    fn four_rotations_return_original() {
        let p = pair(5, "x");
        let mut t = p.input.clone();
        for _ in 0..4 {
            t = rotate90(&t).unwrap();
        }
        assert_eq!(t, p.input);
        let once = rotate90(&p.input).unwrap();
        assert_ne!(once, p.input);
        assert_eq!(
            flip_horizontal(&flip_horizontal(&p.target).unwrap()).unwrap(),
            p.target
        );
    }

    #[test]
    fn rotation_direction() {
        // [[1,2],[3,4]] counter-clockwise -> [[2,4],[1,3]]
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rotate90(&t).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn non_square_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4]);
        let d = Dataset::new(vec![ImagePair::new("r", x.clone(), x).unwrap()], "t");
        assert!(augment8(&d).is_err());
    }

    #[test]
    fn patch_origin_arithmetic() {
        assert_eq!(patch_origins(512, 256, 128).unwrap(), vec![0, 128, 256]);
        assert_eq!(patch_origins(300, 256, 128).unwrap(), vec![0, 44]);
        assert_eq!(patch_origins(32, 32, 0).unwrap(), vec![0]);
        assert!(patch_origins(16, 32, 0).is_err());
        assert!(patch_origins(64, 32, 32).is_err());
    }

    #[test]
    fn crop_counts_and_content() {
        let p = pair(16, "img");
        let patches = crop_patches(&p, 8, 4).unwrap();
        assert_eq!(patches.len(), 9);
        let whole = crop_patches(&p, 16, 0).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].input, p.input);
        assert_eq!(whole[0].target, p.target);
        let q = &patches[4]; // origin (4, 4)
        assert_eq!(q.input.data()[0], p.input.data()[4 * 16 + 4]);
    }
}
