//! On-disk formats: binary PGM (P5) and FTSR raw tensors.
//!
//! FTSR layout (all little-endian): the magic `FTSR`, a `u32` rank, `rank`
//! `u32` extents, then `prod(extents)` 64-bit reals in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, ImagePair, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const FTSR_MAGIC: &[u8; 4] = b"FTSR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    #[default]
    Ftsr,
    Pgm,
}

impl FileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Ftsr => "ftsr",
            FileFormat::Pgm => "pgm",
        }
    }
}

pub fn encode_ftsr<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(FTSR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    out
}

pub fn decode_ftsr<T: Scalar>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    let u32_at = |off: usize| -> std::result::Result<u32, String> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| "truncated header".to_string())
    };
    if bytes.get(..4) != Some(FTSR_MAGIC) {
        return Err("missing FTSR magic".into());
    }
    let rank = u32_at(4)? as usize;
    if rank == 0 || rank > 8 {
        return Err(format!("unsupported rank {rank}"));
    }
    let shape = (0..rank)
        .map(|i| u32_at(8 + 4 * i).map(|d| d as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let body = &bytes[8 + 4 * rank..];
    let n: usize = shape.iter().product();
    if body.len() != n * 8 {
        return Err(format!(
            "shape {shape:?} needs {} data bytes, found {}",
            n * 8,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn write_ftsr<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_ftsr(t)).map_err(|e| Error::io(path, e))
}

pub fn read_ftsr<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ftsr(&bytes).map_err(|m| Error::format(path, m))
}

/// Parses a binary PGM into a `[1, H, W]` tensor scaled by `1 / maxval`.
pub fn decode_pgm<T: Scalar>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (expected P5 magic)".into());
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse::<usize>().map_err(|_| format!("bad {what} `{t}`"))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image extent".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).ok_or("missing raster")?;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    if body.len() != n * bytes_per {
        return Err(format!(
            "raster holds {} bytes, expected {}",
            body.len(),
            n * bytes_per
        ));
    }
    let maxval = maxval as f64;
    let data: Vec<T> = if bytes_per == 1 {
        body.iter()
            .map(|&v| T::from_f64_lossy(v as f64 / maxval))
            .collect()
    } else {
        body.chunks_exact(2)
            .map(|c| T::from_f64_lossy(u16::from_be_bytes([c[0], c[1]]) as f64 / maxval))
            .collect()
    };
    Tensor::new(vec![1, height, width], data).map_err(|e| e.to_string())
}

pub fn read_pgm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|m| Error::format(path, m))
}

/// Writes the first channel of a `[C, H, W]` tensor as an 8-bit PGM.
pub fn write_pgm<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let [_, h, w] = t.shape()[..] else {
        return Err(Error::shape(
            "write_pgm",
            format!("expected [C, H, W], got {:?}", t.shape()),
        ));
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        t.data()[..h * w]
            .iter()
            .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_image<T: Scalar>(path: &Path) -> std::result::Result<Tensor<T>, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let t = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => decode_pgm(&bytes)?,
        Some("ftsr") => decode_ftsr(&bytes)?,
        other => return Err(format!("unsupported extension {other:?}")),
    };
    let t = match t.rank() {
        2 => {
            let s = t.shape().to_vec();
            t.reshape(&[1, s[0], s[1]]).map_err(|e| e.to_string())?
        }
        3 => t,
        r => return Err(format!("expected a rank 2 or 3 image, got rank {r}")),
    };
    Ok(t.map(|v: T| v.max(T::zero()).min(T::one())))
}

/// Reads a `.pgm` or `.ftsr` image as `[C, H, W]`, clamped to `[0, 1]`.
pub fn read_image_file<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    read_image(path).map_err(|m| Error::format(path, m))
}

/// Manifest written next to a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: FileFormat,
    pub count: usize,
    pub ids: Vec<String>,
    pub provenance: Provenance,
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
}

/// Loads every `<id>_in.{pgm,ftsr}` / `<id>_gt.{pgm,ftsr}` pair in `dir`,
/// ordered by id. Any unpaired or malformed file fails the whole load with
/// one diagnostic per offending file.
pub fn load_dir<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<String, (Option<std::path::PathBuf>, Option<std::path::PathBuf>)> =
        BTreeMap::new();
    let mut problems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if ext != "pgm" && ext != "ftsr" {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(id) = stem.strip_suffix("_in") {
            let slot = &mut found.entry(id.to_string()).or_default().0;
            if slot.replace(path.clone()).is_some() {
                problems.push(format!("{}: duplicate input for `{id}`", path.display()));
            }
        } else if let Some(id) = stem.strip_suffix("_gt") {
            let slot = &mut found.entry(id.to_string()).or_default().1;
            if slot.replace(path.clone()).is_some() {
                problems.push(format!("{}: duplicate target for `{id}`", path.display()));
            }
        } else {
            problems.push(format!("{}: name must end in _in or _gt", path.display()));
        }
    }
    let mut pairs = Vec::with_capacity(found.len());
    for (id, files) in found {
        match files {
            (Some(inp), Some(gt)) => {
                let x = read_image::<T>(&inp).map_err(|m| format!("{}: {m}", inp.display()));
                let y = read_image::<T>(&gt).map_err(|m| format!("{}: {m}", gt.display()));
                match (x, y) {
                    (Ok(x), Ok(y)) => match ImagePair::new(id, x, y) {
                        Ok(p) => pairs.push(p),
                        Err(e) => {
                            problems.push(format!("{}: dimension mismatch: {e}", gt.display()))
                        }
                    },
                    (x, y) => problems.extend(x.err().into_iter().chain(y.err())),
                }
            }
            (Some(p), None) | (None, Some(p)) => {
                problems.push(format!("{}: unpaired file for id `{id}`", p.display()));
            }
            (None, None) => unreachable!(),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems));
    }
    Ok(Dataset::new(pairs, dir.display().to_string()))
}

/// Writes every pair as `<id>_in.<ext>` / `<id>_gt.<ext>` plus `manifest.json`.
pub fn save_dir<T: Scalar>(
    dataset: &Dataset<T>,
    dir: &Path,
    format: FileFormat,
    generator: Option<serde_json::Value>,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = format.extension();
    for p in &dataset.pairs {
        let inp = dir.join(format!("{}_in.{ext}", p.id));
        let gt = dir.join(format!("{}_gt.{ext}", p.id));
        match format {
            FileFormat::Ftsr => {
                write_ftsr(&inp, &p.input)?;
                write_ftsr(&gt, &p.target)?;
            }
            FileFormat::Pgm => {
                write_pgm(&inp, &p.input)?;
                write_pgm(&gt, &p.target)?;
            }
        }
    }
    let manifest = DatasetManifest {
        format,
        count: dataset.len(),
        ids: dataset.pairs.iter().map(|p| p.id.clone()).collect(),
        provenance: dataset.provenance.clone(),
        generator,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
