use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridSpec, LossSurface, MaximizerConfig};
use crate::error::{Error, Result};
use crate::objective::Reduction;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceFormat {
    /// Matrix as CSV plus a `.json` metadata sidecar next to it.
    Csv,
    /// Metadata and matrix in one JSON document.
    Json,
}

impl SurfaceFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => SurfaceFormat::Json,
            _ => SurfaceFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetadata {
    pub n: usize,
    pub r: f64,
    pub rows: usize,
    pub cols: usize,
    pub center_loss: f64,
    pub seed: u64,
    pub dataset: String,
    pub reduction: Reduction,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl SurfaceMetadata {
    pub fn of<T: Scalar>(surface: &LossSurface<T>) -> Self {
        Self {
            n: surface.grid.n,
            r: surface.grid.r,
            rows: surface.values.len(),
            cols: surface.values.first().map_or(0, Vec::len),
            center_loss: surface.center_loss.as_f64(),
            seed: surface.seed,
            dataset: surface.dataset.clone(),
            reduction: surface.reduction,
            model: None,
            checkpoint: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SurfaceDocument {
    metadata: SurfaceMetadata,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    values: Vec<Vec<f64>>,
}

/// Path of the metadata file written next to a CSV surface.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<V: Serialize>(path: &Path, value: &V) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

fn from_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a surface and returns every file created.
///
/// CSV layout: the first row is `alpha\beta` followed by the beta
/// coordinates, each following row is an alpha coordinate followed by that
/// row of losses. Numbers carry 17 significant digits.
pub fn export_surface<T: Scalar>(
    surface: &LossSurface<T>,
    metadata: &SurfaceMetadata,
    path: &Path,
    format: SurfaceFormat,
) -> Result<Vec<PathBuf>> {
    match format {
        SurfaceFormat::Csv => {
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                return Err(Error::InvalidArgument(format!(
                    "{}: a CSV surface cannot use the .json extension of its sidecar",
                    path.display()
                )));
            }
            let mut csv = String::from("alpha\\beta");
            for b in surface.betas() {
                write!(csv, ",{}", num(b)).unwrap();
            }
            csv.push('\n');
            for (a, row) in surface.alphas().into_iter().zip(&surface.values) {
                csv.push_str(&num(a));
                for v in row {
                    write!(csv, ",{}", num(v.as_f64())).unwrap();
                }
                csv.push('\n');
            }
            write_text(path, &csv)?;
            let side = sidecar_path(path);
            write_text(&side, &to_json(&side, metadata)?)?;
            Ok(vec![path.to_path_buf(), side])
        }
        SurfaceFormat::Json => {
            let doc = SurfaceDocument {
                metadata: metadata.clone(),
                alphas: surface.alphas(),
                betas: surface.betas(),
                values: surface
                    .values
                    .iter()
                    .map(|row| row.iter().map(|v| v.as_f64()).collect())
                    .collect(),
            };
            write_text(path, &to_json(path, &doc)?)?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {}: {msg}", line + 1));
    let parse = |line: usize, field: &str| -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(line, &format!("not a number: {field:?}")))
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
    let betas = header
        .split(',')
        .skip(1)
        .map(|f| parse(0, f))
        .collect::<Result<Vec<_>>>()?;
    let mut alphas = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let mut fields = line.split(',');
        alphas.push(parse(i, fields.next().unwrap_or(""))?);
        let row = fields.map(|f| parse(i, f)).collect::<Result<Vec<_>>>()?;
        if row.len() != betas.len() {
            return Err(bad(
                i,
                &format!("expected {} values, found {}", betas.len(), row.len()),
            ));
        }
        values.push(row);
    }
    Ok((alphas, betas, values))
}

/// Reads a surface written by [`export_surface`], choosing the layout from
/// the file extension.
pub fn import_surface(path: &Path) -> Result<(LossSurface<f64>, SurfaceMetadata)> {
    let (metadata, alphas, values) = match SurfaceFormat::from_path(path) {
        SurfaceFormat::Json => {
            let doc: SurfaceDocument = from_json(path)?;
            (doc.metadata, doc.alphas, doc.values)
        }
        SurfaceFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let (alphas, _, values) = parse_csv(path, &text)?;
            (from_json(&sidecar_path(path))?, alphas, values)
        }
    };
    let grid = GridSpec::new(metadata.n, metadata.r)?;
    if values.len() != grid.n + 1
        || values.iter().any(|r| r.len() != grid.n + 1)
        || alphas.len() != grid.n + 1
    {
        return Err(Error::format(
            path,
            format!("matrix is not {0}x{0} as the metadata says", grid.n + 1),
        ));
    }
    let surface = LossSurface {
        grid,
        values,
        center_loss: metadata.center_loss,
        seed: metadata.seed,
        dataset: metadata.dataset.clone(),
        reduction: metadata.reduction,
    };
    Ok((surface, metadata))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRecord {
    pub model: String,
    pub epsilon: f64,
    pub phi: f64,
    pub maximizer: MaximizerConfig,
    pub seed: u64,
    pub center_loss: f64,
    pub max_loss: f64,
    pub reduction: Reduction,
}

/// Appends `record` to the JSON array stored at `path`, creating it if
/// needed.
pub fn append_sharpness_report(path: &Path, record: &SharpnessRecord) -> Result<()> {
    let mut records: Vec<SharpnessRecord> = if path.exists() {
        from_json(path)?
    } else {
        Vec::new()
    };
    records.push(record.clone());
    write_text(path, &to_json(path, &records)?)
}
