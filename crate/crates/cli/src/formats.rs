//! On-disk formats.
//!
//! * Cube: `<stem>.json` header `{lines, samples, bands, dtype: "f32le",
//!   interleave: "bsq"}` next to `<stem>.bin`, little-endian `f32` stored
//!   band by band, each band row-major.
//! * Matrix: CSV, one matrix row per line, optional leading `# rows cols`.
//! * Local endmembers: `<stem>.json` header `{bands, endmembers, pixels,
//!   dtype: "f64le"}` next to `<stem>.bin`, each pixel's `L x P` block
//!   column-major, pixels in order.
//! * Maps: binary PGM (P5), one byte per pixel.
//! * Reports: `key=value` lines.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use unmix_core::{LocalEndmemberStack, SpectralCube};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub lines: usize,
    pub samples: usize,
    pub bands: usize,
    pub dtype: String,
    pub interleave: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackHeader {
    pub bands: usize,
    pub endmembers: usize,
    pub pixels: usize,
    pub dtype: String,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// `dir/stem.json` and `dir/stem.bin` from either file of the pair.
pub fn pair_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, "header", e.to_string()))
}

fn write_header<T: Serialize>(path: &Path, header: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(header).expect("headers serialize");
    write_bytes(path, format!("{text}\n").as_bytes())
}

pub fn write_cube(path: &Path, cube: &SpectralCube) -> Result<(), CliError> {
    let (json, bin) = pair_paths(path);
    let header = CubeHeader {
        lines: cube.lines(),
        samples: cube.samples(),
        bands: cube.bands(),
        dtype: "f32le".into(),
        interleave: "bsq".into(),
    };
    let data = cube.data();
    let mut bytes = Vec::with_capacity(4 * data.len());
    for band in 0..cube.bands() {
        for px in 0..cube.pixels() {
            bytes.extend_from_slice(&(data[(band, px)] as f32).to_le_bytes());
        }
    }
    write_header(&json, &header)?;
    write_bytes(&bin, &bytes)
}

pub fn read_cube(path: &Path) -> Result<SpectralCube, CliError> {
    let (json, bin) = pair_paths(path);
    let header: CubeHeader = read_header(&json)?;
    if header.dtype != "f32le" {
        return Err(CliError::format(&json, "dtype", format!("expected \"f32le\", found {:?}", header.dtype)));
    }
    if header.interleave != "bsq" {
        return Err(CliError::format(
            &json,
            "interleave",
            format!("expected \"bsq\", found {:?}", header.interleave),
        ));
    }
    for (field, v) in [("lines", header.lines), ("samples", header.samples), ("bands", header.bands)] {
        if v == 0 {
            return Err(CliError::format(&json, field, "must be positive"));
        }
    }
    let n = header.lines * header.samples;
    let bytes = read_bytes(&bin)?;
    let expected = 4 * n * header.bands;
    if bytes.len() != expected {
        return Err(CliError::format(
            &bin,
            "payload",
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut data = DMatrix::zeros(header.bands, n);
    for (k, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        data[(k / n, k % n)] = v as f64;
    }
    SpectralCube::new(data, header.lines, header.samples)
        .map_err(|e| CliError::format(&bin, "payload", e.to_string()))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut out = format!("# {} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut declared: Option<(usize, usize)> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if rows.is_empty() && declared.is_none() {
                let dims: Vec<usize> = comment.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if dims.len() == 2 {
                    declared = Some((dims[0], dims[1]));
                }
            }
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::format(path, &format!("line {} column {}", lineno + 1, col + 1), format!("not a number: {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(CliError::format(
                    path,
                    &format!("line {} column {}", lineno + 1, col + 1),
                    "value is not finite",
                ));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(CliError::format(
                    path,
                    &format!("line {}", lineno + 1),
                    format!("{} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "rows", "matrix is empty"));
    }
    let (r, c) = (rows.len(), rows[0].len());
    if let Some(d) = declared {
        if d != (r, c) {
            return Err(CliError::format(path, "header", format!("declares {}x{}, found {r}x{c}", d.0, d.1)));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn write_stack(path: &Path, stack: &LocalEndmemberStack) -> Result<(), CliError> {
    let (json, bin) = pair_paths(path);
    let header = StackHeader {
        bands: stack.bands(),
        endmembers: stack.endmembers(),
        pixels: stack.pixels(),
        dtype: "f64le".into(),
    };
    let bytes: Vec<u8> = stack.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_header(&json, &header)?;
    write_bytes(&bin, &bytes)
}

pub fn read_stack(path: &Path) -> Result<LocalEndmemberStack, CliError> {
    let (json, bin) = pair_paths(path);
    let header: StackHeader = read_header(&json)?;
    if header.dtype != "f64le" {
        return Err(CliError::format(&json, "dtype", format!("expected \"f64le\", found {:?}", header.dtype)));
    }
    let bytes = read_bytes(&bin)?;
    let expected = 8 * header.bands * header.endmembers * header.pixels;
    if bytes.len() != expected {
        return Err(CliError::format(
            &bin,
            "payload",
            format!("{} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    LocalEndmemberStack::from_vec(header.bands, header.endmembers, data)
        .map_err(|e| CliError::format(&bin, "payload", e.to_string()))
}

/// Grayscale image with `round(255 * clamp(v, 0, vmax) / vmax)` per pixel.
pub fn write_pgm(path: &Path, values: &[f64], lines: usize, samples: usize, vmax: f64) -> Result<(), CliError> {
    assert_eq!(values.len(), lines * samples, "map size must match the image");
    let mut bytes = format!("P5\n{samples} {lines}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| pgm_level(*v, vmax)));
    write_bytes(path, &bytes)
}

pub fn pgm_level(v: f64, vmax: f64) -> u8 {
    if !(vmax > 0.0) {
        return 0;
    }
    (255.0 * v.clamp(0.0, vmax) / vmax).round() as u8
}

/// Nearest-rank percentile (`q` in `(0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn write_report(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let text: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_bytes(path, text.as_bytes())
}

pub fn read_report(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect())
}
