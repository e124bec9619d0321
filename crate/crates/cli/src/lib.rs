//! File formats and plumbing behind the `crfrelax` binary.
//!
//! * Unary costs: text `N M` followed by `N` rows of `M` costs, or the binary
//!   form (`u32` N, `u32` M, then `N * M` row-major `f32`, all little endian).
//! * Label maps: 8-bit binary PGM (`P5`), one gray level per label.
//! * Traces: CSV with header `stage,iter,elapsed_s,relaxed_objective,integer_energy`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crfrelax::pipeline::StageReport;
use crfrelax::{build_features, CrfError, FeatureParams, LabelCompatibility, Labeling, ProblemInstance, RgbImage};
use ndarray::Array2;
use thiserror::Error;

pub const TRACE_HEADER: &str = "stage,iter,elapsed_s,relaxed_objective,integer_energy";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Input(String),
    /// The problem could be read but not assembled (sizes, parameters).
    #[error("{0}")]
    Invalid(#[from] CrfError),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: CrfError },
}

impl CliError {
    /// 2 for anything wrong with the inputs, 3 when a solver fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Stage { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Parses the text unary format. `path` only labels error messages.
pub fn parse_unary_text(text: &str, path: &Path) -> Result<Array2<f64>> {
    let err = |line: usize, message: String| CliError::Parse { path: path.into(), line, message };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty file, expected header 'N M'".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(hline, format!("header field '{t}' is not a count"))))
        .collect::<Result<_>>()?;
    let [n, m] = dims[..] else {
        return Err(err(hline, format!("header must be 'N M', found {} fields", dims.len())));
    };
    if n == 0 || m == 0 {
        return Err(err(hline, format!("header needs N, M >= 1, got {n} {m}")));
    }
    let mut unary = Array2::zeros((n, m));
    let mut rows = 0;
    for (lineno, line) in lines {
        if rows == n {
            return Err(err(lineno, format!("more than the {n} rows declared in the header")));
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| err(lineno, format!("'{tok}' is not a number")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite cost '{tok}'")));
            }
            if count < m {
                unary[[rows, count]] = v;
            }
            count += 1;
        }
        if count != m {
            return Err(err(lineno, format!("expected {m} costs, found {count}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(err(text.lines().count().max(1), format!("header declares {n} rows, found {rows}")));
    }
    Ok(unary)
}

/// Parses the binary unary format.
pub fn parse_unary_binary(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let err = |message: String| CliError::Parse { path: path.into(), line: 0, message };
    if bytes.len() < 8 {
        return Err(err(format!("binary unary needs an 8-byte header, file has {} bytes", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("four bytes")) as usize;
    let (n, m) = (word(0), word(4));
    let expected = n.checked_mul(m).and_then(|c| c.checked_mul(4)).and_then(|c| c.checked_add(8));
    if n == 0 || m == 0 || expected != Some(bytes.len()) {
        return Err(err(format!("header says {n}x{m} but payload is {} bytes", bytes.len() - 8)));
    }
    let values: Vec<f64> =
        bytes[8..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(err(format!("non-finite cost at row {}, label {}", i / m, i % m)));
    }
    Ok(Array2::from_shape_vec((n, m), values).expect("length checked above"))
}

/// Encodes `unary` in the binary format (costs are narrowed to `f32`).
pub fn encode_unary_binary(unary: &Array2<f64>) -> Vec<u8> {
    let (n, m) = unary.dim();
    let mut out = Vec::with_capacity(8 + 4 * n * m);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    for v in unary.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn load_unary(path: &Path, binary: bool) -> Result<Array2<f64>> {
    let bytes = read(path)?;
    if binary {
        return parse_unary_binary(&bytes, path);
    }
    let text = String::from_utf8(bytes).map_err(|e| CliError::Parse {
        path: path.into(),
        line: 0,
        message: format!("not UTF-8 text ({e}); pass --binary-unary for the binary format"),
    })?;
    parse_unary_text(&text, path)
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| CliError::Parse { path: path.into(), line: 0, message: format!("cannot decode image: {e}") })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, img.into_raw())?)
}

/// Reads the unary and image files and builds the problem instance.
pub fn load_problem(
    unary_path: &Path,
    image_path: &Path,
    params: &FeatureParams,
    compat: LabelCompatibility,
    binary: bool,
) -> Result<(ProblemInstance, RgbImage)> {
    let unary = load_unary(unary_path, binary)?;
    let image = load_image(image_path)?;
    if unary.nrows() != image.n_pixels() {
        return Err(CliError::Input(format!(
            "unary has {} rows but the {}x{} image has {} pixels",
            unary.nrows(),
            image.width(),
            image.height(),
            image.n_pixels()
        )));
    }
    let kernels = build_features(&image, params)?;
    Ok((ProblemInstance::new(unary, kernels, compat)?, image))
}

/// Writes `labels` as a `width x height` binary PGM with the label as the gray level.
pub fn write_pgm(out: &mut impl Write, labels: &Labeling, width: usize, height: usize) -> io::Result<()> {
    assert_eq!(labels.len(), width * height, "label map size");
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = labels.iter().map(|&l| u8::try_from(l).expect("at most 256 labels")).collect();
    out.write_all(&bytes)
}

pub fn save_pgm(path: &Path, labels: &Labeling, n_labels: usize, width: usize, height: usize) -> Result<()> {
    if n_labels > 256 {
        return Err(CliError::Input(format!("PGM output holds at most 256 labels, problem has {n_labels}")));
    }
    let mut buf = Vec::new();
    write_pgm(&mut buf, labels, width, height).expect("writing to memory");
    fs::write(path, buf).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Trace rows of all stages; the integer energy column is empty when a
/// stage did not record it.
pub fn write_trace(out: &mut impl Write, stages: &[StageReport]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for s in stages {
        for r in s.trace.rows() {
            let e = r.integer_energy.map(|e| format!("{e:.17e}")).unwrap_or_default();
            writeln!(out, "{},{},{:.6},{:.17e},{e}", s.stage, r.iter, r.elapsed_s, r.relaxed_objective)?;
        }
    }
    Ok(())
}

pub fn save_trace(path: &Path, stages: &[StageReport]) -> Result<()> {
    let mut buf = Vec::new();
    write_trace(&mut buf, stages).expect("writing to memory");
    fs::write(path, buf).map_err(|source| CliError::Io { path: path.into(), source })
}

/// One line per stage: objective, energy, time and filter passes.
pub fn summary(stages: &[StageReport]) -> String {
    let mut s = format!("{:<6} {:>16} {:>16} {:>10} {:>8}\n", "stage", "relaxed", "energy", "time_s", "passes");
    for r in stages {
        s += &format!(
            "{:<6} {:>16.6e} {:>16.6e} {:>10.3} {:>8}\n",
            r.stage.name(),
            r.relaxed_objective,
            r.integer_energy,
            r.elapsed_s,
            r.filter_calls
        );
    }
    s
}
