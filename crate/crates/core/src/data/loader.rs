use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use super::synth::{generate_run, tep_standin_spec};
use super::{NamedRun, RawRun, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Process variables recorded per sample in the Tennessee Eastman corpus.
pub const TEP_FEATURES: usize = 52;

/// A numeric matrix with an optional header row.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedMatrix {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

fn fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses a comma- or whitespace-separated matrix. A first line that does
/// not parse as numbers is taken as the header; blank lines are skipped.
/// Line and column numbers in errors are 1-based.
pub fn parse_matrix(text: &str) -> Result<ParsedMatrix> {
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = fields(line);
        if first {
            first = false;
            if cells.iter().any(|c| c.parse::<f64>().is_err()) {
                header = Some(cells.iter().map(|c| c.to_string()).collect());
                continue;
            }
        }
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.iter().enumerate() {
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                column: j + 1,
                message,
            };
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("`{cell}` is not finite")));
            }
            row.push(v);
        }
        let width = header.as_ref().map(Vec::len).or(rows.first().map(Vec::len));
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    column: row.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", row.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(ParsedMatrix { header, rows })
}

fn constant_column(rows: &[Vec<f64>], col: usize, name: &str) -> Result<usize> {
    let v = rows[0][col];
    if rows.iter().any(|r| r[col] != v) {
        return Err(Error::contract(format!(
            "column `{name}` must be constant within a run"
        )));
    }
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::contract(format!(
            "column `{name}` holds {v}, not a non-negative integer"
        )));
    }
    Ok(v as usize)
}

/// Loads one run from a matrix file.
///
/// A header may carry `fault` and `onset` columns; when present they
/// replace the `fault_class` and `onset_index` arguments. A matrix stored
/// features × samples (more columns than rows, rows equal to the feature
/// count) is transposed. The feature count must be `features`, or
/// [`TEP_FEATURES`] when `None`.
pub fn load_run(
    path: impl AsRef<Path>,
    fault_class: usize,
    onset_index: usize,
    features: Option<usize>,
) -> Result<RawRun> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_matrix(&text)?;
    if parsed.rows.is_empty() {
        return Err(Error::Shape(format!("{} holds no samples", path.display())));
    }
    let mut fault_class = fault_class;
    let mut onset_index = onset_index;
    let mut keep: Vec<usize> = (0..parsed.rows[0].len()).collect();
    if let Some(header) = &parsed.header {
        for (col, name) in header.iter().enumerate() {
            match name.to_ascii_lowercase().as_str() {
                "fault" => fault_class = constant_column(&parsed.rows, col, "fault")?,
                "onset" => onset_index = constant_column(&parsed.rows, col, "onset")?,
                _ => continue,
            }
            keep.retain(|&k| k != col);
        }
    }
    let rows: Vec<Vec<f64>> = parsed
        .rows
        .iter()
        .map(|r| keep.iter().map(|&k| r[k]).collect())
        .collect();
    let n = features.unwrap_or(TEP_FEATURES);
    let mut samples = Tensor::from_rows(&rows)?;
    let (r, c) = samples.dims2()?;
    if r == n && c > n {
        samples = samples.transpose()?;
    }
    if samples.cols() != n {
        return Err(Error::Shape(format!(
            "{} has {} features per sample, expected {n}",
            path.display(),
            samples.cols()
        )));
    }
    RawRun::new(samples, fault_class, onset_index)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `var_1..var_n,fault,onset` CSV. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_run_csv(path: impl AsRef<Path>, run: &RawRun) -> Result<()> {
    let n = run.n_features();
    let mut out = String::new();
    for j in 1..=n {
        write!(out, "var_{j},").unwrap();
    }
    out.push_str("fault,onset\n");
    for t in 0..run.len() {
        for v in run.samples.row(t) {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{},{}", run.fault_class, run.onset_index).unwrap();
    }
    write_text(path.as_ref(), &out)
}

/// Writes a header-less whitespace matrix, optionally features × samples.
pub fn write_run_dat(path: impl AsRef<Path>, run: &RawRun, features_by_samples: bool) -> Result<()> {
    let m = if features_by_samples {
        run.samples.transpose()?
    } else {
        run.samples.clone()
    };
    let mut out = String::new();
    for i in 0..m.rows() {
        for v in m.row(i) {
            write!(out, "  {v:e}").unwrap();
        }
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

fn tep_file_name(class: usize, split: Split) -> String {
    match split {
        Split::Train => format!("d{class:02}.dat"),
        Split::Test => format!("d{class:02}_te.dat"),
    }
}

fn parse_tep_name(name: &str) -> Option<(usize, Split)> {
    let stem = name.strip_prefix('d')?.strip_suffix(".dat")?;
    let (digits, split) = match stem.strip_suffix("_te") {
        Some(d) => (d, Split::Test),
        None => (stem, Split::Train),
    };
    if digits.len() != 2 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, split))
}

/// Loads every `dNN.dat` (training) and `dNN_te.dat` (test) file in `dir`.
/// Training runs carry their class from the first sample; test runs of
/// faulty classes switch at `test_onset`.
pub fn load_tep_corpus(dir: impl AsRef<Path>, test_onset: usize, features: Option<usize>) -> Result<Vec<NamedRun>> {
    let dir = dir.as_ref();
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some((class, split)) = entry.file_name().to_str().and_then(parse_tep_name) {
            found.push((class, split, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::io(
            dir,
            io::Error::new(io::ErrorKind::NotFound, "no dNN.dat or dNN_te.dat files"),
        ));
    }
    found.sort();
    found
        .into_iter()
        .map(|(class, split, path)| {
            let onset = if split == Split::Test { test_onset } else { 0 };
            let run = load_run(&path, class, onset, features)?;
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            Ok(NamedRun { id, split, run })
        })
        .collect()
}

/// Writes a synthetic corpus laid out like the public Tennessee Eastman
/// files: `d00.dat` … `d21.dat` with 480 samples (`d00.dat` stored as
/// 52 × 500, as in the original distribution) and `d00_te.dat` …
/// `d21_te.dat` with 960 samples and the fault active from sample 160.
pub fn write_tep_standin(dir: impl AsRef<Path>, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let spec = tep_standin_spec(seed);
    for class in 0..spec.n_classes {
        let train_len = if class == 0 { 500 } else { spec.run_len };
        let train = generate_run(&spec, class, Split::Train, 0, train_len, 0)?;
        write_run_dat(dir.join(tep_file_name(class, Split::Train)), &train, class == 0)?;
        let test = generate_run(&spec, class, Split::Test, 0, spec.test_len(), spec.test_onset)?;
        write_run_dat(dir.join(tep_file_name(class, Split::Test)), &test, false)?;
    }
    Ok(())
}
