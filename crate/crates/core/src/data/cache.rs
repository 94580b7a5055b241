//! On-disk dataset layout:
//!
//! ```text
//! <dir>/dataset.json    DatasetMeta
//! <dir>/manifest.csv    split,run_id,start,label   (one row per window)
//! <dir>/runs/<id>.csv   raw samples of each referenced run
//! ```
//!
//! Windows are cut again on load from the standardized raw runs, which
//! reproduces them bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::window::Prepared;
use super::{load_run, write_run_csv, NamedRun, Split, Standardizer, WindowOrigin, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const META_FILE: &str = "dataset.json";
pub const MANIFEST_FILE: &str = "manifest.csv";
const FORMAT: &str = "twinfdd-dataset";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub split: Split,
    pub fault_class: usize,
    pub onset_index: usize,
    /// Relative to the dataset directory.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub window: usize,
    pub stride: usize,
    pub n_features: usize,
    /// Dense label → original class name.
    pub class_names: BTreeMap<usize, String>,
    pub standardizer: Standardizer,
    pub runs: Vec<RunRecord>,
}

fn manifest_rows(split: Split, ds: &WindowedDataset, out: &mut String) {
    for (o, l) in ds.origins.iter().zip(&ds.labels) {
        writeln!(out, "{},{},{},{}", split.as_str(), o.run_id, o.start, l).unwrap();
    }
}

/// Writes `prepared` together with the raw `runs` it was built from. Only
/// runs that contribute at least one window are stored.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    runs: &[NamedRun],
    prepared: &Prepared,
    window: usize,
    stride: usize,
) -> Result<DatasetMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("runs")).map_err(|e| Error::io(dir, e))?;
    let used: BTreeSet<&str> = prepared
        .train
        .origins
        .iter()
        .chain(&prepared.test.origins)
        .map(|o| o.run_id.as_str())
        .collect();
    let mut records = Vec::new();
    for r in runs.iter().filter(|r| used.contains(r.id.as_str())) {
        if r.id.is_empty() || r.id.contains(['/', '\\', ',']) || r.id.starts_with('.') {
            return Err(Error::contract(format!(
                "run id `{}` cannot be used as a file name",
                r.id
            )));
        }
        let file = format!("runs/{}.csv", r.id);
        write_run_csv(dir.join(&file), &r.run)?;
        records.push(RunRecord {
            id: r.id.clone(),
            split: r.split,
            fault_class: r.run.fault_class,
            onset_index: r.run.onset_index,
            file,
        });
    }
    let mut manifest = String::from("split,run_id,start,label\n");
    manifest_rows(Split::Train, &prepared.train, &mut manifest);
    manifest_rows(Split::Test, &prepared.test, &mut manifest);
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let meta = DatasetMeta {
        format: FORMAT.into(),
        version: VERSION,
        window,
        stride,
        n_features: prepared.standardizer.n_features(),
        class_names: prepared.train.class_names.clone(),
        standardizer: prepared.standardizer.clone(),
        runs: records,
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

fn manifest_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: format!("{MANIFEST_FILE}: {}", message.into()),
    }
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(DatasetMeta, Prepared)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", meta_path.display())))?;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(Error::config(format!(
            "{} is format {} v{}, expected {FORMAT} v{VERSION}",
            meta_path.display(),
            meta.format,
            meta.version
        )));
    }
    let mut standardized = BTreeMap::new();
    for rec in &meta.runs {
        let raw = load_run(
            dir.join(&rec.file),
            rec.fault_class,
            rec.onset_index,
            Some(meta.n_features),
        )?;
        standardized.insert(rec.id.clone(), (rec.split, meta.standardizer.apply(&raw)?));
    }

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let empty = WindowedDataset {
        class_names: meta.class_names.clone(),
        ..Default::default()
    };
    let (mut train, mut test) = (empty.clone(), empty);
    for (i, line) in manifest.lines().enumerate().skip(1) {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(manifest_error(
                line_no,
                1,
                format!("expected 4 fields, found {}", cells.len()),
            ));
        }
        let split: Split = cells[0].parse().map_err(|_| manifest_error(line_no, 1, "bad split"))?;
        let (run_split, run) = standardized
            .get(cells[1])
            .ok_or_else(|| manifest_error(line_no, 2, format!("unknown run `{}`", cells[1])))?;
        if *run_split != split {
            return Err(manifest_error(line_no, 1, "split disagrees with the run record"));
        }
        let start: usize = cells[2]
            .parse()
            .map_err(|_| manifest_error(line_no, 3, "bad start index"))?;
        let label: usize = cells[3].parse().map_err(|_| manifest_error(line_no, 4, "bad label"))?;
        if start + meta.window > run.len() {
            return Err(manifest_error(line_no, 3, "window runs past the end of its run"));
        }
        if !meta.class_names.contains_key(&label) {
            return Err(manifest_error(line_no, 4, format!("label {label} has no class name")));
        }
        let n = meta.n_features;
        let data = run.samples.data()[start * n..(start + meta.window) * n].to_vec();
        let target = if split == Split::Train { &mut train } else { &mut test };
        target.push(
            Tensor::new(vec![meta.window, n], data)?,
            label,
            WindowOrigin {
                run_id: cells[1].to_string(),
                start,
            },
        );
    }
    let prepared = Prepared {
        standardizer: meta.standardizer.clone(),
        train,
        test,
    };
    Ok((meta, prepared))
}
