use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{class_name, fit_standardizer, NamedRun, RawRun, Split, Standardizer, WindowOrigin, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `⌊(T − W) / stride⌋ + 1`, or 0 when the window does not fit.
pub fn window_count(run_len: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || window > run_len {
        0
    } else {
        (run_len - window) / stride + 1
    }
}

/// Cuts windows starting at `0, stride, 2·stride, …`.
///
/// A window is labeled with the run's fault class when its start index is
/// at or after the onset, and as normal (`0`) otherwise.
pub fn make_windows(run_id: &str, run: &RawRun, window: usize, stride: usize) -> Result<WindowedDataset> {
    if stride == 0 {
        return Err(Error::contract("stride must be at least 1"));
    }
    if window == 0 || window > run.len() {
        return Err(Error::contract(format!(
            "window length {window} does not fit run `{run_id}` of length {}",
            run.len()
        )));
    }
    let n = run.n_features();
    let mut ds = WindowedDataset::default();
    ds.class_names.insert(0, class_name(0));
    ds.class_names.insert(run.fault_class, class_name(run.fault_class));
    for k in 0..window_count(run.len(), window, stride) {
        let start = k * stride;
        let data = run.samples.data()[start * n..(start + window) * n].to_vec();
        let label = if start >= run.onset_index { run.fault_class } else { 0 };
        ds.push(
            Tensor::new(vec![window, n], data)?,
            label,
            WindowOrigin {
                run_id: run_id.to_string(),
                start,
            },
        );
    }
    Ok(ds)
}

fn remap(ds: &WindowedDataset, exclude: &BTreeSet<usize>) -> Result<WindowedDataset> {
    let kept: Vec<usize> = ds
        .class_names
        .keys()
        .copied()
        .filter(|c| !exclude.contains(c))
        .collect();
    let mapping: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let mut out = WindowedDataset {
        class_names: mapping
            .iter()
            .map(|(old, new)| (*new, ds.class_names[old].clone()))
            .collect(),
        ..Default::default()
    };
    for i in 0..ds.len() {
        if let Some(&new) = mapping.get(&ds.labels[i]) {
            out.push(ds.windows[i].clone(), new, ds.origins[i].clone());
        }
    }
    Ok(out)
}

/// Drops every window whose label is in `classes` and renumbers the
/// remaining classes densely as `0..C'`, keeping their names.
pub fn exclude_classes(ds: &WindowedDataset, classes: &BTreeSet<usize>) -> Result<WindowedDataset> {
    if classes.is_empty() {
        return Ok(ds.clone());
    }
    let out = remap(ds, classes)?;
    if out.is_empty() {
        return Err(Error::contract("class exclusion removed every window"));
    }
    Ok(out)
}

/// Stratified split: each class contributes `round(fraction · n_c)` windows
/// to the first part (at least one, at most `n_c − 1`). Order within each
/// part follows the original order.
pub fn train_val_split(ds: &WindowedDataset, fraction: f64, seed: u64) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("split fraction {fraction} is outside (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::contract(format!(
                "class {class} has {} window(s); a split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        first.extend_from_slice(&idx[..k]);
        second.extend_from_slice(&idx[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((ds.subset(&first), ds.subset(&second)))
}

/// Standardized, windowed, class-filtered train and test sets.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub standardizer: Standardizer,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

/// Fits the standardizer on the train runs of the kept classes, windows
/// every run, and removes `exclude` (original fault classes). Labels in the result are dense and
/// shared by both splits; names record the original classes.
pub fn prepare(runs: &[NamedRun], window: usize, stride: usize, exclude: &BTreeSet<usize>) -> Result<Prepared> {
    let standardizer = fit_standardizer(
        runs.iter()
            .filter(|r| r.split == Split::Train && !exclude.contains(&r.run.fault_class))
            .map(|r| &r.run),
    )?;
    let roster: BTreeMap<usize, String> = runs
        .iter()
        .map(|r| r.run.fault_class)
        .chain([0])
        .map(|c| (c, class_name(c)))
        .collect();
    let mut train = WindowedDataset {
        class_names: roster.clone(),
        ..Default::default()
    };
    let mut test = train.clone();
    for r in runs {
        let z = standardizer.apply(&r.run)?;
        let w = make_windows(&r.id, &z, window, stride)?;
        match r.split {
            Split::Train => train.extend(w),
            Split::Test => test.extend(w),
        }
    }
    let train = remap(&train, exclude)?;
    let test = remap(&test, exclude)?;
    if train.is_empty() {
        return Err(Error::contract("no training windows remain"));
    }
    Ok(Prepared {
        standardizer,
        train,
        test,
    })
}
