//! Run ingestion, standardization, windowing, and synthetic data.
//!
//! A *run* is one recorded time series of process variables (samples ×
//! features) that carries a single fault class. In test runs the fault only
//! becomes active at `onset_index`; with 3-minute sampling the conventional
//! 8-hour onset is sample [`DEFAULT_TEST_ONSET`] = 160.

mod cache;
mod loader;
mod standardize;
mod synth;
mod window;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cache::{load_dataset, save_dataset, DatasetMeta, RunRecord, MANIFEST_FILE, META_FILE};
pub use loader::{
    load_run, load_tep_corpus, parse_matrix, write_run_csv, write_run_dat, write_tep_standin, ParsedMatrix,
    TEP_FEATURES,
};
pub use standardize::{fit_standardizer, Standardizer, STD_FLOOR};
pub use synth::{synthesize, synthesize_runs, tep_standin_spec, Archetype, SyntheticSpec};
pub use window::{exclude_classes, make_windows, prepare, train_val_split, window_count, Prepared};

/// Minutes between consecutive samples.
pub const SAMPLE_MINUTES: usize = 3;
/// Fault onset in test runs: 8 hours of 3-minute samples.
pub const DEFAULT_TEST_ONSET: usize = 8 * 60 / SAMPLE_MINUTES;

/// One recorded run.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRun {
    /// `T × n_features`.
    pub samples: Tensor,
    /// `0` is normal operation.
    pub fault_class: usize,
    /// First sample at which the fault is active; `0` for normal runs.
    pub onset_index: usize,
}

impl RawRun {
    /// Validates the run. A normal run always has onset 0, whatever is passed.
    pub fn new(samples: Tensor, fault_class: usize, onset_index: usize) -> Result<Self> {
        let (t, _) = samples.dims2()?;
        if samples.shape().len() != 2 {
            return Err(Error::Shape("a run must be a samples × features matrix".into()));
        }
        let onset_index = if fault_class == 0 { 0 } else { onset_index };
        if onset_index > t {
            return Err(Error::contract(format!(
                "onset {onset_index} is past the run length {t}"
            )));
        }
        Ok(RawRun {
            samples,
            fault_class,
            onset_index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.samples.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split `{other}`"))),
        }
    }
}

/// A run with its identifier and the split it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRun {
    pub id: String,
    pub split: Split,
    pub run: RawRun,
}

/// Where a window was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub run_id: String,
    pub start: usize,
}

/// Display name of an original fault class.
pub fn class_name(fault_class: usize) -> String {
    if fault_class == 0 {
        "Normal".to_string()
    } else {
        fault_class.to_string()
    }
}

/// Standardized windows with integer labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowedDataset {
    pub windows: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub origins: Vec<WindowOrigin>,
    /// Label → display name. Every label in `labels` has an entry.
    pub class_names: BTreeMap<usize, String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Number of classes in the roster (not only those present).
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn window_shape(&self) -> Option<&[usize]> {
        self.windows.first().map(Tensor::shape)
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &l in &self.labels {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    pub fn push(&mut self, window: Tensor, label: usize, origin: WindowOrigin) {
        self.windows.push(window);
        self.labels.push(label);
        self.origins.push(origin);
    }

    /// Appends the windows of `other` and merges its class names.
    pub fn extend(&mut self, other: WindowedDataset) {
        self.windows.extend(other.windows);
        self.labels.extend(other.labels);
        self.origins.extend(other.origins);
        self.class_names.extend(other.class_names);
    }

    /// Keeps the windows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> WindowedDataset {
        WindowedDataset {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origins: indices.iter().map(|&i| self.origins[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != self.labels.len() || self.labels.len() != self.origins.len() {
            return Err(Error::contract("window, label and origin counts differ"));
        }
        if let Some(l) = self.labels.iter().find(|l| !self.class_names.contains_key(l)) {
            return Err(Error::contract(format!("label {l} has no class name")));
        }
        if let Some(shape) = self.window_shape() {
            if self.windows.iter().any(|w| w.shape() != shape) {
                return Err(Error::contract("windows do not share one shape"));
            }
        }
        Ok(())
    }
}
