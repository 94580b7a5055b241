use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{prepare, NamedRun, RawRun, Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fault signature added to a class's feature block once the fault is active.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Archetype {
    /// Constant shift.
    Step { magnitude: f64 },
    /// Linear ramp from `magnitude` at onset to `2 · magnitude` at the end
    /// of the run.
    Drift { magnitude: f64 },
    /// Sinusoid with a random phase per run.
    Oscillation {
        magnitude: f64,
        #[serde(default = "default_period")]
        period: f64,
    },
    /// Constant shift smaller than the noise level.
    Overlap { magnitude: f64 },
}

fn default_period() -> f64 {
    10.0
}

impl Archetype {
    pub fn magnitude(&self) -> f64 {
        match *self {
            Archetype::Step { magnitude }
            | Archetype::Drift { magnitude }
            | Archetype::Oscillation { magnitude, .. }
            | Archetype::Overlap { magnitude } => magnitude,
        }
    }

    fn offset(&self, t: usize, onset: usize, len: usize, phase: f64) -> f64 {
        let since = (t - onset) as f64;
        match *self {
            Archetype::Step { magnitude } | Archetype::Overlap { magnitude } => magnitude,
            Archetype::Drift { magnitude } => {
                let span = (len - onset).saturating_sub(1).max(1) as f64;
                magnitude * (1.0 + since / span)
            }
            Archetype::Oscillation { magnitude, period } => magnitude * (TAU * since / period + phase).sin(),
        }
    }
}

/// Recipe for a synthetic multi-class process dataset.
///
/// Class 0 is noise only. Class `c ≥ 1` adds `archetypes[c − 1]` to its own
/// block of `features_per_class` features (wrapping around the feature
/// count). Every feature then gets a fixed random level and scale so that
/// standardization has real work to do.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub runs_per_class: usize,
    #[serde(default)]
    pub test_runs_per_class: usize,
    pub run_len: usize,
    /// Length of test runs; defaults to `run_len`.
    #[serde(default)]
    pub test_run_len: Option<usize>,
    pub n_features: usize,
    pub archetypes: Vec<Archetype>,
    pub noise_std: f64,
    pub seed: u64,
    pub window: usize,
    pub stride: usize,
    /// Fault onset in test runs. Training runs are faulty throughout.
    #[serde(default)]
    pub test_onset: usize,
    #[serde(default = "default_features_per_class")]
    pub features_per_class: usize,
}

fn default_features_per_class() -> usize {
    4
}

impl SyntheticSpec {
    pub fn test_len(&self) -> usize {
        self.test_run_len.unwrap_or(self.run_len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n_classes < 2 {
            return bad("a synthetic spec needs at least 2 classes".into());
        }
        if self.archetypes.len() != self.n_classes - 1 {
            return bad(format!(
                "{} classes need {} archetypes (classes 1..), got {}",
                self.n_classes,
                self.n_classes - 1,
                self.archetypes.len()
            ));
        }
        if self.runs_per_class == 0 || self.n_features == 0 || self.features_per_class == 0 {
            return bad("runs_per_class, n_features and features_per_class must be positive".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            let m = a.magnitude();
            if !m.is_finite() {
                return bad(format!("archetype for class {} has a non-finite magnitude", i + 1));
            }
            if let Archetype::Oscillation { period, .. } = a {
                if !(period.is_finite() && *period > 0.0) {
                    return bad(format!("oscillation period for class {} must be positive", i + 1));
                }
            }
            if matches!(a, Archetype::Overlap { .. }) && m.abs() >= self.noise_std {
                return bad(format!(
                    "overlap magnitude {m} for class {} must be below noise_std {}",
                    i + 1,
                    self.noise_std
                ));
            }
        }
        if self.window == 0 || self.stride == 0 {
            return bad("window and stride must be positive".into());
        }
        if self.window > self.run_len || (self.test_runs_per_class > 0 && self.window > self.test_len()) {
            return bad(format!("window {} is longer than a run", self.window));
        }
        if self.test_onset > self.test_len() {
            return bad(format!("test_onset {} is past the test run length", self.test_onset));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            serde_json::from_str(text).map_err(|e| Error::config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Feature indices touched by `class`.
    pub fn feature_block(&self, class: usize) -> Vec<usize> {
        if class == 0 {
            return Vec::new();
        }
        (0..self.features_per_class)
            .map(|j| ((class - 1) * self.features_per_class + j) % self.n_features)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let key = parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p));
    ChaCha8Rng::seed_from_u64(key)
}

/// Engineering-unit level and scale per feature.
fn feature_units(spec: &SyntheticSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(spec.seed, &[u64::MAX]);
    (0..spec.n_features)
        .map(|_| (rng.random_range(-50.0..50.0), rng.random_range(0.5..5.0)))
        .unzip()
}

/// One run of `class`; its random stream depends only on the seed, class,
/// split and run index.
pub(crate) fn generate_run(
    spec: &SyntheticSpec,
    class: usize,
    split: Split,
    index: usize,
    len: usize,
    onset: usize,
) -> Result<RawRun> {
    if class >= spec.n_classes {
        return Err(Error::config(format!(
            "class {class} is outside the spec's {} classes",
            spec.n_classes
        )));
    }
    let (levels, scales) = feature_units(spec);
    let split_tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = stream_rng(spec.seed, &[class as u64, split_tag, index as u64]);
    let phase = rng.random_range(0.0..TAU);
    let n = spec.n_features;
    let mut z: Vec<f64> = (0..len * n)
        .map(|_| spec.noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let onset = if class == 0 { 0 } else { onset };
    if class > 0 {
        let archetype = spec.archetypes[class - 1];
        let block = spec.feature_block(class);
        for t in onset..len {
            let d = archetype.offset(t, onset, len, phase);
            for &f in &block {
                z[t * n + f] += d;
            }
        }
    }
    for (i, v) in z.iter_mut().enumerate() {
        let f = i % n;
        *v = levels[f] + scales[f] * *v;
    }
    RawRun::new(Tensor::new(vec![len, n], z)?, class, onset)
}

/// Every run described by `spec`: for each class, `runs_per_class`
/// training runs then `test_runs_per_class` test runs.
pub fn synthesize_runs(spec: &SyntheticSpec) -> Result<Vec<NamedRun>> {
    spec.validate()?;
    let mut runs = Vec::new();
    for class in 0..spec.n_classes {
        for (split, count, len, onset) in [
            (Split::Train, spec.runs_per_class, spec.run_len, 0),
            (Split::Test, spec.test_runs_per_class, spec.test_len(), spec.test_onset),
        ] {
            for i in 0..count {
                runs.push(NamedRun {
                    id: format!("c{class:02}_{}_{i:03}", split.as_str()),
                    split,
                    run: generate_run(spec, class, split, i, len, onset)?,
                });
            }
        }
    }
    Ok(runs)
}

/// Standardized, windowed train and test sets for `spec`.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(WindowedDataset, WindowedDataset)> {
    let runs = synthesize_runs(spec)?;
    let prepared = prepare(&runs, spec.window, spec.stride, &BTreeSet::new())?;
    Ok((prepared.train, prepared.test))
}

/// Normal plus faults 1–21 with the corpus' run lengths and 52 features.
/// Faults 3, 9 and 15 are low-amplitude overlap classes; the rest cycle
/// through step, drift and oscillation signatures.
pub fn tep_standin_spec(seed: u64) -> SyntheticSpec {
    let archetypes = (1..=21)
        .map(|c| match c {
            3 | 9 | 15 => Archetype::Overlap { magnitude: 0.3 },
            c if c % 3 == 1 => Archetype::Step { magnitude: 3.0 },
            c if c % 3 == 2 => Archetype::Drift { magnitude: 2.0 },
            _ => Archetype::Oscillation {
                magnitude: 3.0,
                period: 10.0,
            },
        })
        .collect();
    SyntheticSpec {
        n_classes: 22,
        runs_per_class: 1,
        test_runs_per_class: 1,
        run_len: 480,
        test_run_len: Some(960),
        n_features: super::TEP_FEATURES,
        archetypes,
        noise_std: 1.0,
        seed,
        window: 20,
        stride: 10,
        test_onset: super::DEFAULT_TEST_ONSET,
        features_per_class: 3,
    }
}
