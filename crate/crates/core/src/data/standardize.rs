use serde::{Deserialize, Serialize};

use super::RawRun;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature mean and population standard deviation of training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Each floored at [`STD_FLOOR`].
    pub stds: Vec<f64>,
}

/// Pools every sample of `runs` and fits per-feature statistics.
pub fn fit_standardizer<'a>(runs: impl IntoIterator<Item = &'a RawRun>) -> Result<Standardizer> {
    let runs: Vec<&RawRun> = runs.into_iter().collect();
    let first = runs
        .first()
        .ok_or_else(|| Error::contract("cannot fit a standardizer on no runs"))?;
    let n = first.n_features();
    if runs.iter().any(|r| r.n_features() != n) {
        return Err(Error::contract("runs disagree on the feature count"));
    }
    let count: usize = runs.iter().map(|r| r.len()).sum();
    if count < 2 {
        return Err(Error::contract("a standardizer needs at least two pooled samples"));
    }
    let mut means = vec![0.0; n];
    for r in &runs {
        for t in 0..r.len() {
            for (m, v) in means.iter_mut().zip(r.samples.row(t)) {
                *m += v;
            }
        }
    }
    for m in &mut means {
        *m /= count as f64;
    }
    let mut vars = vec![0.0; n];
    for r in &runs {
        for t in 0..r.len() {
            for ((acc, v), m) in vars.iter_mut().zip(r.samples.row(t)).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let stds = vars.iter().map(|v| (v / count as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(Standardizer { means, stds })
}

impl Standardizer {
    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    /// `(x − mean) / std` per column.
    pub fn apply_tensor(&self, samples: &Tensor) -> Result<Tensor> {
        let (t, n) = samples.dims2()?;
        if n != self.n_features() {
            return Err(Error::Dimension {
                op: "standardize",
                lhs: samples.shape().to_vec(),
                rhs: vec![self.n_features()],
            });
        }
        let mut data = samples.data().to_vec();
        for i in 0..t {
            for j in 0..n {
                let v = &mut data[i * n + j];
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Tensor::new(vec![t, n], data)
    }

    pub fn apply(&self, run: &RawRun) -> Result<RawRun> {
        Ok(RawRun {
            samples: self.apply_tensor(&run.samples)?,
            fault_class: run.fault_class,
            onset_index: run.onset_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(rows: &[&[f64]]) -> RawRun {
        let t = Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        RawRun::new(t, 0, 0).unwrap()
    }

    #[test]
    fn constant_feature_floors_std() {
        let s = fit_standardizer([&run(&[&[5.0, 1.0], &[5.0, 3.0], &[5.0, 2.0]])]).unwrap();
        assert_eq!(s.means[0], 5.0);
        assert_eq!(s.stds[0], STD_FLOOR);
    }

    #[test]
    fn population_std() {
        let s = fit_standardizer([&run(&[&[0.0], &[2.0]])]).unwrap();
        assert_eq!((s.means[0], s.stds[0]), (1.0, 1.0));
    }

    #[test]
    fn pools_across_runs_and_centers_own_data() {
        let a = run(&[&[1.0, 10.0], &[4.0, -3.0]]);
        let b = run(&[&[2.5, 7.0], &[0.5, 1.0], &[9.0, 2.0]]);
        let s = fit_standardizer([&a, &b]).unwrap();
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for r in [&a, &b] {
            let z = s.apply(r).unwrap();
            for t in 0..z.len() {
                for j in 0..2 {
                    sums[j] += z.samples.get(t, j);
                    sq[j] += z.samples.get(t, j).powi(2);
                }
            }
        }
        for j in 0..2 {
            assert!((sums[j] / 5.0).abs() < 1e-9);
            assert!((sq[j] / 5.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(fit_standardizer(std::iter::empty()), Err(Error::Contract(_))));
        assert!(fit_standardizer([&run(&[&[1.0]])]).is_err());
    }
}
