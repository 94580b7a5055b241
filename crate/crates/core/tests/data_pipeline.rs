use std::collections::BTreeSet;

use proptest::prelude::*;
use twinfdd::data::{
    exclude_classes, fit_standardizer, load_run, load_tep_corpus, make_windows, prepare, synthesize, synthesize_runs,
    window_count, write_run_csv, write_tep_standin, Archetype, RawRun, SyntheticSpec, DEFAULT_TEST_ONSET,
};
use twinfdd::Tensor;

fn run_strategy() -> impl Strategy<Value = RawRun> {
    (1usize..40, 1usize..5, 0usize..4).prop_flat_map(|(t, n, class)| {
        (prop::collection::vec(-1e3..1e3f64, t * n), 0..=t)
            .prop_map(move |(d, onset)| RawRun::new(Tensor::new(vec![t, n], d).unwrap(), class, onset).unwrap())
    })
}

proptest! {
    #[test]
    fn window_count_formula(run in run_strategy(), w in 1usize..12, stride in 1usize..6) {
        prop_assume!(w <= run.len());
        let ds = make_windows("r", &run, w, stride).unwrap();
        prop_assert_eq!(ds.len(), (run.len() - w) / stride + 1);
        prop_assert_eq!(ds.len(), window_count(run.len(), w, stride));
        for (o, &l) in ds.origins.iter().zip(&ds.labels) {
            if o.start < run.onset_index {
                prop_assert_eq!(l, 0);
            } else {
                prop_assert_eq!(l, run.fault_class);
            }
        }
    }

    #[test]
    fn standardize_and_window_commute(run in run_strategy(), w in 1usize..8, stride in 1usize..4) {
        prop_assume!(w <= run.len() && run.len() >= 2);
        let s = fit_standardizer([&run]).unwrap();
        let a = make_windows("r", &s.apply(&run).unwrap(), w, stride).unwrap();
        let b = make_windows("r", &run, w, stride).unwrap();
        for (x, y) in a.windows.iter().zip(&b.windows) {
            prop_assert_eq!(x, &s.apply_tensor(y).unwrap());
        }
    }

    #[test]
    fn csv_round_trip(run in run_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_run_csv(&p, &run).unwrap();
        let back = load_run(&p, 99, 99, Some(run.n_features())).unwrap();
        prop_assert_eq!(back.fault_class, run.fault_class);
        prop_assert_eq!(back.onset_index, run.onset_index);
        prop_assert!(back.samples.max_abs_diff(&run.samples) <= 1e-12);
    }

    #[test]
    fn exclusion_removes_exactly_the_present_classes(excluded in prop::collection::btree_set(0usize..6, 0..4)) {
        let mut ds = twinfdd::data::WindowedDataset::default();
        for c in 0..5 {
            let run = RawRun::new(Tensor::full(&[6, 1], c as f64), c, 0).unwrap();
            ds.extend(make_windows(&format!("r{c}"), &run, 2, 2).unwrap());
        }
        let before: BTreeSet<usize> = ds.labels.iter().copied().collect();
        match exclude_classes(&ds, &excluded) {
            Ok(out) => {
                let after: BTreeSet<usize> = out.labels.iter().copied().collect();
                let present = before.intersection(&excluded).count();
                prop_assert_eq!(after.len(), before.len() - present);
                prop_assert!(after.iter().all(|&l| l < after.len()));
                out.validate().unwrap();
            }
            Err(_) => prop_assert!(before.is_subset(&excluded)),
        }
    }
}

#[test]
fn standardizer_fit_on_train_centers_train() {
    let spec = small_spec(Archetype::Step { magnitude: 2.0 });
    let runs = synthesize_runs(&spec).unwrap();
    let p = prepare(&runs, spec.window, spec.stride, &BTreeSet::new()).unwrap();
    let train: Vec<RawRun> = runs
        .iter()
        .filter(|r| r.split == twinfdd::data::Split::Train)
        .map(|r| p.standardizer.apply(&r.run).unwrap())
        .collect();
    let total: usize = train.iter().map(RawRun::len).sum();
    for j in 0..spec.n_features {
        let mean = train
            .iter()
            .flat_map(|r| (0..r.len()).map(move |t| r.samples.get(t, j)))
            .sum::<f64>()
            / total as f64;
        assert!(mean.abs() < 1e-9);
    }
}

fn small_spec(archetype: Archetype) -> SyntheticSpec {
    SyntheticSpec {
        n_classes: 2,
        runs_per_class: 20,
        test_runs_per_class: 0,
        run_len: 40,
        test_run_len: None,
        n_features: 8,
        archetypes: vec![archetype],
        noise_std: 1.0,
        seed: 0,
        window: 10,
        stride: 10,
        test_onset: 0,
        features_per_class: 4,
    }
}

/// Best single-threshold accuracy on the mean of the class feature block.
fn threshold_accuracy(spec: &SyntheticSpec) -> f64 {
    let (train, _) = synthesize(spec).unwrap();
    let block = spec.feature_block(1);
    let score = |w: &Tensor| {
        (0..w.rows())
            .flat_map(|t| block.iter().map(move |&f| w.get(t, f)))
            .sum::<f64>()
    };
    let mut scored: Vec<(f64, usize)> = train
        .windows
        .iter()
        .map(score)
        .zip(train.labels.iter().copied())
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scored.len();
    (0..=n)
        .map(|cut| {
            let below = scored[..cut].iter().filter(|s| s.1 == 0).count();
            let above = scored[cut..].iter().filter(|s| s.1 == 1).count();
            (below + above).max(n - below - above) as f64 / n as f64
        })
        .fold(0.0, f64::max)
}

#[test]
fn strong_step_is_separable_by_a_threshold() {
    let acc = threshold_accuracy(&small_spec(Archetype::Step { magnitude: 5.0 }));
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn zero_step_is_indistinguishable() {
    let mut spec = small_spec(Archetype::Step { magnitude: 0.0 });
    spec.runs_per_class = 100;
    let acc = threshold_accuracy(&spec);
    // the best of many cuts on 800 windows stays close to chance
    assert!(acc < 0.6, "{acc}");
}

#[test]
fn tep_standin_loads_with_onset_rule() {
    let dir = tempfile::tempdir().unwrap();
    write_tep_standin(dir.path(), 1).unwrap();
    let runs = load_tep_corpus(dir.path(), DEFAULT_TEST_ONSET, None).unwrap();
    assert_eq!(runs.len(), 44);
    assert_eq!(runs[0].id, "d00");
    assert_eq!(runs[0].run.len(), 500);
    assert!(runs.iter().all(|r| r.run.n_features() == 52));
    let test7 = runs.iter().find(|r| r.id == "d07_te").unwrap();
    assert_eq!((test7.run.len(), test7.run.onset_index), (960, 160));
    let ds = make_windows(&test7.id, &test7.run, 20, 10).unwrap();
    assert!(ds
        .origins
        .iter()
        .zip(&ds.labels)
        .all(|(o, &l)| (l == 7) == (o.start >= 160)));

    let p = prepare(&runs, 20, 10, &[3, 9, 15].into()).unwrap();
    assert_eq!(p.train.n_classes(), 19);
    assert!(!p.train.class_names.values().any(|n| n == "3" || n == "9" || n == "15"));
}

#[test]
fn synthesis_is_reproducible_to_the_bit() {
    let spec = small_spec(Archetype::Oscillation {
        magnitude: 1.0,
        period: 7.0,
    });
    let bits = |s: &SyntheticSpec| -> Vec<u64> {
        synthesize_runs(s)
            .unwrap()
            .iter()
            .flat_map(|r| r.run.samples.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(bits(&spec), bits(&spec));
}
