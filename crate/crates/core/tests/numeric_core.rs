use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinfdd::autodiff::{concat_cols, concat_rows};
use twinfdd::gradcheck::finite_diff_check;
use twinfdd::{ParameterSet, Tensor};

fn matrix(max_rows: usize, max_cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(move |(m, n)| {
        prop::collection::vec(-scale..scale, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
    })
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in matrix(6, 7, 50.0)) {
        let s = x.softmax_rows().unwrap();
        for i in 0..s.rows() {
            let row = s.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn softmax_survives_extreme_magnitudes(x in matrix(4, 5, 1.0), big in prop::sample::select(vec![1e3, 1e6, 1e300])) {
        let s = x.map(|v| v * big).softmax_rows().unwrap();
        prop_assert!(s.is_finite());
        for i in 0..s.rows() {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(x in matrix(3, 5, 10.0), c in -100.0..100.0f64) {
        let a = x.softmax_rows().unwrap();
        let b = x.map(|v| v + c).softmax_rows().unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn sigmoid_symmetry(x in matrix(3, 4, 800.0)) {
        let s = x.sigmoid().unwrap();
        let neg = x.map(|v| -v).sigmoid().unwrap();
        for (a, b) in s.data().iter().zip(neg.data()) {
            prop_assert!((a + b - 1.0).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn matmul_identity_and_transpose(x in matrix(5, 5, 10.0)) {
        let (m, n) = x.dims2().unwrap();
        prop_assert_eq!(x.matmul(&Tensor::eye(n)).unwrap(), x.clone());
        prop_assert_eq!(Tensor::eye(m).matmul(&x).unwrap(), x.clone());
        prop_assert_eq!(x.transpose().unwrap().transpose().unwrap(), x);
    }

    #[test]
    fn layer_norm_rows_are_standardized(x in matrix(4, 6, 100.0)) {
        prop_assume!(x.cols() >= 2);
        let n = x.cols();
        let spread = (0..x.rows()).all(|i| {
            let r = x.row(i);
            r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min) > 1e-3
        });
        prop_assume!(spread);
        let y = x.layer_norm(&Tensor::ones(&[n]), &Tensor::zeros(&[n]), 1e-12).unwrap();
        for i in 0..y.rows() {
            let r = y.row(i);
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn parameter_file_round_trip_is_bitwise(x in matrix(4, 4, 1e6), y in matrix(2, 3, 1.0)) {
        let mut p = ParameterSet::new();
        p.insert("b.x", x).unwrap();
        p.insert("a.y", y).unwrap();
        let back = ParameterSet::from_bytes(&p.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), p.to_bytes());
    }
}

fn check(
    params: &ParameterSet,
    f: impl for<'t> Fn(&'t twinfdd::Tape, &twinfdd::BoundParams<'t>) -> twinfdd::Result<twinfdd::Var<'t>>,
) {
    let r = finite_diff_check(f, params, 1e-5, 1e-6).unwrap();
    assert!(r.pass, "worst {:?} error {:e}", r.worst, r.max_relative_error);
}

#[test]
fn op_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParameterSet::new();
        p.insert("a", random(&mut rng, &[3, 4])).unwrap();
        p.insert("b", random(&mut rng, &[4, 2])).unwrap();
        p.insert("c", random(&mut rng, &[3, 4]).map(|v| v + 3.0)).unwrap();
        p.insert("r", random(&mut rng, &[4])).unwrap();
        p.insert("s", random(&mut rng, &[1])).unwrap();

        check(&p, |_, b| b.get("a")?.matmul(b.get("b")?)?.sigmoid()?.sum());
        check(&p, |_, b| b.get("a")?.div(b.get("c")?)?.mul(b.get("a")?)?.sum());
        check(&p, |_, b| {
            b.get("a")?.sub(b.get("c")?)?.softmax_rows()?.mul(b.get("c")?)?.sum()
        });
        check(&p, |_, b| b.get("a")?.add_row(b.get("r")?)?.row_l2_norms(1e-12)?.sum());
        check(&p, |_, b| {
            let a = b.get("a")?;
            a.layer_norm(b.get("r")?, b.get("r")?, 1e-5)?.mul(b.get("c")?)?.sum()
        });
        check(&p, |_, b| {
            b.get("a")?
                .scale_by(b.get("s")?)?
                .transpose()?
                .matmul(b.get("c")?)?
                .sum()
        });
        check(&p, |_, b| {
            let a = b.get("a")?;
            concat_cols(&[a, b.get("c")?])?.mean_rows()?.element(2)?.scale(-3.0)
        });
        check(&p, |_, b| {
            let logits = concat_rows(&[b.get("a")?, b.get("c")?])?;
            logits.weighted_cross_entropy(&[0, 1, 2, 3, 0, 1], Some(&[1.0, 2.0, 0.5, 3.0]))
        });
    }
}

#[test]
fn relu_gradient_away_from_kinks() {
    let mut p = ParameterSet::new();
    p.insert("x", Tensor::new(vec![1, 4], vec![-1.0, -0.2, 0.3, 2.0]).unwrap())
        .unwrap();
    check(&p, |_, b| {
        let x = b.get("x")?;
        x.relu()?.mul(x)?.sum()
    });
}
