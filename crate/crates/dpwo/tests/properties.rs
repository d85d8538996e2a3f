//! Property tests for the serialization and spectral invariants.

use proptest::prelude::*;

use dpwo::covariance;
use dpwo::mat::Mat;
use dpwo::workload::{
    load_histogram, load_matrix, save_histogram, save_matrix, Histogram, MatrixFormat,
    QueryMatrix,
};

fn tmpfile(tag: &str, case: u64) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("dpwo-prop-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(format!("{tag}-{case}"))
}

fn finite_matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    ((1usize..5), (1usize..5)).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            proptest::collection::vec(-1e12f64..1e12, r * c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_round_trips_through_both_formats(
        (rows, cols, data) in finite_matrix(),
        case in 0u64..u64::MAX,
    ) {
        let a = QueryMatrix::new(Mat::from_vec(rows, cols, data).unwrap()).unwrap();
        for (format, ext) in [(MatrixFormat::Csv, "csv"), (MatrixFormat::Json, "json")] {
            let path = tmpfile(ext, case);
            save_matrix(&a, &path, format).unwrap();
            let back = load_matrix(&path, format).unwrap();
            prop_assert_eq!(&a, &back);
        }
    }

    #[test]
    fn histogram_round_trips(
        counts in proptest::collection::vec(0u64..1_000_000, 1..12),
        case in 0u64..u64::MAX,
    ) {
        let total: u64 = counts.iter().sum();
        let h = Histogram::new(counts, total.max(1)).unwrap();
        let path = tmpfile("hist", case);
        save_histogram(&h, &path).unwrap();
        let back = load_histogram(&path, total.max(1)).unwrap();
        prop_assert_eq!(h, back);
    }

    #[test]
    fn threshold_satisfies_its_double_inequality(
        mut spec in proptest::collection::vec(0.0f64..1e6, 1..12),
        k_raw in 0usize..12,
    ) {
        spec.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let k = 1 + k_raw % spec.len();
        let t = covariance::find_threshold_t(&spec, k).unwrap();
        prop_assert!(t < k);
        let tail: f64 = spec[t..].iter().sum();
        let avg = tail / (k - t) as f64;
        let tol = 1e-9 * spec[0].max(1e-300);
        if t > 0 {
            prop_assert!(spec[t - 1] > avg - tol);
        }
        prop_assert!(avg >= spec[t] - tol);
    }

    #[test]
    fn ky_fan_is_monotone_in_k(
        diag in proptest::collection::vec(0.0f64..1e6, 1..8),
    ) {
        let s = Mat::from_diag(&diag);
        let dim = diag.len();
        let mut prev = 0.0;
        for k in 1..=dim {
            let v = dpwo::spectral::ky_fan_norm(&s, k).unwrap();
            prop_assert!(v >= prev - 1e-9);
            prev = v;
        }
        let trace: f64 = diag.iter().sum();
        prop_assert!((prev - trace).abs() <= 1e-9 * trace.max(1.0));
    }
}
