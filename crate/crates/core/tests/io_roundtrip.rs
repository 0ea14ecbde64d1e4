use bfsmooth::config::GridSpec;
use bfsmooth::datagen::{Curve, FunctionalDataset};
use bfsmooth::diagnostics::ResidualDraws;
use bfsmooth::io::{dataset_from_json, dataset_to_json, decode_matrix, encode_matrix, encode_residuals, MatrixBlock};
use proptest::prelude::*;

fn increasing(len: usize) -> impl Strategy<Value = Vec<f64>> {
    (-100.0f64..100.0, prop::collection::vec(1e-6f64..10.0, len)).prop_map(|(start, gaps)| {
        let mut t = start;
        gaps.iter()
            .map(|g| {
                t += g;
                t
            })
            .collect()
    })
}

fn curve() -> impl Strategy<Value = Curve> {
    (1usize..12).prop_flat_map(|len| {
        (
            increasing(len),
            prop::collection::vec(-1e6f64..1e6, len),
            prop::option::of(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), len)),
        )
            .prop_map(|(t, x, truth)| Curve { t, x, truth })
    })
}

proptest! {
    #[test]
    fn dataset_json_is_lossless(curves in prop::collection::vec(curve(), 1..6)) {
        let data = FunctionalDataset::new(curves).unwrap();
        let back = dataset_from_json(&dataset_to_json(&data).unwrap()).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn matrix_sidecar_is_lossless(rows in 0usize..8, cols in 0usize..8, seed in prop::collection::vec(any::<u64>(), 64)) {
        let data: Vec<f64> = seed.iter().take(rows * cols).map(|b| f64::from_bits(*b)).collect();
        let m = MatrixBlock { rows, cols, data };
        let back = decode_matrix(&encode_matrix(&m).unwrap()).unwrap();
        prop_assert_eq!(back.rows, rows);
        prop_assert_eq!(back.cols, cols);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.data), bits(&m.data));
    }

    #[test]
    fn residual_sidecar_rows_are_sigma_then_residuals(
        lengths in prop::collection::vec(1usize..5, 1..4),
        draws in 0usize..5,
    ) {
        let total: usize = lengths.iter().sum();
        let mut r = ResidualDraws::new(lengths);
        for d in 0..draws {
            let row: Vec<f64> = (0..total).map(|j| (d * 31 + j) as f64 * 0.5 - 3.0).collect();
            r.push(d as f64 + 0.25, &row);
        }
        let m = decode_matrix(&encode_residuals(&r).unwrap()).unwrap();
        prop_assert_eq!((m.rows, m.cols), (draws, total + 1));
        for d in 0..draws {
            prop_assert_eq!(m.row(d)[0], r.sigma2[d]);
            prop_assert_eq!(&m.row(d)[1..], r.draw(d));
        }
    }

    #[test]
    fn grid_spec_display_reparses(pts in (1usize..20).prop_flat_map(increasing)) {
        let g = GridSpec::Points(pts);
        let back: GridSpec = g.to_string().parse().unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn linspace_spec_reparses(a in -50.0f64..50.0, w in 1e-3f64..50.0, n in 2usize..500) {
        let g = GridSpec::Linspace { a, b: a + w, n };
        let back: GridSpec = g.to_string().parse().unwrap();
        prop_assert_eq!(back.points().len(), n);
        prop_assert_eq!(back, g);
    }

    #[test]
    fn arbitrary_bytes_never_panic_the_decoder(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_matrix(&bytes);
        let mut framed = b"GPFDRAW1".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = decode_matrix(&framed);
    }
}
