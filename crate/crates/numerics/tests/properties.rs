use proptest::prelude::*;
use uts_numerics::{checkpoint, ParamStore, Tensor};

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-50.0f64..50.0, r * c).prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(m in matrix(4, 6), shift in -100.0f64..100.0) {
        let s = m.softmax_rows().unwrap();
        let cols = m.shape()[1];
        for row in s.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        let shifted = Tensor::matrix(m.shape()[0], cols, m.data().iter().map(|v| v + shift).collect()).unwrap();
        for (a, b) in s.data().iter().zip(shifted.softmax_rows().unwrap().data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn transpose_reverses_products(a in matrix(4, 5), seed in 0u64..1000) {
        let k = a.shape()[1];
        let b = Tensor::matrix(k, 3, (0..k * 3).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect()).unwrap();
        let left = a.matmul(&b).unwrap().transpose().unwrap();
        let right = b.transpose().unwrap().matmul(&a.transpose().unwrap()).unwrap();
        prop_assert_eq!(left.shape(), right.shape());
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoints_round_trip_exactly(
        tensors in prop::collection::vec(matrix(3, 3), 1..5),
        meta_value in "[a-z0-9 =.]{0,12}",
    ) {
        let mut params = ParamStore::<f64>::new();
        for (i, t) in tensors.into_iter().enumerate() {
            params.insert(format!("p{i}.w"), t);
        }
        let meta = vec![("note".to_string(), meta_value)];
        let bytes = checkpoint::encode(&meta, &params).unwrap();
        let (meta_back, back) = checkpoint::read::<f64>(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&meta_back, &meta);
        prop_assert_eq!(checkpoint::encode(&meta_back, &back).unwrap(), bytes);
    }
}
