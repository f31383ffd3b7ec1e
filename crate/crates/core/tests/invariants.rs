//! Property tests for the structural invariants: layout round trips,
//! serialization, partitions, and optimizer identities.

use proptest::prelude::*;

use vidflow_core::eval::{accuracy_from_confusion, kfold_split, ConfusionMatrix};
use vidflow_core::flow::{flow_to_rgb, rgb_to_flow, FlowField};
use vidflow_core::nn::{softmax, ModelState};
use vidflow_core::tensor::{concat_axis, read_ften, write_ften, AnyTensor, Tensor};
use vidflow_core::train::{sgd_step, Penalty};

fn small_shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..6, 1..4)
}

fn tensor_f64(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-1e3f64..1e3, n..=n)
        .prop_map(move |data| Tensor::new(&shape, data).unwrap())
}

proptest! {
    #[test]
    fn reshape_roundtrip_is_identity(shape in small_shape(), seed in any::<u64>()) {
        let mut rng = vidflow_core::tensor::SeededRng::new(seed);
        let t = Tensor::<f64>::from_fn(&shape, |_| rng.uniform(-10.0, 10.0));
        let flat_len = t.len();
        let back = t
            .clone()
            .reshape(&[flat_len])
            .unwrap()
            .reshape(&shape)
            .unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn concat_then_index_recovers_parts(
        shape in small_shape(),
        seed in any::<u64>(),
        parts in 1usize..4,
    ) {
        let mut rng = vidflow_core::tensor::SeededRng::new(seed);
        let tensors: Vec<Tensor<f64>> = (0..parts)
            .map(|_| Tensor::from_fn(&shape, |_| rng.uniform(-1.0, 1.0)))
            .collect();
        let refs: Vec<&Tensor<f64>> = tensors.iter().collect();
        let cat = concat_axis(&refs, 0).unwrap();
        let axis_len = shape[0];
        for (p, original) in tensors.iter().enumerate() {
            for i in 0..axis_len {
                let got = cat.index_axis(0, p * axis_len + i).unwrap();
                let want = original.index_axis(0, i).unwrap();
                prop_assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn ften_roundtrip_preserves_bits(shape in small_shape(), t in small_shape().prop_flat_map(tensor_f64)) {
        let _ = shape;
        let mut buf = Vec::new();
        write_ften(&mut buf, &t).unwrap();
        match read_ften(&mut buf.as_slice()).unwrap() {
            AnyTensor::F64(back) => prop_assert_eq!(back, t),
            _ => prop_assert!(false, "dtype changed in flight"),
        }
    }

    #[test]
    fn kfold_test_blocks_partition_everything(
        n in 2usize..200,
        k in 2usize..8,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        let mut seen = vec![0usize; n];
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            for &i in test {
                seen[i] += 1;
            }
            let mut overlap = train.iter().filter(|i| test.contains(i));
            prop_assert!(overlap.next().is_none(), "train and test must be disjoint");
        }
        prop_assert!(seen.iter().all(|&c| c == 1), "each index tested exactly once");
    }

    #[test]
    fn softmax_rows_are_distributions(
        batch in 1usize..5,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = vidflow_core::tensor::SeededRng::new(seed);
        let logits = Tensor::<f64>::from_fn(&[batch, k], |_| rng.uniform(-50.0, 50.0));
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks_exact(k) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            // Open interval mathematically; the upper bound rounds to
            // exactly 1.0 once the logit gap exceeds ~37.
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn sgd_with_zero_rate_is_identity(seed in any::<u64>(), alpha in 0.0f64..2.0) {
        let mut rng = vidflow_core::tensor::SeededRng::new(seed);
        let mut state = ModelState::<f64>::new();
        state.insert("a.weight", Tensor::from_fn(&[3, 2], |_| rng.uniform(-1.0, 1.0)));
        state.insert("a.bias", Tensor::from_fn(&[2], |_| rng.uniform(-1.0, 1.0)));
        let mut grads = ModelState::<f64>::new();
        grads.insert("a.weight", Tensor::from_fn(&[3, 2], |_| rng.uniform(-1.0, 1.0)));
        grads.insert("a.bias", Tensor::from_fn(&[2], |_| rng.uniform(-1.0, 1.0)));
        let before = state.clone();
        sgd_step(&mut state, &grads, 0.0, alpha, Penalty::L2).unwrap();
        prop_assert_eq!(state, before);
    }

    #[test]
    fn sample_indices_monotone_and_in_range(len in 1usize..500, n in 1usize..40) {
        let idx = vidflow_core::data::sample_indices(len, n);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| i < len));
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn accuracy_bounded_and_one_iff_diagonal(
        counts in prop::collection::vec(0u64..50, 4),
    ) {
        let cm = ConfusionMatrix {
            classes: 2,
            counts: counts.clone(),
        };
        prop_assume!(cm.total() > 0);
        let acc = accuracy_from_confusion(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(acc == 1.0, counts[1] == 0 && counts[2] == 0);
    }

    #[test]
    fn flow_rgb_encoding_inverts_under_saturation_bound(
        seed in any::<u64>(),
        max_mag in 0.5f64..16.0,
    ) {
        let mut rng = vidflow_core::tensor::SeededRng::new(seed);
        let cap = max_mag * 0.999;
        let f = FlowField::new(
            Tensor::<f64>::from_fn(&[4, 4], |_| rng.uniform(-cap, cap)),
            Tensor::<f64>::from_fn(&[4, 4], |_| rng.uniform(-cap, cap)),
        )
        .unwrap();
        let back = rgb_to_flow(&flow_to_rgb(&f, max_mag).unwrap(), max_mag).unwrap();
        for (a, b) in f.dx.iter().zip(back.dx.iter()) {
            prop_assert!((a - b).abs() < 1e-9 * max_mag.max(1.0));
        }
        for (a, b) in f.dy.iter().zip(back.dy.iter()) {
            prop_assert!((a - b).abs() < 1e-9 * max_mag.max(1.0));
        }
    }
}
