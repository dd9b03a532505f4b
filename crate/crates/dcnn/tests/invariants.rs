use gridbary_core::{BarycentricWeights, GridMeasure};
use gridbary_dcnn::{decode_checkpoint, encode_checkpoint, predict, sgdr_lr, ModelConfig, ModelWeights, TrainConfig};
use proptest::prelude::*;

fn measure(raw: &[f64]) -> GridMeasure {
    gridbary_core::normalize(8, 8, raw).unwrap()
}

fn weights() -> ModelWeights<f32> {
    ModelWeights::init(&ModelConfig::new(8, 2, vec![2, 4]).unwrap(), 21).unwrap()
}

fn grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 64).prop_filter("some mass", |v| v.iter().sum::<f64>() > 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prediction_is_a_measure(a in grid(), b in grid(), l in 0.0f64..=1.0) {
        let lam = BarycentricWeights::new(vec![l, 1.0 - l]).unwrap();
        let p = predict(&weights(), &[measure(&a), measure(&b)], &lam).unwrap();
        prop_assert!(p.mass().iter().all(|x| x.is_finite() && *x >= 0.0));
        prop_assert!((p.total() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn joint_permutation_is_bit_identical(a in grid(), b in grid(), c in grid(), l1 in 0.05f64..0.45, l2 in 0.05f64..0.45) {
        let w = weights();
        let ms = [measure(&a), measure(&b), measure(&c)];
        let lam = vec![l1, l2, 1.0 - l1 - l2];
        let p = predict(&w, &ms, &BarycentricWeights::new(lam.clone()).unwrap()).unwrap();
        let q = predict(
            &w,
            &[ms[2].clone(), ms[0].clone(), ms[1].clone()],
            &BarycentricWeights::new(vec![lam[2], lam[0], lam[1]]).unwrap(),
        )
        .unwrap();
        prop_assert_eq!(p.mass(), q.mass());
    }

    #[test]
    fn duplicate_inputs_merge_bit_identically(a in grid(), b in grid(), l1 in 0.05f64..0.45, l2 in 0.05f64..0.45) {
        let w = weights();
        let (ma, mb) = (measure(&a), measure(&b));
        let l3 = 1.0 - l1 - l2;
        let split = predict(&w, &[ma.clone(), mb.clone(), ma.clone()], &BarycentricWeights::new(vec![l1, l2, l3]).unwrap()).unwrap();
        // Merged weights are summed in ascending order.
        let merged = predict(&w, &[ma, mb], &BarycentricWeights::new(vec![l1.min(l3) + l1.max(l3), l2]).unwrap()).unwrap();
        prop_assert_eq!(split.mass(), merged.mass());
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>()) {
        let w = ModelWeights::<f32>::init(&ModelConfig::new(8, 2, vec![2, 4]).unwrap(), seed).unwrap();
        let bytes = encode_checkpoint(&w).unwrap();
        let back = decode_checkpoint(&bytes, Some(w.config())).unwrap();
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn learning_rate_stays_in_range(p in 0.0f64..31.0) {
        let cfg = TrainConfig::default();
        let lr = sgdr_lr(p, &cfg).unwrap();
        prop_assert!(lr >= cfg.lr_min && lr <= cfg.lr_max);
    }
}
