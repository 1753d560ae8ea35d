use proptest::prelude::*;
use storyline_core::numerics::*;

proptest! {
    #[test]
    fn softmax_is_a_distribution_respecting_mask(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        mask_bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut mask: Vec<bool> = mask_bits[..logits.len()].to_vec();
        if !mask.iter().any(|&m| m) {
            mask[0] = true;
        }
        let p = softmax_slice(&logits, Some(&mask)).unwrap();
        let total: f64 = p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for (pi, keep) in p.iter().zip(&mask) {
            if *keep { prop_assert!(*pi > 0.0) } else { prop_assert_eq!(*pi, 0.0) }
        }
    }

    #[test]
    fn zero_rate_step_is_identity(vals in prop::collection::vec(-5.0f64..5.0, 1..8), g in -3.0f64..3.0) {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vals.clone()).unwrap());
        s.grad_mut(0).fill(g);
        sgd_step(&mut s, 0.0, Direction::Descent).unwrap();
        prop_assert_eq!(s.value(0).data(), &vals[..]);
    }

    #[test]
    fn ops_are_deterministic(a in prop::collection::vec(-2.0f64..2.0, 6), b in prop::collection::vec(-2.0f64..2.0, 6)) {
        let ta = Tensor::matrix(2, 3, a).unwrap();
        let tb = Tensor::matrix(3, 2, b).unwrap();
        prop_assert_eq!(matmul(&ta, &tb).unwrap(), matmul(&ta, &tb).unwrap());
    }
}
