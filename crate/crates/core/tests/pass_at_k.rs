use proptest::prelude::*;
use veriloop_core::bench::pass_at_k;

fn triple() -> impl Strategy<Value = (u64, u64, u64)> {
    (1u64..=2000).prop_flat_map(|n| (Just(n), 0..=n, 1..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn within_unit_interval((n, c, k) in triple()) {
        let v = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn non_decreasing_in_c((n, c, k) in triple()) {
        prop_assume!(c < n);
        prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= pass_at_k(n, c, k).unwrap() - 1e-12);
    }

    #[test]
    fn non_decreasing_in_k((n, c, k) in triple()) {
        prop_assume!(k < n);
        prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= pass_at_k(n, c, k).unwrap() - 1e-12);
    }

    #[test]
    fn non_increasing_in_n((n, c, k) in triple()) {
        prop_assert!(pass_at_k(n + 1, c, k).unwrap() <= pass_at_k(n, c, k).unwrap() + 1e-12);
    }

    #[test]
    fn k_of_one_is_the_pass_rate(n in 1u64..=10_000, frac in 0.0f64..=1.0) {
        let c = (n as f64 * frac) as u64;
        prop_assert_eq!(pass_at_k(n, c, 1).unwrap(), c as f64 / n as f64);
    }

    #[test]
    fn out_of_domain_is_rejected(n in 0u64..50, c in 0u64..60, k in 0u64..60) {
        let valid = c <= n && k >= 1 && k <= n;
        prop_assert_eq!(pass_at_k(n, c, k).is_ok(), valid);
    }
}

#[test]
fn large_n_has_no_overflow() {
    for (n, c, k) in [(10_000, 1, 10_000), (10_000, 5000, 5000), (10_000, 9999, 1), (10_000, 0, 9000)] {
        let v = pass_at_k(n, c, k).unwrap();
        assert!(v.is_finite() && (0.0..=1.0).contains(&v), "{n} {c} {k} -> {v}");
    }
}
