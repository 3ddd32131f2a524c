use proptest::prelude::*;

use dpmuq::gibbs::{init_state, sweep};
use dpmuq::model::{rescale_to_unit, AlphaPrior, BaseHyper, Dataset, KernelKind, KernelParams};
use dpmuq::truth::example;
use dpmuq::uq::{empirical_cri, hausdorff, probability_content, variance_decomposition, Sided};
use dpmuq::RandomStream;

fn kernel_params() -> impl Strategy<Value = KernelParams> {
    prop_oneof![
        (0.2f64..50.0, 0.1f64..10.0).prop_map(|(shape, mean)| KernelParams::Gamma { shape, mean }),
        (-5.0f64..5.0, 0.01f64..4.0).prop_map(|(mean, variance)| KernelParams::Gaussian { mean, variance }),
        (0.3f64..20.0, 0.3f64..20.0).prop_map(|(a, b)| KernelParams::Beta { a, b }),
    ]
}

fn finite_means() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 40..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cri_endpoints_are_order_statistics(ybar in finite_means()) {
        let (lo, hi) = empirical_cri(&ybar, 0.05, Sided::TwoSided).unwrap();
        prop_assert!(ybar.contains(&lo) && ybar.contains(&hi));
        prop_assert!(lo <= hi);
    }

    #[test]
    fn cri_widens_as_level_drops(ybar in finite_means()) {
        let wide = empirical_cri(&ybar, 0.05, Sided::TwoSided).unwrap();
        let narrow = empirical_cri(&ybar, 0.5, Sided::TwoSided).unwrap();
        prop_assert!(wide.0 <= narrow.0 && narrow.1 <= wide.1);
    }

    #[test]
    fn cri_ignores_order(mut ybar in finite_means(), seed in any::<u64>()) {
        let before = empirical_cri(&ybar, 0.1, Sided::TwoSided).unwrap();
        let mut st = RandomStream::new(seed);
        for i in (1..ybar.len()).rev() {
            ybar.swap(i, st.index(i + 1));
        }
        prop_assert_eq!(before, empirical_cri(&ybar, 0.1, Sided::TwoSided).unwrap());
    }

    #[test]
    fn decomposition_shift_and_scale(
        ybar in prop::collection::vec(-10.0f64..10.0, 2..50),
        shift in -100.0f64..100.0,
        c in 0.1f64..10.0,
    ) {
        let k = ybar.len();
        let s2 = vec![1.0; k];
        let n = vec![10usize; k];
        let base = variance_decomposition(&ybar, &s2, &n).unwrap();
        let moved: Vec<f64> = ybar.iter().map(|y| y + shift).collect();
        let shifted = variance_decomposition(&moved, &s2, &n).unwrap();
        prop_assert!((base.sigma2_i - shifted.sigma2_i).abs() <= 1e-8 * (1.0 + base.sigma2_i.abs()));
        prop_assert!((base.sigma2_s - shifted.sigma2_s).abs() <= 1e-12);
        let scaled: Vec<f64> = ybar.iter().map(|y| c * y).collect();
        let s2c: Vec<f64> = s2.iter().map(|v| c * c * v).collect();
        let sc = variance_decomposition(&scaled, &s2c, &n).unwrap();
        prop_assert!((sc.sigma2_s - c * c * base.sigma2_s).abs() <= 1e-9 * (1.0 + sc.sigma2_s));
        prop_assert!((sc.sigma2_i - c * c * base.sigma2_i).abs() <= 1e-8 * (1.0 + sc.sigma2_i.abs()));
    }

    #[test]
    fn probability_content_is_a_fraction(mu in finite_means(), a in -50.0f64..50.0, w in 0.0f64..50.0) {
        let pc = probability_content((a, a + w), &mu).unwrap();
        prop_assert!((0.0..=1.0).contains(&pc));
        prop_assert_eq!(probability_content((f64::NEG_INFINITY, f64::INFINITY), &mu).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_is_a_metric(a in -10.0f64..10.0, b in 0.0f64..5.0, c in -10.0f64..10.0, d in 0.0f64..5.0) {
        let (x, y) = ((a, a + b), (c, c + d));
        prop_assert_eq!(hausdorff(x, x), 0.0);
        prop_assert_eq!(hausdorff(x, y), hausdorff(y, x));
        prop_assert!(hausdorff(x, y) >= 0.0);
    }

    #[test]
    fn kernel_cdf_monotone(p in kernel_params(), xs in prop::collection::vec(-10.0f64..20.0, 2..30)) {
        let mut xs: Vec<f64> = xs.into_iter().map(|x| if p.kind() == KernelKind::Beta { x.abs() / 20.0 } else { x }).collect();
        xs.sort_by(f64::total_cmp);
        let fs: Vec<f64> = xs.iter().map(|&x| p.cdf(x)).collect();
        for w in fs.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12, "{:?}", fs);
        }
        prop_assert!(fs.iter().all(|f| (0.0..=1.0).contains(f)));
    }

    #[test]
    fn rescale_round_trip(raw in prop::collection::vec(0.0f64..1.0, 1..50), a1 in -100.0f64..100.0, w in 0.01f64..100.0) {
        let a2 = a1 + w;
        let xs: Vec<f64> = raw.iter().map(|u| a1 + u * w).filter(|x| *x <= a2).collect();
        let unit = rescale_to_unit(&xs, a1, a2).unwrap();
        for (x, u) in xs.iter().zip(&unit) {
            prop_assert!((0.0..=1.0).contains(u));
            prop_assert!((a1 + u * (a2 - a1) - x).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn quantile_round_trip(id in 1u32..=7, u in 0.001f64..0.999) {
        let t = example(id).unwrap();
        let x = t.inverse_cdf(u);
        prop_assert!((t.cdf(x) - u).abs() < 1e-8, "example {} u {} x {}", id, u, x);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sweeps_preserve_invariants(
        kind_ix in 0usize..3,
        raw in prop::collection::vec(0.01f64..0.99, 2..25),
        seed in any::<u64>(),
    ) {
        let kind = [KernelKind::Gamma, KernelKind::Gaussian, KernelKind::Beta][kind_ix];
        let data = Dataset::new(raw, kind).unwrap();
        let hyper = BaseHyper::default_for(kind);
        let prior = AlphaPrior::default();
        let mut st = RandomStream::new(seed);
        let mut state = init_state(&data, &hyper, &prior, 2.0, &mut st).unwrap();
        for _ in 0..10 {
            sweep(&mut state, &data, &hyper, &prior, 2.0, &mut st);
            prop_assert!(state.check_invariants());
            prop_assert_eq!(state.counts.iter().sum::<usize>(), data.len());
            prop_assert!(state.k0() >= 1 && state.k0() <= data.len());
            prop_assert!(state.alpha > 0.0);
        }
    }
}
