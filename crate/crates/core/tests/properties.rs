use pfld::accountant::{default_orders, rdp_sampled_gaussian, to_dp, RdpCurve};
use pfld::privacy::{clip_gradient, clip_value, sensitivity_dual, sensitivity_primal};
use pfld::{kfold, synthesize_biased, Dataset, FairnessNotion, Multipliers};
use proptest::prelude::*;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn clipped_gradient_stays_in_ball(g in prop::collection::vec(-1e3f64..1e3, 1..20), c in 1e-3f64..1e3) {
        let out = clip_gradient(&g, c);
        prop_assert!(l2(&out) <= c * (1.0 + 1e-12));
        if l2(&g) <= c {
            prop_assert_eq!(&out, &g);
        } else {
            // parallel with a positive factor
            let k = l2(&out) / l2(&g);
            for (a, b) in out.iter().zip(&g) {
                prop_assert!((a - k * b).abs() <= 1e-9 * c);
            }
        }
    }

    #[test]
    fn clipped_value_bounded_with_sign(h in -1e4f64..1e4, c in 1e-3f64..1e3) {
        let out = clip_value(h, c);
        prop_assert!(out.abs() <= c * (1.0 + 1e-15));
        prop_assert!(out == 0.0 || out.signum() == h.signum());
        if h.abs() <= c {
            prop_assert_eq!(out, h);
        }
    }

    #[test]
    fn sensitivities_scale_as_stated(min in 2usize..500, c in 0.01f64..100.0, lmax in 0.01f64..10.0, r in 0.01f64..1.0) {
        let base = sensitivity_primal(min, c, lmax, 1.0).unwrap();
        prop_assert!((sensitivity_primal(min, 2.0 * c, lmax, 1.0).unwrap() - 2.0 * base).abs() <= 1e-12 * base);
        prop_assert!((sensitivity_primal(min, c, 3.0 * lmax, 1.0).unwrap() - 3.0 * base).abs() <= 1e-12 * base);
        prop_assert!((sensitivity_primal(min, c, lmax, r).unwrap() - base / r).abs() <= 1e-12 * base / r);
        prop_assert!(sensitivity_primal(min + 1, c, lmax, 1.0).unwrap() < base);
        let d = sensitivity_dual(min, c, 1.0).unwrap();
        prop_assert!((d * (min as f64 - 1.0) / c - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn multipliers_stay_in_box(lmax in 0.0f64..5.0, steps in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40), s in 0.0f64..2.0) {
        let mut m = Multipliers::zeros(2, lmax);
        for (a, b) in steps {
            m.ascend(&[a, b], s).unwrap();
            prop_assert!(m.values().iter().all(|&l| (0.0..=lmax).contains(&l)));
        }
    }

    #[test]
    fn rdp_monotone(q in 0.001f64..1.0, s1 in 0.5f64..10.0, ds in 0.0f64..5.0, order in 2u32..40) {
        let a = order as f64;
        let lo = rdp_sampled_gaussian(q, s1 + ds, a).unwrap();
        let hi = rdp_sampled_gaussian(q, s1, a).unwrap();
        prop_assert!(lo <= hi * (1.0 + 1e-12));
        let bigger_q = rdp_sampled_gaussian((q * 1.5).min(1.0), s1, a).unwrap();
        prop_assert!(bigger_q >= hi * (1.0 - 1e-12));
    }

    #[test]
    fn more_orders_never_hurt(pick in prop::collection::vec(any::<bool>(), 70), sigma in 0.6f64..5.0, delta in 1e-8f64..0.1) {
        let all = default_orders();
        let subset: Vec<f64> = all.iter().zip(&pick).filter(|(_, &k)| k).map(|(o, _)| *o).collect();
        prop_assume!(!subset.is_empty());
        let full = to_dp(&RdpCurve::sampled_gaussian(&all, 1.0, sigma).unwrap(), delta).unwrap().0;
        let part = to_dp(&RdpCurve::sampled_gaussian(&subset, 1.0, sigma).unwrap(), delta).unwrap().0;
        prop_assert!(full <= part);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kfold_partitions(n in 40usize..200, k in 2usize..8, seed in any::<u64>()) {
        let data: Dataset = synthesize_biased(n, 3, 2, 0.3, seed).unwrap();
        let plan = kfold(&data, k, seed).unwrap();
        let sizes = plan.fold_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let (train, test) = plan.split(f);
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(test.iter().all(|i| !train.contains(i)));
        }
    }

    #[test]
    fn standardized_columns(n in 20usize..120, seed in any::<u64>()) {
        let data: Dataset = synthesize_biased(n, 4, 2, 0.5, seed).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..n).map(|i| data.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn violations_and_metric_are_bounded(seed in any::<u64>(), notion_pick in 0usize..3) {
        let notion = [FairnessNotion::DemographicParity, FairnessNotion::EqualizedOdds, FairnessNotion::AccuracyParity][notion_pick];
        let data: Dataset = synthesize_biased(80, 3, 2, 0.4, seed).unwrap();
        let p = pfld::Params::init_seeded(pfld::Architecture::for_inputs(3), seed);
        let rows: Vec<usize> = (0..80).collect();
        let Ok(set) = pfld::build_constraints(&data, &rows, notion) else { return Ok(()) };
        let v = pfld::fairness::violation_vector(&p, &data, &set).unwrap();
        prop_assert!(v.iter().all(|&x| x >= 0.0 && x.is_finite()));
        let fv = pfld::fairness_violation_metric(&p, &data, notion).unwrap();
        prop_assert!((0.0..=1.0).contains(&fv));
        let probs = p.predict_all(&data).unwrap();
        prop_assert!(probs.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}
