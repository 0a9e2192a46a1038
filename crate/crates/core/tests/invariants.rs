use gesture_clr::augment::{mirror_about, mirror_axis, rotate_about};
use gesture_clr::diff::{Graph, Tensor};
use gesture_clr::eval::EmbeddingTable;
use gesture_clr::objectives::{multimodal_info_nce, unimodal_nt_xent, LossConfig};
use gesture_clr::pose::{SkeletonWindow, CHANNELS, JOINTS};
use gesture_clr::probing::split_pairs;
use gesture_clr::stats::{
    benjamini_hochberg, bonferroni, cosine_similarity, mann_whitney_u, roc_auc, spearman, UMethod,
};
use proptest::prelude::*;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n).prop_filter("both classes", |l| {
                l.iter().any(|v| *v) && l.iter().any(|v| !*v)
            }),
        )
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
}

fn window() -> impl Strategy<Value = SkeletonWindow> {
    (2usize..6).prop_flat_map(|frames| {
        let plane = frames * JOINTS;
        (
            prop::collection::vec(-500.0f64..500.0, 2 * plane),
            prop::collection::vec(0.0f64..=1.0, plane),
        )
            .prop_map(move |(xy, conf)| {
                let data = xy.into_iter().chain(conf).collect::<Vec<_>>();
                assert_eq!(data.len(), CHANNELS * plane);
                SkeletonWindow::new("w", 25, frames, data).unwrap()
            })
    })
}

fn loss_value(build: impl FnOnce(&mut Graph) -> gesture_clr::Result<gesture_clr::diff::Var>) -> f64 {
    let mut g = Graph::new();
    let v = build(&mut g).unwrap();
    g.value(v).item().unwrap()
}

fn permute_rows(data: &[f64], cols: usize, order: &[usize]) -> Vec<f64> {
    order.iter().flat_map(|&r| data[r * cols..(r + 1) * cols].iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_is_invariant_under_monotone_maps((scores, labels) in scores_and_labels()) {
        let base = roc_auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        let exp: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        prop_assert!((roc_auc(&exp, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((roc_auc(&affine, &labels).unwrap() - base).abs() < 1e-12);
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((roc_auc(&negated, &labels).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    #[test]
    fn spearman_is_invariant_under_monotone_maps(
        x in prop::collection::vec(-10.0f64..10.0, 5..30),
        seed in any::<u64>(),
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + ((i as u64 ^ seed) % 7) as f64).collect();
        let Ok(base) = spearman(&x, &y) else { return Ok(()) };
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let shifted: Vec<f64> = y.iter().map(|v| 0.5 * v + 100.0).collect();
        let other = spearman(&cubed, &shifted).unwrap();
        prop_assert!((other.rho - base.rho).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&base.rho));
        prop_assert!((0.0..=1.0).contains(&base.p_value));
    }

    #[test]
    fn multiple_testing_corrections_are_consistent(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let bh = benjamini_hochberg(&p).unwrap();
        let bonf = bonferroni(&p).unwrap();
        for i in 0..p.len() {
            prop_assert!(bh[i] >= p[i] - 1e-15 && bh[i] <= 1.0);
            prop_assert!(bonf[i] >= bh[i] - 1e-15);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(bh[i] <= bh[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn mann_whitney_statistics_are_complementary(
        a in prop::collection::vec(-5.0f64..5.0, 1..15),
        b in prop::collection::vec(-5.0f64..5.0, 1..15),
    ) {
        let ab = mann_whitney_u(&a, &b, UMethod::default()).unwrap();
        let ba = mann_whitney_u(&b, &a, UMethod::default()).unwrap();
        let total = (a.len() * b.len()) as f64;
        prop_assert!((ab.statistic + ba.statistic - total).abs() < 1e-9);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn cosine_is_bounded_and_scale_free(
        u in prop::collection::vec(-3.0f64..3.0, 8),
        v in prop::collection::vec(-3.0f64..3.0, 8),
        k in 0.1f64..20.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine_similarity(&u, &v).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        let scaled: Vec<f64> = u.iter().map(|x| x * k).collect();
        prop_assert!((cosine_similarity(&scaled, &v).unwrap() - c).abs() < 1e-12);
        prop_assert!((cosine_similarity(&v, &u).unwrap() - c).abs() < 1e-15);
    }

    #[test]
    fn unimodal_loss_ignores_pair_order_and_row_scale(
        n in 2usize..5,
        seed in any::<u64>(),
        data in matrix(8, 3),
    ) {
        let cols = 3;
        let data = data[..2 * n * cols].to_vec();
        prop_assume!((0..2 * n).all(|r| data[r * cols..(r + 1) * cols].iter().any(|x| x.abs() > 1e-2)));
        let cfg = LossConfig::default();
        let loss = |d: Vec<f64>| loss_value(|g| {
            let v = g.constant(Tensor::new(&[2 * n, cols], d)?);
            unimodal_nt_xent(g, v, &cfg)
        });
        let base = loss(data.clone());
        prop_assert!(base >= -1e-12);

        let mut pairs: Vec<usize> = (0..n).collect();
        pairs.rotate_left((seed % n as u64) as usize);
        let order: Vec<usize> = pairs.iter().copied().chain(pairs.iter().map(|i| i + n)).collect();
        prop_assert!((loss(permute_rows(&data, cols, &order)) - base).abs() < 1e-9);

        let scaled: Vec<f64> = data.iter().enumerate().map(|(i, v)| v * (1.0 + (i / cols) as f64)).collect();
        prop_assert!((loss(scaled) - base).abs() < 1e-9);
    }

    #[test]
    fn multimodal_loss_is_symmetric_and_order_free(
        n in 2usize..5,
        shift in 0usize..4,
        gz in matrix(4, 3),
        sz in matrix(4, 3),
    ) {
        let cols = 3;
        let (gz, sz) = (gz[..n * cols].to_vec(), sz[..n * cols].to_vec());
        prop_assume!((0..n).all(|r| gz[r * cols..(r + 1) * cols].iter().any(|x| x.abs() > 1e-2)));
        prop_assume!((0..n).all(|r| sz[r * cols..(r + 1) * cols].iter().any(|x| x.abs() > 1e-2)));
        let cfg = LossConfig::default();
        let loss = |a: Vec<f64>, b: Vec<f64>| loss_value(|g| {
            let a = g.constant(Tensor::new(&[n, cols], a)?);
            let b = g.constant(Tensor::new(&[n, cols], b)?);
            multimodal_info_nce(g, a, b, &cfg)
        });
        let base = loss(gz.clone(), sz.clone());
        prop_assert!(base >= -1e-12);
        prop_assert!((loss(sz.clone(), gz.clone()) - base).abs() < 1e-9);
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left(shift % n);
        let moved = loss(permute_rows(&gz, cols, &order), permute_rows(&sz, cols, &order));
        prop_assert!((moved - base).abs() < 1e-9);
    }

    #[test]
    fn mirror_is_an_involution_and_rotation_inverts(w in window(), deg in -180.0f64..180.0) {
        let axis = mirror_axis(&w);
        let back = mirror_about(&mirror_about(&w, axis), axis);
        for (a, b) in w.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let centre = (w.x(0, 0), w.y(0, 0));
        let undone = rotate_about(&rotate_about(&w, deg, centre), -deg, centre);
        for (a, b) in w.data().iter().zip(undone.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn probe_splits_partition_the_pairs(
        labels in prop::collection::vec(any::<bool>(), 20..200),
        seed in any::<u64>(),
    ) {
        let positives = labels.iter().filter(|l| **l).count();
        prop_assume!(positives >= 8 && labels.len() - positives >= 8);
        let split = split_pairs(&labels, [0.6, 0.2, 0.2], seed, 50).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for part in [&split.train, &split.val, &split.test] {
            prop_assert!(part.iter().any(|&i| labels[i]) && part.iter().any(|&i| !labels[i]));
        }
        prop_assert_eq!(split_pairs(&labels, [0.6, 0.2, 0.2], seed, 50).unwrap(), split);
    }

    #[test]
    fn embedding_csv_round_trips_exactly(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..10)) {
        let mut table = EmbeddingTable::new(3);
        for (i, r) in rows.into_iter().enumerate() {
            table.rows.insert(format!("g{i:03}"), r);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        table.write_csv(&path).unwrap();
        prop_assert_eq!(EmbeddingTable::read_csv(&path).unwrap(), table);
    }
}

mod special_functions {
    use gesture_clr::stats::special::{beta_inc, erfc, gamma_p, ln_gamma, normal_cdf, student_t_cdf};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn ln_gamma_matches_reference(x in 0.05f64..60.0) {
            let expected = statrs::function::gamma::ln_gamma(x);
            prop_assert!((ln_gamma(x) - expected).abs() < 1e-10 * expected.abs().max(1.0));
        }

        #[test]
        fn incomplete_gamma_matches_reference(a in 0.1f64..30.0, x in 0.0f64..60.0) {
            let expected = statrs::function::gamma::gamma_lr(a, x);
            prop_assert!((gamma_p(a, x) - expected).abs() < 1e-10);
        }

        #[test]
        fn incomplete_beta_matches_reference(a in 0.1f64..40.0, b in 0.1f64..40.0, x in 0.0f64..=1.0) {
            let expected = statrs::function::beta::beta_reg(a, b, x);
            prop_assert!((beta_inc(a, b, x) - expected).abs() < 1e-10);
        }

        #[test]
        fn distribution_cdfs_match_reference(z in -8.0f64..8.0, df in 1.0f64..200.0) {
            let normal = Normal::new(0.0, 1.0).unwrap();
            prop_assert!((normal_cdf(z) - normal.cdf(z)).abs() < 1e-10);
            prop_assert!((erfc(z) - statrs::function::erf::erfc(z)).abs() < 1e-10);
            let t = StudentsT::new(0.0, 1.0, df).unwrap();
            prop_assert!((student_t_cdf(z, df) - t.cdf(z)).abs() < 1e-10);
        }
    }
}
