use std::sync::Arc;

use berngraph::cohort::{load_cohort, save_cohort, split, EventCohort, SplitRatios};
use berngraph::encoders::llr;
use berngraph::gnn::{forward, GnnDims, ModelParams};
use berngraph::graph::{EdgeSet, PatientGraph};
use berngraph::metrics::{auroc, average_precision, bootstrap_eval, group_eval, metrics, Prediction};
use berngraph::sparse::BinaryMatrix;
use berngraph::stats::BernoulliStats;
use berngraph::synth::{brute_force_stats, generate, PlantedSpec, SynthConfig};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max_rows, 1..=max_cols, prop::sample::select(vec![0.05, 0.2, 0.5])).prop_flat_map(|(n, m, p)| {
        prop::collection::vec(
            prop::collection::vec(prop::bool::weighted(p).prop_map(u8::from), m),
            n,
        )
    })
}

fn to_matrix(dense: &[Vec<u8>]) -> BinaryMatrix {
    BinaryMatrix::from_dense(dense[0].len(), dense).unwrap()
}

fn assert_same_stats(a: &BernoulliStats, b: &BernoulliStats) {
    assert_eq!(a.event_counts(), b.event_counts());
    assert_eq!(a.joint, b.joint);
    assert_eq!(a.rho(), b.rho());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_equal_brute_force(dense in matrix(64, 16)) {
        let m = to_matrix(&dense);
        let fast = BernoulliStats::estimate(&m).unwrap();
        let slow = brute_force_stats(&m).unwrap();
        prop_assert_eq!(fast.event_counts(), &slow.counts[..]);
        for j in 0..m.n_cols() {
            prop_assert!((fast.rho()[j] - slow.rho[j]).abs() <= 1e-12);
            for i in 0..m.n_cols() {
                if i == j {
                    continue;
                }
                prop_assert_eq!(fast.joint.get(i, j), slow.joint[i][j]);
                // the fast path stores no entry for pairs that never co-occur
                let fast_e = fast.conditional(i, j);
                prop_assert_eq!(fast_e.is_none(), slow.joint[i][j] == 0);
                let slow_e = slow.conditional[i][j].unwrap_or(0.0);
                prop_assert!((fast_e.unwrap_or(0.0) - slow_e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conditionals_reconstruct_joint_counts(dense in matrix(64, 16)) {
        let stats = BernoulliStats::estimate(&to_matrix(&dense)).unwrap();
        for c in stats.conditionals() {
            prop_assert!(c.e > 0.0 && c.e <= 1.0);
            let count = stats.event_counts()[c.given as usize];
            prop_assert_eq!((c.e * count as f64).round() as u64, c.joint);
        }
    }

    #[test]
    fn stats_ignore_row_order(dense in matrix(48, 12), seed in any::<u64>()) {
        let mut shuffled = dense.clone();
        let mut rng = rand_shuffle(seed);
        for i in (1..shuffled.len()).rev() {
            let j = (rng() % (i as u64 + 1)) as usize;
            shuffled.swap(i, j);
        }
        let a = BernoulliStats::estimate(&to_matrix(&dense)).unwrap();
        let b = BernoulliStats::estimate(&to_matrix(&shuffled)).unwrap();
        assert_same_stats(&a, &b);
    }

    #[test]
    fn split_partitions_rows(n in 5usize..300, seed in any::<u64>()) {
        let cohort = EventCohort::unnamed(BinaryMatrix::zeros(n, 2), BinaryMatrix::zeros(n, 1)).unwrap();
        let s = split(&cohort, SplitRatios::default(), seed).unwrap();
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.val_rows).chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (tr, va, te) = SplitRatios::default().sizes(n);
        prop_assert_eq!((s.train_rows.len(), s.val_rows.len(), s.test_rows.len()), (tr, va, te));
        prop_assert!((va as f64 - 0.2 * n as f64).abs() < 1.0);
        prop_assert_eq!(split(&cohort, SplitRatios::default(), seed).unwrap(), s);
    }

    #[test]
    fn grouped_split_keeps_groups_whole(groups in prop::collection::vec(0u8..12, 20..120), seed in any::<u64>()) {
        let n = groups.len();
        let ids: Vec<String> = groups.iter().map(|g| format!("g{g}")).collect();
        let cohort = EventCohort::new(
            BinaryMatrix::zeros(n, 1),
            BinaryMatrix::zeros(n, 1),
            vec!["e".into()],
            vec!["d".into()],
            Some(ids.clone()),
        )
        .unwrap();
        if let Ok(s) = split(&cohort, SplitRatios::default(), seed) {
            let part = |r: usize| {
                if s.train_rows.contains(&r) { 0 } else if s.val_rows.contains(&r) { 1 } else { 2 }
            };
            for a in 0..n {
                for b in 0..n {
                    if ids[a] == ids[b] {
                        prop_assert_eq!(part(a), part(b));
                    }
                }
            }
        }
    }

    #[test]
    fn llr_is_nonnegative(k in prop::array::uniform2(prop::array::uniform2(0u64..60))) {
        if k.iter().flatten().sum::<u64>() > 0 {
            prop_assert!(llr(k).unwrap() >= 0.0);
        }
    }

    #[test]
    fn llr_vanishes_under_independence(a in 1u64..20, b in 1u64..20, c in 1u64..20, d in 1u64..20) {
        let v = llr([[a * c, a * d], [b * c, b * d]]).unwrap();
        prop_assert!(v.abs() < 1e-9, "llr = {}", v);
    }

    #[test]
    fn rank_metrics_invariant_to_monotone_maps(
        scores in prop::collection::vec(0.0f64..1.0, 2..30),
        truth_seed in any::<u64>(),
    ) {
        let mut rng = rand_shuffle(truth_seed);
        let truth: Vec<u8> = scores.iter().map(|_| (rng() % 2) as u8).collect();
        let mapped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 7.0).collect();
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => (x - y).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(average_precision(&scores, &truth), average_precision(&mapped, &truth)));
        prop_assert!(close(auroc(&scores, &truth), auroc(&mapped, &truth)));
    }

    #[test]
    fn group_eval_ignores_row_order(
        rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 3), prop::collection::vec(0u8..2, 3), 0u8..4), 1..40),
        order in any::<u64>(),
    ) {
        let preds: Vec<Prediction> = rows.iter().map(|r| Prediction::from_probs(r.0.clone())).collect();
        let labels: Vec<Vec<u8>> = rows.iter().map(|r| r.1.clone()).collect();
        let groups: Vec<String> = rows.iter().map(|r| r.2.to_string()).collect();
        let a = group_eval(&preds, &labels, &groups).unwrap();

        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut rng = rand_shuffle(order);
        for i in (1..idx.len()).rev() {
            idx.swap(i, (rng() % (i as u64 + 1)) as usize);
        }
        let b = group_eval(
            &idx.iter().map(|&i| preds[i].clone()).collect::<Vec<_>>(),
            &idx.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>(),
            &idx.iter().map(|&i| groups[i].clone()).collect::<Vec<_>>(),
        )
        .unwrap();
        for (x, y) in a.means().iter().zip(b.means()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_is_reproducible(
        rows in prop::collection::vec((prop::collection::vec(0.0f64..1.0, 4), prop::collection::vec(0u8..2, 4)), 2..60),
        seed in any::<u64>(),
    ) {
        let preds: Vec<Prediction> = rows.iter().map(|r| Prediction::from_probs(r.0.clone())).collect();
        let labels: Vec<Vec<u8>> = rows.iter().map(|r| r.1.clone()).collect();
        let a = bootstrap_eval(&preds, &labels, 10, 0.8, seed).unwrap();
        let b = bootstrap_eval(&preds, &labels, 10, 0.8, seed).unwrap();
        prop_assert_eq!(a, b);
        let full = bootstrap_eval(&preds, &labels, 10, 1.0, seed).unwrap();
        let plain = metrics(&preds, &labels).unwrap();
        prop_assert_eq!(full.summary.stds(), [0.0; 5]);
        prop_assert_eq!(full.summary.means(), plain.means());
    }

    #[test]
    fn updated_node_features_are_unit_or_zero(seed in any::<u64>(), values in prop::collection::vec(0.0f64..1.0, 6)) {
        let mut rng = rand_shuffle(seed);
        let mut edges = Vec::new();
        for a in 0..6u32 {
            for b in 0..6u32 {
                if a != b && rng() % 3 == 0 {
                    edges.push((a, b, (rng() % 1000) as f64 / 1000.0));
                }
            }
        }
        let g = PatientGraph {
            node_values: values,
            edges: Arc::new(EdgeSet::new(6, edges).unwrap()),
            labels: vec![0, 1, 0],
            row_id: 0,
            group_id: None,
        };
        let p = ModelParams::<f64>::init(GnnDims::new(8, 2, 6, 3), seed);
        let (_, cache) = forward(&g, &p).unwrap();
        for h in &cache.h[1..] {
            for row in h.rows() {
                let n = row.dot(&row).sqrt();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
            }
        }
    }
}

/// Small xorshift stream for permutations inside property bodies.
fn rand_shuffle(seed: u64) -> impl FnMut() -> u64 {
    let mut s = seed | 1;
    move || {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        s
    }
}

#[test]
fn cohort_round_trips_through_disk() {
    let config = SynthConfig::planted(PlantedSpec {
        n: 150,
        ..PlantedSpec::default()
    })
    .unwrap();
    let (mut cohort, _) = generate(&config).unwrap();
    cohort.group_ids = Some((0..150).map(|r| format!("p{}", r / 3)).collect());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    save_cohort(&cohort, &path).unwrap();
    assert_eq!(load_cohort(&path).unwrap(), cohort);
}

#[test]
fn simulated_marginals_converge() {
    let spec = PlantedSpec {
        n: 20_000,
        m: 200,
        l: 5,
        ..PlantedSpec::default()
    };
    let config = SynthConfig::planted(spec).unwrap();
    let (cohort, _) = generate(&config).unwrap();
    let stats = BernoulliStats::estimate(&cohort.events).unwrap();
    let expected = config.expected_event_rates();
    let n = spec.n as f64;
    let outside = expected
        .iter()
        .zip(stats.rho())
        .filter(|(&p, &hat)| (hat - p).abs() >= 3.0 * (p * (1.0 - p) / n).sqrt())
        .count();
    assert!(outside as f64 <= 0.01 * spec.m as f64, "{outside} events outside 3 sigma");
}

#[test]
fn subsets_of_rows_give_consistent_stats() {
    let config = SynthConfig::planted(PlantedSpec {
        n: 400,
        ..PlantedSpec::default()
    })
    .unwrap();
    let (cohort, _) = generate(&config).unwrap();
    let rows: Vec<usize> = (0..400).filter(|r| r % 3 != 0).collect();
    let a = BernoulliStats::estimate_rows(&cohort.events, &rows).unwrap();
    let b = BernoulliStats::estimate(&cohort.events.select_rows(&rows)).unwrap();
    assert_same_stats(&a, &b);
    proptest!(|(picked in subsequence((0..400usize).collect::<Vec<_>>(), 1..400))| {
        let s = BernoulliStats::estimate_rows(&cohort.events, &picked).unwrap();
        prop_assert_eq!(s.n_rows(), picked.len() as u64);
    });
}
