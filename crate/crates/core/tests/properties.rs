use proptest::prelude::*;

use settlebench::engine::{run_episode, GameConfig};
use settlebench::features::{dedup_rows, DatasetEntry, Dataset, Normalization};
use settlebench::harness::{RandomEvaluator, RunMetrics, SettlementAgent};
use settlebench::mlp::{self, MlpConfig, MlpModel};
use settlebench::rl::{update_from_episode, DecisionRecord, ValueTable};
use settlebench::rulekb::{default_kb, score_cluster, ClusterFacts, MaxChooser, PositionChooser};
use settlebench::world::{decode_map, encode_map, generate_map, Coord, MapGenConfig};

fn random_episode(map_seed: u64, seed: u64, turns: u32) -> u64 {
    let map = generate_map(&MapGenConfig::default(), map_seed).unwrap();
    let config = GameConfig { turn_limit: turns, ..Default::default() };
    let mut evals = [RandomEvaluator::new(seed), RandomEvaluator::new(seed ^ 1)];
    let [a, b] = &mut evals;
    let mut a = SettlementAgent { evaluator: a };
    let mut b = SettlementAgent { evaluator: b };
    run_episode(&map, &config, seed, None, vec!["a".into(), "b".into()], &mut [&mut a, &mut b]).unwrap().tgo()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_text_round_trip(seed in any::<u64>(), w in 12u32..40, h in 12u32..40) {
        let map = generate_map(&MapGenConfig { width: w, height: h, ..Default::default() }, seed).unwrap();
        let text = encode_map(&map);
        let back = decode_map(&text).unwrap();
        prop_assert_eq!(&back, &map);
        prop_assert_eq!(encode_map(&back), text);
    }

    #[test]
    fn running_average_is_prefix_mean(tgo in prop::collection::vec(0u64..100_000, 0..60)) {
        let m = RunMetrics { tgo: tgo.clone() };
        let avg = m.running_avg();
        prop_assert_eq!(avg.len(), tgo.len());
        for (i, a) in avg.iter().enumerate() {
            let mean = tgo[..=i].iter().sum::<u64>() as f64 / (i + 1) as f64;
            prop_assert!((a - mean).abs() <= 1e-9 * mean.max(1.0));
        }
        let back = RunMetrics::from_csv(&m.to_csv()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn score_is_sum_of_independent_families(seed in 0u64..500, x in 2i32..18, y in 2i32..18, picks in prop::collection::vec(0usize..4, 14)) {
        let map = generate_map(&MapGenConfig::default(), seed).unwrap();
        let facts = ClusterFacts::at(&map, Coord::new(x, y)).unwrap();
        let kb = default_kb();
        let chosen = picks.iter().enumerate().map(|(f, &p)| (f, p)).collect();
        let (score, trace) = score_cluster(&kb, &facts, &mut PositionChooser(chosen)).unwrap();
        prop_assert_eq!(score, trace.contributed());
        // Each fired family contributes exactly its chosen alternative.
        let expected: i64 = trace.entries.iter().map(|e| i64::from(kb.family(e.family).unwrap().rules[picks[e.family]].points)).sum();
        prop_assert_eq!(score, expected);
    }

    #[test]
    fn scaling_points_scales_scores(seed in 0u64..500, x in 2i32..18, y in 2i32..18, factor in -3i32..4) {
        let map = generate_map(&MapGenConfig::default(), seed).unwrap();
        let facts = ClusterFacts::at(&map, Coord::new(x, y)).unwrap();
        let kb = default_kb();
        let picks: std::collections::BTreeMap<usize, usize> = (0..14).map(|f| (f, f % 4)).collect();
        let (base, _) = score_cluster(&kb, &facts, &mut PositionChooser(picks.clone())).unwrap();
        let (scaled, _) = score_cluster(&kb.scaled(factor), &facts, &mut PositionChooser(picks)).unwrap();
        prop_assert_eq!(scaled, base * i64::from(factor));
        let (max, _) = score_cluster(&kb, &facts, &mut MaxChooser).unwrap();
        prop_assert!(max >= base);
    }

    #[test]
    fn dedup_ignores_row_order(rows in prop::collection::vec((prop::collection::vec(0u8..3, 3), 0u32..50), 1..40), rot in 0usize..40) {
        let rows: Vec<(Vec<f64>, f64)> = rows.into_iter().map(|(f, l)| (f.into_iter().map(f64::from).collect(), f64::from(l))).collect();
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot % rows.len());
        shuffled.reverse();
        let a = dedup_rows(rows.clone());
        let b = dedup_rows(shuffled);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.features, &y.features);
            prop_assert!((x.label - y.label).abs() <= 1e-9);
        }
    }

    #[test]
    fn minmax_maps_fitted_rows_into_unit_box(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..30)) {
        let data = Dataset::new(rows.iter().map(|f| DatasetEntry { features: f.clone(), label: 1.0 }).collect());
        let norm = data.minmax_fit().unwrap();
        for r in &rows {
            for v in norm.apply(r).unwrap() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let back = Normalization::from_text(&norm.to_text(&[])).unwrap();
        prop_assert_eq!(back, norm);
    }

    #[test]
    fn value_table_text_round_trip(credits in prop::collection::vec((0usize..4, 0usize..14, 0usize..4, 0u32..10_000), 1..50)) {
        let mut t = ValueTable::new(4, vec!["turn".into()], 0.1);
        for (s, f, alt, r) in credits {
            let rec = DecisionRecord { state: s, family: f, rule: f * 4 + alt, turn: 1 };
            update_from_episode(&mut t, &[rec], f64::from(r) / 7.0).unwrap();
        }
        prop_assert_eq!(ValueTable::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn model_text_round_trip(seed in any::<u64>(), hidden in 1usize..8) {
        let model = mlp::init(&MlpConfig { input_dim: 3, hidden: vec![hidden], seed, init_std: 0.3, ..Default::default() }, seed).unwrap();
        let back = MlpModel::from_text(&model.to_text()).unwrap();
        prop_assert_eq!(back.params(), model.params());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tgo_grows_with_horizon(map_seed in 0u64..100, seed in any::<u64>(), turns in 1u32..40, extra in 1u32..20) {
        prop_assert!(random_episode(map_seed, seed, turns) <= random_episode(map_seed, seed, turns + extra));
    }
}
