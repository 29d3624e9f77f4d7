//! Metric oracles: brute-force loops for MAE and the F curve, reference
//! values for the structure measure, and aggregation.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sod_net::objective::metrics::{f_beta, THRESHOLDS};
use sod_net::objective::{aggregate, evaluate_map, f_measure_curve, mae, s_measure, s_measure_parts, GrayMap, Quartiles};

fn random_pair(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (GrayMap, GrayMap) {
    let s = GrayMap::from_fn(w, h, |_, _| rng.gen_range(0.0..=1.0));
    let g = GrayMap::from_fn(w, h, |_, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    (s, g)
}

fn disk(w: usize, h: usize, cx: i64, cy: i64, r: i64) -> GrayMap {
    GrayMap::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as i64 - cx, y as i64 - cy);
        if dx * dx + dy * dy <= r * r {
            1.0
        } else {
            0.0
        }
    })
}

fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> GrayMap {
    GrayMap::from_fn(w, h, |x, y| if (x0..x1).contains(&x) && (y0..y1).contains(&y) { 1.0 } else { 0.0 })
}

/// `((a·x + b·y) mod m) / (m − 1)`: a deterministic, structureless map.
fn modular(w: usize, h: usize, a: usize, b: usize, m: usize) -> GrayMap {
    GrayMap::from_fn(w, h, |x, y| ((a * x + b * y) % m) as f64 / (m - 1) as f64)
}

fn inverted(m: &GrayMap) -> GrayMap {
    GrayMap { data: m.data.iter().map(|v| 1.0 - v).collect(), ..m.clone() }
}

#[test]
fn mae_matches_a_loop_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..20 {
        let (s, g) = random_pair(32, 32, &mut rng);
        let mut acc = 0.0;
        for y in 0..32 {
            for x in 0..32 {
                acc += (s.data[y * 32 + x] - g.data[y * 32 + x]).abs();
            }
        }
        assert_eq!(mae(&s, &g).unwrap(), acc / 1024.0);
    }
}

#[test]
fn mae_extremes() {
    let g = GrayMap::from_fn(4, 4, |_, _| 0.0);
    assert_eq!(mae(&g, &g).unwrap(), 0.0);
    assert_eq!(mae(&GrayMap::from_fn(4, 4, |_, _| 1.0), &g).unwrap(), 1.0);
    assert!(mae(&GrayMap::from_fn(4, 3, |_, _| 1.0), &g).is_err());
}

#[test]
fn f_curve_matches_a_per_threshold_confusion_loop_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for size in [16, 32, 32, 32] {
        for _ in 0..5 {
            let (s, g) = random_pair(size, size, &mut rng);
            let curve = f_measure_curve(&s, &g).unwrap();
            assert_eq!(curve.f.len(), THRESHOLDS);
            for t in 0..THRESHOLDS {
                let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
                for (&sv, &gv) in s.data.iter().zip(&g.data) {
                    match (sv > t as f64 / 255.0, gv > 0.5) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
                let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
                let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
                let f = if 0.3 * p + r > 0.0 { 1.3 * p * r / (0.3 * p + r) } else { 0.0 };
                assert_eq!((curve.precision[t], curve.recall[t], curve.f[t]), (p, r, f), "threshold {t}");
            }
            assert_eq!(curve.max_f, curve.f.iter().copied().fold(f64::MIN, f64::max));
        }
    }
}

#[test]
fn half_precision_full_recall_gives_the_hand_value() {
    assert!((f_beta(0.5, 1.0) - 0.565217).abs() <= 1e-6);
    // two foreground pixels predicted, one of them wrong, at every threshold below 0.8
    let s = GrayMap::new(4, 1, vec![0.8, 0.8, 0.0, 0.0]).unwrap();
    let g = GrayMap::new(4, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let curve = f_measure_curve(&s, &g).unwrap();
    assert_eq!((curve.precision[0], curve.recall[0]), (0.5, 1.0));
    assert!((curve.max_f - 1.3 * 0.5 / 1.15).abs() <= 1e-12);
    assert!((curve.max_f - 0.565217).abs() <= 1e-6);
}

#[test]
fn f_curve_zero_guards() {
    let empty = GrayMap::from_fn(3, 3, |_, _| 0.0);
    let curve = f_measure_curve(&empty, &empty).unwrap();
    assert!(curve.precision.iter().chain(&curve.recall).chain(&curve.f).all(|&v| v == 0.0));
}

#[test]
fn ground_truth_as_prediction_reaches_max_f_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let (s, g) = random_pair(24, 24, &mut rng);
        let perfect = f_measure_curve(&g, &g).unwrap();
        assert_eq!(perfect.max_f, 1.0);
        assert!(perfect.f[..255].iter().all(|&f| f == 1.0));
        assert!(f_measure_curve(&s, &g).unwrap().max_f <= perfect.max_f);
    }
}

// (prediction, ground truth, S, S_o, S_r) computed with PySODMetrics'
// `Smeasure` on float64 predictions and boolean masks.
fn reference_cases() -> Vec<(&'static str, GrayMap, GrayMap, f64, f64, f64)> {
    let d20 = disk(20, 20, 9, 9, 5);
    vec![
        ("disk", modular(32, 32, 37, 91, 101), disk(32, 32, 12, 15, 7), 0.32506051796843205, 0.64920784202278, 0.0009131939140840256),
        ("rect", modular(24, 16, 5, 11, 17), rect(24, 16, 3, 2, 15, 9), 0.30543090625880565, 0.6345492207961375, -0.023687408278526195),
        ("perfect", d20.clone(), d20.clone(), 0.9999999999999949, 1.0, 0.9999999999999899),
        ("inverted", inverted(&d20), d20, 0.0, 0.0, -0.4772364990191881),
        ("one_pixel", modular(9, 7, 3, 5, 7), rect(9, 7, 4, 3, 5, 4), 0.3320054155009546, 0.6445350698039551, 0.01947576119795397),
        ("constant", GrayMap::from_fn(16, 16, |_, _| 0.5), rect(16, 16, 2, 4, 10, 12), 0.3999999999999999, 0.7999999999999998, 0.0),
    ]
}

#[test]
fn s_measure_matches_reference_values() {
    for (name, s, g, sm, so, sr) in reference_cases() {
        let (o, r) = s_measure_parts(&s, &g).unwrap().unwrap();
        assert!((o - so).abs() <= 1e-12, "{name}: object {o} vs {so}");
        assert!((r - sr).abs() <= 1e-12, "{name}: region {r} vs {sr}");
        let v = s_measure(&s, &g).unwrap();
        assert!((v - sm).abs() <= 1e-12, "{name}: {v} vs {sm}");
    }
}

#[test]
fn s_measure_is_the_even_split_of_its_parts() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let (s, g) = random_pair(20, 16, &mut rng);
        let (so, sr) = s_measure_parts(&s, &g).unwrap().unwrap();
        let expected = (0.5 * so + 0.5 * sr).clamp(0.0, 1.0);
        assert_eq!(s_measure(&s, &g).unwrap(), expected);
    }
}

#[test]
fn s_measure_perfect_and_inverted_bounds() {
    for (w, h, cx, cy, r) in [(32, 32, 10, 20, 6), (40, 24, 30, 12, 9), (16, 16, 8, 8, 3)] {
        let g = disk(w, h, cx, cy, r);
        assert!(s_measure(&g, &g).unwrap() >= 0.98);
        assert!(s_measure(&inverted(&g), &g).unwrap() <= 0.35);
    }
}

#[test]
fn s_measure_degenerate_ground_truth() {
    let s = GrayMap::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let zeros = GrayMap::from_fn(2, 2, |_, _| 0.0);
    let ones = GrayMap::from_fn(2, 2, |_, _| 1.0);
    assert!(s_measure_parts(&s, &zeros).unwrap().is_none());
    assert!((s_measure(&s, &zeros).unwrap() - 0.75).abs() < 1e-15);
    assert!((s_measure(&s, &ones).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn corner_foreground_leaves_no_empty_block_undefined() {
    // the centroid lands on the last row and column, emptying three blocks
    let g = rect(8, 8, 7, 7, 8, 8);
    let s = modular(8, 8, 3, 5, 11);
    let v = s_measure(&s, &g).unwrap();
    assert!(v.is_finite() && (0.0..=1.0).contains(&v));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_metric_lies_in_the_unit_interval(
        (w, h, seed, density) in (1usize..24, 1usize..24, any::<u64>(), 0.0f64..1.0)
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = GrayMap::from_fn(w, h, |_, _| rng.gen_range(0.0..=1.0));
        let g = GrayMap::from_fn(w, h, |_, _| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let r = evaluate_map("x", &s, &g).unwrap();
        for v in [r.mae, r.s_measure, r.max_f] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        for v in r.curve.precision.iter().chain(&r.curve.recall).chain(&r.curve.f) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}

fn record(name: &str, value: f64) -> sod_net::objective::ImageRecord {
    let s = GrayMap::from_fn(10, 10, |x, _| if x == 0 { value * 10.0 } else { 0.0 });
    let g = GrayMap::from_fn(10, 10, |_, _| 0.0);
    evaluate_map(name, &s, &g).unwrap()
}

#[test]
fn single_record_aggregate_is_the_record() {
    let r = evaluate_map("a", &modular(12, 12, 3, 7, 13), &disk(12, 12, 5, 6, 3)).unwrap();
    let agg = aggregate(std::slice::from_ref(&r)).unwrap();
    assert_eq!((agg.count, agg.mae, agg.s_measure, agg.max_f), (1, r.mae, r.s_measure, r.max_f));
    assert_eq!(agg.mean_f, r.curve.f);
    assert_eq!(agg.mean_precision, r.curve.precision);
    assert_eq!(agg.mae_quartiles.median, r.mae);
}

#[test]
fn two_records_average() {
    let (a, b) = (record("a", 0.0), record("b", 0.1));
    assert!((b.mae - 0.1).abs() < 1e-15);
    let agg = aggregate(&[a, b]).unwrap();
    assert!((agg.mae - 0.05).abs() < 1e-15);
}

#[test]
fn quartiles_match_a_sorted_order_oracle() {
    let records: Vec<_> =
        [0.03, 0.05, 0.01, 0.04, 0.02].iter().enumerate().map(|(i, &v)| record(&format!("{i}"), v)).collect();
    let q = aggregate(&records).unwrap().mae_quartiles;
    let mut sorted: Vec<f64> = records.iter().map(|r| r.mae).collect();
    sorted.sort_by(f64::total_cmp);
    // five values: the quartile positions 1, 2, 3 fall on order statistics
    assert_eq!([q.min, q.q1, q.median, q.q3, q.max], [sorted[0], sorted[1], sorted[2], sorted[3], sorted[4]]);
    assert!((q.median - 0.03).abs() < 1e-15);
    let even = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!([even.q1, even.median, even.q3], [1.75, 2.5, 3.25]);
    assert!(Quartiles::of(&[]).is_none());
}

#[test]
fn aggregate_ignores_record_order_and_rejects_empty_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut records: Vec<_> = (0..6)
        .map(|i| {
            let (s, g) = random_pair(8, 8, &mut rng);
            evaluate_map(format!("img{i}"), &s, &g).unwrap()
        })
        .collect();
    let forward = aggregate(&records).unwrap();
    records.reverse();
    records.swap(1, 4);
    assert_eq!(aggregate(&records).unwrap(), forward);
    assert!(aggregate(&[]).is_err());
}
