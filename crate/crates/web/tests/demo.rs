use dialcart_web::{compare_strategies, explore_data_map, parse_distributions, score_distributions};

#[test]
fn data_map_view_counts_agree() {
    let v = explore_data_map(0.1, 400, 15, 3).unwrap();
    assert_eq!(v.points.len(), 400);
    assert_eq!(v.buckets.iter().sum::<usize>(), 400);
    assert_eq!(v.points.iter().filter(|p| p.flipped).count(), v.flipped);
    assert!(v.flipped > 0);
    // flipped labels sink to the bottom of the confidence ranking
    assert!(v.flipped_low as f64 >= 0.7 * v.flipped as f64, "{} of {}", v.flipped_low, v.flipped);
    assert_eq!(v.svg.matches("<circle").count(), 400);

    let clean = explore_data_map(0.0, 200, 10, 3).unwrap();
    assert_eq!((clean.flipped, clean.flipped_low), (0, 0));
}

#[test]
fn strategy_curves_share_the_grid() {
    let v = compare_strategies("random, coremse", 2, 3, 20).unwrap();
    assert_eq!(v.curves.len(), 2);
    for c in &v.curves {
        assert_eq!(c.labeled, vec![20, 40, 60, 80]);
        assert!(c.macro_f1.iter().all(|f| (0.0..=1.0).contains(f)));
        assert!((0.0..=1.0).contains(&c.auc));
    }
    // both start from the same initial sample
    assert_eq!(v.curves[0].macro_f1[0], v.curves[1].macro_f1[0]);
    assert!(v.svg.starts_with("<?xml") || v.svg.starts_with("<svg"));

    assert!(compare_strategies("", 1, 1, 10).is_err());
    assert!(compare_strategies("greedy", 1, 1, 10).is_err());
    assert!(compare_strategies("random", 1, 1000, 50).is_err());
}

#[test]
fn score_calculator_matches_hand_values() {
    let d = parse_distributions("0.5 0.5").unwrap();
    let s = score_distributions(&d).unwrap();
    assert!((s.entropy - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((s.least_confidence - 0.5).abs() < 1e-12);
    assert_eq!(s.coremse, 0.0);

    let d = parse_distributions("1, 0\n0, 1").unwrap();
    let s = score_distributions(&d).unwrap();
    assert_eq!(s.mean, vec![0.5, 0.5]);
    assert!(s.coremse > 0.0);

    let same = score_distributions(&parse_distributions("0.2 0.8; 0.2 0.8").unwrap()).unwrap();
    assert!(same.coremse.abs() < 1e-15);

    assert!(parse_distributions("0.5 x").is_err());
    assert!(score_distributions(&parse_distributions("0.5 0.5; 0.2 0.3 0.5").unwrap()).is_err());
    assert!(score_distributions(&parse_distributions("0.9 0.9").unwrap()).is_err());
    assert!(score_distributions(&[]).is_err());
}
