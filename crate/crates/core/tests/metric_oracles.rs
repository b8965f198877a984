use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;
use stylediff_core::eval::agreement::{agreement_fractions, fleiss_kappa, randolph_kappa, spearman};
use stylediff_core::eval::metrics::{calib_counts, corpus_calib};
use stylediff_core::eval::{a_acc, agg, calib, copy_metric, r_acc, sim_indicator, unigram_f1, AccVariant, EvalRecord};
use stylediff_core::records::AnnotationRecord;

/// Concordant λ-ordered pairs counted by enumerating all index pairs.
fn calib_oracle(scores: [f64; 3], input: Option<f64>) -> f64 {
    let pts: Vec<f64> = input.into_iter().chain(scores).collect();
    let mut pairs = 0u32;
    let mut good = 0u32;
    for a in 0..pts.len() {
        for b in 0..pts.len() {
            if a < b {
                pairs += 1;
                good += u32::from(pts[b] > pts[a]);
            }
        }
    }
    good as f64 / pairs as f64
}

/// Multiset overlap by sorting both token lists and merging.
fn f1_oracle(x: &str, y: &str) -> f64 {
    let mut a: Vec<&str> = x.split_whitespace().collect();
    let mut b: Vec<&str> = y.split_whitespace().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

fn record(r: u8, a: u8, s: u8, l: u8) -> EvalRecord {
    EvalRecord {
        input: "x".into(),
        output: "y".into(),
        lambda: None,
        system: None,
        style_score_in: 0.0,
        style_score_out: 0.0,
        sim: 0.0,
        r_acc: r,
        a_acc: a,
        sim_indicator: s,
        lang_ok: l,
        copy: 0,
        unigram_f1: 0.0,
    }
}

fn score() -> impl Strategy<Value = f64> {
    // Quarter steps make ties common.
    prop_oneof![(0u8..=4).prop_map(|q| q as f64 / 4.0), 0.0f64..=1.0]
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "dd", "e", "a"]), 0..8).prop_map(|v| v.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn calib_matches_pair_enumeration(s in [score(), score(), score()], input in score()) {
        prop_assert_eq!(calib(&s, None).unwrap(), calib_oracle(s, None));
        prop_assert_eq!(calib(&s, Some(&input)).unwrap(), calib_oracle(s, Some(input)));
        let (_, n) = calib_counts(&s, Some(&input)).unwrap();
        prop_assert_eq!(n, 6);
    }

    #[test]
    fn corpus_calib_is_instance_mean(ts in prop::collection::vec([score(), score(), score()], 1..20)) {
        let want = ts.iter().map(|t| calib_oracle(*t, None)).sum::<f64>() / ts.len() as f64;
        let got = corpus_calib(&ts, None).unwrap();
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn agg_is_mean_of_products(bits in prop::collection::vec((0u8..2, 0u8..2, 0u8..2, 0u8..2), 1..60)) {
        let recs: Vec<EvalRecord> = bits.iter().map(|&(r, a, s, l)| record(r, a, s, l)).collect();
        let prod = |f: &dyn Fn(&(u8, u8, u8, u8)) -> u8| bits.iter().map(|b| f(b) as f64).sum::<f64>() / bits.len() as f64;
        prop_assert_eq!(agg(&recs, AccVariant::Relative).unwrap(), prod(&|b| b.0 * b.2 * b.3));
        prop_assert_eq!(agg(&recs, AccVariant::Absolute).unwrap(), prod(&|b| b.1 * b.2 * b.3));
    }

    #[test]
    fn unigram_f1_matches_multiset_oracle(x in sentence(), y in sentence()) {
        let got = unigram_f1(&x, &y);
        prop_assert!((got - f1_oracle(&x, &y)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((got - unigram_f1(&y, &x)).abs() < 1e-12);
    }

    #[test]
    fn copy_stripping_is_symmetric(x in "[a-z]{1,4}( [a-z]{1,4}){0,4}", p in "[.!?,;:]{0,3}") {
        let y = format!("{x}{p}");
        prop_assert_eq!(copy_metric(&x, &y), 1);
        prop_assert_eq!(copy_metric(&y, &x), 1);
    }
}

#[test]
fn strict_thresholds() {
    assert_eq!(sim_indicator(0.75, 0.75), 0);
    assert_eq!(sim_indicator(0.750_000_1, 0.75), 1);
    assert_eq!(r_acc(0.4, 0.4), 0);
    assert_eq!(r_acc(0.4, 0.41), 1);
    assert_eq!(a_acc(0.5), 0);
    assert_eq!(a_acc(0.500_001), 1);
    assert_eq!(copy_metric("a b", "a b ."), 1);
    assert_eq!(copy_metric("a b ।", "a b"), 1);
    assert_eq!(copy_metric("a b", "a c"), 0);
    assert_eq!(copy_metric("a. b", "a b"), 0);
}

fn ann(id: &str, labels: [&str; 3]) -> AnnotationRecord {
    AnnotationRecord { id: id.into(), labels: labels.iter().map(|s| s.to_string()).collect(), task: "formality".into() }
}

/// Five hand-built records; golden values computed once from the
/// definitions with exact fractions.
fn frozen_table() -> Vec<AnnotationRecord> {
    vec![
        ann("1", ["first", "first", "first"]),
        ann("2", ["first", "second", "equal"]),
        ann("3", ["second", "second", "first"]),
        ann("4", ["equal", "equal", "second"]),
        ann("5", ["first", "first", "equal"]),
    ]
}

/// Fleiss kappa straight from rater-pair agreement, in exact arithmetic.
fn fleiss_oracle(recs: &[AnnotationRecord]) -> Ratio<i64> {
    let n = recs.len() as i64;
    let mut agree = Ratio::from_integer(0);
    let mut totals: BTreeMap<&str, i64> = BTreeMap::new();
    for r in recs {
        let mut pairs = 0;
        for a in 0..3 {
            for b in a + 1..3 {
                pairs += i64::from(r.labels[a] == r.labels[b]);
            }
        }
        agree += Ratio::new(pairs, 3);
        for l in &r.labels {
            *totals.entry(l).or_default() += 1;
        }
    }
    let p_bar = agree / n;
    let p_e: Ratio<i64> = totals.values().map(|&c| Ratio::new(c, 3 * n).pow(2)).sum();
    (p_bar - p_e) / (Ratio::from_integer(1) - p_e)
}

#[test]
fn kappas_on_frozen_table() {
    let t = frozen_table();
    let f: Ratio<i64> = fleiss_kappa(&t).unwrap();
    let r: Ratio<i64> = randolph_kappa(&t).unwrap();
    assert_eq!(f, fleiss_oracle(&t));
    assert_eq!(f, Ratio::new(1, 16));
    assert_eq!(r, Ratio::new(1, 10));
    let (all, none): (Ratio<i64>, Ratio<i64>) = agreement_fractions(&t).unwrap();
    assert_eq!((all, none), (Ratio::new(1, 5), Ratio::new(1, 5)));
    let f64_val: f64 = fleiss_kappa(&t).unwrap();
    assert!((f64_val - 0.0625).abs() < 1e-12);
}

#[test]
fn spearman_on_frozen_tied_table() {
    // Both rank vectors are permutations of [1, 2.5, 2.5, 4, 5], so the
    // correlation is cov / var = 7.25 / 9.5 = 29/38.
    let a = [1.0, 2.0, 2.0, 3.0, 4.0];
    let b = [10.0, 30.0, 20.0, 20.0, 50.0];
    assert_eq!(spearman(&a, &b).unwrap(), 29.0 / 38.0);
    assert_eq!(spearman(&a, &a).unwrap(), 1.0);
    assert!(spearman(&a, &[3.0; 5]).is_err());
}
