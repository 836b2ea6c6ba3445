use mtriage_core::eval::*;
use mtriage_core::taxonomy::OutlierType;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ls(scores: &[f64], labels: &[bool]) -> LabeledScores {
    let types = labels.iter().map(|&l| l.then_some(OutlierType::Implant)).collect();
    LabeledScores::new((0..scores.len() as u32).collect(), scores.to_vec(), labels.to_vec(), types).unwrap()
}

// probability an outlier scores below an inlier, ties counted half
fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&si, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (&sj, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            den += 1.0;
            num += if si < sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
        }
    }
    num / den
}

// mean over positives of precision at the positive's rank (distinct scores)
fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut hits, mut total) = (0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1.0;
            total += hits / (rank + 1) as f64;
        }
    }
    total / hits
}

#[test]
fn confusion_examples() {
    let data = ls(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false]);
    assert_eq!(confusion_at_fraction(&data, 0.5).unwrap(), Confusion { tp: 2, fp: 0, fn_: 0, tn: 2 });

    let c = Confusion { tp: 2, fp: 1, fn_: 1, tn: 6 };
    assert!((c.precision() - 2.0 / 3.0).abs() < 1e-12);
    assert!((c.recall() - 2.0 / 3.0).abs() < 1e-12);
    assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);

    let none = Confusion { tp: 0, fp: 0, fn_: 3, tn: 5 };
    assert_eq!((none.precision(), none.recall(), none.f1()), (0.0, 0.0, 0.0));

    let labels: Vec<bool> = (0..200).map(|i| i < 3).collect();
    let scores: Vec<f64> = (0..200).map(|i| i as f64).collect();
    let perfect = confusion_at_fraction(&ls(&scores, &labels), 3.0 / 200.0).unwrap();
    assert_eq!((perfect.fp, perfect.fn_), (0, 0));

    assert!(matches!(confusion_at_fraction(&data, 0.0), Err(EvalError::Fraction(_))));
    let empty = LabeledScores::new(vec![], vec![], vec![], vec![]).unwrap();
    assert!(matches!(confusion_at_fraction(&empty, 0.5), Err(EvalError::Empty)));
}

#[test]
fn ties_are_broken_by_id() {
    let data = LabeledScores::new(vec![9, 2, 5], vec![1.0, 1.0, 1.0], vec![true, false, false], vec![None; 3]).unwrap();
    // one selected: the smallest id (2) is an inlier
    assert_eq!(confusion_at_fraction(&data, 0.3).unwrap().tp, 0);
}

#[test]
fn construction_rejects_bad_input() {
    assert!(matches!(LabeledScores::new(vec![1, 1], vec![0.0, 1.0], vec![false; 2], vec![None; 2]), Err(EvalError::DuplicateId(1))));
    assert!(matches!(LabeledScores::new(vec![1, 2], vec![0.0, f64::NAN], vec![false; 2], vec![None; 2]), Err(EvalError::NonFinite(2))));
    assert!(matches!(LabeledScores::new(vec![1], vec![0.0, 1.0], vec![false], vec![None]), Err(EvalError::Length { .. })));
}

#[test]
fn perfect_separation() {
    let labels: Vec<bool> = (0..100).map(|i| i < 5).collect();
    let scores: Vec<f64> = (0..100).map(|i| i as f64).collect();
    let data = ls(&scores, &labels);
    assert_eq!(auroc(&data).unwrap(), 1.0);
    assert_eq!(auprc(&data).unwrap(), 1.0);
    let grid = ThresholdGrid::new(vec![0.01, 0.05, 0.2]).unwrap();
    assert_eq!(max_metrics(&data, &grid).unwrap(), MaxMetrics { precision: 1.0, recall: 1.0, f1: 1.0 });
    let at = grid_confusions(&data, &grid).unwrap();
    assert_eq!(at[1].f1(), 1.0);
}

#[test]
fn four_point_hand_case() {
    let scores = [1.0, 2.0, 3.0, 4.0];
    let labels = [true, false, true, false];
    let data = ls(&scores, &labels);
    let a = auroc(&data).unwrap();
    assert!((a - 0.75).abs() < 1e-12);
    assert!((a - auroc_oracle(&scores, &labels)).abs() < 1e-12);
    // (1/1 + 2/3) / 2
    assert!((auprc(&data).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    let curves = pr_roc_curves(&data).unwrap();
    assert_eq!(curves.roc.first(), Some(&[0.0, 0.0]));
    assert_eq!(curves.roc.last(), Some(&[1.0, 1.0]));
    assert_eq!(curves.pr.len(), 4);
}

#[test]
fn single_class_is_undefined() {
    let data = ls(&[1.0, 2.0], &[false, false]);
    assert!(matches!(auroc(&data), Err(EvalError::SingleClass)));
    assert!(matches!(auprc(&ls(&[1.0, 2.0], &[true, true])), Err(EvalError::SingleClass)));
}

#[test]
fn random_scores_give_baseline_auprc() {
    let n = 40_000;
    let mut means = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 200 == 0).collect();
        means.push(auprc(&ls(&scores, &labels)).unwrap());
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    assert!((mean - 0.005).abs() <= 0.003, "mean AUPRC {mean}");
}

#[test]
fn threshold_grid_layout() {
    let g = ThresholdGrid::standard();
    let f = g.fractions();
    assert_eq!(f.len(), 79);
    assert_eq!(f[0], 0.0006);
    assert_eq!(*f.last().unwrap(), 0.30);
    assert!(f.windows(2).all(|w| w[0] < w[1]));
    for must in [0.002, 0.008, 0.01, 0.12, 0.14] {
        assert!(f.iter().any(|&x| (x - must).abs() < 1e-12), "{must}");
    }
    assert_eq!(f.iter().filter(|&&x| x <= 0.002 + 1e-12).count(), 8);
    assert_eq!(f.iter().filter(|&&x| x > 0.12 + 1e-12).count(), 9);
    assert!(ThresholdGrid::new(vec![0.1, 0.1]).is_err());
    assert!(ThresholdGrid::new(vec![0.0, 0.1]).is_err());
}

#[test]
fn max_metrics_match_exhaustive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let labels: Vec<bool> = (0..n).map(|i| i % 50 == 0).collect();
    let scores: Vec<f64> = (0..n).map(|i| rng.random::<f64>() - if labels[i] { 0.3 } else { 0.0 }).collect();
    let data = ls(&scores, &labels);
    let grid = ThresholdGrid::standard();
    let got = max_metrics(&data, &grid).unwrap();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let (mut bp, mut br, mut bf) = (0.0f64, 0.0f64, 0.0f64);
    for &fr in grid.fractions() {
        let k = ((fr * n as f64) - 1e-9).ceil() as usize;
        let tp = order[..k].iter().filter(|&&i| labels[i]).count() as f64;
        let (p, r) = (tp / k as f64, tp / positives);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        bp = bp.max(p);
        br = br.max(r);
        bf = bf.max(f);
    }
    assert_eq!(got, MaxMetrics { precision: bp, recall: br, f1: bf });
}

#[test]
fn max_recall_grows_with_largest_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<bool> = (0..500).map(|i| i % 25 == 0).collect();
    let scores: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let data = ls(&scores, &labels);
    let all = ThresholdGrid::standard().fractions().to_vec();
    let mut prev = 0.0;
    for end in 1..=all.len() {
        let r = max_metrics(&data, &ThresholdGrid::new(all[..end].to_vec()).unwrap()).unwrap().recall;
        assert!(r >= prev);
        prev = r;
    }
}

fn typed_corpus(seed: u64) -> LabeledScores {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut types = vec![None; 600];
    for (i, t) in [OutlierType::Implant, OutlierType::Pacemaker, OutlierType::LesionCalcification].into_iter().enumerate() {
        for k in 0..(i + 2) {
            types[10 * i + 3 * k + 1] = Some(t);
        }
    }
    let scores: Vec<f64> = types.iter().map(|t| rng.random::<f64>() - if t.is_some() { 0.5 } else { 0.0 }).collect();
    LabeledScores::from_types((100..700).collect(), scores, types).unwrap()
}

#[test]
fn bootstrap_preserves_stratum_counts() {
    let data = typed_corpus(1);
    let spec = BootstrapSpec { n_replicates: 20, seed: 5, resampling: Resampling::Stratified };
    let count = |types: &[Option<OutlierType>], t: Option<OutlierType>| types.iter().filter(|&&x| x == t).count();
    for rep in bootstrap_indices(data.labels(), data.types(), &spec) {
        assert_eq!(rep.len(), data.len());
        let sel = data.select(&rep);
        for t in [None, Some(OutlierType::Implant), Some(OutlierType::Pacemaker), Some(OutlierType::LesionCalcification)] {
            assert_eq!(count(sel.types(), t), count(data.types(), t));
        }
    }
}

#[test]
fn bootstrap_is_deterministic_and_degenerate_sd_is_zero() {
    let data = typed_corpus(2);
    let spec = BootstrapSpec { seed: 11, ..Default::default() };
    let grid = ThresholdGrid::standard();
    let a = bootstrap_metrics(&data, &spec, &grid).unwrap();
    let b = bootstrap_metrics(&data, &spec, &grid).unwrap();
    assert_eq!(a.auprc.mean.to_bits(), b.auprc.mean.to_bits());
    assert_eq!(a, b);

    let perfect = data.with_scores(data.labels().iter().map(|&l| if l { 0.0 } else { 1.0 }).collect()).unwrap();
    let r = bootstrap_metrics(&perfect, &spec, &grid).unwrap();
    assert_eq!((r.auroc.mean, r.auroc.sd), (1.0, 0.0));
    assert_eq!((r.auprc.mean, r.auprc.sd), (1.0, 0.0));
}

#[test]
fn identity_bootstrap_reproduces_point_estimate() {
    let data = typed_corpus(3);
    let grid = ThresholdGrid::standard();
    let spec = BootstrapSpec { n_replicates: 1, seed: 0, resampling: Resampling::Identity };
    let r = bootstrap_metrics(&data, &spec, &grid).unwrap();
    let p = point_metrics(&data, &grid).unwrap();
    assert_eq!(r.auroc, Summary { mean: p.auroc, sd: 0.0 });
    assert_eq!(r.auprc, Summary { mean: p.auprc, sd: 0.0 });
    assert_eq!(r.max_precision.mean, p.max_precision);
    assert_eq!(r.max_recall.mean, p.max_recall);
    assert_eq!(r.max_f1.mean, p.max_f1);
}

#[test]
fn rescoring_bootstrap_sees_replicate_rows() {
    let data = typed_corpus(4);
    let spec = BootstrapSpec { n_replicates: 3, ..Default::default() };
    let grid = ThresholdGrid::standard();
    let plain = bootstrap_metrics(&data, &spec, &grid).unwrap();
    let affine = bootstrap_metrics_with(&data, &spec, &grid, &|idx: &[usize]| {
        idx.iter().map(|&i| 3.0 * data.scores()[i] + 1.0).collect()
    })
    .unwrap();
    assert_eq!(plain.auroc, affine.auroc);
}

#[test]
fn per_type_subset_ratio() {
    let mut types = vec![None; 1000];
    types[3] = Some(OutlierType::Pacemaker);
    types[7] = Some(OutlierType::Pacemaker);
    types[9] = Some(OutlierType::Implant);
    let scores: Vec<f64> = (0..1000).map(|i| if types[i] == Some(OutlierType::Pacemaker) { -1.0 } else { i as f64 }).collect();
    let data = LabeledScores::from_types((0..1000).collect(), scores, types).unwrap();
    let sub = per_type_subset(&data, OutlierType::Pacemaker, PER_TYPE_RATIO, 1).unwrap();
    assert_eq!(sub.len(), 400);
    assert_eq!(sub.n_outliers(), 2);
    assert!(sub.types().iter().all(|t| t.is_none() || *t == Some(OutlierType::Pacemaker)));
    let m = per_type_eval(&data, OutlierType::Pacemaker, &ThresholdGrid::standard(), 1).unwrap();
    assert_eq!(m.auprc, 1.0);
    assert!(matches!(per_type_eval(&data, OutlierType::ExposureError, &ThresholdGrid::standard(), 1), Err(EvalError::TypeAbsent(_))));
}

#[test]
fn cascade_examples() {
    let ids: Vec<u32> = (0..12).collect();
    let reference: Vec<bool> = (0..12).map(|i| i < 6).collect();
    let scores: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let all = cascade_recall(&ids, &reference, &[CascadeMethod::ascending("cvae", &scores, 1.0)]).unwrap();
    assert_eq!(all.recall, 1.0);
    assert_eq!(all.union_size, 12);

    // each method's single pick is a different reference outlier
    let pick = |hit: usize| -> Vec<Option<f64>> { (0..12).map(|i| Some(if i == hit { 100.0 } else { 0.0 })).collect() };
    let methods = [
        CascadeMethod::descending("a", &pick(0), 1.0 / 12.0),
        CascadeMethod::descending("b", &pick(1), 1.0 / 12.0),
        CascadeMethod::descending("c", &pick(2), 1.0 / 12.0),
    ];
    let r = cascade_recall(&ids, &reference, &methods).unwrap();
    assert_eq!(r.recall, 0.5);
    assert_eq!(r.union_size, 3);
    let cumulative: Vec<f64> = r.stages.iter().map(|s| s.cumulative).collect();
    assert_eq!(cumulative, vec![1.0 / 6.0, 2.0 / 6.0, 0.5]);
}

#[test]
fn cascade_excluded_images_never_selected() {
    let ids: Vec<u32> = (0..10).collect();
    let reference: Vec<bool> = (0..10).map(|i| i == 0).collect();
    let mut counts: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
    counts[9] = None;
    counts[0] = None;
    let r = cascade_recall(&ids, &reference, &[CascadeMethod::descending("muscle", &counts, 1.0)]).unwrap();
    assert_eq!(r.recall, 0.0);
    assert_eq!(r.union_size, 8);
    let none = [CascadeMethod::descending("muscle", &[None; 10], 0.5)];
    assert!(matches!(cascade_recall(&ids, &reference, &none), Err(EvalError::MissingRanking(_))));
}

#[test]
fn bootstrap_cascade_summaries() {
    let data = typed_corpus(6);
    let methods = [CascadeMethod::ascending("cvae", data.scores(), 0.05)];
    let spec = BootstrapSpec::default();
    let s = bootstrap_cascade(data.ids(), data.labels(), data.types(), &methods, &spec).unwrap();
    assert_eq!(s.len(), 1);
    assert!(s[0].cumulative.mean > 0.5);
    assert_eq!(s[0].alone, s[0].cumulative);
}

#[test]
fn metrics_outputs() {
    let data = typed_corpus(7);
    let report = bootstrap_metrics(&data, &BootstrapSpec { n_replicates: 2, ..Default::default() }, &ThresholdGrid::standard()).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &report_rows("score_01", "test", &report)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("score_name,split,metric,mean,sd\n"));
    assert_eq!(text.lines().count(), 6);

    let mut buf = Vec::new();
    let rec = CurveRecord { score_name: "score_01".into(), split: "test".into(), curves: pr_roc_curves(&data).unwrap() };
    write_curves_jsonl(&mut buf, &[rec.clone(), rec]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(v["roc"].is_array() && v["pr"].is_array());
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (4usize..60).prop_flat_map(|n| {
        (prop::collection::vec(-5i32..5, n), prop::collection::vec(any::<bool>(), n))
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s.into_iter().map(f64::from).collect(), l)
            })
    })
}

proptest! {
    #[test]
    fn auroc_flips_with_orientation((scores, labels) in scored()) {
        let a = auroc(&ls(&scores, &labels)).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&ls(&neg, &labels)).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
        prop_assert!((a - auroc_oracle(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn auprc_matches_oracle_without_ties(perm in Just((0..40).collect::<Vec<usize>>()).prop_shuffle(), labels in prop::collection::vec(any::<bool>(), 40)) {
        let mut labels = labels;
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let got = auprc(&ls(&scores, &labels)).unwrap();
        prop_assert!((got - ap_oracle(&scores, &labels)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn contingency_metrics_are_bounded((scores, labels) in scored(), f in 0.01f64..1.0) {
        let c = confusion_at_fraction(&ls(&scores, &labels), f).unwrap();
        for m in [c.precision(), c.recall(), c.f1()] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        if c.tp == 0 {
            prop_assert_eq!(c.f1(), 0.0);
        }
    }

    #[test]
    fn cascade_is_monotone_and_dominates((scores, labels) in scored(), f1 in 0.01f64..1.0, f2 in 0.01f64..1.0, bump in 0.0f64..0.5) {
        let n = scores.len();
        let ids: Vec<u32> = (0..n as u32).collect();
        let other: Vec<f64> = scores.iter().enumerate().map(|(i, s)| (s * 7.0 + i as f64).sin()).collect();
        let run = |a: f64, b: f64| {
            cascade_recall(&ids, &labels, &[CascadeMethod::ascending("x", &scores, a), CascadeMethod::ascending("y", &other, b)]).unwrap()
        };
        let base = run(f1, f2);
        for s in &base.stages {
            prop_assert!(base.recall >= s.alone);
        }
        prop_assert!(run((f1 + bump).min(1.0), f2).recall >= base.recall);
        prop_assert!(run(f1, (f2 + bump).min(1.0)).recall >= base.recall);
    }
}
