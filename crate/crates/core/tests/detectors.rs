use mtriage_core::detectors::{
    average_path_length, if_fit, lof_fit, ocsvm_fit, rbf, DetectorError, IsolationForestConfig, OcsvmConfig, TreeNode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
}

// ---------- isolation forest ----------

#[test]
fn path_length_normaliser() {
    assert_eq!(average_path_length(1), 0.0);
    assert_eq!(average_path_length(2), 1.0);
    // 2H(2) − 4/3 with the harmonic number approximated by ln + γ
    let c3 = 2.0 * (2f64.ln() + 0.5772156649015329) - 4.0 / 3.0;
    assert!((average_path_length(3) - c3).abs() < 1e-12);
    // grows like 2 ln n
    assert!((average_path_length(256) - 10.244).abs() < 1e-3);
}

#[test]
fn planted_far_point_is_isolated_first() {
    let mut hits = 0;
    for rep in 0..100u64 {
        let mut pts = gaussian_cloud(100, 2, 1000 + rep);
        pts.push(vec![50.0, 0.0]);
        let model = if_fit(&pts, &IsolationForestConfig { seed: rep, ..Default::default() }).unwrap();
        let s = model.score(&pts).unwrap();
        hits += usize::from(argmin(&s) == 100);
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn identical_pair_scores_equal() {
    let pts = vec![vec![3.0, 1.0], vec![3.0, 1.0]];
    let model = if_fit(&pts, &IsolationForestConfig::default()).unwrap();
    let s = model.score(&pts).unwrap();
    assert_eq!(s[0], s[1]);
    assert_eq!(model.subsample_size, 2);
}

#[test]
fn single_tree_on_two_points_matches_hand_simulation() {
    // ψ = 2 gives depth limit 1: the root split sends 0 left and 1 right,
    // both leaves hold one point, so h = 1 and c(2) = 1.
    let pts = vec![vec![0.0], vec![1.0]];
    let cfg = IsolationForestConfig { n_trees: 1, subsample_size: 2, seed: 9, ..Default::default() };
    let model = if_fit(&pts, &cfg).unwrap();
    let tree = &model.trees[0];
    match &tree.nodes[0] {
        TreeNode::Split { feature, value, .. } => {
            assert_eq!(*feature, 0);
            assert!(*value > 0.0 && *value < 1.0);
        }
        other => panic!("root should split, got {other:?}"),
    }
    assert_eq!(tree.path_length(&[0.0]), 1.0);
    assert_eq!(tree.path_length(&[1.0]), 1.0);
    assert_eq!(model.score(&pts).unwrap(), vec![-0.5, -0.5]);
}

#[test]
fn split_values_lie_inside_node_ranges() {
    let pts = gaussian_cloud(300, 4, 5);
    let model = if_fit(&pts, &IsolationForestConfig { seed: 3, ..Default::default() }).unwrap();
    let max_depth = (256f64).log2().ceil() as usize;
    for tree in &model.trees {
        for node in &tree.nodes {
            match node {
                TreeNode::Split { value, range, .. } => assert!(range.0 < *value && *value <= range.1),
                TreeNode::Leaf { depth, .. } => assert!(*depth <= max_depth),
            }
        }
    }
}

#[test]
fn oversized_subsample_is_clamped() {
    let pts = gaussian_cloud(40, 2, 1);
    let model = if_fit(&pts, &IsolationForestConfig::default()).unwrap();
    assert_eq!(model.subsample_size, 40);
}

#[test]
fn isolation_forest_ranking_is_stable_under_affine_maps() {
    let mut pts = gaussian_cloud(150, 3, 77);
    pts.push(vec![9.0, -9.0, 9.0]);
    let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| 3.5 * v - 12.0).collect()).collect();
    let mut agree = 0;
    for seed in 0..20 {
        let cfg = IsolationForestConfig { seed, ..Default::default() };
        let a = if_fit(&pts, &cfg).unwrap().score(&pts).unwrap();
        let b = if_fit(&moved, &cfg).unwrap().score(&moved).unwrap();
        agree += usize::from(argmin(&a) == 150 && argmin(&b) == 150);
    }
    assert_eq!(agree, 20);
}

#[test]
fn detectors_reject_bad_input() {
    assert!(matches!(if_fit(&[vec![1.0]], &Default::default()), Err(DetectorError::TooFewPoints { .. })));
    assert!(matches!(
        if_fit(&[vec![1.0], vec![1.0, 2.0]], &Default::default()),
        Err(DetectorError::Dimension { index: 1, .. })
    ));
    assert!(matches!(lof_fit(&gaussian_cloud(3, 2, 0), 3), Err(DetectorError::TooFewPoints { .. })));
    let bad = OcsvmConfig { nu: 0.0, ..Default::default() };
    assert!(matches!(ocsvm_fit(&gaussian_cloud(5, 2, 0), &bad), Err(DetectorError::Parameter(_))));
    assert!(matches!(
        if_fit(&[vec![f64::NAN], vec![1.0]], &Default::default()),
        Err(DetectorError::NonFinite(0))
    ));
}

// ---------- local outlier factor ----------

/// Direct transcription of the LOF definition with full sorting.
fn brute_force_lof(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let dist = |a: usize, b: usize| -> f64 {
        points[a].iter().zip(&points[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };
    let knn: Vec<Vec<usize>> = (0..n)
        .map(|p| {
            let mut others: Vec<usize> = (0..n).filter(|&o| o != p).collect();
            others.sort_by(|&a, &b| dist(p, a).total_cmp(&dist(p, b)).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect();
    let kdist: Vec<f64> = (0..n).map(|p| dist(p, *knn[p].last().unwrap())).collect();
    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let s: f64 = knn[p].iter().map(|&o| dist(p, o).max(kdist[o])).sum();
            1.0 / (s / k as f64 + 1e-10)
        })
        .collect();
    (0..n)
        .map(|p| knn[p].iter().map(|&o| lrd[o]).sum::<f64>() / k as f64 / lrd[p])
        .collect()
}

#[test]
fn lof_matches_brute_force_definition() {
    let pts = gaussian_cloud(100, 3, 21);
    for k in [1, 5, 20] {
        let model = lof_fit(&pts, k).unwrap();
        let oracle = brute_force_lof(&pts, k);
        for (s, o) in model.fit_scores.iter().zip(&oracle) {
            assert!((-s - o).abs() < 1e-9, "k={k}: {} vs {o}", -s);
        }
    }
}

#[test]
fn lof_on_regular_grid_interior_is_near_one() {
    let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 10) as f64, (i / 10) as f64]).collect();
    let model = lof_fit(&pts, 4).unwrap();
    let oracle = brute_force_lof(&pts, 4);
    for i in 0..100 {
        let (x, y) = (i % 10, i / 10);
        assert!((-model.fit_scores[i] - oracle[i]).abs() < 1e-9);
        if (2..8).contains(&x) && (2..8).contains(&y) {
            assert!((0.95..=1.05).contains(&-model.fit_scores[i]), "{i}: {}", -model.fit_scores[i]);
        }
    }
}

#[test]
fn lof_flags_far_point() {
    let mut pts: Vec<Vec<f64>> = gaussian_cloud(30, 2, 4).into_iter().map(|p| vec![p[0] * 0.1, p[1] * 0.1]).collect();
    pts.push(vec![100.0, 0.0]);
    let model = lof_fit(&pts, 3).unwrap();
    assert_eq!(argmin(&model.fit_scores), 30);
}

#[test]
fn lof_of_identical_points_is_one() {
    let pts = vec![vec![2.0, 2.0]; 12];
    let model = lof_fit(&pts, 3).unwrap();
    assert!(model.fit_scores.iter().all(|&s| s == -1.0));
    assert_eq!(model.score(&[vec![2.0, 2.0]]).unwrap(), vec![-1.0]);
}

#[test]
fn lof_query_scores_use_fit_neighbourhoods() {
    let pts = gaussian_cloud(60, 2, 8);
    let model = lof_fit(&pts, 5).unwrap();
    let q = vec![vec![0.1, -0.2], vec![6.0, 6.0]];
    for (qi, x) in q.iter().enumerate() {
        let s = model.score(&[x.clone()]).unwrap()[0];
        let n = pts.len();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let mut nb: Vec<usize> = (0..n).collect();
        nb.sort_by(|&a, &b| dist(x, &pts[a]).total_cmp(&dist(x, &pts[b])).then(a.cmp(&b)));
        nb.truncate(5);
        let reach: f64 = nb.iter().map(|&o| dist(x, &pts[o]).max(model.k_distance[o])).sum::<f64>() / 5.0;
        let own = 1.0 / (reach + 1e-10);
        let expected = nb.iter().map(|&o| model.lrd[o]).sum::<f64>() / 5.0 / own;
        assert!((-s - expected).abs() < 1e-12, "query {qi}");
    }
}

#[test]
fn lof_is_invariant_to_translation_and_scaling() {
    let pts = gaussian_cloud(80, 3, 12);
    let moved: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| 4.0 * v + 7.5).collect()).collect();
    let a = lof_fit(&pts, 10).unwrap().fit_scores;
    let b = lof_fit(&moved, 10).unwrap().fit_scores;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
}

// ---------- one-class SVM ----------

fn gram(points: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    points.iter().map(|a| points.iter().map(|b| rbf(gamma, a, b)).collect()).collect()
}

/// Euclidean projection onto {0 ≤ α ≤ c, Σα = 1} by bisection on the shift.
fn project(v: &[f64], c: f64) -> Vec<f64> {
    let total = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let (mut lo, mut hi) = (v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0, v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, c)).collect()
}

/// Projected gradient descent on the dense one-class dual.
fn qp_oracle(k: &[Vec<f64>], c: f64) -> (Vec<f64>, f64) {
    let n = k.len();
    let mut a = project(&vec![1.0 / n as f64; n], c);
    let step = 1.0 / n as f64;
    for _ in 0..200_000 {
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * a[j]).sum()).collect();
        let next = project(&a.iter().zip(&g).map(|(x, gi)| x - step * gi).collect::<Vec<_>>(), c);
        let moved = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        a = next;
        if moved < 1e-14 {
            break;
        }
    }
    let obj = 0.5 * (0..n).map(|i| (0..n).map(|j| a[i] * k[i][j] * a[j]).sum::<f64>()).sum::<f64>();
    (a, obj)
}

#[test]
fn three_points_with_nu_one_share_weight_equally() {
    let pts = vec![vec![1.0, 0.0], vec![-0.5, 0.866], vec![-0.5, -0.866]];
    let m = ocsvm_fit(&pts, &OcsvmConfig { nu: 1.0, gamma: Some(0.5), ..Default::default() }).unwrap();
    for a in &m.dual {
        assert!((a - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn ocsvm_dual_matches_dense_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..6 {
        let n = rng.random_range(6..=20);
        let pts = gaussian_cloud(n, 2, 300 + trial);
        let nu = [0.1, 0.3, 0.5][trial as usize % 3];
        let cfg = OcsvmConfig { nu, gamma: Some(0.7), tol: 1e-10, ..Default::default() };
        let m = ocsvm_fit(&pts, &cfg).unwrap();
        let k = gram(&pts, 0.7);
        let (oracle, oracle_obj) = qp_oracle(&k, 1.0 / (nu * n as f64));
        assert!((m.objective - oracle_obj).abs() < 1e-4, "objective {} vs {oracle_obj}", m.objective);
        assert!((m.dual.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let c = 1.0 / (nu * n as f64);
        assert!(m.dual.iter().all(|&a| (0.0..=c + 1e-15).contains(&a)));
        // decision values from the oracle's dual, offset taken from its free vectors
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * oracle[j]).sum()).collect();
        let free: Vec<f64> = (0..n).filter(|&i| oracle[i] > 1e-6 && oracle[i] < c - 1e-6).map(|i| g[i]).collect();
        if !free.is_empty() {
            let rho = free.iter().sum::<f64>() / free.len() as f64;
            for i in 0..n {
                assert!((m.fit_scores[i] - (g[i] - rho)).abs() < 1e-3);
            }
        }
    }
}

#[test]
fn ocsvm_nu_property_on_training_set() {
    let pts = gaussian_cloud(400, 3, 40);
    for nu in [0.005, 0.05, 0.2] {
        let m = ocsvm_fit(&pts, &OcsvmConfig { nu, ..Default::default() }).unwrap();
        let negative = m.fit_scores.iter().filter(|&&s| s < -1e-9).count();
        let c = 1.0 / (nu * 400.0);
        let on_margin = m.dual.iter().filter(|&&a| a > 0.0 && a < c).count();
        assert!(negative <= (nu * 400.0).ceil() as usize + on_margin, "ν={nu}: {negative} negative");
        assert!((m.dual.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let again = m.score(&pts).unwrap();
        for (a, b) in again.iter().zip(&m.fit_scores) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn ocsvm_scores_far_point_below_fit_cloud() {
    let pts = gaussian_cloud(200, 4, 6);
    let m = ocsvm_fit(&pts, &OcsvmConfig::default()).unwrap();
    let far = m.score(&[vec![8.0; 4]]).unwrap()[0];
    let min = m.fit_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(far < min && far < 0.0);
}

#[test]
fn ocsvm_reports_non_convergence() {
    let pts = gaussian_cloud(50, 2, 1);
    let cfg = OcsvmConfig { nu: 0.2, tol: 1e-14, max_iter: 2, gamma: Some(1.0) };
    match ocsvm_fit(&pts, &cfg) {
        Err(DetectorError::NonConvergence { iterations: 2, violation }) => assert!(violation > 0.0),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn detectors_are_deterministic() {
    let pts = gaussian_cloud(120, 5, 99);
    let cfg = IsolationForestConfig { seed: 4, ..Default::default() };
    assert_eq!(if_fit(&pts, &cfg).unwrap(), if_fit(&pts, &cfg).unwrap());
    assert_eq!(lof_fit(&pts, 20).unwrap(), lof_fit(&pts, 20).unwrap());
    let oc = OcsvmConfig::default();
    assert_eq!(ocsvm_fit(&pts, &oc).unwrap(), ocsvm_fit(&pts, &oc).unwrap());
}
