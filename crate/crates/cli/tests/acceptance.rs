//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p mtriage --test acceptance`. Everything runs on one
//! worker thread so timings and artifacts match `--threads 1`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use mtriage_cli::data::read_split;
use mtriage_cli::{run, Cli};
use mtriage_core::cvae::{batch_from_pixels, elbo_terms, train, CvaeConfig, CvaeModel, LatentPosterior};
use mtriage_core::detectors::{if_fit, lof_fit, ocsvm_fit, rbf, IsolationForestConfig, OcsvmConfig};
use mtriage_core::eval::{auprc, auroc, confusion_at_fraction, LabeledScores};
use mtriage_core::imgproc::{
    canny, erode, extract_pectoral_muscle, hough_lines, muscle_line_count, muscle_score, normal_offset, preprocess,
    resize_bilinear, BinaryImage, CannyParams, GrayImage, ImageMeta, Laterality, LineCount, MuscleOutcome, MuscleParams, View, ANALYSIS_SIZE,
};
use mtriage_core::synth::{generate_image, read_truth, SynthSpec};
use mtriage_core::taxonomy::OutlierType;
use mtriage_core::tensor::gradcheck::{compare, numeric_gradients};
use mtriage_core::tensor::{Tape, Tensor, Var};
use mtriage_core::triage::{read_log, ExclusionPolicy, TriageSession, TriageStore, LOG_FILE};
use mtriage_server::AppState;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn exec(args: &[&str]) -> Result<PathBuf, String> {
    let cli = Cli::try_parse_from(std::iter::once("mtriage").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    run(&cli).map_err(|e| format!("{args:?}: {e}"))?.ok_or_else(|| "no run directory".into())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn csv_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap_or_default().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

// ---------- gradients ----------

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(random(tape.shape(v), &mut rng));
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

fn pattern(h: usize, w: usize, phase: usize) -> Vec<u8> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            (((x + phase) * 255 / w) as u8 / 2).saturating_add(((y * 97 / h) as u8) & 0x60)
        })
        .collect()
}

type Graph = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

fn graph_error(graph: &Graph, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = graph(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], |g| g.to_vec())).collect();
    let mut f = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = graph(&mut t, &vs);
        t.value(o).data()[0]
    };
    let numeric = numeric_gradients(&mut f, inputs, 1e-5);
    compare(&analytic, &numeric, 1e-6).max_relative_error
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (a, b) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    let pair = vec![a, b];
    let image = random(&[2, 3, 6, 6], &mut rng);
    let kernel = random(&[4, 3, 3, 3], &mut rng);
    let feat = random(&[2, 4, 3, 3], &mut rng);
    let dkernel = random(&[4, 2, 4, 4], &mut rng);
    let bias3 = random(&[3], &mut rng);
    let (x2, w2, b2) = (random(&[5, 7], &mut rng), random(&[7, 3], &mut rng), random(&[3], &mut rng));

    let cases: Vec<(&str, Graph, Vec<Tensor<f64>>)> = vec![
        ("add", Box::new(|t, v| { let y = t.add(v[0], v[1]).unwrap(); weighted_sum(t, y, 1) }), pair.clone()),
        ("sub", Box::new(|t, v| { let y = t.sub(v[0], v[1]).unwrap(); weighted_sum(t, y, 2) }), pair.clone()),
        ("mul", Box::new(|t, v| { let y = t.mul(v[0], v[1]).unwrap(); weighted_sum(t, y, 3) }), pair.clone()),
        ("scale", Box::new(|t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y, 4) }), pair.clone()),
        ("add_scalar", Box::new(|t, v| { let y = t.add_scalar(v[0], 0.3); let y = t.square(y); weighted_sum(t, y, 5) }), pair.clone()),
        ("exp", Box::new(|t, v| { let y = t.exp(v[0]); weighted_sum(t, y, 6) }), pair.clone()),
        ("square", Box::new(|t, v| { let y = t.square(v[1]); weighted_sum(t, y, 7) }), pair.clone()),
        ("relu", Box::new(|t, v| { let y = t.relu(v[0]); weighted_sum(t, y, 8) }), pair.clone()),
        ("leaky_relu", Box::new(|t, v| { let y = t.leaky_relu(v[0], 0.01); weighted_sum(t, y, 9) }), pair.clone()),
        ("sigmoid", Box::new(|t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y, 10) }), pair.clone()),
        ("sum", Box::new(|t, v| { let y = t.square(v[0]); t.sum(y) }), pair.clone()),
        ("reshape", Box::new(|t, v| { let y = t.reshape(v[0], vec![2, 6]).unwrap(); weighted_sum(t, y, 11) }), pair),
        ("conv2d", Box::new(|t, v| { let y = t.conv2d(v[0], v[1], 2, 1).unwrap(); weighted_sum(t, y, 12) }), vec![image.clone(), kernel]),
        ("deconv2d", Box::new(|t, v| { let y = t.deconv2d(v[0], v[1], 2, 1).unwrap(); weighted_sum(t, y, 13) }), vec![feat, dkernel]),
        ("channel_bias", Box::new(|t, v| { let y = t.channel_bias(v[0], v[1]).unwrap(); weighted_sum(t, y, 14) }), vec![image, bias3]),
        ("dense", Box::new(|t, v| { let y = t.dense(v[0], v[1], v[2]).unwrap(); weighted_sum(t, y, 15) }), vec![x2, w2, b2]),
    ];
    let mut worst = (0.0f64, "");
    for (name, graph, inputs) in &cases {
        let err = graph_error(graph, inputs);
        ensure!(err <= 1e-3, "{name}: relative error {err:.2e}");
        if err > worst.0 {
            worst = (err, name);
        }
    }

    // full objective, every parameter of a reduced-width model
    let cfg = CvaeConfig {
        resize_h: 32,
        resize_w: 32,
        first_hidden_channels: 2,
        latent_dim: 4,
        batch_size: 2,
        epochs: 1,
        seed: 11,
        ..CvaeConfig::default()
    };
    let model = CvaeModel::<f64>::new(cfg).unwrap();
    let imgs = [pattern(32, 32, 0), pattern(32, 32, 9)];
    let refs: Vec<&[u8]> = imgs.iter().map(Vec::as_slice).collect();
    let batch = batch_from_pixels::<f64>(32, 32, &refs).unwrap();
    let noise = Tensor::<f64>::from_fn(vec![2, 4], |i| [0.3, -1.2, 0.8, 0.1, -0.5, 1.4, 0.0, -0.9][i]);
    let mut tape = Tape::new();
    let obj = model.objective(&mut tape, &batch, &noise, true).unwrap();
    tape.backward(obj.loss).unwrap();
    let analytic: Vec<Vec<f64>> = obj.params.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
    let mut probe = model.clone();
    let mut loss = |params: &[Tensor<f64>]| {
        probe.params_mut().clone_from_slice(params);
        let mut t = Tape::new();
        let o = probe.objective(&mut t, &batch, &noise, false).unwrap();
        t.value(o.loss).data()[0]
    };
    let numeric = numeric_gradients(&mut loss, model.params(), 1e-5);
    let elbo = compare(&analytic, &numeric, 1e-4);
    ensure!(elbo.checked == model.parameter_count(), "checked {} of {} parameters", elbo.checked, model.parameter_count());
    ensure!(elbo.max_relative_error <= 1e-3, "ELBO: relative error {:.2e} at {}", elbo.max_relative_error, model.names()[elbo.worst.0]);
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(120), "took {took:?}");
    Ok(format!(
        "{} ops worst {:.1e} ({}), ELBO {} params worst {:.1e}",
        cases.len(),
        worst.0,
        worst.1,
        elbo.checked,
        elbo.max_relative_error
    ))
}

// ---------- ELBO ----------

fn elbo_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_kld = f64::INFINITY;
    for _ in 0..5000 {
        let k = rng.random_range(1..64);
        let post = LatentPosterior {
            mu: (0..k).map(|_| rng.random_range(-20.0..20.0)).collect(),
            log_var: (0..k).map(|_| rng.random_range(-15.0..15.0)).collect(),
        };
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..255.0)).collect();
        let x_hat: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..255.0)).collect();
        let t = elbo_terms(&x, &post, &x_hat).unwrap();
        ensure!(t.kld >= 0.0, "negative kld {}", t.kld);
        ensure!(t.elbo == -(t.recon + t.kld), "elbo {} != -(recon + kld)", t.elbo);
        min_kld = min_kld.min(t.kld);
    }
    let prior = LatentPosterior { mu: vec![0.0; 32], log_var: vec![0.0; 32] };
    let at_prior = elbo_terms(&[0.0], &prior, &[0.0]).unwrap().kld;
    ensure!(at_prior.abs() < 1e-9, "kld at the prior {at_prior}");
    let one = LatentPosterior { mu: vec![1.0], log_var: vec![0.0] };
    let half = elbo_terms(&[0.0], &one, &[0.0]).unwrap().kld;
    ensure!(half == 0.5, "kld(mu=1, sigma=1) = {half}");
    Ok(format!("5000 random posteriors, min kld {min_kld:.3}; prior {at_prior}; unit mean {half}"))
}

// ---------- training ----------

fn training_progress() -> Check {
    let start = Instant::now();
    let spec = SynthSpec { n_images: 500, seed: 5, ..SynthSpec::default() };
    let pixels: Vec<Vec<u8>> = (0..spec.n_images)
        .map(|i| {
            let img = generate_image(&spec, i, None);
            preprocess(&img.image, &img.meta).map(|p| resize_bilinear(&p, 64, 64).into_pixels())
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let refs: Vec<&[u8]> = pixels.iter().map(Vec::as_slice).collect();
    let cfg = CvaeConfig { epochs: 30, seed: 5, ..CvaeConfig::default() };
    ensure!((cfg.resize_h, cfg.resize_w, cfg.latent_dim, cfg.batch_size) == (64, 64, 32, 64), "config {cfg:?}");
    let mut model = CvaeModel::<f32>::new(cfg).map_err(|e| e.to_string())?;
    let log = train(&mut model, &refs, &[]).map_err(|e| e.to_string())?;
    let rows: Vec<_> = log.train_rows().collect();
    let loss = |i: usize| rows[i].recon + rows[i].kld;
    let ratio = loss(29) / loss(0);
    ensure!(rows.len() == 30, "{} epochs logged", rows.len());
    ensure!(ratio < 0.5, "epoch 30 / epoch 1 = {ratio:.3}");

    let single = CvaeConfig {
        resize_h: 64,
        resize_w: 64,
        latent_dim: 32,
        batch_size: 1,
        learning_rate: 2e-3,
        epochs: 300,
        seed: 5,
        ..CvaeConfig::default()
    };
    let mut model = CvaeModel::<f32>::new(single).map_err(|e| e.to_string())?;
    let log = train(&mut model, &refs[..1], &[]).map_err(|e| e.to_string())?;
    let rows: Vec<_> = log.train_rows().collect();
    let (first, last) = (rows[0].recon, rows.last().expect("epochs").recon);
    ensure!(last < 0.1 * first, "single image recon {first:.0} -> {last:.0}");
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(900), "took {took:?}");
    Ok(format!("500 images: epoch 30 / epoch 1 = {ratio:.3}; one image: recon {:.4} of initial", last / first))
}

// ---------- detectors ----------

fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

/// LOF by its definition, with full sorting for every point.
fn brute_force_lof(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = points.len();
    let dist = |a: usize, b: usize| points[a].iter().zip(&points[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
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
        .map(|p| 1.0 / (knn[p].iter().map(|&o| dist(p, o).max(kdist[o])).sum::<f64>() / k as f64 + 1e-10))
        .collect();
    (0..n).map(|p| knn[p].iter().map(|&o| lrd[o]).sum::<f64>() / k as f64 / lrd[p]).collect()
}

fn project(v: &[f64], c: f64) -> Vec<f64> {
    let total = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let lo0 = v.iter().cloned().fold(f64::INFINITY, f64::min) - c - 1.0;
    let hi0 = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let (mut lo, mut hi) = (lo0, hi0);
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

/// Dense projected-gradient solution of min ½αᵀKα, 0 ≤ α ≤ c, Σα = 1.
fn qp_oracle(k: &[Vec<f64>], c: f64) -> f64 {
    let n = k.len();
    let mut a = project(&vec![1.0 / n as f64; n], c);
    for _ in 0..200_000 {
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i][j] * a[j]).sum()).collect();
        let next = project(&a.iter().zip(&g).map(|(x, gi)| x - gi / n as f64).collect::<Vec<_>>(), c);
        let moved = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        a = next;
        if moved < 1e-14 {
            break;
        }
    }
    0.5 * (0..n).map(|i| (0..n).map(|j| a[i] * k[i][j] * a[j]).sum::<f64>()).sum::<f64>()
}

fn detector_oracles() -> Check {
    let pts = gaussian_cloud(100, 3, 21);
    let mut lof_gap = 0.0f64;
    for k in [5, 20] {
        let model = lof_fit(&pts, k).map_err(|e| e.to_string())?;
        for (s, o) in model.fit_scores.iter().zip(brute_force_lof(&pts, k)) {
            lof_gap = lof_gap.max((-s - o).abs());
        }
    }
    ensure!(lof_gap <= 1e-9, "LOF gap {lof_gap:.2e}");

    let mut obj_gap = 0.0f64;
    let mut sum_gap = 0.0f64;
    for (trial, n) in [8usize, 14, 20].into_iter().enumerate() {
        for nu in [0.1, 0.3, 0.5] {
            let pts = gaussian_cloud(n, 2, 300 + trial as u64);
            let m = ocsvm_fit(&pts, &OcsvmConfig { nu, gamma: Some(0.7), tol: 1e-10, ..Default::default() })
                .map_err(|e| e.to_string())?;
            let k: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| rbf(0.7, a, b)).collect()).collect();
            obj_gap = obj_gap.max((m.objective - qp_oracle(&k, 1.0 / (nu * n as f64))).abs());
            sum_gap = sum_gap.max((m.dual.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure!(obj_gap <= 1e-4, "OCSVM objective gap {obj_gap:.2e}");
    ensure!(sum_gap < 1e-8, "|sum alpha - 1| = {sum_gap:.2e}");

    let mut hits = 0;
    for rep in 0..100u64 {
        let mut pts = gaussian_cloud(100, 2, 1000 + rep);
        pts.push(vec![50.0, 0.0]);
        let model = if_fit(&pts, &IsolationForestConfig { seed: rep, ..Default::default() }).map_err(|e| e.to_string())?;
        let s = model.score(&pts).map_err(|e| e.to_string())?;
        let first = (0..s.len()).min_by(|&a, &b| s[a].total_cmp(&s[b])).expect("points");
        hits += usize::from(first == 100);
    }
    ensure!(hits >= 95, "isolation forest ranked the planted point first {hits}/100");
    Ok(format!("LOF gap {lof_gap:.1e}; OCSVM objective gap {obj_gap:.1e}, |sum-1| {sum_gap:.1e}; IF {hits}/100"))
}

// ---------- metrics ----------

fn labeled(scores: &[f64], labels: &[bool]) -> LabeledScores {
    let types = labels.iter().map(|&l| l.then_some(OutlierType::Implant)).collect();
    LabeledScores::new((0..scores.len() as u32).collect(), scores.to_vec(), labels.to_vec(), types).unwrap()
}

fn metric_correctness() -> Check {
    // lowest three selected: two outliers and one inlier; the third outlier is missed
    let labels = [true, false, true, false, false, false, true, false, false, false];
    let scores: Vec<f64> = (0..10).map(f64::from).collect();
    let c = confusion_at_fraction(&labeled(&scores, &labels), 0.3).map_err(|e| e.to_string())?;
    ensure!((c.tp, c.fp, c.fn_, c.tn) == (2, 1, 1, 6), "contingency {c:?}");
    for (name, v) in [("precision", c.precision()), ("recall", c.recall()), ("f1", c.f1())] {
        ensure!((v - 2.0 / 3.0).abs() < 1e-12, "{name} {v}");
    }

    let n = 40_000;
    let mut total = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 200 == 0).collect();
        total += auprc(&labeled(&scores, &labels)).map_err(|e| e.to_string())?;
    }
    let mean = total / 20.0;
    ensure!((mean - 0.005).abs() <= 0.003, "random AUPRC {mean}");

    let (scores, labels) = ([1.0, 2.0, 3.0, 4.0], [true, false, true, false]);
    let got = auroc(&labeled(&scores, &labels)).map_err(|e| e.to_string())?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..4).filter(|&i| labels[i]) {
        for j in (0..4).filter(|&j| !labels[j]) {
            den += 1.0;
            num += if scores[i] < scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
        }
    }
    ensure!((got - num / den).abs() < 1e-12, "AUROC {got} vs enumeration {}", num / den);
    Ok(format!("P=R=F1=2/3; random AUPRC {mean:.4}; AUROC {got} = enumeration"))
}

// ---------- classical ----------

fn classical_pipeline() -> Check {
    let n = 128;
    let step = GrayImage::from_fn(n, n, |y, x| if x + y >= 100 { 200 } else { 40 });
    let edges = canny(&step, &CannyParams::relative(0.1, 0.2, 2.0)).map_err(|e| e.to_string())?;
    let best = *hough_lines(&edges, 50).first().ok_or("no Hough line")?;
    // the step lies between x + y = 99 and x + y = 100
    let truth = 0.5 * (normal_offset(45.0, n, n, 50, 49) + normal_offset(45.0, n, n, 50, 50));
    ensure!((best.angle - 45.0).abs() <= 1.0, "angle {}", best.angle);
    ensure!((best.distance - truth).abs() <= 2.0, "distance {} vs {truth:.2}", best.distance);

    let eroded = erode(&BinaryImage::filled(100, 100, true), 5, 1);
    let interior = (0..100).all(|y| (0..100).all(|x| eroded.get(y, x) == ((2..98).contains(&y) && (2..98).contains(&x))));
    ensure!(interior && eroded.count_ones() == 96 * 96, "erosion left {} pixels", eroded.count_ones());

    let p = MuscleParams::default();
    let a = ANALYSIS_SIZE;
    let mut wedges = 0;
    for (depth, muscle, angle) in [(60.0, 190, 45.0), (50.0, 210, 35.0), (80.0, 170, 55.0)] {
        let wedge = GrayImage::from_fn(a, a, |y, x| if normal_offset(angle, a, a, y, x) < -depth { muscle } else { 120 });
        let meta = ImageMeta { image_id: 0, laterality: Laterality::L, view: View::MLO, manufacturer: "synthetic".into(), source: None };
        match muscle_score(&wedge, &meta, &p).map_err(|e| e.to_string())? {
            MuscleOutcome::Lines { count: LineCount::Count(0), .. } => wedges += 1,
            other => return Err(format!("homogeneous wedge at {angle} deg: {other:?}")),
        }
    }
    let stripes = 12;
    let striped = GrayImage::from_fn(a, a, |y, x| {
        let t = -40.0 - normal_offset(45.0, a, a, y, x);
        if t < 0.0 {
            150
        } else if t < stripes as f64 * 10.0 {
            (90.0 + 100.0 * (t / 10.0).fract()) as u8
        } else {
            90
        }
    });
    let mask = BinaryImage::from_fn(a, a, |y, x| normal_offset(45.0, a, a, y, x) < -40.0);
    let many = muscle_line_count(&striped, &mask, &p).map_err(|e| e.to_string())?;
    ensure!(matches!(many, LineCount::Excluded(n) if n > 8), "{stripes} stripes: {many:?}");
    ensure!(extract_pectoral_muscle(&GrayImage::filled(a, a, 120), &p).map_err(|e| e.to_string())?.is_none(), "flat frame has a boundary");
    Ok(format!(
        "line at {} deg, {:.1} px (truth {truth:.1}); erosion 96x96; {wedges} wedges count 0; {many:?}",
        best.angle, best.distance
    ))
}

// ---------- grids ----------

fn grid_shapes(root: &Path) -> Check {
    let out = root.join("grids");
    let synth = exec(&["--out", s(&out), "--seed", "2", "synth", "--n-images", "300", "--outlier-rate", "0.05"])?;
    let pre = exec(&["--out", s(&out), "preprocess", "--corpus", s(&synth)])?;
    let mut shapes = Vec::new();
    for (kind, want) in [("erosion", 16), ("muscle", 24)] {
        let dir = exec(&["--out", s(&out), "--set", "eval.bootstraps=20", "grid", kind, "--preprocessed", s(&pre)])?;
        let (header, rows) = csv_table(&dir.join("grid.csv"));
        ensure!(rows.len() == want, "{kind}: {} rows", rows.len());
        for f in ["0.01", "0.02", "0.05"] {
            for stat in ["mean", "sd"] {
                let col = format!("recall_{f}_{stat}");
                let i = header.iter().position(|h| *h == col).ok_or(format!("{kind}: no {col}"))?;
                ensure!(rows.iter().all(|r| r[i].parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v))), "{kind}: bad {col}");
            }
        }
        ensure!(rows.iter().filter(|r| r.last().is_some_and(|b| b == "1")).count() == 1, "{kind}: best not unique");
        shapes.push(format!("{kind} {}x{}", rows.len(), header.len()));
    }
    Ok(shapes.join(", "))
}

// ---------- end to end ----------

struct EndToEnd {
    out: PathBuf,
    pre: PathBuf,
    scores: PathBuf,
    truth: BTreeMap<u32, Option<OutlierType>>,
}

fn end_to_end(root: &Path) -> Result<(String, EndToEnd), String> {
    let start = Instant::now();
    let out = root.join("e2e");
    let o = s(&out);
    let synth = exec(&["--out", o, "synth", "--n-images", "2000", "--outlier-rate", "0.005"])?;
    let pre = exec(&["--out", o, "preprocess", "--corpus", s(&synth)])?;
    let train_args = ["--out", o, "--threads", "1", "train", "--preprocessed", s(&pre), "--epochs", "30"];
    let model = exec(&train_args)?;
    let fit_all = "detectors.fit_on=all";
    let score = exec(&["--out", o, "--threads", "1", "--set", fit_all, "score", "--preprocessed", s(&pre), "--model", s(&model)])?;
    let scores = score.join("scores_all.csv");
    let erosion = exec(&["--out", o, "erode", "--preprocessed", s(&pre)])?;
    let muscle = exec(&["--out", o, "muscle", "--preprocessed", s(&pre)])?;
    let cascade = exec(&[
        "--out", o, "cascade", "--scores", s(&scores), "--erosion", s(&erosion), "--muscle", s(&muscle), "--truth", s(&pre),
    ])?;
    let first_pass = start.elapsed();

    let (header, rows) = csv_table(&cascade.join("cascade.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).ok_or(format!("cascade.csv lacks {name}"));
    let (fc, mc, ac, cc) = (col("fraction")?, col("method")?, col("alone")?, col("cumulative")?);
    let at1: Vec<&Vec<String>> = rows.iter().filter(|r| r[fc].parse::<f64>() == Ok(0.01)).collect();
    ensure!(at1.len() == 3, "{} stages at 1%", at1.len());
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().map_err(|e| e.to_string());
    let union = num(at1[2], cc)?;
    let alone: Vec<(String, f64)> = at1.iter().map(|r| Ok((r[mc].clone(), num(r, ac)?))).collect::<Result<_, String>>()?;
    let summary = alone.iter().map(|(m, v)| format!("{m} {v:.2}")).collect::<Vec<_>>().join(", ");

    // byte-for-byte rerun of the stochastic stages in a fresh output root
    let again = root.join("e2e-rerun");
    let a = s(&again);
    let model2 = exec(&["--out", a, "--threads", "1", "train", "--preprocessed", s(&pre), "--epochs", "30"])?;
    let score2 = exec(&["--out", a, "--threads", "1", "--set", fit_all, "score", "--preprocessed", s(&pre), "--model", s(&model2)])?;
    let same = std::fs::read(&scores).map_err(|e| e.to_string())? == std::fs::read(score2.join("scores_all.csv")).map_err(|e| e.to_string())?;

    let truth: BTreeMap<u32, Option<OutlierType>> =
        read_truth(&pre.join("truth.csv")).map_err(|e| e.to_string())?.into_iter().collect();
    let n_out = truth.values().filter(|t| t.is_some()).count();
    ensure!(truth.len() == 2000 && n_out == 10, "{} images, {n_out} outliers", truth.len());
    ensure!(union >= 0.8, "cascade recall at 1% {union:.2} ({summary})");
    ensure!(alone.iter().all(|(_, v)| union >= *v), "cascade {union:.2} below a single method ({summary})");
    ensure!(same, "rerun changed scores_all.csv");
    ensure!(first_pass < Duration::from_secs(3600), "took {first_pass:?}");
    let detail = format!(
        "2000 images, {n_out} outliers; recall@1% cascade {union:.2} ({summary}); rerun identical; pipeline {:.0}s",
        first_pass.as_secs_f64()
    );
    Ok((detail, EndToEnd { out, pre, scores, truth }))
}

// ---------- triage ----------

struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    fn get(&self, path: &str) -> Result<Value, String> {
        let r = self.http.get(format!("{}{path}", self.base)).send().map_err(|e| e.to_string())?;
        let status = r.status();
        let v: Value = r.json().map_err(|e| e.to_string())?;
        ensure!(status.is_success(), "GET {path}: {status} {v}");
        Ok(v)
    }

    fn text(&self, path: &str) -> Result<String, String> {
        self.http.get(format!("{}{path}", self.base)).send().and_then(|r| r.text()).map_err(|e| e.to_string())
    }

    fn post(&self, path: &str, body: reqwest::blocking::Body) -> Result<Value, String> {
        let r = self.http.post(format!("{}{path}", self.base)).body(body).send().map_err(|e| e.to_string())?;
        let status = r.status();
        let v: Value = r.json().map_err(|e| e.to_string())?;
        ensure!(status.is_success(), "POST {path}: {status} {v}");
        Ok(v)
    }

    fn queue(&self) -> Result<Vec<u32>, String> {
        let mut ids = Vec::new();
        loop {
            let page = self.get(&format!("/api/queue?limit=25&offset={}", ids.len()))?;
            let items = page["items"].as_array().ok_or("queue page without items")?;
            ids.extend(items.iter().filter_map(|i| i["image_id"].as_u64()).map(|v| v as u32));
            if items.is_empty() || ids.len() as u64 >= page["total"].as_u64().unwrap_or(0) {
                return Ok(ids);
            }
        }
    }

    /// Labels every queued image from the truth table; returns the outliers filed.
    fn label_all(&self, ids: &[u32], truth: &BTreeMap<u32, Option<OutlierType>>) -> Result<usize, String> {
        let mut outliers = 0;
        for id in ids {
            let body = match truth.get(id).copied().flatten() {
                Some(t) => {
                    outliers += 1;
                    json!({ "image_id": id, "verdict": "outlier", "type": t.category().as_str(), "reviewer": "sim" })
                }
                None => json!({ "image_id": id, "verdict": "inlier", "reviewer": "sim" }),
            };
            self.post("/api/labels", body.to_string().into())?;
        }
        Ok(outliers)
    }
}

fn start_server(state: Arc<AppState>) -> Result<String, String> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().expect("runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send addr");
            mtriage_server::serve(listener, state).await.expect("serve");
        });
    });
    let addr = rx.recv_timeout(Duration::from_secs(10)).map_err(|e| e.to_string())?;
    Ok(format!("http://{addr}"))
}

fn triage_protocol(e2e: &EndToEnd) -> Check {
    let session_dir = e2e.out.join("session");
    let store = TriageStore::create(&session_dir, "acceptance", ExclusionPolicy::Confirmed).map_err(|e| e.to_string())?;
    let state = Arc::new(AppState::new(store, Some(&e2e.pre)).map_err(|e| e.to_string())?);
    let api = Client { base: start_server(Arc::clone(&state))?, http: reqwest::blocking::Client::new() };

    // round 1
    let csv = std::fs::read(&e2e.scores).map_err(|e| e.to_string())?;
    api.post("/api/scores?top_n=10", csv.into())?;
    let q1 = api.queue()?;
    let found1 = api.label_all(&q1, &e2e.truth)?;
    let adv = api.post("/api/session/advance", reqwest::blocking::Body::from(""))?;
    let excluded: BTreeSet<u32> = adv["excluded"].as_array().ok_or("advance without excluded")?.iter().filter_map(Value::as_u64).map(|v| v as u32).collect();
    ensure!(excluded.len() == found1, "excluded {} but filed {found1} outliers", excluded.len());
    let exclusion_file = PathBuf::from(adv["exclusion_file"].as_str().ok_or("advance without file")?);

    // retrain on what is left, rescore, queue round 2
    let o = s(&e2e.out);
    let ex = s(&exclusion_file);
    let model = exec(&["--out", o, "--threads", "1", "train", "--preprocessed", s(&e2e.pre), "--epochs", "5", "--exclude", ex])?;
    let split = read_split(&model.join("split.csv")).map_err(|e| e.to_string())?;
    ensure!(excluded.iter().all(|id| split.get(id).map(String::as_str) == Some("excluded")), "retraining kept an excluded image");
    let score = exec(&[
        "--out", o, "--threads", "1", "--set", "detectors.fit_on=all", "score", "--preprocessed", s(&e2e.pre), "--model", s(&model), "--exclude", ex,
    ])?;
    api.post("/api/scores?top_n=10", std::fs::read(score.join("scores_all.csv")).map_err(|e| e.to_string())?.into())?;
    let q2 = api.queue()?;
    ensure!(q2.iter().all(|id| !excluded.contains(id)), "round 2 queued an excluded image");
    let found2 = api.label_all(&q2, &e2e.truth)?;
    let adv2 = api.post("/api/session/advance", reqwest::blocking::Body::from(""))?;
    ensure!(adv2["round"] == 3, "after two advances: {adv2}");

    // the log alone reconstructs the live session
    let live = state.store().session().clone();
    let replayed = TriageSession::replay(read_log(&session_dir.join(LOG_FILE)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(replayed == live, "replayed session differs from the live one");
    let reopened = TriageStore::open(&session_dir).map_err(|e| e.to_string())?;
    ensure!(reopened.session() == &live, "reopened store differs");
    ensure!(api.text("/api/export")? == reopened.session().export_csv(), "export differs after reopen");
    let session = api.get("/api/session")?;
    Ok(format!(
        "round 1 queued {} filed {found1} outliers; round 2 queued {} filed {found2}; replay equal; session {}",
        q1.len(),
        q2.len(),
        session["round"]
    ))
}

// ---------- harness ----------

fn report(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match &result {
        Ok(detail) => println!("PASS  {name:<22} {secs:>7.1}s  {detail}"),
        Err(why) => println!("FAIL  {name:<22} {secs:>7.1}s  {why}"),
    }
    result.is_ok()
}

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("thread pool");
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| only.is_empty() || only.iter().any(|o| name.contains(o.as_str()));
    let root = tempfile::tempdir().expect("tempdir");
    let mut ok = true;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Check| {
        if wanted(name) {
            ok &= report(name, f);
        }
    };
    run("gradient suite", &mut gradient_suite);
    run("elbo identities", &mut elbo_identities);
    run("detector oracles", &mut detector_oracles);
    run("metric correctness", &mut metric_correctness);
    run("classical pipeline", &mut classical_pipeline);
    run("grid shapes", &mut || grid_shapes(root.path()));
    run("training progress", &mut training_progress);
    let mut e2e = None;
    run("end to end", &mut || end_to_end(root.path()).map(|(d, e)| {
        e2e = Some(e);
        d
    }));
    run("triage protocol", &mut || match &e2e {
        Some(e) => triage_protocol(e),
        None if wanted("end to end") => Err("end-to-end artifacts unavailable".into()),
        None => end_to_end(root.path()).and_then(|(_, e)| triage_protocol(&e)),
    });
    if !ok {
        std::process::exit(1);
    }
}
