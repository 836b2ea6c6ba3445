//! synth, preprocess, train, score.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use mtriage_core::cvae::{checkpoint_load, checkpoint_save, train as train_cvae, CvaeConfig, CvaeModel};
use mtriage_core::detectors::{IsolationForestConfig, OcsvmConfig};
use mtriage_core::eval::shuffled_indices;
use mtriage_core::imgproc::preprocess as preprocess_image;
use mtriage_core::scoring::{
    generative_scores, latent_vectors, DetectorSettings, LatentScorer, LatentSource, ScoreMatrix, ScoringSet,
};
use mtriage_core::synth::{write_corpus, write_metadata, write_truth, SynthRecord, SynthSpec, IMAGE_DIR, METADATA_FILE, TRUTH_FILE};

use crate::config::{input_identity, Config};
use crate::data::{self, Corpus, LOSS_FILE, MODEL_FILE, SPLITS, SPLIT_FILE};
use crate::rundir::{require_run, Run};
use crate::CliError;

/// Rewrites a plain CSV behind the run's provenance lines.
fn add_header(run: &Run, name: &str) -> Result<(), CliError> {
    let body = std::fs::read(run.path(name))?;
    run.write_text(name, &[], &body)?;
    Ok(())
}

pub fn synth(cfg: &Config) -> Result<PathBuf, CliError> {
    let spec = SynthSpec {
        n_images: cfg.get("synth.n_images")?,
        outlier_rate: cfg.get("synth.outlier_rate")?,
        p_mlo: cfg.get("synth.p_mlo")?,
        p_right: cfg.get("synth.p_right")?,
        seed: cfg.get("seed")?,
        ..SynthSpec::default()
    };
    spec.validate()?;
    let run = Run::create(cfg, "synth", &["seed", "synth"])?;
    let records = write_corpus(&spec, &run.dir)?;
    add_header(&run, TRUTH_FILE)?;
    log::info!("{} images, {} outliers", records.len(), records.iter().filter(|r| r.outlier_type.is_some()).count());
    run.finish()
}

pub fn preprocess(cfg: &Config) -> Result<PathBuf, CliError> {
    let corpus = Corpus::open(&cfg.input("corpus")?)?;
    let run = Run::create(cfg, "preprocess", &["corpus"])?;
    std::fs::create_dir_all(run.path(IMAGE_DIR))?;
    let records: Vec<SynthRecord> = corpus
        .records
        .par_iter()
        .map(|r| {
            let img = corpus.image(r)?;
            let out = preprocess_image(&img, &r.meta()).map_err(|e| CliError::Failed(format!("image {}: {e}", r.image_id)))?;
            let source = format!("{IMAGE_DIR}/{:05}.png", r.image_id);
            out.write(run.path(&source))?;
            Ok(SynthRecord { source, ..r.clone() })
        })
        .collect::<Result<_, CliError>>()?;
    write_metadata(&run.path(METADATA_FILE), &records)?;
    if corpus.dir.join(TRUTH_FILE).is_file() {
        write_truth(&run.path(TRUTH_FILE), &records)?;
        add_header(&run, TRUTH_FILE)?;
    }
    run.finish()
}

fn cvae_config(cfg: &Config) -> Result<CvaeConfig, CliError> {
    let c = CvaeConfig {
        resize_h: cfg.get("cvae.resize_h")?,
        resize_w: cfg.get("cvae.resize_w")?,
        first_hidden_channels: cfg.get("cvae.channels")?,
        latent_dim: cfg.get("cvae.latent_dim")?,
        learning_rate: cfg.get("cvae.learning_rate")?,
        batch_size: cfg.get("cvae.batch_size")?,
        epochs: cfg.get("cvae.epochs")?,
        seed: cfg.get("seed")?,
    };
    c.validate()?;
    Ok(c)
}

/// Split of each image: `shuffled_indices` over the manifest order, cut by
/// the rounded ratios. Excluded images keep their slot but are marked.
fn assign_splits(n: usize, ratios: [f64; 3], seed: u64) -> Vec<&'static str> {
    let n_train = ((n as f64 * ratios[0]).round() as usize).clamp(1.min(n), n);
    let n_valid = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let mut out = vec!["test"; n];
    for (rank, i) in shuffled_indices(n, seed).into_iter().enumerate() {
        out[i] = if rank < n_train {
            "train"
        } else if rank < n_train + n_valid {
            "valid"
        } else {
            "test"
        };
    }
    out
}

pub fn train(cfg: &Config) -> Result<PathBuf, CliError> {
    let corpus = Corpus::open(&cfg.input("preprocessed")?)?;
    let excluded = data::exclusions(cfg)?;
    let config = cvae_config(cfg)?;
    let splits = assign_splits(corpus.records.len(), cfg.split()?, config.seed);
    let run = Run::create(cfg, "train", &["seed", "preprocessed", "exclude", "split", "cvae"])?;

    let mut split_csv = String::from("image_id,split\n");
    for (r, s) in corpus.records.iter().zip(&splits) {
        let s = if excluded.contains(&r.image_id) { "excluded" } else { s };
        split_csv.push_str(&format!("{},{s}\n", r.image_id));
    }
    run.write_text(SPLIT_FILE, &[], split_csv.as_bytes())?;

    let load = |want: &str| -> Result<Vec<Vec<u8>>, CliError> {
        corpus
            .records
            .par_iter()
            .zip(&splits)
            .filter(|(r, s)| **s == want && !excluded.contains(&r.image_id))
            .map(|(r, _)| corpus.pixels(r, config.resize_h, config.resize_w))
            .collect()
    };
    let train_px = load("train")?;
    let valid_px = load("valid")?;
    log::info!("training on {} images, validating on {}", train_px.len(), valid_px.len());
    let mut model = CvaeModel::<f32>::new(config)?;
    let train_refs: Vec<&[u8]> = train_px.iter().map(Vec::as_slice).collect();
    let valid_refs: Vec<&[u8]> = valid_px.iter().map(Vec::as_slice).collect();
    let log = train_cvae(&mut model, &train_refs, &valid_refs)?;
    checkpoint_save(&model, run.path(MODEL_FILE))?;
    let mut loss = Vec::new();
    log.write_csv(&mut loss).map_err(|e| CliError::Failed(e.to_string()))?;
    run.write_text(LOSS_FILE, &[], &loss)?;
    run.finish()
}

fn detector_settings(cfg: &Config) -> Result<DetectorSettings, CliError> {
    Ok(DetectorSettings {
        isolation_forest: IsolationForestConfig {
            n_trees: cfg.get("detectors.if_trees")?,
            subsample_size: cfg.get("detectors.if_subsample")?,
            contamination: cfg.get("detectors.contamination")?,
            seed: cfg.get("seed")?,
        },
        lof_k: cfg.get("detectors.lof_k")?,
        ocsvm: OcsvmConfig { nu: cfg.get("detectors.nu")?, ..OcsvmConfig::default() },
    })
}

fn latent_source(cfg: &Config) -> Result<LatentSource, CliError> {
    match cfg.raw("latent.source") {
        "mean" => Ok(LatentSource::Mean),
        "sample" => Ok(LatentSource::Sample { seed: cfg.get("seed")? }),
        other => Err(CliError::Config(format!("latent.source {other:?}: expected mean or sample"))),
    }
}

fn model_paths(model: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let dir = if model.is_dir() { model.to_path_buf() } else { model.parent().unwrap_or(Path::new(".")).to_path_buf() };
    require_run(&dir, "train")?;
    let ckpt = if model.is_dir() { dir.join(MODEL_FILE) } else { model.to_path_buf() };
    Ok((ckpt, dir.join(SPLIT_FILE)))
}

pub fn score(cfg: &Config) -> Result<PathBuf, CliError> {
    let (ckpt, split_path) = model_paths(&cfg.input("model")?)?;
    let corpus = Corpus::open(&cfg.input("preprocessed")?)?;
    let excluded = data::exclusions(cfg)?;
    let split = data::read_split(&split_path)?;
    let settings = detector_settings(cfg)?;
    let source = latent_source(cfg)?;
    let fit_all = match cfg.raw("detectors.fit_on") {
        "train" => false,
        "all" => true,
        other => return Err(CliError::Config(format!("detectors.fit_on {other:?}: expected train or all"))),
    };
    let model = checkpoint_load(&ckpt)?;
    let mc = model.config().clone();
    let run = Run::create(cfg, "score", &["seed", "preprocessed", "model", "exclude", "detectors", "latent"])?;

    let set_of = |keep: &dyn Fn(&str) -> bool| -> Result<ScoringSet, CliError> {
        let rows: Vec<&SynthRecord> = corpus
            .records
            .iter()
            .filter(|r| !excluded.contains(&r.image_id))
            .filter(|r| split.get(&r.image_id).is_some_and(|s| keep(s)))
            .collect();
        let px: Vec<Vec<u8>> = rows.par_iter().map(|r| corpus.pixels(r, mc.resize_h, mc.resize_w)).collect::<Result<_, _>>()?;
        let refs: Vec<&[u8]> = px.iter().map(Vec::as_slice).collect();
        let ids: Vec<u32> = rows.iter().map(|r| r.image_id).collect();
        let (posts, generative): (Vec<_>, Vec<_>) = generative_scores(&model, &refs, mc.batch_size)?.into_iter().unzip();
        Ok(ScoringSet { latent: latent_vectors(&ids, &posts, source), ids, generative })
    };

    let mut outputs: Vec<(String, ScoreMatrix)> = Vec::new();
    let scorer;
    if fit_all {
        let all = set_of(&|s| s != "excluded")?;
        scorer = LatentScorer::fit(&all, &settings)?;
        outputs.push(("all".into(), scorer.score_matrix(&all, true)?));
    } else {
        let train_set = set_of(&|s| s == "train")?;
        scorer = LatentScorer::fit(&train_set, &settings)?;
        outputs.push(("train".into(), scorer.score_matrix(&train_set, true)?));
        for s in &SPLITS[1..] {
            let set = set_of(&|x| x == *s)?;
            if !set.ids.is_empty() {
                outputs.push((s.to_string(), scorer.score_matrix(&set, false)?));
            }
        }
    }

    let model_id = input_identity(&ckpt);
    let sha = hex::encode(Sha256::digest(std::fs::read(&ckpt)?));
    let mut extra = vec![
        format!("model {model_id} sha256:{sha}"),
        format!("cvae {}x{} channels={} latent={}", mc.resize_h, mc.resize_w, mc.first_hidden_channels, mc.latent_dim),
        format!("detectors fit_on={}", cfg.raw("detectors.fit_on")),
        "pixel_scale 255".to_string(),
    ];
    for (name, s) in ["recon", "kld", "elbo"].iter().zip(scorer.scalings()) {
        extra.push(format!("append_scaling {name}: min={} max={} target_range={}", s.min, s.max, s.target_range));
    }
    for (split_name, m) in outputs {
        let m = m.with_ensembles()?;
        let mut header = run.header();
        header.extend(extra.iter().cloned());
        header.push(format!("split {split_name} n={}", m.len()));
        let mut buf = Vec::new();
        m.write_csv(&mut buf, &header)?;
        std::fs::write(run.path(&data::scores_file_name(&split_name)), buf)?;
    }
    run.finish()
}

/// Counts of each split, for logging and tests.
pub fn split_counts(split: &BTreeMap<u32, String>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for s in split.values() {
        *out.entry(s.clone()).or_insert(0) += 1;
    }
    out
}
