use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_from_pixels, CvaeError, CvaeModel, Result};
use crate::tensor::{adam_step, standard_normal, AdamState, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSplit {
    Train,
    Valid,
}

impl LossSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            LossSplit::Train => "train",
            LossSplit::Valid => "valid",
        }
    }
}

/// Per-image mean loss terms of one epoch, network pixel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: LossSplit,
    pub recon: f64,
    pub kld: f64,
    pub elbo: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochLoss>,
}

impl TrainLog {
    pub fn train_rows(&self) -> impl Iterator<Item = &EpochLoss> {
        self.rows.iter().filter(|r| r.split == LossSplit::Train)
    }

    /// CSV with header `epoch,split,recon,kld,elbo`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "split", "recon", "kld", "elbo"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.split.as_str().to_string(),
                r.recon.to_string(),
                r.kld.to_string(),
                r.elbo.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimises the batch-mean negative ELBO with Adam for `config.epochs`
/// epochs. Images are `[0, 255]` pixel rows at the model resolution.
/// Shuffling and reparameterisation noise derive from `config.seed`, so a
/// repeated call from the same initial model reproduces the same weights.
pub fn train(model: &mut CvaeModel<f32>, train_set: &[&[u8]], valid_set: &[&[u8]]) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(CvaeError::EmptyCorpus);
    }
    let cfg = model.config().clone();
    let (h, w, k) = (cfg.resize_h, cfg.resize_w, cfg.latent_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut recon, mut kld) = (0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&[u8]> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = batch_from_pixels::<f32>(h, w, &images)?;
            let noise = standard_normal(vec![images.len(), k], &mut rng);
            let mut tape = Tape::new();
            let obj = model.objective(&mut tape, &batch, &noise, true)?;
            let r = tape.value(obj.recon).sum();
            let d = tape.value(obj.kld).sum();
            if !(r.is_finite() && d.is_finite()) {
                return Err(CvaeError::NonFiniteLoss { epoch, batch: b });
            }
            recon += r;
            kld += d;
            tape.backward(obj.loss)?;
            let grads: Vec<&[f32]> = obj
                .params
                .iter()
                .map(|&v| tape.grad(v).expect("parameters are tracked"))
                .collect();
            adam_step(model.params_mut(), &grads, &mut adam)?;
        }
        let n = train_set.len() as f64;
        log.rows.push(row(epoch, LossSplit::Train, recon / n, kld / n));
        if !valid_set.is_empty() {
            let (r, d) = evaluate(model, valid_set)?;
            log.rows.push(row(epoch, LossSplit::Valid, r, d));
        }
        let last = log.rows.last().expect("row pushed");
        log::info!("epoch {epoch}: {} recon {:.4} kld {:.4}", last.split.as_str(), last.recon, last.kld);
    }
    Ok(log)
}

fn row(epoch: usize, split: LossSplit, recon: f64, kld: f64) -> EpochLoss {
    EpochLoss { epoch, split, recon, kld, elbo: -(recon + kld) }
}

/// Per-image mean recon and KLD at the posterior mean.
fn evaluate(model: &CvaeModel<f32>, set: &[&[u8]]) -> Result<(f64, f64)> {
    let cfg = model.config();
    let (mut recon, mut kld) = (0.0, 0.0);
    for chunk in set.chunks(cfg.batch_size) {
        let batch = batch_from_pixels::<f32>(cfg.resize_h, cfg.resize_w, chunk)?;
        let noise = Tensor::zeros(vec![chunk.len(), cfg.latent_dim]);
        let mut tape = Tape::new();
        let obj = model.objective(&mut tape, &batch, &noise, false)?;
        recon += tape.value(obj.recon).sum();
        kld += tape.value(obj.kld).sum();
    }
    let n = set.len() as f64;
    Ok((recon / n, kld / n))
}
