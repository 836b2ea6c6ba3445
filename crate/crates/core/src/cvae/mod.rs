//! Convolutional variational autoencoder.
//!
//! Five stride-2 convolutions halve the input five times, two dense heads
//! produce the posterior mean and log-variance, and a mirrored decoder (dense
//! layer followed by five transposed convolutions) maps a latent vector back to
//! an image. The network sees pixels scaled to `[0, 1]`; [`CvaeModel::decode`]
//! reports images on the `[0, 255]` scale.

mod checkpoint;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, kaiming_uniform, Scalar, Tape, Tensor, TensorError, Var};

pub use checkpoint::{checkpoint_load, checkpoint_save, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, EpochLoss, LossSplit, TrainLog};

/// Number of stride-2 layers on each side of the bottleneck.
pub const DEPTH: usize = 5;
pub const KERNEL: usize = 4;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;
pub const LEAKY_SLOPE: f64 = 0.01;
/// Factor between network pixel scale `[0,1]` and reported scale `[0,255]`.
pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Debug, Error)]
pub enum CvaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input has {found_h}x{found_w} pixels, model expects {expected_h}x{expected_w}")]
    InputDims {
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("latent vector has length {found}, model expects {expected}")]
    LatentDims { expected: usize, found: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { expected: u16, found: u16 },
    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checkpoint shape table does not match its config: {0}")]
    ShapeTable(String),
}

pub type Result<T, E = CvaeError> = std::result::Result<T, E>;

/// Architecture and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub resize_h: usize,
    pub resize_w: usize,
    pub first_hidden_channels: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CvaeConfig {
    /// Desk-scale configuration: 64×64 input, 8 channels, 32 latent dimensions.
    fn default() -> Self {
        Self {
            resize_h: 64,
            resize_w: 64,
            first_hidden_channels: 8,
            latent_dim: 32,
            learning_rate: 5e-4,
            batch_size: 64,
            epochs: 100,
            seed: 0,
        }
    }
}

impl CvaeConfig {
    /// Best VanillaCVAE setting of the published hyperparameter search.
    pub fn published_optimum() -> Self {
        Self {
            resize_h: 512,
            resize_w: 256,
            first_hidden_channels: 8,
            latent_dim: 512,
            ..Self::default()
        }
    }

    /// The 24-point search grid: heights {256, 512} × width 256 ×
    /// channels {8, 16, 32} × latent {128, 256, 512, 1024}.
    pub fn search_grid() -> Vec<Self> {
        let mut grid = Vec::with_capacity(24);
        for h in [256, 512] {
            for c in [8, 16, 32] {
                for k in [128, 256, 512, 1024] {
                    grid.push(Self {
                        resize_h: h,
                        resize_w: 256,
                        first_hidden_channels: c,
                        latent_dim: k,
                        ..Self::default()
                    });
                }
            }
        }
        grid
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 1 << DEPTH;
        if self.resize_h == 0 || self.resize_h % unit != 0 || self.resize_w == 0 || self.resize_w % unit != 0 {
            return Err(CvaeError::Config(format!(
                "resize dims {}x{} must be positive multiples of {unit}",
                self.resize_h, self.resize_w
            )));
        }
        if self.latent_dim == 0 || self.first_hidden_channels == 0 || self.batch_size == 0 {
            return Err(CvaeError::Config(
                "latent_dim, first_hidden_channels and batch_size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(CvaeError::Config(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.first_hidden_channels << (DEPTH - 1)
    }

    pub fn bottleneck_hw(&self) -> (usize, usize) {
        (self.resize_h >> DEPTH, self.resize_w >> DEPTH)
    }

    /// Length of the flattened encoder output.
    pub fn flat_features(&self) -> usize {
        let (h, w) = self.bottleneck_hw();
        self.bottleneck_channels() * h * w
    }

    pub fn pixels(&self) -> usize {
        self.resize_h * self.resize_w
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.first_hidden_channels;
        let mut shapes = Vec::new();
        let mut c_in = 1;
        for i in 0..DEPTH {
            let c_out = c << i;
            shapes.push((format!("enc{i}.weight"), vec![c_out, c_in, KERNEL, KERNEL]));
            shapes.push((format!("enc{i}.bias"), vec![c_out]));
            c_in = c_out;
        }
        let f = self.flat_features();
        let k = self.latent_dim;
        shapes.push(("mu.weight".into(), vec![f, k]));
        shapes.push(("mu.bias".into(), vec![k]));
        shapes.push(("log_var.weight".into(), vec![f, k]));
        shapes.push(("log_var.bias".into(), vec![k]));
        shapes.push(("dec_in.weight".into(), vec![k, f]));
        shapes.push(("dec_in.bias".into(), vec![f]));
        for i in 0..DEPTH {
            let c_in = c << (DEPTH - 1 - i);
            let c_out = if i + 1 == DEPTH { 1 } else { c_in / 2 };
            shapes.push((format!("dec{i}.weight"), vec![c_in, c_out, KERNEL, KERNEL]));
            shapes.push((format!("dec{i}.bias"), vec![c_out]));
        }
        shapes
    }
}

/// Diagonal Gaussian posterior `q(z|x)` of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_var.iter().map(|lv| lv.exp())
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ noise`.
pub fn reparameterize(post: &LatentPosterior, noise: &[f64]) -> Vec<f64> {
    post.mu
        .iter()
        .zip(&post.log_var)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect()
}

/// Per-image loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    /// `½ Σ_t (x_t − x̂_t)²`
    pub recon: f64,
    /// `½ Σ_j (σ_j² + μ_j² − 1 − ln σ_j²)`
    pub kld: f64,
    /// `−recon − kld`; the constant `−(HW/2) ln 2π` is omitted.
    pub elbo: f64,
}

/// Evaluates the reconstruction loss, KL divergence and ELBO of one image.
/// `x` and `x_hat` must be on the same pixel scale.
pub fn elbo_terms(x: &[f64], post: &LatentPosterior, x_hat: &[f64]) -> Result<ElboTerms> {
    if x.len() != x_hat.len() {
        return Err(TensorError::Dimension {
            op: "elbo_terms",
            axis: "pixels",
            expected: x.len(),
            found: x_hat.len(),
        }
        .into());
    }
    if post.mu.len() != post.log_var.len() {
        return Err(CvaeError::LatentDims {
            expected: post.mu.len(),
            found: post.log_var.len(),
        });
    }
    if x.iter().chain(x_hat).any(|v| !v.is_finite()) {
        return Err(CvaeError::NonFinite("image"));
    }
    if post.mu.iter().chain(&post.log_var).any(|v| !v.is_finite()) {
        return Err(CvaeError::NonFinite("posterior"));
    }
    let recon = 0.5 * x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let kld = 0.5
        * post
            .mu
            .iter()
            .zip(&post.log_var)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>();
    Ok(ElboTerms {
        recon,
        kld,
        elbo: -(recon + kld),
    })
}

/// Graph handles produced by [`CvaeModel::objective`].
#[derive(Debug, Clone)]
pub struct Objective {
    /// Batch-mean `recon + kld`; minimising it maximises the ELBO.
    pub loss: Var,
    pub recon: Var,
    pub kld: Var,
    pub mu: Var,
    pub log_var: Var,
    pub x_hat: Var,
    pub params: Vec<Var>,
}

/// Encoder and decoder parameters plus the config they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel<T: Scalar = f32> {
    config: CvaeConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> CvaeModel<T> {
    /// Kaiming-uniform weights and zero biases drawn from `config.seed`.
    pub fn new(config: CvaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (names, params) = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(shape)
                } else {
                    let fan_in = fan_in(&name, &shape);
                    kaiming_uniform(shape, fan_in, LEAKY_SLOPE, &mut rng)
                };
                (name, t)
            })
            .unzip();
        Ok(Self { config, names, params })
    }

    /// All parameters zero.
    pub fn zeros(config: CvaeConfig) -> Result<Self> {
        config.validate()?;
        let (names, params) = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(shape)))
            .unzip();
        Ok(Self { config, names, params })
    }

    pub(crate) fn from_parts(config: CvaeConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != params.len() {
            return Err(CvaeError::ShapeTable(format!("expected {} tensors, found {}", shapes.len(), params.len())));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(CvaeError::ShapeTable(format!("{name}: expected {shape:?}, found {:?}", p.shape())));
            }
        }
        let names = shapes.into_iter().map(|(n, _)| n).collect();
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &CvaeConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Converts the element type of every parameter.
    pub fn cast<U: Scalar>(&self) -> CvaeModel<U> {
        CvaeModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records all parameters on `tape` as leaves.
    pub fn bind(&self, tape: &mut Tape<T>, track_gradients: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let t = p.clone();
                tape.leaf(if track_gradients { t.with_grad() } else { t })
            })
            .collect()
    }

    fn check_batch(&self, shape: &[usize]) -> Result<usize> {
        let (h, w) = (self.config.resize_h, self.config.resize_w);
        match shape {
            [n, 1, sh, sw] if *sh == h && *sw == w => Ok(*n),
            [_, c, ..] if shape.len() == 4 && *c != 1 => Err(TensorError::Dimension {
                op: "encode",
                axis: "channels",
                expected: 1,
                found: *c,
            }
            .into()),
            [_, _, sh, sw] => Err(CvaeError::InputDims {
                expected_h: h,
                expected_w: w,
                found_h: *sh,
                found_w: *sw,
            }),
            _ => Err(TensorError::Rank {
                op: "encode",
                expected: 4,
                found: shape.len(),
            }
            .into()),
        }
    }

    /// Encoder graph. `x` holds pixels already scaled to `[0, 1]`.
    pub fn encoder_graph(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<(Var, Var)> {
        let n = self.check_batch(tape.shape(x))?;
        let mut h = x;
        for i in 0..DEPTH {
            h = tape.conv2d(h, params[2 * i], STRIDE, PADDING)?;
            h = tape.channel_bias(h, params[2 * i + 1])?;
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let flat = tape.reshape(h, vec![n, self.config.flat_features()])?;
        let mu = tape.dense(flat, params[2 * DEPTH], params[2 * DEPTH + 1])?;
        let log_var = tape.dense(flat, params[2 * DEPTH + 2], params[2 * DEPTH + 3])?;
        Ok((mu, log_var))
    }

    /// Decoder graph producing pixels in `[0, 1]`.
    pub fn decoder_graph(&self, tape: &mut Tape<T>, params: &[Var], z: Var) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.config.latent_dim {
            return Err(CvaeError::LatentDims {
                expected: self.config.latent_dim,
                found: shape.last().copied().unwrap_or(0),
            });
        }
        let n = shape[0];
        let base = 2 * DEPTH + 4;
        let h = tape.dense(z, params[base], params[base + 1])?;
        let (bh, bw) = self.config.bottleneck_hw();
        let mut h = tape.reshape(h, vec![n, self.config.bottleneck_channels(), bh, bw])?;
        h = tape.leaky_relu(h, LEAKY_SLOPE);
        for i in 0..DEPTH {
            h = tape.deconv2d(h, params[base + 2 + 2 * i], STRIDE, PADDING)?;
            h = tape.channel_bias(h, params[base + 3 + 2 * i])?;
            h = if i + 1 == DEPTH {
                tape.sigmoid(h)
            } else {
                tape.leaky_relu(h, LEAKY_SLOPE)
            };
        }
        Ok(h)
    }

    /// Full training objective for a batch of `[0, 255]` pixels with
    /// reparameterisation noise `noise[N, K]` (zeros give the posterior mean).
    pub fn objective(&self, tape: &mut Tape<T>, batch: &Tensor<T>, noise: &Tensor<T>, track_gradients: bool) -> Result<Objective> {
        let n = self.check_batch(batch.shape())?;
        if noise.shape() != [n, self.config.latent_dim] {
            return Err(CvaeError::LatentDims {
                expected: self.config.latent_dim,
                found: noise.shape().last().copied().unwrap_or(0),
            });
        }
        let params = self.bind(tape, track_gradients);
        let raw = tape.leaf(batch.clone());
        let x = tape.scale(raw, 1.0 / PIXEL_SCALE);
        let (mu, log_var) = self.encoder_graph(tape, &params, x)?;
        let eps = tape.leaf(noise.clone());
        let half = tape.scale(log_var, 0.5);
        let sd = tape.exp(half);
        let spread = tape.mul(sd, eps)?;
        let z = tape.add(mu, spread)?;
        let x_hat = self.decoder_graph(tape, &params, z)?;

        let diff = tape.sub(x_hat, x)?;
        let sq = tape.square(diff);
        let sse = tape.sum(sq);
        let recon = tape.scale(sse, 0.5);

        let var = tape.exp(log_var);
        let mu2 = tape.square(mu);
        let k = tape.add(var, mu2)?;
        let k = tape.sub(k, log_var)?;
        let k = tape.add_scalar(k, -1.0);
        let ks = tape.sum(k);
        let kld = tape.scale(ks, 0.5);

        let total = tape.add(recon, kld)?;
        let loss = tape.scale(total, 1.0 / n as f64);
        Ok(Objective { loss, recon, kld, mu, log_var, x_hat, params })
    }

    /// Posterior of each image in a `[N, 1, H, W]` batch of `[0, 255]` pixels.
    pub fn encode(&self, batch: &Tensor<T>) -> Result<Vec<LatentPosterior>> {
        let n = self.check_batch(batch.shape())?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let raw = tape.leaf(batch.clone());
        let x = tape.scale(raw, 1.0 / PIXEL_SCALE);
        let (mu, lv) = self.encoder_graph(&mut tape, &params, x)?;
        Ok(split_posteriors(tape.value(mu).data(), tape.value(lv).data(), n, self.config.latent_dim))
    }

    /// Decoder mean `f(z)` on the `[0, 255]` scale, shape `[N, 1, H, W]`.
    pub fn decode(&self, z: &[Vec<f64>]) -> Result<Tensor<T>> {
        let k = self.config.latent_dim;
        if let Some(bad) = z.iter().find(|v| v.len() != k) {
            return Err(CvaeError::LatentDims { expected: k, found: bad.len() });
        }
        if z.is_empty() {
            return Err(CvaeError::LatentDims { expected: k, found: 0 });
        }
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let flat: Vec<T> = z.iter().flatten().map(|&v| tensor::cast(v)).collect();
        let zv = tape.leaf(Tensor::new(vec![z.len(), k], flat)?);
        let out = self.decoder_graph(&mut tape, &params, zv)?;
        let scaled = tape.scale(out, PIXEL_SCALE);
        Ok(tape.value(scaled).clone())
    }

    /// Posterior and mean-latent reconstruction (`[0, 255]` scale) per image.
    pub fn reconstruct(&self, batch: &Tensor<T>) -> Result<Vec<(LatentPosterior, Vec<f64>)>> {
        let n = self.check_batch(batch.shape())?;
        let zeros = Tensor::zeros(vec![n, self.config.latent_dim]);
        let mut tape = Tape::new();
        let obj = self.objective(&mut tape, batch, &zeros, false)?;
        let posts = split_posteriors(
            tape.value(obj.mu).data(),
            tape.value(obj.log_var).data(),
            n,
            self.config.latent_dim,
        );
        let pixels = self.config.pixels();
        let xh = tape.value(obj.x_hat).data();
        Ok(posts
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let img = xh[i * pixels..(i + 1) * pixels]
                    .iter()
                    .map(|&v| tensor::to_f64(v) * PIXEL_SCALE)
                    .collect();
                (p, img)
            })
            .collect())
    }
}

fn split_posteriors<T: Scalar>(mu: &[T], lv: &[T], n: usize, k: usize) -> Vec<LatentPosterior> {
    (0..n)
        .map(|i| LatentPosterior {
            mu: mu[i * k..(i + 1) * k].iter().map(|&v| tensor::to_f64(v)).collect(),
            log_var: lv[i * k..(i + 1) * k].iter().map(|&v| tensor::to_f64(v)).collect(),
        })
        .collect()
}

fn fan_in(name: &str, shape: &[usize]) -> usize {
    if name.starts_with("enc") {
        shape[1] * shape[2] * shape[3]
    } else if name.starts_with("dec") && shape.len() == 4 {
        // each output pixel of a stride-2 transposed conv sees a quarter of the taps
        (shape[0] * shape[2] * shape[3] / (STRIDE * STRIDE)).max(1)
    } else {
        shape[0]
    }
}

/// Packs `[0, 255]` pixel rows (each `h * w` long) into an `[N, 1, h, w]` tensor.
pub fn batch_from_pixels<T: Scalar>(h: usize, w: usize, images: &[&[u8]]) -> Result<Tensor<T>> {
    for img in images {
        if img.len() != h * w {
            return Err(TensorError::Dimension {
                op: "batch_from_pixels",
                axis: "pixels",
                expected: h * w,
                found: img.len(),
            }
            .into());
        }
    }
    let data = images
        .iter()
        .flat_map(|img| img.iter().map(|&p| tensor::cast::<T>(p as f64)))
        .collect();
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CvaeConfig {
        CvaeConfig {
            resize_h: 32,
            resize_w: 64,
            first_hidden_channels: 2,
            latent_dim: 4,
            ..CvaeConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(CvaeConfig::default().validate().is_ok());
        assert!(CvaeConfig::published_optimum().validate().is_ok());
        let bad = CvaeConfig { resize_h: 48, ..CvaeConfig::default() };
        assert!(matches!(bad.validate(), Err(CvaeError::Config(_))));
        let bad = CvaeConfig { latent_dim: 0, ..CvaeConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn search_grid_has_24_points() {
        let grid = CvaeConfig::search_grid();
        assert_eq!(grid.len(), 24);
        assert!(grid.iter().all(|c| c.validate().is_ok()));
        assert!(grid.contains(&CvaeConfig::published_optimum()));
    }

    #[test]
    fn zero_encoder_gives_standard_posterior() {
        let model = CvaeModel::<f32>::zeros(tiny()).unwrap();
        let batch = Tensor::full(vec![2, 1, 32, 64], 200.0f32);
        let posts = model.encode(&batch).unwrap();
        assert_eq!(posts.len(), 2);
        for p in posts {
            assert!(p.mu.iter().all(|&v| v == 0.0));
            assert!(p.log_var.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_decoder_is_mid_grey() {
        let model = CvaeModel::<f32>::zeros(tiny()).unwrap();
        let out = model.decode(&[vec![0.3, -1.0, 2.0, 0.0]]).unwrap();
        assert_eq!(out.shape(), &[1, 1, 32, 64]);
        assert!(out.data().iter().all(|&v| v == 127.5));
    }

    #[test]
    fn wrong_input_dims_are_reported() {
        let model = CvaeModel::<f32>::new(tiny()).unwrap();
        let err = model.encode(&Tensor::zeros(vec![1, 1, 64, 64])).unwrap_err();
        assert!(matches!(err, CvaeError::InputDims { found_h: 64, .. }));
        let err = model.decode(&[vec![0.0; 3]]).unwrap_err();
        assert!(matches!(err, CvaeError::LatentDims { expected: 4, found: 3 }));
    }

    #[test]
    fn reparameterize_examples() {
        let post = LatentPosterior { mu: vec![1.0, -2.0], log_var: vec![0.3, 0.0] };
        assert_eq!(reparameterize(&post, &[0.0, 0.0]), post.mu);
        let std = LatentPosterior { mu: vec![0.0; 2], log_var: vec![0.0; 2] };
        assert_eq!(reparameterize(&std, &[0.7, -1.1]), vec![0.7, -1.1]);
        let p = LatentPosterior { mu: vec![1.0], log_var: vec![4f64.ln()] };
        assert!((reparameterize(&p, &[0.5])[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn elbo_term_examples() {
        let std = LatentPosterior { mu: vec![0.0; 3], log_var: vec![0.0; 3] };
        let t = elbo_terms(&[1.0, 2.0], &std, &[1.0, 2.0]).unwrap();
        assert_eq!((t.recon, t.kld, t.elbo), (0.0, 0.0, 0.0));

        let p = LatentPosterior { mu: vec![1.0], log_var: vec![0.0] };
        assert_eq!(elbo_terms(&[0.0], &p, &[0.0]).unwrap().kld, 0.5);

        let t = elbo_terms(&[2.0], &std, &[0.0]).unwrap();
        assert_eq!(t.recon, 2.0);
        assert_eq!(t.elbo, -(t.recon + t.kld));

        let bad = LatentPosterior { mu: vec![f64::NAN], log_var: vec![0.0] };
        assert!(matches!(elbo_terms(&[0.0], &bad, &[0.0]), Err(CvaeError::NonFinite(_))));
    }

    #[test]
    fn decoder_mirrors_encoder_shapes() {
        let shapes = tiny().parameter_shapes();
        assert_eq!(shapes.len(), 4 * DEPTH + 6);
        assert_eq!(shapes[0].1, vec![2, 1, 4, 4]);
        assert_eq!(shapes[2 * DEPTH].1, vec![32 * 1 * 2, 4]);
        assert_eq!(shapes.last().unwrap().1, vec![1]);
    }
}
