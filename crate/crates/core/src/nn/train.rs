//! Supervised training loop: SGD with heavy-ball momentum, plateau-driven
//! learning-rate decay, early stopping on the validation loss, and a
//! best-checkpoint return.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

use super::network::{eval_mse, loss_and_grads, BatchInput, Gradients, Network};
use crate::dataset::DatasetReader;
use crate::error::{Error, Result};
use crate::render::IMAGE_BYTES;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub weight_decay: f64,
    pub momentum: f32,
    pub lr: f32,
    /// Multiplier applied to the learning rate when the plateau patience
    /// runs out.
    pub lr_decay: f32,
    /// Consecutive non-improving epochs before the learning rate decays.
    pub plateau_patience: usize,
    /// Further non-improving epochs (after the decay) before stopping.
    pub early_stop_patience: usize,
    pub dropout: f32,
    pub seed: u64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            weight_decay: 5e-4,
            momentum: 0.9,
            lr: 5e-3,
            lr_decay: 0.5,
            plateau_patience: 10,
            early_stop_patience: 10,
            dropout: 0.5,
            seed: 0,
            max_epochs: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patience values must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.momentum >= 0.0) {
            return Err(Error::Config("lr, lr_decay must be positive; momentum nonnegative".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// One momentum update on a parameter slice:
/// `buf ← μ·buf + grad; param ← param − η·buf`.
pub fn sgd_momentum_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut [f32],
    lr: f32,
    momentum: f32,
) {
    debug_assert!(params.len() == grads.len() && params.len() == state.len());
    for i in 0..params.len() {
        state[i] = momentum * state[i] + grads[i];
        params[i] -= lr * state[i];
    }
}

/// A labeled image set held in memory: raw bytes plus targets. Images are
/// kept unstandardized (4× smaller) and standardized at batch assembly.
pub struct SupervisedSet {
    pub n: usize,
    /// Bytes per image; the network's input size must match.
    pub sample_len: usize,
    pub images: Vec<u8>,
    pub targets: Vec<f32>,
    pub pixel_mean: f32,
    pub pixel_std: f32,
}

impl SupervisedSet {
    pub fn image(&self, i: usize) -> &[u8] {
        &self.images[i * self.sample_len..(i + 1) * self.sample_len]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        &self.targets[i * 3..(i + 1) * 3]
    }

    pub fn standardize_into(&self, i: usize, out: &mut [f32]) {
        let inv = 1.0 / self.pixel_std;
        for (o, &p) in out.iter_mut().zip(self.image(i)) {
            *o = (p as f32 - self.pixel_mean) * inv;
        }
    }

    /// Standardized images of the whole set, flat.
    pub fn standardized(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.n * self.sample_len];
        for i in 0..self.n {
            self.standardize_into(i, &mut out[i * self.sample_len..(i + 1) * self.sample_len]);
        }
        out
    }
}

pub fn load_supervised(path: &Path) -> Result<SupervisedSet> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header;
    let n = header.sample_count as usize;
    let mut images = Vec::with_capacity(n * IMAGE_BYTES);
    let mut targets = Vec::with_capacity(n * 3);
    for sample in reader {
        let sample = sample?;
        images.extend_from_slice(&sample.image.pixels);
        // Targets were rounded through f32 before storage, so this cast
        // recovers the stored values exactly.
        targets.extend_from_slice(&[
            sample.target.x as f32,
            sample.target.y as f32,
            sample.target.z as f32,
        ]);
    }
    Ok(SupervisedSet {
        n,
        sample_len: IMAGE_BYTES,
        images,
        targets,
        pixel_mean: header.pixel_mean,
        pixel_std: header.pixel_std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    /// Validation loss failed to improve through the full patience window.
    Plateau,
    MaxEpochs,
    /// Loss went non-finite; the payload names the first offending layer.
    Diverged(String),
}

#[derive(Debug)]
pub struct TrainResult {
    /// The checkpoint with minimal validation loss (the initial network if
    /// training diverged before completing an epoch).
    pub network: Network,
    pub log: Vec<EpochLog>,
    pub best_val: f64,
    pub best_epoch: usize,
    /// Validation loss of the untrained network, for reference.
    pub initial_val_loss: f64,
    pub stopped: StopReason,
}

/// Render the epoch log as CSV (with header).
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr).unwrap();
    }
    out
}

/// Train `net` on `train_set`, tracking the validation loss after every
/// epoch. Returns the best checkpoint; divergence stops training but still
/// returns normally so the best checkpoint is not lost.
pub fn train(
    net: Network,
    train_set: &SupervisedSet,
    val_set: &SupervisedSet,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_with_progress(net, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every completed epoch (progress
/// reporting for long runs).
pub fn train_with_progress(
    mut net: Network,
    train_set: &SupervisedSet,
    val_set: &SupervisedSet,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLog),
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_set.n == 0 || val_set.n == 0 {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    if train_set.pixel_mean.to_bits() != val_set.pixel_mean.to_bits()
        || train_set.pixel_std.to_bits() != val_set.pixel_std.to_bits()
    {
        return Err(Error::Config(format!(
            "standardization stats differ between splits: train ({}, {}) vs val ({}, {})",
            train_set.pixel_mean, train_set.pixel_std, val_set.pixel_mean, val_set.pixel_std
        )));
    }
    net.pixel_mean = train_set.pixel_mean;
    net.pixel_std = train_set.pixel_std;
    net.dropout_p = cfg.dropout;

    let sample_len = net.input_c * net.input_h * net.input_w;
    if sample_len != train_set.sample_len || sample_len != val_set.sample_len {
        return Err(Error::ShapeMismatch {
            context: format!(
                "network expects {sample_len}-value input, images have {}",
                train_set.sample_len
            ),
        });
    }
    let flat = net.flat_dim();
    let val_x = val_set.standardized();
    let initial_val_loss = eval_mse(&net, &val_x, &val_set.targets, val_set.n)?;
    // Fallback checkpoint in case training diverges before completing an
    // epoch; mid-epoch parameters are never returned.
    let initial_net = net.clone();

    let mut momentum = Gradients::zeros_like(&net);
    let mut lr = cfg.lr;
    let mut best: Option<(f64, usize, Network)> = None;
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();
    let mut stopped = StopReason::MaxEpochs;

    let mut x_buf = vec![0.0f32; cfg.batch_size * sample_len];
    let mut t_buf = vec![0.0f32; cfg.batch_size * 3];

    'epochs: for epoch in 1..=cfg.max_epochs {
        // One RNG per epoch (seed + epoch stream) drives both the shuffle
        // and the dropout masks, so a fixed seed reproduces the run exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train_set.n).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            for (bi, &s) in chunk.iter().enumerate() {
                train_set.standardize_into(s, &mut x_buf[bi * sample_len..(bi + 1) * sample_len]);
                t_buf[bi * 3..bi * 3 + 3].copy_from_slice(train_set.target(s));
            }
            let masks: Vec<bool> = (0..b * flat)
                .map(|_| rng.random::<f32>() >= cfg.dropout)
                .collect();
            let input = BatchInput {
                x: &x_buf[..b * sample_len],
                targets: &t_buf[..b * 3],
                masks: Some(&masks),
                batch: b,
            };
            match loss_and_grads(&net, &input, cfg.weight_decay) {
                Ok((loss, grads)) => {
                    loss_sum += loss * b as f64;
                    net.visit_params(&grads, &mut momentum, |p, g, m| {
                        sgd_momentum_step(p, g, m, lr, cfg.momentum)
                    });
                }
                Err(Error::Divergence { layer }) => {
                    stopped = StopReason::Diverged(layer);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / train_set.n as f64;
        let val_loss = eval_mse(&net, &val_x, &val_set.targets, val_set.n)?;
        if !val_loss.is_finite() {
            stopped = StopReason::Diverged("validation forward pass".into());
            break 'epochs;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        progress(log.last().unwrap());

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, net.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs == cfg.plateau_patience {
                lr *= cfg.lr_decay;
            }
            if bad_epochs >= cfg.plateau_patience + cfg.early_stop_patience {
                stopped = StopReason::Plateau;
                break;
            }
        }
    }

    let (best_val, best_epoch, network) = match best {
        Some(b) => b,
        // Diverged before finishing a single epoch.
        None => (initial_val_loss, 0, initial_net),
    };
    Ok(TrainResult {
        network,
        log,
        best_val,
        best_epoch,
        initial_val_loss,
        stopped,
    })
}
