//! The regression network: fixed conv stack, manual backprop, batch loss.
//!
//! Default architecture for 64×384 grayscale input:
//!
//! | layer | kernel | stride | out ch | output    |
//! |-------|--------|--------|--------|-----------|
//! | conv1 | 5×5    | 2      | 8      | 32×192    |
//! | conv2 | 3×3    | 2      | 16     | 16×96     |
//! | conv3 | 3×3    | 2      | 16     | 8×48      |
//! | conv4 | 3×3    | 2      | 32     | 4×24      |
//! | conv5 | 3×3    | 1      | 32     | 4×24      |
//!
//! ReLU follows every convolution; then flatten (3072), dropout, and a
//! fully connected head to 3 outputs (~26.8k parameters in total). conv4 —
//! the last strided layer — is the saliency target: its 4×24 spatial grid
//! is what gets upsampled back over the input strip.

use rand::Rng;
use rayon::prelude::*;

use super::layers::{
    dropout_eval, dropout_eval_backward, dropout_train, dropout_train_backward, relu_backward,
    relu_forward, Conv2d, Linear,
};
use crate::error::{Error, Result};

/// Batch is split into fixed chunks of this many samples for parallel
/// processing; chunk results are reduced in index order, so losses and
/// gradients are bit-identical for any worker count.
pub const PAR_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub dropout_p: f32,
    pub input_c: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Standardization statistics of the training data; stored with the
    /// model so inference is self-contained.
    pub pixel_mean: f32,
    pub pixel_std: f32,
}

impl Network {
    /// The default architecture described in the module docs.
    pub fn standard() -> Self {
        let net = Network {
            convs: vec![
                Conv2d::new(1, 8, 5, 2, 2),
                Conv2d::new(8, 16, 3, 2, 1),
                Conv2d::new(16, 16, 3, 2, 1),
                Conv2d::new(16, 32, 3, 2, 1),
                Conv2d::new(32, 32, 3, 1, 1),
            ],
            fc: Linear::new(3072, 3),
            dropout_p: 0.5,
            input_c: 1,
            input_h: 64,
            input_w: 384,
            pixel_mean: 0.0,
            pixel_std: 1.0,
        };
        let (h, w) = net.cam_layer_dims().expect("standard net has a strided conv");
        assert_eq!((h, w), (4, 24), "saliency grid must be 4x24 for 64x384 input");
        assert_eq!(net.fc.out_dim, 3);
        assert_eq!(net.flat_dim(), net.fc.in_dim);
        net
    }

    pub fn param_count(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.w.len() + c.b.len())
            .sum::<usize>()
            + self.fc.w.len()
            + self.fc.b.len()
    }

    /// Spatial dims of every conv output, in order.
    pub fn conv_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.convs.len());
        let (mut h, mut w) = (self.input_h, self.input_w);
        for conv in &self.convs {
            let (oh, ow) = conv.out_dims(h, w);
            dims.push((oh, ow));
            h = oh;
            w = ow;
        }
        dims
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = *self.conv_dims().last().expect("at least one conv");
        self.convs.last().unwrap().out_c * h * w
    }

    /// Index of the saliency target layer: the last strided convolution.
    pub fn cam_layer(&self) -> Result<usize> {
        self.convs
            .iter()
            .rposition(|c| c.stride > 1)
            .ok_or_else(|| {
                Error::Config("architecture has no strided convolution to attribute".into())
            })
    }

    pub fn cam_layer_dims(&self) -> Result<(usize, usize)> {
        Ok(self.conv_dims()[self.cam_layer()?])
    }

    /// He initialization, truncated at ±2 standard deviations (out-of-range
    /// draws are redrawn); biases stay zero.
    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        for conv in &mut self.convs {
            let std = (2.0 / conv.fan_in() as f64).sqrt();
            for w in conv.w.iter_mut() {
                *w = (truncated_standard_normal(rng) * std) as f32;
            }
            conv.b.fill(0.0);
        }
        let std = (2.0 / self.fc.in_dim as f64).sqrt();
        for w in self.fc.w.iter_mut() {
            *w = (truncated_standard_normal(rng) * std) as f32;
        }
        self.fc.b.fill(0.0);
    }

    /// Standardize raw image bytes into network input values.
    pub fn standardize(&self, pixels: &[u8]) -> Vec<f32> {
        let mean = self.pixel_mean;
        let inv = 1.0 / self.pixel_std;
        pixels.iter().map(|&p| (p as f32 - mean) * inv).collect()
    }

    /// Forward pass for one sample, keeping everything backward needs.
    pub fn forward_cached(&self, x: &[f32], mode: Mode) -> Result<(Vec<f32>, Cache)> {
        if x.len() != self.input_c * self.input_h * self.input_w {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "input has {} values, expected {}",
                    x.len(),
                    self.input_c * self.input_h * self.input_w
                ),
            });
        }
        let dims = self.conv_dims();
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut post: Vec<Vec<f32>> = Vec::with_capacity(self.convs.len());
        let (mut h, mut w) = (self.input_h, self.input_w);
        for (i, conv) in self.convs.iter().enumerate() {
            let input = if i == 0 { x } else { &post[i - 1] };
            let z = conv.forward(input, h, w);
            let a = relu_forward(&z);
            pre.push(z);
            post.push(a);
            (h, w) = dims[i];
        }
        let flat = post.last().unwrap().clone();
        let dropped = match mode {
            Mode::Train { mask } => {
                if mask.len() != flat.len() {
                    return Err(Error::ShapeMismatch {
                        context: format!(
                            "dropout mask has {} entries, expected {}",
                            mask.len(),
                            flat.len()
                        ),
                    });
                }
                dropout_train(&flat, mask)
            }
            Mode::Eval => dropout_eval(&flat, self.dropout_p),
        };
        let pred = self.fc.forward(&dropped);
        Ok((
            pred,
            Cache {
                input: x.to_vec(),
                pre,
                post,
                dropped,
            },
        ))
    }

    /// Eval-mode prediction without keeping intermediates.
    pub fn predict(&self, x: &[f32]) -> Result<Vec<f32>> {
        Ok(self.forward_cached(x, Mode::Eval)?.0)
    }

    /// Backpropagate `d_pred` through the whole network.
    pub fn backward(
        &self,
        cache: &Cache,
        d_pred: &[f32],
        mode: Mode,
        grads: &mut Gradients,
    ) {
        let flow = self.backward_inner(cache, d_pred, mode, Some(grads), None);
        debug_assert!(flow.is_none());
    }

    /// Backpropagate a prediction-space gradient only as far as the
    /// pre-ReLU output of conv layer `stop_layer`, returning that gradient.
    /// Used by saliency attribution; parameter gradients are not formed.
    pub fn backward_to_conv(&self, cache: &Cache, d_pred: &[f32], stop_layer: usize) -> Vec<f32> {
        self.backward_inner(cache, d_pred, Mode::Eval, None, Some(stop_layer))
            .expect("stop layer is in range")
    }

    fn backward_inner(
        &self,
        cache: &Cache,
        d_pred: &[f32],
        mode: Mode,
        mut grads: Option<&mut Gradients>,
        stop_layer: Option<usize>,
    ) -> Option<Vec<f32>> {
        let dims = self.conv_dims();
        let (d_dropped, gw_fc, gb_fc) = self.fc.backward(&cache.dropped, d_pred);
        if let Some(g) = grads.as_deref_mut() {
            add_into(&mut g.fc_w, &gw_fc);
            add_into(&mut g.fc_b, &gb_fc);
        }
        let mut d_post = match mode {
            Mode::Train { mask } => dropout_train_backward(&d_dropped, mask),
            Mode::Eval => dropout_eval_backward(&d_dropped, self.dropout_p),
        };
        for i in (0..self.convs.len()).rev() {
            let d_pre = relu_backward(&cache.pre[i], &d_post);
            if stop_layer == Some(i) {
                return Some(d_pre);
            }
            let (h, w) = if i == 0 {
                (self.input_h, self.input_w)
            } else {
                dims[i - 1]
            };
            let input = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let (d_in, gw, gb) = self.convs[i].backward(input, h, w, &d_pre);
            if let Some(g) = grads.as_deref_mut() {
                add_into(&mut g.conv_w[i], &gw);
                add_into(&mut g.conv_b[i], &gb);
            }
            d_post = d_in;
        }
        None
    }

    /// Sum of squared weights (biases excluded), for the regularizer.
    pub fn weight_sq_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for conv in &self.convs {
            for &w in &conv.w {
                acc += (w as f64) * (w as f64);
            }
        }
        for &w in &self.fc.w {
            acc += (w as f64) * (w as f64);
        }
        acc
    }

    /// Visit every parameter slice with its matching gradient and momentum
    /// slices, weights before biases, layers in order.
    pub fn visit_params(
        &mut self,
        grads: &Gradients,
        state: &mut Gradients,
        mut f: impl FnMut(&mut [f32], &[f32], &mut [f32]),
    ) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(&mut conv.w, &grads.conv_w[i], &mut state.conv_w[i]);
            f(&mut conv.b, &grads.conv_b[i], &mut state.conv_b[i]);
        }
        f(&mut self.fc.w, &grads.fc_w, &mut state.fc_w);
        f(&mut self.fc.b, &grads.fc_b, &mut state.fc_b);
    }
}

/// Forward-pass mode. Training needs an externally supplied dropout mask so
/// batch results do not depend on scheduling.
#[derive(Clone, Copy)]
pub enum Mode<'a> {
    Train { mask: &'a [bool] },
    Eval,
}

/// Per-sample intermediates retained for backprop.
pub struct Cache {
    pub input: Vec<f32>,
    /// Pre-ReLU conv outputs.
    pub pre: Vec<Vec<f32>>,
    /// Post-ReLU conv outputs.
    pub post: Vec<Vec<f32>>,
    /// FC input after dropout.
    pub dropped: Vec<f32>,
}

/// Parameter-shaped container used for gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub conv_w: Vec<Vec<f32>>,
    pub conv_b: Vec<Vec<f32>>,
    pub fc_w: Vec<f32>,
    pub fc_b: Vec<f32>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            conv_w: net.convs.iter().map(|c| vec![0.0; c.w.len()]).collect(),
            conv_b: net.convs.iter().map(|c| vec![0.0; c.b.len()]).collect(),
            fc_w: vec![0.0; net.fc.w.len()],
            fc_b: vec![0.0; net.fc.b.len()],
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.conv_w.iter_mut().zip(&other.conv_w) {
            add_into(a, b);
        }
        for (a, b) in self.conv_b.iter_mut().zip(&other.conv_b) {
            add_into(a, b);
        }
        add_into(&mut self.fc_w, &other.fc_w);
        add_into(&mut self.fc_b, &other.fc_b);
    }

    pub fn scale(&mut self, s: f32) {
        for v in self.conv_w.iter_mut().chain(self.conv_b.iter_mut()) {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
        for x in self.fc_w.iter_mut().chain(self.fc_b.iter_mut()) {
            *x *= s;
        }
    }
}

fn add_into(acc: &mut [f32], inc: &[f32]) {
    debug_assert_eq!(acc.len(), inc.len());
    for (a, b) in acc.iter_mut().zip(inc) {
        *a += b;
    }
}

/// Standard normal via Box–Muller, redrawn until within ±2.
fn truncated_standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// One training batch: standardized inputs, flattened row-major, one
/// dropout mask row per sample.
pub struct BatchInput<'a> {
    pub x: &'a [f32],
    pub targets: &'a [f32],
    pub masks: Option<&'a [bool]>,
    pub batch: usize,
}

/// Mean summed-squared-error over the batch plus the (λ/2)‖w‖² penalty,
/// with gradients for every parameter. The mask slice, when present, holds
/// one flat row per sample.
pub fn loss_and_grads(
    net: &Network,
    input: &BatchInput,
    weight_decay: f64,
) -> Result<(f64, Gradients)> {
    let b = input.batch;
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let sample_len = net.input_c * net.input_h * net.input_w;
    let flat = net.flat_dim();
    if input.x.len() != b * sample_len || input.targets.len() != b * 3 {
        return Err(Error::ShapeMismatch {
            context: format!(
                "batch of {b}: {} input values, {} targets",
                input.x.len(),
                input.targets.len()
            ),
        });
    }
    if let Some(masks) = input.masks {
        if masks.len() != b * flat {
            return Err(Error::ShapeMismatch {
                context: format!("{} mask bits for batch of {b}", masks.len()),
            });
        }
    }

    let indices: Vec<usize> = (0..b).collect();
    let chunk_results: Vec<Result<(f64, Gradients)>> = indices
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(net);
            let mut loss_sum = 0.0f64;
            for &s in chunk {
                let x = &input.x[s * sample_len..(s + 1) * sample_len];
                let target = &input.targets[s * 3..(s + 1) * 3];
                let mode = match input.masks {
                    Some(masks) => Mode::Train {
                        mask: &masks[s * flat..(s + 1) * flat],
                    },
                    None => Mode::Eval,
                };
                let (pred, cache) = net.forward_cached(x, mode)?;
                let mut d_pred = [0.0f32; 3];
                for k in 0..3 {
                    let e = pred[k] - target[k];
                    loss_sum += (e as f64) * (e as f64);
                    d_pred[k] = 2.0 * e / b as f32;
                }
                net.backward(&cache, &d_pred, mode, &mut grads);
            }
            Ok((loss_sum, grads))
        })
        .collect();

    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0f64;
    for r in chunk_results {
        let (l, g) = r?;
        loss += l;
        total.add(&g);
    }
    loss /= b as f64;

    if weight_decay != 0.0 {
        loss += 0.5 * weight_decay * net.weight_sq_norm();
        let wd = weight_decay as f32;
        for (i, conv) in net.convs.iter().enumerate() {
            for (g, &w) in total.conv_w[i].iter_mut().zip(&conv.w) {
                *g += wd * w;
            }
        }
        for (g, &w) in total.fc_w.iter_mut().zip(&net.fc.w) {
            *g += wd * w;
        }
    }

    if !loss.is_finite() {
        return Err(Error::Divergence {
            layer: diagnose_divergence(net, input),
        });
    }
    Ok((loss, total))
}

/// Pure mean squared error (no regularizer) of eval-mode predictions over a
/// flat batch; deterministic parallel reduction.
pub fn eval_mse(net: &Network, x: &[f32], targets: &[f32], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let sample_len = net.input_c * net.input_h * net.input_w;
    let indices: Vec<usize> = (0..n).collect();
    let sums: Vec<Result<f64>> = indices
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0f64;
            for &s in chunk {
                let pred = net.predict(&x[s * sample_len..(s + 1) * sample_len])?;
                for k in 0..3 {
                    let e = (pred[k] - targets[s * 3 + k]) as f64;
                    acc += e * e;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0f64;
    for s in sums {
        total += s?;
    }
    Ok(total / n as f64)
}

/// Walk the first offending sample layer by layer and name where values
/// first stop being finite. Only called once a non-finite loss is seen, so
/// speed is irrelevant here.
fn diagnose_divergence(net: &Network, input: &BatchInput) -> String {
    let sample_len = net.input_c * net.input_h * net.input_w;
    let flat = net.flat_dim();
    for conv in net.convs.iter().enumerate() {
        let (i, c) = conv;
        if !c.w.iter().chain(&c.b).all(|v| v.is_finite()) {
            return format!("conv{} parameters", i + 1);
        }
    }
    if !net.fc.w.iter().chain(&net.fc.b).all(|v| v.is_finite()) {
        return "fc parameters".into();
    }
    for s in 0..input.batch {
        let x = &input.x[s * sample_len..(s + 1) * sample_len];
        let mode = match input.masks {
            Some(masks) => Mode::Train {
                mask: &masks[s * flat..(s + 1) * flat],
            },
            None => Mode::Eval,
        };
        if let Ok((pred, cache)) = net.forward_cached(x, mode) {
            for (i, z) in cache.pre.iter().enumerate() {
                if !z.iter().all(|v| v.is_finite()) {
                    return format!("conv{}", i + 1);
                }
            }
            if !pred.iter().all(|v| v.is_finite()) {
                return "fc".into();
            }
        }
    }
    "loss".into()
}
