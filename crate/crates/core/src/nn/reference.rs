//! Slow f64 reference implementations used for verification.
//!
//! These mirror the production layers with deliberately different structure
//! (naive per-pixel loops with signed bounds checks instead of precomputed
//! valid ranges) so the two can check each other. Finite differences are
//! taken here in f64, where the noise floor is far below any tolerance.
//! Not intended for production inference — orders of magnitude slower.

use super::layers::{Conv2d, Linear};
use super::network::Network;

pub struct RefConv {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl From<&Conv2d> for RefConv {
    fn from(c: &Conv2d) -> Self {
        RefConv {
            in_c: c.in_c,
            out_c: c.out_c,
            kh: c.kh,
            kw: c.kw,
            stride: c.stride,
            pad: c.pad,
            w: c.w.iter().map(|&v| v as f64).collect(),
            b: c.b.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl RefConv {
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_dims(h, w);
        let mut out = vec![0.0; self.out_c * oh * ow];
        for oc in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.b[oc];
                    for ic in 0..self.in_c {
                        for ky in 0..self.kh {
                            for kx in 0..self.kw {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let wi =
                                        ((oc * self.in_c + ic) * self.kh + ky) * self.kw + kx;
                                    let xi = (ic * h + iy as usize) * w + ix as usize;
                                    acc += self.w[wi] * x[xi];
                                }
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }
}

pub struct RefLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl From<&Linear> for RefLinear {
    fn from(l: &Linear) -> Self {
        RefLinear {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            w: l.w.iter().map(|&v| v as f64).collect(),
            b: l.b.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl RefLinear {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let mut acc = self.b[o];
                for i in 0..self.in_dim {
                    acc += self.w[o * self.in_dim + i] * x[i];
                }
                acc
            })
            .collect()
    }
}

/// Whole-network f64 mirror including the training loss, so parameter
/// gradients can be finite-differenced without f32 noise.
pub struct RefNet {
    pub convs: Vec<RefConv>,
    pub fc: RefLinear,
    pub dropout_p: f64,
    pub input_h: usize,
    pub input_w: usize,
}

impl From<&Network> for RefNet {
    fn from(net: &Network) -> Self {
        RefNet {
            convs: net.convs.iter().map(RefConv::from).collect(),
            fc: RefLinear::from(&net.fc),
            dropout_p: net.dropout_p as f64,
            input_h: net.input_h,
            input_w: net.input_w,
        }
    }
}

impl RefNet {
    pub fn forward(&self, x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        let (mut h, mut w) = (self.input_h, self.input_w);
        let mut cur = x.to_vec();
        for conv in &self.convs {
            let z = conv.forward(&cur, h, w);
            cur = z.into_iter().map(|v| v.max(0.0)).collect();
            (h, w) = conv.out_dims(h, w);
        }
        match mask {
            Some(m) => {
                for (v, &keep) in cur.iter_mut().zip(m) {
                    if !keep {
                        *v = 0.0;
                    }
                }
            }
            None => {
                let keep = 1.0 - self.dropout_p;
                for v in cur.iter_mut() {
                    *v *= keep;
                }
            }
        }
        self.fc.forward(&cur)
    }

    /// Mean summed-squared-error plus (λ/2)·Σw² over weights, matching the
    /// production batch loss. `masks`, when given, holds one row per sample.
    pub fn loss(
        &self,
        x: &[f64],
        targets: &[f64],
        masks: Option<&[bool]>,
        batch: usize,
        weight_decay: f64,
    ) -> f64 {
        let sample_len = self.input_h * self.input_w;
        let flat = masks.map(|m| m.len() / batch).unwrap_or(0);
        let mut loss = 0.0;
        for s in 0..batch {
            let mask = masks.map(|m| &m[s * flat..(s + 1) * flat]);
            let pred = self.forward(&x[s * sample_len..(s + 1) * sample_len], mask);
            for k in 0..3 {
                let e = pred[k] - targets[s * 3 + k];
                loss += e * e;
            }
        }
        loss /= batch as f64;
        let mut wsq = 0.0;
        for conv in &self.convs {
            wsq += conv.w.iter().map(|w| w * w).sum::<f64>();
        }
        wsq += self.fc.w.iter().map(|w| w * w).sum::<f64>();
        loss + 0.5 * weight_decay * wsq
    }
}

pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Combined absolute/relative closeness used by the gradient checks.
pub fn grads_close(analytic: f32, reference: f64, atol: f64, rtol: f64) -> bool {
    let a = analytic as f64;
    (a - reference).abs() <= atol + rtol * a.abs().max(reference.abs())
}
