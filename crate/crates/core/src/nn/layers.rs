//! Layer primitives with hand-written forward and backward passes.
//!
//! Everything is f32, contiguous, row-major. Convolutions are direct loops
//! (no im2col, no BLAS): at this network size the arithmetic is small enough
//! that clarity and an airtight finite-difference story beat raw throughput.

use crate::error::{Error, Result};

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "tensor shape {shape:?} needs {expect} values, got {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu_forward(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Gradient through ReLU given the *pre-activation* values. The kink at 0
/// takes the zero branch.
pub fn relu_backward(pre: &[f32], grad_out: &[f32]) -> Vec<f32> {
    pre.iter()
        .zip(grad_out)
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Classic (non-inverted) dropout: training multiplies by a Bernoulli keep
/// mask with no rescale, evaluation multiplies by the keep probability.
pub fn dropout_train(x: &[f32], mask: &[bool]) -> Vec<f32> {
    debug_assert_eq!(x.len(), mask.len());
    x.iter()
        .zip(mask)
        .map(|(&v, &keep)| if keep { v } else { 0.0 })
        .collect()
}

pub fn dropout_train_backward(grad_out: &[f32], mask: &[bool]) -> Vec<f32> {
    grad_out
        .iter()
        .zip(mask)
        .map(|(&g, &keep)| if keep { g } else { 0.0 })
        .collect()
}

pub fn dropout_eval(x: &[f32], p: f32) -> Vec<f32> {
    let keep = 1.0 - p;
    x.iter().map(|&v| v * keep).collect()
}

pub fn dropout_eval_backward(grad_out: &[f32], p: f32) -> Vec<f32> {
    let keep = 1.0 - p;
    grad_out.iter().map(|&g| g * keep).collect()
}

/// 2-D convolution with zero padding. Weights are laid out
/// `[out_c][in_c][kh][kw]`, images `[channels][height][width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            in_c,
            out_c,
            kh: k,
            kw: k,
            stride,
            pad,
            w: vec![0.0; out_c * in_c * k * k],
            b: vec![0.0; out_c],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    /// Valid output-coordinate range along one spatial axis for a given
    /// kernel offset: those `o` with `0 <= o*stride + k - pad < extent`.
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi_num = extent + self.pad;
        let hi = if hi_num > k {
            ((hi_num - 1 - k) / self.stride + 1).min(out_extent)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unfold the input into a patch matrix of `fan_in` rows by `oh*ow`
    /// columns; row `(ic*kh + ky)*kw + kx` holds the input value each output
    /// position sees at that kernel offset (zero where the kernel hangs over
    /// the padding). Turns the convolution into a matrix product whose inner
    /// loops run over contiguous rows.
    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
        let p = oh * ow;
        let mut cols = vec![0.0f32; self.fan_in() * p];
        for ic in 0..self.in_c {
            let in_base = ic * h * w;
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = self.valid_range(ky, h, oh);
                for kx in 0..self.kw {
                    let (ox_lo, ox_hi) = self.valid_range(kx, w, ow);
                    let row = ((ic * self.kh + ky) * self.kw + kx) * p;
                    for oy in oy_lo..oy_hi {
                        let in_row = in_base + (oy * self.stride + ky - self.pad) * w;
                        let col_row = row + oy * ow;
                        if self.stride == 1 {
                            let src = in_row + ox_lo + kx - self.pad;
                            cols[col_row + ox_lo..col_row + ox_hi]
                                .copy_from_slice(&x[src..src + ox_hi - ox_lo]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                cols[col_row + ox] = x[in_row + ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter a patch-matrix gradient back onto the input (adjoint of
    /// `im2col`): overlapping patches accumulate.
    fn col2im(&self, d_cols: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
        let p = oh * ow;
        let mut gin = vec![0.0f32; self.in_c * h * w];
        for ic in 0..self.in_c {
            let in_base = ic * h * w;
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = self.valid_range(ky, h, oh);
                for kx in 0..self.kw {
                    let (ox_lo, ox_hi) = self.valid_range(kx, w, ow);
                    let row = ((ic * self.kh + ky) * self.kw + kx) * p;
                    for oy in oy_lo..oy_hi {
                        let in_row = in_base + (oy * self.stride + ky - self.pad) * w;
                        let col_row = row + oy * ow;
                        for ox in ox_lo..ox_hi {
                            gin[in_row + ox * self.stride + kx - self.pad] +=
                                d_cols[col_row + ox];
                        }
                    }
                }
            }
        }
        gin
    }

    pub fn forward(&self, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_c * h * w);
        let (oh, ow) = self.out_dims(h, w);
        let p = oh * ow;
        let k_dim = self.fan_in();
        let cols = self.im2col(x, h, w, oh, ow);
        let mut out = vec![0.0f32; self.out_c * p];
        for oc in 0..self.out_c {
            let out_row = &mut out[oc * p..(oc + 1) * p];
            out_row.fill(self.b[oc]);
            for k in 0..k_dim {
                axpy(self.w[oc * k_dim + k], &cols[k * p..(k + 1) * p], out_row);
            }
        }
        out
    }

    /// Returns (grad wrt input, grad wrt weights, grad wrt biases).
    pub fn backward(
        &self,
        x: &[f32],
        h: usize,
        w: usize,
        grad_out: &[f32],
    ) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let (oh, ow) = self.out_dims(h, w);
        let p = oh * ow;
        debug_assert_eq!(grad_out.len(), self.out_c * p);
        let k_dim = self.fan_in();
        let cols = self.im2col(x, h, w, oh, ow);

        let mut gw = vec![0.0f32; self.w.len()];
        let mut gb = vec![0.0f32; self.out_c];
        let mut d_cols = vec![0.0f32; k_dim * p];
        for oc in 0..self.out_c {
            let g_row = &grad_out[oc * p..(oc + 1) * p];
            gb[oc] = g_row.iter().sum();
            for k in 0..k_dim {
                gw[oc * k_dim + k] = dot(g_row, &cols[k * p..(k + 1) * p]);
                axpy(
                    self.w[oc * k_dim + k],
                    g_row,
                    &mut d_cols[k * p..(k + 1) * p],
                );
            }
        }
        let gin = self.col2im(&d_cols, h, w, oh, ow);
        (gin, gw, gb)
    }
}

/// `acc += a·x`, elementwise over equal-length slices.
fn axpy(a: f32, x: &[f32], acc: &mut [f32]) {
    debug_assert_eq!(x.len(), acc.len());
    for (dst, &src) in acc.iter_mut().zip(x) {
        *dst += a * src;
    }
}

/// Dot product with eight fixed-order partial sums, so the reduction can
/// vectorize while staying deterministic.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f32; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            lanes[l] += ca[l] * cb[l];
        }
    }
    let mut acc = lanes.iter().sum::<f32>();
    for (&x, &y) in a
        .chunks_exact(8)
        .remainder()
        .iter()
        .zip(b.chunks_exact(8).remainder())
    {
        acc += x * y;
    }
    acc
}

/// Fully connected layer; weights `[out][in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            w: vec![0.0; out_dim * in_dim],
            b: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.b.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0f32;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            *out_v += acc;
        }
        out
    }

    pub fn backward(&self, x: &[f32], grad_out: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        debug_assert_eq!(grad_out.len(), self.out_dim);
        let mut gin = vec![0.0f32; self.in_dim];
        let mut gw = vec![0.0f32; self.w.len()];
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] = g * x[i];
                gin[i] += g * row[i];
            }
        }
        (gin, gw, grad_out.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::reference::{grads_close, to_f64, RefConv, RefLinear};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
        (0..n).map(|_| (rng.random::<f32>() - 0.5) * 2.0 * scale).collect()
    }

    #[test]
    fn tensor_shape_checks() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.numel(), 24);
        assert!(t.all_finite());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        let mut t = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(!t.all_finite());
        t.data[1] = 0.0;
        assert!(t.all_finite());
    }

    #[test]
    fn relu_and_dropout_basics() {
        let x = vec![-1.0, 0.0, 2.0, -0.5];
        assert_eq!(relu_forward(&x), vec![0.0, 0.0, 2.0, 0.0]);
        let g = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(relu_backward(&x, &g), vec![0.0, 0.0, 1.0, 0.0]);

        let mask = vec![true, false, true, false];
        assert_eq!(dropout_train(&x, &mask), vec![-1.0, 0.0, 2.0, 0.0]);
        assert_eq!(dropout_train_backward(&g, &mask), vec![1.0, 0.0, 1.0, 0.0]);

        // p = 0: training mask keeps everything; eval scaling is identity.
        let full = vec![true; 4];
        assert_eq!(dropout_train(&x, &full), x);
        assert_eq!(dropout_eval(&x, 0.0), x);
        // Eval at p = 0.5 halves values.
        assert_eq!(dropout_eval(&[2.0, -4.0], 0.5), vec![1.0, -2.0]);
    }

    #[test]
    fn conv_hand_computed_example() {
        // 3×3 input, 3×3 kernel, no pad, stride 1: a single dot product.
        let mut conv = Conv2d::new(1, 1, 3, 1, 0);
        conv.w = vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.0, 0.0, 1.0, 0.0];
        conv.b = vec![0.25];
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let y = conv.forward(&x, 3, 3);
        // 1·1 + 0·2 + (−1)·3 + 2·4 + 0.5·5 + 0·6 + 0·7 + 1·8 + 0·9 + 0.25
        assert_eq!(y, vec![1.0 - 3.0 + 8.0 + 2.5 + 8.0 + 0.25]);

        // Identity kernel with stride 1, pad 1 reproduces the input.
        let mut ident = Conv2d::new(1, 1, 3, 1, 1);
        ident.w[4] = 1.0; // center tap
        let x = vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0, -2.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(ident.forward(&x, 3, 4), x);
    }

    #[test]
    fn conv_stride_two_with_padding_hand_example() {
        // 4×4 input, 3×3 kernel of ones, stride 2, pad 1. Each output is the
        // sum of the 3×3 neighborhood clipped to the image.
        let mut conv = Conv2d::new(1, 1, 3, 2, 1);
        conv.w = vec![1.0; 9];
        #[rustfmt::skip]
        let x = vec![
            1.0, 2.0, 3.0, 4.0,
            5.0, 6.0, 7.0, 8.0,
            9.0, 10.0, 11.0, 12.0,
            13.0, 14.0, 15.0, 16.0,
        ];
        let y = conv.forward(&x, 4, 4);
        assert_eq!(conv.out_dims(4, 4), (2, 2));
        // Windows centered at (0,0), (0,2), (2,0), (2,2).
        assert_eq!(
            y,
            vec![
                1.0 + 2.0 + 5.0 + 6.0,
                2.0 + 3.0 + 4.0 + 6.0 + 7.0 + 8.0,
                5.0 + 6.0 + 9.0 + 10.0 + 13.0 + 14.0,
                6.0 + 7.0 + 8.0 + 10.0 + 11.0 + 12.0 + 14.0 + 15.0 + 16.0,
            ]
        );
    }

    #[test]
    fn conv_default_architecture_shapes() {
        assert_eq!(Conv2d::new(1, 8, 5, 2, 2).out_dims(64, 384), (32, 192));
        assert_eq!(Conv2d::new(8, 16, 3, 2, 1).out_dims(32, 192), (16, 96));
        assert_eq!(Conv2d::new(16, 16, 3, 2, 1).out_dims(16, 96), (8, 48));
        assert_eq!(Conv2d::new(16, 32, 3, 2, 1).out_dims(8, 48), (4, 24));
        assert_eq!(Conv2d::new(32, 32, 3, 1, 1).out_dims(4, 24), (4, 24));
    }

    /// Checks the conv against the naive f64 reference: the forward values
    /// must agree to f32 precision, and the analytic backward pass must
    /// match central finite differences of a linear functional Σ cᵢ·yᵢ
    /// taken on the reference.
    fn check_conv_gradients(conv: &Conv2d, h: usize, w: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn_vec(&mut rng, conv.in_c * h * w, 1.0);
        let (oh, ow) = conv.out_dims(h, w);
        let c = randn_vec(&mut rng, conv.out_c * oh * ow, 1.0);

        let xr = to_f64(&x);
        let rc = RefConv::from(conv);
        let y = conv.forward(&x, h, w);
        let yr = rc.forward(&xr, h, w);
        assert_eq!(y.len(), yr.len());
        for (a, b) in y.iter().zip(&yr) {
            assert!((*a as f64 - b).abs() < 1e-5, "forward mismatch {a} vs {b}");
        }

        let loss = |rc: &RefConv, xr: &[f64]| -> f64 {
            rc.forward(xr, h, w)
                .iter()
                .zip(&c)
                .map(|(&y, &ci)| y * ci as f64)
                .sum()
        };

        let (gin, gw, gb) = conv.backward(&x, h, w, &c);
        let eps = 1e-5f64;
        let fd_of = |up: f64, down: f64| (up - down) / (2.0 * eps);

        for i in 0..x.len() {
            let mut xp = xr.clone();
            let mut xm = xr.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let fd = fd_of(loss(&rc, &xp), loss(&rc, &xm));
            assert!(grads_close(gin[i], fd, 1e-4, 1e-4), "gin[{i}]: {} vs {fd}", gin[i]);
        }
        for i in 0..conv.w.len() {
            let mut cp = RefConv::from(conv);
            let mut cm = RefConv::from(conv);
            cp.w[i] += eps;
            cm.w[i] -= eps;
            let fd = fd_of(loss(&cp, &xr), loss(&cm, &xr));
            assert!(grads_close(gw[i], fd, 1e-4, 1e-4), "gw[{i}]: {} vs {fd}", gw[i]);
        }
        for i in 0..conv.b.len() {
            let mut cp = RefConv::from(conv);
            let mut cm = RefConv::from(conv);
            cp.b[i] += eps;
            cm.b[i] -= eps;
            let fd = fd_of(loss(&cp, &xr), loss(&cm, &xr));
            assert!(grads_close(gb[i], fd, 1e-4, 1e-4), "gb[{i}]: {} vs {fd}", gb[i]);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Stride 1, no padding.
        let mut c1 = Conv2d::new(2, 3, 3, 1, 0);
        c1.w = randn_vec(&mut rng, c1.w.len(), 0.5);
        c1.b = randn_vec(&mut rng, 3, 0.5);
        check_conv_gradients(&c1, 5, 6, 10);

        // Stride 2 with padding (the architecture's workhorse shape).
        let mut c2 = Conv2d::new(2, 2, 3, 2, 1);
        c2.w = randn_vec(&mut rng, c2.w.len(), 0.5);
        c2.b = randn_vec(&mut rng, 2, 0.5);
        check_conv_gradients(&c2, 6, 8, 11);

        // 5×5 kernel, stride 2, pad 2 (first layer's shape).
        let mut c3 = Conv2d::new(1, 2, 5, 2, 2);
        c3.w = randn_vec(&mut rng, c3.w.len(), 0.3);
        c3.b = randn_vec(&mut rng, 2, 0.3);
        check_conv_gradients(&c3, 8, 8, 12);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut lin = Linear::new(7, 3);
        lin.w = randn_vec(&mut rng, 21, 0.5);
        lin.b = randn_vec(&mut rng, 3, 0.5);
        let x = randn_vec(&mut rng, 7, 1.0);
        let c = randn_vec(&mut rng, 3, 1.0);
        let xr = to_f64(&x);

        let loss = |rl: &RefLinear, xr: &[f64]| -> f64 {
            rl.forward(xr)
                .iter()
                .zip(&c)
                .map(|(&y, &ci)| y * ci as f64)
                .sum()
        };

        let (gin, gw, gb) = lin.backward(&x, &c);
        let eps = 1e-5f64;
        for i in 0..x.len() {
            let mut xp = xr.clone();
            let mut xm = xr.clone();
            xp[i] += eps;
            xm[i] -= eps;
            let rl = RefLinear::from(&lin);
            let fd = (loss(&rl, &xp) - loss(&rl, &xm)) / (2.0 * eps);
            assert!(grads_close(gin[i], fd, 1e-4, 1e-4), "gin[{i}]: {} vs {fd}", gin[i]);
        }
        for i in 0..lin.w.len() {
            let mut lp = RefLinear::from(&lin);
            let mut lm = RefLinear::from(&lin);
            lp.w[i] += eps;
            lm.w[i] -= eps;
            let fd = (loss(&lp, &xr) - loss(&lm, &xr)) / (2.0 * eps);
            assert!(grads_close(gw[i], fd, 1e-4, 1e-4), "gw[{i}]: {} vs {fd}", gw[i]);
        }
        for i in 0..lin.b.len() {
            let mut lp = RefLinear::from(&lin);
            let mut lm = RefLinear::from(&lin);
            lp.b[i] += eps;
            lm.b[i] -= eps;
            let fd = (loss(&lp, &xr) - loss(&lm, &xr)) / (2.0 * eps);
            assert!(grads_close(gb[i], fd, 1e-4, 1e-4), "gb[{i}]: {} vs {fd}", gb[i]);
        }
    }

    #[test]
    fn linear_zero_weights_give_bias() {
        let mut lin = Linear::new(4, 2);
        lin.b = vec![0.5, -1.5];
        assert_eq!(lin.forward(&[9.0, 8.0, 7.0, 6.0]), vec![0.5, -1.5]);
    }
}
