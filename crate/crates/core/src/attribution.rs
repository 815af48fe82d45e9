//! Gradient-weighted saliency over the network's visual input.
//!
//! The attribution target is the last strided convolution (the penultimate
//! conv layer), whose 4×24 feature grid is the coarsest spatial map the
//! network computes. A scalar of the output vector is backpropagated to
//! that layer's pre-ReLU activations; channels are weighted by their
//! spatially averaged gradient, combined, rectified, bilinearly upsampled
//! back to input resolution, and max-normalized.

use crate::error::Result;
use crate::nn::network::{Mode, Network};
use crate::render::{CubeImage, IMAGE_HEIGHT, IMAGE_WIDTH};

/// Which scalar of the 3-vector prediction is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttributionTarget {
    /// Euclidean norm of the prediction (overall influence on motion).
    #[default]
    Norm,
    X,
    Y,
    Z,
}

impl AttributionTarget {
    /// The scalar value and its gradient with respect to the prediction.
    fn scalar_and_grad(self, pred: &[f32]) -> (f32, [f32; 3]) {
        match self {
            AttributionTarget::Norm => {
                let n = (pred[0] * pred[0] + pred[1] * pred[1] + pred[2] * pred[2]).sqrt();
                if n > 0.0 {
                    (n, [pred[0] / n, pred[1] / n, pred[2] / n])
                } else {
                    (0.0, [0.0; 3])
                }
            }
            AttributionTarget::X => (pred[0], [1.0, 0.0, 0.0]),
            AttributionTarget::Y => (pred[1], [0.0, 1.0, 0.0]),
            AttributionTarget::Z => (pred[2], [0.0, 0.0, 1.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// Rectified channel-weighted activation map at feature resolution.
    pub raw: Vec<f32>,
    pub raw_h: usize,
    pub raw_w: usize,
    /// Bilinear upsample of `raw` at input resolution, max-normalized to
    /// [0,1] (an all-zero map stays all-zero).
    pub upsampled: Vec<f32>,
    /// The prediction the attribution was computed from.
    pub prediction: [f32; 3],
    /// Value of the attributed scalar.
    pub scalar: f32,
}

/// Compute the saliency map of one image under the given scalar target.
pub fn grad_cam(net: &Network, image: &CubeImage, target: AttributionTarget) -> Result<SaliencyMap> {
    let layer = net.cam_layer()?;
    let (fh, fw) = net.cam_layer_dims()?;
    let channels = net.convs[layer].out_c;

    let x = net.standardize(&image.pixels);
    let (pred, cache) = net.forward_cached(&x, Mode::Eval)?;
    let (scalar, d_pred) = target.scalar_and_grad(&pred);
    let d_act = net.backward_to_conv(&cache, &d_pred, layer);
    let act = &cache.pre[layer];

    let plane = fh * fw;
    let mut raw = vec![0.0f32; plane];
    for k in 0..channels {
        let grads = &d_act[k * plane..(k + 1) * plane];
        let weight = grads.iter().sum::<f32>() / plane as f32;
        let maps = &act[k * plane..(k + 1) * plane];
        for (r, &a) in raw.iter_mut().zip(maps) {
            *r += weight * a;
        }
    }
    for v in raw.iter_mut() {
        *v = v.max(0.0);
    }

    let mut upsampled = upsample_bilinear(&raw, fh, fw, net.input_h, net.input_w);
    let max = upsampled.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        for v in upsampled.iter_mut() {
            *v /= max;
        }
    }

    Ok(SaliencyMap {
        raw,
        raw_h: fh,
        raw_w: fw,
        upsampled,
        prediction: [pred[0], pred[1], pred[2]],
        scalar,
    })
}

/// Bilinear upsampling with cell-center alignment: destination pixel
/// centers map to `(i + 0.5)·src/dst − 0.5` in source coordinates, clamped
/// at the borders.
fn upsample_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dh * dw];
    let ry = sh as f64 / dh as f64;
    let rx = sw as f64 / dw as f64;
    for dy in 0..dh {
        let sy = ((dy as f64 + 0.5) * ry - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let fy = (sy - y0 as f64) as f32;
        for dx in 0..dw {
            let sx = ((dx as f64 + 0.5) * rx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let fx = (sx - x0 as f64) as f32;
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out[dy * dw + dx] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Map a saliency value in [0,1] to the red–blue colormap: zero influence
/// is blue, maximum influence is red.
pub fn colormap(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (v * 255.0).round() as u8,
        0,
        ((1.0 - v) * 255.0).round() as u8,
    ]
}

/// Blend the colormapped saliency over the grayscale image:
/// `out = alpha·colormap(map) + (1−alpha)·gray`. Returns interleaved RGB.
pub fn blend_overlay(map: &SaliencyMap, image: &CubeImage, alpha: f32) -> Vec<u8> {
    assert_eq!(map.upsampled.len(), image.pixels.len(), "resolution mismatch");
    let alpha = alpha.clamp(0.0, 1.0);
    let mut out = Vec::with_capacity(image.pixels.len() * 3);
    for (&v, &g) in map.upsampled.iter().zip(&image.pixels) {
        let c = colormap(v);
        for ch in 0..3 {
            let blended = alpha * c[ch] as f32 + (1.0 - alpha) * g as f32;
            out.push(blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Binary PPM (P6) encoding of an interleaved RGB overlay at input
/// resolution.
pub fn overlay_to_ppm(rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), IMAGE_WIDTH * IMAGE_HEIGHT * 3);
    let mut out = format!("P6\n{IMAGE_WIDTH} {IMAGE_HEIGHT}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// The raw feature-resolution map as CSV (one row per feature row).
pub fn raw_map_csv(map: &SaliencyMap) -> String {
    let mut out = String::new();
    for r in 0..map.raw_h {
        let row: Vec<String> = (0..map.raw_w)
            .map(|c| map.raw[r * map.raw_w + c].to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
