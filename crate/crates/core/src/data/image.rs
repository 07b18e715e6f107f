//! Image blobs are `3×H×W` `CANT` tensors holding raw 8-bit intensities
//! (0..=255). Loading rescales to [0, 1], resizes bilinearly (corner-aligned)
//! and applies per-channel mean/std normalization.

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, SampleRecord};
use crate::error::{CanError, Result};
use crate::tensor::{read_blob, Tensor};

pub const PIXEL_SCALE: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn apply(&self, image: &mut Tensor) {
        let plane = image.len() / 3;
        for (c, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Corner-aligned bilinear resize of every plane of a `C×H×W` tensor.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = match *x.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(CanError::Data(format!("resize expects C×H×W, got {:?}", x.shape()))),
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(CanError::Data("resize with an empty dimension".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for i in 0..out_h {
            let (r0, r1, fr) = coord(i, h, out_h);
            for j in 0..out_w {
                let (c0, c1, fc) = coord(j, w, out_w);
                let top = plane[r0 * w + c0] * (1.0 - fc) + plane[r0 * w + c1] * fc;
                let bottom = plane[r1 * w + c0] * (1.0 - fc) + plane[r1 * w + c1] * fc;
                out.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

pub fn load_image_tensor(
    manifest: &Manifest,
    record: &SampleRecord,
    target_h: usize,
    target_w: usize,
    norm: &Normalization,
) -> Result<Tensor> {
    let raw = read_blob(manifest.path_of(record))?;
    if raw.ndim() != 3 || raw.shape()[0] != 3 {
        return Err(CanError::Data(format!(
            "{}: expected a 3×H×W image blob, got {:?}",
            record.file,
            raw.shape()
        )));
    }
    let scaled = raw.map(|v| v / PIXEL_SCALE);
    let mut img = bilinear_resize(&scaled, target_h, target_w)?;
    norm.apply(&mut img);
    Ok(img)
}
