//! Neural building blocks: convolution, adaptive pooling, linear maps,
//! softmax and L2 normalization.

pub mod conv;
pub mod pool;

pub use conv::{conv2d, he_uniform, uniform, Conv2dLayer};
pub use pool::{adaptive_pool2d, adaptive_pool_params, PoolGeometry};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// Softmax over the last axis with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    softmax_rows(logits)
}

pub(crate) fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let k = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("softmax of a scalar"))?;
    if k == 0 {
        return Err(shape_err!("softmax over an empty axis"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

/// Divides `v` by `max(||v||, eps)` along its last axis.
pub fn l2_normalize(v: &Tensor, eps: f64) -> Result<Tensor> {
    l2_normalize_rows(v, eps).map(|(t, _)| t)
}

pub(crate) fn l2_normalize_rows(x: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>)> {
    let d = *x
        .shape()
        .last()
        .ok_or_else(|| shape_err!("l2_normalize of a scalar"))?;
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.len() / d.max(1));
    for row in out.data_mut().chunks_mut(d.max(1)) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = n.max(eps);
        row.iter_mut().for_each(|v| *v /= denom);
        norms.push(n);
    }
    Ok((out, norms))
}

/// Squared Euclidean distances between all pairs of rows of a B×d matrix.
pub fn pairwise_sq_dist(x: &Tensor) -> Result<Tensor> {
    let (b, d) = match *x.shape() {
        [b, d] => (b, d),
        _ => return Err(shape_err!("pairwise distances need B×d, got {:?}", x.shape())),
    };
    let mut out = vec![0.0; b * b];
    for i in 0..b {
        let xi = &x.data()[i * d..(i + 1) * d];
        for j in i + 1..b {
            let xj = &x.data()[j * d..(j + 1) * d];
            let s: f64 = xi.iter().zip(xj).map(|(p, q)| (p - q) * (p - q)).sum();
            out[i * b + j] = s;
            out[j * b + i] = s;
        }
    }
    Tensor::new(vec![b, b], out)
}

/// Fully connected layer `y = x W^T (+ b)` with weight `out × in`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(shape_err!("linear layer {name}: dimensions must be positive"));
        }
        let bound = (3.0 / in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(&[out_dim, in_dim], bound, rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(LinearLayer { weight, bias })
    }

    /// `x` is B×in; returns B×out.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul_nt(x, w)?;
        match self.bias {
            None => Ok(y),
            Some(b) => {
                let rows = tape.shape(y)[0];
                let bias = store.value(b);
                let ones = tape.leaf(Tensor::ones(&[rows, 1]));
                let bv = tape.param(store, b);
                let b2 = tape.reshape(bv, &[1, bias.len()])?;
                let tiled = tape.matmul(ones, b2)?;
                tape.add(y, tiled)
            }
        }
    }

    /// Scaled cosine logits: `scale * <normalize(x_row), normalize(w_row)>`.
    pub fn cosine_forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, scale: f64) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let wn = tape.l2_normalize(w, DEFAULT_NORM_EPS)?;
        let xn = tape.l2_normalize(x, DEFAULT_NORM_EPS)?;
        let cos = tape.matmul_nt(xn, wn)?;
        tape.scale(cos, scale)
    }
}
