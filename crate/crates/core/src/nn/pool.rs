//! Adaptive pooling with zero padding.
//!
//! Window geometry for each spatial axis is inferred from input and output
//! sizes: `stride = floor(IS / OS)` and `kernel = IS - (OS - 1) * stride`, so
//! the last window always ends exactly on the final input cell.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, CanError, Result};
use crate::tensor::{ReduceMode, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub input_size: usize,
    pub output_size: usize,
    pub stride: usize,
    pub kernel: usize,
    pub padding: usize,
}

impl PoolGeometry {
    /// Start offset of output window `i`.
    pub fn window_start(&self, i: usize) -> usize {
        i * self.stride
    }
}

pub fn adaptive_pool_params(input_size: usize, output_size: usize) -> Result<PoolGeometry> {
    if output_size < 1 || output_size > input_size {
        return Err(CanError::InvalidArgument(format!(
            "adaptive pooling needs 1 <= OS <= IS, got IS={input_size} OS={output_size}"
        )));
    }
    let stride = input_size / output_size;
    let kernel = input_size - (output_size - 1) * stride;
    Ok(PoolGeometry {
        input_size,
        output_size,
        stride,
        kernel,
        padding: 0,
    })
}

/// Saved forward state for the pooling backward pass.
#[derive(Clone, Debug)]
pub(crate) struct PoolSaved {
    pub rows: PoolGeometry,
    pub cols: PoolGeometry,
    pub mode: ReduceMode,
    /// Per output cell, the flat in-plane index of the winning input (max mode).
    pub argmax: Vec<usize>,
}

/// Pools the two trailing axes of `x`; all leading axes are treated as
/// independent planes.
pub(crate) fn pool_forward(
    x: &Tensor,
    out_h: usize,
    out_w: usize,
    mode: ReduceMode,
) -> Result<(Tensor, PoolSaved)> {
    let nd = x.ndim();
    if nd < 2 {
        return Err(shape_err!("adaptive pooling needs >= 2 dims, got {:?}", x.shape()));
    }
    let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let rows = adaptive_pool_params(h, out_h)?;
    let cols = adaptive_pool_params(w, out_w)?;
    let planes = x.len() / (h * w);
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    let mut argmax = Vec::new();
    let area = (rows.kernel * cols.kernel) as f64;
    for p in 0..planes {
        let plane = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..out_h {
            let r0 = rows.window_start(i);
            for j in 0..out_w {
                let c0 = cols.window_start(j);
                match mode {
                    ReduceMode::Max => {
                        let mut best = r0 * w + c0;
                        for r in r0..r0 + rows.kernel {
                            for c in c0..c0 + cols.kernel {
                                if plane[r * w + c] > plane[best] {
                                    best = r * w + c;
                                }
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(best);
                    }
                    ReduceMode::Mean => {
                        let mut acc = 0.0;
                        for r in r0..r0 + rows.kernel {
                            for c in c0..c0 + cols.kernel {
                                acc += plane[r * w + c];
                            }
                        }
                        out.push(acc / area);
                    }
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = out_h;
    shape[nd - 1] = out_w;
    Ok((
        Tensor::new(shape, out)?,
        PoolSaved {
            rows,
            cols,
            mode,
            argmax,
        },
    ))
}

pub(crate) fn pool_backward(grad_out: &Tensor, saved: &PoolSaved, input_shape: &[usize]) -> Tensor {
    let (h, w) = (saved.rows.input_size, saved.cols.input_size);
    let (oh, ow) = (saved.rows.output_size, saved.cols.output_size);
    let mut gx = Tensor::zeros(input_shape);
    let planes = gx.len() / (h * w);
    let gdata = gx.data_mut();
    let area = (saved.rows.kernel * saved.cols.kernel) as f64;
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let o = (p * oh + i) * ow + j;
                let g = grad_out.data()[o];
                match saved.mode {
                    ReduceMode::Max => gdata[base + saved.argmax[o]] += g,
                    ReduceMode::Mean => {
                        let r0 = saved.rows.window_start(i);
                        let c0 = saved.cols.window_start(j);
                        for r in r0..r0 + saved.rows.kernel {
                            for c in c0..c0 + saved.cols.kernel {
                                gdata[base + r * w + c] += g / area;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Eager adaptive pooling of a `C×H×W` (or batched) tensor.
pub fn adaptive_pool2d(x: &Tensor, out_h: usize, out_w: usize, mode: ReduceMode) -> Result<Tensor> {
    pool_forward(x, out_h, out_w, mode).map(|(t, _)| t)
}
