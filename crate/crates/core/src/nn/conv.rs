//! 2-d cross-correlation via im2col + GEMM.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub(crate) fn infer(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, in_ch, in_h, in_w) = match *x {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(shape_err!("conv2d input must be B×C×H×W, got {:?}", x)),
        };
        let (out_ch, wc, kh, kw) = match *w {
            [o, c, kh, kw] => (o, c, kh, kw),
            _ => return Err(shape_err!("conv2d weight must be O×C×kh×kw, got {:?}", w)),
        };
        if wc != in_ch {
            return Err(shape_err!("conv2d channel mismatch: input {in_ch}, weight {wc}"));
        }
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(shape_err!("conv2d needs stride, kh, kw >= 1"));
        }
        if in_h + 2 * padding < kh || in_w + 2 * padding < kw {
            return Err(shape_err!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{}",
                in_h + 2 * padding,
                in_w + 2 * padding
            ));
        }
        Ok(ConvGeometry {
            batch,
            in_ch,
            out_ch,
            in_h,
            in_w,
            kh,
            kw,
            stride,
            padding,
            out_h: (in_h + 2 * padding - kh) / stride + 1,
            out_w: (in_w + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_area(&self) -> usize {
        self.in_h * self.in_w
    }

    /// Visits (column row, output cell, input cell) for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.in_ch {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    for oi in 0..self.out_h {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii >= self.in_h as isize {
                            continue;
                        }
                        for oj in 0..self.out_w {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            if jj < 0 || jj >= self.in_w as isize {
                                continue;
                            }
                            let cell = oi * self.out_w + oj;
                            let src = (c * self.in_h + ii as usize) * self.in_w + jj as usize;
                            f(row, cell, src);
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the im2col buffers (one `patch_len × out_area`
/// block per batch item) kept for the backward pass.
pub(crate) fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    g: &ConvGeometry,
) -> (Tensor, Vec<f64>) {
    let (k, p) = (g.patch_len(), g.out_area());
    let mut cols = vec![0.0; g.batch * k * p];
    let mut out = vec![0.0; g.batch * g.out_ch * p];
    for n in 0..g.batch {
        let xs = &x.data()[n * g.in_ch * g.in_area()..(n + 1) * g.in_ch * g.in_area()];
        let col = &mut cols[n * k * p..(n + 1) * k * p];
        g.for_each_tap(|row, cell, src| col[row * p + cell] = xs[src]);
        let dst = &mut out[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        if let Some(b) = b {
            for (o, &bias) in b.data().iter().enumerate() {
                dst[o * p..(o + 1) * p].fill(bias);
            }
        }
        gemm(g.out_ch, k, p, w.data(), false, col, false, dst, 1.0);
    }
    let out = Tensor::new(vec![g.batch, g.out_ch, g.out_h, g.out_w], out)
        .expect("conv output shape");
    (out, cols)
}

/// Gradients w.r.t. input, weight and bias.
pub(crate) fn conv_backward(
    grad_out: &Tensor,
    w: &Tensor,
    cols: &[f64],
    g: &ConvGeometry,
) -> (Tensor, Tensor, Tensor) {
    let (k, p) = (g.patch_len(), g.out_area());
    let mut gx = vec![0.0; g.batch * g.in_ch * g.in_area()];
    let mut gw = vec![0.0; g.out_ch * k];
    let mut gb = vec![0.0; g.out_ch];
    let mut gcol = vec![0.0; k * p];
    for n in 0..g.batch {
        let go = &grad_out.data()[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        let col = &cols[n * k * p..(n + 1) * k * p];
        gemm(g.out_ch, p, k, go, false, col, true, &mut gw, 1.0);
        for (o, acc) in gb.iter_mut().enumerate() {
            *acc += go[o * p..(o + 1) * p].iter().sum::<f64>();
        }
        gemm(k, g.out_ch, p, w.data(), true, go, false, &mut gcol, 0.0);
        let gxs = &mut gx[n * g.in_ch * g.in_area()..(n + 1) * g.in_ch * g.in_area()];
        g.for_each_tap(|row, cell, src| gxs[src] += gcol[row * p + cell]);
    }
    (
        Tensor::new(vec![g.batch, g.in_ch, g.in_h, g.in_w], gx).expect("gx shape"),
        Tensor::new(vec![g.out_ch, g.in_ch, g.kh, g.kw], gw).expect("gw shape"),
        Tensor::new(vec![g.out_ch], gb).expect("gb shape"),
    )
}

/// Eager convolution of a single `Cin×H×W` image.
pub fn conv2d(x: &Tensor, layer: &Conv2dLayer, store: &ParamStore) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let xb = x.reshape(&shape)?;
    let w = store.value(layer.weight);
    let g = ConvGeometry::infer(xb.shape(), w.shape(), layer.stride, layer.padding)?;
    let (out, _) = conv_forward(&xb, w, layer.bias.map(|b| store.value(b)), &g);
    out.reshape(&out.shape()[1..])
}

/// A convolution whose weight and bias live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    /// Registers `name.weight` (and `name.bias`) with fan-in scaled uniform
    /// weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_ch == 0 || out_ch == 0 {
            return Err(shape_err!("conv layer {name}: dims and stride must be >= 1"));
        }
        let fan_in = in_ch * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            he_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?)
        } else {
            None
        };
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv2d(x, w, b, self.stride, self.padding)
    }
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn layer_with(store: &mut ParamStore, w: Tensor, b: Option<Tensor>, stride: usize, padding: usize) -> Conv2dLayer {
        let weight = store.add("w", w).unwrap();
        let bias = b.map(|b| store.add("b", b).unwrap());
        Conv2dLayer { weight, bias, stride, padding }
    }

    #[test]
    fn one_by_one_identity() {
        let mut store = ParamStore::new();
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let layer = layer_with(&mut store, w, Some(Tensor::zeros(&[3])), 1, 0);
        let x = Tensor::new(vec![3, 2, 2], (0..12).map(|v| v as f64 - 4.0).collect()).unwrap();
        assert_eq!(conv2d(&x, &layer, &store).unwrap(), x);
    }

    #[test]
    fn ones_kernel_hand_value() {
        let mut store = ParamStore::new();
        let layer = layer_with(&mut store, Tensor::ones(&[1, 1, 2, 2]), None, 1, 0);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv2d(&x, &layer, &store).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn output_size_formula_and_errors() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Conv2dLayer::new(&mut store, "c", 2, 4, 3, 2, 1, true, &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 7, 5]);
        assert_eq!(conv2d(&x, &layer, &store).unwrap().shape(), &[4, 4, 3]);
        assert!(conv2d(&Tensor::zeros(&[3, 7, 5]), &layer, &store).is_err());
        let mut s2 = ParamStore::new();
        let big = layer_with(&mut s2, Tensor::ones(&[1, 1, 3, 3]), None, 1, 0);
        assert!(conv2d(&Tensor::zeros(&[1, 2, 2]), &big, &s2).is_err());
    }

    #[test]
    fn padded_strided_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let layer = Conv2dLayer::new(&mut store, "c", 2, 3, 3, 2, 1, true, &mut rng).unwrap();
        store.set_value(layer.bias.unwrap(), Tensor::from_vec(vec![0.1, -0.2, 0.3])).unwrap();
        let x = uniform(&[2, 5, 4], 1.0, &mut rng);
        let y = conv2d(&x, &layer, &store).unwrap();
        let w = store.value(layer.weight);
        let b = store.value(layer.bias.unwrap());
        let (oh, ow) = (3, 2);
        assert_eq!(y.shape(), &[3, oh, ow]);
        for o in 0..3 {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for ki in 0..3 {
                            for kj in 0..3 {
                                let ii = (i * 2 + ki) as isize - 1;
                                let jj = (j * 2 + kj) as isize - 1;
                                if ii < 0 || jj < 0 || ii >= 5 || jj >= 4 {
                                    continue;
                                }
                                acc += w.get(&[o, c, ki, kj]).unwrap()
                                    * x.get(&[c, ii as usize, jj as usize]).unwrap();
                            }
                        }
                    }
                    assert!((y.get(&[o, i, j]).unwrap() - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let layer = Conv2dLayer::new(&mut store, "c", 3, 2, 3, 1, 1, false, &mut rng).unwrap();
        let x = uniform(&[3, 5, 4], 1.0, &mut rng);
        let y = uniform(&[3, 5, 4], 1.0, &mut rng);
        let (alpha, beta) = (0.7, -1.3);
        let mix = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
        let lhs = conv2d(&mix, &layer, &store).unwrap();
        let cx = conv2d(&x, &layer, &store).unwrap();
        let cy = conv2d(&y, &layer, &store).unwrap();
        let rhs = cx.zip_map(&cy, |a, b| alpha * a + beta * b).unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
