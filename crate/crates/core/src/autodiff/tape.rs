use std::sync::atomic::{AtomicU64, Ordering};

use super::param::{ParamId, ParamStore};
use crate::error::{shape_err, CanError, Result};
use crate::nn::conv::{conv_backward, conv_forward, ConvGeometry};
use crate::nn::pool::{pool_backward, pool_forward, PoolSaved};
use crate::tensor::{ReduceMode, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Reduce { x: usize, axis: usize, mode: ReduceMode, argmax: Option<Vec<usize>> },
    SumAll(usize),
    MeanAll(usize),
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeometry, cols: Vec<f64> },
    Pool { x: usize, saved: PoolSaved },
    Softmax(usize),
    CrossEntropy { probs: usize, targets: Vec<usize> },
    L2Normalize { x: usize, norms: Vec<f64>, eps: f64 },
    RowNorms { x: usize },
    PairwiseSqDist(usize),
    Gather { x: usize, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of a forward pass. Nodes are appended in execution
/// order, so every node's inputs precede it.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of plain leaves after a backward pass.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::leaf`]; `None` if the loss
    /// does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves.get(var.index).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(CanError::ForeignVar);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.val(ia).zip_map(self.val(ib), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.val(ia).zip_map(self.val(ib), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(ia, ib)))
    }

    /// Left-to-right sum of same-shaped values.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| CanError::InvalidArgument("add_all of zero terms".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.val(ia).zip_map(self.val(ib), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).map(|x| x * c);
        Ok(self.push(v, Op::Scale(ia, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).map(|x| x + c);
        Ok(self.push(v, Op::AddScalar(ia)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(ia)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(ia)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = idx.iter().map(|&i| self.val(i)).collect();
        let v = Tensor::concat(&refs, axis)?;
        Ok(self.push(v, Op::Concat { parts: idx, axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = self.val(ix).slice(axis, start, len)?;
        Ok(self.push(v, Op::Slice { x: ix, axis, start }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.val(ia).matmul(self.val(ib))?;
        Ok(self.push(v, Op::MatMul(ia, ib)))
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let v = self.val(ia).matmul_nt(self.val(ib))?;
        Ok(self.push(v, Op::MatMulNt(ia, ib)))
    }

    pub fn reduce(&mut self, x: Var, axis: usize, mode: ReduceMode) -> Result<Var> {
        let ix = self.idx(x)?;
        let (v, argmax) = self.val(ix).reduce(axis, mode)?;
        Ok(self.push(v, Op::Reduce { x: ix, axis, mode, argmax }))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = Tensor::scalar(self.val(ix).sum());
        Ok(self.push(v, Op::SumAll(ix)))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        if t.is_empty() {
            return Err(shape_err!("mean of empty tensor"));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        Ok(self.push(v, Op::MeanAll(ix)))
    }

    /// Batched cross-correlation: `x` is B×Cin×H×W, `w` is Cout×Cin×kh×kw.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let ib = b.map(|b| self.idx(b)).transpose()?;
        let geom = ConvGeometry::infer(self.val(ix).shape(), self.val(iw).shape(), stride, padding)?;
        if let Some(ib) = ib {
            if self.val(ib).shape() != [geom.out_ch] {
                return Err(shape_err!("conv2d bias {:?} for {} channels", self.val(ib).shape(), geom.out_ch));
            }
        }
        let (v, cols) = conv_forward(self.val(ix), self.val(iw), ib.map(|i| self.val(i)), &geom);
        Ok(self.push(v, Op::Conv2d { x: ix, w: iw, b: ib, geom, cols }))
    }

    /// Adaptive pooling over the two trailing axes.
    pub fn adaptive_pool2d(&mut self, x: Var, out_h: usize, out_w: usize, mode: ReduceMode) -> Result<Var> {
        let ix = self.idx(x)?;
        let (v, saved) = pool_forward(self.val(ix), out_h, out_w, mode)?;
        Ok(self.push(v, Op::Pool { x: ix, saved }))
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = crate::nn::softmax_rows(self.val(ix))?;
        Ok(self.push(v, Op::Softmax(ix)))
    }

    /// Mean over rows of `-log(max(q[row, target], 1e-12))` for a R×k
    /// probability matrix.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let ip = self.idx(probs)?;
        let q = self.val(ip);
        let (rows, k) = match *q.shape() {
            [r, k] => (r, k),
            _ => return Err(shape_err!("cross_entropy expects R×k probabilities, got {:?}", q.shape())),
        };
        if targets.len() != rows || rows == 0 {
            return Err(shape_err!("cross_entropy: {} targets for {} rows", targets.len(), rows));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= k) {
            return Err(CanError::InvalidArgument(format!("target class {t} >= {k}")));
        }
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -q.data()[r * k + t].max(PROB_FLOOR).ln())
            .sum::<f64>()
            / rows as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs: ip,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Normalizes each vector along the last axis to unit L2 norm; norms
    /// below `eps` are replaced by `eps`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let (v, norms) = crate::nn::l2_normalize_rows(self.val(ix), eps)?;
        Ok(self.push(v, Op::L2Normalize { x: ix, norms, eps }))
    }

    /// L2 norm of each row of an R×d matrix.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        let d = match *t.shape() {
            [_, d] => d,
            _ => return Err(shape_err!("row_norms expects R×d, got {:?}", t.shape())),
        };
        let norms = t
            .data()
            .chunks(d.max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(Tensor::from_vec(norms), Op::RowNorms { x: ix }))
    }

    /// B×B matrix of squared Euclidean distances between rows.
    pub fn pairwise_sq_dist(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = crate::nn::pairwise_sq_dist(self.val(ix))?;
        Ok(self.push(v, Op::PairwiseSqDist(ix)))
    }

    /// 1-d tensor of the flat-indexed elements of `x`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let t = self.val(ix);
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(shape_err!("gather index {} out of range for {} elements", bad, t.len()));
        }
        let v = Tensor::from_vec(indices.iter().map(|&i| t.data()[i]).collect());
        Ok(self.push(
            v,
            Op::Gather {
                x: ix,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Runs reverse-mode accumulation from the scalar `loss`. Parameter
    /// gradients are added into `store`; gradients of plain leaves are
    /// returned. The tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.consumed {
            return Err(CanError::TapeConsumed);
        }
        let il = self.idx(loss)?;
        if self.val(il).len() != 1 {
            return Err(CanError::NonScalarLoss(self.val(il).shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[il] = Some(Tensor::ones(self.val(il).shape()));

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |j: usize, t: Tensor| match &mut grads[j] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[*b].value, |x, y| x * y)?;
                    let gb = g.zip_map(&self.nodes[*a].value, |x, y| x * y)?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
                Op::AddScalar(a) => send(*a, g),
                Op::Relu(a) => {
                    let ga = g.zip_map(&self.nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    send(*a, ga);
                }
                Op::Reshape(a) => send(*a, g.reshape(self.nodes[*a].value.shape())?),
                Op::Concat { parts, axis } => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.shape()[*axis];
                        if len > 0 {
                            send(p, g.slice(*axis, start, len)?);
                        }
                        start += len;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let mut gx = Tensor::zeros(self.nodes[*x].value.shape());
                    gx.scatter_slice_add(*axis, *start, &g);
                    send(*x, gx);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(&self.nodes[*b].value)?;
                    let gb = self.nodes[*a].value.transpose()?.matmul(&g)?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::MatMulNt(a, b) => {
                    // out = A B^T: dA = G B, dB = G^T A
                    let ga = g.matmul(&self.nodes[*b].value)?;
                    let gb = g.transpose()?.matmul(&self.nodes[*a].value)?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Reduce { x, axis, mode, argmax } => {
                    send(*x, reduce_backward(&g, self.nodes[*x].value.shape(), *axis, *mode, argmax.as_deref()));
                }
                Op::SumAll(x) => {
                    let gv = g.item()?;
                    send(*x, Tensor::full(self.nodes[*x].value.shape(), gv));
                }
                Op::MeanAll(x) => {
                    let t = &self.nodes[*x].value;
                    send(*x, Tensor::full(t.shape(), g.item()? / t.len() as f64));
                }
                Op::Conv2d { x, w, b, geom, cols } => {
                    let (gx, gw, gb) = conv_backward(&g, &self.nodes[*w].value, cols, geom);
                    send(*x, gx);
                    send(*w, gw);
                    if let Some(b) = b {
                        send(*b, gb);
                    }
                }
                Op::Pool { x, saved } => {
                    send(*x, pool_backward(&g, saved, self.nodes[*x].value.shape()));
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let k = *y.shape().last().unwrap_or(&1);
                    let mut gx = g.clone();
                    for (gr, yr) in gx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    send(*x, gx);
                }
                Op::CrossEntropy { probs, targets } => {
                    let q = &self.nodes[*probs].value;
                    let k = q.shape()[1];
                    let scale = g.item()? / targets.len() as f64;
                    let mut gq = Tensor::zeros(q.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        let p = q.data()[r * k + t];
                        if p > PROB_FLOOR {
                            gq.data_mut()[r * k + t] = -scale / p;
                        }
                    }
                    send(*probs, gq);
                }
                Op::L2Normalize { x, norms, eps } => {
                    let y = &node.value;
                    let d = *y.shape().last().unwrap_or(&1);
                    let mut gx = g.clone();
                    for ((gr, yr), &n) in gx.data_mut().chunks_mut(d).zip(y.data().chunks(d)).zip(norms) {
                        if n > *eps {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for (gv, yv) in gr.iter_mut().zip(yr) {
                                *gv = (*gv - yv * dot) / n;
                            }
                        } else {
                            gr.iter_mut().for_each(|gv| *gv /= eps);
                        }
                    }
                    send(*x, gx);
                }
                Op::RowNorms { x } => {
                    let xv = &self.nodes[*x].value;
                    let d = xv.shape()[1];
                    let mut gx = Tensor::zeros(xv.shape());
                    for (r, (gr, xr)) in gx.data_mut().chunks_mut(d.max(1)).zip(xv.data().chunks(d.max(1))).enumerate() {
                        let n = node.value.data()[r];
                        if n > 0.0 {
                            for (gv, xv) in gr.iter_mut().zip(xr) {
                                *gv = g.data()[r] * xv / n;
                            }
                        }
                    }
                    send(*x, gx);
                }
                Op::PairwiseSqDist(x) => {
                    let xv = &self.nodes[*x].value;
                    let (b, d) = (xv.shape()[0], xv.shape()[1]);
                    let mut gx = Tensor::zeros(xv.shape());
                    let gd = gx.data_mut();
                    for i in 0..b {
                        for j in 0..b {
                            let c = 2.0 * g.data()[i * b + j];
                            if c == 0.0 || i == j {
                                continue;
                            }
                            for t in 0..d {
                                let diff = xv.data()[i * d + t] - xv.data()[j * d + t];
                                gd[i * d + t] += c * diff;
                                gd[j * d + t] -= c * diff;
                            }
                        }
                    }
                    send(*x, gx);
                }
                Op::Gather { x, indices } => {
                    let mut gx = Tensor::zeros(self.nodes[*x].value.shape());
                    for (&i, &gv) in indices.iter().zip(g.data()) {
                        gx.data_mut()[i] += gv;
                    }
                    send(*x, gx);
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            leaves,
        })
    }
}

fn reduce_backward(
    g: &Tensor,
    in_shape: &[usize],
    axis: usize,
    mode: ReduceMode,
    argmax: Option<&[usize]>,
) -> Tensor {
    let outer: usize = in_shape[..axis].iter().product();
    let extent = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut gx = Tensor::zeros(in_shape);
    let data = gx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let gv = g.data()[o * inner + i];
            match (mode, argmax) {
                (ReduceMode::Max, Some(arg)) => {
                    data[(o * extent + arg[o * inner + i]) * inner + i] += gv;
                }
                _ => {
                    for a in 0..extent {
                        data[(o * extent + a) * inner + i] += gv / extent as f64;
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient_is_two_x() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss, &mut store).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn constant_loss_leaves_params_untouched() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::ones(&[3])).unwrap();
        let mut tape = Tape::new();
        let _w = tape.param(&store, id);
        let c = tape.leaf(Tensor::scalar(4.0));
        tape.backward(c, &mut store).unwrap();
        assert!(store.get(id).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.scale(x, 3.0).unwrap();
        tape.backward(y, &mut store).unwrap();
        assert!(matches!(tape.backward(y, &mut store), Err(CanError::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x, &mut store), Err(CanError::NonScalarLoss(_))));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.add(x, y), Err(CanError::ForeignVar)));
    }

    #[test]
    fn param_grads_accumulate_across_passes() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let loss = tape.sum_all(w).unwrap();
            tape.backward(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad.data(), &[2.0, 2.0]);
    }

    #[test]
    fn reduce_max_routes_to_winner() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, 5.0, 3.0]));
        let m = tape.reduce(x, 0, ReduceMode::Max).unwrap();
        let g = tape.backward(m, &mut store).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![1, 2], vec![5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 0).unwrap();
        let s = tape.sum_all(c).unwrap();
        let g = tape.backward(s, &mut store).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &Tensor::ones(&[2, 2]));
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap());
        assert!(tape.cross_entropy(p, &[2]).is_err());
        assert!(tape.cross_entropy(p, &[0, 1]).is_err());
    }
}
