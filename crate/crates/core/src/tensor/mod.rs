//! Dense row-major `f64` tensors and the eager kernels the tape records.

mod blob;

pub use blob::{read_blob, write_blob, BlobDtype, BLOB_MAGIC, BLOB_VERSION};

use crate::error::{shape_err, CanError, Result};

/// Reduction mode shared by `reduce` and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceMode {
    Max,
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but data has {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.shape.len() {
            return Err(shape_err!("index {:?} for shape {:?}", index, self.shape));
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(shape_err!("index {:?} out of bounds for {:?}", index, self.shape));
            }
            flat = flat * d + i;
        }
        Ok(self.data[flat])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "elementwise op on shapes {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.shape.len() {
            return Err(shape_err!(
                "axis {} out of range for {}-d tensor",
                axis,
                self.shape.len()
            ));
        }
        Ok(())
    }

    /// (outer, axis extent, inner) split around `axis`.
    fn split_at_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }

    /// Concatenates `parts` along `axis`. All other dims must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| CanError::InvalidArgument("concat of zero tensors".into()))?;
        first.check_axis(axis)?;
        for p in &parts[1..] {
            if p.ndim() != first.ndim()
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err!(
                    "concat along axis {}: {:?} vs {:?}",
                    axis,
                    first.shape,
                    p.shape
                ));
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let (outer, _, inner) = first.split_at_axis(axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Tensor { shape, data })
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        if len == 0 || start + len > self.shape[axis] {
            return Err(shape_err!(
                "slice [{}, {}) out of range for axis {} of {:?}",
                start,
                start + len,
                axis,
                self.shape
            ));
        }
        let (outer, extent, inner) = self.split_at_axis(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Adds `grad` (shaped like a slice result) into the matching region of `self`.
    pub(crate) fn scatter_slice_add(&mut self, axis: usize, start: usize, grad: &Tensor) {
        let (outer, extent, inner) = self.split_at_axis(axis);
        let len = grad.shape[axis];
        for o in 0..outer {
            let dst = (o * extent + start) * inner;
            let src = o * len * inner;
            for i in 0..len * inner {
                self.data[dst + i] += grad.data[src + i];
            }
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul lhs")?;
        let (k2, n) = other.as_matrix("matmul rhs")?;
        if k != k2 {
            return Err(shape_err!("matmul {:?} @ {:?}", self.shape, other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::new(vec![m, n], out)
    }

    /// `self @ other^T`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul_nt lhs")?;
        let (n, k2) = other.as_matrix("matmul_nt rhs")?;
        if k != k2 {
            return Err(shape_err!("matmul_nt {:?} @ {:?}^T", self.shape, other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, true, &mut out, 0.0);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], data)
    }

    fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err!("{} must be 2-d, got {:?}", what, self.shape)),
        }
    }

    /// Reduces `axis` away. For `Max` the second value holds, per output
    /// element, the winning position along `axis` (lowest index on ties).
    pub fn reduce(&self, axis: usize, mode: ReduceMode) -> Result<(Tensor, Option<Vec<usize>>)> {
        self.check_axis(axis)?;
        let (outer, extent, inner) = self.split_at_axis(axis);
        if extent == 0 {
            return Err(shape_err!("reduce over empty axis {} of {:?}", axis, self.shape));
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let mut arg = match mode {
            ReduceMode::Max => Some(vec![0usize; outer * inner]),
            ReduceMode::Mean => None,
        };
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| self.data[(o * extent + a) * inner + i];
                let dst = o * inner + i;
                match mode {
                    ReduceMode::Max => {
                        let mut best = 0;
                        for a in 1..extent {
                            if at(a) > at(best) {
                                best = a;
                            }
                        }
                        out[dst] = at(best);
                        if let Some(arg) = arg.as_mut() {
                            arg[dst] = best;
                        }
                    }
                    ReduceMode::Mean => {
                        out[dst] = (0..extent).map(at).sum::<f64>() / extent as f64;
                    }
                }
            }
        }
        Ok((Tensor { shape, data: out }, arg))
    }
}

/// `c = a' @ b' + beta * c` where `a'` is `a` (m×k) or `a^T` stored as k×m,
/// and likewise for `b'` (k×n, or n×k when transposed).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index the strides can reach
    // lies inside the corresponding slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_vectors() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0]);
        let c = Tensor::concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let x = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        let empty = Tensor::zeros(&[2, 0]);
        assert_eq!(Tensor::concat(&[&x, &empty], 1).unwrap(), x);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
        assert!(Tensor::concat(&[&a, &a], 2).is_err());
    }

    #[test]
    fn slice_definition() {
        let x = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
        assert_eq!(x.slice(0, 1, 2).unwrap().data(), &[20.0, 30.0]);
        assert_eq!(x.slice(0, 0, 3).unwrap(), x);
        assert!(x.slice(0, 2, 2).is_err());
        assert!(x.slice(0, 0, 0).is_err());
    }

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap(), a);
        assert!(a.matmul(&Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn matmul_nt_matches_transpose() {
        let a = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64 * 0.5).collect()).unwrap();
        let b = Tensor::new(vec![4, 3], (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        let lhs = a.matmul_nt(&b).unwrap();
        let rhs = a.matmul(&b.transpose().unwrap()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn reduce_values() {
        let x = Tensor::from_vec(vec![3.0]);
        assert_eq!(x.reduce(0, ReduceMode::Max).unwrap().0.item().unwrap(), 3.0);
        let x = Tensor::from_vec(vec![1.0, 5.0, 3.0]);
        let (m, arg) = x.reduce(0, ReduceMode::Max).unwrap();
        assert_eq!(m.item().unwrap(), 5.0);
        assert_eq!(arg.unwrap(), vec![1]);
        assert_eq!(x.reduce(0, ReduceMode::Mean).unwrap().0.item().unwrap(), 3.0);
        assert!(x.reduce(1, ReduceMode::Mean).is_err());
    }

    #[test]
    fn reduce_max_ties_pick_lowest_index() {
        let x = Tensor::from_vec(vec![2.0, 7.0, 7.0, 1.0]);
        assert_eq!(x.reduce(0, ReduceMode::Max).unwrap().1.unwrap(), vec![1]);
    }

    #[test]
    fn reduce_middle_axis() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let (m, _) = x.reduce(1, ReduceMode::Max).unwrap();
        assert_eq!(m.shape(), &[2, 2]);
        assert_eq!(m.data(), &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
