//! Dense row-major tensors and the small kernel set the rest of the crate
//! is built from: matrix multiply, row softmax, and layer norm.
//!
//! Kernels are plain scalar loops. Accumulation order is fixed (ascending
//! over the contracted index), so results are bit-identical across runs
//! regardless of build settings.

use crate::error::{Error, Result};
use num_traits::{Float, FloatConst};
use std::fmt::Debug;

/// Element-type tag used by the binary container format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    /// Bytes per element.
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

/// Scalar types the kernels are generic over: `f32` for the default
/// pipeline, `f64` for oracles and gradient checks.
pub trait Scalar: Float + FloatConst + Debug + Send + Sync + 'static {
    const DTYPE: DType;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one scalar from exactly `DTYPE.size()` bytes.
    fn from_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn of(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn of(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
}

/// Dense row-major tensor. The invariant `data.len() == product(shape)`
/// holds for every constructed value; all extents are at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Tensor<S>> {
        let numel = checked_numel(&shape)?;
        if data.len() != numel {
            return Err(Error::Dim(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor<S> {
        let numel = checked_numel(shape).expect("valid shape");
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); numel] }
    }

    pub fn filled(shape: &[usize], value: S) -> Tensor<S> {
        let numel = checked_numel(shape).expect("valid shape");
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// Identity matrix of side `n`.
    pub fn eye(n: usize) -> Tensor<S> {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> S) -> Tensor<S> {
        let numel = checked_numel(shape).expect("valid shape");
        let mut data = Vec::with_capacity(numel);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..numel {
            data.push(f(&idx));
            for axis in (0..shape.len()).rev() {
                idx[axis] += 1;
                if idx[axis] < shape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Flat offset of a multi-index (row-major).
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (axis, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[axis]);
            off = off * self.shape[axis] + i;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> S {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: S) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[S] {
        assert_eq!(self.rank(), 2, "row() needs a matrix");
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor<S>> {
        let numel = checked_numel(&shape)?;
        if numel != self.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn transpose2d(&self) -> Tensor<S> {
        assert_eq!(self.rank(), 2, "transpose2d() needs a matrix");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| T::of(x.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    let mut numel = 1usize;
    for &e in shape {
        if e == 0 {
            return Err(Error::Dim(format!("zero extent in shape {shape:?}")));
        }
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| Error::Dim(format!("shape {shape:?} overflows element count")))?;
    }
    Ok(numel)
}

/// `a @ b` for matrices `[n,k] x [k,m] -> [n,m]`.
///
/// Inner loop runs over `k` in ascending order with a per-row accumulator,
/// which both fixes the summation order and keeps accesses to `b`
/// sequential.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Dim(format!(
            "matmul needs matrices, got ranks {} and {}",
            a.rank(),
            b.rank()
        )));
    }
    let (n, k) = (a.shape[0], a.shape[1]);
    let (k2, m) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Dim(format!(
            "matmul inner dimensions disagree: [{n},{k}] x [{k2},{m}]"
        )));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out.data[i * m..(i + 1) * m];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * m..(kk + 1) * m];
            for j in 0..m {
                out_row[j] = out_row[j] + a_ik * b_row[j];
            }
        }
    }
    Ok(out)
}

/// Softmax over the last axis, one distribution per leading index.
///
/// Each row is shifted by its maximum before exponentiation, so arbitrary
/// logit magnitudes stay finite. Rows sum to 1 and entries are
/// non-negative by construction.
pub fn softmax_rows<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() == 0 {
        return Err(Error::Dim("softmax needs rank >= 1".into()));
    }
    let cols = *x.shape.last().unwrap();
    let mut out = x.clone();
    for row in out.data.chunks_mut(cols) {
        let max = row.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
        if !max.is_finite() {
            return Err(Error::Numeric("softmax row contains non-finite logits".into()));
        }
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Layer norm over the last axis: zero mean, unit variance, then an
/// elementwise affine with `gain` and `bias` (both of length `d`).
/// Variance is the population variance; `eps` guards the square root.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
    eps: S,
) -> Result<Tensor<S>> {
    if x.rank() == 0 {
        return Err(Error::Dim("layer_norm needs rank >= 1".into()));
    }
    let d = *x.shape.last().unwrap();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::Dim(format!(
            "layer_norm gain/bias must have shape [{d}], got {:?} and {:?}",
            gain.shape(),
            bias.shape()
        )));
    }
    let inv_d = S::of(1.0 / d as f64);
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        let mut mean = S::zero();
        for &v in row.iter() {
            mean = mean + v;
        }
        mean = mean * inv_d;
        let mut var = S::zero();
        for &v in row.iter() {
            let c = v - mean;
            var = var + c * c;
        }
        var = var * inv_d;
        let inv_std = (var + eps).sqrt().recip();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv_std * gain.data[j] + bias.data[j];
        }
    }
    Ok(out)
}

/// Elementwise sum of two same-shape tensors.
pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape != b.shape {
        return Err(Error::Dim(format!(
            "elementwise add shape mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Independent triple-loop reference in f64, j-outer order (different
    /// accumulation order than the production kernel).
    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (n, k) = (a.shape()[0], a.shape()[1]);
        let m = b.shape()[1];
        Tensor::from_fn(&[n, m], |idx| {
            let (i, j) = (idx[0], idx[1]);
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a.at(&[i, kk]) * b.at(&[kk, j]);
            }
            acc
        })
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_reference_loops() {
        let mut rng = Rng::new(11);
        for trial in 0..20 {
            let n = 1 + (trial % 5);
            let k = 1 + (trial % 7);
            let m = 1 + (trial % 4);
            let a: Tensor<f64> = rng.normal(&[n, k], 1.0);
            let b: Tensor<f64> = rng.normal(&[k, m], 1.0);
            let got = matmul(&a, &b).unwrap();
            let want = matmul_oracle(&a, &b);
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a: Tensor<f32> = Tensor::zeros(&[2, 3]);
        let b: Tensor<f32> = Tensor::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::Dim(_))));
    }

    #[test]
    fn matmul_associativity_within_float_tolerance() {
        let mut rng = Rng::new(7);
        for _ in 0..10 {
            let a: Tensor<f64> = rng.normal(&[4, 4], 1.0);
            let b: Tensor<f64> = rng.normal(&[4, 4], 1.0);
            let c: Tensor<f64> = rng.normal(&[4, 4], 1.0);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right) < 1e-5);
        }
    }

    #[test]
    fn softmax_two_logit_example() {
        // logits [0, ln 3] -> probabilities [1/4, 3/4]
        let x = Tensor::new(vec![1, 2], vec![0.0f64, 3.0f64.ln()]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!((p.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_extreme_logit_is_one_hot() {
        let x = Tensor::new(vec![1, 3], vec![0.0f64, 1e4, 0.0]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!((p.data()[1] - 1.0).abs() < 1e-6);
        assert!(p.data()[0] < 1e-6 && p.data()[2] < 1e-6);
    }

    #[test]
    fn softmax_shift_invariant_and_large_logits_finite() {
        // shift by 2^40: small integer offsets stay exactly representable
        let shift = (1u64 << 40) as f64;
        let x = Tensor::new(vec![1, 3], vec![shift, shift + 1.0, shift - 2.0]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!(p.is_finite());
        let q = softmax_rows(&Tensor::new(vec![1, 3], vec![0.0, 1.0, -2.0]).unwrap()).unwrap();
        assert!(p.max_abs_diff(&q) < 1e-9);
        // magnitudes near overflow still produce a finite distribution
        let huge = softmax_rows(&Tensor::new(vec![1, 2], vec![1e30f64, 1e30]).unwrap()).unwrap();
        assert!(huge.is_finite());
        assert!((huge.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = Rng::new(3);
        let x: Tensor<f64> = rng.normal(&[5, 16], 2.0);
        let gain = Tensor::filled(&[16], 1.0);
        let bias = Tensor::zeros(&[16]);
        let y = layer_norm(&x, &gain, &bias, 1e-8).unwrap();
        for i in 0..5 {
            let row = &y.data()[i * 16..(i + 1) * 16];
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "row var {var}");
        }
    }

    #[test]
    fn layer_norm_applies_gain_and_bias() {
        let x = Tensor::new(vec![1, 2], vec![-1.0f64, 1.0]).unwrap();
        let gain = Tensor::new(vec![2], vec![2.0, 3.0]).unwrap();
        let bias = Tensor::new(vec![2], vec![10.0, 20.0]).unwrap();
        // normalized row is [-1, 1] (mean 0, var 1 already)
        let y = layer_norm(&x, &gain, &bias, 0.0).unwrap();
        assert!((y.data()[0] - 8.0).abs() < 1e-12);
        assert!((y.data()[1] - 23.0).abs() < 1e-12);
    }

    #[test]
    fn reshape_preserves_data_and_checks_count() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.clone().reshape(vec![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(vec![4, 2]).is_err());
    }

    #[test]
    fn constructors_reject_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..8, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let x: Tensor<f64> = rng.normal(&[rows, cols], 5.0);
            let p = softmax_rows(&x).unwrap();
            for i in 0..rows {
                let row = &p.data()[i * cols..(i + 1) * cols];
                let sum: f64 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn matmul_distributes_over_addition(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let a: Tensor<f64> = rng.normal(&[3, 3], 1.0);
            let b: Tensor<f64> = rng.normal(&[3, 3], 1.0);
            let c: Tensor<f64> = rng.normal(&[3, 3], 1.0);
            let left = matmul(&a, &add(&b, &c).unwrap()).unwrap();
            let right = add(&matmul(&a, &b).unwrap(), &matmul(&a, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }
    }
}
