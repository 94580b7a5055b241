//! Dense row-major `f64` tensors and the forward kernels used by the tape.
//!
//! Every public operation checks that its output is finite. A non-finite
//! value is reported as [`Error::NonFinite`], never passed on silently.

use crate::error::{Error, Result};

/// A dense tensor of `f64` values stored row-major.
///
/// One-dimensional tensors of length `n` behave as `1 × n` rows wherever a
/// matrix is expected.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that the shape matches the data length and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_raw(vec![1], vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(vec![m, n], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` view; a 1-D tensor is a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::Shape(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        let out = Tensor::from_raw(self.shape.clone(), data);
        out.check_finite(op)?;
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Standard matrix product.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        let out = Tensor::from_raw(vec![m, n], out);
        out.check_finite("matmul")?;
        Ok(out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_raw(vec![n, m], out))
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        self.check_finite("softmax_rows")?;
        let (m, n) = self.dims2()?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(n).take(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Tensor::from_raw(self.shape.clone(), out))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.check_finite("sigmoid")?;
        Ok(self.map(sigmoid))
    }

    /// Per-row Euclidean norm floored at `eps`, as an `m × 1` column.
    pub fn row_l2_norms(&self, eps: f64) -> Result<Tensor> {
        self.check_finite("row_l2_norms")?;
        let (m, n) = self.dims2()?;
        let data = (0..m)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps)
            })
            .collect();
        let out = Tensor::from_raw(vec![m, 1], data);
        out.check_finite("row_l2_norms")?;
        Ok(out)
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(layer_norm_forward(self, gain, bias, eps)?.0)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<f64> {
        Ok(cross_entropy_forward(self, labels, None)?.0)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Returns `(output, normalized, inverse_std)`.
pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    x.check_finite("layer_norm")?;
    if eps <= 0.0 {
        return Err(Error::contract("layer_norm eps must be positive"));
    }
    let (m, n) = x.dims2()?;
    if gain.numel() != n || bias.numel() != n {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape.clone(),
            rhs: gain.shape.clone(),
        });
    }
    let mut xhat = vec![0.0; m * n];
    let mut out = vec![0.0; m * n];
    let mut inv_std = Vec::with_capacity(m);
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        for j in 0..n {
            let h = (row[j] - mean) * r;
            xhat[i * n + j] = h;
            out[i * n + j] = h * gain.data[j] + bias.data[j];
        }
    }
    let out = Tensor::from_raw(x.shape.clone(), out);
    out.check_finite("layer_norm")?;
    Ok((out, Tensor::from_raw(x.shape.clone(), xhat), inv_std))
}

/// Weighted mean cross-entropy. Returns `(loss, softmax probabilities, normalizer)`.
///
/// With weights, the loss is `Σ w[y_b]·nll_b / Σ w[y_b]`.
pub(crate) fn cross_entropy_forward(
    logits: &Tensor,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Tensor, f64)> {
    logits.check_finite("cross_entropy")?;
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: logits.shape.clone(),
            rhs: vec![labels.len()],
        });
    }
    if let Some((position, &value)) = labels.iter().enumerate().find(|(_, &l)| l >= c) {
        return Err(Error::Index {
            position,
            value,
            bound: c,
        });
    }
    if let Some(w) = weights {
        if w.len() != c {
            return Err(Error::Dimension {
                op: "cross_entropy weights",
                lhs: vec![c],
                rhs: vec![w.len()],
            });
        }
    }
    let probs = logits.softmax_rows()?;
    let mut total = 0.0;
    let mut norm = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let w = weights.map_or(1.0, |w| w[y]);
        total += w * (lse - row[y]);
        norm += w;
    }
    if norm <= 0.0 {
        return Err(Error::contract("cross_entropy weights sum to zero"));
    }
    let loss = total / norm;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    Ok((loss, probs, norm))
}
