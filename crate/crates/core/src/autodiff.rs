//! Dynamic-tape reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations on a [`Var`] run eagerly and append a node to the owning
//! [`Tape`]. Node indices are already a topological order, so the backward
//! pass is a single reverse sweep. A gradient reaching a node from several
//! consumers is summed.
//!
//! ```
//! use twinfdd::{ParameterSet, Tape, Tensor};
//!
//! let mut params = ParameterSet::new();
//! params.insert("p", Tensor::new(vec![3], vec![1.0, 2.0, 3.0])?)?;
//!
//! let tape = Tape::new();
//! let bound = tape.bind(&params);
//! let p = bound.get("p")?;
//! let loss = p.mul(p)?.sum()?.scale(0.5)?;
//! let grads = tape.backward(loss, &bound)?;
//! assert_eq!(grads["p"].data(), &[1.0, 2.0, 3.0]);
//! # Ok::<(), twinfdd::Error>(())
//! ```

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{self, Tensor};

/// Gradient of a scalar loss with respect to every bound parameter.
pub type Gradients = BTreeMap<String, Tensor>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    ScaleBy(usize, usize),
    Scale(usize, f64),
    Softmax(usize),
    Sigmoid(usize),
    Relu(usize),
    RowNorms(usize, f64),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        weights: Option<Vec<f64>>,
        probs: Tensor,
        norm: f64,
    },
    Sum(usize),
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Element(usize, usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations as they execute. Not shareable across threads.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape whose bound parameters do not track gradients. Used for
    /// evaluation, where only forward values are needed.
    pub fn no_grad() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient when the tape has gradients enabled.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let rg = self.grad_enabled;
        self.push(value, Op::Leaf, rg)
    }

    /// Registers every tensor of `params` as a gradient-tracked leaf.
    pub fn bind(&self, params: &ParameterSet) -> BoundParams<'_> {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_string(), self.leaf(t.clone())))
            .collect();
        BoundParams { vars }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of the scalar `loss` for every parameter in `bound`.
    /// Parameters that do not reach the loss get zeros of matching shape.
    pub fn backward(&self, loss: Var<'_>, bound: &BoundParams<'_>) -> Result<Gradients> {
        let mut grads = self.gradients(loss)?;
        let out = bound
            .vars
            .iter()
            .map(|(name, var)| {
                let g = grads[var.id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(var.value().shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(out)
    }

    /// Gradient of the scalar `loss` with respect to a single variable.
    pub fn grad_of(&self, loss: Var<'_>, wrt: Var<'_>) -> Result<Tensor> {
        let mut grads = self.gradients(loss)?;
        Ok(grads[wrt.id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(wrt.value().shape())))
    }

    fn gradients(&self, loss: Var<'_>) -> Result<Vec<Option<Tensor>>> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape().to_vec();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(&loss_shape));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            let contributions = backward_op(&nodes, node, &dy)?;
            for (pid, g) in contributions {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[id] = Some(dy);
        }
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(grads)
    }
}

fn backward_op(nodes: &[Node], node: &Node, dy: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let out = &*node.value;
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let da = dy.matmul(&val(*b).transpose()?)?;
            let db = val(*a).transpose()?.matmul(dy)?;
            vec![
                (*a, da.reshape(val(*a).shape().to_vec())?),
                (*b, db.reshape(val(*b).shape().to_vec())?),
            ]
        }
        Op::Transpose(a) => vec![(*a, dy.transpose()?.reshape(val(*a).shape().to_vec())?)],
        Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
        Op::Sub(a, b) => vec![(*a, dy.clone()), (*b, dy.map(|v| -v))],
        Op::Mul(a, b) => vec![
            (*a, dy.zip_map(val(*b), "mul backward", |g, y| g * y)?),
            (*b, dy.zip_map(val(*a), "mul backward", |g, x| g * x)?),
        ],
        Op::Div(a, b) => {
            let bv = val(*b);
            let da = dy.zip_map(bv, "div backward", |g, d| g / d)?;
            let q = out.zip_map(bv, "div backward", |o, d| o / d)?;
            let db = dy.zip_map(&q, "div backward", |g, q| -g * q)?;
            vec![(*a, da), (*b, db)]
        }
        Op::AddRow(a, r) => {
            let (m, n) = dy.dims2()?;
            let mut dr = vec![0.0; n];
            for i in 0..m {
                for (acc, g) in dr.iter_mut().zip(dy.row(i)) {
                    *acc += g;
                }
            }
            vec![(*a, dy.clone()), (*r, Tensor::from_raw(val(*r).shape().to_vec(), dr))]
        }
        Op::ScaleBy(a, s) => {
            let sv = val(*s).data()[0];
            let da = dy.map(|g| g * sv);
            let ds: f64 = dy.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
            vec![(*a, da), (*s, Tensor::from_raw(val(*s).shape().to_vec(), vec![ds]))]
        }
        Op::Scale(a, c) => vec![(*a, dy.map(|g| g * c))],
        Op::Softmax(a) => {
            let (m, n) = out.dims2()?;
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let y = out.row(i);
                let g = dy.row(i);
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                for j in 0..n {
                    dx[i * n + j] = y[j] * (g[j] - dot);
                }
            }
            vec![(*a, Tensor::from_raw(out.shape().to_vec(), dx))]
        }
        Op::Sigmoid(a) => vec![(*a, dy.zip_map(out, "sigmoid backward", |g, y| g * y * (1.0 - y))?)],
        Op::Relu(a) => vec![(
            *a,
            dy.zip_map(val(*a), "relu backward", |g, x| if x > 0.0 { g } else { 0.0 })?,
        )],
        Op::RowNorms(a, eps) => {
            let x = val(*a);
            let (m, n) = x.dims2()?;
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let norm = out.data()[i];
                let g = dy.data()[i];
                let raw: f64 = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if raw > *eps {
                    for j in 0..n {
                        dx[i * n + j] = g * x.get(i, j) / norm;
                    }
                }
            }
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), dx))]
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (m, n) = dy.dims2()?;
            let g = val(*gain).data();
            let mut dx = vec![0.0; m * n];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for i in 0..m {
                let gy = dy.row(i);
                let h = xhat.row(i);
                let mut sum_d = 0.0;
                let mut sum_dh = 0.0;
                for j in 0..n {
                    let d = gy[j] * g[j];
                    sum_d += d;
                    sum_dh += d * h[j];
                    dgain[j] += gy[j] * h[j];
                    dbias[j] += gy[j];
                }
                let r = inv_std[i] / n as f64;
                for j in 0..n {
                    let d = gy[j] * g[j];
                    dx[i * n + j] = r * (n as f64 * d - sum_d - h[j] * sum_dh);
                }
            }
            vec![
                (*x, Tensor::from_raw(dy.shape().to_vec(), dx)),
                (*gain, Tensor::from_raw(val(*gain).shape().to_vec(), dgain)),
                (*bias, Tensor::from_raw(val(*bias).shape().to_vec(), dbias)),
            ]
        }
        Op::CrossEntropy {
            logits,
            labels,
            weights,
            probs,
            norm,
        } => {
            let g = dy.data()[0];
            let (_, c) = probs.dims2()?;
            let mut dx = probs.data().to_vec();
            for (i, &y) in labels.iter().enumerate() {
                let w = weights.as_ref().map_or(1.0, |w| w[y]);
                dx[i * c + y] -= 1.0;
                for v in &mut dx[i * c..(i + 1) * c] {
                    *v *= g * w / norm;
                }
            }
            vec![(*logits, Tensor::from_raw(probs.shape().to_vec(), dx))]
        }
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), dy.data()[0]))],
        Op::MeanRows(a) => {
            let (m, n) = val(*a).dims2()?;
            let mut dx = Vec::with_capacity(m * n);
            for _ in 0..m {
                dx.extend(dy.data().iter().map(|g| g / m as f64));
            }
            vec![(*a, Tensor::from_raw(val(*a).shape().to_vec(), dx))]
        }
        Op::ConcatCols(parts) => {
            let (m, n) = dy.dims2()?;
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let (_, w) = val(p).dims2()?;
                let mut d = Vec::with_capacity(m * w);
                for i in 0..m {
                    d.extend_from_slice(&dy.data()[i * n + offset..i * n + offset + w]);
                }
                res.push((p, Tensor::from_raw(val(p).shape().to_vec(), d)));
                offset += w;
            }
            res
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let k = val(p).numel();
                let d = dy.data()[offset..offset + k].to_vec();
                res.push((p, Tensor::from_raw(val(p).shape().to_vec(), d)));
                offset += k;
            }
            res
        }
        Op::Element(a, idx) => {
            let mut d = Tensor::zeros(val(*a).shape());
            d.data_mut()[*idx] = dy.data()[0];
            vec![(*a, d)]
        }
    })
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("variables belong to different tapes"))
        }
    }

    fn record(&self, value: Tensor, op: Op, parents: &[usize], name: &'static str) -> Result<Var<'t>> {
        value.check_finite(name)?;
        let rg = parents.iter().any(|&p| self.tape.requires_grad(p));
        Ok(self.tape.push(value, op, rg))
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().matmul(&rhs.value())?;
        self.record(v, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id], "matmul")
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        self.record(v, Op::Transpose(self.id), &[self.id], "transpose")
    }

    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "add", |a, b| a + b)?;
        self.record(v, Op::Add(self.id, rhs.id), &[self.id, rhs.id], "add")
    }

    pub fn sub(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "sub", |a, b| a - b)?;
        self.record(v, Op::Sub(self.id, rhs.id), &[self.id, rhs.id], "sub")
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "mul", |a, b| a * b)?;
        self.record(v, Op::Mul(self.id, rhs.id), &[self.id, rhs.id], "mul")
    }

    /// Elementwise quotient.
    pub fn div(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "div", |a, b| a / b)?;
        self.record(v, Op::Div(self.id, rhs.id), &[self.id, rhs.id], "div")
    }

    /// Adds a length-`n` row to every row of an `m × n` matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row)?;
        let x = self.value();
        let r = row.value();
        let (m, n) = x.dims2()?;
        if r.numel() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: x.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for i in 0..m {
            for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let v = Tensor::from_raw(x.shape().to_vec(), data);
        self.record(v, Op::AddRow(self.id, row.id), &[self.id, row.id], "add_row")
    }

    /// Multiplies every entry by a one-element variable.
    pub fn scale_by(&self, s: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&s)?;
        let sv = s.value();
        if sv.numel() != 1 {
            return Err(Error::Dimension {
                op: "scale_by",
                lhs: self.shape(),
                rhs: sv.shape().to_vec(),
            });
        }
        let c = sv.data()[0];
        let v = self.value().map(|x| x * c);
        self.record(v, Op::ScaleBy(self.id, s.id), &[self.id, s.id], "scale_by")
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x * c);
        self.record(v, Op::Scale(self.id, c), &[self.id], "scale")
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let v = self.value().softmax_rows()?;
        self.record(v, Op::Softmax(self.id), &[self.id], "softmax_rows")
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        let v = self.value().sigmoid()?;
        self.record(v, Op::Sigmoid(self.id), &[self.id], "sigmoid")
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.max(0.0));
        self.record(v, Op::Relu(self.id), &[self.id], "relu")
    }

    /// Per-row Euclidean norms floored at `eps`, shape `m × 1`.
    pub fn row_l2_norms(&self, eps: f64) -> Result<Var<'t>> {
        let v = self.value().row_l2_norms(eps)?;
        self.record(v, Op::RowNorms(self.id, eps), &[self.id], "row_l2_norms")
    }

    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(&gain)?;
        self.same_tape(&bias)?;
        let (v, xhat, inv_std) = tensor::layer_norm_forward(&self.value(), &gain.value(), &bias.value(), eps)?;
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            inv_std,
        };
        self.record(v, op, &[self.id, gain.id, bias.id], "layer_norm")
    }

    /// Mean cross-entropy of `labels` under the row-wise softmax of `self`.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Var<'t>> {
        self.weighted_cross_entropy(labels, None)
    }

    /// Cross-entropy with per-class weights, normalized by the summed weight
    /// of the batch labels.
    pub fn weighted_cross_entropy(&self, labels: &[usize], weights: Option<&[f64]>) -> Result<Var<'t>> {
        let (loss, probs, norm) = tensor::cross_entropy_forward(&self.value(), labels, weights)?;
        let op = Op::CrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
            weights: weights.map(<[f64]>::to_vec),
            probs,
            norm,
        };
        self.record(Tensor::scalar(loss), op, &[self.id], "cross_entropy")
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().sum());
        self.record(v, Op::Sum(self.id), &[self.id], "sum")
    }

    /// Column means over rows: `m × n → 1 × n`.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (m, n) = x.dims2()?;
        let mut data = vec![0.0; n];
        for i in 0..m {
            for (acc, v) in data.iter_mut().zip(x.row(i)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        self.record(
            Tensor::from_raw(vec![1, n], data),
            Op::MeanRows(self.id),
            &[self.id],
            "mean_rows",
        )
    }

    /// One element as a `1 × 1` variable.
    pub fn element(&self, index: usize) -> Result<Var<'t>> {
        let x = self.value();
        if index >= x.numel() {
            return Err(Error::Index {
                position: 0,
                value: index,
                bound: x.numel(),
            });
        }
        let v = Tensor::from_raw(vec![1, 1], vec![x.data()[index]]);
        self.record(v, Op::Element(self.id, index), &[self.id], "element")
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let m = values[0].dims2()?.0;
    let mut widths = Vec::with_capacity(parts.len());
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let (r, w) = v.dims2()?;
        if r != m {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: values[0].shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        widths.push(w);
    }
    let n: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        for v in &values {
            data.extend_from_slice(v.row(i));
        }
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    first.record(
        Tensor::from_raw(vec![m, n], data),
        Op::ConcatCols(ids.clone()),
        &ids,
        "concat_cols",
    )
}

/// Vertical concatenation of matrices with equal column counts.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let n = values[0].dims2()?.1;
    let mut m = 0;
    for (p, v) in parts.iter().zip(&values) {
        first.same_tape(p)?;
        let (r, c) = v.dims2()?;
        if c != n {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: values[0].shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        m += r;
    }
    let data = values.iter().flat_map(|v| v.data().iter().copied()).collect();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    first.record(
        Tensor::from_raw(vec![m, n], data),
        Op::ConcatRows(ids.clone()),
        &ids,
        "concat_rows",
    )
}

/// Parameters registered on a tape, addressed by name.
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}
