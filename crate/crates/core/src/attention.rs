//! Similarity functions, scaled attention, and gated multi-head attention.
//!
//! Scores for the three similarity kinds, for queries `Q` (`L_q × d_k`) and
//! keys `K` (`L_k × d_k`):
//!
//! * dot product: `Q·Kᵀ / √d_k`
//! * bilinear: `Q·W·Kᵀ / √d_k` with a learned `d_k × d_k` form `W`
//! * cosine: `(q_i·k_j) / (‖q_i‖·‖k_j‖·√d_k)`, norms floored at `eps`
//!
//! The attention weights are the row-wise softmax of the scores. Each gated
//! head multiplies its attention output by `g_i = sigmoid(gate_logit_i)`,
//! and the head outputs are concatenated and projected by `W_o`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, BoundParams, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParameterSet};
use crate::tensor::Tensor;

/// Floor applied to query and key row norms in cosine scores.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    DotProduct,
    Bilinear,
    #[default]
    Cosine,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 3] = [Self::DotProduct, Self::Bilinear, Self::Cosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DotProduct => "dot_product",
            Self::Bilinear => "bilinear",
            Self::Cosine => "cosine",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot_product" | "dot" => Ok(Self::DotProduct),
            "bilinear" => Ok(Self::Bilinear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::config(format!("unknown similarity `{other}`"))),
        }
    }
}

fn check_form(kind: SimilarityKind, form: Option<&Var<'_>>, d_k: usize) -> Result<()> {
    match (kind, form) {
        (SimilarityKind::Bilinear, None) => Err(Error::config("bilinear similarity needs a form matrix")),
        (SimilarityKind::Bilinear, Some(w)) => {
            if w.shape() != [d_k, d_k] {
                return Err(Error::config(format!(
                    "bilinear form must be {d_k}×{d_k}, got {:?}",
                    w.shape()
                )));
            }
            Ok(())
        }
        (k, Some(_)) => Err(Error::config(format!("{k} similarity does not take a bilinear form"))),
        (_, None) => Ok(()),
    }
}

/// Pre-softmax score matrix `L_q × L_k`.
pub fn raw_scores<'t>(
    q: Var<'t>,
    k: Var<'t>,
    kind: SimilarityKind,
    bilinear_form: Option<Var<'t>>,
    eps: f64,
) -> Result<Var<'t>> {
    let qs = q.shape();
    let ks = k.shape();
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Dimension {
            op: "raw_scores",
            lhs: qs,
            rhs: ks,
        });
    }
    let d_k = qs[1];
    check_form(kind, bilinear_form.as_ref(), d_k)?;
    let inv_sqrt_dk = 1.0 / (d_k as f64).sqrt();
    let kt = k.transpose()?;
    let scores = match kind {
        SimilarityKind::DotProduct => q.matmul(kt)?,
        SimilarityKind::Bilinear => q.matmul(bilinear_form.expect("checked above"))?.matmul(kt)?,
        SimilarityKind::Cosine => {
            let nq = q.row_l2_norms(eps)?;
            let nk = k.row_l2_norms(eps)?;
            let denom = nq.matmul(nk.transpose()?)?;
            q.matmul(kt)?.div(denom)?
        }
    };
    scores.scale(inv_sqrt_dk)
}

/// A row-stochastic attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights(Tensor);

impl AttentionWeights {
    /// Wraps `matrix` after checking every row sums to 1 within 1e-9 and
    /// every entry lies in `[0, 1]`.
    pub fn new(matrix: Tensor) -> Result<Self> {
        let (m, _) = matrix.dims2()?;
        for i in 0..m {
            let row = matrix.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::contract(format!("attention row {i} is not a distribution")));
            }
        }
        Ok(AttentionWeights(matrix))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.0
    }
}

/// Output of [`scaled_attention`]: `weights · V` and the weights themselves.
pub struct Attended<'t> {
    pub output: Var<'t>,
    pub weights: Var<'t>,
}

impl Attended<'_> {
    pub fn attention_weights(&self) -> Result<AttentionWeights> {
        AttentionWeights::new((*self.weights.value()).clone())
    }
}

pub fn scaled_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    kind: SimilarityKind,
    bilinear_form: Option<Var<'t>>,
    eps: f64,
) -> Result<Attended<'t>> {
    let (ks, vs) = (k.shape(), v.shape());
    if vs.len() != 2 || ks[0] != vs[0] {
        return Err(Error::Dimension {
            op: "scaled_attention",
            lhs: ks,
            rhs: vs,
        });
    }
    let weights = raw_scores(q, k, kind, bilinear_form, eps)?.softmax_rows()?;
    let output = weights.matmul(v)?;
    Ok(Attended { output, weights })
}

/// Projections of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadParams<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub bilinear_form: Option<Var<'t>>,
}

/// Gated multi-head attention parameters bound on a tape.
#[derive(Clone, Debug)]
pub struct GdlAttentionParams<'t> {
    pub heads: Vec<HeadParams<'t>>,
    pub w_o: Var<'t>,
    pub gate_logits: Var<'t>,
    pub similarity: SimilarityKind,
}

impl<'t> GdlAttentionParams<'t> {
    /// Checks head shapes agree with each other, with `W_o`, and with the
    /// similarity kind.
    pub fn new(
        heads: Vec<HeadParams<'t>>,
        w_o: Var<'t>,
        gate_logits: Var<'t>,
        similarity: SimilarityKind,
    ) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::config("at least one head is required"))?;
        let wq = first.w_q.shape();
        let wv = first.w_v.shape();
        if wq.len() != 2 || wv.len() != 2 {
            return Err(Error::HeadDimension {
                head: 0,
                message: "projections must be matrices".into(),
            });
        }
        let (d_model, d_k, d_v) = (wq[0], wq[1], wv[1]);
        for (i, h) in heads.iter().enumerate() {
            let bad = |message: String| Error::HeadDimension { head: i, message };
            if h.w_q.shape() != [d_model, d_k] || h.w_k.shape() != [d_model, d_k] {
                return Err(bad(format!(
                    "W_Q {:?} / W_K {:?} must both be {d_model}×{d_k}",
                    h.w_q.shape(),
                    h.w_k.shape()
                )));
            }
            if h.w_v.shape() != [d_model, d_v] {
                return Err(bad(format!("W_V {:?} must be {d_model}×{d_v}", h.w_v.shape())));
            }
            check_form(similarity, h.bilinear_form.as_ref(), d_k).map_err(|e| bad(e.to_string()))?;
        }
        let h = heads.len();
        if w_o.shape() != [h * d_v, d_model] {
            return Err(Error::config(format!(
                "W_o must be {}×{d_model}, got {:?}",
                h * d_v,
                w_o.shape()
            )));
        }
        if gate_logits.value().numel() != h {
            return Err(Error::config(format!(
                "need {h} gate logits, got {}",
                gate_logits.value().numel()
            )));
        }
        Ok(GdlAttentionParams {
            heads,
            w_o,
            gate_logits,
            similarity,
        })
    }

    /// Looks up `<prefix>.head{i}.{w_q,w_k,w_v[,bilinear]}`, `<prefix>.w_o`
    /// and `<prefix>.gate_logits`.
    pub fn from_bound(
        bound: &BoundParams<'t>,
        prefix: &str,
        n_heads: usize,
        similarity: SimilarityKind,
    ) -> Result<Self> {
        let heads = (0..n_heads)
            .map(|i| {
                let p = format!("{prefix}.head{i}");
                Ok(HeadParams {
                    w_q: bound.get(&format!("{p}.w_q"))?,
                    w_k: bound.get(&format!("{p}.w_k"))?,
                    w_v: bound.get(&format!("{p}.w_v"))?,
                    bilinear_form: match similarity {
                        SimilarityKind::Bilinear => Some(bound.get(&format!("{p}.bilinear"))?),
                        _ => None,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            heads,
            bound.get(&format!("{prefix}.w_o"))?,
            bound.get(&format!("{prefix}.gate_logits"))?,
            similarity,
        )
    }

    pub fn d_model(&self) -> usize {
        self.heads[0].w_q.shape()[0]
    }
}

/// `g = sigmoid(gate_logits)`.
pub fn gate_values<'t>(params: &GdlAttentionParams<'t>) -> Result<Var<'t>> {
    params.gate_logits.sigmoid()
}

/// Gated multi-head attention, `L × d_model → L × d_model`.
///
/// `head_i = g_i · Attention(Qin·W_Qi, Kin·W_Ki, Vin·W_Vi)`, and the result
/// is `Concat(head_1, …, head_H) · W_o`. Pass the same input three times for
/// self-attention.
pub fn gdl_attention<'t>(qin: Var<'t>, kin: Var<'t>, vin: Var<'t>, params: &GdlAttentionParams<'t>) -> Result<Var<'t>> {
    let d_model = params.d_model();
    for (name, x) in [("Q", &qin), ("K", &kin), ("V", &vin)] {
        let s = x.shape();
        if s.len() != 2 || s[1] != d_model {
            return Err(Error::HeadDimension {
                head: 0,
                message: format!("{name} input {s:?} does not have {d_model} columns"),
            });
        }
    }
    let gates = gate_values(params)?;
    let mut heads = Vec::with_capacity(params.heads.len());
    for (i, h) in params.heads.iter().enumerate() {
        let wrap = |e: Error| match e {
            Error::Dimension { op, lhs, rhs } => Error::HeadDimension {
                head: i,
                message: format!("{op}: {lhs:?} vs {rhs:?}"),
            },
            other => other,
        };
        let q = qin.matmul(h.w_q).map_err(wrap)?;
        let k = kin.matmul(h.w_k).map_err(wrap)?;
        let v = vin.matmul(h.w_v).map_err(wrap)?;
        let att = scaled_attention(q, k, v, params.similarity, h.bilinear_form, NORM_EPS).map_err(wrap)?;
        heads.push(att.output.scale_by(gates.element(i)?)?);
    }
    concat_cols(&heads)?.matmul(params.w_o)
}

/// Number of heads whose gate is at least `threshold`. Diagnostic only.
pub fn effective_head_count(gate_logits: &Tensor, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract(format!("threshold {threshold} is outside (0, 1)")));
    }
    Ok(gate_logits
        .data()
        .iter()
        .filter(|&&z| crate::tensor::sigmoid(z) >= threshold)
        .count())
}

/// Shape of one gated attention layer, used to create its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionLayout {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub similarity: SimilarityKind,
}

impl AttentionLayout {
    /// Inserts freshly initialized parameters under `prefix`. Projections are
    /// Glorot-uniform and gate logits start at zero, so every gate opens at 0.5.
    pub fn init<R: Rng + ?Sized>(&self, prefix: &str, rng: &mut R, params: &mut ParameterSet) -> Result<()> {
        for i in 0..self.heads {
            let p = format!("{prefix}.head{i}");
            params.insert(format!("{p}.w_q"), glorot_uniform(rng, self.d_model, self.d_k))?;
            params.insert(format!("{p}.w_k"), glorot_uniform(rng, self.d_model, self.d_k))?;
            params.insert(format!("{p}.w_v"), glorot_uniform(rng, self.d_model, self.d_v))?;
            if self.similarity == SimilarityKind::Bilinear {
                params.insert(format!("{p}.bilinear"), glorot_uniform(rng, self.d_k, self.d_k))?;
            }
        }
        params.insert(
            format!("{prefix}.w_o"),
            glorot_uniform(rng, self.heads * self.d_v, self.d_model),
        )?;
        params.insert(format!("{prefix}.gate_logits"), Tensor::zeros(&[self.heads]))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_identical_and_orthogonal() {
        let tape = Tape::new();
        let q = tape.constant(t(&[&[1.0, 0.0, 0.0, 0.0]]));
        let k = tape.constant(t(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]));
        let s = raw_scores(q, k, SimilarityKind::Cosine, None, NORM_EPS)
            .unwrap()
            .value();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(s.get(0, 1), 0.0);
    }

    #[test]
    fn dot_product_example() {
        let tape = Tape::new();
        let q = tape.constant(t(&[&[1.0, 2.0]]));
        let k = tape.constant(t(&[&[3.0, 4.0]]));
        let s = raw_scores(q, k, SimilarityKind::DotProduct, None, NORM_EPS)
            .unwrap()
            .value();
        assert!((s.get(0, 0) - 11.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((s.get(0, 0) - 7.7782).abs() < 1e-4);
    }

    #[test]
    fn bilinear_form_presence_is_enforced() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::ones(&[2, 3]));
        let w = tape.constant(Tensor::eye(3));
        assert!(matches!(
            raw_scores(q, q, SimilarityKind::Bilinear, None, NORM_EPS),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            raw_scores(q, q, SimilarityKind::Cosine, Some(w), NORM_EPS),
            Err(Error::Config(_))
        ));
        let bad = tape.constant(Tensor::eye(2));
        assert!(raw_scores(q, q, SimilarityKind::Bilinear, Some(bad), NORM_EPS).is_err());
        // The identity form reduces to the dot product.
        let a = raw_scores(q, q, SimilarityKind::Bilinear, Some(w), NORM_EPS)
            .unwrap()
            .value();
        let b = raw_scores(q, q, SimilarityKind::DotProduct, None, NORM_EPS)
            .unwrap()
            .value();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_rows_stay_finite_under_cosine() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[2, 3]));
        let k = tape.constant(t(&[&[1.0, 2.0, 3.0]]));
        let s = raw_scores(q, k, SimilarityKind::Cosine, None, NORM_EPS).unwrap();
        assert!(s.value().is_finite());
    }

    #[test]
    fn single_key_gives_unit_weight() {
        for kind in SimilarityKind::ALL {
            let tape = Tape::new();
            let q = tape.constant(t(&[&[0.3, -1.0], &[2.0, 0.5]]));
            let k = tape.constant(t(&[&[1.0, 1.0]]));
            let v = tape.constant(t(&[&[4.0, 5.0, 6.0]]));
            let form = (kind == SimilarityKind::Bilinear).then(|| tape.constant(Tensor::eye(2)));
            let a = scaled_attention(q, k, v, kind, form, NORM_EPS).unwrap();
            assert_eq!(a.weights.value().data(), &[1.0, 1.0]);
            assert_eq!(a.output.value().row(1), &[4.0, 5.0, 6.0]);
        }
    }

    #[test]
    fn uniform_scores_average_values() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[1, 2]));
        let k = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]));
        let v = tape.constant(Tensor::eye(3));
        let a = scaled_attention(q, k, v, SimilarityKind::DotProduct, None, NORM_EPS).unwrap();
        for x in a.output.value().data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_value_rows_are_rejected() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::ones(&[2, 2]));
        let v = tape.constant(Tensor::ones(&[3, 2]));
        assert!(matches!(
            scaled_attention(q, q, v, SimilarityKind::Cosine, None, NORM_EPS),
            Err(Error::Dimension { .. })
        ));
    }

    fn layer<'t>(tape: &'t Tape, heads: usize, logits: &[f64]) -> (ParameterSet, GdlAttentionParams<'t>) {
        let layout = AttentionLayout {
            d_model: 4,
            heads,
            d_k: 2,
            d_v: 3,
            similarity: SimilarityKind::Cosine,
        };
        let mut ps = ParameterSet::new();
        layout.init("a", &mut ChaCha8Rng::seed_from_u64(0), &mut ps).unwrap();
        ps.set("a.gate_logits", Tensor::new(vec![heads], logits.to_vec()).unwrap())
            .unwrap();
        let b = tape.bind(&ps);
        let p = GdlAttentionParams::from_bound(&b, "a", heads, SimilarityKind::Cosine).unwrap();
        (ps, p)
    }

    #[test]
    fn gate_value_examples() {
        let tape = Tape::new();
        let (_, p) = layer(&tape, 4, &[0.0; 4]);
        assert_eq!(gate_values(&p).unwrap().value().data(), &[0.5; 4]);
        let (_, p) = layer(&tape, 1, &[-40.0]);
        assert!(gate_values(&p).unwrap().value().data()[0] < 1e-15);
        let (_, p) = layer(&tape, 1, &[3f64.ln()]);
        assert!((gate_values(&p).unwrap().value().data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn closed_gates_zero_the_output() {
        let tape = Tape::new();
        let (_, p) = layer(&tape, 3, &[-1e3; 3]);
        let x = tape.constant(t(&[&[1.0, 2.0, -1.0, 0.5], &[0.1, -0.3, 2.0, 1.0]]));
        let out = gdl_attention(x, x, x, &p).unwrap();
        assert!(out.value().max_abs() < 1e-6);
    }

    #[test]
    fn wrong_input_width_names_the_head() {
        let tape = Tape::new();
        let (_, p) = layer(&tape, 2, &[0.0; 2]);
        let x = tape.constant(Tensor::ones(&[2, 5]));
        assert!(matches!(gdl_attention(x, x, x, &p), Err(Error::HeadDimension { .. })));
    }

    #[test]
    fn mismatched_head_widths_are_rejected() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[4, 2]));
        let b = tape.constant(Tensor::ones(&[4, 3]));
        let heads = vec![
            HeadParams {
                w_q: a,
                w_k: a,
                w_v: a,
                bilinear_form: None,
            },
            HeadParams {
                w_q: b,
                w_k: b,
                w_v: a,
                bilinear_form: None,
            },
        ];
        let w_o = tape.constant(Tensor::ones(&[4, 4]));
        let g = tape.constant(Tensor::zeros(&[2]));
        let err = GdlAttentionParams::new(heads, w_o, g, SimilarityKind::Cosine).unwrap_err();
        assert!(matches!(err, Error::HeadDimension { head: 1, .. }));
    }

    #[test]
    fn effective_heads() {
        let z = Tensor::zeros(&[5]);
        assert_eq!(effective_head_count(&z, 0.4).unwrap(), 5);
        assert_eq!(effective_head_count(&Tensor::full(&[3], -40.0), 0.1).unwrap(), 0);
        let mixed = Tensor::new(vec![3], vec![-40.0, 40.0, 0.0]).unwrap();
        assert_eq!(effective_head_count(&mixed, 0.6).unwrap(), 1);
        assert!(effective_head_count(&z, 1.0).is_err());
        assert!(effective_head_count(&z, 0.0).is_err());
    }

    #[test]
    fn similarity_parses_and_prints() {
        for k in SimilarityKind::ALL {
            assert_eq!(k.to_string().parse::<SimilarityKind>().unwrap(), k);
        }
        assert!("euclid".parse::<SimilarityKind>().is_err());
        assert_eq!(SimilarityKind::default(), SimilarityKind::Cosine);
    }
}
