//! The twin-branch encoder classifier.
//!
//! A window `X` (`W × n_features`) is split column-wise between two
//! branches. Each branch projects its columns to `d_model`, adds a fixed
//! sinusoidal positional encoding, and runs `n_layers` post-norm encoder
//! blocks:
//!
//! ```text
//! T1  = LayerNorm(T + GDLAttention(T, T, T))
//! out = LayerNorm(T1 + ReLU(T1·W1 + b1)·W2 + b2)
//! ```
//!
//! Both branch outputs are mean-pooled over time, concatenated, and mapped
//! to class logits by one fully connected layer. Branches do not share
//! weights.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{gdl_attention, AttentionLayout, GdlAttentionParams, SimilarityKind};
use crate::autodiff::{concat_cols, BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, ParameterSet};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How the input columns are shared between the two branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Branch 1 gets columns `[0, ⌈n/2⌉)`, branch 2 the rest.
    #[default]
    FeatureHalves,
    /// Both branches see every column.
    Duplicate,
}

impl SplitStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::FeatureHalves => "feature_halves",
            Self::Duplicate => "duplicate",
        }
    }

    /// Column counts `(branch 1, branch 2)` for `n` input features.
    pub fn widths(self, n: usize) -> Result<(usize, usize)> {
        match self {
            Self::FeatureHalves if n < 2 => Err(Error::config(format!(
                "feature_halves split needs at least 2 features, got {n}"
            ))),
            Self::FeatureHalves => Ok((n.div_ceil(2), n - n.div_ceil(2))),
            Self::Duplicate => Ok((n, n)),
        }
    }
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_halves" => Ok(Self::FeatureHalves),
            "duplicate" => Ok(Self::Duplicate),
            other => Err(Error::config(format!("unknown split strategy `{other}`"))),
        }
    }
}

/// How branch outputs are combined before the classifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    ConcatMeanPooled,
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_mean_pooled" => Ok(Self::ConcatMeanPooled),
            other => Err(Error::config(format!("unknown fusion `{other}`"))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("concat_mean_pooled")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinModelConfig {
    pub n_features: usize,
    pub window_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub similarity: SimilarityKind,
    pub split: SplitStrategy,
    pub fusion: Fusion,
    pub n_classes: usize,
}

const CONFIG_KEYS: [&str; 12] = [
    "n_features",
    "window_len",
    "d_model",
    "n_layers",
    "heads",
    "d_k",
    "d_v",
    "d_ff",
    "similarity",
    "split",
    "fusion",
    "n_classes",
];

impl TwinModelConfig {
    /// Desk-scale defaults: `d_model = 32`, two layers of four heads,
    /// `d_ff = 64`, cosine similarity, feature-halves split.
    pub fn desk(n_features: usize, window_len: usize, n_classes: usize) -> Self {
        let (d_model, heads) = (32, 4);
        TwinModelConfig {
            n_features,
            window_len,
            d_model,
            n_layers: 2,
            heads,
            d_k: (d_model / heads).max(1),
            d_v: (d_model / heads).max(1),
            d_ff: 64,
            similarity: SimilarityKind::Cosine,
            split: SplitStrategy::FeatureHalves,
            fusion: Fusion::ConcatMeanPooled,
            n_classes,
        }
    }

    /// The small model used for gradient checks: 6 features, window 4,
    /// `d_model = 8`, one layer of two heads, 3 classes.
    pub fn tiny() -> Self {
        TwinModelConfig {
            n_features: 6,
            window_len: 4,
            d_model: 8,
            n_layers: 1,
            heads: 2,
            d_k: 4,
            d_v: 4,
            d_ff: 16,
            similarity: SimilarityKind::Cosine,
            split: SplitStrategy::FeatureHalves,
            fusion: Fusion::ConcatMeanPooled,
            n_classes: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_features", self.n_features),
            ("window_len", self.window_len),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
            ("n_classes", self.n_classes),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("`{k}` must be positive")));
        }
        self.split.widths(self.n_features)?;
        Ok(())
    }

    pub fn branch_widths(&self) -> Result<(usize, usize)> {
        self.split.widths(self.n_features)
    }

    pub fn attention_layout(&self) -> AttentionLayout {
        AttentionLayout {
            d_model: self.d_model,
            heads: self.heads,
            d_k: self.d_k,
            d_v: self.d_v,
            similarity: self.similarity,
        }
    }

    /// Prefixes of every attention layer, e.g. `branch1.layer0.attn`.
    pub fn attention_prefixes(&self) -> Vec<String> {
        (1..=2)
            .flat_map(|b| (0..self.n_layers).map(move |l| format!("branch{b}.layer{l}.attn")))
            .collect()
    }

    /// Fresh parameters: Glorot-uniform weights, zero biases, unit layer-norm
    /// gains, zero gate logits.
    pub fn init_params(&self, seed: u64) -> Result<ParameterSet> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParameterSet::new();
        let (w1, w2) = self.branch_widths()?;
        let layout = self.attention_layout();
        for (b, width) in [(1, w1), (2, w2)] {
            ps.insert(
                format!("branch{b}.embed.w"),
                glorot_uniform(&mut rng, width, self.d_model),
            )?;
            for l in 0..self.n_layers {
                let p = format!("branch{b}.layer{l}");
                layout.init(&format!("{p}.attn"), &mut rng, &mut ps)?;
                ps.insert(format!("{p}.ff.w1"), glorot_uniform(&mut rng, self.d_model, self.d_ff))?;
                ps.insert(format!("{p}.ff.b1"), Tensor::zeros(&[self.d_ff]))?;
                ps.insert(format!("{p}.ff.w2"), glorot_uniform(&mut rng, self.d_ff, self.d_model))?;
                ps.insert(format!("{p}.ff.b2"), Tensor::zeros(&[self.d_model]))?;
                for ln in ["ln1", "ln2"] {
                    ps.insert(format!("{p}.{ln}.gain"), Tensor::ones(&[self.d_model]))?;
                    ps.insert(format!("{p}.{ln}.bias"), Tensor::zeros(&[self.d_model]))?;
                }
            }
        }
        ps.insert("head.fc.w", glorot_uniform(&mut rng, 2 * self.d_model, self.n_classes))?;
        ps.insert("head.fc.b", Tensor::zeros(&[self.n_classes]))?;
        Ok(ps)
    }

    /// Checks that `params` has exactly the names and shapes this config expects.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let expected = self.init_params(0)?;
        for (name, t) in expected.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::config(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if let Some(extra) = params.names().find(|n| !expected.contains(n)) {
            return Err(Error::config(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// Renders the `key = value` document stored beside a checkpoint.
    pub fn to_kv_string(&self) -> String {
        let values: [String; 12] = [
            self.n_features.to_string(),
            self.window_len.to_string(),
            self.d_model.to_string(),
            self.n_layers.to_string(),
            self.heads.to_string(),
            self.d_k.to_string(),
            self.d_v.to_string(),
            self.d_ff.to_string(),
            self.similarity.to_string(),
            self.split.to_string(),
            self.fusion.to_string(),
            self.n_classes.to_string(),
        ];
        let mut s = String::from("# twin model config\n");
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Parses a `key = value` document. Every key is required, unknown or
    /// repeated keys are rejected, and the result is validated.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        if let Some(k) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::config(format!("unknown model config key `{k}`")));
        }
        Self::from_kv_map(&map, None)
    }

    /// Applies a partial `key = value` document on top of `self`.
    pub fn with_overrides(&self, text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        if let Some(k) = map.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::config(format!("unknown model config key `{k}`")));
        }
        Self::from_kv_map(&map, Some(self))
    }

    fn from_kv_map(map: &BTreeMap<String, String>, base: Option<&Self>) -> Result<Self> {
        fn field<T: FromStr>(map: &BTreeMap<String, String>, key: &str, base: Option<T>) -> Result<T> {
            match (map.get(key), base) {
                (Some(v), _) => v
                    .parse()
                    .map_err(|_| Error::config(format!("invalid value `{v}` for `{key}`"))),
                (None, Some(b)) => Ok(b),
                (None, None) => Err(Error::config(format!("missing model config key `{key}`"))),
            }
        }
        let cfg = TwinModelConfig {
            n_features: field(map, "n_features", base.map(|b| b.n_features))?,
            window_len: field(map, "window_len", base.map(|b| b.window_len))?,
            d_model: field(map, "d_model", base.map(|b| b.d_model))?,
            n_layers: field(map, "n_layers", base.map(|b| b.n_layers))?,
            heads: field(map, "heads", base.map(|b| b.heads))?,
            d_k: field(map, "d_k", base.map(|b| b.d_k))?,
            d_v: field(map, "d_v", base.map(|b| b.d_v))?,
            d_ff: field(map, "d_ff", base.map(|b| b.d_ff))?,
            similarity: field(map, "similarity", base.map(|b| b.similarity))?,
            split: field(map, "split", base.map(|b| b.split))?,
            fusion: field(map, "fusion", base.map(|b| b.fusion))?,
            n_classes: field(map, "n_classes", base.map(|b| b.n_classes))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            column: 1,
            message: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if map.insert(k.clone(), v).is_some() {
            return Err(Error::config(format!("repeated model config key `{k}`")));
        }
    }
    Ok(map)
}

/// Splits a window into the two branch inputs.
pub fn split_input(x: &Tensor, strategy: SplitStrategy) -> Result<(Tensor, Tensor)> {
    let (w, n) = x.dims2()?;
    match strategy {
        SplitStrategy::Duplicate => Ok((x.clone(), x.clone())),
        SplitStrategy::FeatureHalves => {
            let (a, b) = strategy.widths(n)?;
            let mut left = Vec::with_capacity(w * a);
            let mut right = Vec::with_capacity(w * b);
            for i in 0..w {
                let row = x.row(i);
                left.extend_from_slice(&row[..a]);
                right.extend_from_slice(&row[a..]);
            }
            Ok((Tensor::new(vec![w, a], left)?, Tensor::new(vec![w, b], right)?))
        }
    }
}

/// Sinusoidal encoding: `PE[p][2i] = sin(p / 10000^(2i/d))`,
/// `PE[p][2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d_model);
    for pos in 0..len {
        for j in 0..d_model {
            let pair = (j / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(pair as f64 / d_model as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_raw(vec![len, d_model], data)
}

/// Linear projection of a branch input plus the positional encoding.
pub fn embed<'t>(xb: &Tensor, projection: Var<'t>) -> Result<Var<'t>> {
    let tape = projection.tape();
    let (w, _) = xb.dims2()?;
    let d_model = projection.shape()[1];
    let h = tape.constant(xb.clone()).matmul(projection)?;
    h.add(tape.constant(positional_encoding(w, d_model)))
}

/// Parameters of one encoder block bound on a tape.
pub struct BlockParams<'t> {
    pub attn: GdlAttentionParams<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub ln1_gain: Var<'t>,
    pub ln1_bias: Var<'t>,
    pub ln2_gain: Var<'t>,
    pub ln2_bias: Var<'t>,
}

impl<'t> BlockParams<'t> {
    pub fn from_bound(bound: &BoundParams<'t>, prefix: &str, config: &TwinModelConfig) -> Result<Self> {
        let g = |s: &str| bound.get(&format!("{prefix}.{s}"));
        Ok(BlockParams {
            attn: GdlAttentionParams::from_bound(bound, &format!("{prefix}.attn"), config.heads, config.similarity)?,
            w1: g("ff.w1")?,
            b1: g("ff.b1")?,
            w2: g("ff.w2")?,
            b2: g("ff.b2")?,
            ln1_gain: g("ln1.gain")?,
            ln1_bias: g("ln1.bias")?,
            ln2_gain: g("ln2.gain")?,
            ln2_bias: g("ln2.bias")?,
        })
    }
}

pub fn encoder_block<'t>(t: Var<'t>, block: &BlockParams<'t>) -> Result<Var<'t>> {
    let att = gdl_attention(t, t, t, &block.attn)?;
    let t1 = t.add(att)?.layer_norm(block.ln1_gain, block.ln1_bias, LAYER_NORM_EPS)?;
    let ff = t1
        .matmul(block.w1)?
        .add_row(block.b1)?
        .relu()?
        .matmul(block.w2)?
        .add_row(block.b2)?;
    t1.add(ff)?.layer_norm(block.ln2_gain, block.ln2_bias, LAYER_NORM_EPS)
}

/// Runs one branch and returns its mean-pooled `1 × d_model` summary.
pub fn branch_forward<'t>(
    xb: &Tensor,
    branch: usize,
    bound: &BoundParams<'t>,
    config: &TwinModelConfig,
) -> Result<Var<'t>> {
    let mut h = embed(xb, bound.get(&format!("branch{branch}.embed.w"))?)?;
    for l in 0..config.n_layers {
        let block = BlockParams::from_bound(bound, &format!("branch{branch}.layer{l}"), config)?;
        h = encoder_block(h, &block)?;
    }
    h.mean_rows()
}

/// Class logits for one window as a `1 × n_classes` variable.
pub fn forward_var<'t>(x: &Tensor, bound: &BoundParams<'t>, config: &TwinModelConfig) -> Result<Var<'t>> {
    let shape = x.shape();
    if shape != [config.window_len, config.n_features] {
        return Err(Error::Dimension {
            op: "forward",
            lhs: shape.to_vec(),
            rhs: vec![config.window_len, config.n_features],
        });
    }
    let (x1, x2) = split_input(x, config.split)?;
    let p1 = branch_forward(&x1, 1, bound, config)?;
    let p2 = branch_forward(&x2, 2, bound, config)?;
    let fused = concat_cols(&[p1, p2])?;
    fused.matmul(bound.get("head.fc.w")?)?.add_row(bound.get("head.fc.b")?)
}

/// Raw logits (no softmax) for one window.
pub fn forward(x: &Tensor, params: &ParameterSet, config: &TwinModelConfig) -> Result<Vec<f64>> {
    let tape = Tape::no_grad();
    let bound = tape.bind(params);
    Ok(forward_var(x, &bound, config)?.value().data().to_vec())
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict(x: &Tensor, params: &ParameterSet, config: &TwinModelConfig) -> Result<usize> {
    Ok(argmax(&forward(x, params, config)?))
}
