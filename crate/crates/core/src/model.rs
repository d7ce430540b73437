//! Beta Wavelet Graph Neural Network.
//!
//! ```text
//! F   = MLP_in(X)
//! Z_i = W_{i, C-i} F                for i = 0..=C
//! H   = AGG(Z_0, ..., Z_C)          concat or sum
//! p   = sigmoid(MLP_head(H))
//! ```
//!
//! In hetero mode `H` is computed per relation with shared weights and
//! reduced by an elementwise max before the head. Gradients are derived by
//! hand; the wavelet operators are fixed symmetric matrices, so they
//! backpropagate as themselves.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, Label, Laplacian, LaplacianKind};
use crate::metrics::{auc, threshold_search};
use crate::split::Split;
use crate::wavelet::{chebyshev_apply_columns, wavelet_apply_columns, HeatKernel, WaveletBank};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Concat,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationMode {
    /// All relations merged into one edge set.
    Homo,
    /// Per-relation propagation, elementwise max before the head.
    Hetero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Activation::Relu => z.map(|v| v.max(0.0)),
            Activation::Tanh => z.map(f64::tanh),
        }
    }

    // Multiplies `grad` in place by the derivative at pre-activation `z`.
    fn backprop(self, z: &DMatrix<f64>, grad: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => grad.zip_apply(z, |g, v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_apply(z, |g, v| *g *= 1.0 - v.tanh().powi(2)),
        }
    }
}

/// Spectral filters applied in parallel to the MLP features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FilterSpec {
    /// The `C + 1` Beta wavelets of order `C`.
    Beta,
    /// Heat kernels `exp(-tau L)`.
    Heat { taus: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub order: usize,
    pub hidden_dim: usize,
    pub agg: Aggregation,
    pub relation_mode: RelationMode,
    pub mlp_depth_in: usize,
    pub mlp_depth_head: usize,
    pub activation: Activation,
    pub filter: FilterSpec,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            order: 2,
            hidden_dim: 64,
            agg: Aggregation::Concat,
            relation_mode: RelationMode::Homo,
            mlp_depth_in: 2,
            mlp_depth_head: 2,
            activation: Activation::Relu,
            filter: FilterSpec::Beta,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn num_filters(&self) -> usize {
        match &self.filter {
            FilterSpec::Beta => self.order + 1,
            FilterSpec::Heat { taus } => taus.len(),
        }
    }

    fn aggregated_dim(&self) -> usize {
        match self.agg {
            Aggregation::Concat => self.num_filters() * self.hidden_dim,
            Aggregation::Sum => self.hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be at least 1"));
        }
        if self.mlp_depth_in == 0 || self.mlp_depth_head == 0 {
            return Err(Error::invalid("MLP depths must be at least 1"));
        }
        if self.order > crate::wavelet::MAX_ORDER {
            return Err(Error::invalid(format!(
                "order {} exceeds the supported maximum {}",
                self.order,
                crate::wavelet::MAX_ORDER
            )));
        }
        if let FilterSpec::Heat { taus } = &self.filter {
            if taus.is_empty() {
                return Err(Error::invalid("heat filter bank needs at least one scale"));
            }
            for &t in taus {
                HeatKernel::new(t)?;
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer, input MLP first.
    pub fn layer_shapes(&self, input_dim: usize) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let h = self.hidden_dim;
        let input = (0..self.mlp_depth_in)
            .map(|l| (if l == 0 { input_dim } else { h }, h))
            .collect();
        let head = (0..self.mlp_depth_head)
            .map(|l| {
                let fan_in = if l == 0 { self.aggregated_dim() } else { h };
                let fan_out = if l + 1 == self.mlp_depth_head { 1 } else { h };
                (fan_in, fan_out)
            })
            .collect();
        (input, head)
    }

    /// Digest of every quantity that determines parameter shapes.
    pub fn shape_hash(&self, input_dim: usize) -> String {
        let (input, head) = self.layer_shapes(input_dim);
        let desc = format!("bwgnn/v{CHECKPOINT_VERSION}/in={input:?}/head={head:?}");
        let digest = Sha256::digest(desc.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-a..a)),
            bias: DVector::zeros(fan_out),
        }
    }

    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        for (mut col, b) in z.column_iter_mut().zip(self.bias.iter()) {
            col.add_scalar_mut(*b);
        }
        z
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// All trainable weights: the input MLP followed by the head MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input: Vec<Dense>,
    pub head: Vec<Dense>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, drawn layer by layer from `cfg.seed`.
    pub fn init(cfg: &ModelConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (input, head) = cfg.layer_shapes(input_dim);
        let mut build = |shapes: Vec<(usize, usize)>| {
            shapes
                .into_iter()
                .map(|(i, o)| Dense::glorot(i, o, &mut rng))
                .collect::<Vec<_>>()
        };
        let input = build(input);
        let head = build(head);
        Ok(Self { input, head })
    }

    pub fn input_dim(&self) -> usize {
        self.input[0].weight.nrows()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.input.iter().chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.input.iter_mut().chain(self.head.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    /// Layer by layer: weight (column-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in self.layers() {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut pos = 0;
        for layer in self.layers_mut() {
            let w = layer.weight.len();
            layer.weight.as_mut_slice().copy_from_slice(&flat[pos..pos + w]);
            pos += w;
            let b = layer.bias.len();
            layer.bias.as_mut_slice().copy_from_slice(&flat[pos..pos + b]);
            pos += b;
        }
        Ok(())
    }

    pub fn from_flat(cfg: &ModelConfig, input_dim: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::init(cfg, input_dim)?;
        p.set_flat(flat)?;
        Ok(p)
    }

    fn zeros_like(&self) -> Self {
        let zero = |d: &Dense| Dense {
            weight: DMatrix::zeros(d.weight.nrows(), d.weight.ncols()),
            bias: DVector::zeros(d.bias.len()),
        };
        Self {
            input: self.input.iter().map(zero).collect(),
            head: self.head.iter().map(zero).collect(),
        }
    }

    fn check(&self, cfg: &ModelConfig, input_dim: usize) -> Result<()> {
        let (input, head) = cfg.layer_shapes(input_dim);
        let shapes = |ls: &[Dense]| -> Vec<(usize, usize)> {
            ls.iter().map(|d| (d.weight.nrows(), d.weight.ncols())).collect()
        };
        if shapes(&self.input) != input || shapes(&self.head) != head {
            if self.input.first().map(|d| d.weight.nrows()) != Some(input_dim) {
                return Err(Error::DimensionMismatch {
                    expected: self.input.first().map_or(0, |d| d.weight.nrows()),
                    found: input_dim,
                });
            }
            return Err(Error::invalid("parameter shapes do not match the model config"));
        }
        Ok(())
    }
}

/// Per-node anomaly probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn labels_at_threshold(&self, threshold: f64) -> Vec<bool> {
        crate::metrics::predict(&self.scores, threshold)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weight on the anomaly term of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `#normal / #anomalous` in the training set.
    #[default]
    Inverse,
    /// `#anomalous / #normal`.
    PaperLiteral,
    /// 1.
    Unit,
}

impl std::str::FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(GammaMode::Inverse),
            "paper_literal" | "paper-literal" => Ok(GammaMode::PaperLiteral),
            "unit" => Ok(GammaMode::Unit),
            other => Err(Error::invalid(format!("unknown gamma mode '{other}'"))),
        }
    }
}

/// Class weight for the anomaly term, from the labels at `mask`.
pub fn gamma(labels: &[Label], mask: &[usize], mode: GammaMode) -> Result<f64> {
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &i in mask {
        match labels.get(i) {
            Some(Label::Anomalous) => pos += 1,
            Some(Label::Normal) => neg += 1,
            Some(Label::Unlabeled) => {
                return Err(Error::invalid(format!("training node {i} is unlabeled")));
            }
            None => {
                return Err(Error::IndexOutOfRange {
                    what: "node",
                    index: i,
                    limit: labels.len(),
                })
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::GammaUndefined);
    }
    Ok(match mode {
        GammaMode::Inverse => neg as f64 / pos as f64,
        GammaMode::PaperLiteral => pos as f64 / neg as f64,
        GammaMode::Unit => 1.0,
    })
}

/// Weighted binary cross-entropy over `mask`, minimized:
/// `-sum_i (gamma y_i log p_i + (1 - y_i) log(1 - p_i))`.
pub fn loss(scores: &[f64], labels: &[Label], mask: &[usize], mode: GammaMode) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let g = gamma(labels, mask, mode)?;
    let mut total = 0.0;
    for &i in mask {
        let p = scores[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= match labels[i] {
            Label::Anomalous => g * p.ln(),
            _ => (1.0 - p).ln(),
        };
    }
    Ok(total)
}

// One relation's filter bank, ready to apply. Heat kernels use a
// Chebyshev expansion so no eigendecomposition is needed.
enum FilterOp {
    Beta { bank: WaveletBank, lap: Laplacian },
    Heat { coeffs: Vec<Vec<f64>>, lap: Laplacian },
}

impl FilterOp {
    fn apply_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        match self {
            FilterOp::Beta { bank, lap } => bank.apply_all(lap, x),
            FilterOp::Heat { coeffs, lap } => chebyshev_apply_columns(lap, x, coeffs),
        }
        .expect("checked at construction")
    }

    // sum_i W_i g_i (every W_i is symmetric)
    fn adjoint_sum(&self, grads: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(grads[0].nrows(), grads[0].ncols());
        match self {
            FilterOp::Beta { bank, lap } => {
                for (k, g) in bank.kernels().iter().zip(grads) {
                    acc += wavelet_apply_columns(k, lap, g).expect("checked at construction");
                }
            }
            FilterOp::Heat { coeffs, lap } => {
                for (c, g) in coeffs.iter().zip(grads) {
                    let applied = chebyshev_apply_columns(lap, g, std::slice::from_ref(c));
                    acc += &applied.expect("checked at construction")[0];
                }
            }
        }
        acc
    }
}

/// A model configuration bound to one graph's propagation operators.
pub struct Bwgnn {
    cfg: ModelConfig,
    num_nodes: usize,
    filters: Vec<FilterOp>,
}

/// Intermediate values kept for backpropagation.
pub struct ForwardCache {
    input_pre: Vec<DMatrix<f64>>,
    input_act: Vec<DMatrix<f64>>,
    // Relation that won the max for every entry of H (hetero only).
    argmax: Option<Vec<u32>>,
    head_pre: Vec<DMatrix<f64>>,
    head_act: Vec<DMatrix<f64>>,
    logits: Vec<f64>,
    scores: Vec<f64>,
}

impl ForwardCache {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Aggregated representation fed to the head.
    pub fn representation(&self) -> &DMatrix<f64> {
        &self.head_act[0]
    }
}

impl Bwgnn {
    /// Builds normalized Laplacians (and spectra for heat filters) for `g`.
    pub fn new(g: &Graph, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let edge_sets = match cfg.relation_mode {
            RelationMode::Homo => vec![g.union_edges()],
            RelationMode::Hetero => g.relations().to_vec(),
        };
        let filters = edge_sets
            .into_iter()
            .map(|edges| {
                let lap = Laplacian::new(edges, LaplacianKind::Normalized)?;
                Ok(match &cfg.filter {
                    FilterSpec::Beta => FilterOp::Beta {
                        bank: WaveletBank::new(cfg.order)?,
                        lap,
                    },
                    FilterSpec::Heat { taus } => FilterOp::Heat {
                        coeffs: taus
                            .iter()
                            .map(|&t| Ok(HeatKernel::new(t)?.chebyshev_coefficients()))
                            .collect::<Result<_>>()?,
                        lap,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            num_nodes: g.num_nodes(),
            filters,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn aggregate(&self, zs: Vec<DMatrix<f64>>) -> DMatrix<f64> {
        match self.cfg.agg {
            Aggregation::Sum => zs.into_iter().reduce(|a, b| a + b).unwrap(),
            Aggregation::Concat => {
                let n = zs[0].nrows();
                let h = zs[0].ncols();
                let mut out = DMatrix::zeros(n, h * zs.len());
                for (i, z) in zs.iter().enumerate() {
                    out.columns_mut(i * h, h).copy_from(z);
                }
                out
            }
        }
    }

    pub fn forward_cached(&self, params: &ModelParams, features: &DMatrix<f64>) -> Result<ForwardCache> {
        if features.nrows() != self.num_nodes {
            return Err(Error::DimensionMismatch {
                expected: self.num_nodes,
                found: features.nrows(),
            });
        }
        params.check(&self.cfg, features.ncols())?;
        let act = self.cfg.activation;

        let mut input_pre = Vec::with_capacity(params.input.len());
        let mut input_act = vec![features.clone()];
        for layer in &params.input {
            let z = layer.forward(input_act.last().unwrap());
            input_act.push(act.apply(&z));
            input_pre.push(z);
        }
        let f = input_act.last().unwrap();

        let mut per_relation = self.filters.iter().map(|op| self.aggregate(op.apply_all(f)));
        let mut h = per_relation.next().unwrap();
        let argmax = if self.filters.len() > 1 {
            let mut winner = vec![0u32; h.len()];
            for (r, hr) in per_relation.enumerate() {
                for ((cur, cand), w) in h.iter_mut().zip(hr.iter()).zip(winner.iter_mut()) {
                    if *cand > *cur {
                        *cur = *cand;
                        *w = r as u32 + 1;
                    }
                }
            }
            Some(winner)
        } else {
            None
        };

        let mut head_pre = Vec::with_capacity(params.head.len());
        let mut head_act = vec![h];
        let last = params.head.len() - 1;
        for (l, layer) in params.head.iter().enumerate() {
            let z = layer.forward(head_act.last().unwrap());
            if l < last {
                head_act.push(act.apply(&z));
            }
            head_pre.push(z);
        }
        let logits: Vec<f64> = head_pre[last].column(0).iter().copied().collect();
        let scores = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardCache {
            input_pre,
            input_act,
            argmax,
            head_pre,
            head_act,
            logits,
            scores,
        })
    }

    pub fn forward(&self, params: &ModelParams, features: &DMatrix<f64>) -> Result<Prediction> {
        Ok(Prediction {
            scores: self.forward_cached(params, features)?.scores,
        })
    }

    /// Loss over `mask` and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        params: &ModelParams,
        features: &DMatrix<f64>,
        labels: &[Label],
        mask: &[usize],
        mode: GammaMode,
    ) -> Result<(f64, ModelParams, ForwardCache)> {
        let cache = self.forward_cached(params, features)?;
        let value = loss(&cache.scores, labels, mask, mode)?;
        let g = gamma(labels, mask, mode)?;

        let mut dlogit = DMatrix::zeros(self.num_nodes, 1);
        for &i in mask {
            let p = cache.scores[i];
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                continue;
            }
            dlogit[(i, 0)] = match labels[i] {
                Label::Anomalous => -g * (1.0 - p),
                _ => p,
            };
        }
        let grads = self.backward(params, &cache, dlogit);
        Ok((value, grads, cache))
    }

    fn backward(&self, params: &ModelParams, cache: &ForwardCache, dlogit: DMatrix<f64>) -> ModelParams {
        let act = self.cfg.activation;
        let mut grads = params.zeros_like();

        // Head MLP, last layer first.
        let mut delta = dlogit;
        for l in (0..params.head.len()).rev() {
            if l + 1 < params.head.len() {
                act.backprop(&cache.head_pre[l], &mut delta);
            }
            let input = &cache.head_act[l];
            grads.head[l].weight = input.tr_mul(&delta);
            grads.head[l].bias = column_sums(&delta);
            delta = &delta * params.head[l].weight.transpose();
        }

        // Max pooling routes each entry to its winning relation.
        let h = self.cfg.hidden_dim;
        let k = self.cfg.num_filters();
        let mut d_features = DMatrix::zeros(self.num_nodes, h);
        for (r, op) in self.filters.iter().enumerate() {
            let d_rel = match &cache.argmax {
                None => delta.clone(),
                Some(w) => {
                    let mut d = delta.clone();
                    for (v, &win) in d.iter_mut().zip(w) {
                        if win as usize != r {
                            *v = 0.0;
                        }
                    }
                    d
                }
            };
            let pieces: Vec<DMatrix<f64>> = match self.cfg.agg {
                Aggregation::Concat => (0..k).map(|i| d_rel.columns(i * h, h).into_owned()).collect(),
                Aggregation::Sum => vec![d_rel; k],
            };
            d_features += op.adjoint_sum(&pieces);
        }

        // Input MLP; every layer is followed by the activation.
        let mut delta = d_features;
        for l in (0..params.input.len()).rev() {
            act.backprop(&cache.input_pre[l], &mut delta);
            grads.input[l].weight = cache.input_act[l].tr_mul(&delta);
            grads.input[l].bias = column_sums(&delta);
            if l > 0 {
                delta = &delta * params.input[l].weight.transpose();
            }
        }
        grads
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Scores every node of `g`.
pub fn forward(params: &ModelParams, g: &Graph, cfg: &ModelConfig) -> Result<Prediction> {
    Bwgnn::new(g, cfg)?.forward(params, g.features())
}

/// Loss over `mask` and its flat gradient (layout of [`ModelParams::to_flat`]).
pub fn gradient(
    params: &ModelParams,
    g: &Graph,
    mask: &[usize],
    cfg: &ModelConfig,
    mode: GammaMode,
) -> Result<(f64, Vec<f64>)> {
    let model = Bwgnn::new(g, cfg)?;
    let (value, grads, _) = model.loss_and_gradient(params, g.features(), g.labels(), mask, mode)?;
    Ok((value, grads.to_flat()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gamma_mode: GammaMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            gamma_mode: GammaMode::Inverse,
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    #[serde(with = "crate::io::nullable")]
    pub val_auc: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_threshold: f64,
    pub best_val_f1: f64,
    pub history: Vec<EpochRecord>,
}

fn targets(labels: &[Label], mask: &[usize]) -> Vec<bool> {
    mask.iter().map(|&i| labels[i] == Label::Anomalous).collect()
}

/// Validation F1-macro at the searched threshold, plus AUC. Falls back to
/// threshold 0.5 and NaN AUC when the validation set has one class.
fn validate(scores: &[f64], labels: &[Label], mask: &[usize]) -> Result<(f64, f64, f64)> {
    let y = targets(labels, mask);
    let s: Vec<f64> = mask.iter().map(|&i| scores[i]).collect();
    if y.is_empty() {
        return Ok((f64::NAN, f64::NAN, 0.5));
    }
    match threshold_search(&y, &s) {
        Ok(t) => Ok((t.f1_macro, auc(&y, &s)?, t.threshold)),
        Err(Error::Invalid(_)) => {
            let f1 = crate::metrics::f1_macro(&y, &crate::metrics::predict(&s, 0.5))?;
            Ok((f1, f64::NAN, 0.5))
        }
        Err(e) => Err(e),
    }
}

/// Full-batch Adam for `tcfg.epochs` steps. Each epoch scores the
/// validation set with the parameters used for that step and keeps the
/// parameters with the best validation F1-macro (earliest on ties).
pub fn train(g: &Graph, split: &Split, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = Bwgnn::new(g, mcfg)?;
    train_with(&model, g, split, tcfg, ModelParams::init(mcfg, g.feature_dim())?)
}

pub fn train_with(
    model: &Bwgnn,
    g: &Graph,
    split: &Split,
    tcfg: &TrainConfig,
    init: ModelParams,
) -> Result<TrainOutcome> {
    if tcfg.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if !(tcfg.learning_rate >= 0.0 && tcfg.learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be finite and nonnegative"));
    }
    check_disjoint(split, g.num_nodes())?;
    let labels = g.labels();
    gamma(labels, &split.train, tcfg.gamma_mode)?;

    let mut params = init;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), tcfg);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, f64, ModelParams)> = None;
    for epoch in 0..tcfg.epochs {
        let (value, grads, cache) =
            model.loss_and_gradient(&params, g.features(), labels, &split.train, tcfg.gamma_mode)?;
        let (val_f1, val_auc, threshold) = validate(cache.scores(), labels, &split.val)?;
        history.push(EpochRecord {
            epoch,
            loss: value,
            val_f1,
            val_auc,
            threshold,
        });
        if best.as_ref().map_or(true, |b| val_f1 > b.0) {
            best = Some((val_f1, epoch, threshold, params.clone()));
        }
        adam.step(&mut flat, &grads.to_flat());
        params.set_flat(&flat)?;
    }
    let (best_val_f1, best_epoch, best_threshold, best_params) = best.unwrap();
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_threshold,
        best_val_f1,
        history,
    })
}

fn check_disjoint(split: &Split, n: usize) -> Result<()> {
    let mut owner = vec![0u8; n];
    for (tag, mask) in [(1u8, &split.train), (2, &split.val), (3, &split.test)] {
        for &i in mask.iter() {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    what: "node",
                    index: i,
                    limit: n,
                });
            }
            if owner[i] != 0 {
                return Err(Error::invalid(format!("node {i} appears in more than one split")));
            }
            owner[i] = tag;
        }
    }
    Ok(())
}

/// Config, decision threshold and flat parameters of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub input_dim: usize,
    pub shape_hash: String,
    pub threshold: f64,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &ModelParams, threshold: f64) -> Self {
        let input_dim = params.input_dim();
        Self {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            input_dim,
            shape_hash: config.shape_hash(input_dim),
            threshold,
            params: params.to_flat(),
        }
    }

    /// Rebuilds the parameters after checking version and shape hash.
    pub fn params(&self) -> Result<ModelParams> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::SchemaVersion {
                found: self.format_version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let computed = self.config.shape_hash(self.input_dim);
        if computed != self.shape_hash {
            return Err(Error::ShapeMismatch {
                stored: self.shape_hash.clone(),
                computed,
            });
        }
        ModelParams::from_flat(&self.config, self.input_dim, &self.params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::io::write_file(path.as_ref(), serde_json::to_string(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&crate::io::read_file(path.as_ref())?)?;
        ckpt.params()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeSet;
    use crate::synth::{generate, SynthSpec};

    fn small_graph(n: usize, d: usize, seed: u64) -> Graph {
        let mut spec = SynthSpec::ba_gaussian(n, 2, 0.2, 3.0, d, seed);
        spec.anomaly_fraction = 0.2;
        generate(&spec).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            seed: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn parameter_count_from_config() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, 4).unwrap();
        // in: 4*8+8, 8*8+8; head: 24*8+8, 8*1+1
        assert_eq!(p.num_params(), 40 + 72 + 200 + 9);
        let flat = p.to_flat();
        assert_eq!(ModelParams::from_flat(&cfg, 4, &flat).unwrap(), p);
    }

    #[test]
    fn zero_head_gives_half() {
        let g = small_graph(40, 3, 1);
        let cfg = small_cfg();
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        let last = p.head.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let pred = forward(&p, &g, &cfg).unwrap();
        assert!(pred.scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn feature_dim_mismatch() {
        let g = small_graph(30, 3, 1);
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, 4).unwrap();
        assert!(matches!(forward(&p, &g, &cfg), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn order_zero_sum_is_halved_mlp() {
        let g = small_graph(30, 3, 2);
        let cfg = ModelConfig {
            order: 0,
            agg: Aggregation::Sum,
            ..small_cfg()
        };
        let p = ModelParams::init(&cfg, 3).unwrap();
        let pred = forward(&p, &g, &cfg).unwrap();

        let relu = |m: DMatrix<f64>| m.map(|v| v.max(0.0));
        let mut a = g.features().clone();
        for layer in &p.input {
            a = relu(layer.forward(&a));
        }
        let hidden = relu(p.head[0].forward(&(a * 0.5)));
        let logits = p.head[1].forward(&hidden);
        for (s, z) in pred.scores.iter().zip(logits.iter()) {
            assert!((s - sigmoid(*z)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_examples() {
        let labels = [Label::Anomalous, Label::Normal, Label::Normal, Label::Anomalous];
        let mask = [0, 1, 2, 3];
        let half = loss(&[0.5; 4], &labels, &mask, GammaMode::Unit).unwrap();
        assert!((half - 4.0 * 2f64.ln()).abs() < 1e-12);

        let perfect = loss(&[1.0, 0.0, 0.0, 1.0], &labels, &mask, GammaMode::Unit).unwrap();
        assert!((perfect - 4.0 * -(1.0 - PROB_CLAMP).ln()).abs() < 1e-15);
        assert!(perfect < 1e-6);

        let one_class = [Label::Normal; 4];
        let err = loss(&[0.5; 4], &one_class, &mask, GammaMode::Unit).unwrap_err();
        assert!(err.to_string().starts_with("gamma undefined"));
    }

    #[test]
    fn loss_matches_scalar_reference() {
        let labels = [Label::Anomalous, Label::Normal, Label::Normal, Label::Normal, Label::Unlabeled];
        let scores = [0.3, 0.1, 0.8, 0.45, 0.9];
        let mask = [0, 1, 2, 3];
        for (mode, g) in [(GammaMode::Inverse, 3.0), (GammaMode::PaperLiteral, 1.0 / 3.0), (GammaMode::Unit, 1.0)] {
            let mut want = 0.0;
            for &i in &mask {
                let y = if labels[i] == Label::Anomalous { 1.0 } else { 0.0 };
                let p: f64 = scores[i];
                want -= g * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            let got = loss(&scores, &labels, &mask, mode).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn head_bias_gradient_closed_form() {
        let g = small_graph(30, 3, 3);
        let cfg = small_cfg();
        let mut p = ModelParams::init(&cfg, 3).unwrap();
        let last = p.head.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let mask: Vec<usize> = (0..30).collect();
        let model = Bwgnn::new(&g, &cfg).unwrap();
        let (_, grads, _) = model
            .loss_and_gradient(&p, g.features(), g.labels(), &mask, GammaMode::Inverse)
            .unwrap();
        let pos = g.anomalies().len() as f64;
        let neg = 30.0 - pos;
        let gam = neg / pos;
        // sum over nodes of gamma*(p-1) for anomalies and p for normals, p = 1/2
        let want = pos * gam * -0.5 + neg * 0.5;
        assert!((grads.head.last().unwrap().bias[0] - want).abs() < 1e-12);
        assert_eq!(want, 0.0);
    }

    #[test]
    fn hetero_single_relation_equals_homo() {
        let g = small_graph(40, 3, 4);
        let homo = small_cfg();
        let hetero = ModelConfig {
            relation_mode: RelationMode::Hetero,
            ..small_cfg()
        };
        let p = ModelParams::init(&homo, 3).unwrap();
        assert_eq!(forward(&p, &g, &homo).unwrap(), forward(&p, &g, &hetero).unwrap());
    }

    #[test]
    fn lr_zero_keeps_params() {
        let g = small_graph(60, 3, 5);
        let split = crate::split::split_nodes(g.labels(), &crate::split::SplitSpec::new(0.4, 0)).unwrap();
        let cfg = small_cfg();
        let tcfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&g, &split, &cfg, &tcfg).unwrap();
        assert_eq!(out.best_params, ModelParams::init(&cfg, 3).unwrap());
        assert!(out.history.windows(2).all(|w| w[0].loss == w[1].loss && w[0].val_f1 == w[1].val_f1));
    }

    #[test]
    fn overlapping_split_rejected() {
        let g = small_graph(30, 2, 6);
        let split = Split {
            train: vec![0, 1, 2],
            val: vec![2],
            test: vec![],
        };
        assert!(train(&g, &split, &small_cfg(), &TrainConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let cfg = small_cfg();
        let p = ModelParams::init(&cfg, 3).unwrap();
        let ckpt = Checkpoint::new(&cfg, &p, 0.35);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params().unwrap(), p);

        let mut tampered = ckpt.clone();
        tampered.config.hidden_dim = 9;
        assert!(matches!(tampered.params(), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn heat_filter_bank_runs() {
        let edges = EdgeSet::from_pairs(5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap().0;
        let feats = DMatrix::from_fn(5, 2, |i, j| (i + j) as f64);
        let g = Graph::new(vec![edges], feats, vec![Label::Normal; 5]).unwrap();
        let cfg = ModelConfig {
            filter: FilterSpec::Heat { taus: vec![1.0, 3.0] },
            ..small_cfg()
        };
        let p = ModelParams::init(&cfg, 2).unwrap();
        let pred = forward(&p, &g, &cfg).unwrap();
        assert!(pred.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
