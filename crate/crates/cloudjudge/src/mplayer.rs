//! Deterministic forward pass of the message-passing operation used by
//! particle-cloud networks, as a property-testable kernel.
//!
//! One iteration sends a message `m_ij = f_e(h_i (+) h_j)` between every
//! ordered pair of genuine particles over a fully connected graph
//! (including `j = i` by default) and updates each particle as
//! `h'_i = f_n(h_i (+) sum_j m_ij)`. Masked slots are ignored entirely:
//! they neither send nor receive messages and stay zero. Only the
//! forward pass exists here; gradients appear solely as test oracles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, tag, uniform_in};

/// Negative slope of the hidden-layer rectifier.
pub const HIDDEN_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum MpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state has no unmasked rows")]
    EmptyCloud,
    #[error("feature map weights must be finite")]
    NonFiniteWeights,
}

/// Activation applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    LeakyRelu { negative_slope: f64 },
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu { negative_slope } => {
                if x >= 0.0 {
                    x
                } else {
                    negative_slope * x
                }
            }
        }
    }
}

/// A dense multilayer perceptron: weight matrices plus bias vectors,
/// leaky-rectified hidden layers and a configurable output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    dims: Vec<usize>,
    /// One row-major `dims[l+1] x dims[l]` matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: Activation,
}

impl FeatureMap {
    pub fn new(
        dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        output_activation: Activation,
    ) -> Result<Self, MpError> {
        if dims.len() < 2 {
            return Err(MpError::DimensionMismatch("need at least input and output dims".into()));
        }
        if weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(MpError::DimensionMismatch(format!(
                "expected {} layers, got {} weight and {} bias blocks",
                dims.len() - 1,
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..weights.len() {
            if weights[l].len() != dims[l + 1] * dims[l] || biases[l].len() != dims[l + 1] {
                return Err(MpError::DimensionMismatch(format!(
                    "layer {l} expects {}x{} weights and {} biases",
                    dims[l + 1],
                    dims[l],
                    dims[l + 1]
                )));
            }
            if weights[l].iter().chain(&biases[l]).any(|w| !w.is_finite()) {
                return Err(MpError::NonFiniteWeights);
            }
        }
        Ok(Self { dims, weights, biases, output_activation })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn layer_biases(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// All parameters flattened layer by layer (weights row-major, then
    /// biases), the order used by the file container.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    /// Rebuild from [`FeatureMap::flat_params`] output.
    pub fn from_flat_params(
        dims: Vec<usize>,
        params: &[f64],
        output_activation: Activation,
    ) -> Result<Self, MpError> {
        let expected: usize =
            (0..dims.len().saturating_sub(1)).map(|l| dims[l + 1] * dims[l] + dims[l + 1]).sum();
        if params.len() != expected {
            return Err(MpError::DimensionMismatch(format!(
                "expected {expected} parameters for dims {dims:?}, got {}",
                params.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut cursor = 0usize;
        for l in 0..dims.len() - 1 {
            let w = dims[l + 1] * dims[l];
            weights.push(params[cursor..cursor + w].to_vec());
            cursor += w;
            biases.push(params[cursor..cursor + dims[l + 1]].to_vec());
            cursor += dims[l + 1];
        }
        Self::new(dims, weights, biases, output_activation)
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>, MpError> {
        if input.len() != self.input_dim() {
            return Err(MpError::DimensionMismatch(format!(
                "input has {} features, map expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut current = input.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let (d_in, d_out) = (self.dims[l], self.dims[l + 1]);
            let mut next = vec![0.0; d_out];
            for (o, next_o) in next.iter_mut().enumerate() {
                let row = &self.weights[l][o * d_in..(o + 1) * d_in];
                let mut acc = self.biases[l][o];
                for (w, x) in row.iter().zip(&current) {
                    acc += w * x;
                }
                let act = if l == last {
                    self.output_activation
                } else {
                    Activation::LeakyRelu { negative_slope: HIDDEN_LEAKY_SLOPE }
                };
                *next_o = act.apply(acc);
            }
            current = next;
        }
        Ok(current)
    }
}

/// Seeded uniform `(-sqrt(1/fan_in), +sqrt(1/fan_in))` initialization,
/// bit-reproducible.
pub fn init_feature_map(dims: &[usize], seed: u64) -> Result<FeatureMap, MpError> {
    let mut rng = substream(seed, &[tag::MP_INIT]);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len().saturating_sub(1) {
        let bound = (1.0 / dims[l] as f64).sqrt();
        let w: Vec<f64> =
            (0..dims[l + 1] * dims[l]).map(|_| uniform_in(&mut rng, -bound, bound)).collect();
        let b: Vec<f64> = (0..dims[l + 1]).map(|_| uniform_in(&mut rng, -bound, bound)).collect();
        weights.push(w);
        biases.push(b);
    }
    FeatureMap::new(dims.to_vec(), weights, biases, Activation::Identity)
}

/// Particle features under message passing: an `N x H` matrix plus the
/// mask. Masked rows are zeroed on construction and stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpState {
    features: Vec<f64>,
    n: usize,
    width: usize,
    mask: Vec<bool>,
}

impl MpState {
    pub fn new(rows: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self, MpError> {
        if rows.len() != mask.len() {
            return Err(MpError::DimensionMismatch(format!(
                "{} feature rows but {} mask entries",
                rows.len(),
                mask.len()
            )));
        }
        let width = rows.first().map_or(0, |r| r.len());
        let mut features = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(MpError::DimensionMismatch(format!(
                    "row {i} has {} features, expected {width}",
                    row.len()
                )));
            }
            if mask[i] {
                features.extend_from_slice(row);
            } else {
                features.extend(std::iter::repeat_n(0.0, width));
            }
        }
        Ok(Self { features, n: rows.len(), width, mask })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn unmasked_indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.mask[i]).collect()
    }

    /// Genuine row indices ordered by their feature vectors. Sums taken
    /// in this order are exactly invariant under row permutations.
    fn canonical_unmasked_indices(&self) -> Vec<usize> {
        let mut idx = self.unmasked_indices();
        idx.sort_by(|&a, &b| {
            let (ra, rb) = (self.row(a), self.row(b));
            for (x, y) in ra.iter().zip(rb) {
                let ord = x.total_cmp(y);
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        });
        idx
    }
}

/// Options for [`mp_forward_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpOptions {
    /// Include the self-message `m_ii` in each particle's aggregation.
    pub include_self_messages: bool,
}

impl Default for MpOptions {
    fn default() -> Self {
        Self { include_self_messages: true }
    }
}

/// One message-passing iteration with default options (self-messages
/// included).
pub fn mp_forward(state: &MpState, f_e: &FeatureMap, f_n: &FeatureMap) -> Result<MpState, MpError> {
    mp_forward_with(state, f_e, f_n, MpOptions::default())
}

/// One message-passing iteration. Exactly equivariant under permutations
/// of the genuine rows; masked rows are ignored entirely and stay zero.
pub fn mp_forward_with(
    state: &MpState,
    f_e: &FeatureMap,
    f_n: &FeatureMap,
    opts: MpOptions,
) -> Result<MpState, MpError> {
    let h = state.width();
    if f_e.input_dim() != 2 * h {
        return Err(MpError::DimensionMismatch(format!(
            "edge map expects input dim {} for feature width {h}",
            f_e.input_dim()
        )));
    }
    if f_n.input_dim() != h + f_e.output_dim() {
        return Err(MpError::DimensionMismatch(format!(
            "node map input dim {} must equal width {h} + message dim {}",
            f_n.input_dim(),
            f_e.output_dim()
        )));
    }

    let order = state.canonical_unmasked_indices();
    let msg_dim = f_e.output_dim();
    let mut rows = vec![vec![0.0; f_n.output_dim()]; state.n_rows()];
    let mut pair_input = vec![0.0; 2 * h];
    let mut node_input = vec![0.0; h + msg_dim];

    for (i, out_row) in rows.iter_mut().enumerate() {
        if !state.mask[i] {
            continue;
        }
        let mut message_sum = vec![0.0; msg_dim];
        for &j in &order {
            if !opts.include_self_messages && j == i {
                continue;
            }
            pair_input[..h].copy_from_slice(state.row(i));
            pair_input[h..].copy_from_slice(state.row(j));
            let message = f_e.apply(&pair_input)?;
            for (acc, m) in message_sum.iter_mut().zip(&message) {
                *acc += m;
            }
        }
        node_input[..h].copy_from_slice(state.row(i));
        node_input[h..].copy_from_slice(&message_sum);
        *out_row = f_n.apply(&node_input)?;
    }

    MpState::new(rows, state.mask.clone())
}

/// Feature-wise mean over the genuine rows. Exactly permutation
/// invariant.
pub fn mp_pool(state: &MpState) -> Result<Vec<f64>, MpError> {
    let order = state.canonical_unmasked_indices();
    if order.is_empty() {
        return Err(MpError::EmptyCloud);
    }
    let mut out = vec![0.0; state.width()];
    for &i in &order {
        for (acc, v) in out.iter_mut().zip(state.row(i)) {
            *acc += v;
        }
    }
    let n = order.len() as f64;
    for v in &mut out {
        *v /= n;
    }
    Ok(out)
}
