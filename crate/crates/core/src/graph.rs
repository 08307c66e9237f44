//! Conversation graphs, symmetric normalization, the adaptive mixhop
//! recursion, and over-smoothing diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{DgodeError, Result};
use crate::numerics::{sym_eig, DenseMatrix, EigenSystem};

/// Feature channel of a graph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Audio => 1,
            Modality::Visual => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

/// Intra-modal temporal window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphWindow {
    pub past: usize,
    pub future: usize,
}

impl Default for GraphWindow {
    fn default() -> Self {
        Self { past: 4, future: 4 }
    }
}

/// Node index of `(utterance, modality)`; nodes are utterance-major.
#[inline]
pub fn node_index(utterance: usize, modality: Modality) -> usize {
    3 * utterance + modality.index()
}

/// Per-utterance input to [`build_conversation_graph`]: one `d`-dimensional
/// vector per modality plus annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceNodes {
    pub modal: [Vec<f64>; 3],
    pub speaker: usize,
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversationGraph {
    pub adjacency: DenseMatrix,
    pub features: DenseMatrix,
    pub utterance_index: Vec<usize>,
    pub modality: Vec<Modality>,
    pub speaker_id: Vec<usize>,
    pub label: Vec<Option<usize>>,
}

impl ConversationGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn utterance_count(&self) -> usize {
        self.speaker_id.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        let n = self.node_count();
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| self.adjacency[(i, j)] != 0.0).count()
    }
}

/// Binary symmetric adjacency over `3 · utterances` nodes: same-modality
/// nodes within the temporal window, and the three modality nodes of each
/// utterance pairwise.
pub fn conversation_adjacency(utterances: usize, window: GraphWindow) -> DenseMatrix {
    let n = 3 * utterances;
    let reach = window.past.max(window.future);
    let mut a = DenseMatrix::zeros(n, n);
    for i in 0..utterances {
        for m in Modality::ALL {
            for m2 in Modality::ALL {
                if m != m2 {
                    a[(node_index(i, m), node_index(i, m2))] = 1.0;
                }
            }
            for j in (i + 1)..utterances.min(i + reach + 1) {
                a[(node_index(i, m), node_index(j, m))] = 1.0;
                a[(node_index(j, m), node_index(i, m))] = 1.0;
            }
        }
    }
    a
}

pub fn build_conversation_graph(utterances: &[UtteranceNodes], window: GraphWindow) -> Result<ConversationGraph> {
    let first = utterances.first().ok_or_else(|| DgodeError::EmptyInput("conversation has no utterances".into()))?;
    let d = first.modal[0].len();
    let mut rows = Vec::with_capacity(3 * utterances.len());
    let mut utterance_index = Vec::with_capacity(3 * utterances.len());
    let mut modality = Vec::with_capacity(3 * utterances.len());
    for (i, u) in utterances.iter().enumerate() {
        for m in Modality::ALL {
            let v = &u.modal[m.index()];
            if v.len() != d {
                return Err(DgodeError::Dimension(format!(
                    "utterance {i} {} features have width {}, expected {d}",
                    m.name(),
                    v.len()
                )));
            }
            rows.push(v.clone());
            utterance_index.push(i);
            modality.push(m);
        }
    }
    Ok(ConversationGraph {
        adjacency: conversation_adjacency(utterances.len(), window),
        features: DenseMatrix::from_rows(&rows)?,
        utterance_index,
        modality,
        speaker_id: utterances.iter().map(|u| u.speaker).collect(),
        label: utterances.iter().map(|u| u.label).collect(),
    })
}

/// `Â = (α/2)(I + D^{-1/2} A D^{-1/2})` with its cached eigensystem.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub matrix: DenseMatrix,
    pub alpha: f64,
    pub eig: EigenSystem,
    /// The binary adjacency the operator was built from.
    pub source: DenseMatrix,
}

impl NormalizedAdjacency {
    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }
}

pub fn normalize_adjacency(a: &DenseMatrix, alpha: f64) -> Result<NormalizedAdjacency> {
    if !a.is_square() {
        return Err(DgodeError::Shape(format!("adjacency must be square, got {}x{}", a.rows(), a.cols())));
    }
    if a.asymmetry() != 0.0 {
        return Err(DgodeError::NotSymmetric(a.asymmetry()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DgodeError::Config(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let n = a.rows();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a.row(i).iter().sum();
            if deg > 0.0 {
                deg.sqrt().recip()
            } else {
                0.0
            }
        })
        .collect();
    let half = 0.5 * alpha;
    let matrix = DenseMatrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        half * (identity + inv_sqrt_deg[i] * a[(i, j)] * inv_sqrt_deg[j])
    });
    let eig = sym_eig(&matrix)?;
    Ok(NormalizedAdjacency { matrix, alpha, eig, source: a.clone() })
}

/// Learnable weight and per-hop gates of the mixhop recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct MixhopParams {
    pub weight: DenseMatrix,
    pub hop_gates: Vec<f64>,
}

impl MixhopParams {
    pub fn hop_count(&self) -> usize {
        self.hop_gates.len()
    }

    /// Projects gates onto the nonnegative orthant.
    pub fn project_gates(&mut self) {
        self.hop_gates.iter_mut().for_each(|g| *g = g.max(0.0));
    }
}

fn check_mixhop_shapes(h_n: &DenseMatrix, h_0: &DenseMatrix, adj: &NormalizedAdjacency, params: &MixhopParams) -> Result<()> {
    if h_n.shape() != h_0.shape() {
        return Err(DgodeError::Dimension(format!("H_n is {:?} but H_0 is {:?}", h_n.shape(), h_0.shape())));
    }
    if h_n.rows() != adj.node_count() {
        return Err(DgodeError::Dimension(format!("{} feature rows for {} nodes", h_n.rows(), adj.node_count())));
    }
    let d = h_n.cols();
    if params.weight.shape() != (d, d) {
        return Err(DgodeError::Dimension(format!("weight is {:?}, expected {d}x{d}", params.weight.shape())));
    }
    Ok(())
}

/// Powers `Â H, Â² H, …, Â^P H`.
fn hop_powers(h: &DenseMatrix, adj: &NormalizedAdjacency, hops: usize) -> Vec<DenseMatrix> {
    let mut out = Vec::with_capacity(hops);
    let mut cur = h.clone();
    for _ in 0..hops {
        cur = adj.matrix.dot(&cur);
        out.push(cur.clone());
    }
    out
}

fn gated_sum(powers: &[DenseMatrix], gates: &[f64], shape: (usize, usize)) -> DenseMatrix {
    let mut mixed = DenseMatrix::zeros(shape.0, shape.1);
    for (y, &beta) in powers.iter().zip(gates) {
        mixed.axpy(beta, y);
    }
    mixed
}

/// `H_{n+1} = Σ_p β_p Â^p H_n W + H_0`.
pub fn mixhop_step(h_n: &DenseMatrix, h_0: &DenseMatrix, adj: &NormalizedAdjacency, params: &MixhopParams) -> Result<DenseMatrix> {
    check_mixhop_shapes(h_n, h_0, adj, params)?;
    let powers = hop_powers(h_n, adj, params.hop_count());
    let mut out = gated_sum(&powers, &params.hop_gates, h_n.shape()).dot(&params.weight);
    out += h_0;
    Ok(out)
}

/// Applies [`mixhop_step`] `depth` times starting from `H_0 = e`.
pub fn unroll_mixhop(e: &DenseMatrix, adj: &NormalizedAdjacency, params: &MixhopParams, depth: usize) -> Result<DenseMatrix> {
    Ok(unroll_mixhop_trace(e, adj, params, depth)?.pop().expect("trace holds H_0"))
}

/// All iterates `H_0, …, H_depth`.
pub fn unroll_mixhop_trace(e: &DenseMatrix, adj: &NormalizedAdjacency, params: &MixhopParams, depth: usize) -> Result<Vec<DenseMatrix>> {
    check_mixhop_shapes(e, e, adj, params)?;
    let mut states = Vec::with_capacity(depth + 1);
    states.push(e.clone());
    for _ in 0..depth {
        let next = mixhop_step(states.last().expect("nonempty"), e, adj, params)?;
        states.push(next);
    }
    Ok(states)
}

/// Cotangents of an unrolled mixhop recursion.
#[derive(Clone, Debug)]
pub struct MixhopGrads {
    pub input: DenseMatrix,
    pub weight: DenseMatrix,
    pub hop_gates: Vec<f64>,
}

/// Reverse pass of [`unroll_mixhop_trace`] given `∂L/∂H_depth`.
pub fn unroll_mixhop_backward(states: &[DenseMatrix], grad_out: &DenseMatrix, adj: &NormalizedAdjacency, params: &MixhopParams) -> MixhopGrads {
    let d = params.weight.rows();
    let mut d_weight = DenseMatrix::zeros(d, d);
    let mut d_gates = vec![0.0; params.hop_count()];
    let mut d_input = DenseMatrix::zeros(grad_out.rows(), grad_out.cols());
    let mut g = grad_out.clone();
    for h_n in states[..states.len() - 1].iter().rev() {
        // residual branch
        d_input += &g;
        let powers = hop_powers(h_n, adj, params.hop_count());
        let mixed = gated_sum(&powers, &params.hop_gates, h_n.shape());
        d_weight += &mixed.t_dot(&g);
        let d_mixed = g.dot_t(&params.weight);
        for (dg, y) in d_gates.iter_mut().zip(&powers) {
            *dg += y.inner(&d_mixed);
        }
        // Σ_p β_p Â^p d_mixed, Horner-style; Â is symmetric.
        let mut acc = DenseMatrix::zeros(g.rows(), g.cols());
        for &beta in params.hop_gates.iter().rev() {
            acc.axpy(beta, &d_mixed);
            acc = adj.matrix.dot(&acc);
        }
        g = acc;
    }
    d_input += &g;
    MixhopGrads { input: d_input, weight: d_weight, hop_gates: d_gates }
}

/// `½ Σ_{i,j : A_ij = 1} ‖h_i − h_j‖²`.
pub fn dirichlet_energy(h: &DenseMatrix, adj: &NormalizedAdjacency) -> f64 {
    let a = &adj.source;
    let n = a.rows();
    let mut energy = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if a[(i, j)] != 0.0 {
                energy += h.row(i).iter().zip(h.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            }
        }
    }
    energy
}
