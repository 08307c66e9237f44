//! End-to-end classifier: modality encoders, conversation graph, mixhop
//! propagation, the graph ODE, and the softmax head; plus loss, gradients,
//! optimizer, training, metrics and the depth sweep.

mod gradcheck;
mod metrics;
mod params_io;
mod train;

#[cfg(test)]
mod tests;

pub use gradcheck::{gradient_check, toy_instance, TensorCheck, GRADIENT_TOLERANCE};
pub use metrics::{format_metrics_table, MetricsReport};
pub use params_io::{params_from_text, params_to_text};
pub use train::{
    adam_step, adam_update, depth_sweep, dgode_at_depth, evaluate, predict_dataset, train, vanilla_at_depth, AdamState, EpochRecord, SweepRecord,
    TrainConfig, TrainOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Conversation, Dataset};
use crate::encoder::{encode_modality_backward, encode_modality_trace, init_uniform, EncoderTrace, ModalityEncoder, SpeakerTable};
use crate::error::{DgodeError, Result};
use crate::graph::{
    conversation_adjacency, node_index, normalize_adjacency, unroll_mixhop_backward, unroll_mixhop_trace, GraphWindow, Modality,
    MixhopParams, NormalizedAdjacency,
};
use crate::numerics::{sym_eig, DenseMatrix};
use crate::odecore::{solve, solve_backward, ClosedFormCache, OdeConfig};

/// Propagation stack between the encoders and the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Variant {
    /// Optional mixhop recursion followed by the optional graph ODE.
    Dgode,
    /// `layers` plain `Â H W` layers, no residual and no ODE.
    VanillaGcn { layers: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub classes: usize,
    /// Input widths of the text, audio and visual channels.
    pub input_dims: [usize; 3],
    pub gru_hidden: usize,
    /// Common node feature width `d`.
    pub node_dim: usize,
    pub head_hidden: usize,
    /// Registered speakers, one speaker-table column each.
    pub speakers: Vec<String>,
    pub variant: Variant,
    pub use_mixhop: bool,
    pub use_ode: bool,
    pub mixhop_depth: usize,
    pub hops: usize,
    pub alpha: f64,
    pub window: GraphWindow,
    pub ode: OdeConfig,
    pub weight_map: WeightMap,
    /// Bound on the spectral radius of the propagation weight.
    pub weight_radius: f64,
    /// Spectral floor of the propagation weight.
    pub weight_floor: f64,
}

impl ModelConfig {
    /// Desk-scale defaults for a dataset with the given shape.
    pub fn for_dataset(classes: usize, input_dims: [usize; 3], speakers: Vec<String>) -> Self {
        Self {
            classes,
            input_dims,
            gru_hidden: 16,
            node_dim: 16,
            head_hidden: 16,
            speakers,
            variant: Variant::Dgode,
            use_mixhop: true,
            use_ode: true,
            mixhop_depth: 2,
            hops: 2,
            alpha: 1.0,
            window: GraphWindow::default(),
            ode: OdeConfig::default(),
            weight_map: WeightMap::SpectralNorm,
            weight_radius: 0.9,
            weight_floor: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DgodeError::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least two classes, got {}", self.classes));
        }
        if self.input_dims.contains(&0) || self.gru_hidden == 0 || self.node_dim == 0 || self.head_hidden == 0 {
            return bad("all layer widths must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.weight_radius > 0.0 && self.weight_floor > 0.0 && self.weight_radius + self.weight_floor < 1.0) {
            return bad("weight radius and floor must be positive with radius + floor < 1".into());
        }
        self.ode.validate()
    }

    pub fn speaker_index(&self, name: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == name)
    }
}

/// Role of a tensor for weight decay and projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Gate,
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub speaker_table: SpeakerTable,
    /// Text, audio, visual.
    pub encoders: [ModalityEncoder; 3],
    /// Factor `V` of the propagation weight, see [`PropagationWeight`].
    pub weight_factor: DenseMatrix,
    /// Hop gates `β_1..β_P` as a column.
    pub hop_gates: DenseMatrix,
    pub w_l: DenseMatrix,
    pub b_l: DenseMatrix,
    pub w_smax: DenseMatrix,
    pub b_smax: DenseMatrix,
}

impl ModelParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.node_dim;
        let speaker_table = SpeakerTable::init(d, config.speakers.len(), &mut rng);
        let encoders = std::array::from_fn(|m| ModalityEncoder::init(config.input_dims[m], config.gru_hidden, d, &mut rng));
        let weight_factor = init_uniform(d, d, d, &mut rng);
        let hop_gates = DenseMatrix::from_fn(config.hops, 1, |_, _| 0.5);
        let w_l = init_uniform(config.head_hidden, d, d, &mut rng);
        let b_l = init_uniform(config.head_hidden, 1, d, &mut rng);
        let w_smax = init_uniform(config.classes, config.head_hidden, config.head_hidden, &mut rng);
        let b_smax = init_uniform(config.classes, 1, config.head_hidden, &mut rng);
        Ok(Self { config, speaker_table, encoders, weight_factor, hop_gates, w_l, b_l, w_smax, b_smax })
    }

    /// Same shapes and config, all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, _, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// `(name, kind, tensor)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &DenseMatrix)> {
        let mut out = vec![("speaker_table".to_string(), TensorKind::Weight, &self.speaker_table.weight)];
        for (m, enc) in Modality::ALL.iter().zip(&self.encoders) {
            for (dir, cell) in [("forward", &enc.forward), ("backward", &enc.backward)] {
                for (name, t, is_bias) in cell.tensors() {
                    let kind = if is_bias { TensorKind::Bias } else { TensorKind::Weight };
                    out.push((format!("{}.{dir}.{name}", m.name()), kind, t));
                }
            }
            out.push((format!("{}.projection", m.name()), TensorKind::Weight, &enc.projection));
        }
        out.push(("weight_factor".into(), TensorKind::Weight, &self.weight_factor));
        out.push(("hop_gates".into(), TensorKind::Gate, &self.hop_gates));
        out.push(("w_l".into(), TensorKind::Weight, &self.w_l));
        out.push(("b_l".into(), TensorKind::Bias, &self.b_l));
        out.push(("w_smax".into(), TensorKind::Weight, &self.w_smax));
        out.push(("b_smax".into(), TensorKind::Bias, &self.b_smax));
        out
    }

    /// Mutable view in the order of [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut DenseMatrix)> {
        let kinds: Vec<(String, TensorKind)> = self.tensors().into_iter().map(|(n, k, _)| (n, k)).collect();
        let mut refs: Vec<&mut DenseMatrix> = vec![&mut self.speaker_table.weight];
        for enc in &mut self.encoders {
            refs.extend(enc.forward.tensors_mut());
            refs.extend(enc.backward.tensors_mut());
            refs.push(&mut enc.projection);
        }
        refs.push(&mut self.weight_factor);
        refs.push(&mut self.hop_gates);
        refs.push(&mut self.w_l);
        refs.push(&mut self.b_l);
        refs.push(&mut self.w_smax);
        refs.push(&mut self.b_smax);
        kinds.into_iter().zip(refs).map(|((n, k), t)| (n, k, t)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    /// `Σ ‖W‖²` over weight matrices (biases and gates excluded).
    pub fn weight_sum_squares(&self) -> f64 {
        self.tensors().iter().filter(|(_, k, _)| *k == TensorKind::Weight).map(|(_, _, t)| t.sum_squares()).sum()
    }

    /// Adds `scale · other` entrywise.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        let src: Vec<&DenseMatrix> = other.tensors().into_iter().map(|(_, _, t)| t).collect();
        for ((_, _, t), o) in self.tensors_mut().into_iter().zip(src) {
            t.axpy(scale, o);
        }
    }

    pub fn propagation_weight(&self) -> PropagationWeight {
        PropagationWeight::new(&self.weight_factor, self.config.weight_map, self.config.weight_radius, self.config.weight_floor)
    }

    pub fn project_gates(&mut self) {
        self.hop_gates.as_mut_slice().iter_mut().for_each(|g| *g = g.max(0.0));
    }
}

/// How the factor `V` (with `S = VVᵀ`) becomes the propagation weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMap {
    /// `W = ρ·S/‖S‖₂ + ε·I`: top eigenvalue pinned at `ρ + ε`.
    SpectralNorm,
    /// `W = ρ·S/(1 + ‖S‖_F) + ε·I`: spectrum in `[ε, ρ + ε)`, and `V → 0`
    /// gives `W → ε·I`.
    Saturating,
}

/// Symmetric positive definite propagation weight built from `V`.
#[derive(Clone, Debug)]
pub struct PropagationWeight {
    pub matrix: DenseMatrix,
    map: WeightMap,
    gram: DenseMatrix,
    /// `‖S‖₂` or `1 + ‖S‖_F`.
    scale: f64,
    /// Top eigenvector of `S` (spectral map only).
    top: Vec<f64>,
    factor: DenseMatrix,
    radius: f64,
}

impl PropagationWeight {
    pub fn new(factor: &DenseMatrix, map: WeightMap, radius: f64, floor: f64) -> Self {
        let gram = factor.dot_t(factor).symmetrized();
        let (scale, top) = match map {
            WeightMap::SpectralNorm => {
                let eig = sym_eig(&gram).expect("Gram matrices are symmetric");
                let last = eig.values.len() - 1;
                (eig.values[last].max(1e-12), eig.vectors.col_vec(last))
            }
            WeightMap::Saturating => (1.0 + gram.frobenius_norm(), Vec::new()),
        };
        let mut matrix = gram.scale(radius / scale);
        for i in 0..matrix.rows() {
            matrix[(i, i)] += floor;
        }
        Self { matrix, map, gram, scale, top, factor: factor.clone(), radius }
    }

    /// Pulls `∂L/∂W` back to `∂L/∂V`.
    pub fn pullback(&self, w_bar: &DenseMatrix) -> DenseMatrix {
        let w_bar = w_bar.symmetrized();
        let along = w_bar.inner(&self.gram);
        let mut s_bar = w_bar.scale(self.radius / self.scale);
        match self.map {
            // d‖S‖₂ = uᵀ dS u for a simple top eigenvalue.
            WeightMap::SpectralNorm => s_bar.add_outer(&self.top, &self.top, -self.radius * along / (self.scale * self.scale)),
            WeightMap::Saturating => {
                let norm = self.scale - 1.0;
                if norm > 0.0 {
                    s_bar.axpy(-self.radius * along / (norm * self.scale * self.scale), &self.gram);
                }
            }
        }
        s_bar.dot(&self.factor).scale(2.0)
    }
}

/// A conversation in model-ready form, with its graph operator cached.
#[derive(Clone, Debug)]
pub struct PreparedConversation {
    pub id: String,
    /// Text, audio, visual sequences.
    pub modal: [Vec<Vec<f64>>; 3],
    pub speakers: Vec<Option<usize>>,
    pub labels: Vec<usize>,
    pub adjacency: NormalizedAdjacency,
}

impl PreparedConversation {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn prepare_conversation(conv: &Conversation, config: &ModelConfig) -> Result<PreparedConversation> {
    if conv.utterances.is_empty() {
        return Err(DgodeError::EmptyInput(format!("conversation {} has no utterances", conv.id)));
    }
    let modal = std::array::from_fn(|m| conv.utterances.iter().map(|u| u.features[m].clone()).collect());
    let speakers = conv.utterances.iter().map(|u| config.speaker_index(&u.speaker)).collect();
    let labels = conv.utterances.iter().map(|u| u.label).collect();
    let adjacency = normalize_adjacency(&conversation_adjacency(conv.utterances.len(), config.window), config.alpha)?;
    Ok(PreparedConversation { id: conv.id.clone(), modal, speakers, labels, adjacency })
}

pub fn prepare_dataset(dataset: &Dataset, config: &ModelConfig) -> Result<Vec<PreparedConversation>> {
    if dataset.dims != config.input_dims {
        return Err(DgodeError::Dimension(format!("dataset dims {:?} differ from model input dims {:?}", dataset.dims, config.input_dims)));
    }
    if dataset.class_count() != config.classes {
        return Err(DgodeError::Dimension(format!("dataset has {} classes, model {}", dataset.class_count(), config.classes)));
    }
    dataset.conversations.iter().map(|c| prepare_conversation(c, config)).collect()
}

/// Dropout behaviour of one forward pass.
pub enum Mode<'a> {
    Eval,
    /// Inverted dropout after the ReLU with masks drawn from `rng`.
    Train { rate: f64, rng: &'a mut ChaCha8Rng },
}

enum Propagation {
    None,
    Mixhop(Vec<DenseMatrix>),
    Vanilla(Vec<DenseMatrix>),
}

/// Everything the reverse pass needs from a forward pass.
pub struct ForwardTrace {
    encoder_traces: Vec<EncoderTrace>,
    weight: PropagationWeight,
    propagation: Propagation,
    ode: Option<(DenseMatrix, ClosedFormCache)>,
    /// Node features handed to the readout.
    pub nodes: DenseMatrix,
    /// Per-utterance readout rows (`utterances × d`).
    pub readout: DenseMatrix,
    pre_relu: DenseMatrix,
    hidden: DenseMatrix,
    mask: Option<DenseMatrix>,
    /// Class probabilities, one row per utterance.
    pub probs: DenseMatrix,
}

fn softmax_rows(logits: &DenseMatrix) -> DenseMatrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// `x Wᵀ + 1 bᵀ` for row-stacked inputs.
fn affine_rows(x: &DenseMatrix, w: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = x.dot_t(w);
    for i in 0..out.rows() {
        for (v, bias) in out.row_mut(i).iter_mut().zip(b.as_slice()) {
            *v += bias;
        }
    }
    out
}

pub fn forward_trace(conv: &PreparedConversation, params: &ModelParams, mode: Mode<'_>) -> Result<ForwardTrace> {
    let cfg = &params.config;
    let utterances = conv.len();
    let d = cfg.node_dim;

    let mut encoder_traces = Vec::with_capacity(3);
    for (seq, enc) in conv.modal.iter().zip(&params.encoders) {
        encoder_traces.push(encode_modality_trace(seq, enc)?);
    }
    let mut e = DenseMatrix::zeros(3 * utterances, d);
    for (i, speaker) in conv.speakers.iter().enumerate() {
        let s = params.speaker_table.embed_index(*speaker)?;
        for m in Modality::ALL {
            let c = &encoder_traces[m.index()].outputs[i];
            for (slot, (a, b)) in e.row_mut(node_index(i, m)).iter_mut().zip(c.iter().zip(&s)) {
                *slot = a + b;
            }
        }
    }

    let weight = params.propagation_weight();
    let adj = &conv.adjacency;
    let (propagation, mut nodes) = match cfg.variant {
        Variant::VanillaGcn { layers } => {
            let mut states = vec![e];
            for _ in 0..layers {
                let next = adj.matrix.dot(states.last().expect("nonempty")).dot(&weight.matrix);
                states.push(next);
            }
            let out = states.last().expect("nonempty").clone();
            (Propagation::Vanilla(states), out)
        }
        Variant::Dgode if cfg.use_mixhop => {
            let mixhop = MixhopParams { weight: weight.matrix.clone(), hop_gates: params.hop_gates.as_slice().to_vec() };
            let states = unroll_mixhop_trace(&e, adj, &mixhop, cfg.mixhop_depth)?;
            let out = states.last().expect("nonempty").clone();
            (Propagation::Mixhop(states), out)
        }
        Variant::Dgode => (Propagation::None, e),
    };
    let mut ode = None;
    if cfg.variant == Variant::Dgode && cfg.use_ode {
        let cache = ClosedFormCache::from_eigen(adj.eig.clone(), sym_eig(&weight.matrix)?, cfg.ode.clamp_eps, cfg.ode.sing_tol);
        let out = solve(&nodes, &cache, &cfg.ode)?;
        ode = Some((nodes, cache));
        nodes = out;
    }

    let readout = DenseMatrix::from_fn(utterances, d, |i, k| {
        Modality::ALL.iter().map(|&m| nodes[(node_index(i, m), k)]).sum::<f64>() / 3.0
    });
    let pre_relu = affine_rows(&readout, &params.w_l, &params.b_l);
    let mut hidden = pre_relu.map(|v| v.max(0.0));
    let mask = match mode {
        Mode::Eval => None,
        Mode::Train { rate, rng } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(DgodeError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
            }
            let keep = 1.0 / (1.0 - rate);
            let mask = DenseMatrix::from_fn(hidden.rows(), hidden.cols(), |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep });
            hidden = hidden.hadamard(&mask);
            Some(mask)
        }
    };
    let logits = affine_rows(&hidden, &params.w_smax, &params.b_smax);
    let probs = softmax_rows(&logits);
    Ok(ForwardTrace { encoder_traces, weight, propagation, ode, nodes, readout, pre_relu, hidden, mask, probs })
}

/// Per-utterance class probabilities.
pub fn forward(conv: &PreparedConversation, params: &ModelParams, mode: Mode<'_>) -> Result<DenseMatrix> {
    Ok(forward_trace(conv, params, mode)?.probs)
}

/// Argmax with ties resolved toward the lowest index.
pub fn predict_label(row: &[f64]) -> Result<usize> {
    if row.is_empty() {
        return Err(DgodeError::EmptyInput("probability row is empty".into()));
    }
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Mean cross-entropy over rows, plus `l2 · Σ‖W‖²` over weight matrices.
pub fn loss(probs: &DenseMatrix, labels: &[usize], params: &ModelParams, l2: f64) -> Result<f64> {
    Ok(cross_entropy_sum(probs, labels)? / labels.len().max(1) as f64 + l2 * params.weight_sum_squares())
}

fn cross_entropy_sum(probs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(DgodeError::Dimension(format!("{} probability rows for {} labels", probs.rows(), labels.len())));
    }
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(DgodeError::LabelOutOfRange { label, classes: probs.cols() });
        }
        total -= probs[(i, label)].max(1e-12).ln();
    }
    Ok(total)
}

/// Accumulates `scale · ∂(Σ_i CE_i)/∂θ` into `grads`; returns `Σ_i CE_i`.
/// The weight-decay term is not included.
pub fn backward(conv: &PreparedConversation, trace: &ForwardTrace, params: &ModelParams, scale: f64, grads: &mut ModelParams) -> Result<f64> {
    let cfg = &params.config;
    let ce = cross_entropy_sum(&trace.probs, &conv.labels)?;
    let utterances = conv.len();

    let mut d_logits = trace.probs.clone();
    for (i, &label) in conv.labels.iter().enumerate() {
        d_logits[(i, label)] -= 1.0;
    }
    let d_logits = d_logits.scale(scale);
    grads.w_smax += &d_logits.t_dot(&trace.hidden);
    add_column_sums(&mut grads.b_smax, &d_logits);
    let mut d_hidden = d_logits.dot(&params.w_smax);
    if let Some(mask) = &trace.mask {
        d_hidden = d_hidden.hadamard(mask);
    }
    let d_pre = DenseMatrix::from_fn(utterances, cfg.head_hidden, |i, k| if trace.pre_relu[(i, k)] > 0.0 { d_hidden[(i, k)] } else { 0.0 });
    grads.w_l += &d_pre.t_dot(&trace.readout);
    add_column_sums(&mut grads.b_l, &d_pre);
    let d_readout = d_pre.dot(&params.w_l);

    let mut d_nodes = DenseMatrix::zeros(3 * utterances, cfg.node_dim);
    for i in 0..utterances {
        for m in Modality::ALL {
            for (slot, g) in d_nodes.row_mut(node_index(i, m)).iter_mut().zip(d_readout.row(i)) {
                *slot = g / 3.0;
            }
        }
    }

    let mut d_weight = DenseMatrix::zeros(cfg.node_dim, cfg.node_dim);
    if let Some((input, cache)) = &trace.ode {
        let g = solve_backward(input, cache, &cfg.ode, &d_nodes)?;
        d_weight += &g.weight;
        d_nodes = g.input;
    }
    let adj = &conv.adjacency;
    let d_e = match &trace.propagation {
        Propagation::None => d_nodes,
        Propagation::Mixhop(states) => {
            let mixhop = MixhopParams { weight: trace.weight.matrix.clone(), hop_gates: params.hop_gates.as_slice().to_vec() };
            let g = unroll_mixhop_backward(states, &d_nodes, adj, &mixhop);
            d_weight += &g.weight;
            for (slot, v) in grads.hop_gates.as_mut_slice().iter_mut().zip(g.hop_gates) {
                *slot += v;
            }
            g.input
        }
        Propagation::Vanilla(states) => {
            let mut g = d_nodes;
            for h in states[..states.len() - 1].iter().rev() {
                d_weight += &adj.matrix.dot(h).t_dot(&g);
                g = adj.matrix.dot(&g.dot_t(&trace.weight.matrix));
            }
            g
        }
    };
    if d_weight.max_abs() > 0.0 {
        grads.weight_factor += &trace.weight.pullback(&d_weight);
    }

    for m in Modality::ALL {
        let rows: Vec<Vec<f64>> = (0..utterances).map(|i| d_e.row(node_index(i, m)).to_vec()).collect();
        encode_modality_backward(&trace.encoder_traces[m.index()], &rows, &params.encoders[m.index()], &mut grads.encoders[m.index()]);
    }
    for (i, speaker) in conv.speakers.iter().enumerate() {
        if let Some(s) = speaker {
            for m in Modality::ALL {
                for (k, g) in d_e.row(node_index(i, m)).iter().enumerate() {
                    grads.speaker_table.weight[(k, *s)] += g;
                }
            }
        }
    }
    Ok(ce)
}

fn add_column_sums(bias: &mut DenseMatrix, rows: &DenseMatrix) {
    for i in 0..rows.rows() {
        for (b, v) in bias.as_mut_slice().iter_mut().zip(rows.row(i)) {
            *b += v;
        }
    }
}

/// Adds `∂(l2 · Σ‖W‖²)/∂θ = 2·l2·W` for every weight matrix.
pub fn add_weight_decay(params: &ModelParams, l2: f64, grads: &mut ModelParams) {
    if l2 == 0.0 {
        return;
    }
    let src: Vec<(TensorKind, &DenseMatrix)> = params.tensors().into_iter().map(|(_, k, t)| (k, t)).collect();
    for ((_, _, g), (kind, w)) in grads.tensors_mut().into_iter().zip(src) {
        if kind == TensorKind::Weight {
            g.axpy(2.0 * l2, w);
        }
    }
}

/// Loss and gradient over a batch of conversations: mean cross-entropy over
/// all their utterances plus weight decay.
pub fn batch_loss_and_grad(batch: &[&PreparedConversation], params: &ModelParams, l2: f64, mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<(f64, ModelParams)> {
    let total: usize = batch.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Err(DgodeError::EmptyInput("batch has no utterances".into()));
    }
    let scale = 1.0 / total as f64;
    let mut grads = params.zeros_like();
    let mut ce = 0.0;
    for conv in batch {
        let mode = match dropout.as_mut() {
            Some((rate, rng)) => Mode::Train { rate: *rate, rng },
            None => Mode::Eval,
        };
        let trace = forward_trace(conv, params, mode)?;
        ce += backward(conv, &trace, params, scale, &mut grads)?;
    }
    add_weight_decay(params, l2, &mut grads);
    Ok((ce * scale + l2 * params.weight_sum_squares(), grads))
}
