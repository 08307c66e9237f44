//! Speaker-aware, context-aware unimodal encoding: speaker embeddings,
//! bidirectional GRUs over each modality's utterance sequence, and additive
//! speaker fusion.

use rand::Rng;

use crate::error::{DgodeError, Result};
use crate::numerics::DenseMatrix;

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialization.
pub fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> DenseMatrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// `W_p`, one column per registered speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerTable {
    pub weight: DenseMatrix,
}

impl SpeakerTable {
    pub fn init(dim: usize, speakers: usize, rng: &mut impl Rng) -> Self {
        Self { weight: init_uniform(dim, speakers, speakers, rng) }
    }

    pub fn speaker_count(&self) -> usize {
        self.weight.cols()
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    /// Embedding of a speaker index; `None` is the unknown speaker (zero vector).
    pub fn embed_index(&self, speaker: Option<usize>) -> Result<Vec<f64>> {
        match speaker {
            None => Ok(vec![0.0; self.dim()]),
            Some(s) if s < self.speaker_count() => Ok(self.weight.col_vec(s)),
            Some(s) => Err(DgodeError::UnknownSpeaker { index: s, count: self.speaker_count() }),
        }
    }
}

/// `P_i = W_p p_i` for a one-hot (or all-zero) indicator.
pub fn speaker_embed(table: &SpeakerTable, one_hot: &[f64]) -> Result<Vec<f64>> {
    let hot: Vec<usize> = one_hot.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    match hot.as_slice() {
        [] => table.embed_index(None),
        [i] if one_hot[*i] == 1.0 => table.embed_index(Some(*i)),
        _ => Err(DgodeError::Dimension("speaker indicator must be one-hot or all zero".into())),
    }
}

/// `h_m^i = c_m^i + S_i`.
pub fn fuse_speaker(c: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if c.len() != s.len() {
        return Err(DgodeError::Dimension(format!("cannot fuse {}-dim state with {}-dim speaker", c.len(), s.len())));
    }
    Ok(c.iter().zip(s).map(|(a, b)| a + b).collect())
}

/// Gate weights of a GRU cell; biases are single-column matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_z: DenseMatrix,
    pub u_z: DenseMatrix,
    pub b_z: DenseMatrix,
    pub w_r: DenseMatrix,
    pub u_r: DenseMatrix,
    pub b_r: DenseMatrix,
    pub w_h: DenseMatrix,
    pub u_h: DenseMatrix,
    pub b_h: DenseMatrix,
}

impl GruCellParams {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut w = || init_uniform(hidden, input, hidden, rng);
        let (w_z, w_r, w_h) = (w(), w(), w());
        let mut u = || init_uniform(hidden, hidden, hidden, rng);
        let (u_z, u_r, u_h) = (u(), u(), u());
        let mut b = || init_uniform(hidden, 1, hidden, rng);
        let (b_z, b_r, b_h) = (b(), b(), b());
        Self { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || DenseMatrix::zeros(hidden, input);
        let u = || DenseMatrix::zeros(hidden, hidden);
        let b = || DenseMatrix::zeros(hidden, 1);
        Self { w_z: w(), u_z: u(), b_z: b(), w_r: w(), u_r: u(), b_r: b(), w_h: w(), u_h: u(), b_h: b() }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows()
    }

    /// `(name, tensor, is_bias)` in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &DenseMatrix, bool); 9] {
        [
            ("w_z", &self.w_z, false),
            ("u_z", &self.u_z, false),
            ("b_z", &self.b_z, true),
            ("w_r", &self.w_r, false),
            ("u_r", &self.u_r, false),
            ("b_r", &self.b_r, true),
            ("w_h", &self.w_h, false),
            ("u_h", &self.u_h, false),
            ("b_h", &self.b_h, true),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseMatrix; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    fn check(&self, x: &[f64], h: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() || h.len() != self.hidden_dim() {
            return Err(DgodeError::Dimension(format!(
                "GRU cell expects input {} / hidden {}, got {} / {}",
                self.input_dim(),
                self.hidden_dim(),
                x.len(),
                h.len()
            )));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one GRU step, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

fn affine(w: &DenseMatrix, x: &[f64], u: &DenseMatrix, h: &[f64], b: &DenseMatrix) -> Vec<f64> {
    let mut out = w.matvec(x);
    for ((o, v), bias) in out.iter_mut().zip(u.matvec(h)).zip(b.as_slice()) {
        *o += v + bias;
    }
    out
}

fn gru_step_trace(x: &[f64], h_prev: &[f64], cell: &GruCellParams) -> GruStep {
    let z: Vec<f64> = affine(&cell.w_z, x, &cell.u_z, h_prev, &cell.b_z).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = affine(&cell.w_r, x, &cell.u_r, h_prev, &cell.b_r).into_iter().map(sigmoid).collect();
    let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let candidate: Vec<f64> = affine(&cell.w_h, x, &cell.u_h, &gated, &cell.b_h).into_iter().map(f64::tanh).collect();
    let h = (0..h_prev.len()).map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * candidate[k]).collect();
    GruStep { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, candidate, h }
}

/// `h′ = (1−z)⊙h + z⊙h̃` with standard update/reset gates.
pub fn gru_cell_step(x: &[f64], h_prev: &[f64], cell: &GruCellParams) -> Result<Vec<f64>> {
    cell.check(x, h_prev)?;
    Ok(gru_step_trace(x, h_prev, cell).h)
}

/// Accumulates the cell gradients of one step; returns `∂L/∂h_prev`.
fn gru_step_backward(step: &GruStep, grad_h: &[f64], cell: &GruCellParams, grads: &mut GruCellParams) -> Vec<f64> {
    let n = grad_h.len();
    let mut d_prev: Vec<f64> = (0..n).map(|k| grad_h[k] * (1.0 - step.z[k])).collect();
    let d_cand_pre: Vec<f64> = (0..n).map(|k| grad_h[k] * step.z[k] * (1.0 - step.candidate[k] * step.candidate[k])).collect();
    let d_z_pre: Vec<f64> = (0..n)
        .map(|k| grad_h[k] * (step.candidate[k] - step.h_prev[k]) * step.z[k] * (1.0 - step.z[k]))
        .collect();

    let gated: Vec<f64> = step.r.iter().zip(&step.h_prev).map(|(a, b)| a * b).collect();
    grads.w_h.add_outer(&d_cand_pre, &step.x, 1.0);
    grads.u_h.add_outer(&d_cand_pre, &gated, 1.0);
    grads.b_h.axpy(1.0, &DenseMatrix::column(&d_cand_pre));
    let d_gated = cell.u_h.matvec_t(&d_cand_pre);
    let d_r_pre: Vec<f64> = (0..n).map(|k| d_gated[k] * step.h_prev[k] * step.r[k] * (1.0 - step.r[k])).collect();
    for k in 0..n {
        d_prev[k] += d_gated[k] * step.r[k];
    }

    grads.w_z.add_outer(&d_z_pre, &step.x, 1.0);
    grads.u_z.add_outer(&d_z_pre, &step.h_prev, 1.0);
    grads.b_z.axpy(1.0, &DenseMatrix::column(&d_z_pre));
    grads.w_r.add_outer(&d_r_pre, &step.x, 1.0);
    grads.u_r.add_outer(&d_r_pre, &step.h_prev, 1.0);
    grads.b_r.axpy(1.0, &DenseMatrix::column(&d_r_pre));
    for (d, v) in d_prev.iter_mut().zip(cell.u_z.matvec_t(&d_z_pre)) {
        *d += v;
    }
    for (d, v) in d_prev.iter_mut().zip(cell.u_r.matvec_t(&d_r_pre)) {
        *d += v;
    }
    d_prev
}

/// Bidirectional GRU with a linear projection of the concatenated states.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoder {
    pub forward: GruCellParams,
    pub backward: GruCellParams,
    /// `d × 2·hidden`.
    pub projection: DenseMatrix,
}

impl ModalityEncoder {
    pub fn init(input: usize, hidden: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let forward = GruCellParams::init(input, hidden, rng);
        let backward = GruCellParams::init(input, hidden, rng);
        let projection = init_uniform(out_dim, 2 * hidden, 2 * hidden, rng);
        Self { forward, backward, projection }
    }

    pub fn zeros_like(&self) -> Self {
        let (input, hidden) = (self.forward.input_dim(), self.forward.hidden_dim());
        Self {
            forward: GruCellParams::zeros(input, hidden),
            backward: GruCellParams::zeros(input, hidden),
            projection: DenseMatrix::zeros(self.projection.rows(), self.projection.cols()),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.projection.rows()
    }
}

/// Forward-pass record of [`encode_modality`].
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub forward_steps: Vec<GruStep>,
    /// Stored in processing order (last utterance first).
    pub backward_steps: Vec<GruStep>,
    pub outputs: Vec<Vec<f64>>,
}

impl EncoderTrace {
    /// `[forward_i ; backward_i]` for utterance `i`.
    pub fn concat_state(&self, i: usize) -> Vec<f64> {
        let len = self.forward_steps.len();
        let mut s = self.forward_steps[i].h.clone();
        s.extend_from_slice(&self.backward_steps[len - 1 - i].h);
        s
    }
}

pub fn encode_modality_trace(sequence: &[Vec<f64>], enc: &ModalityEncoder) -> Result<EncoderTrace> {
    if sequence.is_empty() {
        return Err(DgodeError::EmptyInput("modality sequence is empty".into()));
    }
    let hidden = enc.forward.hidden_dim();
    let zero = vec![0.0; hidden];
    for x in sequence {
        enc.forward.check(x, &zero)?;
        enc.backward.check(x, &zero)?;
    }
    let mut forward_steps: Vec<GruStep> = Vec::with_capacity(sequence.len());
    for x in sequence {
        let prev = forward_steps.last().map_or(&zero, |s| &s.h);
        let step = gru_step_trace(x, prev, &enc.forward);
        forward_steps.push(step);
    }
    let mut backward_steps: Vec<GruStep> = Vec::with_capacity(sequence.len());
    for x in sequence.iter().rev() {
        let prev = backward_steps.last().map_or(&zero, |s| &s.h);
        let step = gru_step_trace(x, prev, &enc.backward);
        backward_steps.push(step);
    }
    let mut trace = EncoderTrace { forward_steps, backward_steps, outputs: Vec::new() };
    trace.outputs = (0..sequence.len()).map(|i| enc.projection.matvec(&trace.concat_state(i))).collect();
    Ok(trace)
}

/// Per-utterance contextual states `c_m^i` for one modality.
pub fn encode_modality(sequence: &[Vec<f64>], enc: &ModalityEncoder) -> Result<Vec<Vec<f64>>> {
    Ok(encode_modality_trace(sequence, enc)?.outputs)
}

/// Back-propagation through time for one modality; gradients accumulate
/// into `grads`.
pub fn encode_modality_backward(trace: &EncoderTrace, grad_outputs: &[Vec<f64>], enc: &ModalityEncoder, grads: &mut ModalityEncoder) {
    let len = trace.forward_steps.len();
    let hidden = enc.forward.hidden_dim();
    let mut d_forward_h = vec![vec![0.0; hidden]; len];
    let mut d_backward_h = vec![vec![0.0; hidden]; len];
    for (i, g) in grad_outputs.iter().enumerate() {
        grads.projection.add_outer(g, &trace.concat_state(i), 1.0);
        let d_concat = enc.projection.matvec_t(g);
        d_forward_h[i].copy_from_slice(&d_concat[..hidden]);
        d_backward_h[len - 1 - i].copy_from_slice(&d_concat[hidden..]);
    }
    let mut carry = vec![0.0; hidden];
    for t in (0..len).rev() {
        let g: Vec<f64> = d_forward_h[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        carry = gru_step_backward(&trace.forward_steps[t], &g, &enc.forward, &mut grads.forward);
    }
    let mut carry = vec![0.0; hidden];
    for t in (0..len).rev() {
        let g: Vec<f64> = d_backward_h[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        carry = gru_step_backward(&trace.backward_steps[t], &g, &enc.backward, &mut grads.backward);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn speaker_embedding_selects_column() {
        let table = SpeakerTable { weight: DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap() };
        assert_eq!(speaker_embed(&table, &[0.0, 1.0]).unwrap(), vec![2.0, 4.0]);
        assert_eq!(speaker_embed(&table, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let zero = SpeakerTable { weight: DenseMatrix::zeros(2, 2) };
        assert_eq!(speaker_embed(&zero, &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(speaker_embed(&table, &[0.0, 0.0, 1.0]), Err(DgodeError::UnknownSpeaker { index: 2, count: 2 })));
        assert!(speaker_embed(&table, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse_speaker(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse_speaker(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![4.0, 6.0]);
        assert!(fuse_speaker(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diff: Vec<f64> = fuse_speaker(&c, &s).unwrap().iter().zip(fuse_speaker(&c, &[0.0; 5]).unwrap()).map(|(a, b)| a - b).collect();
        for (d, e) in diff.iter().zip(&s) {
            assert!((d - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cell_from_zero_state_stays_zero() {
        let cell = GruCellParams::zeros(3, 4);
        assert_eq!(gru_cell_step(&[1.0, -2.0, 0.5], &[0.0; 4], &cell).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_overwrites_state() {
        let mut cell = GruCellParams::zeros(2, 3);
        cell.b_z.fill(50.0);
        let h = gru_cell_step(&[0.3, 0.4], &[0.9, -0.7, 0.2], &cell).unwrap();
        // z = σ(50) leaves ≈ 2e-22 of the old state; h̃ = tanh(0) = 0.
        assert!(h.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn cell_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = GruCellParams::init(4, 3, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = gru_cell_step(&x, &h, &cell).unwrap();
        for k in 0..3 {
            let pre = |w: &DenseMatrix, u: &DenseMatrix, b: &DenseMatrix, hh: &[f64]| {
                let mut acc = b[(k, 0)];
                for j in 0..4 {
                    acc += w[(k, j)] * x[j];
                }
                for j in 0..3 {
                    acc += u[(k, j)] * hh[j];
                }
                acc
            };
            let z = 1.0 / (1.0 + (-pre(&cell.w_z, &cell.u_z, &cell.b_z, &h)).exp());
            let rh: Vec<f64> = (0..3)
                .map(|j| {
                    let mut acc = cell.b_r[(j, 0)];
                    for i in 0..4 {
                        acc += cell.w_r[(j, i)] * x[i];
                    }
                    for i in 0..3 {
                        acc += cell.u_r[(j, i)] * h[i];
                    }
                    h[j] / (1.0 + (-acc).exp())
                })
                .collect();
            let cand = pre(&cell.w_h, &cell.u_h, &cell.b_h, &rh).tanh();
            let want = (1.0 - z) * h[k] + z * cand;
            assert!((got[k] - want).abs() < 1e-12);
        }
        assert!(gru_cell_step(&x[..3], &h, &cell).is_err());
    }

    #[test]
    fn single_utterance_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = ModalityEncoder::init(3, 4, 2, &mut rng);
        let x = vec![0.2, -0.1, 0.7];
        let out = encode_modality(std::slice::from_ref(&x), &enc).unwrap();
        let f = gru_cell_step(&x, &[0.0; 4], &enc.forward).unwrap();
        let b = gru_cell_step(&x, &[0.0; 4], &enc.backward).unwrap();
        let want = enc.projection.matvec(&[f, b].concat());
        assert_eq!(out, vec![want]);
        assert!(matches!(encode_modality(&[], &enc), Err(DgodeError::EmptyInput(_))));
    }

    #[test]
    fn reversal_swaps_directions_for_tied_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut enc = ModalityEncoder::init(3, 4, 8, &mut rng);
        enc.backward = enc.forward.clone();
        // identity projection exposes the raw concatenated states
        enc.projection = DenseMatrix::identity(8);
        let seq: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let rev: Vec<Vec<f64>> = seq.iter().rev().cloned().collect();
        let out = encode_modality(&seq, &enc).unwrap();
        let out_rev = encode_modality(&rev, &enc).unwrap();
        for i in 0..5 {
            let j = 4 - i;
            assert_eq!(&out_rev[i][..4], &out[j][4..]);
            assert_eq!(&out_rev[i][4..], &out[j][..4]);
        }
    }

    #[test]
    fn zero_inputs_and_biases_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut enc = ModalityEncoder::init(3, 4, 2, &mut rng);
        for cell in [&mut enc.forward, &mut enc.backward] {
            cell.b_z.fill(0.0);
            cell.b_r.fill(0.0);
            cell.b_h.fill(0.0);
        }
        let out = encode_modality(&vec![vec![0.0; 3]; 4], &enc).unwrap();
        assert!(out.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let enc = ModalityEncoder::init(3, 4, 2, &mut rng);
        let seq: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let probe: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let loss = |enc: &ModalityEncoder| -> f64 {
            encode_modality(&seq, enc).unwrap().iter().zip(&probe).map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()).sum()
        };
        let trace = encode_modality_trace(&seq, &enc).unwrap();
        let mut grads = enc.zeros_like();
        encode_modality_backward(&trace, &probe, &enc, &mut grads);

        let h = 1e-6;
        let check = |get: &dyn Fn(&mut ModalityEncoder) -> &mut DenseMatrix, analytic: &DenseMatrix| {
            for idx in 0..analytic.as_slice().len() {
                let mut plus = enc.clone();
                get(&mut plus).as_mut_slice()[idx] += h;
                let mut minus = enc.clone();
                get(&mut minus).as_mut_slice()[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - analytic.as_slice()[idx]).abs() < 1e-8, "{fd} vs {}", analytic.as_slice()[idx]);
            }
        };
        check(&|e| &mut e.projection, &grads.projection);
        for k in 0..9 {
            check(&|e| e.forward.tensors_mut().into_iter().nth(k).unwrap(), grads.forward.tensors()[k].1);
            check(&|e| e.backward.tensors_mut().into_iter().nth(k).unwrap(), grads.backward.tensors()[k].1);
        }
    }

    proptest! {
        #[test]
        fn cell_output_bounded(seed in any::<u64>(), scale in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cell = GruCellParams::init(3, 4, &mut rng);
            for t in cell.tensors_mut() {
                *t = t.scale(scale);
            }
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let out = gru_cell_step(&x, &h, &cell).unwrap();
            for (o, p) in out.iter().zip(&h) {
                prop_assert!(o.abs() <= p.abs().max(1.0) + 1e-12);
            }
        }

        #[test]
        fn encoding_is_deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let enc = ModalityEncoder::init(3, 4, 5, &mut rng);
            let seq: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let a = encode_modality(&seq, &enc).unwrap();
            let b = encode_modality(&seq, &enc).unwrap();
            prop_assert!(a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
