//! Central finite-difference checks of the model gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{batch_loss_and_grad, prepare_conversation, ModelConfig, ModelParams, PreparedConversation};
use crate::dataio::{Conversation, Utterance};
use crate::error::Result;

/// Agreement of one tensor's analytic gradient with finite differences.
#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    /// `‖g − g_fd‖ / max(‖g_fd‖, floor)`.
    pub relative_error: f64,
    pub fd_norm: f64,
}

/// Relative errors below this count as agreement.
pub const GRADIENT_TOLERANCE: f64 = 1e-3;
const NORM_FLOOR: f64 = 1e-7;

/// Three utterances, two speakers, four classes.
pub fn toy_instance(use_mixhop: bool, use_ode: bool, seed: u64) -> Result<(PreparedConversation, ModelParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [4, 3, 2];
    let utterances = (0..3)
        .map(|i| Utterance {
            index: i,
            speaker: format!("s{}", i % 2),
            label: [2, 0, 3][i],
            features: std::array::from_fn(|m| (0..dims[m]).map(|_| rng.random_range(-1.0..1.0)).collect()),
        })
        .collect();
    let conv = Conversation { id: "toy".into(), utterances };
    let mut config = ModelConfig::for_dataset(4, dims, vec!["s0".into(), "s1".into()]);
    config.gru_hidden = 3;
    config.node_dim = 4;
    config.head_hidden = 5;
    config.use_mixhop = use_mixhop;
    config.use_ode = use_ode;
    config.ode.t_end = 2.0;
    let mut params = ModelParams::init(config, seed)?;
    // Larger head weights keep the loss surface away from a flat softmax.
    params.w_smax = params.w_smax.scale(3.0);
    params.w_l = params.w_l.scale(2.0);
    let prepared = prepare_conversation(&conv, &params.config)?;
    Ok((prepared, params))
}

/// Compares backprop against central differences with step `step` for
/// every tensor. Dropout (if `dropout > 0`) uses the same seeded mask in
/// every evaluation.
pub fn gradient_check(batch: &[&PreparedConversation], params: &ModelParams, l2: f64, dropout: f64, step: f64) -> Result<Vec<TensorCheck>> {
    let eval = |p: &ModelParams| -> Result<(f64, ModelParams)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mode = if dropout > 0.0 { Some((dropout, &mut rng)) } else { None };
        batch_loss_and_grad(batch, p, l2, mode)
    };
    let (_, analytic) = eval(params)?;
    let mut out = Vec::new();
    let count = params.tensors().len();
    for t in 0..count {
        let (name, _, base) = &params.tensors()[t];
        let len = base.as_slice().len();
        let mut fd = vec![0.0; len];
        for (k, slot) in fd.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].2.as_mut_slice()[k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[t].2.as_mut_slice()[k] -= step;
            *slot = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * step);
        }
        let got = analytic.tensors()[t].2.as_slice();
        let diff = got.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push(TensorCheck { name: name.clone(), relative_error: diff / fd_norm.max(NORM_FLOOR), fd_norm });
    }
    Ok(out)
}
