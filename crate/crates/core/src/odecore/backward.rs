//! Reverse-mode gradients of the ODE stage with respect to its input `E`
//! and the symmetric weight `W`.
//!
//! Numeric solvers are differentiated step by step through the unrolled
//! trajectory. Closed forms, and the dependence of `H(0)` and `ln W` on `W`,
//! go through divided-difference (Daleckii–Krein) formulas in the shared
//! eigenbasis, which requires orthonormal eigenvectors (symmetric `Â`, `W`).

use super::{initial_state, phi1, phi1_ds, rhs_unchecked, ClosedFormCache, OdeConfig, OdeMethod, Stepper};
use crate::error::{DgodeError, Result};
use crate::numerics::{clamped_ln, DenseMatrix, EigenSystem};

/// Scalar kernel `g(s)` applied to the generator spectrum `μ_i + ν_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralKernel {
    /// `(e^{s τ} − 1)/s`, generator `ln Λ ⊕ ln Φ`.
    Integral { tau: f64, delta: f64 },
    /// `e^{s t} + (e^{s t} − 1)/s`, generator `(Λ − 1) ⊕ (Φ − 1)`.
    Literal { t: f64, delta: f64 },
}

impl SpectralKernel {
    pub fn value(self, s: f64) -> f64 {
        match self {
            SpectralKernel::Integral { tau, delta } => phi1(s, tau, delta),
            SpectralKernel::Literal { t, delta } => (s * t).exp() + phi1(s, t, delta),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            SpectralKernel::Integral { tau, .. } => phi1_ds(s, tau),
            SpectralKernel::Literal { t, .. } => t * (s * t).exp() + phi1_ds(s, t),
        }
    }

    /// First divided difference `g[x, y]`.
    pub fn divided(self, x: f64, y: f64) -> f64 {
        divided_difference(x, y, |s| self.value(s), |s| self.derivative(s))
    }

    fn generator(self, cache: &ClosedFormCache) -> (&[f64], &[f64]) {
        match self {
            SpectralKernel::Integral { .. } => (&cache.adj_log, &cache.w_log),
            SpectralKernel::Literal { .. } => (&cache.adj_shifted, &cache.w_shifted),
        }
    }
}

fn divided_difference(x: f64, y: f64, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> f64 {
    let gap = x - y;
    if gap.abs() > 1e-6 * (1.0 + x.abs().max(y.abs())) {
        (f(x) - f(y)) / gap
    } else {
        df(0.5 * (x + y))
    }
}

/// Cotangents of the ODE stage.
#[derive(Clone, Debug)]
pub struct OdeGrads {
    pub input: DenseMatrix,
    pub weight: DenseMatrix,
}

/// Pullback of `Y = P (Ẽ ∘ g(μ ⊕ ν)) Qᵀ`.
///
/// Returns `(∂L/∂E, ∂L/∂B)` where `B` is the right generator (`ln W` for
/// [`SpectralKernel::Integral`], `W − I` for [`SpectralKernel::Literal`]);
/// the generator cotangent is symmetrized.
pub fn spectral_vjp(e: &DenseMatrix, grad_out: &DenseMatrix, cache: &ClosedFormCache, kernel: SpectralKernel) -> (DenseMatrix, DenseMatrix) {
    let (mu, nu) = kernel.generator(cache);
    let (n, d) = e.shape();
    let e_t = cache.e_tilde(e);
    let g_t = cache.e_tilde(grad_out);
    let mut input_t = g_t.clone();
    for i in 0..n {
        for j in 0..d {
            input_t[(i, j)] *= kernel.value(mu[i] + nu[j]);
        }
    }
    let input = cache.from_eigenbasis(&input_t);

    // M̄_jk = Σ_i Ẽ_ij Ȳ̃_ik g[ω_ij, ω_ik]
    let mut m_bar = DenseMatrix::zeros(d, d);
    for i in 0..n {
        let e_row = e_t.row(i);
        let g_row = g_t.row(i);
        for j in 0..d {
            if e_row[j] == 0.0 {
                continue;
            }
            let wij = mu[i] + nu[j];
            for k in 0..d {
                m_bar[(j, k)] += e_row[j] * g_row[k] * kernel.divided(wij, mu[i] + nu[k]);
            }
        }
    }
    let q = &cache.w_eig.vectors;
    let generator = q.dot(&m_bar).dot_t(q).symmetrized();
    (input, generator)
}

/// Pulls a symmetric cotangent on `f(W)` back to `W` for a spectral
/// function `f` with derivative `df`.
pub fn spectral_function_pullback(w_eig: &EigenSystem, cotangent: &DenseMatrix, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> DenseMatrix {
    let q = &w_eig.vectors;
    let phi = &w_eig.values;
    let inner = q.t_dot(cotangent).dot(q);
    let weighted = DenseMatrix::from_fn(phi.len(), phi.len(), |j, k| {
        inner[(j, k)] * divided_difference(phi[j], phi[k], &f, &df)
    });
    q.dot(&weighted).dot_t(q)
}

fn log_pullback(cache: &ClosedFormCache, cotangent: &DenseMatrix) -> DenseMatrix {
    let eps = cache.clamp_eps;
    spectral_function_pullback(&cache.w_eig, cotangent, |v| clamped_ln(v, eps), |v| if v > eps { 1.0 / v } else { 0.0 })
}

fn check_orthonormal(eig: &EigenSystem, what: &str) -> Result<()> {
    let gram = eig.vectors.t_dot(&eig.vectors);
    let n = eig.dim();
    if gram.relative_error(&DenseMatrix::identity(n)) > 1e-8 {
        return Err(DgodeError::Config(format!("ODE gradients need a symmetric {what}")));
    }
    Ok(())
}

/// Reverse pass of [`super::solve`] given `∂L/∂H(t_end)`.
pub fn solve_backward(e: &DenseMatrix, cache: &ClosedFormCache, config: &OdeConfig, grad_out: &DenseMatrix) -> Result<OdeGrads> {
    config.validate()?;
    cache.check_input(e)?;
    cache.check_input(grad_out)?;
    check_orthonormal(&cache.adj_eig, "adjacency")?;
    check_orthonormal(&cache.w_eig, "weight")?;
    let delta = cache.sing_tol;
    match config.method {
        OdeMethod::ClosedFormExact => {
            let (input, log_w_bar) = spectral_vjp(e, grad_out, cache, SpectralKernel::Integral { tau: config.t_end + 1.0, delta });
            Ok(OdeGrads { input, weight: log_pullback(cache, &log_w_bar) })
        }
        OdeMethod::ClosedFormPaper => {
            let (input, w_bar) = spectral_vjp(e, grad_out, cache, SpectralKernel::Literal { t: config.t_end, delta });
            Ok(OdeGrads { input, weight: w_bar })
        }
        OdeMethod::Euler | OdeMethod::Rk4 => {
            let stepper = if config.method == OdeMethod::Euler { Stepper::Euler } else { Stepper::Rk4 };
            let steps = config.steps.max(1);
            let h = config.t_end / steps as f64;
            let rhs = |x: &DenseMatrix| rhs_unchecked(x, e, cache);

            let mut states = Vec::with_capacity(steps + 1);
            states.push(initial_state(e, cache)?);
            if config.t_end > 0.0 {
                for _ in 0..steps {
                    let next = stepper.step(states.last().expect("nonempty"), h, &rhs);
                    states.push(next);
                }
            }

            let (n, d) = e.shape();
            let mut e_bar = DenseMatrix::zeros(n, d);
            let mut log_w_bar = DenseMatrix::zeros(d, d);
            let mut g = grad_out.clone();
            // Pullback of X ↦ ln Â X + X ln W + E for cotangent k̄ at input x.
            let mut pull_rhs = |x: &DenseMatrix, k_bar: &DenseMatrix, e_bar: &mut DenseMatrix| -> DenseMatrix {
                *e_bar += k_bar;
                log_w_bar += &x.t_dot(k_bar);
                let mut x_bar = cache.log_adj.dot(k_bar);
                x_bar += &k_bar.dot(&cache.log_w);
                x_bar
            };
            for state in states[..states.len() - 1].iter().rev() {
                match stepper {
                    Stepper::Euler => {
                        let k_bar = g.scale(h);
                        let x_bar = pull_rhs(state, &k_bar, &mut e_bar);
                        g += &x_bar;
                    }
                    Stepper::Rk4 => {
                        let k1 = rhs(state);
                        let mut x2 = state.clone();
                        x2.axpy(0.5 * h, &k1);
                        let k2 = rhs(&x2);
                        let mut x3 = state.clone();
                        x3.axpy(0.5 * h, &k2);
                        let k3 = rhs(&x3);
                        let mut x4 = state.clone();
                        x4.axpy(h, &k3);

                        let mut k1_bar = g.scale(h / 6.0);
                        let mut k2_bar = g.scale(h / 3.0);
                        let mut k3_bar = g.scale(h / 3.0);
                        let k4_bar = g.scale(h / 6.0);
                        let mut state_bar = g.clone();

                        let x4_bar = pull_rhs(&x4, &k4_bar, &mut e_bar);
                        state_bar += &x4_bar;
                        k3_bar.axpy(h, &x4_bar);

                        let x3_bar = pull_rhs(&x3, &k3_bar, &mut e_bar);
                        state_bar += &x3_bar;
                        k2_bar.axpy(0.5 * h, &x3_bar);

                        let x2_bar = pull_rhs(&x2, &k2_bar, &mut e_bar);
                        state_bar += &x2_bar;
                        k1_bar.axpy(0.5 * h, &x2_bar);

                        let x1_bar = pull_rhs(state, &k1_bar, &mut e_bar);
                        state_bar += &x1_bar;
                        g = state_bar;
                    }
                }
            }

            // H(0) depends on both E and W.
            let (init_e_bar, init_log_w_bar) = spectral_vjp(e, &g, cache, SpectralKernel::Integral { tau: 1.0, delta });
            e_bar += &init_e_bar;
            let mut total_log_w_bar = log_w_bar.symmetrized();
            total_log_w_bar += &init_log_w_bar;
            Ok(OdeGrads { input: e_bar, weight: log_pullback(cache, &total_log_w_bar) })
        }
    }
}
