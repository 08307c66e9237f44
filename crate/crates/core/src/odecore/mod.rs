//! The temporal graph ODE `dH/dt = ln Â · H + H · ln W + E`.
//!
//! Every closed form here is diagonal in the product eigenbasis of `Â` and
//! `W`: with `Â = P Λ P⁻¹`, `W = Q Φ Q⁻¹` and `Ẽ = P⁻¹ E Q`, a solution is
//! `P (Ẽ ∘ G) Q⁻¹` for a scalar kernel `G_ij = g(μ_i + ν_j)`.
//!
//! The exact solution started from [`initial_state`] is
//! `H(t) = ∫₀^{t+1} Â^s E W^s ds`. The literal form built from the shifted
//! spectra `Λ − 1`, `Φ − 1` ([`paper_closed_form`]) is kept alongside it and
//! is only a first-order approximation of the same trajectory.

mod backward;
mod solver;

pub use backward::{solve_backward, spectral_vjp, OdeGrads, SpectralKernel};
pub use solver::{integrate, solve, Stepper};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DgodeError, Result};
use crate::numerics::{clamped_ln, general_eig, DenseMatrix, EigenSystem, DEFAULT_CLAMP_EPS};

/// Default threshold below which `(e^{st} − 1)/s` switches to its series.
pub const DEFAULT_SING_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
    ClosedFormExact,
    ClosedFormPaper,
}

impl OdeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OdeMethod::Euler => "euler",
            OdeMethod::Rk4 => "rk4",
            OdeMethod::ClosedFormExact => "closed_form_exact",
            OdeMethod::ClosedFormPaper => "closed_form_paper",
        }
    }
}

impl fmt::Display for OdeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OdeMethod {
    type Err = DgodeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(OdeMethod::Euler),
            "rk4" => Ok(OdeMethod::Rk4),
            "closed_form_exact" => Ok(OdeMethod::ClosedFormExact),
            "closed_form_paper" => Ok(OdeMethod::ClosedFormPaper),
            other => Err(DgodeError::Config(format!("unknown ODE method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    /// Evolution time, the continuous analogue of depth.
    pub t_end: f64,
    pub steps: usize,
    pub method: OdeMethod,
    pub sing_tol: f64,
    pub clamp_eps: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            t_end: 4.0,
            steps: 64,
            method: OdeMethod::ClosedFormExact,
            sing_tol: DEFAULT_SING_TOL,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(DgodeError::Config(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        if self.steps == 0 {
            return Err(DgodeError::Config("steps must be >= 1".into()));
        }
        if !(self.sing_tol > 0.0) {
            return Err(DgodeError::Config(format!("sing_tol must be positive, got {}", self.sing_tol)));
        }
        if !(self.clamp_eps > 0.0) {
            return Err(DgodeError::Config(format!("clamp_eps must be positive, got {}", self.clamp_eps)));
        }
        Ok(())
    }
}

/// `(e^{s t} − 1)/s`, switching to `t + s t²/2` when `|s| < delta`.
#[inline]
pub fn phi1(s: f64, t: f64, delta: f64) -> f64 {
    if s.abs() < delta {
        t + 0.5 * s * t * t
    } else {
        (s * t).exp_m1() / s
    }
}

/// `∂/∂s` of [`phi1`].
#[inline]
pub fn phi1_ds(s: f64, t: f64) -> f64 {
    let st = s * t;
    if st.abs() < 1e-3 {
        t * t * (0.5 + st / 3.0 + st * st / 8.0)
    } else {
        (st * st.exp() - st.exp_m1()) / (s * s)
    }
}

/// Spectral data of `Â` and `W` shared by every closed form and solver.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedFormCache {
    pub adj_eig: EigenSystem,
    pub w_eig: EigenSystem,
    /// Eigenvalues of `Â − I`.
    pub adj_shifted: Vec<f64>,
    /// Eigenvalues of `W − I`.
    pub w_shifted: Vec<f64>,
    /// Clamped `ln Λ`.
    pub adj_log: Vec<f64>,
    /// Clamped `ln Φ`.
    pub w_log: Vec<f64>,
    pub log_adj: DenseMatrix,
    pub log_w: DenseMatrix,
    pub clamp_eps: f64,
    pub sing_tol: f64,
}

impl ClosedFormCache {
    pub fn new(a_hat: &DenseMatrix, w: &DenseMatrix, clamp_eps: f64, sing_tol: f64) -> Result<Self> {
        Ok(Self::from_eigen(general_eig(a_hat)?, general_eig(w)?, clamp_eps, sing_tol))
    }

    pub fn from_eigen(adj_eig: EigenSystem, w_eig: EigenSystem, clamp_eps: f64, sing_tol: f64) -> Self {
        let adj_log: Vec<f64> = adj_eig.values.iter().map(|&v| clamped_ln(v, clamp_eps)).collect();
        let w_log: Vec<f64> = w_eig.values.iter().map(|&v| clamped_ln(v, clamp_eps)).collect();
        let log_adj = adj_eig.map(|v| clamped_ln(v, clamp_eps));
        let log_w = w_eig.map(|v| clamped_ln(v, clamp_eps));
        Self {
            adj_shifted: adj_eig.values.iter().map(|v| v - 1.0).collect(),
            w_shifted: w_eig.values.iter().map(|v| v - 1.0).collect(),
            adj_log,
            w_log,
            log_adj,
            log_w,
            adj_eig,
            w_eig,
            clamp_eps,
            sing_tol,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj_eig.dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_eig.dim()
    }

    pub fn check_input(&self, e: &DenseMatrix) -> Result<()> {
        if e.shape() != (self.node_count(), self.feature_dim()) {
            return Err(DgodeError::Dimension(format!(
                "input is {:?}, operators expect {}x{}",
                e.shape(),
                self.node_count(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// `Ẽ = P⁻¹ E Q`.
    pub fn e_tilde(&self, e: &DenseMatrix) -> DenseMatrix {
        self.adj_eig.inverse.dot(e).dot(&self.w_eig.vectors)
    }

    /// `P G Q⁻¹`.
    pub fn from_eigenbasis(&self, g: &DenseMatrix) -> DenseMatrix {
        self.adj_eig.vectors.dot(g).dot(&self.w_eig.inverse)
    }

    /// `P (Ẽ ∘ K) Q⁻¹` with `K_ij = kernel(i, j)`.
    pub fn apply_kernel(&self, e: &DenseMatrix, kernel: impl Fn(usize, usize) -> f64) -> DenseMatrix {
        let mut g = self.e_tilde(e);
        for i in 0..g.rows() {
            for (j, x) in g.row_mut(i).iter_mut().enumerate() {
                *x *= kernel(i, j);
            }
        }
        self.from_eigenbasis(&g)
    }

    /// `ln Λ_ii + ln Φ_jj`.
    #[inline]
    pub fn log_sum(&self, i: usize, j: usize) -> f64 {
        self.adj_log[i] + self.w_log[j]
    }

    /// `Λ′_ii + Φ′_jj`.
    #[inline]
    pub fn shifted_sum(&self, i: usize, j: usize) -> f64 {
        self.adj_shifted[i] + self.w_shifted[j]
    }

    /// `Â^s` through the cached eigensystem (spectrum clamped at zero).
    pub fn adj_power(&self, s: f64) -> DenseMatrix {
        self.adj_eig.map(|v| v.max(0.0).powf(s))
    }

    pub fn w_power(&self, s: f64) -> DenseMatrix {
        self.w_eig.map(|v| v.max(0.0).powf(s))
    }
}

/// `H(0)` with `(P⁻¹H(0)Q)_ij = (Λ_ii Ẽ_ij Φ_jj − Ẽ_ij)/(ln Λ_ii + ln Φ_jj)`.
///
/// Near the singular set `ln Λ_ii + ln Φ_jj → 0` the kernel tends to 1 and
/// the series branch of [`phi1`] is used.
pub fn initial_state(e: &DenseMatrix, cache: &ClosedFormCache) -> Result<DenseMatrix> {
    cache.check_input(e)?;
    Ok(cache.apply_kernel(e, |i, j| phi1(cache.log_sum(i, j), 1.0, cache.sing_tol)))
}

/// `dH/dt = ln Â · H + H · ln W + E`.
pub fn ode_rhs(h: &DenseMatrix, e: &DenseMatrix, cache: &ClosedFormCache) -> Result<DenseMatrix> {
    cache.check_input(e)?;
    cache.check_input(h)?;
    Ok(rhs_unchecked(h, e, cache))
}

pub(crate) fn rhs_unchecked(h: &DenseMatrix, e: &DenseMatrix, cache: &ClosedFormCache) -> DenseMatrix {
    let mut out = cache.log_adj.dot(h);
    out += &h.dot(&cache.log_w);
    out += e;
    out
}

/// `F_ij(t) = Ẽ_ij (e^{t s_ij} − 1)/s_ij` with `s_ij = Λ′_ii + Φ′_jj`.
pub fn f_matrix(cache: &ClosedFormCache, e_tilde: &DenseMatrix, t: f64, delta: f64) -> DenseMatrix {
    DenseMatrix::from_fn(e_tilde.rows(), e_tilde.cols(), |i, j| e_tilde[(i, j)] * phi1(cache.shifted_sum(i, j), t, delta))
}

/// `H(t) = e^{(Â−I)t} E e^{(W−I)t} + P F(t) Q⁻¹`, evaluated term by term.
pub fn paper_closed_form(e: &DenseMatrix, cache: &ClosedFormCache, t: f64) -> Result<DenseMatrix> {
    cache.check_input(e)?;
    let left = cache.adj_eig.map(|v| ((v - 1.0) * t).exp());
    let right = cache.w_eig.map(|v| ((v - 1.0) * t).exp());
    let f = f_matrix(cache, &cache.e_tilde(e), t, cache.sing_tol);
    let mut h = left.dot(e).dot(&right);
    h += &cache.from_eigenbasis(&f);
    Ok(h)
}

/// Exact solution of [`ode_rhs`] from [`initial_state`]:
/// `(P⁻¹H(t)Q)_ij = Ẽ_ij (e^{(t+1) L_ij} − 1)/L_ij`, `L_ij = ln Λ_ii + ln Φ_jj`.
pub fn exact_solution(e: &DenseMatrix, cache: &ClosedFormCache, t: f64) -> Result<DenseMatrix> {
    cache.check_input(e)?;
    Ok(cache.apply_kernel(e, |i, j| phi1(cache.log_sum(i, j), t + 1.0, cache.sing_tol)))
}

/// Relative residual of `d²H/dt² = ln Â · dH/dt + dH/dt · ln W` along the
/// exact solution, with both derivatives taken by central differences.
///
/// Returns 0 when both sides sit below the finite-difference noise floor.
pub fn second_order_identity_check(e: &DenseMatrix, cache: &ClosedFormCache, t: f64, step: f64) -> Result<f64> {
    let h_minus = exact_solution(e, cache, t - step)?;
    let h_mid = exact_solution(e, cache, t)?;
    let h_plus = exact_solution(e, cache, t + step)?;
    let first = (&h_plus - &h_minus).scale(0.5 / step);
    let mut second = &h_plus + &h_minus;
    second.axpy(-2.0, &h_mid);
    let second = second.scale(1.0 / (step * step));
    let mut rhs = cache.log_adj.dot(&first);
    rhs += &first.dot(&cache.log_w);

    let noise = 1e3 * f64::EPSILON * h_mid.frobenius_norm() / (step * step);
    let lhs_norm = second.frobenius_norm();
    if lhs_norm <= noise && rhs.frobenius_norm() <= noise {
        return Ok(0.0);
    }
    Ok((&second - &rhs).frobenius_norm() / lhs_norm.max(rhs.frobenius_norm()))
}
