use super::{exact_solution, initial_state, paper_closed_form, rhs_unchecked, ClosedFormCache, OdeConfig, OdeMethod};
use crate::error::Result;
use crate::numerics::DenseMatrix;

/// Fixed-step explicit integrators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stepper {
    Euler,
    Rk4,
}

impl Stepper {
    /// One step of size `h` for the autonomous system `dH/dt = rhs(H)`.
    pub fn step(self, state: &DenseMatrix, h: f64, rhs: &impl Fn(&DenseMatrix) -> DenseMatrix) -> DenseMatrix {
        match self {
            Stepper::Euler => {
                let mut next = state.clone();
                next.axpy(h, &rhs(state));
                next
            }
            Stepper::Rk4 => {
                let k1 = rhs(state);
                let mut probe = state.clone();
                probe.axpy(0.5 * h, &k1);
                let k2 = rhs(&probe);
                let mut probe = state.clone();
                probe.axpy(0.5 * h, &k2);
                let k3 = rhs(&probe);
                let mut probe = state.clone();
                probe.axpy(h, &k3);
                let k4 = rhs(&probe);
                let mut next = state.clone();
                next.axpy(h / 6.0, &k1);
                next.axpy(h / 3.0, &k2);
                next.axpy(h / 3.0, &k3);
                next.axpy(h / 6.0, &k4);
                next
            }
        }
    }
}

/// Integrates `dH/dt = rhs(H)` from `h0` over `[0, t_end]` in `steps` equal
/// steps.
pub fn integrate(
    h0: &DenseMatrix,
    t_end: f64,
    steps: usize,
    stepper: Stepper,
    rhs: impl Fn(&DenseMatrix) -> DenseMatrix,
) -> DenseMatrix {
    let steps = steps.max(1);
    let h = t_end / steps as f64;
    let mut state = h0.clone();
    if t_end == 0.0 {
        return state;
    }
    for _ in 0..steps {
        state = stepper.step(&state, h, &rhs);
    }
    state
}

/// Evolves the encoder output `e` to `config.t_end` with the configured method.
pub fn solve(e: &DenseMatrix, cache: &ClosedFormCache, config: &OdeConfig) -> Result<DenseMatrix> {
    config.validate()?;
    cache.check_input(e)?;
    match config.method {
        OdeMethod::Euler | OdeMethod::Rk4 => {
            let stepper = if config.method == OdeMethod::Euler { Stepper::Euler } else { Stepper::Rk4 };
            let h0 = initial_state(e, cache)?;
            Ok(integrate(&h0, config.t_end, config.steps, stepper, |h| rhs_unchecked(h, e, cache)))
        }
        OdeMethod::ClosedFormExact => exact_solution(e, cache, config.t_end),
        OdeMethod::ClosedFormPaper => paper_closed_form(e, cache, config.t_end),
    }
}
