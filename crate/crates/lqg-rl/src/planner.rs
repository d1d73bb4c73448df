//! Classical solutions used as ground truth: the finite-horizon backward
//! Riccati recursion and the stationary fixed point of the geometric-stopping
//! Bellman operator.

use nalgebra::{Cholesky, DMatrix};

use crate::model::{symmetrize, ValidatedModel};
use crate::{Error, Result};

/// Default relative Frobenius tolerance for [`stationary_pi`].
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap for [`stationary_pi`].
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Cost-to-go matrices S_1..S_N and feedback gains L_1..L_{N-1} of the
/// finite-horizon problem. `s[t-1]` holds S_t.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub s: Vec<DMatrix<f64>>,
    pub l: Vec<DMatrix<f64>>,
}

/// Stationary value matrix Π* with solver diagnostics. `bias` is the constant
/// value offset ((1−p)/p)·trace(Π* W) accumulated from process noise; Π*
/// itself satisfies the trace-free recursion.
#[derive(Debug, Clone)]
pub struct StationaryValue {
    pub pi: DMatrix<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Greedy feedback gain L(Π) together with a flag marking whether the inner
/// matrix needed a jitter retry to factorize.
#[derive(Debug, Clone)]
pub struct GreedyGain {
    pub gain: DMatrix<f64>,
    pub regularized: bool,
}

/// Backward recursion S_N = Qf, L_t = (Gᵀ S_{t+1} G + R)⁻¹ Gᵀ S_{t+1} F,
/// S_t = Q + Fᵀ S_{t+1} F − Fᵀ S_{t+1} G L_t, each S_t symmetrized.
pub fn riccati_backward(model: &ValidatedModel, horizon: usize) -> RiccatiSolution {
    assert!(horizon >= 1, "horizon must be at least 1");
    let sys = model.system();
    let cost = model.cost();
    let mut s = vec![cost.qf.clone()];
    let mut l = Vec::new();
    for _ in 1..horizon {
        let s_next = s.last().unwrap();
        let inner = sys.g.transpose() * s_next * &sys.g + &cost.r;
        // PD is guaranteed: R is PD and S is PSD for validated models.
        let chol = Cholesky::new(inner).expect("G^T S G + R must be positive definite");
        let gain = chol.solve(&(sys.g.transpose() * s_next * &sys.f));
        let s_t = &cost.q + sys.f.transpose() * s_next * &sys.f
            - sys.f.transpose() * s_next * &sys.g * &gain;
        s.push(symmetrize(&s_t));
        l.push(gain);
    }
    s.reverse();
    l.reverse();
    RiccatiSolution { s, l }
}

fn inner_cholesky(pi: &DMatrix<f64>, model: &ValidatedModel) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let sys = model.system();
    let inner = sys.g.transpose() * pi * &sys.g + &model.cost().r;
    Cholesky::new(inner)
}

/// One application of the stopping-probability Bellman operator:
/// T(Π) = p·Qf + (1−p)·(Q + FᵀΠF − FᵀΠG (R + GᵀΠG)⁻¹ GᵀΠF), symmetrized.
pub fn bellman_operator(pi: &DMatrix<f64>, model: &ValidatedModel) -> Result<DMatrix<f64>> {
    let sys = model.system();
    let cost = model.cost();
    let chol = inner_cholesky(pi, model).ok_or(Error::NonPdInnerMatrix)?;
    let cross = sys.g.transpose() * pi * &sys.f; // GᵀΠF, m x n
    let continuation =
        &cost.q + sys.f.transpose() * pi * &sys.f - cross.transpose() * chol.solve(&cross);
    let t = &cost.qf * cost.p + continuation * (1.0 - cost.p);
    Ok(symmetrize(&t))
}

/// Greedy gain L(Π) = (R + GᵀΠG)⁻¹ GᵀΠF; the greedy control is u = −L(Π)·x.
///
/// If the inner matrix fails Cholesky factorization (Π transiently indefinite
/// during learning), it is retried once with jitter 1e-10·trace(R + GᵀΠG)·I
/// and the result is flagged `regularized`.
pub fn greedy_gain(pi: &DMatrix<f64>, model: &ValidatedModel) -> Result<GreedyGain> {
    let sys = model.system();
    let cross = sys.g.transpose() * pi * &sys.f;
    if let Some(chol) = inner_cholesky(pi, model) {
        return Ok(GreedyGain {
            gain: chol.solve(&cross),
            regularized: false,
        });
    }
    let inner = sys.g.transpose() * pi * &sys.g + &model.cost().r;
    let m = inner.nrows();
    let jitter = 1e-10 * inner.trace();
    let chol = Cholesky::new(inner + DMatrix::identity(m, m) * jitter)
        .ok_or(Error::NonPdInnerMatrix)?;
    Ok(GreedyGain {
        gain: chol.solve(&cross),
        regularized: true,
    })
}

/// Iterate Π ← T(Π) from Π₀ = Qf until the Frobenius residual drops below
/// tol·max(1, ‖Π‖_F). If the residual grows for 10 consecutive iterations the
/// update switches to the damped form (Π + T(Π))/2.
pub fn stationary_pi(model: &ValidatedModel, tol: f64, max_iter: usize) -> Result<StationaryValue> {
    assert!(tol > 0.0, "tolerance must be positive");
    let cost = model.cost();
    let mut pi = cost.qf.clone();
    let mut prev_residual = f64::INFINITY;
    let mut rising = 0usize;
    let mut damped = false;
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let t = bellman_operator(&pi, model)?;
        residual = (&t - &pi).norm();
        if residual <= tol * pi.norm().max(1.0) {
            let bias = (1.0 - cost.p) / cost.p * (&t * &model.system().w).trace();
            return Ok(StationaryValue {
                pi: t,
                bias,
                iterations: iter,
                residual,
            });
        }
        if residual > prev_residual {
            rising += 1;
            if rising >= 10 {
                damped = true;
            }
        } else {
            rising = 0;
        }
        prev_residual = residual;
        pi = if damped { (&pi + &t) * 0.5 } else { t };
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}
