//! On-line greedy control plus 1-step TD learning of the quadratic value
//! matrix: the TD error weights a Hebbian rank-1 update Π ← Π + α·δ·x xᵀ.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::estimator::{kalman_init, kalman_step};
use crate::model::{final_cost, step_cost, symmetrize, ValidatedModel};
use crate::planner::greedy_gain;
use crate::sim::{ObservationMode, Simulator, EPISODE_CAP};
use crate::{Error, Result};

/// One experience tuple. The stopped/continuing distinction is carried by the
/// variant, so "stopped ⇔ no successor ⇔ final cost present" holds by
/// construction. `x` is the state used for learning: the true state in
/// fully-observed mode, the filter estimate in certainty-equivalent mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Transition {
    Step {
        x: DVector<f64>,
        u: DVector<f64>,
        cost: f64,
        x_next: DVector<f64>,
    },
    Terminal {
        x: DVector<f64>,
        final_cost: f64,
    },
}

impl Transition {
    pub fn step(x: DVector<f64>, u: DVector<f64>, cost: f64, x_next: DVector<f64>) -> Self {
        Transition::Step { x, u, cost, x_next }
    }

    pub fn terminal(x: DVector<f64>, final_cost: f64) -> Self {
        Transition::Terminal { x, final_cost }
    }

    pub fn x(&self) -> &DVector<f64> {
        match self {
            Transition::Step { x, .. } | Transition::Terminal { x, .. } => x,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Transition::Terminal { .. })
    }
}

/// Quadratic value estimate V(x) = xᵀ Π x + bias. Π is kept exactly symmetric:
/// the constructor symmetrizes and every update adds a symmetric rank-1 term.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pi: DMatrix<f64>,
    bias: f64,
}

impl ValueEstimate {
    pub fn new(pi: &DMatrix<f64>, bias: f64) -> Result<Self> {
        if pi.nrows() != pi.ncols() {
            return Err(Error::DimensionMismatch {
                name: "Pi".into(),
                expected: "square".into(),
                actual: format!("{}x{}", pi.nrows(), pi.ncols()),
            });
        }
        Ok(Self {
            pi: symmetrize(pi),
            bias,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            pi: DMatrix::zeros(n, n),
            bias: 0.0,
        }
    }

    pub fn pi(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}

/// V(x) = xᵀ Π x + bias.
pub fn value_of(v: &ValueEstimate, x: &DVector<f64>) -> Result<f64> {
    if x.len() != v.pi.nrows() {
        return Err(Error::DimensionMismatch {
            name: "x".into(),
            expected: format!("{}x1", v.pi.nrows()),
            actual: format!("{}x1", x.len()),
        });
    }
    Ok((x.transpose() * &v.pi * x)[(0, 0)] + v.bias)
}

/// 1-step TD error, target minus estimate in both cases:
/// terminal δ = c_f(x) − V(x), otherwise δ = c(x,u) + V(x′) − V(x).
pub fn td_error(tr: &Transition, v: &ValueEstimate) -> Result<f64> {
    match tr {
        Transition::Terminal { x, final_cost } => Ok(final_cost - value_of(v, x)?),
        Transition::Step {
            x, cost, x_next, ..
        } => Ok(cost + value_of(v, x_next)? - value_of(v, x)?),
    }
}

/// Error-weighted Hebbian update Π′ = Π + α·δ·x xᵀ, with bias′ = bias + α·δ
/// when bias tracking is enabled. The rank-1 term x xᵀ is exactly symmetric,
/// so Π stays exactly symmetric.
pub fn td_update(
    v: &ValueEstimate,
    tr: &Transition,
    alpha: f64,
    track_bias: bool,
) -> Result<ValueEstimate> {
    assert!(alpha > 0.0, "learning rate must be positive");
    let delta = td_error(tr, v)?;
    let x = tr.x();
    let pi = &v.pi + (x * x.transpose()) * (alpha * delta);
    let bias = if track_bias {
        v.bias + alpha * delta
    } else {
        v.bias
    };
    Ok(ValueEstimate { pi, bias })
}

/// Greedy action u = −L(Π)·x plus N(0, explore_sigma²·I) exploration noise.
/// Returns the action and whether a fallback was needed.
///
/// When Π is so indefinite that R + GᵀΠG has no PD factorization even with
/// jitter, the one-step objective has no minimizer; the action falls back to
/// pure exploration around u = 0 so that learning can continue, and the event
/// is flagged.
pub fn greedy_action(
    v: &ValueEstimate,
    x: &DVector<f64>,
    model: &ValidatedModel,
    explore_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, bool)> {
    let (mut u, fallback) = match greedy_gain(&v.pi, model) {
        Ok(gg) => (-(&gg.gain * x), gg.regularized),
        Err(Error::NonPdInnerMatrix) => (DVector::zeros(model.control_dim()), true),
        Err(e) => return Err(e),
    };
    if explore_sigma > 0.0 {
        for ui in u.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *ui += explore_sigma * z;
        }
    }
    Ok((u, fallback))
}

/// Learning-rate schedule α_t = alpha0·decay_c/(decay_c + t) plus the
/// exploration and restart distributions of the learning run.
#[derive(Debug, Clone)]
pub struct LearningSchedule {
    pub alpha0: f64,
    pub decay_c: f64,
    pub explore_sigma: f64,
    pub restart_cov: DMatrix<f64>,
}

impl LearningSchedule {
    pub fn alpha(&self, t: u64) -> f64 {
        self.alpha0 * self.decay_c / (self.decay_c + t as f64)
    }
}

/// Configuration of a learning run. Π₀ defaults to the zero matrix.
#[derive(Debug, Clone)]
pub struct LearnConfig {
    pub schedule: LearningSchedule,
    pub mode: ObservationMode,
    pub episodes: usize,
    pub seed: u64,
    pub track_bias: bool,
    pub pi0: Option<DMatrix<f64>>,
    pub bias0: f64,
    /// When supplied, the learning curve reports ‖Π_t − Π*‖_F per episode.
    pub oracle_pi: Option<DMatrix<f64>>,
    /// Stop after the episode in which the global transition counter reaches
    /// this value, even if fewer than `episodes` episodes have run.
    pub max_transitions: Option<u64>,
}

impl LearnConfig {
    pub fn new(schedule: LearningSchedule, mode: ObservationMode, episodes: usize, seed: u64) -> Self {
        Self {
            schedule,
            mode,
            episodes,
            seed,
            track_bias: true,
            pi0: None,
            bias0: 0.0,
            oracle_pi: None,
            max_transitions: None,
        }
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub length: usize,
    pub total_cost: f64,
    pub pi_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnResult {
    pub value: ValueEstimate,
    pub curve: Vec<EpisodeRecord>,
    /// Number of greedy-gain jitter fallbacks observed (recorded, not raised).
    pub fallback_events: usize,
}

fn require_fully_observable(model: &ValidatedModel) -> Result<()> {
    let sys = model.system();
    let n = model.state_dim();
    let identity = model.obs_dim() == n && sys.h == DMatrix::identity(n, n);
    if !identity || sys.e.amax() != 0.0 {
        return Err(Error::Config(
            "fully-observed mode requires H = I and E = 0".into(),
        ));
    }
    Ok(())
}

/// Run episodes under the greedy policy for the current Π, applying the TD
/// update after every transition. α_t uses the global transition counter.
/// Episode e uses RNG sub-stream e, so runs are reproducible bit-for-bit.
pub fn learn(model: &ValidatedModel, config: &LearnConfig) -> Result<LearnResult> {
    let n = model.state_dim();
    match config.mode {
        ObservationMode::FullyObserved => require_fully_observable(model)?,
        ObservationMode::CertaintyEquivalent => {}
    }
    let mut value = match &config.pi0 {
        Some(pi0) => {
            if pi0.nrows() != n || pi0.ncols() != n {
                return Err(Error::DimensionMismatch {
                    name: "Pi0".into(),
                    expected: format!("{n}x{n}"),
                    actual: format!("{}x{}", pi0.nrows(), pi0.ncols()),
                });
            }
            ValueEstimate::new(pi0, config.bias0)?
        }
        None => ValueEstimate {
            pi: DMatrix::zeros(n, n),
            bias: config.bias0,
        },
    };

    let simulator = Simulator::new(model, Some(&config.schedule.restart_cov))?;
    let mut curve = Vec::with_capacity(config.episodes.min(1 << 20));
    let mut fallback_events = 0usize;
    let mut global_t: u64 = 0;

    for episode in 1..=config.episodes {
        let mut rng = crate::sim::stream_rng(config.seed, (episode - 1) as u64);
        let mut x = simulator.draw_initial(&mut rng);
        let mut filter = (config.mode == ObservationMode::CertaintyEquivalent)
            .then(|| kalman_init(model));
        let mut learn_x = match &filter {
            None => x.clone(),
            Some(fs) => fs.xhat.clone(),
        };
        let mut total_cost = 0.0;
        let mut length = 0usize;
        loop {
            if length >= EPISODE_CAP {
                return Err(Error::EpisodeCapExceeded { cap: EPISODE_CAP });
            }
            length += 1;
            global_t += 1;
            let alpha = config.schedule.alpha(global_t);
            if simulator.toss_stop(&mut rng) {
                let fc = final_cost(&x, model.cost())?;
                total_cost += fc;
                let tr = Transition::terminal(learn_x, fc);
                value = td_update(&value, &tr, alpha, config.track_bias)?;
                break;
            }
            let y = simulator.observe(&x, &mut rng);
            let (u, regularized) =
                greedy_action(&value, &learn_x, model, config.schedule.explore_sigma, &mut rng)?;
            if regularized {
                fallback_events += 1;
            }
            let c = step_cost(&x, &u, model.cost())?;
            total_cost += c;
            let x_next = simulator.next_state(&x, &u, &mut rng);
            if let Some(fs) = filter.as_mut() {
                *fs = kalman_step(fs, &u, &y, model)?;
            }
            let learn_next = match &filter {
                None => x_next.clone(),
                Some(fs) => fs.xhat.clone(),
            };
            let tr = Transition::step(learn_x, u, c, learn_next.clone());
            value = td_update(&value, &tr, alpha, config.track_bias)?;
            learn_x = learn_next;
            x = x_next;
        }
        curve.push(EpisodeRecord {
            episode,
            length,
            total_cost,
            pi_error: config
                .oracle_pi
                .as_ref()
                .map(|oracle| (&value.pi - oracle).norm()),
        });
        if config.max_transitions.is_some_and(|cap| global_t >= cap) {
            break;
        }
    }

    Ok(LearnResult {
        value,
        curve,
        fallback_events,
    })
}
