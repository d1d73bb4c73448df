//! Stochastic episode engine: simulates the true system under a policy,
//! applies geometric stopping, and provides Monte-Carlo cost evaluation with a
//! reproducible per-episode RNG-stream contract.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::estimator::{kalman_init, kalman_step};
use crate::learner::Transition;
use crate::model::{final_cost, step_cost, symmetrize, ValidatedModel, PSD_TOL};
use crate::{Error, Result};

/// Hard cap on episode length; hitting it is an error, not a truncation.
pub const EPISODE_CAP: usize = 10_000_000;

/// Which state the policy (and the learner) sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationMode {
    /// Policy consumes the true state x_t.
    FullyObserved,
    /// Policy consumes the Kalman estimate x̂_t.
    CertaintyEquivalent,
}

/// ChaCha stream for (seed, stream_id); identical pairs reproduce identical
/// draw sequences across runs of the same build. Per-episode stream_id is the
/// episode index.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Sampler for N(mean, cov) with a precomputed symmetric PSD square root of
/// the covariance. Rank-deficient covariances are supported: eigenvalues are
/// clamped at zero, and exactly-diagonal covariances keep zero-variance
/// directions exact.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                name: "cov".into(),
                expected: format!("{n}x{n}"),
                actual: format!("{}x{}", cov.nrows(), cov.ncols()),
            });
        }
        let sym = symmetrize(cov);
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || sym[(i, j)] == 0.0));
        let factor = if diagonal {
            for i in 0..n {
                if sym[(i, i)] < -PSD_TOL * sym.diagonal().amax().max(1.0) {
                    return Err(Error::NotPsd {
                        name: "cov".into(),
                        eigenvalue: sym[(i, i)],
                    });
                }
            }
            DMatrix::from_diagonal(&sym.diagonal().map(|d| d.max(0.0).sqrt()))
        } else {
            let eig = sym.symmetric_eigen();
            let scale = eig.eigenvalues.amax().max(1.0);
            let min = eig.eigenvalues.min();
            if min < -PSD_TOL * scale {
                return Err(Error::NotPsd {
                    name: "cov".into(),
                    eigenvalue: min,
                });
            }
            let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
        };
        Ok(Self { mean, factor })
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// One draw from N(mean, cov).
pub fn sample_gaussian(
    rng: &mut ChaCha8Rng,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(mean.clone(), cov)?.sample(rng))
}

/// Simulation engine for one model: owns the noise samplers, holds no episode
/// state. Per-step draw order is stop-coin, observation noise, policy draws,
/// process noise.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a ValidatedModel,
    initial: GaussianSampler,
    process_noise: GaussianSampler,
    obs_noise: GaussianSampler,
}

impl<'a> Simulator<'a> {
    /// `restart_cov` overrides Sigma1 as the distribution of fresh episode
    /// initial states.
    pub fn new(model: &'a ValidatedModel, restart_cov: Option<&DMatrix<f64>>) -> Result<Self> {
        let sys = model.system();
        Ok(Self {
            model,
            initial: GaussianSampler::new(
                sys.x1_mean.clone(),
                restart_cov.unwrap_or(&sys.sigma1),
            )?,
            process_noise: GaussianSampler::new(DVector::zeros(model.state_dim()), &sys.w)?,
            obs_noise: GaussianSampler::new(DVector::zeros(model.obs_dim()), &sys.e)?,
        })
    }

    pub fn model(&self) -> &ValidatedModel {
        self.model
    }

    pub fn draw_initial(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        self.initial.sample(rng)
    }

    /// The geometric stopping coin, tossed before acting.
    pub fn toss_stop(&self, rng: &mut ChaCha8Rng) -> bool {
        rng.random::<f64>() < self.model.cost().p
    }

    /// y = H x + e.
    pub fn observe(&self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        &self.model.system().h * x + self.obs_noise.sample(rng)
    }

    /// x' = F x + G u + w.
    pub fn next_state(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut ChaCha8Rng,
    ) -> DVector<f64> {
        let sys = self.model.system();
        &sys.f * x + &sys.g * u + self.process_noise.sample(rng)
    }
}

/// Full record of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub total_cost: f64,
    pub length: usize,
}

/// Run one episode under `policy`. The stop coin is tossed at the start of
/// each step, so an episode may terminate before any control is taken; the
/// final cost is paid exactly once, on the state current at the toss.
pub fn simulate_episode<P>(
    simulator: &Simulator<'_>,
    mode: ObservationMode,
    rng: &mut ChaCha8Rng,
    policy: &mut P,
) -> Result<EpisodeTrace>
where
    P: FnMut(&DVector<f64>, &mut ChaCha8Rng) -> Result<DVector<f64>>,
{
    let model = simulator.model;
    let mut filter =
        (mode == ObservationMode::CertaintyEquivalent).then(|| kalman_init(model));
    let mut x = simulator.draw_initial(rng);
    let mut states = Vec::new();
    let mut observations = Vec::new();
    let mut transitions = Vec::new();
    let mut total_cost = 0.0;
    // A step transition is completed once the successor learn-state is known.
    let mut pending: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    loop {
        if states.len() >= EPISODE_CAP {
            return Err(Error::EpisodeCapExceeded { cap: EPISODE_CAP });
        }
        states.push(x.clone());
        let learn_x = match &filter {
            None => x.clone(),
            Some(fs) => fs.xhat.clone(),
        };
        if let Some((px, pu, pc)) = pending.take() {
            transitions.push(Transition::step(px, pu, pc, learn_x.clone()));
        }
        if simulator.toss_stop(rng) {
            let fc = final_cost(&x, model.cost())?;
            total_cost += fc;
            transitions.push(Transition::terminal(learn_x, fc));
            break;
        }
        let y = simulator.observe(&x, rng);
        observations.push(y.clone());
        let u = policy(&learn_x, rng)?;
        let c = step_cost(&x, &u, model.cost())?;
        total_cost += c;
        let x_next = simulator.next_state(&x, &u, rng);
        if let Some(fs) = filter.as_mut() {
            *fs = kalman_step(fs, &u, &y, model)?;
        }
        pending = Some((learn_x, u, c));
        x = x_next;
    }
    let length = transitions.len();
    Ok(EpisodeTrace {
        transitions,
        states,
        observations,
        total_cost,
        length,
    })
}

/// Monte-Carlo estimate of expected total episode cost.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
}

/// Per-episode record emitted by [`evaluate_policy`].
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStat {
    pub episode: usize,
    pub length: usize,
    pub total_cost: f64,
}

/// Run `episodes` independent episodes (sub-stream id = episode index) and
/// return the mean total cost with its standard error, plus per-episode stats.
pub fn evaluate_policy<P>(
    model: &ValidatedModel,
    mode: ObservationMode,
    episodes: usize,
    seed: u64,
    restart_cov: Option<&DMatrix<f64>>,
    policy: &mut P,
) -> Result<(EvalSummary, Vec<EpisodeStat>)>
where
    P: FnMut(&DVector<f64>, &mut ChaCha8Rng) -> Result<DVector<f64>>,
{
    assert!(episodes >= 1, "at least one episode required");
    let simulator = Simulator::new(model, restart_cov)?;
    let mut stats = Vec::with_capacity(episodes);
    let mut sum = 0.0;
    for ep in 0..episodes {
        let mut rng = stream_rng(seed, ep as u64);
        let trace = simulate_episode(&simulator, mode, &mut rng, policy)?;
        sum += trace.total_cost;
        stats.push(EpisodeStat {
            episode: ep + 1,
            length: trace.length,
            total_cost: trace.total_cost,
        });
    }
    let mean = sum / episodes as f64;
    let stderr = if episodes > 1 {
        let var = stats
            .iter()
            .map(|s| (s.total_cost - mean).powi(2))
            .sum::<f64>()
            / (episodes - 1) as f64;
        (var / episodes as f64).sqrt()
    } else {
        0.0
    };
    Ok((
        EvalSummary {
            mean,
            stderr,
            episodes,
        },
        stats,
    ))
}
