//! The online learning loop: sample a model, plan, execute, update.
//!
//! Regret is measured against a true-model planner. For the maze that
//! planner is exact dynamic programming; elsewhere it is receding-horizon
//! MPPI on the true dynamics, averaged over `oracle_rollouts` executions.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, PolicyMode};
use crate::envs::{rollout, Direction, Environment, Trajectory};
use crate::error::{KnrError, Result};
use crate::features::{onehot_maze_index, FeatureMap};
use crate::model::{BallForm, KnrModel, Transition};
use crate::numerics::{spectral_norm, Matrix, RngStream, SPECTRAL_DEFAULT_TOL};
use crate::planner::{
    dp_plan, mppi_plan, optimistic_plan, receding_horizon_step, rollout_cost, Dynamics, ModelDynamics,
    MppiConfig, TrueDynamics,
};

const EPISODE_TAG: u64 = 0xE915;
/// The oracle estimate depends only on the environment and planner, never
/// on the run seed, so it can be shared across the seeds of a sweep.
const ORACLE_SEED: u64 = 0x0AC1E;

const SAMPLE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const PLAN_STREAM: u64 = 2;
const WALK_STREAM: u64 = 3;
const CANDIDATE_STREAM: u64 = 4;

/// Everything recorded about one episode; one row of `results.csv`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub realized_cost: f64,
    pub oracle_cost: f64,
    pub cum_regret: f64,
    pub info_gain: f64,
    /// Whether the true weights lie in the explicit-form ball after this
    /// episode's update; empty when the true weights are not linear in the
    /// features.
    pub ball_ok: Option<bool>,
    /// Distinct maze state-action pairs visited so far.
    pub coverage: Option<usize>,
    /// First episode that reached the goal, once that has happened.
    pub first_success: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub rollouts: usize,
}

/// Features seen in each episode, enough to rebuild every `Σᵗ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub lambda: f64,
    pub d_phi: usize,
    pub episodes: Vec<Vec<Vec<f64>>>,
}

impl RunTrace {
    pub fn new(lambda: f64, d_phi: usize) -> Self {
        Self {
            lambda,
            d_phi,
            episodes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RegretReport {
    pub records: Vec<EpisodeRecord>,
    pub oracle: OracleEstimate,
    pub first_success: Option<usize>,
    pub trace: RunTrace,
    pub final_model: KnrModel,
}

impl RegretReport {
    pub fn final_cum_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Mean per-episode regret and its standard error across episodes.
    pub fn mean_regret(&self) -> (f64, f64) {
        let n = self.records.len() as f64;
        let regrets: Vec<f64> = self.records.iter().map(|r| r.realized_cost - r.oracle_cost).collect();
        let mean = regrets.iter().sum::<f64>() / n;
        if regrets.len() < 2 {
            return (mean, 0.0);
        }
        let var = regrets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}

/// Oracle estimates keyed by environment, planner and rollout count.
#[derive(Debug, Default)]
pub struct OracleCache {
    entries: HashMap<String, OracleEstimate>,
}

impl OracleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A config resolved into live objects.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub env: Box<dyn Environment>,
    pub features: FeatureMap,
    pub planner: MppiConfig,
    pub lambda: f64,
    pub sigma: f64,
    pub true_weights: Option<Matrix>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let env = config.build_env()?;
        let features = config.build_features(env.as_ref())?;
        let planner = config.planner_for(env.as_ref())?;
        let lambda = config.model.resolved_lambda(env.as_ref());
        let sigma = config.model.resolved_sigma(env.as_ref());
        let true_weights = env.true_weights(&features);
        Ok(Self {
            config: config.clone(),
            env,
            features,
            planner,
            lambda,
            sigma,
            true_weights,
        })
    }

    pub fn fresh_model(&self) -> Result<KnrModel> {
        KnrModel::new(self.env.d_x(), self.features.d_phi(), self.lambda, self.sigma)
    }

    /// Receding-horizon MPPI against `dynamics`, executed in the true
    /// environment. The plan length shrinks near the end of the episode and
    /// the nominal sequence starts at zero.
    pub fn execute_with(&self, dynamics: &dyn Dynamics, episode: usize, stream: RngStream) -> Result<Trajectory> {
        let env = self.env.as_ref();
        let horizon = env.horizon();
        let cost = |x: &[f64], u: &[f64], _h: usize| env.episode_cost(episode, x, u);
        let mut warm = vec![vec![0.0; env.d_u()]; self.planner.horizon.min(horizon)];
        let plan_stream = stream.substream(PLAN_STREAM);
        let mut noise = stream.substream(NOISE_STREAM).generator();
        rollout(
            env,
            |x, h| {
                warm.truncate(horizon - h);
                let (u, next) =
                    receding_horizon_step(dynamics, &cost, x, &warm, &self.planner, plan_stream.substream(h as u64))?;
                warm = next;
                Ok(u)
            },
            &mut noise,
        )
    }

    /// Plans against `x' = W φ(x, u)` and executes in the environment.
    pub fn plan_and_execute(&self, w: &Matrix, episode: usize, stream: RngStream) -> Result<Trajectory> {
        let dynamics = ModelDynamics::new(w, &self.features)?.projected(self.env.as_ref());
        self.execute_with(&dynamics, episode, stream)
    }

    /// Uniform controls within the control bounds.
    pub fn random_walk(&self, stream: RngStream) -> Result<Trajectory> {
        let (lo, hi) = self.env.control_bounds();
        if lo.iter().chain(&hi).any(|b| !b.is_finite()) {
            return Err(KnrError::Unsupported("random walk needs finite control bounds".into()));
        }
        let mut walk = stream.substream(WALK_STREAM).generator();
        let mut noise = stream.substream(NOISE_STREAM).generator();
        rollout(
            self.env.as_ref(),
            |_, _| Ok(lo.iter().zip(&hi).map(|(a, b)| walk.random_range(*a..=*b)).collect()),
            &mut noise,
        )
    }

    /// One episode with the configured policy. Returns the trajectory and
    /// the model that was planned against (none for the random walk).
    pub fn run_episode(&self, model: &KnrModel, episode: usize, stream: RngStream) -> Result<(Trajectory, Option<Matrix>)> {
        let reshape = self.config.driver.reshape_scale;
        match self.config.driver.mode {
            PolicyMode::RandomWalk => Ok((self.random_walk(stream)?, None)),
            PolicyMode::Thompson => {
                let mut g = stream.substream(SAMPLE_STREAM).generator();
                let w = model.thompson_sample(reshape, &mut g)?;
                let traj = self.plan_and_execute(&w, episode, stream)?;
                Ok((traj, Some(w)))
            }
            PolicyMode::Pinned => {
                let w = self
                    .true_weights
                    .clone()
                    .ok_or_else(|| KnrError::Unsupported("pinned mode needs true weights in feature space".into()))?;
                let traj = self.plan_and_execute(&w, episode, stream)?;
                Ok((traj, Some(w)))
            }
            PolicyMode::Optimistic => {
                let mut g = stream.substream(CANDIDATE_STREAM).generator();
                let mut candidates = vec![model.wbar().clone()];
                for _ in 0..self.config.driver.optimistic_candidates {
                    candidates.push(model.thompson_sample(reshape, &mut g)?);
                }
                let m = &self.config.model;
                let spec = model.ball_spec(m.beta_form, m.c1, m.w_star_norm_bound, model.n_episodes())?;
                let env = self.env.as_ref();
                let x0 = env.x0().to_vec();
                let cost = |x: &[f64], u: &[f64], _h: usize| env.episode_cost(episode, x, u);
                let nominal = vec![vec![0.0; env.d_u()]; self.planner.horizon.min(env.horizon()).max(1)];
                let plan_stream = stream.substream(CANDIDATE_STREAM).substream(1);
                let (w, _, _) = optimistic_plan(&candidates, &spec, model, |w| {
                    let d = ModelDynamics::new(w, &self.features)?.projected(env);
                    let plan = mppi_plan(&d, &cost, &x0, &nominal, &self.planner, plan_stream)?;
                    let c = rollout_cost(&d, &cost, &x0, &plan)?;
                    Ok((plan, c))
                })?;
                let traj = self.plan_and_execute(&w, episode, stream)?;
                Ok((traj, Some(w)))
            }
        }
    }

    /// `J*` for the fixed cost: exact DP for the maze, otherwise the mean
    /// realized cost of `oracle_rollouts` true-model MPPI executions.
    pub fn estimate_oracle_cost(&self, cache: &mut OracleCache) -> Result<OracleEstimate> {
        let rollouts = self.config.driver.oracle_rollouts;
        let key = format!(
            "{}|{}|{rollouts}",
            serde_json::to_string(&self.config.env).expect("env spec serializes"),
            serde_json::to_string(&self.planner).expect("planner serializes"),
        );
        if let Some(hit) = cache.entries.get(&key) {
            return Ok(*hit);
        }
        let est = self.compute_oracle_cost(rollouts)?;
        cache.entries.insert(key, est);
        Ok(est)
    }

    fn compute_oracle_cost(&self, rollouts: usize) -> Result<OracleEstimate> {
        let env = self.env.as_ref();
        let truth = TrueDynamics(env);
        if env.as_maze().is_some() {
            let actions: Vec<Vec<f64>> = Direction::ALL.iter().map(|d| vec![d.control()]).collect();
            let cost = |x: &[f64], u: &[f64], _h: usize| env.episode_cost(0, x, u);
            let (_, j) = dp_plan(&truth, &cost, env.x0(), &actions, env.horizon())?;
            return Ok(OracleEstimate {
                mean: j,
                std_err: 0.0,
                rollouts: 1,
            });
        }
        let base = RngStream::new(ORACLE_SEED, 0);
        let totals = (0..rollouts)
            .into_par_iter()
            .map(|i| Ok(self.execute_with(&truth, 0, base.substream(i as u64))?.realized_total))
            .collect::<Result<Vec<f64>>>()?;
        Ok(mean_and_std_err(&totals, rollouts))
    }

    pub fn run(&self, cache: &mut OracleCache) -> Result<RegretReport> {
        let oracle = self.estimate_oracle_cost(cache)?;
        let env = self.env.as_ref();
        let maze = env.as_maze().is_some();
        let base = RngStream::new(self.config.driver.seed, 0);
        let period = self.config.driver.model_update_period;
        let w_star_norm = self
            .true_weights
            .as_ref()
            .map(|w| spectral_norm(w, SPECTRAL_DEFAULT_TOL));

        let mut model = self.fresh_model()?;
        let mut pending: Vec<Vec<Transition>> = Vec::new();
        let mut trace = RunTrace::new(self.lambda, self.features.d_phi());
        let mut visited = HashSet::new();
        let mut first_success = None;
        let mut cum_regret = 0.0;
        let mut records = Vec::with_capacity(self.config.driver.episodes);

        for t in 0..self.config.driver.episodes {
            let with_episode = |e| KnrError::Episode {
                episode: t,
                source: Box::new(e),
            };
            let stream = base.path(&[EPISODE_TAG, t as u64]);
            let (traj, _) = self.run_episode(&model, t, stream).map_err(with_episode)?;

            let mut phis = Vec::with_capacity(traj.len());
            let mut transitions = Vec::with_capacity(traj.len());
            for h in 0..traj.len() {
                let (x, u) = (&traj.states[h], &traj.controls[h]);
                let phi = self.features.eval(x, u).map_err(with_episode)?;
                if maze {
                    visited.insert(onehot_maze_index(x, u[0]).map_err(with_episode)?);
                }
                transitions.push(Transition::new(phi.clone(), traj.states[h + 1].clone()));
                phis.push(phi);
            }
            if maze && first_success.is_none() && traj.states.iter().any(|x| env.is_goal(x)) {
                first_success = Some(t);
            }
            trace.episodes.push(phis);
            pending.push(transitions);
            if (t + 1) % period == 0 {
                for ep in pending.drain(..) {
                    model.update_episode(&ep).map_err(with_episode)?;
                }
            }

            let ball_ok = match (&self.true_weights, w_star_norm) {
                (Some(w), Some(norm)) => {
                    let spec = model
                        .ball_spec(BallForm::Explicit, self.config.model.c1, norm, model.n_episodes())
                        .map_err(with_episode)?;
                    Some(model.ball_contains(&spec, w).map_err(with_episode)?)
                }
                _ => None,
            };
            cum_regret += traj.realized_total - oracle.mean;
            records.push(EpisodeRecord {
                episode: t,
                realized_cost: traj.realized_total,
                oracle_cost: oracle.mean,
                cum_regret,
                info_gain: model.information_gain(),
                ball_ok,
                coverage: maze.then_some(visited.len()),
                first_success,
            });
        }
        Ok(RegretReport {
            records,
            oracle,
            first_success,
            trace,
            final_model: model,
        })
    }
}

fn mean_and_std_err(values: &[f64], rollouts: usize) -> OracleEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_err = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    OracleEstimate { mean, std_err, rollouts }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RegretReport> {
    Experiment::new(cfg)?.run(&mut OracleCache::new())
}

/// Distinct maze state-action pairs across the given trajectories.
pub fn coverage_tracker(env: &dyn Environment, trajectories: &[Trajectory]) -> Result<usize> {
    if env.as_maze().is_none() {
        return Err(KnrError::Unsupported("coverage is defined for the maze only".into()));
    }
    let mut seen = HashSet::new();
    for traj in trajectories {
        for (x, u) in traj.states.iter().zip(&traj.controls) {
            seen.insert(onehot_maze_index(x, u[0])?);
        }
    }
    Ok(seen.len())
}
