//! Control selection over a dynamics oracle.
//!
//! [`mppi_plan`] is the sampling planner used during learning.
//! [`exhaustive_plan`] and [`dp_plan`] solve small deterministic problems
//! exactly and serve as oracles. [`optimistic_plan`] picks the best model
//! among candidates inside the confidence ball.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{check_len, invalid, KnrError, Result};
use crate::features::{FeatureKind, FeatureMap};
use crate::model::{BallSpec, KnrModel};
use crate::numerics::{standard_normal, Matrix, RngStream};

/// Stage cost `c(x, u, h)`.
pub type CostFn<'a> = dyn Fn(&[f64], &[f64], usize) -> f64 + Sync + 'a;

/// A control sequence, one control vector per step.
pub type Plan = Vec<Vec<f64>>;

/// Deterministic next-state oracle used by planning rollouts.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;

    fn predict_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()>;

    fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.predict_into(x, u, &mut out)?;
        Ok(out)
    }
}

/// Feature vectors up to this length are evaluated on the stack.
const SMALL_FEATURES: usize = 16;

/// `x' = W φ(x, u)`, optionally projected back into the state domain.
pub struct ModelDynamics<'a> {
    w: &'a Matrix,
    features: &'a FeatureMap,
    env: Option<&'a dyn Environment>,
}

impl<'a> ModelDynamics<'a> {
    pub fn new(w: &'a Matrix, features: &'a FeatureMap) -> Result<Self> {
        check_len("model weights columns", features.d_phi(), w.cols())?;
        Ok(Self {
            w,
            features,
            env: None,
        })
    }

    /// Projects predictions with [`Environment::project_state`].
    pub fn projected(mut self, env: &'a dyn Environment) -> Self {
        self.env = Some(env);
        self
    }
}

impl Dynamics for ModelDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.w.rows()
    }

    fn predict_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("predicted state", self.w.rows(), out.len())?;
        if self.features.kind() == FeatureKind::OnehotMaze {
            // Column lookup; the feature vector is a unit basis vector.
            let idx = self.features.onehot_index(x, u)?;
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.w[(r, idx)];
            }
        } else if self.features.d_phi() <= SMALL_FEATURES {
            let mut buf = [0.0; SMALL_FEATURES];
            let phi = &mut buf[..self.features.d_phi()];
            self.features.eval_into(x, u, phi)?;
            self.w.matvec_into(phi, out);
        } else {
            let phi = self.features.eval(x, u)?;
            self.w.matvec_into(&phi, out);
        }
        if let Some(env) = self.env {
            env.project_state(out);
        }
        Ok(())
    }
}

/// The environment's own noise-free dynamics.
pub struct TrueDynamics<'a>(pub &'a dyn Environment);

impl Dynamics for TrueDynamics<'_> {
    fn state_dim(&self) -> usize {
        self.0.d_x()
    }

    fn predict_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let next = self.0.mean_step(x, u)?;
        check_len("predicted state", out.len(), next.len())?;
        out.copy_from_slice(&next);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiConfig {
    #[serde(rename = "variance of controls")]
    pub control_variance: f64,
    #[serde(rename = "temperature parameter")]
    pub temperature: f64,
    #[serde(rename = "planning horizon")]
    pub horizon: usize,
    #[serde(rename = "number of planning samples")]
    pub n_samples: usize,
    /// Per-dimension clamp bounds; empty means "use the environment's".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u_min: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub u_max: Vec<f64>,
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(invalid("temperature parameter", "must be positive"));
        }
        if !(self.control_variance >= 0.0) {
            return Err(invalid("variance of controls", "must be non-negative"));
        }
        if self.horizon == 0 {
            return Err(invalid("planning horizon", "must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(invalid("number of planning samples", "must be at least 1"));
        }
        if self.u_min.len() != self.u_max.len() {
            return Err(invalid("u_min/u_max", "bounds must have equal length"));
        }
        Ok(())
    }

    /// Fills missing clamp bounds from the environment.
    pub fn with_env_bounds(mut self, env: &dyn Environment) -> Self {
        if self.u_min.is_empty() && self.u_max.is_empty() {
            let (lo, hi) = env.control_bounds();
            self.u_min = lo;
            self.u_max = hi;
        }
        self
    }

    fn clamp(&self, u: &mut [f64]) {
        if self.u_min.is_empty() {
            return;
        }
        for ((v, lo), hi) in u.iter_mut().zip(&self.u_min).zip(&self.u_max) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Total cost of executing `plan` from `x0` under `dynamics`.
pub fn rollout_cost(dynamics: &dyn Dynamics, cost: &CostFn<'_>, x0: &[f64], plan: &[Vec<f64>]) -> Result<f64> {
    let mut x = x0.to_vec();
    let mut next = vec![0.0; dynamics.state_dim()];
    let mut total = 0.0;
    for (h, u) in plan.iter().enumerate() {
        total += cost(&x, u, h);
        dynamics.predict_into(&x, u, &mut next)?;
        std::mem::swap(&mut x, &mut next);
    }
    Ok(total)
}

/// Softmax weights `exp(−(S_k − min S)/temperature)`, normalized.
pub fn mppi_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(invalid("temperature parameter", "must be positive"));
    }
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(KnrError::Domain("rollout costs are not finite".into()));
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|s| if s.is_finite() { (-(s - min) / temperature).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// `Σ_k w_k · plan_k`, accumulated in sample order.
pub fn weighted_average(plans: &[Plan], weights: &[f64]) -> Plan {
    let mut out: Plan = plans[0].iter().map(|u| vec![0.0; u.len()]).collect();
    for (plan, &w) in plans.iter().zip(weights) {
        for (acc, u) in out.iter_mut().zip(plan) {
            for (a, v) in acc.iter_mut().zip(u) {
                *a += w * v;
            }
        }
    }
    out
}

/// MPPI combination step over given candidate sequences. Rollouts run in
/// parallel; the reduction is serial so the result does not depend on the
/// thread count.
pub fn mppi_combine(
    dynamics: &dyn Dynamics,
    cost: &CostFn<'_>,
    x0: &[f64],
    candidates: &[Plan],
    temperature: f64,
) -> Result<Plan> {
    if candidates.is_empty() {
        return Err(invalid("number of planning samples", "must be at least 1"));
    }
    let costs = candidates
        .par_iter()
        .map(|plan| rollout_cost(dynamics, cost, x0, plan))
        .collect::<Result<Vec<f64>>>()?;
    let weights = mppi_weights(&costs, temperature)?;
    Ok(weighted_average(candidates, &weights))
}

/// Perturbed copy of `nominal` for sample `k`, drawn from its own substream.
fn perturb(nominal: &[Vec<f64>], cfg: &MppiConfig, rng: RngStream, k: usize) -> Plan {
    let mut g = rng.substream(k as u64).generator();
    let std = cfg.control_variance.sqrt();
    nominal
        .iter()
        .map(|u| {
            let mut v: Vec<f64> = u.iter().map(|a| a + std * standard_normal(&mut g)).collect();
            cfg.clamp(&mut v);
            v
        })
        .collect()
}

/// One MPPI optimization around `nominal`. The plan length is
/// `nominal.len()`, which callers may shorten below `cfg.horizon` near the
/// end of an episode.
pub fn mppi_plan(
    dynamics: &dyn Dynamics,
    cost: &CostFn<'_>,
    x0: &[f64],
    nominal: &[Vec<f64>],
    cfg: &MppiConfig,
    rng: RngStream,
) -> Result<Plan> {
    cfg.validate()?;
    if nominal.is_empty() || nominal.len() > cfg.horizon {
        return Err(KnrError::DimensionMismatch {
            context: "MPPI nominal length",
            expected: cfg.horizon,
            actual: nominal.len(),
        });
    }
    if cfg.control_variance == 0.0 {
        // Every candidate equals the clamped nominal.
        return Ok(perturb(nominal, cfg, rng, 0));
    }
    let candidates: Vec<Plan> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|k| perturb(nominal, cfg, rng, k))
        .collect();
    let mut plan = mppi_combine(dynamics, cost, x0, &candidates, cfg.temperature)?;
    // A convex combination of in-bounds controls can still round past a bound.
    plan.iter_mut().for_each(|u| cfg.clamp(u));
    Ok(plan)
}

/// Plans from `x` around `warm`, returning the first control and the warm
/// start for the next step (plan shifted left, last control repeated).
pub fn receding_horizon_step(
    dynamics: &dyn Dynamics,
    cost: &CostFn<'_>,
    x: &[f64],
    warm: &[Vec<f64>],
    cfg: &MppiConfig,
    rng: RngStream,
) -> Result<(Vec<f64>, Plan)> {
    let plan = mppi_plan(dynamics, cost, x, warm, cfg, rng)?;
    let u = plan[0].clone();
    let mut next: Plan = plan[1..].to_vec();
    next.push(plan.last().expect("nonempty plan").clone());
    Ok((u, next))
}

pub const EXHAUSTIVE_MAX_HORIZON: usize = 8;
pub const EXHAUSTIVE_BUDGET: f64 = 1e6;

/// Enumerates every action sequence; ties go to the lexicographically
/// smallest sequence of action indices.
pub fn exhaustive_plan(
    dynamics: &dyn Dynamics,
    cost: &CostFn<'_>,
    x0: &[f64],
    actions: &[Vec<f64>],
    horizon: usize,
) -> Result<(Plan, f64)> {
    if actions.is_empty() {
        return Err(invalid("action_set", "must be nonempty"));
    }
    if horizon > EXHAUSTIVE_MAX_HORIZON {
        return Err(invalid("horizon", format!("exhaustive search supports at most {EXHAUSTIVE_MAX_HORIZON} steps")));
    }
    let sequences = (actions.len() as f64).powi(horizon as i32);
    if sequences > EXHAUSTIVE_BUDGET {
        return Err(KnrError::BudgetExceeded {
            sequences,
            budget: EXHAUSTIVE_BUDGET,
        });
    }
    let mut idx = vec![0usize; horizon];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let plan: Plan = idx.iter().map(|&i| actions[i].clone()).collect();
        let c = rollout_cost(dynamics, cost, x0, &plan)?;
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((idx.clone(), c));
        }
        // Odometer increment, last position fastest.
        let mut pos = horizon;
        loop {
            if pos == 0 {
                let (seq, c) = best.expect("at least one sequence");
                return Ok((seq.iter().map(|&i| actions[i].clone()).collect(), c));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < actions.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub const DP_STATE_BUDGET: usize = 1_000_000;

fn state_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Exact finite-horizon dynamic programming for deterministic dynamics with
/// a finite action set, over the states reachable from `x0`. Suited to
/// problems such as the maze whose reachable set stays small while the
/// number of action sequences explodes. Ties go to the smallest action index
/// at each step.
pub fn dp_plan(
    dynamics: &dyn Dynamics,
    cost: &CostFn<'_>,
    x0: &[f64],
    actions: &[Vec<f64>],
    horizon: usize,
) -> Result<(Plan, f64)> {
    if actions.is_empty() {
        return Err(invalid("action_set", "must be nonempty"));
    }
    // Forward pass: distinct states per layer and their successors.
    let mut layers: Vec<Vec<Vec<f64>>> = vec![vec![x0.to_vec()]];
    let mut succ: Vec<Vec<Vec<usize>>> = Vec::with_capacity(horizon);
    let mut total_states = 1usize;
    for _ in 0..horizon {
        let current = layers.last().expect("nonempty");
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut next_layer = Vec::new();
        let mut layer_succ = Vec::with_capacity(current.len());
        for x in current {
            let mut row = Vec::with_capacity(actions.len());
            for u in actions {
                let nx = dynamics.predict(x, u)?;
                let id = *index.entry(state_key(&nx)).or_insert_with(|| {
                    next_layer.push(nx);
                    next_layer.len() - 1
                });
                row.push(id);
            }
            layer_succ.push(row);
        }
        total_states += next_layer.len();
        if total_states > DP_STATE_BUDGET {
            return Err(KnrError::BudgetExceeded {
                sequences: total_states as f64,
                budget: DP_STATE_BUDGET as f64,
            });
        }
        succ.push(layer_succ);
        layers.push(next_layer);
    }
    // Backward pass.
    let mut value = vec![0.0; layers[horizon].len()];
    let mut choice: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    for h in (0..horizon).rev() {
        let mut v = Vec::with_capacity(layers[h].len());
        let mut c = Vec::with_capacity(layers[h].len());
        for (s, x) in layers[h].iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (a, u) in actions.iter().enumerate() {
                let q = cost(x, u, h) + value[succ[h][s][a]];
                if q < best.1 {
                    best = (a, q);
                }
            }
            v.push(best.1);
            c.push(best.0);
        }
        value = v;
        choice[h] = c;
    }
    let mut plan = Vec::with_capacity(horizon);
    let mut s = 0usize;
    for h in 0..horizon {
        let a = choice[h][s];
        plan.push(actions[a].clone());
        s = succ[h][s][a];
    }
    Ok((plan, value.first().copied().unwrap_or(0.0)))
}

/// Optimistic selection over candidate models: candidates outside the ball
/// are discarded, each survivor is planned with `plan_fn`, and the pair with
/// the lowest planned cost wins (first one on ties). With no survivors the
/// ridge center is used.
pub fn optimistic_plan<F>(
    candidates: &[Matrix],
    spec: &BallSpec,
    model: &KnrModel,
    mut plan_fn: F,
) -> Result<(Matrix, Plan, f64)>
where
    F: FnMut(&Matrix) -> Result<(Plan, f64)>,
{
    if candidates.is_empty() {
        return Err(invalid("candidates", "must be nonempty"));
    }
    let mut best: Option<(Matrix, Plan, f64)> = None;
    for w in candidates {
        if !model.ball_contains(spec, w)? {
            continue;
        }
        let (plan, c) = plan_fn(w)?;
        if best.as_ref().is_none_or(|(_, _, b)| c < *b) {
            best = Some((w.clone(), plan, c));
        }
    }
    match best {
        Some(b) => Ok(b),
        None => {
            let w = model.wbar().clone();
            let (plan, c) = plan_fn(&w)?;
            Ok((w, plan, c))
        }
    }
}
