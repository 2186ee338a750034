//! Numerical checks of the supporting inequalities.
//!
//! Closed-form identities are compared against quadrature; inequalities are
//! checked by Monte-Carlo with a 3-standard-error allowance, so a shortfall
//! within sampling noise is not counted as a violation.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, PRESET_NAMES};
use crate::driver::{run_experiment, RunTrace};
use crate::envs::{Environment, LqrEnv};
use crate::error::{invalid, KnrError, Result};
use crate::model::{BallForm, KnrModel, Transition};
use crate::numerics::{
    cholesky, forward_substitute, gauss_vector, log_det_from_cholesky, norm2, spectral_norm, standard_normal, Gen,
    Matrix, RngStream, SPECTRAL_DEFAULT_TOL,
};

/// Slack multiplier for Monte-Carlo comparisons.
pub const SE_SLACK: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaCheckResult {
    pub lemma: String,
    pub trials: usize,
    pub violations: usize,
    /// Violations tolerated before the check fails.
    pub allowed_violations: usize,
    /// Smallest `RHS − LHS` observed; negative means the raw estimate
    /// exceeded the bound at least once.
    pub max_slack: f64,
    /// Numeric tolerance of the comparison (absolute error or SE multiplier).
    pub tolerance: f64,
}

impl LemmaCheckResult {
    pub fn passed(&self) -> bool {
        self.violations <= self.allowed_violations
    }
}

impl fmt::Display for LemmaCheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<26} trials={:<6} violations={:<5} allowed={:<5} min(rhs-lhs)={:<13.6e} tol={:<8.1e} {}",
            self.lemma,
            self.trials,
            self.violations,
            self.allowed_violations,
            self.max_slack,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn summarize(lemma: &str, slacks: &[(f64, bool)], allowed: usize, tolerance: f64) -> LemmaCheckResult {
    LemmaCheckResult {
        lemma: lemma.into(),
        trials: slacks.len(),
        violations: slacks.iter().filter(|(_, v)| *v).count(),
        allowed_violations: allowed,
        max_slack: slacks.iter().map(|(s, _)| *s).fold(f64::INFINITY, f64::min),
        tolerance,
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}

// ── Chi-squared distance ────────────────────────────────────────────────

/// `χ²(N(μ₁, σ²I) ‖ N(μ₂, σ²I)) = exp(‖μ₁ − μ₂‖² / σ²) − 1`.
pub fn chi2_gaussian(mu1: &[f64], mu2: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    if mu1.len() != mu2.len() {
        return Err(KnrError::DimensionMismatch {
            context: "chi2 means",
            expected: mu1.len(),
            actual: mu2.len(),
        });
    }
    let d2: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((d2 / (sigma * sigma)).exp_m1())
}

/// Trapezoid rule for `∫ (N₁ − N₂)² / N₁` in one dimension.
pub fn chi2_quadrature_1d(mu1: f64, mu2: f64, sigma: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let h = (hi - lo) / n as f64;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let integrand = |z: f64| {
        let p1 = norm * (-(z - mu1).powi(2) / (2.0 * sigma * sigma)).exp();
        let p2 = norm * (-(z - mu2).powi(2) / (2.0 * sigma * sigma)).exp();
        // (p1 − p2)²/p1 = p1 − 2 p2 + p2²/p1, with the ratio in log space.
        let ratio = (((z - mu1).powi(2) - 2.0 * (z - mu2).powi(2)) / (2.0 * sigma * sigma)).exp() * norm;
        p1 - 2.0 * p2 + ratio
    };
    let inner: f64 = (1..n).map(|i| integrand(lo + i as f64 * h)).sum();
    h * (0.5 * (integrand(lo) + integrand(hi)) + inner)
}

/// Closed form against quadrature on `[−12, 12]` with step `1e-3`, over a
/// grid of separations `|Δ|/σ ≤ 3`. Agreement is required within `1e-5`
/// relative to `max(1, χ²)`.
pub fn check_chi2() -> Result<LemmaCheckResult> {
    let tol = 1e-5;
    let mut slacks = Vec::new();
    for sigma in [0.5, 1.0, 2.0] {
        for k in 0..=6 {
            let delta = 0.5 * k as f64 * sigma;
            let mu1 = -0.25 * delta;
            let mu2 = mu1 + delta;
            let closed = chi2_gaussian(&[mu1], &[mu2], sigma)?;
            // Widen the window with σ so the tails stay negligible.
            let half = 12.0 * sigma.max(1.0);
            let quad = chi2_quadrature_1d(mu1, mu2, sigma, -half, half, 1e-3);
            let err = (closed - quad).abs() / closed.max(1.0);
            slacks.push((tol - err, err > tol));
        }
    }
    Ok(summarize("chi2", &slacks, 0, tol))
}

// ── Expectation difference ──────────────────────────────────────────────

/// Non-negative test functions used by the mean-difference sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    /// `a + b ‖z − c‖²`.
    Quadratic { a: f64, b: f64, c: Vec<f64> },
    /// `(w·z + b)²`.
    SquaredLinear { w: Vec<f64>, b: f64 },
    /// `‖z‖⁴`.
    Quartic,
}

impl TestFunction {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            TestFunction::Constant(a) => *a,
            TestFunction::Quadratic { a, b, c } => a + b * z.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>(),
            TestFunction::SquaredLinear { w, b } => (z.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b).powi(2),
            TestFunction::Quartic => z.iter().map(|x| x * x).sum::<f64>().powi(2),
        }
    }
}

/// Monte-Carlo check of `E₁[g] − E₂[g] ≤ min{‖μ₁−μ₂‖/σ, 1} √E₁[g²]`.
pub fn check_mean_difference(
    mu1: &[f64],
    mu2: &[f64],
    sigma: f64,
    g: &TestFunction,
    n_mc: usize,
    rng: &mut Gen,
) -> Result<LemmaCheckResult> {
    let (slack, violated) = mean_difference_slack(mu1, mu2, sigma, g, n_mc, rng)?;
    Ok(summarize("mean-difference", &[(slack, violated)], 0, SE_SLACK))
}

fn mean_difference_slack(
    mu1: &[f64],
    mu2: &[f64],
    sigma: f64,
    g: &TestFunction,
    n_mc: usize,
    rng: &mut Gen,
) -> Result<(f64, bool)> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", "must be positive"));
    }
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two samples"));
    }
    let draw = |mu: &[f64], rng: &mut Gen| -> Vec<f64> {
        let e = gauss_vector(rng, mu.len(), sigma);
        mu.iter().zip(e).map(|(m, v)| m + v).collect()
    };
    let mut g1 = Vec::with_capacity(n_mc);
    let mut g2 = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        g1.push(g.eval(&draw(mu1, rng)));
        g2.push(g.eval(&draw(mu2, rng)));
    }
    if g1.iter().chain(&g2).any(|v| *v < 0.0) {
        return Err(KnrError::Domain("test function must be non-negative".into()));
    }
    let n = n_mc as f64;
    let (m1, v1) = mean_var(&g1);
    let (m2, v2) = mean_var(&g2);
    let sq: Vec<f64> = g1.iter().map(|v| v * v).collect();
    let (e_sq, v_sq) = mean_var(&sq);
    let dist = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let factor = (dist / sigma).min(1.0);
    let lhs = m1 - m2;
    let root = e_sq.sqrt();
    let rhs = factor * root;
    let se_lhs = ((v1 + v2) / n).sqrt();
    let se_rhs = if root > 0.0 { factor * (v_sq / n).sqrt() / (2.0 * root) } else { 0.0 };
    let allowance = SE_SLACK * (se_lhs * se_lhs + se_rhs * se_rhs).sqrt();
    Ok((rhs - lhs, lhs > rhs + allowance))
}

fn random_test_function(rng: &mut Gen, d: usize) -> TestFunction {
    use rand::Rng;
    match rng.random_range(0..4) {
        0 => TestFunction::Constant(rng.random_range(0.1..5.0)),
        1 => TestFunction::Quadratic {
            a: rng.random_range(0.0..2.0),
            b: rng.random_range(0.1..2.0),
            c: gauss_vector(rng, d, 1.0),
        },
        2 => TestFunction::SquaredLinear {
            w: gauss_vector(rng, d, 1.0),
            b: rng.random_range(-1.0..1.0),
        },
        _ => TestFunction::Quartic,
    }
}

/// Sweep over random means, widths and test functions.
pub fn check_mean_difference_sweep(cases: usize, n_mc: usize, stream: RngStream) -> Result<LemmaCheckResult> {
    use rand::Rng;
    let slacks = (0..cases)
        .into_par_iter()
        .map(|i| {
            let mut g = stream.substream(i as u64).generator();
            let d = g.random_range(1..=3);
            let sigma = g.random_range(0.3..2.0);
            let mu1 = gauss_vector(&mut g, d, 1.0);
            let scale = g.random_range(0.0..2.0);
            let mu2: Vec<f64> = mu1.iter().map(|m| m + scale * sigma * standard_normal(&mut g)).collect();
            let f = random_test_function(&mut g, d);
            mean_difference_slack(&mu1, &mu2, sigma, &f, n_mc, &mut g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize("mean-difference", &slacks, 0, SE_SLACK))
}

// ── Finite-dimensional information gain ─────────────────────────────────

/// `d log(1 + n B² / (d λ))`.
pub fn info_gain_bound(d: usize, n_vectors: usize, b: f64, lambda: f64) -> f64 {
    if n_vectors == 0 {
        return 0.0;
    }
    let d = d as f64;
    d * (1.0 + n_vectors as f64 * b * b / (d * lambda)).ln()
}

/// `log det(I + Σ xxᵀ / λ)`.
pub fn realized_log_det_ratio(vectors: &[Vec<f64>], d: usize, lambda: f64) -> Result<f64> {
    let mut m = Matrix::identity(d);
    for x in vectors {
        m.add_outer(1.0 / lambda, x, x);
    }
    Ok(log_det_from_cholesky(&cholesky(&m)?))
}

/// Random sequences with `‖x‖ ≤ B` never exceed the bound.
pub fn check_info_gain(trials: usize, stream: RngStream) -> Result<LemmaCheckResult> {
    use rand::Rng;
    let slacks = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut g = stream.substream(i as u64).generator();
            let d = g.random_range(1..=6);
            let n = g.random_range(0..=60);
            let b = g.random_range(0.1..3.0);
            let lambda = g.random_range(0.05..5.0);
            let vectors: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let v = gauss_vector(&mut g, d, 1.0);
                    let r = b * g.random::<f64>().powf(1.0 / d as f64) / norm2(&v).max(1e-300);
                    v.iter().map(|x| x * r).collect()
                })
                .collect();
            let lhs = realized_log_det_ratio(&vectors, d, lambda)?;
            let rhs = info_gain_bound(d, n, b, lambda);
            Ok((rhs - lhs, lhs > rhs + 1e-9))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize("info-gain", &slacks, 0, 1e-9))
}

// ── Potential sum ───────────────────────────────────────────────────────

/// `Σ_t min{Σ_h ‖φ‖²_{(Σᵗ)⁻¹}, 1}` and `2 log(det Σᵀ / det Σ⁰)`, with
/// `Σᵗ` rebuilt from the trace.
pub fn potential_sum_terms(trace: &RunTrace) -> Result<(f64, f64)> {
    let d = trace.d_phi;
    let mut cov = Matrix::scaled_identity(d, trace.lambda);
    let logdet0 = d as f64 * trace.lambda.ln();
    let mut lhs = 0.0;
    for episode in &trace.episodes {
        let l = cholesky(&cov)?;
        let potential: f64 = episode
            .iter()
            .map(|phi| {
                let y = forward_substitute(&l, phi);
                y.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        lhs += potential.min(1.0);
        for phi in episode {
            cov.add_outer(1.0, phi, phi);
        }
    }
    let logdet = log_det_from_cholesky(&cholesky(&cov)?);
    Ok((lhs, 2.0 * (logdet - logdet0)))
}

pub fn check_potential_sum(trace: &RunTrace) -> Result<LemmaCheckResult> {
    let (lhs, rhs) = potential_sum_terms(trace)?;
    Ok(summarize("potential-sum", &[(rhs - lhs, lhs > rhs + 1e-8)], 0, 1e-8))
}

/// `(log det Σᵀ / det Σ⁰)²` for a trace.
pub fn gamma2_statistic(trace: &RunTrace) -> Result<f64> {
    let d = trace.d_phi;
    let mut cov = Matrix::scaled_identity(d, trace.lambda);
    for phi in trace.episodes.iter().flatten() {
        cov.add_outer(1.0, phi, phi);
    }
    let gain = log_det_from_cholesky(&cholesky(&cov)?) - d as f64 * trace.lambda.ln();
    Ok(gain * gain)
}

// ── Self-normalized bound ───────────────────────────────────────────────

/// One trial: `ε_i ~ N(0, σ² I_{d_x})` and adapted `X_i ∈ ℝ^d` built from
/// the running sum of past noise. Returns the smallest `RHS − LHS` over
/// `t = 1..n_steps` (the bound must hold for all `t` at once).
fn self_normalized_trial(d: usize, d_x: usize, n_steps: usize, sigma: f64, delta: f64, g: &mut Gen) -> Result<f64> {
    let mut v = Matrix::identity(d);
    let mut s = Matrix::zeros(d_x, d);
    let mut running = 0.0;
    let mut worst = f64::INFINITY;
    for i in 1..=n_steps {
        let phase = if sigma > 0.0 { running / (sigma * (i as f64).sqrt()) } else { 0.0 };
        let x: Vec<f64> = (0..d).map(|j| (j as f64 + phase).cos()).collect();
        let eps = gauss_vector(g, d_x, sigma);
        running += eps[0];
        s.add_outer(1.0, &eps, &x);
        v.add_outer(1.0, &x, &x);
        let l = cholesky(&v)?;
        // ‖S V⁻¹ᐟ²‖² = ‖S L⁻ᵀ‖², rows of S L⁻ᵀ solve L y = s_r.
        let mut y = Matrix::zeros(d_x, d);
        for r in 0..d_x {
            y.row_mut(r).copy_from_slice(&forward_substitute(&l, s.row(r)));
        }
        let lhs = spectral_norm(&y, SPECTRAL_DEFAULT_TOL).powi(2);
        let half_log_ratio = 0.5 * log_det_from_cholesky(&l);
        let rhs = 8.0 * sigma * sigma * d_x as f64 * 5f64.ln() + 8.0 * sigma * sigma * (half_log_ratio - delta.ln());
        worst = worst.min(rhs - lhs);
    }
    Ok(worst)
}

/// Violation rate across trials must stay within `δ + 3·√(δ(1−δ)/trials)`.
pub fn check_self_normalized(
    d: usize,
    d_x: usize,
    n_steps: usize,
    sigma: f64,
    delta: f64,
    trials: usize,
    stream: RngStream,
) -> Result<LemmaCheckResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    let slacks = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut g = stream.substream(i as u64).generator();
            let worst = self_normalized_trial(d, d_x, n_steps, sigma, delta, &mut g)?;
            Ok((worst, worst < 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let rate = delta + SE_SLACK * (delta * (1.0 - delta) / trials as f64).sqrt();
    let allowed = (rate * trials as f64).floor() as usize;
    Ok(summarize("self-normalized", &slacks, allowed, SE_SLACK))
}

// ── Simulation lemma ────────────────────────────────────────────────────

/// Monte-Carlo sides of the self-bounding simulation lemma for the linear
/// policy `u = gain · x` on a scalar-input LQR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationTerms {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

/// `J(W*) − J(W) ≤ √(H·V(W*)) · √(E_{W*}[Σ_h min{‖(W*−W)φ_h‖²/σ², 1}])`.
pub fn simulation_lemma_terms(env: &LqrEnv, w: &Matrix, gain: &Matrix, n_mc: usize, stream: RngStream) -> Result<SimulationTerms> {
    if n_mc < 2 {
        return Err(invalid("n_mc", "need at least two rollouts"));
    }
    let w_star = env.weights();
    let alt = LqrEnv {
        a: Matrix::from_vec(env.a.rows(), env.a.cols(), (0..env.a.rows()).flat_map(|r| w.row(r)[..env.a.cols()].to_vec()).collect())?,
        b: Matrix::from_vec(env.b.rows(), env.b.cols(), (0..env.b.rows()).flat_map(|r| w.row(r)[env.a.cols()..].to_vec()).collect())?,
        ..env.clone()
    };
    let sigma2 = env.sigma * env.sigma;
    let diff = w_star.sub(w)?;
    let h = env.horizon as f64;

    let run = |model: &LqrEnv, s: RngStream, track: bool| -> Result<(f64, f64)> {
        let mut g = s.generator();
        let mut x = model.x0.clone();
        let (mut total, mut disagreement) = (0.0, 0.0);
        for _ in 0..model.horizon {
            let u = gain.matvec(&x)?;
            if track {
                let mut phi = x.clone();
                phi.extend_from_slice(&u);
                let d = diff.matvec(&phi)?;
                disagreement += (d.iter().map(|v| v * v).sum::<f64>() / sigma2).min(1.0);
            }
            let (next, c) = model.step(&x, &u, &mut g)?;
            total += c;
            x = next;
        }
        Ok((total, disagreement))
    };

    let star: Vec<(f64, f64)> = (0..n_mc)
        .into_par_iter()
        .map(|i| run(env, stream.path(&[0, i as u64]), true))
        .collect::<Result<_>>()?;
    let other: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| Ok(run(&alt, stream.path(&[1, i as u64]), false)?.0))
        .collect::<Result<_>>()?;

    let n = n_mc as f64;
    let costs: Vec<f64> = star.iter().map(|s| s.0).collect();
    let (j_star, var_star) = mean_var(&costs);
    let (j_alt, var_alt) = mean_var(&other);
    let squares: Vec<f64> = costs.iter().map(|c| c * c).collect();
    let (second, var_second) = mean_var(&squares);
    let dis: Vec<f64> = star.iter().map(|s| s.1).collect();
    let (e_dis, var_dis) = mean_var(&dis);

    let lhs = j_star - j_alt;
    let lhs_se = ((var_star + var_alt) / n).sqrt();
    let rhs = (h * second * e_dis).sqrt();
    // Delta method on √(H·V·E), adding relative errors conservatively.
    let rel = |m: f64, v: f64| if m > 0.0 { (v / n).sqrt() / m } else { 0.0 };
    let rhs_se = 0.5 * rhs * (rel(second, var_second) + rel(e_dis, var_dis));
    Ok(SimulationTerms { lhs, lhs_se, rhs, rhs_se })
}

/// Random perturbations `W = W* + N(0, scale²)` of a scalar LQR under the
/// fixed policy `u = −0.5 x`.
pub fn check_simulation_lemma(perturbations: usize, n_mc: usize, stream: RngStream) -> Result<LemmaCheckResult> {
    let env = LqrEnv::scalar(0.9, 1.0, 1.0, 1.0, 0.1, 10, 1.0);
    let gain = Matrix::from_diag(&[-0.5]);
    let w_star = env.weights();
    let mut slacks = Vec::with_capacity(perturbations);
    for i in 0..perturbations {
        let mut g = stream.path(&[0xC0, i as u64]).generator();
        let scale = [0.01, 0.05, 0.2][i % 3];
        let noise = gauss_vector(&mut g, 2, scale);
        let w = Matrix::from_rows(&[vec![w_star[(0, 0)] + noise[0], w_star[(0, 1)] + noise[1]]]);
        let t = simulation_lemma_terms(&env, &w, &gain, n_mc, stream.path(&[0x51, i as u64]))?;
        let allowance = SE_SLACK * (t.lhs_se * t.lhs_se + t.rhs_se * t.rhs_se).sqrt();
        slacks.push((t.rhs - t.lhs, t.lhs > t.rhs + allowance));
    }
    Ok(summarize("simulation-lemma", &slacks, 0, SE_SLACK))
}

// ── Confidence ball ─────────────────────────────────────────────────────

/// Synthetic coverage runs: `d_x = 1`, `d_φ = 2`, random `W*`, random unit
/// features, `λ = σ²/‖W*‖²`. A run fails if `W*` leaves the explicit-form
/// ball after any update. The failing fraction may not exceed
/// `½ + 3·√(¼/runs)`.
pub fn check_confidence_ball(runs: usize, episodes: usize, horizon: usize, sigma: f64, stream: RngStream) -> Result<LemmaCheckResult> {
    let slacks = (0..runs)
        .into_par_iter()
        .map(|i| confidence_ball_run(episodes, horizon, sigma, stream.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let frac = 0.5 + SE_SLACK * (0.25 / runs as f64).sqrt();
    let allowed = (frac * runs as f64).floor() as usize;
    Ok(summarize("confidence-ball", &slacks, allowed, SE_SLACK))
}

/// Smallest `β − ‖(W* − W̄)Σ^{1/2}‖²` over one run and whether it went negative.
pub fn confidence_ball_run(episodes: usize, horizon: usize, sigma: f64, stream: RngStream) -> Result<(f64, bool)> {
    let mut g = stream.generator();
    let w_star = Matrix::from_vec(1, 2, gauss_vector(&mut g, 2, 1.0))?;
    let bound = spectral_norm(&w_star, SPECTRAL_DEFAULT_TOL);
    let mut model = KnrModel::new(1, 2, sigma * sigma / (bound * bound), sigma)?;
    let mut worst = f64::INFINITY;
    for _ in 0..episodes {
        let transitions: Vec<Transition> = (0..horizon)
            .map(|_| {
                let v = gauss_vector(&mut g, 2, 1.0);
                let n = norm2(&v).max(1e-300);
                let phi: Vec<f64> = v.iter().map(|x| x / n).collect();
                let mut x = w_star.matvec(&phi).expect("dims");
                x[0] += sigma * standard_normal(&mut g);
                Transition::new(phi, x)
            })
            .collect();
        model.update_episode(&transitions)?;
        let spec = model.ball_spec(BallForm::Explicit, 16.0, bound, model.n_episodes())?;
        worst = worst.min(spec.beta - model.ball_distance_sq(&w_star)?);
    }
    Ok((worst, worst < 0.0))
}

// ── Suite ───────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LemmaId {
    Chi2,
    MeanDifference,
    SelfNormalized,
    PotentialSum,
    SimulationLemma,
    InfoGain,
    ConfidenceBall,
}

impl LemmaId {
    pub const ALL: [LemmaId; 7] = [
        LemmaId::Chi2,
        LemmaId::MeanDifference,
        LemmaId::SelfNormalized,
        LemmaId::PotentialSum,
        LemmaId::SimulationLemma,
        LemmaId::InfoGain,
        LemmaId::ConfidenceBall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::Chi2 => "chi2",
            LemmaId::MeanDifference => "mean-difference",
            LemmaId::SelfNormalized => "self-normalized",
            LemmaId::PotentialSum => "potential-sum",
            LemmaId::SimulationLemma => "simulation-lemma",
            LemmaId::InfoGain => "info-gain",
            LemmaId::ConfidenceBall => "confidence-ball",
        }
    }

    pub fn parse(name: &str) -> Option<LemmaId> {
        Self::ALL.into_iter().find(|id| id.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
#[derive(Default)]
pub struct VerifyOptions {
    /// Overrides the number of trials, cases or runs of each randomized check.
    pub trials: Option<usize>,
    pub seed: u64,
}


/// Runs the selected checks (all when `ids` is empty) with pinned seeds.
pub fn verify(ids: &[LemmaId], opts: &VerifyOptions) -> Result<Vec<LemmaCheckResult>> {
    let ids: Vec<LemmaId> = if ids.is_empty() { LemmaId::ALL.to_vec() } else { ids.to_vec() };
    let n = |default: usize| opts.trials.unwrap_or(default).max(1);
    let base = RngStream::new(opts.seed, 0x7E51);
    let mut results = Vec::new();
    for id in ids {
        let stream = base.substream(id as u64);
        match id {
            LemmaId::Chi2 => results.push(check_chi2()?),
            LemmaId::MeanDifference => results.push(check_mean_difference_sweep(n(100), 100_000, stream)?),
            LemmaId::SelfNormalized => results.push(check_self_normalized(3, 2, 50, 1.0, 0.1, n(2000), stream)?),
            LemmaId::PotentialSum => {
                for name in PRESET_NAMES {
                    // The oracle never feeds into the trace, so one rollout suffices.
                    let mut cfg = ExperimentConfig::preset(name)?;
                    cfg.driver.oracle_rollouts = 1;
                    let report = run_experiment(&cfg)?;
                    let mut r = check_potential_sum(&report.trace)?;
                    r.lemma = format!("potential-sum/{name}");
                    results.push(r);
                }
            }
            LemmaId::SimulationLemma => results.push(check_simulation_lemma(n(50), 20_000, stream)?),
            LemmaId::InfoGain => results.push(check_info_gain(n(500), stream)?),
            LemmaId::ConfidenceBall => results.push(check_confidence_ball(n(200), 50, 5, 1.0, stream)?),
        }
    }
    Ok(results)
}

/// Helper for environments that expose their true weights.
pub fn true_weight_norm(env: &dyn Environment, features: &crate::features::FeatureMap) -> Option<f64> {
    env.true_weights(features).map(|w| spectral_norm(&w, SPECTRAL_DEFAULT_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMap;
    use proptest::prelude::*;

    fn rng(seed: u64) -> Gen {
        RngStream::new(seed, 3).generator()
    }

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_gaussian(&[0.3, -1.0], &[0.3, -1.0], 0.7).unwrap(), 0.0);
        let v = chi2_gaussian(&[0.0], &[1.0], 1.0).unwrap();
        let quad = chi2_quadrature_1d(0.0, 1.0, 1.0, -12.0, 12.0, 1e-3);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((v - quad).abs() < 1e-5, "{v} vs {quad}");
        let shifted = chi2_gaussian(&[5.0], &[6.0], 1.0).unwrap();
        assert!((v - shifted).abs() < 1e-15);
        assert!(chi2_gaussian(&[0.0], &[1.0], 0.0).is_err());
        assert!(check_chi2().unwrap().passed());
    }

    #[test]
    fn mean_difference_degenerate_cases() {
        let mut g = rng(1);
        let r = check_mean_difference(&[0.0], &[2.0], 1.0, &TestFunction::Constant(1.0), 10_000, &mut g).unwrap();
        assert!(r.passed());
        let r = check_mean_difference(&[0.5, 0.5], &[0.5, 0.5], 1.0, &TestFunction::Quartic, 10_000, &mut g).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn mean_difference_sweep_small() {
        assert!(check_mean_difference_sweep(20, 20_000, RngStream::new(2, 0)).unwrap().passed());
    }

    #[test]
    fn info_gain_bound_examples() {
        assert_eq!(info_gain_bound(3, 0, 1.0, 1.0), 0.0);
        assert!((info_gain_bound(2, 4, 1.0, 1.0) - 2.0 * 3f64.ln()).abs() < 1e-15);
        assert!(check_info_gain(100, RngStream::new(3, 0)).unwrap().passed());
    }

    #[test]
    fn potential_sum_examples() {
        let empty = RunTrace::new(1.0, 2);
        let (lhs, rhs) = potential_sum_terms(&empty).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
        assert_eq!(gamma2_statistic(&empty).unwrap(), 0.0);

        let mut one = RunTrace::new(1.0, 2);
        one.episodes.push(vec![vec![1.0, 0.0]]);
        let (lhs, rhs) = potential_sum_terms(&one).unwrap();
        assert!((lhs - 1.0).abs() < 1e-15);
        assert!((rhs - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(check_potential_sum(&one).unwrap().passed());
    }

    #[test]
    fn gamma2_matches_model_information_gain() {
        let mut m = KnrModel::new(1, 3, 0.5, 1.0).unwrap();
        let mut trace = RunTrace::new(0.5, 3);
        let mut g = rng(4);
        for _ in 0..5 {
            let ep: Vec<Vec<f64>> = (0..4).map(|_| gauss_vector(&mut g, 3, 1.0)).collect();
            m.update_episode(&ep.iter().map(|p| Transition::new(p.clone(), vec![0.0])).collect::<Vec<_>>())
                .unwrap();
            trace.episodes.push(ep);
        }
        let gain = m.information_gain();
        assert!((gamma2_statistic(&trace).unwrap() - gain * gain).abs() < 1e-9);
        let bound = info_gain_bound(3, 20, 10.0, 0.5);
        assert!(gamma2_statistic(&trace).unwrap() <= bound * bound);
    }

    #[test]
    fn self_normalized_zero_noise_and_rate() {
        let zero = check_self_normalized(2, 1, 20, 0.0, 0.1, 10, RngStream::new(5, 0)).unwrap();
        assert_eq!(zero.violations, 0);
        let r = check_self_normalized(1, 1, 30, 1.0, 0.1, 300, RngStream::new(5, 1)).unwrap();
        assert!(r.passed(), "{r}");
        assert!(check_self_normalized(1, 1, 3, 1.0, 1.5, 3, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn simulation_lemma_identical_models() {
        let env = LqrEnv::scalar(0.9, 1.0, 1.0, 1.0, 0.1, 10, 1.0);
        let t = simulation_lemma_terms(&env, &env.weights(), &Matrix::from_diag(&[-0.5]), 2000, RngStream::new(6, 0))
            .unwrap();
        assert_eq!(t.rhs, 0.0);
        assert!(t.lhs.abs() <= 3.0 * t.lhs_se + 1e-12);
    }

    #[test]
    fn simulation_lemma_zero_cost() {
        let mut env = LqrEnv::scalar(0.9, 1.0, 0.0, 0.0, 0.1, 10, 1.0);
        env.q = Matrix::from_diag(&[0.0]);
        env.r = Matrix::from_diag(&[0.0]);
        let w = Matrix::from_rows(&[vec![0.5, 1.2]]);
        let t = simulation_lemma_terms(&env, &w, &Matrix::from_diag(&[-0.5]), 500, RngStream::new(7, 0)).unwrap();
        assert_eq!((t.lhs, t.rhs), (0.0, 0.0));
    }

    #[test]
    fn simulation_lemma_small_sweep() {
        assert!(check_simulation_lemma(6, 5000, RngStream::new(8, 0)).unwrap().passed());
    }

    #[test]
    fn confidence_ball_small() {
        let r = check_confidence_ball(20, 20, 5, 1.0, RngStream::new(9, 0)).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn lemma_names_round_trip() {
        for id in LemmaId::ALL {
            assert_eq!(LemmaId::parse(id.name()), Some(id));
        }
        assert_eq!(LemmaId::parse("nope"), None);
    }

    #[test]
    fn true_weight_norm_for_lqr() {
        let env = LqrEnv::scalar(0.6, 0.8, 1.0, 1.0, 0.1, 5, 1.0);
        let n = true_weight_norm(&env, &FeatureMap::lqr_concat(1, 1)).unwrap();
        assert!((n - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn potential_sum_holds_on_random_traces(
            lambda in 0.01f64..5.0,
            d in 1usize..5,
            episodes in 0usize..12,
            h in 1usize..6,
            scale in 0.1f64..10.0,
            seed in any::<u64>(),
        ) {
            let mut g = RngStream::new(seed, 0).generator();
            let mut trace = RunTrace::new(lambda, d);
            for _ in 0..episodes {
                trace.episodes.push((0..h).map(|_| gauss_vector(&mut g, d, scale)).collect());
            }
            prop_assert!(check_potential_sum(&trace).unwrap().passed());
        }

        #[test]
        fn info_gain_bound_monotone(d in 1usize..8, n in 0usize..100, b in 0.1f64..5.0, lambda in 0.1f64..5.0) {
            prop_assert!(info_gain_bound(d, n + 1, b, lambda) >= info_gain_bound(d, n, b, lambda));
        }
    }
}
