//! Online KNR estimator.
//!
//! Keeps the ridge-regression statistics of `x' = W φ(x, u) + ε`:
//!
//! ```text
//!   Σᵗ = λI + Σ φ φᵀ          (feature covariance)
//!   Xᵗ = Σ x' φᵀ              (cross moment)
//!   W̄ᵗ = Xᵗ (Σᵗ)⁻¹            (ridge center)
//! ```
//!
//! plus the confidence-ball radius, ball membership, posterior sampling and
//! the realized information gain `log det Σᵗ − log det Σ⁰`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, KnrError, Result};
use crate::numerics::{
    back_substitute_transposed, cholesky, cholesky_solve, inverse_quadratic_form,
    log_det_from_cholesky, spectral_norm, standard_normal, Matrix, SPECTRAL_DEFAULT_TOL,
};

const CHECKPOINT_MAGIC: &str = "knr-model-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// One observed transition in feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub phi: Vec<f64>,
    pub x_next: Vec<f64>,
}

impl Transition {
    pub fn new(phi: Vec<f64>, x_next: Vec<f64>) -> Self {
        Self { phi, x_next }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallForm {
    /// `C₁ (λσ² + σ² (d_X + log t + log det ratio))`.
    Envelope,
    /// `2λ‖W*‖² + 8σ² (d_X log 5 + 2 log t + log 4 + log det ratio)`.
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallSpec {
    pub c1: f64,
    /// Squared radius; `+∞` before any data has been seen.
    pub beta: f64,
    pub form: BallForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnrModel {
    d_x: usize,
    d_phi: usize,
    lambda: f64,
    sigma: f64,
    wbar: Matrix,
    cov: Matrix,
    xphi: Matrix,
    n_transitions: usize,
    n_episodes: usize,
    logdet0: f64,
    // Derived from `cov`; refreshed on every update.
    chol: Matrix,
    logdet: f64,
}

impl KnrModel {
    pub fn new(d_x: usize, d_phi: usize, lambda: f64, sigma: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if d_x == 0 || d_phi == 0 {
            return Err(invalid("dimensions", "d_x and d_phi must be at least 1"));
        }
        let logdet0 = d_phi as f64 * lambda.ln();
        Ok(Self {
            d_x,
            d_phi,
            lambda,
            sigma,
            wbar: Matrix::zeros(d_x, d_phi),
            cov: Matrix::scaled_identity(d_phi, lambda),
            xphi: Matrix::zeros(d_x, d_phi),
            n_transitions: 0,
            n_episodes: 0,
            logdet0,
            chol: Matrix::scaled_identity(d_phi, lambda.sqrt()),
            logdet: logdet0,
        })
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_phi(&self) -> usize {
        self.d_phi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn wbar(&self) -> &Matrix {
        &self.wbar
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn xphi(&self) -> &Matrix {
        &self.xphi
    }

    /// Lower Cholesky factor of `Σᵗ`, used as `(Σᵗ)^{1/2}`.
    pub fn cov_cholesky(&self) -> &Matrix {
        &self.chol
    }

    pub fn n_transitions(&self) -> usize {
        self.n_transitions
    }

    pub fn n_episodes(&self) -> usize {
        self.n_episodes
    }

    pub fn log_det_cov(&self) -> f64 {
        self.logdet
    }

    pub fn log_det_prior(&self) -> f64 {
        self.logdet0
    }

    /// Ingests one episode of transitions and re-solves the ridge center.
    pub fn update_episode(&mut self, transitions: &[Transition]) -> Result<()> {
        for t in transitions {
            check_len("transition feature", self.d_phi, t.phi.len())?;
            check_len("transition next state", self.d_x, t.x_next.len())?;
        }
        if !transitions.is_empty() {
            let mut cov = self.cov.clone();
            let mut xphi = self.xphi.clone();
            for t in transitions {
                cov.add_outer(1.0, &t.phi, &t.phi);
                xphi.add_outer(1.0, &t.x_next, &t.phi);
            }
            let chol = cholesky(&cov)?;
            let mut wbar = Matrix::zeros(self.d_x, self.d_phi);
            for r in 0..self.d_x {
                let row = cholesky_solve(&chol, xphi.row(r));
                wbar.row_mut(r).copy_from_slice(&row);
            }
            self.logdet = log_det_from_cholesky(&chol);
            self.cov = cov;
            self.xphi = xphi;
            self.chol = chol;
            self.wbar = wbar;
            self.n_transitions += transitions.len();
        }
        self.n_episodes += 1;
        Ok(())
    }

    /// `W̄ᵗ φ`.
    pub fn mean_next(&self, phi: &[f64]) -> Result<Vec<f64>> {
        self.wbar.matvec(phi)
    }

    /// `‖φ‖²_{(Σᵗ)⁻¹}`.
    pub fn potential(&self, phi: &[f64]) -> Result<f64> {
        check_len("potential feature", self.d_phi, phi.len())?;
        Ok(inverse_quadratic_form(&self.chol, phi))
    }

    /// `log det Σᵗ − log det Σ⁰`.
    pub fn information_gain(&self) -> f64 {
        (self.logdet - self.logdet0).max(0.0)
    }

    pub fn beta_explicit(&self, w_star_norm_bound: f64, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(invalid("t", "the radius is defined for t >= 1; t = 0 uses the initial ball"));
        }
        let s2 = self.sigma * self.sigma;
        let t = t as f64;
        Ok(2.0 * self.lambda * w_star_norm_bound * w_star_norm_bound
            + 8.0
                * s2
                * (self.d_x as f64 * 5f64.ln()
                    + 2.0 * t.ln()
                    + 4f64.ln()
                    + self.information_gain()))
    }

    /// Envelope radius with `log(t · det ratio)` split as `log t + log det ratio`.
    pub fn beta_envelope(&self, c1: f64, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(invalid("t", "the radius is defined for t >= 1; t = 0 uses the initial ball"));
        }
        let s2 = self.sigma * self.sigma;
        Ok(c1 * (self.lambda * s2 + s2 * (self.d_x as f64 + (t as f64).ln() + self.information_gain())))
    }

    /// Ball at episode `t`; `t = 0` is the all-containing initial ball.
    pub fn ball_spec(&self, form: BallForm, c1: f64, w_star_norm_bound: f64, t: usize) -> Result<BallSpec> {
        let beta = if t == 0 {
            f64::INFINITY
        } else {
            match form {
                BallForm::Explicit => self.beta_explicit(w_star_norm_bound, t)?,
                BallForm::Envelope => self.beta_envelope(c1, t)?,
            }
        };
        Ok(BallSpec { c1, beta, form })
    }

    /// `‖(W − W̄ᵗ)(Σᵗ)^{1/2}‖₂²` with the lower Cholesky factor as square root.
    pub fn ball_distance_sq(&self, w: &Matrix) -> Result<f64> {
        check_len("ball rows", self.d_x, w.rows())?;
        check_len("ball cols", self.d_phi, w.cols())?;
        let diff = w.sub(&self.wbar)?;
        let scaled = diff.matmul(&self.chol)?;
        let s = spectral_norm(&scaled, SPECTRAL_DEFAULT_TOL);
        Ok(s * s)
    }

    pub fn ball_contains(&self, spec: &BallSpec, w: &Matrix) -> Result<bool> {
        if spec.beta.is_infinite() {
            check_len("ball rows", self.d_x, w.rows())?;
            check_len("ball cols", self.d_phi, w.cols())?;
            return Ok(true);
        }
        Ok(self.ball_distance_sq(w)? <= spec.beta)
    }

    /// Draws `W ~ N(W̄ᵗ, reshape · (Σᵗ)⁻¹)` row by row: each row is
    /// `w̄_r + √reshape · L⁻ᵀ g` with `g ~ N(0, I)` and `Σᵗ = L Lᵀ`.
    pub fn thompson_sample<R: Rng + ?Sized>(&self, reshape_scale: f64, rng: &mut R) -> Result<Matrix> {
        if !(reshape_scale >= 0.0) || !reshape_scale.is_finite() {
            return Err(invalid("reshape_scale", format!("must be >= 0, got {reshape_scale}")));
        }
        if reshape_scale == 0.0 {
            return Ok(self.wbar.clone());
        }
        let amp = reshape_scale.sqrt();
        let mut w = self.wbar.clone();
        for r in 0..self.d_x {
            let g: Vec<f64> = (0..self.d_phi).map(|_| standard_normal(rng)).collect();
            let z = back_substitute_transposed(&self.chol, &g);
            for (dst, zi) in w.row_mut(r).iter_mut().zip(z) {
                *dst += amp * zi;
            }
        }
        Ok(w)
    }

    // ── Checkpoints ─────────────────────────────────────────────────────

    /// Textual dump; floats are written in shortest round-trip form so
    /// [`KnrModel::from_checkpoint`] restores the model bit for bit.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        let _ = writeln!(s, "d_x {}", self.d_x);
        let _ = writeln!(s, "d_phi {}", self.d_phi);
        let _ = writeln!(s, "lambda {:e}", self.lambda);
        let _ = writeln!(s, "sigma {:e}", self.sigma);
        let _ = writeln!(s, "n_transitions {}", self.n_transitions);
        let _ = writeln!(s, "n_episodes {}", self.n_episodes);
        for (name, m) in [("wbar", &self.wbar), ("cov", &self.cov), ("xphi", &self.xphi)] {
            let _ = write!(s, "{name}");
            for v in m.as_slice() {
                let _ = write!(s, " {v:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| KnrError::Checkpoint("empty input".into()))?;
        let expected = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        if header.trim() != expected {
            return Err(KnrError::Checkpoint(format!("bad header `{header}`, expected `{expected}`")));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| KnrError::Checkpoint(format!("missing `{name}`")))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(n) if n == name => Ok(parts.map(str::to_owned).collect()),
                other => Err(KnrError::Checkpoint(format!("expected `{name}`, found {other:?}"))),
            }
        };
        fn scalar<T: FromStr>(name: &str, v: Vec<String>) -> Result<T> {
            match v.as_slice() {
                [one] => one
                    .parse()
                    .map_err(|_| KnrError::Checkpoint(format!("cannot parse `{name}` value `{one}`"))),
                _ => Err(KnrError::Checkpoint(format!("`{name}` expects one value"))),
            }
        }
        fn values(name: &str, v: Vec<String>, rows: usize, cols: usize) -> Result<Matrix> {
            let data = v
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| KnrError::Checkpoint(format!("`{name}`: {e}")))?;
            if data.len() != rows * cols {
                return Err(KnrError::Checkpoint(format!(
                    "`{name}` has {} values, expected {}",
                    data.len(),
                    rows * cols
                )));
            }
            Matrix::from_vec(rows, cols, data)
        }
        let d_x: usize = scalar("d_x", field("d_x")?)?;
        let d_phi: usize = scalar("d_phi", field("d_phi")?)?;
        let lambda: f64 = scalar("lambda", field("lambda")?)?;
        let sigma: f64 = scalar("sigma", field("sigma")?)?;
        let n_transitions: usize = scalar("n_transitions", field("n_transitions")?)?;
        let n_episodes: usize = scalar("n_episodes", field("n_episodes")?)?;
        let wbar = values("wbar", field("wbar")?, d_x, d_phi)?;
        let cov = values("cov", field("cov")?, d_phi, d_phi)?;
        let xphi = values("xphi", field("xphi")?, d_x, d_phi)?;
        let mut m = KnrModel::new(d_x, d_phi, lambda, sigma)?;
        let chol = cholesky(&cov)?;
        m.logdet = log_det_from_cholesky(&chol);
        m.chol = chol;
        m.wbar = wbar;
        m.cov = cov;
        m.xphi = xphi;
        m.n_transitions = n_transitions;
        m.n_episodes = n_episodes;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gauss_vector, log_det_spd, spd_inverse, RngStream};
    use proptest::prelude::*;

    fn random_transitions(seed: u64, n: usize, d_x: usize, d_phi: usize) -> Vec<Transition> {
        let mut g = RngStream::new(seed, 17).generator();
        (0..n)
            .map(|_| Transition::new(gauss_vector(&mut g, d_phi, 1.0), gauss_vector(&mut g, d_x, 1.0)))
            .collect()
    }

    /// Gaussian elimination with partial pivoting; solves `A X = B` column-wise.
    fn gauss_solve(a: &Matrix, b: &Matrix) -> Matrix {
        let n = a.rows();
        let m = b.cols();
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|r| a.row(r).iter().chain(b.row(r)).copied().collect())
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
            aug.swap(col, piv);
            let pivot_row = aug[col].clone();
            for (r, row) in aug.iter_mut().enumerate() {
                if r != col {
                    let f = row[col] / pivot_row[col];
                    for (v, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                        *v -= f * p;
                    }
                }
            }
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..m).map(|c| aug[r][n + c] / aug[r][r]).collect())
            .collect();
        Matrix::from_rows(&rows)
    }

    /// One-shot ridge solve: `W = (Σ x' φᵀ)(λI + Σ φ φᵀ)⁻¹`.
    fn batch_ridge(data: &[Transition], d_x: usize, d_phi: usize, lambda: f64) -> Matrix {
        let mut gram = Matrix::scaled_identity(d_phi, lambda);
        let mut cross = Matrix::zeros(d_phi, d_x);
        for t in data {
            for i in 0..d_phi {
                for j in 0..d_phi {
                    gram[(i, j)] += t.phi[i] * t.phi[j];
                }
                for k in 0..d_x {
                    cross[(i, k)] += t.phi[i] * t.x_next[k];
                }
            }
        }
        gauss_solve(&gram, &cross).transpose()
    }

    #[test]
    fn new_model_examples() {
        let m = KnrModel::new(1, 3, 2.0, 1.0).unwrap();
        assert!((log_det_spd(m.cov()).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-14);
        assert_eq!(m.mean_next(&[1.0, -4.0, 9.0]).unwrap(), vec![0.0]);
        assert_eq!(m.information_gain(), 0.0);
        assert_eq!(m.n_episodes(), 0);
        assert!(KnrModel::new(1, 3, 0.0, 1.0).is_err());
        assert!(KnrModel::new(1, 3, 1.0, -1.0).is_err());
    }

    #[test]
    fn single_transition_update() {
        let mut m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        m.update_episode(&[Transition::new(vec![1.0, 0.0], vec![2.0])]).unwrap();
        assert_eq!(m.cov(), &Matrix::from_diag(&[2.0, 1.0]));
        let expect = Matrix::from_rows(&[vec![1.0, 0.0]]);
        assert!(m.wbar().sub(&expect).unwrap().frobenius_norm() < 1e-14);
        assert!((m.information_gain() - 2f64.ln()).abs() < 1e-14);
        assert_eq!(m.n_transitions(), 1);
    }

    #[test]
    fn empty_update_only_counts_episode() {
        let mut m = KnrModel::new(2, 3, 0.5, 1.0).unwrap();
        m.update_episode(&random_transitions(1, 4, 2, 3)).unwrap();
        let before = m.clone();
        m.update_episode(&[]).unwrap();
        assert_eq!(m.n_episodes(), before.n_episodes() + 1);
        assert_eq!(m.wbar(), before.wbar());
        assert_eq!(m.cov(), before.cov());
    }

    #[test]
    fn update_rejects_bad_dimensions_atomically() {
        let mut m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        let bad = vec![
            Transition::new(vec![1.0, 0.0], vec![1.0]),
            Transition::new(vec![1.0], vec![1.0]),
        ];
        assert!(m.update_episode(&bad).is_err());
        assert_eq!(m.n_episodes(), 0);
        assert_eq!(m.n_transitions(), 0);
    }

    #[test]
    fn mean_next_arithmetic_and_linearity() {
        let mut m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        m.wbar = Matrix::from_rows(&[vec![1.0, 2.0]]);
        assert_eq!(m.mean_next(&[3.0, 4.0]).unwrap(), vec![11.0]);
        let (a, b) = (0.7, -1.9);
        let p1 = [0.2, 1.5];
        let p2 = [-3.0, 0.4];
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
        let lhs = m.mean_next(&mix).unwrap()[0];
        let rhs = a * m.mean_next(&p1).unwrap()[0] + b * m.mean_next(&p2).unwrap()[0];
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(m.mean_next(&[1.0]).is_err());
    }

    #[test]
    fn noiseless_data_bias_shrinks() {
        let w_star = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.3]]);
        let lambda = 0.1;
        let mut m = KnrModel::new(2, 3, lambda, 1.0).unwrap();
        let mut g = RngStream::new(3, 3).generator();
        let mut all = Vec::new();
        let mut last_err = f64::INFINITY;
        for _ in 0..6 {
            let ep: Vec<Transition> = (0..5)
                .map(|_| {
                    let phi = gauss_vector(&mut g, 3, 1.0);
                    let x = w_star.matvec(&phi).unwrap();
                    Transition::new(phi, x)
                })
                .collect();
            all.extend(ep.iter().cloned());
            m.update_episode(&ep).unwrap();
            let err = m.wbar().sub(&w_star).unwrap().frobenius_norm();
            let inv_norm = spectral_norm(&spd_inverse(m.cov()).unwrap(), 1e-12);
            assert!(err <= lambda * w_star.frobenius_norm() * inv_norm + 1e-12);
            assert!(err < last_err);
            last_err = err;
            let oracle = batch_ridge(&all, 2, 3, lambda);
            assert!(m.wbar().sub(&oracle).unwrap().frobenius_norm() <= 1e-8 * oracle.frobenius_norm());
        }
    }

    #[test]
    fn beta_explicit_closed_form() {
        let m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        let b = m.beta_explicit(1.0, 1).unwrap();
        let expect = 2.0 + 8.0 * (5f64.ln() + 4f64.ln());
        assert!((b - expect).abs() < 1e-12);
        assert!((b - 25.965_9).abs() < 1e-4);
        assert!(m.beta_explicit(1.0, 0).is_err());
    }

    #[test]
    fn beta_monotone_in_t_and_data() {
        let mut m = KnrModel::new(2, 3, 0.5, 0.3).unwrap();
        let mut prev = 0.0;
        let mut prev_envelope = 0.0;
        for t in 1..20 {
            m.update_episode(&random_transitions(t as u64, 3, 2, 3)).unwrap();
            let b = m.beta_explicit(1.3, t).unwrap();
            let bm = m.beta_envelope(16.0, t).unwrap();
            assert!(b >= prev && bm >= prev_envelope);
            prev = b;
            prev_envelope = bm;
        }
    }

    /// The `C₁ = 16` envelope `16σ²(d_X + log t + L) + 2λB²` dominates the
    /// explicit radius once `8 d_X log 5 + 8 log 4 ≤ 16 d_X + 8 L`, which
    /// holds for every `d_X ≥ 4`.
    #[test]
    fn c1_sixteen_envelope_for_wide_states() {
        let mut g = RngStream::new(99, 0).generator();
        for case in 0..200u64 {
            let d_x = 4 + (case % 5) as usize;
            let d_phi = 1 + (case % 4) as usize;
            let lambda = 0.01 + rand::Rng::random::<f64>(&mut g) * 3.0;
            let sigma = 0.05 + rand::Rng::random::<f64>(&mut g) * 2.0;
            let bound = rand::Rng::random::<f64>(&mut g) * 4.0;
            let mut m = KnrModel::new(d_x, d_phi, lambda, sigma).unwrap();
            let n_ep = (case % 7) as usize;
            for e in 0..n_ep {
                m.update_episode(&random_transitions(case * 31 + e as u64, 3, d_x, d_phi)).unwrap();
            }
            for t in [4usize, 10, 100, 10_000] {
                let b = m.beta_explicit(bound, t).unwrap();
                let s2 = sigma * sigma;
                let env = 16.0 * s2 * (d_x as f64 + (t as f64).ln() + m.information_gain())
                    + 2.0 * lambda * bound * bound;
                assert!(b <= env + 1e-12, "case {case}: {b} > {env}");
            }
        }
    }

    #[test]
    fn c1_sixteen_envelope_fails_for_scalar_state_without_data() {
        let m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        let b = m.beta_explicit(1.0, 4).unwrap();
        let env = 16.0 * (1.0 + 4f64.ln()) + 2.0;
        assert!(b > env);
    }

    #[test]
    fn ball_membership_basics() {
        let mut m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        m.update_episode(&random_transitions(5, 6, 1, 2)).unwrap();
        let spec = m.ball_spec(BallForm::Explicit, 16.0, 1.0, 1).unwrap();
        assert!(m.ball_contains(&spec, &m.wbar().clone()).unwrap());
        let tiny = BallSpec { c1: 1.0, beta: f64::MIN_POSITIVE, form: BallForm::Explicit };
        let off = m.wbar().add(&Matrix::from_rows(&[vec![1e-3, 0.0]])).unwrap();
        assert!(!m.ball_contains(&tiny, &off).unwrap());
        let initial = m.ball_spec(BallForm::Explicit, 16.0, 1.0, 0).unwrap();
        assert!(initial.beta.is_infinite());
        let far = Matrix::from_rows(&[vec![1e6, -1e6]]);
        assert!(m.ball_contains(&initial, &far).unwrap());
    }

    #[test]
    fn ball_distance_matches_closed_form_2x2() {
        // For a single row, ‖d L‖₂² = d Σ dᵀ.
        let mut m = KnrModel::new(1, 2, 0.7, 1.0).unwrap();
        m.update_episode(&random_transitions(8, 5, 1, 2)).unwrap();
        let w = Matrix::from_rows(&[vec![0.3, -2.0]]);
        let d = w.sub(m.wbar()).unwrap();
        let quad: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| d[(0, i)] * m.cov()[(i, j)] * d[(0, j)])
            .sum();
        assert!((m.ball_distance_sq(&w).unwrap() - quad).abs() < 1e-9 * quad);
    }

    #[test]
    fn ball_distance_2x2_matches_eigen_oracle() {
        // Two rows: ‖D L‖₂² = λ_max(D Σ Dᵀ), a 2x2 symmetric eigenproblem.
        let mut m = KnrModel::new(2, 2, 0.4, 1.0).unwrap();
        m.update_episode(&random_transitions(12, 7, 2, 2)).unwrap();
        let w = Matrix::from_rows(&[vec![0.3, -2.0], vec![1.1, 0.4]]);
        let d = w.sub(m.wbar()).unwrap();
        let s = d.matmul(m.cov()).unwrap().matmul(&d.transpose()).unwrap();
        let (a, b, c) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
        let top = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        assert!((m.ball_distance_sq(&w).unwrap() - top).abs() < 1e-8 * top);
    }

    #[test]
    fn thompson_zero_scale_is_center() {
        let mut m = KnrModel::new(2, 3, 1.0, 1.0).unwrap();
        m.update_episode(&random_transitions(2, 5, 2, 3)).unwrap();
        let mut g = RngStream::new(1, 1).generator();
        assert_eq!(&m.thompson_sample(0.0, &mut g).unwrap(), m.wbar());
        assert!(m.thompson_sample(-1.0, &mut g).is_err());
    }

    #[test]
    fn thompson_deterministic() {
        let m = KnrModel::new(2, 3, 0.3, 1.0).unwrap();
        let a = m.thompson_sample(1.0, &mut RngStream::new(4, 4).generator()).unwrap();
        let b = m.thompson_sample(1.0, &mut RngStream::new(4, 4).generator()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thompson_row_covariance_identity() {
        let m = KnrModel::new(1, 3, 1.0, 1.0).unwrap();
        let mut g = RngStream::new(10, 0).generator();
        let n = 100_000;
        let mut second = Matrix::zeros(3, 3);
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let w = m.thompson_sample(1.0, &mut g).unwrap();
            second.add_outer(1.0 / n as f64, w.row(0), w.row(0));
            for (acc, v) in mean.iter_mut().zip(w.row(0)) {
                *acc += v / n as f64;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let cov = second[(i, j)] - mean[i] * mean[j];
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov - target).abs() < 0.02, "({i},{j}) = {cov}");
            }
        }
    }

    #[test]
    fn thompson_covariance_follows_inverse_gram() {
        let mut m = KnrModel::new(1, 2, 1.0, 1.0).unwrap();
        m.update_episode(&[
            Transition::new(vec![2.0, 1.0], vec![0.0]),
            Transition::new(vec![0.0, 1.0], vec![0.0]),
        ])
        .unwrap();
        let target = spd_inverse(m.cov()).unwrap().scale(0.5);
        let mut g = RngStream::new(21, 0).generator();
        let n = 100_000;
        let mut second = Matrix::zeros(2, 2);
        for _ in 0..n {
            let w = m.thompson_sample(0.5, &mut g).unwrap();
            second.add_outer(1.0 / n as f64, w.row(0), w.row(0));
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((second[(i, j)] - target[(i, j)]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let mut m = KnrModel::new(2, 4, 0.013, 0.7).unwrap();
        for e in 0..3 {
            m.update_episode(&random_transitions(40 + e, 7, 2, 4)).unwrap();
        }
        let text = m.to_checkpoint();
        let back = KnrModel::from_checkpoint(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_checkpoint(), text);
    }

    #[test]
    fn checkpoint_rejects_wrong_version() {
        let m = KnrModel::new(1, 1, 1.0, 1.0).unwrap();
        let text = m.to_checkpoint().replace("v1", "v9");
        assert!(matches!(KnrModel::from_checkpoint(&text), Err(KnrError::Checkpoint(_))));
        let truncated: String = m.to_checkpoint().lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(KnrModel::from_checkpoint(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn incremental_equals_batch(seed in 0u64..10_000, episodes in 1usize..6, per in 0usize..6) {
            let (d_x, d_phi, lambda) = (2, 4, 0.25);
            let mut m = KnrModel::new(d_x, d_phi, lambda, 1.0).unwrap();
            let mut all = Vec::new();
            for e in 0..episodes {
                let ep = random_transitions(seed * 13 + e as u64, per, d_x, d_phi);
                all.extend(ep.iter().cloned());
                m.update_episode(&ep).unwrap();
                // Information gain never decreases and Σᵗ ⪰ λI.
                let shifted = m.cov().sub(&Matrix::scaled_identity(d_phi, lambda - 1e-12)).unwrap();
                prop_assert!(cholesky(&shifted).is_ok());
                prop_assert!(m.log_det_cov() >= m.log_det_prior() - 1e-12);
            }
            let oracle = batch_ridge(&all, d_x, d_phi, lambda);
            let err = m.wbar().sub(&oracle).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-8 * oracle.frobenius_norm().max(1e-300) || err < 1e-14);
            let refit = m.wbar().matmul(m.cov()).unwrap();
            prop_assert!(refit.sub(m.xphi()).unwrap().frobenius_norm() <= 1e-8 * (1.0 + m.xphi().frobenius_norm()));
        }

        #[test]
        fn information_gain_non_decreasing(seed in 0u64..10_000) {
            let mut m = KnrModel::new(1, 3, 0.1, 1.0).unwrap();
            let mut prev = 0.0;
            for e in 0..5 {
                m.update_episode(&random_transitions(seed + e, 2, 1, 3)).unwrap();
                prop_assert!(m.information_gain() >= prev);
                prev = m.information_gain();
            }
        }
    }
}
