//! Feature maps `φ(x, u)`.
//!
//! Three kinds: random Fourier features for a Gaussian kernel, the maze
//! one-hot encoding over (grid cell, action bin), and plain `[x; u]`
//! concatenation for linear-quadratic problems.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, KnrError, Result};
use crate::numerics::{gauss_vector, Matrix, RngStream};

/// Grid points per maze axis.
pub const MAZE_GRID: usize = 5;
/// Distinct maze action bins.
pub const MAZE_ACTIONS: usize = 4;
/// Dimension of the maze one-hot feature.
pub const MAZE_FEATURES: usize = MAZE_GRID * MAZE_GRID * MAZE_ACTIONS;
/// Spacing of the maze grid.
pub const MAZE_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Rff,
    OnehotMaze,
    LqrConcat,
}

/// Serializable description of a feature map, as it appears in experiment
/// configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    #[serde(rename = "number of features", default)]
    pub d_phi: Option<usize>,
    #[serde(rename = "RFF bandwidth", default)]
    pub bandwidth: Option<f64>,
    /// Seed for the RFF draw; falls back to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    d_in: usize,
    d_phi: usize,
    frequencies: Option<Matrix>,
    phases: Vec<f64>,
    bandwidth: f64,
}

impl FeatureMap {
    /// Random Fourier features: rows of the frequency matrix are
    /// `N(0, I / bandwidth²)`, phases are uniform on `[0, 2π]`.
    pub fn rff(d_in: usize, d_phi: usize, bandwidth: f64, rng: RngStream) -> Result<Self> {
        if d_phi == 0 {
            return Err(invalid("d_phi", "must be at least 1"));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(invalid("bandwidth", format!("must be positive, got {bandwidth}")));
        }
        let mut g = rng.generator();
        let freq = gauss_vector(&mut g, d_phi * d_in, 1.0 / bandwidth);
        let phases = (0..d_phi).map(|_| g.random::<f64>() * 2.0 * PI).collect();
        Ok(Self {
            kind: FeatureKind::Rff,
            d_in,
            d_phi,
            frequencies: Some(Matrix::from_vec(d_phi, d_in, freq)?),
            phases,
            bandwidth,
        })
    }

    pub fn onehot_maze() -> Self {
        Self {
            kind: FeatureKind::OnehotMaze,
            d_in: 3,
            d_phi: MAZE_FEATURES,
            frequencies: None,
            phases: Vec::new(),
            bandwidth: 1.0,
        }
    }

    pub fn lqr_concat(d_x: usize, d_u: usize) -> Self {
        Self {
            kind: FeatureKind::LqrConcat,
            d_in: d_x + d_u,
            d_phi: d_x + d_u,
            frequencies: None,
            phases: Vec::new(),
            bandwidth: 1.0,
        }
    }

    pub fn from_spec(spec: &FeatureSpec, d_x: usize, d_u: usize, fallback_seed: u64) -> Result<Self> {
        match spec.kind {
            FeatureKind::Rff => {
                let d_phi = spec
                    .d_phi
                    .ok_or_else(|| invalid("number of features", "required for rff"))?;
                let bw = spec
                    .bandwidth
                    .ok_or_else(|| invalid("RFF bandwidth", "required for rff"))?;
                let seed = spec.seed.unwrap_or(fallback_seed);
                Self::rff(d_x + d_u, d_phi, bw, RngStream::new(seed, 0xFEA7))
            }
            FeatureKind::OnehotMaze => {
                if (d_x, d_u) != (2, 1) {
                    return Err(invalid("kind", "onehot-maze needs a 2-d state and 1-d control"));
                }
                if let Some(d) = spec.d_phi {
                    if d != MAZE_FEATURES {
                        return Err(invalid(
                            "number of features",
                            format!("onehot-maze has exactly {MAZE_FEATURES} features, got {d}"),
                        ));
                    }
                }
                Ok(Self::onehot_maze())
            }
            FeatureKind::LqrConcat => {
                if let Some(d) = spec.d_phi {
                    check_len("lqr-concat number of features", d_x + d_u, d)?;
                }
                Ok(Self::lqr_concat(d_x, d_u))
            }
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_phi(&self) -> usize {
        self.d_phi
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_phi];
        self.eval_into(x, u, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("feature output", self.d_phi, out.len())?;
        match self.kind {
            FeatureKind::Rff => {
                check_len("rff input", self.d_in, x.len() + u.len())?;
                let freq = self.frequencies.as_ref().expect("rff frequencies");
                let amp = (2.0 / self.d_phi as f64).sqrt();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = freq.row(i);
                    let arg: f64 = row[..x.len()].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                        + row[x.len()..].iter().zip(u).map(|(w, v)| w * v).sum::<f64>()
                        + self.phases[i];
                    *o = amp * arg.cos();
                }
            }
            FeatureKind::OnehotMaze => {
                let idx = self.onehot_index(x, u)?;
                out.iter_mut().for_each(|v| *v = 0.0);
                out[idx] = 1.0;
            }
            FeatureKind::LqrConcat => {
                check_len("lqr-concat input", self.d_in, x.len() + u.len())?;
                out[..x.len()].copy_from_slice(x);
                out[x.len()..].copy_from_slice(u);
            }
        }
        Ok(())
    }

    /// Index of the hot coordinate for one-hot maps.
    pub fn onehot_index(&self, x: &[f64], u: &[f64]) -> Result<usize> {
        if self.kind != FeatureKind::OnehotMaze {
            return Err(KnrError::Unsupported("onehot_index on a non-one-hot map".into()));
        }
        check_len("maze state", 2, x.len())?;
        check_len("maze control", 1, u.len())?;
        onehot_maze_index(x, u[0])
    }
}

// ── Maze encoding ───────────────────────────────────────────────────────

/// Nearest grid index (0..5) of a coordinate in `[-1, 1]`.
pub fn maze_grid_index(coord: f64) -> Result<usize> {
    if !(-1.0..=1.0).contains(&coord) {
        return Err(KnrError::Domain(format!("maze coordinate {coord} outside [-1, 1]")));
    }
    Ok((((coord + 1.0) / MAZE_STEP).round() as usize).min(MAZE_GRID - 1))
}

/// `clamp(ceil(2u), -1, 2)`: -1 left, 0 up, 1 right, 2 down.
///
/// `u = -1` yields `ceil(-2) = -2`, which the case split does not cover; it
/// is clamped to -1 (left).
pub fn maze_action_code(u: f64) -> Result<i32> {
    if !(-1.0..=1.0).contains(&u) {
        return Err(KnrError::Domain(format!("maze control {u} outside [-1, 1]")));
    }
    Ok(((2.0 * u).ceil() as i32).clamp(-1, 2))
}

/// Action bin in `0..4` for a maze control.
pub fn maze_action_bin(u: f64) -> Result<usize> {
    Ok((maze_action_code(u)? + 1) as usize)
}

/// Cell index `row * 5 + col`, where `col` bins `x[0]` and `row` bins `x[1]`.
pub fn maze_cell_index(x: &[f64]) -> Result<usize> {
    check_len("maze state", 2, x.len())?;
    Ok(maze_grid_index(x[1])? * MAZE_GRID + maze_grid_index(x[0])?)
}

pub fn onehot_maze_index(x: &[f64], u: f64) -> Result<usize> {
    Ok(maze_cell_index(x)? * MAZE_ACTIONS + maze_action_bin(u)?)
}

/// The 100-dimensional one-hot feature for a maze state-control pair.
pub fn onehot_maze(x: &[f64], u: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; MAZE_FEATURES];
    out[onehot_maze_index(x, u)?] = 1.0;
    Ok(out)
}

/// `φ(x, u) = [x; u]`.
pub fn lqr_concat(x: &[f64], u: &[f64]) -> Vec<f64> {
    x.iter().chain(u).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{dot, norm2};

    #[test]
    fn rff_bounded() {
        let map = FeatureMap::rff(3, 64, 0.7, RngStream::new(1, 2)).unwrap();
        let mut g = RngStream::new(3, 4).generator();
        for _ in 0..1000 {
            let z = gauss_vector(&mut g, 3, 5.0);
            let phi = map.eval(&z[..2], &z[2..]).unwrap();
            let bound = (2.0 / 64f64).sqrt();
            assert!(phi.iter().all(|v| v.abs() <= bound + 1e-15));
            assert!(norm2(&phi) <= 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn rff_approximates_gaussian_kernel() {
        let bw = 1.3;
        let z1 = [0.2, -0.4, 0.5];
        let z2 = [0.9, 0.1, -0.3];
        let trials = 50;
        let mut acc = 0.0;
        for t in 0..trials {
            let map = FeatureMap::rff(3, 200, bw, RngStream::new(77, t)).unwrap();
            let a = map.eval(&z1[..2], &z1[2..]).unwrap();
            let b = map.eval(&z2[..2], &z2[2..]).unwrap();
            acc += dot(&a, &b);
        }
        let est = acc / trials as f64;
        let d2: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum();
        let kernel = (-d2 / (2.0 * bw * bw)).exp();
        assert!((est - kernel).abs() < 0.05, "{est} vs {kernel}");
    }

    #[test]
    fn rff_deterministic_and_validated() {
        let a = FeatureMap::rff(2, 10, 1.0, RngStream::new(5, 5)).unwrap();
        let b = FeatureMap::rff(2, 10, 1.0, RngStream::new(5, 5)).unwrap();
        assert_eq!(a, b);
        assert!(FeatureMap::rff(2, 0, 1.0, RngStream::new(0, 0)).is_err());
        assert!(FeatureMap::rff(2, 4, 0.0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn onehot_first_cell() {
        let phi = onehot_maze(&[-1.0, -1.0], -0.6).unwrap();
        assert_eq!(phi.len(), 100);
        assert_eq!(phi[0], 1.0);
        assert_eq!(phi.iter().sum::<f64>(), 1.0);
        // u = -1 is clamped into the "left" bin as well.
        assert_eq!(onehot_maze_index(&[-1.0, -1.0], -1.0).unwrap(), 0);
    }

    #[test]
    fn onehot_action_bins() {
        let x = [0.0, 0.0];
        let cell = 12 * 4;
        assert_eq!(onehot_maze_index(&x, -0.51).unwrap(), cell);
        assert_eq!(onehot_maze_index(&x, -0.5).unwrap(), cell);
        assert_eq!(onehot_maze_index(&x, -0.49).unwrap(), cell + 1);
        assert_eq!(onehot_maze_index(&x, 0.0).unwrap(), cell + 1);
        assert_eq!(onehot_maze_index(&x, 0.3).unwrap(), cell + 2);
        assert_eq!(onehot_maze_index(&x, 0.5).unwrap(), cell + 2);
        assert_eq!(onehot_maze_index(&x, 0.51).unwrap(), cell + 3);
        assert_eq!(onehot_maze_index(&x, 1.0).unwrap(), cell + 3);
    }

    #[test]
    fn onehot_domain_errors() {
        assert!(onehot_maze(&[1.2, 0.0], 0.0).is_err());
        assert!(onehot_maze(&[0.0, 0.0], 1.01).is_err());
        assert!(onehot_maze(&[f64::NAN, 0.0], 0.0).is_err());
    }

    #[test]
    fn onehot_partitions_domain() {
        let mut hits = vec![0usize; 100];
        let coords = [-1.0, -0.5, 0.0, 0.5, 1.0];
        for &a in &coords {
            for &b in &coords {
                for u in [-0.9, -0.2, 0.2, 0.9] {
                    hits[onehot_maze_index(&[a, b], u).unwrap()] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
    }

    #[test]
    fn lqr_concat_examples() {
        assert_eq!(lqr_concat(&[1.0, 2.0], &[3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(lqr_concat(&[], &[5.0]), vec![5.0]);
        let x = [0.3, -1.2];
        let u = [2.5];
        let phi = FeatureMap::lqr_concat(2, 1).eval(&x, &u).unwrap();
        let lhs = dot(&phi, &phi);
        assert!((lhs - (dot(&x, &x) + dot(&u, &u))).abs() < 1e-15);
    }

    #[test]
    fn spec_roundtrip_and_validation() {
        let json = r#"{"kind":"rff","number of features":50,"RFF bandwidth":1.5}"#;
        let spec: FeatureSpec = serde_json::from_str(json).unwrap();
        let map = FeatureMap::from_spec(&spec, 2, 1, 9).unwrap();
        assert_eq!(map.d_phi(), 50);
        assert_eq!(map.bandwidth(), 1.5);
        let bad = FeatureSpec {
            kind: FeatureKind::OnehotMaze,
            d_phi: Some(99),
            bandwidth: None,
            seed: None,
        };
        assert!(FeatureMap::from_spec(&bad, 2, 1, 0).is_err());
    }
}
