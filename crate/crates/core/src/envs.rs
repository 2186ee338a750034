//! Ground-truth environments and trajectory sampling.
//!
//! Three systems share the [`Environment`] trait: a linear-quadratic
//! regulator, the 5x5 grid maze, and a damped pendulum. The pendulum is a
//! small continuous nonlinear testbed; it does not reproduce any published
//! benchmark.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, KnrError, Result};
use crate::features::{
    maze_action_code, maze_cell_index, FeatureKind, FeatureMap, MAZE_ACTIONS, MAZE_FEATURES,
    MAZE_GRID, MAZE_STEP,
};
use crate::numerics::{dot, gauss_vector, Gen, Matrix};

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn d_x(&self) -> usize;
    fn d_u(&self) -> usize;
    fn horizon(&self) -> usize;
    fn x0(&self) -> &[f64];
    /// Per-dimension control bounds `(lower, upper)`.
    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Standard deviation of the additive process noise.
    fn noise_std(&self) -> f64;
    /// Noise-free dynamics `f(x, u)`.
    fn mean_step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// Stage cost `c(x, u)` charged at the pre-move state.
    fn cost(&self, x: &[f64], u: &[f64]) -> f64;

    /// Stage cost for episode `episode`. Every shipped environment uses a
    /// fixed cost, so this defaults to [`Environment::cost`].
    fn episode_cost(&self, _episode: usize, x: &[f64], u: &[f64]) -> f64 {
        self.cost(x, u)
    }

    /// `x' = f(x, u) + ε`, `ε ~ N(0, σ² I)`, with the cost of `(x, u)`.
    fn step(&self, x: &[f64], u: &[f64], rng: &mut Gen) -> Result<(Vec<f64>, f64)> {
        let mut next = self.mean_step(x, u)?;
        let noise = gauss_vector(rng, next.len(), self.noise_std());
        for (n, e) in next.iter_mut().zip(noise) {
            *n += e;
        }
        Ok((next, self.cost(x, u)))
    }

    /// Maps a model-predicted state back into the state domain.
    fn project_state(&self, _x: &mut [f64]) {}

    /// `W*` in the given feature space, when the dynamics are exactly linear
    /// in those features.
    fn true_weights(&self, _features: &FeatureMap) -> Option<Matrix> {
        None
    }

    /// Whether `x` is a goal state (maze only).
    fn is_goal(&self, _x: &[f64]) -> bool {
        false
    }

    fn as_maze(&self) -> Option<&MazeEnv> {
        None
    }
}

// ── Trajectories ────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub realized_total: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Executes `policy` for the environment horizon starting at `x0`.
pub fn rollout<E, P>(env: &E, mut policy: P, rng: &mut Gen) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let mut states = vec![env.x0().to_vec()];
    let mut controls = Vec::with_capacity(env.horizon());
    let mut costs = Vec::with_capacity(env.horizon());
    for h in 0..env.horizon() {
        let x = states.last().expect("nonempty").clone();
        let u = policy(&x, h)?;
        let (next, c) = env.step(&x, &u, rng)?;
        controls.push(u);
        costs.push(c);
        states.push(next);
    }
    let realized_total = costs.iter().sum();
    Ok(Trajectory {
        states,
        controls,
        costs,
        realized_total,
    })
}

/// Writes `episode,h,x0..,u0..,cost` rows.
pub fn write_trajectories_csv<W: Write>(out: W, episodes: &[(usize, &Trajectory)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some((_, first)) = episodes.first() else {
        w.flush()?;
        return Ok(());
    };
    let d_x = first.states[0].len();
    let d_u = first.controls.first().map_or(0, Vec::len);
    let mut header = vec!["episode".to_string(), "h".to_string()];
    header.extend((0..d_x).map(|i| format!("x{i}")));
    header.extend((0..d_u).map(|i| format!("u{i}")));
    header.push("cost".into());
    w.write_record(&header)?;
    for (ep, traj) in episodes {
        for h in 0..traj.len() {
            let mut row = vec![ep.to_string(), h.to_string()];
            row.extend(traj.states[h].iter().map(|v| v.to_string()));
            row.extend(traj.controls[h].iter().map(|v| v.to_string()));
            row.push(traj.costs[h].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ── LQR ─────────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct LqrEnv {
    pub a: Matrix,
    pub b: Matrix,
    pub q: Matrix,
    pub r: Matrix,
    pub sigma: f64,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

impl LqrEnv {
    pub fn new(a: Matrix, b: Matrix, q: Matrix, r: Matrix, sigma: f64, horizon: usize, x0: Vec<f64>) -> Result<Self> {
        let d_x = a.rows();
        let d_u = b.cols();
        check_len("LQR A columns", d_x, a.cols())?;
        check_len("LQR B rows", d_x, b.rows())?;
        check_len("LQR Q", d_x, q.rows())?;
        check_len("LQR Q", d_x, q.cols())?;
        check_len("LQR R", d_u, r.rows())?;
        check_len("LQR R", d_u, r.cols())?;
        check_len("LQR x0", d_x, x0.len())?;
        if !q.is_symmetric(1e-12) || !r.is_symmetric(1e-12) {
            return Err(invalid("Q/R", "cost matrices must be symmetric"));
        }
        if !(sigma >= 0.0) {
            return Err(invalid("sigma", "must be non-negative"));
        }
        Ok(Self {
            a,
            b,
            q,
            r,
            sigma,
            horizon,
            x0,
            u_min: vec![f64::NEG_INFINITY; d_u],
            u_max: vec![f64::INFINITY; d_u],
        })
    }

    pub fn with_control_bounds(mut self, u_min: Vec<f64>, u_max: Vec<f64>) -> Result<Self> {
        check_len("LQR u_min", self.b.cols(), u_min.len())?;
        check_len("LQR u_max", self.b.cols(), u_max.len())?;
        self.u_min = u_min;
        self.u_max = u_max;
        Ok(self)
    }

    /// Scalar system `x' = a x + b u + ε` with cost `q x² + r u²`.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, sigma: f64, horizon: usize, x0: f64) -> Self {
        Self::new(
            Matrix::from_diag(&[a]),
            Matrix::from_diag(&[b]),
            Matrix::from_diag(&[q]),
            Matrix::from_diag(&[r]),
            sigma,
            horizon,
            vec![x0],
        )
        .expect("scalar LQR is well formed")
    }

    /// `W* = [A B]`.
    pub fn weights(&self) -> Matrix {
        let d_x = self.a.rows();
        let d_u = self.b.cols();
        let mut w = Matrix::zeros(d_x, d_x + d_u);
        for r in 0..d_x {
            w.row_mut(r)[..d_x].copy_from_slice(self.a.row(r));
            w.row_mut(r)[d_x..].copy_from_slice(self.b.row(r));
        }
        w
    }

    pub fn lqr_step(&self, x: &[f64], u: &[f64], rng: &mut Gen) -> Result<(Vec<f64>, f64)> {
        self.step(x, u, rng)
    }
}

fn quad_form(m: &Matrix, v: &[f64]) -> f64 {
    dot(v, &m.matvec(v).expect("quadratic form dimensions"))
}

impl Environment for LqrEnv {
    fn name(&self) -> &'static str {
        "lqr"
    }

    fn d_x(&self) -> usize {
        self.a.rows()
    }

    fn d_u(&self) -> usize {
        self.b.cols()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn x0(&self) -> &[f64] {
        &self.x0
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.u_min.clone(), self.u_max.clone())
    }

    fn noise_std(&self) -> f64 {
        self.sigma
    }

    fn mean_step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut next = self.a.matvec(x)?;
        let bu = self.b.matvec(u)?;
        for (n, v) in next.iter_mut().zip(bu) {
            *n += v;
        }
        Ok(next)
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad_form(&self.q, x) + quad_form(&self.r, u)
    }

    fn true_weights(&self, features: &FeatureMap) -> Option<Matrix> {
        (features.kind() == FeatureKind::LqrConcat).then(|| self.weights())
    }
}

// ── Maze ────────────────────────────────────────────────────────────────

pub const MAZE_LAYOUT_HEADER: &str = "maze v1";
const LAYOUT_SIZE: usize = 2 * MAZE_GRID + 1;

/// Shipped default layout.
pub const DEFAULT_MAZE_LAYOUT: &str = include_str!("../assets/maze_default.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Up,
    Right,
    Down,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Up, Direction::Right, Direction::Down];

    /// Direction selected by `clamp(ceil(2u), -1, 2)`.
    pub fn from_code(code: i32) -> Direction {
        match code {
            -1 => Direction::Left,
            0 => Direction::Up,
            1 => Direction::Right,
            _ => Direction::Down,
        }
    }

    /// Grid offset `(dcol, drow)`; "down" increases the second coordinate.
    pub fn offset(self) -> (i32, i32) {
        match self {
            Direction::Left => (-1, 0),
            Direction::Up => (0, -1),
            Direction::Right => (1, 0),
            Direction::Down => (0, 1),
        }
    }

    /// A representative control in the bin of this direction.
    pub fn control(self) -> f64 {
        match self {
            Direction::Left => -0.75,
            Direction::Up => -0.25,
            Direction::Right => 0.25,
            Direction::Down => 0.75,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeEnv {
    /// Blocked directed edges `(cell index, direction)`; stored in both
    /// directions for every wall.
    walls: HashSet<(usize, Direction)>,
    start: [f64; 2],
    goal: [f64; 2],
    horizon: usize,
}

impl MazeEnv {
    pub const START: [f64; 2] = [-1.0, -1.0];
    pub const GOAL: [f64; 2] = [1.0, 1.0];
    pub const HORIZON: usize = 30;

    /// Maze without interior walls; the boundary still blocks.
    pub fn open(horizon: usize) -> Self {
        Self {
            walls: HashSet::new(),
            start: Self::START,
            goal: Self::GOAL,
            horizon,
        }
    }

    pub fn default_layout() -> Self {
        Self::from_layout(DEFAULT_MAZE_LAYOUT, Self::HORIZON).expect("shipped layout parses")
    }

    pub fn from_layout_file(path: &Path, horizon: usize) -> Result<Self> {
        Self::from_layout(&std::fs::read_to_string(path)?, horizon)
    }

    /// Parses the textual layout.
    ///
    /// ```text
    /// maze v1
    /// ###########
    /// #S  #     #
    /// # # # ### #
    /// ...
    /// ```
    ///
    /// After the header come 11 rows of 11 characters. Cell `(row, col)`
    /// sits at character `(2 row + 1, 2 col + 1)` and holds ` `, `.`, `S`
    /// or `G`. The character between two neighbouring cells is `#` for a
    /// wall and ` ` or `.` for a passage. Characters at even/even positions
    /// are ignored. Column `col` is the first state coordinate
    /// `-1 + 0.5 col`; row `row` the second. The outer frame always blocks.
    pub fn from_layout(text: &str, horizon: usize) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
        let header = lines.first().copied().unwrap_or_default();
        if header.trim() != MAZE_LAYOUT_HEADER {
            return Err(KnrError::MazeLayout {
                line: 1,
                reason: format!("expected header `{MAZE_LAYOUT_HEADER}`, found `{header}`"),
            });
        }
        let grid: Vec<Vec<char>> = lines[1..]
            .iter()
            .take_while(|l| !l.trim().is_empty())
            .map(|l| l.chars().collect())
            .collect();
        if grid.len() != LAYOUT_SIZE {
            return Err(KnrError::MazeLayout {
                line: grid.len() + 2,
                reason: format!("expected {LAYOUT_SIZE} grid rows, found {}", grid.len()),
            });
        }
        for (i, row) in grid.iter().enumerate() {
            if row.len() != LAYOUT_SIZE {
                return Err(KnrError::MazeLayout {
                    line: i + 2,
                    reason: format!("expected {LAYOUT_SIZE} characters, found {}", row.len()),
                });
            }
            for (j, &ch) in row.iter().enumerate() {
                let ok = match (i % 2, j % 2) {
                    (1, 1) => matches!(ch, ' ' | '.' | 'S' | 'G'),
                    (0, 0) => true,
                    _ => matches!(ch, ' ' | '.' | '#'),
                };
                if !ok {
                    return Err(KnrError::MazeLayout {
                        line: i + 2,
                        reason: format!("unexpected character `{ch}` at column {}", j + 1),
                    });
                }
            }
        }
        let mut walls = HashSet::new();
        for row in 0..MAZE_GRID {
            for col in 0..MAZE_GRID {
                let cell = row * MAZE_GRID + col;
                // Wall to the right of (row, col).
                if col + 1 < MAZE_GRID && grid[2 * row + 1][2 * col + 2] == '#' {
                    walls.insert((cell, Direction::Right));
                    walls.insert((cell + 1, Direction::Left));
                }
                // Wall below (row, col).
                if row + 1 < MAZE_GRID && grid[2 * row + 2][2 * col + 1] == '#' {
                    walls.insert((cell, Direction::Down));
                    walls.insert((cell + MAZE_GRID, Direction::Up));
                }
            }
        }
        Ok(Self {
            walls,
            start: Self::START,
            goal: Self::GOAL,
            horizon,
        })
    }

    /// Renders the layout in the format read by [`MazeEnv::from_layout`].
    pub fn to_layout(&self) -> String {
        let mut grid = vec![vec!['#'; LAYOUT_SIZE]; LAYOUT_SIZE];
        for row in 0..MAZE_GRID {
            for col in 0..MAZE_GRID {
                let cell = row * MAZE_GRID + col;
                grid[2 * row + 1][2 * col + 1] = ' ';
                if col + 1 < MAZE_GRID && !self.walls.contains(&(cell, Direction::Right)) {
                    grid[2 * row + 1][2 * col + 2] = ' ';
                }
                if row + 1 < MAZE_GRID && !self.walls.contains(&(cell, Direction::Down)) {
                    grid[2 * row + 2][2 * col + 1] = ' ';
                }
            }
        }
        grid[1][1] = 'S';
        grid[LAYOUT_SIZE - 2][LAYOUT_SIZE - 2] = 'G';
        let mut s = format!("{MAZE_LAYOUT_HEADER}\n");
        for row in grid {
            s.extend(row);
            s.push('\n');
        }
        s
    }

    pub fn with_wall(mut self, cell: usize, dir: Direction) -> Self {
        let (dc, dr) = dir.offset();
        let (row, col) = ((cell / MAZE_GRID) as i32, (cell % MAZE_GRID) as i32);
        let (nr, nc) = (row + dr, col + dc);
        self.walls.insert((cell, dir));
        if (0..MAZE_GRID as i32).contains(&nr) && (0..MAZE_GRID as i32).contains(&nc) {
            let back = match dir {
                Direction::Left => Direction::Right,
                Direction::Right => Direction::Left,
                Direction::Up => Direction::Down,
                Direction::Down => Direction::Up,
            };
            self.walls.insert(((nr as usize) * MAZE_GRID + nc as usize, back));
        }
        self
    }

    pub fn start(&self) -> [f64; 2] {
        self.start
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    /// Whether moving from `cell` in `dir` is blocked by a wall or the frame.
    pub fn blocked(&self, cell: usize, dir: Direction) -> bool {
        let (dc, dr) = dir.offset();
        let row = (cell / MAZE_GRID) as i32 + dr;
        let col = (cell % MAZE_GRID) as i32 + dc;
        let outside = !(0..MAZE_GRID as i32).contains(&row) || !(0..MAZE_GRID as i32).contains(&col);
        outside || self.walls.contains(&(cell, dir))
    }

    /// Grid cell of an on-grid state; off-grid states are a domain error.
    pub fn cell_of(&self, x: &[f64]) -> Result<usize> {
        check_len("maze state", 2, x.len())?;
        for &c in x {
            let k = (c + 1.0) / MAZE_STEP;
            if !(-1.0..=1.0).contains(&c) || (k - k.round()).abs() > 1e-9 {
                return Err(KnrError::Domain(format!("maze state {x:?} is not on the grid")));
            }
        }
        maze_cell_index(x)
    }

    pub fn cell_state(cell: usize) -> [f64; 2] {
        let row = cell / MAZE_GRID;
        let col = cell % MAZE_GRID;
        [-1.0 + MAZE_STEP * col as f64, -1.0 + MAZE_STEP * row as f64]
    }

    /// Deterministic move and the cost `‖x − [1,1]‖² − 8` of the pre-move state.
    pub fn maze_step(&self, x: &[f64], u: f64) -> Result<(Vec<f64>, f64)> {
        let cell = self.cell_of(x)?;
        let dir = Direction::from_code(maze_action_code(u)?);
        let next = if self.blocked(cell, dir) {
            cell
        } else {
            let (dc, dr) = dir.offset();
            (cell as i32 + dr * MAZE_GRID as i32 + dc) as usize
        };
        Ok((Self::cell_state(next).to_vec(), self.maze_cost(x)))
    }

    pub fn maze_cost(&self, x: &[f64]) -> f64 {
        let dx = x[0] - self.goal[0];
        let dy = x[1] - self.goal[1];
        dx * dx + dy * dy - 8.0
    }

    /// Shortest number of moves from start to goal, if reachable.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let start = maze_cell_index(&self.start).ok()?;
        let goal = maze_cell_index(&self.goal).ok()?;
        let mut dist = [usize::MAX; MAZE_GRID * MAZE_GRID];
        let mut queue = std::collections::VecDeque::from([start]);
        dist[start] = 0;
        while let Some(c) = queue.pop_front() {
            for dir in Direction::ALL {
                if self.blocked(c, dir) {
                    continue;
                }
                let (dc, dr) = dir.offset();
                let n = (c as i32 + dr * MAZE_GRID as i32 + dc) as usize;
                if dist[n] == usize::MAX {
                    dist[n] = dist[c] + 1;
                    queue.push_back(n);
                }
            }
        }
        (dist[goal] != usize::MAX).then_some(dist[goal])
    }
}

impl Environment for MazeEnv {
    fn name(&self) -> &'static str {
        "maze"
    }

    fn d_x(&self) -> usize {
        2
    }

    fn d_u(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn x0(&self) -> &[f64] {
        &self.start
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0], vec![1.0])
    }

    fn noise_std(&self) -> f64 {
        0.0
    }

    fn mean_step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("maze control", 1, u.len())?;
        Ok(self.maze_step(x, u[0])?.0)
    }

    fn cost(&self, x: &[f64], _u: &[f64]) -> f64 {
        self.maze_cost(x)
    }

    fn step(&self, x: &[f64], u: &[f64], _rng: &mut Gen) -> Result<(Vec<f64>, f64)> {
        check_len("maze control", 1, u.len())?;
        self.maze_step(x, u[0])
    }

    fn project_state(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
    }

    fn true_weights(&self, features: &FeatureMap) -> Option<Matrix> {
        if features.kind() != FeatureKind::OnehotMaze {
            return None;
        }
        let mut w = Matrix::zeros(2, MAZE_FEATURES);
        for cell in 0..MAZE_GRID * MAZE_GRID {
            let x = Self::cell_state(cell);
            for (bin, dir) in Direction::ALL.iter().enumerate() {
                let (next, _) = self.maze_step(&x, dir.control()).ok()?;
                let idx = cell * MAZE_ACTIONS + bin;
                w[(0, idx)] = next[0];
                w[(1, idx)] = next[1];
            }
        }
        Some(w)
    }

    fn is_goal(&self, x: &[f64]) -> bool {
        (x[0] - self.goal[0]).abs() < 1e-9 && (x[1] - self.goal[1]).abs() < 1e-9
    }

    fn as_maze(&self) -> Option<&MazeEnv> {
        Some(self)
    }
}

// ── Pendulum ────────────────────────────────────────────────────────────

/// Damped pendulum `θ̈ = −(g/l) sin θ − d θ̇ + u`, explicit Euler with step `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumEnv {
    #[serde(default = "PendulumEnv::default_gravity")]
    pub gravity: f64,
    #[serde(default = "PendulumEnv::default_length")]
    pub length: f64,
    #[serde(default = "PendulumEnv::default_damping")]
    pub damping: f64,
    #[serde(default = "PendulumEnv::default_dt")]
    pub dt: f64,
    #[serde(default = "PendulumEnv::default_sigma")]
    pub sigma: f64,
    #[serde(default = "PendulumEnv::default_horizon")]
    pub horizon: usize,
    #[serde(default = "PendulumEnv::default_x0")]
    pub x0: Vec<f64>,
    #[serde(default = "PendulumEnv::default_u_max")]
    pub u_max: f64,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self {
            gravity: Self::default_gravity(),
            length: Self::default_length(),
            damping: Self::default_damping(),
            dt: Self::default_dt(),
            sigma: Self::default_sigma(),
            horizon: Self::default_horizon(),
            x0: Self::default_x0(),
            u_max: Self::default_u_max(),
        }
    }
}

impl PendulumEnv {
    fn default_gravity() -> f64 {
        9.81
    }
    fn default_length() -> f64 {
        1.0
    }
    fn default_damping() -> f64 {
        0.5
    }
    fn default_dt() -> f64 {
        0.05
    }
    fn default_sigma() -> f64 {
        0.01
    }
    fn default_horizon() -> usize {
        40
    }
    fn default_x0() -> Vec<f64> {
        vec![1.0, 0.0]
    }
    fn default_u_max() -> f64 {
        5.0
    }

    pub fn angular_acceleration(&self, theta: f64, omega: f64, u: f64) -> f64 {
        -(self.gravity / self.length) * theta.sin() - self.damping * omega + u
    }

    pub fn pendulum_step(&self, x: &[f64], u: &[f64], rng: &mut Gen) -> Result<(Vec<f64>, f64)> {
        self.step(x, u, rng)
    }

    /// Mechanical energy per unit mass-length², `½ θ̇² + (g/l)(1 − cos θ)`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1] + (self.gravity / self.length) * (1.0 - x[0].cos())
    }
}

/// Angle wrapped into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

impl Environment for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn d_x(&self) -> usize {
        2
    }

    fn d_u(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn x0(&self) -> &[f64] {
        &self.x0
    }

    fn control_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.u_max], vec![self.u_max])
    }

    fn noise_std(&self) -> f64 {
        self.sigma
    }

    fn mean_step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("pendulum state", 2, x.len())?;
        check_len("pendulum control", 1, u.len())?;
        let u = u[0].clamp(-self.u_max, self.u_max);
        let (theta, omega) = (x[0], x[1]);
        Ok(vec![
            theta + self.dt * omega,
            omega + self.dt * self.angular_acceleration(theta, omega, u),
        ])
    }

    fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let th = wrap_angle(x[0]);
        th * th + 0.1 * x[1] * x[1] + 0.001 * u[0] * u[0]
    }
}

// ── Config ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Lqr(LqrSpec),
    Maze(MazeSpec),
    Pendulum(PendulumEnv),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub sigma: f64,
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub u_min: Option<Vec<f64>>,
    #[serde(default)]
    pub u_max: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSpec {
    /// Inline layout lines (header included); the shipped layout if absent.
    #[serde(default)]
    pub layout: Option<Vec<String>>,
    #[serde(default)]
    pub layout_file: Option<String>,
    #[serde(default = "maze_default_horizon")]
    pub horizon: usize,
}

fn maze_default_horizon() -> usize {
    MazeEnv::HORIZON
}

fn matrix_from_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(name, "must be a nonempty rectangular array"));
    }
    Matrix::from_vec(rows.len(), cols, rows.concat())
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Lqr(s) => {
                let mut env = LqrEnv::new(
                    matrix_from_rows("A", &s.a)?,
                    matrix_from_rows("B", &s.b)?,
                    matrix_from_rows("Q", &s.q)?,
                    matrix_from_rows("R", &s.r)?,
                    s.sigma,
                    s.horizon,
                    s.x0.clone(),
                )?;
                let d_u = env.b.cols();
                if s.u_min.is_some() || s.u_max.is_some() {
                    env = env.with_control_bounds(
                        s.u_min.clone().unwrap_or(vec![f64::NEG_INFINITY; d_u]),
                        s.u_max.clone().unwrap_or(vec![f64::INFINITY; d_u]),
                    )?;
                }
                Box::new(env)
            }
            EnvSpec::Maze(s) => {
                let env = match (&s.layout, &s.layout_file) {
                    (Some(_), Some(_)) => {
                        return Err(invalid("layout", "give either `layout` or `layout_file`, not both"))
                    }
                    (Some(lines), None) => MazeEnv::from_layout(&lines.join("\n"), s.horizon)?,
                    (None, Some(path)) => MazeEnv::from_layout_file(Path::new(path), s.horizon)?,
                    (None, None) => MazeEnv::from_layout(DEFAULT_MAZE_LAYOUT, s.horizon)?,
                };
                Box::new(env)
            }
            EnvSpec::Pendulum(p) => {
                if !(p.dt > 0.0) || !(p.length > 0.0) || !(p.u_max > 0.0) || !(p.sigma >= 0.0) {
                    return Err(invalid("pendulum", "dt, length and u_max must be positive, sigma non-negative"));
                }
                check_len("pendulum x0", 2, p.x0.len())?;
                Box::new(p.clone())
            }
        })
    }
}
