//! Goal-conditioned episodic environments with binary success rewards.
//!
//! Environments are pure transition functions: `step` takes the current state
//! and returns the next, so any number of rollouts can run concurrently with
//! independent RNG streams. Rewards are computed solely from
//! `(next_state, goal)` and are exposed separately through [`GoalEnv::reward_fn`]
//! so hindsight relabeling can recompute them.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionKind {
    Discrete(usize),
    /// Per-dimension box `[low, high]`.
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone)]
pub struct GoalEnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub goal_dim: usize,
    pub action_kind: ActionKind,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// One episode: goal, `L+1` states, and `L` actions/rewards/achieved goals,
/// where `achieved[t] = phi(states[t+1])`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub goal: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub achieved: Vec<Vec<f64>>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Structural invariants: consistent lengths, binary rewards, and
    /// success iff the final reward is 1.
    pub fn validate(&self) -> Result<()> {
        let l = self.actions.len();
        if l == 0 {
            return Err(Error::Input("trajectory has no transitions".into()));
        }
        if self.states.len() != l + 1 || self.rewards.len() != l || self.achieved.len() != l {
            return Err(Error::Input("trajectory sequence lengths are inconsistent".into()));
        }
        if self.rewards.iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(Error::Input("trajectory rewards must be binary".into()));
        }
        let final_reward = *self.rewards.last().unwrap();
        if self.success != (final_reward == 1.0) {
            return Err(Error::Input("success flag inconsistent with final reward".into()));
        }
        if self.rewards[..l - 1].contains(&1.0) {
            return Err(Error::Input("episode must terminate at first success".into()));
        }
        Ok(())
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub trait GoalEnv: Send + Sync {
    fn spec(&self) -> &GoalEnvSpec;

    /// Sample a fresh `(state, goal)` pair; the goal is never already achieved.
    fn reset(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>);

    fn step(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<StepResult>;

    /// The state-to-goal-space map `phi` used by hindsight relabeling.
    fn achieved_goal(&self, state: &[f64]) -> Vec<f64>;

    /// Pure reward; identical to the reward embedded in [`GoalEnv::step`].
    fn reward_fn(&self, next_state: &[f64], goal: &[f64]) -> f64;
}

fn check_discrete(action: &Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        Action::Discrete(a) => Err(Error::Input(format!(
            "discrete action {a} out of range 0..{n}"
        ))),
        Action::Continuous(_) => Err(Error::Input(
            "continuous action given to a discrete environment".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Flip-bit
// ---------------------------------------------------------------------------

/// `K`-bit flipping: states and goals in `{0,1}^K`, the action toggles one
/// bit, reward is exact match. Horizon `T = K` (K flips always suffice).
pub struct FlipBit {
    spec: GoalEnvSpec,
    k: usize,
}

impl FlipBit {
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("flipbit needs K >= 1".into()));
        }
        Ok(FlipBit {
            spec: GoalEnvSpec {
                name: format!("flipbit-{k}"),
                state_dim: k,
                goal_dim: k,
                action_kind: ActionKind::Discrete(k),
                horizon: k,
            },
            k,
        })
    }
}

impl GoalEnv for FlipBit {
    fn spec(&self) -> &GoalEnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let bits = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..self.k).map(|_| f64::from(rng.gen_range(0..2u8))).collect()
        };
        let state = bits(rng);
        let mut goal = bits(rng);
        while goal == state {
            goal = bits(rng);
        }
        (state, goal)
    }

    fn step(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<StepResult> {
        let a = check_discrete(action, self.k)?;
        let mut next = state.to_vec();
        next[a] = 1.0 - next[a];
        let reward = self.reward_fn(&next, goal);
        Ok(StepResult {
            success: reward == 1.0,
            done: reward == 1.0,
            next_state: next,
            reward,
        })
    }

    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward_fn(&self, next_state: &[f64], goal: &[f64]) -> f64 {
        if next_state == goal {
            1.0
        } else {
            0.0
        }
    }
}

// ---------------------------------------------------------------------------
// Continuous navigation
// ---------------------------------------------------------------------------

const NAV_ACTION_BOUND: f64 = 0.2;
const NAV_STATE_BOUND: f64 = 1.0;
const NAV_SUCCESS_RADIUS: f64 = 0.1;
const NAV_HORIZON: usize = 50;

/// Point-mass navigation in `[-1,1]^K`; actions are clipped displacements in
/// `[-0.2,0.2]^K`, success is entering the 0.1-ball around the goal.
pub struct Navigation {
    spec: GoalEnvSpec,
    k: usize,
}

impl Navigation {
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("nav needs K >= 1".into()));
        }
        Ok(Navigation {
            spec: GoalEnvSpec {
                name: format!("nav-{k}"),
                state_dim: k,
                goal_dim: k,
                action_kind: ActionKind::Continuous {
                    dim: k,
                    low: -NAV_ACTION_BOUND,
                    high: NAV_ACTION_BOUND,
                },
                horizon: NAV_HORIZON,
            },
            k,
        })
    }
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl GoalEnv for Navigation {
    fn spec(&self) -> &GoalEnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let state = vec![0.0; self.k];
        let mut goal: Vec<f64> = (0..self.k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        while l2_dist(&state, &goal) < NAV_SUCCESS_RADIUS {
            goal = (0..self.k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        }
        (state, goal)
    }

    fn step(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<StepResult> {
        let a = match action {
            Action::Continuous(a) if a.len() == self.k => a,
            Action::Continuous(a) => {
                return Err(Error::Input(format!(
                    "action dim {} != {}",
                    a.len(),
                    self.k
                )))
            }
            Action::Discrete(_) => {
                return Err(Error::Input(
                    "discrete action given to a continuous environment".into(),
                ))
            }
        };
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite action".into()));
        }
        let next: Vec<f64> = state
            .iter()
            .zip(a)
            .map(|(s, x)| {
                let dx = x.clamp(-NAV_ACTION_BOUND, NAV_ACTION_BOUND);
                (s + dx).clamp(-NAV_STATE_BOUND, NAV_STATE_BOUND)
            })
            .collect();
        let reward = self.reward_fn(&next, goal);
        Ok(StepResult {
            success: reward == 1.0,
            done: reward == 1.0,
            next_state: next,
            reward,
        })
    }

    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward_fn(&self, next_state: &[f64], goal: &[f64]) -> f64 {
        if l2_dist(next_state, goal) < NAV_SUCCESS_RADIUS {
            1.0
        } else {
            0.0
        }
    }
}

// ---------------------------------------------------------------------------
// Four-room grid world
// ---------------------------------------------------------------------------

pub const FOUR_ROOM_SIZE: usize = 11;
const FOUR_ROOM_HORIZON: usize = 50;
/// Up, down, left, right as (row, col) deltas.
const FOUR_ROOM_MOVES: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Classic 11x11 four-room grid: a wall column and wall row split the grid
/// into four rooms, each wall segment pierced by one doorway. Moves that hit
/// a wall or the border leave the agent in place.
///
/// A cell `(row, col)` is encoded as the 22-dim concatenation of a row
/// one-hot and a column one-hot; states and goals share this encoding, so
/// the achieved-goal map stays the identity on cells and the reward is
/// plain vector equality.
pub struct FourRoom {
    spec: GoalEnvSpec,
    walls: [[bool; FOUR_ROOM_SIZE]; FOUR_ROOM_SIZE],
    free_cells: Vec<(usize, usize)>,
}

impl FourRoom {
    pub fn new() -> Result<Self> {
        let mut walls = [[false; FOUR_ROOM_SIZE]; FOUR_ROOM_SIZE];
        let mid = FOUR_ROOM_SIZE / 2; // 5
        for (r, row) in walls.iter_mut().enumerate() {
            if r != 2 && r != 8 {
                row[mid] = true; // vertical wall, doorways at rows 2 and 8
            }
        }
        for c in 0..FOUR_ROOM_SIZE {
            if c < mid && c != 2 {
                walls[mid][c] = true; // left horizontal wall, doorway at col 2
            }
            if c > mid && c != 8 {
                walls[mid][c] = true; // right horizontal wall, doorway at col 8
            }
        }
        let free_cells: Vec<(usize, usize)> = (0..FOUR_ROOM_SIZE)
            .flat_map(|r| (0..FOUR_ROOM_SIZE).map(move |c| (r, c)))
            .filter(|&(r, c)| !walls[r][c])
            .collect();

        // Every free cell must be reachable from every other; check once by
        // flood fill from the first free cell.
        let mut seen = [[false; FOUR_ROOM_SIZE]; FOUR_ROOM_SIZE];
        let mut stack = vec![free_cells[0]];
        seen[free_cells[0].0][free_cells[0].1] = true;
        let mut count = 0usize;
        while let Some((r, c)) = stack.pop() {
            count += 1;
            for (dr, dc) in FOUR_ROOM_MOVES {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr >= 0
                    && nc >= 0
                    && (nr as usize) < FOUR_ROOM_SIZE
                    && (nc as usize) < FOUR_ROOM_SIZE
                {
                    let (nr, nc) = (nr as usize, nc as usize);
                    if !walls[nr][nc] && !seen[nr][nc] {
                        seen[nr][nc] = true;
                        stack.push((nr, nc));
                    }
                }
            }
        }
        if count != free_cells.len() {
            return Err(Error::Config(
                "four-room layout is not fully connected".into(),
            ));
        }

        Ok(FourRoom {
            spec: GoalEnvSpec {
                name: "fourroom".into(),
                state_dim: 2 * FOUR_ROOM_SIZE,
                goal_dim: 2 * FOUR_ROOM_SIZE,
                action_kind: ActionKind::Discrete(4),
                horizon: FOUR_ROOM_HORIZON,
            },
            walls,
            free_cells,
        })
    }

    /// One-hot row and column encoding of a cell.
    pub fn encode_cell(row: usize, col: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2 * FOUR_ROOM_SIZE];
        v[row] = 1.0;
        v[FOUR_ROOM_SIZE + col] = 1.0;
        v
    }

    pub fn cell_of(state: &[f64]) -> (usize, usize) {
        let row = state[..FOUR_ROOM_SIZE]
            .iter()
            .position(|&x| x == 1.0)
            .expect("state has a row bit");
        let col = state[FOUR_ROOM_SIZE..]
            .iter()
            .position(|&x| x == 1.0)
            .expect("state has a column bit");
        (row, col)
    }

    pub fn free_cells(&self) -> &[(usize, usize)] {
        &self.free_cells
    }
}

impl GoalEnv for FourRoom {
    fn spec(&self) -> &GoalEnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let si = rng.gen_range(0..self.free_cells.len());
        let mut gi = rng.gen_range(0..self.free_cells.len());
        while gi == si {
            gi = rng.gen_range(0..self.free_cells.len());
        }
        let (sr, sc) = self.free_cells[si];
        let (gr, gc) = self.free_cells[gi];
        (Self::encode_cell(sr, sc), Self::encode_cell(gr, gc))
    }

    fn step(&self, state: &[f64], goal: &[f64], action: &Action) -> Result<StepResult> {
        let a = check_discrete(action, 4)?;
        let (r, c) = Self::cell_of(state);
        let (dr, dc) = FOUR_ROOM_MOVES[a];
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        let next = if nr >= 0
            && nc >= 0
            && (nr as usize) < FOUR_ROOM_SIZE
            && (nc as usize) < FOUR_ROOM_SIZE
            && !self.walls[nr as usize][nc as usize]
        {
            Self::encode_cell(nr as usize, nc as usize)
        } else {
            state.to_vec() // blocked: stay in place
        };
        let reward = self.reward_fn(&next, goal);
        Ok(StepResult {
            success: reward == 1.0,
            done: reward == 1.0,
            next_state: next,
            reward,
        })
    }

    fn achieved_goal(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn reward_fn(&self, next_state: &[f64], goal: &[f64]) -> f64 {
        if Self::cell_of(next_state) == Self::cell_of(goal) {
            1.0
        } else {
            0.0
        }
    }
}

/// Build an environment from its config name: `"flipbit"`, `"nav"`, `"fourroom"`.
pub fn make_env(name: &str, k: usize) -> Result<Box<dyn GoalEnv>> {
    match name {
        "flipbit" => Ok(Box::new(FlipBit::new(k)?)),
        "nav" => Ok(Box::new(Navigation::new(k)?)),
        "fourroom" => Ok(Box::new(FourRoom::new()?)),
        other => Err(Error::Config(format!("unknown environment '{other}'"))),
    }
}
