//! Tabular Q-learning with ε-greedy exploration.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Action;

const NUM_ACTIONS: usize = Action::COUNT;

#[derive(Debug, Error)]
pub enum QError {
    #[error("state {0} is terminal")]
    TerminalState(usize),
    #[error("state {state} outside table of {states} states")]
    StateOutOfRange { state: usize, states: usize },
    #[error("invalid learning parameters: {0}")]
    InvalidParams(String),
    #[error("world with {0} states is too large for the exact oracle (limit {1})")]
    WorldTooLarge(usize, usize),
    #[error("malformed Q-table data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum LearningRate {
    Constant(f64),
    /// `1 / (1 + n)` where `n` counts earlier updates of the same pair.
    VisitCount,
}

impl LearningRate {
    pub fn at(&self, visits: u32) -> f64 {
        match self {
            LearningRate::Constant(a) => *a,
            LearningRate::VisitCount => 1.0 / (1.0 + visits as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub learning_rate: LearningRate,
    pub gamma: f64,
    pub epsilon: f64,
    /// Per-episode multiplicative decay of ε; 1 disables annealing.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub max_episodes: usize,
    /// Step cap per episode; `None` means `4·M²`.
    pub max_steps_per_episode: Option<usize>,
    /// Initial value of every non-terminal entry.
    pub q_init: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            learning_rate: LearningRate::Constant(0.5),
            gamma: 0.9,
            epsilon: 0.1,
            epsilon_decay: 1.0,
            epsilon_min: 0.0,
            max_episodes: 2000,
            max_steps_per_episode: None,
            q_init: 0.0,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<(), QError> {
        let mut problems = Vec::new();
        if let LearningRate::Constant(a) = self.learning_rate {
            if !(0.0..=1.0).contains(&a) {
                problems.push(format!("learning rate {a} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            problems.push(format!(
                "epsilon decay {} outside (0, 1]",
                self.epsilon_decay
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_min) {
            problems.push(format!("epsilon floor {} outside [0, 1]", self.epsilon_min));
        }
        if !self.q_init.is_finite() {
            problems.push("initial Q value must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(QError::InvalidParams(problems.join("; ")))
        }
    }

    /// Exploration rate used during episode `episode` (0-based).
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        if self.epsilon_decay == 1.0 {
            return self.epsilon;
        }
        (self.epsilon * self.epsilon_decay.powi(episode as i32)).max(self.epsilon_min)
    }
}

/// One agent's action-value table, `num_states × 4`, with per-entry update
/// counts. Rows of terminal states stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    terminal: Vec<bool>,
    values: Vec<f64>,
    visits: Vec<u32>,
}

impl QTable {
    pub fn new(num_states: usize, init: f64, terminals: &[usize]) -> Self {
        let mut terminal = vec![false; num_states];
        for &t in terminals {
            terminal[t] = true;
        }
        let values = (0..num_states * NUM_ACTIONS)
            .map(|i| if terminal[i / NUM_ACTIONS] { 0.0 } else { init })
            .collect();
        Self {
            num_states,
            terminal,
            values,
            visits: vec![0; num_states * NUM_ACTIONS],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminals(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal
            .iter()
            .enumerate()
            .filter(|(_, t)| **t)
            .map(|(s, _)| s)
    }

    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s * NUM_ACTIONS + a.index()]
    }

    pub fn set(&mut self, s: usize, a: Action, v: f64) {
        if !self.terminal[s] {
            self.values[s * NUM_ACTIONS + a.index()] = v;
        }
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
    }

    pub fn visits(&self, s: usize, a: Action) -> u32 {
        self.visits[s * NUM_ACTIONS + a.index()]
    }

    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, s: usize) -> Result<(), QError> {
        if s >= self.num_states {
            return Err(QError::StateOutOfRange {
                state: s,
                states: self.num_states,
            });
        }
        Ok(())
    }

    /// Largest absolute difference against a reference table of equal shape.
    pub fn max_abs_diff(&self, reference: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `state,action,value` rows with a header line.
    pub fn write_text<W: std::io::Write>(&self, mut out: W) -> Result<(), QError> {
        writeln!(out, "state,action,value")?;
        for s in 0..self.num_states {
            for a in 0..NUM_ACTIONS {
                writeln!(out, "{s},{a},{}", self.values[s * NUM_ACTIONS + a])?;
            }
        }
        Ok(())
    }

    /// Read values written by [`QTable::write_text`] into a table that
    /// already carries the terminal markers. Visit counts reset to zero.
    pub fn read_text<R: std::io::BufRead>(&mut self, input: R) -> Result<(), QError> {
        let mut seen = vec![false; self.values.len()];
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line_no == 1 {
                if line.trim() != "state,action,value" {
                    return Err(QError::Malformed(format!(
                        "line 1: unexpected header {line:?}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parsed = match fields.as_slice() {
                [s, a, v] => s
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .zip(a.trim().parse::<usize>().ok())
                    .zip(v.trim().parse::<f64>().ok()),
                _ => None,
            };
            let ((s, a), v) =
                parsed.ok_or_else(|| QError::Malformed(format!("line {line_no}: {line:?}")))?;
            if s >= self.num_states || a >= NUM_ACTIONS || !v.is_finite() {
                return Err(QError::Malformed(format!(
                    "line {line_no}: entry out of range"
                )));
            }
            if self.terminal[s] && v != 0.0 {
                return Err(QError::Malformed(format!(
                    "line {line_no}: terminal state {s} has non-zero value"
                )));
            }
            self.values[s * NUM_ACTIONS + a] = v;
            seen[s * NUM_ACTIONS + a] = true;
        }
        if let Some(missing) = seen.iter().position(|x| !x) {
            return Err(QError::Malformed(format!(
                "missing entry for state {} action {}",
                missing / NUM_ACTIONS,
                missing % NUM_ACTIONS
            )));
        }
        self.visits.iter_mut().for_each(|v| *v = 0);
        Ok(())
    }

    /// Binary checkpoint, little-endian:
    ///
    /// ```text
    /// b"QTBL" | u32 version (1) | u64 states | u64 actions
    /// | states × u8 terminal flag
    /// | states·actions × f64 value (row-major, state then action)
    /// | states·actions × u32 update count
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.values.len();
        let mut out = Vec::with_capacity(24 + self.num_states + cells * 12);
        out.extend_from_slice(b"QTBL");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.num_states as u64).to_le_bytes());
        out.extend_from_slice(&(NUM_ACTIONS as u64).to_le_bytes());
        out.extend(self.terminal.iter().map(|t| *t as u8));
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.visits {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QError> {
        let bad = |m: &str| QError::Malformed(m.to_string());
        if bytes.len() < 24 || &bytes[..4] != b"QTBL" {
            return Err(bad("missing QTBL header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(QError::Malformed(format!("unsupported version {version}")));
        }
        let states = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let actions = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        if actions != NUM_ACTIONS {
            return Err(QError::Malformed(format!(
                "expected {NUM_ACTIONS} actions, found {actions}"
            )));
        }
        let cells = states
            .checked_mul(actions)
            .ok_or_else(|| bad("size overflow"))?;
        let expected = 24 + states + cells * 12;
        if bytes.len() != expected {
            return Err(QError::Malformed(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut at = 24;
        let terminal: Vec<bool> = bytes[at..at + states].iter().map(|b| *b != 0).collect();
        at += states;
        let values: Vec<f64> = bytes[at..at + cells * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += cells * 8;
        let visits: Vec<u32> = bytes[at..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        for (s, t) in terminal.iter().enumerate() {
            if *t
                && values[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
                    .iter()
                    .any(|v| *v != 0.0)
            {
                return Err(QError::Malformed(format!(
                    "terminal state {s} has non-zero values"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value"));
        }
        Ok(Self {
            num_states: states,
            terminal,
            values,
            visits,
        })
    }
}

/// One observed step of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: Action,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// ε-greedy: uniform random action with probability ε, otherwise the greedy
/// action with ties broken uniformly at random.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, QError> {
    q.check(s)?;
    if q.is_terminal(s) {
        return Err(QError::TerminalState(s));
    }
    if rng.random::<f64>() < epsilon {
        return Ok(Action::ALL[rng.random_range(0..NUM_ACTIONS)]);
    }
    let row = q.row(s);
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied = [0usize; NUM_ACTIONS];
    let mut count = 0;
    for (a, v) in row.iter().enumerate() {
        if *v == best {
            tied[count] = a;
            count += 1;
        }
    }
    let pick = if count == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..count)]
    };
    Ok(Action::ALL[pick])
}

/// Temporal-difference update of a single entry:
/// `Q(s,a) += α (r + γ max Q(s',·) - Q(s,a))`.
pub fn update(q: &mut QTable, t: &Transition, params: &LearningParams) -> Result<(), QError> {
    q.check(t.state)?;
    q.check(t.next_state)?;
    if q.is_terminal(t.state) {
        return Err(QError::TerminalState(t.state));
    }
    let idx = t.state * NUM_ACTIONS + t.action.index();
    let alpha = params.learning_rate.at(q.visits[idx]);
    let bootstrap = if t.terminal || q.is_terminal(t.next_state) {
        0.0
    } else {
        q.max_value(t.next_state)
    };
    let target = t.reward + params.gamma * bootstrap;
    q.values[idx] += alpha * (target - q.values[idx]);
    q.visits[idx] = q.visits[idx].saturating_add(1);
    Ok(())
}

/// Greedy action per state, lowest action index on ties.
pub fn greedy_policy(q: &QTable) -> Vec<Action> {
    (0..q.num_states())
        .map(|s| greedy_action(q.row(s)))
        .collect()
}

pub fn greedy_action(row: &[f64]) -> Action {
    let mut best = 0;
    for a in 1..row.len() {
        if row[a] > row[best] {
            best = a;
        }
    }
    Action::ALL[best]
}

/// Fully known deterministic MDP with four actions per state.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicWorld {
    pub num_states: usize,
    /// Successor of `(s, a)` at `s * 4 + a`.
    pub next: Vec<usize>,
    /// Reward of `(s, a)` at `s * 4 + a`.
    pub reward: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl DeterministicWorld {
    pub fn step(&self, s: usize, a: Action) -> (usize, f64) {
        let i = s * NUM_ACTIONS + a.index();
        (self.next[i], self.reward[i])
    }

    pub fn terminals(&self) -> Vec<usize> {
        (0..self.num_states).filter(|s| self.terminal[*s]).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            reward: self.reward.iter().map(|r| r * c).collect(),
            ..self.clone()
        }
    }
}

pub const ORACLE_STATE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `Q⋆`, flat `s * 4 + a`; terminal rows are zero.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl OracleSolution {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
    }

    /// Greedy action where the best value beats the runner-up by more than
    /// `gap`; `None` where the argmax is not unique at that resolution.
    pub fn unique_argmax(&self, s: usize, gap: f64) -> Option<Action> {
        let row = self.row(s);
        let best = greedy_action(row);
        let runner_up = row
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != best.index())
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        (row[best.index()] - runner_up > gap).then_some(best)
    }
}

/// Exact `Q⋆` by iterating `Q(s,a) ← r(s,a) + γ max Q(s',·)` to a fixed point.
pub fn value_iteration_oracle(
    world: &DeterministicWorld,
    gamma: f64,
    tolerance: f64,
) -> Result<OracleSolution, QError> {
    if world.num_states > ORACLE_STATE_LIMIT {
        return Err(QError::WorldTooLarge(world.num_states, ORACLE_STATE_LIMIT));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(QError::InvalidParams(format!(
            "gamma {gamma} outside [0, 1)"
        )));
    }
    let cells = world.num_states * NUM_ACTIONS;
    let mut q = vec![0.0; cells];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    // γ < 1 contracts by γ per sweep; cap generously.
    let max_sweeps = 100_000;
    while residual > tolerance && iterations < max_sweeps {
        let v: Vec<f64> = (0..world.num_states)
            .map(|s| {
                if world.terminal[s] {
                    0.0
                } else {
                    q[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        residual = 0.0;
        for s in 0..world.num_states {
            if world.terminal[s] {
                continue;
            }
            for a in 0..NUM_ACTIONS {
                let i = s * NUM_ACTIONS + a;
                let next = world.next[i];
                let new = world.reward[i] + gamma * v[next];
                residual = f64::max(residual, (new - q[i]).abs());
                q[i] = new;
            }
        }
        iterations += 1;
    }
    Ok(OracleSolution {
        q,
        iterations,
        residual,
    })
}
