//! Multi-ABS episodic environment.
//!
//! All agents move at once, one channel realization is drawn at the new
//! positions, and every moving ABS solves its own allocation problem. The
//! interference an ABS sees comes from the other ABSs' powers of the
//! previous time step (uniform `P_max / N` before the first step), so no
//! cross-ABS iteration is needed within a step. An ABS that reaches its
//! destination parks there, stops transmitting and stops learning.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{self, AllocationProblem, Convergence, SubgradientSchedule};
use crate::channel::{self, ChannelRealization, FadingModel, GbsSpec, PropagationParams};
use crate::geometry::{self, Action, AreaSpec, DistanceMetric, GridState, Position3D};
use crate::qlearning::{self, DeterministicWorld, LearningParams, QError, QTable, Transition};
use crate::rng::EpisodeStreams;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("expected a single-agent scenario, found {0} agents")]
    NotSingleAgent(usize),
    #[error("expected {expected} Q-tables, got {got}")]
    TableCount { expected: usize, got: usize },
    #[error(transparent)]
    Learning(#[from] QError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub initial: GridState,
    pub destination: GridState,
}

/// Ground user with a fixed serving ABS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub x: f64,
    pub y: f64,
    pub serving_abs: usize,
}

impl UserSpec {
    pub fn position(&self) -> Position3D {
        Position3D::new(self.x, self.y, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    /// Sum-rate weight.
    pub beta1: f64,
    /// Distance-to-destination weight.
    pub beta2: f64,
    /// Proximity penalty.
    pub beta3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            beta1: 10.0,
            beta2: 0.25,
            beta3: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub area: AreaSpec,
    pub agents: Vec<AgentSpec>,
    pub users: Vec<UserSpec>,
    pub num_subchannels: usize,
    /// Per-ABS power budget, watts.
    pub p_max: f64,
    /// Minimum ABS separation, meters.
    pub d_min: f64,
    pub weights: RewardWeights,
    pub distance_metric: DistanceMetric,
    pub propagation: PropagationParams,
    pub fading: FadingModel,
    pub gbs: GbsSpec,
    /// Cruise speed, m/s. Only used to report the step duration.
    pub speed_mps: f64,
    pub allocator: SubgradientSchedule,
}

impl ScenarioConfig {
    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.area.validate() {
            out.push(e.to_string());
        }
        if self.agents.is_empty() {
            out.push("at least one ABS is required".into());
        }
        let area_ok = self.area.validate().is_ok();
        for (j, a) in self.agents.iter().enumerate() {
            for (what, s) in [("initial", a.initial), ("destination", a.destination)] {
                if area_ok && !self.area.contains(s) {
                    out.push(format!(
                        "abs {j}: {what} cell ({}, {}) outside the grid",
                        s.k1, s.k2
                    ));
                }
            }
        }
        for (k, u) in self.users.iter().enumerate() {
            if u.serving_abs >= self.agents.len() {
                out.push(format!(
                    "user {k}: serving ABS {} does not exist",
                    u.serving_abs
                ));
            }
            if !(u.x.is_finite() && u.y.is_finite()) {
                out.push(format!("user {k}: non-finite position"));
            }
        }
        for j in 0..self.agents.len() {
            if !self.users.iter().any(|u| u.serving_abs == j) {
                out.push(format!("abs {j} serves no users"));
            }
        }
        if self.num_subchannels == 0 {
            out.push("num_subchannels must be >= 1".into());
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            out.push("p_max must be > 0".into());
        }
        if !(self.d_min > 0.0) {
            out.push("d_min must be > 0".into());
        }
        for (name, b) in [
            ("beta1", self.weights.beta1),
            ("beta2", self.weights.beta2),
            ("beta3", self.weights.beta3),
        ] {
            if !(b >= 0.0 && b.is_finite()) {
                out.push(format!("{name} must be >= 0"));
            }
        }
        if let Err(e) = self.propagation.validate() {
            out.push(e.to_string());
        }
        if let Err(e) = self.gbs.validate() {
            out.push(format!("gbs: {e}"));
        }
        if !(self.speed_mps > 0.0) {
            out.push("speed must be > 0".into());
        }
        if self.allocator.max_iterations == 0 {
            out.push("allocator max_iterations must be >= 1".into());
        }
        if !(self.allocator.tolerance > 0.0) || !(self.allocator.step_scale > 0.0) {
            out.push("allocator tolerance and step scale must be > 0".into());
        }
        out
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(EnvError::InvalidScenario(p))
        }
    }
}

/// Reward components of one agent for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Sum-rate of the served users, bits/s/Hz.
    pub f1: f64,
    /// Distance to destination under the configured metric.
    pub f2: f64,
    /// 1 when another ABS is closer than `d_min`.
    pub f3: u8,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(weights: &RewardWeights, f1: f64, f2: f64, f3: u8) -> Self {
        let total = weights.beta1 * f1 - weights.beta2 * f2 - weights.beta3 * f3 as f64;
        Self { f1, f2, f3, total }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationSummary {
    pub sum_rate: f64,
    pub total_power: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub status: Convergence,
}

/// What one agent did and received in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub agent: usize,
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub position: Position3D,
    pub reward: RewardBreakdown,
    pub allocation: AllocationSummary,
    pub transition: Transition,
}

/// Mutable per-episode state.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub states: Vec<GridState>,
    pub active: Vec<bool>,
    /// Last radiated power per ABS and sub-channel.
    pub powers: Vec<Vec<f64>>,
}

impl EpisodeState {
    pub fn any_active(&self) -> bool {
        self.active.iter().any(|a| *a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub agents: Vec<AgentStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    /// Mean F1 over each agent's active steps.
    pub avg_sum_rate: Vec<f64>,
    /// Mean of `avg_sum_rate` over agents.
    pub mean_sum_rate: f64,
    pub steps_to_terminal: Vec<Option<usize>>,
    pub collision_steps: Vec<usize>,
    pub cumulative_reward: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub tables: Vec<QTable>,
    pub metrics: Vec<EpisodeMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationViolation {
    pub step: usize,
    pub first: usize,
    pub second: usize,
    pub distance: f64,
}

/// Synchronized greedy rollout of all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Cells visited by each agent, initial cell first, up to arrival or
    /// until a cycle was detected.
    pub paths: Vec<Vec<GridState>>,
    pub positions: Vec<Vec<Position3D>>,
    /// F1 after each move, fading disabled.
    pub sum_rates: Vec<Vec<f64>>,
    pub reached: Vec<bool>,
    /// States of the repeating loop for agents whose greedy policy cycles.
    pub cycles: Vec<Option<Vec<GridState>>>,
    pub min_separation: f64,
    pub violations: Vec<SeparationViolation>,
}

impl Rollout {
    pub fn all_reached(&self) -> bool {
        self.reached.iter().all(|r| *r)
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    config: ScenarioConfig,
    served: Vec<Vec<usize>>,
    user_positions: Vec<Position3D>,
    destinations: Vec<Position3D>,
}

impl Environment {
    pub fn new(config: ScenarioConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let served = (0..config.agents.len())
            .map(|j| {
                (0..config.users.len())
                    .filter(|k| config.users[*k].serving_abs == j)
                    .collect()
            })
            .collect();
        let user_positions = config.users.iter().map(UserSpec::position).collect();
        let destinations = config
            .agents
            .iter()
            .map(|a| geometry::cell_center(&config.area, a.destination).expect("validated"))
            .collect();
        Ok(Self {
            config,
            served,
            user_positions,
            destinations,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn num_agents(&self) -> usize {
        self.config.agents.len()
    }

    pub fn served_users(&self, j: usize) -> &[usize] {
        &self.served[j]
    }

    /// Same scenario with a different fading model.
    pub fn with_fading(&self, fading: FadingModel) -> Self {
        let mut env = self.clone();
        env.config.fading = fading;
        env
    }

    pub fn position(&self, s: GridState) -> Position3D {
        geometry::cell_center(&self.config.area, s).expect("state inside grid")
    }

    pub fn state_index(&self, s: GridState) -> usize {
        self.config.area.index_of(s)
    }

    /// Fresh tables with each agent's destination marked terminal.
    pub fn new_tables(&self, init: f64) -> Vec<QTable> {
        self.config
            .agents
            .iter()
            .map(|a| {
                QTable::new(
                    self.config.area.num_states(),
                    init,
                    &[self.state_index(a.destination)],
                )
            })
            .collect()
    }

    pub fn max_steps(&self, params: &LearningParams) -> usize {
        params
            .max_steps_per_episode
            .unwrap_or(4 * self.config.area.num_states())
    }

    pub fn reset(&self) -> EpisodeState {
        let n_sub = self.config.num_subchannels;
        let uniform = self.config.p_max / n_sub as f64;
        let active: Vec<bool> = self
            .config
            .agents
            .iter()
            .map(|a| a.initial != a.destination)
            .collect();
        EpisodeState {
            states: self.config.agents.iter().map(|a| a.initial).collect(),
            powers: active
                .iter()
                .map(|on| vec![if *on { uniform } else { 0.0 }; n_sub])
                .collect(),
            active,
        }
    }

    fn allocation_problem(
        &self,
        j: usize,
        realization: &ChannelRealization,
        prev_powers: &[Vec<f64>],
    ) -> AllocationProblem {
        let n_sub = self.config.num_subchannels;
        let users = &self.served[j];
        let gbs_power = self.config.gbs.active_power();
        let mut gains = Vec::with_capacity(users.len() * n_sub);
        let mut interference = Vec::with_capacity(users.len() * n_sub);
        for &k in users {
            for n in 0..n_sub {
                gains.push(realization.gain(j, k, n));
                interference.push(channel::interference(
                    realization,
                    prev_powers,
                    gbs_power,
                    j,
                    k,
                    n,
                ));
            }
        }
        AllocationProblem {
            num_users: users.len(),
            num_subchannels: n_sub,
            gains,
            interference,
            noise: self.config.propagation.noise_power,
            p_max: self.config.p_max,
        }
    }

    /// Move every agent that has an action, draw one realization at the new
    /// positions and score each mover. Agents without an action stay put.
    pub fn step_all<R: Rng + ?Sized>(
        &self,
        st: &mut EpisodeState,
        actions: &[Option<Action>],
        rng: &mut R,
    ) -> Vec<Option<AgentStep>> {
        let area = &self.config.area;
        let previous = st.states.clone();
        for (j, a) in actions.iter().enumerate() {
            if let (Some(a), true) = (a, st.active[j]) {
                st.states[j] = geometry::apply_action(area, st.states[j], *a);
            }
        }
        let positions: Vec<Position3D> = st.states.iter().map(|s| self.position(*s)).collect();
        let realization = channel::draw_realization(
            &positions,
            &self.user_positions,
            self.config.num_subchannels,
            &self.config.gbs,
            &self.config.propagation,
            self.config.fading,
            rng,
        )
        .expect("ABS altitude keeps every link distance positive");

        let prev_powers = st.powers.clone();
        let mut out = vec![None; self.num_agents()];
        for (j, a) in actions.iter().enumerate() {
            let Some(action) = *a else { continue };
            if !st.active[j] {
                continue;
            }
            let problem = self.allocation_problem(j, &realization, &prev_powers);
            let result = allocator::solve(&problem, &self.config.allocator);
            let f2 = self
                .config
                .distance_metric
                .measure(&positions[j], &self.destinations[j]);
            let crowded = positions.iter().enumerate().any(|(i, p)| {
                i != j && geometry::violates_separation(&positions[j], p, self.config.d_min)
            });
            let reward =
                RewardBreakdown::new(&self.config.weights, result.sum_rate, f2, crowded as u8);
            let terminal = st.states[j] == self.config.agents[j].destination;
            st.powers[j] = if terminal {
                vec![0.0; self.config.num_subchannels]
            } else {
                result.powers.clone()
            };
            st.active[j] = !terminal;
            out[j] = Some(AgentStep {
                agent: j,
                state: previous[j],
                action,
                next_state: st.states[j],
                position: positions[j],
                reward,
                allocation: AllocationSummary {
                    sum_rate: result.sum_rate,
                    total_power: result.total_power(),
                    lambda: result.lambda,
                    iterations: result.iterations,
                    status: result.status,
                },
                transition: Transition {
                    state: self.state_index(previous[j]),
                    action,
                    reward: reward.total,
                    next_state: self.state_index(st.states[j]),
                    terminal,
                },
            });
        }
        out
    }

    fn check_tables(&self, tables: &[QTable]) -> Result<(), EnvError> {
        if tables.len() != self.num_agents() {
            return Err(EnvError::TableCount {
                expected: self.num_agents(),
                got: tables.len(),
            });
        }
        Ok(())
    }

    fn run_loop(
        &self,
        tables: &mut [QTable],
        params: &LearningParams,
        epsilon: f64,
        streams: &mut EpisodeStreams,
        max_steps: usize,
        mut observe: impl FnMut(usize, &[Option<AgentStep>]),
    ) -> Result<(), EnvError> {
        let mut st = self.reset();
        for t in 0..max_steps {
            if !st.any_active() {
                break;
            }
            let mut actions = vec![None; self.num_agents()];
            for j in 0..self.num_agents() {
                if st.active[j] {
                    let s = self.state_index(st.states[j]);
                    actions[j] = Some(qlearning::select_action(
                        &tables[j],
                        s,
                        epsilon,
                        &mut streams.policy,
                    )?);
                }
            }
            let steps = self.step_all(&mut st, &actions, &mut streams.channel);
            for step in steps.iter().flatten() {
                qlearning::update(&mut tables[step.agent], &step.transition, params)?;
            }
            observe(t, &steps);
        }
        Ok(())
    }

    /// One learning episode from the initial cells. The trace holds every
    /// acting agent's step.
    pub fn run_episode(
        &self,
        tables: &mut [QTable],
        params: &LearningParams,
        episode: usize,
        master_seed: u64,
    ) -> Result<EpisodeTrace, EnvError> {
        self.check_tables(tables)?;
        let mut streams = EpisodeStreams::new(master_seed, episode as u64);
        let mut steps = Vec::new();
        self.run_loop(
            tables,
            params,
            params.epsilon_at(episode),
            &mut streams,
            self.max_steps(params),
            |t, s| {
                steps.push(StepRecord {
                    t,
                    agents: s.iter().flatten().cloned().collect(),
                });
            },
        )?;
        Ok(EpisodeTrace {
            episode,
            seed: master_seed,
            steps,
        })
    }

    /// Continue training existing tables for `params.max_episodes` episodes,
    /// numbering them from `first_episode`.
    pub fn train_from(
        &self,
        mut tables: Vec<QTable>,
        params: &LearningParams,
        master_seed: u64,
        first_episode: usize,
    ) -> Result<TrainingOutcome, EnvError> {
        params.validate()?;
        self.check_tables(&tables)?;
        let j_count = self.num_agents();
        let max_steps = self.max_steps(params);
        let mut metrics = Vec::with_capacity(params.max_episodes);
        for episode in first_episode..first_episode + params.max_episodes {
            let mut streams = EpisodeStreams::new(master_seed, episode as u64);
            let mut rate_sum = vec![0.0; j_count];
            let mut active_steps = vec![0usize; j_count];
            let mut arrived = vec![None; j_count];
            let mut collisions = vec![0usize; j_count];
            let mut reward_sum = vec![0.0; j_count];
            let mut steps = 0;
            let epsilon = params.epsilon_at(episode);
            self.run_loop(
                &mut tables,
                params,
                epsilon,
                &mut streams,
                max_steps,
                |t, s| {
                    steps = t + 1;
                    for step in s.iter().flatten() {
                        let j = step.agent;
                        rate_sum[j] += step.reward.f1;
                        active_steps[j] += 1;
                        collisions[j] += step.reward.f3 as usize;
                        reward_sum[j] += step.reward.total;
                        if step.transition.terminal {
                            arrived[j] = Some(t + 1);
                        }
                    }
                },
            )?;
            for (j, a) in self.config.agents.iter().enumerate() {
                if a.initial == a.destination {
                    arrived[j] = Some(0);
                }
                debug_assert!(tables[j]
                    .row(self.state_index(a.destination))
                    .iter()
                    .all(|v| *v == 0.0));
            }
            let avg: Vec<f64> = rate_sum
                .iter()
                .zip(&active_steps)
                .map(|(s, n)| if *n == 0 { 0.0 } else { s / *n as f64 })
                .collect();
            metrics.push(EpisodeMetrics {
                episode,
                steps,
                mean_sum_rate: avg.iter().sum::<f64>() / j_count as f64,
                avg_sum_rate: avg,
                steps_to_terminal: arrived,
                collision_steps: collisions,
                cumulative_reward: reward_sum,
            });
        }
        Ok(TrainingOutcome { tables, metrics })
    }

    /// Train fresh tables for `params.max_episodes` episodes.
    pub fn train(
        &self,
        params: &LearningParams,
        master_seed: u64,
    ) -> Result<TrainingOutcome, EnvError> {
        params.validate()?;
        self.train_from(self.new_tables(params.q_init), params, master_seed, 0)
    }

    /// Greedy rollout (lowest-index ties) of every agent from its initial
    /// cell with fading disabled, all agents moving in lockstep.
    pub fn extract_trajectory(&self, tables: &[QTable]) -> Result<Rollout, EnvError> {
        self.check_tables(tables)?;
        let env = self.with_fading(FadingModel::None);
        let j_count = self.num_agents();
        let policies: Vec<Vec<Action>> = tables.iter().map(qlearning::greedy_policy).collect();
        let mut st = env.reset();
        let mut paths: Vec<Vec<GridState>> = st.states.iter().map(|s| vec![*s]).collect();
        let mut sum_rates = vec![Vec::new(); j_count];
        let mut cycles: Vec<Option<Vec<GridState>>> = vec![None; j_count];
        let mut reached: Vec<bool> = st.active.iter().map(|a| !a).collect();
        let mut min_separation = f64::INFINITY;
        let mut violations = Vec::new();
        // Fading is off, so the generator is never drawn from.
        let mut rng = crate::rng::stream(0, 0, crate::rng::Purpose::Channel);

        let mut check_separation = |step: usize, states: &[GridState]| {
            for a in 0..j_count {
                for b in a + 1..j_count {
                    let d =
                        geometry::pairwise_dist(&env.position(states[a]), &env.position(states[b]));
                    min_separation = min_separation.min(d);
                    if d < env.config.d_min {
                        violations.push(SeparationViolation {
                            step,
                            first: a,
                            second: b,
                            distance: d,
                        });
                    }
                }
            }
        };
        check_separation(0, &st.states);

        let cap = 4 * self.config.area.num_states();
        for t in 1..=cap {
            let moving: Vec<bool> = (0..j_count)
                .map(|j| st.active[j] && cycles[j].is_none())
                .collect();
            if !moving.iter().any(|m| *m) {
                break;
            }
            let actions: Vec<Option<Action>> = (0..j_count)
                .map(|j| st.active[j].then(|| policies[j][env.state_index(st.states[j])]))
                .collect();
            let steps = env.step_all(&mut st, &actions, &mut rng);
            check_separation(t, &st.states);
            for step in steps.iter().flatten() {
                let j = step.agent;
                if !moving[j] {
                    continue;
                }
                if let Some(first) = paths[j].iter().position(|s| *s == step.next_state) {
                    cycles[j] = Some(paths[j][first..].to_vec());
                    continue;
                }
                paths[j].push(step.next_state);
                sum_rates[j].push(step.reward.f1);
                if step.transition.terminal {
                    reached[j] = true;
                }
            }
        }
        let positions = paths
            .iter()
            .map(|p| p.iter().map(|s| env.position(*s)).collect())
            .collect();
        Ok(Rollout {
            paths,
            positions,
            sum_rates,
            reached,
            cycles,
            min_separation,
            violations,
        })
    }

    /// Tabulate the single-agent scenario as a deterministic MDP (fading
    /// disabled). Reward of `(s, a)` is the reward collected on arriving at
    /// the successor cell.
    pub fn single_agent_world(&self) -> Result<DeterministicWorld, EnvError> {
        if self.num_agents() != 1 {
            return Err(EnvError::NotSingleAgent(self.num_agents()));
        }
        let env = self.with_fading(FadingModel::None);
        let area = &self.config.area;
        let destination = self.config.agents[0].destination;
        let n = area.num_states();
        let mut next = vec![0; n * Action::COUNT];
        let mut reward = vec![0.0; n * Action::COUNT];
        let mut terminal = vec![false; n];
        let mut rng = crate::rng::stream(0, 0, crate::rng::Purpose::Channel);
        for s in area.states() {
            let i = area.index_of(s);
            if s == destination {
                terminal[i] = true;
                next[i * 4..i * 4 + 4].fill(i);
                continue;
            }
            for a in Action::ALL {
                let mut st = env.reset();
                st.states[0] = s;
                st.active[0] = true;
                let step = env.step_all(&mut st, &[Some(a)], &mut rng)[0]
                    .clone()
                    .expect("agent moved");
                next[i * 4 + a.index()] = step.transition.next_state;
                reward[i * 4 + a.index()] = step.reward.total;
            }
        }
        Ok(DeterministicWorld {
            num_states: n,
            next,
            reward,
            terminal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(agents: Vec<AgentSpec>, users: Vec<UserSpec>) -> ScenarioConfig {
        ScenarioConfig {
            area: AreaSpec::new((0.0, 500.0), (0.0, 500.0), 5, 100.0).unwrap(),
            agents,
            users,
            num_subchannels: 2,
            p_max: 0.2,
            d_min: 5.0,
            weights: RewardWeights::default(),
            distance_metric: DistanceMetric::Euclidean,
            propagation: PropagationParams::default(),
            fading: FadingModel::Rayleigh,
            gbs: GbsSpec::default(),
            speed_mps: 10.0,
            allocator: SubgradientSchedule::default(),
        }
    }

    fn user(x: f64, y: f64, j: usize) -> UserSpec {
        UserSpec {
            x,
            y,
            serving_abs: j,
        }
    }

    fn agent(i: (u32, u32), d: (u32, u32)) -> AgentSpec {
        AgentSpec {
            initial: GridState::new(i.0, i.1),
            destination: GridState::new(d.0, d.1),
        }
    }

    #[test]
    fn arrival_is_terminal_without_collision() {
        let env = Environment::new(scenario(
            vec![agent((2, 3), (3, 3))],
            vec![user(120.0, 80.0, 0)],
        ))
        .unwrap();
        let mut st = env.reset();
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Channel);
        let out = env.step_all(&mut st, &[Some(Action::Right)], &mut rng);
        let step = out[0].as_ref().unwrap();
        assert!(step.transition.terminal);
        assert_eq!(step.reward.f3, 0);
        assert_eq!(step.reward.f2, 0.0);
        assert!(!st.active[0]);
        assert_eq!(st.powers[0], vec![0.0, 0.0]);
        let w = env.config().weights;
        assert_eq!(
            step.reward.total,
            w.beta1 * step.reward.f1 - w.beta2 * step.reward.f2 - w.beta3 * step.reward.f3 as f64
        );
    }

    #[test]
    fn shared_cell_flags_both() {
        let env = Environment::new(scenario(
            vec![agent((2, 2), (5, 5)), agent((4, 2), (1, 5))],
            vec![user(10.0, 10.0, 0), user(400.0, 400.0, 1)],
        ))
        .unwrap();
        let mut st = env.reset();
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Channel);
        let out = env.step_all(
            &mut st,
            &[Some(Action::Right), Some(Action::Left)],
            &mut rng,
        );
        assert_eq!(st.states[0], st.states[1]);
        assert_eq!(out[0].as_ref().unwrap().reward.f3, 1);
        assert_eq!(out[1].as_ref().unwrap().reward.f3, 1);
    }

    #[test]
    fn stale_powers_drive_interference() {
        let cfg = scenario(
            vec![agent((1, 1), (5, 5)), agent((5, 1), (1, 5))],
            vec![user(10.0, 10.0, 0), user(400.0, 10.0, 1)],
        );
        let env = Environment::new(ScenarioConfig {
            fading: FadingModel::None,
            ..cfg
        })
        .unwrap();
        let st = env.reset();
        assert_eq!(st.powers, vec![vec![0.1, 0.1], vec![0.1, 0.1]]);
        let positions: Vec<Position3D> = st.states.iter().map(|s| env.position(*s)).collect();
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Channel);
        let r = channel::draw_realization(
            &positions,
            &env.user_positions,
            2,
            &GbsSpec::default(),
            &env.config.propagation,
            FadingModel::None,
            &mut rng,
        )
        .unwrap();
        let p = env.allocation_problem(0, &r, &st.powers);
        assert_eq!(p.interference(0, 1), 0.1 * r.gain(1, 0, 1));
    }

    #[test]
    fn single_abs_sees_no_interference() {
        let env = Environment::new(scenario(
            vec![agent((1, 1), (5, 5))],
            vec![user(10.0, 10.0, 0), user(300.0, 50.0, 0)],
        ))
        .unwrap();
        let mut st = env.reset();
        let positions: Vec<Position3D> = st.states.iter().map(|s| env.position(*s)).collect();
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Channel);
        let r = channel::draw_realization(
            &positions,
            &env.user_positions,
            2,
            &GbsSpec::default(),
            &env.config.propagation,
            FadingModel::Rayleigh,
            &mut rng,
        )
        .unwrap();
        assert!(env
            .allocation_problem(0, &r, &st.powers)
            .interference
            .iter()
            .all(|i| *i == 0.0));
        for _ in 0..20 {
            let out = env.step_all(&mut st, &[Some(Action::Forward)], &mut rng);
            if let Some(step) = &out[0] {
                assert_eq!(step.reward.f3, 0);
            }
        }
    }

    #[test]
    fn boundary_move_still_scored() {
        let env = Environment::new(scenario(
            vec![agent((1, 1), (5, 5))],
            vec![user(10.0, 10.0, 0)],
        ))
        .unwrap();
        let mut st = env.reset();
        let mut rng = crate::rng::stream(1, 0, crate::rng::Purpose::Channel);
        let out = env.step_all(&mut st, &[Some(Action::Left)], &mut rng);
        let step = out[0].as_ref().unwrap();
        assert_eq!(step.next_state, GridState::new(1, 1));
        assert!(step.reward.f1 > 0.0);
        assert!(!step.transition.terminal);
    }

    #[test]
    fn zero_step_cap_gives_empty_trace() {
        let env = Environment::new(scenario(
            vec![agent((1, 1), (5, 5))],
            vec![user(10.0, 10.0, 0)],
        ))
        .unwrap();
        let mut tables = env.new_tables(0.0);
        let params = LearningParams {
            max_steps_per_episode: Some(0),
            ..LearningParams::default()
        };
        let trace = env.run_episode(&mut tables, &params, 0, 3).unwrap();
        assert!(trace.steps.is_empty());
        assert!(tables[0].values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn start_at_destination() {
        let env = Environment::new(scenario(
            vec![agent((3, 3), (3, 3))],
            vec![user(10.0, 10.0, 0)],
        ))
        .unwrap();
        let tables = env.new_tables(0.0);
        let r = env.extract_trajectory(&tables).unwrap();
        assert_eq!(r.paths[0], vec![GridState::new(3, 3)]);
        assert!(r.all_reached());
        let params = LearningParams {
            max_episodes: 1,
            ..LearningParams::default()
        };
        let out = env.train(&params, 1).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].steps, 0);
        assert_eq!(out.metrics[0].steps_to_terminal, vec![Some(0)]);
    }

    #[test]
    fn greedy_cycle_is_reported() {
        let env = Environment::new(scenario(
            vec![agent((1, 1), (5, 5))],
            vec![user(10.0, 10.0, 0)],
        ))
        .unwrap();
        // All-zero table: greedy picks Left forever at the west edge.
        let tables = env.new_tables(0.0);
        let r = env.extract_trajectory(&tables).unwrap();
        assert!(!r.reached[0]);
        assert_eq!(r.cycles[0], Some(vec![GridState::new(1, 1)]));
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut cfg = scenario(vec![agent((1, 1), (9, 9))], vec![user(10.0, 10.0, 3)]);
        cfg.weights.beta3 = -1.0;
        cfg.d_min = 0.0;
        let problems = cfg.problems();
        assert!(problems.len() >= 5, "{problems:?}");
        assert!(Environment::new(cfg).is_err());
    }

    #[test]
    fn world_requires_single_agent() {
        let env = Environment::new(scenario(
            vec![agent((1, 1), (5, 5)), agent((5, 1), (1, 5))],
            vec![user(10.0, 10.0, 0), user(400.0, 10.0, 1)],
        ))
        .unwrap();
        assert!(matches!(
            env.single_agent_world(),
            Err(EnvError::NotSingleAgent(2))
        ));
    }
}
