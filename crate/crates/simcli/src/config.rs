//! Run configuration file.
//!
//! TOML with one table per concern. Every key is optional; a missing key
//! takes the reference-scenario default. Physical quantities carry their
//! unit in the key name.
//!
//! ```toml
//! [run]
//! seed = 1
//! episodes = 2000
//!
//! [radio]
//! p_max_watts = 0.2
//!
//! [[abs]]
//! initial = [1, 1]
//! destination = [30, 12]
//! ```

use std::path::Path;

use abs_traj::allocator::SubgradientSchedule;
use abs_traj::channel::{FadingModel, GbsSpec, PropagationParams};
use abs_traj::environment::{AgentSpec, RewardWeights, ScenarioConfig, UserSpec};
use abs_traj::geometry::{AreaSpec, DistanceMetric, GridState, Position3D};
use abs_traj::qlearning::{LearningParams, LearningRate};
use abs_traj::rng::{self, Purpose};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed for exploration and fading.
    pub seed: u64,
    pub episodes: usize,
    /// Omitted means `4·M²`.
    pub max_steps_per_episode: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            episodes: 2000,
            max_steps_per_episode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaSection {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
    pub cells_per_axis: u32,
    pub altitude_m: f64,
    pub center_offset: bool,
}

impl Default for AreaSection {
    fn default() -> Self {
        Self {
            x_min_m: 0.0,
            x_max_m: 3000.0,
            y_min_m: 0.0,
            y_max_m: 3000.0,
            cells_per_axis: 30,
            altitude_m: 100.0,
            center_offset: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingKind {
    Rayleigh,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub num_subchannels: usize,
    pub carrier_frequency_hz: f64,
    pub p_max_watts: f64,
    pub noise_power_watts: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub eta_los_linear: f64,
    pub eta_nlos_linear: f64,
    pub speed_of_light_mps: f64,
    pub fading: FadingKind,
}

impl Default for RadioSection {
    fn default() -> Self {
        let p = PropagationParams::default();
        Self {
            num_subchannels: 8,
            carrier_frequency_hz: p.carrier_frequency_hz,
            p_max_watts: 0.2,
            noise_power_watts: p.noise_power,
            los_a: p.los_a,
            los_b: p.los_b,
            eta_los_linear: p.eta_los,
            eta_nlos_linear: p.eta_nlos,
            speed_of_light_mps: p.speed_of_light,
            fading: FadingKind::Rayleigh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbsSection {
    pub enabled: bool,
    pub x_m: f64,
    pub y_m: f64,
    pub height_m: f64,
    pub power_per_subchannel_watts: f64,
}

impl Default for GbsSection {
    fn default() -> Self {
        let g = GbsSpec::default();
        Self {
            enabled: g.enabled,
            x_m: g.position.x,
            y_m: g.position.y,
            height_m: g.position.z,
            power_per_subchannel_watts: g.power_per_subchannel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MobilitySection {
    pub speed_mps: f64,
    pub d_min_m: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            speed_mps: 10.0,
            d_min_m: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// 1 = meters, 2 = square meters.
    pub distance_exponent: u8,
}

impl Default for RewardSection {
    fn default() -> Self {
        let w = RewardWeights::default();
        Self {
            beta1: w.beta1,
            beta2: w.beta2,
            beta3: w.beta3,
            distance_exponent: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSchedule {
    Constant,
    VisitCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub learning_rate_schedule: RateSchedule,
    /// Used by the constant schedule.
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub q_init: f64,
}

impl Default for LearningSection {
    fn default() -> Self {
        let p = LearningParams::default();
        let rate = match p.learning_rate {
            LearningRate::Constant(a) => a,
            LearningRate::VisitCount => 0.5,
        };
        Self {
            learning_rate_schedule: RateSchedule::Constant,
            learning_rate: rate,
            gamma: p.gamma,
            epsilon: p.epsilon,
            epsilon_decay: p.epsilon_decay,
            epsilon_min: p.epsilon_min,
            q_init: p.q_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocatorSection {
    pub step_scale: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for AllocatorSection {
    fn default() -> Self {
        let s = SubgradientSchedule::default();
        Self {
            step_scale: s.step_scale,
            max_iterations: s.max_iterations,
            tolerance: s.tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsEntry {
    pub initial: [u32; 2],
    pub destination: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserEntry {
    pub x_m: f64,
    pub y_m: f64,
    pub serving_abs: usize,
}

/// Either an explicit user list or a seeded uniform layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UsersSection {
    /// Number of uniformly placed users when `fixed` is empty. The first
    /// `count / J` go to ABS 0, the next block to ABS 1, and so on.
    pub count: usize,
    pub layout_seed: u64,
    pub fixed: Vec<UserEntry>,
}

impl Default for UsersSection {
    fn default() -> Self {
        Self {
            count: 20,
            layout_seed: 2024,
            fixed: Vec::new(),
        }
    }
}

fn default_abs() -> Vec<AbsEntry> {
    vec![
        AbsEntry {
            initial: [1, 1],
            destination: [30, 12],
        },
        AbsEntry {
            initial: [1, 30],
            destination: [30, 19],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub area: AreaSection,
    pub radio: RadioSection,
    pub gbs: GbsSection,
    pub mobility: MobilitySection,
    pub reward: RewardSection,
    pub learning: LearningSection,
    pub allocator: AllocatorSection,
    pub users: UsersSection,
    pub abs: Vec<AbsEntry>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            area: AreaSection::default(),
            radio: RadioSection::default(),
            gbs: GbsSection::default(),
            mobility: MobilitySection::default(),
            reward: RewardSection::default(),
            learning: LearningSection::default(),
            allocator: AllocatorSection::default(),
            users: UsersSection::default(),
            abs: default_abs(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: None,
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.with_path(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn area(&self) -> AreaSpec {
        let a = &self.area;
        AreaSpec {
            x_min: a.x_min_m,
            x_max: a.x_max_m,
            y_min: a.y_min_m,
            y_max: a.y_max_m,
            cells_per_axis: a.cells_per_axis,
            altitude: a.altitude_m,
            center_offset: a.center_offset,
        }
    }

    /// Users as configured, or drawn uniformly over the area from the
    /// layout seed.
    pub fn users(&self) -> Vec<UserSpec> {
        if !self.users.fixed.is_empty() {
            return self
                .users
                .fixed
                .iter()
                .map(|u| UserSpec {
                    x: u.x_m,
                    y: u.y_m,
                    serving_abs: u.serving_abs,
                })
                .collect();
        }
        let a = &self.area;
        if !(a.x_max_m > a.x_min_m && a.y_max_m > a.y_min_m) || self.abs.is_empty() {
            return Vec::new();
        }
        let mut rng = rng::stream(self.users.layout_seed, 0, Purpose::Layout);
        let count = self.users.count;
        let j = self.abs.len();
        (0..count)
            .map(|k| UserSpec {
                x: rng.random_range(a.x_min_m..a.x_max_m),
                y: rng.random_range(a.y_min_m..a.y_max_m),
                serving_abs: k * j / count,
            })
            .collect()
    }

    /// Checks that only make sense on the file form.
    fn file_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.run.episodes == 0 {
            out.push("run.episodes must be >= 1".into());
        }
        if DistanceMetric::from_exponent(self.reward.distance_exponent).is_none() {
            out.push(format!(
                "reward.distance_exponent must be 1 or 2, got {}",
                self.reward.distance_exponent
            ));
        }
        if self.users.fixed.is_empty() && self.users.count < self.abs.len() {
            out.push(format!(
                "users.count = {} leaves some ABS without users ({} ABSs)",
                self.users.count,
                self.abs.len()
            ));
        }
        let l = &self.learning;
        if self.learning.learning_rate_schedule == RateSchedule::Constant
            && !(l.learning_rate > 0.0 && l.learning_rate <= 1.0)
        {
            out.push("learning.learning_rate must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&l.gamma) || l.gamma.is_nan() {
            out.push("learning.gamma must be in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&l.epsilon) || l.epsilon.is_nan() {
            out.push("learning.epsilon must be in [0, 1]".into());
        }
        if !(l.epsilon_decay > 0.0 && l.epsilon_decay <= 1.0) {
            out.push("learning.epsilon_decay must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&l.epsilon_min) || l.epsilon_min.is_nan() {
            out.push("learning.epsilon_min must be in [0, 1]".into());
        }
        if !l.q_init.is_finite() {
            out.push("learning.q_init must be finite".into());
        }
        out
    }

    pub fn scenario(&self) -> ScenarioConfig {
        let r = &self.radio;
        let g = &self.gbs;
        ScenarioConfig {
            area: self.area(),
            agents: self
                .abs
                .iter()
                .map(|a| AgentSpec {
                    initial: GridState::new(a.initial[0], a.initial[1]),
                    destination: GridState::new(a.destination[0], a.destination[1]),
                })
                .collect(),
            users: self.users(),
            num_subchannels: r.num_subchannels,
            p_max: r.p_max_watts,
            d_min: self.mobility.d_min_m,
            weights: RewardWeights {
                beta1: self.reward.beta1,
                beta2: self.reward.beta2,
                beta3: self.reward.beta3,
            },
            distance_metric: DistanceMetric::from_exponent(self.reward.distance_exponent)
                .unwrap_or_default(),
            propagation: PropagationParams {
                los_a: r.los_a,
                los_b: r.los_b,
                eta_los: r.eta_los_linear,
                eta_nlos: r.eta_nlos_linear,
                carrier_frequency_hz: r.carrier_frequency_hz,
                speed_of_light: r.speed_of_light_mps,
                noise_power: r.noise_power_watts,
            },
            fading: match r.fading {
                FadingKind::Rayleigh => FadingModel::Rayleigh,
                FadingKind::None => FadingModel::None,
            },
            gbs: GbsSpec {
                enabled: g.enabled,
                position: Position3D::new(g.x_m, g.y_m, g.height_m),
                power_per_subchannel: g.power_per_subchannel_watts,
            },
            speed_mps: self.mobility.speed_mps,
            allocator: SubgradientSchedule {
                step_scale: self.allocator.step_scale,
                max_iterations: self.allocator.max_iterations,
                tolerance: self.allocator.tolerance,
                record_trace: false,
            },
        }
    }

    pub fn learning(&self) -> LearningParams {
        let l = &self.learning;
        LearningParams {
            learning_rate: match l.learning_rate_schedule {
                RateSchedule::Constant => LearningRate::Constant(l.learning_rate),
                RateSchedule::VisitCount => LearningRate::VisitCount,
            },
            gamma: l.gamma,
            epsilon: l.epsilon,
            epsilon_decay: l.epsilon_decay,
            epsilon_min: l.epsilon_min,
            max_episodes: self.run.episodes,
            max_steps_per_episode: self.run.max_steps_per_episode,
            q_init: l.q_init,
        }
    }

    /// Every violated constraint, one entry each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = self.file_problems();
        out.extend(self.scenario().problems());
        out
    }

    pub fn validate(&self) -> Result<(ScenarioConfig, LearningParams), CliError> {
        let problems = self.problems();
        if !problems.is_empty() {
            return Err(CliError::Validation(problems));
        }
        Ok((self.scenario(), self.learning()))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        let (s, l) = c.validate().unwrap();
        assert_eq!(s.area.num_states(), 900);
        assert_eq!(s.agents.len(), 2);
        assert_eq!(s.users.len(), 20);
        assert_eq!(s.users.iter().filter(|u| u.serving_abs == 0).count(), 10);
        assert_eq!(s.num_subchannels, 8);
        assert_eq!(s.p_max, 0.2);
        assert_eq!(s.d_min, 5.0);
        assert_eq!(
            (s.weights.beta1, s.weights.beta2, s.weights.beta3),
            (10.0, 0.25, 1000.0)
        );
        assert_eq!(s.area.altitude, 100.0);
        assert_eq!(s.propagation.carrier_frequency_hz, 2e9);
        assert_eq!((s.propagation.los_a, s.propagation.los_b), (5.0, 0.5));
        assert_eq!((s.propagation.eta_los, s.propagation.eta_nlos), (1.0, 20.0));
        assert_eq!(s.speed_mps, 10.0);
        assert_eq!((l.gamma, l.epsilon, l.max_episodes), (0.9, 0.1, 2000));
    }

    #[test]
    fn error_reports_line() {
        let err = Config::from_toml("[run]\nseed = 1\nepisodes = \"many\"\n").unwrap_err();
        match err {
            CliError::Parse { line, .. } => assert_eq!(line, Some(3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(Config::from_toml("[radio]\np_max = 0.2\n").is_err());
    }
}
