//! Joint power and sub-channel allocation for one ABS.
//!
//! The relaxed problem decomposes over sub-channels once the power budget is
//! dualized: for a fixed multiplier `λ` every sub-channel picks the user with
//! the largest `Ψ` score and water-fills to level `1/(λ ln 2)`. The outer loop
//! moves `λ` along the budget subgradient until the budget is met.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("invalid allocation problem: {0}")]
    InvalidProblem(String),
    #[error("dual multiplier must be > 0, got {0}")]
    NonPositiveLambda(f64),
    #[error("instance too large for exhaustive search: {0} candidates (limit {1})")]
    TooLarge(u128, u128),
}

/// Per-ABS allocation inputs. Matrices are flat `[k][n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    pub num_users: usize,
    pub num_subchannels: usize,
    pub gains: Vec<f64>,
    pub interference: Vec<f64>,
    pub noise: f64,
    pub p_max: f64,
}

impl AllocationProblem {
    pub fn new(
        num_users: usize,
        num_subchannels: usize,
        gains: Vec<f64>,
        interference: Vec<f64>,
        noise: f64,
        p_max: f64,
    ) -> Result<Self, AllocError> {
        let p = Self {
            num_users,
            num_subchannels,
            gains,
            interference,
            noise,
            p_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Interference-free instance.
    pub fn without_interference(
        num_users: usize,
        num_subchannels: usize,
        gains: Vec<f64>,
        noise: f64,
        p_max: f64,
    ) -> Result<Self, AllocError> {
        let zeros = vec![0.0; gains.len()];
        Self::new(num_users, num_subchannels, gains, zeros, noise, p_max)
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        let bad = |m: String| Err(AllocError::InvalidProblem(m));
        if self.num_users == 0 || self.num_subchannels == 0 {
            return bad("need at least one user and one sub-channel".into());
        }
        let cells = self.num_users * self.num_subchannels;
        if self.gains.len() != cells || self.interference.len() != cells {
            return bad(format!("expected {cells} gain and interference entries"));
        }
        if let Some(g) = self.gains.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("gain {g} is not positive and finite"));
        }
        if let Some(i) = self
            .interference
            .iter()
            .find(|i| !(**i >= 0.0 && i.is_finite()))
        {
            return bad(format!("interference {i} is negative or non-finite"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise power must be > 0".into());
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad("power budget must be > 0".into());
        }
        Ok(())
    }

    #[inline]
    pub fn gain(&self, k: usize, n: usize) -> f64 {
        self.gains[k * self.num_subchannels + n]
    }

    #[inline]
    pub fn interference(&self, k: usize, n: usize) -> f64 {
        self.interference[k * self.num_subchannels + n]
    }

    /// Noise-plus-interference over gain, the water-filling floor.
    #[inline]
    pub fn floor(&self, k: usize, n: usize) -> f64 {
        (self.interference(k, n) + self.noise) / self.gain(k, n)
    }

    pub fn rate(&self, k: usize, n: usize, power: f64) -> f64 {
        (1.0 + power / self.floor(k, n)).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientSchedule {
    /// Multiplies the natural step scale `λ₀ / P_max`; `α(l) = α₀ / l`.
    pub step_scale: f64,
    pub max_iterations: usize,
    /// Budget slack tolerance relative to `P_max`.
    pub tolerance: f64,
    /// Keep the λ sequence in the result.
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SubgradientSchedule {
    fn default() -> Self {
        Self {
            step_scale: 1.0,
            max_iterations: 500,
            tolerance: 1e-6,
            record_trace: false,
        }
    }
}

impl SubgradientSchedule {
    pub fn step_size(&self, alpha0: f64, l: usize) -> f64 {
        alpha0 * self.step_scale / l as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convergence {
    /// Budget met within tolerance by a dual iterate.
    Converged,
    /// The budget function jumps across its root because the winning user
    /// flips there. The result is the best of the last feasible iterate and
    /// full-budget water-filling on the assignments either side of the jump.
    PrimalRecovery,
    /// Iteration limit hit; best feasible iterate returned.
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `P_max - Σ P`, watts. Non-negative for feasible results.
    pub budget_slack: f64,
    /// `|λ · (P_max - Σ P)|`.
    pub complementary_slackness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    /// User served on each sub-channel.
    pub assignment: Vec<Option<usize>>,
    pub powers: Vec<f64>,
    /// bits/s/Hz.
    pub sum_rate: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub status: Convergence,
    pub kkt: KktResiduals,
    pub lambda_trace: Vec<f64>,
}

impl AllocationResult {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn converged(&self) -> bool {
        self.status != Convergence::MaxIterations
    }
}

/// `[1/(λ ln2) - (I + σ²)/g]⁺`.
pub fn waterfill_power(
    lambda: f64,
    gain: f64,
    interference: f64,
    noise: f64,
) -> Result<f64, AllocError> {
    if !(lambda > 0.0) {
        return Err(AllocError::NonPositiveLambda(lambda));
    }
    Ok(waterfill_unchecked(lambda, (interference + noise) / gain))
}

#[inline]
fn waterfill_unchecked(lambda: f64, floor: f64) -> f64 {
    (1.0 / (LN2 * lambda) - floor).max(0.0)
}

/// Sub-channel assignment score:
/// `log₂(1 + x) - x / ((1 + x) ln 2)` with `x = P g / (I + σ²)`.
pub fn psi_metric(power: f64, gain: f64, interference: f64, noise: f64) -> f64 {
    psi_from_snr(power * gain / (interference + noise))
}

#[inline]
fn psi_from_snr(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x.ln_1p() / LN2 - x / ((1.0 + x) * LN2)
}

/// Winner and water-filled power of every sub-channel at one multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SubchannelChoice {
    pub users: Vec<usize>,
    pub powers: Vec<f64>,
    pub psi: Vec<f64>,
}

impl SubchannelChoice {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// For each sub-channel pick the user with the largest `Ψ`, lowest index on
/// ties, and give it its water-filled power at `λ`.
pub fn assign_subchannels(
    lambda: f64,
    problem: &AllocationProblem,
) -> Result<SubchannelChoice, AllocError> {
    if !(lambda > 0.0) {
        return Err(AllocError::NonPositiveLambda(lambda));
    }
    Ok(assign_unchecked(lambda, problem))
}

fn assign_unchecked(lambda: f64, problem: &AllocationProblem) -> SubchannelChoice {
    let n_sub = problem.num_subchannels;
    let mut choice = SubchannelChoice {
        users: vec![0; n_sub],
        powers: vec![0.0; n_sub],
        psi: vec![0.0; n_sub],
    };
    let level = 1.0 / (LN2 * lambda);
    for n in 0..n_sub {
        let mut best = (0usize, f64::NEG_INFINITY, 0.0);
        for k in 0..problem.num_users {
            let floor = problem.floor(k, n);
            let p = (level - floor).max(0.0);
            let psi = psi_from_snr(p / floor);
            if psi > best.1 {
                best = (k, psi, p);
            }
        }
        choice.users[n] = best.0;
        choice.psi[n] = best.1;
        choice.powers[n] = best.2;
    }
    choice
}

/// `Σ_n log₂(1 + P_n g / (I + σ²))` over assigned sub-channels.
pub fn sum_rate(assignment: &[Option<usize>], powers: &[f64], problem: &AllocationProblem) -> f64 {
    assignment
        .iter()
        .zip(powers)
        .enumerate()
        .filter_map(|(n, (k, p))| k.map(|k| problem.rate(k, n, *p)))
        .sum()
}

/// One projected subgradient step on the budget multiplier.
pub fn subgradient_step(lambda: f64, step: f64, p_max: f64, total_power: f64) -> f64 {
    (lambda - step * (p_max - total_power)).max(0.0)
}

/// Optimal water-filling for a fixed assignment, by sorting the floors.
/// Returns the water level and per-channel powers.
fn waterfill_fixed(floors: &[f64], p_max: f64) -> (f64, Vec<f64>) {
    let mut sorted: Vec<f64> = floors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut level = sorted[0] + p_max;
    for (m, c) in sorted.iter().enumerate() {
        prefix += c;
        let candidate = (p_max + prefix) / (m + 1) as f64;
        let next_floor = sorted.get(m + 1).copied().unwrap_or(f64::INFINITY);
        if candidate <= next_floor {
            level = candidate;
            break;
        }
    }
    let mut powers: Vec<f64> = floors.iter().map(|c| (level - c).max(0.0)).collect();
    // Rounding can overshoot the budget by an ulp or two.
    let total: f64 = powers.iter().sum();
    if total > p_max {
        let scale = p_max / total;
        powers.iter_mut().for_each(|p| *p *= scale);
    }
    (level, powers)
}

struct Iterate {
    lambda: f64,
    choice: SubchannelChoice,
    rate: f64,
}

/// Dual subgradient solve of the per-ABS allocation problem.
///
/// Step sizes follow `α(l) = α₀ / l`. Every evaluated multiplier also
/// tightens a bracket around the root of the budget function; a step that
/// would leave the bracket, or a bracket that stops shrinking, falls back to
/// the bracket midpoint.
pub fn solve(problem: &AllocationProblem, schedule: &SubgradientSchedule) -> AllocationResult {
    let n_sub = problem.num_subchannels;
    let p_max = problem.p_max;
    let tol = schedule.tolerance * p_max;

    // Above this multiplier every power is zero.
    let lambda_zero = (0..problem.num_users)
        .flat_map(|k| (0..n_sub).map(move |n| (k, n)))
        .map(|(k, n)| 1.0 / (LN2 * problem.floor(k, n)))
        .fold(0.0, f64::max);
    let mean_best_floor = (0..n_sub)
        .map(|n| {
            (0..problem.num_users)
                .map(|k| problem.floor(k, n))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / n_sub as f64;
    let lambda0 = (1.0 / (LN2 * (p_max / n_sub as f64 + mean_best_floor))).min(lambda_zero);
    let alpha0 = lambda0 / p_max;

    let mut lo = 0.0_f64;
    let mut hi = lambda_zero;
    let mut lo_choice: Option<SubchannelChoice> = None;
    let mut best: Option<Iterate> = None;
    let mut trace = Vec::new();
    let mut lambda = lambda0;
    let mut widths = [f64::INFINITY; 2];
    let mut status = Convergence::MaxIterations;
    let mut iterations = 0;

    for l in 1..=schedule.max_iterations {
        iterations = l;
        if schedule.record_trace {
            trace.push(lambda);
        }
        let choice = assign_unchecked(lambda, problem);
        let total = choice.total_power();
        let slack = p_max - total;
        if slack >= 0.0 {
            let rate = choice_rate(&choice, problem);
            if best.as_ref().is_none_or(|b| rate > b.rate) {
                best = Some(Iterate {
                    lambda,
                    choice: choice.clone(),
                    rate,
                });
            }
            hi = hi.min(lambda);
            if slack <= tol {
                status = Convergence::Converged;
                break;
            }
        } else {
            lo = lo.max(lambda);
            lo_choice = Some(choice);
        }
        if hi - lo <= 1e-14 * hi {
            status = Convergence::PrimalRecovery;
            break;
        }

        let mut next = subgradient_step(lambda, schedule.step_size(alpha0, l), p_max, total);
        let width = hi - lo;
        let stalled = width > 0.5 * widths[1];
        if !(next > lo && next < hi) || stalled {
            next = if lo > 0.0 { 0.5 * (lo + hi) } else { 0.5 * hi };
        }
        widths = [width, widths[0]];
        lambda = next;
    }

    let best = best.unwrap_or_else(|| {
        // Only reachable when no iterate was feasible within the limit.
        let choice = assign_unchecked(lambda_zero, problem);
        let rate = choice_rate(&choice, problem);
        Iterate {
            lambda: lambda_zero,
            choice,
            rate,
        }
    });

    let budget_slack = p_max - best.choice.total_power();
    if status != Convergence::Converged && budget_slack > tol {
        // Re-water-fill the assignments on both sides of the bracket with the
        // full budget and keep whichever does best.
        let mut candidates = vec![best.choice.users.clone()];
        if let Some(c) = lo_choice {
            candidates.push(c.users);
        }
        let (rate, level, assignment, powers) = candidates
            .into_iter()
            .map(|users| {
                let floors: Vec<f64> = users
                    .iter()
                    .enumerate()
                    .map(|(n, k)| problem.floor(*k, n))
                    .collect();
                let (level, powers) = waterfill_fixed(&floors, p_max);
                let assignment: Vec<Option<usize>> = users.into_iter().map(Some).collect();
                let rate = sum_rate(&assignment, &powers, problem);
                (rate, level, assignment, powers)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one candidate");
        if rate > best.rate {
            let lambda = 1.0 / (LN2 * level);
            let slack = p_max - powers.iter().sum::<f64>();
            return AllocationResult {
                assignment,
                powers,
                sum_rate: rate,
                lambda,
                iterations,
                status,
                kkt: KktResiduals {
                    budget_slack: slack,
                    complementary_slackness: (lambda * slack).abs(),
                },
                lambda_trace: trace,
            };
        }
    }

    AllocationResult {
        assignment: best.choice.users.iter().copied().map(Some).collect(),
        powers: best.choice.powers,
        sum_rate: best.rate,
        lambda: best.lambda,
        iterations,
        status,
        kkt: KktResiduals {
            budget_slack,
            complementary_slackness: (best.lambda * budget_slack).abs(),
        },
        lambda_trace: trace,
    }
}

fn choice_rate(choice: &SubchannelChoice, problem: &AllocationProblem) -> f64 {
    choice
        .users
        .iter()
        .zip(&choice.powers)
        .enumerate()
        .map(|(n, (k, p))| problem.rate(*k, n, *p))
        .sum()
}

const ORACLE_LIMIT: u128 = 1_000_000;

fn enumeration_size(base: usize, digits: usize) -> u128 {
    (base as u128)
        .checked_pow(digits as u32)
        .unwrap_or(u128::MAX)
}

/// Decode `code` as `digits` base-`base` digits, least significant first.
fn decode(mut code: usize, base: usize, digits: usize) -> Vec<usize> {
    (0..digits)
        .map(|_| {
            let d = code % base;
            code /= base;
            d
        })
        .collect()
}

/// Water-fill a fixed set of floors by bisection on the water level.
fn waterfill_bisection(floors: &[f64], p_max: f64) -> Vec<f64> {
    let used = |w: f64| floors.iter().map(|c| (w - c).max(0.0)).sum::<f64>();
    let min_floor = floors.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (min_floor, min_floor + p_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if used(mid) > p_max {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    floors.iter().map(|c| (lo - c).max(0.0)).collect()
}

/// Exhaustive reference: every sub-channel-to-user assignment, each with
/// optimal single-budget water-filling across its sub-channels.
pub fn brute_force_oracle(problem: &AllocationProblem) -> Result<AllocationResult, AllocError> {
    problem.validate()?;
    let (k, n) = (problem.num_users, problem.num_subchannels);
    let size = enumeration_size(k, n);
    if size > ORACLE_LIMIT {
        return Err(AllocError::TooLarge(size, ORACLE_LIMIT));
    }
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for code in 0..size as usize {
        let users = decode(code, k, n);
        let floors: Vec<f64> = users
            .iter()
            .enumerate()
            .map(|(ch, u)| problem.floor(*u, ch))
            .collect();
        let powers = waterfill_bisection(&floors, problem.p_max);
        let rate: f64 = floors
            .iter()
            .zip(&powers)
            .map(|(c, p)| (1.0 + p / c).log2())
            .sum();
        if best.as_ref().is_none_or(|b| rate > b.0) {
            best = Some((rate, users, powers));
        }
    }
    let (rate, users, powers) = best.expect("non-empty enumeration");
    Ok(oracle_result(problem, rate, users, powers, size as usize))
}

/// Coarser reference: every assignment and every power vector on a uniform
/// grid of `points` levels in `[0, P_max]` that fits the budget.
pub fn grid_oracle(
    problem: &AllocationProblem,
    points: usize,
) -> Result<AllocationResult, AllocError> {
    problem.validate()?;
    if points < 2 {
        return Err(AllocError::InvalidProblem(
            "need at least two grid points".into(),
        ));
    }
    let (k, n) = (problem.num_users, problem.num_subchannels);
    let assignments = enumeration_size(k, n);
    let grid = enumeration_size(points, n);
    let size = assignments.saturating_mul(grid);
    if size > 50 * ORACLE_LIMIT {
        return Err(AllocError::TooLarge(size, 50 * ORACLE_LIMIT));
    }
    let step = problem.p_max / (points - 1) as f64;
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for a in 0..assignments as usize {
        let users = decode(a, k, n);
        for g in 0..grid as usize {
            let levels = decode(g, points, n);
            if levels.iter().sum::<usize>() > points - 1 {
                continue;
            }
            let powers: Vec<f64> = levels.iter().map(|l| *l as f64 * step).collect();
            let rate: f64 = users
                .iter()
                .zip(&powers)
                .enumerate()
                .map(|(ch, (u, p))| problem.rate(*u, ch, *p))
                .sum();
            if best.as_ref().is_none_or(|b| rate > b.0) {
                best = Some((rate, users.clone(), powers));
            }
        }
    }
    let (rate, users, powers) = best.expect("non-empty enumeration");
    Ok(oracle_result(problem, rate, users, powers, size as usize))
}

fn oracle_result(
    problem: &AllocationProblem,
    rate: f64,
    users: Vec<usize>,
    powers: Vec<f64>,
    evaluated: usize,
) -> AllocationResult {
    let slack = problem.p_max - powers.iter().sum::<f64>();
    AllocationResult {
        assignment: users.into_iter().map(Some).collect(),
        powers,
        sum_rate: rate,
        lambda: f64::NAN,
        iterations: evaluated,
        status: Convergence::Converged,
        kkt: KktResiduals {
            budget_slack: slack,
            complementary_slackness: f64::NAN,
        },
        lambda_trace: Vec::new(),
    }
}
