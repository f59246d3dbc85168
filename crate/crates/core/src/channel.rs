//! Air-to-ground propagation.
//!
//! Average path loss mixes a line-of-sight and a non-line-of-sight free-space
//! term, weighted by an elevation-dependent LoS probability. Small-scale
//! fading multiplies the resulting power gain by a unit-mean random factor.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Position3D;

/// Propagation speed used by default, m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid propagation parameters: {0}")]
    InvalidParams(String),
    #[error("path loss is singular at zero distance")]
    ZeroDistance,
    #[error("negative transmit power {0}")]
    NegativePower(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Environment constant `a` of the LoS probability curve.
    pub los_a: f64,
    /// Environment constant `b` of the LoS probability curve.
    pub los_b: f64,
    /// Excess LoS loss, linear.
    pub eta_los: f64,
    /// Excess NLoS loss, linear.
    pub eta_nlos: f64,
    pub carrier_frequency_hz: f64,
    pub speed_of_light: f64,
    /// Receiver thermal noise `σ²`, watts.
    pub noise_power: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            los_a: 5.0,
            los_b: 0.5,
            eta_los: 1.0,
            eta_nlos: 20.0,
            carrier_frequency_hz: 2e9,
            speed_of_light: SPEED_OF_LIGHT,
            noise_power: 1e-13,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidParams(m.to_string()));
        if !(self.los_a > 0.0 && self.los_b > 0.0) {
            return bad("a and b must be > 0");
        }
        if !(self.eta_los >= 1.0 && self.eta_nlos >= self.eta_los) {
            return bad("need eta_nlos >= eta_los >= 1");
        }
        if !(self.carrier_frequency_hz > 0.0 && self.carrier_frequency_hz.is_finite()) {
            return bad("carrier frequency must be > 0");
        }
        if !(self.speed_of_light > 0.0) {
            return bad("speed of light must be > 0");
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad("noise power must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FadingModel {
    /// Unit-mean exponential power gain per (transmitter, user, sub-channel).
    #[default]
    Rayleigh,
    /// `|ρ|² ≡ 1`.
    None,
}

impl FadingModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FadingModel::Rayleigh => Exp1.sample(rng),
            FadingModel::None => 1.0,
        }
    }
}

/// Terrestrial interferer sharing the sub-channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbsSpec {
    pub enabled: bool,
    /// Antenna position; `z` is the mast height.
    pub position: Position3D,
    /// Transmit power on every sub-channel, watts.
    pub power_per_subchannel: f64,
}

impl Default for GbsSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            position: Position3D::new(0.0, 0.0, 25.0),
            power_per_subchannel: 0.0,
        }
    }
}

impl GbsSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.power_per_subchannel < 0.0 || !self.power_per_subchannel.is_finite() {
            return Err(ChannelError::NegativePower(self.power_per_subchannel));
        }
        Ok(())
    }

    pub fn active_power(&self) -> f64 {
        if self.enabled {
            self.power_per_subchannel
        } else {
            0.0
        }
    }
}

/// Elevation angle in degrees from a ground point up to a transmitter.
pub fn elevation_angle(tx: &Position3D, user: &Position3D) -> f64 {
    let height = tx.z - user.z;
    let l = tx.horizontal_distance(user);
    if l == 0.0 {
        return 90.0;
    }
    (height / l).atan().to_degrees()
}

/// `1 / (1 + a·exp(-b(θ - a)))` with `θ` in degrees.
pub fn los_probability(theta_deg: f64, params: &PropagationParams) -> f64 {
    let a = params.los_a;
    1.0 / (1.0 + a * (-params.los_b * (theta_deg - a)).exp())
}

/// `(4π f_c d / c)² · excess`, linear.
pub fn free_space_pl(d: f64, params: &PropagationParams, excess: f64) -> Result<f64, ChannelError> {
    if d <= 0.0 {
        return Err(ChannelError::ZeroDistance);
    }
    let r = 4.0 * std::f64::consts::PI * params.carrier_frequency_hz * d / params.speed_of_light;
    Ok(r * r * excess)
}

/// LoS/NLoS mixture of the two free-space losses at the 3-D link distance.
pub fn avg_path_loss(
    tx: &Position3D,
    user: &Position3D,
    params: &PropagationParams,
) -> Result<f64, ChannelError> {
    let d = tx.distance(user);
    let pr = los_probability(elevation_angle(tx, user), params);
    let los = free_space_pl(d, params, params.eta_los)?;
    let nlos = free_space_pl(d, params, params.eta_nlos)?;
    Ok(pr * los + (1.0 - pr) * nlos)
}

/// Power gains for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    num_abs: usize,
    num_users: usize,
    num_subchannels: usize,
    /// Flat `[j][k][n]`.
    gains: Vec<f64>,
    /// Flat `[k][n]`, present when the GBS is enabled.
    gbs_gains: Option<Vec<f64>>,
    pub abs_positions: Vec<Position3D>,
}

impl ChannelRealization {
    pub fn num_abs(&self) -> usize {
        self.num_abs
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_subchannels(&self) -> usize {
        self.num_subchannels
    }

    #[inline]
    pub fn gain(&self, j: usize, k: usize, n: usize) -> f64 {
        self.gains[(j * self.num_users + k) * self.num_subchannels + n]
    }

    #[inline]
    pub fn gbs_gain(&self, k: usize, n: usize) -> Option<f64> {
        self.gbs_gains
            .as_ref()
            .map(|g| g[k * self.num_subchannels + n])
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
}

/// Draw `g = |ρ|² / PL` for every ABS (and the GBS when enabled), user and
/// sub-channel. Draw order is ABS-major, then user, then sub-channel, then
/// the GBS block.
pub fn draw_realization<R: Rng + ?Sized>(
    abs_positions: &[Position3D],
    users: &[Position3D],
    num_subchannels: usize,
    gbs: &GbsSpec,
    params: &PropagationParams,
    fading: FadingModel,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    let mut gains = Vec::with_capacity(abs_positions.len() * users.len() * num_subchannels);
    for tx in abs_positions {
        for user in users {
            let pl = avg_path_loss(tx, user, params)?;
            for _ in 0..num_subchannels {
                gains.push(fading.sample(rng) / pl);
            }
        }
    }
    let gbs_gains = if gbs.enabled {
        let mut g = Vec::with_capacity(users.len() * num_subchannels);
        for user in users {
            let pl = avg_path_loss(&gbs.position, user, params)?;
            for _ in 0..num_subchannels {
                g.push(fading.sample(rng) / pl);
            }
        }
        Some(g)
    } else {
        None
    };
    Ok(ChannelRealization {
        num_abs: abs_positions.len(),
        num_users: users.len(),
        num_subchannels,
        gains,
        gbs_gains,
        abs_positions: abs_positions.to_vec(),
    })
}

/// Interference seen by user `k` of ABS `j` on sub-channel `n`:
/// every other ABS's power times its gain to `k`, plus the GBS term.
/// `abs_powers[j'][n]` is the power ABS `j'` radiates on `n`.
pub fn interference(
    realization: &ChannelRealization,
    abs_powers: &[Vec<f64>],
    gbs_power: f64,
    j: usize,
    k: usize,
    n: usize,
) -> f64 {
    let from_abs: f64 = abs_powers
        .iter()
        .enumerate()
        .filter(|(jj, _)| *jj != j)
        .map(|(jj, p)| p[n] * realization.gain(jj, k, n))
        .sum();
    let from_gbs = realization.gbs_gain(k, n).map_or(0.0, |g| gbs_power * g);
    from_abs + from_gbs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> PropagationParams {
        PropagationParams::default()
    }

    #[test]
    fn elevation_examples() {
        let tx = Position3D::new(0.0, 0.0, 100.0);
        assert_abs_diff_eq!(
            elevation_angle(&tx, &Position3D::new(100.0, 0.0, 0.0)),
            45.0,
            epsilon = 1e-12
        );
        assert_eq!(elevation_angle(&tx, &Position3D::new(0.0, 0.0, 0.0)), 90.0);
        let l = 100.0 * 3f64.sqrt();
        assert_abs_diff_eq!(
            elevation_angle(&tx, &Position3D::new(0.0, l, 0.0)),
            30.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn los_probability_examples() {
        let p = params();
        assert_abs_diff_eq!(los_probability(5.0, &p), 1.0 / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(los_probability(90.0, &p), 1.0, epsilon = 1e-12);
        // 1/(1+5e^{2.5}) evaluated independently: 0.016155...
        assert_abs_diff_eq!(
            los_probability(0.0, &p),
            1.0 / (1.0 + 5.0 * 2.5f64.exp()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            los_probability(0.0, &p),
            0.016_151_835_053_157_386,
            epsilon = 1e-15
        );
    }

    #[test]
    fn free_space_examples() {
        let p = params();
        let unit = p.speed_of_light / (4.0 * std::f64::consts::PI * p.carrier_frequency_hz);
        assert_abs_diff_eq!(free_space_pl(unit, &p, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        let l100 = free_space_pl(100.0, &p, 1.0).unwrap();
        // 40-digit reference evaluation.
        assert_relative_eq!(l100, 70_183_853.518_857_66, max_relative = 1e-12);
        assert_abs_diff_eq!(10.0 * l100.log10(), 78.462_372_099, epsilon = 1e-8);
        assert_relative_eq!(
            free_space_pl(200.0, &p, 1.0).unwrap(),
            4.0 * l100,
            max_relative = 1e-15
        );
        assert_eq!(free_space_pl(0.0, &p, 1.0), Err(ChannelError::ZeroDistance));
    }

    #[test]
    fn path_loss_mixture() {
        let mut p = params();
        let tx = Position3D::new(0.0, 0.0, 100.0);
        let user = Position3D::new(100.0, 0.0, 0.0);
        let d = 100.0 * 2f64.sqrt();
        let pr = los_probability(45.0, &p);
        let expect = pr * free_space_pl(d, &p, 1.0).unwrap()
            + (1.0 - pr) * free_space_pl(d, &p, 20.0).unwrap();
        assert_relative_eq!(
            avg_path_loss(&tx, &user, &p).unwrap(),
            expect,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            avg_path_loss(&tx, &user, &p).unwrap(),
            140_367_734.523_058_78,
            max_relative = 1e-12
        );

        p.eta_nlos = 1.0;
        assert_relative_eq!(
            avg_path_loss(&tx, &user, &p).unwrap(),
            free_space_pl(d, &p, 1.0).unwrap(),
            max_relative = 1e-15
        );
        assert!(avg_path_loss(&tx, &tx, &p).is_err());
    }

    #[test]
    fn zenith_link_is_line_of_sight() {
        let p = params();
        let tx = Position3D::new(0.0, 0.0, 100.0);
        let user = Position3D::new(0.0, 0.0, 0.0);
        assert_relative_eq!(
            avg_path_loss(&tx, &user, &p).unwrap(),
            free_space_pl(100.0, &p, 1.0).unwrap(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn deterministic_without_fading() {
        let abs = [
            Position3D::new(0.0, 0.0, 100.0),
            Position3D::new(500.0, 0.0, 100.0),
        ];
        let users = [
            Position3D::new(10.0, 20.0, 0.0),
            Position3D::new(300.0, 40.0, 0.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = draw_realization(
            &abs,
            &users,
            4,
            &GbsSpec::default(),
            &params(),
            FadingModel::None,
            &mut rng,
        )
        .unwrap();
        for (j, a) in abs.iter().enumerate() {
            for (k, u) in users.iter().enumerate() {
                let g0 = r.gain(j, k, 0);
                assert_relative_eq!(g0, 1.0 / avg_path_loss(a, u, &params()).unwrap());
                for n in 1..4 {
                    assert_eq!(r.gain(j, k, n), g0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_realization() {
        let abs = [Position3D::new(0.0, 0.0, 100.0)];
        let users = [
            Position3D::new(10.0, 20.0, 0.0),
            Position3D::new(300.0, 40.0, 0.0),
        ];
        let gbs = GbsSpec {
            enabled: true,
            position: Position3D::new(900.0, 900.0, 25.0),
            power_per_subchannel: 1.0,
        };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            draw_realization(
                &abs,
                &users,
                8,
                &gbs,
                &params(),
                FadingModel::Rayleigh,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
        assert!(draw(9).gains().iter().all(|g| *g > 0.0 && g.is_finite()));
    }

    #[test]
    fn rayleigh_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| FadingModel::Rayleigh.sample(&mut rng))
            .sum::<f64>()
            / n as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        assert_eq!(FadingModel::None.sample(&mut rng), 1.0);
    }

    fn two_abs_realization() -> ChannelRealization {
        let abs = [
            Position3D::new(0.0, 0.0, 100.0),
            Position3D::new(400.0, 0.0, 100.0),
        ];
        let users = [Position3D::new(50.0, 0.0, 0.0)];
        let gbs = GbsSpec {
            enabled: true,
            position: Position3D::new(0.0, 600.0, 25.0),
            power_per_subchannel: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        draw_realization(
            &abs,
            &users,
            2,
            &gbs,
            &params(),
            FadingModel::None,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn interference_terms() {
        let r = two_abs_realization();
        let powers = vec![vec![0.1, 0.1], vec![0.1, 0.3]];
        // Only ABS 1 and the GBS contribute to ABS 0's user.
        let expect = 0.3 * r.gain(1, 0, 1) + 2.0 * r.gbs_gain(0, 1).unwrap();
        assert_relative_eq!(
            interference(&r, &powers, 2.0, 0, 0, 1),
            expect,
            max_relative = 1e-15
        );
        // Linear in the interferer's power.
        let scaled = vec![vec![0.1, 0.1], vec![0.1, 0.6]];
        let base = interference(&r, &powers, 0.0, 0, 0, 1);
        assert_relative_eq!(
            interference(&r, &scaled, 0.0, 0, 0, 1),
            2.0 * base,
            max_relative = 1e-15
        );
    }

    #[test]
    fn interference_single_abs_is_zero() {
        let abs = [Position3D::new(0.0, 0.0, 100.0)];
        let users = [Position3D::new(50.0, 0.0, 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = draw_realization(
            &abs,
            &users,
            2,
            &GbsSpec::default(),
            &params(),
            FadingModel::Rayleigh,
            &mut rng,
        )
        .unwrap();
        assert_eq!(interference(&r, &[vec![0.1, 0.1]], 5.0, 0, 0, 0), 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(params().validate().is_ok());
        let mut p = params();
        p.eta_nlos = 0.5;
        assert!(p.validate().is_err());
        let mut p = params();
        p.noise_power = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.los_b = 0.0;
        assert!(p.validate().is_err());
    }
}
