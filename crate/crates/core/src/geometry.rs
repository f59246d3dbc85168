//! Grid discretization of the service area.
//!
//! The area `[x_min, x_max] × [y_min, y_max]` is split into `M` slots per axis,
//! giving `M²` grid states. Every ABS flies at the same fixed altitude, so a
//! state is fully described by its 1-based slot pair `(k1, k2)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid area: {0}")]
    InvalidArea(String),
    #[error("grid state ({k1}, {k2}) outside 1..={m}")]
    StateOutOfRange { k1: u32, k2: u32, m: u32 },
    #[error("position ({x}, {y}) outside the service area")]
    PositionOutOfArea { x: f64, y: f64 },
    #[error("state index {index} outside 0..{states}")]
    IndexOutOfRange { index: usize, states: usize },
}

/// Rectangular service area and its grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Slots per axis (`M`).
    pub cells_per_axis: u32,
    /// ABS altitude `H` in meters.
    pub altitude: f64,
    /// When set, cell coordinates are shifted by half a cell width so they
    /// sit at the geometric center of each square instead of its lower corner.
    #[serde(default)]
    pub center_offset: bool,
}

impl AreaSpec {
    pub fn new(
        x_range: (f64, f64),
        y_range: (f64, f64),
        cells_per_axis: u32,
        altitude: f64,
    ) -> Result<Self, GeometryError> {
        let area = Self {
            x_min: x_range.0,
            x_max: x_range.1,
            y_min: y_range.0,
            y_max: y_range.1,
            cells_per_axis,
            altitude,
            center_offset: false,
        };
        area.validate()?;
        Ok(area)
    }

    pub fn with_center_offset(mut self, on: bool) -> Self {
        self.center_offset = on;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.altitude,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidArea("non-finite bound".into()));
        }
        if self.x_min >= self.x_max {
            return Err(GeometryError::InvalidArea("x_min must be < x_max".into()));
        }
        if self.y_min >= self.y_max {
            return Err(GeometryError::InvalidArea("y_min must be < y_max".into()));
        }
        if self.cells_per_axis < 2 {
            return Err(GeometryError::InvalidArea(
                "cells_per_axis must be >= 2".into(),
            ));
        }
        if self.altitude <= 0.0 {
            return Err(GeometryError::InvalidArea("altitude must be > 0".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        let m = self.cells_per_axis as usize;
        m * m
    }

    pub fn cell_width_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells_per_axis as f64
    }

    pub fn cell_width_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.cells_per_axis as f64
    }

    pub fn contains(&self, s: GridState) -> bool {
        (1..=self.cells_per_axis).contains(&s.k1) && (1..=self.cells_per_axis).contains(&s.k2)
    }

    pub fn check(&self, s: GridState) -> Result<(), GeometryError> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(GeometryError::StateOutOfRange {
                k1: s.k1,
                k2: s.k2,
                m: self.cells_per_axis,
            })
        }
    }

    /// Row-major flat index, `k1` fastest.
    pub fn index_of(&self, s: GridState) -> usize {
        let m = self.cells_per_axis as usize;
        (s.k2 as usize - 1) * m + (s.k1 as usize - 1)
    }

    pub fn state_at(&self, index: usize) -> Result<GridState, GeometryError> {
        let states = self.num_states();
        if index >= states {
            return Err(GeometryError::IndexOutOfRange { index, states });
        }
        let m = self.cells_per_axis as usize;
        Ok(GridState::new(
            (index % m) as u32 + 1,
            (index / m) as u32 + 1,
        ))
    }

    pub fn states(&self) -> impl Iterator<Item = GridState> + '_ {
        let m = self.cells_per_axis;
        (1..=m).flat_map(move |k2| (1..=m).map(move |k1| GridState::new(k1, k2)))
    }

    /// Flight time for one cell move at the given speed. Metadata only.
    pub fn step_duration_s(&self, speed_mps: f64) -> f64 {
        self.cell_width_x() / speed_mps
    }
}

/// 1-based grid slot pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub k1: u32,
    pub k2: u32,
}

impl GridState {
    pub const fn new(k1: u32, k2: u32) -> Self {
        Self { k1, k2 }
    }

    /// Number of single-cell moves between two states.
    pub fn manhattan(&self, other: GridState) -> u32 {
        self.k1.abs_diff(other.k1) + self.k2.abs_diff(other.k2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn horizontal_distance(&self, other: &Position3D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Forward,
    Backward,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Left,
        Action::Right,
        Action::Forward,
        Action::Backward,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Forward => 2,
            Action::Backward => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Forward => "forward",
            Action::Backward => "backward",
        };
        f.write_str(name)
    }
}

/// How the distance-to-destination term is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DistanceMetric {
    /// Plain Euclidean norm, meters.
    #[default]
    Euclidean,
    /// Squared Euclidean norm, square meters.
    Squared,
}

impl DistanceMetric {
    pub fn from_exponent(e: u8) -> Option<Self> {
        match e {
            1 => Some(Self::Euclidean),
            2 => Some(Self::Squared),
            _ => None,
        }
    }

    pub fn exponent(self) -> u8 {
        match self {
            Self::Euclidean => 1,
            Self::Squared => 2,
        }
    }

    pub fn measure(self, p: &Position3D, q: &Position3D) -> f64 {
        let d = p.distance(q);
        match self {
            Self::Euclidean => d,
            Self::Squared => d * d,
        }
    }
}

/// Coordinates of grid state `s`: `x_min + (x_max - x_min)/M · (k1 - 1)`,
/// likewise for y, at altitude `H`.
pub fn cell_center(area: &AreaSpec, s: GridState) -> Result<Position3D, GeometryError> {
    area.check(s)?;
    let wx = area.cell_width_x();
    let wy = area.cell_width_y();
    let (ox, oy) = if area.center_offset {
        (wx / 2.0, wy / 2.0)
    } else {
        (0.0, 0.0)
    };
    Ok(Position3D::new(
        area.x_min + wx * (s.k1 - 1) as f64 + ox,
        area.y_min + wy * (s.k2 - 1) as f64 + oy,
        area.altitude,
    ))
}

/// Grid state whose coordinates (as produced by [`cell_center`]) are nearest
/// to `p`. Ties go to the lower index.
pub fn snap_to_state(area: &AreaSpec, p: &Position3D) -> Result<GridState, GeometryError> {
    let inside = p.x.is_finite()
        && p.y.is_finite()
        && (area.x_min..=area.x_max).contains(&p.x)
        && (area.y_min..=area.y_max).contains(&p.y);
    if !inside {
        return Err(GeometryError::PositionOutOfArea { x: p.x, y: p.y });
    }
    let (ox, oy) = if area.center_offset {
        (area.cell_width_x() / 2.0, area.cell_width_y() / 2.0)
    } else {
        (0.0, 0.0)
    };
    let k1 = snap_axis(
        p.x - area.x_min - ox,
        area.cell_width_x(),
        area.cells_per_axis,
    );
    let k2 = snap_axis(
        p.y - area.y_min - oy,
        area.cell_width_y(),
        area.cells_per_axis,
    );
    Ok(GridState::new(k1, k2))
}

// Nearest slot along one axis, 1-based; exact half-way points round down.
fn snap_axis(offset: f64, width: f64, m: u32) -> u32 {
    let t = offset / width;
    let lower = t.floor();
    let k0 = if t - lower > 0.5 { lower + 1.0 } else { lower };
    (k0.max(0.0) as u32).min(m - 1) + 1
}

/// Move one cell. Moves that would leave the grid keep the state unchanged.
pub fn apply_action(area: &AreaSpec, s: GridState, a: Action) -> GridState {
    let m = area.cells_per_axis;
    match a {
        Action::Right if s.k1 < m => GridState::new(s.k1 + 1, s.k2),
        Action::Left if s.k1 > 1 => GridState::new(s.k1 - 1, s.k2),
        Action::Forward if s.k2 < m => GridState::new(s.k1, s.k2 + 1),
        Action::Backward if s.k2 > 1 => GridState::new(s.k1, s.k2 - 1),
        _ => s,
    }
}

/// Euclidean distance from an ABS to its final position.
pub fn dist_to_final(p: &Position3D, p_final: &Position3D) -> f64 {
    p.distance(p_final)
}

/// Euclidean distance between two ABSs.
pub fn pairwise_dist(p1: &Position3D, p2: &Position3D) -> f64 {
    p1.distance(p2)
}

/// True when two ABSs are closer than the separation threshold.
pub fn violates_separation(p1: &Position3D, p2: &Position3D, d_min: f64) -> bool {
    pairwise_dist(p1, p2) < d_min
}
