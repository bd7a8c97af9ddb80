//! Search-space types: grid discretization, hybrid-A* node bookkeeping and
//! the constant-acceleration trajectory representation shared by every
//! other module.
//!
//! The space is `(t, s, l)`: time, arc length along the road and the lane
//! coordinate, where `l = 1` is the centre of the rightmost lane and
//! `l = n_lanes` the centre of the leftmost one. Fractional `l` means a lane
//! change is in progress. Velocity is carried as an additional discrete state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the space-time search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub t: f64,
    pub s: f64,
    pub l: f64,
}

impl Configuration {
    pub fn new(t: f64, s: f64, l: f64, n_lanes: u8) -> Result<Self> {
        if !(t >= 0.0) || !(s >= 0.0) {
            return Err(Error::Domain(format!("configuration needs t, s >= 0 (got t={t}, s={s})")));
        }
        if !(1.0..=n_lanes as f64).contains(&l) {
            return Err(Error::Domain(format!("lane coordinate {l} outside [1, {n_lanes}]")));
        }
        Ok(Self { t, s, l })
    }
}

/// Grid resolution and expansion limits of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// velocity step [m/s]
    pub dv: f64,
    /// distance grid step [m]
    pub ds_grid: f64,
    /// time grid step [s]
    pub dt_grid: f64,
    /// distance expansion limit [m]
    pub ds_exp: f64,
    /// time expansion limit [s]
    pub dt_exp: f64,
    pub n_lanes: u8,
    /// maximum velocity [m/s], a multiple of `dv`
    pub v_max: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { dv: 1.0, ds_grid: 10.0, dt_grid: 1.0, ds_exp: 10.0, dt_exp: 2.0, n_lanes: 2, v_max: 14.0 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let steps = [("dv", self.dv), ("ds_grid", self.ds_grid), ("dt_grid", self.dt_grid), ("ds_exp", self.ds_exp), ("dt_exp", self.dt_exp)];
        for (name, value) in steps {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("grid.{name} must be > 0 (got {value})")));
            }
        }
        if self.ds_exp < self.ds_grid {
            return Err(Error::Config("grid.ds_exp must be >= grid.ds_grid".into()));
        }
        if self.dt_exp < self.dt_grid {
            return Err(Error::Config("grid.dt_exp must be >= grid.dt_grid".into()));
        }
        if self.n_lanes == 0 {
            return Err(Error::Config("grid.n_lanes must be >= 1".into()));
        }
        let ratio = self.v_max / self.dv;
        if !(self.v_max > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config(format!("grid.v_max = {} is not a multiple of grid.dv = {}", self.v_max, self.dv)));
        }
        Ok(())
    }

    /// Index of the largest grid velocity.
    pub fn v_index_max(&self) -> u16 {
        (self.v_max / self.dv).round() as u16
    }

    pub fn velocity(&self, v_k: u16) -> f64 {
        v_k as f64 * self.dv
    }

    /// Nearest grid velocity index, clamped to `[0, v_max]`.
    pub fn nearest_v_index(&self, v: f64) -> u16 {
        let k = (v / self.dv).round().max(0.0);
        (k as u16).min(self.v_index_max())
    }
}

/// Splits `value` into a grid index and a remainder in `[0, step)`.
pub fn snap(value: f64, step: f64) -> Result<(i64, f64)> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Domain(format!("grid step must be > 0 (got {step})")));
    }
    if !(value >= 0.0) || !value.is_finite() {
        return Err(Error::Domain(format!("cannot snap negative or non-finite value {value}")));
    }
    let mut index = (value / step).floor();
    let mut rem = value - index * step;
    if rem < 0.0 {
        index -= 1.0;
        rem += step;
    }
    if rem >= step {
        index += 1.0;
        rem = (rem - step).max(0.0);
    }
    Ok((index as i64, rem))
}

/// Direction of an in-progress lane change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDir {
    Right,
    None,
    Left,
}

impl LaneDir {
    /// Sign of `dl/dt` while changing in this direction.
    pub fn sign(self) -> f64 {
        match self {
            LaneDir::Left => 1.0,
            LaneDir::None => 0.0,
            LaneDir::Right => -1.0,
        }
    }
}

/// Duplicate-detection key of a search node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DiscreteKey {
    pub v_k: u16,
    pub t_k: i64,
    pub s_k: i64,
    pub l_k: i64,
    pub l_dir: LaneDir,
}

/// Hybrid-A* node: discrete indices plus the continuous remainders that are
/// carried forward instead of being rounded away.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub v_k: u16,
    pub t_k: i64,
    pub s_k: i64,
    pub l_k: i64,
    pub parent: Option<DiscreteKey>,
    pub t_r: f64,
    pub s_r: f64,
    pub l_r: f64,
    pub l_dir: LaneDir,
    /// cost-to-come [J]
    pub g: f64,
    /// estimated total cost [J]
    pub f: f64,
}

impl SearchNode {
    /// Builds a node from continuous values, snapping them onto the grid.
    #[allow(clippy::too_many_arguments)]
    pub fn from_continuous(gs: &GridSpec, v_k: u16, t: f64, s: f64, l: f64, l_dir: LaneDir, g: f64, f: f64) -> Result<Self> {
        let (t_k, t_r) = snap(t, gs.dt_grid)?;
        let (s_k, s_r) = snap(s, gs.ds_grid)?;
        let (l_k, l_r) = snap(l, 1.0)?;
        Ok(Self { v_k, t_k, s_k, l_k, parent: None, t_r, s_r, l_r, l_dir, g, f })
    }

    pub fn t(&self, gs: &GridSpec) -> f64 {
        self.t_k as f64 * gs.dt_grid + self.t_r
    }

    pub fn s(&self, gs: &GridSpec) -> f64 {
        self.s_k as f64 * gs.ds_grid + self.s_r
    }

    pub fn l(&self) -> f64 {
        self.l_k as f64 + self.l_r
    }

    pub fn v(&self, gs: &GridSpec) -> f64 {
        gs.velocity(self.v_k)
    }

    pub fn key(&self) -> DiscreteKey {
        node_key(self)
    }
}

/// Projection used for OPEN/CLOSED membership. Remainders are excluded;
/// velocity and lane-change direction are part of the state.
pub fn node_key(n: &SearchNode) -> DiscreteKey {
    DiscreteKey { v_k: n.v_k, t_k: n.t_k, s_k: n.s_k, l_k: n.l_k, l_dir: n.l_dir }
}

/// Constant-acceleration piece of a trajectory with a linear lane profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub s_start: f64,
    pub v_start: f64,
    pub v_end: f64,
    pub a: f64,
    pub l_start: f64,
    pub l_end: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn s_at(&self, t: f64) -> f64 {
        let tau = t - self.t_start;
        self.s_start + self.v_start * tau + 0.5 * self.a * tau * tau
    }

    pub fn v_at(&self, t: f64) -> f64 {
        (self.v_start + self.a * (t - self.t_start)).max(0.0)
    }

    pub fn l_rate(&self) -> f64 {
        let d = self.duration();
        if d > 0.0 {
            (self.l_end - self.l_start) / d
        } else {
            0.0
        }
    }

    pub fn l_at(&self, t: f64) -> f64 {
        if t >= self.t_end {
            return self.l_end;
        }
        self.l_start + self.l_rate() * (t - self.t_start)
    }

    pub fn s_end(&self) -> f64 {
        self.s_at(self.t_end)
    }

    pub fn lane_dir(&self) -> LaneDir {
        match self.l_end.partial_cmp(&self.l_start) {
            Some(std::cmp::Ordering::Greater) => LaneDir::Left,
            Some(std::cmp::Ordering::Less) => LaneDir::Right,
            _ => LaneDir::None,
        }
    }
}

/// Kinematic state of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub t: f64,
    pub s: f64,
    pub l: f64,
    pub v: f64,
    pub l_dir: LaneDir,
}

/// Ordered, time-contiguous constant-acceleration segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    /// [J]
    pub total_cost: f64,
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.segments.first().map(|s| s.t_start)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.segments.last().map(|s| s.t_end)
    }

    /// Index of the segment active at `t`. At a joint the later segment wins.
    pub fn segment_index_at(&self, t: f64) -> Option<usize> {
        let first = self.segments.first()?;
        let last = self.segments.last()?;
        if t < first.t_start || t > last.t_end {
            return None;
        }
        let idx = self.segments.partition_point(|seg| seg.t_start <= t);
        Some(idx.saturating_sub(1))
    }

    pub fn state_at(&self, t: f64) -> Option<EgoState> {
        let seg = &self.segments[self.segment_index_at(t)?];
        Some(EgoState { t, s: seg.s_at(t), l: seg.l_at(t), v: seg.v_at(t), l_dir: seg.lane_dir() })
    }

    pub fn end_state(&self) -> Option<EgoState> {
        let seg = self.segments.last()?;
        let dir = if seg.l_end.fract() == 0.0 { LaneDir::None } else { seg.lane_dir() };
        Some(EgoState { t: seg.t_end, s: seg.s_end(), l: seg.l_end, v: seg.v_end, l_dir: dir })
    }

    /// Drops segments that ended before `t`.
    pub fn trim_before(&mut self, t: f64) {
        let keep_from = self.segments.partition_point(|seg| seg.t_end < t);
        if keep_from > 0 && keep_from < self.segments.len() {
            self.segments.drain(..keep_from);
        }
    }
}
