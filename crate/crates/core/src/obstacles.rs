//! Obstacles in the space-time search space and analytic collision
//! predicates for constant-acceleration segments with a linear lane profile.
//!
//! Every predicate follows the same recipe: the boundary functions of its
//! conditions (quadratic in `s`, linear in `v` and `l`) are solved in closed
//! form, and the conditions are evaluated at those event times and at the
//! midpoints between them. Between two consecutive events no condition can
//! change its truth value, so this decides existence exactly up to rounding
//! at tangencies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::{EgoState, Segment};

const DISC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleObstacle {
    pub id: usize,
    /// observed centre position at `t0` [m]
    pub s0: f64,
    /// observed velocity [m/s]
    pub v0: f64,
    /// predicted lane coordinate (constant)
    pub lane: f64,
    /// [m]
    pub length: f64,
    /// time the observation refers to [s]
    pub t0: f64,
}

impl VehicleObstacle {
    pub fn center(&self, t: f64) -> f64 {
        self.s0 + self.v0 * (t - self.t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedPhase {
    /// start of red within the cycle [s]
    pub offset: f64,
    /// [s]
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficLightObstacle {
    /// stop line [m]
    pub s: f64,
    pub lanes: Vec<u8>,
    pub phases: Vec<RedPhase>,
    /// cycle period [s]; `None` means the phases are absolute times
    #[serde(default)]
    pub period: Option<f64>,
}

impl TrafficLightObstacle {
    pub fn validate(&self) -> Result<()> {
        for p in &self.phases {
            if !(p.duration > 0.0) {
                return Err(Error::Config("red phase duration must be > 0".into()));
            }
        }
        if let Some(period) = self.period {
            if !(period > 0.0) {
                return Err(Error::Config("light period must be > 0".into()));
            }
            let mut phases = self.phases.clone();
            phases.sort_by(|a, b| a.offset.total_cmp(&b.offset));
            for w in phases.windows(2) {
                if w[0].offset + w[0].duration > w[1].offset {
                    return Err(Error::Config("red phases overlap within one period".into()));
                }
            }
            if let (Some(first), Some(last)) = (phases.first(), phases.last()) {
                if last.offset + last.duration > first.offset + period {
                    return Err(Error::Config("red phases overlap across the period boundary".into()));
                }
            }
        }
        Ok(())
    }

    /// Red intervals intersecting `[from, to]`, unrolled over the period.
    pub fn red_intervals(&self, from: f64, to: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for p in &self.phases {
            match self.period {
                Some(period) => {
                    let k_min = ((from - p.offset - p.duration) / period).floor() as i64;
                    let k_max = ((to - p.offset) / period).ceil() as i64;
                    for k in k_min..=k_max {
                        let lo = p.offset + k as f64 * period;
                        let hi = lo + p.duration;
                        if lo <= to && hi >= from {
                            out.push((lo, hi));
                        }
                    }
                }
                None => {
                    if p.offset <= to && p.offset + p.duration >= from {
                        out.push((p.offset, p.offset + p.duration));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn is_red(&self, t: f64) -> bool {
        !self.red_intervals(t, t).is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedLimitZone {
    /// zone start [m]
    pub s: f64,
    /// zone length [m]
    pub length: f64,
    /// [m/s]
    pub v_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BanDirection {
    Both,
    LeftOnly,
    RightOnly,
}

/// Solid line between lanes `boundary` and `boundary + 1` on `[s, s + length]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeBan {
    pub s: f64,
    pub length: f64,
    pub boundary: u8,
    pub direction: BanDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// ego length [m]
    pub ego_length: f64,
    /// minimum speed surplus when overtaking on the left [m/s]
    pub dv_overtake: f64,
    pub no_right_overtake: bool,
    pub enforce_min_overtake_speed: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self { ego_length: 4.5, dv_overtake: 2.0, no_right_overtake: false, enforce_min_overtake_speed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    /// worst-case relative distance estimation error [m]
    pub ds_max: f64,
    /// replanning period [s]
    pub t_rep: f64,
    /// prediction horizon measured from the obstacle's `t0` [s]
    pub t_hor: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { ds_max: 1.0, t_rep: 1.0, t_hor: 20.0 }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ds_max >= 0.0) || !(self.t_rep > 0.0) || !(self.t_rep < self.t_hor) {
            return Err(Error::Config("prediction needs ds_max >= 0 and 0 < t_rep < t_hor".into()));
        }
        Ok(())
    }

    /// Step-shaped safety buffer for a query at `t` of an observation at `t0`.
    pub fn buffer(&self, t0: f64, t: f64) -> f64 {
        if t < t0 + self.t_rep {
            self.ds_max
        } else {
            3.0 * self.ds_max
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSet {
    pub vehicles: Vec<VehicleObstacle>,
    pub lights: Vec<TrafficLightObstacle>,
    pub limits: Vec<SpeedLimitZone>,
    pub bans: Vec<LaneChangeBan>,
}

impl ObstacleSet {
    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty() && self.lights.is_empty() && self.limits.is_empty() && self.bans.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstacleId {
    Vehicle(usize),
    RightOvertake(usize),
    SlowLeftOvertake(usize),
    TrafficLight(usize),
    SpeedLimit(usize),
    LaneBan(usize),
}

impl std::fmt::Display for ObstacleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObstacleId::Vehicle(i) => write!(f, "vehicle {i}"),
            ObstacleId::RightOvertake(i) => write!(f, "right-overtake rule (vehicle {i})"),
            ObstacleId::SlowLeftOvertake(i) => write!(f, "minimum overtaking speed rule (vehicle {i})"),
            ObstacleId::TrafficLight(i) => write!(f, "traffic light {i}"),
            ObstacleId::SpeedLimit(i) => write!(f, "speed limit {i}"),
            ObstacleId::LaneBan(i) => write!(f, "lane-change ban {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CollisionReport {
    pub first: Option<ObstacleId>,
}

impl CollisionReport {
    pub fn is_free(&self) -> bool {
        self.first.is_none()
    }
}

/// Fixed-capacity list of candidate times, relative to the segment start.
struct Events {
    buf: [f64; 24],
    len: usize,
}

impl Events {
    fn new(duration: f64) -> Self {
        let mut ev = Self { buf: [0.0; 24], len: 0 };
        ev.push(0.0, duration);
        ev.push(duration, duration);
        ev
    }

    fn push(&mut self, tau: f64, duration: f64) {
        if tau.is_finite() && tau >= 0.0 && tau <= duration && self.len < self.buf.len() {
            self.buf[self.len] = tau;
            self.len += 1;
        }
    }

    fn push_roots(&mut self, qa: f64, qb: f64, qc: f64, duration: f64) {
        let (roots, n) = quadratic_roots(qa, qb, qc);
        for r in &roots[..n] {
            self.push(*r, duration);
        }
    }

    /// True if `pred` holds at any event or between two consecutive events.
    fn any(mut self, pred: impl Fn(f64) -> bool) -> bool {
        let ev = &mut self.buf[..self.len];
        ev.sort_by(f64::total_cmp);
        for i in 0..ev.len() {
            if pred(ev[i]) {
                return true;
            }
            if i + 1 < ev.len() && ev[i + 1] > ev[i] && pred(0.5 * (ev[i] + ev[i + 1])) {
                return true;
            }
        }
        false
    }
}

/// Real roots of `qa x^2 + qb x + qc = 0`; a slightly negative discriminant
/// is treated as a double root.
pub(crate) fn quadratic_roots(qa: f64, qb: f64, qc: f64) -> ([f64; 2], usize) {
    if qa.abs() < 1e-12 {
        if qb.abs() < 1e-15 {
            return ([0.0; 2], 0);
        }
        return ([-qc / qb, 0.0], 1);
    }
    let disc = qb * qb - 4.0 * qa * qc;
    let scale = (qb * qb).max((4.0 * qa * qc).abs()).max(1.0);
    if disc < 0.0 {
        if disc > -DISC_TOL * scale {
            return ([-qb / (2.0 * qa), 0.0], 1);
        }
        return ([0.0; 2], 0);
    }
    let sq = disc.sqrt();
    let q = -0.5 * (qb + qb.signum() * sq);
    if q == 0.0 {
        return ([0.0, 0.0], 1);
    }
    let r1 = q / qa;
    let r2 = qc / q;
    ([r1.min(r2), r1.max(r2)], 2)
}

/// Relative times at which the lane coordinate crosses `level`.
fn lane_crossing(seg: &Segment, level: f64) -> f64 {
    let rate = seg.l_rate();
    if rate == 0.0 {
        f64::NAN
    } else {
        (level - seg.l_start) / rate
    }
}

fn lane_at(seg: &Segment, tau: f64) -> f64 {
    seg.l_start + seg.l_rate() * tau
}

fn s_at(seg: &Segment, tau: f64) -> f64 {
    seg.s_start + seg.v_start * tau + 0.5 * seg.a * tau * tau
}

fn v_at(seg: &Segment, tau: f64) -> f64 {
    seg.v_start + seg.a * tau
}

/// Lower and upper bound of the buffered vehicle obstacle at time `t`.
pub fn vehicle_bounds(o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig, t: f64) -> Result<(f64, f64)> {
    if t < o.t0 {
        return Err(Error::Domain(format!("query at t = {t} precedes the observation at {}", o.t0)));
    }
    if t > o.t0 + pc.t_hor {
        return Err(Error::OutOfHorizon { t, horizon_end: o.t0 + pc.t_hor });
    }
    let half = 0.5 * (o.length + rc.ego_length) + pc.buffer(o.t0, t);
    let c = o.center(t);
    Ok((c - half, c + half))
}

/// Shared event set for the vehicle predicates: offset `d(tau) = s - centre`
/// crossing the given half-widths, plus the buffer tier and horizon times.
fn vehicle_events(seg: &Segment, o: &VehicleObstacle, pc: &PredictionConfig, widths: &[f64]) -> Events {
    let dur = seg.duration();
    let mut ev = Events::new(dur);
    let d0 = seg.s_start - o.center(seg.t_start);
    let dv = seg.v_start - o.v0;
    for w in widths {
        ev.push_roots(0.5 * seg.a, dv, d0 - w, dur);
        ev.push_roots(0.5 * seg.a, dv, d0 + w, dur);
    }
    ev.push(o.t0 + pc.t_rep - seg.t_start, dur);
    ev.push(o.t0 + pc.t_hor - seg.t_start, dur);
    ev
}

/// Whole-lane occupancy collision with a predicted vehicle.
pub fn check_vehicle_collision(seg: &Segment, o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig) -> bool {
    let dur = seg.duration();
    if !(dur > 0.0) {
        return false;
    }
    let (l_lo, l_hi) = (seg.l_start.min(seg.l_end), seg.l_start.max(seg.l_end));
    if l_hi <= o.lane - 1.0 || l_lo >= o.lane + 1.0 {
        return false;
    }
    let ls = 0.5 * (o.length + rc.ego_length);
    let w1 = ls + pc.ds_max;
    let w2 = ls + 3.0 * pc.ds_max;
    let horizon_end = o.t0 + pc.t_hor;
    if seg.t_end <= horizon_end {
        let s_end = seg.s_end();
        if s_end < o.center(seg.t_start) - w2 || seg.s_start > o.center(seg.t_end) + w2 {
            return false;
        }
    }
    let mut ev = vehicle_events(seg, o, pc, &[w1, w2]);
    ev.push(lane_crossing(seg, o.lane - 1.0), dur);
    ev.push(lane_crossing(seg, o.lane + 1.0), dur);
    ev.any(|tau| {
        if (lane_at(seg, tau) - o.lane).abs() >= 1.0 {
            return false;
        }
        let t = seg.t_start + tau;
        if t > horizon_end {
            // the prediction does not reach this far
            return true;
        }
        let d = s_at(seg, tau) - o.center(t);
        d.abs() <= ls + pc.buffer(o.t0, t)
    })
}

/// Overtaking-rule violations: passing on the right while faster and behind
/// (or level with) the vehicle, and sitting alongside on the left without the
/// minimum speed surplus. Returns the violated rule, if any.
pub fn overtaking_violation(seg: &Segment, o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig) -> Option<ObstacleId> {
    let dur = seg.duration();
    if !(dur > 0.0) || !(rc.no_right_overtake || rc.enforce_min_overtake_speed) {
        return None;
    }
    let ls = 0.5 * (o.length + rc.ego_length);
    let w1 = ls + pc.ds_max;
    let w2 = ls + 3.0 * pc.ds_max;
    let in_region = |tau: f64| {
        let t = seg.t_start + tau;
        (s_at(seg, tau) - o.center(t)).abs() <= ls + pc.buffer(o.t0, t)
    };

    if rc.no_right_overtake {
        let mut ev = vehicle_events(seg, o, pc, &[0.0, w1, w2]);
        ev.push(lane_crossing(seg, o.lane - 1.0), dur);
        if seg.a != 0.0 {
            ev.push((o.v0 - seg.v_start) / seg.a, dur);
        }
        let hit = ev.any(|tau| {
            let t = seg.t_start + tau;
            lane_at(seg, tau) <= o.lane - 1.0 && v_at(seg, tau) >= o.v0 && o.center(t) >= s_at(seg, tau) && in_region(tau)
        });
        if hit {
            return Some(ObstacleId::RightOvertake(o.id));
        }
    }
    if rc.enforce_min_overtake_speed {
        let mut ev = vehicle_events(seg, o, pc, &[w1, w2]);
        ev.push(lane_crossing(seg, o.lane + 1.0), dur);
        if seg.a != 0.0 {
            ev.push((o.v0 + rc.dv_overtake - seg.v_start) / seg.a, dur);
        }
        let hit = ev.any(|tau| lane_at(seg, tau) >= o.lane + 1.0 && v_at(seg, tau) <= o.v0 + rc.dv_overtake && in_region(tau));
        if hit {
            return Some(ObstacleId::SlowLeftOvertake(o.id));
        }
    }
    None
}

pub fn check_overtaking_rules(seg: &Segment, o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig) -> bool {
    overtaking_violation(seg, o, rc, pc).is_some()
}

/// Closed relative-time interval on which `s(tau)` lies in `[lo, hi]`, for a
/// segment with non-decreasing `s`.
fn s_window(seg: &Segment, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let dur = seg.duration();
    let s_start = seg.s_start;
    let s_end = seg.s_end();
    if s_end < lo || s_start > hi {
        return None;
    }
    let first_at = |level: f64| {
        let (r, n) = quadratic_roots(0.5 * seg.a, seg.v_start, s_start - level);
        r[..n].iter().copied().filter(|x| *x >= -1e-9 && *x <= dur + 1e-9).fold(f64::INFINITY, f64::min)
    };
    let last_at = |level: f64| {
        let (r, n) = quadratic_roots(0.5 * seg.a, seg.v_start, s_start - level);
        r[..n].iter().copied().filter(|x| *x >= -1e-9 && *x <= dur + 1e-9).fold(f64::NEG_INFINITY, f64::max)
    };
    let t1 = if s_start >= lo {
        0.0
    } else {
        let r = first_at(lo);
        if r.is_finite() {
            r
        } else {
            dur
        }
    };
    let t2 = if s_end <= hi {
        dur
    } else {
        let r = last_at(hi);
        if r.is_finite() {
            r
        } else {
            0.0
        }
    };
    let (t1, t2) = (t1.clamp(0.0, dur), t2.clamp(0.0, dur));
    (t1 <= t2).then_some((t1, t2))
}

/// Crossing (or touching) the stop line in an affected lane while red.
pub fn check_traffic_light(seg: &Segment, tl: &TrafficLightObstacle) -> bool {
    let dur = seg.duration();
    if !(dur > 0.0) {
        return false;
    }
    let Some((a, b)) = s_window(seg, tl.s, tl.s) else {
        return false;
    };
    let (ta, tb) = (seg.t_start + a, seg.t_start + b);
    for (r0, r1) in tl.red_intervals(ta, tb) {
        let lo = ta.max(r0);
        let hi = tb.min(r1);
        if lo > hi {
            continue;
        }
        let la = lane_at(seg, lo - seg.t_start);
        let lb = lane_at(seg, hi - seg.t_start);
        let (l_min, l_max) = (la.min(lb), la.max(lb));
        if tl.lanes.iter().any(|&j| l_max > j as f64 - 1.0 && l_min < j as f64 + 1.0) {
            return true;
        }
    }
    false
}

/// Reaching the zone's velocity limit anywhere inside it (inclusive).
pub fn check_speed_limit(seg: &Segment, z: &SpeedLimitZone) -> bool {
    if !(seg.duration() > 0.0) {
        return false;
    }
    let Some((a, b)) = s_window(seg, z.s, z.s + z.length) else {
        return false;
    };
    v_at(seg, a).max(v_at(seg, b)) >= z.v_limit
}

/// Entering the band between lanes `boundary` and `boundary + 1` inside the
/// banned stretch, filtered by the direction of lateral motion.
pub fn check_lane_ban(seg: &Segment, b: &LaneChangeBan) -> bool {
    let dur = seg.duration();
    if !(dur > 0.0) {
        return false;
    }
    let rate = seg.l_rate();
    match b.direction {
        BanDirection::LeftOnly if rate <= 0.0 => return false,
        BanDirection::RightOnly if rate >= 0.0 => return false,
        _ => {}
    }
    let Some((s1, s2)) = s_window(seg, b.s, b.s + b.length) else {
        return false;
    };
    let lo_l = b.boundary as f64;
    let hi_l = lo_l + 1.0;
    // open relative-time interval on which l is strictly inside the band
    let (u1, u2) = if rate == 0.0 {
        if seg.l_start > lo_l && seg.l_start < hi_l {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            return false;
        }
    } else {
        let x = (lo_l - seg.l_start) / rate;
        let y = (hi_l - seg.l_start) / rate;
        (x.min(y), x.max(y))
    };
    let lo = u1.max(s1);
    let hi = u2.min(s2);
    lo < hi || (lo == hi && lo > u1 && hi < u2)
}

/// Runs every predicate; the first violated obstacle is reported.
pub fn check_all(seg: &Segment, obstacles: &ObstacleSet, rc: &RuleConfig, pc: &PredictionConfig) -> CollisionReport {
    for (i, z) in obstacles.limits.iter().enumerate() {
        if check_speed_limit(seg, z) {
            return CollisionReport { first: Some(ObstacleId::SpeedLimit(i)) };
        }
    }
    for (i, tl) in obstacles.lights.iter().enumerate() {
        if check_traffic_light(seg, tl) {
            return CollisionReport { first: Some(ObstacleId::TrafficLight(i)) };
        }
    }
    for (i, b) in obstacles.bans.iter().enumerate() {
        if check_lane_ban(seg, b) {
            return CollisionReport { first: Some(ObstacleId::LaneBan(i)) };
        }
    }
    for o in &obstacles.vehicles {
        if check_vehicle_collision(seg, o, rc, pc) {
            return CollisionReport { first: Some(ObstacleId::Vehicle(o.id)) };
        }
        if let Some(id) = overtaking_violation(seg, o, rc, pc) {
            return CollisionReport { first: Some(id) };
        }
    }
    CollisionReport::default()
}

/// Point-in-obstacle test for a single state (used to validate plan starts).
pub fn state_violation(st: &EgoState, obstacles: &ObstacleSet, rc: &RuleConfig, pc: &PredictionConfig) -> Option<ObstacleId> {
    for (i, z) in obstacles.limits.iter().enumerate() {
        if st.s >= z.s && st.s <= z.s + z.length && st.v >= z.v_limit {
            return Some(ObstacleId::SpeedLimit(i));
        }
    }
    for (i, tl) in obstacles.lights.iter().enumerate() {
        if st.s == tl.s && tl.is_red(st.t) && tl.lanes.iter().any(|&j| (st.l - j as f64).abs() < 1.0) {
            return Some(ObstacleId::TrafficLight(i));
        }
    }
    for o in &obstacles.vehicles {
        if (st.l - o.lane).abs() < 1.0 {
            let half = 0.5 * (o.length + rc.ego_length) + pc.buffer(o.t0, st.t);
            if (st.s - o.center(st.t)).abs() <= half {
                return Some(ObstacleId::Vehicle(o.id));
            }
        }
    }
    None
}
