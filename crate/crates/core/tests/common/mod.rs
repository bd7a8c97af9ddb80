//! Independent oracles shared by the integration tests. Nothing here calls
//! the closed-form machinery it is used to check.

#![allow(dead_code)]

use ecoplan::heuristic::{build_cost_to_go, CostToGoMap};
use ecoplan::obstacles::{
    BanDirection, LaneChangeBan, ObstacleSet, PredictionConfig, RuleConfig, SpeedLimitZone, TrafficLightObstacle,
    VehicleObstacle,
};
use ecoplan::planner::{PlannerConfig, Problem};
use ecoplan::spacetime::{EgoState, GridSpec, LaneDir, Segment};
use ecoplan::vehicle::{RoadProfile, VehicleParams};
use rand::Rng;

pub const DENSE_STEP: f64 = 1e-3;

/// Sample times `t_start, t_start + step, ..., t_end` (end always included).
pub fn sample_times(seg: &Segment, step: f64) -> impl Iterator<Item = f64> + '_ {
    let n = (seg.duration() / step).ceil() as usize;
    (0..=n).map(move |k| (seg.t_start + k as f64 * step).min(seg.t_end))
}

fn pos(seg: &Segment, t: f64) -> f64 {
    let tau = t - seg.t_start;
    seg.s_start + seg.v_start * tau + 0.5 * seg.a * tau * tau
}

fn lane(seg: &Segment, t: f64) -> f64 {
    let d = seg.duration();
    seg.l_start + (seg.l_end - seg.l_start) * (t - seg.t_start) / d
}

/// Signed clearance to a vehicle obstacle at `t`: positive means free,
/// `None` when the ego is laterally clear of the obstacle's lane.
pub fn vehicle_clearance(seg: &Segment, o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig, t: f64) -> Option<f64> {
    if (lane(seg, t) - o.lane).abs() >= 1.0 {
        return None;
    }
    if t > o.t0 + pc.t_hor {
        return Some(f64::NEG_INFINITY);
    }
    let buffer = if t < o.t0 + pc.t_rep { pc.ds_max } else { 3.0 * pc.ds_max };
    let half = 0.5 * (o.length + rc.ego_length) + buffer;
    let centre = o.s0 + o.v0 * (t - o.t0);
    Some((pos(seg, t) - centre).abs() - half)
}

/// Dense-sampling collision oracle; also returns the smallest clearance seen.
pub fn dense_vehicle(seg: &Segment, o: &VehicleObstacle, rc: &RuleConfig, pc: &PredictionConfig, step: f64) -> (bool, f64) {
    let mut min_clear = f64::INFINITY;
    for t in sample_times(seg, step) {
        if let Some(c) = vehicle_clearance(seg, o, rc, pc, t) {
            min_clear = min_clear.min(c);
        }
    }
    (min_clear <= 0.0, min_clear)
}

fn is_red(tl: &TrafficLightObstacle, t: f64) -> bool {
    tl.phases.iter().any(|p| match tl.period {
        Some(period) => (t - p.offset).rem_euclid(period) <= p.duration,
        None => t >= p.offset && t <= p.offset + p.duration,
    })
}

/// Dense oracle for a stop line: the sampled position brackets the line
/// while red in an affected lane. The bracketing sample pair stands in for
/// the crossing instant, so only crossings well inside a red phase count.
pub fn dense_light(seg: &Segment, tl: &TrafficLightObstacle, step: f64) -> bool {
    let times: Vec<f64> = sample_times(seg, step).collect();
    for w in times.windows(2) {
        let (s0, s1) = (pos(seg, w[0]), pos(seg, w[1]));
        if s0 <= tl.s && s1 >= tl.s {
            let t = if s1 > s0 { w[0] + (w[1] - w[0]) * (tl.s - s0) / (s1 - s0) } else { w[0] };
            let l = lane(seg, t);
            if is_red(tl, t) && tl.lanes.iter().any(|&j| (l - j as f64).abs() < 1.0) {
                return true;
            }
        }
    }
    false
}

/// Dense oracle for a speed-limit zone (limit reached inside the zone).
pub fn dense_limit(seg: &Segment, z: &SpeedLimitZone, step: f64) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for t in sample_times(seg, step) {
        let s = pos(seg, t);
        if s >= z.s && s <= z.s + z.length {
            let v = seg.v_start + seg.a * (t - seg.t_start);
            worst = worst.max(v - z.v_limit);
        }
    }
    (worst >= 0.0, worst)
}

/// Dense oracle for a lane-change ban: strictly between the two lanes of
/// the boundary inside the stretch, moving in a banned direction.
pub fn dense_ban(seg: &Segment, b: &LaneChangeBan, step: f64) -> bool {
    let rate = seg.l_end - seg.l_start;
    let dir_ok = match b.direction {
        BanDirection::Both => true,
        BanDirection::LeftOnly => rate > 0.0,
        BanDirection::RightOnly => rate < 0.0,
    };
    if !dir_ok {
        return false;
    }
    let lo = b.boundary as f64;
    sample_times(seg, step).any(|t| {
        let s = pos(seg, t);
        let l = lane(seg, t);
        s >= b.s && s <= b.s + b.length && l > lo && l < lo + 1.0
    })
}

fn wheel_power(vp: &VehicleParams, v_i: f64, a: f64, slope: f64, tau: f64) -> f64 {
    let v = v_i + a * tau;
    let force = vp.mass * a + vp.mass * 9.81 * (vp.c_rr * slope.cos() + slope.sin()) + 0.5 * vp.rho * vp.c_d_a * v * v;
    force * v
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        acc += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Transition energy by quadrature of the wheel power. Sign changes of the
/// power are located by scanning and bisection, and each piece is
/// integrated with Simpson's rule (exact for the cubic power polynomial).
pub fn quadrature_energy(vp: &VehicleParams, v_i: f64, v_f: f64, dt: f64, slope: f64) -> f64 {
    let a = (v_f - v_i) / dt;
    let p = |tau: f64| wheel_power(vp, v_i, a, slope, tau);
    let scan = 256;
    let mut cuts = vec![0.0];
    for k in 0..scan {
        let (mut lo, mut hi) = (dt * k as f64 / scan as f64, dt * (k + 1) as f64 / scan as f64);
        if (p(lo) > 0.0) != (p(hi) > 0.0) {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (p(mid) > 0.0) == (p(lo) > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
    }
    cuts.push(dt);
    cuts.windows(2)
        .map(|w| {
            let work = simpson(p, w[0], w[1], 64);
            if work >= 0.0 {
                work / vp.eta_drive
            } else {
                work * vp.eta_regen
            }
        })
        .sum()
}

/// Brute-force optimum of the relaxed problem on a corridor: every velocity
/// sequence is walked separately (no memoisation), with edges that cover
/// one grid row at constant acceleration.
pub struct Corridor {
    n_v: usize,
    goal_row: usize,
    /// cost of the edge `(row, v_i, v_f)`, infinite when infeasible
    table: Vec<f64>,
}

impl Corridor {
    pub fn new(vp: &VehicleParams, profile: &RoadProfile, gs: &GridSpec, goal_row: usize, limits: &[SpeedLimitZone]) -> Self {
        let n_v = gs.v_index_max() as usize + 1;
        let vp0 = VehicleParams { eta_regen: 0.0, ..*vp };
        let mut table = vec![f64::INFINITY; goal_row * n_v * n_v];
        for r in 0..goal_row {
            let s = r as f64 * gs.ds_grid;
            let slope = profile.slope_at(s);
            for i in 0..n_v {
                for j in 0..n_v {
                    let (vi, vf) = (i as f64 * gs.dv, j as f64 * gs.dv);
                    let v_avg = 0.5 * (vi + vf);
                    if v_avg <= 0.0 {
                        continue;
                    }
                    let dt = gs.ds_grid / v_avg;
                    let a = (vf - vi) / dt;
                    if a < vp.a_min - 1e-9 || a > vp.a_max + 1e-9 {
                        continue;
                    }
                    let seg = Segment { t_start: 0.0, t_end: dt, s_start: s, v_start: vi, v_end: vf, a, l_start: 1.0, l_end: 1.0 };
                    if limits.iter().any(|z| dense_limit(&seg, z, dt / 4000.0).0) {
                        continue;
                    }
                    table[(r * n_v + i) * n_v + j] = quadrature_energy(&vp0, vi, vf, dt, slope) + vp.time_weight * dt;
                }
            }
        }
        Self { n_v, goal_row, table }
    }

    pub fn optimum(&self, row: usize, v0: u16) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack: Vec<(usize, usize, f64)> = vec![(row, v0 as usize, 0.0)];
        while let Some((r, i, g)) = stack.pop() {
            if r == self.goal_row {
                best = best.min(g);
                continue;
            }
            for j in 0..self.n_v {
                let c = self.table[(r * self.n_v + i) * self.n_v + j];
                if c.is_finite() {
                    stack.push((r + 1, j, g + c));
                }
            }
        }
        best
    }
}

/// A rolling random road profile with breakpoints on the 10 m grid, so
/// edge-start slopes and exact slope integrals describe the same road.
pub fn random_profile(rng: &mut impl Rng, length: f64) -> RoadProfile {
    let mut samples = Vec::new();
    let mut s = 0.0;
    while s <= length {
        samples.push(ecoplan::vehicle::ProfileSample { s, slope: rng.random_range(-0.03..0.03), speed_limit: None });
        s += 10.0 * rng.random_range(1..5) as f64;
    }
    RoadProfile { samples }
}

pub fn random_vehicle(rng: &mut impl Rng) -> VehicleParams {
    VehicleParams {
        mass: rng.random_range(1100.0..2000.0),
        c_rr: rng.random_range(0.008..0.015),
        c_d_a: rng.random_range(0.5..0.8),
        eta_drive: rng.random_range(0.8..0.95),
        eta_regen: 0.0,
        time_weight: rng.random_range(500.0..2500.0),
        ..VehicleParams::default()
    }
}

/// Owns everything a [`Problem`] borrows.
pub struct World {
    pub obstacles: ObstacleSet,
    pub map: CostToGoMap,
    pub profile: RoadProfile,
    pub gs: GridSpec,
    pub vp: VehicleParams,
    pub rc: RuleConfig,
    pub pc: PredictionConfig,
    pub cfg: PlannerConfig,
    pub start: EgoState,
}

impl World {
    pub fn problem(&self) -> Problem<'_> {
        Problem { obstacles: &self.obstacles, map: &self.map, profile: &self.profile, gs: &self.gs, vp: &self.vp, rc: &self.rc, pc: &self.pc }
    }
}

/// A small two-lane planning problem with slow traffic, one light and an
/// optional speed limit; grids are aligned so every edge spans one row.
pub fn small_world(rng: &mut impl Rng) -> World {
    let gs = GridSpec { dv: 1.0, ds_grid: 10.0, dt_grid: 1.0, ds_exp: 10.0, dt_exp: 20.0, n_lanes: 2, v_max: 6.0 };
    let vp = random_vehicle(rng);
    let goal = 200.0;
    let profile = random_profile(rng, goal);
    let mut obstacles = ObstacleSet::default();
    // a slow car in the ego lane forces a choice between following and passing
    obstacles.vehicles.push(VehicleObstacle { id: 0, s0: rng.random_range(20.0..50.0), v0: rng.random_range(0.0..3.0), lane: 1.0, length: 4.5, t0: 0.0 });
    for id in 1..rng.random_range(1..4) {
        obstacles.vehicles.push(VehicleObstacle {
            id,
            s0: rng.random_range(0.0..90.0),
            v0: rng.random_range(0.0..5.0),
            lane: rng.random_range(1..=2) as f64,
            length: 4.5,
            t0: 0.0,
        });
    }
    obstacles.vehicles.retain(|o| o.lane != 1.0 || (o.s0 - 0.0).abs() > 12.0);
    if rng.random_bool(0.6) {
        obstacles.lights.push(TrafficLightObstacle {
            s: rng.random_range(3..9) as f64 * 10.0 + 5.0,
            lanes: vec![1, 2],
            phases: vec![ecoplan::obstacles::RedPhase { offset: rng.random_range(0.0..15.0), duration: rng.random_range(5.0..15.0) }],
            period: Some(30.0),
        });
    }
    if rng.random_bool(0.3) {
        obstacles.limits.push(SpeedLimitZone { s: rng.random_range(0..10) as f64 * 10.0, length: 30.0, v_limit: 5.5 });
    }
    let map = build_cost_to_go(&vp, &profile, &gs, goal, None, &obstacles.limits).expect("map");
    let cfg = PlannerConfig {
        s_hor: rng.random_range(5..=10) as f64 * 10.0,
        t_hor: rng.random_range(10.0..20.0),
        timeout: 60.0,
        max_expansions: 1_000_000,
        ..PlannerConfig::default()
    };
    World {
        obstacles,
        map,
        profile,
        gs,
        vp,
        rc: RuleConfig::default(),
        pc: PredictionConfig { ds_max: 1.0, t_rep: 1.0, t_hor: 60.0 },
        cfg,
        start: EgoState { t: 0.0, s: 0.0, l: 1.0, v: rng.random_range(0..=6) as f64, l_dir: LaneDir::None },
    }
}
