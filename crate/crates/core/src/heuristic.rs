//! Cost-to-go heuristics for the relaxed, time-invariant problem: the exact
//! backward-DP map over `(s, v)`, a closed-form model-based bound and the
//! zero heuristic.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig6;
use crate::obstacles::{check_speed_limit, SpeedLimitZone};
use crate::spacetime::{GridSpec, Segment};
use crate::vehicle::{cost_trans, RoadProfile, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeuristicKind {
    #[default]
    Dp,
    Mb,
    Zero,
}

impl HeuristicKind {
    pub fn name(self) -> &'static str {
        match self {
            HeuristicKind::Dp => "dp",
            HeuristicKind::Mb => "mb",
            HeuristicKind::Zero => "zero",
        }
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(HeuristicKind::Dp),
            "mb" => Ok(HeuristicKind::Mb),
            "zero" => Ok(HeuristicKind::Zero),
            other => Err(Error::Config(format!("unknown heuristic `{other}` (expected dp, mb or zero)"))),
        }
    }
}

impl std::fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Exact cost-to-go of the relaxed problem on the `(s, v)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostToGoMap {
    pub ds_grid: f64,
    pub dv: f64,
    pub goal_s: f64,
    pub terminal_v_set: Vec<u16>,
    n_v: usize,
    /// row-major, `values[i * n_v + j]` = J(i * ds_grid, j * dv)
    values: Vec<f64>,
    /// parameters of the model-based bound
    mb: MbBound,
}

/// Inputs of the model-based bound, captured when the map is built.
#[derive(Debug, Clone, PartialEq)]
struct MbBound {
    vp: VehicleParams,
    profile: RoadProfile,
    v_max: f64,
    v_terminal: f64,
}

fn on_grid(x: f64, step: f64) -> Option<i64> {
    let r = x / step;
    ((r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r.round() as i64)
}

/// Backward DP from the goal row. Edges advance exactly one `ds_grid` with
/// uniform acceleration; their cost is the transition energy with
/// regeneration disabled plus the time price, so all edges are non-negative.
/// `limits` are the time-invariant speed-limit zones of the route.
pub fn build_cost_to_go(
    vp: &VehicleParams,
    profile: &RoadProfile,
    gs: &GridSpec,
    goal_s: f64,
    terminal_v_set: Option<&[u16]>,
    limits: &[SpeedLimitZone],
) -> Result<CostToGoMap> {
    gs.validate()?;
    let rows = match on_grid(goal_s, gs.ds_grid) {
        Some(k) if k >= 0 => k as usize + 1,
        _ => return Err(Error::Config(format!("goal_s = {goal_s} is not on the {} m distance grid", gs.ds_grid))),
    };
    let n_v = gs.v_index_max() as usize + 1;
    let terminal: Vec<u16> = match terminal_v_set {
        Some(set) => {
            if let Some(bad) = set.iter().find(|&&k| k as usize >= n_v) {
                return Err(Error::Config(format!("terminal velocity index {bad} exceeds the velocity grid")));
            }
            let mut set = set.to_vec();
            set.sort_unstable();
            set.dedup();
            set
        }
        None => (0..n_v as u16).collect(),
    };
    let vp0 = vp.with_regen(0.0);

    let mut values = vec![f64::INFINITY; rows * n_v];
    for &k in &terminal {
        values[(rows - 1) * n_v + k as usize] = 0.0;
    }
    for i in (0..rows.saturating_sub(1)).rev() {
        let s_i = i as f64 * gs.ds_grid;
        let slope = profile.slope_at(s_i);
        for j in 0..n_v {
            let v_j = gs.velocity(j as u16);
            let mut best = f64::INFINITY;
            for k in 0..n_v {
                let next = values[(i + 1) * n_v + k];
                if !next.is_finite() {
                    continue;
                }
                let v_k = gs.velocity(k as u16);
                let v_avg = 0.5 * (v_j + v_k);
                if v_avg <= 0.0 {
                    continue;
                }
                let dt = gs.ds_grid / v_avg;
                let a = (v_k - v_j) / dt;
                if a < vp.a_min - 1e-9 || a > vp.a_max + 1e-9 {
                    continue;
                }
                let seg = Segment { t_start: 0.0, t_end: dt, s_start: s_i, v_start: v_j, v_end: v_k, a, l_start: 1.0, l_end: 1.0 };
                if limits.iter().any(|z| check_speed_limit(&seg, z)) {
                    continue;
                }
                let c = cost_trans(&vp0, v_j, v_k, dt, slope) + vp.time_weight * dt + next;
                if c < best {
                    best = c;
                }
            }
            values[i * n_v + j] = best;
        }
    }
    if values.iter().all(|v| !v.is_finite()) || (rows > 1 && values[..n_v].iter().all(|v| !v.is_finite())) {
        log::warn!("cost-to-go map has no feasible state at the route start; the DP heuristic is infinite there");
    }
    let v_terminal = terminal.first().map_or(0.0, |&k| gs.velocity(k));
    Ok(CostToGoMap {
        ds_grid: gs.ds_grid,
        dv: gs.dv,
        goal_s,
        terminal_v_set: terminal,
        n_v,
        values,
        mb: MbBound { vp: *vp, profile: profile.clone(), v_max: gs.v_max, v_terminal },
    })
}

impl CostToGoMap {
    pub fn rows(&self) -> usize {
        self.values.len() / self.n_v
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    /// Stored value at grid row `i` and velocity index `j`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_v + j]
    }

    /// Value at the next grid row at or beyond `s`. Past the goal the relaxed
    /// cost is exhausted and 0 is returned.
    pub fn query_dp(&self, s: f64, v_k: u16) -> f64 {
        if s >= self.goal_s {
            return 0.0;
        }
        let j = v_k as usize;
        if j >= self.n_v {
            return f64::INFINITY;
        }
        let i = if s <= 0.0 {
            0
        } else {
            let r = s / self.ds_grid;
            // tolerate rounding of positions that are on the grid
            let near = r.round();
            if (r - near).abs() <= 1e-9 * near.max(1.0) {
                near as usize
            } else {
                r.ceil() as usize
            }
        };
        self.value(i.min(self.rows() - 1), j)
    }

    /// Same as [`CostToGoMap::query_dp`] with the grid row given by index and
    /// a remainder flag, as the planner stores positions.
    pub fn query_dp_index(&self, s_k: i64, has_remainder: bool, v_k: u16) -> f64 {
        let j = v_k as usize;
        if j >= self.n_v {
            return f64::INFINITY;
        }
        let i = s_k + i64::from(has_remainder);
        if i <= 0 {
            return self.value(0, j);
        }
        let last = (self.rows() - 1) as i64;
        if i > last || (i == last && !has_remainder) {
            return 0.0;
        }
        self.value(i as usize, j)
    }

    /// Cost-to-go interpolated linearly between the rows around `s`. Used
    /// as the terminal cost of a horizon: unlike the ceil query it does not
    /// drop the cost of reaching the next row, so the search cannot gain by
    /// stopping just short of a grid line. Never below [`CostToGoMap::query_dp`]
    /// when the map is non-increasing in `s`.
    pub fn terminal_cost(&self, s: f64, v_k: u16) -> f64 {
        if s >= self.goal_s {
            return 0.0;
        }
        let j = v_k as usize;
        if j >= self.n_v {
            return f64::INFINITY;
        }
        let x = (s / self.ds_grid).max(0.0);
        let i0 = (x.floor() as usize).min(self.rows() - 1);
        let i1 = (i0 + 1).min(self.rows() - 1);
        let w = (x - i0 as f64).clamp(0.0, 1.0);
        let (a, b) = (self.value(i0, j), self.value(i1, j));
        if w == 0.0 {
            return a;
        }
        if !a.is_finite() || !b.is_finite() {
            return f64::INFINITY;
        }
        a + (b - a) * w
    }

    /// Model-based lower bound using the parameters the map was built with.
    pub fn query_mb(&self, s: f64, v: f64) -> f64 {
        let m = &self.mb;
        query_mb(&m.vp, &m.profile, s, v, self.goal_s, m.v_max, m.v_terminal)
    }

    /// Writes the map as `s,v,J` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "s,v,J")?;
        for i in 0..self.rows() {
            for j in 0..self.n_v {
                writeln!(w, "{},{},{}", sig6(i as f64 * self.ds_grid), sig6(j as f64 * self.dv), sig6(self.value(i, j)))?;
            }
        }
        Ok(())
    }
}

/// Speed minimising aerodynamic energy plus time price per metre, capped at
/// `v_max`.
pub fn most_efficient_speed(vp: &VehicleParams, v_max: f64) -> f64 {
    let c2 = vp.aero_coeff();
    if vp.time_weight <= 0.0 {
        return 0.0;
    }
    if c2 <= 0.0 {
        return v_max;
    }
    (vp.time_weight * vp.eta_drive / (2.0 * c2)).cbrt().min(v_max)
}

/// Closed-form lower bound on the remaining cost from `(s, v)` to `goal_s`.
///
/// Any trajectory pays at least its net wheel work divided by the drive
/// efficiency (regeneration returns less than that), and the net work splits
/// into static resistance over the distance, the change in kinetic energy
/// down to the slowest admissible terminal speed, and drag. Drag plus time
/// price per metre is convex in speed and minimised at
/// [`most_efficient_speed`]; the result is floored at zero.
pub fn query_mb(vp: &VehicleParams, profile: &RoadProfile, s: f64, v: f64, goal_s: f64, v_max: f64, v_terminal: f64) -> f64 {
    let d = goal_s - s;
    if d <= 0.0 {
        return 0.0;
    }
    let c2 = vp.aero_coeff();
    let v_best = most_efficient_speed(vp, v_max);
    let per_metre = if v_best > 0.0 { c2 * v_best * v_best / vp.eta_drive + vp.time_weight / v_best } else { 0.0 };
    let kinetic = 0.5 * vp.mass * (v_terminal * v_terminal - v * v);
    let bound = (profile.static_work(vp, s, goal_s) + kinetic) / vp.eta_drive + per_metre * d;
    bound.max(0.0)
}

pub fn query_zero(_s: f64, _v: f64) -> f64 {
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::resistive_force;

    fn setup() -> (VehicleParams, GridSpec) {
        (VehicleParams::default(), GridSpec { v_max: 10.0, ..GridSpec::default() })
    }

    #[test]
    fn boundary_and_monotonicity() {
        let (vp, gs) = setup();
        let map = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 200.0, None, &[]).unwrap();
        let last = map.rows() - 1;
        for j in 0..map.n_v() {
            assert_eq!(map.value(last, j), 0.0);
            for i in 1..map.rows() {
                assert!(map.value(i, j) <= map.value(i - 1, j) || !map.value(i - 1, j).is_finite());
            }
        }
    }

    #[test]
    fn goal_off_grid_rejected() {
        let (vp, gs) = setup();
        assert!(matches!(build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 205.0, None, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn cruise_upper_bound() {
        let (vp, gs) = setup();
        let vp = VehicleParams { time_weight: 0.0, ..vp };
        let map = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 100.0, None, &[]).unwrap();
        for j in 1..map.n_v() {
            let v = j as f64;
            let cruise = resistive_force(&vp, v, 0.0) * 100.0 / vp.eta_drive;
            assert!(map.value(0, j) <= cruise * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ceil_query() {
        let (vp, gs) = setup();
        let map = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 100.0, None, &[]).unwrap();
        assert_eq!(map.query_dp(30.0, 5), map.value(3, 5));
        assert_eq!(map.query_dp(25.0, 5), map.value(3, 5));
        assert_eq!(map.query_dp(95.0, 5), 0.0);
        assert_eq!(map.query_dp(120.0, 5), 0.0);
        assert_eq!(map.query_dp_index(2, true, 5), map.value(3, 5));
        assert_eq!(map.query_dp_index(3, false, 5), map.value(3, 5));
    }

    #[test]
    fn mb_below_dp() {
        let (vp, gs) = setup();
        let map = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 300.0, None, &[]).unwrap();
        for i in 0..map.rows() {
            for j in 0..map.n_v() {
                let s = i as f64 * gs.ds_grid;
                assert!(map.query_mb(s, j as f64) <= map.value(i, j) + 1e-9);
            }
        }
        assert_eq!(map.query_mb(300.0, 3.0), 0.0);
    }

    #[test]
    fn speed_zone_raises_upstream_cost() {
        let (vp, gs) = setup();
        let zone = SpeedLimitZone { s: 100.0, length: 50.0, v_limit: 30.0 / 3.6 };
        let free = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 300.0, None, &[]).unwrap();
        let limited = build_cost_to_go(&vp, &RoadProfile::flat(), &gs, 300.0, None, &[zone]).unwrap();
        assert!(limited.value(0, 10) > free.value(0, 10));
        assert!(limited.value(10, 10).is_infinite());
    }
}
