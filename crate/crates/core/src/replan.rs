//! Receding-horizon loop: observations are turned into predicted obstacles,
//! each plan starts where the previous one will be after the planning
//! latency `t_plan`, and the new plan is spliced in at that instant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obstacles::{ObstacleSet, PredictionConfig, VehicleObstacle};
use crate::planner::{plan, PlanResult, PlannerConfig, Problem, Termination};
use crate::spacetime::{EgoState, GridSpec, LaneDir, Segment, Trajectory};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplanConfig {
    /// replanning period [s]
    pub t_rep: f64,
    /// planning latency bound [s]; defaults to `t_rep`
    pub t_plan: Option<f64>,
    /// worst-case relative distance error [m]
    pub ds_max: f64,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        Self { t_rep: 0.5, t_plan: None, ds_max: 1.0 }
    }
}

impl ReplanConfig {
    pub fn t_plan(&self) -> f64 {
        self.t_plan.unwrap_or(self.t_rep)
    }

    pub fn validate(&self, cfg: &PlannerConfig) -> Result<()> {
        let tp = self.t_plan();
        if !(tp > 0.0 && tp <= self.t_rep && self.t_rep < cfg.t_hor) {
            return Err(Error::Config(format!("replan needs 0 < t_plan <= t_rep < t_hor (t_plan {tp}, t_rep {}, t_hor {})", self.t_rep, cfg.t_hor)));
        }
        if !(self.ds_max >= 0.0) {
            return Err(Error::Config("replan.ds_max must be >= 0".into()));
        }
        Ok(())
    }

    /// Prediction settings for a plan anchored at the switch time: the
    /// horizon covers the whole planning horizon plus one expansion.
    pub fn prediction(&self, cfg: &PlannerConfig, gs: &GridSpec) -> PredictionConfig {
        PredictionConfig { ds_max: self.ds_max, t_rep: self.t_rep, t_hor: cfg.t_hor + gs.dt_exp + 1e-6 }
    }
}

/// Measured state of another vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: usize,
    pub s: f64,
    pub v: f64,
    pub lane: f64,
    pub length: f64,
    pub t: f64,
}

/// Constant-velocity obstacles from observations taken at `t0`, re-anchored
/// at `t_anchor >= t0` so the buffer tiers start where the plan starts.
/// Static obstacles are copied from `statics`.
pub fn predict(observations: &[Observation], statics: &ObstacleSet, t_anchor: f64) -> ObstacleSet {
    let vehicles = observations
        .iter()
        .map(|o| VehicleObstacle { id: o.id, s0: o.s + o.v * (t_anchor - o.t), v0: o.v, lane: o.lane, length: o.length, t0: t_anchor })
        .collect();
    ObstacleSet { vehicles, lights: statics.lights.clone(), limits: statics.limits.clone(), bans: statics.bans.clone() }
}

/// Concatenates `old` up to `t_switch` with `new`, which must start there
/// in (nearly) the same state.
pub fn stitch(old: &Trajectory, new: &Trajectory, t_switch: f64, gs: &GridSpec) -> Result<Trajectory> {
    let Some(first) = new.segments.first() else {
        return Err(Error::StitchMismatch { t: t_switch, ds: f64::INFINITY, dv: f64::INFINITY, dl: f64::INFINITY });
    };
    if old.is_empty() {
        return Ok(new.clone());
    }
    let Some(at) = state_before(old, t_switch) else {
        return Err(Error::StitchMismatch { t: t_switch, ds: f64::INFINITY, dv: f64::INFINITY, dl: f64::INFINITY });
    };
    let ds = (at.s - first.s_start).abs();
    let dv = (at.v - first.v_start).abs();
    let dl = (at.l - first.l_start).abs();
    let dt = (first.t_start - t_switch).abs();
    if ds > 0.5 * gs.ds_grid || dv > 0.5 * gs.dv + 1e-9 || dl > 1e-6 || dt > 1e-9 {
        return Err(Error::StitchMismatch { t: t_switch, ds, dv, dl });
    }
    let mut segments: Vec<Segment> = Vec::with_capacity(old.segments.len() + new.segments.len());
    for seg in &old.segments {
        if seg.t_start >= t_switch {
            break;
        }
        let mut seg = *seg;
        if seg.t_end > t_switch {
            seg.v_end = seg.v_at(t_switch);
            seg.l_end = seg.l_at(t_switch);
            seg.t_end = t_switch;
        }
        segments.push(seg);
    }
    segments.extend_from_slice(&new.segments);
    Ok(Trajectory { segments, total_cost: new.total_cost })
}

/// State at `t` taken from the segment that ends there, so a joint at the
/// switch time reports the old plan's values.
fn state_before(traj: &Trajectory, t: f64) -> Option<EgoState> {
    let seg = traj.segments.iter().find(|s| s.t_start <= t && t <= s.t_end)?;
    Some(EgoState { t, s: seg.s_at(t), l: seg.l_at(t), v: seg.v_at(t), l_dir: seg.lane_dir() })
}

/// How long the fallback holds the vehicle after it stopped [s].
pub const FALLBACK_HOLD: f64 = 3600.0;

/// Maximum-deceleration stop from `st`, finishing any lane change in
/// progress, followed by an indefinite hold.
pub fn stop_profile(st: &EgoState, vp: &VehicleParams) -> Vec<Segment> {
    let t_stop = if st.v > 0.0 { st.v / -vp.a_min } else { 0.0 };
    let lane_end = match st.l_dir {
        LaneDir::Left => st.l.ceil(),
        LaneDir::Right => st.l.floor(),
        LaneDir::None => st.l,
    };
    // lateral motion keeps its nominal rate
    let t_lat = (lane_end - st.l).abs() * vp.t_lc;
    let mut out = Vec::new();
    let mut t = st.t;
    let mut s = st.s;
    let mut l = st.l;
    let l_at = |time: f64| if t_lat > 0.0 { st.l + (lane_end - st.l) * ((time - st.t) / t_lat).min(1.0) } else { lane_end };
    let mut cuts = vec![st.t + t_stop];
    if t_lat > 0.0 {
        cuts.push(st.t + t_lat);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    for c in cuts {
        if c <= t {
            continue;
        }
        let v0 = (st.v + vp.a_min * (t - st.t)).max(0.0);
        let moving = t < st.t + t_stop;
        let a = if moving { vp.a_min } else { 0.0 };
        let v1 = if moving { (st.v + vp.a_min * (c - st.t)).max(0.0) } else { 0.0 };
        let l1 = l_at(c);
        let seg = Segment { t_start: t, t_end: c, s_start: s, v_start: v0, v_end: v1, a, l_start: l, l_end: l1 };
        s = seg.s_end();
        l = l1;
        t = c;
        out.push(seg);
    }
    out.push(Segment { t_start: t, t_end: t + FALLBACK_HOLD, s_start: s, v_start: 0.0, v_end: 0.0, a: 0.0, l_start: l, l_end: l });
    out
}

/// Per-cycle log entry. `planning_time` is wall-clock and therefore kept out
/// of the deterministic outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub t0: f64,
    pub start: EgoState,
    pub nodes_expanded: usize,
    pub termination: Option<Termination>,
    pub reached_progress: f64,
    pub fallback: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub planning_time: f64,
}

/// Inputs of one replanning cycle.
pub struct CycleInput<'a> {
    pub t0: f64,
    pub observations: &'a [Observation],
    pub statics: &'a ObstacleSet,
    pub previous: Option<&'a Trajectory>,
    pub measured: EgoState,
}

/// Plans from the state the ego will have at `t0 + t_plan` (or from the
/// measured state on the first cycle) and splices the result into the
/// previous plan. On failure the previous plan is kept up to the switch time
/// and followed by a maximum-deceleration stop.
pub fn replan_step(
    input: &CycleInput,
    cfg: &ReplanConfig,
    pcfg: &PlannerConfig,
    base: &Problem,
) -> (Trajectory, CycleRecord) {
    let gs = base.gs;
    let (t_switch, start) = match input.previous {
        None => (input.t0, input.measured),
        Some(prev) => {
            let t_switch = input.t0 + cfg.t_plan();
            match prev.state_at(t_switch) {
                Some(mut st) => {
                    if st.l.fract() == 0.0 {
                        st.l_dir = LaneDir::None;
                    }
                    (t_switch, st)
                }
                None => (input.t0, input.measured),
            }
        }
    };
    let obstacles = predict(input.observations, input.statics, t_switch);
    let pc = cfg.prediction(pcfg, gs);
    let problem = Problem { obstacles: &obstacles, pc: &pc, ..*base };

    let mut record = CycleRecord {
        t0: input.t0,
        start,
        nodes_expanded: 0,
        termination: None,
        reached_progress: 0.0,
        fallback: false,
        error: None,
        planning_time: 0.0,
    };

    if let Some(prev) = input.previous.filter(|_| start.s >= base.map.goal_s) {
        // route finished: nothing left to optimise, just keep rolling
        return (extend_to_cover(prev.clone(), t_switch + cfg.t_rep, base.vp), record);
    }

    let outcome: Result<PlanResult> = plan(&start, &problem, pcfg);
    let planned = match outcome {
        Ok(res) => {
            record.nodes_expanded = res.nodes_expanded;
            record.termination = Some(res.termination);
            record.reached_progress = res.reached_progress;
            record.planning_time = res.planning_time;
            if res.reached_progress > 0.0 {
                Ok(extend_to_cover(res.trajectory, t_switch + cfg.t_rep, base.vp))
            } else {
                Err(Error::Domain("boxed in: no collision-free expansion".into()))
            }
        }
        Err(e) => Err(e),
    };

    let old = input.previous.cloned().unwrap_or_default();
    let result = planned.and_then(|new| stitch(&old, &new, t_switch, gs));
    match result {
        Ok(traj) => (traj, record),
        Err(e) => {
            record.fallback = true;
            record.error = Some(e.to_string());
            (fallback(&old, &start, input.t0, base.vp), record)
        }
    }
}

/// Appends a stop when a plan ends before the next switch time.
fn extend_to_cover(mut traj: Trajectory, until: f64, vp: &VehicleParams) -> Trajectory {
    if traj.end_time().is_some_and(|end| end < until) {
        if let Some(end) = traj.end_state() {
            traj.segments.extend(stop_profile(&end, vp));
        }
    }
    traj
}

/// A stop needs no planning time, so braking starts at `t0` rather than at
/// the switch time the failed plan was meant for.
fn fallback(old: &Trajectory, start: &EgoState, t0: f64, vp: &VehicleParams) -> Trajectory {
    let Some(now) = state_before(old, t0) else {
        return Trajectory { segments: stop_profile(start, vp), total_cost: 0.0 };
    };
    let mut segments: Vec<Segment> = old.segments.iter().filter(|s| s.t_start < t0).copied().collect();
    if let Some(last) = segments.last_mut() {
        if last.t_end > t0 {
            last.v_end = last.v_at(t0);
            last.l_end = last.l_at(t0);
            last.t_end = t0;
        }
    }
    segments.extend(stop_profile(&now, vp));
    Trajectory { segments, total_cost: old.total_cost }
}
