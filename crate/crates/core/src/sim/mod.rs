//! Deterministic closed-loop simulation: IDM traffic, periodic light
//! phases, and an ego vehicle that executes its stitched plan exactly.

pub mod agents;
pub mod scenario;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use agents::{idm_accel, step_agents, Agent, EgoFootprint, IdmParams, Leader};
pub use scenario::{bundled, load_scenario, Perception, PerceptionMode, Perturbation, Scenario};

use crate::error::{Error, Result};
use crate::format::sig6;
use crate::heuristic::{build_cost_to_go, CostToGoMap, HeuristicKind};
use crate::planner::{PlannerConfig, Problem};
use crate::replan::{replan_step, CycleInput, CycleRecord, Observation};
use crate::spacetime::{EgoState, Trajectory};
use crate::vehicle::cost_trans;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TickRecord {
    pub t: f64,
    pub s: f64,
    pub l: f64,
    pub v: f64,
    pub a: f64,
    /// energy spent so far [J]
    pub cum_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LightCrossing {
    pub light: usize,
    pub t: f64,
    pub lane: f64,
    pub red: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Outcome {
    /// the ego passed the end of the route
    Completed,
    /// the simulated-time cap was hit first
    TimeLimit,
    /// ground-truth overlap between ego and an agent
    Collision { agent: usize, t: f64, gap: f64 },
    /// the ego ran out of plan
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    /// ego traction energy [kJ]
    pub total_cost_kj: f64,
    /// time to reach the end of the route [s]
    pub travel_time: Option<f64>,
    pub sim_time: f64,
    pub cycles: usize,
    pub fallbacks: usize,
    pub nodes_mean: f64,
    pub nodes_std: f64,
    pub nodes_median: f64,
    /// wall-clock, excluded from the deterministic summary
    #[serde(skip)]
    pub planning_time_mean: f64,
    #[serde(skip)]
    pub planning_time_std: f64,
    #[serde(skip)]
    pub planning_time_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLog {
    pub scenario: String,
    pub seed: u64,
    pub heuristic: HeuristicKind,
    pub outcome: Outcome,
    pub metrics: Metrics,
    pub crossings: Vec<LightCrossing>,
    pub cycles: Vec<CycleRecord>,
    #[serde(skip)]
    pub ticks: Vec<TickRecord>,
}

/// Knobs of a single run beyond the scenario itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub heuristic: HeuristicKind,
    pub perturb: Option<Perturbation>,
    /// overrides the scenario seed
    pub seed: Option<u64>,
    /// overrides the planner's lane-change switch
    pub allow_lane_changes: Option<bool>,
    /// overrides the scenario perception model
    pub perception: Option<Perception>,
}

impl RunOptions {
    pub fn new(heuristic: HeuristicKind) -> Self {
        Self { heuristic, perturb: None, seed: None, allow_lane_changes: None, perception: None }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs the closed loop with the given heuristic and optional perturbation.
pub fn run(sc: &Scenario, heuristic: HeuristicKind, perturb: Option<Perturbation>) -> Result<SimLog> {
    run_with(sc, &RunOptions { perturb, ..RunOptions::new(heuristic) })
}

/// Builds the route's cost-to-go map as the simulator does.
pub fn route_map(sc: &Scenario) -> Result<CostToGoMap> {
    build_cost_to_go(&sc.ego.vehicle, &sc.road.profile, &sc.grid, sc.road.length, None, &sc.speed_zones())
}

/// Agents the planner has to consider: everything except vehicles behind
/// the ego in a lane it occupies (they yield to the ego) and vehicles too
/// far away to interact within one horizon.
fn observe(agents: &[Agent], ego: &EgoState, t0: f64, sc: &Scenario, cycle: usize, rng: &mut ChaCha8Rng, perception: &Perception) -> Vec<Observation> {
    let magnitude = perception.magnitude.unwrap_or(sc.replan.ds_max);
    let reach_ahead = sc.planner.s_hor + sc.grid.ds_exp + sc.grid.v_max * sc.replan.t_plan() + 3.0 * sc.replan.ds_max + 20.0;
    let reach_behind = sc.grid.v_max * (sc.planner.t_hor + sc.replan.t_plan()) + 20.0;
    let mut out = Vec::new();
    for a in agents {
        let shares_lane = (ego.l - a.lane as f64).abs() < 1.0;
        if shares_lane && a.s < ego.s {
            continue;
        }
        let rel = a.s - ego.s;
        if rel > reach_ahead + 0.5 * a.length || rel < -reach_behind {
            continue;
        }
        let err = match perception.mode {
            PerceptionMode::Exact => 0.0,
            PerceptionMode::Uniform => rng.random_range(-magnitude..=magnitude),
            PerceptionMode::Alternating => {
                if cycle.is_multiple_of(2) {
                    magnitude
                } else {
                    -magnitude
                }
            }
        };
        out.push(Observation { id: a.id, s: a.s + err, v: a.v, lane: a.lane as f64, length: a.length, t: t0 });
    }
    out
}

/// Energy of the plan pieces executed over `[t0, t1]` [J].
fn executed_energy(traj: &Trajectory, t0: f64, t1: f64, sc: &Scenario) -> f64 {
    let vp = &sc.ego.vehicle;
    let mut e = 0.0;
    for seg in &traj.segments {
        let a = seg.t_start.max(t0);
        let b = seg.t_end.min(t1);
        if b <= a {
            continue;
        }
        let slope = sc.road.profile.slope_at(seg.s_at(a));
        e += cost_trans(vp, seg.v_at(a), seg.v_at(b), b - a, slope);
    }
    e
}

pub fn run_with(sc0: &Scenario, opts: &RunOptions) -> Result<SimLog> {
    let seed = opts.seed.unwrap_or(sc0.seed);
    let sc = match &opts.perturb {
        Some(p) => sc0.perturbed(p, seed)?,
        None => sc0.clone(),
    };
    let perception = opts.perception.unwrap_or(sc.sim.perception);
    let pcfg = PlannerConfig {
        heuristic_kind: opts.heuristic,
        allow_lane_changes: opts.allow_lane_changes.unwrap_or(sc.planner.allow_lane_changes),
        ..sc.planner
    };
    let map = route_map(&sc)?;
    let statics = sc.static_obstacles();
    let pc = sc.replan.prediction(&pcfg, &sc.grid);
    let base = Problem { obstacles: &statics, map: &map, profile: &sc.road.profile, gs: &sc.grid, vp: &sc.ego.vehicle, rc: &sc.rules, pc: &pc };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut agents = sc.agents();
    let dt = sc.sim.dt;
    let ticks_per_cycle = (sc.replan.t_rep / dt).round() as u64;
    let max_ticks = (sc.sim.max_time / dt).round() as u64;

    let mut traj: Option<Trajectory> = None;
    let mut cycles: Vec<CycleRecord> = Vec::new();
    let mut ticks: Vec<TickRecord> = Vec::new();
    let mut crossings: Vec<LightCrossing> = Vec::new();
    let mut ego = EgoState { t: 0.0, s: sc.ego.s, l: sc.ego.lane as f64, v: sc.ego.v, l_dir: crate::spacetime::LaneDir::None };
    let mut cum_cost = 0.0;
    let mut outcome = Outcome::TimeLimit;
    let mut travel_time = None;

    let mut k: u64 = 0;
    loop {
        let t = k as f64 * dt;
        if k.is_multiple_of(ticks_per_cycle) {
            let cycle = (k / ticks_per_cycle) as usize;
            let obs = observe(&agents, &ego, t, &sc, cycle, &mut rng, &perception);
            let input = CycleInput { t0: t, observations: &obs, statics: &statics, previous: traj.as_ref(), measured: ego };
            let (mut next, record) = replan_step(&input, &sc.replan, &pcfg, &base);
            next.trim_before(t - 1e-9);
            log::debug!("cycle {cycle} t0 {t:.2} nodes {} fallback {}", record.nodes_expanded, record.fallback);
            traj = Some(next);
            cycles.push(record);
        }
        let plan = traj.as_ref().expect("planned on the first tick");
        let Some(state) = plan.state_at(t) else {
            outcome = Outcome::Aborted;
            break;
        };
        let a = plan.segment_index_at(t).map_or(0.0, |i| plan.segments[i].a);
        if k > 0 {
            cum_cost += executed_energy(plan, t - dt, t, &sc);
            for (i, tl) in sc.lights.iter().enumerate() {
                if ego.s < tl.s && state.s >= tl.s {
                    crossings.push(LightCrossing { light: i, t, lane: state.l, red: tl.is_red(t) });
                }
            }
        }
        ego = state;
        ticks.push(TickRecord { t, s: ego.s, l: ego.l, v: ego.v, a, cum_cost });

        // ground truth: whole-lane occupancy, bumper-to-bumper gap
        for ag in &agents {
            if (ego.l - ag.lane as f64).abs() < 1.0 {
                let gap = (ego.s - ag.s).abs() - 0.5 * (sc.ego.length + ag.length);
                if gap <= 0.0 {
                    outcome = Outcome::Collision { agent: ag.id, t, gap };
                    log::error!("{}", Error::Collision { agent: ag.id, t, gap });
                }
            }
        }
        if matches!(outcome, Outcome::Collision { .. }) {
            break;
        }
        if ego.s >= sc.road.length {
            outcome = Outcome::Completed;
            travel_time = Some(t);
            break;
        }
        if k >= max_ticks {
            break;
        }
        let footprint = EgoFootprint { s: ego.s, l: ego.l, v: ego.v, length: sc.ego.length };
        step_agents(&mut agents, &sc.lights, Some(footprint), t, dt);
        k += 1;
    }

    let nodes: Vec<f64> = cycles.iter().map(|c| c.nodes_expanded as f64).collect();
    let times: Vec<f64> = cycles.iter().map(|c| c.planning_time).collect();
    let (nodes_mean, nodes_std) = mean_std(&nodes);
    let (pt_mean, pt_std) = mean_std(&times);
    let metrics = Metrics {
        total_cost_kj: cum_cost / 1000.0,
        travel_time,
        sim_time: ticks.last().map_or(0.0, |r| r.t),
        cycles: cycles.len(),
        fallbacks: cycles.iter().filter(|c| c.fallback).count(),
        nodes_mean,
        nodes_std,
        nodes_median: median(&nodes),
        planning_time_mean: pt_mean,
        planning_time_std: pt_std,
        planning_time_median: median(&times),
    };
    Ok(SimLog { scenario: sc.name.clone(), seed, heuristic: opts.heuristic, outcome, metrics, crossings, cycles, ticks })
}

impl SimLog {
    pub fn is_collision_free(&self) -> bool {
        !matches!(self.outcome, Outcome::Collision { .. })
    }

    /// Deterministic JSON summary (no wall-clock values).
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("log serialises");
        s.push('\n');
        s
    }

    pub fn write_ticks_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,s,l,v,a,cum_cost")?;
        for r in &self.ticks {
            writeln!(w, "{},{},{},{},{},{}", sig6(r.t), sig6(r.s), sig6(r.l), sig6(r.v), sig6(r.a), sig6(r.cum_cost))?;
        }
        Ok(())
    }

    /// Wall-clock planning times per cycle; not reproducible by nature.
    pub fn write_timing_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t0,planning_time,nodes_expanded")?;
        for c in &self.cycles {
            writeln!(w, "{},{},{}", sig6(c.t0), sig6(c.planning_time), c.nodes_expanded)?;
        }
        Ok(())
    }
}

/// Plans once from the scenario's initial state, with exact observations,
/// the way the first replanning cycle of [`run`] does.
pub fn plan_once(sc: &Scenario, heuristic: HeuristicKind, with_tree: bool) -> Result<crate::planner::PlanResult> {
    let map = route_map(sc)?;
    let statics = sc.static_obstacles();
    let pcfg = PlannerConfig { heuristic_kind: heuristic, ..sc.planner };
    let pc = sc.replan.prediction(&pcfg, &sc.grid);
    let ego = EgoState { t: 0.0, s: sc.ego.s, l: sc.ego.lane as f64, v: sc.ego.v, l_dir: crate::spacetime::LaneDir::None };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let obs = observe(&sc.agents(), &ego, 0.0, sc, 0, &mut rng, &Perception::default());
    let obstacles = crate::replan::predict(&obs, &statics, 0.0);
    let p = Problem { obstacles: &obstacles, map: &map, profile: &sc.road.profile, gs: &sc.grid, vp: &sc.ego.vehicle, rc: &sc.rules, pc: &pc };
    if with_tree {
        crate::planner::plan_with_tree(&ego, &p, &pcfg)
    } else {
        crate::planner::plan(&ego, &p, &pcfg)
    }
}
