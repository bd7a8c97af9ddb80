//! Traffic agents: lane-keeping vehicles following the Intelligent Driver
//! Model towards their leader or a red stop line.

use serde::{Deserialize, Serialize};

use crate::obstacles::TrafficLightObstacle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    /// [m/s]; zero parks the vehicle
    pub desired_speed: f64,
    /// [s]
    pub time_headway: f64,
    /// standstill gap [m]
    pub min_gap: f64,
    /// [m/s^2]
    pub max_accel: f64,
    /// comfortable deceleration [m/s^2]
    pub comfort_decel: f64,
    pub delta: f64,
    /// red lights are ignored when stopping would need more than this [m/s^2]
    pub dilemma_decel: f64,
    /// physical braking limit [m/s^2]
    pub max_decel: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { desired_speed: 12.0, time_headway: 1.5, min_gap: 2.0, max_accel: 1.5, comfort_decel: 2.0, delta: 4.0, dilemma_decel: 5.0, max_decel: 9.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    /// centre position [m]
    pub s: f64,
    pub v: f64,
    pub lane: u8,
    pub length: f64,
    pub idm: IdmParams,
}

/// Something an agent may have to follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// bumper-to-bumper gap [m]
    pub gap: f64,
    pub v: f64,
}

/// IDM acceleration for speed `v` behind `leader`.
pub fn idm_accel(p: &IdmParams, v: f64, leader: Option<Leader>) -> f64 {
    let free = if p.desired_speed > 0.0 { 1.0 - (v / p.desired_speed).powf(p.delta) } else { -1.0 };
    let interaction = match leader {
        Some(l) => {
            let dv = v - l.v;
            let s_star = p.min_gap + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
            let gap = l.gap.max(1e-3);
            (s_star / gap).powi(2)
        }
        None => 0.0,
    };
    let a = p.max_accel * (free - interaction);
    if p.desired_speed <= 0.0 && v <= 0.0 {
        return 0.0;
    }
    a.max(-p.max_decel)
}

/// Ego footprint as seen by the agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFootprint {
    pub s: f64,
    pub l: f64,
    pub v: f64,
    pub length: f64,
}

fn red_stop_line(a: &Agent, lights: &[TrafficLightObstacle], t: f64) -> Option<Leader> {
    let front = a.s + 0.5 * a.length;
    let mut best: Option<Leader> = None;
    for tl in lights {
        if tl.s <= front - 1e-9 || !tl.lanes.contains(&a.lane) || !tl.is_red(t) {
            continue;
        }
        let gap = tl.s - front;
        // committed: cannot stop comfortably any more
        if gap <= 0.0 || a.v * a.v / (2.0 * gap) > a.idm.dilemma_decel {
            continue;
        }
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader { gap, v: 0.0 });
        }
    }
    best
}

/// Advances all agents by `dt` with semi-implicit Euler. Agents follow the
/// nearest of: the next agent ahead in their lane, the ego when it occupies
/// that lane ahead of them, and a red stop line they can still stop at.
pub fn step_agents(agents: &mut [Agent], lights: &[TrafficLightObstacle], ego: Option<EgoFootprint>, t: f64, dt: f64) {
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&i, &j| agents[i].lane.cmp(&agents[j].lane).then(agents[i].s.total_cmp(&agents[j].s)).then(agents[i].id.cmp(&agents[j].id)));

    let mut accel = vec![0.0; agents.len()];
    for (pos, &i) in order.iter().enumerate() {
        let a = &agents[i];
        let mut leader: Option<Leader> = None;
        let mut consider = |cand: Leader| {
            if leader.is_none_or(|l| cand.gap < l.gap) {
                leader = Some(cand);
            }
        };
        if let Some(&j) = order.get(pos + 1) {
            let b = &agents[j];
            if b.lane == a.lane {
                consider(Leader { gap: b.s - a.s - 0.5 * (a.length + b.length), v: b.v });
            }
        }
        if let Some(e) = ego {
            if (e.l - a.lane as f64).abs() < 1.0 && e.s > a.s {
                consider(Leader { gap: e.s - a.s - 0.5 * (a.length + e.length), v: e.v });
            }
        }
        if let Some(stop) = red_stop_line(a, lights, t) {
            consider(stop);
        }
        accel[i] = idm_accel(&a.idm, a.v, leader);
    }
    for (a, acc) in agents.iter_mut().zip(accel) {
        a.v = (a.v + acc * dt).max(0.0);
        a.s += a.v * dt;
    }
}
