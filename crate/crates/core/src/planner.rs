//! Hybrid A* over the space-time grid with dual time/distance horizons.
//!
//! Nodes are deduplicated on their discrete key while the exact continuous
//! state travels along in the remainders. The search stops when a node that
//! reaches either horizon is popped; such nodes enter OPEN with the DP
//! cost-to-go as terminal cost, so every heuristic kind optimises the same
//! objective and differs only in how much of the graph it explores.

use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::sig6;
use crate::heuristic::{CostToGoMap, HeuristicKind};
use crate::obstacles::{check_all, state_violation, ObstacleSet, PredictionConfig, RuleConfig};
use crate::spacetime::{DiscreteKey, EgoState, GridSpec, LaneDir, SearchNode, Segment, Trajectory};
use crate::vehicle::{check_internal_limits, edge_cost, lane_change_progress, transition, RoadProfile, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// distance horizon [m]
    pub s_hor: f64,
    /// time horizon [s]
    pub t_hor: f64,
    /// wall-clock budget [s]
    pub timeout: f64,
    pub heuristic_kind: HeuristicKind,
    /// deterministic cap on expansions, checked together with the timeout
    pub max_expansions: usize,
    pub allow_lane_changes: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { s_hor: 100.0, t_hor: 10.0, timeout: 1.0, heuristic_kind: HeuristicKind::Dp, max_expansions: 200_000, allow_lane_changes: true }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_hor > 0.0 && self.t_hor > 0.0 && self.timeout > 0.0) {
            return Err(Error::Config("planner horizons and timeout must be > 0".into()));
        }
        if self.max_expansions == 0 {
            return Err(Error::Config("planner.max_expansions must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    OpenExhausted,
    Timeout,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon_reached",
            Termination::OpenExhausted => "open_exhausted",
            Termination::Timeout => "timeout",
        }
    }
}

/// One closed node of the search tree, for plotting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeRecord {
    pub t: f64,
    pub s: f64,
    pub l: f64,
    pub v: f64,
    pub g: f64,
    pub f: f64,
    /// index of the parent record
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub nodes_expanded: usize,
    /// wall-clock [s]
    pub planning_time: f64,
    pub termination: Termination,
    pub reached_progress: f64,
    pub tree: Vec<TreeRecord>,
}

/// Everything the search reads but never mutates.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub obstacles: &'a ObstacleSet,
    pub map: &'a CostToGoMap,
    pub profile: &'a RoadProfile,
    pub gs: &'a GridSpec,
    pub vp: &'a VehicleParams,
    pub rc: &'a RuleConfig,
    pub pc: &'a PredictionConfig,
}

/// Position and time of the search root, against which progress is measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Origin {
    pub t: f64,
    pub s: f64,
}

/// Normalised progress towards whichever horizon is closer, capped at 1.
pub fn horizon_progress(n: &SearchNode, gs: &GridSpec, origin: Origin, cfg: &PlannerConfig) -> f64 {
    let ds = (n.s(gs) - origin.s) / cfg.s_hor;
    let dt = (n.t(gs) - origin.t) / cfg.t_hor;
    ds.max(dt).min(1.0)
}

/// Progress with the end of the route counting as a reached horizon: past
/// the goal the objective has nothing left to optimise.
fn progress(n: &SearchNode, p: &Problem, origin: Origin, cfg: &PlannerConfig) -> f64 {
    if n.s(p.gs) >= p.map.goal_s {
        1.0
    } else {
        horizon_progress(n, p.gs, origin, cfg)
    }
}

const REACHED: f64 = 1.0 - 1e-12;

fn heuristic_value(n: &SearchNode, terminal: bool, p: &Problem, kind: HeuristicKind) -> f64 {
    let dp = || p.map.query_dp_index(n.s_k, n.s_r > 0.0, n.v_k);
    if terminal {
        return p.map.terminal_cost(n.s(p.gs), n.v_k);
    }
    match kind {
        HeuristicKind::Dp => dp(),
        HeuristicKind::Mb => p.map.query_mb(n.s(p.gs), n.v(p.gs)),
        HeuristicKind::Zero => 0.0,
    }
}

/// Splits an edge so lateral motion runs at the lane-change rate and stops
/// once the target lane coordinate is reached, instead of being stretched
/// over the whole edge.
pub fn edge_pieces(seg: Segment, t_lc: f64) -> ([Segment; 2], usize) {
    let lat = (seg.l_end - seg.l_start).abs() * t_lc;
    let t_c = seg.t_start + lat;
    if lat == 0.0 || t_c >= seg.t_end - 1e-9 {
        return ([seg; 2], 1);
    }
    let v_c = seg.v_at(t_c);
    let first = Segment { t_end: t_c, v_end: v_c, ..seg };
    let second = Segment { t_start: t_c, s_start: seg.s_at(t_c), v_start: v_c, l_start: seg.l_end, ..seg };
    ([first, second], 2)
}

/// Children of `n`: every target velocity, crossed with the lateral options,
/// minus those violating vehicle limits or colliding with an obstacle.
pub fn expand(n: &SearchNode, p: &Problem, cfg: &PlannerConfig, origin: Origin) -> Vec<SearchNode> {
    let gs = p.gs;
    let vp = p.vp;
    let t = n.t(gs);
    let s = n.s(gs);
    let l = n.l();
    let v_i = n.v(gs);
    let key = n.key();
    let slope = p.profile.slope_at(s);
    let mut out = Vec::with_capacity(3 * (gs.v_index_max() as usize + 1));

    for v_k in 0..=gs.v_index_max() {
        let v_f = gs.velocity(v_k);
        let tr = transition(v_i, v_f, gs);
        if !check_internal_limits(vp, tr.a, v_f, gs) {
            continue;
        }
        let base = n.g + edge_cost(vp, v_i, v_f, tr.dt, slope);

        // (l_end, direction after the edge, extra cost)
        let mut lateral: [(f64, LaneDir, f64); 3] = [(l, LaneDir::None, 0.0); 3];
        let mut n_lat = 0;
        if n.l_dir != LaneDir::None {
            let done = if n.l_dir == LaneDir::Left { n.l_r } else { 1.0 - n.l_r };
            let step = lane_change_progress(tr.dt, vp.t_lc, done);
            lateral[0] = if done + step >= 1.0 - 1e-12 {
                let target = if n.l_dir == LaneDir::Left { n.l_k + 1 } else { n.l_k };
                (target as f64, LaneDir::None, 0.0)
            } else {
                (l + n.l_dir.sign() * step, n.l_dir, 0.0)
            };
            n_lat = 1;
        } else {
            lateral[n_lat] = (l, LaneDir::None, 0.0);
            n_lat += 1;
            if cfg.allow_lane_changes {
                let step = lane_change_progress(tr.dt, vp.t_lc, 0.0);
                let finished = step >= 1.0 - 1e-12;
                if n.l_k > 1 {
                    lateral[n_lat] = if finished { (l - 1.0, LaneDir::None, vp.c_lc) } else { (l - step, LaneDir::Right, vp.c_lc) };
                    n_lat += 1;
                }
                if n.l_k < gs.n_lanes as i64 {
                    lateral[n_lat] = if finished { (l + 1.0, LaneDir::None, vp.c_lc) } else { (l + step, LaneDir::Left, vp.c_lc) };
                    n_lat += 1;
                }
            }
        }

        for &(l_end, dir, extra) in &lateral[..n_lat] {
            let seg = Segment { t_start: t, t_end: t + tr.dt, s_start: s, v_start: v_i, v_end: v_f, a: tr.a, l_start: l, l_end };
            let (pieces, n_pieces) = edge_pieces(seg, vp.t_lc);
            if !pieces[..n_pieces].iter().all(|piece| check_all(piece, p.obstacles, p.rc, p.pc).is_free()) {
                continue;
            }
            let g = base + extra;
            let Ok(mut child) = SearchNode::from_continuous(gs, v_k, t + tr.dt, s + tr.ds, l_end, dir, g, g) else {
                continue;
            };
            child.parent = Some(key);
            let terminal = progress(&child, p, origin, cfg) >= REACHED;
            let h = heuristic_value(&child, terminal, p, cfg.heuristic_kind);
            if !h.is_finite() {
                continue;
            }
            child.f = g + h;
            out.push(child);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    h: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenEntry {}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenEntry {
    // reversed: BinaryHeap is a max-heap and we want the smallest f on top,
    // then the smallest h, then the oldest entry
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.h.total_cmp(&self.h)).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Store {
    nodes: Vec<SearchNode>,
    closed: Vec<bool>,
    index: HashMap<DiscreteKey, usize>,
}

impl Store {
    fn get(&self, key: &DiscreteKey) -> Option<usize> {
        self.index.get(key).copied()
    }
}

/// Builds the start node; the observed velocity is rounded to the grid.
pub fn start_node(start: &EgoState, p: &Problem) -> Result<SearchNode> {
    let gs = p.gs;
    let v_k = gs.nearest_v_index(start.v);
    let fractional = start.l.fract() != 0.0;
    let dir = if fractional { start.l_dir } else { LaneDir::None };
    if fractional && dir == LaneDir::None {
        return Err(Error::Domain(format!("lane coordinate {} is between lanes but no lane change is in progress", start.l)));
    }
    SearchNode::from_continuous(gs, v_k, start.t, start.s, start.l, dir, 0.0, 0.0)
}

/// Best-first search from `start` until a horizon is reached, OPEN empties
/// or the budget runs out. The trajectory leads to the popped horizon node,
/// or otherwise to the closed node with the greatest horizon progress.
pub fn plan(start: &EgoState, p: &Problem, cfg: &PlannerConfig) -> Result<PlanResult> {
    plan_inner(start, p, cfg, false)
}

/// Like [`plan`], additionally returning every closed node for plotting.
pub fn plan_with_tree(start: &EgoState, p: &Problem, cfg: &PlannerConfig) -> Result<PlanResult> {
    plan_inner(start, p, cfg, true)
}

fn plan_inner(start: &EgoState, p: &Problem, cfg: &PlannerConfig, record_tree: bool) -> Result<PlanResult> {
    cfg.validate()?;
    let clock = Instant::now();
    if let Some(id) = state_violation(start, p.obstacles, p.rc, p.pc) {
        return Err(Error::StartInCollision(id.to_string()));
    }
    let mut root = start_node(start, p)?;
    let origin = Origin { t: root.t(p.gs), s: root.s(p.gs) };
    let h0 = heuristic_value(&root, false, p, cfg.heuristic_kind);
    root.f = if h0.is_finite() { h0 } else { 0.0 };

    let mut store = Store { nodes: vec![root], closed: vec![false], index: HashMap::new() };
    store.index.insert(root.key(), 0);
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    open.push(OpenEntry { f: root.f, h: root.f, seq, idx: 0 });

    let mut best = 0usize;
    let mut best_progress = 0.0;
    let mut expanded = 0usize;
    let mut termination = Termination::OpenExhausted;

    loop {
        if expanded >= cfg.max_expansions || clock.elapsed().as_secs_f64() > cfg.timeout {
            termination = Termination::Timeout;
            break;
        }
        let Some(entry) = open.pop() else {
            break;
        };
        let idx = entry.idx;
        if store.closed[idx] || entry.f != store.nodes[idx].f {
            continue;
        }
        store.closed[idx] = true;
        let node = store.nodes[idx];
        let progress = progress(&node, p, origin, cfg);
        if progress > best_progress || (progress == best_progress && node.f < store.nodes[best].f) {
            best = idx;
            best_progress = progress;
        }
        if progress >= REACHED {
            best = idx;
            best_progress = progress;
            termination = Termination::HorizonReached;
            break;
        }

        expanded += 1;
        for child in expand(&node, p, cfg, origin) {
            let key = child.key();
            match store.index.entry(key) {
                Entry::Occupied(e) => {
                    let j = *e.get();
                    if store.closed[j] || child.g >= store.nodes[j].g {
                        continue;
                    }
                    store.nodes[j] = child;
                    seq += 1;
                    open.push(OpenEntry { f: child.f, h: child.f - child.g, seq, idx: j });
                }
                Entry::Vacant(e) => {
                    let j = store.nodes.len();
                    e.insert(j);
                    store.nodes.push(child);
                    store.closed.push(false);
                    seq += 1;
                    open.push(OpenEntry { f: child.f, h: child.f - child.g, seq, idx: j });
                }
            }
        }
    }

    let trajectory = if best == 0 { standstill(&store.nodes[0], p.gs, cfg) } else { reconstruct(best, &store.nodes, &store.index, p.gs, p.vp.t_lc)? };
    let tree = if record_tree { tree_records(&store, p.gs) } else { Vec::new() };
    Ok(PlanResult {
        trajectory,
        nodes_expanded: expanded.max(1),
        planning_time: clock.elapsed().as_secs_f64(),
        termination,
        reached_progress: best_progress,
        tree,
    })
}

fn standstill(root: &SearchNode, gs: &GridSpec, cfg: &PlannerConfig) -> Trajectory {
    let (t, s, l) = (root.t(gs), root.s(gs), root.l());
    Trajectory {
        segments: vec![Segment { t_start: t, t_end: t + cfg.t_hor, s_start: s, v_start: 0.0, v_end: 0.0, a: 0.0, l_start: l, l_end: l }],
        total_cost: 0.0,
    }
}

/// Walks the parent chain from `last` back to the root and emits one
/// constant-acceleration segment per edge.
pub fn reconstruct(last: usize, nodes: &[SearchNode], index: &HashMap<DiscreteKey, usize>, gs: &GridSpec, t_lc: f64) -> Result<Trajectory> {
    let mut chain = vec![last];
    let mut cur = last;
    while let Some(pk) = nodes[cur].parent {
        let Some(&pi) = index.get(&pk) else {
            return Err(Error::BrokenParentChain);
        };
        if chain.len() > nodes.len() {
            return Err(Error::BrokenParentChain);
        }
        chain.push(pi);
        cur = pi;
    }
    chain.reverse();
    let mut segments = Vec::with_capacity(chain.len().saturating_sub(1));
    for w in chain.windows(2) {
        let (a, b) = (&nodes[w[0]], &nodes[w[1]]);
        let (t0, t1) = (a.t(gs), b.t(gs));
        let (v0, v1) = (a.v(gs), b.v(gs));
        let acc = if t1 > t0 { (v1 - v0) / (t1 - t0) } else { 0.0 };
        let seg = Segment { t_start: t0, t_end: t1, s_start: a.s(gs), v_start: v0, v_end: v1, a: acc, l_start: a.l(), l_end: b.l() };
        let (pieces, n) = edge_pieces(seg, t_lc);
        segments.extend_from_slice(&pieces[..n]);
    }
    Ok(Trajectory { segments, total_cost: nodes[last].g })
}

fn tree_records(store: &Store, gs: &GridSpec) -> Vec<TreeRecord> {
    let mut out = Vec::new();
    let mut position = vec![usize::MAX; store.nodes.len()];
    for (i, n) in store.nodes.iter().enumerate() {
        if store.closed[i] {
            position[i] = out.len();
            out.push(TreeRecord { t: n.t(gs), s: n.s(gs), l: n.l(), v: n.v(gs), g: n.g, f: n.f, parent: None });
        }
    }
    for (i, n) in store.nodes.iter().enumerate() {
        if store.closed[i] {
            if let Some(pi) = n.parent.and_then(|k| store.get(&k)) {
                if position[pi] != usize::MAX {
                    out[position[i]].parent = Some(position[pi]);
                }
            }
        }
    }
    out
}

/// Search tree as CSV: `t,s,l,v,g,f,parent` (empty parent for the root).
pub fn write_tree_csv<W: Write>(tree: &[TreeRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,s,l,v,g,f,parent")?;
    for r in tree {
        let parent = r.parent.map(|p| p.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{},{}", sig6(r.t), sig6(r.s), sig6(r.l), sig6(r.v), sig6(r.g), sig6(r.f), parent)?;
    }
    Ok(())
}

/// Trajectory as CSV: one row per segment start plus the final state.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    writeln!(w, "t,s,l,v,a")?;
    for seg in &traj.segments {
        writeln!(w, "{},{},{},{},{}", sig6(seg.t_start), sig6(seg.s_start), sig6(seg.l_start), sig6(seg.v_start), sig6(seg.a))?;
    }
    if let Some(last) = traj.segments.last() {
        writeln!(w, "{},{},{},{},{}", sig6(last.t_end), sig6(last.s_end()), sig6(last.l_end), sig6(last.v_end), sig6(0.0))?;
    }
    Ok(())
}
