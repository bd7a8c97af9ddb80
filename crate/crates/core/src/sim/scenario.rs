//! Scenario files: schema, validation and seeded perturbation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::agents::{Agent, IdmParams};
use crate::error::{Error, Result};
use crate::obstacles::{LaneChangeBan, ObstacleSet, RuleConfig, SpeedLimitZone, TrafficLightObstacle};
use crate::planner::PlannerConfig;
use crate::replan::ReplanConfig;
use crate::spacetime::GridSpec;
use crate::vehicle::{RoadProfile, VehicleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Road {
    /// route length [m]; the ego's goal
    pub length: f64,
    pub n_lanes: u8,
    #[serde(default)]
    pub profile: RoadProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentDefaults {
    pub length: f64,
    pub idm: IdmParams,
}

impl Default for AgentDefaults {
    fn default() -> Self {
        Self { length: 4.5, idm: IdmParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    /// centre position [m]
    pub s: f64,
    pub v: f64,
    pub lane: u8,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub desired_speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoSpec {
    pub s: f64,
    pub v: f64,
    pub lane: u8,
    #[serde(default = "default_ego_length")]
    pub length: f64,
    #[serde(default)]
    pub vehicle: VehicleParams,
}

fn default_ego_length() -> f64 {
    4.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptionMode {
    /// ground truth
    #[default]
    Exact,
    /// independent uniform error in `[-magnitude, magnitude]` per vehicle and cycle
    Uniform,
    /// `+magnitude` and `-magnitude` on alternate cycles, for all vehicles
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perception {
    pub mode: PerceptionMode,
    /// error bound [m]; defaults to the replanning `ds_max`
    pub magnitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// integration tick [s]
    pub dt: f64,
    /// simulated-time cap [s]
    pub max_time: f64,
    pub perception: Perception,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self { dt: 0.01, max_time: 300.0, perception: Perception::default() }
    }
}

/// Spreads of the initial-state randomisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    /// position standard deviation [m]
    pub sigma_s: f64,
    /// velocity standard deviation [m/s]
    pub sigma_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub road: Road,
    #[serde(default)]
    pub lights: Vec<TrafficLightObstacle>,
    #[serde(default)]
    pub limits: Vec<SpeedLimitZone>,
    #[serde(default)]
    pub bans: Vec<LaneChangeBan>,
    #[serde(default)]
    pub agent_defaults: AgentDefaults,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    pub ego: EgoSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub replan: ReplanConfig,
    #[serde(default)]
    pub rules: RuleConfig,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub seed: u64,
    /// default randomisation used by `bench`
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Scenario { field: field.into(), message: message.into() }
}

fn multiple_of(x: f64, step: f64) -> bool {
    let r = x / step;
    (r - r.round()).abs() < 1e-9 * r.abs().max(1.0)
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            invalid(if field == "." { "(top level)".to_string() } else { field }, e.inner().to_string())
        })?;
        sc.normalize();
        sc.validate()?;
        Ok(sc)
    }

    /// Copies values that live in two places (lane count, ego length) into
    /// the sub-configurations.
    fn normalize(&mut self) {
        self.grid.n_lanes = self.road.n_lanes;
        self.rules.ego_length = self.ego.length;
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.road.length;
        if !(len > 0.0) {
            return Err(invalid("road.length", "must be > 0"));
        }
        if self.road.n_lanes == 0 {
            return Err(invalid("road.n_lanes", "must be >= 1"));
        }
        self.road.profile.validate()?;
        let wrap = |field: &str, r: Result<()>| r.map_err(|e| invalid(field, e.to_string()));
        wrap("grid", self.grid.validate())?;
        wrap("ego.vehicle", self.ego.vehicle.validate())?;
        wrap("planner", self.planner.validate())?;
        wrap("replan", self.replan.validate(&self.planner))?;
        if !multiple_of(len, self.grid.ds_grid) {
            return Err(invalid("road.length", format!("must be a multiple of grid.ds_grid = {}", self.grid.ds_grid)));
        }
        if !(self.sim.dt > 0.0) || !(self.sim.max_time > 0.0) {
            return Err(invalid("sim", "dt and max_time must be > 0"));
        }
        if !multiple_of(self.replan.t_rep, self.sim.dt) || !multiple_of(self.replan.t_plan(), self.sim.dt) {
            return Err(invalid("replan.t_rep", "t_rep and t_plan must be multiples of sim.dt"));
        }
        let lane_ok = |lane: u8| lane >= 1 && lane <= self.road.n_lanes;
        for (i, tl) in self.lights.iter().enumerate() {
            if !(0.0..=len).contains(&tl.s) {
                return Err(invalid(format!("lights[{i}].s"), "outside the road"));
            }
            if let Some(&bad) = tl.lanes.iter().find(|&&l| !lane_ok(l)) {
                return Err(invalid(format!("lights[{i}].lanes"), format!("lane {bad} does not exist")));
            }
            wrap(&format!("lights[{i}]"), tl.validate())?;
        }
        for (i, z) in self.limits.iter().enumerate() {
            if !(z.s >= 0.0 && z.length > 0.0 && z.s + z.length <= len + 1e-9 && z.v_limit > 0.0) {
                return Err(invalid(format!("limits[{i}]"), "zone must lie on the road with positive length and limit"));
            }
        }
        for (i, b) in self.bans.iter().enumerate() {
            if !(b.s >= 0.0 && b.length > 0.0 && b.s + b.length <= len + 1e-9) {
                return Err(invalid(format!("bans[{i}]"), "zone must lie on the road with positive length"));
            }
            if b.boundary < 1 || b.boundary >= self.road.n_lanes {
                return Err(invalid(format!("bans[{i}].boundary"), "must separate two existing lanes"));
            }
        }
        if !lane_ok(self.ego.lane) {
            return Err(invalid("ego.lane", "lane does not exist"));
        }
        if !(0.0..len).contains(&self.ego.s) || !(self.ego.v >= 0.0 && self.ego.v <= self.grid.v_max) {
            return Err(invalid("ego", "start must lie on the road with 0 <= v <= grid.v_max"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !lane_ok(a.lane) {
                return Err(invalid(format!("agents[{i}].lane"), "lane does not exist"));
            }
            if !(0.0..=len).contains(&a.s) {
                return Err(invalid(format!("agents[{i}].s"), format!("position {} outside the road [0, {len}]", a.s)));
            }
            if !(a.v >= 0.0) {
                return Err(invalid(format!("agents[{i}].v"), "must be >= 0"));
            }
            if a.length.is_some_and(|l| !(l > 0.0)) {
                return Err(invalid(format!("agents[{i}].length"), "must be > 0"));
            }
        }
        self.check_overlaps()
    }

    fn check_overlaps(&self) -> Result<()> {
        let agents = self.agents();
        for lane in 1..=self.road.n_lanes {
            let mut in_lane: Vec<(f64, f64, String)> =
                agents.iter().filter(|a| a.lane == lane).map(|a| (a.s, a.length, format!("agents[{}]", a.id))).collect();
            if self.ego.lane == lane {
                in_lane.push((self.ego.s, self.ego.length, "ego".into()));
            }
            in_lane.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in in_lane.windows(2) {
                if w[1].0 - w[0].0 <= 0.5 * (w[0].1 + w[1].1) {
                    return Err(invalid(w[1].2.clone(), format!("overlaps {} in lane {lane}", w[0].2)));
                }
            }
        }
        Ok(())
    }

    /// Agents with defaults applied; ids are positions in the `agents` list.
    pub fn agents(&self) -> Vec<Agent> {
        self.agents
            .iter()
            .enumerate()
            .map(|(id, a)| {
                let mut idm = self.agent_defaults.idm;
                if let Some(v0) = a.desired_speed {
                    idm.desired_speed = v0;
                }
                Agent { id, s: a.s, v: a.v, lane: a.lane, length: a.length.unwrap_or(self.agent_defaults.length), idm }
            })
            .collect()
    }

    /// Explicit zones plus the limits attached to road profile samples.
    pub fn speed_zones(&self) -> Vec<SpeedLimitZone> {
        let mut zones = self.limits.clone();
        let samples = &self.road.profile.samples;
        for (i, p) in samples.iter().enumerate() {
            if let Some(v_limit) = p.speed_limit {
                let end = samples.get(i + 1).map_or(self.road.length, |q| q.s).min(self.road.length);
                if end > p.s {
                    zones.push(SpeedLimitZone { s: p.s, length: end - p.s, v_limit });
                }
            }
        }
        zones
    }

    /// Time-invariant obstacles of the route.
    pub fn static_obstacles(&self) -> ObstacleSet {
        ObstacleSet { vehicles: Vec::new(), lights: self.lights.clone(), limits: self.speed_zones(), bans: self.bans.clone() }
    }

    /// Copy with agent positions and velocities drawn around their nominal
    /// values (normal, truncated at two standard deviations). Agents keep
    /// their side of the ego and overlaps are resolved by shifting followers.
    pub fn perturbed(&self, p: &Perturbation, seed: u64) -> Result<Scenario> {
        if !(p.sigma_s >= 0.0 && p.sigma_v >= 0.0) {
            return Err(Error::Config("perturbation spreads must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |sigma: f64, rng: &mut ChaCha8Rng| -> f64 {
            if sigma == 0.0 {
                return 0.0;
            }
            let normal = Normal::new(0.0, sigma).expect("finite spread");
            loop {
                let x: f64 = normal.sample(rng);
                if x.abs() <= 2.0 * sigma {
                    return x;
                }
            }
        };
        let mut out = self.clone();
        let defaults = self.agent_defaults;
        for a in out.agents.iter_mut() {
            a.s += draw(p.sigma_s, &mut rng);
            let parked = a.desired_speed.unwrap_or(defaults.idm.desired_speed) <= 0.0;
            let dv = draw(p.sigma_v, &mut rng);
            if !parked {
                a.v = (a.v + dv).max(0.0);
            }
        }

        let ego = self.ego;
        let len = self.road.length;
        for lane in 1..=self.road.n_lanes {
            let mut idx: Vec<usize> = (0..out.agents.len()).filter(|&i| out.agents[i].lane == lane).collect();
            idx.sort_by(|&i, &j| self.agents[i].s.total_cmp(&self.agents[j].s));
            let length = |i: usize| self.agents[i].length.unwrap_or(defaults.length);
            let need = |a: f64, b: f64| 0.5 * (a + b) + 1.0;
            let ahead: Vec<usize> = idx.iter().copied().filter(|&i| ego.lane != lane || self.agents[i].s > ego.s).collect();
            let behind: Vec<usize> = idx.iter().copied().filter(|&i| ego.lane == lane && self.agents[i].s <= ego.s).collect();
            let mut prev: Option<(f64, f64)> = (ego.lane == lane).then_some((ego.s, ego.length));
            for &i in &ahead {
                if let Some((s, l)) = prev {
                    out.agents[i].s = out.agents[i].s.max(s + need(l, length(i)));
                }
                prev = Some((out.agents[i].s, length(i)));
            }
            let mut next: Option<(f64, f64)> = Some((ego.s, ego.length));
            for &i in behind.iter().rev() {
                if let Some((s, l)) = next {
                    out.agents[i].s = out.agents[i].s.min(s - need(l, length(i)));
                }
                next = Some((out.agents[i].s, length(i)));
            }
        }
        for a in out.agents.iter_mut() {
            a.s = a.s.clamp(0.0, len);
        }
        out.validate()?;
        Ok(out)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text)
}

/// Scenario documents shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("urban_750m", include_str!("../../../../scenarios/urban_750m.json")),
    ("empty_road", include_str!("../../../../scenarios/empty_road.json")),
    ("blocked_road", include_str!("../../../../scenarios/blocked_road.json")),
    ("lane_change_light", include_str!("../../../../scenarios/lane_change_light.json")),
];

/// Loads a bundled scenario by name.
pub fn bundled(name: &str) -> Result<Scenario> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("no bundled scenario named `{name}`")))?;
    Scenario::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "road": { "length": 200, "n_lanes": 2 },
        "ego": { "s": 0, "v": 10, "lane": 1 },
        "agents": [ { "s": 50, "v": 10, "lane": 1 }, { "s": 60, "v": 10, "lane": 2 } ]
    }"#;

    #[test]
    fn minimal_document_loads() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(sc.agents().len(), 2);
        assert_eq!(sc.grid.n_lanes, 2);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"s\": 60", "\"s\": 260");
        match Scenario::from_json(&bad) {
            Err(Error::Scenario { field, .. }) => assert_eq!(field, "agents[1].s"),
            other => panic!("unexpected {other:?}"),
        }
        let typo = MINIMAL.replace("\"lane\": 2", "\"lnae\": 2");
        match Scenario::from_json(&typo) {
            Err(Error::Scenario { field, .. }) => assert!(field.starts_with("agents[1]"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlapping_agents_rejected() {
        let bad = MINIMAL.replace("\"s\": 60, \"v\": 10, \"lane\": 2", "\"s\": 52, \"v\": 10, \"lane\": 1");
        assert!(matches!(Scenario::from_json(&bad), Err(Error::Scenario { .. })));
    }

    #[test]
    fn perturbation_is_seeded_and_valid() {
        let sc = Scenario::from_json(MINIMAL).unwrap();
        let p = Perturbation { sigma_s: 5.0, sigma_v: 1.0 };
        let a = sc.perturbed(&p, 3).unwrap();
        let b = sc.perturbed(&p, 3).unwrap();
        let c = sc.perturbed(&p, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
