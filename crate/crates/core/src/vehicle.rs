//! Longitudinal point-mass energy model, expansion kinematics and the linear
//! lane-change model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spacetime::GridSpec;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// [kg]
    pub mass: f64,
    pub c_rr: f64,
    /// drag coefficient times frontal area [m^2]
    pub c_d_a: f64,
    /// air density [kg/m^3]
    pub rho: f64,
    pub eta_drive: f64,
    pub eta_regen: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// lane-change duration [s]
    pub t_lc: f64,
    /// lane-change cost [J], charged once when a change starts
    pub c_lc: f64,
    /// price of travel time [J/s]; zero gives a pure energy objective
    pub time_weight: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1500.0,
            c_rr: 0.01,
            c_d_a: 0.65,
            rho: 1.2,
            eta_drive: 0.9,
            eta_regen: 0.3,
            a_min: -3.0,
            a_max: 2.0,
            t_lc: 4.0,
            c_lc: 5000.0,
            time_weight: 1900.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(format!("vehicle.{m}")));
        if !(self.mass > 0.0) {
            return err("mass must be > 0");
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return err("a_min < 0 < a_max violated");
        }
        if !(self.t_lc > 0.0) {
            return err("t_lc must be > 0");
        }
        if !(self.eta_drive > 0.0 && self.eta_drive <= 1.0) {
            return err("eta_drive must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eta_regen) {
            return err("eta_regen must be in [0, 1]");
        }
        if self.c_rr < 0.0 || self.c_d_a < 0.0 || self.rho < 0.0 || self.c_lc < 0.0 || self.time_weight < 0.0 {
            return err("resistance coefficients and cost weights must be >= 0");
        }
        Ok(())
    }

    /// Velocity-independent part of the resistive force at `slope` [N].
    pub fn static_resistance(&self, slope: f64) -> f64 {
        self.mass * GRAVITY * (self.c_rr * slope.cos() + slope.sin())
    }

    /// Aerodynamic coefficient such that drag = `aero_coeff() * v^2` [kg/m].
    pub fn aero_coeff(&self) -> f64 {
        0.5 * self.rho * self.c_d_a
    }

    pub fn with_regen(&self, eta_regen: f64) -> Self {
        Self { eta_regen, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSample {
    pub s: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub speed_limit: Option<f64>,
}

/// Piecewise-constant road profile: each sample holds until the next one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadProfile {
    pub samples: Vec<ProfileSample>,
}

impl RoadProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.samples.windows(2).enumerate() {
            if !(w[1].s > w[0].s) {
                return Err(Error::Scenario { field: format!("road.profile[{}].s", i + 1), message: "positions must be strictly increasing".into() });
            }
        }
        for (i, p) in self.samples.iter().enumerate() {
            if !(p.slope.abs() < 0.2) {
                return Err(Error::Scenario { field: format!("road.profile[{i}].slope"), message: "|slope| must be < 0.2 rad".into() });
            }
            if let Some(v) = p.speed_limit {
                if !(v > 0.0) {
                    return Err(Error::Scenario { field: format!("road.profile[{i}].speed_limit"), message: "must be > 0".into() });
                }
            }
        }
        Ok(())
    }

    fn sample_index(&self, s: f64) -> Option<usize> {
        let idx = self.samples.partition_point(|p| p.s <= s);
        if idx == 0 {
            (!self.samples.is_empty()).then_some(0)
        } else {
            Some(idx - 1)
        }
    }

    pub fn slope_at(&self, s: f64) -> f64 {
        self.sample_index(s).map_or(0.0, |i| self.samples[i].slope)
    }

    /// Exact integral of `static_resistance(slope(x))` over `[from, to]` [J].
    pub fn static_work(&self, vp: &VehicleParams, from: f64, to: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        if self.samples.is_empty() {
            return vp.static_resistance(0.0) * (to - from);
        }
        let mut work = 0.0;
        let mut x = from;
        let mut i = self.sample_index(from).unwrap_or(0);
        while x < to {
            let next = self.samples.get(i + 1).map_or(f64::INFINITY, |p| p.s).min(to);
            let next = next.max(x);
            work += vp.static_resistance(self.samples[i].slope) * (next - x);
            x = next;
            i += 1;
            if i >= self.samples.len() {
                work += vp.static_resistance(self.samples[self.samples.len() - 1].slope) * (to - x);
                break;
            }
        }
        work
    }
}

/// Total resistive force `F_r` [N] at velocity `v` on `slope`.
pub fn resistive_force(vp: &VehicleParams, v: f64, slope: f64) -> f64 {
    vp.static_resistance(slope) + vp.aero_coeff() * v * v
}

/// Kinematics of one motion primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub dt: f64,
    pub ds: f64,
    pub a: f64,
}

/// Uniform acceleration from `v_i` to `v_f`, ending on whichever expansion
/// limit (time or distance) the average velocity reaches first.
pub fn transition(v_i: f64, v_f: f64, gs: &GridSpec) -> Transition {
    let v_avg = 0.5 * (v_i + v_f);
    let (dt, ds) = if v_avg < gs.ds_exp / gs.dt_exp { (gs.dt_exp, v_avg * gs.dt_exp) } else { (gs.ds_exp / v_avg, gs.ds_exp) };
    Transition { dt, ds, a: (v_f - v_i) / dt }
}

/// Closed-form integral of the wheel power over `[0, dt]` for a constant
/// acceleration `a` starting at `v_i`, split at the sign changes of the power.
///
/// Returns `(positive_work, negative_work)` with `negative_work <= 0`.
fn power_work(vp: &VehicleParams, v_i: f64, a: f64, dt: f64, slope: f64) -> (f64, f64) {
    if !(dt > 0.0) {
        return (0.0, 0.0);
    }
    let lin = vp.mass * a + vp.static_resistance(slope);
    let c2 = vp.aero_coeff();
    // P(tau) = lin * v + c2 * v^3, v = v_i + a tau
    let antiderivative = |tau: f64| {
        let t2 = tau * tau;
        lin * (v_i * tau + 0.5 * a * t2)
            + c2 * (v_i * v_i * v_i * tau + 1.5 * v_i * v_i * a * t2 + v_i * a * a * t2 * tau + 0.25 * a * a * a * t2 * t2)
    };
    let power = |tau: f64| {
        let v = (v_i + a * tau).max(0.0);
        lin * v + c2 * v * v * v
    };

    let mut cuts = vec![0.0];
    if a != 0.0 && c2 > 0.0 && lin < 0.0 {
        let v_star = (-lin / c2).sqrt();
        let tau = (v_star - v_i) / a;
        if tau > 0.0 && tau < dt {
            cuts.push(tau);
        }
    }
    cuts.push(dt);

    let mut pos = 0.0;
    let mut neg = 0.0;
    for w in cuts.windows(2) {
        let piece = antiderivative(w[1]) - antiderivative(w[0]);
        if power(0.5 * (w[0] + w[1])) >= 0.0 {
            pos += piece.max(0.0);
        } else {
            neg += piece.min(0.0);
        }
    }
    (pos, neg)
}

/// Energy cost [J] of a transition from `v_i` to `v_f` lasting `dt` on
/// `slope`: positive wheel work divided by the drive efficiency, negative work
/// credited at the regeneration efficiency.
pub fn cost_trans(vp: &VehicleParams, v_i: f64, v_f: f64, dt: f64, slope: f64) -> f64 {
    if !(dt > 0.0) {
        return 0.0;
    }
    let a = (v_f - v_i) / dt;
    let (pos, neg) = power_work(vp, v_i, a, dt, slope);
    pos / vp.eta_drive + vp.eta_regen * neg
}

/// Full edge cost used by the search: energy plus the time price.
pub fn edge_cost(vp: &VehicleParams, v_i: f64, v_f: f64, dt: f64, slope: f64) -> f64 {
    cost_trans(vp, v_i, v_f, dt, slope) + vp.time_weight * dt
}

const LIMIT_SLACK: f64 = 1e-9;

/// Vehicle-internal feasibility of a primitive.
pub fn check_internal_limits(vp: &VehicleParams, a: f64, v_f: f64, gs: &GridSpec) -> bool {
    if !(v_f >= 0.0 && v_f <= gs.v_max + LIMIT_SLACK) {
        return false;
    }
    a >= vp.a_min - LIMIT_SLACK && a <= vp.a_max + LIMIT_SLACK
}

/// Lateral progress [lanes] over `dt`, clamped so the change completes at
/// exactly one lane given the progress already made.
pub fn lane_change_progress(dt: f64, t_lc: f64, done: f64) -> f64 {
    (dt / t_lc).min((1.0 - done).max(0.0))
}
