//! Force laws: bot-bot collision repulsion, the parent reference and attraction
//! forces, goal attraction, sensor-based obstacle repulsion, and their
//! composition into one command per bot per tick.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::TransitMode;
use crate::stigmergy::BotState;
use crate::vec2::{angle_diff, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceParams {
    pub k_collision: f64,
    /// Collision activation distance, meters.
    pub r_o: f64,
    pub k_o: f64,
    pub k_goal: f64,
    pub c_obs: f64,
    pub m_floor: f64,
    /// Ultrasonic range, meters.
    pub sensor_max: f64,
    /// Lower bound on |r_ij - r_o| in the collision law.
    pub delta_sing: f64,
    /// Half-width of the neighbor mask around each sensor, radians.
    pub clearance_angle: f64,
    /// Readings are clamped to at least this distance.
    pub r_min: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            k_collision: 0.05,
            r_o: 0.25,
            k_o: 1.0,
            k_goal: 1.0,
            c_obs: 0.5,
            m_floor: 0.2,
            sensor_max: 1.0,
            delta_sing: 1e-3,
            clearance_angle: PI / 8.0,
            r_min: 1e-2,
        }
    }
}

impl ForceParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("k_collision", self.k_collision),
            ("r_o", self.r_o),
            ("k_o", self.k_o),
            ("k_goal", self.k_goal),
            ("c_obs", self.c_obs),
            ("m_floor", self.m_floor),
            ("sensor_max", self.sensor_max),
            ("delta_sing", self.delta_sing),
            ("clearance_angle", self.clearance_angle),
            ("r_min", self.r_min),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("force parameter {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Repulsion from one neighbor at distance `r_ij` and azimuth `alpha_ij`.
/// Zero outside the activation radius.
pub fn collision_force(r_ij: f64, alpha_ij: f64, p: &ForceParams) -> Vec2 {
    if r_ij >= p.r_o {
        return Vec2::ZERO;
    }
    let gap = (r_ij - p.r_o).abs().max(p.delta_sing);
    Vec2::polar(-p.k_collision / (gap * gap), alpha_ij)
}

/// Sum of [`collision_force`] over `(r_ij, alpha_ij)` pairs.
pub fn collision_sum(neighbors: impl IntoIterator<Item = (f64, f64)>, p: &ForceParams) -> Vec2 {
    neighbors.into_iter().map(|(r, a)| collision_force(r, a, p)).sum()
}

/// Parent-relative force at the reference configuration.
pub fn reference_force(r0: f64, alpha0: f64, p: &ForceParams) -> Vec2 {
    Vec2::polar(p.k_o * r0 * r0, alpha0)
}

/// The stored counter-force: the reference force turned by π.
pub fn counter_force(r0: f64, alpha0: f64, p: &ForceParams) -> Vec2 {
    -reference_force(r0, alpha0, p)
}

pub fn goal_force(goal: Vec2, position: Vec2, p: &ForceParams) -> Vec2 {
    (goal - position) * p.k_goal
}

/// Attraction toward the parent at its current distance and azimuth.
pub fn attract_force(r_t: f64, alpha_t: f64, p: &ForceParams) -> Vec2 {
    Vec2::polar(p.k_o * r_t * r_t, alpha_t)
}

/// Attraction minus reference; `counter` is the reference already turned by π.
pub fn net_formation_force(f_a: Vec2, counter: Vec2) -> Vec2 {
    f_a + counter
}

/// Bot-frame mounting angles of the five ultrasonic sensors.
pub const SENSOR_ANGLES: [f64; 5] = [-PI / 2.0, -PI / 4.0, 0.0, PI / 4.0, PI / 2.0];

/// One ultrasonic return in the bot frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub angle: f64,
    pub distance: f64,
}

impl SensorReading {
    pub fn detects(&self, sensor_max: f64) -> bool {
        self.distance < sensor_max
    }
}

/// Whether a neighbor sits within the clearance cone of `sensor_angle`.
pub fn is_masked(sensor_angle: f64, neighbor_azimuths: &[f64], clearance: f64) -> bool {
    neighbor_azimuths.iter().any(|&a| angle_diff(a, sensor_angle).abs() <= clearance)
}

/// Proportionality constant of the obstacle law, tied to the bot's own driving force.
pub fn obstacle_gain(driving_force_mag: f64, p: &ForceParams) -> f64 {
    p.c_obs * driving_force_mag.max(p.m_floor)
}

/// Obstacle repulsion in the bot frame with an explicit gain `m`.
pub fn obstacle_force_with_gain(readings: &[SensorReading], neighbor_azimuths: &[f64], m: f64, p: &ForceParams) -> Vec2 {
    readings
        .iter()
        .filter(|r| r.detects(p.sensor_max))
        .filter(|r| !is_masked(r.angle, neighbor_azimuths, p.clearance_angle))
        .map(|r| Vec2::polar(-m / r.distance.max(p.r_min), r.angle))
        .sum()
}

/// Obstacle repulsion rotated into the world frame. `readings` and
/// `neighbor_azimuths` are bot-frame; `heading` is the bot's world heading.
pub fn obstacle_force(
    readings: &[SensorReading],
    neighbor_azimuths: &[f64],
    driving_force_mag: f64,
    heading: f64,
    p: &ForceParams,
) -> Vec2 {
    let m = obstacle_gain(driving_force_mag, p);
    obstacle_force_with_gain(readings, neighbor_azimuths, m, p).rotated(heading)
}

/// Per-tick force components of one bot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForceComponents {
    /// Summed collision repulsion.
    pub collision: Vec2,
    /// Some neighbor is inside the activation radius.
    pub collision_active: bool,
    /// Task force: target seeking, goal attraction, formation hold, or wall-following.
    pub drive: Vec2,
    /// Obstacle repulsion, world frame.
    pub obstacle: Vec2,
}

/// Collapse components into the command force. Collision avoidance overrides
/// every task while active; Done and Stopped bots are inert.
pub fn compose_total(state: BotState, mode: Option<TransitMode>, c: &ForceComponents) -> Vec2 {
    if state == BotState::Done || mode == Some(TransitMode::Stopped) {
        return Vec2::ZERO;
    }
    if c.collision_active {
        return c.collision;
    }
    match state {
        BotState::Searching
        | BotState::Moving | BotState::Reached | BotState::Ready => c.drive,
        BotState::Transit => c.drive + c.obstacle,
        BotState::Done => Vec2::ZERO,
    }
}
