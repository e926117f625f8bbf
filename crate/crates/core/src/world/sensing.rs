//! Obstacle geometry, ultrasonic ray casting, size classification and the
//! wall-following command.

use serde::{Deserialize, Serialize};

use crate::force::{SensorReading, SENSOR_ANGLES};
use crate::vec2::{angle_diff, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Circle { center: Vec2, radius: f64 },
    Rect { min: Vec2, max: Vec2 },
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Obstacle::Circle { center, radius } => {
                if !(radius > 0.0 && radius.is_finite() && center.is_finite()) {
                    return Err(format!("circle radius must be positive, got {radius}"));
                }
            }
            Obstacle::Rect { min, max } => {
                if !(min.x < max.x && min.y < max.y && min.is_finite() && max.is_finite()) {
                    return Err("rect min must be below max componentwise".into());
                }
            }
        }
        Ok(())
    }

    /// Distance along the unit ray `origin + t·dir` to the first surface point,
    /// `Some(0.0)` when the origin is inside.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match *self {
            Obstacle::Circle { center, radius } => ray_circle(origin, dir, center, radius),
            Obstacle::Rect { min, max } => ray_box(origin, dir, min, max),
        }
    }

    /// Signed distance from `p` to the surface (negative inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => p.distance(center) - radius,
            Obstacle::Rect { min, max } => {
                let dx = (min.x - p.x).max(p.x - max.x);
                let dy = (min.y - p.y).max(p.y - max.y);
                if dx <= 0.0 && dy <= 0.0 {
                    dx.max(dy)
                } else {
                    Vec2::new(dx.max(0.0), dy.max(0.0)).norm()
                }
            }
        }
    }
}

fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let c = oc.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = oc.dot(dir);
    if b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // Numerically stable smaller root of t² + 2bt + c = 0.
    let q = -b + disc.sqrt();
    Some(c / q)
}

fn ray_box(origin: Vec2, dir: Vec2, min: Vec2, max: Vec2) -> Option<f64> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for (o, d, lo, hi) in [(origin.x, dir.x, min.x, max.x), (origin.y, dir.y, min.y, max.y)] {
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let (t0, t1) = ((lo - o) / d, (hi - o) / d);
            let (t0, t1) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
        }
    }
    if t_enter > t_exit || t_exit < 0.0 {
        return None;
    }
    Some(t_enter.max(0.0))
}

/// Distance from an interior point to the boundary of `[min, max]` along the ray.
fn ray_box_exit(origin: Vec2, dir: Vec2, min: Vec2, max: Vec2) -> f64 {
    let axis = |o: f64, d: f64, lo: f64, hi: f64| {
        if d > 0.0 {
            (hi - o) / d
        } else if d < 0.0 {
            (lo - o) / d
        } else {
            f64::INFINITY
        }
    };
    axis(origin.x, dir.x, min.x, max.x).min(axis(origin.y, dir.y, min.y, max.y)).max(0.0)
}

/// Everything a sensor ray can hit.
#[derive(Debug, Clone, Copy)]
pub struct SensorWorld<'a> {
    pub obstacles: &'a [Obstacle],
    /// Arena bounds; the walls are seen from inside.
    pub arena: Option<(Vec2, Vec2)>,
    /// Other bots' centers.
    pub bodies: &'a [Vec2],
    pub body_radius: f64,
    pub sensor_max: f64,
}

impl SensorWorld<'_> {
    /// Nearest hit along the ray, if closer than the sensor range.
    pub fn cast(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let mut best = f64::INFINITY;
        for o in self.obstacles {
            if let Some(t) = o.ray_hit(origin, dir) {
                best = best.min(t);
            }
        }
        for &b in self.bodies {
            if let Some(t) = ray_circle(origin, dir, b, self.body_radius) {
                best = best.min(t);
            }
        }
        if let Some((min, max)) = self.arena {
            best = best.min(ray_box_exit(origin, dir, min, max));
        }
        (best < self.sensor_max).then_some(best)
    }
}

/// Five bot-frame readings from a bot at `position` facing `heading`.
pub fn sense_ultrasonic(position: Vec2, heading: f64, world: &SensorWorld<'_>) -> [SensorReading; 5] {
    SENSOR_ANGLES.map(|angle| {
        let dir = Vec2::from_angle(heading + angle);
        SensorReading { angle, distance: world.cast(position, dir).unwrap_or(world.sensor_max) }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    None,
    Large,
    Small,
}

/// Minimum number of detecting sensors (an angular extent of at least π/2)
/// for an obstacle to count as large.
pub const LARGE_OBSTACLE_SENSORS: usize = 3;

/// Size class from the readings of one tick.
pub fn classify_obstacle(readings: &[SensorReading], sensor_max: f64) -> ObstacleClass {
    match readings.iter().filter(|r| r.detects(sensor_max)).count() {
        0 => ObstacleClass::None,
        k if k >= LARGE_OBSTACLE_SENSORS => ObstacleClass::Large,
        _ => ObstacleClass::Small,
    }
}

/// Which way a wall-following bot circulates around the obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnSide {
    Left,
    Right,
}

/// Pick the side with more sensors that see no obstacle; ties go to `prefer`.
/// `free` is per-sensor, in the order of [`SENSOR_ANGLES`].
pub fn choose_turn_side(readings: &[SensorReading], free: &[bool], prefer: TurnSide) -> TurnSide {
    let count = |sign: f64| {
        readings.iter().zip(free).filter(|(r, &f)| f && r.angle * sign > 0.0).count()
    };
    let (left, right) = (count(1.0), count(-1.0));
    match left.cmp(&right) {
        std::cmp::Ordering::Greater => TurnSide::Left,
        std::cmp::Ordering::Less => TurnSide::Right,
        std::cmp::Ordering::Equal => prefer,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WallFollowParams {
    /// Standoff distance from the obstacle, meters.
    pub d_wall: f64,
    /// Half-width of the standoff band.
    pub band: f64,
    /// Gain on the radial correction relative to the tangent.
    pub radial_gain: f64,
}

impl Default for WallFollowParams {
    fn default() -> Self {
        Self { d_wall: 0.35, band: 0.05, radial_gain: 1.0 }
    }
}

/// Bot-frame wall-following velocity. `readings` should already exclude
/// returns attributed to neighbors.
pub fn wall_follow(readings: &[SensorReading], side: TurnSide, sensor_max: f64, speed: f64, p: &WallFollowParams) -> Vec2 {
    let Some(nearest) = readings
        .iter()
        .filter(|r| r.detects(sensor_max))
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
    else {
        return Vec2::ZERO;
    };
    let tangent_angle = match side {
        TurnSide::Right => nearest.angle - std::f64::consts::FRAC_PI_2,
        TurnSide::Left => nearest.angle + std::f64::consts::FRAC_PI_2,
    };
    let toward = Vec2::from_angle(nearest.angle);
    let radial = if nearest.distance < p.d_wall - p.band {
        -toward * p.radial_gain
    } else if nearest.distance > p.d_wall + p.band {
        toward * p.radial_gain
    } else {
        Vec2::ZERO
    };
    (Vec2::from_angle(tangent_angle) + radial).normalized() * speed
}

/// Whether a detection at bot-frame `angle` lies in the half-plane ahead of
/// the desired bot-frame direction `desired`.
pub fn blocks(angle: f64, desired: f64) -> bool {
    angle_diff(angle, desired).abs() < std::f64::consts::FRAC_PI_2
}
