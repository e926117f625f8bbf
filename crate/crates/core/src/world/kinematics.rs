//! Heading-slew point kinematics.

use serde::{Deserialize, Serialize};

use crate::vec2::{angle_diff, normalize_angle, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { position: Vec2::new(x, y), heading: normalize_angle(heading) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kinematics {
    /// m/s
    pub v_max: f64,
    /// rad/s
    pub omega_max: f64,
    /// s
    pub dt: f64,
    /// Cruise speed cap for the leader, m/s. Kept below `v_max` so followers can catch up.
    pub v_leader: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self { v_max: 0.5, omega_max: std::f64::consts::PI, dt: 0.1, v_leader: 0.25 }
    }
}

impl Kinematics {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("v_max", self.v_max), ("omega_max", self.omega_max), ("dt", self.dt), ("v_leader", self.v_leader)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("kinematics {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Largest heading change per tick.
    pub fn max_turn(&self) -> f64 {
        self.omega_max * self.dt
    }
}

/// What a controller asks the body to do this tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionCommand {
    /// Steer along a force interpreted as a velocity request.
    Force(Vec2),
    /// Turn in place toward an absolute heading.
    Rotate(f64),
}

fn slew(heading: f64, desired: f64, max_turn: f64) -> f64 {
    let err = angle_diff(desired, heading);
    normalize_angle(heading + err.clamp(-max_turn, max_turn))
}

/// Advance a pose by one tick.
///
/// The heading turns toward the command by at most `omega_max·dt`; the speed is
/// `min(|force|, v_max)` scaled by `max(0, cos e)` where `e` is the heading
/// error before turning, and the bot moves along its new heading.
pub fn integrate(pose: Pose, cmd: MotionCommand, kin: &Kinematics) -> Pose {
    match cmd {
        MotionCommand::Rotate(target) => Pose { position: pose.position, heading: slew(pose.heading, target, kin.max_turn()) },
        MotionCommand::Force(f) => {
            let mag = f.norm();
            if mag == 0.0 || !mag.is_finite() {
                return pose;
            }
            let desired = f.angle();
            let err = angle_diff(desired, pose.heading);
            let heading = slew(pose.heading, desired, kin.max_turn());
            let speed = mag.min(kin.v_max) * err.cos().max(0.0);
            Pose { position: pose.position + Vec2::from_angle(heading) * (speed * kin.dt), heading }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn zero_force_keeps_pose() {
        let p = Pose::new(1.0, 2.0, 0.3);
        assert_eq!(integrate(p, MotionCommand::Force(Vec2::ZERO), &Kinematics::default()), p);
    }

    #[test]
    fn straight_ahead_step() {
        let kin = Kinematics { v_max: 1.0, dt: 0.1, ..Kinematics::default() };
        let p = integrate(Pose::new(0.0, 0.0, 0.0), MotionCommand::Force(Vec2::new(1.0, 0.0)), &kin);
        assert!((p.position - Vec2::new(0.1, 0.0)).norm() < 1e-15);
        assert_eq!(p.heading, 0.0);
    }

    #[test]
    fn perpendicular_force_only_turns() {
        let kin = Kinematics::default();
        let p = integrate(Pose::new(0.0, 0.0, 0.0), MotionCommand::Force(Vec2::new(0.0, 1.0)), &kin);
        assert!(p.position.norm() < 1e-15);
        assert!((p.heading - kin.omega_max * kin.dt).abs() < 1e-15);
        assert!(p.heading < FRAC_PI_2);
    }

    #[test]
    fn rotation_does_not_translate_and_stops_at_target() {
        let kin = Kinematics::default();
        let mut p = Pose::new(1.0, 1.0, 0.0);
        for _ in 0..20 {
            p = integrate(p, MotionCommand::Rotate(PI / 2.0), &kin);
        }
        assert_eq!(p.position, Vec2::new(1.0, 1.0));
        assert!((p.heading - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn speed_is_capped() {
        let kin = Kinematics::default();
        let p = integrate(Pose::new(0.0, 0.0, 0.0), MotionCommand::Force(Vec2::new(50.0, 0.0)), &kin);
        assert!((p.position.x - kin.v_max * kin.dt).abs() < 1e-15);
    }
}
