//! Scenario files: arena, shape, spawn, goal, obstacles and all tunables.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::ProtocolParams;
use crate::error::{Result, SimError};
use crate::force::ForceParams;
use crate::shape::{build_shape_table, ShapeMatrix, ShapeTable};
use crate::vec2::Vec2;
use crate::world::kinematics::{Kinematics, Pose};
use crate::world::sensing::Obstacle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Shrink by `margin` on every side.
    pub fn inset(&self, margin: f64) -> Bounds {
        let m = Vec2::new(margin, margin);
        Bounds { min: self.min + m, max: self.max - m }
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min.x < self.max.x && self.min.y < self.max.y
    }
}

/// Where the shape matrix comes from: a file (relative to the scenario) or inline text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Rows separated by '/' or newlines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spawn {
    /// Explicit `[x, y, heading]` poses, one per bot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<Vec<[f64; 3]>>,
    /// Random spawn region; used when `poses` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Bounds>,
    #[serde(default = "default_separation")]
    pub min_separation: f64,
}

fn default_separation() -> f64 {
    0.3
}

fn default_comm_radius() -> f64 {
    3.0
}

fn default_bot_radius() -> f64 {
    0.07
}

fn default_max_ticks() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub arena: Bounds,
    pub shape: ShapeSource,
    pub spacing: f64,
    pub spawn: Spawn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec2>,
    /// Where the seed settles; the formation is built around it.
    #[serde(default)]
    pub anchor: Vec2,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub forces: ForceParams,
    #[serde(default)]
    pub kinematics: Kinematics,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default = "default_comm_radius")]
    pub comm_radius: f64,
    #[serde(default = "default_bot_radius")]
    pub bot_radius: f64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative shape paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut s = Scenario::from_json(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    pub fn shape_matrix(&self) -> Result<ShapeMatrix> {
        match (&self.shape.path, &self.shape.grid) {
            (Some(p), None) => {
                let full = match &self.base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| SimError::io(&full, e))?;
                Ok(text.parse()?)
            }
            (None, Some(g)) => Ok(g.parse()?),
            _ => Err(SimError::Scenario("shape needs exactly one of `path` or `grid`".into())),
        }
    }

    pub fn shape_table(&self) -> Result<ShapeTable> {
        Ok(build_shape_table(&self.shape_matrix()?, self.spacing)?)
    }

    /// Heading of the transit goal as seen from the anchor; 0 without a goal.
    pub fn goal_azimuth(&self) -> f64 {
        self.goal.map(|g| (g - self.anchor).angle()).unwrap_or(0.0)
    }

    /// Check everything except the shape file itself.
    pub fn validate(&self) -> Result<ShapeTable> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if !self.arena.is_valid() {
            return bad("arena min must be below max componentwise".into());
        }
        for (name, v) in [("spacing", self.spacing), ("comm_radius", self.comm_radius), ("bot_radius", self.bot_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.forces.validate().map_err(SimError::Scenario)?;
        self.kinematics.validate().map_err(SimError::Scenario)?;
        for o in &self.obstacles {
            o.validate().map_err(SimError::Scenario)?;
        }
        if !self.arena.contains(self.anchor) {
            return bad("anchor lies outside the arena".into());
        }
        if let Some(g) = self.goal {
            if !self.arena.contains(g) {
                return bad("goal lies outside the arena".into());
            }
        }
        let table = self.shape_table()?;
        match (&self.spawn.poses, &self.spawn.region) {
            (Some(p), _) if p.len() != table.len() => {
                return bad(format!("{} spawn poses for a shape of {} labels", p.len(), table.len()));
            }
            (Some(p), _) => {
                if p.iter().any(|q| !self.arena.contains(Vec2::new(q[0], q[1]))) {
                    return bad("spawn pose outside the arena".into());
                }
            }
            (None, Some(r)) => {
                if !r.is_valid() || !self.arena.contains(r.min) || !self.arena.contains(r.max) {
                    return bad("spawn region must be a valid box inside the arena".into());
                }
            }
            (None, None) => return bad("spawn needs `poses` or `region`".into()),
        }
        Ok(table)
    }

    /// Initial poses: the explicit list or a seeded sample of the spawn region.
    pub fn initial_poses(&self, n: usize) -> Result<Vec<Pose>> {
        if let Some(p) = &self.spawn.poses {
            return Ok(p.iter().map(|q| Pose::new(q[0], q[1], q[2])).collect());
        }
        let region = self.spawn.region.ok_or_else(|| SimError::Scenario("no spawn region".into()))?;
        let region = region.inset(self.bot_radius);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sep = self.spawn.min_separation.max(2.0 * self.bot_radius);
        for _attempt in 0..1000 {
            let mut pts: Vec<Vec2> = Vec::with_capacity(n);
            let mut tries = 0;
            while pts.len() < n && tries < 100_000 {
                tries += 1;
                let p = Vec2::new(rng.gen_range(region.min.x..=region.max.x), rng.gen_range(region.min.y..=region.max.y));
                let clear_obstacles = self.obstacles.iter().all(|o| o.signed_distance(p) > 2.0 * self.bot_radius);
                if clear_obstacles && pts.iter().all(|q| q.distance(p) >= sep) {
                    pts.push(p);
                }
            }
            if pts.len() == n && connected(&pts, self.comm_radius) {
                return Ok(pts
                    .into_iter()
                    .map(|p| Pose::new(p.x, p.y, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)))
                    .collect());
            }
        }
        Err(SimError::Scenario("could not sample a connected spawn layout".into()))
    }
}

/// Whether the disk graph with radius `r` over `pts` is connected.
pub fn connected(pts: &[Vec2], r: f64) -> bool {
    if pts.is_empty() {
        return true;
    }
    let mut seen = vec![false; pts.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..pts.len() {
            if !seen[j] && pts[i].distance(pts[j]) <= r {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
