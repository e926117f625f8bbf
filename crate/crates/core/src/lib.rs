//! Decentralized shape formation and force-based formation control for a
//! simulated robot swarm.
//!
//! Bots assemble a grid shape by label propagation from a seed, agree on
//! completion through a gossiped key-value store, pick a leader and parents,
//! then travel to a goal holding the formation with potential-field forces and
//! five range sensors for obstacle avoidance.

pub mod controller;
pub mod error;
pub mod force;
pub mod metrics;
pub mod shape;
pub mod stigmergy;
pub mod vec2;
pub mod world;

pub use error::{Result, SimError};
pub use shape::{build_shape_table, ShapeMatrix, ShapeTable};
pub use stigmergy::{BotId, BotState};
pub use vec2::Vec2;
pub use world::scenario::Scenario;
pub use world::trace::Trace;
pub use world::{run, run_with, RunOptions, World};
