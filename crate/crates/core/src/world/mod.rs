//! The lockstep world.
//!
//! Each tick: snapshot poses, sense, deliver last tick's messages to bots in
//! radio range (sender-id order), run every controller, integrate, then record.

pub mod kinematics;
pub mod scenario;
pub mod sensing;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;

use crate::controller::{self, BotMemory, LocalObservation, SwarmContext, TickOutput};
use crate::error::Result;
use crate::stigmergy::{BotId, BotState, Message, Payload, StigmergyDelta, COMPLETION_PREFIX, GOAL_AZIMUTH_KEY, SCENARIO_ORIGIN};
use crate::vec2::Vec2;
use kinematics::{integrate, Pose};
use scenario::{Bounds, Scenario};
use sensing::{sense_ultrasonic, SensorWorld};
use trace::{BotRecord, RunMeta, TickRecord, Trace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run the sensing and controller phases on the rayon pool.
    pub parallel: bool,
}

pub struct World {
    scenario: Scenario,
    ctx: SwarmContext,
    arena: Bounds,
    goal_azimuth: f64,
    poses: Vec<Pose>,
    mems: Vec<BotMemory>,
    outboxes: Vec<Vec<Message>>,
    tick: u64,
    ticks: Vec<TickRecord>,
    options: RunOptions,
    /// Ticks of the messages delivered during the last step, per receiver.
    last_delivery: Vec<Vec<u64>>,
}

impl World {
    pub fn new(scenario: &Scenario, options: RunOptions) -> Result<World> {
        let table = scenario.validate()?;
        let n = table.len();
        let poses = scenario.initial_poses(n)?;
        let goal_azimuth = scenario.goal_azimuth();
        let ctx = SwarmContext {
            table: Arc::new(table),
            forces: scenario.forces,
            kinematics: scenario.kinematics,
            protocol: scenario.protocol,
            origin: scenario.anchor,
            body_radius: scenario.bot_radius,
        };
        let injected = StigmergyDelta { key: GOAL_AZIMUTH_KEY.into(), value: goal_azimuth, lamport: 1, origin: SCENARIO_ORIGIN };
        let mems = (0..n)
            .map(|i| {
                let mut m = BotMemory::new(BotId(i as u32));
                m.store.merge(&injected);
                m
            })
            .collect();
        Ok(World {
            arena: scenario.arena.inset(scenario.bot_radius),
            scenario: scenario.clone(),
            ctx,
            goal_azimuth,
            poses,
            mems,
            outboxes: vec![Vec::new(); n],
            tick: 0,
            ticks: Vec::new(),
            options,
            last_delivery: vec![Vec::new(); n],
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn memories(&self) -> &[BotMemory] {
        &self.mems
    }

    pub fn context(&self) -> &SwarmContext {
        &self.ctx
    }

    /// Send ticks of the messages each bot read during the last step.
    pub fn last_delivery(&self) -> &[Vec<u64>] {
        &self.last_delivery
    }

    pub fn finished(&self) -> bool {
        self.mems.iter().all(|m| m.state == BotState::Done) || self.tick >= self.scenario.max_ticks
    }

    /// Advance one tick.
    pub fn step(&mut self) {
        let n = self.mems.len();
        let tick = self.tick;
        let snapshot = self.poses.clone();
        let positions: Vec<Vec2> = snapshot.iter().map(|p| p.position).collect();

        let sense = |i: usize| {
            let bodies: Vec<Vec2> = positions.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &p)| p).collect();
            let world = SensorWorld {
                obstacles: &self.scenario.obstacles,
                arena: Some((self.scenario.arena.min, self.scenario.arena.max)),
                bodies: &bodies,
                body_radius: self.scenario.bot_radius,
                sensor_max: self.ctx.forces.sensor_max,
            };
            sense_ultrasonic(snapshot[i].position, snapshot[i].heading, &world)
        };
        let readings: Vec<_> = if self.options.parallel {
            (0..n).into_par_iter().map(sense).collect()
        } else {
            (0..n).map(sense).collect()
        };

        let radius = self.scenario.comm_radius;
        let inboxes: Vec<Vec<Message>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && positions[i].distance(positions[j]) <= radius)
                    .flat_map(|j| self.outboxes[j].iter().cloned())
                    .collect()
            })
            .collect();
        self.last_delivery = inboxes.iter().map(|b| b.iter().map(|m| m.sent_tick).collect()).collect();

        let goal = self.scenario.goal;
        let ctx = &self.ctx;
        let run_one = |(i, mem): (usize, &mut BotMemory)| -> TickOutput {
            let inbox = &inboxes[i];
            let statuses: Vec<_> = inbox
                .iter()
                .filter_map(|m| match &m.payload {
                    Payload::Status(s) => Some((m.sender, *s)),
                    _ => None,
                })
                .collect();
            let leader_goal = if mem.is_leader() { goal } else { None };
            let obs = LocalObservation::from_statuses(snapshot[i], &statuses, readings[i], leader_goal);
            controller::step(mem, &obs, inbox, ctx, tick)
        };
        let outputs: Vec<TickOutput> = if self.options.parallel {
            self.mems.par_iter_mut().enumerate().map(run_one).collect()
        } else {
            self.mems.iter_mut().enumerate().map(run_one).collect()
        };

        let mut records = Vec::with_capacity(n);
        for (i, out) in outputs.into_iter().enumerate() {
            let mut pose = integrate(self.poses[i], out.command, &self.ctx.kinematics);
            pose.position = self.arena.clamp(pose.position);
            self.poses[i] = pose;
            let mem = &self.mems[i];
            let mut outbox = Vec::with_capacity(out.outbox.len() + 1);
            outbox.push(Message { sender: mem.id, sent_tick: tick, payload: Payload::Status(mem.status(pose, self.ctx.origin)) });
            outbox.extend(out.outbox);
            self.outboxes[i] = outbox;
            records.push(BotRecord {
                bot: mem.id,
                pose,
                state: mem.state,
                label: mem.label,
                role: mem.role(),
                f_net: out.f_net,
                f_obs: out.forces.obstacle.norm(),
                f_coll: out.forces.collision.norm(),
                mode: mem.mode,
                detecting: out.detecting,
                parent: mem.parent,
            });
        }
        let centroid = records.iter().map(|r| r.pose.position).sum::<Vec2>() * (1.0 / n as f64);
        let done: BTreeSet<&str> = self
            .mems
            .iter()
            .flat_map(|m| m.store.with_prefix(COMPLETION_PREFIX).map(|(k, _)| k))
            .collect();
        self.ticks.push(TickRecord { tick, bots: records, centroid, completion: done.len() });
        self.tick += 1;
    }

    pub fn into_trace(self) -> Trace {
        let parents: BTreeMap<BotId, BotId> = self.mems.iter().filter_map(|m| m.parent.map(|p| (m.id, p))).collect();
        let completion = self.ticks.iter().map(|t| t.completion).collect();
        Trace {
            meta: RunMeta {
                goal_azimuth: self.goal_azimuth,
                spacing: self.ctx.table.spacing(),
                layout: self.ctx.table.layout().to_vec(),
                parents,
                completion,
            },
            ticks: self.ticks,
        }
    }
}

/// Run a scenario to completion or its tick limit.
pub fn run(scenario: &Scenario) -> Result<Trace> {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: RunOptions) -> Result<Trace> {
    let mut world = World::new(scenario, options)?;
    while !world.finished() {
        world.step();
    }
    Ok(world.into_trace())
}
