//! Per-bot protocol state machine.
//!
//! Every tick a bot consumes the messages delivered to it, updates its
//! [`BotMemory`], and emits a motion command plus the messages it wants to
//! broadcast. Nothing here reads another bot's memory or the world state; all
//! knowledge of neighbors comes from their broadcasts.
//!
//! Lifecycle: `Searching -> Moving -> Reached -> Ready -> Transit -> Done`, with
//! `Moving -> Searching` when a label conflict is lost.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::force::{
    attract_force, collision_sum, compose_total, counter_force, goal_force, is_masked, net_formation_force,
    obstacle_force, ForceComponents, ForceParams, SensorReading,
};
use crate::shape::ShapeTable;
use crate::stigmergy::{
    barrier_reached, bot_key, BotId, BotState, Message, Payload, Status, StigmergyStore, COMPLETION_PREFIX,
    DISTANCE_PREFIX, GOAL_AZIMUTH_KEY, GOAL_REACHED_KEY, LATERAL_PREFIX, LONGITUDINAL_PREFIX, PARENT_PREFIX,
};
use crate::vec2::{angle_diff, Vec2};
use crate::world::kinematics::{Kinematics, MotionCommand, Pose};
use crate::world::sensing::{blocks, choose_turn_side, classify_obstacle, wall_follow, ObstacleClass, TurnSide, WallFollowParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    None,
    Leftmost,
    Rightmost,
    Leader,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::None => "none",
            Role::Leftmost => "leftmost",
            Role::Rightmost => "rightmost",
            Role::Leader => "leader",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "none" => Role::None,
            "leftmost" => Role::Leftmost,
            "rightmost" => Role::Rightmost,
            "leader" => Role::Leader,
            _ => return None,
        })
    }
}

/// Transit-phase behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitMode {
    FormationHold,
    ShrinkAvoid,
    WallFollow,
    Stopped,
}

impl TransitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransitMode::FormationHold => "formation_hold",
            TransitMode::ShrinkAvoid => "shrink_avoid",
            TransitMode::WallFollow => "wall_follow",
            TransitMode::Stopped => "stopped",
        }
    }

    pub fn parse(s: &str) -> Option<TransitMode> {
        Some(match s {
            "formation_hold" => TransitMode::FormationHold,
            "shrink_avoid" => TransitMode::ShrinkAvoid,
            "wall_follow" => TransitMode::WallFollow,
            "stopped" => TransitMode::Stopped,
            _ => return None,
        })
    }
}

/// Protocol constants shared by all bots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Ticks of distance gossip before the seed is elected; `None` means `2·n`.
    pub settle_ticks: Option<u64>,
    /// Ticks spent in Ready before transit.
    pub ready_ticks: u64,
    /// Ticks over which the leader accelerates to cruise speed.
    pub ramp_ticks: u64,
    /// Consecutive unobstructed ticks before leaving wall-following.
    pub clear_ticks: u64,
    /// Position tolerance for reaching a label target, meters.
    pub eps_pos: f64,
    /// Heading tolerance for alignment, radians.
    pub eps_heading: f64,
    /// Leader's arrival radius, meters.
    pub goal_tolerance: f64,
    /// Small obstacles closer than this (and ahead) trigger wall-following, meters.
    pub engage_distance: f64,
    /// Radius kept clear around other bots while seeking a target, meters.
    pub clear_radius: f64,
    /// Unlabeled bots back away from labeled bots closer than this, meters.
    pub yield_radius: f64,
    pub wall: WallFollowParams,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            settle_ticks: None,
            ready_ticks: 100,
            ramp_ticks: 20,
            clear_ticks: 10,
            eps_pos: 0.005,
            eps_heading: 0.05,
            goal_tolerance: 0.1,
            engage_distance: 0.6,
            clear_radius: 0.3,
            yield_radius: 0.45,
            wall: WallFollowParams::default(),
        }
    }
}

/// Read-only context shared by every controller in a run.
#[derive(Debug, Clone)]
pub struct SwarmContext {
    pub table: Arc<ShapeTable>,
    pub forces: ForceParams,
    pub kinematics: Kinematics,
    pub protocol: ProtocolParams,
    pub origin: Vec2,
    pub body_radius: f64,
}

impl SwarmContext {
    pub fn n(&self) -> usize {
        self.table.len()
    }

    pub fn settle_ticks(&self) -> u64 {
        self.protocol.settle_ticks.unwrap_or(2 * self.n() as u64)
    }
}

/// A neighbor as reconstructed from its last status broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborView {
    pub id: BotId,
    pub status: Status,
    /// Distance from self, meters.
    pub distance: f64,
    /// World-frame azimuth of the neighbor as seen from self.
    pub azimuth: f64,
}

/// What a bot knows at the start of its tick.
#[derive(Debug, Clone)]
pub struct LocalObservation {
    pub pose: Pose,
    /// Sorted by id.
    pub neighbors: Vec<NeighborView>,
    pub readings: [SensorReading; 5],
    /// Goal coordinates; only ever given to the leader.
    pub goal: Option<Vec2>,
}

impl LocalObservation {
    pub fn from_statuses(pose: Pose, statuses: &[(BotId, Status)], readings: [SensorReading; 5], goal: Option<Vec2>) -> Self {
        let mut neighbors: Vec<NeighborView> = statuses
            .iter()
            .map(|&(id, status)| {
                let rel = status.position - pose.position;
                NeighborView { id, status, distance: rel.norm(), azimuth: rel.angle() }
            })
            .collect();
        neighbors.sort_by_key(|n| n.id);
        Self { pose, neighbors, readings, goal }
    }

    fn with_label(&self, label: usize) -> impl Iterator<Item = &NeighborView> {
        self.neighbors.iter().filter(move |n| n.status.state.holds_label() && n.status.label == label as i32)
    }

    fn neighbor(&self, id: BotId) -> Option<&NeighborView> {
        self.neighbors.iter().find(|n| n.id == id)
    }

    /// Labels held by heard bots.
    pub fn claimed_labels(&self) -> BTreeSet<usize> {
        self.neighbors
            .iter()
            .filter(|n| n.status.state.holds_label() && n.status.label >= 0)
            .map(|n| n.status.label as usize)
            .collect()
    }
}

/// One entry of the candidate label list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfferedLabel {
    /// -1 once known to be taken.
    pub label: i32,
    /// Label of the bot that offered it; targets are placed relative to that bot.
    pub offered_by: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Roles {
    pub leader: bool,
    pub leftmost: bool,
    pub rightmost: bool,
}

impl Roles {
    /// The single role reported for this bot; Leader outranks the boundary roles.
    pub fn primary(&self) -> Role {
        if self.leader {
            Role::Leader
        } else if self.leftmost {
            Role::Leftmost
        } else if self.rightmost {
            Role::Rightmost
        } else {
            Role::None
        }
    }
}

/// Full protocol state of one bot.
#[derive(Debug, Clone)]
pub struct BotMemory {
    pub id: BotId,
    pub state: BotState,
    pub label: i32,
    pub label_list: Vec<OfferedLabel>,
    /// Label of the bot this one positions itself against during formation.
    pub anchor_label: Option<usize>,
    pub target: Option<Vec2>,
    pub parent: Option<BotId>,
    pub roles: Option<Roles>,
    /// Reference counter-force (already turned by π).
    pub f_ref: Vec2,
    pub store: StigmergyStore,
    pub mode: Option<TransitMode>,
    pub turn_side: Option<TurnSide>,
    /// Last obstacle point seen while wall-following, world frame.
    pub wall_point: Option<Vec2>,
    /// Tick the current state was entered.
    pub state_since: u64,
    pub clear_count: u64,
    pub seed_decided: bool,
    pub completion_put: bool,
    pub lateral: f64,
    pub longitudinal: f64,
    parent_last_position: Option<Vec2>,
    seen_revisions: BTreeMap<BotId, u64>,
}

impl BotMemory {
    pub fn new(id: BotId) -> Self {
        Self {
            id,
            state: BotState::Searching,
            label: -1,
            label_list: Vec::new(),
            anchor_label: None,
            target: None,
            parent: None,
            roles: None,
            f_ref: Vec2::ZERO,
            store: StigmergyStore::new(id),
            mode: None,
            turn_side: None,
            wall_point: None,
            state_since: 0,
            clear_count: 0,
            seed_decided: false,
            completion_put: false,
            lateral: 0.0,
            longitudinal: 0.0,
            parent_last_position: None,
            seen_revisions: BTreeMap::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.roles.map(|r| r.primary()).unwrap_or(Role::None)
    }

    pub fn is_leader(&self) -> bool {
        self.roles.is_some_and(|r| r.leader)
    }

    /// Heartbeat for the given pose.
    pub fn status(&self, pose: Pose, origin: Vec2) -> Status {
        Status {
            position: pose.position,
            heading: pose.heading,
            label: self.label,
            state: self.state,
            distance_to_origin: pose.position.distance(origin),
        }
    }

    fn enter(&mut self, state: BotState, tick: u64) {
        debug_assert!(self.state.can_become(state), "{:?} -> {:?}", self.state, state);
        self.state = state;
        self.state_since = tick;
    }

    /// Fold delivered stigmergy digests into the local replica.
    pub fn absorb_digests(&mut self, inbox: &[Message]) {
        for msg in inbox {
            if let Payload::Stigmergy { revision, entries } = &msg.payload {
                if self.seen_revisions.get(&msg.sender) == Some(revision) {
                    continue;
                }
                self.seen_revisions.insert(msg.sender, *revision);
                self.store.merge_all(entries.iter());
            }
        }
    }
}

/// Bot with the strictly smallest distance, ties to the lower id.
pub fn seed_winner(candidates: &[(BotId, f64)]) -> Option<BotId> {
    candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|c| c.0)
}

/// Seed election once the settle window has passed. Returns true if this bot became the seed.
pub fn elect_seed(mem: &mut BotMemory, ctx: &SwarmContext, tick: u64) -> bool {
    if mem.state != BotState::Searching || mem.seed_decided || tick < ctx.settle_ticks() {
        return false;
    }
    mem.seed_decided = true;
    if seed_winner(&mem.store.per_bot(DISTANCE_PREFIX)) != Some(mem.id) {
        return false;
    }
    mem.label = 0;
    mem.anchor_label = None;
    mem.target = Some(ctx.origin);
    mem.enter(BotState::Moving, tick);
    true
}

/// Rebuild the candidate list from this tick's offers (in sender-id order),
/// mark entries already held by heard bots, and return the last free one.
pub fn collect_labels(
    list: &mut Vec<OfferedLabel>,
    offers: &[(usize, Vec<usize>)],
    claimed: &BTreeSet<usize>,
) -> Option<OfferedLabel> {
    list.clear();
    for (offered_by, labels) in offers {
        list.extend(labels.iter().map(|&l| OfferedLabel { label: l as i32, offered_by: *offered_by }));
    }
    for entry in list.iter_mut() {
        if entry.label >= 0 && claimed.contains(&(entry.label as usize)) {
            entry.label = -1;
        }
    }
    list.iter().rev().find(|e| e.label >= 0).copied()
}

/// Neighbor labels of `label` that are not known to be taken.
pub fn offer_labels(label: usize, table: &ShapeTable, claimed: &BTreeSet<usize>) -> Vec<usize> {
    table.row(label).iter().map(|n| n.label).filter(|l| !claimed.contains(l)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictOutcome {
    Keep,
    Revert,
}

/// Among bots sharing a label, the highest id keeps it.
pub fn resolve_conflict(me: BotId, claimants: &[BotId]) -> ConflictOutcome {
    if claimants.iter().all(|&c| c <= me) {
        ConflictOutcome::Keep
    } else {
        ConflictOutcome::Revert
    }
}

/// Target for `label` placed relative to the bot holding `anchor_label` at `anchor_position`.
pub fn target_position(anchor_position: Vec2, anchor_label: usize, label: usize, table: &ShapeTable) -> Vec2 {
    match table.entry(anchor_label, label) {
        Some(entry) => anchor_position + entry.offset(),
        None => anchor_position + table.reference_offset(anchor_label, label),
    }
}

/// Role assignment from converged (id, lateral, longitudinal) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleAssignment {
    pub leader: BotId,
    pub leftmost: BotId,
    pub rightmost: BotId,
}

/// Leader = largest longitudinal coordinate, leftmost/rightmost = extreme lateral
/// coordinate; every tie goes to the higher id.
pub fn assign_roles(coords: &[(BotId, f64, f64)]) -> Option<RoleAssignment> {
    let leader = coords.iter().max_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))?.0;
    let leftmost = coords.iter().max_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)))?.0;
    let rightmost = coords.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?.0;
    Some(RoleAssignment { leader, leftmost, rightmost })
}

/// A heard bot that could serve as parent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentCandidate {
    pub id: BotId,
    pub longitudinal: f64,
    pub distance: f64,
}

/// Walk the parents table upward from `from`; true if `target` is on the chain.
pub fn chain_contains(parents: &BTreeMap<BotId, BotId>, from: BotId, target: BotId) -> bool {
    let mut cur = from;
    for _ in 0..=parents.len() {
        if cur == target {
            return true;
        }
        match parents.get(&cur) {
            Some(&p) => cur = p,
            None => return false,
        }
    }
    true
}

/// Pick a parent: candidates ordered by (longitudinal desc, distance asc, id asc);
/// the first one ahead of `me` in (longitudinal, id) order whose ancestor chain
/// does not contain `me` wins.
pub fn choose_parent(
    me: BotId,
    my_longitudinal: f64,
    candidates: &[ParentCandidate],
    parents: &BTreeMap<BotId, BotId>,
) -> Option<BotId> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| {
        b.longitudinal
            .total_cmp(&a.longitudinal)
            .then(a.distance.total_cmp(&b.distance))
            .then(a.id.cmp(&b.id))
    });
    sorted
        .into_iter()
        .filter(|c| c.id != me)
        .filter(|c| c.longitudinal.total_cmp(&my_longitudinal).then(c.id.cmp(&me)).is_gt())
        .find(|c| !chain_contains(parents, c.id, me))
        .map(|c| c.id)
}

/// Inputs to the transit mode decision, all from the current tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeInputs {
    pub previous: Option<TransitMode>,
    pub class: ObstacleClass,
    /// Some unmasked detection lies ahead of the desired direction within the engage distance.
    pub blocked: bool,
    pub goal_reached: bool,
    /// Consecutive unobstructed ticks so far.
    pub clear_count: u64,
}

/// Transit behavior selection. Returns the mode and the updated clear counter.
pub fn transit_mode(inp: ModeInputs, clear_ticks: u64) -> (TransitMode, u64) {
    if inp.goal_reached {
        return (TransitMode::Stopped, 0);
    }
    let open = match inp.class {
        ObstacleClass::None => TransitMode::FormationHold,
        _ => TransitMode::ShrinkAvoid,
    };
    if inp.previous == Some(TransitMode::WallFollow) {
        let clear = if inp.blocked { 0 } else { inp.clear_count + 1 };
        return if clear >= clear_ticks { (open, 0) } else { (TransitMode::WallFollow, clear) };
    }
    match inp.class {
        ObstacleClass::Small if inp.blocked => (TransitMode::WallFollow, 0),
        _ => (open, 0),
    }
}

/// Result of one controller tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub command: MotionCommand,
    pub outbox: Vec<Message>,
    pub forces: ForceComponents,
    /// Command force after composition (zero for pure rotations).
    pub total: Vec2,
    /// Formation residual for followers, goal force for the leader, task force otherwise.
    pub f_net: f64,
    /// Some unmasked sensor detects an obstacle (transit only).
    pub detecting: bool,
}

/// Velocity request toward `target`, detouring around bots in the way.
pub fn seek_force(position: Vec2, target: Vec2, neighbors: &[NeighborView], k_goal: f64, v_max: f64, clear_radius: f64) -> Vec2 {
    let to_target = target - position;
    let dist = to_target.norm();
    if dist == 0.0 {
        return Vec2::ZERO;
    }
    let dir = to_target * (1.0 / dist);
    let speed = (k_goal * dist).min(v_max);
    let blocker = neighbors
        .iter()
        .filter(|n| {
            let rel = n.status.position - position;
            let along = rel.dot(dir);
            along > 0.0 && along < dist && (rel - dir * along).norm() < clear_radius
        })
        .min_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    let Some(b) = blocker else {
        return dir * speed;
    };
    let rel = b.status.position - position;
    let half_width = (clear_radius / rel.norm().max(1e-9)).min(1.0).asin();
    // Pass on the side opposite to where the blocker sits; dead-center passes right.
    let sign = if dir.cross(rel) > 0.0 { -1.0 } else { 1.0 };
    let sign = if dir.cross(rel) == 0.0 { -1.0 } else { sign };
    Vec2::from_angle(rel.angle() + sign * half_width) * speed
}

/// Push away from labeled bots that come close to an unlabeled one.
pub fn yield_force(position: Vec2, neighbors: &[NeighborView], yield_radius: f64, v_max: f64) -> Vec2 {
    neighbors
        .iter()
        .filter(|n| n.status.state.holds_label() && n.distance < yield_radius)
        .map(|n| {
            let away = (position - n.status.position).normalized();
            let away = if away == Vec2::ZERO { Vec2::from_angle(n.id.0 as f64) } else { away };
            away * (v_max * (1.0 - n.distance / yield_radius))
        })
        .sum()
}

/// Run one controller tick.
pub fn step(mem: &mut BotMemory, obs: &LocalObservation, inbox: &[Message], ctx: &SwarmContext, tick: u64) -> TickOutput {
    let pose = obs.pose;
    mem.absorb_digests(inbox);
    let dist_key = bot_key(DISTANCE_PREFIX, mem.id);
    if mem.store.get(&dist_key).is_none() {
        mem.store.put(&dist_key, pose.position.distance(ctx.origin));
    }

    let claimed = obs.claimed_labels();
    let p = &ctx.forces;
    let kin = &ctx.kinematics;
    let proto = &ctx.protocol;

    let mut drive = Vec2::ZERO;
    let mut rotate: Option<f64> = None;
    let mut f_net_mag = 0.0;
    let mut obstacle = Vec2::ZERO;
    let mut detecting = false;
    // At most one state transition per tick, so the trace shows every step.
    let start = mem.state;
    let stays = |m: &BotMemory, s: BotState| start == s && m.state == s;

    if stays(mem, BotState::Searching) {
        if !elect_seed(mem, ctx, tick) && mem.seed_decided {
            let offers = label_offers(inbox, obs);
            if let Some(pick) = collect_labels(&mut mem.label_list, &offers, &claimed) {
                mem.label = pick.label;
                mem.anchor_label = Some(pick.offered_by);
                mem.target = None;
                mem.enter(BotState::Moving, tick);
            }
        }
        if mem.state == BotState::Searching {
            drive = yield_force(pose.position, &obs.neighbors, proto.yield_radius, kin.v_max);
            let hears_labeled = obs.neighbors.iter().any(|n| n.status.state.holds_label());
            if mem.seed_decided && !hears_labeled {
                // Out of range of the growing shape: close in on the anchor.
                drive = (ctx.origin - pose.position).clamped(0.5 * kin.v_max);
            }
        }
    }

    if stays(mem, BotState::Moving) {
        let label = mem.label as usize;
        let rivals: Vec<&NeighborView> = obs.with_label(label).collect();
        let settled_rival = rivals.iter().any(|n| n.status.state.is_settled());
        let ids: Vec<BotId> = rivals.iter().map(|n| n.id).collect();
        if settled_rival || resolve_conflict(mem.id, &ids) == ConflictOutcome::Revert {
            if let Some(e) = mem.label_list.iter_mut().find(|e| e.label == mem.label) {
                e.label = -1;
            }
            mem.label = -1;
            mem.anchor_label = None;
            mem.target = None;
            mem.enter(BotState::Searching, tick);
        }
    }

    if matches!(mem.state, BotState::Moving | BotState::Reached | BotState::Ready) {
        refresh_target(mem, obs, ctx);
    }

    if mem.state == BotState::Moving {
        if let Some(target) = mem.target {
            if start == BotState::Moving && pose.position.distance(target) <= proto.eps_pos {
                mem.enter(BotState::Reached, tick);
            } else {
                drive = seek_force(pose.position, target, &obs.neighbors, p.k_goal, kin.v_max, proto.clear_radius);
            }
        }
    }

    if stays(mem, BotState::Reached) {
        let (d, r) = align_and_complete(mem, obs, ctx, tick);
        drive = d;
        rotate = r;
    }

    if stays(mem, BotState::Ready) {
        drive = hold_target(mem, pose, obs, ctx);
        ready_phase(mem, obs, ctx, tick);
        if mem.state == BotState::Transit {
            drive = Vec2::ZERO;
        } else if drive == Vec2::ZERO {
            // Face the direction of travel while waiting.
            let g = mem.store.value(GOAL_AZIMUTH_KEY).unwrap_or(0.0);
            if angle_diff(pose.heading, g).abs() > proto.eps_heading {
                rotate = Some(g);
            }
        }
    }

    if stays(mem, BotState::Transit) {
        let t = transit_tick(mem, obs, ctx, tick);
        drive = t.drive;
        obstacle = t.obstacle;
        f_net_mag = t.f_net;
        detecting = t.detecting;
    } else if mem.state != BotState::Done {
        f_net_mag = drive.norm();
    }

    let inside: Vec<(f64, f64)> = obs.neighbors.iter().filter(|n| n.distance < p.r_o).map(|n| (n.distance, n.azimuth)).collect();
    let forces = ForceComponents {
        collision: collision_sum(inside.iter().copied(), p),
        collision_active: !inside.is_empty() && mem.state != BotState::Done,
        drive,
        obstacle,
    };
    let total = compose_total(mem.state, mem.mode, &forces);
    let command = match rotate {
        Some(h) if !forces.collision_active => MotionCommand::Rotate(h),
        _ => MotionCommand::Force(total),
    };

    let mut outbox = Vec::with_capacity(2);
    if matches!(mem.state, BotState::Moving | BotState::Reached | BotState::Ready) && mem.label >= 0 {
        let offer = offer_labels(mem.label as usize, &ctx.table, &claimed);
        if !offer.is_empty() {
            outbox.push(Message { sender: mem.id, sent_tick: tick, payload: Payload::LabelOffer(offer) });
        }
    }
    outbox.push(Message {
        sender: mem.id,
        sent_tick: tick,
        payload: Payload::Stigmergy { revision: mem.store.revision(), entries: mem.store.digest() },
    });

    TickOutput { command, outbox, forces, total, f_net: f_net_mag, detecting }
}

/// Offers in the inbox as (offerer label, labels), in delivery order.
fn label_offers(inbox: &[Message], obs: &LocalObservation) -> Vec<(usize, Vec<usize>)> {
    inbox
        .iter()
        .filter_map(|m| match &m.payload {
            Payload::LabelOffer(labels) => {
                let sender = obs.neighbor(m.sender)?;
                (sender.status.label >= 0).then(|| (sender.status.label as usize, labels.clone()))
            }
            _ => None,
        })
        .collect()
}

/// Re-anchor the target on the anchor bot's latest broadcast. The seed's target is fixed.
fn refresh_target(mem: &mut BotMemory, obs: &LocalObservation, ctx: &SwarmContext) {
    let Some(anchor) = mem.anchor_label else { return };
    let label = mem.label as usize;
    let heard = obs
        .with_label(anchor)
        .max_by_key(|n| n.id)
        .map(|n| (anchor, n.status.position))
        .or_else(|| {
            // Fall back to any heard grid neighbor that has settled.
            ctx.table.row(label).iter().find_map(|e| {
                obs.with_label(e.label).filter(|n| n.status.state.is_settled()).max_by_key(|n| n.id).map(|n| (e.label, n.status.position))
            })
        });
    if let Some((anchor_label, pos)) = heard {
        mem.target = Some(target_position(pos, anchor_label, label, &ctx.table));
    }
}

fn hold_target(mem: &BotMemory, pose: Pose, obs: &LocalObservation, ctx: &SwarmContext) -> Vec2 {
    match mem.target {
        Some(t) if pose.position.distance(t) > 2.0 * ctx.protocol.eps_pos => {
            seek_force(pose.position, t, &obs.neighbors, ctx.forces.k_goal, ctx.kinematics.v_max, ctx.protocol.clear_radius)
        }
        _ => Vec2::ZERO,
    }
}

/// Reference heading: the seed's broadcast heading (own heading for the seed).
fn reference_heading(mem: &BotMemory, obs: &LocalObservation) -> Option<f64> {
    if mem.label == 0 {
        return Some(obs.pose.heading);
    }
    obs.with_label(0).max_by_key(|n| n.id).map(|n| n.status.heading)
}

/// Reached-state behavior: hold position, align with the seed, post the
/// completion key, and move to Ready once the completion barrier is met.
/// Returns the drive force and an optional in-place rotation target.
pub fn align_and_complete(mem: &mut BotMemory, obs: &LocalObservation, ctx: &SwarmContext, tick: u64) -> (Vec2, Option<f64>) {
    let pose = obs.pose;
    let proto = &ctx.protocol;
    let mut drive = Vec2::ZERO;
    let mut rotate = None;
    let tolerance = if mem.completion_put { 2.0 * proto.eps_pos } else { proto.eps_pos };
    let off_target = mem.target.is_some_and(|t| pose.position.distance(t) > tolerance);
    if off_target {
        drive = hold_target(mem, pose, obs, ctx);
        if drive == Vec2::ZERO {
            let t = mem.target.expect("off target implies a target");
            drive = seek_force(pose.position, t, &obs.neighbors, ctx.forces.k_goal, ctx.kinematics.v_max, proto.clear_radius);
        }
    } else if !mem.completion_put {
        match reference_heading(mem, obs) {
            Some(h) if angle_diff(pose.heading, h).abs() > proto.eps_heading => rotate = Some(h),
            Some(_) => {
                mem.store.put(&bot_key(COMPLETION_PREFIX, mem.id), 1.0);
                mem.completion_put = true;
            }
            None => {}
        }
    }
    if mem.completion_put && barrier_reached(&mem.store, ctx.n()) {
        mem.enter(BotState::Ready, tick);
        enter_ready(mem, pose, ctx);
    }
    (drive, rotate)
}

fn goal_axis(store: &StigmergyStore) -> Vec2 {
    Vec2::from_angle(store.value(GOAL_AZIMUTH_KEY).unwrap_or(0.0))
}

fn enter_ready(mem: &mut BotMemory, pose: Pose, _ctx: &SwarmContext) {
    let g = goal_axis(&mem.store);
    let right = g.rotated(-std::f64::consts::FRAC_PI_2);
    mem.longitudinal = pose.position.dot(g);
    mem.lateral = pose.position.dot(right);
    mem.store.put(&bot_key(LONGITUDINAL_PREFIX, mem.id), mem.longitudinal);
    mem.store.put(&bot_key(LATERAL_PREFIX, mem.id), mem.lateral);
}

/// Ready-state bookkeeping: roles, parent choice, and the transit timeout.
fn ready_phase(mem: &mut BotMemory, obs: &LocalObservation, ctx: &SwarmContext, tick: u64) {
    let n = ctx.n();
    if mem.roles.is_none() && mem.store.size(LONGITUDINAL_PREFIX) == n && mem.store.size(LATERAL_PREFIX) == n {
        let lon: BTreeMap<BotId, f64> = mem.store.per_bot(LONGITUDINAL_PREFIX).into_iter().collect();
        let coords: Vec<(BotId, f64, f64)> = mem
            .store
            .per_bot(LATERAL_PREFIX)
            .into_iter()
            .filter_map(|(id, lat)| lon.get(&id).map(|&l| (id, lat, l)))
            .collect();
        if let Some(a) = assign_roles(&coords) {
            mem.roles = Some(Roles { leader: a.leader == mem.id, leftmost: a.leftmost == mem.id, rightmost: a.rightmost == mem.id });
        }
    }
    let Some(roles) = mem.roles else { return };
    if !roles.leader && mem.parent.is_none() {
        let lon: BTreeMap<BotId, f64> = mem.store.per_bot(LONGITUDINAL_PREFIX).into_iter().collect();
        let candidates: Vec<ParentCandidate> = obs
            .neighbors
            .iter()
            .filter_map(|nb| lon.get(&nb.id).map(|&l| ParentCandidate { id: nb.id, longitudinal: l, distance: nb.distance }))
            .collect();
        let parents: BTreeMap<BotId, BotId> = mem
            .store
            .per_bot(PARENT_PREFIX)
            .into_iter()
            .map(|(id, p)| (id, BotId(p as u32)))
            .collect();
        if let Some(parent) = choose_parent(mem.id, mem.longitudinal, &candidates, &parents) {
            let nb = obs.neighbor(parent).expect("candidates are heard neighbors");
            mem.parent = Some(parent);
            mem.f_ref = counter_force(nb.distance, nb.azimuth, &ctx.forces);
            mem.store.put(&bot_key(PARENT_PREFIX, mem.id), parent.0 as f64);
        }
    }
    let waited = tick.saturating_sub(mem.state_since) >= ctx.protocol.ready_ticks;
    let parent_left = mem
        .parent
        .and_then(|id| obs.neighbor(id))
        .is_some_and(|p| p.status.state >= BotState::Transit);
    if (waited && (roles.leader || mem.parent.is_some())) || parent_left {
        mem.enter(BotState::Transit, tick);
        mem.mode = Some(TransitMode::FormationHold);
    }
}

struct TransitForces {
    drive: Vec2,
    obstacle: Vec2,
    f_net: f64,
    detecting: bool,
}

fn transit_tick(mem: &mut BotMemory, obs: &LocalObservation, ctx: &SwarmContext, tick: u64) -> TransitForces {
    let pose = obs.pose;
    let p = &ctx.forces;
    let kin = &ctx.kinematics;
    let proto = &ctx.protocol;
    let idle = TransitForces { drive: Vec2::ZERO, obstacle: Vec2::ZERO, f_net: 0.0, detecting: false };

    if mem.is_leader() {
        let arrived = obs.goal.is_none_or(|g| g.distance(pose.position) <= proto.goal_tolerance);
        if arrived && mem.store.get(GOAL_REACHED_KEY).is_none() {
            mem.store.put(GOAL_REACHED_KEY, 1.0);
        }
    }
    if mem.store.get(GOAL_REACHED_KEY).is_some() {
        mem.mode = Some(TransitMode::Stopped);
        mem.enter(BotState::Done, tick);
        return idle;
    }

    // Neighbors that could explain a sensor return, in the bot frame.
    let reach = p.sensor_max + ctx.body_radius;
    let masks: Vec<f64> = obs
        .neighbors
        .iter()
        .filter(|n| n.distance <= reach)
        .map(|n| angle_diff(n.azimuth, pose.heading))
        .collect();
    let free: Vec<bool> = obs
        .readings
        .iter()
        .map(|r| !r.detects(p.sensor_max) || is_masked(r.angle, &masks, p.clearance_angle))
        .collect();
    let unmasked: Vec<SensorReading> = obs
        .readings
        .iter()
        .zip(&free)
        .map(|(r, &f)| if f { SensorReading { angle: r.angle, distance: p.sensor_max } } else { *r })
        .collect();
    let class = classify_obstacle(&unmasked, p.sensor_max);
    let detecting = class != ObstacleClass::None;

    let (driving, f_net) = if mem.is_leader() {
        let ramp = ((tick - mem.state_since + 1) as f64 / proto.ramp_ticks.max(1) as f64).min(1.0);
        let g = obs.goal.map(|g| goal_force(g, pose.position, p).clamped(kin.v_leader * ramp)).unwrap_or(Vec2::ZERO);
        (g, g.norm())
    } else {
        match mem.parent.and_then(|id| obs.neighbor(id)) {
            Some(parent) => {
                let f_a = attract_force(parent.distance, parent.azimuth, p);
                let net = net_formation_force(f_a, mem.f_ref);
                let feed = mem
                    .parent_last_position
                    .map(|prev| (parent.status.position - prev) * (1.0 / kin.dt))
                    .unwrap_or(Vec2::ZERO);
                mem.parent_last_position = Some(parent.status.position);
                (net + feed, net.norm())
            }
            None => (Vec2::ZERO, 0.0),
        }
    };

    let desired_local = angle_diff(driving.angle(), pose.heading);
    let blocked = driving != Vec2::ZERO
        && unmasked
            .iter()
            .any(|r| r.detects(p.sensor_max) && r.distance <= proto.engage_distance && blocks(r.angle, desired_local));
    let (mode, clear) = if mem.is_leader() {
        // The leader never leaves the goal course to circle an obstacle.
        let m = if class == ObstacleClass::None { TransitMode::FormationHold } else { TransitMode::ShrinkAvoid };
        (m, 0)
    } else {
        let prev = mem.mode;
        transit_mode(
            ModeInputs { previous: prev, class, blocked, goal_reached: false, clear_count: mem.clear_count },
            proto.clear_ticks,
        )
    };
    if mode == TransitMode::WallFollow && mem.mode != Some(TransitMode::WallFollow) {
        let prefer = if desired_local >= 0.0 { TurnSide::Left } else { TurnSide::Right };
        mem.turn_side = Some(choose_turn_side(&obs.readings, &free, prefer));
    }
    if mode == TransitMode::WallFollow {
        let nearest = unmasked
            .iter()
            .filter(|r| r.detects(p.sensor_max))
            .min_by(|a, b| a.distance.total_cmp(&b.distance));
        if let Some(r) = nearest {
            mem.wall_point = Some(pose.position + Vec2::polar(r.distance, pose.heading + r.angle));
        }
    } else {
        mem.wall_point = None;
    }
    if mode != TransitMode::WallFollow {
        mem.turn_side = None;
    }
    mem.mode = Some(mode);
    mem.clear_count = clear;

    let drive = match (mode, mem.turn_side) {
        (TransitMode::WallFollow, Some(side)) => match mem.wall_point {
            // Track the remembered contact so the command does not flicker as
            // the sensor fan swings with the heading.
            Some(pt) => {
                let rel = pt - pose.position;
                let contact = SensorReading { angle: angle_diff(rel.angle(), pose.heading), distance: rel.norm() };
                wall_follow(&[contact], side, f64::INFINITY, kin.v_max, &proto.wall).rotated(pose.heading)
            }
            None => driving,
        },
        _ => driving,
    };
    let obstacle = obstacle_force(&obs.readings, &masks, drive.norm(), pose.heading, p);
    TransitForces { drive, obstacle, f_net, detecting }
}
