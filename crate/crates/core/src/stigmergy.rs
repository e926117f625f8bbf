//! Local broadcast messages and the virtual stigmergy.
//!
//! The stigmergy is a replicated key-value store. Every bot owns a replica,
//! writes stamp a Lamport clock, and replicas gossip their full contents to
//! radio neighbors every tick. Conflicts resolve last-writer-wins on
//! `(lamport, origin)`, which makes merging a join: order and duplication of
//! deliveries do not matter.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::vec2::Vec2;

/// Key prefix of the task-completion set (`done/<id>`).
pub const COMPLETION_PREFIX: &str = "done/";
pub const DISTANCE_PREFIX: &str = "dist/";
pub const LATERAL_PREFIX: &str = "lat/";
pub const LONGITUDINAL_PREFIX: &str = "lon/";
pub const PARENT_PREFIX: &str = "parent/";
pub const GOAL_AZIMUTH_KEY: &str = "goal_azimuth";
pub const GOAL_REACHED_KEY: &str = "goal_reached";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BotId(pub u32);

impl fmt::Display for BotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Origin used for entries injected by the scenario rather than by a bot.
pub const SCENARIO_ORIGIN: BotId = BotId(u32::MAX);

/// Key for a per-bot entry under `prefix`.
pub fn bot_key(prefix: &str, id: BotId) -> String {
    format!("{prefix}{id}")
}

/// Lifecycle state of a bot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotState {
    Searching,
    Moving,
    Reached,
    Ready,
    Transit,
    Done,
}

impl BotState {
    pub fn as_str(self) -> &'static str {
        match self {
            BotState::Searching => "searching",
            BotState::Moving => "moving",
            BotState::Reached => "reached",
            BotState::Ready => "ready",
            BotState::Transit => "transit",
            BotState::Done => "done",
        }
    }

    pub fn parse(s: &str) -> Option<BotState> {
        Some(match s {
            "searching" => BotState::Searching,
            "moving" => BotState::Moving,
            "reached" => BotState::Reached,
            "ready" => BotState::Ready,
            "transit" => BotState::Transit,
            "done" => BotState::Done,
            _ => return None,
        })
    }

    /// Holds a label that other bots must respect.
    pub fn holds_label(self) -> bool {
        self != BotState::Searching
    }

    /// Past the movement phase of label allotment.
    pub fn is_settled(self) -> bool {
        matches!(self, BotState::Reached | BotState::Ready | BotState::Transit | BotState::Done)
    }

    /// Whether `self -> next` is a legal lifecycle step. Staying put is always legal.
    pub fn can_become(self, next: BotState) -> bool {
        use BotState::*;
        self == next
            || matches!(
                (self, next),
                (Searching, Moving)
                    | (Moving, Reached)
                    | (Moving, Searching)
                    | (Reached, Ready)
                    | (Ready, Transit)
                    | (Transit, Done)
            )
    }
}

/// Heartbeat each bot broadcasts after moving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Status {
    pub position: Vec2,
    pub heading: f64,
    /// -1 when unlabeled.
    pub label: i32,
    pub state: BotState,
    pub distance_to_origin: f64,
}

/// One stamped stigmergy write.
#[derive(Debug, Clone, PartialEq)]
pub struct StigmergyDelta {
    pub key: String,
    pub value: f64,
    pub lamport: u64,
    pub origin: BotId,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Status(Status),
    /// Labels the sender believes are still free around it.
    LabelOffer(Vec<usize>),
    /// Full replica digest, tagged with the sender's store revision.
    Stigmergy { revision: u64, entries: Arc<Vec<StigmergyDelta>> },
}

#[derive(Debug, Clone)]
pub struct Message {
    pub sender: BotId,
    /// Tick the message was produced; it is delivered one tick later.
    pub sent_tick: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub value: f64,
    pub lamport: u64,
    pub origin: BotId,
}

impl Entry {
    fn stamp(&self) -> (u64, BotId) {
        (self.lamport, self.origin)
    }
}

/// One bot's replica.
#[derive(Debug, Clone)]
pub struct StigmergyStore {
    owner: BotId,
    entries: BTreeMap<String, Entry>,
    local_clock: u64,
    revision: u64,
    digest: Option<Arc<Vec<StigmergyDelta>>>,
}

impl StigmergyStore {
    pub fn new(owner: BotId) -> Self {
        Self { owner, entries: BTreeMap::new(), local_clock: 0, revision: 0, digest: None }
    }

    pub fn owner(&self) -> BotId {
        self.owner
    }

    pub fn local_clock(&self) -> u64 {
        self.local_clock
    }

    /// Bumped on every change; lets receivers skip unchanged digests.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    fn touch(&mut self) {
        self.revision += 1;
        self.digest = None;
    }

    /// Write `key` locally with a fresh Lamport stamp.
    pub fn put(&mut self, key: &str, value: f64) -> StigmergyDelta {
        self.local_clock += 1;
        let entry = Entry { value, lamport: self.local_clock, origin: self.owner };
        self.entries.insert(key.to_string(), entry);
        self.touch();
        StigmergyDelta { key: key.to_string(), value, lamport: entry.lamport, origin: entry.origin }
    }

    /// Last-writer-wins merge. Returns whether the store changed.
    pub fn merge(&mut self, delta: &StigmergyDelta) -> bool {
        self.local_clock = self.local_clock.max(delta.lamport);
        let incoming = Entry { value: delta.value, lamport: delta.lamport, origin: delta.origin };
        let wins = match self.entries.get(&delta.key) {
            None => true,
            Some(local) => incoming.stamp() > local.stamp(),
        };
        if wins {
            self.entries.insert(delta.key.clone(), incoming);
            self.touch();
        }
        wins
    }

    pub fn merge_all<'a>(&mut self, deltas: impl IntoIterator<Item = &'a StigmergyDelta>) -> bool {
        deltas.into_iter().fold(false, |changed, d| self.merge(d) | changed)
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.entries.get(key).map(|e| e.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Entry)> + 'a {
        self.entries
            .range::<str, _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, e)| (k.as_str(), e))
    }

    /// Per-bot entries under `prefix`, parsed back to (id, value).
    pub fn per_bot(&self, prefix: &str) -> Vec<(BotId, f64)> {
        self.with_prefix(prefix)
            .filter_map(|(k, e)| k[prefix.len()..].parse::<u32>().ok().map(|id| (BotId(id), e.value)))
            .collect()
    }

    /// Number of keys under `prefix`.
    pub fn size(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).count()
    }

    /// Full contents as deltas, shared until the next change.
    pub fn digest(&mut self) -> Arc<Vec<StigmergyDelta>> {
        if let Some(d) = &self.digest {
            return Arc::clone(d);
        }
        let d: Arc<Vec<StigmergyDelta>> = Arc::new(
            self.entries
                .iter()
                .map(|(k, e)| StigmergyDelta { key: k.clone(), value: e.value, lamport: e.lamport, origin: e.origin })
                .collect(),
        );
        self.digest = Some(Arc::clone(&d));
        d
    }

    /// Contents without the owner-specific clock, for replica comparison.
    pub fn snapshot(&self) -> BTreeMap<String, Entry> {
        self.entries.clone()
    }
}

/// True once the completion set holds exactly `threshold` ids.
pub fn barrier_reached(store: &StigmergyStore, threshold: usize) -> bool {
    store.size(COMPLETION_PREFIX) == threshold
}

/// One synchronous gossip round over a static graph: every node merges the
/// digests its neighbors held at the start of the round.
pub fn gossip_round(stores: &mut [StigmergyStore], adjacency: &[Vec<usize>]) {
    let digests: Vec<Arc<Vec<StigmergyDelta>>> = stores.iter_mut().map(|s| s.digest()).collect();
    for (node, store) in stores.iter_mut().enumerate() {
        let mut nbrs = adjacency[node].clone();
        nbrs.sort_unstable();
        for nb in nbrs {
            store.merge_all(digests[nb].iter());
        }
    }
}
