//! Run traces: in-memory records, the CSV file format, and the sidecar with
//! run facts that the CSV cannot carry.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::{Role, TransitMode};
use crate::error::{Result, SimError};
use crate::stigmergy::{BotId, BotState};
use crate::vec2::Vec2;
use crate::world::kinematics::Pose;

pub const TRACE_HEADER: &str = "tick,bot,x,y,heading,state,label,role,f_net,f_obs,f_coll,mode";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BotRecord {
    pub bot: BotId,
    pub pose: Pose,
    pub state: BotState,
    pub label: i32,
    pub role: Role,
    pub f_net: f64,
    pub f_obs: f64,
    pub f_coll: f64,
    pub mode: Option<TransitMode>,
    /// An unmasked sensor saw an obstacle this tick.
    pub detecting: bool,
    pub parent: Option<BotId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub bots: Vec<BotRecord>,
    pub centroid: Vec2,
    /// Distinct completion keys present in any replica.
    pub completion: usize,
}

/// Facts about a run needed to recompute metrics from a CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub goal_azimuth: f64,
    pub spacing: f64,
    /// Designed position of each label relative to label 0.
    pub layout: Vec<Vec2>,
    /// Final child -> parent assignment.
    pub parents: BTreeMap<BotId, BotId>,
    /// Completion count per tick.
    pub completion: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub ticks: Vec<TickRecord>,
    pub meta: RunMeta,
}

impl Trace {
    pub fn last(&self) -> Option<&TickRecord> {
        self.ticks.last()
    }

    /// Rows exactly as they appear once written and read back.
    pub fn rows(&self) -> Vec<TraceRow> {
        self.ticks
            .iter()
            .flat_map(|t| {
                t.bots.iter().map(move |b| TraceRow {
                    tick: t.tick,
                    bot: b.bot,
                    x: sig9(b.pose.position.x),
                    y: sig9(b.pose.position.y),
                    heading: sig9(b.pose.heading),
                    state: b.state,
                    label: b.label,
                    role: b.role,
                    f_net: sig9(b.f_net),
                    f_obs: sig9(b.f_obs),
                    f_coll: sig9(b.f_coll),
                    mode: b.mode,
                })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows())
    }
}

/// One CSV line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub bot: BotId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub state: BotState,
    pub label: i32,
    pub role: Role,
    pub f_net: f64,
    pub f_obs: f64,
    pub f_coll: f64,
    pub mode: Option<TransitMode>,
}

impl TraceRow {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Round to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Shortest text that reads back as `sig9(x)`.
pub fn fmt_sig9(x: f64) -> String {
    format!("{:?}", sig9(x))
}

pub fn rows_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 96 + TRACE_HEADER.len() + 1);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let mode = r.mode.map(TransitMode::as_str).unwrap_or("none");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.tick,
            r.bot,
            fmt_sig9(r.x),
            fmt_sig9(r.y),
            fmt_sig9(r.heading),
            r.state.as_str(),
            r.label,
            r.role.as_str(),
            fmt_sig9(r.f_net),
            fmt_sig9(r.f_obs),
            fmt_sig9(r.f_coll),
            mode
        ));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(SimError::Trace(format!("unexpected header {:?}", header.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| SimError::Trace(format!("line {line}: bad {what}"));
        let f = |idx: usize, what: &str| rec[idx].parse::<f64>().map_err(|_| bad(what));
        rows.push(TraceRow {
            tick: rec[0].parse().map_err(|_| bad("tick"))?,
            bot: BotId(rec[1].parse().map_err(|_| bad("bot"))?),
            x: f(2, "x")?,
            y: f(3, "y")?,
            heading: f(4, "heading")?,
            state: BotState::parse(&rec[5]).ok_or_else(|| bad("state"))?,
            label: rec[6].parse().map_err(|_| bad("label"))?,
            role: Role::parse(&rec[7]).ok_or_else(|| bad("role"))?,
            f_net: f(8, "f_net")?,
            f_obs: f(9, "f_obs")?,
            f_coll: f(10, "f_coll")?,
            mode: match &rec[11] {
                "none" => None,
                m => Some(TransitMode::parse(m).ok_or_else(|| bad("mode"))?),
            },
        });
    }
    Ok(rows)
}

/// Group rows by tick, preserving order.
pub fn by_tick(rows: &[TraceRow]) -> Vec<(u64, &[TraceRow])> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].tick != rows[start].tick {
            out.push((rows[start].tick, &rows[start..i]));
            start = i;
        }
    }
    out
}
