//! Plottable series and run summaries computed from trace rows.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::controller::Role;
use crate::stigmergy::{BotId, BotState};
use crate::vec2::Vec2;
use crate::world::scenario::Scenario;
use crate::world::trace::{by_tick, fmt_sig9, RunMeta, Trace, TraceRow};

pub const METRICS_HEADER: &str = "kind,abscissa,value";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    ResidualForce,
    FormationError,
    StigmergySize,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::ResidualForce => "residual_force",
            MetricKind::FormationError => "formation_error",
            MetricKind::StigmergySize => "stigmergy_size",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub kind: MetricKind,
    /// (abscissa, value)
    pub points: Vec<(f64, f64)>,
}

impl MetricsSeries {
    pub fn peak(&self) -> Option<f64> {
        self.points.iter().map(|p| p.1).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Ticks where at least one bot is in transit, with the running maximum of the
/// centroid's progress along the goal direction.
fn transit_ticks(rows: &[TraceRow], goal_azimuth: f64) -> Vec<(u64, f64, &[TraceRow])> {
    let g = Vec2::from_angle(goal_azimuth);
    let mut best = f64::NEG_INFINITY;
    by_tick(rows)
        .into_iter()
        .filter(|(_, bots)| bots.iter().any(|b| b.state == BotState::Transit))
        .map(|(tick, bots)| {
            let c = bots.iter().map(TraceRow::position).sum::<Vec2>() * (1.0 / bots.len() as f64);
            best = best.max(c.dot(g));
            (tick, best, bots)
        })
        .collect()
}

/// Σ|F_net| over following bots in transit, against swarm progress.
pub fn residual_force_series(rows: &[TraceRow], meta: &RunMeta) -> MetricsSeries {
    let points = transit_ticks(rows, meta.goal_azimuth)
        .into_iter()
        .map(|(_, x, bots)| {
            let sum = bots
                .iter()
                .filter(|b| b.state == BotState::Transit && b.role != Role::Leader)
                .map(|b| b.f_net)
                .fold(0.0, |acc, f| acc + f);
            (x, sum)
        })
        .collect();
    MetricsSeries { kind: MetricKind::ResidualForce, points }
}

/// Per-bot offset error from the designed offset to its parent, at one tick.
pub fn formation_errors_at(bots: &[TraceRow], meta: &RunMeta) -> BTreeMap<BotId, f64> {
    let by_id: BTreeMap<BotId, &TraceRow> = bots.iter().map(|b| (b.bot, b)).collect();
    meta.parents
        .iter()
        .filter_map(|(child, parent)| {
            let c = by_id.get(child)?;
            let p = by_id.get(parent)?;
            let (lc, lp) = (usize::try_from(c.label).ok()?, usize::try_from(p.label).ok()?);
            let reference = *meta.layout.get(lc)? - *meta.layout.get(lp)?;
            Some((*child, ((c.position() - p.position()) - reference).norm()))
        })
        .collect()
}

/// Mean follower offset error over transit ticks, against swarm progress.
pub fn formation_error_series(rows: &[TraceRow], meta: &RunMeta) -> MetricsSeries {
    let points = transit_ticks(rows, meta.goal_azimuth)
        .into_iter()
        .filter_map(|(_, x, bots)| {
            let errs = formation_errors_at(bots, meta);
            (!errs.is_empty()).then(|| (x, errs.values().sum::<f64>() / errs.len() as f64))
        })
        .collect();
    MetricsSeries { kind: MetricKind::FormationError, points }
}

/// Completion count against tick, one point per change.
pub fn stigmergy_series(meta: &RunMeta) -> MetricsSeries {
    let mut points = Vec::new();
    let mut last = None;
    for (tick, &c) in meta.completion.iter().enumerate() {
        if last != Some(c) {
            points.push((tick as f64, c as f64));
            last = Some(c);
        }
    }
    MetricsSeries { kind: MetricKind::StigmergySize, points }
}

pub fn all_series(rows: &[TraceRow], meta: &RunMeta) -> Vec<MetricsSeries> {
    vec![residual_force_series(rows, meta), formation_error_series(rows, meta), stigmergy_series(meta)]
}

pub fn metrics_csv(series: &[MetricsSeries]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for s in series {
        for &(x, v) in &s.points {
            out.push_str(&format!("{},{},{}\n", s.kind.as_str(), fmt_sig9(x), fmt_sig9(v)));
        }
    }
    out
}

/// Metrics CSV for a trace as it reads back from disk.
pub fn trace_metrics_csv(trace: &Trace) -> String {
    metrics_csv(&all_series(&trace.rows(), &trace.meta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub final_states: BTreeMap<BotId, String>,
    /// First tick every bot was Ready or later.
    pub ticks_to_formation: Option<u64>,
    pub ticks_total: u64,
    /// Smallest gap between two bot bodies over the run, meters.
    pub min_bot_clearance: Option<f64>,
    /// Smallest gap between a bot body and an obstacle, meters.
    pub min_obstacle_clearance: Option<f64>,
    pub peak_residual_force: Option<f64>,
}

pub fn summarize(trace: &Trace, scenario: &Scenario) -> Summary {
    let r = scenario.bot_radius;
    let final_states = trace
        .last()
        .map(|t| t.bots.iter().map(|b| (b.bot, b.state.as_str().to_owned())).collect())
        .unwrap_or_default();
    let ticks_to_formation = trace
        .ticks
        .iter()
        .find(|t| t.bots.iter().all(|b| b.state >= BotState::Ready))
        .map(|t| t.tick);
    let mut min_bot: Option<f64> = None;
    let mut min_obs: Option<f64> = None;
    for t in &trace.ticks {
        for (i, a) in t.bots.iter().enumerate() {
            for b in &t.bots[i + 1..] {
                let gap = a.pose.position.distance(b.pose.position) - 2.0 * r;
                min_bot = Some(min_bot.map_or(gap, |m| m.min(gap)));
            }
            for o in &scenario.obstacles {
                let gap = o.signed_distance(a.pose.position) - r;
                min_obs = Some(min_obs.map_or(gap, |m| m.min(gap)));
            }
        }
    }
    Summary {
        final_states,
        ticks_to_formation,
        ticks_total: trace.ticks.len() as u64,
        min_bot_clearance: min_bot,
        min_obstacle_clearance: min_obs,
        peak_residual_force: residual_force_series(&trace.rows(), &trace.meta).peak(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::TransitMode;

    fn row(tick: u64, bot: u32, x: f64, y: f64, label: i32, role: Role, f_net: f64) -> TraceRow {
        TraceRow {
            tick,
            bot: BotId(bot),
            x,
            y,
            heading: 0.0,
            state: BotState::Transit,
            label,
            role,
            f_net,
            f_obs: 0.0,
            f_coll: 0.0,
            mode: Some(TransitMode::FormationHold),
        }
    }

    fn meta() -> RunMeta {
        // Leader 0 at the origin, four followers one meter to each side.
        RunMeta {
            goal_azimuth: 0.0,
            spacing: 1.0,
            layout: vec![Vec2::ZERO, Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, -1.0), Vec2::new(0.0, 1.0)],
            parents: (1..5).map(|i| (BotId(i), BotId(0))).collect(),
            completion: vec![0, 3, 3, 5],
        }
    }

    fn perfect(tick: u64, dx: f64) -> Vec<TraceRow> {
        let m = meta();
        (0..5)
            .map(|i| {
                let p = m.layout[i] + Vec2::new(dx, 0.0);
                let role = if i == 0 { Role::Leader } else { Role::None };
                row(tick, i as u32, p.x, p.y, i as i32, role, if i == 0 { 0.25 } else { 0.0 })
            })
            .collect()
    }

    #[test]
    fn perfect_formation_has_no_error() {
        let rows: Vec<TraceRow> = (0..3).flat_map(|t| perfect(t, 0.1 * t as f64)).collect();
        let e = formation_error_series(&rows, &meta());
        assert_eq!(e.points.len(), 3);
        assert!(e.points.iter().all(|p| p.1 == 0.0));
        let r = residual_force_series(&rows, &meta());
        assert!(r.points.iter().all(|p| p.1 == 0.0), "leader excluded");
    }

    #[test]
    fn one_displaced_follower() {
        let mut rows = perfect(0, 0.0);
        rows[2].y += 0.2;
        let e = formation_error_series(&rows, &meta());
        assert!((e.points[0].1 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn abscissa_is_monotone() {
        let rows: Vec<TraceRow> = [0.0, 0.5, 0.3, 0.8].iter().enumerate().flat_map(|(t, &dx)| perfect(t as u64, dx)).collect();
        let r = residual_force_series(&rows, &meta());
        let xs: Vec<f64> = r.points.iter().map(|p| p.0).collect();
        assert!(xs.windows(2).all(|w| w[0] <= w[1]), "{xs:?}");
    }

    #[test]
    fn empty_inputs() {
        assert!(residual_force_series(&[], &meta()).points.is_empty());
        assert!(formation_error_series(&[], &meta()).points.is_empty());
        let mut rows = perfect(0, 0.0);
        rows.iter_mut().for_each(|r| r.state = BotState::Ready);
        assert!(residual_force_series(&rows, &meta()).points.is_empty());
    }

    #[test]
    fn stigmergy_steps() {
        let s = stigmergy_series(&meta());
        assert_eq!(s.points, vec![(0.0, 0.0), (1.0, 3.0), (3.0, 5.0)]);
        let csv = metrics_csv(&[s]);
        assert_eq!(csv, "kind,abscissa,value\nstigmergy_size,0.0,0.0\nstigmergy_size,1.0,3.0\nstigmergy_size,3.0,5.0\n");
    }
}
