//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmshape::controller::{Role, TransitMode};
use swarmshape::force::{
    attract_force, collision_force, counter_force, is_masked, net_formation_force, obstacle_force_with_gain, ForceParams,
    SensorReading, SENSOR_ANGLES,
};
use swarmshape::metrics::formation_errors_at;
use swarmshape::stigmergy::{gossip_round, BotId, BotState, Entry, StigmergyDelta, StigmergyStore};
use swarmshape::vec2::{angle_diff, Vec2};
use swarmshape::world::trace::{by_tick, Trace};
use swarmshape::{build_shape_table, run, Scenario, ShapeMatrix};

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    Scenario::load(scenarios_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

struct Run {
    name: String,
    scenario: Scenario,
    trace: Trace,
    elapsed: Duration,
}

fn simulate(name: &str, seed: Option<u64>) -> Run {
    let mut scenario = load(name);
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let start = Instant::now();
    let trace = run(&scenario).unwrap_or_else(|e| panic!("{name}: {e}"));
    let elapsed = start.elapsed();
    let label = match seed {
        Some(s) => format!("{name}#{s}"),
        None => name.to_string(),
    };
    Run { name: label, scenario, trace, elapsed }
}

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let text = std::fs::read_to_string(scenarios_dir().join("shapes/triangle.txt")).map_err(|e| e.to_string())?;
    let m: ShapeMatrix = text.parse().map_err(|e| format!("{e}"))?;
    let table = build_shape_table(&m, 1.0).map_err(|e| format!("{e}"))?;
    let row = table.row(0);
    let elapsed = start.elapsed();
    let labels: Vec<usize> = row.iter().map(|n| n.label).collect();
    ensure(labels == vec![1, 2, 3], || format!("neighbors {labels:?}"))?;
    let want = [(-3.0 * FRAC_PI_4, 1.4), (FRAC_PI_2, 1.0), (-FRAC_PI_4, 1.4)];
    for (n, (angle, dist)) in row.iter().zip(want) {
        ensure((n.angle - angle).abs() < 1e-9, || format!("label {} angle {}", n.label, n.angle))?;
        ensure((n.distance * 10.0).round() / 10.0 == dist, || format!("label {} distance {}", n.label, n.distance))?;
    }
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("label 0 -> {labels:?} in {elapsed:?}"))
}

// ---------------------------------------------------------------- 2

/// Largest per-bot residual after the best rigid fit of the designed layout
/// onto the final positions.
fn aligned_error(run: &Run) -> Option<f64> {
    let last = run.trace.last()?;
    let layout = &run.trace.meta.layout;
    let mut pairs = Vec::new();
    for b in &last.bots {
        pairs.push((*layout.get(usize::try_from(b.label).ok()?)?, b.pose.position));
    }
    let n = pairs.len() as f64;
    let cl = pairs.iter().map(|p| p.0).sum::<Vec2>() * (1.0 / n);
    let cp = pairs.iter().map(|p| p.1).sum::<Vec2>() * (1.0 / n);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (l, p) in &pairs {
        let (a, b) = (*l - cl, *p - cp);
        dot += a.dot(b);
        cross += a.cross(b);
    }
    let theta = cross.atan2(dot);
    pairs.iter().map(|(l, p)| ((*l - cl).rotated(theta) + cp).distance(*p)).reduce(f64::max)
}

fn first_all_ready(trace: &Trace) -> Option<u64> {
    trace.ticks.iter().find(|t| t.bots.iter().all(|b| b.state >= BotState::Ready)).map(|t| t.tick)
}

fn criterion_2(runs: &[Run]) -> Verdict {
    let mut worst_err: f64 = 0.0;
    let mut worst_ticks = 0;
    let mut slowest = Duration::ZERO;
    for r in runs {
        let tick = first_all_ready(&r.trace).ok_or_else(|| format!("{}: never all Ready", r.name))?;
        ensure(tick < 5000, || format!("{}: Ready at tick {tick}", r.name))?;
        let s = r.trace.meta.spacing;
        let err = aligned_error(r).ok_or_else(|| format!("{}: unlabeled bot at end", r.name))?;
        ensure(err <= 0.05 * s, || format!("{}: aligned error {err:.4} > {:.4}", r.name, 0.05 * s))?;
        ensure(r.elapsed < Duration::from_secs(10), || format!("{}: took {:?}", r.name, r.elapsed))?;
        worst_err = worst_err.max(err / s);
        worst_ticks = worst_ticks.max(tick);
        slowest = slowest.max(r.elapsed);
    }
    Ok(format!(
        "{} runs, latest all-Ready tick {worst_ticks}, worst aligned error {worst_err:.3}*spacing, slowest {slowest:?}",
        runs.len()
    ))
}

// ---------------------------------------------------------------- 3

fn check_invariants(r: &Run) -> std::result::Result<(), String> {
    let trace = &r.trace;
    let n = trace.meta.layout.len();
    let last = trace.last().ok_or("empty trace")?;
    let labels: BTreeSet<i32> = last.bots.iter().map(|b| b.label).collect();
    let want: BTreeSet<i32> = (0..n as i32).collect();
    ensure(labels == want && last.bots.len() == n, || format!("final labels {labels:?}"))?;

    for (t, tick) in trace.ticks.iter().enumerate() {
        if tick.bots.iter().any(|b| b.state >= BotState::Ready) {
            let c = trace.meta.completion[t];
            ensure(c == n, || format!("tick {}: Ready with completion {c}/{n}", tick.tick))?;
        }
    }

    for w in trace.ticks.windows(2) {
        for (a, b) in w[0].bots.iter().zip(&w[1].bots) {
            ensure(a.state.can_become(b.state), || {
                format!("tick {}: bot {} {:?} -> {:?}", w[1].tick, a.bot, a.state, b.state)
            })?;
        }
    }

    let Some(start) = trace.ticks.iter().find(|t| t.bots.iter().all(|b| b.state >= BotState::Transit)) else {
        return Err("never reached transit".into());
    };
    let leaders: Vec<BotId> = start.bots.iter().filter(|b| b.role == Role::Leader).map(|b| b.bot).collect();
    ensure(leaders.len() == 1, || format!("tick {}: leaders {leaders:?}", start.tick))?;
    let leader = leaders[0];
    let parent: BTreeMap<BotId, Option<BotId>> = start.bots.iter().map(|b| (b.bot, b.parent)).collect();
    ensure(parent[&leader].is_none(), || "leader has a parent".into())?;
    for &bot in parent.keys() {
        let mut cur = bot;
        let mut hops = 0;
        while cur != leader {
            cur = parent
                .get(&cur)
                .copied()
                .flatten()
                .ok_or_else(|| format!("tick {}: bot {bot} has no path to the leader", start.tick))?;
            hops += 1;
            ensure(hops <= n, || format!("bot {bot}: parent cycle"))?;
        }
    }
    Ok(())
}

fn criterion_3(runs: &[&Run]) -> Verdict {
    for r in runs {
        check_invariants(r).map_err(|e| format!("{}: {e}", r.name))?;
    }
    Ok(format!("{} runs", runs.len()))
}

// ---------------------------------------------------------------- transit helpers

/// Per tick with a bot in transit: (tick, mean error, any bot detecting, per-bot errors).
struct TransitView {
    ticks: Vec<(u64, f64, bool, BTreeMap<BotId, f64>)>,
}

fn transit_view(trace: &Trace) -> TransitView {
    let rows = trace.rows();
    let detecting: BTreeMap<u64, bool> =
        trace.ticks.iter().map(|t| (t.tick, t.bots.iter().any(|b| b.detecting))).collect();
    let ticks = by_tick(&rows)
        .into_iter()
        .filter(|(_, bots)| bots.iter().any(|b| b.state == BotState::Transit))
        .filter_map(|(tick, bots)| {
            let errs = formation_errors_at(bots, &trace.meta);
            if errs.is_empty() {
                return None;
            }
            let mean = errs.values().sum::<f64>() / errs.len() as f64;
            Some((tick, mean, detecting[&tick], errs))
        })
        .collect();
    TransitView { ticks }
}

fn detection_window(v: &TransitView) -> Option<(u64, u64)> {
    let first = v.ticks.iter().find(|t| t.2)?.0;
    let last = v.ticks.iter().rev().find(|t| t.2)?.0;
    Some((first, last))
}

/// Σ|F_net| over followers in transit, per tick.
fn residual_by_tick(trace: &Trace) -> Vec<(u64, f64, bool)> {
    trace
        .ticks
        .iter()
        .filter(|t| t.bots.iter().any(|b| b.state == BotState::Transit))
        .map(|t| {
            let sum = t
                .bots
                .iter()
                .filter(|b| b.state == BotState::Transit && b.role != Role::Leader)
                .fold(0.0, |acc, b| acc + b.f_net);
            let leader_moving = t.bots.iter().any(|b| b.role == Role::Leader && b.state == BotState::Transit);
            (t.tick, sum, leader_moving)
        })
        .collect()
}

fn min_obstacle_clearance(r: &Run) -> f64 {
    let rad = r.scenario.bot_radius;
    r.trace
        .ticks
        .iter()
        .flat_map(|t| t.bots.iter())
        .flat_map(|b| r.scenario.obstacles.iter().map(move |o| o.signed_distance(b.pose.position) - rad))
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------- 4

fn criterion_4(large: &Run) -> Verdict {
    let all_done = large.trace.last().is_some_and(|t| t.bots.iter().all(|b| b.state == BotState::Done));
    ensure(all_done, || "run did not finish".into())?;
    let clearance = min_obstacle_clearance(large);
    ensure(clearance > 0.0, || format!("obstacle clearance {clearance}"))?;
    let v = transit_view(&large.trace);
    let (first, last) = detection_window(&v).ok_or("obstacle never detected")?;
    let baseline = v.ticks.iter().take_while(|t| t.0 < first).last().ok_or("no transit before detection")?.1;
    let peak = v.ticks.iter().filter(|t| (first..=last).contains(&t.0)).map(|t| t.1).fold(0.0, f64::max);
    ensure(peak > baseline, || format!("peak {peak} not above baseline {baseline}"))?;
    let back = v
        .ticks
        .iter()
        .find(|t| t.0 > last && t.0 <= last + 1500 && (t.1 - baseline).abs() <= 0.1 * baseline)
        .ok_or_else(|| format!("error never back within 10% of {baseline:.4} after tick {last}"))?;
    Ok(format!(
        "clearance {clearance:.3} m, window {first}..{last}, baseline {baseline:.4}, peak {peak:.4}, recovered at tick {} ({:.4})",
        back.0, back.1
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5(small: &Run) -> Verdict {
    let s = small.trace.meta.spacing;
    let detectors: BTreeSet<BotId> =
        small.trace.ticks.iter().flat_map(|t| t.bots.iter()).filter(|b| b.detecting).map(|b| b.bot).collect();
    let wall_followers: BTreeSet<BotId> = small
        .trace
        .ticks
        .iter()
        .flat_map(|t| t.bots.iter())
        .filter(|b| b.mode == Some(TransitMode::WallFollow))
        .map(|b| b.bot)
        .collect();
    let v = transit_view(&small.trace);
    let mut peak: BTreeMap<BotId, f64> = BTreeMap::new();
    for (_, _, _, errs) in &v.ticks {
        for (&b, &e) in errs {
            let p = peak.entry(b).or_insert(0.0);
            *p = p.max(e);
        }
    }
    let exceeders: BTreeSet<BotId> = peak.iter().filter(|(_, &e)| e > 0.5 * s).map(|(&b, _)| b).collect();
    ensure(exceeders.is_subset(&detectors), || format!("bots {exceeders:?} exceed 0.5*s but detectors are {detectors:?}"))?;
    let others_peak = peak.iter().filter(|(b, _)| !detectors.contains(b)).map(|(_, &e)| e).fold(0.0, f64::max);
    ensure(others_peak < 0.15 * s, || format!("non-detector error {others_peak:.4}"))?;
    ensure(!wall_followers.is_empty(), || "no bot left the formation".into())?;
    let final_errs = &v.ticks.last().ok_or("no transit")?.3;
    let affected: BTreeSet<BotId> = wall_followers.union(&exceeders).copied().collect();
    for b in &affected {
        let e = final_errs.get(b).copied().unwrap_or(f64::INFINITY);
        ensure(e < 0.1 * s, || format!("bot {b} final error {e:.4}"))?;
    }
    let ids = |set: &BTreeSet<BotId>| set.iter().map(|b| b.0).collect::<Vec<_>>();
    Ok(format!(
        "detectors {:?}, wall-following {:?}, over 0.5*s {:?}, others peak {:.3}*s",
        ids(&detectors),
        ids(&wall_followers),
        ids(&exceeders),
        others_peak / s
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_6(large: &Run, open: &Run) -> Verdict {
    let v = transit_view(&large.trace);
    let (first, last) = detection_window(&v).ok_or("obstacle never detected")?;
    let large_series = residual_by_tick(&large.trace);
    let large_peak =
        large_series.iter().filter(|t| (first..=last).contains(&t.0)).map(|t| t.1).fold(0.0, f64::max);
    let open_series = residual_by_tick(&open.trace);
    let open_peak = open_series.iter().map(|t| t.1).fold(0.0, f64::max);
    ensure(large_peak >= 2.0 * open_peak, || format!("peak {large_peak:.4} vs obstacle-free {open_peak:.4}"))?;
    let start = open_series.first().ok_or("open run never in transit")?.0;
    let steady: Vec<f64> = open_series.iter().filter(|t| t.2 && t.0 >= start + 50).map(|t| t.1).collect();
    ensure(!steady.is_empty(), || "no steady-state ticks".into())?;
    let steady_max = steady.iter().copied().fold(0.0, f64::max);
    ensure(steady_max <= 0.05 * large_peak, || format!("steady state {steady_max:.4} vs peak {large_peak:.4}"))?;
    Ok(format!(
        "window peak {large_peak:.4}, obstacle-free peak {open_peak:.4}, steady state max {steady_max:.2e}"
    ))
}

// ---------------------------------------------------------------- 7

fn proptest_cases(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn brute_obstacle(readings: &[SensorReading], azimuths: &[f64], m: f64, p: &ForceParams) -> Vec2 {
    let mut f = Vec2::ZERO;
    for r in readings {
        if r.distance >= p.sensor_max {
            continue;
        }
        let masked = azimuths.iter().any(|&a| {
            let d = (a - r.angle).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d) <= p.clearance_angle
        });
        if !masked {
            let d = r.distance.max(p.r_min);
            f -= Vec2::new(r.angle.cos(), r.angle.sin()) * (m / d);
        }
    }
    f
}

fn readings_strategy() -> impl Strategy<Value = Vec<SensorReading>> {
    prop::collection::vec(0.0..1.5f64, 5)
        .prop_map(|d| SENSOR_ANGLES.iter().zip(d).map(|(&angle, distance)| SensorReading { angle, distance }).collect())
}

fn criterion_7() -> Verdict {
    const CASES: u32 = 1000;
    let p = ForceParams::default();
    let mut total = 0;

    proptest_cases(CASES)
        .run(&(0.0..0.5f64, -PI..PI), |(r, a)| {
            let f = collision_force(r, a, &p);
            if r >= p.r_o {
                prop_assert_eq!(f, Vec2::ZERO);
            } else {
                let u = Vec2::from_angle(a);
                prop_assert!(f.dot(u) < 0.0, "not repulsive: {:?} at {}", f, a);
                prop_assert!(f.cross(u).abs() <= 1e-9 * f.norm(), "off-axis: {:?}", f);
            }
            Ok(())
        })
        .map_err(|e| format!("repulsion: {e}"))?;
    total += CASES;

    proptest_cases(CASES)
        .run(&(0.05..5.0f64, -PI..PI, 0.1..5.0f64), |(r0, a0, k_o)| {
            let q = ForceParams { k_o, ..p };
            let net = net_formation_force(attract_force(r0, a0, &q), counter_force(r0, a0, &q));
            prop_assert!(net.norm() < 1e-12, "{:?}", net);
            Ok(())
        })
        .map_err(|e| format!("zero at reference: {e}"))?;
    total += CASES;

    let azimuths = prop::collection::vec(-PI..PI, 0..6);
    proptest_cases(CASES)
        .run(&(readings_strategy(), azimuths, 0.01..3.0f64, 0.0..1.0f64), |(readings, az, m, bump)| {
            let f = obstacle_force_with_gain(&readings, &az, m, &p);
            let want = brute_obstacle(&readings, &az, m, &p);
            prop_assert!((f - want).norm() <= 1e-9 * (1.0 + want.norm()), "{:?} vs {:?}", f, want);
            // Moving a masked reading changes nothing.
            let moved: Vec<SensorReading> = readings
                .iter()
                .map(|r| {
                    if is_masked(r.angle, &az, p.clearance_angle) {
                        SensorReading { distance: r.distance * bump, ..*r }
                    } else {
                        *r
                    }
                })
                .collect();
            prop_assert_eq!(obstacle_force_with_gain(&moved, &az, m, &p), f);
            for r in &readings {
                let masked = az.iter().any(|&a| angle_diff(a, r.angle).abs() <= p.clearance_angle);
                prop_assert_eq!(masked, is_masked(r.angle, &az, p.clearance_angle));
            }
            Ok(())
        })
        .map_err(|e| format!("masking: {e}"))?;
    total += CASES;

    let azimuths = prop::collection::vec(-PI..PI, 0..4);
    proptest_cases(CASES)
        .run(&(readings_strategy(), azimuths, 0.0..3.0f64, 0.0..3.0f64, -4.0..4.0f64), |(readings, az, m1, m2, c)| {
            let f = |m: f64| obstacle_force_with_gain(&readings, &az, m, &p);
            let sum = f(m1 + m2) - (f(m1) + f(m2));
            let scale = f(c * m1) - f(m1) * c;
            let tol = 1e-9 * (1.0 + f(m1).norm() + f(m2).norm()) * (1.0 + c.abs());
            prop_assert!(sum.norm() <= tol, "additivity {:?}", sum);
            prop_assert!(scale.norm() <= tol, "homogeneity {:?}", scale);
            Ok(())
        })
        .map_err(|e| format!("linearity: {e}"))?;
    total += CASES;

    Ok(format!("4 properties, {total} cases"))
}

// ---------------------------------------------------------------- 8

fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![BTreeSet::new(); n];
    for i in 1..n {
        let j = rng.gen_range(0..i);
        adj[i].insert(j);
        adj[j].insert(i);
    }
    let extra = rng.gen_range(0..=n);
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }
    adj.into_iter().map(|s| s.into_iter().collect()).collect()
}

fn diameter(adj: &[Vec<usize>]) -> usize {
    let n = adj.len();
    (0..n)
        .map(|src| {
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut q = VecDeque::from([src]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            dist.into_iter().max().unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// The state every replica must reach: per key, the write with the largest
/// (lamport, origin) stamp among everything ever written.
fn flood_oracle(writes: &[StigmergyDelta]) -> BTreeMap<String, Entry> {
    let mut best: BTreeMap<String, &StigmergyDelta> = BTreeMap::new();
    for w in writes {
        let e = best.entry(w.key.clone()).or_insert(w);
        if (w.lamport, w.origin) > (e.lamport, e.origin) {
            *e = w;
        }
    }
    best.into_iter().map(|(k, d)| (k, Entry { value: d.value, lamport: d.lamport, origin: d.origin })).collect()
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut max_diam = 0;
    for g in 0..50 {
        let n = rng.gen_range(1..=12);
        let adj = random_connected_graph(&mut rng, n);
        let diam = diameter(&adj);
        max_diam = max_diam.max(diam);
        let mut stores: Vec<StigmergyStore> = (0..n).map(|i| StigmergyStore::new(BotId(i as u32))).collect();
        let keys = ["a", "b", "c", "d"];
        let mut writes = Vec::new();
        let write_rounds = rng.gen_range(1..=6);
        for _ in 0..write_rounds {
            for _ in 0..rng.gen_range(1..=4) {
                let node = rng.gen_range(0..n);
                let key = keys[rng.gen_range(0..keys.len())];
                writes.push(stores[node].put(key, rng.gen_range(-10.0..10.0)));
            }
            gossip_round(&mut stores, &adj);
        }
        // The last write round already gossiped once.
        for _ in 1..diam.max(1) {
            gossip_round(&mut stores, &adj);
        }
        let oracle = flood_oracle(&writes);
        for (i, s) in stores.iter().enumerate() {
            ensure(s.snapshot() == oracle, || {
                format!("graph {g} (n={n}, diameter {diam}): replica {i} differs from oracle")
            })?;
        }
    }
    Ok(format!("50 graphs, diameter up to {max_diam}"))
}

// ---------------------------------------------------------------- 9

fn criterion_9(runs: &[&Run]) -> Verdict {
    for r in runs {
        let again = run(&r.scenario).map_err(|e| format!("{}: {e}", r.name))?;
        ensure(again.to_csv() == r.trace.to_csv(), || format!("{}: traces differ", r.name))?;
    }
    Ok(format!("{} scenarios", runs.len()))
}

// ----------------------------------------------------------------

fn main() {
    let formation: Vec<Run> = ["formation_triangle.json", "formation_wedge.json"]
        .iter()
        .flat_map(|name| (1..=10).map(move |seed| simulate(name, Some(seed))))
        .collect();
    let open = simulate("transit_open.json", None);
    let large = simulate("transit_large.json", None);
    let small = simulate("transit_small.json", None);

    let mut all: Vec<&Run> = formation.iter().collect();
    all.extend([&open, &large, &small]);

    let results: Vec<(&str, Verdict)> = vec![
        ("1 shape table", criterion_1()),
        ("2 formation completion", criterion_2(&formation)),
        ("3 protocol invariants", criterion_3(&all)),
        ("4 large obstacle transit", criterion_4(&large)),
        ("5 small obstacle fragmentation", criterion_5(&small)),
        ("6 residual force spike", criterion_6(&large, &open)),
        ("7 force law properties", criterion_7()),
        ("8 stigmergy convergence", criterion_8()),
        ("9 determinism", criterion_9(&all)),
    ];

    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!("{}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
