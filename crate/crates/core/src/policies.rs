//! Per-slot scheduling policies.
//!
//! Every policy maps the current interval state plus the per-sensor debt
//! views to a [`Schedule`] that is legal for the configured radio mode.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::engine::{DebtViews, IntervalState, Position, Schedule};
use crate::model::{RadioMode, SystemConfig, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "greedy", alias = "greedy-forwarder")]
    GreedyForwarder,
    #[serde(rename = "csf", alias = "closest-sensor-first")]
    ClosestSensorFirst,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "static", alias = "static-priority")]
    StaticPriority,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::GreedyForwarder,
        PolicyKind::ClosestSensorFirst,
        PolicyKind::Random,
        PolicyKind::StaticPriority,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::GreedyForwarder => "greedy",
            PolicyKind::ClosestSensorFirst => "csf",
            PolicyKind::Random => "random",
            PolicyKind::StaticPriority => "static",
        }
    }

    /// Whether the schedule is a function of state and views alone.
    pub fn is_deterministic(self) -> bool {
        matches!(self, PolicyKind::GreedyForwarder | PolicyKind::ClosestSensorFirst)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greedy" | "greedy-forwarder" | "gf" => Ok(PolicyKind::GreedyForwarder),
            "csf" | "closest-sensor-first" => Ok(PolicyKind::ClosestSensorFirst),
            "random" | "rand" => Ok(PolicyKind::Random),
            "static" | "static-priority" | "sp" => Ok(PolicyKind::StaticPriority),
            other => Err(format!(
                "unknown policy {other:?} (expected greedy, csf, random or static)"
            )),
        }
    }
}

/// Tie-break among equal debts for the deterministic policies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestId,
    HighestId,
}

impl TieBreak {
    // Returns true if `candidate` should replace `best` on equal keys.
    fn prefers(self, candidate: usize, best: usize) -> bool {
        match self {
            TieBreak::LowestId => candidate < best,
            TieBreak::HighestId => candidate > best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(rename = "name")]
    pub kind: PolicyKind,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Seed of the policy's own random stream (unused by deterministic policies).
    #[serde(default)]
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, tie_break: TieBreak::default(), seed: 0 }
    }

    pub fn build(&self) -> Box<dyn SchedulingPolicy> {
        Box::new(self.clone())
    }
}

pub trait SchedulingPolicy: Send {
    fn schedule(
        &mut self,
        config: &SystemConfig,
        state: &IntervalState,
        views: &DebtViews,
        rng: &mut dyn RngCore,
    ) -> Schedule;
}

impl SchedulingPolicy for PolicySpec {
    fn schedule(
        &mut self,
        config: &SystemConfig,
        state: &IntervalState,
        views: &DebtViews,
        rng: &mut dyn RngCore,
    ) -> Schedule {
        decide(self.kind, self.tie_break, config, state, views, rng)
    }
}

/// Dispatches to the named policy for the configured mode.
///
/// The Greedy Forwarder under half-duplex radios has its per-sensor choices
/// filtered level by level in Closest Sensor First order, which yields
/// exactly the Closest Sensor First schedule.
pub fn decide(
    kind: PolicyKind,
    tie: TieBreak,
    config: &SystemConfig,
    state: &IntervalState,
    views: &DebtViews,
    rng: &mut dyn RngCore,
) -> Schedule {
    let topo = config.topology();
    match (kind, config.mode) {
        // Without interference constraints CSF reduces to the greedy rule.
        (PolicyKind::GreedyForwarder | PolicyKind::ClosestSensorFirst, RadioMode::FullDuplex) => {
            greedy_forwarder(state, views, tie)
        }
        (PolicyKind::GreedyForwarder | PolicyKind::ClosestSensorFirst, RadioMode::HalfDuplex) => {
            closest_sensor_first(state, views, topo, tie)
        }
        (PolicyKind::Random, mode) => random_policy(state, mode, topo, rng),
        (PolicyKind::StaticPriority, mode) => static_priority(config, state, mode, rng),
    }
}

// Flow with the largest viewed debt among `held`, honoring the tie-break.
fn top_flow(held: &[usize], debts: &[f64], tie: TieBreak) -> usize {
    let mut best = held[0];
    for &f in &held[1..] {
        if debts[f] > debts[best] || (debts[f] == debts[best] && tie.prefers(f, best)) {
            best = f;
        }
    }
    best
}

/// Every packet-holding sensor sends its held flow of largest viewed debt.
pub fn greedy_forwarder(state: &IntervalState, views: &DebtViews, tie: TieBreak) -> Schedule {
    state
        .holdings()
        .into_iter()
        .map(|(n, held)| (n, top_flow(&held, views.debts_at(n), tie)))
        .collect()
}

/// `d_n(t)`: largest viewed debt over flows held by `n`, `-inf` if none.
pub fn sensor_debt_index(state: &IntervalState, views: &DebtViews, sensors: usize) -> Vec<f64> {
    let mut index = vec![f64::NEG_INFINITY; sensors];
    for (f, p) in state.positions.iter().enumerate() {
        if let Position::At(n) = *p {
            index[n] = index[n].max(views.debt(n, f));
        }
    }
    index
}

/// Closest Sensor First: walk hop levels outward from the root; under each
/// receiver whose own transmission was not scheduled, the child with the
/// largest `d_n(t)` sends its largest-debt flow.
pub fn closest_sensor_first(
    state: &IntervalState,
    views: &DebtViews,
    topology: &Topology,
    tie: TieBreak,
) -> Schedule {
    let holdings = state.holdings();
    let index = sensor_debt_index(state, views, topology.len());
    let mut schedule = Schedule::new();
    for &receiver in topology.by_depth() {
        if schedule.contains(receiver) {
            continue;
        }
        let mut best: Option<usize> = None;
        for &c in topology.children(receiver) {
            if index[c] == f64::NEG_INFINITY {
                continue;
            }
            best = match best {
                Some(b) if index[c] < index[b] || (index[c] == index[b] && !tie.prefers(c, b)) => {
                    Some(b)
                }
                _ => Some(c),
            };
        }
        if let Some(n) = best {
            schedule.insert(n, top_flow(&holdings[&n], views.debts_at(n), tie));
        }
    }
    schedule
}

/// Incremental half-duplex schedule builder.
struct HalfDuplexBuilder<'a> {
    topology: &'a Topology,
    transmitting: Vec<bool>,
    receiving: Vec<bool>,
    schedule: Schedule,
}

impl<'a> HalfDuplexBuilder<'a> {
    fn new(topology: &'a Topology) -> Self {
        Self {
            topology,
            transmitting: vec![false; topology.len()],
            receiving: vec![false; topology.len()],
            schedule: Schedule::new(),
        }
    }

    fn can_add(&self, n: usize) -> bool {
        let p = self.topology.parent(n).expect("holders are never the root");
        !self.transmitting[n] && !self.receiving[n] && !self.transmitting[p] && !self.receiving[p]
    }

    fn try_add(&mut self, n: usize, flow: usize) -> bool {
        if !self.can_add(n) {
            return false;
        }
        let p = self.topology.parent(n).expect("holders are never the root");
        self.transmitting[n] = true;
        self.receiving[p] = true;
        self.schedule.insert(n, flow);
        true
    }
}

/// Random baseline. Full duplex: every holder sends a uniformly chosen held
/// flow. Half duplex: holders are scanned in a random order and kept when
/// still compatible, giving a maximal set; each kept holder sends a uniformly
/// chosen held flow.
pub fn random_policy(
    state: &IntervalState,
    mode: RadioMode,
    topology: &Topology,
    rng: &mut dyn RngCore,
) -> Schedule {
    let holdings = state.holdings();
    match mode {
        RadioMode::FullDuplex => holdings
            .into_iter()
            .map(|(n, held)| (n, held[rng.gen_range(0..held.len())]))
            .collect(),
        RadioMode::HalfDuplex => {
            let mut order: Vec<usize> = holdings.keys().copied().collect();
            order.shuffle(rng);
            let mut builder = HalfDuplexBuilder::new(topology);
            for n in order {
                if builder.can_add(n) {
                    let held = &holdings[&n];
                    builder.try_add(n, held[rng.gen_range(0..held.len())]);
                }
            }
            builder.schedule
        }
    }
}

/// Static Priority baseline: larger requirement first, random tie order.
/// Half duplex scans all present packets in that order and keeps each
/// packet's holder when still compatible.
pub fn static_priority(
    config: &SystemConfig,
    state: &IntervalState,
    mode: RadioMode,
    rng: &mut dyn RngCore,
) -> Schedule {
    let q = |f: usize| config.flows()[f].q;
    match mode {
        RadioMode::FullDuplex => state
            .holdings()
            .into_iter()
            .map(|(n, held)| {
                let top = held.iter().map(|&f| q(f)).fold(f64::NEG_INFINITY, f64::max);
                let tied: Vec<usize> = held.into_iter().filter(|&f| q(f) == top).collect();
                let pick = if tied.len() == 1 { tied[0] } else { tied[rng.gen_range(0..tied.len())] };
                (n, pick)
            })
            .collect(),
        RadioMode::HalfDuplex => {
            let mut packets: Vec<(usize, usize)> = state
                .positions
                .iter()
                .enumerate()
                .filter_map(|(f, p)| match p {
                    Position::At(n) => Some((f, *n)),
                    _ => None,
                })
                .collect();
            packets.shuffle(rng);
            packets.sort_by(|a, b| q(b.0).total_cmp(&q(a.0)));
            let mut builder = HalfDuplexBuilder::new(config.topology());
            for (f, n) in packets {
                builder.try_add(n, f);
            }
            builder.schedule
        }
    }
}

/// True when no further packet-holding sensor could be added to `schedule`
/// without breaking legality for `mode`.
pub fn is_maximal(
    state: &IntervalState,
    schedule: &Schedule,
    topology: &Topology,
    mode: RadioMode,
) -> bool {
    let holdings = state.holdings();
    match mode {
        RadioMode::FullDuplex => holdings.keys().all(|n| schedule.contains(*n)),
        RadioMode::HalfDuplex => {
            let mut builder = HalfDuplexBuilder::new(topology);
            for (n, f) in schedule.iter() {
                if !builder.try_add(n, f) {
                    return false;
                }
            }
            holdings.keys().all(|&n| schedule.contains(n) || !builder.can_add(n))
        }
    }
}
