//! Slotted interval dynamics.
//!
//! One interval is `begin_interval`, then `T` rounds of policy decision and
//! `advance_slot`, then `end_interval`, which settles the debt ledger. Debt
//! views are refreshed at every interval boundary.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::fulfillment_check;
use crate::model::{RadioMode, SystemConfig, Topology};
use crate::policies::{PolicySpec, SchedulingPolicy};

/// Where a flow's packet is within the current interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    /// Not generated yet (`t < tau`).
    Unborn,
    /// Held by the sensor with this dense index and transmittable this slot.
    At(usize),
    /// Reached the root.
    Delivered,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntervalState {
    /// Current slot, 1-based; `T + 1` once the interval is over.
    pub t: usize,
    /// Packet position per dense flow index.
    pub positions: Vec<Position>,
}

impl IntervalState {
    /// Flows whose packet is currently held by `node`, ascending.
    pub fn held_by(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.positions
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Position::At(node))
            .map(|(f, _)| f)
    }

    /// Held flows grouped by sensor, sensors ascending.
    pub fn holdings(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (f, p) in self.positions.iter().enumerate() {
            if let Position::At(n) = p {
                out.entry(*n).or_default().push(f);
            }
        }
        out
    }
}

/// Per-slot assignment: transmitting sensor -> flow whose packet it sends.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Schedule(BTreeMap<usize, usize>);

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sensor: usize, flow: usize) -> Option<usize> {
        self.0.insert(sensor, flow)
    }

    pub fn remove(&mut self, sensor: usize) -> Option<usize> {
        self.0.remove(&sensor)
    }

    pub fn get(&self, sensor: usize) -> Option<usize> {
        self.0.get(&sensor).copied()
    }

    pub fn contains(&self, sensor: usize) -> bool {
        self.0.contains_key(&sensor)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(sensor, flow)` pairs in ascending sensor order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(s, f)| (*s, *f))
    }
}

impl FromIterator<(usize, usize)> for Schedule {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleViolation {
    #[error("sensor {sensor} does not hold the packet of flow {flow}")]
    NotHeld { sensor: usize, flow: usize },
    #[error("sensor {sensor} transmits while its parent {parent} transmits")]
    ParentTransmitting { sensor: usize, parent: usize },
    #[error("sensors {a} and {b} both transmit to parent {parent}")]
    SiblingCollision { a: usize, b: usize, parent: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("illegal schedule: {0}")]
    IllegalSchedule(#[from] ScheduleViolation),
    #[error("interval is over (t = {0})")]
    IntervalOver(usize),
    #[error("interval not finished (t = {t}, expected {expected})")]
    IntervalNotFinished { t: usize, expected: usize },
    #[error("debt view at sensor {sensor} is {age} intervals old, bound is {bound}")]
    StaleView { sensor: usize, age: u64, bound: u64 },
}

/// State at slot 1 of a fresh interval.
pub fn begin_interval(config: &SystemConfig) -> IntervalState {
    let root = config.topology().root();
    let positions = config
        .flows()
        .iter()
        .enumerate()
        .map(|(f, spec)| {
            if spec.tau == 1 {
                born_at(config.source(f), root)
            } else {
                Position::Unborn
            }
        })
        .collect();
    IntervalState { t: 1, positions }
}

fn born_at(source: usize, root: usize) -> Position {
    if source == root {
        Position::Delivered
    } else {
        Position::At(source)
    }
}

/// Structured legality check; `Ok` iff the schedule may be applied.
pub fn check_schedule(
    state: &IntervalState,
    schedule: &Schedule,
    topology: &Topology,
    mode: RadioMode,
) -> Result<(), ScheduleViolation> {
    let root = topology.root();
    for (sensor, flow) in schedule.iter() {
        if sensor == root || state.positions.get(flow) != Some(&Position::At(sensor)) {
            return Err(ScheduleViolation::NotHeld { sensor, flow });
        }
    }
    if mode == RadioMode::HalfDuplex {
        let mut receiver: BTreeMap<usize, usize> = BTreeMap::new();
        for (sensor, _) in schedule.iter() {
            let parent = topology.parent(sensor).expect("root never transmits");
            if schedule.contains(parent) {
                return Err(ScheduleViolation::ParentTransmitting { sensor, parent });
            }
            if let Some(a) = receiver.insert(parent, sensor) {
                return Err(ScheduleViolation::SiblingCollision { a, b: sensor, parent });
            }
        }
    }
    Ok(())
}

pub fn is_schedule_legal(
    state: &IntervalState,
    schedule: &Schedule,
    topology: &Topology,
    mode: RadioMode,
) -> bool {
    check_schedule(state, schedule, topology, mode).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub sensor: usize,
    pub flow: usize,
    pub success: bool,
}

/// Applies one slot. Each scheduled transmission consumes exactly one uniform
/// draw from `rng`, in ascending sensor order.
pub fn advance_slot(
    config: &SystemConfig,
    state: &mut IntervalState,
    schedule: &Schedule,
    rng: &mut dyn RngCore,
) -> Result<Vec<Transmission>, EngineError> {
    if state.t > config.slots {
        return Err(EngineError::IntervalOver(state.t));
    }
    let topo = config.topology();
    check_schedule(state, schedule, topo, config.mode)?;

    let root = topo.root();
    let mut outcomes = Vec::with_capacity(schedule.len());
    for (sensor, flow) in schedule.iter() {
        let success = rng.gen::<f64>() < topo.reliability(sensor);
        if success {
            let parent = topo.parent(sensor).expect("root never transmits");
            state.positions[flow] = if parent == root {
                Position::Delivered
            } else {
                Position::At(parent)
            };
        }
        outcomes.push(Transmission { sensor, flow, success });
    }
    state.t += 1;
    for (f, spec) in config.flows().iter().enumerate() {
        if spec.tau == state.t {
            state.positions[f] = born_at(config.source(f), root);
        }
    }
    Ok(outcomes)
}

/// Per-flow debts `d_f(k) = k q_f - sum e_f`, stored as integer delivery
/// counts so the telescoped identity holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct DebtLedger {
    requirements: Vec<f64>,
    delivered: Vec<u64>,
    interval: u64,
}

impl DebtLedger {
    pub fn new(config: &SystemConfig) -> Self {
        Self::from_requirements(config.flows().iter().map(|f| f.q).collect())
    }

    pub fn from_requirements(requirements: Vec<f64>) -> Self {
        let n = requirements.len();
        Self {
            requirements,
            delivered: vec![0; n],
            interval: 0,
        }
    }

    /// Number of settled intervals `k`.
    pub fn interval(&self) -> u64 {
        self.interval
    }

    pub fn debt(&self, flow: usize) -> f64 {
        self.interval as f64 * self.requirements[flow] - self.delivered[flow] as f64
    }

    pub fn debts(&self) -> Vec<f64> {
        (0..self.requirements.len()).map(|f| self.debt(f)).collect()
    }

    pub fn delivered(&self, flow: usize) -> u64 {
        self.delivered[flow]
    }

    /// Settles one interval given delivery indicators.
    pub fn record(&mut self, deliveries: &[bool]) {
        assert_eq!(deliveries.len(), self.delivered.len());
        for (count, e) in self.delivered.iter_mut().zip(deliveries) {
            *count += u64::from(*e);
        }
        self.interval += 1;
    }
}

/// Closes the interval: delivery indicators and ledger update.
pub fn end_interval(
    config: &SystemConfig,
    state: &IntervalState,
    ledger: &mut DebtLedger,
) -> Result<Vec<bool>, EngineError> {
    let expected = config.slots + 1;
    if state.t != expected {
        return Err(EngineError::IntervalNotFinished { t: state.t, expected });
    }
    let deliveries: Vec<bool> = state
        .positions
        .iter()
        .map(|p| *p == Position::Delivered)
        .collect();
    ledger.record(&deliveries);
    Ok(deliveries)
}

/// What each sensor believes the per-flow debts are.
///
/// With update period 0 every sensor sees the live ledger. Otherwise, at each
/// boundary `k` with `k % lambda == 0`, every non-root sensor simultaneously
/// takes over its parent's pre-boundary snapshot, and the root's store is
/// replaced by the live ledger at every boundary. A sensor `g` hops from the
/// root therefore holds debts at most `g * lambda` intervals old, and with
/// `lambda = 1` it lags exactly `g` intervals once the pipeline is full.
#[derive(Debug, Clone, PartialEq)]
pub struct DebtViews {
    snapshots: Vec<Vec<f64>>,
    taken_at: Vec<u64>,
    update_period: u64,
    root: usize,
}

impl DebtViews {
    pub fn new(topology: &Topology, flows: usize, update_period: u64) -> Self {
        Self {
            snapshots: vec![vec![0.0; flows]; topology.len()],
            taken_at: vec![0; topology.len()],
            update_period,
            root: topology.root(),
        }
    }

    /// All sensors see the same fixed debts.
    pub fn uniform(topology: &Topology, debts: &[f64]) -> Self {
        Self {
            snapshots: vec![debts.to_vec(); topology.len()],
            taken_at: vec![0; topology.len()],
            update_period: 0,
            root: topology.root(),
        }
    }

    pub fn debts_at(&self, sensor: usize) -> &[f64] {
        &self.snapshots[sensor]
    }

    pub fn debt(&self, sensor: usize, flow: usize) -> f64 {
        self.snapshots[sensor][flow]
    }

    /// Interval index at which the ledger values seen by `sensor` were current.
    pub fn snapshot_interval(&self, sensor: usize) -> u64 {
        self.taken_at[sensor]
    }

    pub fn age(&self, sensor: usize, now: u64) -> u64 {
        now - self.taken_at[sensor]
    }

    /// Boundary update after `ledger` has settled interval `ledger.interval()`.
    pub fn refresh(&mut self, ledger: &DebtLedger, topology: &Topology) {
        let k = ledger.interval();
        let current = ledger.debts();
        if self.update_period == 0 {
            for (snap, at) in self.snapshots.iter_mut().zip(&mut self.taken_at) {
                snap.clone_from(&current);
                *at = k;
            }
            return;
        }
        if k % self.update_period == 0 {
            let old_snaps = self.snapshots.clone();
            let old_taken = self.taken_at.clone();
            for n in 0..self.snapshots.len() {
                if let Some(p) = topology.parent(n) {
                    self.snapshots[n].clone_from(&old_snaps[p]);
                    self.taken_at[n] = old_taken[p];
                }
            }
        }
        self.snapshots[self.root] = current;
        self.taken_at[self.root] = k;
    }

    /// Checks the `g * lambda` staleness bound at interval `now`.
    pub fn check_ages(&self, topology: &Topology, now: u64) -> Result<(), EngineError> {
        for n in 0..self.snapshots.len() {
            let bound = topology.depth(n) as u64 * self.update_period;
            let age = self.age(n, now);
            if age > bound {
                return Err(EngineError::StaleView { sensor: n, age, bound });
            }
        }
        Ok(())
    }
}

/// Free-function form of [`DebtViews::refresh`].
pub fn refresh_debt_views(views: &mut DebtViews, ledger: &DebtLedger, topology: &Topology) {
    views.refresh(ledger, topology);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub intervals: u64,
    pub timely_throughput: Vec<f64>,
    pub final_debts: Vec<f64>,
    pub fulfilled: bool,
    /// Per-interval delivery indicators, present when tracing was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Vec<bool>>>,
}

impl RunMetrics {
    pub fn max_debt(&self) -> f64 {
        self.final_debts
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stepwise simulator. Channel outcomes and policy randomness come from two
/// independent seeded streams so that policies drawing random numbers do not
/// perturb the channel.
pub struct Simulator<'a> {
    config: &'a SystemConfig,
    policy: Box<dyn SchedulingPolicy>,
    channel_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    ledger: DebtLedger,
    views: DebtViews,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a SystemConfig, policy: &PolicySpec) -> Self {
        Self::with_seed(config, policy, config.seed)
    }

    pub fn with_seed(config: &'a SystemConfig, policy: &PolicySpec, seed: u64) -> Self {
        let topo = config.topology();
        Self {
            config,
            policy: policy.build(),
            channel_rng: ChaCha8Rng::seed_from_u64(seed),
            policy_rng: ChaCha8Rng::seed_from_u64(policy.seed),
            ledger: DebtLedger::new(config),
            views: DebtViews::new(topo, config.flows().len(), config.update_period),
        }
    }

    pub fn ledger(&self) -> &DebtLedger {
        &self.ledger
    }

    pub fn views(&self) -> &DebtViews {
        &self.views
    }

    /// Runs one full interval and returns its delivery indicators.
    pub fn step_interval(&mut self) -> Result<Vec<bool>, EngineError> {
        self.step_interval_observed(|_, _, _| {})
    }

    /// Like [`Self::step_interval`], calling `observe` after every slot with
    /// the pre-slot state, the applied schedule and the transmission outcomes.
    pub fn step_interval_observed(
        &mut self,
        mut observe: impl FnMut(&IntervalState, &Schedule, &[Transmission]),
    ) -> Result<Vec<bool>, EngineError> {
        let config = self.config;
        let mut state = begin_interval(config);
        while state.t <= config.slots {
            let schedule = self
                .policy
                .schedule(config, &state, &self.views, &mut self.policy_rng);
            let before = state.clone();
            let outcomes = advance_slot(config, &mut state, &schedule, &mut self.channel_rng)?;
            observe(&before, &schedule, &outcomes);
        }
        let deliveries = end_interval(config, &state, &mut self.ledger)?;
        self.views.refresh(&self.ledger, config.topology());
        self.views
            .check_ages(config.topology(), self.ledger.interval())?;
        Ok(deliveries)
    }

    pub fn metrics(&self, trace: Option<Vec<Vec<bool>>>) -> RunMetrics {
        let k = self.ledger.interval();
        let flows = self.config.flows().len();
        let final_debts = self.ledger.debts();
        RunMetrics {
            intervals: k,
            timely_throughput: (0..flows)
                .map(|f| if k == 0 { 0.0 } else { self.ledger.delivered(f) as f64 / k as f64 })
                .collect(),
            fulfilled: fulfillment_check(&final_debts, k, None),
            final_debts,
            trace,
        }
    }
}

/// Runs `config.intervals` intervals with the configured seed.
pub fn run(config: &SystemConfig, policy: &PolicySpec) -> Result<RunMetrics, EngineError> {
    run_with(config, policy, config.intervals, config.seed, false)
}

pub fn run_with(
    config: &SystemConfig,
    policy: &PolicySpec,
    intervals: u64,
    seed: u64,
    record_trace: bool,
) -> Result<RunMetrics, EngineError> {
    let mut sim = Simulator::with_seed(config, policy, seed);
    let mut trace = record_trace.then(Vec::new);
    for _ in 0..intervals {
        let deliveries = sim.step_interval()?;
        if let Some(t) = trace.as_mut() {
            t.push(deliveries);
        }
    }
    Ok(sim.metrics(trace))
}
