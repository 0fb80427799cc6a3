//! Exact single-interval computations.
//!
//! The interval is a finite-horizon MDP whose state is the slot index and the
//! position of every flow's packet. [`dp_value`] solves it by backward
//! induction for the objective `sum_f w_f E[e_f]` with `w_f = max(d_f, 0)`;
//! [`policy_expected_value`] evaluates a fixed deterministic policy on the
//! same objective by walking its reachable outcome tree.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{begin_interval, is_schedule_legal, DebtViews, IntervalState, Position, Schedule};
use crate::model::{RadioMode, SystemConfig, Topology};
use crate::policies::{decide, PolicyKind, PolicySpec};

/// Default bound on `(T + 1) (|N| + 1)^|F|`.
pub const DEFAULT_STATE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("state space bound {bound} exceeds cap {cap}")]
    StateSpaceTooLarge { bound: u128, cap: u64 },
    #[error("policy {0} is randomized and cannot be evaluated exactly")]
    NondeterministicPolicy(PolicyKind),
    #[error("probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("generation slot {tau} outside [1, {max}]")]
    BadGenerationSlot { tau: usize, max: usize },
    #[error("expected {expected} debts, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("policy produced an illegal schedule at slot {0}")]
    IllegalSchedule(usize),
}

/// One slot's worth of MDP state: slot index plus packet positions.
pub type MdpState = IntervalState;

/// Non-negative per-flow weights `w_f = max(d_f, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn from_debts(debts: &[f64]) -> Self {
        Self(debts.iter().map(|d| d.max(0.0)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn terminal(&self, state: &IntervalState) -> f64 {
        state
            .positions
            .iter()
            .zip(&self.0)
            .filter(|(p, _)| **p == Position::Delivered)
            .map(|(_, w)| w)
            .sum()
    }
}

/// `(T + 1) (|N| + 1)^|F|`, saturating.
pub fn state_space_bound(slots: usize, sensors: usize, flows: usize) -> u128 {
    let mut bound = slots as u128 + 1;
    for _ in 0..flows {
        bound = bound.saturating_mul(sensors as u128 + 1);
    }
    bound
}

fn guard(config: &SystemConfig, cap: u64) -> Result<(), OracleError> {
    let bound = state_space_bound(config.slots, config.topology().len(), config.flows().len());
    if bound > cap as u128 {
        return Err(OracleError::StateSpaceTooLarge { bound, cap });
    }
    Ok(())
}

/// All legal schedules for `state`, idle assignments included. The empty
/// schedule is always first; order is deterministic.
pub fn enumerate_actions(state: &MdpState, mode: RadioMode, topology: &Topology) -> Vec<Schedule> {
    let holdings = state.holdings();
    let mut actions = vec![Schedule::new()];
    for (n, held) in holdings {
        let mut next = Vec::with_capacity(actions.len() * (held.len() + 1));
        for base in &actions {
            next.push(base.clone());
            for &f in &held {
                let mut s = base.clone();
                s.insert(n, f);
                next.push(s);
            }
        }
        actions = next;
    }
    if mode == RadioMode::HalfDuplex {
        actions.retain(|a| is_schedule_legal(state, a, topology, mode));
    }
    actions
}

/// Successor states of `state` under `action`, with probabilities. Births
/// for slot `t + 1` are applied.
pub fn transitions(
    config: &SystemConfig,
    state: &MdpState,
    action: &Schedule,
) -> Vec<(f64, MdpState)> {
    let topo = config.topology();
    let root = topo.root();
    let sends: Vec<(usize, usize)> = action.iter().collect();
    let mut out = Vec::with_capacity(1 << sends.len());
    for mask in 0u32..(1 << sends.len()) {
        let mut prob = 1.0;
        let mut positions = state.positions.clone();
        for (i, &(n, f)) in sends.iter().enumerate() {
            let p = topo.reliability(n);
            if mask & (1 << i) != 0 {
                prob *= p;
                let parent = topo.parent(n).expect("root never transmits");
                positions[f] = if parent == root { Position::Delivered } else { Position::At(parent) };
            } else {
                prob *= 1.0 - p;
            }
        }
        if prob == 0.0 {
            continue;
        }
        let t = state.t + 1;
        for (f, spec) in config.flows().iter().enumerate() {
            if spec.tau == t {
                let src = config.source(f);
                positions[f] = if src == root { Position::Delivered } else { Position::At(src) };
            }
        }
        out.push((prob, IntervalState { t, positions }));
    }
    out
}

/// Optimal value and one maximizing action per reachable state.
#[derive(Debug, Clone, Default)]
pub struct ValueTable {
    entries: HashMap<MdpState, (f64, Schedule)>,
}

impl ValueTable {
    pub fn get(&self, state: &MdpState) -> Option<(f64, &Schedule)> {
        self.entries.get(state).map(|(v, a)| (*v, a))
    }

    pub fn value(&self, state: &MdpState) -> Option<f64> {
        self.entries.get(state).map(|(v, _)| *v)
    }

    pub fn action(&self, state: &MdpState) -> Option<&Schedule> {
        self.entries.get(state).map(|(_, a)| a)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MdpState, f64, &Schedule)> + '_ {
        self.entries.iter().map(|(s, (v, a))| (s, *v, a))
    }
}

fn check_weights(config: &SystemConfig, debts: &[f64]) -> Result<WeightVector, OracleError> {
    if debts.len() != config.flows().len() {
        return Err(OracleError::WeightCount { expected: config.flows().len(), got: debts.len() });
    }
    Ok(WeightVector::from_debts(debts))
}

/// Maximum of `sum_f max(d_f, 0) E[e_f]` over all policies for one interval,
/// starting from the interval's initial state.
pub fn dp_value(config: &SystemConfig, debts: &[f64]) -> Result<(f64, ValueTable), OracleError> {
    dp_value_capped(config, debts, DEFAULT_STATE_CAP)
}

pub fn dp_value_capped(
    config: &SystemConfig,
    debts: &[f64],
    cap: u64,
) -> Result<(f64, ValueTable), OracleError> {
    guard(config, cap)?;
    let weights = check_weights(config, debts)?;
    let topo = config.topology();
    let slots = config.slots;

    // Reachable states per slot level, 1..=T+1.
    let start = begin_interval(config);
    let mut levels: Vec<Vec<MdpState>> = vec![Vec::new(); slots + 2];
    levels[1].push(start.clone());
    for t in 1..=slots {
        let mut seen: HashSet<MdpState> = HashSet::new();
        let mut next = Vec::new();
        for s in &levels[t] {
            for a in enumerate_actions(s, config.mode, topo) {
                for (_, succ) in transitions(config, s, &a) {
                    if seen.insert(succ.clone()) {
                        next.push(succ);
                    }
                }
            }
        }
        levels[t + 1] = next;
    }

    let mut table = ValueTable::default();
    for s in levels[slots + 1].drain(..) {
        let v = weights.terminal(&s);
        table.entries.insert(s, (v, Schedule::new()));
    }
    for t in (1..=slots).rev() {
        let solved: Vec<(MdpState, f64, Schedule)> = levels[t]
            .par_iter()
            .map(|s| {
                let mut best: Option<(f64, Schedule)> = None;
                for a in enumerate_actions(s, config.mode, topo) {
                    let v: f64 = transitions(config, s, &a)
                        .iter()
                        .map(|(p, succ)| p * table.entries[succ].0)
                        .sum();
                    // Earlier actions win unless beaten beyond rounding noise.
                    let better = match &best {
                        None => true,
                        Some((bv, _)) => v > bv + 1e-12 * bv.abs().max(1.0),
                    };
                    if better {
                        best = Some((v, a));
                    }
                }
                let (v, a) = best.expect("idle action always exists");
                (s.clone(), v, a)
            })
            .collect();
        for (s, v, a) in solved {
            table.entries.insert(s, (v, a));
        }
    }
    let value = table.entries[&start].0;
    Ok((value, table))
}

/// Exact `sum_f max(d_f, 0) E[e_f]` for a deterministic named policy that
/// sees the raw `debts` at every sensor.
pub fn policy_expected_value(
    config: &SystemConfig,
    policy: &PolicySpec,
    debts: &[f64],
) -> Result<f64, OracleError> {
    policy_expected_value_capped(config, policy, debts, DEFAULT_STATE_CAP)
}

pub fn policy_expected_value_capped(
    config: &SystemConfig,
    policy: &PolicySpec,
    debts: &[f64],
    cap: u64,
) -> Result<f64, OracleError> {
    if !policy.kind.is_deterministic() {
        return Err(OracleError::NondeterministicPolicy(policy.kind));
    }
    let views = DebtViews::uniform(config.topology(), debts);
    // Deterministic policies never draw from this stream.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    expected_value_with(config, debts, cap, |s| {
        decide(policy.kind, policy.tie_break, config, s, &views, &mut rng)
    })
}

/// Exact evaluation of an arbitrary state-feedback policy.
pub fn expected_value_with(
    config: &SystemConfig,
    debts: &[f64],
    cap: u64,
    mut policy: impl FnMut(&MdpState) -> Schedule,
) -> Result<f64, OracleError> {
    guard(config, cap)?;
    let weights = check_weights(config, debts)?;
    let mut memo: HashMap<MdpState, f64> = HashMap::new();
    evaluate(config, &weights, &begin_interval(config), &mut policy, &mut memo)
}

fn evaluate(
    config: &SystemConfig,
    weights: &WeightVector,
    state: &MdpState,
    policy: &mut dyn FnMut(&MdpState) -> Schedule,
    memo: &mut HashMap<MdpState, f64>,
) -> Result<f64, OracleError> {
    if state.t > config.slots {
        return Ok(weights.terminal(state));
    }
    if let Some(v) = memo.get(state) {
        return Ok(*v);
    }
    let action = policy(state);
    if !is_schedule_legal(state, &action, config.topology(), config.mode) {
        return Err(OracleError::IllegalSchedule(state.t));
    }
    let mut value = 0.0;
    for (p, succ) in transitions(config, state, &action) {
        value += p * evaluate(config, weights, &succ, policy, memo)?;
    }
    memo.insert(state.clone(), value);
    Ok(value)
}

/// Probability that a packet generated at slot `tau` at the end of a chain
/// with link reliabilities `reliabilities` (source first) reaches the root
/// by the end of a `slots`-slot interval when it is sent every slot.
///
/// Hop `i` takes a geometric(`p_i`) number of slots, so this is
/// `P(G_1 + ... + G_g <= slots - tau + 1)`, computed by convolution.
pub fn chain_delivery_probability(
    reliabilities: &[f64],
    tau: usize,
    slots: usize,
) -> Result<f64, OracleError> {
    if let Some(p) = reliabilities.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(OracleError::BadProbability(*p));
    }
    if tau < 1 || tau > slots + 1 {
        return Err(OracleError::BadGenerationSlot { tau, max: slots + 1 });
    }
    if reliabilities.is_empty() {
        return Ok(1.0);
    }
    let budget = slots + 1 - tau;
    if reliabilities.len() > budget {
        return Ok(0.0);
    }
    // dist[s] = P(hops so far completed in exactly s slots), s <= budget.
    let mut dist = vec![0.0; budget + 1];
    dist[0] = 1.0;
    for &p in reliabilities {
        let mut next = vec![0.0; budget + 1];
        for (s, mass) in dist.iter().enumerate() {
            if *mass == 0.0 {
                continue;
            }
            let mut stay = 1.0;
            for k in 1..=(budget - s) {
                next[s + k] += mass * stay * p;
                stay *= 1.0 - p;
            }
        }
        dist = next;
    }
    Ok(dist.iter().sum())
}
