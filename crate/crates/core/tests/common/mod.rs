#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schedsim::engine::{begin_interval, IntervalState, Position};
use schedsim::{FlowId, FlowSpec, RadioMode, SensorId, SystemConfig, Topology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random tree on `sensors` nodes (root 0) with reliabilities in (0, 1].
pub fn random_tree(rng: &mut ChaCha8Rng, sensors: usize) -> Topology {
    let parents: BTreeMap<_, _> = (1..sensors as u32)
        .map(|i| (SensorId(i), SensorId(rng.gen_range(0..i))))
        .collect();
    let rel = parents.keys().map(|s| (*s, 1.0 - rng.gen::<f64>())).collect();
    Topology::new(SensorId(0), &parents, &rel).unwrap()
}

pub fn random_chain(rng: &mut ChaCha8Rng, hops: usize) -> Topology {
    let p: Vec<f64> = (0..hops).map(|_| 1.0 - rng.gen::<f64>()).collect();
    Topology::chain(&p).unwrap()
}

pub fn random_flows(rng: &mut ChaCha8Rng, topo: &Topology, flows: usize, slots: usize) -> Vec<FlowSpec> {
    (0..flows as u32)
        .map(|i| FlowSpec {
            id: FlowId(i),
            source: topo.id(rng.gen_range(0..topo.len())),
            q: rng.gen_range(0.0..=1.0),
            tau: rng.gen_range(1..=slots),
        })
        .collect()
}

pub fn random_config(
    rng: &mut ChaCha8Rng,
    max_sensors: usize,
    max_flows: usize,
    max_slots: usize,
    mode: RadioMode,
) -> SystemConfig {
    let sensors = rng.gen_range(1..=max_sensors);
    let topo = random_tree(rng, sensors);
    let slots = rng.gen_range(1..=max_slots);
    let count = rng.gen_range(1..=max_flows);
    let flows = random_flows(rng, &topo, count, slots);
    let lambda = [0, 0, 1, 2, 5][rng.gen_range(0..5)];
    SystemConfig::new(topo, flows, slots, mode, lambda, rng.gen(), 20).unwrap()
}

/// Half-duplex path instance: all flows at the chain's leaf with tau = 1.
pub fn random_path_config(rng: &mut ChaCha8Rng, max_hops: usize, max_flows: usize, max_slots: usize) -> SystemConfig {
    let hops = rng.gen_range(1..=max_hops);
    let topo = random_chain(rng, hops);
    let slots = rng.gen_range(1..=max_slots);
    let flows = (0..rng.gen_range(1..=max_flows) as u32)
        .map(|i| FlowSpec { id: FlowId(i), source: SensorId(hops as u32), q: 0.5, tau: 1 })
        .collect();
    SystemConfig::new(topo, flows, slots, RadioMode::HalfDuplex, 0, 0, 1).unwrap()
}

pub fn random_debts(rng: &mut ChaCha8Rng, flows: usize, lo: f64) -> Vec<f64> {
    (0..flows).map(|_| rng.gen_range(lo..10.0)).collect()
}

/// Random mid-interval state: every flow is unborn, somewhere on its
/// root path, or delivered, consistent with its generation slot.
pub fn random_state(rng: &mut ChaCha8Rng, config: &SystemConfig) -> IntervalState {
    let topo = config.topology();
    let t = rng.gen_range(1..=config.slots);
    let mut state = begin_interval(config);
    state.t = t;
    for (f, spec) in config.flows().iter().enumerate() {
        let src = config.source(f);
        state.positions[f] = if spec.tau > t {
            Position::Unborn
        } else {
            let mut path = vec![src];
            while let Some(p) = topo.parent(*path.last().unwrap()) {
                path.push(p);
            }
            let k = rng.gen_range(0..path.len());
            if path[k] == topo.root() {
                Position::Delivered
            } else {
                Position::At(path[k])
            }
        };
    }
    state
}
