mod common;

use std::collections::HashMap;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use schedsim::oracle::{chain_delivery_probability, dp_value, policy_expected_value};
use schedsim::{FlowId, FlowSpec, PolicyKind, PolicySpec, RadioMode, SensorId, SystemConfig, Topology};

const UNBORN: i64 = -1;
const DONE: i64 = -2;

/// Exhaustive optimum written straight from the model rules, sharing no
/// code with the library beyond reading the topology.
fn brute_optimum(config: &SystemConfig, w: &[f64]) -> f64 {
    let topo = config.topology();
    let root = topo.root() as i64;
    let flows = config.flows();
    let birth = |pos: &mut Vec<i64>, t: usize| {
        for (f, spec) in flows.iter().enumerate() {
            if spec.tau == t {
                let src = config.source(f) as i64;
                pos[f] = if src == root { DONE } else { src };
            }
        }
    };
    type Memo = HashMap<(usize, Vec<i64>), f64>;
    fn go(config: &SystemConfig, w: &[f64], t: usize, pos: Vec<i64>, birth: &dyn Fn(&mut Vec<i64>, usize), memo: &mut Memo) -> f64 {
        let topo = config.topology();
        if t > config.slots {
            return pos.iter().zip(w).filter(|(p, _)| **p == DONE).map(|(_, w)| w.max(0.0)).sum();
        }
        if let Some(v) = memo.get(&(t, pos.clone())) {
            return *v;
        }
        let holders: Vec<i64> = {
            let mut h: Vec<i64> = pos.iter().copied().filter(|p| *p >= 0).collect();
            h.sort();
            h.dedup();
            h
        };
        // Each holder idles or picks one held flow.
        let mut actions: Vec<Vec<(i64, usize)>> = vec![vec![]];
        for &n in &holders {
            let mut next = Vec::new();
            for a in &actions {
                next.push(a.clone());
                for (f, p) in pos.iter().enumerate() {
                    if *p == n {
                        let mut b = a.clone();
                        b.push((n, f));
                        next.push(b);
                    }
                }
            }
            actions = next;
        }
        let mut best = f64::NEG_INFINITY;
        for a in actions {
            if config.mode == RadioMode::HalfDuplex {
                let parents: Vec<usize> = a.iter().map(|(n, _)| topo.parent(*n as usize).unwrap()).collect();
                let senders: Vec<usize> = a.iter().map(|(n, _)| *n as usize).collect();
                let mut sorted = parents.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() < parents.len() || parents.iter().any(|p| senders.contains(p)) {
                    continue;
                }
            }
            let mut value = 0.0;
            for mask in 0u32..(1 << a.len()) {
                let mut prob = 1.0;
                let mut next = pos.clone();
                for (i, (n, f)) in a.iter().enumerate() {
                    let p = topo.reliability(*n as usize);
                    if mask >> i & 1 == 1 {
                        prob *= p;
                        let h = topo.parent(*n as usize).unwrap();
                        next[*f] = if h == topo.root() { DONE } else { h as i64 };
                    } else {
                        prob *= 1.0 - p;
                    }
                }
                if prob == 0.0 {
                    continue;
                }
                birth(&mut next, t + 1);
                value += prob * go(config, w, t + 1, next, birth, memo);
            }
            best = best.max(value);
        }
        memo.insert((t, pos), best);
        best
    }
    let mut pos = vec![UNBORN; flows.len()];
    birth(&mut pos, 1);
    go(config, w, 1, pos, &birth, &mut HashMap::new())
}

fn tree_instance(seed: u64, mode: RadioMode, max_slots: usize) -> (SystemConfig, Vec<f64>) {
    let mut r = rng(seed);
    let sensors = r.gen_range(2..=4);
    let topo = random_tree(&mut r, sensors);
    let slots = r.gen_range(1..=max_slots);
    let count = r.gen_range(1..=3);
    let flows = random_flows(&mut r, &topo, count, slots);
    let debts = random_debts(&mut r, flows.len(), -2.0);
    (SystemConfig::new(topo, flows, slots, mode, 0, 0, 1).unwrap(), debts)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dp_matches_brute_force(seed in any::<u64>(), half in any::<bool>()) {
        let mode = if half { RadioMode::HalfDuplex } else { RadioMode::FullDuplex };
        let (config, debts) = tree_instance(seed, mode, 5);
        let (v, _) = dp_value(&config, &debts).unwrap();
        let b = brute_optimum(&config, &debts);
        prop_assert!((v - b).abs() <= 1e-12, "dp {v} brute {b}");
    }

    #[test]
    fn dp_bounds_policies(seed in any::<u64>(), half in any::<bool>()) {
        let mode = if half { RadioMode::HalfDuplex } else { RadioMode::FullDuplex };
        let (config, debts) = tree_instance(seed, mode, 5);
        let (v, _) = dp_value(&config, &debts).unwrap();
        let total: f64 = debts.iter().map(|d| d.max(0.0)).sum();
        prop_assert!(v >= -1e-12 && v <= total + 1e-9);
        for kind in [PolicyKind::GreedyForwarder, PolicyKind::ClosestSensorFirst] {
            let p = policy_expected_value(&config, &PolicySpec::new(kind), &debts).unwrap();
            prop_assert!(p <= v + 1e-9, "{kind:?} {p} > {v}");
            if mode == RadioMode::FullDuplex {
                prop_assert!((p - v).abs() <= 1e-9, "{kind:?} {p} != {v}");
            }
        }
    }

    #[test]
    fn csf_optimal_on_paths(seed in any::<u64>()) {
        let mut r = rng(seed);
        let config = random_path_config(&mut r, 4, 3, 6);
        let debts = random_debts(&mut r, config.flows().len(), 0.0);
        let (v, _) = dp_value(&config, &debts).unwrap();
        let p = policy_expected_value(&config, &PolicySpec::new(PolicyKind::ClosestSensorFirst), &debts).unwrap();
        prop_assert!((p - v).abs() <= 1e-9, "csf {p} dp {v}");
    }

    #[test]
    fn dp_scales_with_weights(seed in any::<u64>(), half in any::<bool>(), e in -6i32..6, c in 0.01f64..100.0) {
        let mode = if half { RadioMode::HalfDuplex } else { RadioMode::FullDuplex };
        let (config, debts) = tree_instance(seed, mode, 4);
        let (v, table) = dp_value(&config, &debts).unwrap();
        // A power-of-two factor scales every float exactly, so the argmax is untouched.
        let s = 2f64.powi(e);
        let scaled: Vec<f64> = debts.iter().map(|d| d * s).collect();
        let (vs, ts) = dp_value(&config, &scaled).unwrap();
        prop_assert_eq!(vs, v * s);
        prop_assert_eq!(ts.len(), table.len());
        for (state, _, action) in table.iter() {
            prop_assert_eq!(ts.action(state), Some(action));
        }
        let general: Vec<f64> = debts.iter().map(|d| d * c).collect();
        let (vc, _) = dp_value(&config, &general).unwrap();
        prop_assert!((vc - c * v).abs() <= 1e-9 * (1.0 + c * v.abs()));
    }

    #[test]
    fn extra_slot_never_hurts(seed in any::<u64>(), half in any::<bool>()) {
        let mode = if half { RadioMode::HalfDuplex } else { RadioMode::FullDuplex };
        let (config, debts) = tree_instance(seed, mode, 4);
        let longer = SystemConfig::new(
            config.topology().clone(), config.flows().to_vec(), config.slots + 1, mode, 0, 0, 1,
        ).unwrap();
        let (a, _) = dp_value(&config, &debts).unwrap();
        let (b, _) = dp_value(&longer, &debts).unwrap();
        prop_assert!(b >= a - 1e-12, "{b} < {a}");
    }

    #[test]
    fn chain_formula_agrees_with_dp(seed in any::<u64>(), half in any::<bool>()) {
        let mut r = rng(seed);
        let hops = r.gen_range(1..=4);
        let p: Vec<f64> = (0..hops).map(|_| 1.0 - r.gen::<f64>()).collect();
        let slots = r.gen_range(1..=7);
        let tau = r.gen_range(1..=slots);
        let mode = if half { RadioMode::HalfDuplex } else { RadioMode::FullDuplex };
        let flows = vec![FlowSpec { id: FlowId(0), source: SensorId(hops as u32), q: 1.0, tau }];
        let config = SystemConfig::new(Topology::chain(&p).unwrap(), flows, slots, mode, 0, 0, 1).unwrap();
        let (v, _) = dp_value(&config, &[1.0]).unwrap();
        let c = chain_delivery_probability(&p, tau, slots).unwrap();
        prop_assert!((v - c).abs() <= 1e-12, "dp {v} chain {c}");
    }

    #[test]
    fn chain_probability_is_monotone(seed in any::<u64>()) {
        let mut r = rng(seed);
        let hops = r.gen_range(1..=5);
        let p: Vec<f64> = (0..hops).map(|_| 1.0 - r.gen::<f64>()).collect();
        let slots = r.gen_range(1..=8);
        let tau = r.gen_range(1..=slots);
        let base = chain_delivery_probability(&p, tau, slots).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(chain_delivery_probability(&p, tau, slots + 1).unwrap() >= base - 1e-15);
        let i = r.gen_range(0..hops);
        let mut q = p.clone();
        q[i] = p[i] + (1.0 - p[i]) * r.gen::<f64>();
        prop_assert!(chain_delivery_probability(&q, tau, slots).unwrap() >= base - 1e-15);
    }
}

/// A four-hop path where closest-sensor-first is strictly suboptimal: with
/// packets at hops 1, 2 and 4 in slot 5, idling the reliable first hop so
/// that hop 2 can send is worth more than sending from hop 1. Reference
/// values come from a separate memoized search.
#[test]
fn csf_is_not_optimal_on_long_paths() {
    let p = [0.9, 0.6, 0.5, 0.5];
    let flows = (0..3).map(|i| FlowSpec { id: FlowId(i), source: SensorId(4), q: 0.5, tau: 1 }).collect();
    let config = SystemConfig::new(Topology::chain(&p).unwrap(), flows, 9, RadioMode::HalfDuplex, 0, 0, 1).unwrap();
    let w = [1.0; 3];
    let (v, _) = dp_value(&config, &w).unwrap();
    let c = policy_expected_value(&config, &PolicySpec::new(PolicyKind::ClosestSensorFirst), &w).unwrap();
    assert!((v - 1.2163098375).abs() <= 1e-12, "{v}");
    assert!((c - 1.21618715625).abs() <= 1e-12, "{c}");
    assert!((v - brute_optimum(&config, &w)).abs() <= 1e-12);
}
