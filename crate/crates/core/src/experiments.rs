//! Timely-throughput region experiments.
//!
//! A region sweep assigns requirement `alpha` to one flow of each pair and
//! `beta` to the other, runs the simulator at every grid point, and records
//! whether all debts stayed under the fulfillment threshold.

use std::collections::BTreeMap;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_with, EngineError};
use crate::model::{FlowId, FlowSpec, RadioMode, SensorId, SystemConfig, Topology};
use crate::policies::PolicySpec;

/// Fulfillment threshold on final debts after `intervals` intervals: 3% of
/// the horizon (90 at 3000 intervals).
pub fn default_threshold(intervals: u64) -> f64 {
    3.0 * intervals as f64 / 100.0
}

/// True iff every final debt is strictly below the threshold.
pub fn fulfillment_check(final_debts: &[f64], intervals: u64, threshold: Option<f64>) -> bool {
    let threshold = threshold.unwrap_or_else(|| default_threshold(intervals));
    final_debts.iter().all(|d| *d < threshold)
}

/// Grid values `0, step, 2 step, ...` up to 1 inclusive, rounded to 1e-9.
pub fn grid(step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let n = (1.0 / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub base: SystemConfig,
    /// `(alpha flow, beta flow)` pairs; flows outside every pair keep their base requirement.
    pub pairs: Vec<(FlowId, FlowId)>,
    pub alpha_step: f64,
    pub beta_step: f64,
    pub intervals: u64,
    pub base_seed: u64,
}

impl RegionSpec {
    pub fn new(base: SystemConfig, pairs: Vec<(FlowId, FlowId)>, step: f64) -> Self {
        let intervals = base.intervals;
        let base_seed = base.seed;
        Self { base, pairs, alpha_step: step, beta_step: step, intervals, base_seed }
    }

    /// `(point index, alpha, beta)` in alpha-major order.
    pub fn points(&self) -> Vec<(usize, f64, f64)> {
        let betas = grid(self.beta_step);
        grid(self.alpha_step)
            .into_iter()
            .flat_map(|a| betas.iter().map(move |b| (a, *b)))
            .enumerate()
            .map(|(i, (a, b))| (i, a, b))
            .collect()
    }

    /// Channel seed of grid point `index`.
    pub fn point_seed(&self, index: usize) -> u64 {
        self.base_seed ^ index as u64
    }

    pub fn config_at(&self, alpha: f64, beta: f64) -> SystemConfig {
        let mut role: BTreeMap<FlowId, f64> = BTreeMap::new();
        for (a, b) in &self.pairs {
            role.insert(*a, alpha);
            role.insert(*b, beta);
        }
        self.base
            .with_requirements(|f| role.get(&f.id).copied().unwrap_or(f.q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub fulfilled: bool,
    pub max_debt: f64,
    pub final_debts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionResult {
    pub policy: String,
    /// Alpha-major grid order.
    pub points: Vec<RegionPoint>,
}

impl RegionResult {
    /// For each alpha, the largest fulfilled beta (None when no beta is).
    pub fn boundary(&self) -> Vec<(f64, Option<f64>)> {
        let mut out: Vec<(f64, Option<f64>)> = Vec::new();
        for p in &self.points {
            if out.last().map(|(a, _)| *a) != Some(p.alpha) {
                out.push((p.alpha, None));
            }
            if p.fulfilled {
                let last = out.last_mut().expect("pushed above");
                last.1 = Some(last.1.map_or(p.beta, |b: f64| b.max(p.beta)));
            }
        }
        out
    }

    pub fn fulfilled_count(&self) -> usize {
        self.points.iter().filter(|p| p.fulfilled).count()
    }

    pub fn is_fulfilled(&self, alpha: f64, beta: f64) -> Option<bool> {
        self.points
            .iter()
            .find(|p| p.alpha == alpha && p.beta == beta)
            .map(|p| p.fulfilled)
    }

    /// Writes `alpha,beta,policy,fulfilled,max_debt` rows, header first.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "alpha,beta,policy,fulfilled,max_debt")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{},{}", p.alpha, p.beta, self.policy, p.fulfilled, p.max_debt)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Fraction of grid points where `inner` fulfilled implies `outer` fulfilled.
pub fn containment_fraction(outer: &RegionResult, inner: &RegionResult) -> f64 {
    assert_eq!(outer.points.len(), inner.points.len(), "regions on different grids");
    if outer.points.is_empty() {
        return 1.0;
    }
    let ok = outer
        .points
        .iter()
        .zip(&inner.points)
        .filter(|(o, i)| o.fulfilled || !i.fulfilled)
        .count();
    ok as f64 / outer.points.len() as f64
}

/// Fraction of alpha columns whose boundary beta differs between `a` and `b`.
pub fn boundary_disagreement(a: &RegionResult, b: &RegionResult) -> f64 {
    let (ba, bb) = (a.boundary(), b.boundary());
    assert_eq!(ba.len(), bb.len(), "regions on different grids");
    if ba.is_empty() {
        return 0.0;
    }
    let differ = ba.iter().zip(&bb).filter(|(x, y)| x.1 != y.1).count();
    differ as f64 / ba.len() as f64
}

fn with_jobs<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(work),
        None => work(),
    }
}

/// Simulates every grid point independently; results are in grid order
/// regardless of `jobs`.
pub fn sweep_region(
    spec: &RegionSpec,
    policy: &PolicySpec,
    jobs: Option<usize>,
) -> Result<RegionResult, EngineError> {
    let points = spec.points();
    let results: Result<Vec<RegionPoint>, EngineError> = with_jobs(jobs, || {
        points
            .par_iter()
            .map(|&(i, alpha, beta)| {
                let cfg = spec.config_at(alpha, beta);
                let seed = spec.point_seed(i);
                let m = run_with(&cfg, policy, spec.intervals, seed, false)?;
                Ok(RegionPoint {
                    alpha,
                    beta,
                    seed,
                    fulfilled: m.fulfilled,
                    max_debt: m.max_debt(),
                    final_debts: m.final_debts,
                })
            })
            .collect()
    });
    Ok(RegionResult { policy: policy.kind.name().to_string(), points: results? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayStudyEntry {
    pub update_period: u64,
    pub region: RegionResult,
    /// Points fulfilled with exact debts but not with this update period.
    pub lost: usize,
    /// Points fulfilled with this update period but not with exact debts.
    pub gained: usize,
}

/// Region sweeps for each update period, compared with the exact-debt region.
pub fn delayed_info_study(
    spec: &RegionSpec,
    policy: &PolicySpec,
    update_periods: &[u64],
    jobs: Option<usize>,
) -> Result<Vec<DelayStudyEntry>, EngineError> {
    let with_period = |lambda: u64| {
        let mut s = spec.clone();
        s.base.update_period = lambda;
        sweep_region(&s, policy, jobs)
    };
    let reference = with_period(0)?;
    update_periods
        .iter()
        .map(|&lambda| {
            let region = if lambda == 0 { reference.clone() } else { with_period(lambda)? };
            let pairs = || reference.points.iter().zip(&region.points);
            Ok(DelayStudyEntry {
                update_period: lambda,
                lost: pairs().filter(|(r, x)| r.fulfilled && !x.fulfilled).count(),
                gained: pairs().filter(|(r, x)| !r.fulfilled && x.fulfilled).count(),
                region,
            })
        })
        .collect()
}

/// Slots per interval: one packet every 20 ms, 2 ms per transmission.
pub const SCENARIO_SLOTS: usize = 10;
pub const SCENARIO_INTERVALS: u64 = 3000;
pub const RELIABILITY_RANGE: (f64, f64) = (0.4, 0.9);

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub config: SystemConfig,
    pub pairs: Vec<(FlowId, FlowId)>,
}

impl Scenario {
    pub fn region(&self, step: f64) -> RegionSpec {
        RegionSpec::new(self.config.clone(), self.pairs.clone(), step)
    }
}

/// Parent map of the ten-sensor example tree: 1, 2 under the sink, 3, 4
/// under 1, 5 under 2, then 6, 7 under 3, 8, 9 under 5 and 10 under 4.
pub fn example_tree_parents() -> BTreeMap<SensorId, SensorId> {
    [(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 3), (7, 3), (8, 5), (9, 5), (10, 4)]
        .into_iter()
        .map(|(c, p)| (SensorId(c), SensorId(p)))
        .collect()
}

/// Link reliabilities drawn uniformly from [0.4, 0.9], ascending sensor order.
pub fn draw_reliabilities(sensors: &[SensorId], seed: u64) -> BTreeMap<SensorId, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = RELIABILITY_RANGE;
    sensors.iter().map(|s| (*s, rng.gen_range(lo..=hi))).collect()
}

fn paired_flows(sources: &[u32], per_source: u32) -> (Vec<FlowSpec>, Vec<(FlowId, FlowId)>) {
    let mut flows = Vec::new();
    let mut next = 1;
    for &s in sources {
        for _ in 0..per_source {
            flows.push(FlowSpec { id: FlowId(next), source: SensorId(s), q: 0.0, tau: 1 });
            next += 1;
        }
    }
    let pairs = flows.chunks(2).map(|c| (c[0].id, c[1].id)).collect();
    (flows, pairs)
}

/// The three simulation scenarios: the ten-sensor tree in full- and
/// half-duplex mode, and the five-hop path with all six flows at sensor 5.
/// Reliabilities are drawn once from `seed`; every scenario also uses `seed`
/// as its channel seed.
pub fn build_paper_scenarios(seed: u64) -> Vec<Scenario> {
    let tree_parents = example_tree_parents();
    let tree_sensors: Vec<SensorId> = tree_parents.keys().copied().collect();
    let tree_rel = draw_reliabilities(&tree_sensors, seed);
    let tree = Topology::new(SensorId(0), &tree_parents, &tree_rel).expect("example tree is valid");
    // Each source carries an alpha flow followed by a beta flow.
    let (tree_flows, tree_pairs) = paired_flows(&[3, 5, 6, 7, 8, 9], 2);

    let chain_sensors: Vec<SensorId> = (1..=5).map(SensorId).collect();
    let chain_rel = draw_reliabilities(&chain_sensors, seed);
    let chain = Topology::chain(&chain_rel.values().copied().collect::<Vec<_>>())
        .expect("chain is valid");
    let (chain_flows, _) = paired_flows(&[5], 6);
    // Flows 1..=3 take alpha, 4..=6 take beta.
    let chain_pairs = (1..=3).map(|i| (FlowId(i), FlowId(i + 3))).collect();

    let mk = |topo: &Topology, flows: &[FlowSpec], mode| {
        SystemConfig::new(topo.clone(), flows.to_vec(), SCENARIO_SLOTS, mode, 0, seed, SCENARIO_INTERVALS)
            .expect("scenario is valid")
    };
    vec![
        Scenario {
            name: "tree-full-duplex",
            config: mk(&tree, &tree_flows, RadioMode::FullDuplex),
            pairs: tree_pairs.clone(),
        },
        Scenario {
            name: "tree-half-duplex",
            config: mk(&tree, &tree_flows, RadioMode::HalfDuplex),
            pairs: tree_pairs,
        },
        Scenario {
            name: "path-half-duplex",
            config: mk(&chain, &chain_flows, RadioMode::HalfDuplex),
            pairs: chain_pairs,
        },
    ]
}

pub fn scenario(name: &str, seed: u64) -> Option<Scenario> {
    build_paper_scenarios(seed).into_iter().find(|s| s.name == name)
}
