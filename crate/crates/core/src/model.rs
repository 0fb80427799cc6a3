//! Network, flow, and system description.
//!
//! A [`Topology`] is a routing tree rooted at the sink. Sensors are addressed
//! by an opaque [`SensorId`]; internally every sensor also has a dense index
//! and the dense order matches the id order, so "lowest index" and "lowest
//! id" tie-breaks agree everywhere downstream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque sensor identifier with a total order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub u32);

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Opaque flow identifier with a total order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parent chain starting at sensor {0} revisits a sensor")]
    CycleDetected(SensorId),
    #[error("sensor {0} has no parent and is not the root")]
    MissingParent(SensorId),
    #[error("sensor {sensor}: reliability {value:?} is missing or outside (0, 1]")]
    BadReliability { sensor: SensorId, value: Option<f64> },
    #[error("root {0} must not have a parent")]
    RootHasParent(SensorId),
    #[error("root {0} must not have a reliability entry")]
    RootHasReliability(SensorId),
    #[error("unknown sensor {0}")]
    UnknownSensor(SensorId),
    #[error("flow {flow}: {reason}")]
    BadFlow { flow: FlowId, reason: String },
    #[error("duplicate flow id {0}")]
    DuplicateFlow(FlowId),
    #[error("invalid system parameter: {0}")]
    BadParameter(String),
}

/// Routing tree with per-link reliabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    ids: Vec<SensorId>,
    root: usize,
    parent: Vec<Option<usize>>,
    // Success probability of the link n -> h(n); 1.0 placeholder at the root.
    reliability: Vec<f64>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    by_depth: Vec<usize>,
}

impl Topology {
    /// Validates a raw parent map and reliability table into a routing tree.
    ///
    /// The sensor set is the union of the root, every key and value of
    /// `parents`, and every key of `reliability`.
    pub fn new(
        root: SensorId,
        parents: &BTreeMap<SensorId, SensorId>,
        reliability: &BTreeMap<SensorId, f64>,
    ) -> Result<Self, ModelError> {
        if parents.contains_key(&root) {
            return Err(ModelError::RootHasParent(root));
        }
        if reliability.contains_key(&root) {
            return Err(ModelError::RootHasReliability(root));
        }
        let mut all: BTreeSet<SensorId> = BTreeSet::new();
        all.insert(root);
        all.extend(parents.keys().copied());
        all.extend(parents.values().copied());
        all.extend(reliability.keys().copied());
        let ids: Vec<SensorId> = all.into_iter().collect();
        let index = |id: SensorId| ids.binary_search(&id).expect("id collected above");

        let n = ids.len();
        let root_idx = index(root);
        let mut parent = vec![None; n];
        for (child, par) in parents {
            parent[index(*child)] = Some(index(*par));
        }
        for (i, id) in ids.iter().enumerate() {
            if i != root_idx && parent[i].is_none() {
                return Err(ModelError::MissingParent(*id));
            }
        }

        // Depth by walking up; a walk longer than n steps means a cycle.
        let mut depth = vec![usize::MAX; n];
        depth[root_idx] = 0;
        for start in 0..n {
            let mut chain = Vec::new();
            let mut cur = start;
            while depth[cur] == usize::MAX {
                chain.push(cur);
                if chain.len() > n {
                    return Err(ModelError::CycleDetected(ids[start]));
                }
                cur = parent[cur].expect("non-root sensors have parents");
            }
            let base = depth[cur];
            for (k, node) in chain.iter().rev().enumerate() {
                depth[*node] = base + k + 1;
            }
        }

        let mut rel = vec![1.0; n];
        for (i, id) in ids.iter().enumerate() {
            if i == root_idx {
                continue;
            }
            match reliability.get(id).copied() {
                Some(p) if p > 0.0 && p <= 1.0 => rel[i] = p,
                value => return Err(ModelError::BadReliability { sensor: *id, value }),
            }
        }

        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }

        let mut by_depth: Vec<usize> = (0..n).collect();
        by_depth.sort_by_key(|i| (depth[*i], *i));

        Ok(Self {
            ids,
            root: root_idx,
            parent,
            reliability: rel,
            depth,
            children,
            by_depth,
        })
    }

    /// A chain `root <- 1 <- 2 <- ... <- len` where link `i` has reliability
    /// `reliabilities[i - 1]`. Sensor ids are `0..=len` with root 0.
    pub fn chain(reliabilities: &[f64]) -> Result<Self, ModelError> {
        let parents = (1..=reliabilities.len() as u32)
            .map(|i| (SensorId(i), SensorId(i - 1)))
            .collect();
        let rel = reliabilities
            .iter()
            .enumerate()
            .map(|(i, p)| (SensorId(i as u32 + 1), *p))
            .collect();
        Self::new(SensorId(0), &parents, &rel)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Sensor ids in ascending order; position in this slice is the dense index.
    pub fn sensors(&self) -> &[SensorId] {
        &self.ids
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_id(&self) -> SensorId {
        self.ids[self.root]
    }

    pub fn index_of(&self, id: SensorId) -> Result<usize, ModelError> {
        self.ids
            .binary_search(&id)
            .map_err(|_| ModelError::UnknownSensor(id))
    }

    pub fn id(&self, node: usize) -> SensorId {
        self.ids[node]
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Link reliability from `node` to its parent (1.0 for the root).
    pub fn reliability(&self, node: usize) -> f64 {
        self.reliability[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Dense indices ordered by hop distance, then index.
    pub fn by_depth(&self) -> &[usize] {
        &self.by_depth
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn hop_distance(&self, sensor: SensorId) -> Result<usize, ModelError> {
        Ok(self.depth[self.index_of(sensor)?])
    }

    pub fn path_to_root(&self, sensor: SensorId) -> Result<Vec<SensorId>, ModelError> {
        let mut node = self.index_of(sensor)?;
        let mut path = vec![self.ids[node]];
        while let Some(p) = self.parent[node] {
            path.push(self.ids[p]);
            node = p;
        }
        Ok(path)
    }

    /// Raw parent map, keyed by sensor id.
    pub fn parent_map(&self) -> BTreeMap<SensorId, SensorId> {
        (0..self.len())
            .filter_map(|i| self.parent[i].map(|p| (self.ids[i], self.ids[p])))
            .collect()
    }

    /// Raw reliability table, keyed by sensor id; the root is absent.
    pub fn reliability_map(&self) -> BTreeMap<SensorId, f64> {
        (0..self.len())
            .filter(|i| *i != self.root)
            .map(|i| (self.ids[i], self.reliability[i]))
            .collect()
    }
}

/// Alias matching the operation name used by callers that build raw maps.
pub fn validate_topology(
    parents: &BTreeMap<SensorId, SensorId>,
    reliability: &BTreeMap<SensorId, f64>,
    root: SensorId,
) -> Result<Topology, ModelError> {
    Topology::new(root, parents, reliability)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub source: SensorId,
    /// Timely-throughput requirement.
    pub q: f64,
    /// Generation slot within each interval, 1-based.
    pub tau: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RadioMode {
    #[serde(rename = "full-duplex", alias = "full")]
    FullDuplex,
    #[serde(rename = "half-duplex", alias = "half")]
    HalfDuplex,
}

impl fmt::Display for RadioMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RadioMode::FullDuplex => "full-duplex",
            RadioMode::HalfDuplex => "half-duplex",
        })
    }
}

/// Validated system: topology, flows (sorted by id), and run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    topology: Topology,
    flows: Vec<FlowSpec>,
    // Dense source index per flow, aligned with `flows`.
    sources: Vec<usize>,
    pub slots: usize,
    pub mode: RadioMode,
    pub update_period: u64,
    pub seed: u64,
    pub intervals: u64,
}

impl SystemConfig {
    pub fn new(
        topology: Topology,
        mut flows: Vec<FlowSpec>,
        slots: usize,
        mode: RadioMode,
        update_period: u64,
        seed: u64,
        intervals: u64,
    ) -> Result<Self, ModelError> {
        if slots == 0 {
            return Err(ModelError::BadParameter("T must be at least 1".into()));
        }
        if intervals == 0 {
            return Err(ModelError::BadParameter("K must be at least 1".into()));
        }
        flows.sort_by_key(|f| f.id);
        for w in flows.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateFlow(w[0].id));
            }
        }
        let mut sources = Vec::with_capacity(flows.len());
        for f in &flows {
            let bad = |reason: String| ModelError::BadFlow { flow: f.id, reason };
            let src = topology
                .index_of(f.source)
                .map_err(|_| bad(format!("source {} is not in the topology", f.source)))?;
            if !(0.0..=1.0).contains(&f.q) {
                return Err(bad(format!("requirement q = {} outside [0, 1]", f.q)));
            }
            if f.tau < 1 || f.tau > slots {
                return Err(bad(format!("generation slot tau = {} outside [1, {slots}]", f.tau)));
            }
            sources.push(src);
        }
        Ok(Self {
            topology,
            flows,
            sources,
            slots,
            mode,
            update_period,
            seed,
            intervals,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Flows sorted by ascending id; position is the dense flow index.
    pub fn flows(&self) -> &[FlowSpec] {
        &self.flows
    }

    pub fn source(&self, flow: usize) -> usize {
        self.sources[flow]
    }

    pub fn flow_index(&self, id: FlowId) -> Option<usize> {
        self.flows.binary_search_by_key(&id, |f| f.id).ok()
    }

    /// Copy with each flow's requirement replaced through `q_of`.
    pub fn with_requirements(&self, mut q_of: impl FnMut(&FlowSpec) -> f64) -> Self {
        let mut out = self.clone();
        for f in &mut out.flows {
            f.q = q_of(f);
        }
        out
    }

    /// All flows share one source `n0`, all `tau = 1`, so only the `n0 -> root`
    /// path carries packets.
    pub fn is_path_topology(&self) -> bool {
        match self.flows.first() {
            None => true,
            Some(first) => self
                .flows
                .iter()
                .all(|f| f.source == first.source && f.tau == 1),
        }
    }
}
