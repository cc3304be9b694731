//! Regrouping blocks onto ranks and devices, rank placement and load reports.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::HALO;
use crate::partition::split::{BlockSpec, Decomposition};
use crate::partition::zone::ZoneSpec;

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceClass {
    Cpu,
    Coprocessor,
}

/// A device local to one rank: the `index`-th device of its class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceRef {
    pub class: DeviceClass,
    pub index: usize,
}

impl std::fmt::Display for DeviceRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.class {
            DeviceClass::Cpu => write!(f, "cpu{}", self.index),
            DeviceClass::Coprocessor => write!(f, "cop{}", self.index),
        }
    }
}

/// Machine shape: identical nodes, each with a number of CPU sockets and
/// coprocessors shared evenly by the ranks placed on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeTopology {
    pub nodes: usize,
    pub ranks_per_node: usize,
    pub cpu_devices: usize,
    pub coprocessor_devices: usize,
    pub workers_per_device: usize,
}

impl Default for NodeTopology {
    fn default() -> Self {
        Self {
            nodes: 1,
            ranks_per_node: 1,
            cpu_devices: 1,
            coprocessor_devices: 0,
            workers_per_device: 1,
        }
    }
}

impl NodeTopology {
    pub fn homogeneous(nodes: usize, ranks_per_node: usize) -> Self {
        Self {
            nodes,
            ranks_per_node,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 || self.ranks_per_node == 0 {
            return Err(Error::Config("topology needs at least one node and one rank per node".into()));
        }
        if self.cpu_devices + self.coprocessor_devices == 0 {
            return Err(Error::Config("topology has no devices".into()));
        }
        if self.workers_per_device == 0 {
            return Err(Error::Config("workers per device must be at least 1".into()));
        }
        Ok(())
    }

    /// Ranks placed on each node when `ranks` ranks run.
    pub fn ranks_on_node(&self, ranks: usize) -> usize {
        ranks.div_ceil(self.nodes).max(1)
    }

    /// (cpu devices, coprocessor devices) owned by each rank.
    pub fn devices_per_rank(&self, ranks: usize) -> (usize, usize) {
        let share = self.ranks_on_node(ranks);
        let cpus = (self.cpu_devices / share).max(usize::from(self.coprocessor_devices / share == 0));
        (cpus, self.coprocessor_devices / share)
    }

    pub fn rank_devices(&self, ranks: usize) -> Vec<DeviceRef> {
        let (c, k) = self.devices_per_rank(ranks);
        (0..c)
            .map(|index| DeviceRef { class: DeviceClass::Cpu, index })
            .chain((0..k).map(|index| DeviceRef { class: DeviceClass::Coprocessor, index }))
            .collect()
    }
}

/// The blocks one device works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: usize,
    pub rank: usize,
    pub device: DeviceRef,
    pub blocks: Vec<u32>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub version: u32,
    pub zone: ZoneSpec,
    pub halo: usize,
    pub ranks: usize,
    pub load_ratio: f64,
    pub topology: NodeTopology,
    pub decomposition: Decomposition,
    /// Node hosting each rank.
    pub rank_nodes: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
    pub groups: Vec<Group>,
}

/// Per-device share of cells for a rank holding `cells` cells: CPUs receive
/// weight 1, coprocessors weight `ratio`.
pub fn device_shares(cells: f64, cpus: usize, coprocessors: usize, ratio: f64) -> (f64, f64) {
    let cpu = cells / (cpus as f64 + ratio * coprocessors as f64);
    (cpu, ratio * cpu)
}

/// Face adjacency between blocks, periodic wrap included.
pub fn block_neighbors(zone: &ZoneSpec, dec: &Decomposition) -> Vec<BTreeSet<u32>> {
    let n = dec.counts();
    let mut out = vec![BTreeSet::new(); dec.block_count()];
    for b in dec.blocks() {
        for d in 0..3 {
            for step in [-1i64, 1] {
                let mut c = b.coords.map(|x| x as i64);
                c[d] += step;
                if c[d] < 0 || c[d] >= n[d] as i64 {
                    if !zone.is_periodic(d) || n[d] == 1 {
                        continue;
                    }
                    c[d] = c[d].rem_euclid(n[d] as i64);
                }
                let other = dec.block_id(c.map(|x| x as usize));
                if other != b.id {
                    out[b.id as usize].insert(other);
                    out[other as usize].insert(b.id);
                }
            }
        }
    }
    out
}

fn chunk_blocks(blocks: &[BlockSpec], ranks: usize, min_blocks: usize) -> Vec<Vec<u32>> {
    let total: usize = blocks.iter().map(|b| b.cells.volume()).sum();
    let mut out = Vec::with_capacity(ranks);
    let mut next = 0;
    let mut acc = 0usize;
    for r in 0..ranks {
        let target = total as f64 * (r + 1) as f64 / ranks as f64;
        let mut chunk = Vec::new();
        let reserve = (ranks - r - 1) * min_blocks;
        while next < blocks.len() - reserve {
            let size = blocks[next].cells.volume();
            let must_take = chunk.len() < min_blocks || r + 1 == ranks;
            let before = (target - acc as f64).abs();
            let after = (target - (acc + size) as f64).abs();
            if !must_take && after >= before {
                break;
            }
            chunk.push(blocks[next].id);
            acc += size;
            next += 1;
        }
        out.push(chunk);
    }
    out
}

/// Regroup the blocks of `dec` onto `ranks` ranks and their devices.
pub fn regroup_blocks(
    zone: &ZoneSpec,
    dec: &Decomposition,
    ranks: usize,
    topology: &NodeTopology,
    load_ratio: f64,
) -> Result<PartitionPlan> {
    topology.validate()?;
    dec.validate(zone)?;
    if ranks == 0 {
        return Err(Error::Partition("at least one rank is required".into()));
    }
    if ranks > topology.nodes * topology.ranks_per_node {
        return Err(Error::Partition(format!(
            "{ranks} ranks exceed the capacity of {} nodes x {} ranks",
            topology.nodes, topology.ranks_per_node
        )));
    }
    let devices = topology.rank_devices(ranks);
    let (_, cops) = topology.devices_per_rank(ranks);
    if cops > 0 && !(load_ratio > 0.0) {
        return Err(Error::Partition(format!(
            "load ratio must be positive with coprocessors present, got {load_ratio}"
        )));
    }
    let blocks = dec.blocks();
    let needed = ranks * devices.len();
    if blocks.len() < needed {
        return Err(Error::Partition(format!(
            "{} blocks cannot populate {needed} devices on {ranks} ranks; split the zone finer",
            blocks.len()
        )));
    }
    let neighbors = block_neighbors(zone, dec);
    let mut groups = Vec::new();
    for (rank, chunk) in chunk_blocks(&blocks, ranks, devices.len()).into_iter().enumerate() {
        pack_devices(rank, &chunk, &blocks, &devices, &neighbors, load_ratio, &mut groups);
    }
    let mut plan = PartitionPlan {
        version: PLAN_VERSION,
        zone: zone.clone(),
        halo: HALO,
        ranks,
        load_ratio,
        topology: *topology,
        decomposition: dec.clone(),
        rank_nodes: vec![0; ranks],
        blocks,
        groups,
    };
    plan.rank_nodes = map_ranks_to_nodes(&plan)?.node_of_rank;
    Ok(plan)
}

/// LPT-pack one rank's blocks onto its devices, largest block first.
fn pack_devices(
    rank: usize,
    chunk: &[u32],
    blocks: &[BlockSpec],
    devices: &[DeviceRef],
    neighbors: &[BTreeSet<u32>],
    load_ratio: f64,
    groups: &mut Vec<Group>,
) {
    let weight = |d: &DeviceRef| match d.class {
        DeviceClass::Cpu => 1.0,
        DeviceClass::Coprocessor => load_ratio,
    };
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); devices.len()];
    let mut load = vec![0usize; devices.len()];
    let mut order = chunk.to_vec();
    order.sort_by_key(|&b| (std::cmp::Reverse(blocks[b as usize].cells.volume()), b));
    for b in order {
        let size = blocks[b as usize].cells.volume();
        let mut best: Option<(usize, f64, bool)> = None;
        for (k, dev) in devices.iter().enumerate() {
            let key = (load[k] + size) as f64 / weight(dev);
            let adjacent = members[k].iter().any(|m| neighbors[b as usize].contains(m));
            let better = match best {
                None => true,
                Some((_, bk, badj)) => {
                    let tol = 1e-12 * bk.abs().max(key.abs());
                    key < bk - tol || ((key - bk).abs() <= tol && adjacent && !badj)
                }
            };
            if better {
                best = Some((k, key, adjacent));
            }
        }
        let (k, _, _) = best.expect("at least one device");
        members[k].push(b);
        load[k] += size;
    }
    for (k, dev) in devices.iter().enumerate() {
        let mut blist = members[k].clone();
        blist.sort_unstable();
        groups.push(Group {
            id: groups.len(),
            rank,
            device: *dev,
            blocks: blist,
            cells: load[k],
        });
    }
}

/// Baseline placement without regrouping: block `b` goes to rank
/// `b % ranks`, ignoring adjacency and block sizes.
pub fn round_robin_blocks(
    zone: &ZoneSpec,
    dec: &Decomposition,
    ranks: usize,
    topology: &NodeTopology,
) -> Result<PartitionPlan> {
    let mut plan = regroup_blocks(zone, dec, ranks, topology, 1.0)?;
    let devices = topology.rank_devices(ranks);
    let neighbors = block_neighbors(zone, dec);
    let mut groups = Vec::new();
    for rank in 0..ranks {
        let chunk: Vec<u32> = (0..plan.blocks.len() as u32).filter(|b| *b as usize % ranks == rank).collect();
        pack_devices(rank, &chunk, &plan.blocks, &devices, &neighbors, 1.0, &mut groups);
    }
    plan.groups = groups;
    plan.rank_nodes = map_ranks_to_nodes(&plan)?.node_of_rank;
    Ok(plan)
}

impl PartitionPlan {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: PartitionPlan = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if plan.version != PLAN_VERSION {
            return Err(Error::Parse(format!("unsupported plan version {}", plan.version)));
        }
        plan.validate()?;
        Ok(plan)
    }

    /// Structural checks: exact tiling, single ownership, consistent ids.
    pub fn validate(&self) -> Result<()> {
        self.decomposition.validate(&self.zone)?;
        if self.blocks != self.decomposition.blocks() {
            return Err(Error::Partition("block list does not match the decomposition".into()));
        }
        let mut seen = vec![false; self.blocks.len()];
        for g in &self.groups {
            if g.rank >= self.ranks {
                return Err(Error::Partition(format!("group {} on missing rank {}", g.id, g.rank)));
            }
            for &b in &g.blocks {
                let slot = seen
                    .get_mut(b as usize)
                    .ok_or_else(|| Error::Partition(format!("group {} lists unknown block {b}", g.id)))?;
                if *slot {
                    return Err(Error::Partition(format!("block {b} is in two groups")));
                }
                *slot = true;
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(Error::Partition(format!("block {b} is not assigned")));
        }
        if self.rank_nodes.len() != self.ranks {
            return Err(Error::Partition("rank placement does not cover every rank".into()));
        }
        Ok(())
    }

    /// (rank, device) owning each block.
    pub fn block_owners(&self) -> Vec<(usize, DeviceRef)> {
        let mut out = vec![(0, DeviceRef { class: DeviceClass::Cpu, index: 0 }); self.blocks.len()];
        for g in &self.groups {
            for &b in &g.blocks {
                out[b as usize] = (g.rank, g.device);
            }
        }
        out
    }

    pub fn blocks_of_rank(&self, rank: usize) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .groups
            .iter()
            .filter(|g| g.rank == rank)
            .flat_map(|g| g.blocks.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    pub fn total_cells(&self) -> usize {
        self.zone.total_cells()
    }

    /// Unordered rank pairs that own face-adjacent blocks.
    pub fn rank_edges(&self) -> BTreeSet<(usize, usize)> {
        let owners = self.block_owners();
        let mut edges = BTreeSet::new();
        for (b, nb) in block_neighbors(&self.zone, &self.decomposition).iter().enumerate() {
            for &o in nb {
                let (r1, r2) = (owners[b].0, owners[o as usize].0);
                if r1 != r2 {
                    edges.insert((r1.min(r2), r1.max(r2)));
                }
            }
        }
        edges
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPlacement {
    pub node_of_rank: Vec<usize>,
    pub cross_node_edges: usize,
}

fn cross_edges(edges: &BTreeSet<(usize, usize)>, node: &[usize]) -> usize {
    edges.iter().filter(|(a, b)| node[*a] != node[*b]).count()
}

/// Place `ranks` ranks on `nodes` nodes of `per_node` slots, keeping
/// adjacent ranks together. Candidates are the contiguous fill, a
/// breadth-first fill from the least connected rank and round-robin; the one
/// with the fewest cross-node edges wins, earlier candidates on ties.
pub fn map_rank_graph(
    ranks: usize,
    edges: &BTreeSet<(usize, usize)>,
    nodes: usize,
    per_node: usize,
) -> Result<RankPlacement> {
    if ranks > nodes * per_node {
        return Err(Error::Partition(format!(
            "{ranks} ranks exceed {nodes} nodes x {per_node} slots"
        )));
    }
    let fill = |order: &[usize]| {
        let used = nodes.min(ranks.div_ceil(per_node)).max(1);
        let per = ranks.div_ceil(used);
        let mut node = vec![0; ranks];
        for (pos, &r) in order.iter().enumerate() {
            node[r] = pos / per;
        }
        node
    };
    let contiguous: Vec<usize> = (0..ranks).collect();
    let mut adj = vec![Vec::new(); ranks];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut bfs = Vec::with_capacity(ranks);
    let mut seen = vec![false; ranks];
    while bfs.len() < ranks {
        let start = (0..ranks)
            .filter(|&r| !seen[r])
            .min_by_key(|&r| (adj[r].len(), r))
            .expect("unvisited rank");
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(r) = queue.pop_front() {
            bfs.push(r);
            let mut next: Vec<usize> = adj[r].iter().copied().filter(|&o| !seen[o]).collect();
            next.sort_unstable();
            for o in next {
                if !seen[o] {
                    seen[o] = true;
                    queue.push_back(o);
                }
            }
        }
    }
    let round_robin: Vec<usize> = (0..ranks).map(|r| r % nodes).collect();
    let candidates = [fill(&contiguous), fill(&bfs), round_robin];
    let best = candidates
        .into_iter()
        .min_by_key(|c| cross_edges(edges, c))
        .expect("candidates");
    Ok(RankPlacement {
        cross_node_edges: cross_edges(edges, &best),
        node_of_rank: best,
    })
}

pub fn map_ranks_to_nodes(plan: &PartitionPlan) -> Result<RankPlacement> {
    map_rank_graph(
        plan.ranks,
        &plan.rank_edges(),
        plan.topology.nodes,
        plan.topology.ranks_per_node,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceLoad {
    pub rank: usize,
    pub device: DeviceRef,
    pub cells: usize,
    pub load: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceReport {
    pub devices: Vec<DeviceLoad>,
    pub max: f64,
    pub mean: f64,
    /// max / mean, at least 1.
    pub imbalance: f64,
}

pub fn imbalance_from_loads(devices: Vec<DeviceLoad>) -> ImbalanceReport {
    let max = devices.iter().map(|d| d.load).fold(0.0, f64::max);
    let mean = if devices.is_empty() {
        0.0
    } else {
        devices.iter().map(|d| d.load).sum::<f64>() / devices.len() as f64
    };
    let imbalance = if mean > 0.0 { (max / mean).max(1.0) } else { 1.0 };
    ImbalanceReport {
        devices,
        max,
        mean,
        imbalance,
    }
}

/// Predicted per-device load `cells / relative throughput`.
pub fn imbalance_report(plan: &PartitionPlan, throughput: impl Fn(DeviceClass) -> f64) -> ImbalanceReport {
    imbalance_from_loads(
        plan.groups
            .iter()
            .map(|g| DeviceLoad {
                rank: g.rank,
                device: g.device,
                cells: g.cells,
                load: g.cells as f64 / throughput(g.device.class),
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::split::{split_zone, SplitTarget};
    use crate::partition::zone::{Boundary, Faces};

    fn zone(cells: [usize; 3], b: Boundary) -> ZoneSpec {
        ZoneSpec {
            cells,
            origin: [0.0; 3],
            length: [1.0; 3],
            faces: Faces::all(b),
        }
    }

    #[test]
    fn five_blocks_on_two_cpus_and_three_coprocessors() {
        let z = zone([50, 10, 10], Boundary::Extrapolation);
        let dec = split_zone(&z, SplitTarget::Blocks(5)).unwrap();
        let topo = NodeTopology {
            cpu_devices: 2,
            coprocessor_devices: 3,
            ..Default::default()
        };
        let plan = regroup_blocks(&z, &dec, 1, &topo, 1.0).unwrap();
        assert_eq!(plan.groups.len(), 5);
        let cpu: Vec<_> = plan.groups.iter().filter(|g| g.device.class == DeviceClass::Cpu).collect();
        let cop: Vec<_> = plan.groups.iter().filter(|g| g.device.class == DeviceClass::Coprocessor).collect();
        assert_eq!((cpu.len(), cop.len()), (2, 3));
        assert!(plan.groups.iter().all(|g| g.blocks.len() == 1));
        plan.validate().unwrap();
    }

    #[test]
    fn shares_follow_the_ratio() {
        let (cpu, cop) = device_shares(60.8e6, 2, 3, 0.6);
        assert!((cpu - 16.0e6).abs() < 1e-6);
        assert!((cop - 9.6e6).abs() < 1e-6);
    }

    #[test]
    fn homogeneous_topology_degenerates() {
        let z = zone([32, 32, 32], Boundary::Periodic);
        let dec = split_zone(&z, SplitTarget::Blocks(8)).unwrap();
        let topo = NodeTopology::homogeneous(8, 1);
        let plan = regroup_blocks(&z, &dec, 8, &topo, 0.0).unwrap();
        assert!(plan.groups.iter().all(|g| g.device.class == DeviceClass::Cpu && g.blocks.len() == 1));
        assert_eq!(plan.blocks_of_rank(3), vec![3]);
    }

    #[test]
    fn too_few_blocks_is_an_error() {
        let z = zone([8, 8, 8], Boundary::Periodic);
        let dec = split_zone(&z, SplitTarget::Blocks(2)).unwrap();
        let topo = NodeTopology::homogeneous(4, 1);
        let err = regroup_blocks(&z, &dec, 4, &topo, 1.0).unwrap_err();
        assert!(err.to_string().contains("finer"));
    }

    #[test]
    fn chain_mapping() {
        let edges: BTreeSet<_> = (0..7).map(|r| (r, r + 1)).collect();
        let p = map_rank_graph(8, &edges, 4, 2).unwrap();
        assert_eq!(p.node_of_rank, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(p.cross_node_edges, 3);
        let p = map_rank_graph(8, &edges, 1, 8).unwrap();
        assert_eq!(p.cross_node_edges, 0);
        assert!(map_rank_graph(9, &edges, 4, 2).is_err());
    }

    #[test]
    fn imbalance_arithmetic() {
        let mk = |load: f64| DeviceLoad {
            rank: 0,
            device: DeviceRef { class: DeviceClass::Cpu, index: 0 },
            cells: 0,
            load,
        };
        let r = imbalance_from_loads(vec![mk(2.0), mk(1.0), mk(1.0), mk(1.0)]);
        assert!((r.imbalance - 1.6).abs() < 1e-15);
        let r = imbalance_from_loads(vec![mk(1.0); 4]);
        assert_eq!(r.imbalance, 1.0);
    }

    #[test]
    fn plan_round_trips_through_text() {
        let z = zone([16, 8, 8], Boundary::Periodic);
        let dec = split_zone(&z, SplitTarget::Blocks(4)).unwrap();
        let plan = regroup_blocks(&z, &dec, 2, &NodeTopology::homogeneous(2, 1), 1.0).unwrap();
        let text = plan.to_toml().unwrap();
        assert_eq!(PartitionPlan::from_toml(&text).unwrap(), plan);
    }
}
