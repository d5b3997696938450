//! Community detection on one snapshot.
//!
//! Communities are found with weighted-modularity maximization (greedy local
//! moves plus graph coarsening). Each retained community is annotated with
//! the social position of its members — weighted PageRank restricted to the
//! community-induced subgraph — and with its key nodes, the members whose
//! social position is not exceeded by any neighbor inside the community.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::{EntityRegistry, NodeId, Snapshot};

const PAGERANK_DAMPING: f64 = 0.85;
const PAGERANK_TOL: f64 = 1e-10;
const PAGERANK_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub seed: u64,
    pub resolution: f64,
    /// Groups smaller than this are dropped from the partition output (the
    /// nodes still count toward snapshot-level statistics downstream).
    pub min_community_size: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { seed: 0, resolution: 1.0, min_community_size: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Community {
    pub members: BTreeSet<NodeId>,
    pub social_position: BTreeMap<NodeId, f64>,
    pub key_nodes: BTreeSet<NodeId>,
}

impl Community {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Community with uniform social position (every member a key node), for
    /// synthetic fixtures where only membership matters.
    pub fn with_uniform_position(members: BTreeSet<NodeId>) -> Community {
        let n = members.len().max(1) as f64;
        let social_position = members.iter().map(|&m| (m, 1.0 / n)).collect();
        Community { key_nodes: members.clone(), members, social_position }
    }

    /// Total social position carried by the members in `subset`.
    pub fn position_mass(&self, subset: impl IntoIterator<Item = NodeId>) -> f64 {
        subset.into_iter().filter_map(|n| self.social_position.get(&n)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    /// Retained communities, ordered by their smallest member id.
    pub communities: Vec<Community>,
    /// Every group found by the optimizer, including sub-threshold ones.
    pub raw_groups: Vec<BTreeSet<NodeId>>,
    /// Weighted modularity of the full (unfiltered) partition.
    pub modularity: f64,
}

/// Weighted modularity of a node grouping: for each group,
/// `W_in / m - (K / 2m)^2`, summed, where `W_in` is the intra-group edge
/// weight, `K` the total weighted degree of the group, and `m` the total edge
/// weight of the snapshot.
pub fn modularity(snapshot: &Snapshot, groups: &[BTreeSet<NodeId>]) -> f64 {
    let m = snapshot.total_edge_weight();
    if m <= 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for group in groups {
        let mut w_in = 0.0;
        let mut k_tot = 0.0;
        for &u in group {
            for (v, w) in snapshot.neighbors(u) {
                if u < v && group.contains(&v) {
                    w_in += w;
                }
            }
            k_tot += snapshot.weighted_degree(u);
        }
        q += w_in / m - (k_tot / (2.0 * m)).powi(2);
    }
    q
}

/// Working graph for the optimizer. Coarsened levels carry self-loops that
/// hold the weight folded inside a supernode.
struct WorkGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_weight: Vec<f64>,
    degree: Vec<f64>,
    m: f64,
}

impl WorkGraph {
    fn from_snapshot(snapshot: &Snapshot, nodes: &[NodeId]) -> Self {
        let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for (i, &n) in nodes.iter().enumerate() {
            for (v, w) in snapshot.neighbors(n) {
                adj[i].push((pos[&v], w));
            }
        }
        let degree: Vec<f64> = adj.iter().map(|n| n.iter().map(|&(_, w)| w).sum()).collect();
        WorkGraph { adj, self_weight: vec![0.0; nodes.len()], degree, m: snapshot.total_edge_weight() }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Collapses each community into one supernode. `labels` must be dense
    /// `0..k`.
    fn aggregate(&self, labels: &[usize], k: usize) -> WorkGraph {
        let mut self_weight = vec![0.0; k];
        let mut between: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for u in 0..self.len() {
            self_weight[labels[u]] += self.self_weight[u];
            for &(v, w) in &self.adj[u] {
                if v <= u {
                    continue; // each undirected edge once
                }
                let (cu, cv) = (labels[u], labels[v]);
                if cu == cv {
                    self_weight[cu] += w;
                } else {
                    let key = if cu < cv { (cu, cv) } else { (cv, cu) };
                    *between.entry(key).or_insert(0.0) += w;
                }
            }
        }
        let mut adj = vec![Vec::new(); k];
        for (&(c, d), &w) in &between {
            adj[c].push((d, w));
            adj[d].push((c, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(v, _)| v);
        }
        let degree: Vec<f64> =
            (0..k).map(|c| adj[c].iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * self_weight[c]).collect();
        WorkGraph { adj, self_weight, degree, m: self.m }
    }
}

/// One local-move phase: sweeps nodes in a seeded random order, moving each to
/// the strictly best community among its neighbors' communities, a fresh
/// singleton, or staying put (ties keep the current community). Returns the
/// assignment and whether any move happened.
fn one_level(
    g: &WorkGraph,
    init: &[usize],
    rng: &mut ChaCha8Rng,
    resolution: f64,
) -> (Vec<usize>, bool) {
    let n = g.len();
    // Re-map the initial labels to dense ids 0..k in first-appearance order.
    let mut dense: HashMap<usize, usize> = HashMap::new();
    let mut comm = vec![0usize; n];
    for u in 0..n {
        let next = dense.len();
        comm[u] = *dense.entry(init[u]).or_insert(next);
    }
    let k0 = dense.len();

    let mut sigma_tot = vec![0.0f64; n];
    let mut count = vec![0usize; n];
    for u in 0..n {
        sigma_tot[comm[u]] += g.degree[u];
        count[comm[u]] += 1;
    }
    // Unused community ids, popped when a node is isolated into a fresh
    // singleton; lowest ids come back first.
    let mut free: Vec<usize> = (k0..n).rev().collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let two_m_sq = 2.0 * g.m * g.m;
    let mut moved_any = false;
    // Every accepted move strictly increases modularity, so the sweep loop
    // terminates; the cap only guards against float pathologies.
    for _sweep in 0..1000 {
        let mut moved = 0usize;
        for &u in &order {
            let cur = comm[u];
            let mut neigh_w: Vec<(usize, f64)> = {
                let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
                for &(v, w) in &g.adj[u] {
                    *acc.entry(comm[v]).or_insert(0.0) += w;
                }
                acc.into_iter().collect()
            };
            neigh_w.sort_by_key(|&(c, _)| c);

            sigma_tot[cur] -= g.degree[u];
            count[cur] -= 1;
            let w_cur = neigh_w
                .iter()
                .find(|&&(c, _)| c == cur)
                .map_or(0.0, |&(_, w)| w);
            let gain_of = |w_to: f64, sigma: f64| -> f64 {
                w_to / g.m - resolution * sigma * g.degree[u] / two_m_sq
            };
            let mut best = cur;
            let mut best_gain = gain_of(w_cur, sigma_tot[cur]);
            for &(c, w) in &neigh_w {
                if c == cur {
                    continue;
                }
                let gain = gain_of(w, sigma_tot[c]);
                if gain > best_gain {
                    best = c;
                    best_gain = gain;
                }
            }
            // A fresh singleton has no edges to u and no degree mass, so its
            // gain is exactly 0. `free` is empty only while every community
            // is a singleton, in which case isolation is meaningless anyway.
            if 0.0 > best_gain && !free.is_empty() {
                best = *free.last().unwrap();
                best_gain = 0.0;
            }
            if best != cur {
                if count[best] == 0 {
                    // Claimed either from the free list or a just-vacated id.
                    if free.last() == Some(&best) {
                        free.pop();
                    }
                }
                moved += 1;
            }
            comm[u] = best;
            sigma_tot[best] += g.degree[u];
            count[best] += 1;
            if count[cur] == 0 && cur != best {
                free.push(cur);
            }
        }
        if moved == 0 {
            break;
        }
        moved_any = true;
    }
    (comm, moved_any)
}

fn dense_labels(comm: &[usize]) -> (Vec<usize>, usize) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut out = vec![0usize; comm.len()];
    for (u, &c) in comm.iter().enumerate() {
        let next = map.len();
        out[u] = *map.entry(c).or_insert(next);
    }
    (out, map.len())
}

/// Greedy modularity optimization: local moves, coarsening, repeat; then a
/// final local-move phase at single-node granularity so that no single-node
/// relocation can improve modularity. Returns groups ordered by smallest
/// member id.
pub fn louvain(snapshot: &Snapshot, config: &DetectConfig) -> Result<Vec<BTreeSet<NodeId>>> {
    if snapshot.is_empty() {
        return Err(Error::EmptySnapshot);
    }
    if config.resolution <= 0.0 || config.resolution.is_nan() {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let nodes: Vec<NodeId> = snapshot.nodes().collect();
    let flat = WorkGraph::from_snapshot(snapshot, &nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // node_comm[i] is the community of nodes[i] at the current level.
    let mut node_comm: Vec<usize> = (0..nodes.len()).collect();
    let mut work = WorkGraph::from_snapshot(snapshot, &nodes);
    // super_of[i]: supernode of nodes[i] in `work`.
    let mut super_of: Vec<usize> = (0..nodes.len()).collect();
    loop {
        let init: Vec<usize> = (0..work.len()).collect();
        let (comm, moved) = one_level(&work, &init, &mut rng, config.resolution);
        if !moved {
            break;
        }
        let (labels, k) = dense_labels(&comm);
        for i in 0..nodes.len() {
            node_comm[i] = labels[super_of[i]];
        }
        if k == work.len() {
            break;
        }
        work = work.aggregate(&labels, k);
        super_of.copy_from_slice(&node_comm);
    }
    // Final sweep at single-node granularity; only ever improves modularity.
    let (refined, _) = one_level(&flat, &node_comm, &mut rng, config.resolution);

    let mut by_comm: BTreeMap<usize, BTreeSet<NodeId>> = BTreeMap::new();
    for (i, &c) in refined.iter().enumerate() {
        by_comm.entry(c).or_default().insert(nodes[i]);
    }
    let mut groups: Vec<BTreeSet<NodeId>> = by_comm.into_values().collect();
    groups.sort_by_key(|g| *g.iter().next().unwrap());
    Ok(groups)
}

/// Weighted PageRank restricted to the community-induced subgraph: damping
/// 0.85, uniform start, transition probability proportional to intra-community
/// edge weight, members without intra-community edges redistribute uniformly.
/// Scores are normalized to sum to one.
pub fn social_position(snapshot: &Snapshot, members: &BTreeSet<NodeId>) -> BTreeMap<NodeId, f64> {
    let nodes: Vec<NodeId> = members.iter().copied().collect();
    let n = nodes.len();
    if n == 0 {
        return BTreeMap::new();
    }
    let pos: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, &u) in nodes.iter().enumerate() {
        for (v, w) in snapshot.neighbors(u) {
            if let Some(&j) = pos.get(&v) {
                adj[i].push((j, w));
            }
        }
    }
    let out_weight: Vec<f64> = adj.iter().map(|l| l.iter().map(|&(_, w)| w).sum()).collect();

    let mut x = vec![1.0 / n as f64; n];
    let mut next = vec![0.0f64; n];
    for _ in 0..PAGERANK_MAX_ITERS {
        let dangling: f64 = (0..n).filter(|&j| out_weight[j] == 0.0).map(|j| x[j]).sum();
        let base = (1.0 - PAGERANK_DAMPING) / n as f64 + PAGERANK_DAMPING * dangling / n as f64;
        next.iter_mut().for_each(|v| *v = base);
        for j in 0..n {
            if out_weight[j] == 0.0 {
                continue;
            }
            let share = PAGERANK_DAMPING * x[j] / out_weight[j];
            for &(i, w) in &adj[j] {
                next[i] += share * w;
            }
        }
        let l1: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if l1 < PAGERANK_TOL {
            break;
        }
    }
    let total: f64 = x.iter().sum();
    nodes.iter().zip(&x).map(|(&u, &s)| (u, s / total)).collect()
}

/// Members whose social position is not exceeded by any intra-community
/// neighbor. Always non-empty for a non-empty community; equal-scoring local
/// maxima all qualify.
pub fn key_nodes(
    snapshot: &Snapshot,
    members: &BTreeSet<NodeId>,
    position: &BTreeMap<NodeId, f64>,
) -> BTreeSet<NodeId> {
    members
        .iter()
        .copied()
        .filter(|&u| {
            snapshot
                .neighbors(u)
                .filter(|(v, _)| members.contains(v))
                .all(|(v, _)| position[&v] <= position[&u])
        })
        .collect()
}

/// Full per-snapshot detection: optimize, filter out groups below the size
/// threshold, annotate the rest with social positions and key nodes.
pub fn detect(snapshot: &Snapshot, config: &DetectConfig) -> Result<Partition> {
    let raw_groups = louvain(snapshot, config)?;
    let q = modularity(snapshot, &raw_groups);
    let communities = raw_groups
        .iter()
        .filter(|g| g.len() >= config.min_community_size)
        .map(|g| {
            let sp = social_position(snapshot, g);
            let keys = key_nodes(snapshot, g, &sp);
            Community { members: g.clone(), social_position: sp, key_nodes: keys }
        })
        .collect();
    Ok(Partition { communities, raw_groups, modularity: q })
}

/// Stable external id for community `ordinal` of snapshot `snapshot_index`.
pub fn community_id(snapshot_index: usize, ordinal: usize) -> String {
    format!("s{snapshot_index:04}_c{ordinal:03}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityRecord {
    pub id: String,
    pub members: Vec<String>,
    pub social_position: BTreeMap<String, f64>,
    pub key_nodes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionFile {
    pub snapshot_index: usize,
    pub instant: String,
    pub modularity: f64,
    pub n_groups_total: usize,
    pub config: DetectConfig,
    pub communities: Vec<CommunityRecord>,
}

pub fn partition_file(
    partition: &Partition,
    snapshot_index: usize,
    instant: &str,
    config: &DetectConfig,
    registry: &EntityRegistry,
) -> PartitionFile {
    let communities = partition
        .communities
        .iter()
        .enumerate()
        .map(|(ordinal, c)| CommunityRecord {
            id: community_id(snapshot_index, ordinal),
            members: c.members.iter().map(|&n| registry.id(n).to_string()).collect(),
            social_position: c
                .social_position
                .iter()
                .map(|(&n, &s)| (registry.id(n).to_string(), s))
                .collect(),
            key_nodes: c.key_nodes.iter().map(|&n| registry.id(n).to_string()).collect(),
        })
        .collect();
    PartitionFile {
        snapshot_index,
        instant: instant.to_string(),
        modularity: partition.modularity,
        n_groups_total: partition.raw_groups.len(),
        config: *config,
        communities,
    }
}

pub fn write_partition_file(file: &PartitionFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_partition_file(path: &Path) -> Result<PartitionFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// Rehydrates in-memory communities from a partition file.
pub fn communities_from_file(file: &PartitionFile, registry: &EntityRegistry) -> Result<Vec<Community>> {
    file.communities
        .iter()
        .map(|rec| {
            let resolve = |id: &str| -> Result<NodeId> {
                registry
                    .resolve(id)
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("unknown entity id `{id}` in community {}", rec.id))
                    })
            };
            let members: BTreeSet<NodeId> =
                rec.members.iter().map(|m| resolve(m)).collect::<Result<_>>()?;
            let social_position: BTreeMap<NodeId, f64> = rec
                .social_position
                .iter()
                .map(|(m, &s)| resolve(m).map(|n| (n, s)))
                .collect::<Result<_>>()?;
            let key_nodes: BTreeSet<NodeId> =
                rec.key_nodes.iter().map(|m| resolve(m)).collect::<Result<_>>()?;
            Ok(Community { members, social_position, key_nodes })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn snap(edges: &[(NodeId, NodeId, f64)]) -> Snapshot {
        let instant = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        Snapshot::from_edges(instant, edges.iter().copied()).unwrap()
    }

    fn groups(defs: &[&[NodeId]]) -> Vec<BTreeSet<NodeId>> {
        defs.iter().map(|g| g.iter().copied().collect()).collect()
    }

    fn triangle(base: NodeId) -> Vec<(NodeId, NodeId, f64)> {
        vec![(base, base + 1, 1.0), (base + 1, base + 2, 1.0), (base, base + 2, 1.0)]
    }

    #[test]
    fn modularity_known_values() {
        let tri = snap(&triangle(0));
        // All nodes in one community: W_in/m = 1, (K/2m)^2 = 1.
        assert!((modularity(&tri, &groups(&[&[0, 1, 2]]))).abs() < 1e-15);
        // Singletons: -(sum of (k/2m)^2) = -3 * (2/6)^2 = -1/3.
        let q = modularity(&tri, &groups(&[&[0], &[1], &[2]]));
        assert!((q + 1.0 / 3.0).abs() < 1e-15);
        // Two disjoint triangles split by component: 2 * (3/6 - (6/12)^2) = 0.5.
        let two: Vec<_> = triangle(0).into_iter().chain(triangle(10)).collect();
        let q2 = modularity(&snap(&two), &groups(&[&[0, 1, 2], &[10, 11, 12]]));
        assert!((q2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn louvain_separates_cliques_joined_by_a_bridge() {
        let mut edges = Vec::new();
        for c in [0u32, 10] {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    edges.push((c + i, c + j, 1.0));
                }
            }
        }
        edges.push((0, 10, 1.0));
        let s = snap(&edges);
        for seed in 0..5 {
            let config = DetectConfig { seed, ..DetectConfig::default() };
            let found = louvain(&s, &config).unwrap();
            assert_eq!(found, groups(&[&[0, 1, 2, 3], &[10, 11, 12, 13]]), "seed {seed}");
        }
    }

    #[test]
    fn louvain_is_deterministic_and_beats_singletons() {
        let edges = vec![
            (0, 1, 2.0),
            (1, 2, 1.0),
            (0, 2, 0.5),
            (2, 3, 0.1),
            (3, 4, 3.0),
            (4, 5, 1.5),
            (3, 5, 1.0),
        ];
        let s = snap(&edges);
        let config = DetectConfig { seed: 7, ..DetectConfig::default() };
        let a = louvain(&s, &config).unwrap();
        let b = louvain(&s, &config).unwrap();
        assert_eq!(a, b);
        let singletons: Vec<BTreeSet<NodeId>> = s.nodes().map(|n| [n].into_iter().collect()).collect();
        assert!(modularity(&s, &a) >= modularity(&s, &singletons));
    }

    #[test]
    fn louvain_rejects_bad_inputs() {
        let s = snap(&[(0, 1, 1.0)]);
        let empty = Snapshot::from_edges(s.instant, std::iter::empty()).unwrap();
        assert!(matches!(louvain(&empty, &DetectConfig::default()), Err(Error::EmptySnapshot)));
        let config = DetectConfig { resolution: 0.0, ..DetectConfig::default() };
        assert!(louvain(&s, &config).is_err());
    }

    #[test]
    fn social_position_uniform_on_symmetric_graphs() {
        let s = snap(&triangle(0));
        let members: BTreeSet<NodeId> = [0, 1, 2].into_iter().collect();
        let sp = social_position(&s, &members);
        let total: f64 = sp.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for &v in sp.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn social_position_favors_heavily_connected_members() {
        // Star: hub 0 tied to 1,2,3; the hub receives every member's full vote.
        let s = snap(&[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]);
        let members: BTreeSet<NodeId> = [0, 1, 2, 3].into_iter().collect();
        let sp = social_position(&s, &members);
        assert!(sp[&0] > sp[&1]);
        assert!((sp[&1] - sp[&2]).abs() < 1e-12);
        // Only intra-community edges count: stranger node 9 must not matter.
        let with_stranger = snap(&[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 9, 50.0)]);
        let sp2 = social_position(&with_stranger, &members);
        for (&u, &v) in &sp {
            assert!((sp2[&u] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn key_nodes_are_local_position_maxima() {
        // Two hubs joined by an edge, each with 3 leaves; hub 0's spokes are
        // heavier, so it outranks hub 10 and is the only key node.
        let edges = vec![
            (0, 1, 2.0),
            (0, 2, 2.0),
            (0, 3, 2.0),
            (10, 11, 1.0),
            (10, 12, 1.0),
            (10, 13, 1.0),
            (0, 10, 1.0),
        ];
        let s = snap(&edges);
        let members: BTreeSet<NodeId> = [0, 1, 2, 3, 10, 11, 12, 13].into_iter().collect();
        let sp = social_position(&s, &members);
        assert!(sp[&0] > sp[&10]);
        let keys = key_nodes(&s, &members, &sp);
        assert_eq!(keys, [0].into_iter().collect());
    }

    #[test]
    fn key_nodes_keep_ties_and_survive_uniform_scaling() {
        let s = snap(&triangle(0));
        let members: BTreeSet<NodeId> = [0, 1, 2].into_iter().collect();
        let sp = social_position(&s, &members);
        // Perfect symmetry: everyone is a local maximum.
        assert_eq!(key_nodes(&s, &members, &sp).len(), 3);

        let edges = vec![(0, 1, 2.0), (0, 2, 2.0), (0, 3, 2.0), (1, 2, 0.5)];
        let base = snap(&edges);
        let scaled = snap(&edges.iter().map(|&(u, v, w)| (u, v, w * 4.0)).collect::<Vec<_>>());
        let members: BTreeSet<NodeId> = [0, 1, 2, 3].into_iter().collect();
        let sp_base = social_position(&base, &members);
        let sp_scaled = social_position(&scaled, &members);
        // Power-of-two scaling leaves the transition ratios bit-identical.
        assert_eq!(sp_base, sp_scaled);
        assert_eq!(key_nodes(&base, &members, &sp_base), key_nodes(&scaled, &members, &sp_scaled));
    }

    #[test]
    fn detect_filters_small_groups_and_annotates_the_rest() {
        // One 4-clique and one disconnected pair; the pair is below threshold.
        let mut edges = Vec::new();
        for i in 0..4u32 {
            for j in (i + 1)..4 {
                edges.push((i, j, 1.0));
            }
        }
        edges.push((20, 21, 1.0));
        let s = snap(&edges);
        let partition = detect(&s, &DetectConfig::default()).unwrap();
        assert_eq!(partition.raw_groups.len(), 2);
        assert_eq!(partition.communities.len(), 1);
        let c = &partition.communities[0];
        assert_eq!(c.size(), 4);
        assert!(!c.key_nodes.is_empty());
        let mass: f64 = c.social_position.values().sum();
        assert!((mass - 1.0).abs() < 1e-9);
    }

    #[test]
    fn partition_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let nodes_path = dir.path().join("nodes.csv");
        std::fs::write(&nodes_path, "id,type\nn0,service\nn1,service\nn2,service\nn3,stakeholder\n")
            .unwrap();
        let registry = crate::snapshot::load_entities(&nodes_path).unwrap();
        let mut edges = Vec::new();
        for i in 0..4u32 {
            for j in (i + 1)..4 {
                edges.push((i, j, 1.0));
            }
        }
        let s = snap(&edges);
        let config = DetectConfig::default();
        let partition = detect(&s, &config).unwrap();
        let file = partition_file(&partition, 3, "2020-01-01T00:00:00Z", &config, &registry);
        assert_eq!(file.communities[0].id, "s0003_c000");
        let path = dir.path().join("communities.json");
        write_partition_file(&file, &path).unwrap();
        let back = read_partition_file(&path).unwrap();
        let communities = communities_from_file(&back, &registry).unwrap();
        assert_eq!(communities, partition.communities);
    }
}
