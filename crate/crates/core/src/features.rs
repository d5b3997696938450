//! Per-community feature extraction and training-sequence assembly.
//!
//! Each retained community is described by 15 values. Snapshot-level
//! quantities (clustering coefficient, closeness, weighted degree) are
//! computed on the whole snapshot — a community member keeps its ecosystem-
//! wide centrality — while density, cohesion, activity, and the node-kind
//! ratios are community-local. A training sample concatenates the feature
//! vectors of one lineage at three consecutive snapshots and is labeled with
//! the community's next evolution event.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::community::{community_id, Community};
use crate::error::{Error, Result};
use crate::snapshot::{EntityKind, EntityRegistry, NodeId, Snapshot};
use crate::tracker::{outgoing_event, EvolutionEvent, EvolutionRecord, Lineages};

pub const N_FEATURES: usize = 15;
pub const SEQUENCE_LEN: usize = 3;
pub const N_SEQUENCE_VALUES: usize = N_FEATURES * SEQUENCE_LEN;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "size",
    "density",
    "clustering",
    "avg_closeness",
    "degree",
    "leadership",
    "cohesion",
    "n_key_nodes",
    "activity_max",
    "activity_sum",
    "activity_mean",
    "pct_service",
    "pct_stakeholder",
    "k_degree",
    "k_avg_closeness",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Cohesion value used when a community has no external connections but
    /// positive internal weight (the ratio diverges).
    pub cohesion_cap: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { cohesion_cap: 1e6 }
    }
}

/// Snapshot-level centralities, computed once per snapshot and shared by
/// every community extraction on it.
#[derive(Debug, Clone, Default)]
pub struct SnapshotMetrics {
    pub clustering: BTreeMap<NodeId, f64>,
    pub closeness: BTreeMap<NodeId, f64>,
    pub weighted_degree: BTreeMap<NodeId, f64>,
}

/// Unweighted local clustering coefficient, unweighted-hop closeness with
/// component scaling (unreachable nodes excluded), and weighted degree, for
/// every snapshot node.
pub fn snapshot_metrics(snapshot: &Snapshot) -> SnapshotMetrics {
    let nodes: Vec<NodeId> = snapshot.nodes().collect();
    let n = nodes.len();
    let pos: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&u| snapshot.neighbors(u).map(|(v, _)| pos[&v]).collect())
        .collect();

    let mut metrics = SnapshotMetrics::default();
    for (i, &u) in nodes.iter().enumerate() {
        metrics.weighted_degree.insert(u, snapshot.weighted_degree(u));

        // Triangle ratio over the node's neighborhood.
        let deg = adj[i].len();
        let cc = if deg < 2 {
            0.0
        } else {
            let mut links = 0usize;
            for (a_idx, &a) in adj[i].iter().enumerate() {
                for &b in &adj[i][a_idx + 1..] {
                    // adjacency lists are sorted by construction
                    if adj[a].binary_search(&b).is_ok() {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (deg as f64 * (deg - 1) as f64)
        };
        metrics.clustering.insert(u, cc);

        // BFS hop distances within u's component.
        let mut dist = vec![usize::MAX; n];
        dist[i] = 0;
        let mut queue = std::collections::VecDeque::from([i]);
        let mut reach = 1usize;
        let mut dist_sum = 0usize;
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    reach += 1;
                    dist_sum += dist[y];
                    queue.push_back(y);
                }
            }
        }
        let cl = if reach < 2 || n < 2 {
            0.0
        } else {
            let r = (reach - 1) as f64;
            r * r / ((n - 1) as f64 * dist_sum as f64)
        };
        metrics.closeness.insert(u, cl);
    }
    metrics
}

/// The 15 community features, in [`FEATURE_NAMES`] order, using precomputed
/// snapshot metrics.
pub fn extract_features_with(
    community: &Community,
    snapshot: &Snapshot,
    metrics: &SnapshotMetrics,
    registry: &EntityRegistry,
    config: &FeatureConfig,
) -> FeatureVector {
    let members = &community.members;
    let n = members.len();
    debug_assert!(n >= 1, "empty community");
    let nf = n as f64;

    let mut internal_edges = 0usize;
    let mut internal_weight = 0.0f64; // each internal edge once
    let mut external_weight = 0.0f64; // each boundary edge once (inside endpoint)
    let mut activity_max = 0.0f64;
    for &u in members.iter() {
        for (v, w) in snapshot.neighbors(u) {
            if members.contains(&v) {
                if u < v {
                    internal_edges += 1;
                    internal_weight += w;
                    if w > activity_max {
                        activity_max = w;
                    }
                }
            } else {
                external_weight += w;
            }
        }
    }

    let mean = |subset: &mut dyn Iterator<Item = NodeId>, map: &BTreeMap<NodeId, f64>| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for u in subset {
            sum += map[&u];
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    };

    let density = if n < 2 { 0.0 } else { 2.0 * internal_edges as f64 / (nf * (nf - 1.0)) };
    let clustering = mean(&mut members.iter().copied(), &metrics.clustering);
    let avg_closeness = mean(&mut members.iter().copied(), &metrics.closeness);
    let degree = mean(&mut members.iter().copied(), &metrics.weighted_degree);
    let max_wd = members.iter().map(|u| metrics.weighted_degree[u]).fold(0.0f64, f64::max);
    let leadership = if n < 3 { 0.0 } else { max_wd / ((nf - 1.0) * (nf - 2.0)) };

    let n_total = snapshot.node_count() as f64;
    let cohesion = if external_weight == 0.0 {
        if internal_weight > 0.0 {
            config.cohesion_cap
        } else {
            0.0
        }
    } else {
        let internal_norm = 2.0 * internal_weight / ((nf - 1.0) * nf);
        let external_norm = external_weight / (n_total * (n_total - nf));
        internal_norm / external_norm
    };

    let (activity_sum, activity_mean) = if internal_edges == 0 {
        (0.0, 0.0)
    } else {
        (internal_weight, internal_weight / internal_edges as f64)
    };

    let service_count =
        members.iter().filter(|&&u| registry.kind(u) == EntityKind::Service).count();
    let pct_service = service_count as f64 / nf;
    let pct_stakeholder = 1.0 - pct_service;

    let keys = &community.key_nodes;
    let k_degree = mean(&mut keys.iter().copied(), &metrics.weighted_degree);
    let k_avg_closeness = mean(&mut keys.iter().copied(), &metrics.closeness);

    FeatureVector([
        nf,
        density,
        clustering,
        avg_closeness,
        degree,
        leadership,
        cohesion,
        keys.len() as f64,
        activity_max,
        activity_sum,
        activity_mean,
        pct_service,
        pct_stakeholder,
        k_degree,
        k_avg_closeness,
    ])
}

/// Convenience wrapper that computes the snapshot metrics itself.
pub fn extract_features(
    community: &Community,
    snapshot: &Snapshot,
    registry: &EntityRegistry,
    config: &FeatureConfig,
) -> FeatureVector {
    let metrics = snapshot_metrics(snapshot);
    extract_features_with(community, snapshot, &metrics, registry, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub lineage_id: String,
    /// Snapshot index of the newest feature vector in the window.
    pub t: usize,
    pub label: EvolutionEvent,
    /// `F_{t-2} ++ F_{t-1} ++ F_t` (45 values), or consecutive differences in
    /// the two later blocks when delta mode is on.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SequenceSummary {
    pub emitted: usize,
    /// Communities whose lineage does not reach back two snapshots.
    pub skipped_short: usize,
    /// Communities with no classified outgoing transition (e.g. at the final
    /// snapshot).
    pub skipped_unlabeled: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SequenceConfig {
    /// Emit consecutive differences instead of the two later raw blocks.
    pub delta: bool,
}

/// One sample per community with at least two lineage predecessors and a
/// classified next event. `features[t][j]` must hold the vector of community
/// `j` of snapshot `t`; `transitions[t]` describes snapshot `t` to `t+1`.
pub fn build_sequences(
    features: &[Vec<FeatureVector>],
    transitions: &[Vec<EvolutionRecord>],
    lineages: &Lineages,
    config: &SequenceConfig,
) -> (Vec<SequenceSample>, SequenceSummary) {
    let mut samples = Vec::new();
    let mut summary = SequenceSummary::default();
    for (t, snapshot_features) in features.iter().enumerate() {
        for j in 0..snapshot_features.len() {
            if t < SEQUENCE_LEN - 1 {
                summary.skipped_short += 1;
                continue;
            }
            let chain = lineages.chain_ending_at((t, j));
            if chain.len() < SEQUENCE_LEN {
                summary.skipped_short += 1;
                continue;
            }
            let label = match transitions.get(t).and_then(|tr| outgoing_event(tr, j)) {
                Some(event) => event,
                None => {
                    summary.skipped_unlabeled += 1;
                    continue;
                }
            };
            let window = &chain[chain.len() - SEQUENCE_LEN..];
            let vecs: Vec<&FeatureVector> =
                window.iter().map(|&(s, o)| &features[s][o]).collect();
            let mut x = Vec::with_capacity(N_SEQUENCE_VALUES);
            x.extend_from_slice(&vecs[0].0);
            for step in 1..SEQUENCE_LEN {
                if config.delta {
                    for f in 0..N_FEATURES {
                        x.push(vecs[step].0[f] - vecs[step - 1].0[f]);
                    }
                } else {
                    x.extend_from_slice(&vecs[step].0);
                }
            }
            samples.push(SequenceSample {
                lineage_id: lineages.lineage_id((t, j)),
                t,
                label,
                x,
            });
            summary.emitted += 1;
        }
    }
    (samples, summary)
}

/// The 45 sequence column names: `{tm2|tm1|t0}_{feature}`.
pub fn sequence_columns() -> Vec<String> {
    let mut cols = Vec::with_capacity(N_SEQUENCE_VALUES);
    for prefix in ["tm2", "tm1", "t0"] {
        for name in FEATURE_NAMES {
            cols.push(format!("{prefix}_{name}"));
        }
    }
    cols
}

pub fn write_features_csv(samples: &[SequenceSample], path: &Path) -> Result<()> {
    let mut out = String::from("lineage_id,t,label");
    for col in sequence_columns() {
        out.push(',');
        out.push_str(&col);
    }
    out.push('\n');
    for s in samples {
        debug_assert_eq!(s.x.len(), N_SEQUENCE_VALUES);
        out.push_str(&format!("{},{},{}", s.lineage_id, s.t, s.label.as_str()));
        for v in &s.x {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<SequenceSample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let headers = reader.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?.clone();
    let mut expected = vec!["lineage_id".to_string(), "t".to_string(), "label".to_string()];
    expected.extend(sequence_columns());
    let actual: Vec<String> = headers.iter().map(str::to_string).collect();
    if actual != expected {
        return Err(Error::parse(path, 1, "unexpected feature column layout"));
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let line = record.position().map_or(0, |p| p.line());
        let lineage_id = record.get(0).unwrap_or("").to_string();
        let t: usize = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::parse(path, line, "bad snapshot index"))?;
        let raw_label = record.get(2).unwrap_or("");
        let label = EvolutionEvent::parse(raw_label)
            .ok_or_else(|| Error::parse(path, line, format!("unknown label `{raw_label}`")))?;
        let mut x = Vec::with_capacity(N_SEQUENCE_VALUES);
        for i in 0..N_SEQUENCE_VALUES {
            let raw = record.get(3 + i).unwrap_or("");
            let v: f64 =
                raw.parse().map_err(|_| Error::parse(path, line, format!("bad value `{raw}`")))?;
            x.push(v);
        }
        samples.push(SequenceSample { lineage_id, t, label, x });
    }
    Ok(samples)
}

/// Per-community feature table (`community_id,snapshot,ordinal` + 15 columns),
/// the input the explainer reassembles windows from.
pub fn write_community_features_csv(features: &[Vec<FeatureVector>], path: &Path) -> Result<()> {
    let mut out = String::from("community_id,snapshot,ordinal");
    for name in FEATURE_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, snapshot_features) in features.iter().enumerate() {
        for (j, fv) in snapshot_features.iter().enumerate() {
            out.push_str(&format!("{},{t},{j}", community_id(t, j)));
            for v in fv.0 {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_community_features_csv(path: &Path) -> Result<Vec<Vec<FeatureVector>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let headers = reader.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?.clone();
    let mut expected = vec!["community_id".to_string(), "snapshot".to_string(), "ordinal".to_string()];
    expected.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    let actual: Vec<String> = headers.iter().map(str::to_string).collect();
    if actual != expected {
        return Err(Error::parse(path, 1, "unexpected community-feature column layout"));
    }
    let mut rows: Vec<(usize, usize, FeatureVector)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let line = record.position().map_or(0, |p| p.line());
        let t: usize = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::parse(path, line, "bad snapshot index"))?;
        let j: usize = record
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::parse(path, line, "bad ordinal"))?;
        let mut values = [0.0f64; N_FEATURES];
        for (i, value) in values.iter_mut().enumerate() {
            let raw = record.get(3 + i).unwrap_or("");
            *value =
                raw.parse().map_err(|_| Error::parse(path, line, format!("bad value `{raw}`")))?;
        }
        rows.push((t, j, FeatureVector(values)));
    }
    let n_snapshots = rows.iter().map(|&(t, _, _)| t + 1).max().unwrap_or(0);
    let mut out: Vec<Vec<FeatureVector>> = vec![Vec::new(); n_snapshots];
    for (t, j, fv) in rows {
        if out[t].len() != j {
            return Err(Error::parse(path, 0, "community feature rows out of order"));
        }
        out[t].push(fv);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{detect, DetectConfig};
    use crate::tracker::{build_lineages, track_series, TrackerConfig};
    use chrono::{TimeZone, Utc};
    use std::collections::BTreeSet;

    fn snap(edges: &[(NodeId, NodeId, f64)]) -> Snapshot {
        let instant = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        Snapshot::from_edges(instant, edges.iter().copied()).unwrap()
    }

    fn registry(kinds: &[(&str, EntityKind)]) -> EntityRegistry {
        let mut r = EntityRegistry::new();
        for (id, kind) in kinds {
            r.insert(id, *kind).unwrap();
        }
        r
    }

    fn clique(nodes: &[NodeId], w: f64) -> Vec<(NodeId, NodeId, f64)> {
        let mut edges = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &nodes[i + 1..] {
                edges.push((u, v, w));
            }
        }
        edges
    }

    fn annotated(snapshot: &Snapshot, members: &[NodeId]) -> Community {
        let set: BTreeSet<NodeId> = members.iter().copied().collect();
        let sp = crate::community::social_position(snapshot, &set);
        let keys = crate::community::key_nodes(snapshot, &set, &sp);
        Community { members: set, social_position: sp, key_nodes: keys }
    }

    #[test]
    fn lone_clique_has_complete_graph_identities() {
        let s = snap(&clique(&[0, 1, 2, 3], 1.0));
        let r = registry(&[
            ("a", EntityKind::Service),
            ("b", EntityKind::Service),
            ("c", EntityKind::Stakeholder),
            ("d", EntityKind::Stakeholder),
        ]);
        let c = annotated(&s, &[0, 1, 2, 3]);
        let f = extract_features(&c, &s, &r, &FeatureConfig::default());
        assert_eq!(f.get("size"), Some(4.0));
        assert_eq!(f.get("density"), Some(1.0));
        assert_eq!(f.get("clustering"), Some(1.0));
        assert_eq!(f.get("avg_closeness"), Some(1.0));
        assert_eq!(f.get("degree"), Some(3.0));
        assert_eq!(f.get("leadership"), Some(0.5)); // 3 / (3 * 2)
        // No external edges but positive internal weight: capped.
        assert_eq!(f.get("cohesion"), Some(1e6));
        assert_eq!(f.get("n_key_nodes"), Some(4.0)); // symmetric, all tie
        assert_eq!(f.get("activity_max"), Some(1.0));
        assert_eq!(f.get("activity_sum"), Some(6.0));
        assert_eq!(f.get("activity_mean"), Some(1.0));
        assert_eq!(f.get("pct_service"), Some(0.5));
        assert_eq!(f.get("pct_stakeholder"), Some(0.5));
        assert_eq!(f.get("k_degree"), Some(3.0));
        assert_eq!(f.get("k_avg_closeness"), Some(1.0));
    }

    #[test]
    fn cohesion_balances_internal_against_external_weight() {
        // 4-clique of weight 2 plus one external node hanging off member 0.
        let mut edges = clique(&[0, 1, 2, 3], 2.0);
        edges.push((0, 9, 1.0));
        let s = snap(&edges);
        let r = registry(&[
            ("a", EntityKind::Service),
            ("b", EntityKind::Service),
            ("c", EntityKind::Service),
            ("d", EntityKind::Service),
            ("x", EntityKind::Service),
        ]);
        let c = annotated(&s, &[0, 1, 2, 3]);
        let f = extract_features(&c, &s, &r, &FeatureConfig::default());
        // internal: 2 * 12 / (3 * 4) = 2; external: 1 / (5 * 1) = 0.2.
        assert!((f.get("cohesion").unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(f.get("activity_max"), Some(2.0));
        assert_eq!(f.get("activity_sum"), Some(12.0));
        // degree averages whole-snapshot weighted degrees: member 0 carries
        // the external edge too.
        assert!((f.get("degree").unwrap() - (7.0 + 6.0 * 3.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn closeness_uses_component_scaling() {
        // Path a-b-c plus a far 4-clique; the path nodes only reach each other.
        let mut edges = vec![(0, 1, 1.0), (1, 2, 1.0)];
        edges.extend(clique(&[10, 11, 12, 13], 1.0));
        let s = snap(&edges);
        let metrics = snapshot_metrics(&s);
        // n = 7. Node 1 (path middle): reach 3, dist_sum 2 -> 4 / (6 * 2).
        assert!((metrics.closeness[&1] - 4.0 / 12.0).abs() < 1e-12);
        // Node 0: dist_sum = 1 + 2 -> 4 / (6 * 3).
        assert!((metrics.closeness[&0] - 4.0 / 18.0).abs() < 1e-12);
        // Clique nodes: reach 4, dist_sum 3 -> 9 / (6 * 3) = 0.5.
        assert!((metrics.closeness[&10] - 0.5).abs() < 1e-12);
        // Path has no triangles.
        assert_eq!(metrics.clustering[&1], 0.0);
        assert_eq!(metrics.clustering[&10], 1.0);
    }

    #[test]
    fn uniform_weight_scaling_moves_only_weight_features() {
        let mut edges = clique(&[0, 1, 2, 3], 1.5);
        edges.push((0, 4, 0.7));
        edges.push((4, 5, 0.9));
        let base = snap(&edges);
        let scaled = snap(&edges.iter().map(|&(u, v, w)| (u, v, w * 2.0)).collect::<Vec<_>>());
        let r = registry(&[
            ("a", EntityKind::Service),
            ("b", EntityKind::Service),
            ("c", EntityKind::Stakeholder),
            ("d", EntityKind::Service),
            ("e", EntityKind::Service),
            ("f", EntityKind::Stakeholder),
        ]);
        let cfg = FeatureConfig::default();
        let fb = extract_features(&annotated(&base, &[0, 1, 2, 3]), &base, &r, &cfg);
        let fs = extract_features(&annotated(&scaled, &[0, 1, 2, 3]), &scaled, &r, &cfg);
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            match *name {
                "degree" | "leadership" | "activity_max" | "activity_sum" | "activity_mean"
                | "k_degree" => {
                    assert_eq!(fs.0[i], 2.0 * fb.0[i], "{name} should scale");
                }
                _ => assert_eq!(fs.0[i], fb.0[i], "{name} should be scale-free"),
            }
        }
    }

    #[test]
    fn sequences_window_lineages_and_label_from_next_transition() {
        // One community continuing over 4 snapshots, shrinking into a fifth.
        let c = |members: &[NodeId]| Community::with_uniform_position(members.iter().copied().collect());
        let series = vec![
            vec![c(&[0, 1, 2, 3, 4])],
            vec![c(&[0, 1, 2, 3, 4])],
            vec![c(&[0, 1, 2, 3, 4])],
            vec![c(&[0, 1, 2, 3, 4])],
            vec![c(&[0, 1, 2, 3])],
        ];
        let transitions = track_series(&series, &TrackerConfig::default()).unwrap();
        let lineages = build_lineages(&transitions);
        let fv = |v: f64| FeatureVector([v; N_FEATURES]);
        let features =
            vec![vec![fv(0.0)], vec![fv(1.0)], vec![fv(2.0)], vec![fv(3.0)], vec![fv(4.0)]];
        let (samples, summary) =
            build_sequences(&features, &transitions, &lineages, &SequenceConfig::default());
        assert_eq!(summary.emitted, 2);
        assert_eq!(summary.skipped_short, 2); // t = 0, 1
        assert_eq!(summary.skipped_unlabeled, 1); // final snapshot
        assert_eq!(samples[0].t, 2);
        assert_eq!(samples[0].label, EvolutionEvent::Continuing);
        assert_eq!(samples[1].t, 3);
        assert_eq!(samples[1].label, EvolutionEvent::Shrinking);
        assert_eq!(samples[1].lineage_id, "s0000_c000");
        assert_eq!(samples[0].x.len(), N_SEQUENCE_VALUES);
        assert_eq!(&samples[1].x[..N_FEATURES], &[1.0; N_FEATURES]);
        assert_eq!(&samples[1].x[N_FEATURES..2 * N_FEATURES], &[2.0; N_FEATURES]);

        // Delta mode keeps the oldest block raw and differences after it.
        let (delta_samples, _) =
            build_sequences(&features, &transitions, &lineages, &SequenceConfig { delta: true });
        assert_eq!(&delta_samples[1].x[..N_FEATURES], &[1.0; N_FEATURES]);
        assert_eq!(&delta_samples[1].x[N_FEATURES..2 * N_FEATURES], &[1.0; N_FEATURES]);

        // A lineage of length 2 yields nothing.
        let short = vec![vec![c(&[0, 1, 2, 3])], vec![c(&[0, 1, 2, 3])]];
        let short_transitions = track_series(&short, &TrackerConfig::default()).unwrap();
        let short_lineages = build_lineages(&short_transitions);
        let short_features = vec![vec![fv(0.0)], vec![fv(1.0)]];
        let (none, s) = build_sequences(
            &short_features,
            &short_transitions,
            &short_lineages,
            &SequenceConfig::default(),
        );
        assert!(none.is_empty());
        assert_eq!(s.skipped_short, 2);
    }

    #[test]
    fn feature_csv_round_trips_with_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let mut x: Vec<f64> = (0..N_SEQUENCE_VALUES).map(|i| i as f64 * 0.1).collect();
        x[7] = 1.0 / 3.0; // exercise shortest-roundtrip float formatting
        let samples = vec![SequenceSample {
            lineage_id: "s0000_c001".into(),
            t: 4,
            label: EvolutionEvent::Merging,
            x,
        }];
        write_features_csv(&samples, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("lineage_id,t,label,tm2_size,"));
        assert!(header.ends_with("t0_k_avg_closeness"));
        assert_eq!(header.split(',').count(), 48);
        let back = read_features_csv(&path).unwrap();
        assert_eq!(back, samples);

        std::fs::write(&path, "lineage_id,t,label,bogus\nx,0,merging,1\n").unwrap();
        assert!(read_features_csv(&path).is_err());
    }

    #[test]
    fn community_feature_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("community_features.csv");
        let fv = |v: f64| FeatureVector(std::array::from_fn(|i| v + i as f64));
        let features = vec![vec![fv(0.0), fv(10.0)], vec![], vec![fv(20.0)]];
        write_community_features_csv(&features, &path).unwrap();
        let back = read_community_features_csv(&path).unwrap();
        assert_eq!(back, features);
    }

    #[test]
    fn detected_communities_feed_extraction_end_to_end() {
        // Sanity path: detect -> annotate -> extract on a two-clique graph.
        let mut edges = clique(&[0, 1, 2, 3], 1.0);
        edges.extend(clique(&[4, 5, 6, 7], 1.0));
        edges.push((0, 4, 0.2));
        let s = snap(&edges);
        let r = registry(&[
            ("a", EntityKind::Service),
            ("b", EntityKind::Service),
            ("c", EntityKind::Service),
            ("d", EntityKind::Service),
            ("e", EntityKind::Stakeholder),
            ("f", EntityKind::Stakeholder),
            ("g", EntityKind::Stakeholder),
            ("h", EntityKind::Stakeholder),
        ]);
        let partition = detect(&s, &DetectConfig::default()).unwrap();
        assert_eq!(partition.communities.len(), 2);
        let metrics = snapshot_metrics(&s);
        for c in &partition.communities {
            let f = extract_features_with(c, &s, &metrics, &r, &FeatureConfig::default());
            assert_eq!(f.get("size"), Some(4.0));
            assert!(f.0.iter().all(|v| v.is_finite()));
            let pct = f.get("pct_service").unwrap();
            assert!(pct == 0.0 || pct == 1.0);
        }
    }
}
