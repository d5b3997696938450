//! Temporal interaction graph: entity registry, event log, interaction
//! mechanisms, and snapshot materialization.
//!
//! The ecosystem history is an append-only log of timestamped pairwise
//! interaction events. A snapshot at instant `T` is reconstructed by replaying
//! every event with timestamp `<= T` and folding it into an undirected
//! weighted graph according to the mechanism configured for the event's
//! relation type:
//!
//! * `stability` — the impact is added to the edge weight,
//! * `mutation` — the edge weight is overwritten with the impact,
//! * `aging` — the impact is scaled by a decay coefficient that shrinks with
//!   the age of the event and drops to zero once the event is older than a
//!   configured horizon.
//!
//! After the replay, edges with non-positive weight and nodes left without
//! edges are removed.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = u32;

const MICROS_PER_DAY: f64 = 86_400_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Service,
    Stakeholder,
}

impl EntityKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "service" => Some(EntityKind::Service),
            "stakeholder" => Some(EntityKind::Stakeholder),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Service => "service",
            EntityKind::Stakeholder => "stakeholder",
        }
    }
}

/// Interns entity ids and remembers each entity's kind. Node ids are dense
/// indices in file order, so every downstream structure can use plain `u32`s.
#[derive(Debug, Clone, Default)]
pub struct EntityRegistry {
    ids: Vec<String>,
    kinds: Vec<EntityKind>,
    index: HashMap<String, NodeId>,
}

impl EntityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, kind: EntityKind) -> Result<NodeId> {
        if self.index.contains_key(id) {
            return Err(Error::InvalidArgument(format!("duplicate entity id `{id}`")));
        }
        let node = self.ids.len() as NodeId;
        self.ids.push(id.to_string());
        self.kinds.push(kind);
        self.index.insert(id.to_string(), node);
        Ok(node)
    }

    pub fn resolve(&self, id: &str) -> Option<NodeId> {
        self.index.get(id).copied()
    }

    pub fn id(&self, node: NodeId) -> &str {
        &self.ids[node as usize]
    }

    pub fn kind(&self, node: NodeId) -> EntityKind {
        self.kinds[node as usize]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &str, EntityKind)> + '_ {
        self.ids
            .iter()
            .zip(&self.kinds)
            .enumerate()
            .map(|(i, (id, kind))| (i as NodeId, id.as_str(), *kind))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEvent {
    pub source: NodeId,
    pub target: NodeId,
    pub relation: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Stability,
    Aging,
    Mutation,
}

impl Mechanism {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stability" => Some(Mechanism::Stability),
            "aging" => Some(Mechanism::Aging),
            "mutation" => Some(Mechanism::Mutation),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Stability => "stability",
            Mechanism::Aging => "aging",
            Mechanism::Mutation => "mutation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismRule {
    pub mechanism: Mechanism,
    pub impact: f64,
}

/// Maps relation types to interaction mechanisms plus the aging parameters.
///
/// Text format, one statement per line (`#` starts a comment):
///
/// ```text
/// aging.period_days = 30
/// aging.max_days = 365
/// invoke = stability 1.5
/// mention = aging 0.5
/// * = aging 0.1        # optional default for unlisted relations
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    rules: BTreeMap<String, MechanismRule>,
    default_rule: Option<MechanismRule>,
    /// Decay denominator `a`: events younger than `a` days keep full impact.
    pub aging_period_days: u32,
    /// Decay horizon `b`: events at least `b` days old contribute nothing.
    pub aging_max_days: u32,
}

impl MechanismConfig {
    pub fn new(aging_period_days: u32, aging_max_days: u32) -> Result<Self> {
        if aging_period_days == 0 {
            return Err(Error::InvalidConfig("aging.period_days must be >= 1".into()));
        }
        if aging_max_days == 0 {
            return Err(Error::InvalidConfig("aging.max_days must be >= 1".into()));
        }
        Ok(MechanismConfig {
            rules: BTreeMap::new(),
            default_rule: None,
            aging_period_days,
            aging_max_days,
        })
    }

    pub fn with_rule(mut self, relation: &str, mechanism: Mechanism, impact: f64) -> Self {
        self.rules.insert(relation.to_string(), MechanismRule { mechanism, impact });
        self
    }

    pub fn with_default(mut self, mechanism: Mechanism, impact: f64) -> Self {
        self.default_rule = Some(MechanismRule { mechanism, impact });
        self
    }

    pub fn rule_for(&self, relation: &str) -> Result<&MechanismRule> {
        self.rules
            .get(relation)
            .or(self.default_rule.as_ref())
            .ok_or_else(|| Error::MissingMechanism { relation: relation.to_string() })
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &MechanismRule)> {
        self.rules.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut period: Option<u32> = None;
        let mut max: Option<u32> = None;
        let mut rules = BTreeMap::new();
        let mut default_rule = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "aging.period_days" | "aging.max_days" => {
                    let parsed: u32 = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("line {}: `{key}` must be a positive integer", lineno + 1))
                    })?;
                    if key == "aging.period_days" {
                        period = Some(parsed);
                    } else {
                        max = Some(parsed);
                    }
                }
                _ => {
                    let mut parts = value.split_whitespace();
                    let mech = parts
                        .next()
                        .and_then(Mechanism::parse)
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!(
                                "line {}: expected `<relation> = <stability|aging|mutation> <impact>`",
                                lineno + 1
                            ))
                        })?;
                    let impact: f64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("line {}: impact must be a finite number", lineno + 1))
                        })?;
                    if parts.next().is_some() {
                        return Err(Error::InvalidConfig(format!("line {}: trailing tokens", lineno + 1)));
                    }
                    let rule = MechanismRule { mechanism: mech, impact };
                    if key == "*" {
                        default_rule = Some(rule);
                    } else {
                        rules.insert(key.to_string(), rule);
                    }
                }
            }
        }
        let mut config = MechanismConfig::new(period.unwrap_or(30), max.unwrap_or(365))?;
        config.rules = rules;
        config.default_rule = default_rule;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text rendering; `parse` round-trips it.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("aging.period_days = {}\n", self.aging_period_days));
        out.push_str(&format!("aging.max_days = {}\n", self.aging_max_days));
        for (relation, rule) in &self.rules {
            out.push_str(&format!("{relation} = {} {}\n", rule.mechanism.as_str(), rule.impact));
        }
        if let Some(rule) = &self.default_rule {
            out.push_str(&format!("* = {} {}\n", rule.mechanism.as_str(), rule.impact));
        }
        out
    }
}

/// Exact gap in days between two instants, as a real number (microsecond
/// resolution; 36 hours is 1.5 days).
pub fn day_gap(later: DateTime<Utc>, earlier: DateTime<Utc>) -> f64 {
    let micros = later
        .signed_duration_since(earlier)
        .num_microseconds()
        .expect("instant gap overflows microseconds");
    micros as f64 / MICROS_PER_DAY
}

/// Decay coefficient for an event that is `gap_days` old at observation time:
/// full impact within `period_days`, then hyperbolic decay, then zero at and
/// beyond `max_days`.
pub fn aging_coeff_days(gap_days: f64, period_days: u32, max_days: u32) -> f64 {
    if gap_days < max_days as f64 {
        1.0 / (gap_days / period_days as f64).max(1.0)
    } else {
        0.0
    }
}

/// Decay coefficient for an event at `t_j` observed at `t_i` (`t_i >= t_j`).
pub fn aging_coeff(t_i: DateTime<Utc>, t_j: DateTime<Utc>, config: &MechanismConfig) -> f64 {
    debug_assert!(t_i >= t_j, "observation instant precedes event");
    aging_coeff_days(day_gap(t_i, t_j), config.aging_period_days, config.aging_max_days)
}

/// Undirected weighted graph of the ecosystem at one instant. Contains no
/// self-loops, no non-positive weights, and no isolated nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub instant: DateTime<Utc>,
    adj: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
    edge_count: usize,
    total_weight: f64,
}

impl Snapshot {
    pub fn from_edges(
        instant: DateTime<Utc>,
        edges: impl IntoIterator<Item = (NodeId, NodeId, f64)>,
    ) -> Result<Self> {
        let mut adj: BTreeMap<NodeId, BTreeMap<NodeId, f64>> = BTreeMap::new();
        let mut edge_count = 0usize;
        let mut total_weight = 0.0f64;
        for (u, v, w) in edges {
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) has non-positive or non-finite weight {w}"
                )));
            }
            if adj.entry(u).or_default().insert(v, w).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate edge ({u}, {v})")));
            }
            adj.entry(v).or_default().insert(u, w);
            edge_count += 1;
            total_weight += w;
        }
        Ok(Snapshot { instant, adj, edge_count, total_weight })
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    /// Sum of edge weights (each undirected edge counted once).
    pub fn total_edge_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.adj.contains_key(&u)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn weight(&self, u: NodeId, v: NodeId) -> Option<f64> {
        self.adj.get(&u).and_then(|n| n.get(&v)).copied()
    }

    /// Neighbors of `u` in ascending node order.
    pub fn neighbors(&self, u: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adj.get(&u).into_iter().flat_map(|n| n.iter().map(|(&v, &w)| (v, w)))
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adj.get(&u).map_or(0, |n| n.len())
    }

    pub fn weighted_degree(&self, u: NodeId) -> f64 {
        self.adj.get(&u).map_or(0.0, |n| n.values().sum())
    }

    /// Edges with `u < v`, in ascending `(u, v)` order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.adj.iter().flat_map(|(&u, n)| {
            n.iter().filter(move |(&v, _)| u < v).map(move |(&v, &w)| (u, v, w))
        })
    }
}

/// Replays every event with `timestamp <= instant` into an edge-weight map
/// and keeps the strictly positive edges. `events` must be sorted by
/// timestamp.
pub fn build_snapshot(
    events: &[InteractionEvent],
    config: &MechanismConfig,
    instant: DateTime<Utc>,
) -> Result<Snapshot> {
    debug_assert!(
        events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp),
        "events must be sorted by timestamp"
    );
    let cut = events.partition_point(|e| e.timestamp <= instant);
    let mut weights: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for event in &events[..cut] {
        let rule = config.rule_for(&event.relation)?;
        let key = if event.source < event.target {
            (event.source, event.target)
        } else {
            (event.target, event.source)
        };
        let entry = weights.entry(key).or_insert(0.0);
        match rule.mechanism {
            Mechanism::Stability => *entry += rule.impact,
            Mechanism::Mutation => *entry = rule.impact,
            Mechanism::Aging => *entry += rule.impact * aging_coeff(instant, event.timestamp, config),
        }
    }
    Snapshot::from_edges(
        instant,
        weights.into_iter().filter(|&(_, w)| w > 0.0).map(|((u, v), w)| (u, v, w)),
    )
}

/// Snapshot instants `start + k * period_days` for `k = 0, 1, ...` while the
/// instant does not exceed `end`.
pub fn snapshot_instants(
    start: DateTime<Utc>,
    period_days: u32,
    end: DateTime<Utc>,
) -> Result<Vec<DateTime<Utc>>> {
    if period_days == 0 {
        return Err(Error::InvalidArgument("period_days must be >= 1".into()));
    }
    if start > end {
        return Err(Error::InvalidArgument(format!(
            "start instant {} is after end instant {}",
            format_instant(start),
            format_instant(end)
        )));
    }
    let mut instants = Vec::new();
    let mut k: i64 = 0;
    loop {
        let instant = start + Duration::days(period_days as i64 * k);
        if instant > end {
            break;
        }
        instants.push(instant);
        k += 1;
    }
    Ok(instants)
}

/// Builds the snapshot series over the periodic grid. `events` must be sorted
/// by timestamp. Snapshots are independent, so they are built in parallel.
pub fn snapshot_series(
    events: &[InteractionEvent],
    config: &MechanismConfig,
    start: DateTime<Utc>,
    period_days: u32,
    end: DateTime<Utc>,
) -> Result<Vec<Snapshot>> {
    use rayon::prelude::*;
    let instants = snapshot_instants(start, period_days, end)?;
    instants
        .par_iter()
        .map(|&instant| build_snapshot(events, config, instant))
        .collect()
}

pub fn format_instant(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn parse_instant(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::InvalidArgument(format!("bad timestamp `{s}`: {e}")))
}

fn header_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 1, format!("missing required column `{name}`")))
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Loads the entity table (`id,type` columns) into a registry.
pub fn load_entities(path: &Path) -> Result<EntityRegistry> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let headers = reader.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?.clone();
    let id_col = header_index(&headers, "id", path)?;
    let type_col = header_index(&headers, "type", path)?;
    let mut registry = EntityRegistry::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let line = record_line(&record);
        let id = record.get(id_col).unwrap_or("").trim();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty entity id"));
        }
        let raw_kind = record.get(type_col).unwrap_or("").trim();
        let kind = EntityKind::parse(raw_kind)
            .ok_or_else(|| Error::parse(path, line, format!("unknown entity type `{raw_kind}`")))?;
        registry
            .insert(id, kind)
            .map_err(|_| Error::parse(path, line, format!("duplicate entity id `{id}`")))?;
    }
    Ok(registry)
}

/// Loads the event log (`source,target,relation,timestamp` columns), resolving
/// ids against the registry. Events come back sorted by timestamp, ties in
/// file order.
pub fn load_events(path: &Path, registry: &EntityRegistry) -> Result<Vec<InteractionEvent>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let headers = reader.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?.clone();
    let source_col = header_index(&headers, "source", path)?;
    let target_col = header_index(&headers, "target", path)?;
    let relation_col = header_index(&headers, "relation", path)?;
    let timestamp_col = header_index(&headers, "timestamp", path)?;
    let mut events = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let line = record_line(&record);
        let resolve = |col: usize| -> Result<NodeId> {
            let id = record.get(col).unwrap_or("").trim();
            registry
                .resolve(id)
                .ok_or_else(|| Error::parse(path, line, format!("unknown entity id `{id}`")))
        };
        let source = resolve(source_col)?;
        let target = resolve(target_col)?;
        if source == target {
            return Err(Error::parse(
                path,
                line,
                format!("self-loop event on entity `{}`", registry.id(source)),
            ));
        }
        let relation = record.get(relation_col).unwrap_or("").trim().to_string();
        if relation.is_empty() {
            return Err(Error::parse(path, line, "empty relation"));
        }
        let raw_ts = record.get(timestamp_col).unwrap_or("").trim();
        let timestamp = DateTime::parse_from_rfc3339(raw_ts)
            .map_err(|e| Error::parse(path, line, format!("bad timestamp `{raw_ts}`: {e}")))?
            .with_timezone(&Utc);
        events.push(InteractionEvent { source, target, relation, timestamp });
    }
    events.sort_by_key(|e| e.timestamp);
    Ok(events)
}

/// Writes a snapshot as `u,v,weight` rows with entity-id strings, edges
/// ordered lexicographically, and weights in scientific notation with nine
/// significant digits.
pub fn write_snapshot_csv(snapshot: &Snapshot, registry: &EntityRegistry, path: &Path) -> Result<()> {
    let mut rows: Vec<(String, String, f64)> = snapshot
        .edges()
        .map(|(u, v, w)| {
            let (a, b) = (registry.id(u).to_string(), registry.id(v).to_string());
            if a <= b {
                (a, b, w)
            } else {
                (b, a, w)
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    let mut out = String::from("u,v,weight\n");
    for (u, v, w) in rows {
        out.push_str(&format!("{u},{v},{w:.8e}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot_csv(path: &Path, registry: &EntityRegistry, instant: DateTime<Utc>) -> Result<Snapshot> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv { path: path.into(), source: e })?;
    let headers = reader.headers().map_err(|e| Error::Csv { path: path.into(), source: e })?.clone();
    let u_col = header_index(&headers, "u", path)?;
    let v_col = header_index(&headers, "v", path)?;
    let w_col = header_index(&headers, "weight", path)?;
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv { path: path.into(), source: e })?;
        let line = record_line(&record);
        let resolve = |col: usize| -> Result<NodeId> {
            let id = record.get(col).unwrap_or("").trim();
            registry
                .resolve(id)
                .ok_or_else(|| Error::parse(path, line, format!("unknown entity id `{id}`")))
        };
        let u = resolve(u_col)?;
        let v = resolve(v_col)?;
        let raw_w = record.get(w_col).unwrap_or("").trim();
        let w: f64 = raw_w
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad weight `{raw_w}`")))?;
        edges.push((u, v, w));
    }
    Snapshot::from_edges(instant, edges)
}

/// Writes the entity table in registry order.
pub fn write_entities_csv(registry: &EntityRegistry, path: &Path) -> Result<()> {
    let mut out = String::from("id,type\n");
    for (_, id, kind) in registry.iter() {
        out.push_str(&format!("{id},{}\n", kind.as_str()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the event log in the given order.
pub fn write_events_csv(events: &[InteractionEvent], registry: &EntityRegistry, path: &Path) -> Result<()> {
    let mut out = String::from("source,target,relation,timestamp\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{},{}\n",
            registry.id(e.source),
            registry.id(e.target),
            e.relation,
            format_instant(e.timestamp)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
