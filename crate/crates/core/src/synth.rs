//! Synthetic service ecosystems with a planted, known evolution history.
//!
//! A script plants communities as dense random subgraphs (ring backbone for
//! connectivity plus independent intra-pair events) and schedules lifecycle
//! directives per snapshot. Interaction weights use the aging mechanism with
//! the decay horizon equal to the snapshot period, so each snapshot sees only
//! its own window of events and membership changes take effect cleanly.
//!
//! Every scheduled event is foreshadowed in the two windows before it — event
//! rates ramp up before growth, down before shrinkage and harder before
//! dissolution, cross-community coupling rises before a merge, and cross-part
//! cohesion falls before a split — so the label of a window is predictable
//! from the feature history, not just visible after the fact.
//!
//! A merge keeps the initiating community's ordinal; splits assign fresh
//! ordinals to every part. Generation is single-threaded and draws all
//! randomness from one seeded stream, so outputs are byte-stable per seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::community::PartitionFile;
use crate::error::{Error, Result};
use crate::snapshot::{
    parse_instant, write_entities_csv, write_events_csv, EntityKind,
    EntityRegistry, InteractionEvent, Mechanism, MechanismConfig,
};
use crate::tracker::{outgoing_event, EvolutionEvent, EvolutionRecord};

/// Smallest community worth planting: anything below the default detection
/// cutoff could never be recovered.
pub const MIN_PLANT_SIZE: usize = 4;

const RELATION_INTRA: &str = "collab";
const RELATION_NOISE: &str = "contact";
const INTRA_IMPACT: f64 = 1.0;
const NOISE_IMPACT: f64 = 0.3;
/// Cross-pair event rate between two communities about to merge.
const MERGE_COUPLING_RATE: f64 = 0.10;
/// Multiplier on intra pairs straddling the planned parts of a coming split.
const SPLIT_POLARIZATION: f64 = 0.5;

/// Intra-rate multipliers in the windows leading up to a directive:
/// (two windows before, one window before).
const GROW_RAMP: (f64, f64) = (1.3, 1.6);
const SHRINK_RAMP: (f64, f64) = (0.85, 0.7);
const DISSOLVE_RAMP: (f64, f64) = (0.7, 0.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DirectiveAction {
    Grow { nodes: usize },
    Shrink { nodes: usize },
    Split { parts: Vec<usize> },
    Merge { with: Vec<usize> },
    Dissolve,
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledDirective {
    /// Snapshot at which the effect becomes visible (1-based transitions).
    pub snapshot: usize,
    pub community: usize,
    pub action: DirectiveAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionScript {
    pub seed: u64,
    pub n_snapshots: usize,
    /// Instant of snapshot 0 (RFC 3339). Window `w` covers the period ending
    /// at snapshot `w`.
    pub start: String,
    pub period_days: u32,
    pub initial_communities: Vec<usize>,
    /// Per-window probability of an interaction event per intra pair.
    pub intra_rate: f64,
    /// Per-window probability per cross-community pair.
    pub noise_rate: f64,
    /// Fraction of newly created nodes that are services.
    pub service_mix: f64,
    pub directives: Vec<ScheduledDirective>,
}

/// The frozen benchmark script: 12 communities over 10 snapshots with low
/// background noise, scheduling every trackable event type several times.
pub fn default_benchmark() -> EvolutionScript {
    use DirectiveAction::*;
    let d = |snapshot, community, action| ScheduledDirective { snapshot, community, action };
    EvolutionScript {
        seed: 1789,
        n_snapshots: 10,
        start: "2020-01-01T00:00:00Z".to_string(),
        period_days: 30,
        initial_communities: vec![10, 9, 10, 9, 10, 9, 10, 12, 9, 9, 10, 9],
        intra_rate: 0.6,
        noise_rate: 0.005,
        service_mix: 0.55,
        directives: vec![
            d(4, 2, Grow { nodes: 3 }),
            d(4, 4, Shrink { nodes: 2 }),
            d(5, 3, Grow { nodes: 3 }),
            d(5, 5, Shrink { nodes: 2 }),
            d(5, 6, Split { parts: vec![5, 5] }),
            d(5, 8, Merge { with: vec![9] }),
            d(6, 0, Shrink { nodes: 2 }),
            d(6, 7, Split { parts: vec![6, 6] }),
            d(7, 2, Grow { nodes: 3 }),
            d(7, 4, Shrink { nodes: 2 }),
            d(7, 10, Merge { with: vec![11] }),
            d(8, 1, Dissolve),
            d(8, 3, Grow { nodes: 3 }),
            d(8, 5, Dissolve),
            d(8, 8, Split { parts: vec![9, 9] }),
            d(9, 12, Dissolve),
            d(9, 14, Dissolve),
        ],
    }
}

/// One scheduled evolution event on the transition
/// `from_snapshot -> from_snapshot + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub from_snapshot: usize,
    pub community: usize,
    pub event: EvolutionEvent,
    /// Planted members at `from_snapshot`, for matching against detected
    /// communities.
    pub members: Vec<String>,
}

/// A community coming alive: merges re-birth the kept ordinal, so an ordinal
/// can appear more than once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthRecord {
    pub community: usize,
    pub born_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub start: String,
    pub period_days: u32,
    pub n_snapshots: usize,
    pub births: Vec<BirthRecord>,
    pub entries: Vec<ScheduledEvent>,
}

impl GroundTruth {
    /// Birth snapshot of `community` as of snapshot `at`.
    pub fn born_at(&self, community: usize, at: usize) -> Option<usize> {
        self.births
            .iter()
            .filter(|b| b.community == community && b.born_at <= at)
            .map(|b| b.born_at)
            .max()
    }

    /// How many labeled sequence samples the schedule implies: entries whose
    /// community has an unbroken three-snapshot history ending at the
    /// transition's start.
    pub fn expected_labeled_samples(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| {
                e.from_snapshot >= 2
                    && self
                        .born_at(e.community, e.from_snapshot)
                        .is_some_and(|b| e.from_snapshot - b >= 2)
            })
            .count()
    }

    pub fn counts_by_event(&self) -> BTreeMap<EvolutionEvent, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.event).or_insert(0) += 1;
        }
        counts
    }
}

/// The mechanism configuration generated ecosystems are meant to be replayed
/// with: pure aging with the horizon equal to the snapshot period.
pub fn mechanism_config(period_days: u32) -> MechanismConfig {
    MechanismConfig::new(period_days, period_days)
        .expect("period validated before generation")
        .with_rule(RELATION_INTRA, Mechanism::Aging, INTRA_IMPACT)
        .with_rule(RELATION_NOISE, Mechanism::Aging, NOISE_IMPACT)
}

pub fn save_script(script: &EvolutionScript, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(script)
        .map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_script(path: &Path) -> Result<EvolutionScript> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(truth)
        .map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

fn validate_script(script: &EvolutionScript) -> Result<()> {
    if script.n_snapshots < 2 {
        return Err(Error::InvalidConfig("n_snapshots must be >= 2".into()));
    }
    if script.initial_communities.is_empty() {
        return Err(Error::InvalidConfig("at least one initial community is required".into()));
    }
    if let Some(&size) = script.initial_communities.iter().find(|&&s| s < MIN_PLANT_SIZE) {
        return Err(Error::InvalidConfig(format!(
            "initial community of size {size} is below the plantable minimum {MIN_PLANT_SIZE}"
        )));
    }
    if !(script.intra_rate > 0.0 && script.intra_rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "intra_rate must be in (0, 1], got {}",
            script.intra_rate
        )));
    }
    if !(script.noise_rate > 0.0 && script.noise_rate < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "noise_rate must be in (0, 1), got {}",
            script.noise_rate
        )));
    }
    if !(script.service_mix > 0.0 && script.service_mix < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "service_mix must be in (0, 1), got {}",
            script.service_mix
        )));
    }
    if script.period_days == 0 {
        return Err(Error::InvalidConfig("period_days must be >= 1".into()));
    }
    parse_instant(&script.start)?;
    Ok(())
}

/// Consecutive chunks of `members` sized proportionally to `parts`; exact
/// when the sizes add up, which directive validation guarantees at split
/// time.
fn partition_members(members: &[String], parts: &[usize]) -> Vec<Vec<String>> {
    let total: usize = parts.iter().sum();
    let mut out = Vec::with_capacity(parts.len());
    let mut taken = 0usize;
    for (i, &p) in parts.iter().enumerate() {
        let want = if total == members.len() {
            p
        } else {
            members.len() * parts[..=i].iter().sum::<usize>() / total - taken
        };
        let end = (taken + want).min(members.len());
        out.push(members[taken..end].to_vec());
        taken = end;
    }
    out
}

struct Generator<'a> {
    script: &'a EvolutionScript,
    rng: ChaCha8Rng,
    registry: EntityRegistry,
    /// Live communities: ordinal -> sorted member ids.
    communities: BTreeMap<usize, Vec<String>>,
    /// action by (snapshot, community), for both replay and foreshadowing.
    directives: BTreeMap<(usize, usize), DirectiveAction>,
    next_ordinal: usize,
    next_node: usize,
    events: Vec<InteractionEvent>,
    births: Vec<BirthRecord>,
    entries: Vec<ScheduledEvent>,
}

impl<'a> Generator<'a> {
    fn new(script: &'a EvolutionScript) -> Result<Self> {
        let mut directives = BTreeMap::new();
        let last = script.n_snapshots - 1;
        for d in &script.directives {
            if d.snapshot == 0 || d.snapshot > last {
                return Err(Error::InfeasibleDirective(format!(
                    "directive on community {} at snapshot {} is outside 1..={last}",
                    d.community, d.snapshot
                )));
            }
            if directives.insert((d.snapshot, d.community), d.action.clone()).is_some() {
                return Err(Error::InfeasibleDirective(format!(
                    "community {} has two directives at snapshot {}",
                    d.community, d.snapshot
                )));
            }
        }
        Ok(Generator {
            script,
            rng: ChaCha8Rng::seed_from_u64(script.seed),
            registry: EntityRegistry::new(),
            communities: BTreeMap::new(),
            directives,
            next_ordinal: 0,
            next_node: 0,
            events: Vec::new(),
            births: Vec::new(),
            entries: Vec::new(),
        })
    }

    fn fresh_node(&mut self) -> Result<String> {
        let id = format!("n{:04}", self.next_node);
        self.next_node += 1;
        let kind = if self.rng.random::<f64>() < self.script.service_mix {
            EntityKind::Service
        } else {
            EntityKind::Stakeholder
        };
        self.registry.insert(&id, kind)?;
        Ok(id)
    }

    fn fresh_nodes(&mut self, n: usize) -> Result<Vec<String>> {
        (0..n).map(|_| self.fresh_node()).collect()
    }

    fn members_of(&self, ordinal: usize, snapshot: usize) -> Result<&Vec<String>> {
        self.communities.get(&ordinal).ok_or_else(|| {
            Error::InfeasibleDirective(format!(
                "community {ordinal} is not alive at snapshot {snapshot}"
            ))
        })
    }

    fn schedule(&mut self, from_snapshot: usize, community: usize, event: EvolutionEvent) {
        let members = self.communities[&community].clone();
        self.entries.push(ScheduledEvent { from_snapshot, community, event, members });
    }

    /// Applies the directives taking effect at `snapshot`, recording the
    /// scheduled events of the transition `snapshot - 1 -> snapshot`.
    fn apply_directives(&mut self, snapshot: usize) -> Result<()> {
        let tau = snapshot - 1;
        let mut touched: Vec<usize> = Vec::new();
        let at_this: Vec<(usize, DirectiveAction)> = self
            .directives
            .range((snapshot, 0)..(snapshot + 1, 0))
            .map(|(&(_, c), a)| (c, a.clone()))
            .collect();
        for (community, action) in at_this {
            if touched.contains(&community) {
                return Err(Error::InfeasibleDirective(format!(
                    "community {community} already consumed by another directive at snapshot {snapshot}"
                )));
            }
            let size = self.members_of(community, snapshot)?.len();
            match action {
                DirectiveAction::Grow { nodes } => {
                    if nodes == 0 {
                        return Err(Error::InfeasibleDirective(format!(
                            "growing community {community} by zero nodes at snapshot {snapshot}"
                        )));
                    }
                    self.schedule(tau, community, EvolutionEvent::Growing);
                    let mut fresh = self.fresh_nodes(nodes)?;
                    let members = self.communities.get_mut(&community).unwrap();
                    members.append(&mut fresh);
                    members.sort();
                }
                DirectiveAction::Shrink { nodes } => {
                    if nodes == 0 || size - nodes.min(size) < MIN_PLANT_SIZE {
                        return Err(Error::InfeasibleDirective(format!(
                            "shrinking community {community} of size {size} by {nodes} at snapshot {snapshot} leaves fewer than {MIN_PLANT_SIZE} nodes"
                        )));
                    }
                    self.schedule(tau, community, EvolutionEvent::Shrinking);
                    let picks = rand::seq::index::sample(&mut self.rng, size, nodes);
                    let mut drop: Vec<usize> = picks.into_vec();
                    drop.sort_unstable_by(|a, b| b.cmp(a));
                    let members = self.communities.get_mut(&community).unwrap();
                    for i in drop {
                        members.remove(i);
                    }
                }
                DirectiveAction::Split { parts } => {
                    if parts.len() < 2 {
                        return Err(Error::InfeasibleDirective(format!(
                            "splitting community {community} needs at least two parts"
                        )));
                    }
                    if parts.iter().any(|&p| p < MIN_PLANT_SIZE) {
                        return Err(Error::InfeasibleDirective(format!(
                            "split of community {community} at snapshot {snapshot} has a part below {MIN_PLANT_SIZE} nodes"
                        )));
                    }
                    if parts.iter().sum::<usize>() != size {
                        return Err(Error::InfeasibleDirective(format!(
                            "split parts of community {community} sum to {}, but it has {size} members",
                            parts.iter().sum::<usize>()
                        )));
                    }
                    self.schedule(tau, community, EvolutionEvent::Splitting);
                    let members = self.communities.remove(&community).unwrap();
                    for chunk in partition_members(&members, &parts) {
                        let ordinal = self.next_ordinal;
                        self.next_ordinal += 1;
                        self.communities.insert(ordinal, chunk);
                        self.births.push(BirthRecord { community: ordinal, born_at: snapshot });
                    }
                }
                DirectiveAction::Merge { with } => {
                    if with.is_empty() {
                        return Err(Error::InfeasibleDirective(format!(
                            "merge on community {community} lists no partners"
                        )));
                    }
                    let mut partners = with.clone();
                    partners.sort_unstable();
                    partners.dedup();
                    if partners.len() != with.len() || partners.contains(&community) {
                        return Err(Error::InfeasibleDirective(format!(
                            "merge partners of community {community} must be distinct others"
                        )));
                    }
                    self.schedule(tau, community, EvolutionEvent::Merging);
                    for &p in &partners {
                        self.members_of(p, snapshot)?;
                        if touched.contains(&p) {
                            return Err(Error::InfeasibleDirective(format!(
                                "community {p} already consumed by another directive at snapshot {snapshot}"
                            )));
                        }
                        self.schedule(tau, p, EvolutionEvent::Merging);
                    }
                    let mut union = self.communities.remove(&community).unwrap();
                    for &p in &partners {
                        union.append(&mut self.communities.remove(&p).unwrap());
                        touched.push(p);
                    }
                    union.sort();
                    self.communities.insert(community, union);
                    self.births.push(BirthRecord { community, born_at: snapshot });
                }
                DirectiveAction::Dissolve => {
                    self.schedule(tau, community, EvolutionEvent::Dissolving);
                    self.communities.remove(&community);
                }
                DirectiveAction::Continue => {
                    self.schedule(tau, community, EvolutionEvent::Continuing);
                }
            }
            touched.push(community);
        }
        Ok(())
    }

    fn directive_at(&self, snapshot: usize, community: usize) -> Option<&DirectiveAction> {
        if snapshot >= self.script.n_snapshots {
            return None;
        }
        self.directives.get(&(snapshot, community))
    }

    /// Intra-rate multiplier for `community` while generating window `w`,
    /// from the directive it is heading into. The nearer directive wins.
    fn lifecycle_multiplier(&self, community: usize, w: usize) -> f64 {
        for (ahead, stage) in [(1usize, 1usize), (2, 0)] {
            let ramp = match self.directive_at(w + ahead, community) {
                Some(DirectiveAction::Grow { .. }) => Some(GROW_RAMP),
                Some(DirectiveAction::Shrink { .. }) => Some(SHRINK_RAMP),
                Some(DirectiveAction::Dissolve) => Some(DISSOLVE_RAMP),
                _ => None,
            };
            if let Some((early, late)) = ramp {
                return if stage == 1 { late } else { early };
            }
        }
        1.0
    }

    /// Planned part index per member if the community is heading into a
    /// split.
    fn polarization(&self, community: usize, w: usize) -> Option<BTreeMap<String, usize>> {
        let parts = [1usize, 2]
            .iter()
            .find_map(|&ahead| match self.directive_at(w + ahead, community) {
                Some(DirectiveAction::Split { parts }) => Some(parts.clone()),
                _ => None,
            })?;
        let members = &self.communities[&community];
        let mut assignment = BTreeMap::new();
        for (i, chunk) in partition_members(members, &parts).into_iter().enumerate() {
            for m in chunk {
                assignment.insert(m, i);
            }
        }
        Some(assignment)
    }

    fn emit(&mut self, a: &str, b: &str, relation: &str, window_end: DateTime<Utc>) {
        let offset = self.rng.random_range(0..self.script.period_days as i64 * 86_400);
        let source = self.registry.resolve(a).expect("generated node");
        let target = self.registry.resolve(b).expect("generated node");
        self.events.push(InteractionEvent {
            source,
            target,
            relation: relation.to_string(),
            timestamp: window_end - Duration::seconds(offset),
        });
    }

    fn generate_window(&mut self, w: usize, window_end: DateTime<Utc>) {
        let ordinals: Vec<usize> = self.communities.keys().copied().collect();
        // Intra-community structure: a ring backbone for connectivity plus
        // independent pair events at the (possibly ramped) intra rate.
        for &c in &ordinals {
            let members = self.communities[&c].clone();
            let rate = (self.script.intra_rate * self.lifecycle_multiplier(c, w)).min(1.0);
            let poles = self.polarization(c, w);
            let mut linked: Vec<(usize, usize)> = Vec::new();
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let mut pair_rate = rate;
                    if let Some(p) = &poles {
                        if p[&members[i]] != p[&members[j]] {
                            pair_rate *= SPLIT_POLARIZATION;
                        }
                    }
                    if self.rng.random::<f64>() < pair_rate {
                        linked.push((i, j));
                        self.emit(&members[i], &members[j], RELATION_INTRA, window_end);
                    }
                }
            }
            for i in 0..members.len() {
                let j = (i + 1) % members.len();
                let key = if i < j { (i, j) } else { (j, i) };
                if i != j && !linked.contains(&key) {
                    self.emit(&members[i], &members[j], RELATION_INTRA, window_end);
                }
            }
        }
        // Coupling between communities heading into a merge.
        for &c in &ordinals {
            for ahead in [1usize, 2] {
                let Some(DirectiveAction::Merge { with }) = self.directive_at(w + ahead, c) else {
                    continue;
                };
                for &p in &with.clone() {
                    if !self.communities.contains_key(&p) {
                        continue;
                    }
                    let left = self.communities[&c].clone();
                    let right = self.communities[&p].clone();
                    for a in &left {
                        for b in &right {
                            if self.rng.random::<f64>() < MERGE_COUPLING_RATE {
                                self.emit(a, b, RELATION_NOISE, window_end);
                            }
                        }
                    }
                }
            }
        }
        // Background inter-community noise.
        for (i, &ci) in ordinals.iter().enumerate() {
            for &cj in &ordinals[i + 1..] {
                let left = self.communities[&ci].clone();
                let right = self.communities[&cj].clone();
                for a in &left {
                    for b in &right {
                        if self.rng.random::<f64>() < self.script.noise_rate {
                            self.emit(a, b, RELATION_NOISE, window_end);
                        }
                    }
                }
            }
        }
    }

    fn run(mut self) -> Result<(EntityRegistry, Vec<InteractionEvent>, GroundTruth)> {
        let start = parse_instant(&self.script.start)?;
        for &size in &self.script.initial_communities {
            let members = self.fresh_nodes(size)?;
            let ordinal = self.next_ordinal;
            self.next_ordinal += 1;
            self.communities.insert(ordinal, members);
            self.births.push(BirthRecord { community: ordinal, born_at: 0 });
        }
        for w in 0..self.script.n_snapshots {
            if w > 0 {
                let before: Vec<usize> = self.communities.keys().copied().collect();
                self.apply_directives(w)?;
                for c in before {
                    if self.communities.contains_key(&c)
                        && self.directive_at(w, c).is_none()
                        && self.entries.iter().all(|e| {
                            e.from_snapshot != w - 1 || e.community != c
                        })
                    {
                        self.schedule(w - 1, c, EvolutionEvent::Continuing);
                    }
                }
            }
            let window_end = start + Duration::days(self.script.period_days as i64 * w as i64);
            self.generate_window(w, window_end);
        }
        self.events.sort_by_key(|e| e.timestamp);
        self.entries.sort_by_key(|e| (e.from_snapshot, e.community));
        let truth = GroundTruth {
            start: self.script.start.clone(),
            period_days: self.script.period_days,
            n_snapshots: self.script.n_snapshots,
            births: self.births,
            entries: self.entries,
        };
        Ok((self.registry, self.events, truth))
    }
}

/// Validates the script, replays it, and writes `nodes.csv`, `events.csv`,
/// `mechanisms.cfg`, and `schedule.json` into `dir`. Nothing is written if
/// any directive is infeasible.
pub fn generate(script: &EvolutionScript, dir: &Path) -> Result<GroundTruth> {
    validate_script(script)?;
    let (registry, events, truth) = Generator::new(script)?.run()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_entities_csv(&registry, &dir.join("nodes.csv"))?;
    write_events_csv(&events, &registry, &dir.join("events.csv"))?;
    let config = mechanism_config(script.period_days);
    fs::write(dir.join("mechanisms.cfg"), config.to_config_string())
        .map_err(|e| Error::io(dir.join("mechanisms.cfg"), e))?;
    write_ground_truth(&truth, &dir.join("schedule.json"))?;
    Ok(truth)
}

/// How much of the planted schedule a tracked history recovers. A scheduled
/// event counts as matched when the best-overlapping detected community at
/// its snapshot (Jaccard over members, above 0.5) carries the same outgoing
/// event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub matched: usize,
    pub total: usize,
    pub mismatches: Vec<String>,
}

impl RecoveryOutcome {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        self.matched as f64 / self.total as f64
    }
}

pub fn recovery_outcome(
    truth: &GroundTruth,
    partitions: &[PartitionFile],
    transitions: &[Vec<EvolutionRecord>],
) -> RecoveryOutcome {
    let mut matched = 0usize;
    let mut mismatches = Vec::new();
    for entry in &truth.entries {
        let mut miss = |why: String| {
            mismatches.push(format!(
                "t{} community {} ({}): {why}",
                entry.from_snapshot,
                entry.community,
                entry.event.as_str()
            ));
        };
        let Some(partition) = partitions.get(entry.from_snapshot) else {
            miss("no partition for this snapshot".into());
            continue;
        };
        let planted: std::collections::BTreeSet<&str> =
            entry.members.iter().map(|s| s.as_str()).collect();
        let best = partition
            .communities
            .iter()
            .enumerate()
            .map(|(ordinal, c)| {
                let detected: std::collections::BTreeSet<&str> =
                    c.members.iter().map(|s| s.as_str()).collect();
                let inter = planted.intersection(&detected).count();
                let union = planted.len() + detected.len() - inter;
                (inter as f64 / union.max(1) as f64, ordinal)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((overlap, ordinal)) = best else {
            miss("snapshot has no detected communities".into());
            continue;
        };
        if overlap <= 0.5 {
            miss(format!("best member overlap is only {overlap:.2}"));
            continue;
        }
        let Some(transition) = transitions.get(entry.from_snapshot) else {
            miss("no transition records for this snapshot".into());
            continue;
        };
        match outgoing_event(transition, ordinal) {
            Some(e) if e == entry.event => matched += 1,
            Some(e) => miss(format!("tracked as {}", e.as_str())),
            None => miss("tracked community has no outgoing event".into()),
        }
    }
    RecoveryOutcome { matched, total: truth.entries.len(), mismatches }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{detect, partition_file, DetectConfig};
    use crate::snapshot::{format_instant, load_entities, load_events, snapshot_series};
    use crate::tracker::{track_series, TrackerConfig};

    fn plain_script(sizes: Vec<usize>, n_snapshots: usize) -> EvolutionScript {
        EvolutionScript {
            seed: 11,
            n_snapshots,
            start: "2020-01-01T00:00:00Z".to_string(),
            period_days: 30,
            initial_communities: sizes,
            // Near-clique density: an isolated sparse random graph can have
            // positive-modularity cuts, which would make these tiny
            // single-digit fixtures split spuriously.
            intra_rate: 0.9,
            noise_rate: 0.01,
            service_mix: 0.5,
            directives: Vec::new(),
        }
    }

    /// Replays generated files end to end: snapshots, detection, tracking.
    fn replay(dir: &Path, truth: &GroundTruth) -> (Vec<PartitionFile>, Vec<Vec<EvolutionRecord>>) {
        let registry = load_entities(&dir.join("nodes.csv")).unwrap();
        let events = load_events(&dir.join("events.csv"), &registry).unwrap();
        let config = MechanismConfig::load(&dir.join("mechanisms.cfg")).unwrap();
        let start = parse_instant(&truth.start).unwrap();
        let end = start + Duration::days(truth.period_days as i64 * (truth.n_snapshots as i64 - 1));
        let snapshots = snapshot_series(&events, &config, start, truth.period_days, end).unwrap();
        assert_eq!(snapshots.len(), truth.n_snapshots);
        let detect_config = DetectConfig::default();
        let partitions: Vec<PartitionFile> = snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let p = detect(s, &detect_config).unwrap();
                partition_file(&p, i, &format_instant(s.instant), &detect_config, &registry)
            })
            .collect();
        let communities: Vec<Vec<crate::community::Community>> = partitions
            .iter()
            .map(|p| crate::community::communities_from_file(p, &registry).unwrap())
            .collect();
        let transitions = track_series(&communities, &TrackerConfig::default()).unwrap();
        (partitions, transitions)
    }

    #[test]
    fn generation_is_deterministic() {
        let script = default_benchmark();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&script, dir_a.path()).unwrap();
        generate(&script, dir_b.path()).unwrap();
        for name in ["nodes.csv", "events.csv", "mechanisms.cfg", "schedule.json"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn default_benchmark_schedule_has_the_designed_shape() {
        let dir = tempfile::tempdir().unwrap();
        let truth = generate(&default_benchmark(), dir.path()).unwrap();
        let counts = truth.counts_by_event();
        assert_eq!(counts[&EvolutionEvent::Growing], 4);
        assert_eq!(counts[&EvolutionEvent::Shrinking], 4);
        assert_eq!(counts[&EvolutionEvent::Splitting], 3);
        assert_eq!(counts[&EvolutionEvent::Merging], 4);
        assert_eq!(counts[&EvolutionEvent::Dissolving], 4);
        assert_eq!(counts[&EvolutionEvent::Continuing], 89);
        assert_eq!(truth.entries.len(), 108);
        // 19 scheduled lifecycle events plus 51 continuing windows have an
        // unbroken three-snapshot history; merge and split rebirths cut the
        // rest short.
        assert_eq!(truth.expected_labeled_samples(), 70);
        // Merged community 8 is re-born at snapshot 5; split parts at 5, 6, 8.
        assert_eq!(truth.born_at(8, 4), Some(0));
        assert_eq!(truth.born_at(8, 7), Some(5));
        assert_eq!(truth.born_at(12, 9), Some(5));
        assert_eq!(truth.born_at(16, 9), Some(8));
    }

    #[test]
    fn single_community_continues_throughout() {
        let script = plain_script(vec![8], 5);
        let dir = tempfile::tempdir().unwrap();
        let truth = generate(&script, dir.path()).unwrap();
        assert_eq!(truth.entries.len(), 4);
        assert!(truth.entries.iter().all(|e| e.event == EvolutionEvent::Continuing));
        let (partitions, transitions) = replay(dir.path(), &truth);
        let outcome = recovery_outcome(&truth, &partitions, &transitions);
        assert_eq!(outcome.matched, 4, "mismatches: {:?}", outcome.mismatches);
    }

    #[test]
    fn scheduled_dissolve_is_tracked_at_the_right_transition() {
        // Three communities so the graph never degenerates to one isolated
        // random subgraph after the dissolve.
        let mut script = plain_script(vec![8, 9, 9], 5);
        script.directives.push(ScheduledDirective {
            snapshot: 3,
            community: 0,
            action: DirectiveAction::Dissolve,
        });
        let dir = tempfile::tempdir().unwrap();
        let truth = generate(&script, dir.path()).unwrap();
        let (partitions, transitions) = replay(dir.path(), &truth);
        let outcome = recovery_outcome(&truth, &partitions, &transitions);
        assert_eq!(outcome.matched, outcome.total, "mismatches: {:?}", outcome.mismatches);
        let dissolving: Vec<&EvolutionRecord> = transitions[2]
            .iter()
            .filter(|r| r.event == EvolutionEvent::Dissolving)
            .collect();
        assert_eq!(dissolving.len(), 1);
        // No dissolving anywhere else in the series.
        for (t, records) in transitions.iter().enumerate() {
            if t != 2 {
                assert!(records.iter().all(|r| r.event != EvolutionEvent::Dissolving));
            }
        }
    }

    #[test]
    fn infeasible_directives_fail_before_any_file_is_written() {
        let check = |script: EvolutionScript, needle: &str| {
            let dir = tempfile::tempdir().unwrap();
            let out = dir.path().join("out");
            let err = generate(&script, &out).unwrap_err().to_string();
            assert!(err.contains(needle), "`{err}` missing `{needle}`");
            assert!(!out.exists(), "output dir created despite {err}");
        };
        // A 4-node community cannot split into parts of at least 4 nodes each.
        let mut s = plain_script(vec![4, 8], 5);
        s.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 0,
            action: DirectiveAction::Split { parts: vec![4, 4, 4] },
        });
        check(s, "sum to 12");

        let mut s = plain_script(vec![8, 8], 5);
        s.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 0,
            action: DirectiveAction::Split { parts: vec![5, 3] },
        });
        check(s, "below 4");

        let mut s = plain_script(vec![8, 8], 5);
        s.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 0,
            action: DirectiveAction::Dissolve,
        });
        s.directives.push(ScheduledDirective {
            snapshot: 3,
            community: 0,
            action: DirectiveAction::Grow { nodes: 2 },
        });
        check(s, "not alive");

        let mut s = plain_script(vec![8, 8], 5);
        s.directives.push(ScheduledDirective {
            snapshot: 6,
            community: 0,
            action: DirectiveAction::Continue,
        });
        check(s, "outside");

        let mut s = plain_script(vec![8, 8, 8], 5);
        s.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 0,
            action: DirectiveAction::Merge { with: vec![1] },
        });
        s.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 1,
            action: DirectiveAction::Shrink { nodes: 2 },
        });
        check(s, "consumed");

        let mut s = plain_script(vec![8], 5);
        s.intra_rate = 0.0;
        let dir = tempfile::tempdir().unwrap();
        assert!(generate(&s, &dir.path().join("x")).is_err());
    }

    #[test]
    fn growth_registers_fresh_mixed_nodes() {
        let mut script = plain_script(vec![8], 6);
        script.seed = 3;
        script.directives.push(ScheduledDirective {
            snapshot: 2,
            community: 0,
            action: DirectiveAction::Grow { nodes: 30 },
        });
        let dir = tempfile::tempdir().unwrap();
        let truth = generate(&script, dir.path()).unwrap();
        let registry = load_entities(&dir.path().join("nodes.csv")).unwrap();
        assert_eq!(registry.len(), 38);
        let kinds: std::collections::BTreeSet<EntityKind> =
            registry.iter().map(|(_, _, k)| k).collect();
        assert_eq!(kinds.len(), 2, "expected both entity kinds among 38 nodes");
        let growing: Vec<&ScheduledEvent> = truth
            .entries
            .iter()
            .filter(|e| e.event == EvolutionEvent::Growing)
            .collect();
        assert_eq!(growing.len(), 1);
        assert_eq!(growing[0].from_snapshot, 1);
        assert_eq!(growing[0].members.len(), 8);
    }

    #[test]
    fn scripts_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        let script = default_benchmark();
        save_script(&script, &path).unwrap();
        assert_eq!(load_script(&path).unwrap(), script);
    }
}
