//! Evolution tracking: matches the communities of consecutive snapshots and
//! labels each transition with one of seven event types.
//!
//! The match strength from community `C1` to `C2` is the inclusion measure
//!
//! ```text
//! I(C1, C2) = (|C1 ∩ C2| / |C1|) * (pos(C1 ∩ C2) / pos(C1))
//! ```
//!
//! where `pos` sums the social position of the given members within `C1` —
//! overlap counted both by head and by importance. With forward inclusion
//! `F = I(C1, C2)`, backward `B = I(C2, C1)`, and thresholds `alpha`, `beta`,
//! a pair matches when `F >= alpha` or `B >= beta`. One predecessor matched
//! backward-only by two or more successors splits; two or more predecessors
//! matched forward-only into one successor merge; the remaining matched pairs
//! continue, grow, or shrink according to the size relation; predecessors
//! with no record dissolve and successors with no record form.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::community::{community_id, Community};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvolutionEvent {
    Forming,
    Continuing,
    Growing,
    Shrinking,
    Splitting,
    Merging,
    Dissolving,
}

impl EvolutionEvent {
    pub const ALL: [EvolutionEvent; 7] = [
        EvolutionEvent::Forming,
        EvolutionEvent::Continuing,
        EvolutionEvent::Growing,
        EvolutionEvent::Shrinking,
        EvolutionEvent::Splitting,
        EvolutionEvent::Merging,
        EvolutionEvent::Dissolving,
    ];

    /// The six event types that can label a community's next transition
    /// (everything except `forming`, which has no predecessor).
    pub const OUTGOING: [EvolutionEvent; 6] = [
        EvolutionEvent::Continuing,
        EvolutionEvent::Growing,
        EvolutionEvent::Shrinking,
        EvolutionEvent::Splitting,
        EvolutionEvent::Merging,
        EvolutionEvent::Dissolving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvolutionEvent::Forming => "forming",
            EvolutionEvent::Continuing => "continuing",
            EvolutionEvent::Growing => "growing",
            EvolutionEvent::Shrinking => "shrinking",
            EvolutionEvent::Splitting => "splitting",
            EvolutionEvent::Merging => "merging",
            EvolutionEvent::Dissolving => "dissolving",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { alpha: 0.5, beta: 0.5 }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Inclusion of `c1` in `c2`: the member-count overlap ratio times the share
/// of `c1`'s social-position mass carried by the overlap. Symmetric in
/// neither argument; `I(C1, C2)` uses positions from `C1`.
pub fn inclusion(c1: &Community, c2: &Community) -> f64 {
    if c1.members.is_empty() {
        return 0.0;
    }
    let overlap: Vec<_> = c1.members.intersection(&c2.members).copied().collect();
    if overlap.is_empty() {
        return 0.0;
    }
    let count_ratio = overlap.len() as f64 / c1.members.len() as f64;
    let overlap_mass = c1.position_mass(overlap);
    let total_mass = c1.position_mass(c1.members.iter().copied());
    count_ratio * (overlap_mass / total_mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionPair {
    /// Community ordinal in the earlier partition.
    pub predecessor: usize,
    /// Community ordinal in the later partition.
    pub successor: usize,
    pub forward: f64,
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRecord {
    pub event: EvolutionEvent,
    pub predecessors: Vec<usize>,
    pub successors: Vec<usize>,
    pub inclusions: Vec<InclusionPair>,
}

/// Classifies the transition between two consecutive partitions. Every
/// predecessor and every successor community appears in at least one record.
pub fn classify_transition(
    prev: &[Community],
    next: &[Community],
    config: &TrackerConfig,
) -> Result<Vec<EvolutionRecord>> {
    config.validate()?;
    let (alpha, beta) = (config.alpha, config.beta);
    let np = prev.len();
    let ns = next.len();
    let mut fwd = vec![vec![0.0f64; ns]; np];
    let mut bwd = vec![vec![0.0f64; ns]; np];
    for (i, p) in prev.iter().enumerate() {
        for (j, s) in next.iter().enumerate() {
            fwd[i][j] = inclusion(p, s);
            bwd[i][j] = inclusion(s, p);
        }
    }
    let pair = |i: usize, j: usize| InclusionPair {
        predecessor: i,
        successor: j,
        forward: fwd[i][j],
        backward: bwd[i][j],
    };

    let mut records = Vec::new();
    let mut consumed = vec![vec![false; ns]; np];
    let mut pred_covered = vec![false; np];
    let mut succ_covered = vec![false; ns];
    let cover = |records: &mut Vec<EvolutionRecord>,
                     pred_covered: &mut Vec<bool>,
                     succ_covered: &mut Vec<bool>,
                     rec: EvolutionRecord| {
        for &i in &rec.predecessors {
            pred_covered[i] = true;
        }
        for &j in &rec.successors {
            succ_covered[j] = true;
        }
        records.push(rec);
    };

    // Multi-match groups take precedence over one-to-one matches.
    for i in 0..np {
        let parts: Vec<usize> =
            (0..ns).filter(|&j| fwd[i][j] < alpha && bwd[i][j] >= beta).collect();
        if parts.len() >= 2 {
            for &j in &parts {
                consumed[i][j] = true;
            }
            cover(
                &mut records,
                &mut pred_covered,
                &mut succ_covered,
                EvolutionRecord {
                    event: EvolutionEvent::Splitting,
                    predecessors: vec![i],
                    successors: parts.clone(),
                    inclusions: parts.iter().map(|&j| pair(i, j)).collect(),
                },
            );
        }
    }
    for j in 0..ns {
        let sources: Vec<usize> = (0..np)
            .filter(|&i| !consumed[i][j] && fwd[i][j] >= alpha && bwd[i][j] < beta)
            .collect();
        if sources.len() >= 2 {
            for &i in &sources {
                consumed[i][j] = true;
            }
            cover(
                &mut records,
                &mut pred_covered,
                &mut succ_covered,
                EvolutionRecord {
                    event: EvolutionEvent::Merging,
                    predecessors: sources.clone(),
                    successors: vec![j],
                    inclusions: sources.iter().map(|&i| pair(i, j)).collect(),
                },
            );
        }
    }
    // One-to-one matches: continuing / growing / shrinking by size relation.
    for i in 0..np {
        for j in 0..ns {
            if consumed[i][j] {
                continue;
            }
            let (f, b) = (fwd[i][j], bwd[i][j]);
            if f < alpha && b < beta {
                continue;
            }
            let (sp, ss) = (prev[i].size(), next[j].size());
            let event = if f >= alpha && b >= beta {
                match sp.cmp(&ss) {
                    std::cmp::Ordering::Less => EvolutionEvent::Growing,
                    std::cmp::Ordering::Equal => EvolutionEvent::Continuing,
                    std::cmp::Ordering::Greater => EvolutionEvent::Shrinking,
                }
            } else if f >= alpha {
                // Forward-only single match: the successor holds essentially
                // all of the predecessor, so the community persists; the size
                // relation decides the direction.
                if sp <= ss {
                    EvolutionEvent::Growing
                } else {
                    EvolutionEvent::Shrinking
                }
            } else {
                // Backward-only single match, mirror case.
                if sp >= ss {
                    EvolutionEvent::Shrinking
                } else {
                    EvolutionEvent::Growing
                }
            };
            cover(
                &mut records,
                &mut pred_covered,
                &mut succ_covered,
                EvolutionRecord {
                    event,
                    predecessors: vec![i],
                    successors: vec![j],
                    inclusions: vec![pair(i, j)],
                },
            );
        }
    }
    for (i, covered) in pred_covered.iter().enumerate() {
        if !covered {
            records.push(EvolutionRecord {
                event: EvolutionEvent::Dissolving,
                predecessors: vec![i],
                successors: Vec::new(),
                inclusions: Vec::new(),
            });
        }
    }
    for (j, covered) in succ_covered.iter().enumerate() {
        if !covered {
            records.push(EvolutionRecord {
                event: EvolutionEvent::Forming,
                predecessors: Vec::new(),
                successors: vec![j],
                inclusions: Vec::new(),
            });
        }
    }
    Ok(records)
}

/// Tracks a whole partition sequence; element `t` of the result describes the
/// transition from snapshot `t` to `t + 1`.
pub fn track_series(
    partitions: &[Vec<Community>],
    config: &TrackerConfig,
) -> Result<Vec<Vec<EvolutionRecord>>> {
    partitions
        .windows(2)
        .map(|w| classify_transition(&w[0], &w[1], config))
        .collect()
}

/// The event labeling the next transition of predecessor community `ordinal`,
/// if any. When a community takes part in several records, structural events
/// win over one-to-one ones.
pub fn outgoing_event(transition: &[EvolutionRecord], ordinal: usize) -> Option<EvolutionEvent> {
    const PRIORITY: [EvolutionEvent; 6] = [
        EvolutionEvent::Splitting,
        EvolutionEvent::Merging,
        EvolutionEvent::Dissolving,
        EvolutionEvent::Shrinking,
        EvolutionEvent::Growing,
        EvolutionEvent::Continuing,
    ];
    let mine: Vec<&EvolutionRecord> =
        transition.iter().filter(|r| r.predecessors.contains(&ordinal)).collect();
    PRIORITY.into_iter().find(|&e| mine.iter().any(|r| r.event == e))
}

/// Community address: (snapshot index, ordinal within the partition).
pub type CommunityKey = (usize, usize);

/// Predecessor links over the whole series. A community has at most one
/// predecessor: the one-to-one record it inherits from. Communities created
/// by forming, splitting, or merging start new lineages.
#[derive(Debug, Clone, Default)]
pub struct Lineages {
    predecessor: std::collections::BTreeMap<CommunityKey, CommunityKey>,
}

impl Lineages {
    pub fn predecessor_of(&self, c: CommunityKey) -> Option<CommunityKey> {
        self.predecessor.get(&c).copied()
    }

    pub fn root_of(&self, mut c: CommunityKey) -> CommunityKey {
        while let Some(p) = self.predecessor_of(c) {
            c = p;
        }
        c
    }

    /// The chain root..=c in chronological order.
    pub fn chain_ending_at(&self, c: CommunityKey) -> Vec<CommunityKey> {
        let mut chain = vec![c];
        let mut cur = c;
        while let Some(p) = self.predecessor_of(cur) {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Stable lineage id: the external id of the lineage root.
    pub fn lineage_id(&self, c: CommunityKey) -> String {
        let (snapshot, ordinal) = self.root_of(c);
        community_id(snapshot, ordinal)
    }

    pub fn len(&self) -> usize {
        self.predecessor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predecessor.is_empty()
    }
}

/// Builds predecessor links from the transition records. `transitions[t]`
/// describes snapshot `t` to `t + 1`. If a community is both the product of a
/// structural event (forming/splitting/merging) and the successor of a
/// one-to-one record, the structural event wins and the community starts a
/// new lineage. Among several one-to-one candidates the link with the highest
/// forward inclusion wins (ties: higher backward inclusion, then the smaller
/// predecessor ordinal).
pub fn build_lineages(transitions: &[Vec<EvolutionRecord>]) -> Lineages {
    let mut lineages = Lineages::default();
    for (t, records) in transitions.iter().enumerate() {
        let mut is_root: BTreeSet<usize> = BTreeSet::new();
        for rec in records {
            match rec.event {
                EvolutionEvent::Forming | EvolutionEvent::Splitting | EvolutionEvent::Merging => {
                    is_root.extend(rec.successors.iter().copied());
                }
                _ => {}
            }
        }
        let mut best: std::collections::BTreeMap<usize, (f64, f64, usize)> =
            std::collections::BTreeMap::new();
        for rec in records {
            if !matches!(
                rec.event,
                EvolutionEvent::Continuing | EvolutionEvent::Growing | EvolutionEvent::Shrinking
            ) {
                continue;
            }
            let (i, j) = (rec.predecessors[0], rec.successors[0]);
            if is_root.contains(&j) {
                continue;
            }
            let inc = rec.inclusions[0];
            let candidate = (inc.forward, inc.backward, i);
            let better = match best.get(&j) {
                None => true,
                Some(&(f, b, pi)) => {
                    (inc.forward, inc.backward) > (f, b)
                        || (inc.forward == f && inc.backward == b && i < pi)
                }
            };
            if better {
                best.insert(j, candidate);
            }
        }
        for (j, (_, _, i)) in best {
            lineages.predecessor.insert((t + 1, j), (t, i));
        }
    }
    lineages
}

/// Counts records per event type for one transition.
pub fn event_counts(transition: &[EvolutionRecord]) -> std::collections::BTreeMap<EvolutionEvent, usize> {
    let mut counts: std::collections::BTreeMap<EvolutionEvent, usize> = std::collections::BTreeMap::new();
    for rec in transition {
        *counts.entry(rec.event).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionFile {
    pub from_snapshot: usize,
    pub records: Vec<RecordFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFile {
    pub event: EvolutionEvent,
    pub predecessors: Vec<usize>,
    pub predecessor_ids: Vec<String>,
    pub successors: Vec<usize>,
    pub successor_ids: Vec<String>,
    pub inclusions: Vec<InclusionPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventsFile {
    pub config: TrackerConfig,
    pub transitions: Vec<TransitionFile>,
}

pub fn events_file(transitions: &[Vec<EvolutionRecord>], config: &TrackerConfig) -> EventsFile {
    EventsFile {
        config: *config,
        transitions: transitions
            .iter()
            .enumerate()
            .map(|(t, records)| TransitionFile {
                from_snapshot: t,
                records: records
                    .iter()
                    .map(|r| RecordFile {
                        event: r.event,
                        predecessors: r.predecessors.clone(),
                        predecessor_ids: r.predecessors.iter().map(|&i| community_id(t, i)).collect(),
                        successors: r.successors.clone(),
                        successor_ids: r.successors.iter().map(|&j| community_id(t + 1, j)).collect(),
                        inclusions: r.inclusions.clone(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn write_events_file(file: &EventsFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_events_file(path: &Path) -> Result<EventsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// Rebuilds the in-memory transition records from a persisted events file.
pub fn transitions_from_file(file: &EventsFile) -> Vec<Vec<EvolutionRecord>> {
    file.transitions
        .iter()
        .map(|t| {
            t.records
                .iter()
                .map(|r| EvolutionRecord {
                    event: r.event,
                    predecessors: r.predecessors.clone(),
                    successors: r.successors.clone(),
                    inclusions: r.inclusions.clone(),
                })
                .collect()
        })
        .collect()
}
