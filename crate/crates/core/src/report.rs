//! Plot-ready report tables derived from run artifacts: ecosystem size over
//! time, evolution-event distributions, attribution heatmaps, dependence
//! tables for one feature across the window, and per-sample decision
//! breakdowns.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::community::PartitionFile;
use crate::error::{Error, Result};
use crate::explain::{ClassExplanation, ImportanceSummary, ShapValues};
use crate::features::{feature_index, N_FEATURES};
use crate::features::SequenceSample;
use crate::snapshot::Snapshot;
use crate::tracker::{EventsFile, EvolutionEvent};

/// One snapshot's headline numbers: how large the ecosystem graph is and how
/// many communities the detector kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcosystemRow {
    pub snapshot: usize,
    pub instant: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_communities: usize,
}

pub fn ecosystem_rows(snapshots: &[Snapshot], partitions: &[PartitionFile]) -> Result<Vec<EcosystemRow>> {
    if snapshots.len() != partitions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} snapshots but {} partitions",
            snapshots.len(),
            partitions.len()
        )));
    }
    Ok(snapshots
        .iter()
        .zip(partitions)
        .map(|(s, p)| EcosystemRow {
            snapshot: p.snapshot_index,
            instant: p.instant.clone(),
            n_nodes: s.node_count(),
            n_edges: s.edge_count(),
            n_communities: p.communities.len(),
        })
        .collect())
}

pub fn write_ecosystem_csv(rows: &[EcosystemRow], path: &Path) -> Result<()> {
    let mut out = String::from("snapshot,instant,n_nodes,n_edges,n_communities\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.snapshot, r.instant, r.n_nodes, r.n_edges, r.n_communities
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub snapshot: usize,
    pub event: EvolutionEvent,
    pub count: usize,
}

/// Event counts per transition, ordered by snapshot then event declaration
/// order. Zero counts are omitted.
pub fn event_distribution(events: &EventsFile) -> Vec<DistributionRow> {
    let mut rows = Vec::new();
    for transition in &events.transitions {
        let mut counts: BTreeMap<EvolutionEvent, usize> = BTreeMap::new();
        for rec in &transition.records {
            *counts.entry(rec.event).or_insert(0) += 1;
        }
        for event in EvolutionEvent::ALL {
            if let Some(&count) = counts.get(&event) {
                rows.push(DistributionRow { snapshot: transition.from_snapshot, event, count });
            }
        }
    }
    rows
}

pub fn write_event_distribution_csv(rows: &[DistributionRow], path: &Path) -> Result<()> {
    let mut out = String::from("snapshot,event,count\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.snapshot, r.event.as_str(), r.count));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub class: String,
    pub timestep: String,
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Flattens a mean-|shap| summary into rows keyed by class, window timestep
/// and base feature. Model feature names must follow the
/// `{tm2|tm1|t0}_{feature}` sequence layout.
pub fn heatmap_rows(summary: &ImportanceSummary) -> Result<Vec<HeatmapRow>> {
    let mut split = Vec::with_capacity(summary.feature_names.len());
    for name in &summary.feature_names {
        let (timestep, feature) = name
            .split_once('_')
            .filter(|(p, _)| matches!(*p, "tm2" | "tm1" | "t0"))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("feature `{name}` is not a sequence column"))
            })?;
        split.push((timestep.to_string(), feature.to_string()));
    }
    let mut rows = Vec::with_capacity(summary.class_names.len() * split.len());
    for (c, class) in summary.class_names.iter().enumerate() {
        for (f, (timestep, feature)) in split.iter().enumerate() {
            rows.push(HeatmapRow {
                class: class.clone(),
                timestep: timestep.clone(),
                feature: feature.clone(),
                mean_abs_shap: summary.mean_abs[c][f],
            });
        }
    }
    Ok(rows)
}

pub fn write_heatmap_csv(rows: &[HeatmapRow], path: &Path) -> Result<()> {
    let mut out = String::from("class,timestep,feature,mean_abs_shap\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.class, r.timestep, r.feature, r.mean_abs_shap));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One explained sample projected onto a single base feature: the newest
/// value, its attribution toward the sample's labeled class, and the two
/// consecutive changes across the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceRow {
    pub x: f64,
    pub y: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub label: String,
}

pub fn dependence_rows(
    samples: &[SequenceSample],
    shap: &[ShapValues],
    class_names: &[String],
    feature: &str,
) -> Result<Vec<DependenceRow>> {
    let base = feature_index(feature)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{feature}`")))?;
    if samples.len() != shap.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} attribution sets",
            samples.len(),
            shap.len()
        )));
    }
    let (j_tm2, j_tm1, j_t0) = (base, N_FEATURES + base, 2 * N_FEATURES + base);
    let mut rows = Vec::with_capacity(samples.len());
    for (s, sv) in samples.iter().zip(shap) {
        let class = class_names.iter().position(|c| c == s.label.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("label `{}` not among model classes", s.label.as_str()))
        })?;
        rows.push(DependenceRow {
            x: s.x[j_t0],
            y: sv.values[j_t0][class],
            delta1: s.x[j_tm1] - s.x[j_tm2],
            delta2: s.x[j_t0] - s.x[j_tm1],
            label: s.label.as_str().to_string(),
        });
    }
    Ok(rows)
}

pub fn write_dependence_csv(rows: &[DependenceRow], path: &Path) -> Result<()> {
    let mut out = String::from("x,y,delta1,delta2,label\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.x, r.y, r.delta1, r.delta2, r.label));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Full per-class breakdown of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub lineage_id: String,
    /// Snapshot index of the newest feature block.
    pub t: usize,
    pub label: String,
    pub predicted: String,
    pub classes: Vec<ClassExplanation>,
}

/// All explained samples of a run plus the settings they were produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationsFile {
    pub dependence_feature: String,
    pub top_k: usize,
    pub samples: Vec<DecisionRecord>,
}

pub fn write_explanations(file: &ExplanationsFile, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(file).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_explanations(path: &Path) -> Result<ExplanationsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// The showcased decision plus corpus counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub featured: DecisionRecord,
    pub n_samples: usize,
    pub by_label: BTreeMap<String, usize>,
}

fn predicted_probability(r: &DecisionRecord) -> f64 {
    r.classes
        .iter()
        .find(|c| c.class_name == r.predicted)
        .map(|c| c.probability)
        .unwrap_or(0.0)
}

/// Picks the decision to showcase: the most confident prediction of a
/// non-continuing event, falling back to the most confident prediction
/// overall. Ties go to the earlier snapshot, then the smaller lineage id.
pub fn featured_decision(samples: &[DecisionRecord]) -> Option<&DecisionRecord> {
    fn better(a: &DecisionRecord, b: &DecisionRecord) -> bool {
        let eventful = |r: &DecisionRecord| r.predicted != EvolutionEvent::Continuing.as_str();
        if eventful(a) != eventful(b) {
            return eventful(a);
        }
        let (pa, pb) = (predicted_probability(a), predicted_probability(b));
        if pa != pb {
            return pa > pb;
        }
        (a.t, &a.lineage_id) < (b.t, &b.lineage_id)
    }
    let mut best: Option<&DecisionRecord> = None;
    for r in samples {
        if best.is_none_or(|b| better(r, b)) {
            best = Some(r);
        }
    }
    best
}

pub fn decision_report(samples: &[DecisionRecord]) -> Result<DecisionReport> {
    let featured = featured_decision(samples)
        .ok_or_else(|| Error::InvalidArgument("no explained samples to report on".into()))?;
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
    for r in samples {
        *by_label.entry(r.label.clone()).or_insert(0) += 1;
    }
    Ok(DecisionReport { featured: featured.clone(), n_samples: samples.len(), by_label })
}

pub fn write_decision_report(report: &DecisionReport, path: &Path) -> Result<()> {
    let text =
        serde_json::to_string_pretty(report).map_err(|e| Error::Json { path: path.into(), source: e })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::ClassExplanation;

    fn record(lineage: &str, t: usize, predicted: &str, prob: f64) -> DecisionRecord {
        DecisionRecord {
            lineage_id: lineage.to_string(),
            t,
            label: "continuing".to_string(),
            predicted: predicted.to_string(),
            classes: vec![ClassExplanation {
                class_name: predicted.to_string(),
                probability: prob,
                base: 0.2,
                top_contributions: vec![],
            }],
        }
    }

    #[test]
    fn featured_decision_prefers_eventful_predictions() {
        let samples = vec![
            record("s0_c0", 4, "continuing", 0.99),
            record("s0_c1", 3, "dissolving", 0.60),
            record("s0_c2", 5, "splitting", 0.80),
        ];
        let f = featured_decision(&samples).unwrap();
        assert_eq!(f.lineage_id, "s0_c2");
    }

    #[test]
    fn featured_decision_breaks_ties_on_snapshot_then_lineage() {
        let samples = vec![
            record("s0_c5", 4, "merging", 0.7),
            record("s0_c1", 4, "merging", 0.7),
            record("s0_c0", 6, "merging", 0.7),
        ];
        assert_eq!(featured_decision(&samples).unwrap().lineage_id, "s0_c1");
        assert!(featured_decision(&[]).is_none());
    }

    #[test]
    fn heatmap_rows_split_sequence_columns() {
        let summary = ImportanceSummary {
            class_names: vec!["continuing".into(), "growing".into()],
            feature_names: vec!["tm2_size".into(), "tm1_size".into(), "t0_cohesion".into()],
            mean_abs: vec![vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6]],
        };
        let rows = heatmap_rows(&summary).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].timestep, "tm2");
        assert_eq!(rows[0].feature, "size");
        assert_eq!(rows[2].timestep, "t0");
        assert_eq!(rows[2].feature, "cohesion");
        assert_eq!(rows[5].mean_abs_shap, 0.6);

        let bad = ImportanceSummary {
            class_names: vec!["continuing".into()],
            feature_names: vec!["size".into()],
            mean_abs: vec![vec![0.1]],
        };
        assert!(heatmap_rows(&bad).is_err());
    }

    #[test]
    fn dependence_rows_use_newest_block_and_label_class() {
        use crate::features::N_SEQUENCE_VALUES;
        use crate::tracker::EvolutionEvent;
        let mut x = vec![0.0; N_SEQUENCE_VALUES];
        let base = feature_index("size").unwrap();
        x[base] = 10.0;
        x[N_FEATURES + base] = 12.0;
        x[2 * N_FEATURES + base] = 9.0;
        let sample = SequenceSample {
            lineage_id: "s0_c0".into(),
            t: 2,
            label: EvolutionEvent::Shrinking,
            x,
        };
        let mut values = vec![vec![0.0; 2]; N_SEQUENCE_VALUES];
        values[2 * N_FEATURES + base] = vec![0.25, -0.5];
        let sv = ShapValues { base: vec![0.5, 0.5], values };
        let class_names = vec!["continuing".to_string(), "shrinking".to_string()];
        let rows = dependence_rows(&[sample], &[sv], &class_names, "size").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].x, 9.0);
        assert_eq!(rows[0].y, -0.5);
        assert_eq!(rows[0].delta1, 2.0);
        assert_eq!(rows[0].delta2, -3.0);
        assert_eq!(rows[0].label, "shrinking");
    }
}
