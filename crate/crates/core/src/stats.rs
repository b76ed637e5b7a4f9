//! Population estimates, review accounting, per-individual and
//! per-strategy statistics, and GeoJSON export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use chrono::DateTime;
use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::{Camera, Strategy};
use crate::lca::Clustering;
use crate::pipeline::Encounter;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no individual was seen in both events; the estimate is undefined")]
    NoOverlap,
    #[error("annotations without an event assignment: {}", .0.join(", "))]
    UnmappedAnnotations(Vec<String>),
    #[error("invalid capture summary: {0}")]
    InvalidSummary(String),
    #[error("events file line {line}: {reason}")]
    EventsFile { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSummary {
    pub n1: u64,
    pub n2: u64,
    pub m: u64,
}

impl CaptureSummary {
    pub fn new(n1: u64, n2: u64, m: u64) -> Result<Self, StatsError> {
        if m > n1.min(n2) {
            return Err(StatsError::InvalidSummary(format!(
                "m = {m} exceeds min(n1, n2) = {}",
                n1.min(n2)
            )));
        }
        Ok(Self { n1, n2, m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub n_hat: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
}

impl fmt::Display for PopulationEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.0} ± {:.0} (95% CI {:.1} to {:.1})",
            self.n_hat,
            1.96 * self.stderr,
            self.ci95.0,
            self.ci95.1
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    LincolnPetersen,
    Chapman,
}

const Z95: f64 = 1.96;

fn with_interval(s: CaptureSummary, n_hat: f64, variance: f64) -> PopulationEstimate {
    let stderr = variance.max(0.0).sqrt();
    let floor = s.n1.max(s.n2) as f64;
    let low = (n_hat - Z95 * stderr).max(floor).min(n_hat);
    PopulationEstimate {
        n_hat,
        stderr,
        ci95: (low, n_hat + Z95 * stderr),
    }
}

/// Lincoln-Petersen index `n1 * n2 / m` with its usual variance and a
/// normal-approximation interval clamped below at `max(n1, n2)`.
pub fn lincoln_petersen(s: CaptureSummary) -> Result<PopulationEstimate, StatsError> {
    if s.m == 0 {
        return Err(StatsError::NoOverlap);
    }
    let (n1, n2, m) = (s.n1 as f64, s.n2 as f64, s.m as f64);
    let n_hat = n1 * n2 / m;
    let variance = n1 * n2 * (n1 - m) * (n2 - m) / (m * m * m);
    Ok(with_interval(s, n_hat, variance))
}

/// Chapman's bias-corrected variant; defined even when `m = 0`.
pub fn chapman(s: CaptureSummary) -> PopulationEstimate {
    let (n1, n2, m) = (s.n1 as f64, s.n2 as f64, s.m as f64);
    let n_hat = (n1 + 1.0) * (n2 + 1.0) / (m + 1.0) - 1.0;
    let variance = (n1 + 1.0) * (n2 + 1.0) * (n1 - m) * (n2 - m) / ((m + 1.0).powi(2) * (m + 2.0));
    with_interval(s, n_hat, variance)
}

pub fn estimate(s: CaptureSummary, estimator: Estimator) -> Result<PopulationEstimate, StatsError> {
    match estimator {
        Estimator::LincolnPetersen => lincoln_petersen(s),
        Estimator::Chapman => Ok(chapman(s)),
    }
}

/// Share of reviews made by the algorithm; 1.0 when there were none.
pub fn automation_rate(algorithmic: u64, human: u64) -> f64 {
    let total = algorithmic + human;
    if total == 0 {
        1.0
    } else {
        algorithmic as f64 / total as f64
    }
}

/// Percentage with one decimal, e.g. `98.2%`.
pub fn format_percent(rate: f64) -> String {
    format!("{:.1}%", rate * 100.0)
}

/// Parse an `annotation_id,event` CSV (header required, events 1 or 2).
pub fn parse_events<R: Read>(reader: R) -> Result<BTreeMap<String, u8>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| StatsError::EventsFile {
            line: 1,
            reason: format!("missing column {name:?}"),
        })
    };
    let (id_col, ev_col) = (col("annotation_id")?, col("event")?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let id = rec.get(id_col).unwrap_or_default();
        let ev = rec.get(ev_col).unwrap_or_default();
        let event = match ev {
            "1" => 1,
            "2" => 2,
            other => {
                return Err(StatsError::EventsFile {
                    line,
                    reason: format!("event must be 1 or 2, got {other:?}"),
                })
            }
        };
        if id.is_empty() {
            return Err(StatsError::EventsFile {
                line,
                reason: "empty annotation_id".into(),
            });
        }
        out.insert(id.to_string(), event);
    }
    Ok(out)
}

/// Distinct clusters seen in each event and in both.
pub fn capture_summary(
    clustering: &Clustering,
    event_of: &BTreeMap<String, u8>,
) -> Result<CaptureSummary, StatsError> {
    let mut unmapped = Vec::new();
    let mut seen: [BTreeSet<&str>; 2] = [BTreeSet::new(), BTreeSet::new()];
    for (ann, cluster) in &clustering.assignments {
        match event_of.get(ann) {
            Some(&e @ (1 | 2)) => {
                seen[e as usize - 1].insert(cluster.as_str());
            }
            _ => unmapped.push(ann.clone()),
        }
    }
    if !unmapped.is_empty() {
        return Err(StatsError::UnmappedAnnotations(unmapped));
    }
    let m = seen[0].intersection(&seen[1]).count() as u64;
    CaptureSummary::new(seen[0].len() as u64, seen[1].len() as u64, m)
}

/// The cluster an encounter belongs to: its representative's, or failing
/// that, the first clustered member's.
fn encounter_cluster<'c>(clustering: &'c Clustering, enc: &Encounter) -> Option<&'c str> {
    clustering
        .cluster_of(&enc.representative_id)
        .or_else(|| enc.member_ids.iter().find_map(|m| clustering.cluster_of(m)))
}

/// Encounters grouped by cluster, each list in (time, camera) order.
pub fn encounters_by_cluster<'e>(
    clustering: &Clustering,
    encounters: &'e [Encounter],
) -> BTreeMap<String, Vec<&'e Encounter>> {
    let mut out: BTreeMap<String, Vec<&Encounter>> = BTreeMap::new();
    for enc in encounters {
        if let Some(c) = encounter_cluster(clustering, enc) {
            out.entry(c.to_string()).or_default().push(enc);
        }
    }
    for list in out.values_mut() {
        list.sort_by(|a, b| {
            (a.start_epoch_s, &a.camera_id, &a.encounter_id).cmp(&(b.start_epoch_s, &b.camera_id, &b.encounter_id))
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualRow {
    pub encounters: usize,
    pub cameras: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualStats {
    pub per_cluster: BTreeMap<String, IndividualRow>,
    pub mean_encounters: f64,
    pub mean_cameras: f64,
    /// Encounters per individual to number of individuals.
    pub encounter_histogram: BTreeMap<usize, usize>,
    /// Distinct cameras per individual to number of individuals.
    pub camera_histogram: BTreeMap<usize, usize>,
}

pub fn individual_stats(clustering: &Clustering, encounters: &[Encounter]) -> IndividualStats {
    let per_cluster: BTreeMap<String, IndividualRow> = encounters_by_cluster(clustering, encounters)
        .into_iter()
        .map(|(c, list)| {
            let cameras: BTreeSet<&str> = list.iter().map(|e| e.camera_id.as_str()).collect();
            (c, IndividualRow {
                encounters: list.len(),
                cameras: cameras.len(),
            })
        })
        .collect();
    let n = per_cluster.len();
    let mean = |f: fn(&IndividualRow) -> usize| {
        if n == 0 {
            0.0
        } else {
            per_cluster.values().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    let histogram = |f: fn(&IndividualRow) -> usize| {
        let mut h = BTreeMap::new();
        for row in per_cluster.values() {
            *h.entry(f(row)).or_insert(0) += 1;
        }
        h
    };
    IndividualStats {
        mean_encounters: mean(|r| r.encounters),
        mean_cameras: mean(|r| r.cameras),
        encounter_histogram: histogram(|r| r.encounters),
        camera_histogram: histogram(|r| r.cameras),
        per_cluster,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub cameras: usize,
    /// Distinct individuals seen by any camera of the strategy.
    pub total: usize,
    /// Mean distinct individuals per camera.
    pub avg: f64,
    /// Mean first sightings per camera.
    pub new: f64,
    /// Sum of first sightings over the strategy's cameras.
    pub new_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub rows: BTreeMap<Strategy, StrategyRow>,
}

impl StrategyStats {
    pub fn new_total(&self) -> usize {
        self.rows.values().map(|r| r.new_total).sum()
    }
}

impl fmt::Display for StrategyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>7} {:>7} {:>7} {:>7}", "strategy", "cameras", "total", "avg", "new")?;
        for (s, r) in &self.rows {
            writeln!(
                f,
                "{:<18} {:>7} {:>7} {:>7.2} {:>7.2}",
                s.as_str(),
                r.cameras,
                r.total,
                r.avg,
                r.new
            )?;
        }
        Ok(())
    }
}

/// Per-strategy sighting statistics. Averages run over every registered
/// camera of the strategy, including cameras that saw nothing.
pub fn strategy_stats(clustering: &Clustering, encounters: &[Encounter], cameras: &[Camera]) -> StrategyStats {
    let by_cluster = encounters_by_cluster(clustering, encounters);
    let mut seen_at: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut firsts: BTreeMap<&str, usize> = BTreeMap::new();
    for (cluster, list) in &by_cluster {
        for e in list {
            seen_at.entry(e.camera_id.as_str()).or_default().insert(cluster.as_str());
        }
        // Lists are sorted by (time, camera), so the head is the first sighting.
        if let Some(first) = list.first() {
            *firsts.entry(first.camera_id.as_str()).or_insert(0) += 1;
        }
    }
    let mut rows = BTreeMap::new();
    for strategy in Strategy::ALL {
        let cams: Vec<&Camera> = cameras.iter().filter(|c| c.strategy == strategy).collect();
        if cams.is_empty() {
            continue;
        }
        let mut individuals: BTreeSet<&str> = BTreeSet::new();
        let mut per_camera = 0usize;
        let mut new_total = 0usize;
        for cam in &cams {
            if let Some(set) = seen_at.get(cam.camera_id.as_str()) {
                individuals.extend(set);
                per_camera += set.len();
            }
            new_total += firsts.get(cam.camera_id.as_str()).copied().unwrap_or(0);
        }
        rows.insert(strategy, StrategyRow {
            cameras: cams.len(),
            total: individuals.len(),
            avg: per_camera as f64 / cams.len() as f64,
            new: new_total as f64 / cams.len() as f64,
            new_total,
        });
    }
    StrategyStats { rows }
}

/// One point feature per encounter, optionally restricted to some clusters.
/// Encounters at cameras without coordinates are skipped with a warning.
pub fn export_geojson(
    clustering: &Clustering,
    encounters: &[Encounter],
    cameras: &[Camera],
    cluster_filter: Option<&BTreeSet<String>>,
) -> Value {
    let cams: BTreeMap<&str, &Camera> = cameras.iter().map(|c| (c.camera_id.as_str(), c)).collect();
    let mut features = Vec::new();
    for (cluster, list) in encounters_by_cluster(clustering, encounters) {
        if cluster_filter.is_some_and(|f| !f.contains(&cluster)) {
            continue;
        }
        for e in list {
            let Some(cam) = cams.get(e.camera_id.as_str()) else {
                warn!("encounter {} references unknown camera {}", e.encounter_id, e.camera_id);
                continue;
            };
            let Some(loc) = cam.location else {
                warn!("camera {} has no coordinates; skipping encounter {}", cam.camera_id, e.encounter_id);
                continue;
            };
            let timestamp = DateTime::from_timestamp(e.start_epoch_s, 0)
                .map(|t| crate::ingest::format_timestamp(&t))
                .unwrap_or_default();
            features.push(json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [loc.lon, loc.lat]},
                "properties": {
                    "cluster_id": cluster,
                    "encounter_id": e.encounter_id,
                    "camera_id": e.camera_id,
                    "timestamp": timestamp,
                    "strategy": cam.strategy.as_str(),
                },
            }));
        }
    }
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn automation_rate_edges() {
        assert_eq!(automation_rate(0, 0), 1.0);
        assert_eq!(automation_rate(0, 5), 0.0);
        assert_eq!(format_percent(automation_rate(0, 0)), "100.0%");
        assert!(automation_rate(10, 1) > automation_rate(10, 2));
    }

    #[test]
    fn lincoln_petersen_full_recapture() {
        let e = lincoln_petersen(CaptureSummary::new(100, 100, 100).unwrap()).unwrap();
        assert_eq!(e.n_hat, 100.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.ci95, (100.0, 100.0));
    }

    #[test]
    fn no_overlap_is_an_error() {
        assert!(matches!(
            lincoln_petersen(CaptureSummary::new(5, 5, 0).unwrap()),
            Err(StatsError::NoOverlap)
        ));
        assert!(CaptureSummary::new(3, 5, 4).is_err());
    }

    #[test]
    fn chapman_reference() {
        // (201 * 151 / 61) - 1
        let e = chapman(CaptureSummary::new(200, 150, 60).unwrap());
        assert!((e.n_hat - 496.557_377).abs() < 1e-5, "{}", e.n_hat);
    }

    #[test]
    fn events_csv() {
        let data = "annotation_id,event\na,1\nb, 2\n";
        let m = parse_events(data.as_bytes()).unwrap();
        assert_eq!(m["b"], 2);
        assert!(parse_events("annotation_id,event\na,3\n".as_bytes()).is_err());
        assert!(parse_events("id,event\na,1\n".as_bytes()).is_err());
    }
}
