//! Annotation filtering funnel.
//!
//! Stages run in a fixed order: viewpoint/species gate, daytime gate,
//! per-camera encounter grouping, representative selection, then the
//! census-annotation score and blur gates. Every stage is a pure function
//! and the report records how many items entered and left each one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{FixedOffset, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Annotation, Dataset, Species, Viewpoint};

#[derive(Debug, Error, PartialEq)]
pub enum FilterConfigError {
    #[error("ca_threshold must lie in [0, 1], got {0}")]
    CaThreshold(f64),
    #[error("day window start {start} must precede end {end}")]
    DayWindow { start: NaiveTime, end: NaiveTime },
    #[error("timezone offset {0} minutes is out of range")]
    Offset(i32),
    #[error("blur_threshold must be non-negative, got {0}")]
    BlurThreshold(f64),
}

impl FilterConfigError {
    pub fn field(&self) -> &'static str {
        match self {
            FilterConfigError::CaThreshold(_) => "ca_threshold",
            FilterConfigError::DayWindow { .. } => "day_start",
            FilterConfigError::Offset(_) => "utc_offset_minutes",
            FilterConfigError::BlurThreshold(_) => "blur_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageFlags {
    pub viewpoint_species: bool,
    pub daytime: bool,
    pub encounters: bool,
    pub ca: bool,
    pub blur: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self {
            viewpoint_species: true,
            daytime: true,
            encounters: true,
            ca: true,
            blur: true,
        }
    }
}

impl StageFlags {
    pub fn none() -> Self {
        Self {
            viewpoint_species: false,
            daytime: false,
            encounters: false,
            ca: false,
            blur: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub allowed_viewpoints: BTreeSet<Viewpoint>,
    pub allowed_species: BTreeSet<Species>,
    /// Local wall-clock window, start inclusive, end exclusive.
    pub day_start: NaiveTime,
    pub day_end: NaiveTime,
    /// Offset of the local timezone from UTC. Mpala is UTC+3.
    pub utc_offset_minutes: i32,
    /// Annotations need a CA score strictly above this.
    pub ca_threshold: f64,
    /// When set, annotations need a blur score at or above this.
    pub blur_threshold: Option<f64>,
    pub stages: StageFlags,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            allowed_viewpoints: [Viewpoint::Right, Viewpoint::FrontRight, Viewpoint::BackRight]
                .into_iter()
                .collect(),
            allowed_species: [Species::Grevys].into_iter().collect(),
            day_start: NaiveTime::from_hms_opt(6, 30, 0).unwrap(),
            day_end: NaiveTime::from_hms_opt(19, 0, 0).unwrap(),
            utc_offset_minutes: 180,
            ca_threshold: 0.31,
            blur_threshold: None,
            stages: StageFlags::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterConfigError> {
        if !(0.0..=1.0).contains(&self.ca_threshold) {
            return Err(FilterConfigError::CaThreshold(self.ca_threshold));
        }
        if self.day_start >= self.day_end {
            return Err(FilterConfigError::DayWindow {
                start: self.day_start,
                end: self.day_end,
            });
        }
        if self.offset().is_none() {
            return Err(FilterConfigError::Offset(self.utc_offset_minutes));
        }
        if let Some(b) = self.blur_threshold {
            if !(b >= 0.0) {
                return Err(FilterConfigError::BlurThreshold(b));
            }
        }
        Ok(())
    }

    fn offset(&self) -> Option<FixedOffset> {
        FixedOffset::east_opt(self.utc_offset_minutes.checked_mul(60)?)
    }
}

/// A per-camera group of annotations in chained consecutive minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    /// `<camera_id>@<first epoch-minute>`.
    pub encounter_id: String,
    pub camera_id: String,
    pub minute_buckets: BTreeSet<i64>,
    pub member_ids: BTreeSet<String>,
    pub representative_id: String,
    /// Earliest member timestamp, seconds since the epoch.
    pub start_epoch_s: i64,
}

impl Encounter {
    pub fn first_minute(&self) -> i64 {
        *self.minute_buckets.first().expect("encounters are never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub annotation_id: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FunnelReport {
    pub stages: Vec<StageCount>,
    pub final_ids: Vec<String>,
}

impl FunnelReport {
    /// Each stage's input is the previous stage's output and nothing grows.
    pub fn is_consistent(&self) -> bool {
        self.stages.iter().all(|s| s.output <= s.input)
            && self
                .stages
                .windows(2)
                .all(|w| w[0].output == w[1].input)
            && self
                .stages
                .last()
                .is_none_or(|s| s.output == self.final_ids.len())
    }
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .stages
            .iter()
            .map(|s| s.stage.len())
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(f, "{:<width$}  {:>10}  {:>10}", "stage", "input", "output")?;
        for s in &self.stages {
            writeln!(f, "{:<width$}  {:>10}  {:>10}", s.stage, s.input, s.output)?;
        }
        Ok(())
    }
}

/// Everything the funnel produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelOutput {
    pub annotations: Vec<Annotation>,
    pub encounters: Vec<Encounter>,
    pub report: FunnelReport,
    pub discarded: Vec<Discard>,
}

pub fn gate_viewpoint_species(annots: &[Annotation], config: &FilterConfig) -> Vec<Annotation> {
    annots
        .iter()
        .filter(|a| {
            config.allowed_viewpoints.contains(&a.viewpoint)
                && config.allowed_species.contains(&a.species)
        })
        .cloned()
        .collect()
}

pub fn is_daytime(a: &Annotation, config: &FilterConfig) -> bool {
    let offset = config.offset().unwrap_or_else(|| FixedOffset::east_opt(0).unwrap());
    let local = a.timestamp.with_timezone(&offset).time();
    let local = local.with_nanosecond(0).unwrap_or(local);
    local >= config.day_start && local < config.day_end
}

pub fn gate_daytime(annots: &[Annotation], config: &FilterConfig) -> Vec<Annotation> {
    annots
        .iter()
        .filter(|a| is_daytime(a, config))
        .cloned()
        .collect()
}

pub fn epoch_minute(a: &Annotation) -> i64 {
    a.timestamp.timestamp().div_euclid(60)
}

/// Highest CA score wins; ties go to the smallest annotation id.
fn better_representative(a: &Annotation, b: &Annotation) -> bool {
    a.ca_score > b.ca_score || (a.ca_score == b.ca_score && a.annotation_id < b.annotation_id)
}

/// Group annotations per camera into chains of occupied consecutive minutes.
///
/// Output is sorted by (camera_id, first minute) and does not depend on
/// input order. Representatives are already elected.
pub fn cluster_encounters(annots: &[Annotation]) -> Vec<Encounter> {
    let mut by_camera: BTreeMap<&str, BTreeMap<i64, Vec<&Annotation>>> = BTreeMap::new();
    for a in annots {
        by_camera
            .entry(a.camera_id.as_str())
            .or_default()
            .entry(epoch_minute(a))
            .or_default()
            .push(a);
    }

    let mut encounters = Vec::new();
    for (camera, minutes) in by_camera {
        let mut current: Vec<(i64, &Vec<&Annotation>)> = Vec::new();
        let mut flush = |group: &mut Vec<(i64, &Vec<&Annotation>)>| {
            if group.is_empty() {
                return;
            }
            let members: Vec<&Annotation> =
                group.iter().flat_map(|(_, v)| v.iter().copied()).collect();
            let rep = members
                .iter()
                .copied()
                .reduce(|best, a| if better_representative(a, best) { a } else { best })
                .expect("non-empty group");
            let first = group[0].0;
            encounters.push(Encounter {
                encounter_id: format!("{camera}@{first}"),
                camera_id: camera.to_string(),
                minute_buckets: group.iter().map(|(m, _)| *m).collect(),
                member_ids: members.iter().map(|a| a.annotation_id.clone()).collect(),
                representative_id: rep.annotation_id.clone(),
                start_epoch_s: members
                    .iter()
                    .map(|a| a.timestamp.timestamp())
                    .min()
                    .unwrap(),
            });
            group.clear();
        };
        for (minute, members) in &minutes {
            if let Some((last, _)) = current.last() {
                if *minute != last + 1 {
                    flush(&mut current);
                }
            }
            current.push((*minute, members));
        }
        flush(&mut current);
    }
    encounters
}

/// One annotation per encounter plus discard records for the rest.
pub fn select_representatives(
    encounters: &[Encounter],
    by_id: &BTreeMap<&str, &Annotation>,
) -> (Vec<Annotation>, Vec<Discard>) {
    let mut reps = Vec::with_capacity(encounters.len());
    let mut discarded = Vec::new();
    for enc in encounters {
        reps.push((*by_id[enc.representative_id.as_str()]).clone());
        for id in &enc.member_ids {
            if *id != enc.representative_id {
                discarded.push(Discard {
                    annotation_id: id.clone(),
                    stage: "representatives".into(),
                    reason: format!("not the best member of encounter {}", enc.encounter_id),
                });
            }
        }
    }
    (reps, discarded)
}

pub fn passes_ca(a: &Annotation, config: &FilterConfig) -> bool {
    a.ca_score > config.ca_threshold
}

/// `None` means the annotation passes; otherwise the drop reason.
pub fn blur_rejection(a: &Annotation, config: &FilterConfig) -> Option<&'static str> {
    let threshold = config.blur_threshold?;
    match a.blur_score {
        None => Some("missing blur score"),
        Some(b) if b < threshold => Some("blur score below threshold"),
        Some(_) => None,
    }
}

pub fn gate_ca_and_blur(annots: &[Annotation], config: &FilterConfig) -> Vec<Annotation> {
    annots
        .iter()
        .filter(|a| passes_ca(a, config) && blur_rejection(a, config).is_none())
        .cloned()
        .collect()
}

fn record_drops(
    before: &[Annotation],
    kept: &[Annotation],
    stage: &str,
    reason: impl Fn(&Annotation) -> String,
    out: &mut Vec<Discard>,
) {
    let kept: BTreeSet<&str> = kept.iter().map(|a| a.annotation_id.as_str()).collect();
    for a in before {
        if !kept.contains(a.annotation_id.as_str()) {
            out.push(Discard {
                annotation_id: a.annotation_id.clone(),
                stage: stage.into(),
                reason: reason(a),
            });
        }
    }
}

/// Run every enabled stage over a dataset.
///
/// Annotations are processed in `annotation_id` order so the output is
/// independent of manifest line order.
pub fn run_funnel(dataset: &Dataset, config: &FilterConfig) -> FunnelOutput {
    let mut current: Vec<Annotation> = dataset.annotations.clone();
    current.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
    let mut stages = Vec::new();
    let mut discarded = Vec::new();
    let flags = &config.stages;

    if flags.viewpoint_species {
        let next = gate_viewpoint_species(&current, config);
        record_drops(
            &current,
            &next,
            "viewpoint_species",
            |a| format!("{} / {}", a.viewpoint.as_str(), a.species.as_str()),
            &mut discarded,
        );
        stages.push(StageCount {
            stage: "viewpoint_species".into(),
            input: current.len(),
            output: next.len(),
        });
        current = next;
    }

    if flags.daytime {
        let next = gate_daytime(&current, config);
        record_drops(&current, &next, "daytime", |_| "outside day window".into(), &mut discarded);
        stages.push(StageCount {
            stage: "daytime".into(),
            input: current.len(),
            output: next.len(),
        });
        current = next;
    }

    let encounters;
    if flags.encounters {
        encounters = cluster_encounters(&current);
        stages.push(StageCount {
            stage: "encounters".into(),
            input: current.len(),
            output: encounters.len(),
        });
        let by_id: BTreeMap<&str, &Annotation> = current
            .iter()
            .map(|a| (a.annotation_id.as_str(), a))
            .collect();
        let (mut reps, dropped) = select_representatives(&encounters, &by_id);
        discarded.extend(dropped);
        reps.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
        stages.push(StageCount {
            stage: "representatives".into(),
            input: encounters.len(),
            output: reps.len(),
        });
        current = reps;
    } else {
        // Without grouping every annotation stands for its own sighting.
        encounters = current
            .iter()
            .map(|a| {
                let minute = epoch_minute(a);
                Encounter {
                    encounter_id: format!("{}@{}", a.annotation_id, minute),
                    camera_id: a.camera_id.clone(),
                    minute_buckets: [minute].into_iter().collect(),
                    member_ids: [a.annotation_id.clone()].into_iter().collect(),
                    representative_id: a.annotation_id.clone(),
                    start_epoch_s: a.timestamp.timestamp(),
                }
            })
            .collect();
    }

    if flags.ca {
        let next: Vec<Annotation> = current
            .iter()
            .filter(|a| passes_ca(a, config))
            .cloned()
            .collect();
        record_drops(
            &current,
            &next,
            "ca",
            |a| format!("ca_score {} not above {}", a.ca_score, config.ca_threshold),
            &mut discarded,
        );
        stages.push(StageCount {
            stage: "ca".into(),
            input: current.len(),
            output: next.len(),
        });
        current = next;
    }

    if flags.blur && config.blur_threshold.is_some() {
        let next: Vec<Annotation> = current
            .iter()
            .filter(|a| blur_rejection(a, config).is_none())
            .cloned()
            .collect();
        record_drops(
            &current,
            &next,
            "blur",
            |a| blur_rejection(a, config).unwrap_or_default().to_string(),
            &mut discarded,
        );
        stages.push(StageCount {
            stage: "blur".into(),
            input: current.len(),
            output: next.len(),
        });
        current = next;
    }

    let report = FunnelReport {
        stages,
        final_ids: current.iter().map(|a| a.annotation_id.clone()).collect(),
    };
    FunnelOutput {
        annotations: current,
        encounters,
        report,
        discarded,
    }
}
