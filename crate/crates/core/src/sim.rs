//! Seeded synthetic camera networks and populations with ground truth, and
//! evaluation of predicted clusterings against that truth.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, Annotation, Camera, Dataset, LatLon, Source, Species, Strategy, Viewpoint};
use crate::lca::Clustering;
use crate::rng::rng_for;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("clustering and truth cover different annotations ({missing} missing, {extra} extra)")]
    IdMismatch { missing: usize, extra: usize },
    #[error("truth file line {line}: {reason}")]
    TruthFile { line: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
}

const MPALA: LatLon = LatLon {
    lat: 0.2927,
    lon: 36.8990,
};
const KM_PER_DEGREE: f64 = 111.32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub individuals: usize,
    /// Share of individuals present for only one half of the study.
    pub transient_fraction: f64,
    pub cameras: usize,
    /// Relative number of cameras per strategy.
    pub strategy_mix: BTreeMap<Strategy, f64>,
    pub study_days: u32,
    pub start_date: NaiveDate,
    /// Expected encounters per camera, individual and day at distance zero
    /// for a strategy with multiplier 1.
    pub base_rate: f64,
    pub rate_multipliers: BTreeMap<Strategy, f64>,
    /// Rate decays as `exp(-d / scale)` with home-to-camera distance `d`
    /// in km. `None` disables decay.
    pub distance_scale_km: Option<f64>,
    /// Side of the square study area in km.
    pub area_km: f64,
    /// Every (camera, present individual) pair gets exactly this many
    /// encounters instead of a Poisson draw.
    pub fixed_encounters: Option<u32>,
    pub burst_min: u32,
    pub burst_max: u32,
    pub night_fraction: f64,
    /// Share of individuals that are plains zebras.
    pub plains_fraction: f64,
    /// Relative frequency of each viewpoint per burst.
    pub viewpoint_weights: BTreeMap<Viewpoint, f64>,
    /// Share of annotations with a good census score.
    pub good_fraction: f64,
    pub good_ca: (f64, f64),
    pub poor_ca: (f64, f64),
    /// Local time offset of the study site in minutes.
    pub utc_offset_minutes: i32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            individuals: 40,
            transient_fraction: 0.1,
            cameras: 12,
            strategy_mix: [
                (Strategy::RandomGrid, 4.0),
                (Strategy::RoadsideKnown, 2.0),
                (Strategy::RoadsideRandom, 2.0),
                (Strategy::MagnetMotion, 2.0),
                (Strategy::MagnetTimelapse, 2.0),
            ]
            .into_iter()
            .collect(),
            study_days: 14,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 27).expect("valid date"),
            base_rate: 0.05,
            rate_multipliers: [
                (Strategy::RandomGrid, 1.0),
                (Strategy::RoadsideKnown, 1.5),
                (Strategy::RoadsideRandom, 1.2),
                (Strategy::MagnetMotion, 4.0),
                (Strategy::MagnetTimelapse, 3.0),
            ]
            .into_iter()
            .collect(),
            distance_scale_km: Some(3.0),
            area_km: 10.0,
            fixed_encounters: None,
            burst_min: 1,
            burst_max: 5,
            night_fraction: 0.3,
            plains_fraction: 0.1,
            viewpoint_weights: [
                (Viewpoint::Right, 0.45),
                (Viewpoint::FrontRight, 0.1),
                (Viewpoint::BackRight, 0.1),
                (Viewpoint::Left, 0.2),
                (Viewpoint::Front, 0.05),
                (Viewpoint::Back, 0.05),
                (Viewpoint::Other, 0.05),
            ]
            .into_iter()
            .collect(),
            good_fraction: 0.7,
            good_ca: (0.32, 1.0),
            poor_ca: (0.0, 0.31),
            utc_offset_minutes: 180,
        }
    }
}

fn config_err(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        field,
        reason: reason.into(),
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.individuals == 0 {
            return Err(config_err("individuals", "must be at least 1"));
        }
        if self.cameras == 0 {
            return Err(config_err("cameras", "must be at least 1"));
        }
        if self.study_days == 0 {
            return Err(config_err("study_days", "must be at least 1"));
        }
        for (field, v) in [
            ("transient_fraction", self.transient_fraction),
            ("night_fraction", self.night_fraction),
            ("plains_fraction", self.plains_fraction),
            ("good_fraction", self.good_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(field, format!("{v} is not in [0, 1]")));
            }
        }
        if !(self.base_rate >= 0.0 && self.base_rate.is_finite()) {
            return Err(config_err("base_rate", "must be a non-negative number"));
        }
        if self.rate_multipliers.values().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(config_err("rate_multipliers", "must be non-negative"));
        }
        let mix_total: f64 = self.strategy_mix.values().sum();
        if self.strategy_mix.values().any(|&w| !(w >= 0.0)) || !(mix_total > 0.0) {
            return Err(config_err("strategy_mix", "weights must be non-negative with a positive sum"));
        }
        let vp_total: f64 = self.viewpoint_weights.values().sum();
        if self.viewpoint_weights.values().any(|&w| !(w >= 0.0)) || !(vp_total > 0.0) {
            return Err(config_err("viewpoint_weights", "weights must be non-negative with a positive sum"));
        }
        if self.burst_min == 0 || self.burst_min > self.burst_max {
            return Err(config_err("burst_min", "need 1 <= burst_min <= burst_max"));
        }
        if self.burst_max > 10 {
            return Err(config_err("burst_max", "bursts longer than 10 images are not supported"));
        }
        if self.distance_scale_km.is_some_and(|s| !(s > 0.0)) {
            return Err(config_err("distance_scale_km", "must be positive"));
        }
        if !(self.area_km > 0.0) {
            return Err(config_err("area_km", "must be positive"));
        }
        for (field, (lo, hi)) in [("good_ca", self.good_ca), ("poor_ca", self.poor_ca)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(config_err(field, format!("[{lo}, {hi}] is not a sub-range of [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimIndividual {
    pub individual_id: String,
    pub home: LatLon,
    pub species: Species,
    /// Study halves (1, 2) in which the individual is present.
    pub present: Vec<u8>,
}

/// One generated burst, i.e. one planted encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBurst {
    pub camera_id: String,
    pub individual_id: String,
    pub start: DateTime<Utc>,
    pub viewpoint: Viewpoint,
    pub daytime: bool,
    pub annotation_ids: Vec<String>,
    /// Member with the highest census score (ties to the smallest id).
    pub best_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub config: SimConfig,
    pub dataset: Dataset,
    /// Annotation id to individual id.
    pub truth: BTreeMap<String, String>,
    /// Annotation id to study half (1 or 2).
    pub events: BTreeMap<String, u8>,
    pub individuals: Vec<SimIndividual>,
    pub bursts: Vec<SimBurst>,
    /// Poisson draws per camera before same-camera collisions were dropped.
    pub planted_per_camera: BTreeMap<String, u32>,
    pub dropped_collisions: usize,
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn offset_point(rng: &mut ChaCha8Rng, half_km: f64) -> LatLon {
    let dy = rng.random_range(-half_km..=half_km);
    let dx = rng.random_range(-half_km..=half_km);
    LatLon {
        lat: round_to(MPALA.lat + dy / KM_PER_DEGREE, 6),
        lon: round_to(MPALA.lon + dx / (KM_PER_DEGREE * MPALA.lat.to_radians().cos()), 6),
    }
}

/// Planar distance in km; adequate at study-area scale near the equator.
pub fn distance_km(a: LatLon, b: LatLon) -> f64 {
    let dy = (a.lat - b.lat) * KM_PER_DEGREE;
    let dx = (a.lon - b.lon) * KM_PER_DEGREE * MPALA.lat.to_radians().cos();
    (dx * dx + dy * dy).sqrt()
}

/// Split `total` items across weighted classes by largest remainder.
fn allocate(total: usize, weights: &BTreeMap<Strategy, f64>) -> Vec<Strategy> {
    let sum: f64 = weights.values().sum();
    let mut counts: Vec<(Strategy, usize, f64)> = weights
        .iter()
        .map(|(&s, &w)| {
            let exact = total as f64 * w / sum;
            (s, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        counts[i].1 += 1;
    }
    counts
        .into_iter()
        .flat_map(|(s, n, _)| std::iter::repeat_n(s, n))
        .collect()
}

fn pick_weighted<T: Copy>(rng: &mut ChaCha8Rng, items: &[(T, f64)]) -> T {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut x = rng.random::<f64>() * total;
    for &(item, w) in items {
        if x < w {
            return item;
        }
        x -= w;
    }
    items.iter().rev().find(|i| i.1 > 0.0).expect("positive weight").0
}

struct PendingBurst {
    camera: usize,
    individual: usize,
    start: DateTime<Utc>,
    size: u32,
    viewpoint: Viewpoint,
    daytime: bool,
    rng_seed: u64,
}

fn local_start(
    rng: &mut ChaCha8Rng,
    config: &SimConfig,
    day: u32,
    daytime: bool,
) -> DateTime<Utc> {
    let date = config.start_date + Duration::days(day as i64);
    // Windows keep a full burst inside the day or the night.
    let secs = if daytime {
        let lo = 6 * 3600 + 35 * 60;
        let hi = 18 * 3600 + 50 * 60;
        rng.random_range(lo..=hi)
    } else {
        // 19:05 to 06:25 the next morning.
        let lo = 19 * 3600 + 5 * 60;
        let span = (24 * 3600 - lo) + 6 * 3600 + 25 * 60;
        lo + rng.random_range(0..=span)
    };
    let midnight = date.and_time(NaiveTime::MIN);
    let local = midnight + Duration::seconds(secs as i64);
    Utc.from_utc_datetime(&(local - Duration::minutes(config.utc_offset_minutes as i64)))
}

/// Generate a synthetic dataset. Deterministic for a given config.
pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let seed = config.seed;
    let half_km = config.area_km / 2.0;

    let mut layout_rng = rng_for(seed, &["cameras"]);
    let mut strategies = allocate(config.cameras, &config.strategy_mix);
    strategies.shuffle(&mut layout_rng);
    let cameras: Vec<Camera> = strategies
        .iter()
        .enumerate()
        .map(|(i, &strategy)| Camera {
            camera_id: format!("cam{i:03}"),
            location: Some(offset_point(&mut layout_rng, half_km)),
            strategy,
        })
        .collect();

    let mut pop_rng = rng_for(seed, &["population"]);
    let individuals: Vec<SimIndividual> = (0..config.individuals)
        .map(|i| {
            let home = offset_point(&mut pop_rng, half_km);
            let species = if pop_rng.random::<f64>() < config.plains_fraction {
                Species::Plains
            } else {
                Species::Grevys
            };
            let present = if pop_rng.random::<f64>() < config.transient_fraction {
                vec![pop_rng.random_range(1..=2u8)]
            } else {
                vec![1, 2]
            };
            SimIndividual {
                individual_id: format!("ind{i:04}"),
                home,
                species,
                present,
            }
        })
        .collect();

    let half_days = config.study_days.div_ceil(2);
    let days_in = |half: u8| -> std::ops::Range<u32> {
        if half == 1 {
            0..half_days
        } else {
            half_days..config.study_days
        }
    };
    let viewpoints: Vec<(Viewpoint, f64)> = config.viewpoint_weights.iter().map(|(&v, &w)| (v, w)).collect();

    let mut pending = Vec::new();
    let mut planted_per_camera = BTreeMap::new();
    for (ci, cam) in cameras.iter().enumerate() {
        let mult = config.rate_multipliers.get(&cam.strategy).copied().unwrap_or(1.0);
        let mut planted = 0u32;
        for (ii, ind) in individuals.iter().enumerate() {
            let mut rng = rng_for(seed, &["encounters", &cam.camera_id, &ind.individual_id]);
            let days: Vec<u32> = ind.present.iter().flat_map(|&h| days_in(h)).collect();
            if days.is_empty() {
                continue;
            }
            let count = match config.fixed_encounters {
                Some(n) => n,
                None => {
                    let decay = config
                        .distance_scale_km
                        .map_or(1.0, |s| (-distance_km(ind.home, cam.location.expect("generated")) / s).exp());
                    let lambda = config.base_rate * mult * decay * days.len() as f64;
                    if lambda > 0.0 {
                        Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u32
                    } else {
                        0
                    }
                }
            };
            planted += count;
            for _ in 0..count {
                let day = days[rng.random_range(0..days.len())];
                let daytime = rng.random::<f64>() >= config.night_fraction;
                let start = local_start(&mut rng, config, day, daytime);
                pending.push(PendingBurst {
                    camera: ci,
                    individual: ii,
                    start,
                    size: rng.random_range(config.burst_min..=config.burst_max),
                    viewpoint: pick_weighted(&mut rng, &viewpoints),
                    daytime,
                    rng_seed: rng.random(),
                });
            }
        }
        planted_per_camera.insert(cam.camera_id.clone(), planted);
    }

    pending.sort_by_key(|b| (b.camera, b.start, b.individual));
    let mut annotations = Vec::new();
    let mut truth = BTreeMap::new();
    let mut events = BTreeMap::new();
    let mut bursts = Vec::new();
    let mut dropped_collisions = 0;
    // Last occupied epoch-minute per camera.
    let mut last_minute: BTreeMap<usize, i64> = BTreeMap::new();
    let mut next_id = 0usize;
    for b in pending {
        let mut rng = rng_for(b.rng_seed, &["burst"]);
        let mut times = vec![b.start];
        for _ in 1..b.size {
            let prev = *times.last().expect("non-empty");
            times.push(prev + Duration::seconds(rng.random_range(1..=59)));
        }
        let first = b.start.timestamp().div_euclid(60);
        let last = times.last().expect("non-empty").timestamp().div_euclid(60);
        // A burst touching an occupied or adjacent minute would merge into
        // the previous encounter.
        if last_minute.get(&b.camera).is_some_and(|&m| first <= m + 1) {
            dropped_collisions += 1;
            continue;
        }
        last_minute.insert(b.camera, last);

        let cam = &cameras[b.camera];
        let ind = &individuals[b.individual];
        let half = if (b.start.date_naive() - config.start_date).num_days() < half_days as i64 {
            1
        } else {
            2
        };
        let mut ids = Vec::new();
        let mut best: Option<(f64, String)> = None;
        for t in times {
            let id = format!("a{next_id:06}");
            let image_id = format!("img{next_id:06}");
            next_id += 1;
            let (lo, hi) = if rng.random::<f64>() < config.good_fraction {
                config.good_ca
            } else {
                config.poor_ca
            };
            let ca = round_to(rng.random_range(lo..=hi), 4).clamp(lo, hi);
            let blur = round_to(rng.random::<f64>(), 3);
            if best.as_ref().is_none_or(|(s, _)| ca > *s) {
                best = Some((ca, id.clone()));
            }
            truth.insert(id.clone(), ind.individual_id.clone());
            events.insert(id.clone(), half);
            annotations.push(Annotation {
                annotation_id: id.clone(),
                image_id,
                camera_id: cam.camera_id.clone(),
                timestamp: t,
                viewpoint: b.viewpoint,
                species: ind.species,
                ca_score: ca,
                blur_score: Some(blur),
                gps: None,
                crop_uri: None,
                source: Source::CameraTrap,
            });
            ids.push(id);
        }
        bursts.push(SimBurst {
            camera_id: cam.camera_id.clone(),
            individual_id: ind.individual_id.clone(),
            start: b.start,
            viewpoint: b.viewpoint,
            daytime: b.daytime,
            annotation_ids: ids,
            best_id: best.expect("non-empty burst").1,
        });
    }

    Ok(SimOutput {
        config: config.clone(),
        dataset: Dataset::new(annotations, cameras),
        truth,
        events,
        individuals,
        bursts,
        planted_per_camera,
        dropped_collisions,
    })
}

pub fn write_truth_csv<W: Write>(out: W, truth: &BTreeMap<String, String>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["annotation_id", "individual_id"])?;
    for (a, i) in truth {
        w.write_record([a, i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_truth_csv<R: Read>(reader: R) -> Result<BTreeMap<String, String>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| SimError::TruthFile {
            line: 1,
            reason: format!("missing column {name:?}"),
        })
    };
    let (a_col, i_col) = (col("annotation_id")?, col("individual_id")?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let (a, ind) = (rec.get(a_col).unwrap_or_default(), rec.get(i_col).unwrap_or_default());
        if a.is_empty() || ind.is_empty() {
            return Err(SimError::TruthFile {
                line: i + 2,
                reason: "empty field".into(),
            });
        }
        out.insert(a.to_string(), ind.to_string());
    }
    Ok(out)
}

pub fn write_events_csv<W: Write>(out: W, events: &BTreeMap<String, u8>) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["annotation_id", "event"])?;
    for (a, e) in events {
        w.write_record([a.as_str(), &e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// File names used by [`write_sim_output`].
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CAMERAS_FILE: &str = "cameras.json";
pub const TRUTH_FILE: &str = "truth.csv";
pub const EVENTS_FILE: &str = "events.csv";

/// Write manifest, camera registry, truth and events into `dir`.
pub fn write_sim_output(dir: &Path, output: &SimOutput) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    ingest::write_dataset(&output.dataset, &dir.join(MANIFEST_FILE), &dir.join(CAMERAS_FILE))?;
    write_truth_csv(std::fs::File::create(dir.join(TRUTH_FILE))?, &output.truth)?;
    write_events_csv(std::fs::File::create(dir.join(EVENTS_FILE))?, &output.events)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub adjusted_rand_index: f64,
    pub predicted_clusters: usize,
    pub true_clusters: usize,
    /// Predicted minus true cluster count.
    pub count_delta: i64,
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Pairwise precision/recall/F1 over same-cluster pairs, and the adjusted
/// Rand index. Precision (recall) is 1.0 when there are no predicted
/// (true) same-cluster pairs.
pub fn evaluate(predicted: &Clustering, truth: &BTreeMap<String, String>) -> Result<EvalReport, SimError> {
    let missing = truth.keys().filter(|k| !predicted.assignments.contains_key(*k)).count();
    let extra = predicted.assignments.keys().filter(|k| !truth.contains_key(*k)).count();
    if missing + extra > 0 {
        return Err(SimError::IdMismatch { missing, extra });
    }
    let mut table: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut pred_sizes: BTreeMap<&str, u64> = BTreeMap::new();
    let mut true_sizes: BTreeMap<&str, u64> = BTreeMap::new();
    for (id, p) in &predicted.assignments {
        let t = truth[id].as_str();
        *table.entry((p.as_str(), t)).or_default() += 1;
        *pred_sizes.entry(p.as_str()).or_default() += 1;
        *true_sizes.entry(t).or_default() += 1;
    }
    let tp: u64 = table.values().map(|&n| choose2(n)).sum();
    let pred_pairs: u64 = pred_sizes.values().map(|&n| choose2(n)).sum();
    let true_pairs: u64 = true_sizes.values().map(|&n| choose2(n)).sum();
    let all_pairs = choose2(truth.len() as u64);

    let precision = if pred_pairs == 0 { 1.0 } else { tp as f64 / pred_pairs as f64 };
    let recall = if true_pairs == 0 { 1.0 } else { tp as f64 / true_pairs as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let expected = if all_pairs == 0 {
        0.0
    } else {
        pred_pairs as f64 * true_pairs as f64 / all_pairs as f64
    };
    let max_index = (pred_pairs + true_pairs) as f64 / 2.0;
    let adjusted_rand_index = if (max_index - expected).abs() < f64::EPSILON {
        1.0
    } else {
        (tp as f64 - expected) / (max_index - expected)
    };
    Ok(EvalReport {
        precision,
        recall,
        f1,
        adjusted_rand_index,
        predicted_clusters: pred_sizes.len(),
        true_clusters: true_sizes.len(),
        count_delta: pred_sizes.len() as i64 - true_sizes.len() as i64,
    })
}

/// Truth restricted to `ids`.
pub fn restrict_truth<'a>(
    truth: &BTreeMap<String, String>,
    ids: impl IntoIterator<Item = &'a str>,
) -> BTreeMap<String, String> {
    let keep: BTreeSet<&str> = ids.into_iter().collect();
    truth
        .iter()
        .filter(|(k, _)| keep.contains(k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}
