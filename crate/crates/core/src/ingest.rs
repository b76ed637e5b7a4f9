//! Annotation manifests and camera registries.
//!
//! Every upstream model output (detections, species and viewpoint labels,
//! census-annotation scores, blur scores) enters the system here as plain
//! data. The annotation manifest is JSON lines, one record per line; the
//! camera registry is a JSON array.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("camera registry {path} is invalid: {reason}")]
    Registry { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Viewpoint {
    Left,
    Right,
    FrontRight,
    BackRight,
    Front,
    Back,
    Other,
}

impl Viewpoint {
    pub const ALL: [Viewpoint; 7] = [
        Viewpoint::Left,
        Viewpoint::Right,
        Viewpoint::FrontRight,
        Viewpoint::BackRight,
        Viewpoint::Front,
        Viewpoint::Back,
        Viewpoint::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Viewpoint::Left => "left",
            Viewpoint::Right => "right",
            Viewpoint::FrontRight => "front-right",
            Viewpoint::BackRight => "back-right",
            Viewpoint::Front => "front",
            Viewpoint::Back => "back",
            Viewpoint::Other => "other",
        }
    }

    /// Lenient parse: detector labels outside the known set become `Other`.
    pub fn parse_lenient(s: &str) -> Self {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .unwrap_or(Viewpoint::Other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Grevys,
    Plains,
    Other,
}

impl Species {
    pub fn as_str(self) -> &'static str {
        match self {
            Species::Grevys => "grevys",
            Species::Plains => "plains",
            Species::Other => "other",
        }
    }

    pub fn parse_lenient(s: &str) -> Self {
        match s {
            "grevys" => Species::Grevys,
            "plains" => Species::Plains,
            _ => Species::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    CameraTrap,
    FieldPhoto,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::CameraTrap => "camera_trap",
            Source::FieldPhoto => "field_photo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "camera_trap" => Some(Source::CameraTrap),
            "field_photo" => Some(Source::FieldPhoto),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomGrid,
    RoadsideKnown,
    RoadsideRandom,
    MagnetMotion,
    MagnetTimelapse,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::RandomGrid,
        Strategy::RoadsideKnown,
        Strategy::RoadsideRandom,
        Strategy::MagnetMotion,
        Strategy::MagnetTimelapse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RandomGrid => "random_grid",
            Strategy::RoadsideKnown => "roadside_known",
            Strategy::RoadsideRandom => "roadside_random",
            Strategy::MagnetMotion => "magnet_motion",
            Strategy::MagnetTimelapse => "magnet_timelapse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }

    pub fn is_magnet(self) -> bool {
        matches!(self, Strategy::MagnetMotion | Strategy::MagnetTimelapse)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

/// One detected animal crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub image_id: String,
    pub camera_id: String,
    pub timestamp: DateTime<Utc>,
    pub viewpoint: Viewpoint,
    pub species: Species,
    pub ca_score: f64,
    pub blur_score: Option<f64>,
    pub gps: Option<LatLon>,
    pub crop_uri: Option<String>,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub camera_id: String,
    /// `None` only for registries that omit coordinates; such cameras are
    /// skipped by spatial exports.
    pub location: Option<LatLon>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_path: String,
    pub manifest_sha256: String,
    pub cameras_path: String,
    pub cameras_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub annotations: Vec<Annotation>,
    pub cameras: Vec<Camera>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(annotations: Vec<Annotation>, cameras: Vec<Camera>) -> Self {
        Self {
            annotations,
            cameras,
            provenance: None,
        }
    }

    pub fn camera_map(&self) -> BTreeMap<&str, &Camera> {
        self.cameras
            .iter()
            .map(|c| (c.camera_id.as_str(), c))
            .collect()
    }

    pub fn annotation_map(&self) -> BTreeMap<&str, &Annotation> {
        self.annotations
            .iter()
            .map(|a| (a.annotation_id.as_str(), a))
            .collect()
    }

    /// Same content, ignoring where it was loaded from.
    pub fn same_content(&self, other: &Dataset) -> bool {
        self.annotations == other.annotations && self.cameras == other.cameras
    }
}

/// A manifest line that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    /// 1-based line number in the manifest.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub dataset: Dataset,
    pub rejected: Vec<RejectedLine>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::NotFound(path.to_path_buf())
        } else {
            IngestError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

/// Parse and validate an annotation manifest against a camera registry.
///
/// Line-level problems never abort the parse: the offending line is
/// reported and the remaining lines are kept.
pub fn parse_manifest(
    annotations_path: &Path,
    cameras_path: &Path,
) -> Result<ParseOutcome, IngestError> {
    let camera_bytes = read_file(cameras_path)?;
    let cameras = parse_camera_registry(&camera_bytes).map_err(|reason| IngestError::Registry {
        path: cameras_path.to_path_buf(),
        reason,
    })?;
    let manifest_bytes = read_file(annotations_path)?;
    let (annotations, rejected) = parse_annotation_lines(&manifest_bytes[..], &cameras)
        .map_err(|source| IngestError::Io {
            path: annotations_path.to_path_buf(),
            source,
        })?;
    let dataset = Dataset {
        annotations,
        cameras,
        provenance: Some(Provenance {
            manifest_path: annotations_path.display().to_string(),
            manifest_sha256: sha256_hex(&manifest_bytes),
            cameras_path: cameras_path.display().to_string(),
            cameras_sha256: sha256_hex(&camera_bytes),
        }),
    };
    Ok(ParseOutcome { dataset, rejected })
}

pub fn parse_camera_registry(bytes: &[u8]) -> Result<Vec<Camera>, String> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let Value::Array(items) = value else {
        return Err("camera registry must be a JSON array".into());
    };
    let mut seen = BTreeSet::new();
    let mut cameras = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| format!("entry {i}: expected an object"))?;
        let camera_id = obj
            .get("camera_id")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("entry {i}: missing camera_id"))?
            .to_string();
        let strategy_raw = obj
            .get("strategy")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("entry {i}: missing strategy"))?;
        let strategy = Strategy::parse(strategy_raw)
            .ok_or_else(|| format!("entry {i}: unknown strategy {strategy_raw:?}"))?;
        let lat = obj.get("lat").and_then(Value::as_f64);
        let lon = obj.get("lon").and_then(Value::as_f64);
        let location = match (lat, lon) {
            (Some(lat), Some(lon)) => Some(LatLon { lat, lon }),
            _ => None,
        };
        if !seen.insert(camera_id.clone()) {
            return Err(format!("duplicate camera_id {camera_id:?}"));
        }
        cameras.push(Camera {
            camera_id,
            location,
            strategy,
        });
    }
    Ok(cameras)
}

/// Parse manifest lines from any reader. Blank lines are skipped.
pub fn parse_annotation_lines<R: BufRead>(
    reader: R,
    cameras: &[Camera],
) -> std::io::Result<(Vec<Annotation>, Vec<RejectedLine>)> {
    let known: BTreeSet<&str> = cameras.iter().map(|c| c.camera_id.as_str()).collect();
    let mut seen_ids = BTreeSet::new();
    let mut annotations = Vec::new();
    let mut rejected = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_annotation_line(&line) {
            Ok(annotation) => {
                if !known.contains(annotation.camera_id.as_str()) {
                    rejected.push(RejectedLine {
                        line: line_no,
                        reason: format!("unknown camera_id {:?}", annotation.camera_id),
                    });
                } else if !seen_ids.insert(annotation.annotation_id.clone()) {
                    rejected.push(RejectedLine {
                        line: line_no,
                        reason: format!("duplicate annotation_id {:?}", annotation.annotation_id),
                    });
                } else {
                    annotations.push(annotation);
                }
            }
            Err(reason) => rejected.push(RejectedLine {
                line: line_no,
                reason,
            }),
        }
    }
    Ok((annotations, rejected))
}

fn required_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Err(format!("missing required field {key}")),
        Some(v) => v.as_str().ok_or_else(|| format!("field {key} must be a string")),
    }
}

fn optional_f64(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| format!("field {key} must be a number")),
    }
}

/// Validate one manifest record.
pub fn parse_annotation_line(line: &str) -> Result<Annotation, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "record must be a JSON object".to_string())?;

    let annotation_id = required_str(obj, "annotation_id")?.to_string();
    let image_id = required_str(obj, "image_id")?.to_string();
    let camera_id = required_str(obj, "camera_id")?.to_string();
    let ts_raw = required_str(obj, "timestamp")?;
    let timestamp = parse_timestamp(ts_raw)?;
    let viewpoint = Viewpoint::parse_lenient(required_str(obj, "viewpoint")?);
    let species = Species::parse_lenient(required_str(obj, "species")?);
    let ca_score = match obj.get("ca_score") {
        None | Some(Value::Null) => return Err("missing required field ca_score".into()),
        Some(v) => v.as_f64().ok_or("field ca_score must be a number")?,
    };
    if !(0.0..=1.0).contains(&ca_score) {
        return Err("ca_score out of range".into());
    }
    let blur_score = optional_f64(obj, "blur_score")?;
    if let Some(b) = blur_score {
        if !(b >= 0.0) {
            return Err("blur_score must be non-negative".into());
        }
    }
    let gps = match (optional_f64(obj, "lat")?, optional_f64(obj, "lon")?) {
        (Some(lat), Some(lon)) => Some(LatLon { lat, lon }),
        (None, None) => None,
        _ => return Err("lat and lon must be given together".into()),
    };
    let crop_uri = match obj.get("crop_uri") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_str().ok_or("field crop_uri must be a string")?.to_string()),
    };
    let source = match obj.get("source") {
        None | Some(Value::Null) => Source::default(),
        Some(v) => {
            let raw = v.as_str().ok_or("field source must be a string")?;
            Source::parse(raw).ok_or_else(|| format!("unknown source {raw:?}"))?
        }
    };

    Ok(Annotation {
        annotation_id,
        image_id,
        camera_id,
        timestamp,
        viewpoint,
        species,
        ca_score,
        blur_score,
        gps,
        crop_uri,
        source,
    })
}

/// ISO-8601 with an explicit offset, normalised to UTC at second precision.
pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, String> {
    let parsed = DateTime::parse_from_rfc3339(raw)
        .map_err(|e| format!("unparsable timestamp {raw:?}: {e}"))?;
    let utc = parsed.with_timezone(&Utc);
    Ok(utc.with_nanosecond(0).unwrap_or(utc))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Manifest record for one annotation, keys in schema order.
pub fn annotation_to_json(a: &Annotation) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("annotation_id".into(), a.annotation_id.clone().into());
    obj.insert("image_id".into(), a.image_id.clone().into());
    obj.insert("camera_id".into(), a.camera_id.clone().into());
    obj.insert("timestamp".into(), format_timestamp(&a.timestamp).into());
    obj.insert("viewpoint".into(), a.viewpoint.as_str().into());
    obj.insert("species".into(), a.species.as_str().into());
    obj.insert("ca_score".into(), a.ca_score.into());
    if let Some(b) = a.blur_score {
        obj.insert("blur_score".into(), b.into());
    }
    if let Some(g) = a.gps {
        obj.insert("lat".into(), g.lat.into());
        obj.insert("lon".into(), g.lon.into());
    }
    if let Some(uri) = &a.crop_uri {
        obj.insert("crop_uri".into(), uri.clone().into());
    }
    obj.insert("source".into(), a.source.as_str().into());
    Value::Object(obj)
}

pub fn camera_to_json(c: &Camera) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("camera_id".into(), c.camera_id.clone().into());
    if let Some(loc) = c.location {
        obj.insert("lat".into(), loc.lat.into());
        obj.insert("lon".into(), loc.lon.into());
    }
    obj.insert("strategy".into(), c.strategy.as_str().into());
    Value::Object(obj)
}

pub fn write_manifest<W: Write>(mut out: W, annotations: &[Annotation]) -> std::io::Result<()> {
    for a in annotations {
        serde_json::to_writer(&mut out, &annotation_to_json(a))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_camera_registry<W: Write>(out: W, cameras: &[Camera]) -> std::io::Result<()> {
    let items: Vec<Value> = cameras.iter().map(camera_to_json).collect();
    serde_json::to_writer_pretty(out, &items)?;
    Ok(())
}

/// Write both manifest files of a dataset.
pub fn write_dataset(
    dataset: &Dataset,
    annotations_path: &Path,
    cameras_path: &Path,
) -> Result<(), IngestError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let f = fs::File::create(annotations_path).map_err(io_err(annotations_path))?;
    let mut w = std::io::BufWriter::new(f);
    write_manifest(&mut w, &dataset.annotations).map_err(io_err(annotations_path))?;
    w.flush().map_err(io_err(annotations_path))?;
    let f = fs::File::create(cameras_path).map_err(io_err(cameras_path))?;
    write_camera_registry(std::io::BufWriter::new(f), &dataset.cameras)
        .map_err(io_err(cameras_path))?;
    Ok(())
}

/// Parse from in-memory manifest text; used by tests and the service.
pub fn parse_manifest_str(
    manifest: &str,
    cameras: &[Camera],
) -> (Vec<Annotation>, Vec<RejectedLine>) {
    parse_annotation_lines(BufReader::new(manifest.as_bytes()), cameras)
        .expect("reading from memory cannot fail")
}
