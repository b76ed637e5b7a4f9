//! Artifacts kept in the `--db` directory between subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use census_core::config::RunConfig;
use census_core::ingest::Dataset;
use census_core::lca::LcaEngine;
use census_core::pipeline::FunnelOutput;
use census_core::report::EstimateSection;
use census_core::sim::{parse_truth_csv, TRUTH_FILE};
use census_core::state::{load_state, save_state};
use census_core::stats::parse_events;
use serde::{Deserialize, Serialize};

use crate::Invalid;

pub const DATASET: &str = "dataset";
pub const FUNNEL: &str = "funnel";
pub const CLUSTER: &str = "cluster";
pub const ESTIMATE: &str = "estimate";

/// Engine state plus the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub config: RunConfig,
    pub mode: String,
    pub engine: LcaEngine,
}

pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, kind: &str) -> PathBuf {
        self.dir.join(format!("{kind}.json"))
    }

    pub fn exists(&self, kind: &str) -> bool {
        self.path(kind).exists()
    }

    pub fn save<T: Serialize>(&self, kind: &str, value: &T) -> Result<()> {
        save_state(kind, value, &self.path(kind))?;
        Ok(())
    }

    /// Load an artifact an earlier subcommand should have written.
    pub fn load<T: for<'de> Deserialize<'de>>(&self, kind: &str, producer: &str) -> Result<T> {
        if !self.exists(kind) {
            return Err(Invalid(format!(
                "{} has no {kind} yet; run `census {producer}` first",
                self.dir.display()
            ))
            .into());
        }
        Ok(load_state(kind, &self.path(kind))?)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.load(DATASET, "ingest")
    }

    pub fn funnel(&self) -> Result<FunnelOutput> {
        self.load(FUNNEL, "filter")
    }

    pub fn cluster(&self) -> Result<ClusterRecord> {
        self.load(CLUSTER, "cluster")
    }

    pub fn estimate(&self) -> Result<Option<EstimateSection>> {
        if self.exists(ESTIMATE) {
            Ok(Some(load_state(ESTIMATE, &self.path(ESTIMATE))?))
        } else {
            Ok(None)
        }
    }
}

/// A file named `name` next to the dataset's manifest.
fn beside_manifest(dataset: &Dataset, name: &str) -> Option<PathBuf> {
    let manifest = PathBuf::from(&dataset.provenance.as_ref()?.manifest_path);
    let path = manifest.parent()?.join(name);
    path.exists().then_some(path)
}

/// Ground-truth labels from the config, or `truth.csv` beside the manifest.
pub fn find_truth(config: &RunConfig, dataset: &Dataset) -> Result<Option<BTreeMap<String, String>>> {
    let path = match &config.data.truth {
        Some(p) => Some(p.clone()),
        None => beside_manifest(dataset, TRUTH_FILE),
    };
    let Some(path) = path else { return Ok(None) };
    let file = std::fs::File::open(&path).map_err(|e| Invalid(format!("cannot open truth {}: {e}", path.display())))?;
    Ok(Some(parse_truth_csv(file)?))
}

/// Capture events from the flag, the config, or `events.csv` beside the
/// manifest.
pub fn find_events(flag: Option<&Path>, config: &RunConfig, dataset: &Dataset) -> Result<BTreeMap<String, u8>> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| config.data.events.clone())
        .or_else(|| beside_manifest(dataset, census_core::sim::EVENTS_FILE))
        .ok_or_else(|| Invalid("no events file; pass --events".into()))?;
    let file =
        std::fs::File::open(&path).map_err(|e| Invalid(format!("cannot open events {}: {e}", path.display())))?;
    parse_events(file).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}
