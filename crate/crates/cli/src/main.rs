//! `census`: simulate, ingest, filter, cluster, estimate, report and serve.

mod interactive;
mod store;

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use census_core::config::{ConfigError, RunConfig};
use census_core::ingest::{parse_manifest, IngestError};
use census_core::lca::{drive, DriveOutcome, LcaEngine, RunResult};
use census_core::matchers::{SimHuman, SimOracleModel};
use census_core::pipeline::run_funnel;
use census_core::report::{CensusReport, EstimateSection, RunSummary};
use census_core::sim::{evaluate, generate, restrict_truth, write_sim_output, SimError};
use census_core::stats::export_geojson;
use clap::{Parser, Subcommand, ValueEnum};
use log::warn;

use interactive::PromptChannel;
use store::{find_events, find_truth, ClusterRecord, Store, CLUSTER, DATASET, ESTIMATE, FUNNEL};

/// A problem with the user's input rather than with the run itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "census", version, about = "Camera-trap census from annotation manifests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sim,
    Interactive,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Working directory holding the artifacts of each step.
    #[arg(long, default_value = "census-db")]
    db: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every randomized component; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Print machine-readable JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a manifest and camera registry into the working directory.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the filtering funnel over the ingested dataset.
    Filter {
        /// Ingest this manifest first.
        #[arg(long, requires = "cameras")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        cameras: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Cluster the filtered annotations.
    Cluster {
        #[arg(long, value_enum, default_value = "sim")]
        mode: Mode,
        /// Continue a suspended run instead of starting over.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Lincoln-Petersen (or Chapman) estimate from the clustering.
    Estimate {
        /// `annotation_id,event` CSV.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Combine every step into one JSON report.
    Report {
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the sightings as GeoJSON.
        #[arg(long)]
        geojson: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a planted population and its manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Host the review service.
    Serve {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        cameras: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Review lease lifetime in seconds.
        #[arg(long, default_value_t = 120)]
        lease_ttl: u64,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(manifest: &Path, cameras: &Path, store: &Store, json: bool) -> Result<()> {
    let parsed = parse_manifest(manifest, cameras)?;
    for r in &parsed.rejected {
        warn!("line {}: {}", r.line, r.reason);
    }
    store.save(DATASET, &parsed.dataset)?;
    if json {
        print_json(&serde_json::json!({
            "annotations": parsed.dataset.annotations.len(),
            "cameras": parsed.dataset.cameras.len(),
            "rejected": parsed.rejected,
        }))
    } else {
        println!(
            "ingested {} annotations from {} cameras ({} lines rejected)",
            parsed.dataset.annotations.len(),
            parsed.dataset.cameras.len(),
            parsed.rejected.len()
        );
        Ok(())
    }
}

fn filter(store: &Store, common: &Common) -> Result<()> {
    let config = load_config(common.config.as_deref(), common.seed)?;
    let dataset = store.dataset()?;
    let out = run_funnel(&dataset, &config.filter);
    store.save(FUNNEL, &out)?;
    if common.json {
        print_json(&out.report)
    } else {
        print!("{}", out.report);
        println!("{} annotations selected", out.report.final_ids.len());
        Ok(())
    }
}

fn cluster(store: &Store, mode: Mode, resume: bool, common: &Common) -> Result<()> {
    let dataset = store.dataset()?;
    let funnel = store.funnel()?;
    let (config, engine) = if resume {
        let record = store.cluster()?;
        (record.config, Some(record.engine))
    } else {
        (load_config(common.config.as_deref(), common.seed)?, None)
    };
    let truth = find_truth(&config, &dataset)?
        .ok_or_else(|| Invalid("the simulated verifier needs truth labels; set data.truth in the config".into()))?;
    let ids = &funnel.report.final_ids;
    let missing = ids.iter().filter(|id| !truth.contains_key(*id)).count();
    if missing > 0 {
        return Err(Invalid(format!("{missing} selected annotations have no truth label")).into());
    }
    let model = Arc::new(SimOracleModel::new(
        restrict_truth(&truth, ids.iter().map(String::as_str)),
        config.oracle.clone(),
    ));
    let mut engine = match engine {
        Some(e) => e,
        None => {
            let mut e = LcaEngine::new(ids.clone(), config.lca.clone())?;
            e.init_graph(model.as_ref());
            e
        }
    };
    let outcome = match mode {
        Mode::Sim => drive(&mut engine, model.as_ref(), &mut SimHuman::new(model.clone()), None)?,
        Mode::Interactive => {
            let stdin = io::stdin();
            let mut channel = PromptChannel::new(stdin.lock(), io::stderr());
            drive(&mut engine, model.as_ref(), &mut channel, None)?
        }
    };
    let mode_name = match mode {
        Mode::Sim => "sim",
        Mode::Interactive => "interactive",
    };
    store.save(CLUSTER, &ClusterRecord {
        config,
        mode: mode_name.into(),
        engine: engine.clone(),
    })?;
    let summary = RunSummary::from(&RunResult::from_engine(&engine));
    if common.json {
        return print_json(&serde_json::json!({ "outcome": outcome, "run": summary }));
    }
    match outcome {
        DriveOutcome::Converged => println!(
            "converged: {} clusters, {} reviews ({} human), automation {}",
            summary.cluster_count, summary.total_reviews, summary.human_reviews, summary.automation_display
        ),
        _ => println!(
            "suspended after {} reviews; continue with `census cluster --mode interactive --resume`",
            summary.total_reviews
        ),
    }
    Ok(())
}

fn estimate_section(store: &Store, events_flag: Option<&Path>, config: &RunConfig) -> Result<EstimateSection> {
    let dataset = store.dataset()?;
    let record = store.cluster()?;
    let events = find_events(events_flag, config, &dataset)?;
    let clustering = record.engine.clustering();
    Ok(EstimateSection::compute(&clustering, &events, config.estimate.estimator))
}

fn estimate(store: &Store, events: Option<&Path>, common: &Common) -> Result<()> {
    let config = load_config(common.config.as_deref(), common.seed)?;
    let section = estimate_section(store, events, &config)?;
    store.save(ESTIMATE, &section)?;
    if common.json {
        return print_json(&section);
    }
    match (&section.capture, &section.estimate) {
        (Some(c), Some(e)) => println!("n1={} n2={} m={}: {e}", c.n1, c.n2, c.m),
        _ => println!("no estimate: {}", section.error.as_deref().unwrap_or("unknown")),
    }
    Ok(())
}

fn report(
    store: &Store,
    out: Option<&Path>,
    geojson: Option<&Path>,
    events: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let dataset = store.dataset()?;
    let funnel = store.funnel()?;
    let record = store.cluster()?;
    let estimate = match store.estimate()? {
        Some(e) => Some(e),
        None => estimate_section(store, events, &record.config).ok(),
    };
    let result = RunResult::from_engine(&record.engine);
    let evaluation = match find_truth(&record.config, &dataset)? {
        Some(truth) => {
            let truth = restrict_truth(&truth, funnel.report.final_ids.iter().map(String::as_str));
            Some(evaluate(&result.clustering, &truth)?)
        }
        None => None,
    };
    let report = CensusReport::build(
        &funnel.report,
        &result,
        &funnel.encounters,
        &dataset.cameras,
        estimate,
        evaluation,
    );
    let digest = report.digest();
    if let Some(path) = geojson {
        let value = export_geojson(&result.clustering, &funnel.encounters, &dataset.cameras, None);
        std::fs::write(path, serde_json::to_string_pretty(&value)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    match out {
        Some(path) => {
            std::fs::write(path, report.to_json()).with_context(|| format!("cannot write {}", path.display()))?;
        }
        None if common.json => println!("{}", report.to_json()),
        None => {}
    }
    if !common.json {
        println!(
            "{} clusters from {} annotations; automation {}",
            report.run.cluster_count,
            report.funnel.final_ids.len(),
            report.run.automation_display
        );
        if let Some(e) = report.estimate.as_ref().and_then(|s| s.estimate.as_ref()) {
            println!("population estimate {e}");
        }
        print!("{}", report.strategies);
        println!("sha256 {digest}");
    }
    Ok(())
}

fn simulate(out: &Path, config: Option<&Path>, seed: Option<u64>, json: bool) -> Result<()> {
    let config = load_config(config, seed)?;
    let sim = generate(&config.sim)?;
    write_sim_output(out, &sim)?;
    let individuals: std::collections::BTreeSet<&str> = sim.truth.values().map(String::as_str).collect();
    if json {
        print_json(&serde_json::json!({
            "annotations": sim.dataset.annotations.len(),
            "cameras": sim.dataset.cameras.len(),
            "individuals_seen": individuals.len(),
            "encounters": sim.bursts.len(),
        }))
    } else {
        println!(
            "wrote {} annotations of {} individuals at {} cameras to {}",
            sim.dataset.annotations.len(),
            individuals.len(),
            sim.dataset.cameras.len(),
            out.display()
        );
        Ok(())
    }
}

fn serve(
    manifest: Option<&Path>,
    cameras: Option<&Path>,
    port: u16,
    lease_ttl: u64,
    common: &Common,
) -> Result<()> {
    let config = load_config(common.config.as_deref(), common.seed)?;
    let dataset = match (manifest, cameras) {
        (Some(m), Some(c)) => parse_manifest(m, c)?.dataset,
        _ => Store::open(&common.db)?.dataset()?,
    };
    let truth = find_truth(&config, &dataset)?;
    let mut datasets = BTreeMap::new();
    datasets.insert("default".to_string(), census_server::worker::ServedDataset { dataset, truth });
    let server_config = census_server::ServerConfig {
        lease_ttl_ms: lease_ttl.saturating_mul(1000),
        db: Some(common.db.join("runs")),
    };
    let state = census_server::AppState::new(datasets, Arc::new(census_server::clock::SystemClock), server_config)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(census_server::serve(addr, state))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            manifest,
            cameras,
            common,
        } => ingest(&manifest, &cameras, &Store::open(&common.db)?, common.json),
        Command::Filter {
            manifest,
            cameras,
            common,
        } => {
            let store = Store::open(&common.db)?;
            if let (Some(m), Some(c)) = (&manifest, &cameras) {
                let parsed = parse_manifest(m, c)?;
                store.save(DATASET, &parsed.dataset)?;
            }
            filter(&store, &common)
        }
        Command::Cluster { mode, resume, common } => cluster(&Store::open(&common.db)?, mode, resume, &common),
        Command::Estimate { events, common } => estimate(&Store::open(&common.db)?, events.as_deref(), &common),
        Command::Report {
            out,
            geojson,
            events,
            common,
        } => report(
            &Store::open(&common.db)?,
            out.as_deref(),
            geojson.as_deref(),
            events.as_deref(),
            &common,
        ),
        Command::Simulate { out, config, seed, json } => simulate(&out, config.as_deref(), seed, json),
        Command::Serve {
            manifest,
            cameras,
            port,
            lease_ttl,
            common,
        } => serve(manifest.as_deref(), cameras.as_deref(), port, lease_ttl, &common),
    }
}

/// 1 for bad input, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<IngestError>() {
            return match e {
                IngestError::NotFound(_) | IngestError::Registry { .. } => 1,
                IngestError::Io { .. } => 2,
            };
        }
        if let Some(SimError::Config { .. }) = cause.downcast_ref::<SimError>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
