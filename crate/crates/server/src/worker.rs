//! One thread per run owns the engine; everything else sees snapshots.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use census_core::config::RunConfig;
use census_core::ingest::{Annotation, Camera, Dataset};
use census_core::lca::{
    Clustering, LcaEngine, LcaError, ReviewLogEntry, ReviewOutcome, ReviewRequest, ReviewerKind, RunResult,
    SubmitResult,
};
use census_core::matchers::{ReviewChannel, SimHuman, SimOracleModel, Verifier};
use census_core::pipeline::{run_funnel, Encounter, FunnelReport};
use census_core::state::save_state;
use log::{error, warn};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};

pub const RECORD_KIND: &str = "service_run";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Filtering,
    Scoring,
    AwaitingReviews,
    Converged,
    Suspended,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Filtering => "filtering",
            RunStatus::Scoring => "scoring",
            RunStatus::AwaitingReviews => "awaiting_reviews",
            RunStatus::Converged => "converged",
            RunStatus::Suspended => "suspended",
            RunStatus::Failed => "failed",
        }
    }
}

/// Who answers human review requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Requests wait in the queue for API clients.
    #[default]
    Interactive,
    /// The simulated human answers immediately.
    Sim,
}

/// A dataset the service can start runs on.
#[derive(Debug, Clone)]
pub struct ServedDataset {
    pub dataset: Dataset,
    /// Labels backing the simulated ranker and verifier.
    pub truth: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub run_id: String,
    pub dataset: String,
    pub mode: RunMode,
    pub config: RunConfig,
    pub idempotency_key: Option<String>,
}

/// What is persisted per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub engine: Option<LcaEngine>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunCounters {
    pub cluster_count: usize,
    pub algorithmic_reviews: usize,
    pub human_reviews: usize,
    pub total_reviews: usize,
    pub automation_rate: f64,
    pub score: i64,
    pub converged: bool,
}

impl From<&RunResult> for RunCounters {
    fn from(r: &RunResult) -> Self {
        Self {
            cluster_count: r.cluster_count,
            algorithmic_reviews: r.algorithmic_reviews,
            human_reviews: r.human_reviews,
            total_reviews: r.total_reviews,
            automation_rate: r.automation_rate,
            score: r.score,
            converged: r.converged,
        }
    }
}

/// Filtered inputs of a run; fixed once filtering is done.
#[derive(Debug)]
pub struct RunContext {
    pub annotations: BTreeMap<String, Annotation>,
    pub encounters: Vec<Encounter>,
    pub cameras: Vec<Camera>,
    pub funnel: FunnelReport,
}

/// A consistent view of a run at one state version.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub status: RunStatus,
    pub state_version: u64,
    pub counters: RunCounters,
    pub clustering: Clustering,
    pub log: Vec<ReviewLogEntry>,
    /// Pending human request, if the run is waiting for one.
    pub pending: Option<ReviewRequest>,
    pub context: Option<Arc<RunContext>>,
    pub error: Option<String>,
}

impl Snapshot {
    fn initial() -> Self {
        Self {
            status: RunStatus::Filtering,
            state_version: 0,
            counters: RunCounters::default(),
            clustering: Clustering::default(),
            log: Vec::new(),
            pending: None,
            context: None,
            error: None,
        }
    }
}

pub enum Command {
    Submit {
        request_id: u64,
        outcome: ReviewOutcome,
        reply: oneshot::Sender<Result<SubmitResult, LcaError>>,
    },
}

pub struct WorkerHandle {
    pub commands: mpsc::UnboundedSender<Command>,
    pub snapshots: watch::Receiver<Arc<Snapshot>>,
}

struct Worker {
    spec: RunSpec,
    db: Option<PathBuf>,
    publisher: watch::Sender<Arc<Snapshot>>,
    current: Snapshot,
}

impl Worker {
    fn publish(&mut self, status: RunStatus, engine: Option<&LcaEngine>) {
        self.current.status = status;
        self.current.state_version += 1;
        if let Some(engine) = engine {
            let result = RunResult::from_engine(engine);
            self.current.counters = RunCounters::from(&result);
            self.current.clustering = result.clustering;
            self.current.log = engine.log().to_vec();
            self.current.pending = engine
                .pending()
                .filter(|r| r.reviewer == ReviewerKind::Human)
                .cloned();
        }
        self.publisher.send_replace(Arc::new(self.current.clone()));
    }

    fn fail(&mut self, message: String, engine: Option<&LcaEngine>) {
        error!("run {} failed: {message}", self.spec.run_id);
        self.current.error = Some(message);
        self.publish(RunStatus::Failed, engine);
    }

    fn persist(&self, engine: Option<&LcaEngine>) {
        let Some(dir) = &self.db else { return };
        let record = RunRecord {
            spec: self.spec.clone(),
            engine: engine.cloned(),
        };
        let path = dir.join(format!("{}.json", self.spec.run_id));
        if let Err(e) = save_state(RECORD_KIND, &record, &path) {
            warn!("cannot persist run {}: {e}", self.spec.run_id);
        }
    }

    /// Answer algorithmic (and, in sim mode, human) requests until the
    /// engine converges or waits for a person.
    fn advance(
        &mut self,
        engine: &mut LcaEngine,
        model: &SimOracleModel,
        human: &mut Option<SimHuman<Arc<SimOracleModel>>>,
    ) -> Result<RunStatus, String> {
        loop {
            let Some(req) = engine.next_request() else {
                return Ok(RunStatus::Converged);
            };
            let outcome = match req.reviewer {
                ReviewerKind::Algorithmic => {
                    let v = model
                        .verify(&req.pair.0, &req.pair.1, req.attempt)
                        .map_err(|e| e.to_string())?;
                    ReviewOutcome::algorithmic(v.decision, v.p_same)
                }
                ReviewerKind::Human => match human {
                    Some(h) => h.review(&req).map_err(|e| e.to_string())?,
                    None => return Ok(RunStatus::AwaitingReviews),
                },
            };
            engine.submit(req.request_id, outcome).map_err(|e| e.to_string())?;
        }
    }

    fn run(
        mut self,
        served: Arc<ServedDataset>,
        resume: Option<LcaEngine>,
        mut commands: mpsc::UnboundedReceiver<Command>,
    ) {
        let funnel = run_funnel(&served.dataset, &self.spec.config.filter);
        let by_id = served.dataset.annotation_map();
        let context = Arc::new(RunContext {
            annotations: funnel
                .encounters
                .iter()
                .flat_map(|e| e.member_ids.iter())
                .chain(funnel.report.final_ids.iter())
                .filter_map(|id| by_id.get(id.as_str()).map(|a| (id.clone(), (*a).clone())))
                .collect(),
            encounters: funnel.encounters.clone(),
            cameras: served.dataset.cameras.clone(),
            funnel: funnel.report.clone(),
        });
        self.current.context = Some(context);

        let ids = funnel.report.final_ids.clone();
        let truth = served.truth.clone().unwrap_or_default();
        let missing: Vec<&String> = ids.iter().filter(|id| !truth.contains_key(*id)).collect();
        if !missing.is_empty() {
            self.fail(format!("{} annotations have no truth label, e.g. {}", missing.len(), missing[0]), None);
            return;
        }
        let truth = ids.iter().map(|id| (id.clone(), truth[id].clone())).collect();
        let model = Arc::new(SimOracleModel::new(truth, self.spec.config.oracle.clone()));
        let mut human = (self.spec.mode == RunMode::Sim).then(|| SimHuman::new(model.clone()));

        let mut engine = match resume {
            Some(engine) => engine,
            None => match LcaEngine::new(ids, self.spec.config.lca.clone()) {
                Ok(mut engine) => {
                    self.publish(RunStatus::Scoring, Some(&engine));
                    engine.init_graph(model.as_ref());
                    engine
                }
                Err(e) => {
                    self.fail(e.to_string(), None);
                    return;
                }
            },
        };
        self.publish(RunStatus::Scoring, Some(&engine));
        let mut status = match self.advance(&mut engine, &model, &mut human) {
            Ok(s) => s,
            Err(e) => {
                self.fail(e, Some(&engine));
                return;
            }
        };
        self.persist(Some(&engine));
        self.publish(status, Some(&engine));

        while let Some(cmd) = commands.blocking_recv() {
            match cmd {
                Command::Submit {
                    request_id,
                    outcome,
                    reply,
                } => {
                    if status == RunStatus::Failed {
                        let _ = reply.send(Err(LcaError::UnknownRequest(request_id)));
                        continue;
                    }
                    let result = engine.submit(request_id, outcome);
                    if matches!(result, Ok(SubmitResult::Applied)) {
                        self.publish(RunStatus::Scoring, Some(&engine));
                        status = match self.advance(&mut engine, &model, &mut human) {
                            Ok(s) => s,
                            Err(e) => {
                                self.current.error = Some(e);
                                RunStatus::Failed
                            }
                        };
                        self.persist(Some(&engine));
                        self.publish(status, Some(&engine));
                    }
                    let _ = reply.send(result);
                }
            }
        }
    }
}

/// Start the worker thread for a run. `resume` continues a persisted engine.
pub fn spawn(
    spec: RunSpec,
    served: Arc<ServedDataset>,
    resume: Option<LcaEngine>,
    db: Option<PathBuf>,
) -> WorkerHandle {
    let (publisher, snapshots) = watch::channel(Arc::new(Snapshot::initial()));
    let (commands, rx) = mpsc::unbounded_channel();
    let worker = Worker {
        spec,
        db,
        publisher,
        current: Snapshot::initial(),
    };
    std::thread::Builder::new()
        .name(format!("run-{}", worker.spec.run_id))
        .spawn(move || worker.run(served, resume, rx))
        .expect("spawn run worker");
    WorkerHandle { commands, snapshots }
}

/// A handle for a run whose worker could not start.
pub fn failed(message: String) -> WorkerHandle {
    let snap = Snapshot {
        status: RunStatus::Failed,
        state_version: 1,
        error: Some(message),
        ..Snapshot::initial()
    };
    let (_publisher, snapshots) = watch::channel(Arc::new(snap));
    let (commands, _rx) = mpsc::unbounded_channel();
    WorkerHandle { commands, snapshots }
}
