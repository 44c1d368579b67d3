//! One configuration session: the current model, its revision, the latest
//! result, the ordered event log and the update log.
//!
//! A session is a plain state machine. Runs are split into
//! [`Session::begin_run`], [`execute`] and [`Session::finish_run`] so that
//! the blocking part can happen off the lock; a run that is superseded by a
//! newer update is cancelled and its result dropped.

use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use fuzzcfg::io::{parse_model, ParseFailure};
use fuzzcfg::pipeline::{
    ModelIssue, OptionChange, Phase, PipelineError, PipelineEvent, UpdateRejected,
};
use fuzzcfg::{apply_update, run_configuration_observed, ConfigurationModel, ConfigurationResult, Update};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventBody {
    PhaseStarted {
        phase: Phase,
    },
    PhaseFinished {
        phase: Phase,
    },
    SweepCompleted {
        stage: String,
        sweep: usize,
        moves: usize,
        groups: usize,
    },
    PartitionChanged {
        stage: String,
        groups: usize,
    },
    ResultReady {
        result: Box<ConfigurationResult>,
    },
    /// A run ended without a result for a reason other than supersession.
    RunFailed {
        code: String,
        message: String,
    },
    UpdateAccepted {
        update: Update,
    },
    UpdateRejected {
        code: String,
        reasons: Vec<String>,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::PhaseStarted { .. } => "phase-started",
            EventBody::PhaseFinished { .. } => "phase-finished",
            EventBody::SweepCompleted { .. } => "sweep-completed",
            EventBody::PartitionChanged { .. } => "partition-changed",
            EventBody::ResultReady { .. } => "result-ready",
            EventBody::RunFailed { .. } => "run-failed",
            EventBody::UpdateAccepted { .. } => "update-accepted",
            EventBody::UpdateRejected { .. } => "update-rejected",
        }
    }
}

impl From<PipelineEvent> for EventBody {
    fn from(e: PipelineEvent) -> Self {
        match e {
            PipelineEvent::PhaseStarted { phase } => EventBody::PhaseStarted { phase },
            PipelineEvent::PhaseFinished { phase } => EventBody::PhaseFinished { phase },
            PipelineEvent::SweepCompleted {
                stage,
                sweep,
                moves,
                groups,
            } => EventBody::SweepCompleted {
                stage,
                sweep,
                moves,
                groups,
            },
            PipelineEvent::PartitionChanged { stage, groups } => {
                EventBody::PartitionChanged { stage, groups }
            }
        }
    }
}

/// An event as delivered to subscribers. `seq` numbers events of one
/// session from 0 without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub seq: u64,
    pub revision: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// One line of the update log. Replaying the lines in order rebuilds the
/// session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    Create { document: String },
    /// Every decoded update, accepted or not.
    Update { update: Update },
    /// A request that never decoded into an update.
    Malformed { reason: String },
    Run,
}

/// The latest completed result and the revision it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Computed {
    pub revision: u64,
    pub result: ConfigurationResult,
}

/// Work order for one run.
#[derive(Debug, Clone)]
pub struct RunJob {
    pub generation: u64,
    pub revision: u64,
    pub model: ConfigurationModel,
    cancel: Arc<AtomicBool>,
}

impl RunJob {
    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

/// How a run ended, as seen by whoever waits on it.
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed(Computed),
    Superseded,
    Failed(String),
}

pub const MALFORMED: &str = "malformed_update";

pub struct Session {
    id: String,
    model: ConfigurationModel,
    revision: u64,
    computed: Option<Computed>,
    events: Vec<EngineEvent>,
    log: Vec<LogEntry>,
    warnings: Vec<ModelIssue>,
    generation: u64,
    active: Option<RunJob>,
    tx: broadcast::Sender<EngineEvent>,
}

/// Capacity of the live event channel; slow subscribers that fall further
/// behind resume from the stored log.
const CHANNEL: usize = 1024;

impl Session {
    pub fn create(id: impl Into<String>, document: &str) -> Result<Self, ParseFailure> {
        let parsed = parse_model(document)?;
        let (tx, _) = broadcast::channel(CHANNEL);
        Ok(Session {
            id: id.into(),
            model: parsed.model,
            revision: 0,
            computed: None,
            events: Vec::new(),
            log: vec![LogEntry::Create {
                document: document.to_owned(),
            }],
            warnings: parsed.warnings,
            generation: 0,
            active: None,
            tx,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn model(&self) -> &ConfigurationModel {
        &self.model
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn computed(&self) -> Option<&Computed> {
        self.computed.as_ref()
    }

    pub fn warnings(&self) -> &[ModelIssue] {
        &self.warnings
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn is_running(&self) -> bool {
        self.active.is_some()
    }

    /// Stored events from `since` on, plus a receiver for everything after.
    /// Both are taken together so nothing falls between them.
    pub fn subscribe(&self, since: u64) -> (Vec<EngineEvent>, broadcast::Receiver<EngineEvent>) {
        let from = usize::try_from(since).unwrap_or(usize::MAX).min(self.events.len());
        (self.events[from..].to_vec(), self.tx.subscribe())
    }

    fn emit(&mut self, revision: u64, body: EventBody) {
        let event = EngineEvent {
            seq: self.events.len() as u64,
            revision,
            body,
        };
        self.events.push(event.clone());
        // no subscribers is fine
        let _ = self.tx.send(event);
    }

    /// Applies an update. Accepted updates bump the revision and cancel a
    /// running computation; the caller decides whether to start a new one.
    pub fn post_update(&mut self, update: Update) -> Result<u64, UpdateRejected> {
        self.log.push(LogEntry::Update {
            update: update.clone(),
        });
        match apply_update(&self.model, &update) {
            Ok(next) => {
                self.model = next;
                self.revision += 1;
                self.emit(self.revision, EventBody::UpdateAccepted { update });
                if let Some(job) = &self.active {
                    job.cancel.store(true, Ordering::SeqCst);
                }
                Ok(self.revision)
            }
            Err(rejected) => {
                self.reject(rejected.clone());
                Err(rejected)
            }
        }
    }

    /// Records an update body that could not be decoded. Nothing changes
    /// but the logs.
    pub fn reject_malformed(&mut self, reason: impl Into<String>) -> UpdateRejected {
        let reason = reason.into();
        self.log.push(LogEntry::Malformed {
            reason: reason.clone(),
        });
        let rejected = UpdateRejected {
            code: MALFORMED.into(),
            reasons: vec![reason],
        };
        self.reject(rejected.clone());
        rejected
    }

    fn reject(&mut self, rejected: UpdateRejected) {
        self.emit(
            self.revision,
            EventBody::UpdateRejected {
                code: rejected.code,
                reasons: rejected.reasons,
            },
        );
    }

    /// Turns run options into logged option updates; a rejected one stops
    /// the run request.
    pub fn apply_options(&mut self, changes: Vec<OptionChange>) -> Result<u64, UpdateRejected> {
        for change in changes {
            self.post_update(Update::SetOption { change })?;
        }
        Ok(self.revision)
    }

    /// Starts a run on the current revision, superseding any active one.
    pub fn begin_run(&mut self) -> RunJob {
        self.log.push(LogEntry::Run);
        self.next_job()
    }

    fn next_job(&mut self) -> RunJob {
        if let Some(old) = self.active.take() {
            old.cancel.store(true, Ordering::SeqCst);
        }
        self.generation += 1;
        let job = RunJob {
            generation: self.generation,
            revision: self.revision,
            model: self.model.clone(),
            cancel: Arc::new(AtomicBool::new(false)),
        };
        self.active = Some(job.clone());
        job
    }

    fn is_current(&self, job: &RunJob) -> bool {
        self.active
            .as_ref()
            .is_some_and(|a| a.generation == job.generation)
            && !job.is_cancelled()
    }

    /// Forwards a progress event of `job`; stale runs are told to stop.
    pub fn progress(&mut self, job: &RunJob, body: EventBody) -> ControlFlow<()> {
        if !self.is_current(job) {
            return ControlFlow::Break(());
        }
        self.emit(job.revision, body);
        ControlFlow::Continue(())
    }

    /// Settles a finished run. A superseded run leaves no trace; if it was
    /// superseded by an update rather than by another run, the returned job
    /// recomputes the latest revision.
    pub fn finish_run(
        &mut self,
        job: &RunJob,
        outcome: Result<ConfigurationResult, PipelineError>,
    ) -> (RunOutcome, Option<RunJob>) {
        let current = self
            .active
            .as_ref()
            .is_some_and(|a| a.generation == job.generation);
        if !current {
            return (RunOutcome::Superseded, None);
        }
        if job.is_cancelled() {
            return (RunOutcome::Superseded, Some(self.next_job()));
        }
        self.active = None;
        match outcome {
            Ok(result) => {
                let computed = Computed {
                    revision: job.revision,
                    result,
                };
                self.computed = Some(computed.clone());
                self.emit(
                    job.revision,
                    EventBody::ResultReady {
                        result: Box::new(computed.result.clone()),
                    },
                );
                (RunOutcome::Completed(computed), None)
            }
            Err(PipelineError::Cancelled) => (RunOutcome::Superseded, Some(self.next_job())),
            Err(e) => {
                let message = e.to_string();
                self.emit(
                    job.revision,
                    EventBody::RunFailed {
                        code: error_code(&e).into(),
                        message: message.clone(),
                    },
                );
                (RunOutcome::Failed(message), None)
            }
        }
    }

    /// Runs to completion on the calling thread, restarting after
    /// supersession. Used by replay, where nothing can interleave.
    pub fn run_blocking(&mut self) -> RunOutcome {
        let mut job = self.begin_run();
        loop {
            let outcome = execute(&job, &mut |body| self.progress(&job, body));
            match self.finish_run(&job, outcome) {
                (_, Some(next)) => job = next,
                (done, None) => return done,
            }
        }
    }

    /// Rebuilds a session from its update log.
    pub fn replay(id: impl Into<String>, log: &[LogEntry]) -> Result<Session, ReplayError> {
        let mut entries = log.iter();
        let Some(LogEntry::Create { document }) = entries.next() else {
            return Err(ReplayError::MissingCreate);
        };
        let mut session = Session::create(id, document).map_err(ReplayError::Document)?;
        for entry in entries {
            match entry {
                LogEntry::Create { .. } => return Err(ReplayError::MissingCreate),
                LogEntry::Update { update } => {
                    let _ = session.post_update(update.clone());
                }
                LogEntry::Malformed { reason } => {
                    session.reject_malformed(reason.clone());
                }
                LogEntry::Run => {
                    session.run_blocking();
                }
            }
        }
        Ok(session)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("an update log starts with exactly one create entry")]
    MissingCreate,
    #[error("logged document no longer parses: {0}")]
    Document(ParseFailure),
    #[error("log line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Parses a JSON-lines update log.
pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, ReplayError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::Line {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn log_line(entry: &LogEntry) -> String {
    serde_json::to_string(entry).expect("log entries serialize")
}

/// The blocking part of a run. `sink` receives progress and may stop the
/// run.
pub fn execute(
    job: &RunJob,
    sink: &mut dyn FnMut(EventBody) -> ControlFlow<()>,
) -> Result<ConfigurationResult, PipelineError> {
    if job.is_cancelled() {
        return Err(PipelineError::Cancelled);
    }
    run_configuration_observed(&job.model, &mut |e| {
        if job.is_cancelled() {
            return ControlFlow::Break(());
        }
        sink(e.into())
    })
}

pub fn error_code(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Invalid(_) => "invalid_model",
        PipelineError::Relation(_) => "relation_error",
        PipelineError::Consensus(_) => "consensus_error",
        PipelineError::Expand(_) => "expansion_error",
        PipelineError::Cancelled => "cancelled",
    }
}
