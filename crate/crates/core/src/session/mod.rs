//! The adaptive loop: plan with the current estimate, execute, collect a
//! label, update the estimate, and log every round.

mod batch;
mod config;
mod log;

pub use batch::{
    quantile, run_batch, write_batch_csv, BatchReport, BatchRow, RunSummary, ANGLE_TARGET_DEG,
    BATCH_CSV_COLUMNS, COINCIDENCE_TARGET,
};
pub use config::{DriftSpec, FieldProblem, Mode, SessionConfig, SrdmSource, TruthSpec};
pub use log::{append_event, load_session, Event, LoadWarning, Note, EVENT_VERSION};

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    channel_gate, flip_label, generate_srdm, inject_execution_noise, inject_sensor_noise,
    plan_experiment, planning_instance, Delivery, EnvError, HiddenTruth,
};
use crate::estimator::{
    angle_error, make_observation, normalize_observation, EstimateState, EstimatorError, Label,
    ProbeSet,
};
use crate::matrix::Matrix;
use crate::model::{lift_reduced_gains, reduce, ModelError, ReducedPoint, Srdm};
use crate::solver::{solve_reduced_direct, SolveError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid config: {}", .0.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<FieldProblem>),
    #[error("BudgetExhausted: all {0} rounds have been run")]
    BudgetExhausted(u64),
    #[error("AwaitingFeedback: round {0} needs a label before the next step")]
    AwaitingFeedback(u64),
    #[error("no round is awaiting feedback")]
    NotAwaiting,
    #[error("operation requires {0} mode")]
    WrongMode(&'static str),
    #[error("EmptySession: no rounds have been run")]
    EmptySession,
    #[error("log has no config event")]
    EmptyLog,
    #[error("CorruptLog: line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Running,
    AwaitingFeedback,
    Done,
}

/// One independent generator per noise source, so changing the intensity
/// of one source leaves the draws of the others untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    #[serde(with = "rng_state")]
    pub srdm: ChaCha8Rng,
    #[serde(with = "rng_state")]
    pub sense: ChaCha8Rng,
    #[serde(with = "rng_state")]
    pub exec: ChaCha8Rng,
    #[serde(with = "rng_state")]
    pub label: ChaCha8Rng,
    #[serde(with = "rng_state")]
    pub drop: ChaCha8Rng,
}

/// Generator position as `{seed: hex, stream, word_pos: decimal string}`.
/// The word position is a `u128`, which self-describing formats cannot
/// buffer, hence the string.
mod rng_state {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct State {
        seed: String,
        stream: u64,
        word_pos: String,
    }

    pub fn serialize<S: Serializer>(rng: &ChaCha8Rng, s: S) -> Result<S::Ok, S::Error> {
        State {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ChaCha8Rng, D::Error> {
        let st = State::deserialize(d)?;
        if st.seed.len() != 64 || !st.seed.is_ascii() {
            return Err(D::Error::custom("seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (k, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&st.seed[2 * k..2 * k + 2], 16).map_err(D::Error::custom)?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(st.stream);
        rng.set_word_pos(st.word_pos.parse().map_err(D::Error::custom)?);
        Ok(rng)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const TRUTH_STREAM: u64 = 0;
const PROBE_STREAM: u64 = 1;

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            srdm: stream(seed, 2),
            sense: stream(seed, 3),
            exec: stream(seed, 4),
            label: stream(seed, 5),
            drop: stream(seed, 6),
        }
    }
}

/// What happened to the estimate at the end of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateOutcome {
    Applied,
    /// Applied, but the accumulator cancelled out; the previous direction
    /// is kept.
    Conflicted,
    Dropped,
    /// Delivered but unusable.
    Skipped {
        reason: String,
    },
}

/// Steps 1 to 3 of a round: situation, plan, execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRound {
    pub round: u64,
    /// Situation as it really is.
    pub srdm: Srdm,
    /// Situation as the planner perceived it.
    pub perceived: Srdm,
    pub intended: Matrix,
    pub realized: Matrix,
    pub reduced_point: ReducedPoint,
    /// Value of the realized plan under the planner's presentation gains.
    pub effect: f64,
    /// Direction the plan was computed with.
    pub planning_estimate: Vec<f64>,
    pub rng: RngStreams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub srdm: Srdm,
    pub perceived: Srdm,
    pub intended: Matrix,
    pub realized: Matrix,
    pub reduced_point: ReducedPoint,
    pub effect: f64,
    pub label: Label,
    pub delivered: bool,
    pub update: UpdateOutcome,
    /// Planning direction after this round's update.
    pub estimate: Vec<f64>,
    pub state: EstimateState,
    /// True optimum minus the true value of the realized plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
    pub rng: RngStreams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsPoint {
    pub round: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coincidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulative_regret: Option<f64>,
    pub good: u64,
    pub bad: u64,
    pub drops: u64,
}

/// Column order of [`write_series_csv`].
pub const SERIES_CSV_COLUMNS: [&str; 8] = [
    "round",
    "coincidence",
    "angle_error",
    "regret",
    "cumulative_regret",
    "good",
    "bad",
    "drops",
];

/// Writes one row per round in [`SERIES_CSV_COLUMNS`] order; absent
/// metrics are empty cells.
pub fn write_series_csv<W: std::io::Write>(points: &[MetricsPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_CSV_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in points {
        w.write_record([
            p.round.to_string(),
            opt(p.coincidence),
            opt(p.angle_error),
            opt(p.regret),
            opt(p.cumulative_regret),
            p.good.to_string(),
            p.bad.to_string(),
            p.drops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
struct TruthSchedule {
    initial: HiddenTruth,
    probes: ProbeSet,
    drift: Option<(u64, HiddenTruth, ProbeSet)>,
}

impl TruthSchedule {
    fn at(&self, round: u64) -> (&HiddenTruth, &ProbeSet) {
        match &self.drift {
            Some((from, t, p)) if round >= *from => (t, p),
            _ => (&self.initial, &self.probes),
        }
    }
}

fn draw_gains(m: usize, n: usize, [lo, hi]: [f64; 2], rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..m * n).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(m, n, data).expect("sized")
}

fn build_truth(config: &SessionConfig) -> Result<Option<TruthSchedule>, SessionError> {
    if !config.is_simulated() {
        return Ok(None);
    }
    let spec = config.truth_spec();
    let (m, n) = (config.family.m, config.family.n);
    let mut truth_rng = stream(config.noise.seed, TRUTH_STREAM);
    let mut probe_rng = stream(config.noise.seed, PROBE_STREAM);
    let initial_gains = spec
        .gains
        .clone()
        .unwrap_or_else(|| draw_gains(m, n, spec.range, &mut truth_rng));
    let probe_srdms = (0..config.probe_set_size)
        .map(|_| generate_srdm(&config.family, &mut probe_rng))
        .collect::<Result<Vec<_>, _>>()?;
    let hidden = |gains: Matrix| HiddenTruth {
        gains,
        epsilon_opt: spec.epsilon_opt,
    };
    let probes = ProbeSet::new(&probe_srdms, &initial_gains)?;
    let drift = match &spec.drift {
        Some(d) => {
            let gains = d
                .gains
                .clone()
                .unwrap_or_else(|| draw_gains(m, n, spec.range, &mut truth_rng));
            let p = ProbeSet::new(&probe_srdms, &gains)?;
            Some((d.round, hidden(gains), p))
        }
        None => None,
    };
    Ok(Some(TruthSchedule {
        initial: hidden(initial_gains),
        probes,
        drift,
    }))
}

/// Normalized all-ones direction used before any usable observation.
pub fn initial_estimate(dim: usize) -> Vec<f64> {
    let v = 1.0 / (dim as f64).sqrt();
    vec![v; dim]
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A running adaptive session. One owner at a time.
#[derive(Debug)]
pub struct Session {
    config: SessionConfig,
    created_at: u64,
    truth: Option<TruthSchedule>,
    state: EstimateState,
    rngs: RngStreams,
    records: Vec<RoundRecord>,
    metrics: Vec<MetricsPoint>,
    pending: Option<PendingRound>,
    events: Vec<String>,
    sink: Option<BufWriter<File>>,
}

impl Session {
    /// In-memory session; events are kept but not written anywhere.
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        let mut s = Self::skeleton(config, unix_now())?;
        let line = s.config_event().to_line();
        s.events.push(line);
        Ok(s)
    }

    /// Session persisted to `path`, which is created or truncated.
    pub fn create(config: SessionConfig, path: &Path) -> Result<Self, SessionError> {
        let mut s = Self::skeleton(config, unix_now())?;
        s.sink = Some(BufWriter::new(File::create(path)?));
        s.emit(&[s.config_event()])?;
        Ok(s)
    }

    /// Loads the log at `path`, or starts a fresh session there when the
    /// file is missing or empty.
    pub fn open(
        config: SessionConfig,
        path: &Path,
    ) -> Result<(Self, Vec<LoadWarning>), SessionError> {
        let empty = std::fs::read(path)
            .map(|b| b.iter().all(u8::is_ascii_whitespace))
            .unwrap_or(true);
        if empty {
            Ok((Self::create(config, path)?, Vec::new()))
        } else {
            load_session(path)
        }
    }

    pub(crate) fn skeleton(config: SessionConfig, created_at: u64) -> Result<Self, SessionError> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(SessionError::InvalidConfig(problems));
        }
        let truth = build_truth(&config)?;
        let dim = config.family.reduced_dim();
        Ok(Self {
            state: EstimateState::new(dim, config.estimator.gamma),
            rngs: RngStreams::new(config.noise.seed),
            created_at,
            truth,
            config,
            records: Vec::new(),
            metrics: Vec::new(),
            pending: None,
            events: Vec::new(),
            sink: None,
        })
    }

    fn config_event(&self) -> Event {
        Event::Config {
            v: EVENT_VERSION,
            created_at: self.created_at,
            config: Box::new(self.config.clone()),
        }
    }

    fn emit(&mut self, events: &[Event]) -> Result<(), SessionError> {
        let lines: Vec<String> = events.iter().map(Event::to_line).collect();
        if let Some(sink) = &mut self.sink {
            log::write_lines(sink, &lines)?;
        }
        self.events.extend(lines);
        Ok(())
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    pub fn metrics(&self) -> &[MetricsPoint] {
        &self.metrics
    }

    pub fn estimate_state(&self) -> &EstimateState {
        &self.state
    }

    pub fn pending(&self) -> Option<&PendingRound> {
        self.pending.as_ref()
    }

    /// Serialized event log lines, config first.
    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn rounds_done(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn status(&self) -> Status {
        if self.pending.is_some() {
            Status::AwaitingFeedback
        } else if self.rounds_done() >= self.config.rounds {
            Status::Done
        } else {
            Status::Running
        }
    }

    /// Hidden gains in force at the next round, simulated mode only.
    pub fn truth(&self) -> Option<&HiddenTruth> {
        let next = self.rounds_done() + 1;
        self.truth.as_ref().map(|t| t.at(next).0)
    }

    /// Direction the planner currently uses.
    pub fn planning_estimate(&self) -> Vec<f64> {
        self.state
            .estimate()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| initial_estimate(self.state.dim()))
    }

    fn check_can_begin(&self) -> Result<u64, SessionError> {
        if let Some(p) = &self.pending {
            return Err(SessionError::AwaitingFeedback(p.round));
        }
        if self.rounds_done() >= self.config.rounds {
            return Err(SessionError::BudgetExhausted(self.config.rounds));
        }
        Ok(self.rounds_done() + 1)
    }

    /// Steps 1 to 3 without touching session state.
    fn plan_round(&self, round: u64) -> Result<PendingRound, SessionError> {
        let mut rng = self.rngs.clone();
        let estimate = self.planning_estimate();
        let srdm = match self.config.srdm_source {
            config::SrdmSource::Random => generate_srdm(&self.config.family, &mut rng.srdm)?,
            config::SrdmSource::Active => plan_experiment(
                &self.config.family,
                &estimate,
                &self.config.experiment,
                &mut rng.srdm,
            )?,
        };
        let perceived = inject_sensor_noise(&srdm, self.config.noise.sigma_sense, &mut rng.sense)?;
        let inst = planning_instance(&perceived, &estimate)?;
        let lp = reduce(&inst);
        let report = solve_reduced_direct(&inst, &lp, &self.config.solver)?;
        let intended = report.plan.x;
        let realized =
            inject_execution_noise(&intended, self.config.noise.sigma_exec, &mut rng.exec);
        let effect = inst.gains().dot(&realized).expect("same shape");
        Ok(PendingRound {
            round,
            srdm,
            perceived,
            intended,
            realized,
            reduced_point: report.reduced_point,
            effect,
            planning_estimate: estimate,
            rng,
        })
    }

    /// Step 4 and bookkeeping. Consumes the label and drop streams of
    /// `pending.rng`.
    fn complete_round(
        &mut self,
        pending: PendingRound,
        label: Label,
        started: Option<Instant>,
    ) -> Result<RoundRecord, SessionError> {
        let mut rng = pending.rng.clone();
        let delivered =
            channel_gate(self.config.noise.p_drop, &mut rng.drop) == Delivery::Delivered;
        let (state, update) = if delivered {
            let inst = planning_instance(&pending.perceived, &pending.planning_estimate)?;
            let lp = reduce(&inst);
            match make_observation(
                &lp,
                &pending.reduced_point,
                label,
                self.config.estimator.lambda_neg,
            ) {
                Ok(raw) => {
                    let obs = normalize_observation(&raw, label, pending.round);
                    match self.state.update(&obs) {
                        Ok(s) if s.is_conflicted() => (s, UpdateOutcome::Conflicted),
                        Ok(s) => (s, UpdateOutcome::Applied),
                        Err(e) => (
                            self.state.clone(),
                            UpdateOutcome::Skipped {
                                reason: e.to_string(),
                            },
                        ),
                    }
                }
                Err(e) => (
                    self.state.clone(),
                    UpdateOutcome::Skipped {
                        reason: e.to_string(),
                    },
                ),
            }
        } else {
            (self.state.clone(), UpdateOutcome::Dropped)
        };
        let regret = match &self.truth {
            Some(t) => Some(crate::env::regret(
                t.at(pending.round).0,
                &pending.srdm,
                &pending.realized,
            )?),
            None => None,
        };
        self.state = state;
        self.rngs = rng.clone();
        let record = RoundRecord {
            round: pending.round,
            srdm: pending.srdm,
            perceived: pending.perceived,
            intended: pending.intended,
            realized: pending.realized,
            reduced_point: pending.reduced_point,
            effect: pending.effect,
            label,
            delivered,
            update,
            estimate: self.planning_estimate(),
            state: self.state.clone(),
            regret,
            timing_ms: started
                .filter(|_| self.config.record_timing)
                .map(|t| t.elapsed().as_secs_f64() * 1e3),
            rng,
        };
        let point = self.compute_metrics(&record)?;
        self.records.push(record.clone());
        self.metrics.push(point.clone());
        self.emit(&[
            Event::Round {
                v: EVENT_VERSION,
                record: Box::new(record.clone()),
            },
            Event::Metrics {
                v: EVENT_VERSION,
                point,
            },
        ])?;
        Ok(record)
    }

    fn compute_metrics(&self, record: &RoundRecord) -> Result<MetricsPoint, SessionError> {
        let prev = self.metrics.last();
        let count = |f: fn(&MetricsPoint) -> u64| prev.map(f).unwrap_or(0);
        let (coincidence, angle) = self.truth_metrics(record.round, &record.estimate)?;
        Ok(MetricsPoint {
            round: record.round,
            coincidence,
            angle_error: angle,
            regret: record.regret,
            cumulative_regret: record
                .regret
                .map(|r| r + prev.and_then(|p| p.cumulative_regret).unwrap_or(0.0)),
            good: count(|p| p.good) + u64::from(record.label.is_good()),
            bad: count(|p| p.bad) + u64::from(!record.label.is_good()),
            drops: count(|p| p.drops) + u64::from(!record.delivered),
        })
    }

    fn truth_metrics(
        &self,
        round: u64,
        estimate: &[f64],
    ) -> Result<(Option<f64>, Option<f64>), SessionError> {
        match &self.truth {
            Some(t) => {
                let (truth, probes) = t.at(round);
                let coincidence = probes.coincidence(estimate)?;
                let angle = angle_error(estimate, &truth.reduced_gains())?;
                Ok((Some(coincidence), Some(angle)))
            }
            None => Ok((None, None)),
        }
    }

    /// One complete round with the simulated decision-maker.
    pub fn run_round(&mut self) -> Result<RoundRecord, SessionError> {
        if self.truth.is_none() {
            return Err(SessionError::WrongMode("SIMULATED_DM"));
        }
        let round = self.check_can_begin()?;
        let started = Instant::now();
        let mut pending = self.plan_round(round)?;
        let hidden = self.truth.as_ref().expect("checked").at(round).0;
        let clean = hidden.clean_label(&pending.srdm, &pending.realized)?;
        let label = flip_label(
            clean,
            self.config.noise.p_fp,
            self.config.noise.p_fn,
            &mut pending.rng.label,
        );
        self.complete_round(pending, label, Some(started))
    }

    /// Runs rounds until the budget is spent.
    pub fn run_to_end(&mut self) -> Result<(), SessionError> {
        while self.status() == Status::Running {
            self.run_round()?;
        }
        Ok(())
    }

    /// Human mode: present the next plan and wait for a label.
    pub fn begin_round(&mut self) -> Result<PendingRound, SessionError> {
        if self.config.is_simulated() {
            return Err(SessionError::WrongMode("HUMAN_DM"));
        }
        let round = self.check_can_begin()?;
        let pending = self.plan_round(round)?;
        self.emit(&[Event::Note {
            v: EVENT_VERSION,
            note: Note::Pending {
                pending: Box::new(pending.clone()),
            },
        }])?;
        self.pending = Some(pending.clone());
        Ok(pending)
    }

    /// Human mode: label the pending plan and finish the round.
    pub fn submit_feedback(&mut self, label: Label) -> Result<RoundRecord, SessionError> {
        let pending = self.pending.take().ok_or(SessionError::NotAwaiting)?;
        match self.complete_round(pending.clone(), label, None) {
            Ok(r) => Ok(r),
            Err(e) => {
                self.pending = Some(pending);
                Err(e)
            }
        }
    }

    /// Metrics recomputed for the current estimate.
    pub fn metrics_snapshot(&self) -> Result<MetricsPoint, SessionError> {
        let last = self.metrics.last().ok_or(SessionError::EmptySession)?;
        let (coincidence, angle_error) =
            self.truth_metrics(last.round, &self.planning_estimate())?;
        Ok(MetricsPoint {
            coincidence,
            angle_error,
            ..last.clone()
        })
    }
}

/// Free-function form of [`Session::run_round`].
pub fn run_round(session: &mut Session) -> Result<RoundRecord, SessionError> {
    session.run_round()
}

/// Free-function form of [`Session::metrics_snapshot`].
pub fn metrics_snapshot(session: &Session) -> Result<MetricsPoint, SessionError> {
    session.metrics_snapshot()
}

/// Lifted gain matrix the planner currently presents.
pub fn presentation_gains(session: &Session) -> Matrix {
    let f = &session.config().family;
    lift_reduced_gains(f.m, f.n, &session.planning_estimate())
}
