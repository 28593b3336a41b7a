//! Deterministic discrete-event core.
//!
//! The engine owns simulated time, a `(time, sequence_no)`-ordered event
//! queue, per-client FIFO occupancy and the requests in flight. Server
//! behaviour lives behind [`Policy`]: the engine calls it on every update
//! arrival and round barrier, evaluates the current models on a fixed tick,
//! and stops on targets, a time cap or a round cap.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::delay_model::{sample_duration, ClientProfile, DelayShape};
use crate::error::{Error, Result};
use crate::local_trainer::{local_train, RequestId, Update};
use crate::metrics::MetricsRecord;
use crate::objectives::{evaluate, ClientShard, Sample, TaskSpec};
use crate::scalar::Scalar;
use crate::seed::{self, SeedTree};

/// Availability retries allowed per sampled client.
pub const SAMPLING_CAP: u64 = 1_000_000;

/// One task as the simulator sees it: its spec, the clients' data, a held-out
/// evaluation set and the initial model.
#[derive(Debug, Clone)]
pub struct TaskInstance<T> {
    pub spec: TaskSpec<T>,
    /// Indexed by client id.
    pub shards: Vec<ClientShard<T>>,
    pub eval_set: Vec<Sample<T>>,
    pub init: Vec<T>,
    /// Smoothness bound used by the learning-rate validator, if known.
    pub smoothness: Option<f64>,
}

/// Everything a run reads but never mutates.
#[derive(Debug, Clone)]
pub struct Workload<T> {
    pub tasks: Vec<TaskInstance<T>>,
    pub profiles: Vec<ClientProfile>,
}

impl<T> Workload<T> {
    pub fn num_clients(&self) -> usize {
        self.profiles.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    UpdateArrival(RequestId),
    EvalTick,
    SyncRoundBarrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub sequence_no: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.sequence_no.cmp(&self.sequence_no))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(time, sequence_no)`; sequence numbers are assigned at push.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, kind: EventKind) -> Event {
        let ev = Event { time, sequence_no: self.next_seq, kind };
        self.next_seq += 1;
        self.heap.push(ev);
        ev
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientState {
    /// Completion time of the last request queued on this client.
    pub busy_until: f64,
}

/// A local-training request between dispatch and arrival.
#[derive(Debug, Clone)]
pub struct Request<T> {
    pub id: RequestId,
    pub task: usize,
    pub client: usize,
    /// Per-task dispatch counter; keys the request's random streams.
    pub counter: u64,
    pub snapshot: Rc<[T]>,
    pub dispatch_round: u64,
    pub dispatch_time: f64,
    pub start_time: f64,
    pub arrival_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    pub availability: f64,
    pub delay: DelayShape,
    pub eval_interval: f64,
    pub record_trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StopCondition {
    /// Tasks stop training once their target is met; the run ends when all have.
    pub targets: bool,
    pub max_sim_time: Option<f64>,
    /// Ends the run once every unfinished task has completed this many rounds.
    pub max_rounds: Option<u64>,
}

impl StopCondition {
    pub fn validate(&self) -> Result<()> {
        if !self.targets && self.max_sim_time.is_none() && self.max_rounds.is_none() {
            return Err(Error::Config("at least one stop condition must be set".into()));
        }
        if let Some(t) = self.max_sim_time {
            if !(t > 0.0) {
                return Err(Error::Config("max_sim_time must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AllTargetsReached,
    MaxSimTime,
    MaxRounds,
}

/// Server-side view of one task, reported at every evaluation tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskStatus {
    pub round: u64,
    pub r: usize,
    pub b: usize,
    pub staleness_mean: f64,
    pub staleness_max: u64,
    pub c: u64,
    pub dropped: u64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRecord {
    pub time: f64,
    pub task_id: usize,
    /// Round index after the aggregation.
    pub round: u64,
    pub size: usize,
    pub max_staleness: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: f64,
    pub sequence_no: u64,
    pub kind: EventKind,
    pub task: Option<usize>,
    pub client: Option<usize>,
    pub dispatch_time: Option<f64>,
    pub service_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<MetricsRecord>,
    pub aggregations: Vec<AggregationRecord>,
    pub trace: Vec<TraceEntry>,
    /// First evaluation time at which each task met its target, by task position.
    pub time_to_target: Vec<Option<f64>>,
    pub end_time: f64,
    pub stop_reason: Option<StopReason>,
    pub updates_received: u64,
    pub warnings: Vec<String>,
}

/// Server behaviour driven by the engine.
pub trait Policy<T: Scalar> {
    fn start(&mut self, sim: &mut Simulation<'_, T>) -> Result<()>;

    /// Whether an arriving update for `task` should be trained at all. When
    /// false the engine skips local training and delivers an empty delta.
    fn accepts(&self, _task: usize) -> bool {
        true
    }

    fn on_update(&mut self, update: Update<T>, sim: &mut Simulation<'_, T>) -> Result<()>;

    fn on_barrier(&mut self, _sim: &mut Simulation<'_, T>) -> Result<()> {
        Ok(())
    }

    /// Called once when `task` meets its target and target stopping is on.
    fn on_task_finished(&mut self, task: usize, sim: &mut Simulation<'_, T>) -> Result<()>;

    fn model(&self, task: usize) -> &[T];

    fn status(&self, task: usize) -> TaskStatus;
}

/// Draws `k` clients with replacement. Each draw picks a uniform candidate and
/// keeps it with probability `availability`, independently of queue state.
pub fn sample_clients<R: Rng + ?Sized>(n_clients: usize, k: usize, availability: f64, rng: &mut R) -> Result<Vec<usize>> {
    if n_clients == 0 {
        return Err(Error::InvalidParameter("no clients to sample from".into()));
    }
    if !(availability > 0.0 && availability <= 1.0) {
        return Err(Error::InvalidParameter(format!("availability must be in (0, 1], got {availability}")));
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut tries = 0u64;
        loop {
            let candidate = rng.random_range(0..n_clients);
            if availability >= 1.0 || rng.random::<f64>() < availability {
                out.push(candidate);
                break;
            }
            tries += 1;
            if tries >= SAMPLING_CAP {
                return Err(Error::SamplingCapExceeded(SAMPLING_CAP));
            }
        }
    }
    Ok(out)
}

/// Mutable state of one run.
pub struct Simulation<'w, T> {
    workload: &'w Workload<T>,
    config: EngineConfig,
    seeds: SeedTree,
    queue: EventQueue,
    clients: Vec<ClientState>,
    now: f64,
    inflight: BTreeMap<RequestId, Request<T>>,
    next_request: RequestId,
    dispatch_counters: Vec<u64>,
    select_rngs: Vec<ChaCha8Rng>,
    pending_barriers: usize,
    log: RunLog,
}

impl<'w, T: Scalar> Simulation<'w, T> {
    pub fn new(workload: &'w Workload<T>, config: EngineConfig) -> Result<Self> {
        if !(config.eval_interval > 0.0 && config.eval_interval.is_finite()) {
            return Err(Error::Config("eval_interval must be positive".into()));
        }
        if !(config.availability > 0.0 && config.availability <= 1.0) {
            return Err(Error::Config(format!("availability must be in (0, 1], got {}", config.availability)));
        }
        config.delay.validate()?;
        if workload.profiles.is_empty() {
            return Err(Error::Config("workload has no clients".into()));
        }
        for task in &workload.tasks {
            if task.shards.len() != workload.profiles.len() {
                return Err(Error::Config(format!(
                    "task {} has {} shards for {} clients",
                    task.spec.task_id,
                    task.shards.len(),
                    workload.profiles.len()
                )));
            }
        }
        let seeds = SeedTree::new(config.seed);
        let m = workload.tasks.len();
        Ok(Self {
            workload,
            config,
            seeds,
            queue: EventQueue::default(),
            clients: vec![ClientState { busy_until: 0.0 }; workload.profiles.len()],
            now: 0.0,
            inflight: BTreeMap::new(),
            next_request: 0,
            dispatch_counters: vec![0; m],
            select_rngs: workload
                .tasks
                .iter()
                .map(|t| seeds.rng(&[seed::SELECT, t.spec.task_id as u64]))
                .collect(),
            pending_barriers: 0,
            log: RunLog {
                records: Vec::new(),
                aggregations: Vec::new(),
                trace: Vec::new(),
                time_to_target: vec![None; m],
                end_time: 0.0,
                stop_reason: None,
                updates_received: 0,
                warnings: Vec::new(),
            },
        })
    }

    pub fn workload(&self) -> &'w Workload<T> {
        self.workload
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn seeds(&self) -> SeedTree {
        self.seeds
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn inflight(&self) -> usize {
        self.inflight.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.workload.tasks.len()
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.log.warnings.push(message);
    }

    /// Reserves the next dispatch counter for `task`.
    pub fn next_counter(&mut self, task: usize) -> u64 {
        let c = self.dispatch_counters[task];
        self.dispatch_counters[task] += 1;
        c
    }

    /// Samples a client for `task` and queues a request on it.
    pub fn dispatch(&mut self, task: usize, snapshot: &Rc<[T]>, round: u64) -> Result<RequestId> {
        let n = self.workload.num_clients();
        let client = sample_clients(n, 1, self.config.availability, &mut self.select_rngs[task])?[0];
        Ok(self.schedule_request(task, client, snapshot, round).0)
    }

    /// Queues a request on `client` behind whatever it is already serving.
    /// Returns the request id and its arrival event.
    pub fn schedule_request(&mut self, task: usize, client: usize, snapshot: &Rc<[T]>, round: u64) -> (RequestId, Event) {
        let counter = self.next_counter(task);
        let spec = &self.workload.tasks[task].spec;
        let mut rng = self.seeds.request_rng(seed::DELAY, spec.task_id, client, counter);
        let duration = sample_duration(&self.workload.profiles[client], task, spec.tau, self.config.delay, &mut rng);
        let start = self.now.max(self.clients[client].busy_until);
        let arrival = start + duration;
        self.clients[client].busy_until = arrival;
        let id = self.next_request;
        self.next_request += 1;
        self.inflight.insert(
            id,
            Request {
                id,
                task,
                client,
                counter,
                snapshot: Rc::clone(snapshot),
                dispatch_round: round,
                dispatch_time: self.now,
                start_time: start,
                arrival_time: arrival,
            },
        );
        let ev = self.queue.push(arrival, EventKind::UpdateArrival(id));
        (id, ev)
    }

    pub fn schedule_barrier(&mut self, at: f64) -> Event {
        self.pending_barriers += 1;
        self.queue.push(at, EventKind::SyncRoundBarrier)
    }

    pub fn log_aggregation(&mut self, record: AggregationRecord) {
        self.log.aggregations.push(record);
    }

    fn has_work(&self) -> bool {
        !self.inflight.is_empty() || self.pending_barriers > 0
    }

    fn trace(&mut self, ev: &Event, req: Option<&Request<T>>) {
        if self.config.record_trace {
            self.log.trace.push(TraceEntry {
                time: ev.time,
                sequence_no: ev.sequence_no,
                kind: ev.kind,
                task: req.map(|r| r.task),
                client: req.map(|r| r.client),
                dispatch_time: req.map(|r| r.dispatch_time),
                service_start: req.map(|r| r.start_time),
            });
        }
    }

    fn evaluate_all<P: Policy<T>>(&mut self, policy: &mut P, stop: &StopCondition) -> Result<()> {
        for (idx, task) in self.workload.tasks.iter().enumerate() {
            let eval = evaluate(&task.spec, policy.model(idx), &task.eval_set)?;
            let st = policy.status(idx);
            self.log.records.push(MetricsRecord {
                sim_time: self.now,
                task_id: task.spec.task_id,
                round: st.round,
                loss: eval.loss,
                accuracy: eval.accuracy,
                r: st.r,
                b: st.b,
                staleness_mean: st.staleness_mean,
                staleness_max: st.staleness_max,
                c: st.c,
                dropped_count: st.dropped,
            });
            if self.log.time_to_target[idx].is_none() && task.spec.target.reached(eval.loss, eval.accuracy) {
                self.log.time_to_target[idx] = Some(self.now);
                if stop.targets {
                    policy.on_task_finished(idx, self)?;
                }
            }
        }
        Ok(())
    }
}

/// Drives `policy` until a stop condition holds.
pub fn run<T: Scalar, P: Policy<T>>(mut sim: Simulation<'_, T>, policy: &mut P, stop: &StopCondition) -> Result<RunLog> {
    stop.validate()?;
    policy.start(&mut sim)?;
    sim.queue.push(0.0, EventKind::EvalTick);
    let mut ticks = 0u64;
    let m = sim.num_tasks();

    loop {
        if !sim.has_work() {
            return Err(Error::Starved { time: sim.now });
        }
        let ev = sim.queue.pop().ok_or(Error::Starved { time: sim.now })?;
        if let Some(cap) = stop.max_sim_time {
            if ev.time > cap {
                sim.now = cap;
                sim.log.stop_reason = Some(StopReason::MaxSimTime);
                break;
            }
        }
        debug_assert!(ev.time >= sim.now);
        sim.now = ev.time;
        match ev.kind {
            EventKind::UpdateArrival(id) => {
                // cancelled requests leave stale events behind
                let Some(req) = sim.inflight.remove(&id) else { continue };
                sim.trace(&ev, Some(&req));
                sim.log.updates_received += 1;
                let task = &sim.workload.tasks[req.task];
                let delta = if policy.accepts(req.task) {
                    let mut rng = sim.seeds.request_rng(seed::BATCH, task.spec.task_id, req.client, req.counter);
                    local_train(&task.spec, &req.snapshot, &task.shards[req.client], &mut rng)?
                } else {
                    Vec::new()
                };
                let update = Update {
                    request: req.id,
                    task_id: req.task,
                    client_id: req.client,
                    delta,
                    dispatch_round: req.dispatch_round,
                    dispatch_time: req.dispatch_time,
                    arrival_time: req.arrival_time,
                    staleness: 0,
                };
                policy.on_update(update, &mut sim)?;
            }
            EventKind::EvalTick => {
                sim.trace(&ev, None);
                sim.evaluate_all(policy, stop)?;
                ticks += 1;
                let next = ticks as f64 * sim.config.eval_interval;
                sim.queue.push(next, EventKind::EvalTick);
            }
            EventKind::SyncRoundBarrier => {
                sim.trace(&ev, None);
                sim.pending_barriers -= 1;
                policy.on_barrier(&mut sim)?;
            }
        }

        if m > 0 && (0..m).all(|i| policy.status(i).finished) {
            sim.log.stop_reason = Some(StopReason::AllTargetsReached);
            break;
        }
        if let Some(max_rounds) = stop.max_rounds {
            let live: Vec<_> = (0..m).map(|i| policy.status(i)).filter(|s| !s.finished).collect();
            if !live.is_empty() && live.iter().all(|s| s.round >= max_rounds) {
                sim.log.stop_reason = Some(StopReason::MaxRounds);
                break;
            }
        }
    }
    sim.log.end_time = sim.now;
    Ok(sim.log)
}
