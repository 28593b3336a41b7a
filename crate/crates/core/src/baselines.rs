//! Synchronous simultaneous FedAvg with first-k straggler mitigation.
//!
//! Every round the available clients are shuffled and split disjointly across
//! the live tasks. Each task aggregates its first `k` arrivals with the same
//! server rule as the asynchronous server and discards the rest; the round
//! ends when the slowest task has its `k`-th update. The no-buffer
//! asynchronous baseline is the FedAST server with `b = 1` and needs no code
//! here.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::delay_model::{sample_duration, DelayShape};
use crate::error::{Error, Result};
use crate::event_engine::{AggregationRecord, Policy, Simulation, TaskStatus, Workload, SAMPLING_CAP};
use crate::local_trainer::{local_train, Update};
use crate::realloc::apportion;
use crate::scalar::{all_finite, Scalar};
use crate::seed::{self, SeedTree};

/// Default number of updates aggregated per task and round.
pub const DEFAULT_FIRST_K: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SyncRoundState {
    pub round: u64,
    /// Clients assigned to each task, in assignment order.
    pub assigned: Vec<Vec<usize>>,
    /// Clients whose updates were aggregated, in arrival order.
    pub collected: Vec<Vec<usize>>,
    pub round_start: f64,
    pub round_end: f64,
}

#[derive(Debug, Clone)]
pub struct SyncRoundOutcome<T> {
    pub models: Vec<Vec<T>>,
    pub duration: f64,
    pub state: SyncRoundState,
    /// Arrival offset of each task's last aggregated update.
    pub kth_arrival: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Inputs shared by every round of a synchronous run.
#[derive(Debug, Clone, Copy)]
pub struct SyncSettings {
    pub k: Option<usize>,
    pub availability: f64,
    pub delay: DelayShape,
    pub seeds: SeedTree,
}

fn available_clients<R: Rng + ?Sized>(n: usize, availability: f64, rng: &mut R) -> Result<Vec<usize>> {
    for _ in 0..SAMPLING_CAP {
        let pool: Vec<usize> = if availability >= 1.0 {
            (0..n).collect()
        } else {
            (0..n).filter(|_| rng.random::<f64>() < availability).collect()
        };
        if !pool.is_empty() {
            return Ok(pool);
        }
    }
    Err(Error::SamplingCapExceeded(SAMPLING_CAP))
}

/// Runs one synchronous round starting at `round_start`.
///
/// `live[m]` marks tasks still training; finished tasks get no clients and
/// keep their model. `counters` are the per-task dispatch counters that key
/// each request's random streams.
#[allow(clippy::too_many_arguments)]
pub fn mm_sync_round<T: Scalar>(
    workload: &Workload<T>,
    models: &[Vec<T>],
    live: &[bool],
    allocation: &[usize],
    settings: &SyncSettings,
    round: u64,
    round_start: f64,
    counters: &mut [u64],
) -> Result<SyncRoundOutcome<T>> {
    let m = workload.tasks.len();
    if models.len() != m || live.len() != m || allocation.len() != m || counters.len() != m {
        return Err(Error::InvalidParameter("per-task inputs must match the task count".into()));
    }
    if settings.k == Some(0) {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    let mut rng = settings.seeds.rng(&[seed::SYNC, round]);
    let mut pool = available_clients(workload.num_clients(), settings.availability, &mut rng)?;
    pool.shuffle(&mut rng);

    let wanted: Vec<usize> = (0..m).map(|t| if live[t] { allocation[t] } else { 0 }).collect();
    if wanted.iter().sum::<usize>() > pool.len() {
        warnings.push(format!(
            "round {round}: {} clients requested but only {} available",
            wanted.iter().sum::<usize>(),
            pool.len()
        ));
    }
    // round-robin over tasks keeps a short pool fair
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut next = pool.into_iter();
    'fill: loop {
        let mut progressed = false;
        for t in 0..m {
            if assigned[t].len() < wanted[t] {
                match next.next() {
                    Some(c) => assigned[t].push(c),
                    None => break 'fill,
                }
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut out_models = models.to_vec();
    let mut collected = vec![Vec::new(); m];
    let mut kth_arrival = vec![0.0; m];
    for t in 0..m {
        if assigned[t].is_empty() {
            continue;
        }
        let task = &workload.tasks[t];
        let spec = &task.spec;
        let mut arrivals: Vec<(f64, usize, u64)> = assigned[t]
            .iter()
            .map(|&client| {
                let counter = counters[t];
                counters[t] += 1;
                let mut drng = settings.seeds.request_rng(seed::DELAY, spec.task_id, client, counter);
                let d = sample_duration(&workload.profiles[client], t, spec.tau, settings.delay, &mut drng);
                (d, client, counter)
            })
            .collect();
        arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = settings.k.unwrap_or(arrivals.len());
        if k > arrivals.len() {
            warnings.push(format!(
                "round {round}: task {} has {} clients, aggregating all instead of k={k}",
                spec.task_id,
                arrivals.len()
            ));
        }
        let k = k.min(arrivals.len());
        let mut sum = vec![T::zero(); spec.dim];
        for &(_, client, counter) in &arrivals[..k] {
            let mut brng = settings.seeds.request_rng(seed::BATCH, spec.task_id, client, counter);
            let delta = local_train(spec, &models[t], &task.shards[client], &mut brng)?;
            for (s, d) in sum.iter_mut().zip(delta) {
                *s += d;
            }
            collected[t].push(client);
        }
        let step = spec.eta_s * spec.eta_c * T::of(spec.tau as f64) / T::of(k as f64);
        for (x, s) in out_models[t].iter_mut().zip(&sum) {
            *x -= step * *s;
        }
        if !all_finite(&out_models[t]) {
            return Err(Error::NonFiniteAggregate { task: spec.task_id, round });
        }
        kth_arrival[t] = arrivals[k - 1].0;
    }
    let duration = kth_arrival.iter().copied().fold(0.0, f64::max);
    Ok(SyncRoundOutcome {
        models: out_models,
        duration,
        state: SyncRoundState { round, assigned, collected, round_start, round_end: round_start + duration },
        kth_arrival,
        warnings,
    })
}

/// Event-driven synchronous baseline. A round is computed at its start and
/// its models become visible at the round barrier.
pub struct MmSync<'w, T> {
    workload: &'w Workload<T>,
    settings: SyncSettings,
    allocation: Vec<usize>,
    reallocate_finished: bool,
    models: Vec<Vec<T>>,
    finished: Vec<bool>,
    counters: Vec<u64>,
    rounds: Vec<u64>,
    last_aggregated: Vec<usize>,
    c: u64,
    next_round: u64,
    pending: Option<SyncRoundOutcome<T>>,
    pub durations: Vec<f64>,
}

impl<'w, T: Scalar> MmSync<'w, T> {
    pub fn new(workload: &'w Workload<T>, allocation: Vec<usize>, k: Option<usize>, reallocate_finished: bool, sim: &Simulation<'_, T>) -> Result<Self> {
        let m = workload.tasks.len();
        if allocation.len() != m || allocation.contains(&0) {
            return Err(Error::Config("every task needs a positive client allocation".into()));
        }
        if k == Some(0) {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let cfg = sim.config();
        Ok(Self {
            workload,
            settings: SyncSettings { k, availability: cfg.availability, delay: cfg.delay, seeds: sim.seeds() },
            allocation,
            reallocate_finished,
            models: workload.tasks.iter().map(|t| t.init.clone()).collect(),
            finished: vec![false; m],
            counters: vec![0; m],
            rounds: vec![0; m],
            last_aggregated: vec![0; m],
            c: 0,
            next_round: 0,
            pending: None,
            durations: Vec::new(),
        })
    }

    fn launch(&mut self, sim: &mut Simulation<'_, T>) -> Result<()> {
        let live: Vec<bool> = self.finished.iter().map(|f| !f).collect();
        let outcome = mm_sync_round(
            self.workload,
            &self.models,
            &live,
            &self.allocation,
            &self.settings,
            self.next_round,
            sim.now(),
            &mut self.counters,
        )?;
        for w in &outcome.warnings {
            sim.warn(w.clone());
        }
        self.next_round += 1;
        sim.schedule_barrier(sim.now() + outcome.duration);
        self.pending = Some(outcome);
        Ok(())
    }
}

impl<'w, T: Scalar> Policy<T> for MmSync<'w, T> {
    fn start(&mut self, sim: &mut Simulation<'_, T>) -> Result<()> {
        if self.workload.tasks.is_empty() {
            return Ok(());
        }
        self.launch(sim)
    }

    fn on_update(&mut self, _update: Update<T>, _sim: &mut Simulation<'_, T>) -> Result<()> {
        // rounds are resolved at the barrier; no asynchronous arrivals
        Ok(())
    }

    fn on_barrier(&mut self, sim: &mut Simulation<'_, T>) -> Result<()> {
        let Some(outcome) = self.pending.take() else { return Ok(()) };
        self.durations.push(outcome.duration);
        for (t, model) in outcome.models.into_iter().enumerate() {
            let n = outcome.state.collected[t].len();
            self.c += n as u64;
            if self.finished[t] || n == 0 {
                continue;
            }
            self.models[t] = model;
            self.rounds[t] += 1;
            self.last_aggregated[t] = n;
            sim.log_aggregation(AggregationRecord {
                time: sim.now(),
                task_id: self.workload.tasks[t].spec.task_id,
                round: self.rounds[t],
                size: n,
                max_staleness: 0,
            });
        }
        if self.finished.iter().all(|&f| f) {
            return Ok(());
        }
        self.launch(sim)
    }

    fn on_task_finished(&mut self, task: usize, _sim: &mut Simulation<'_, T>) -> Result<()> {
        if self.finished[task] {
            return Ok(());
        }
        self.finished[task] = true;
        let freed = std::mem::take(&mut self.allocation[task]);
        if self.reallocate_finished {
            let live: Vec<usize> = (0..self.finished.len()).filter(|&t| !self.finished[t]).collect();
            if !live.is_empty() {
                let total = live.iter().map(|&t| self.allocation[t]).sum::<usize>() + freed;
                let weights: Vec<f64> = live.iter().map(|&t| self.allocation[t] as f64).collect();
                for (&t, a) in live.iter().zip(apportion(total, &weights, 1)) {
                    self.allocation[t] = a;
                }
            }
        }
        Ok(())
    }

    fn model(&self, task: usize) -> &[T] {
        &self.models[task]
    }

    fn status(&self, task: usize) -> TaskStatus {
        TaskStatus {
            round: self.rounds[task],
            r: self.allocation[task],
            b: self.last_aggregated[task],
            staleness_mean: 0.0,
            staleness_max: 0,
            c: self.c,
            dropped: 0,
            finished: self.finished[task],
        }
    }
}
