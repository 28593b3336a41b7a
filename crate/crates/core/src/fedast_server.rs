//! Buffered asynchronous aggregation server for simultaneous training.
//!
//! Each task keeps its own model, round counter and update buffer. Every
//! received update advances the global counter `c`, may trigger a
//! reallocation, is buffered (unless dropped as too stale), and triggers
//! `K ∈ {0, 1, 2}` new requests so the number of active requests walks toward
//! the task's current target. A full buffer is averaged into the model:
//!
//! `x ← x − η_s η_c τ · (1/b) Σ_{Δ ∈ B} Δ`

use std::collections::VecDeque;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_engine::{AggregationRecord, Policy, Simulation, TaskStatus, Workload};
use crate::local_trainer::Update;
use crate::objectives::TaskSpec;
use crate::realloc::{self, AllocOption, PlanEntry, TaskAllocation, DEFAULT_HISTORY};
use crate::scalar::{all_finite, Scalar};

/// Default cap on `R/b`.
pub const DEFAULT_RATIO_CAP: f64 = 37.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub option: AllocOption,
    /// Updates between reallocation triggers. `None` uses `round(0.75·M·ΣR₀)`.
    pub c_period: Option<u64>,
    pub history: usize,
    pub tau_max: Option<u64>,
    /// Drop updates whose staleness exceeds `tau_max`.
    pub drop_stale: bool,
    pub ratio_cap: f64,
    /// Reject (rather than warn about) allocations above `ratio_cap`.
    pub strict_ratio: bool,
    /// Hand a finished task's request budget to the remaining tasks.
    pub reallocate_finished: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            option: AllocOption::Static,
            c_period: None,
            history: DEFAULT_HISTORY,
            tau_max: None,
            drop_stale: false,
            ratio_cap: DEFAULT_RATIO_CAP,
            strict_ratio: false,
            reallocate_finished: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StalenessStats {
    pub received: u64,
    pub sum: u64,
    pub max: u64,
    /// Largest staleness among updates that actually entered an aggregate.
    pub aggregated_max: u64,
}

impl StalenessStats {
    pub fn mean(&self) -> f64 {
        if self.received == 0 {
            0.0
        } else {
            self.sum as f64 / self.received as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferedUpdate<T> {
    pub delta: Vec<T>,
    pub staleness: u64,
}

/// Per-task server state.
#[derive(Debug, Clone)]
pub struct ServerTaskState<T> {
    pub task_id: usize,
    pub round: u64,
    pub model: Vec<T>,
    snapshot: Rc<[T]>,
    pub buffer: Vec<BufferedUpdate<T>>,
    /// Requests dispatched and not yet returned.
    pub r_cur: usize,
    pub r_target: usize,
    pub b: usize,
    /// Latest non-dropped deltas, oldest first.
    pub history: VecDeque<Vec<T>>,
    history_cap: usize,
    pub staleness: StalenessStats,
    pub dropped: u64,
    pub late_discarded: u64,
    /// Non-dropped updates that went into an aggregate.
    pub consumed: u64,
    pub dispatched: u64,
    pub returned: u64,
    pub finished: bool,
}

impl<T: Scalar> ServerTaskState<T> {
    pub fn new(task_id: usize, model: Vec<T>, r: usize, b: usize, history_cap: usize) -> Self {
        let snapshot: Rc<[T]> = model.clone().into();
        Self {
            task_id,
            round: 0,
            model,
            snapshot,
            buffer: Vec::new(),
            r_cur: 0,
            r_target: r,
            b: b.max(1),
            history: VecDeque::with_capacity(history_cap),
            history_cap,
            staleness: StalenessStats::default(),
            dropped: 0,
            late_discarded: 0,
            consumed: 0,
            dispatched: 0,
            returned: 0,
            finished: false,
        }
    }

    pub fn snapshot(&self) -> &Rc<[T]> {
        &self.snapshot
    }

    fn push_history(&mut self, delta: &[T]) {
        if self.history_cap == 0 {
            return;
        }
        if self.history.len() == self.history_cap {
            self.history.pop_front();
        }
        self.history.push_back(delta.to_vec());
    }
}

/// Applies the buffered updates to the model and advances the round.
///
/// The buffer normally holds exactly `b` updates; after a buffer shrink it
/// may hold more, in which case all of them are averaged.
pub fn aggregate<T: Scalar>(state: &mut ServerTaskState<T>, spec: &TaskSpec<T>) -> Result<()> {
    let n = state.buffer.len();
    if n == 0 {
        return Err(Error::InvalidParameter(format!("task {}: aggregate on an empty buffer", state.task_id)));
    }
    let step = spec.eta_s * spec.eta_c * T::of(spec.tau as f64) / T::of(n as f64);
    let mut sum = vec![T::zero(); state.model.len()];
    for u in &state.buffer {
        for (s, &d) in sum.iter_mut().zip(&u.delta) {
            *s += d;
        }
    }
    let next: Vec<T> = state.model.iter().zip(&sum).map(|(&x, &s)| x - step * s).collect();
    if !all_finite(&next) {
        return Err(Error::NonFiniteAggregate { task: state.task_id, round: state.round });
    }
    let max_stale = state.buffer.iter().map(|u| u.staleness).max().unwrap_or(0);
    state.staleness.aggregated_max = state.staleness.aggregated_max.max(max_stale);
    state.consumed += n as u64;
    state.model = next;
    state.snapshot = state.model.clone().into();
    state.round += 1;
    state.buffer.clear();
    Ok(())
}

/// Requests to send after a return, given the count active before it.
pub fn requests_to_send(r_target: usize, r_before_return: usize) -> usize {
    match r_target.cmp(&r_before_return) {
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => 1,
        std::cmp::Ordering::Greater => 2,
    }
}

/// Which client learning-rate condition is the tighter one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    /// `1/(c₁ L τ √(τ b))`
    LocalDrift,
    /// `1/(c₂ L τ √(τ R τ_max))`
    Staleness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrBounds {
    pub eta_s_max: f64,
    pub eta_c_max: f64,
    pub binding: BindingTerm,
}

#[allow(clippy::too_many_arguments)]
fn bounds(l: f64, tau: usize, b: usize, r: usize, tau_max: u64, chi: f64, c1: f64, c2: f64) -> LrBounds {
    let tau = tau as f64;
    let skew = chi.powf(-1.5);
    let drift = skew / (c1 * l * tau * (tau * b as f64).sqrt());
    let stale = skew / (c2 * l * tau * (tau * r as f64 * tau_max as f64).sqrt());
    LrBounds {
        eta_s_max: skew * (tau * b as f64).sqrt(),
        eta_c_max: drift.min(stale),
        binding: if stale < drift { BindingTerm::Staleness } else { BindingTerm::LocalDrift },
    }
}

/// Learning-rate region of the convergence guarantee for fixed allocations:
/// `η_s ≤ χ^{-3/2} √(τb)` and
/// `η_c ≤ χ^{-3/2} min{1/(6Lτ√(τb)), 1/(4Lτ√(τRτ_max))}`.
/// `chi = 1` is the plain static-allocation condition.
pub fn lr_bounds(l: f64, tau: usize, b: usize, r: usize, tau_max: u64, chi: f64) -> LrBounds {
    bounds(l, tau, b, r, tau_max, chi.max(1.0), 6.0, 4.0)
}

/// Condition for the dynamic option, where `chi = b_max / b_min`:
/// `η_c ≤ χ^{-3/2} min{1/(24Lτ√(τb)), 1/(16Lτ√(τRτ_max))}`.
pub fn lr_bounds_dynamic(l: f64, tau: usize, b: usize, r: usize, tau_max: u64, chi: f64) -> LrBounds {
    bounds(l, tau, b, r, tau_max, chi.max(1.0), 24.0, 16.0)
}

/// Checks `R ≤ cap · b`; returns a warning message, or an error in strict mode.
pub fn check_ratio(task_id: usize, r: usize, b: usize, cap: f64, strict: bool) -> Result<Option<String>> {
    if (r as f64) <= cap * b as f64 {
        return Ok(None);
    }
    if strict {
        Err(Error::RatioCap { task: task_id, r, b, cap })
    } else {
        Ok(Some(format!("task {task_id}: R/b = {r}/{b} exceeds the ratio cap {cap}")))
    }
}

/// The FedAST server policy.
pub struct FedAst<'w, T> {
    workload: &'w Workload<T>,
    config: ServerConfig,
    tasks: Vec<ServerTaskState<T>>,
    c: u64,
    c_period: u64,
    released: usize,
    warnings: Vec<String>,
    pub plans: Vec<ReallocTrace>,
}

/// Allocation right after a reallocation trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReallocTrace {
    pub time: f64,
    pub c: u64,
    pub entries: Vec<PlanEntry>,
    pub sigma_hat_sq: Vec<f64>,
}

impl<'w, T: Scalar> FedAst<'w, T> {
    /// `allocations[i] = (R₀, b₀)` for task position `i`.
    pub fn new(workload: &'w Workload<T>, config: ServerConfig, allocations: &[(usize, usize)]) -> Result<Self> {
        if allocations.len() != workload.tasks.len() {
            return Err(Error::Config(format!(
                "{} allocations for {} tasks",
                allocations.len(),
                workload.tasks.len()
            )));
        }
        let mut warnings = Vec::new();
        let mut tasks = Vec::with_capacity(allocations.len());
        for (task, &(r0, b0)) in workload.tasks.iter().zip(allocations) {
            if r0 == 0 || b0 == 0 {
                return Err(Error::Config(format!("task {}: R0 and b0 must be >= 1", task.spec.task_id)));
            }
            warnings.extend(check_ratio(task.spec.task_id, r0, b0, config.ratio_cap, config.strict_ratio)?);
            tasks.push(ServerTaskState::new(task.spec.task_id, task.init.clone(), r0, b0, config.history));
        }
        let total: usize = allocations.iter().map(|a| a.0).sum();
        let c_period = config.c_period.unwrap_or_else(|| realloc::default_c_period(tasks.len(), total)).max(1);
        Ok(Self { workload, config, tasks, c: 0, c_period, released: 0, warnings, plans: Vec::new() })
    }

    pub fn tasks(&self) -> &[ServerTaskState<T>] {
        &self.tasks
    }

    pub fn counter(&self) -> u64 {
        self.c
    }

    pub fn c_period(&self) -> u64 {
        self.c_period
    }

    fn allocation_inputs(&self) -> Vec<TaskAllocation<'_, T>> {
        self.tasks
            .iter()
            .zip(&self.workload.tasks)
            .map(|(s, t)| TaskAllocation {
                task_id: s.task_id,
                r: s.r_target,
                b: s.b,
                finished: s.finished,
                history: s.history.iter().map(|h| h.as_slice()).collect(),
                eta_c: t.spec.eta_c,
                eta_s: t.spec.eta_s,
                tau: t.spec.tau,
            })
            .collect()
    }

    fn apply(&mut self, entries: &[PlanEntry]) {
        for (s, e) in self.tasks.iter_mut().zip(entries) {
            if !s.finished {
                s.r_target = e.r;
                s.b = e.b.max(1);
            }
        }
    }

    fn send(&mut self, task: usize, k: usize, sim: &mut Simulation<'_, T>) -> Result<()> {
        for _ in 0..k {
            let state = &mut self.tasks[task];
            let snapshot = Rc::clone(state.snapshot());
            sim.dispatch(task, &snapshot, state.round)?;
            state.r_cur += 1;
            state.dispatched += 1;
        }
        Ok(())
    }

    /// Sends the initial `R₀` requests for `task` with the round-0 model.
    pub fn init_task(&mut self, task: usize, sim: &mut Simulation<'_, T>) -> Result<()> {
        let r0 = self.tasks[task].r_target;
        self.send(task, r0, sim)
    }
}

impl<'w, T: Scalar> Policy<T> for FedAst<'w, T> {
    fn start(&mut self, sim: &mut Simulation<'_, T>) -> Result<()> {
        for w in std::mem::take(&mut self.warnings) {
            sim.warn(w);
        }
        for task in 0..self.tasks.len() {
            self.init_task(task, sim)?;
        }
        Ok(())
    }

    fn accepts(&self, task: usize) -> bool {
        !self.tasks[task].finished
    }

    fn on_update(&mut self, mut update: Update<T>, sim: &mut Simulation<'_, T>) -> Result<()> {
        let idx = update.task_id;
        let spec = &self.workload.tasks[idx].spec;
        self.c += 1;
        let state = &mut self.tasks[idx];
        let r_before = state.r_cur;
        state.r_cur -= 1;
        state.returned += 1;

        if state.finished {
            state.late_discarded += 1;
        } else {
            update.staleness = state.round - update.dispatch_round;
            let st = &mut state.staleness;
            st.received += 1;
            st.sum += update.staleness;
            st.max = st.max.max(update.staleness);
            let too_stale = self.config.drop_stale && self.config.tau_max.is_some_and(|m| update.staleness > m);
            if too_stale {
                state.dropped += 1;
            } else {
                state.push_history(&update.delta);
                state.buffer.push(BufferedUpdate { delta: update.delta, staleness: update.staleness });
            }
        }

        if self.config.option == AllocOption::Dynamic && self.c.is_multiple_of(self.c_period) {
            let plan = realloc::realloc(self.config.option, self.c, self.c_period, self.released, &self.allocation_inputs());
            if plan.triggered {
                self.released = 0;
                self.apply(&plan.entries);
                self.plans.push(ReallocTrace {
                    time: sim.now(),
                    c: self.c,
                    entries: plan.entries,
                    sigma_hat_sq: plan.sigma_hat_sq.unwrap_or_default(),
                });
            }
        }

        let state = &mut self.tasks[idx];
        if state.finished {
            return Ok(());
        }
        if state.buffer.len() >= state.b {
            let size = state.buffer.len();
            aggregate(state, spec)?;
            let record = AggregationRecord {
                time: sim.now(),
                task_id: state.task_id,
                round: state.round,
                size,
                max_staleness: state.staleness.aggregated_max,
            };
            sim.log_aggregation(record);
        }
        let k = requests_to_send(state.r_target, r_before);
        self.send(idx, k, sim)
    }

    fn on_task_finished(&mut self, task: usize, _sim: &mut Simulation<'_, T>) -> Result<()> {
        let state = &mut self.tasks[task];
        if state.finished {
            return Ok(());
        }
        state.finished = true;
        state.buffer.clear();
        let freed = std::mem::take(&mut state.r_target);
        if !self.config.reallocate_finished {
            return Ok(());
        }
        match self.config.option {
            AllocOption::Dynamic => self.released += freed,
            AllocOption::Static => {
                let entries = realloc::fold_released(freed, &self.allocation_inputs());
                self.apply(&entries);
            }
        }
        Ok(())
    }

    fn model(&self, task: usize) -> &[T] {
        &self.tasks[task].model
    }

    fn status(&self, task: usize) -> TaskStatus {
        let s = &self.tasks[task];
        TaskStatus {
            round: s.round,
            r: s.r_target,
            b: s.b,
            staleness_mean: s.staleness.mean(),
            staleness_max: s.staleness.max,
            c: self.c,
            dropped: s.dropped,
            finished: s.finished,
        }
    }
}
