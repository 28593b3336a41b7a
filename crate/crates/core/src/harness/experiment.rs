//! Replicated runs, summaries and paired comparisons.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::MmSync;
use crate::error::{Error, Result};
use crate::event_engine::{run, EngineConfig, RunLog, Simulation, StopReason, Workload};
use crate::fedast_server::{lr_bounds, lr_bounds_dynamic, BindingTerm, FedAst, ReallocTrace, ServerConfig};
use crate::metrics::{write_csv, write_jsonl, MetricsRecord};
use crate::objectives::Target;
use crate::realloc::AllocOption;
use crate::scalar::Scalar;

use super::config::{Algorithm, ExperimentConfig, Precision, TaskConfig};
use super::scenario::build_workload;

/// Everything one replica produced.
#[derive(Debug, Clone)]
pub struct ReplicaResult {
    pub run: usize,
    pub seed: u64,
    pub log: RunLog,
    /// Reallocation decisions (asynchronous algorithms only).
    pub plans: Vec<ReallocTrace>,
    /// Round durations (synchronous baseline only).
    pub round_durations: Vec<f64>,
}

/// `(R, b)` per task in sorted order, as seen by the chosen algorithm.
pub fn initial_allocations(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.sorted_tasks()
        .into_iter()
        .map(|t| match cfg.algorithm {
            Algorithm::NoBuffer => (t.r0, 1),
            Algorithm::MmSync => {
                let r = t.sync_clients.unwrap_or(t.r0);
                let k = if cfg.server.first_k == 0 { r } else { cfg.server.first_k.min(r) };
                (r, k)
            }
            _ => (t.r0, t.b0),
        })
        .collect()
}

fn server_config(cfg: &ExperimentConfig) -> ServerConfig {
    let s = &cfg.server;
    ServerConfig {
        option: if cfg.algorithm == Algorithm::FedAstDynamic { AllocOption::Dynamic } else { AllocOption::Static },
        c_period: s.c_period,
        history: s.history,
        tau_max: s.tau_max,
        drop_stale: s.drop_stale,
        ratio_cap: s.ratio_cap,
        strict_ratio: s.strict_ratio,
        reallocate_finished: s.reallocate_finished,
    }
}

fn engine_config(cfg: &ExperimentConfig, seed: u64) -> EngineConfig {
    EngineConfig {
        seed,
        availability: cfg.population.availability,
        delay: cfg.delay.shape(),
        eval_interval: cfg.run.eval_interval,
        record_trace: cfg.run.record_trace,
    }
}

/// Runs an already built workload with the configured algorithm.
pub fn run_workload<T: Scalar>(cfg: &ExperimentConfig, workload: &Workload<T>, run_index: usize, seed: u64) -> Result<ReplicaResult> {
    let sim = Simulation::new(workload, engine_config(cfg, seed))?;
    let stop = cfg.run.stop_condition();
    let alloc = initial_allocations(cfg);
    match cfg.algorithm {
        Algorithm::MmSync => {
            let k = if cfg.server.first_k == 0 { None } else { Some(cfg.server.first_k) };
            let clients = alloc.iter().map(|a| a.0).collect();
            let mut policy = MmSync::new(workload, clients, k, cfg.server.reallocate_finished, &sim)?;
            let log = run(sim, &mut policy, &stop)?;
            Ok(ReplicaResult { run: run_index, seed, log, plans: Vec::new(), round_durations: policy.durations })
        }
        _ => {
            let mut policy = FedAst::new(workload, server_config(cfg), &alloc)?;
            let log = run(sim, &mut policy, &stop)?;
            Ok(ReplicaResult { run: run_index, seed, log, plans: std::mem::take(&mut policy.plans), round_durations: Vec::new() })
        }
    }
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, run_index: usize, seed: u64) -> Result<ReplicaResult> {
    let workload = build_workload::<T>(cfg, seed)?;
    run_workload(cfg, &workload, run_index, seed)
}

/// Runs replica `run_index` with seed `cfg.seed + run_index`.
pub fn run_replica(cfg: &ExperimentConfig, run_index: usize) -> Result<ReplicaResult> {
    let seed = cfg.seed.wrapping_add(run_index as u64);
    match cfg.precision {
        Precision::F64 => run_typed::<f64>(cfg, run_index, seed),
        Precision::F32 => run_typed::<f32>(cfg, run_index, seed),
    }
}

/// Time to target of one task in one run. Runs that never reached the target
/// report the time the run stopped and `reached = false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeToTarget {
    pub reached: bool,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: usize,
    pub target: Target,
    pub time_to_target: Vec<TimeToTarget>,
    pub mean_time_to_target: f64,
    pub reached_all: bool,
    pub final_loss_mean: f64,
    pub final_accuracy_mean: f64,
    pub final_rounds_mean: f64,
    pub staleness_mean: f64,
    pub staleness_max: u64,
    pub dropped_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub end_time: f64,
    pub stop_reason: Option<StopReason>,
    pub updates_received: u64,
    pub aggregations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub base_seed: u64,
    pub tasks: Vec<TaskSummary>,
    /// Time until every task reached its target, per run.
    pub all_targets: Vec<TimeToTarget>,
    pub mean_all_targets: f64,
    pub lr_warnings: Vec<String>,
    pub warnings: Vec<String>,
    pub per_run: Vec<RunSummary>,
}

impl ExperimentSummary {
    pub fn all_reached(&self) -> bool {
        self.tasks.iter().all(|t| t.reached_all)
    }

    pub fn task(&self, task_id: usize) -> Option<&TaskSummary> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn last_record(records: &[MetricsRecord], task_id: usize) -> Option<&MetricsRecord> {
    records.iter().rev().find(|r| r.task_id == task_id)
}

/// Learning-rate check for each task against the convergence conditions.
/// Returns one message per violated bound, naming the binding term.
pub fn lr_warnings(cfg: &ExperimentConfig, smoothness: &[Option<f64>]) -> Vec<String> {
    let mut out = Vec::new();
    let alloc = initial_allocations(cfg);
    for ((task, &(r, b)), l) in cfg.sorted_tasks().into_iter().zip(&alloc).zip(smoothness) {
        let Some(l) = *l else {
            out.push(format!("task {}: no smoothness constant known, learning rates not checked", task.id));
            continue;
        };
        let tau_max = match cfg.algorithm {
            Algorithm::MmSync => 1,
            _ => cfg.server.tau_max.unwrap_or_else(|| r.div_ceil(b) as u64).max(1),
        };
        let bounds = match cfg.algorithm {
            Algorithm::FedAstDynamic => lr_bounds_dynamic(l, task.tau, b, r, tau_max, 1.0),
            _ => lr_bounds(l, task.tau, b, r, tau_max, 1.0),
        };
        if task.eta_s > bounds.eta_s_max {
            out.push(format!(
                "task {}: eta_s = {} exceeds the bound {:.6} = sqrt(tau*b)",
                task.id, task.eta_s, bounds.eta_s_max
            ));
        }
        if task.eta_c > bounds.eta_c_max {
            let term = match bounds.binding {
                BindingTerm::LocalDrift => "local-drift term 1/(c*L*tau*sqrt(tau*b))",
                BindingTerm::Staleness => "staleness term 1/(c*L*tau*sqrt(tau*R*tau_max))",
            };
            out.push(format!(
                "task {}: eta_c = {} exceeds the bound {:.6} (binding: {term}; L = {l:.4}, R = {r}, b = {b}, tau_max = {tau_max})",
                task.id, task.eta_c, bounds.eta_c_max
            ));
        }
    }
    out
}

fn smoothness_of(cfg: &ExperimentConfig) -> Result<Vec<Option<f64>>> {
    if cfg.tasks.iter().all(|t| t.smoothness.is_some()) {
        return Ok(cfg.sorted_tasks().iter().map(|t| t.smoothness).collect());
    }
    let seed = cfg.seed;
    Ok(match cfg.precision {
        Precision::F64 => build_workload::<f64>(cfg, seed)?.tasks.iter().map(|t| t.smoothness).collect(),
        Precision::F32 => build_workload::<f32>(cfg, seed)?.tasks.iter().map(|t| t.smoothness).collect(),
    })
}

/// Builds the summary from finished replicas (sorted by run index).
pub fn summarize(cfg: &ExperimentConfig, results: &[ReplicaResult], lr: Vec<String>) -> ExperimentSummary {
    let ordered: Vec<&TaskConfig> = cfg.sorted_tasks();
    let mut tasks = Vec::with_capacity(ordered.len());
    for (m, task) in ordered.iter().enumerate() {
        let ttt: Vec<TimeToTarget> = results
            .iter()
            .map(|r| match r.log.time_to_target.get(m).copied().flatten() {
                Some(t) => TimeToTarget { reached: true, time: t },
                None => TimeToTarget { reached: false, time: r.log.end_time },
            })
            .collect();
        let finals: Vec<&MetricsRecord> = results.iter().filter_map(|r| last_record(&r.log.records, task.id)).collect();
        tasks.push(TaskSummary {
            task_id: task.id,
            target: task.target,
            mean_time_to_target: mean(ttt.iter().map(|t| t.time)),
            reached_all: ttt.iter().all(|t| t.reached),
            time_to_target: ttt,
            final_loss_mean: mean(finals.iter().map(|r| r.loss)),
            final_accuracy_mean: mean(finals.iter().map(|r| r.accuracy)),
            final_rounds_mean: mean(finals.iter().map(|r| r.round as f64)),
            staleness_mean: mean(finals.iter().map(|r| r.staleness_mean)),
            staleness_max: finals.iter().map(|r| r.staleness_max).max().unwrap_or(0),
            dropped_total: finals.iter().map(|r| r.dropped_count).sum(),
        });
    }
    let all_targets: Vec<TimeToTarget> = (0..results.len())
        .map(|i| {
            let reached = tasks.iter().all(|t| t.time_to_target[i].reached);
            let time = tasks.iter().map(|t| t.time_to_target[i].time).fold(0.0, f64::max);
            TimeToTarget { reached, time }
        })
        .collect();
    let mut warnings: Vec<String> = Vec::new();
    for r in results {
        for w in &r.log.warnings {
            warnings.push(format!("run {}: {w}", r.run));
        }
    }
    ExperimentSummary {
        algorithm: cfg.algorithm,
        runs: results.len(),
        base_seed: cfg.seed,
        mean_all_targets: mean(all_targets.iter().map(|t| t.time)),
        all_targets,
        tasks,
        lr_warnings: lr,
        warnings,
        per_run: results
            .iter()
            .map(|r| RunSummary {
                run: r.run,
                seed: r.seed,
                end_time: r.log.end_time,
                stop_reason: r.log.stop_reason,
                updates_received: r.log.updates_received,
                aggregations: r.log.aggregations.len(),
            })
            .collect(),
    }
}

/// Runs every replica in parallel and returns them in run order.
pub fn run_replicas(cfg: &ExperimentConfig) -> Result<Vec<ReplicaResult>> {
    cfg.validate()?;
    (0..cfg.runs).into_par_iter().map(|r| run_replica(cfg, r)).collect()
}

/// Runs all replicas, writes per-replica metrics and `summary.json` into `out`
/// when given, and returns the summary.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(ExperimentSummary, Vec<ReplicaResult>)> {
    cfg.validate()?;
    let lr = lr_warnings(cfg, &smoothness_of(cfg)?);
    for w in &lr {
        warn!("{w}");
    }
    let results = run_replicas(cfg)?;
    let summary = summarize(cfg, &results, lr);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        for r in &results {
            write_csv(&dir.join(format!("metrics_run{}.csv", r.run)), &r.log.records)?;
            write_jsonl(&dir.join(format!("metrics_run{}.jsonl", r.run)), &r.log.records)?;
        }
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
        info!("wrote {} replica(s) to {}", results.len(), dir.display());
    }
    Ok((summary, results))
}

/// Relative speed-up of `t_fedast` over `t_base`, in percent.
pub fn time_gain(t_base: f64, t_fedast: f64) -> Result<f64> {
    if !(t_base > 0.0) || !t_base.is_finite() {
        return Err(Error::InvalidParameter(format!("baseline time must be positive, got {t_base}")));
    }
    Ok(100.0 * (t_base - t_fedast) / t_base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task_id: usize,
    pub a_mean_time: f64,
    pub b_mean_time: f64,
    pub a_reached_all: bool,
    pub b_reached_all: bool,
    /// `time_gain(a, b)`: positive when `b` is faster.
    pub gain_percent: f64,
    pub a_final_loss: f64,
    pub b_final_loss: f64,
    /// `b_final_loss - a_final_loss`.
    pub final_loss_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub paired: bool,
    pub runs: usize,
    pub tasks: Vec<TaskComparison>,
    pub all_targets_gain_percent: f64,
}

/// Per-tick mean and spread across replicas. Replicas that stopped early
/// carry their last record forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sim_time: f64,
    pub task_id: usize,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    #[serde(rename = "R_m_mean")]
    pub r_mean: f64,
    #[serde(rename = "b_m_mean")]
    pub b_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs.iter().copied());
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64 } else { 0.0 };
    (m, var.sqrt())
}

pub fn curves(results: &[ReplicaResult]) -> Vec<CurvePoint> {
    let mut ids: Vec<usize> = results.iter().flat_map(|r| r.log.records.iter().map(|x| x.task_id)).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out = Vec::new();
    for &id in &ids {
        let per_run: Vec<Vec<&MetricsRecord>> =
            results.iter().map(|r| r.log.records.iter().filter(|x| x.task_id == id).collect()).collect();
        let ticks = per_run.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..ticks {
            let at: Vec<&MetricsRecord> = per_run.iter().filter_map(|v| v.get(k).or(v.last()).copied()).collect();
            let time = per_run.iter().find_map(|v| v.get(k)).map(|r| r.sim_time).unwrap_or(0.0);
            let (loss_mean, loss_std) = mean_std(&at.iter().map(|r| r.loss).collect::<Vec<_>>());
            let (accuracy_mean, accuracy_std) = mean_std(&at.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            out.push(CurvePoint {
                sim_time: time,
                task_id: id,
                loss_mean,
                loss_std,
                accuracy_mean,
                accuracy_std,
                r_mean: mean(at.iter().map(|r| r.r as f64)),
                b_mean: mean(at.iter().map(|r| r.b as f64)),
            });
        }
    }
    out
}

fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Compares two configurations task by task. In paired mode both sides use
/// `a`'s seed and replica count, so replica `r` of each sees the same data,
/// client profiles and availability draws.
pub fn compare(a: &ExperimentConfig, b: &ExperimentConfig, paired: bool, out: Option<&Path>) -> Result<ComparisonReport> {
    let ids = |c: &ExperimentConfig| c.sorted_tasks().iter().map(|t| t.id).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::Config(format!("task sets differ: {:?} vs {:?}", ids(a), ids(b))));
    }
    let mut b = b.clone();
    if paired {
        b.seed = a.seed;
        b.runs = a.runs;
    }
    let (sa, ra) = run_experiment(a, out.map(|d| d.join("a")).as_deref())?;
    let (sb, rb) = run_experiment(&b, out.map(|d| d.join("b")).as_deref())?;
    let mut tasks = Vec::new();
    for (ta, tb) in sa.tasks.iter().zip(&sb.tasks) {
        tasks.push(TaskComparison {
            task_id: ta.task_id,
            a_mean_time: ta.mean_time_to_target,
            b_mean_time: tb.mean_time_to_target,
            a_reached_all: ta.reached_all,
            b_reached_all: tb.reached_all,
            gain_percent: time_gain(ta.mean_time_to_target, tb.mean_time_to_target)?,
            a_final_loss: ta.final_loss_mean,
            b_final_loss: tb.final_loss_mean,
            final_loss_delta: tb.final_loss_mean - ta.final_loss_mean,
        });
    }
    let report = ComparisonReport {
        paired,
        runs: sa.runs,
        tasks,
        all_targets_gain_percent: time_gain(sa.mean_all_targets, sb.mean_all_targets)?,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_curves(&dir.join("curves_a.csv"), &curves(&ra))?;
        write_curves(&dir.join("curves_b.csv"), &curves(&rb))?;
        std::fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_examples() {
        assert_eq!(time_gain(100.0, 54.0).unwrap(), 46.0);
        assert_eq!(time_gain(100.0, 100.0).unwrap(), 0.0);
        assert!(time_gain(0.0, 1.0).is_err());
        assert!(time_gain(-1.0, 1.0).is_err());
    }

    #[test]
    fn spread_of_single_value_is_zero() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
