mod common;

use common::*;
use fedast::baselines::{mm_sync_round, MmSync, SyncSettings};
use fedast::delay_model::DelayShape;
use fedast::event_engine::{run, EventKind, Policy, Simulation, TaskStatus};
use fedast::fedast_server::{FedAst, ServerConfig};
use fedast::local_trainer::Update;
use fedast::realloc::AllocOption;
use fedast::seed::SeedTree;
use fedast::Result;

/// Wraps the server and checks bookkeeping after every update.
struct Checked<'w> {
    inner: FedAst<'w, f64>,
    /// Model after each aggregation of task 0.
    trajectory: Vec<Vec<f64>>,
    budget: Option<usize>,
}

impl<'w> Policy<f64> for Checked<'w> {
    fn start(&mut self, sim: &mut Simulation<'_, f64>) -> Result<()> {
        self.inner.start(sim)?;
        self.budget = Some(self.inner.tasks().iter().map(|t| t.r_target).sum());
        self.trajectory.push(self.inner.tasks()[0].model.clone());
        Ok(())
    }
    fn accepts(&self, task: usize) -> bool {
        self.inner.accepts(task)
    }
    fn on_update(&mut self, u: Update<f64>, sim: &mut Simulation<'_, f64>) -> Result<()> {
        let before = self.inner.tasks()[0].round;
        self.inner.on_update(u, sim)?;
        let tasks = self.inner.tasks();
        if tasks[0].round > before {
            self.trajectory.push(tasks[0].model.clone());
        }
        // every active request is in flight in the engine
        assert_eq!(sim.inflight(), tasks.iter().map(|t| t.r_cur).sum::<usize>());
        for t in tasks {
            assert_eq!(t.dispatched, t.returned + t.r_cur as u64);
            assert_eq!(t.returned, t.consumed + t.buffer.len() as u64 + t.dropped + t.late_discarded);
            assert!(t.b >= 1);
        }
        if tasks.iter().all(|t| !t.finished) {
            assert_eq!(Some(tasks.iter().map(|t| t.r_target).sum::<usize>()), self.budget);
        }
        Ok(())
    }
    fn on_task_finished(&mut self, task: usize, sim: &mut Simulation<'_, f64>) -> Result<()> {
        self.inner.on_task_finished(task, sim)
    }
    fn model(&self, task: usize) -> &[f64] {
        self.inner.model(task)
    }
    fn status(&self, task: usize) -> TaskStatus {
        self.inner.status(task)
    }
}

fn spread_points(n: usize, sigma: f64, shift: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![shift + sigma * ((i % 7) as f64 - 3.0), shift - sigma * ((i % 5) as f64 - 2.0)]).collect()
}

#[test]
fn bookkeeping_holds_for_both_options() {
    for option in [AllocOption::Static, AllocOption::Dynamic] {
        let w = workload(
            vec![
                quadratic_task(0, &spread_points(60, 0.2, 1.0), 2, 0.05, 1.0, 0.0),
                quadratic_task(1, &spread_points(60, 1.0, -1.0), 3, 0.05, 1.0, 0.0),
            ],
            flat_profiles(60, &[1.0, 1.5]),
        );
        let sim = Simulation::new(&w, engine(5, 0.4, DelayShape::default())).unwrap();
        let cfg = ServerConfig { option, c_period: Some(25), ..ServerConfig::default() };
        let mut p = Checked { inner: FedAst::new(&w, cfg, &[(12, 3), (12, 3)]).unwrap(), trajectory: vec![], budget: None };
        let log = run(sim, &mut p, &until(150.0)).unwrap();
        assert!(log.updates_received > 200, "{option:?}: {}", log.updates_received);
        let rounds: u64 = p.inner.tasks().iter().map(|t| t.round).sum();
        assert_eq!(rounds as usize, log.aggregations.len());
        if option == AllocOption::Dynamic {
            assert!(p.inner.plans.len() >= 5);
            assert!(p.inner.plans.iter().any(|pl| pl.entries[1].r > pl.entries[0].r), "noisier task never gained requests");
        } else {
            assert!(p.inner.plans.is_empty());
            // static buffers never change, so rounds x b == consumed
            for t in p.inner.tasks() {
                assert_eq!(t.round * t.b as u64, t.consumed);
            }
        }
    }
}

/// `Δ` of τ full-gradient steps on `½‖x − a‖²` from `x`.
fn quad_delta(x: &[f64], a: &[f64], tau: usize, eta_c: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut sum = vec![0.0; x.len()];
    for _ in 0..tau {
        for i in 0..y.len() {
            let g = y[i] - a[i];
            sum[i] += g;
            y[i] -= eta_c * g;
        }
    }
    sum.iter().map(|s| s / tau as f64).collect()
}

#[test]
fn equal_delays_give_a_one_round_delayed_recursion() {
    // b = R = 8 with identical constant delays: in each round the first 7
    // arrivals are re-dispatched with the old model, only the 8th with the new
    // one, so x_{k+1} = x_k - η (7 Δ(x_{k-1}) + Δ(x_k)) / 8.
    let n = 20_000;
    let a = vec![1.0, -2.0, 0.5];
    let pts = vec![a.clone(); n];
    let (tau, eta_c, eta_s) = (2, 0.05, 1.0);
    let w = workload(vec![quadratic_task(0, &pts, tau, eta_c, eta_s, 0.0)], flat_profiles(n, &[1.0]));
    let sim = Simulation::new(&w, engine(2, 1.0, DelayShape::constant())).unwrap();
    let mut p = Checked { inner: FedAst::new(&w, ServerConfig::default(), &[(8, 8)]).unwrap(), trajectory: vec![], budget: None };
    let log = run(sim, &mut p, &rounds(100)).unwrap();
    // no client was picked while busy, so no request queued
    assert!(log
        .trace
        .iter()
        .filter(|e| matches!(e.kind, EventKind::UpdateArrival(_)))
        .all(|e| e.service_start == e.dispatch_time));

    let step = eta_s * eta_c * tau as f64;
    let mut xs = vec![vec![0.0; 3]];
    for k in 0..100 {
        let prev = if k == 0 { &xs[0] } else { &xs[k - 1] };
        let d_old = quad_delta(prev, &a, tau, eta_c);
        let d_new = quad_delta(&xs[k], &a, tau, eta_c);
        let next: Vec<f64> = (0..3).map(|i| xs[k][i] - step * (7.0 * d_old[i] + d_new[i]) / 8.0).collect();
        xs.push(next);
    }
    assert_eq!(p.trajectory.len(), 101);
    for (k, (got, want)) in p.trajectory.iter().zip(&xs).enumerate() {
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() <= 1e-12, "round {k} coord {i}: {} vs {}", got[i], want[i]);
        }
    }
}

#[test]
fn dropping_enforces_the_staleness_bound() {
    let n = 500;
    let w = workload(vec![quadratic_task(0, &spread_points(n, 0.3, 1.0), 1, 0.02, 1.0, 0.0)], flat_profiles(n, &[1.0]));
    let cfg = ServerConfig { tau_max: Some(3), drop_stale: true, ..ServerConfig::default() };
    let sim = Simulation::new(&w, engine(8, 1.0, DelayShape::exponential())).unwrap();
    let mut p = Checked { inner: FedAst::new(&w, cfg, &[(20, 2)]).unwrap(), trajectory: vec![], budget: None };
    let log = run(sim, &mut p, &until(100.0)).unwrap();
    let t = &p.inner.tasks()[0];
    assert!(t.dropped > 0 && t.round > 10);
    assert!(t.staleness.aggregated_max <= 3);
    assert!(log.aggregations.iter().all(|a| a.max_staleness <= 3));
    let last = log.records.last().unwrap();
    assert_eq!(last.dropped_count, t.dropped);
}

#[test]
fn finished_task_budget_moves_to_the_live_task() {
    // task 0 reaches its (loose) target quickly; its requests go to task 1
    let n = 100;
    let w = workload(
        vec![
            quadratic_task(0, &spread_points(n, 0.0, 0.1), 1, 0.2, 1.0, 1.0),
            quadratic_task(1, &spread_points(n, 0.5, 2.0), 1, 0.05, 1.0, 1e-9),
        ],
        flat_profiles(n, &[1.0, 1.0]),
    );
    for option in [AllocOption::Static, AllocOption::Dynamic] {
        let sim = Simulation::new(&w, engine(1, 1.0, DelayShape::default())).unwrap();
        let cfg = ServerConfig { option, c_period: Some(10), ..ServerConfig::default() };
        let mut server = FedAst::new(&w, cfg, &[(10, 2), (10, 2)]).unwrap();
        let stop = fedast::event_engine::StopCondition { targets: true, max_sim_time: Some(60.0), max_rounds: None };
        let log = run(sim, &mut server, &stop).unwrap();
        assert!(log.time_to_target[0].is_some());
        let t = server.tasks();
        assert!(t[0].finished && t[0].r_target == 0);
        assert_eq!(t[1].r_target, 20, "{option:?}");
    }
}

#[test]
fn first_k_takes_the_fastest_arrivals() {
    let n = 50;
    let w = workload(
        vec![
            quadratic_task(0, &spread_points(n, 0.5, 1.0), 2, 0.05, 1.0, 0.0),
            quadratic_task(1, &spread_points(n, 0.5, 1.0), 2, 0.05, 1.0, 0.0),
        ],
        flat_profiles(n, &[1.0, 2.0]),
    );
    let settings = SyncSettings { k: Some(3), availability: 1.0, delay: DelayShape::default(), seeds: SeedTree::new(4) };
    let models = vec![vec![0.0; 2], vec![0.0; 2]];
    let mut counters = vec![0, 0];
    let out = mm_sync_round(&w, &models, &[true, true], &[5, 6], &settings, 0, 0.0, &mut counters).unwrap();
    assert_eq!(counters, vec![5, 6]);
    let all: Vec<usize> = out.state.assigned.concat();
    let mut dedup = all.clone();
    dedup.sort_unstable();
    dedup.dedup();
    assert_eq!(dedup.len(), all.len(), "clients assigned twice");
    for t in 0..2 {
        assert_eq!(out.state.collected[t].len(), 3);
        assert!(out.state.collected[t].iter().all(|c| out.state.assigned[t].contains(c)));
    }
    assert_eq!(out.duration, out.kth_arrival.iter().copied().fold(0.0, f64::max));
    // same inputs, same round
    let again = mm_sync_round(&w, &models, &[true, true], &[5, 6], &settings, 0, 0.0, &mut [0, 0]).unwrap();
    assert_eq!(again.models, out.models);
    assert_eq!(again.state, out.state);
}

#[test]
fn sync_rounds_advance_together() {
    let n = 80;
    let w = workload(
        vec![
            quadratic_task(0, &spread_points(n, 0.5, 1.0), 2, 0.05, 1.0, 0.0),
            quadratic_task(1, &spread_points(n, 0.5, 1.0), 2, 0.05, 1.0, 0.0),
        ],
        flat_profiles(n, &[1.0, 2.0]),
    );
    let sim = Simulation::new(&w, engine(3, 0.5, DelayShape::default())).unwrap();
    let mut p = MmSync::new(&w, vec![10, 10], Some(4), true, &sim).unwrap();
    let log = run(sim, &mut p, &rounds(20)).unwrap();
    assert_eq!(p.status(0).round, 20);
    assert_eq!(p.status(1).round, 20);
    assert_eq!(log.aggregations.len(), 40);
    assert!(log.aggregations.iter().all(|a| a.size == 4 && a.max_staleness == 0));
    let total: f64 = p.durations.iter().sum();
    assert!((total - log.end_time).abs() < 1e-9);
}
