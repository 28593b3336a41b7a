#![allow(dead_code)]

use fedast::delay_model::{ClientProfile, DelayShape, SpeedClass};
use fedast::event_engine::{EngineConfig, StopCondition, TaskInstance, Workload};
use fedast::objectives::{ClientShard, ObjectiveKind, Sample, Target, TargetKind, TaskSpec};

pub fn loss_target(value: f64) -> Target {
    Target { kind: TargetKind::Loss, value }
}

/// Quadratic task whose client `i` has the single target point `points[i]`.
pub fn quadratic_task(task_id: usize, points: &[Vec<f64>], tau: usize, eta_c: f64, eta_s: f64, target: f64) -> TaskInstance<f64> {
    let dim = points[0].len();
    let spec = TaskSpec::new(task_id, ObjectiveKind::Quadratic { dim }, tau, eta_c, eta_s, 1, loss_target(target)).unwrap();
    let shards: Vec<ClientShard<f64>> = points
        .iter()
        .enumerate()
        .map(|(client_id, p)| ClientShard { client_id, samples: vec![Sample { features: p.clone(), label: 0 }] })
        .collect();
    let eval_set = shards.iter().flat_map(|s| s.samples.iter().cloned()).collect();
    TaskInstance { spec, shards, eval_set, init: vec![0.0; dim], smoothness: Some(1.0) }
}

/// Every client normal speed with the given per-task β.
pub fn flat_profiles(n: usize, betas: &[f64]) -> Vec<ClientProfile> {
    (0..n)
        .map(|client_id| ClientProfile {
            client_id,
            speed_class: SpeedClass::Normal,
            speed_multiplier: 1.0,
            beta_per_task: betas.to_vec(),
        })
        .collect()
}

pub fn workload(tasks: Vec<TaskInstance<f64>>, profiles: Vec<ClientProfile>) -> Workload<f64> {
    Workload { tasks, profiles }
}

pub fn engine(seed: u64, availability: f64, delay: DelayShape) -> EngineConfig {
    EngineConfig { seed, availability, delay, eval_interval: 1.0, record_trace: true }
}

pub fn rounds(n: u64) -> StopCondition {
    StopCondition { targets: false, max_sim_time: None, max_rounds: Some(n) }
}

pub fn until(t: f64) -> StopCondition {
    StopCondition { targets: false, max_sim_time: Some(t), max_rounds: None }
}
