//! Turns a configuration into a concrete workload: data, shards, profiles.

use crate::delay_model::make_profiles;
use crate::error::{Error, Result};
use crate::event_engine::{TaskInstance, Workload};
use crate::objectives::{
    check_samples, gaussian_blobs, initial_model, load_csv, partition_dirichlet, quadratic_shards, smoothness_bound, ObjectiveKind, Sample,
    TaskSpec,
};
use crate::scalar::Scalar;
use crate::seed::{self, SeedTree};

use super::config::{DataConfig, ExperimentConfig, TaskConfig};

fn check_shape<T>(spec: &TaskSpec<T>, samples: &[Sample<T>]) -> Result<()> {
    check_samples(spec, samples).map_err(|e| Error::Config(format!("task {}: {e}", spec.task_id)))
}

fn build_task<T: Scalar>(task: &TaskConfig, clients: usize, seeds: &SeedTree) -> Result<TaskInstance<T>> {
    let spec = TaskSpec::new(task.id, task.objective, task.tau, T::of(task.eta_c), T::of(task.eta_s), task.batch_size, task.target)?
        .with_l2(T::of(task.l2));
    let mut rng = seeds.rng(&[seed::DATA, task.id as u64]);
    let (shards, eval_set) = match &task.data {
        DataConfig::QuadraticClients { center, sigma_g, sigma_local, samples_per_client } => {
            let dim = task.objective.dim();
            let shards = quadratic_shards::<T, _>(clients, dim, *center, *sigma_g, *sigma_local, *samples_per_client, &mut rng)?;
            let eval: Vec<Sample<T>> = shards.iter().flat_map(|s| s.samples.iter().cloned()).collect();
            (shards, eval)
        }
        DataConfig::Blobs { train_samples, eval_samples, separation, noise, alpha } => {
            let (features, classes) = match task.objective {
                ObjectiveKind::LogisticRegression { features, classes } | ObjectiveKind::TinyMlp { features, classes, .. } => {
                    (features, classes)
                }
                ObjectiveKind::Quadratic { .. } => unreachable!("rejected by validation"),
            };
            // one draw of centers shared by train and eval
            let all = gaussian_blobs::<T, _>(train_samples + eval_samples, features, classes, *separation, *noise, &mut rng);
            let (train, eval) = all.split_at(*train_samples);
            let shards = partition_dirichlet(train, clients, *alpha, &mut rng)?;
            (shards, eval.to_vec())
        }
        DataConfig::Csv { train, eval, alpha } => {
            let train_set = load_csv::<T>(train)?;
            if train_set.is_empty() {
                return Err(Error::Config(format!("{} holds no samples", train.display())));
            }
            check_shape(&spec, &train_set)?;
            let eval_set = match eval {
                Some(p) => load_csv::<T>(p)?,
                None => train_set.clone(),
            };
            let shards = partition_dirichlet(&train_set, clients, *alpha, &mut rng)?;
            (shards, eval_set)
        }
    };
    check_shape(&spec, &eval_set)?;
    if eval_set.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut init_rng = seeds.rng(&[seed::DATA, task.id as u64, 1]);
    let init = initial_model::<T, _>(&task.objective, &mut init_rng);
    let smoothness = task.smoothness.or_else(|| {
        let pooled: Vec<Sample<T>> = shards.iter().flat_map(|s| s.samples.iter().cloned()).collect();
        smoothness_bound(&spec, &pooled)
    });
    Ok(TaskInstance { spec, shards, eval_set, init, smoothness })
}

/// Builds the workload for one replica. Tasks appear in ascending id order.
pub fn build_workload<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<Workload<T>> {
    let seeds = SeedTree::new(seed);
    let n = cfg.population.clients;
    let ordered = cfg.sorted_tasks();
    let tasks = ordered.iter().map(|t| build_task::<T>(t, n, &seeds)).collect::<Result<Vec<_>>>()?;
    let betas: Vec<f64> = ordered.iter().map(|t| t.base_beta).collect();
    let profiles = make_profiles(n, &betas, cfg.delay.speed_mix, cfg.delay.multipliers, &mut seeds.rng(&[seed::PROFILES]))?;
    Ok(Workload { tasks, profiles })
}
