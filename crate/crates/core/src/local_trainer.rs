//! Client-side local training: τ plain SGD steps from a model snapshot.

use rand::Rng;

use crate::error::{Error, Result};
use crate::objectives::{local_stoch_grad, ClientShard, TaskSpec};
use crate::scalar::Scalar;

/// Coordinates above this magnitude abort the request as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Identifies a dispatched request.
pub type RequestId = u64;

/// A returned local-training result as seen by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Update<T> {
    pub request: RequestId,
    pub task_id: usize,
    pub client_id: usize,
    pub delta: Vec<T>,
    pub dispatch_round: u64,
    pub dispatch_time: f64,
    pub arrival_time: f64,
    /// Server rounds elapsed between dispatch and arrival; filled in by the
    /// server on receipt.
    pub staleness: u64,
}

/// Runs τ SGD steps `x ← x − η_c ∇̃f_i(x)` from `snapshot` and returns
/// `Δ = (x⁽⁰⁾ − x⁽τ⁾)/(τ η_c)`.
///
/// Δ is accumulated as the running mean of the τ stochastic gradients, which
/// is the same quantity without the cancellation error of differencing the
/// iterates. For τ = 1 it is exactly the gradient at the snapshot.
pub fn local_train<T: Scalar, R: Rng + ?Sized>(
    task: &TaskSpec<T>,
    snapshot: &[T],
    shard: &ClientShard<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    let (delta, _) = local_train_with_iterate(task, snapshot, shard, rng)?;
    Ok(delta)
}

/// Same as [`local_train`], also returning the final local iterate `x⁽τ⁾`.
pub fn local_train_with_iterate<T: Scalar, R: Rng + ?Sized>(
    task: &TaskSpec<T>,
    snapshot: &[T],
    shard: &ClientShard<T>,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    if task.tau == 0 || task.eta_c <= T::zero() {
        return Err(Error::InvalidParameter("local training needs tau >= 1 and eta_c > 0".into()));
    }
    let limit = T::of(DIVERGENCE_LIMIT);
    let mut x = snapshot.to_vec();
    let mut grad_sum = vec![T::zero(); x.len()];
    for step in 1..=task.tau {
        let g = local_stoch_grad(task, shard, &x, rng)?;
        for ((xi, si), gi) in x.iter_mut().zip(grad_sum.iter_mut()).zip(g) {
            *si += gi;
            *xi -= task.eta_c * gi;
            if !(xi.abs() <= limit) || !(si.abs() <= limit) {
                return Err(Error::Divergence { task: task.task_id, client: shard.client_id, step });
            }
        }
    }
    let inv_tau = T::one() / T::of(task.tau as f64);
    let delta = if task.tau == 1 { grad_sum } else { grad_sum.into_iter().map(|s| s * inv_tau).collect() };
    Ok((delta, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{gaussian_blobs, ObjectiveKind, Sample, Target, TargetKind};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_quad(tau: usize, eta_c: f64) -> (TaskSpec<f64>, ClientShard<f64>) {
        let task = TaskSpec::new(0, ObjectiveKind::Quadratic { dim: 1 }, tau, eta_c, 1.0, 1, Target { kind: TargetKind::Loss, value: 0.0 }).unwrap();
        let shard = ClientShard { client_id: 0, samples: vec![Sample { features: vec![5.0], label: 0 }] };
        (task, shard)
    }

    #[test]
    fn one_step_delta_is_the_gradient() {
        let (task, shard) = scalar_quad(1, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (delta, x1) = local_train_with_iterate(&task, &[0.0], &shard, &mut rng).unwrap();
        assert_eq!(x1, vec![0.5]);
        assert_eq!(delta, vec![-5.0]);
    }

    #[test]
    fn two_steps_average_the_gradients() {
        let (task, shard) = scalar_quad(2, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (delta, x2) = local_train_with_iterate(&task, &[0.0], &shard, &mut rng).unwrap();
        assert_relative_eq!(x2[0], 0.95, epsilon = 1e-15);
        assert_relative_eq!(delta[0], -4.75, epsilon = 1e-15);
        // same as (x0 - x_tau) / (eta_c tau)
        assert_relative_eq!((0.0 - x2[0]) / (2.0 * 0.1), delta[0], epsilon = 1e-14);
    }

    #[test]
    fn snapshot_is_untouched() {
        let (task, shard) = scalar_quad(3, 0.1);
        let snap = vec![1.25];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        local_train(&task, &snap, &shard, &mut rng).unwrap();
        assert_eq!(snap, vec![1.25]);
    }

    #[test]
    fn divergence_reports_step() {
        let (task, shard) = scalar_quad(200, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match local_train(&task, &[0.0], &shard, &mut rng) {
            Err(Error::Divergence { step, .. }) => assert!(step > 1 && step <= 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn small_step_delta_approaches_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = gaussian_blobs::<f64, _>(40, 2, 2, 1.0, 1.0, &mut rng);
        let shard = ClientShard { client_id: 0, samples: data };
        let x0 = vec![0.3, -0.2, 0.1, 0.05, 0.0, 0.1];
        let kind = ObjectiveKind::LogisticRegression { features: 2, classes: 2 };
        let target = Target { kind: TargetKind::Accuracy, value: 1.0 };
        let grad = crate::objectives::full_local_grad(
            &TaskSpec::new(0, kind, 1, 1.0, 1.0, 40, target).unwrap(),
            &shard,
            &x0,
        )
        .unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..6 {
            let eta = 0.1 / 2f64.powi(k);
            let task = TaskSpec::new(0, kind, 10, eta, 1.0, 40, target).unwrap();
            let delta = local_train(&task, &x0, &shard, &mut rng).unwrap();
            let err: f64 = delta.iter().zip(&grad).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < prev, "error must shrink as eta_c halves");
            assert!(err < 10.0 * eta, "error {err} not O(eta_c) at eta_c={eta}");
            prev = err;
        }
    }
}
