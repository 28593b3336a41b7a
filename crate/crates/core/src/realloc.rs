//! Periodic redistribution of active requests and buffer sizes across tasks.
//!
//! With the dynamic option, every `c_period` received updates the server
//! estimates each live task's normalized update variance `σ̂²` from its last
//! `V` updates and splits the total request budget in proportion to `σ̂`.
//! Buffers are rescaled so each task keeps its `R/b` ratio.

use serde::{Deserialize, Serialize};

use crate::scalar::{norm_sq, Scalar};

/// Number of latest updates kept per task for variance estimation.
pub const DEFAULT_HISTORY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocOption {
    Static,
    Dynamic,
}

/// `round(0.75 · M · ΣR)`, at least 1.
pub fn default_c_period(num_tasks: usize, total_requests: usize) -> u64 {
    ((0.75 * num_tasks as f64 * total_requests as f64).round() as u64).max(1)
}

/// Normalized sample variance of one task's recent updates, scaled by
/// `η_c η_s τ`:
///
/// `σ̂² = η_c η_s τ · (1/V) Σ ‖Δ_i − Δ̄‖² / ‖Δ̄‖²`
///
/// Returns `None` with fewer than two updates. A zero mean update gives 0.
pub fn estimate_variance<T: Scalar>(history: &[&[T]], eta_c: T, eta_s: T, tau: usize) -> Option<T> {
    let v = history.len();
    if v < 2 {
        return None;
    }
    let dim = history[0].len();
    let inv_v = T::one() / T::of(v as f64);
    let mut mean = vec![T::zero(); dim];
    for delta in history {
        for (m, &d) in mean.iter_mut().zip(delta.iter()) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_v);
    let mean_sq = norm_sq(&mean);
    if mean_sq <= T::zero() {
        return Some(T::zero());
    }
    let spread: T = history
        .iter()
        .map(|delta| delta.iter().zip(&mean).map(|(&d, &m)| (d - m) * (d - m)).sum::<T>())
        .sum();
    Some(eta_c * eta_s * T::of(tau as f64) * spread * inv_v / mean_sq)
}

/// One task's allocation inputs.
#[derive(Debug, Clone)]
pub struct TaskAllocation<'a, T> {
    pub task_id: usize,
    pub r: usize,
    pub b: usize,
    pub finished: bool,
    /// Oldest first.
    pub history: Vec<&'a [T]>,
    pub eta_c: T,
    pub eta_s: T,
    pub tau: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub task_id: usize,
    pub r: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReallocPlan {
    pub entries: Vec<PlanEntry>,
    pub c: u64,
    pub triggered: bool,
    /// Set when a trigger was skipped because some live task had fewer than
    /// two stored updates.
    pub skipped: bool,
    /// Estimated `σ̂²` per entry when triggered (0 for finished tasks).
    pub sigma_hat_sq: Option<Vec<f64>>,
}

impl ReallocPlan {
    fn passthrough<T>(c: u64, tasks: &[TaskAllocation<'_, T>], skipped: bool) -> Self {
        Self {
            entries: tasks.iter().map(|t| PlanEntry { task_id: t.task_id, r: t.r, b: t.b }).collect(),
            c,
            triggered: false,
            skipped,
            sigma_hat_sq: None,
        }
    }
}

/// Largest-remainder apportionment of `total` seats by `weights`.
///
/// Leftover seats go to the largest fractional remainders, ties to the lower
/// index. Afterwards every entry is raised to `min_each` (when the total
/// allows) by taking seats from the largest holders. All-zero weights fall
/// back to a uniform split.
pub fn apportion(total: usize, weights: &[f64], min_each: usize) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let uniform = !(sum > 0.0 && sum.is_finite()) || weights.iter().any(|w| !(*w >= 0.0));
    let weight = |i: usize| if uniform { 1.0 } else { weights[i] };
    let denom = if uniform { n as f64 } else { sum };

    let quotas: Vec<f64> = (0..n).map(|i| total as f64 * weight(i) / denom).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        seats[i] += 1;
        leftover -= 1;
    }

    if total >= min_each * n {
        while let Some(needy) = (0..n).find(|&i| seats[i] < min_each) {
            let donor = (0..n)
                .filter(|&j| seats[j] > min_each)
                .max_by(|&a, &b| {
                    seats[a]
                        .cmp(&seats[b])
                        .then(weight(b).total_cmp(&weight(a)))
                        .then(a.cmp(&b))
                })
                .expect("total covers the floor");
            seats[donor] -= 1;
            seats[needy] += 1;
        }
    }
    seats
}

/// `b · R_new / R_old` rounded to the nearest integer, at least 1.
pub fn rescale_buffer(b_old: usize, r_old: usize, r_new: usize) -> usize {
    if r_old == 0 {
        return b_old.max(1);
    }
    ((b_old as f64 * r_new as f64 / r_old as f64).round() as usize).max(1)
}

/// Computes the next `(R, b)` allocation.
///
/// `released` is request budget freed by tasks that finished since the last
/// trigger; it is folded into the live tasks' split. Finished tasks receive
/// `R = 0`. Non-trigger calls and the static option return the current values.
pub fn realloc<T: Scalar>(
    option: AllocOption,
    c: u64,
    c_period: u64,
    released: usize,
    tasks: &[TaskAllocation<'_, T>],
) -> ReallocPlan {
    let c_period = c_period.max(1);
    if option == AllocOption::Static || !c.is_multiple_of(c_period) {
        return ReallocPlan::passthrough(c, tasks, false);
    }
    let live: Vec<usize> = (0..tasks.len()).filter(|&i| !tasks[i].finished).collect();
    if live.is_empty() {
        return ReallocPlan::passthrough(c, tasks, false);
    }
    let mut sigma_sq = vec![0.0; tasks.len()];
    for &i in &live {
        let t = &tasks[i];
        match estimate_variance(&t.history, t.eta_c, t.eta_s, t.tau) {
            Some(v) => sigma_sq[i] = v.as_f64(),
            None => {
                log::debug!("realloc at c={c} skipped: task {} has {} stored updates", t.task_id, t.history.len());
                return ReallocPlan::passthrough(c, tasks, true);
            }
        }
    }
    let total: usize = live.iter().map(|&i| tasks[i].r).sum::<usize>() + released;
    let weights: Vec<f64> = live.iter().map(|&i| sigma_sq[i].max(0.0).sqrt()).collect();
    let seats = apportion(total, &weights, 1);

    let mut entries: Vec<PlanEntry> = tasks
        .iter()
        .map(|t| PlanEntry { task_id: t.task_id, r: if t.finished { 0 } else { t.r }, b: t.b })
        .collect();
    for (&i, &r_new) in live.iter().zip(&seats) {
        let t = &tasks[i];
        entries[i] = PlanEntry { task_id: t.task_id, r: r_new, b: rescale_buffer(t.b, t.r, r_new) };
    }
    ReallocPlan { entries, c, triggered: true, skipped: false, sigma_hat_sq: Some(sigma_sq) }
}

/// Spreads `released` budget over live tasks in proportion to their current
/// `R`, rescaling buffers to keep each task's ratio.
pub fn fold_released<T>(released: usize, tasks: &[TaskAllocation<'_, T>]) -> Vec<PlanEntry> {
    let live: Vec<usize> = (0..tasks.len()).filter(|&i| !tasks[i].finished).collect();
    let mut entries: Vec<PlanEntry> = tasks
        .iter()
        .map(|t| PlanEntry { task_id: t.task_id, r: if t.finished { 0 } else { t.r }, b: t.b })
        .collect();
    if live.is_empty() || released == 0 {
        return entries;
    }
    let total: usize = live.iter().map(|&i| tasks[i].r).sum::<usize>() + released;
    let weights: Vec<f64> = live.iter().map(|&i| tasks[i].r as f64).collect();
    for (&i, r_new) in live.iter().zip(apportion(total, &weights, 1)) {
        entries[i].r = r_new;
        entries[i].b = rescale_buffer(tasks[i].b, tasks[i].r, r_new);
    }
    entries
}
