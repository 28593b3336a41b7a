//! Wall-clock duration of local-training requests.
//!
//! One local step takes `X = s + E` with `E` exponential; a request of τ steps
//! takes `τ·X`. By default `s = β` and `E` has mean `2β`, so
//! `P(X ≤ x) = 1 − exp(−(x − β)/(2β))` for `x ≥ β`. β depends on the task
//! (model cost) and on the client's speed class.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedClass {
    Slow,
    Normal,
    Fast,
}

/// Fractions of slow/normal/fast clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedMix {
    pub slow: f64,
    pub normal: f64,
    pub fast: f64,
}

impl Default for SpeedMix {
    fn default() -> Self {
        Self { slow: 0.25, normal: 0.5, fast: 0.25 }
    }
}

impl SpeedMix {
    pub const UNIFORM_NORMAL: SpeedMix = SpeedMix { slow: 0.0, normal: 1.0, fast: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let parts = [self.slow, self.normal, self.fast];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("speed mix must be fractions summing to 1, got {parts:?}")));
        }
        Ok(())
    }

    /// Client counts per class: slow and fast are rounded, normal takes the rest.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let slow = ((self.slow * n as f64).round() as usize).min(n);
        let fast = ((self.fast * n as f64).round() as usize).min(n - slow);
        (slow, n - slow - fast, fast)
    }
}

/// β multipliers per speed class (a slow client's step takes 1.3× as long).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedMultipliers {
    pub slow: f64,
    pub normal: f64,
    pub fast: f64,
}

impl Default for SpeedMultipliers {
    fn default() -> Self {
        Self { slow: 1.3, normal: 1.0, fast: 0.7 }
    }
}

impl SpeedMultipliers {
    pub fn of(&self, class: SpeedClass) -> f64 {
        match class {
            SpeedClass::Slow => self.slow,
            SpeedClass::Normal => self.normal,
            SpeedClass::Fast => self.fast,
        }
    }
}

/// Shift and exponential mean of one local step, as multiples of β.
///
/// `shift = 1, scale = 2` is the shifted exponential used throughout;
/// `shift = 0` gives a pure exponential with mean `scale·β`; `scale = 0` gives
/// a constant step time `shift·β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayShape {
    pub shift: f64,
    pub scale: f64,
}

impl Default for DelayShape {
    fn default() -> Self {
        Self { shift: 1.0, scale: 2.0 }
    }
}

impl DelayShape {
    pub const fn exponential() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }

    pub const fn constant() -> Self {
        Self { shift: 1.0, scale: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shift >= 0.0 && self.scale >= 0.0 && self.shift + self.scale > 0.0) {
            return Err(Error::InvalidParameter(format!("delay shape needs shift, scale >= 0 and not both 0, got {self:?}")));
        }
        Ok(())
    }

    pub fn mean_step(&self, beta: f64) -> f64 {
        (self.shift + self.scale) * beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: usize,
    pub speed_class: SpeedClass,
    pub speed_multiplier: f64,
    /// Seconds per local step, indexed by task position.
    pub beta_per_task: Vec<f64>,
}

/// Inverse-CDF map from `u ∈ [0, 1)` to a request duration.
#[inline]
pub fn duration_from_uniform(beta: f64, tau: usize, shape: DelayShape, u: f64) -> f64 {
    let step = shape.shift * beta + shape.scale * beta * -(-u).ln_1p();
    tau as f64 * step
}

/// Samples the duration of a τ-step request on a client.
pub fn sample_duration<R: Rng + ?Sized>(profile: &ClientProfile, task_index: usize, tau: usize, shape: DelayShape, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    duration_from_uniform(profile.beta_per_task[task_index], tau, shape, u)
}

/// Assigns speed classes by a seeded shuffle of client ids and derives each
/// client's β for every task as `base_beta × multiplier`.
pub fn make_profiles<R: Rng + ?Sized>(
    n: usize,
    base_betas: &[f64],
    mix: SpeedMix,
    multipliers: SpeedMultipliers,
    rng: &mut R,
) -> Result<Vec<ClientProfile>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one client".into()));
    }
    mix.validate()?;
    if base_betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::InvalidParameter("base betas must be positive".into()));
    }
    for m in [multipliers.slow, multipliers.normal, multipliers.fast] {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidParameter("speed multipliers must be positive".into()));
        }
    }
    let (slow, normal, _) = mix.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut classes = vec![SpeedClass::Normal; n];
    for (rank, &client) in order.iter().enumerate() {
        classes[client] = if rank < slow {
            SpeedClass::Slow
        } else if rank < slow + normal {
            SpeedClass::Normal
        } else {
            SpeedClass::Fast
        };
    }
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(client_id, speed_class)| {
            let speed_multiplier = multipliers.of(speed_class);
            ClientProfile {
                client_id,
                speed_class,
                speed_multiplier,
                beta_per_task: base_betas.iter().map(|b| b * speed_multiplier).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_uniform_hits_the_shift_floor() {
        assert_eq!(duration_from_uniform(0.5, 4, DelayShape::default(), 0.0), 2.0);
    }

    #[test]
    fn cdf_point_at_three_beta() {
        let u = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(duration_from_uniform(1.0, 1, DelayShape::default(), u), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn never_below_floor() {
        let profile = ClientProfile { client_id: 0, speed_class: SpeedClass::Normal, speed_multiplier: 1.0, beta_per_task: vec![0.2] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(sample_duration(&profile, 0, 3, DelayShape::default(), &mut rng) >= 0.6 - 1e-15);
        }
    }

    #[test]
    fn profile_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = make_profiles(4, &[1.0], SpeedMix::default(), SpeedMultipliers::default(), &mut rng).unwrap();
        let count = |c| p.iter().filter(|x| x.speed_class == c).count();
        assert_eq!((count(SpeedClass::Slow), count(SpeedClass::Normal), count(SpeedClass::Fast)), (1, 2, 1));

        let p = make_profiles(1000, &[1.0], SpeedMix::default(), SpeedMultipliers::default(), &mut rng).unwrap();
        let count = |c| p.iter().filter(|x| x.speed_class == c).count();
        assert_eq!((count(SpeedClass::Slow), count(SpeedClass::Normal), count(SpeedClass::Fast)), (250, 500, 250));
    }

    #[test]
    fn beta_ratio_across_tasks_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = make_profiles(50, &[0.148, 0.228], SpeedMix::default(), SpeedMultipliers::default(), &mut rng).unwrap();
        for c in &p {
            assert_relative_eq!(c.beta_per_task[0] / c.beta_per_task[1], 0.148 / 0.228, max_relative = 1e-14);
            assert_eq!(c.beta_per_task[0], 0.148 * c.speed_multiplier);
        }
    }

    #[test]
    fn rejects_bad_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mix = SpeedMix { slow: 0.5, normal: 0.5, fast: 0.5 };
        assert!(make_profiles(4, &[1.0], mix, SpeedMultipliers::default(), &mut rng).is_err());
    }
}
