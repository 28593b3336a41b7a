//! Differentiable tasks trained by the simulated clients, plus synthetic data
//! generation and non-IID partitioning.
//!
//! Three objective kinds are built in:
//!
//! * `Quadratic`: per-sample loss `½‖x − a‖²`, where each client holds a cloud
//!   of target points around its own center. Client centers are drawn as
//!   `μ + σ_g·z`, which fixes the cross-client heterogeneity exactly.
//! * `LogisticRegression`: softmax regression (binary when `classes = 2`).
//! * `TinyMlp`: one tanh hidden layer followed by a softmax output.
//!
//! An optional L2 term `(λ/2)‖x‖²` is folded into the local loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, norm_sq, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    Quadratic { dim: usize },
    LogisticRegression { features: usize, classes: usize },
    TinyMlp { features: usize, hidden: usize, classes: usize },
}

impl ObjectiveKind {
    pub fn dim(&self) -> usize {
        match *self {
            ObjectiveKind::Quadratic { dim } => dim,
            ObjectiveKind::LogisticRegression { features, classes } => classes * (features + 1),
            ObjectiveKind::TinyMlp { features, hidden, classes } => hidden * (features + 1) + classes * (hidden + 1),
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, ObjectiveKind::Quadratic { .. })
    }

    /// Length of a sample's feature vector.
    pub fn input_len(&self) -> usize {
        match *self {
            ObjectiveKind::Quadratic { dim } => dim,
            ObjectiveKind::LogisticRegression { features, .. } | ObjectiveKind::TinyMlp { features, .. } => features,
        }
    }
}

/// Whether a task's target is an accuracy floor or a loss ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Accuracy,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub kind: TargetKind,
    pub value: f64,
}

impl Target {
    pub fn reached(&self, loss: f64, accuracy: f64) -> bool {
        match self.kind {
            TargetKind::Accuracy => accuracy >= self.value,
            TargetKind::Loss => loss <= self.value,
        }
    }
}

/// Static description of one training task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec<T> {
    pub task_id: usize,
    pub dim: usize,
    pub kind: ObjectiveKind,
    /// Local SGD steps per request.
    pub tau: usize,
    pub eta_c: T,
    pub eta_s: T,
    pub target: Target,
    pub batch_size: usize,
    pub l2: T,
}

impl<T: Scalar> TaskSpec<T> {
    pub fn new(
        task_id: usize,
        kind: ObjectiveKind,
        tau: usize,
        eta_c: T,
        eta_s: T,
        batch_size: usize,
        target: Target,
    ) -> Result<Self> {
        let spec = Self {
            task_id,
            dim: kind.dim(),
            kind,
            tau,
            eta_c,
            eta_s,
            target,
            batch_size,
            l2: T::zero(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_l2(mut self, l2: T) -> Self {
        self.l2 = l2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("task {}: {m}", self.task_id)));
        if self.dim == 0 || self.dim != self.kind.dim() {
            return bad("dim must be positive and match the objective");
        }
        if let ObjectiveKind::LogisticRegression { classes, .. } | ObjectiveKind::TinyMlp { classes, .. } = self.kind {
            if classes < 2 {
                return bad("classifiers need at least 2 classes");
            }
        }
        if self.tau == 0 {
            return bad("tau must be >= 1");
        }
        if !(self.eta_c > T::zero() && self.eta_s > T::zero()) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.l2 < T::zero() {
            return bad("l2 must be non-negative");
        }
        Ok(())
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

/// One data point. Quadratic tasks store the target point `a` in `features`
/// and ignore `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<T>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard<T> {
    pub client_id: usize,
    pub samples: Vec<Sample<T>>,
}

impl<T> ClientShard<T> {
    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Model parameters for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ModelVector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![T::zero(); dim] }
    }

    pub fn from_vec(values: Vec<T>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::InvalidParameter("model entries must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Small deterministic initialization: zeros for convex objectives, scaled
/// uniform noise for the MLP so hidden units break symmetry.
pub fn initial_model<T: Scalar, R: Rng + ?Sized>(kind: &ObjectiveKind, rng: &mut R) -> Vec<T> {
    match *kind {
        ObjectiveKind::TinyMlp { features, hidden, .. } => {
            let scale = 1.0 / (features.max(hidden) as f64).sqrt();
            (0..kind.dim())
                .map(|_| T::of(rng.random_range(-scale..scale)))
                .collect()
        }
        _ => vec![T::zero(); kind.dim()],
    }
}

// ---------------------------------------------------------------------------
// Per-sample loss and gradient kernels.

fn softmax_in_place<T: Scalar>(z: &mut [T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    // log-sum-exp of the original logits
    max + sum.ln()
}

fn linear_logits<T: Scalar>(w: &[T], bias: &[T], input: &[T], out: &mut [T]) {
    let p = input.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = dot(&w[c * p..(c + 1) * p], input) + bias[c];
    }
}

/// Loss of a single sample. `grad`, when given, is incremented by `scale`
/// times the sample gradient.
fn sample_loss_grad<T: Scalar>(kind: &ObjectiveKind, x: &[T], s: &Sample<T>, grad: Option<(&mut [T], T)>) -> T {
    match *kind {
        ObjectiveKind::Quadratic { .. } => {
            let mut loss = T::zero();
            match grad {
                Some((g, scale)) => {
                    for ((gi, &xi), &ai) in g.iter_mut().zip(x).zip(&s.features) {
                        let d = xi - ai;
                        loss += d * d;
                        *gi += scale * d;
                    }
                }
                None => {
                    for (&xi, &ai) in x.iter().zip(&s.features) {
                        let d = xi - ai;
                        loss += d * d;
                    }
                }
            }
            loss * T::of(0.5)
        }
        ObjectiveKind::LogisticRegression { features, classes } => {
            let (w, bias) = x.split_at(classes * features);
            let mut z = vec![T::zero(); classes];
            linear_logits(w, bias, &s.features, &mut z);
            let zy = z[s.label];
            let lse = softmax_in_place(&mut z);
            if let Some((g, scale)) = grad {
                let (gw, gb) = g.split_at_mut(classes * features);
                for c in 0..classes {
                    let mut r = z[c];
                    if c == s.label {
                        r -= T::one();
                    }
                    let r = r * scale;
                    for (gwi, &f) in gw[c * features..(c + 1) * features].iter_mut().zip(&s.features) {
                        *gwi += r * f;
                    }
                    gb[c] += r;
                }
            }
            lse - zy
        }
        ObjectiveKind::TinyMlp { features, hidden, classes } => {
            let n1 = hidden * features;
            let (w1, rest) = x.split_at(n1);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            let mut h = vec![T::zero(); hidden];
            linear_logits(w1, b1, &s.features, &mut h);
            for v in h.iter_mut() {
                *v = v.tanh();
            }
            let mut z = vec![T::zero(); classes];
            linear_logits(w2, b2, &h, &mut z);
            let zy = z[s.label];
            let lse = softmax_in_place(&mut z);
            if let Some((g, scale)) = grad {
                let (gw1, rest) = g.split_at_mut(n1);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(classes * hidden);
                let mut dh = vec![T::zero(); hidden];
                for c in 0..classes {
                    let mut r = z[c];
                    if c == s.label {
                        r -= T::one();
                    }
                    let r = r * scale;
                    let row = &w2[c * hidden..(c + 1) * hidden];
                    for j in 0..hidden {
                        gw2[c * hidden + j] += r * h[j];
                        dh[j] += r * row[j];
                    }
                    gb2[c] += r;
                }
                for j in 0..hidden {
                    let da = dh[j] * (T::one() - h[j] * h[j]);
                    for (gwi, &f) in gw1[j * features..(j + 1) * features].iter_mut().zip(&s.features) {
                        *gwi += da * f;
                    }
                    gb1[j] += da;
                }
            }
            lse - zy
        }
    }
}

fn predict<T: Scalar>(kind: &ObjectiveKind, x: &[T], s: &Sample<T>) -> usize {
    let logits = match *kind {
        ObjectiveKind::Quadratic { .. } => return 0,
        ObjectiveKind::LogisticRegression { features, classes } => {
            let (w, bias) = x.split_at(classes * features);
            let mut z = vec![T::zero(); classes];
            linear_logits(w, bias, &s.features, &mut z);
            z
        }
        ObjectiveKind::TinyMlp { features, hidden, classes } => {
            let (w1, rest) = x.split_at(hidden * features);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            let mut h = vec![T::zero(); hidden];
            linear_logits(w1, b1, &s.features, &mut h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            let mut z = vec![T::zero(); classes];
            linear_logits(w2, b2, &h, &mut z);
            z
        }
    };
    // first maximum wins, so ties go to the lowest class index
    let mut best = 0;
    for (c, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = c;
        }
    }
    best
}

/// Checks feature width and label range of `samples` against the objective.
pub fn check_samples<T>(task: &TaskSpec<T>, samples: &[Sample<T>]) -> Result<()> {
    let want = task.kind.input_len();
    for s in samples {
        if s.features.len() != want {
            return Err(Error::DimensionMismatch { expected: want, got: s.features.len() });
        }
        if let ObjectiveKind::LogisticRegression { classes, .. } | ObjectiveKind::TinyMlp { classes, .. } = task.kind {
            if s.label >= classes {
                return Err(Error::InvalidParameter(format!("label {} out of range for {classes} classes", s.label)));
            }
        }
    }
    Ok(())
}

/// Mean loss over `samples` plus the L2 term.
fn mean_loss<T: Scalar>(task: &TaskSpec<T>, x: &[T], samples: &[Sample<T>]) -> T {
    let n = T::of(samples.len() as f64);
    let data: T = samples.iter().map(|s| sample_loss_grad(&task.kind, x, s, None)).sum::<T>() / n;
    data + task.l2 * T::of(0.5) * norm_sq(x)
}

fn mean_grad_of<'a, T: Scalar>(task: &TaskSpec<T>, x: &[T], batch: impl ExactSizeIterator<Item = &'a Sample<T>>) -> Vec<T> {
    let scale = T::one() / T::of(batch.len() as f64);
    let mut g = vec![T::zero(); task.dim];
    for s in batch {
        sample_loss_grad(&task.kind, x, s, Some((&mut g, scale)));
    }
    if task.l2 > T::zero() {
        for (gi, &xi) in g.iter_mut().zip(x) {
            *gi += task.l2 * xi;
        }
    }
    g
}

/// Local loss `f_i(x)`: mean per-sample loss on one shard plus the L2 term.
pub fn local_loss<T: Scalar>(task: &TaskSpec<T>, shard: &ClientShard<T>, x: &[T]) -> Result<T> {
    task.check_dim(x)?;
    if shard.is_empty() {
        return Err(Error::EmptyShard { client: shard.client_id });
    }
    Ok(mean_loss(task, x, &shard.samples))
}

/// Exact gradient of the local loss over the whole shard.
pub fn full_local_grad<T: Scalar>(task: &TaskSpec<T>, shard: &ClientShard<T>, x: &[T]) -> Result<Vec<T>> {
    task.check_dim(x)?;
    if shard.is_empty() {
        return Err(Error::EmptyShard { client: shard.client_id });
    }
    Ok(mean_grad_of(task, x, shard.samples.iter()))
}

/// `F(x) = (1/N) Σ_i f_i(x)` over the shards that hold data.
///
/// Clients with empty shards have no local loss and are left out of `N`.
pub fn global_loss<T: Scalar>(task: &TaskSpec<T>, shards: &[ClientShard<T>], x: &[T]) -> Result<T> {
    task.check_dim(x)?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for shard in shards.iter().filter(|s| !s.is_empty()) {
        sum += mean_loss(task, x, &shard.samples);
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoShards);
    }
    Ok(sum / T::of(n as f64))
}

/// Gradient of [`global_loss`].
pub fn global_grad<T: Scalar>(task: &TaskSpec<T>, shards: &[ClientShard<T>], x: &[T]) -> Result<Vec<T>> {
    task.check_dim(x)?;
    let live: Vec<_> = shards.iter().filter(|s| !s.is_empty()).collect();
    if live.is_empty() {
        return Err(Error::NoShards);
    }
    let inv = T::one() / T::of(live.len() as f64);
    let mut g = vec![T::zero(); task.dim];
    for shard in live {
        for (gi, li) in g.iter_mut().zip(mean_grad_of(task, x, shard.samples.iter())) {
            *gi += inv * li;
        }
    }
    Ok(g)
}

/// Minibatch gradient of the local loss.
///
/// The batch is drawn uniformly without replacement from the shard; successive
/// calls draw independent batches. Batches larger than the shard are clipped
/// to the full shard.
pub fn local_stoch_grad<T: Scalar, R: Rng + ?Sized>(
    task: &TaskSpec<T>,
    shard: &ClientShard<T>,
    x: &[T],
    rng: &mut R,
) -> Result<Vec<T>> {
    task.check_dim(x)?;
    let n = shard.size();
    if n == 0 {
        return Err(Error::EmptyShard { client: shard.client_id });
    }
    let batch = task.batch_size.min(n);
    if batch == n {
        return Ok(mean_grad_of(task, x, shard.samples.iter()));
    }
    let idx = rand::seq::index::sample(rng, n, batch);
    Ok(mean_grad_of(task, x, idx.into_iter().map(|i| &shard.samples[i])))
}

/// Result of [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean per-sample loss (without the L2 term) and accuracy on `eval_set`.
///
/// Quadratic tasks have no classes; their accuracy is the surrogate
/// `1 / (1 + loss)`, see [`accuracy_is_surrogate`].
pub fn evaluate<T: Scalar>(task: &TaskSpec<T>, x: &[T], eval_set: &[Sample<T>]) -> Result<Evaluation> {
    task.check_dim(x)?;
    if eval_set.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let n = eval_set.len() as f64;
    let loss = eval_set
        .iter()
        .map(|s| sample_loss_grad(&task.kind, x, s, None).as_f64())
        .sum::<f64>()
        / n;
    let accuracy = if task.kind.is_classifier() {
        eval_set.iter().filter(|s| predict(&task.kind, x, s) == s.label).count() as f64 / n
    } else {
        1.0 / (1.0 + loss)
    };
    Ok(Evaluation { loss, accuracy })
}

pub fn accuracy_is_surrogate(kind: &ObjectiveKind) -> bool {
    !kind.is_classifier()
}

/// Upper bound on the smoothness constant of the local losses, when one is
/// available in closed form.
pub fn smoothness_bound<T: Scalar>(task: &TaskSpec<T>, samples: &[Sample<T>]) -> Option<f64> {
    let l2 = task.l2.as_f64();
    match task.kind {
        ObjectiveKind::Quadratic { .. } => Some(1.0 + l2),
        // softmax cross-entropy Hessian is bounded by ½‖[f, 1]‖²
        ObjectiveKind::LogisticRegression { .. } => {
            let max = samples
                .iter()
                .map(|s| norm_sq(&s.features).as_f64() + 1.0)
                .fold(0.0, f64::max);
            Some(0.5 * max + l2)
        }
        ObjectiveKind::TinyMlp { .. } => None,
    }
}

// ---------------------------------------------------------------------------
// Data generation.

fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

/// Per-client quadratic targets.
///
/// Client `i` gets center `c_i = μ·1 + σ_g·z_i` and `samples_per_client` points
/// `c_i + σ_local·w`. With `σ_local = 0` and one sample per client the local
/// gradients are exact and `σ_g` alone sets the heterogeneity.
#[allow(clippy::too_many_arguments)]
pub fn quadratic_shards<T: Scalar, R: Rng + ?Sized>(
    clients: usize,
    dim: usize,
    center: f64,
    sigma_g: f64,
    sigma_local: f64,
    samples_per_client: usize,
    rng: &mut R,
) -> Result<Vec<ClientShard<T>>> {
    if clients == 0 || dim == 0 || samples_per_client == 0 {
        return Err(Error::InvalidParameter("quadratic generator needs clients, dim and samples > 0".into()));
    }
    if sigma_g < 0.0 || sigma_local < 0.0 {
        return Err(Error::InvalidParameter("dispersions must be non-negative".into()));
    }
    Ok((0..clients)
        .map(|client_id| {
            let c: Vec<f64> = (0..dim)
                .map(|_| center + sigma_g * normal::<f64, _>(rng))
                .collect();
            let samples = (0..samples_per_client)
                .map(|_| Sample {
                    features: c.iter().map(|&ci| T::of(ci + sigma_local * normal::<f64, _>(rng))).collect(),
                    label: 0,
                })
                .collect();
            ClientShard { client_id, samples }
        })
        .collect())
}

/// Gaussian blobs: one center per class drawn as `separation·z`, samples
/// `center + noise·w`, labels assigned round-robin so classes are balanced.
pub fn gaussian_blobs<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    features: usize,
    classes: usize,
    separation: f64,
    noise: f64,
    rng: &mut R,
) -> Vec<Sample<T>> {
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| separation * normal::<f64, _>(rng)).collect())
        .collect();
    blobs_from_centers(&centers, n, noise, rng)
}

/// Draws `n` samples around fixed class centers (labels round-robin).
pub fn blobs_from_centers<T: Scalar, R: Rng + ?Sized>(
    centers: &[Vec<f64>],
    n: usize,
    noise: f64,
    rng: &mut R,
) -> Vec<Sample<T>> {
    (0..n)
        .map(|i| {
            let label = i % centers.len();
            Sample {
                features: centers[label]
                    .iter()
                    .map(|&c| T::of(c + noise * normal::<f64, _>(rng)))
                    .collect(),
                label,
            }
        })
        .collect()
}

/// Loads `header, f1, …, fp, label` rows. Features are numeric, the label is a
/// non-negative integer in the final column.
pub fn load_csv<T: Scalar>(path: &Path) -> Result<Vec<Sample<T>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::Config(format!("{}: row {row} needs features and a label", path.display())));
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Config(format!("{}: row {row} has a different column count", path.display())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: row {row}: `{s}` is not numeric", path.display())))
        };
        let features = record
            .iter()
            .take(record.len() - 1)
            .map(|v| parse(v).map(T::of))
            .collect::<Result<Vec<_>>>()?;
        let raw = record.get(record.len() - 1).unwrap_or_default().trim();
        let label = raw
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{}: row {row}: label `{raw}` is not a class index", path.display())))?;
        out.push(Sample { features, label });
    }
    Ok(out)
}

/// Non-IID split of a labelled dataset across `clients` shards.
///
/// For every class the sample indices are shuffled and cut according to a
/// Dirichlet(`alpha`) vector over clients. Clients left empty afterwards take
/// one sample from the currently largest shard (when the dataset has at least
/// one sample per client), so every client can train.
pub fn partition_dirichlet<T: Clone, R: Rng + ?Sized>(
    dataset: &[Sample<T>],
    clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<ClientShard<T>>> {
    if clients == 0 {
        return Err(Error::InvalidParameter("partition needs at least one client".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let classes = dataset.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); clients];

    for class in 0..classes {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset[i].label == class).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let mut props: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            // every gamma draw underflowed: the whole class goes to one client
            props.iter_mut().for_each(|p| *p = 0.0);
            props[rng.random_range(0..clients)] = 1.0;
        }
        let n = idx.len();
        let mut start = 0usize;
        let mut cum = 0.0;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == clients { n } else { ((cum * n as f64).round() as usize).clamp(start, n) };
            assigned[client].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }

    if dataset.len() >= clients {
        for client in 0..clients {
            if assigned[client].is_empty() {
                let donor = (0..clients)
                    .max_by(|&a, &b| assigned[a].len().cmp(&assigned[b].len()).then(b.cmp(&a)))
                    .expect("clients > 0");
                let moved = assigned[donor].pop().expect("donor holds at least two samples");
                assigned[client].push(moved);
            }
        }
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(client_id, ids)| ClientShard {
            client_id,
            samples: ids.into_iter().map(|i| dataset[i].clone()).collect(),
        })
        .collect())
}
