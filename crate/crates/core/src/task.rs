//! Training objectives and client data.
//!
//! Three objectives are available, all with exact full-batch gradients:
//!
//! - a quadratic `½(θ-b_n)ᵀA(θ-b_n)` whose per-client centres `b_n` carry the
//!   heterogeneity (no samples involved);
//! - multinomial logistic regression, parameters laid out class by class as
//!   `[w_c (p entries), bias_c]`, so `d = C(p+1)`;
//! - a one-hidden-layer tanh MLP with layout `[W1 (h×p), b1 (h), W2 (C×h), b2 (C)]`.
//!
//! Client objectives are averaged uniformly over clients regardless of how
//! many samples each one holds.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Open01, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::model_state::{GradientVector, ModelParams};

/// Labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    p: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, p: usize, classes: usize) -> Result<Self> {
        if p == 0 || classes == 0 {
            return Err(Error::config("dataset needs p >= 1 and at least one class"));
        }
        if labels.is_empty() {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        check_dim("dataset features", labels.len() * p, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::config(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset { features, labels, p, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.p
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.p, self.classes)
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.classes];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }

    /// Reads the delimited text format: a header line `p C`, then one sample
    /// per line with `p` feature columns followed by an integer label.
    /// Commas and whitespace both delimit; `#` starts a comment line.
    pub fn read_delimited<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut lines = reader
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
        let split = |s: &str| -> Vec<String> {
            s.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect()
        };
        let (_, header) = lines.next().ok_or_else(|| Error::config("dataset file is empty"))?;
        let header = split(&header?);
        if header.len() != 2 {
            return Err(Error::config("dataset header must be 'p C'"));
        }
        let parse_usize = |s: &str, line: usize| {
            s.parse::<usize>()
                .map_err(|_| Error::config(format!("dataset line {}: expected integer, got '{s}'", line + 1)))
        };
        let p = parse_usize(&header[0], 0)?;
        let classes = parse_usize(&header[1], 0)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines {
            let cols = split(&line?);
            if cols.len() != p + 1 {
                return Err(Error::config(format!(
                    "dataset line {}: expected {} columns, found {}",
                    lineno + 1,
                    p + 1,
                    cols.len()
                )));
            }
            for c in &cols[..p] {
                let v: f64 = c.parse().map_err(|_| {
                    Error::config(format!("dataset line {}: bad feature '{c}'", lineno + 1))
                })?;
                features.push(v);
            }
            labels.push(parse_usize(&cols[p], lineno)?);
        }
        Dataset::new(features, labels, p, classes)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::read_delimited(BufReader::new(File::open(path)?))
    }

    pub fn write_delimited<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.p, self.classes)?;
        for i in 0..self.len() {
            for v in self.sample(i) {
                write!(out, "{v:e},")?;
            }
            writeln!(out, "{}", self.labels[i])?;
        }
        Ok(())
    }
}

/// Gaussian class clusters with balanced labels (`label = i mod C`).
///
/// Class centres are random directions of length `separation`; samples add
/// unit-variance isotropic noise.
pub fn gen_synthetic<R: Rng + ?Sized>(p: usize, classes: usize, m: usize, separation: f64, rng: &mut R) -> Result<Dataset> {
    if p == 0 || classes == 0 || m == 0 {
        return Err(Error::config("synthetic data needs positive p, C and m"));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let dir: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.into_iter().map(|v| v / norm * separation).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(m * p);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let y = i % classes;
        for c in &centers[y] {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(c + noise);
        }
        labels.push(y);
    }
    Dataset::new(features, labels, p, classes)
}

/// Shuffled hold-out split; returns `(train, test)` with
/// `round(test_fraction * m)` test samples. A zero fraction returns the
/// training samples on both sides.
pub fn train_test_split<R: Rng + ?Sized>(data: &Dataset, test_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config(format!("test fraction must be in [0, 1) (got {test_fraction})")));
    }
    let m = data.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let n_test = ((test_fraction * m as f64).round() as usize).min(m.saturating_sub(1));
    if test_fraction > 0.0 && n_test == 0 {
        return Err(Error::config("dataset too small for the requested test split"));
    }
    let (test_idx, train_idx) = idx.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let test = if test_idx.is_empty() { data.subset(&train_idx)? } else { data.subset(&test_idx)? };
    Ok((data.subset(&train_idx)?, test))
}

/// Symmetric Dirichlet partition settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub alpha: f64,
    pub clients: usize,
}

/// Draws one Dir(α, .., α) vector of length `n`.
///
/// Gamma variates are combined in log space (`Γ(α) = Γ(α+1) U^{1/α}`) so
/// that very small concentrations do not underflow to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let boosted = Gamma::new(alpha + 1.0, 1.0).expect("alpha validated by caller");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = boosted.sample(rng);
            let u: f64 = Open01.sample(rng);
            g.ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Sample indices per client. Every class is split across clients according
/// to its own Dirichlet draw; empty clients then take one sample each from
/// the currently largest client.
pub fn dirichlet_partition_indices<R: Rng + ?Sized>(
    labels: &[usize],
    classes: usize,
    spec: PartitionSpec,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let n = spec.clients;
    if n == 0 {
        return Err(Error::config("partition needs at least one client"));
    }
    if !(spec.alpha > 0.0) || !spec.alpha.is_finite() {
        return Err(Error::config(format!("Dirichlet alpha must be > 0 (got {})", spec.alpha)));
    }
    if labels.len() < n {
        return Err(Error::config(format!(
            "cannot split {} samples across {n} clients",
            labels.len()
        )));
    }
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let props = sample_dirichlet(spec.alpha, n, rng);
        let total = members.len() as f64;
        let mut cum = 0.0;
        let mut start = 0usize;
        for (client, p) in props.iter().enumerate() {
            cum += p;
            let end = if client + 1 == n {
                members.len()
            } else {
                ((cum * total).round() as usize).clamp(start, members.len())
            };
            parts[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    for client in 0..n {
        if parts[client].is_empty() {
            let donor = (0..n)
                .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
                .expect("n >= 1");
            let moved = parts[donor].pop().expect("donor holds at least two samples");
            parts[client].push(moved);
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

pub fn dirichlet_partition<R: Rng + ?Sized>(data: &Dataset, spec: PartitionSpec, rng: &mut R) -> Result<Vec<Dataset>> {
    dirichlet_partition_indices(data.labels(), data.classes(), spec, rng)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect()
}

/// What one client holds.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientData {
    /// Quadratic centre `b_n`.
    Center(Vec<f64>),
    Samples(Dataset),
}

/// Quadratic objective with a shared symmetric PSD curvature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    a: Vec<f64>,
    d: usize,
}

impl QuadraticTask {
    pub fn new(a: Vec<f64>, d: usize) -> Result<Self> {
        check_dim("quadratic matrix", d * d, a.len())?;
        for i in 0..d {
            for j in 0..i {
                if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 * (1.0 + a[i * d + j].abs()) {
                    return Err(Error::config("quadratic matrix must be symmetric"));
                }
            }
            if a[i * d + i] < 0.0 {
                return Err(Error::config("quadratic matrix must be positive semidefinite"));
            }
        }
        Ok(QuadraticTask { a, d })
    }

    pub fn identity(d: usize) -> Self {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        QuadraticTask { a, d }
    }

    /// Random PSD matrix `MᵀM / 2d` (M Gaussian, `2d x d`), rescaled so its
    /// largest eigenvalue is `max_curvature`.
    pub fn random<R: Rng + ?Sized>(d: usize, max_curvature: f64, rng: &mut R) -> Result<Self> {
        if d == 0 || !(max_curvature > 0.0) {
            return Err(Error::config("random quadratic needs d >= 1 and positive curvature"));
        }
        let rows = 2 * d;
        let m: Vec<f64> = (0..rows * d).map(|_| rng.sample(StandardNormal)).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let v = (0..rows).map(|r| m[r * d + i] * m[r * d + j]).sum::<f64>() / rows as f64;
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
        let task = QuadraticTask { a, d };
        let top = task.largest_eigenvalue();
        let scale = max_curvature / top;
        Ok(QuadraticTask {
            a: task.a.iter().map(|v| v * scale).collect(),
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.d)
            .map(|i| self.a[i * self.d..(i + 1) * self.d].iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Largest eigenvalue by power iteration (Rayleigh quotient).
    pub fn largest_eigenvalue(&self) -> f64 {
        let d = self.d;
        // deterministic start with a component along every axis
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * ((i * 7919) % 97) as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..100_000 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let av = self.apply(&v);
            let next: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = av;
            if (next - lambda).abs() <= 1e-15 * next.abs().max(1e-300) {
                return next;
            }
            lambda = next;
        }
        lambda
    }

    /// Per-client centres `b + δ_n` with a shared random `b` of scale
    /// `center_scale` and offsets of scale `spread`.
    pub fn client_centers<R: Rng + ?Sized>(&self, clients: usize, center_scale: f64, spread: f64, rng: &mut R) -> Vec<Vec<f64>> {
        let base: Vec<f64> = (0..self.d).map(|_| center_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        (0..clients)
            .map(|_| base.iter().map(|b| b + spread * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn loss_grad(&self, theta: &[f64], center: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = theta.iter().zip(center).map(|(t, b)| t - b).collect();
        let grad = self.apply(&diff);
        let loss = 0.5 * diff.iter().zip(&grad).map(|(x, y)| x * y).sum::<f64>();
        (loss, grad)
    }

    /// Minimiser of the client average (mean centre) and the minimum value.
    pub fn optimum(&self, centers: &[Vec<f64>]) -> Result<(ModelParams, f64)> {
        if centers.is_empty() {
            return Err(Error::config("optimum needs at least one client centre"));
        }
        let mut mean = vec![0.0; self.d];
        for c in centers {
            check_dim("quadratic centre", self.d, c.len())?;
            mean.iter_mut().zip(c).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= centers.len() as f64);
        let f_star = centers.iter().map(|c| self.loss_grad(&mean, c).0).sum::<f64>() / centers.len() as f64;
        Ok((ModelParams::new(mean), f_star))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticTask {
    pub p: usize,
    pub classes: usize,
    pub l2: f64,
}

impl LogisticTask {
    pub fn dim(&self) -> usize {
        self.classes * (self.p + 1)
    }

    fn logits(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.p + 1;
        for (c, z) in out.iter_mut().enumerate() {
            let w = &theta[c * stride..(c + 1) * stride];
            *z = w[..self.p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[self.p];
        }
    }

    fn loss_grad(&self, theta: &[f64], data: &Dataset, want_grad: bool) -> (f64, Vec<f64>) {
        let stride = self.p + 1;
        let mut grad = if want_grad { vec![0.0; self.dim()] } else { Vec::new() };
        let mut z = vec![0.0; self.classes];
        let mut loss = 0.0;
        for i in 0..data.len() {
            let x = data.sample(i);
            let y = data.labels()[i];
            self.logits(theta, x, &mut z);
            loss += softmax_in_place(&mut z, y);
            if want_grad {
                for (c, &pc) in z.iter().enumerate() {
                    let dz = pc - if c == y { 1.0 } else { 0.0 };
                    let g = &mut grad[c * stride..(c + 1) * stride];
                    g[..self.p].iter_mut().zip(x).for_each(|(gi, xi)| *gi += dz * xi);
                    g[self.p] += dz;
                }
            }
        }
        finish_mean(loss, grad, data.len(), self.l2, theta)
    }

    fn predict(&self, theta: &[f64], x: &[f64], scratch: &mut [f64]) -> usize {
        self.logits(theta, x, scratch);
        argmax(scratch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpTask {
    pub p: usize,
    pub hidden: usize,
    pub classes: usize,
    pub l2: f64,
}

impl MlpTask {
    pub fn dim(&self) -> usize {
        self.hidden * (self.p + 1) + self.classes * (self.hidden + 1)
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.p;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn forward(&self, theta: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (b1_at, w2_at, b2_at) = self.offsets();
        for (j, hj) in hidden.iter_mut().enumerate() {
            let w = &theta[j * self.p..(j + 1) * self.p];
            let a = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + theta[b1_at + j];
            *hj = a.tanh();
        }
        for (c, z) in out.iter_mut().enumerate() {
            let w = &theta[w2_at + c * self.hidden..w2_at + (c + 1) * self.hidden];
            *z = w.iter().zip(hidden.iter()).map(|(a, b)| a * b).sum::<f64>() + theta[b2_at + c];
        }
    }

    fn loss_grad(&self, theta: &[f64], data: &Dataset, want_grad: bool) -> (f64, Vec<f64>) {
        let (b1_at, w2_at, b2_at) = self.offsets();
        let mut grad = if want_grad { vec![0.0; self.dim()] } else { Vec::new() };
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for i in 0..data.len() {
            let x = data.sample(i);
            let y = data.labels()[i];
            self.forward(theta, x, &mut h, &mut z);
            loss += softmax_in_place(&mut z, y);
            if !want_grad {
                continue;
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (c, &pc) in z.iter().enumerate() {
                let dz = pc - if c == y { 1.0 } else { 0.0 };
                let row = w2_at + c * self.hidden;
                for j in 0..self.hidden {
                    grad[row + j] += dz * h[j];
                    dh[j] += dz * theta[row + j];
                }
                grad[b2_at + c] += dz;
            }
            for j in 0..self.hidden {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                grad[j * self.p..(j + 1) * self.p]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(g, xi)| *g += da * xi);
                grad[b1_at + j] += da;
            }
        }
        finish_mean(loss, grad, data.len(), self.l2, theta)
    }

    fn predict(&self, theta: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) -> usize {
        self.forward(theta, x, hidden, out);
        argmax(out)
    }
}

/// Replaces logits with probabilities; returns the cross-entropy for `label`.
fn softmax_in_place(z: &mut [f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let z_label = z[label];
    z.iter_mut().for_each(|v| *v /= total);
    total.ln() - z_label.ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

fn finish_mean(loss: f64, mut grad: Vec<f64>, m: usize, l2: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let inv = 1.0 / m as f64;
    let mut loss = loss * inv;
    grad.iter_mut().for_each(|g| *g *= inv);
    if l2 > 0.0 {
        loss += 0.5 * l2 * theta.iter().map(|t| t * t).sum::<f64>();
        grad.iter_mut().zip(theta).for_each(|(g, t)| *g += l2 * t);
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
    Mlp(MlpTask),
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(q) => q.dim(),
            Task::Logistic(l) => l.dim(),
            Task::Mlp(m) => m.dim(),
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, Task::Quadratic(_))
    }

    fn loss_grad(&self, theta: &ModelParams, data: &ClientData, want_grad: bool) -> Result<(f64, Vec<f64>)> {
        check_dim("model parameters", self.dim(), theta.dim())?;
        let theta = theta.as_slice();
        match (self, data) {
            (Task::Quadratic(q), ClientData::Center(c)) => {
                check_dim("quadratic centre", q.dim(), c.len())?;
                Ok(q.loss_grad(theta, c))
            }
            (Task::Logistic(l), ClientData::Samples(ds)) => {
                check_sample_shape(ds, l.p, l.classes)?;
                Ok(l.loss_grad(theta, ds, want_grad))
            }
            (Task::Mlp(m), ClientData::Samples(ds)) => {
                check_sample_shape(ds, m.p, m.classes)?;
                Ok(m.loss_grad(theta, ds, want_grad))
            }
            (Task::Quadratic(_), ClientData::Samples(_)) => {
                Err(Error::config("quadratic task expects client centres, not samples"))
            }
            (_, ClientData::Center(_)) => Err(Error::config("classification task expects client samples")),
        }
    }

    pub fn local_loss(&self, theta: &ModelParams, data: &ClientData) -> Result<f64> {
        Ok(self.loss_grad(theta, data, false)?.0)
    }

    pub fn local_gradient(&self, theta: &ModelParams, data: &ClientData) -> Result<GradientVector> {
        Ok(GradientVector::new(self.loss_grad(theta, data, true)?.1))
    }

    pub fn local_loss_and_gradient(&self, theta: &ModelParams, data: &ClientData) -> Result<(f64, GradientVector)> {
        let (l, g) = self.loss_grad(theta, data, true)?;
        Ok((l, GradientVector::new(g)))
    }

    /// Uniform average of the client losses.
    pub fn global_loss(&self, theta: &ModelParams, clients: &[ClientData]) -> Result<f64> {
        if clients.is_empty() {
            return Err(Error::config("global loss needs at least one client"));
        }
        let mut total = 0.0;
        for c in clients {
            total += self.local_loss(theta, c)?;
        }
        Ok(total / clients.len() as f64)
    }

    pub fn global_gradient(&self, theta: &ModelParams, clients: &[ClientData]) -> Result<GradientVector> {
        let grads = clients
            .iter()
            .map(|c| self.local_gradient(theta, c))
            .collect::<Result<Vec<_>>>()?;
        GradientVector::mean(&grads)
    }

    /// Fraction of samples classified correctly; `None` for the quadratic.
    pub fn accuracy(&self, theta: &ModelParams, data: &Dataset) -> Result<Option<f64>> {
        check_dim("model parameters", self.dim(), theta.dim())?;
        let theta = theta.as_slice();
        let correct = match self {
            Task::Quadratic(_) => return Ok(None),
            Task::Logistic(l) => {
                check_sample_shape(data, l.p, l.classes)?;
                let mut z = vec![0.0; l.classes];
                (0..data.len())
                    .filter(|&i| l.predict(theta, data.sample(i), &mut z) == data.labels()[i])
                    .count()
            }
            Task::Mlp(m) => {
                check_sample_shape(data, m.p, m.classes)?;
                let mut h = vec![0.0; m.hidden];
                let mut z = vec![0.0; m.classes];
                (0..data.len())
                    .filter(|&i| m.predict(theta, data.sample(i), &mut h, &mut z) == data.labels()[i])
                    .count()
            }
        };
        Ok(Some(correct as f64 / data.len() as f64))
    }

    /// Seeded Gaussian initial parameters with standard deviation `scale`.
    pub fn init_params<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Result<ModelParams> {
        if scale == 0.0 {
            return Ok(ModelParams::zeros(self.dim()));
        }
        let normal = Normal::new(0.0, scale).map_err(|e| Error::config(format!("init scale: {e}")))?;
        Ok(ModelParams::new((0..self.dim()).map(|_| normal.sample(rng)).collect()))
    }
}

fn check_sample_shape(ds: &Dataset, p: usize, classes: usize) -> Result<()> {
    check_dim("sample features", p, ds.feature_dim())?;
    if ds.classes() > classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model only {classes}",
            ds.classes()
        )));
    }
    Ok(())
}

/// `(1/N) Σ ‖∇f_n(θ) - ∇f(θ)‖²`, the client gradient dissimilarity at `theta`.
pub fn gradient_dissimilarity(task: &Task, theta: &ModelParams, clients: &[ClientData]) -> Result<f64> {
    let grads = clients
        .iter()
        .map(|c| task.local_gradient(theta, c))
        .collect::<Result<Vec<_>>>()?;
    let mean = GradientVector::mean(&grads)?;
    let mut total = 0.0;
    for g in &grads {
        total += g.sub(&mean)?.l2_norm_sq();
    }
    Ok(total / grads.len() as f64)
}

/// `(1/N) Σ ‖∇f_n(θ)‖²`.
pub fn mean_client_grad_norm_sq(task: &Task, theta: &ModelParams, clients: &[ClientData]) -> Result<f64> {
    if clients.is_empty() {
        return Err(Error::config("need at least one client"));
    }
    let mut total = 0.0;
    for c in clients {
        total += task.local_gradient(theta, c)?.l2_norm_sq();
    }
    Ok(total / clients.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn two_class_balanced() -> Dataset {
        Dataset::new(vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.0, 1.0], vec![0, 1, 0, 1], 2, 2).unwrap()
    }

    #[test]
    fn quadratic_minimum_at_center() {
        let mut rng = seeded(1);
        let q = QuadraticTask::random(6, 1.0, &mut rng).unwrap();
        let b = vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.25];
        let task = Task::Quadratic(q.clone());
        let data = ClientData::Center(b.clone());
        assert_eq!(task.local_loss(&ModelParams::new(b.clone()), &data).unwrap(), 0.0);
        let theta = ModelParams::new(vec![1.0; 6]);
        let g = task.local_gradient(&theta, &data).unwrap();
        let diff: Vec<f64> = theta.as_slice().iter().zip(&b).map(|(t, c)| t - c).collect();
        assert_eq!(g.as_slice(), q.apply(&diff).as_slice());
    }

    #[test]
    fn random_quadratic_is_normalised() {
        let q = QuadraticTask::random(20, 2.5, &mut seeded(4)).unwrap();
        assert!((q.largest_eigenvalue() - 2.5).abs() < 1e-9);
        assert!((QuadraticTask::identity(7).largest_eigenvalue() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn logistic_uniform_prediction_loss() {
        let task = Task::Logistic(LogisticTask { p: 2, classes: 2, l2: 0.0 });
        let theta = ModelParams::zeros(task.dim());
        let loss = task.local_loss(&theta, &ClientData::Samples(two_class_balanced())).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn global_loss_is_client_mean() {
        let task = Task::Quadratic(QuadraticTask::identity(2));
        let theta = ModelParams::new(vec![1.0, 1.0]);
        let clients = vec![
            ClientData::Center(vec![0.0, 0.0]),
            ClientData::Center(vec![1.0, 3.0]),
            ClientData::Center(vec![-1.0, 1.0]),
        ];
        // per-client ½‖θ-b‖²: 1, 2, 2
        assert!((task.global_loss(&theta, &clients).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            task.global_loss(&theta, &clients[..1]).unwrap(),
            task.local_loss(&theta, &clients[0]).unwrap()
        );
    }

    #[test]
    fn mismatched_data_rejected() {
        let task = Task::Quadratic(QuadraticTask::identity(2));
        let theta = ModelParams::zeros(2);
        assert!(task.local_loss(&theta, &ClientData::Samples(two_class_balanced())).is_err());
        assert!(task.local_loss(&ModelParams::zeros(3), &ClientData::Center(vec![0.0; 2])).is_err());
        let lr = Task::Logistic(LogisticTask { p: 3, classes: 2, l2: 0.0 });
        assert!(lr
            .local_gradient(&ModelParams::zeros(lr.dim()), &ClientData::Samples(two_class_balanced()))
            .is_err());
    }

    #[test]
    fn one_sample_per_class() {
        let ds = gen_synthetic(4, 5, 5, 1.0, &mut seeded(0)).unwrap();
        assert_eq!(ds.label_histogram(), vec![1; 5]);
    }

    #[test]
    fn dirichlet_rows_sum_to_one_even_for_tiny_alpha() {
        let mut rng = seeded(9);
        for alpha in [1e-3, 0.3, 5.0] {
            let p = sample_dirichlet(alpha, 20, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn partition_is_exact_and_nonempty() {
        let ds = gen_synthetic(3, 4, 97, 1.0, &mut seeded(1)).unwrap();
        let parts = dirichlet_partition_indices(ds.labels(), 4, PartitionSpec { alpha: 0.05, clients: 20 }, &mut seeded(2)).unwrap();
        assert!(parts.iter().all(|p| !p.is_empty()));
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn partition_needs_enough_samples() {
        let ds = gen_synthetic(3, 2, 5, 1.0, &mut seeded(1)).unwrap();
        let err = dirichlet_partition(&ds, PartitionSpec { alpha: 1.0, clients: 6 }, &mut seeded(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn delimited_round_trip() {
        let ds = gen_synthetic(3, 3, 12, 2.0, &mut seeded(3)).unwrap();
        let mut buf = Vec::new();
        ds.write_delimited(&mut buf).unwrap();
        let back = Dataset::read_delimited(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn delimited_errors_are_reported() {
        assert!(Dataset::read_delimited("2 2\n1.0,2.0\n".as_bytes()).is_err());
        assert!(Dataset::read_delimited("2 2\n1.0,x,1\n".as_bytes()).is_err());
        assert!(Dataset::read_delimited("2 2\n1.0,2.0,5\n".as_bytes()).is_err());
        let ok = Dataset::read_delimited("# comment\n2 2\n1.0 2.0 1\n\n0,0,0\n".as_bytes()).unwrap();
        assert_eq!(ok.len(), 2);
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let ds = gen_synthetic(2, 2, 50, 1.0, &mut seeded(3)).unwrap();
        let (train, test) = train_test_split(&ds, 0.2, &mut seeded(4)).unwrap();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 10);
    }
}
