//! State containers shared by every stage of the training loop.
//!
//! Sparsification masks are kept as sorted index lists. The two matrix views
//! used in the analysis, the `d x d` diagonal selector `S` and the compact
//! `k x d` selector `Ŝ`, are never materialised: [`SparseMask::apply`] is
//! `Ŝ g`, [`SparseMask::scatter`] is `Ŝᵀ y`, and their composition is `S g`.

use std::ops::Index;

use crate::error::{check_dim, Error, Result};

/// Dense length-`d` real vector (local gradients, the server's global
/// gradient and reconstructed updates).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Self {
        GradientVector(values)
    }

    pub fn zeros(d: usize) -> Self {
        GradientVector(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn add(&self, other: &GradientVector) -> Result<GradientVector> {
        check_dim("add", self.dim(), other.dim())?;
        Ok(GradientVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &GradientVector) -> Result<GradientVector> {
        check_dim("sub", self.dim(), other.dim())?;
        Ok(GradientVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> GradientVector {
        GradientVector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn abs(&self) -> GradientVector {
        GradientVector(self.0.iter().map(|v| v.abs()).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Unweighted mean of equally sized vectors, summed in slice order.
    pub fn mean(vectors: &[GradientVector]) -> Result<GradientVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::config("mean of an empty vector list"))?;
        let mut acc = vec![0.0; first.dim()];
        for v in vectors {
            check_dim("mean", first.dim(), v.dim())?;
            for (a, x) in acc.iter_mut().zip(&v.0) {
                *a += x;
            }
        }
        let n = vectors.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(GradientVector(acc))
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(values: Vec<f64>) -> Self {
        GradientVector(values)
    }
}

/// The `k` transmitted entries of a gradient, in ascending mask-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedVector(Vec<f64>);

impl CompressedVector {
    pub fn new(values: Vec<f64>) -> Self {
        CompressedVector(values)
    }

    pub fn zeros(k: usize) -> Self {
        CompressedVector(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for CompressedVector {
    fn from(values: Vec<f64>) -> Self {
        CompressedVector(values)
    }
}

/// Per-coordinate age of information: rounds since the server last
/// refreshed that coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgeVector(Vec<u64>);

impl AgeVector {
    pub fn zeros(d: usize) -> Self {
        AgeVector(vec![0; d])
    }

    pub fn new(ages: Vec<u64>) -> Self {
        AgeVector(ages)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Resets the ages on `mask` to zero and increments every other entry.
    pub fn advance(&self, mask: &SparseMask) -> Result<AgeVector> {
        check_dim("age update", self.dim(), mask.dim())?;
        let selected = mask.membership();
        Ok(AgeVector(
            self.0
                .iter()
                .zip(selected)
                .map(|(&a, sel)| if sel { 0 } else { a + 1 })
                .collect(),
        ))
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().map(|&a| a as f64).sum::<f64>() / self.0.len() as f64
    }
}

impl Index<usize> for AgeVector {
    type Output = u64;

    fn index(&self, i: usize) -> &u64 {
        &self.0[i]
    }
}

/// Global model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(theta: Vec<f64>) -> Self {
        ModelParams(theta)
    }

    pub fn zeros(d: usize) -> Self {
        ModelParams(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// `theta - eta * update`.
    pub fn descend(&self, update: &GradientVector, eta: f64) -> Result<ModelParams> {
        check_dim("model update", self.dim(), update.dim())?;
        Ok(ModelParams(
            self.0
                .iter()
                .zip(update.as_slice())
                .map(|(t, u)| t - eta * u)
                .collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ModelParams {
    fn from(theta: Vec<f64>) -> Self {
        ModelParams(theta)
    }
}

/// Set of `k` distinct coordinates out of `d`, stored in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseMask {
    indices: Vec<usize>,
    d: usize,
}

impl SparseMask {
    /// Builds a mask from any ordering of distinct in-range indices.
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::config("mask must select at least one index"));
        }
        if indices.len() > d {
            return Err(Error::config(format!(
                "mask size {} exceeds dimension {d}",
                indices.len()
            )));
        }
        indices.sort_unstable();
        if let Some(&last) = indices.last() {
            if last >= d {
                return Err(Error::config(format!("mask index {last} out of range for d={d}")));
            }
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("mask indices must be distinct"));
        }
        Ok(SparseMask { indices, d })
    }

    pub fn full(d: usize) -> Result<Self> {
        SparseMask::new((0..d).collect(), d)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Diagonal of the `d x d` selector.
    pub fn membership(&self) -> Vec<bool> {
        let mut diag = vec![false; self.d];
        for &i in &self.indices {
            diag[i] = true;
        }
        diag
    }

    /// Compact selection `Ŝ g`.
    pub fn apply(&self, g: &GradientVector) -> Result<CompressedVector> {
        check_dim("apply_mask", self.d, g.dim())?;
        Ok(CompressedVector(self.indices.iter().map(|&i| g[i]).collect()))
    }

    /// Reconstruction `Ŝᵀ y`: `y` placed on the mask, zero elsewhere.
    pub fn scatter(&self, y: &CompressedVector) -> Result<GradientVector> {
        check_dim("scatter", self.k(), y.len())?;
        let mut out = vec![0.0; self.d];
        for (&i, &v) in self.indices.iter().zip(y.as_slice()) {
            out[i] = v;
        }
        Ok(GradientVector(out))
    }

    /// `S g`: keeps the masked entries of `g` and zeroes the rest.
    pub fn project(&self, g: &GradientVector) -> Result<GradientVector> {
        self.scatter(&self.apply(g)?)
    }
}

pub fn apply_mask(mask: &SparseMask, g: &GradientVector) -> Result<CompressedVector> {
    mask.apply(g)
}

pub fn scatter(mask: &SparseMask, y: &CompressedVector) -> Result<GradientVector> {
    mask.scatter(y)
}
