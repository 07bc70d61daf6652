//! Server-side coordinate selection.
//!
//! AgeTop-k selects in two stages: a magnitude shortlist of `r` candidates
//! from the server's global gradient, then the `k` stalest of those
//! candidates by age of information. The baselines are Top-k, Random-k,
//! Age-k (AgeTop-k with `r = d`) and rTop-k (uniform `k` out of the top `r`).
//!
//! Ties are broken deterministically:
//! - magnitude ties: lower index first;
//! - age ties: larger `|g_global|` first, then lower index.
//!
//! With the all-zero cold-start state this makes the first mask `{0, .., k-1}`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{check_dim, Error, Result};
use crate::model_state::{AgeVector, GradientVector, SparseMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    AgeTopK,
    TopK,
    RandomK,
    AgeK,
    RTopK,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::AgeTopK,
        StrategyKind::TopK,
        StrategyKind::RandomK,
        StrategyKind::AgeK,
        StrategyKind::RTopK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::AgeTopK => "agetopk",
            StrategyKind::TopK => "topk",
            StrategyKind::RandomK => "randomk",
            StrategyKind::AgeK => "agek",
            StrategyKind::RTopK => "rtopk",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "agetopk" => Ok(StrategyKind::AgeTopK),
            "topk" => Ok(StrategyKind::TopK),
            "randomk" => Ok(StrategyKind::RandomK),
            "agek" => Ok(StrategyKind::AgeK),
            "rtopk" => Ok(StrategyKind::RTopK),
            _ => Err(Error::config(format!(
                "unknown strategy '{s}' (expected agetopk, topk, randomk, agek or rtopk)"
            ))),
        }
    }
}

/// A selection strategy with validated `(d, r, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    kind: StrategyKind,
    d: usize,
    r: usize,
    k: usize,
}

impl Strategy {
    /// Strict constructor: Top-k needs `r == k` and Age-k needs `r == d`.
    pub fn new(kind: StrategyKind, d: usize, r: usize, k: usize) -> Result<Self> {
        if k == 0 || k > r || r > d {
            return Err(Error::config(format!(
                "strategy {kind} needs 1 <= k <= r <= d (got d={d}, r={r}, k={k})"
            )));
        }
        match kind {
            StrategyKind::TopK if r != k => Err(Error::config(format!(
                "topk requires r == k (got r={r}, k={k})"
            ))),
            StrategyKind::AgeK if r != d => Err(Error::config(format!(
                "agek requires r == d (got r={r}, d={d})"
            ))),
            _ => Ok(Strategy { kind, d, r, k }),
        }
    }

    /// Like [`Strategy::new`], but forces the candidate count a baseline
    /// implies (`r = k` for Top-k, `r = d` for Age-k) instead of rejecting it.
    pub fn normalized(kind: StrategyKind, d: usize, r: usize, k: usize) -> Result<Self> {
        let r = match kind {
            StrategyKind::TopK => k,
            StrategyKind::AgeK => d,
            _ => r,
        };
        Strategy::new(kind, d, r, k)
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn by_magnitude(g: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b))
}

/// Indices of the `r` largest-magnitude entries, largest first.
pub fn select_top_r(g_global: &GradientVector, r: usize) -> Result<Vec<usize>> {
    let d = g_global.dim();
    if r == 0 || r > d {
        return Err(Error::config(format!("top-r needs 1 <= r <= d (got r={r}, d={d})")));
    }
    let mut idx: Vec<usize> = (0..d).collect();
    let cmp = by_magnitude(g_global.as_slice());
    if r < d {
        idx.select_nth_unstable_by(r - 1, &cmp);
        idx.truncate(r);
    }
    idx.sort_unstable_by(&cmp);
    Ok(idx)
}

/// The `k` candidates with the largest age.
pub fn select_top_k_by_age(
    candidates: &[usize],
    ages: &AgeVector,
    g_global: &GradientVector,
    k: usize,
) -> Result<SparseMask> {
    let d = ages.dim();
    check_dim("age selection", d, g_global.dim())?;
    if k == 0 || k > candidates.len() {
        return Err(Error::config(format!(
            "age selection needs 1 <= k <= |candidates| (got k={k}, {} candidates)",
            candidates.len()
        )));
    }
    let g = g_global.as_slice();
    let cmp = |&a: &usize, &b: &usize| {
        ages[b]
            .cmp(&ages[a])
            .then_with(|| g[b].abs().total_cmp(&g[a].abs()))
            .then(a.cmp(&b))
    };
    let mut pool = candidates.to_vec();
    if k < pool.len() {
        pool.select_nth_unstable_by(k - 1, cmp);
        pool.truncate(k);
    }
    SparseMask::new(pool, d)
}

fn uniform_subset<R: Rng + ?Sized>(pool: &[usize], k: usize, d: usize, rng: &mut R) -> Result<SparseMask> {
    let picked = rand::seq::index::sample(rng, pool.len(), k);
    SparseMask::new(picked.into_iter().map(|i| pool[i]).collect(), d)
}

/// Computes the mask for the next round from the server's state.
pub fn select<R: Rng + ?Sized>(
    strategy: &Strategy,
    g_global: &GradientVector,
    ages: &AgeVector,
    rng: &mut R,
) -> Result<SparseMask> {
    let d = strategy.d;
    check_dim("selection (global gradient)", d, g_global.dim())?;
    check_dim("selection (ages)", d, ages.dim())?;
    let k = strategy.k;
    match strategy.kind {
        StrategyKind::AgeTopK => {
            let shortlist = select_top_r(g_global, strategy.r)?;
            select_top_k_by_age(&shortlist, ages, g_global, k)
        }
        StrategyKind::TopK => SparseMask::new(select_top_r(g_global, k)?, d),
        StrategyKind::RandomK => {
            let all: Vec<usize> = (0..d).collect();
            uniform_subset(&all, k, d, rng)
        }
        StrategyKind::AgeK => {
            let all: Vec<usize> = (0..d).collect();
            select_top_k_by_age(&all, ages, g_global, k)
        }
        StrategyKind::RTopK => {
            let shortlist = select_top_r(g_global, strategy.r)?;
            uniform_subset(&shortlist, k, d, rng)
        }
    }
}

/// Compression quality `γ = k / (k + (r-k)β + (d-r))` for a magnitude
/// ratio bound `β` between the largest and the `r`-th largest entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorQuality {
    pub gamma: f64,
    pub beta: f64,
}

pub fn gamma_of(d: usize, r: usize, k: usize, beta: f64) -> Result<CompressorQuality> {
    if k == 0 || k > r || r > d {
        return Err(Error::config(format!(
            "gamma needs 1 <= k <= r <= d (got d={d}, r={r}, k={k})"
        )));
    }
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::config(format!("beta must be a finite value >= 1 (got {beta})")));
    }
    let (d, r, k) = (d as f64, r as f64, k as f64);
    Ok(CompressorQuality {
        gamma: k / (k + (r - k) * beta + (d - r)),
        beta,
    })
}

/// Random vector whose largest magnitude is at most `beta` times its
/// `r`-th largest magnitude.
///
/// The top `r` magnitudes are drawn from `[m, βm]` and the tail from
/// `[0, m]` for a log-uniform scale `m`; signs and positions are random.
pub fn gen_ratio_bounded_vector<R: Rng + ?Sized>(
    d: usize,
    r: usize,
    beta: f64,
    rng: &mut R,
) -> Result<GradientVector> {
    if r == 0 || r > d {
        return Err(Error::config(format!("need 1 <= r <= d (got r={r}, d={d})")));
    }
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::config(format!("beta must be a finite value >= 1 (got {beta})")));
    }
    let m = rng.random_range(-3.0f64..3.0).exp();
    let mut mags: Vec<f64> = Vec::with_capacity(d);
    for _ in 0..r {
        mags.push(if beta == 1.0 { m } else { rng.random_range(m..=beta * m) });
    }
    let tail = Uniform::new_inclusive(0.0, m).expect("valid tail range");
    for _ in r..d {
        mags.push(tail.sample(rng));
    }
    let positions = rand::seq::index::sample(rng, d, d);
    let mut values = vec![0.0; d];
    for (mag, pos) in mags.into_iter().zip(positions) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        values[pos] = sign * mag;
    }
    Ok(GradientVector::new(values))
}

/// Relative compression error `‖g - S g‖² / ‖g‖²` (0 for the zero vector).
pub fn measure_retention(mask: &SparseMask, g: &GradientVector) -> Result<f64> {
    let total = g.l2_norm_sq();
    if total == 0.0 {
        return Ok(0.0);
    }
    check_dim("retention", mask.dim(), g.dim())?;
    let kept: f64 = mask.indices().iter().map(|&i| g[i] * g[i]).sum();
    Ok(((total - kept) / total).max(0.0))
}

/// Worst-case relative error of a `k`-of-`r` shortlist selection on vectors
/// satisfying the magnitude-ratio bound: each selected entry carries at
/// least `m²` energy while the total is at most `rβ²m² + (d-r)m²`.
pub fn shortlist_error_bound(d: usize, r: usize, k: usize, beta: f64) -> f64 {
    let (d, r, k) = (d as f64, r as f64, k as f64);
    1.0 - k / (r * beta * beta + d - r)
}
