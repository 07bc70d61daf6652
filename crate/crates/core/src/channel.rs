//! Analog superposition channel.
//!
//! All clients transmit their compressed gradients simultaneously on `k`
//! orthogonal waveforms. The server observes the fading-weighted average
//! plus thermal noise directly:
//!
//! ```text
//! y = (1/N) Σ_n h_n g̃_n + ξ,   ξ ~ N(0, σ_z² I_k)
//! ```
//!
//! Each client sees a single real fading gain per round, applied to all of
//! its entries. Large-scale path loss is assumed to be compensated already.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};

use crate::error::{check_dim, Error, Result};
use crate::model_state::CompressedVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingKind {
    /// Rayleigh amplitude with mean `mu_h`; the variance follows from it.
    Rayleigh,
    /// Deterministic gain `mu_h`.
    Constant,
    /// Gaussian gain with independent mean and variance. May go negative.
    GaussianGain,
}

impl FadingKind {
    pub fn name(self) -> &'static str {
        match self {
            FadingKind::Rayleigh => "rayleigh",
            FadingKind::Constant => "constant",
            FadingKind::GaussianGain => "gaussian",
        }
    }
}

impl fmt::Display for FadingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FadingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rayleigh" => Ok(FadingKind::Rayleigh),
            "constant" | "none" => Ok(FadingKind::Constant),
            "gaussian" | "gaussiangain" | "gaussian_gain" => Ok(FadingKind::GaussianGain),
            _ => Err(Error::config(format!(
                "unknown fading '{s}' (expected rayleigh, constant or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    fading: FadingKind,
    mu_h: f64,
    sigma_h_sq: f64,
    sigma_z_sq: f64,
}

impl ChannelModel {
    pub fn rayleigh(mu_h: f64, sigma_z_sq: f64) -> Result<Self> {
        check_positive("mu_h", mu_h)?;
        check_nonneg("sigma_z_sq", sigma_z_sq)?;
        Ok(ChannelModel {
            fading: FadingKind::Rayleigh,
            mu_h,
            sigma_h_sq: mu_h * mu_h * (4.0 / PI - 1.0),
            sigma_z_sq,
        })
    }

    pub fn constant(mu_h: f64, sigma_z_sq: f64) -> Result<Self> {
        if !mu_h.is_finite() {
            return Err(Error::config("mu_h must be finite"));
        }
        check_nonneg("sigma_z_sq", sigma_z_sq)?;
        Ok(ChannelModel {
            fading: FadingKind::Constant,
            mu_h,
            sigma_h_sq: 0.0,
            sigma_z_sq,
        })
    }

    pub fn gaussian(mu_h: f64, sigma_h_sq: f64, sigma_z_sq: f64) -> Result<Self> {
        if !mu_h.is_finite() {
            return Err(Error::config("mu_h must be finite"));
        }
        check_nonneg("sigma_h_sq", sigma_h_sq)?;
        check_nonneg("sigma_z_sq", sigma_z_sq)?;
        Ok(ChannelModel {
            fading: FadingKind::GaussianGain,
            mu_h,
            sigma_h_sq,
            sigma_z_sq,
        })
    }

    /// Builds a model of the given kind. `sigma_h_sq` is only consulted for
    /// Gaussian gains; the other kinds derive it.
    pub fn from_parts(fading: FadingKind, mu_h: f64, sigma_h_sq: f64, sigma_z_sq: f64) -> Result<Self> {
        match fading {
            FadingKind::Rayleigh => ChannelModel::rayleigh(mu_h, sigma_z_sq),
            FadingKind::Constant => ChannelModel::constant(mu_h, sigma_z_sq),
            FadingKind::GaussianGain => ChannelModel::gaussian(mu_h, sigma_h_sq, sigma_z_sq),
        }
    }

    /// Ideal channel: unit gain, no noise.
    pub fn ideal() -> Self {
        ChannelModel {
            fading: FadingKind::Constant,
            mu_h: 1.0,
            sigma_h_sq: 0.0,
            sigma_z_sq: 0.0,
        }
    }

    pub fn fading(&self) -> FadingKind {
        self.fading
    }

    pub fn mu_h(&self) -> f64 {
        self.mu_h
    }

    pub fn sigma_h_sq(&self) -> f64 {
        self.sigma_h_sq
    }

    pub fn sigma_z_sq(&self) -> f64 {
        self.sigma_z_sq
    }

    /// Rayleigh scale parameter `σ_R = μ_h √(2/π)`.
    pub fn rayleigh_scale(&self) -> f64 {
        self.mu_h * (2.0 / PI).sqrt()
    }

    pub fn sample_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.fading {
            FadingKind::Constant => self.mu_h,
            FadingKind::Rayleigh => {
                // inverse CDF; Open01 keeps ln() finite
                let u: f64 = Open01.sample(rng);
                self.rayleigh_scale() * (-2.0 * u.ln()).sqrt()
            }
            FadingKind::GaussianGain => {
                if self.sigma_h_sq == 0.0 {
                    self.mu_h
                } else {
                    Normal::new(self.mu_h, self.sigma_h_sq.sqrt())
                        .expect("validated variance")
                        .sample(rng)
                }
            }
        }
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::config(format!("{name} must be finite and >= 0 (got {v})")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(format!("{name} must be finite and > 0 (got {v})")));
    }
    Ok(())
}

/// One round's channel realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// Per-client fading gains.
    pub h: Vec<f64>,
    /// Receiver noise, one entry per waveform.
    pub xi: Vec<f64>,
}

pub fn sample_draw<R: Rng + ?Sized>(model: &ChannelModel, n_clients: usize, k: usize, rng: &mut R) -> ChannelDraw {
    let h = (0..n_clients).map(|_| model.sample_gain(rng)).collect();
    let xi = if model.sigma_z_sq == 0.0 {
        vec![0.0; k]
    } else {
        let noise = Normal::new(0.0, model.sigma_z_sq.sqrt()).expect("validated variance");
        (0..k).map(|_| noise.sample(rng)).collect()
    };
    ChannelDraw { h, xi }
}

/// Received signal `(1/N) Σ h_n g̃_n + ξ`, summed in client-index order.
pub fn aggregate(draw: &ChannelDraw, compressed: &[CompressedVector]) -> Result<CompressedVector> {
    let n = compressed.len();
    if n == 0 {
        return Err(Error::config("aggregate needs at least one client"));
    }
    check_dim("aggregate (fading gains)", n, draw.h.len())?;
    let k = draw.xi.len();
    let mut acc = vec![0.0; k];
    for (h, g) in draw.h.iter().zip(compressed) {
        check_dim("aggregate (compressed length)", k, g.len())?;
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += h * v;
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok(CompressedVector::new(
        acc.iter().zip(&draw.xi).map(|(a, x)| a * inv_n + x).collect(),
    ))
}
