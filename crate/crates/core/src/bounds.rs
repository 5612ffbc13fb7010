//! Tail bounds for the Gaussian Frobenius-norm estimator.
//!
//! For a matrix with singular values `σ`, each column of `A·R` has squared
//! norm `Σ σ_k² ξ_k²`. The averaged variable `X̄_d` over `d` columns has mean
//! `‖A‖_F²`; the functions here bound and sample its tails.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::{DenseMatrix, RngStream};
use crate::error::{HssError, Result};

/// Positive singular values, sorted descending.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    sigmas: Vec<f64>,
}

impl Spectrum {
    /// Sorts the values descending; rejects empty, non-finite or non-positive input.
    pub fn new(mut sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(HssError::InvalidSpectrum("empty spectrum".into()));
        }
        if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(HssError::InvalidSpectrum(format!("singular value {s} is not positive")));
        }
        sigmas.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum { sigmas })
    }

    pub fn flat(r: usize) -> Result<Self> {
        Self::new(vec![1.0; r])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn rank(&self) -> usize {
        self.sigmas.len()
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.sigmas.iter().map(|s| s * s).sum()
    }

    fn require_rank_two(&self) -> Result<()> {
        if self.rank() < 2 {
            Err(HssError::RankOne)
        } else {
            Ok(())
        }
    }
}

/// `‖S‖_F / √d` for a sample block with `d` columns; 0 for an empty block.
pub fn fro_estimate(samples: &DenseMatrix) -> f64 {
    if samples.cols() == 0 {
        return 0.0;
    }
    samples.fro_norm() / (samples.cols() as f64).sqrt()
}

/// Bound on `P[X̄_d ≥ ‖A‖_F² τ]` for `τ > 1`.
pub fn upper_tail_bound(spec: &Spectrum, d: usize, tau: f64) -> Result<f64> {
    Ok(upper_tail_log_bound(spec, d, tau)?.exp())
}

/// Natural logarithm of [`upper_tail_bound`]; finite where the bound itself
/// would overflow or underflow.
pub fn upper_tail_log_bound(spec: &Spectrum, d: usize, tau: f64) -> Result<f64> {
    spec.require_rank_two()?;
    if !(tau > 1.0) || !tau.is_finite() {
        return Err(HssError::BadTau { tau, side: "upper" });
    }
    Ok(upper_log_bound(spec, d, tau))
}

/// Bound on `P[X̄_d ≤ ‖A‖_F² τ]` for `0 ≤ τ < 1`.
pub fn lower_tail_bound(spec: &Spectrum, d: usize, tau: f64) -> Result<f64> {
    Ok(lower_tail_log_bound(spec, d, tau)?.exp())
}

/// Natural logarithm of [`lower_tail_bound`].
pub fn lower_tail_log_bound(spec: &Spectrum, d: usize, tau: f64) -> Result<f64> {
    spec.require_rank_two()?;
    if !(0.0..1.0).contains(&tau) {
        return Err(HssError::BadTau { tau, side: "lower" });
    }
    Ok(lower_log_bound(spec, d, tau))
}

fn upper_log_bound(spec: &Spectrum, d: usize, tau: f64) -> f64 {
    let f2 = spec.fro_norm_sq();
    // ln(‖A‖_F / A'_k) = -½ ln(1 - σ_k²/‖A‖_F²)
    let s: f64 = spec.sigmas.iter().map(|s| -0.5 * (-(s * s) / f2).ln_1p()).sum();
    d as f64 * (s - tau / 2.0)
}

fn lower_log_bound(spec: &Spectrum, d: usize, tau: f64) -> f64 {
    let f2 = spec.fro_norm_sq();
    let s: f64 = spec.sigmas.iter().map(|s| -0.5 * ((s * s) / f2).ln_1p()).sum();
    d as f64 * (s + tau / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayThresholds {
    pub upper_threshold: f64,
    pub lower_threshold: f64,
}

pub fn decay_conditions(spec: &Spectrum) -> Result<DecayThresholds> {
    spec.require_rank_two()?;
    let s1 = spec.sigmas[0] * spec.sigmas[0];
    Ok(DecayThresholds {
        upper_threshold: 1.0 + s1 / (spec.fro_norm_sq() - s1),
        lower_threshold: std::f64::consts::LN_2,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

impl Tail {
    pub fn bound(self, spec: &Spectrum, d: usize, tau: f64) -> Result<f64> {
        match self {
            Tail::Upper => upper_tail_bound(spec, d, tau),
            Tail::Lower => lower_tail_bound(spec, d, tau),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tail::Upper => "upper",
            Tail::Lower => "lower",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    /// Empirical tail frequency.
    pub probability: f64,
    /// Sample mean of `X̄_d`.
    pub mean: f64,
    /// Standard error of `mean`.
    pub std_err: f64,
}

impl McEstimate {
    /// Binomial standard error of `probability`.
    pub fn prob_std_err(&self, trials: usize) -> f64 {
        (self.probability * (1.0 - self.probability) / trials as f64).sqrt()
    }
}

const MC_SHARDS: u64 = 16;

/// Empirical tail frequency of `X̄_d` over `trials` draws.
///
/// Trials are split over a fixed number of shards, each fed by its own
/// substream of `rng`, so the result does not depend on the thread count.
pub fn mc_tail_probability(spec: &Spectrum, d: usize, tau: f64, side: Tail, trials: usize, rng: &RngStream) -> McEstimate {
    if trials == 0 || d == 0 {
        return McEstimate {
            probability: 0.0,
            mean: 0.0,
            std_err: 0.0,
        };
    }
    let f2 = spec.fro_norm_sq();
    let thresh = f2 * tau;
    let sig2: Vec<f64> = spec.sigmas.iter().map(|s| s * s).collect();
    let per = trials.div_ceil(MC_SHARDS as usize);
    let parts: Vec<(usize, f64, f64)> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|k| {
            let lo = (k as usize * per).min(trials);
            let hi = ((k as usize + 1) * per).min(trials);
            let mut sub = rng.substream(k);
            let mut xi = vec![0.0; d * sig2.len()];
            let (mut hits, mut sum, mut sum2) = (0usize, 0.0, 0.0);
            for _ in lo..hi {
                sub.fill_normal(&mut xi);
                let x: f64 = xi
                    .chunks(sig2.len())
                    .map(|c| c.iter().zip(&sig2).map(|(z, s)| s * z * z).sum::<f64>())
                    .sum::<f64>()
                    / d as f64;
                let hit = match side {
                    Tail::Upper => x >= thresh,
                    Tail::Lower => x <= thresh,
                };
                hits += hit as usize;
                sum += x;
                sum2 += x * x;
            }
            (hits, sum, sum2)
        })
        .collect();
    let (hits, sum, sum2) = parts
        .into_iter()
        .fold((0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 {
        ((sum2 - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        probability: hits as f64 / t,
        mean,
        std_err: (var / t).sqrt(),
    }
}
