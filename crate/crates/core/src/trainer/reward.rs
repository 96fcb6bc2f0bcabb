//! Similarity rewards between a preview and its reference output.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Data range used by PSNR on the mixture testbeds (means live in [-4, 4]).
pub const PSNR_RANGE: f64 = 8.0;
pub const PSNR_CAP: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    NegL2,
    Psnr,
    Cosine,
}

impl RewardKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "neg-l2" => Ok(Self::NegL2),
            "psnr" => Ok(Self::Psnr),
            "cosine" => Ok(Self::Cosine),
            other => Err(LabError::Config(format!("unknown reward `{other}` (neg-l2, psnr, cosine)"))),
        }
    }
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LabError::Contract(format!("reward inputs have dimensions {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(preview: &[f64], target: &[f64]) -> Result<f64> {
    check(preview, target)?;
    Ok(preview.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preview.len() as f64)
}

pub fn psnr(preview: &[f64], target: &[f64]) -> Result<f64> {
    let m = mse(preview, target)?;
    if m < 1e-20 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (PSNR_RANGE * PSNR_RANGE / m).log10()).min(PSNR_CAP))
}

pub fn cosine(preview: &[f64], target: &[f64]) -> Result<f64> {
    check(preview, target)?;
    let dot: f64 = preview.iter().zip(target).map(|(a, b)| a * b).sum();
    let na = preview.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

pub fn reward(kind: RewardKind, preview: &[f64], target: &[f64]) -> Result<f64> {
    match kind {
        RewardKind::NegL2 => Ok(-mse(preview, target)?),
        RewardKind::Psnr => psnr(preview, target),
        RewardKind::Cosine => cosine(preview, target),
    }
}

/// `(R - mean) / (std + delta)` with the population standard deviation.
pub fn normalize_advantage(rewards: &[f64], delta: f64) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    // second pass removes the rounding left in the first mean
    let mut dev: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    let residual = dev.iter().sum::<f64>() / n;
    dev.iter_mut().for_each(|d| *d -= residual);
    let std = (dev.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    dev.iter().map(|d| d / (std + delta)).collect()
}
