//! Frame-level alpha-distance-correlation matching for few-shot video
//! classification over precomputed token features.
//!
//! The crate is layered bottom-up:
//!
//! - [`dcorr`]: alpha-powered distance matrices, double centering,
//!   distance covariance/correlation and a brute-force reference.
//! - [`framemetric`]: per-frame alpha-D matrices for a video and the
//!   inter-frame correlation matrix between two videos.
//! - [`matching`]: task prototypes, the learnable matching generator,
//!   episode scoring, plus cosine / GAP / Hausdorff baselines.
//! - [`glac`]: class-prototype student logits, teacher KL guidance and the
//!   combined objective.
//! - [`learn`]: parameters, analytic gradients, finite-difference checks,
//!   AdamW and the episodic training loop.
//! - [`data`]: feature bundles on disk, episode sampling and synthetic
//!   data generators.
//! - [`eval`]: parallel episodic evaluation and reporting.

pub mod data;
pub mod dcorr;
pub mod error;
pub mod eval;
pub mod framemetric;
pub mod glac;
pub mod learn;
pub mod matching;
pub mod report;

pub use error::{Error, Result};

/// Numerically stable softmax of `logits` scaled by `temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|&z| z * temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z * temperature - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}
