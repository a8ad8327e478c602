use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_backward, EpisodeCache, LossConfig};
use super::params::{ParamId, ParamStore};
use crate::data::{Episode, FeatureBundle};
use crate::error::{input, Result};

/// Minimum number of coordinates checked per tensor (all of them when smaller).
pub const MIN_COORDINATES: usize = 200;

/// Worst coordinate of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub tensor: String,
    pub checked: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Central differences of `f` at `x` over `coords`, compared with `analytic`.
///
/// Returns `(coordinate, analytic, numeric, rel_error)` for the worst coordinate.
pub fn central_difference<F>(
    x: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    epsilon: f64,
    mut f: F,
) -> Result<(usize, f64, f64, f64)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut worst = (0, 0.0, 0.0, 0.0);
    for &i in coords {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(x)?;
        x[i] = orig - epsilon;
        let minus = f(x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err >= worst.3 {
            worst = (i, analytic[i], numeric, err);
        }
    }
    Ok(worst)
}

fn pick<R: Rng + ?Sized>(len: usize, samples: usize, rng: &mut R) -> Vec<usize> {
    if len <= samples {
        (0..len).collect()
    } else {
        let mut v = index::sample(rng, len, samples).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares analytic episode gradients with central differences on at least
/// `samples` coordinates of every trainable tensor.
pub fn finite_diff_check<R: Rng + ?Sized>(
    bundle: &FeatureBundle,
    episode: &Episode,
    params: &ParamStore,
    cfg: &LossConfig,
    epsilon: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return input(format!("finite-difference step must be positive, got {epsilon}"));
    }
    let mut analytic = params.clone();
    analytic.zero_grads();
    forward_backward(bundle, episode, &mut analytic, cfg)?;

    let mut work = params.clone();
    let cache = EpisodeCache::build(bundle, episode, &work, cfg)?;
    let mut tensors = Vec::new();
    for id in ParamId::ALL {
        if cfg.frozen.contains(&id) {
            continue;
        }
        let coords = pick(work.value(id).len(), samples.max(1), rng);
        let grad = analytic.grad(id).to_vec();
        let mut x = work.value(id).to_vec();
        let (coordinate, a, n, err) = central_difference(&mut x, &grad, &coords, epsilon, |x| {
            work.value_mut(id).copy_from_slice(x);
            if id == ParamId::Gate {
                EpisodeCache::build(bundle, episode, &work, cfg)?.loss(&work, cfg).map(|l| l.total)
            } else {
                cache.loss(&work, cfg).map(|l| l.total)
            }
        })?;
        work.value_mut(id).copy_from_slice(&x);
        tensors.push(TensorCheck {
            tensor: id.name().to_string(),
            checked: coords.len(),
            coordinate,
            analytic: a,
            numeric: n,
            rel_error: err,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { tensors, max_rel_error })
}
