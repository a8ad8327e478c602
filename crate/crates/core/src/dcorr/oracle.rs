//! Reference implementation of the alpha-distance correlation using plain
//! nested loops over `Vec<Vec<f64>>`. It shares no code with the fast path:
//! distances go through `sqrt` then `powf`, centering is done with explicit
//! accumulators, and the trace is taken from a real matrix product.

use super::{AlphaParam, ObservationMatrix};
use crate::error::{shape, Result};

fn to_rows(obs: &ObservationMatrix) -> Vec<Vec<f64>> {
    obs.view().rows().into_iter().map(|r| r.to_vec()).collect()
}

fn centered_distances(rows: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let m = rows.len();
    let mut d = vec![vec![0.0; m]; m];
    for k in 0..m {
        for l in 0..m {
            let mut acc = 0.0;
            for c in 0..rows[k].len() {
                let diff = rows[k][c] - rows[l][c];
                acc += diff * diff;
            }
            let dist = acc.sqrt();
            d[k][l] = if dist == 0.0 { 0.0 } else { dist.powf(alpha) };
        }
    }
    let mut row_mean = vec![0.0; m];
    let mut col_mean = vec![0.0; m];
    let mut grand = 0.0;
    for k in 0..m {
        for l in 0..m {
            row_mean[k] += d[k][l];
            col_mean[l] += d[k][l];
            grand += d[k][l];
        }
    }
    let mf = m as f64;
    let mut a = vec![vec![0.0; m]; m];
    for k in 0..m {
        for l in 0..m {
            a[k][l] = d[k][l] - row_mean[k] / mf - col_mean[l] / mf + grand / (mf * mf);
        }
    }
    a
}

fn trace_of_product(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let m = a.len();
    let mut tr = 0.0;
    for k in 0..m {
        // (AB)_kk
        for l in 0..m {
            tr += a[k][l] * b[l][k];
        }
    }
    tr
}

/// Brute-force squared alpha-distance correlation of paired observations.
///
/// Returns the unclamped ratio; degenerate (constant) inputs give 0.
pub fn dcorr_bruteforce_oracle(x: &ObservationMatrix, y: &ObservationMatrix, alpha: AlphaParam) -> Result<f64> {
    if x.m() != y.m() {
        return shape(format!("observation counts differ: {} vs {}", x.m(), y.m()));
    }
    let a = centered_distances(&to_rows(x), alpha.get());
    let b = centered_distances(&to_rows(y), alpha.get());
    let ab = trace_of_product(&a, &b);
    let aa = trace_of_product(&a, &a);
    let bb = trace_of_product(&b, &b);
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok(ab / (aa.sqrt() * bb.sqrt()))
}
