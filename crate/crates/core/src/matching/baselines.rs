//! Reference metrics built on per-frame mean token vectors: diagonal cosine,
//! global average pooling and bidirectional mean Hausdorff matching, plus
//! variants that substitute inter-frame distance correlations for the
//! cosine similarities they consume.
//!
//! These are reconstructions of commonly used set-matching metrics, kept
//! deliberately simple; they are comparison points, not tuned reimplementations.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dcorr::AlphaParam;
use crate::error::{shape, Result};
use crate::framemetric::{frame_alpha_d, interframe_corr, InterFrameCorrMatrix, VideoTokenFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineId {
    Cosine,
    Gap,
    Bimhm,
}

/// `T x d` matrix of token-averaged frame vectors.
pub fn frame_means(video: &VideoTokenFeatures) -> Array2<f64> {
    video.data().mean_axis(Axis(1)).expect("video has tokens")
}

/// Cosine similarity, 0 when either vector has zero norm.
pub fn cosine(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

fn same_frames(support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<()> {
    if support.frames() != query.frames() {
        return shape(format!(
            "frame counts differ: {} vs {}",
            support.frames(),
            query.frames()
        ));
    }
    Ok(())
}

fn same_channels(support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<()> {
    if support.channels() != query.channels() {
        return shape(format!(
            "channel counts differ: {} vs {}",
            support.channels(),
            query.channels()
        ));
    }
    Ok(())
}

/// Mean over frames `i` of cos(support frame i, query frame i).
pub fn baseline_cosine(support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<f64> {
    same_frames(support, query)?;
    same_channels(support, query)?;
    let s = frame_means(support);
    let q = frame_means(query);
    let total: f64 = s
        .rows()
        .into_iter()
        .zip(q.rows())
        .map(|(a, b)| cosine(a, b))
        .sum();
    Ok(total / s.nrows() as f64)
}

fn pooled(video: &VideoTokenFeatures) -> Array1<f64> {
    frame_means(video).mean_axis(Axis(0)).expect("video has frames")
}

/// Cosine similarity of the time-and-token pooled feature vectors.
pub fn baseline_gap(support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<f64> {
    same_channels(support, query)?;
    Ok(cosine(pooled(support).view(), pooled(query).view()))
}

/// Bidirectional mean Hausdorff similarity over a `T_s x T_q` distance matrix.
fn bimhm_from_distances(dist: &Array2<f64>) -> f64 {
    let (ts, tq) = dist.dim();
    let query_side: f64 = (0..tq)
        .map(|j| dist.column(j).iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / tq as f64;
    let support_side: f64 = (0..ts)
        .map(|i| dist.row(i).iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / ts as f64;
    -(query_side + support_side)
}

/// Negated bidirectional mean Hausdorff distance with `1 - cos` frame distances.
pub fn baseline_bimhm(support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<f64> {
    same_channels(support, query)?;
    let s = frame_means(support);
    let q = frame_means(query);
    let dist = Array2::from_shape_fn((s.nrows(), q.nrows()), |(i, j)| 1.0 - cosine(s.row(i), q.row(j)));
    Ok(bimhm_from_distances(&dist))
}

/// A baseline with its inter-frame cosine similarities replaced by `m_if`.
///
/// Cosine uses the diagonal of `m_if`, BiMHM uses `1 - m_if` as its distance,
/// and GAP (which has no inter-frame matrix) gets `mean(m_if)` added.
pub fn hybrid_with_corr(
    baseline: BaselineId,
    support: &VideoTokenFeatures,
    query: &VideoTokenFeatures,
    m_if: &InterFrameCorrMatrix,
) -> Result<f64> {
    let m = m_if.as_array();
    match baseline {
        BaselineId::Cosine => {
            let (ts, tq) = m.dim();
            if ts != tq {
                return shape("diagonal matching needs equal frame counts");
            }
            Ok(m.diag().sum() / ts as f64)
        }
        BaselineId::Bimhm => Ok(bimhm_from_distances(&m.mapv(|v| 1.0 - v))),
        BaselineId::Gap => Ok(baseline_gap(support, query)? + m_if.mean()),
    }
}

pub fn hybrid_baseline_with_ifdc(
    baseline: BaselineId,
    support: &VideoTokenFeatures,
    query: &VideoTokenFeatures,
    alpha: AlphaParam,
) -> Result<f64> {
    let m_if = interframe_corr(&frame_alpha_d(support, alpha), &frame_alpha_d(query, alpha))?;
    hybrid_with_corr(baseline, support, query, &m_if)
}

pub fn baseline_score(baseline: BaselineId, support: &VideoTokenFeatures, query: &VideoTokenFeatures) -> Result<f64> {
    match baseline {
        BaselineId::Cosine => baseline_cosine(support, query),
        BaselineId::Gap => baseline_gap(support, query),
        BaselineId::Bimhm => baseline_bimhm(support, query),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_video(rng: &mut ChaCha8Rng, t: usize, tokens: usize, d: usize) -> VideoTokenFeatures {
        let data = Array3::from_shape_fn((t, tokens, d), |_| rng.random_range(-1.0..1.0));
        VideoTokenFeatures::new(data, None).unwrap()
    }

    fn loop_cos(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for k in 0..a.len() {
            ab += a[k] * b[k];
            aa += a[k] * a[k];
            bb += b[k] * b[k];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    fn loop_frame_mean(v: &VideoTokenFeatures, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; v.channels()];
        for r in 0..v.tokens() {
            for c in 0..v.channels() {
                out[c] += v.data()[[t, r, c]] / v.tokens() as f64;
            }
        }
        out
    }

    #[test]
    fn cosine_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_video(&mut rng, 4, 3, 5);
        assert!((baseline_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        // frame means e0 and e1 are orthogonal
        let mut x = Array3::<f64>::zeros((2, 2, 3));
        let mut y = Array3::<f64>::zeros((2, 2, 3));
        for t in 0..2 {
            x[[t, 0, 0]] = 1.0;
            y[[t, 1, 1]] = 2.0;
        }
        let x = VideoTokenFeatures::new(x, None).unwrap();
        let y = VideoTokenFeatures::new(y, None).unwrap();
        assert_eq!(baseline_cosine(&x, &y).unwrap(), 0.0);

        let b = random_video(&mut rng, 4, 3, 5);
        let expected: f64 = (0..4)
            .map(|t| loop_cos(&loop_frame_mean(&a, t), &loop_frame_mean(&b, t)))
            .sum::<f64>()
            / 4.0;
        assert!((baseline_cosine(&a, &b).unwrap() - expected).abs() < 1e-12);
        let short = random_video(&mut rng, 3, 3, 5);
        assert!(baseline_cosine(&a, &short).is_err());
    }

    #[test]
    fn zero_norm_frames_count_as_zero() {
        let z = VideoTokenFeatures::new(Array3::zeros((2, 2, 3)), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_video(&mut rng, 2, 2, 3);
        assert_eq!(baseline_cosine(&z, &a).unwrap(), 0.0);
    }

    #[test]
    fn gap_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_video(&mut rng, 4, 3, 5);
        assert!((baseline_gap(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((baseline_gap(&a, &a.scaled(-1.0)).unwrap() + 1.0).abs() < 1e-12);

        let b = random_video(&mut rng, 4, 3, 5);
        let pool = |v: &VideoTokenFeatures| {
            let mut out = vec![0.0; 5];
            for t in 0..4 {
                for (c, m) in loop_frame_mean(v, t).iter().enumerate() {
                    out[c] += m / 4.0;
                }
            }
            out
        };
        assert!((baseline_gap(&a, &b).unwrap() - loop_cos(&pool(&a), &pool(&b))).abs() < 1e-12);
    }

    #[test]
    fn bimhm_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_video(&mut rng, 4, 3, 5);
        assert!(baseline_bimhm(&a, &a).unwrap().abs() < 1e-12);

        let x = random_video(&mut rng, 1, 3, 5);
        let y = random_video(&mut rng, 1, 3, 5);
        let dist = 1.0 - loop_cos(&loop_frame_mean(&x, 0), &loop_frame_mean(&y, 0));
        assert!((baseline_bimhm(&x, &y).unwrap() + 2.0 * dist).abs() < 1e-12);

        let b = random_video(&mut rng, 3, 3, 5);
        let mut d = vec![vec![0.0; 3]; 4];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 1.0 - loop_cos(&loop_frame_mean(&a, i), &loop_frame_mean(&b, j));
            }
        }
        let mut q_side = 0.0;
        for j in 0..3 {
            q_side += (0..4).map(|i| d[i][j]).fold(f64::INFINITY, f64::min) / 3.0;
        }
        let mut s_side = 0.0;
        for row in &d {
            s_side += row.iter().copied().fold(f64::INFINITY, f64::min) / 4.0;
        }
        assert!((baseline_bimhm(&a, &b).unwrap() + q_side + s_side).abs() < 1e-12);
    }

    #[test]
    fn hybrids() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alpha = AlphaParam::default();
        let a = random_video(&mut rng, 3, 4, 6);
        assert!(hybrid_baseline_with_ifdc(BaselineId::Bimhm, &a, &a, alpha).unwrap().abs() < 1e-12);
        assert!((hybrid_baseline_with_ifdc(BaselineId::Cosine, &a, &a, alpha).unwrap() - 1.0).abs() < 1e-12);

        // hand-built 2x2 correlation matrix
        let b = random_video(&mut rng, 2, 4, 6);
        let c = random_video(&mut rng, 2, 4, 6);
        let m = InterFrameCorrMatrix::from_array(ndarray::array![[0.9, 0.2], [0.4, 0.6]]).unwrap();
        // distances [[0.1, 0.8], [0.6, 0.4]]: each side's mean of minima is 0.25
        assert!((hybrid_with_corr(BaselineId::Bimhm, &b, &c, &m).unwrap() + 0.5).abs() < 1e-12);
        assert!((hybrid_with_corr(BaselineId::Cosine, &b, &c, &m).unwrap() - 0.75).abs() < 1e-12);
        let gap = baseline_gap(&b, &c).unwrap();
        assert!((hybrid_with_corr(BaselineId::Gap, &b, &c, &m).unwrap() - (gap + 0.525)).abs() < 1e-12);
    }
}
