//! Alpha-distance covariance and correlation.
//!
//! Observations are the rows of an `m x p` matrix. For an exponent
//! `alpha` in `(0, 2)` the pipeline is
//!
//! ```text
//! raw[k][l] = |x_k - x_l|^alpha
//! A         = double_center(raw)
//! dcov2     = sum(A * B) / m^2
//! dcorr2    = sum(A * B) / (sqrt(sum(A * A)) * sqrt(sum(B * B)))
//! ```
//!
//! `sum(A * B)` equals `tr(AB)` because centered distance matrices are
//! symmetric, so no matrix product is formed.

use ndarray::{Array2, ArrayBase, ArrayView2, Data, Ix2};

use crate::error::{input, shape, Error, Result};

pub mod oracle;

pub use oracle::dcorr_bruteforce_oracle;

/// Pre-clamp values inside this band around `[0, 1]` are rounding noise.
pub const CLAMP_GUARD: f64 = 1e-9;

/// Exponent applied to pairwise Euclidean distances.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AlphaParam(f64);

impl AlphaParam {
    pub const DEFAULT: f64 = 0.8;

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 2.0 {
            Ok(Self(alpha))
        } else {
            input(format!("alpha must lie in the open interval (0, 2), got {alpha}"))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for AlphaParam {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

impl TryFrom<f64> for AlphaParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AlphaParam> for f64 {
    fn from(a: AlphaParam) -> f64 {
        a.0
    }
}

/// `m` observations of a `p`-dimensional variable, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: Array2<f64>,
}

impl ObservationMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return input(format!("need at least 2 observations, got {}", data.nrows()));
        }
        if data.ncols() == 0 {
            return input("observations must have at least one coordinate");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return input("observation matrix contains non-finite entries");
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return shape("observation rows have differing lengths");
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn m(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }
}

/// Matrix of alpha-powered pairwise distances (symmetric, zero diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct RawAlphaDistanceMatrix {
    data: Array2<f64>,
    alpha: AlphaParam,
}

impl RawAlphaDistanceMatrix {
    /// Wraps an externally built matrix after checking its invariants.
    pub fn from_matrix(data: Array2<f64>, alpha: AlphaParam) -> Result<Self> {
        let m = data.nrows();
        if data.ncols() != m {
            return shape(format!("distance matrix must be square, got {:?}", data.dim()));
        }
        for k in 0..m {
            if data[[k, k]] != 0.0 {
                return input("distance matrix must have a zero diagonal");
            }
            for l in 0..k {
                let v = data[[k, l]];
                if !v.is_finite() || v < 0.0 || v != data[[l, k]] {
                    return input("distance matrix must be symmetric, finite and nonnegative");
                }
            }
        }
        Ok(Self { data, alpha })
    }

    pub fn alpha(&self) -> AlphaParam {
        self.alpha
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Double-centered alpha-distance matrix: symmetric with zero row/column sums.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDMatrix {
    data: Array2<f64>,
}

impl AlphaDMatrix {
    /// Wraps a matrix that is already centered. Only the shape is checked.
    pub fn from_centered(data: Array2<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return shape(format!("alpha-D matrix must be square, got {:?}", data.dim()));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// `sum(A * A)`, i.e. `tr(AA)`.
    pub fn self_inner(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Raw distances for the rows of `obs` (assumed finite).
pub(crate) fn raw_distances_of(obs: ArrayView2<'_, f64>, alpha: f64) -> Array2<f64> {
    let m = obs.nrows();
    let half = 0.5 * alpha;
    let mut out = Array2::<f64>::zeros((m, m));
    for k in 0..m {
        let xk = obs.row(k);
        for l in (k + 1)..m {
            let d2: f64 = xk
                .iter()
                .zip(obs.row(l).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            // 0^alpha is taken as 0 for every alpha in (0, 2)
            let v = if d2 > 0.0 { d2.powf(half) } else { 0.0 };
            out[[k, l]] = v;
            out[[l, k]] = v;
        }
    }
    out
}

pub(crate) fn double_center_array(raw: &Array2<f64>) -> Array2<f64> {
    let m = raw.nrows();
    let inv = 1.0 / m as f64;
    // plain sequential sums so a symmetric input yields bitwise-equal row and column means
    let mut row_means = vec![0.0; m];
    let mut col_means = vec![0.0; m];
    for k in 0..m {
        for l in 0..m {
            row_means[k] += raw[[k, l]];
            col_means[k] += raw[[l, k]];
        }
    }
    for v in row_means.iter_mut().chain(col_means.iter_mut()) {
        *v *= inv;
    }
    let grand = row_means.iter().sum::<f64>() * inv;
    let mut out = raw.clone();
    for ((k, l), v) in out.indexed_iter_mut() {
        // summing the two means first keeps symmetric inputs exactly symmetric
        *v = *v - (row_means[k] + col_means[l]) + grand;
    }
    out
}

/// Alpha-D matrix of the rows of a raw view (used by the frame pipeline,
/// where observations are the columns of a frame and a transposed view is passed).
pub(crate) fn alpha_d_of_view(obs: ArrayView2<'_, f64>, alpha: AlphaParam) -> AlphaDMatrix {
    AlphaDMatrix {
        data: double_center_array(&raw_distances_of(obs, alpha.get())),
    }
}

pub fn pairwise_alpha_distances(obs: &ObservationMatrix, alpha: AlphaParam) -> RawAlphaDistanceMatrix {
    RawAlphaDistanceMatrix {
        data: raw_distances_of(obs.view(), alpha.get()),
        alpha,
    }
}

pub fn double_center(raw: &RawAlphaDistanceMatrix) -> AlphaDMatrix {
    AlphaDMatrix {
        data: double_center_array(&raw.data),
    }
}

pub fn alpha_d_matrix(obs: &ObservationMatrix, alpha: AlphaParam) -> AlphaDMatrix {
    double_center(&pairwise_alpha_distances(obs, alpha))
}

fn check_same_dim(a: &AlphaDMatrix, b: &AlphaDMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return shape(format!("alpha-D matrices differ in size: {} vs {}", a.dim(), b.dim()));
    }
    Ok(())
}

/// Elementwise inner product `sum(A * B)`; equals `tr(AB)` for symmetric inputs.
pub fn frobenius_inner<S1, S2>(a: &ArrayBase<S1, Ix2>, b: &ArrayBase<S2, Ix2>) -> f64
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
{
    if let (Some(x), Some(y)) = (a.as_slice(), b.as_slice()) {
        return x.iter().zip(y).map(|(x, y)| x * y).sum();
    }
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Squared alpha-distance covariance `tr(AB) / m^2`.
pub fn dcov2(a: &AlphaDMatrix, b: &AlphaDMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    let m = a.dim() as f64;
    Ok(frobenius_inner(&a.data, &b.data) / (m * m))
}

/// Correlation ratio before clamping. Degenerate (constant) inputs give 0.
pub fn dcorr2_unclamped(a: &AlphaDMatrix, b: &AlphaDMatrix) -> Result<f64> {
    check_same_dim(a, b)?;
    let saa = a.self_inner();
    let sbb = b.self_inner();
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(frobenius_inner(&a.data, &b.data) / (saa.sqrt() * sbb.sqrt()))
}

/// Clamps a raw correlation ratio into `[0, 1]`, rejecting values outside the guard band.
pub fn clamp_unit(r: f64) -> Result<f64> {
    if !r.is_finite() || !(-CLAMP_GUARD..=1.0 + CLAMP_GUARD).contains(&r) {
        return Err(Error::Numerical(format!(
            "distance correlation {r} lies outside [0, 1] beyond rounding tolerance"
        )));
    }
    Ok(r.clamp(0.0, 1.0))
}

/// Squared alpha-distance correlation in `[0, 1]`.
pub fn dcorr2(a: &AlphaDMatrix, b: &AlphaDMatrix) -> Result<f64> {
    clamp_unit(dcorr2_unclamped(a, b)?)
}

/// Convenience wrapper computing `dcorr2` straight from two observation sets.
pub fn dcorr2_obs(x: &ObservationMatrix, y: &ObservationMatrix, alpha: AlphaParam) -> Result<f64> {
    if x.m() != y.m() {
        return shape(format!("observation counts differ: {} vs {}", x.m(), y.m()));
    }
    dcorr2(&alpha_d_matrix(x, alpha), &alpha_d_matrix(y, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn alpha(a: f64) -> AlphaParam {
        AlphaParam::new(a).unwrap()
    }

    fn random_obs(rng: &mut ChaCha8Rng, m: usize, p: usize) -> ObservationMatrix {
        let data = Array2::from_shape_fn((m, p), |_| rng.random_range(-2.0..2.0));
        ObservationMatrix::new(data).unwrap()
    }

    #[test]
    fn alpha_param_bounds() {
        assert!(AlphaParam::new(0.0).is_err());
        assert!(AlphaParam::new(2.0).is_err());
        assert!(AlphaParam::new(f64::NAN).is_err());
        assert_eq!(AlphaParam::default().get(), 0.8);
    }

    #[test]
    fn observation_validation() {
        assert!(matches!(
            ObservationMatrix::new(array![[1.0, 2.0]]),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            ObservationMatrix::new(array![[1.0], [f64::INFINITY]]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn distances_of_two_points() {
        let obs = ObservationMatrix::new(array![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let raw = pairwise_alpha_distances(&obs, alpha(1.0));
        assert_eq!(raw.as_array(), &array![[0.0, 5.0], [5.0, 0.0]]);

        let obs = ObservationMatrix::new(array![[0.0], [4.0]]).unwrap();
        let raw = pairwise_alpha_distances(&obs, alpha(0.5));
        assert!((raw.as_array()[[0, 1]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_give_zero_distance() {
        let obs = ObservationMatrix::new(array![[1.0, 2.0], [1.0, 2.0], [0.0, 5.0]]).unwrap();
        for a in [0.1, 0.8, 1.9] {
            let raw = pairwise_alpha_distances(&obs, alpha(a));
            assert_eq!(raw.as_array()[[0, 1]], 0.0);
            assert!(raw.as_array()[[0, 2]] > 0.0);
        }
    }

    #[test]
    fn centering_small_cases() {
        let raw = RawAlphaDistanceMatrix::from_matrix(array![[0.0, 2.0], [2.0, 0.0]], alpha(1.0)).unwrap();
        assert_eq!(double_center(&raw).as_array(), &array![[-1.0, 1.0], [1.0, -1.0]]);

        let raw = RawAlphaDistanceMatrix::from_matrix(Array2::zeros((4, 4)), alpha(1.0)).unwrap();
        assert!(double_center(&raw).as_array().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_matrix_validation() {
        let bad = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(RawAlphaDistanceMatrix::from_matrix(bad, alpha(1.0)).is_err());
        let bad = array![[1.0, 1.0], [1.0, 0.0]];
        assert!(RawAlphaDistanceMatrix::from_matrix(bad, alpha(1.0)).is_err());
    }

    #[test]
    fn centering_random_symmetric_sums_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Array2::<f64>::zeros((5, 5));
        for k in 0..5 {
            for l in (k + 1)..5 {
                let v = rng.random_range(0.0..3.0);
                m[[k, l]] = v;
                m[[l, k]] = v;
            }
        }
        let a = double_center(&RawAlphaDistanceMatrix::from_matrix(m, alpha(1.0)).unwrap());
        for r in a.as_array().rows() {
            assert!(r.sum().abs() < 1e-12);
        }
        for c in a.as_array().columns() {
            assert!(c.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn composed_pipeline_matches_two_steps() {
        let obs = ObservationMatrix::new(array![[0.0, 0.0], [3.0, 4.0]]).unwrap();
        assert_eq!(
            alpha_d_matrix(&obs, alpha(1.0)).as_array(),
            &array![[-2.5, 2.5], [2.5, -2.5]]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = random_obs(&mut rng, 17, 6);
        let two_step = double_center(&pairwise_alpha_distances(&obs, alpha(0.8)));
        assert_eq!(alpha_d_matrix(&obs, alpha(0.8)), two_step);
    }

    #[test]
    fn large_random_rows_are_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = random_obs(&mut rng, 64, 9);
        let a = alpha_d_matrix(&obs, alpha(0.8));
        for r in a.as_array().rows() {
            assert!(r.sum().abs() < 1e-9);
        }
    }

    #[test]
    fn dcov_analytic_values() {
        let a = AlphaDMatrix::from_centered(array![[-1.0, 1.0], [1.0, -1.0]]).unwrap();
        assert_eq!(dcov2(&a, &a).unwrap(), 1.0);
        let z = AlphaDMatrix::from_centered(Array2::zeros((2, 2))).unwrap();
        assert_eq!(dcov2(&a, &z).unwrap(), 0.0);
        let b = AlphaDMatrix::from_centered(Array2::zeros((3, 3))).unwrap();
        assert!(matches!(dcov2(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(dcorr2(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn dcov_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = alpha_d_matrix(&random_obs(&mut rng, 32, 4), alpha(1.0));
        let b = alpha_d_matrix(&random_obs(&mut rng, 32, 3), alpha(1.0));
        let mut s = 0.0;
        for k in 0..32 {
            for l in 0..32 {
                s += a.as_array()[[k, l]] * b.as_array()[[k, l]];
            }
        }
        assert!((dcov2(&a, &b).unwrap() - s / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn self_and_two_point_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = alpha_d_matrix(&random_obs(&mut rng, 12, 3), alpha(0.8));
        assert!((dcorr2(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        for _ in 0..20 {
            let x = random_obs(&mut rng, 2, 3);
            let y = random_obs(&mut rng, 2, 5);
            assert!((dcorr2_obs(&x, &y, alpha(1.3)).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_give_zero() {
        let x = ObservationMatrix::new(Array2::from_elem((6, 2), 3.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = random_obs(&mut rng, 6, 2);
        assert_eq!(dcorr2_obs(&x, &y, alpha(0.8)).unwrap(), 0.0);
    }

    #[test]
    fn clamp_guard_band() {
        assert_eq!(clamp_unit(-5e-10).unwrap(), 0.0);
        assert_eq!(clamp_unit(1.0 + 5e-10).unwrap(), 1.0);
        assert!(matches!(clamp_unit(-1e-6), Err(Error::Numerical(_))));
        assert!(matches!(clamp_unit(1.01), Err(Error::Numerical(_))));
        assert!(matches!(clamp_unit(f64::NAN), Err(Error::Numerical(_))));
    }
}
