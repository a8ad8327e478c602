//! Task-specific matching: class-token summaries, the query-specific task
//! prototype, the affine matching generator and episode scoring.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, shape, Result};
use crate::framemetric::{interframe_corr, FrameAlphaDStack, InterFrameCorrMatrix, VideoTokenFeatures};

pub mod baselines;

pub use baselines::{baseline_bimhm, baseline_cosine, baseline_gap, hybrid_baseline_with_ifdc, BaselineId};

/// Frame-averaged (optionally projected) class token of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTokenSummary(pub Array1<f64>);

impl ClassTokenSummary {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Query plus mean-support summary conditioning the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPrototype(pub Array1<f64>);

/// Affine map from raw class tokens (`d`) to the summary space (`d_p`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Projection {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return shape("projection bias length must equal its output dimension");
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.in_dim() {
            return shape(format!("projection expects {} inputs, got {}", self.in_dim(), x.len()));
        }
        Ok(self.weight.dot(x) + &self.bias)
    }
}

/// Learnable affine generator producing a `T x T` matching matrix.
///
/// Output index `i * T + j` is support frame `i`, query frame `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGenerator {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    frames: usize,
}

impl MatchingGenerator {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, frames: usize) -> Result<Self> {
        let tt = frames * frames;
        if frames == 0 || weight.nrows() != tt || bias.len() != tt {
            return shape(format!("generator for {frames} frames needs {tt} output rows"));
        }
        Ok(Self { weight, bias, frames })
    }

    /// Zero weights and bias `1/T^2`: plain mean over all frame pairs.
    pub fn uniform(frames: usize, proto_dim: usize) -> Self {
        let tt = frames * frames;
        Self {
            weight: Array2::zeros((tt, proto_dim)),
            bias: Array1::from_elem(tt, 1.0 / tt as f64),
            frames,
        }
    }

    /// Weights uniform in `(-eps, eps)` with `eps = 1/sqrt(d_p * T^2)`, bias `1/T^2`.
    pub fn init<R: Rng + ?Sized>(frames: usize, proto_dim: usize, rng: &mut R) -> Self {
        let mut g = Self::uniform(frames, proto_dim);
        let eps = 1.0 / ((proto_dim * frames * frames) as f64).sqrt();
        g.weight.mapv_inplace(|_| rng.random_range(-eps..eps));
        g
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn proto_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Per-class scores and their softmax for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScores {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl EpisodeScores {
    pub fn from_logits(logits: Vec<f64>, temperature: f64) -> Self {
        let scaled: Vec<f64> = logits.iter().map(|z| z * temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = scaled.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self {
            logits,
            probs,
            log_probs,
        }
    }

    /// Builds scores from an explicit probability vector (logits set to log-probabilities).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return input("probabilities must be finite and nonnegative");
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return input(format!("probabilities sum to {sum}, not 1"));
        }
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            logits: log_probs.clone(),
            probs,
            log_probs,
        })
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// How K support shots of a class are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotAggregation {
    /// Score the query against each shot and average the scores.
    #[default]
    MeanScore,
    /// Average the shots' token features into one support video first.
    MeanFeatures,
}

/// Mean class token over frames, passed through `projection` when given.
pub fn class_token_average(video: &VideoTokenFeatures, projection: Option<&Projection>) -> Result<ClassTokenSummary> {
    let mut mean = Array1::<f64>::zeros(video.channels());
    for t in 0..video.frames() {
        mean += &video.class_token(t);
    }
    mean /= video.frames() as f64;
    match projection {
        Some(p) => Ok(ClassTokenSummary(p.apply(&mean)?)),
        None => Ok(ClassTokenSummary(mean)),
    }
}

/// `query + mean(supports)` over every support video in the episode.
pub fn task_prototype(query: &ClassTokenSummary, supports: &[&ClassTokenSummary]) -> Result<TaskPrototype> {
    if supports.is_empty() {
        return input("task prototype needs at least one support video");
    }
    let mut acc = Array1::<f64>::zeros(query.dim());
    for s in supports {
        if s.dim() != query.dim() {
            return shape("support and query summaries differ in dimension");
        }
        acc += &s.0;
    }
    acc /= supports.len() as f64;
    Ok(TaskPrototype(&query.0 + &acc))
}

pub fn generate_matching(gen: &MatchingGenerator, proto: &TaskPrototype) -> Result<Array2<f64>> {
    if proto.0.len() != gen.proto_dim() {
        return shape(format!(
            "generator expects a {}-dim prototype, got {}",
            gen.proto_dim(),
            proto.0.len()
        ));
    }
    let flat = gen.weight.dot(&proto.0) + &gen.bias;
    let t = gen.frames();
    Ok(flat.into_shape_with_order((t, t)).expect("generator output has T*T entries"))
}

/// Frobenius inner product of the matching matrix and the correlation matrix.
pub fn match_score(m_task: &Array2<f64>, m_if: &InterFrameCorrMatrix) -> Result<f64> {
    if m_task.dim() != m_if.shape() {
        return shape(format!(
            "matching matrix is {:?} but correlation matrix is {:?}",
            m_task.dim(),
            m_if.shape()
        ));
    }
    Ok(crate::dcorr::frobenius_inner(m_task, m_if.as_array()))
}

/// Scores one query against every support class.
///
/// `classes[c]` holds the frame stacks representing class `c`; the class score
/// is the mean match score over them.
pub fn episode_logits(
    query: &FrameAlphaDStack,
    m_task: &Array2<f64>,
    classes: &[Vec<&FrameAlphaDStack>],
    temperature: f64,
) -> Result<EpisodeScores> {
    let mut logits = Vec::with_capacity(classes.len());
    for (c, shots) in classes.iter().enumerate() {
        if shots.is_empty() {
            return input(format!("support class {c} has no videos"));
        }
        let mut total = 0.0;
        for s in shots {
            total += match_score(m_task, &interframe_corr(s, query)?)?;
        }
        logits.push(total / shots.len() as f64);
    }
    if logits.is_empty() {
        return input("episode has no support classes");
    }
    Ok(EpisodeScores::from_logits(logits, temperature))
}

/// Cross-entropy `-log s_label`.
pub fn ts_dcm_loss(scores: &EpisodeScores, label: usize) -> Result<f64> {
    match scores.log_probs.get(label) {
        Some(lp) => Ok(-lp),
        None => input(format!("label {label} out of range for {} classes", scores.probs.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcorr::AlphaParam;
    use crate::framemetric::frame_alpha_d;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_video(rng: &mut ChaCha8Rng, t: usize, tokens: usize, d: usize) -> VideoTokenFeatures {
        let data = Array3::from_shape_fn((t, tokens, d), |_| rng.random_range(-1.0..1.0));
        VideoTokenFeatures::new(data, None).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn class_token_average_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_video(&mut rng, 1, 3, 4);
        assert_eq!(class_token_average(&v, None).unwrap().0, v.class_token(0).to_owned());

        let mut data = Array3::<f64>::zeros((2, 3, 4));
        let u = random_vec(&mut rng, 4);
        data.slice_mut(ndarray::s![0, 0, ..]).assign(&u);
        data.slice_mut(ndarray::s![1, 0, ..]).assign(&(-&u));
        let v = VideoTokenFeatures::new(data, None).unwrap();
        assert!(class_token_average(&v, None).unwrap().0.iter().all(|&x| x == 0.0));

        let v = random_video(&mut rng, 8, 5, 6);
        let proj = Projection::new(
            Array2::from_shape_fn((3, 6), |_| rng.random_range(-1.0..1.0)),
            random_vec(&mut rng, 3),
        )
        .unwrap();
        let got = class_token_average(&v, Some(&proj)).unwrap();
        let mut expected = Array1::<f64>::zeros(3);
        for t in 0..8 {
            expected += &proj.apply(&v.class_token(t).to_owned()).unwrap();
        }
        expected /= 8.0;
        for (a, b) in got.0.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prototype_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = ClassTokenSummary(random_vec(&mut rng, 4));
        let s = ClassTokenSummary(random_vec(&mut rng, 4));
        assert_eq!(task_prototype(&q, &[&s]).unwrap().0, &q.0 + &s.0);

        let neg = ClassTokenSummary(-&s.0);
        let p = task_prototype(&q, &[&s, &neg]).unwrap();
        for (a, b) in p.0.iter().zip(&q.0) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(task_prototype(&q, &[]).is_err());

        let supports: Vec<ClassTokenSummary> = (0..5).map(|_| ClassTokenSummary(random_vec(&mut rng, 4))).collect();
        let refs: Vec<&ClassTokenSummary> = supports.iter().collect();
        let p = task_prototype(&q, &refs).unwrap();
        for k in 0..4 {
            let mean: f64 = supports.iter().map(|s| s.0[k]).sum::<f64>() / 5.0;
            assert!((p.0[k] - (q.0[k] + mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = MatchingGenerator::uniform(4, 6);
        let m = generate_matching(&g, &TaskPrototype(random_vec(&mut rng, 6))).unwrap();
        assert!(m.iter().all(|&x| x == 1.0 / 16.0));

        let g = MatchingGenerator::init(4, 6, &mut rng);
        let m = generate_matching(&g, &TaskPrototype(Array1::zeros(6))).unwrap();
        assert_eq!(m.into_shape_with_order(16).unwrap(), g.bias);

        let p = random_vec(&mut rng, 6);
        let m = generate_matching(&g, &TaskPrototype(p.clone())).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let row = i * 4 + j;
                let mut v = g.bias[row];
                for k in 0..6 {
                    v += g.weight[[row, k]] * p[k];
                }
                assert!((m[[i, j]] - v).abs() < 1e-12);
            }
        }
        assert!(generate_matching(&g, &TaskPrototype(Array1::zeros(5))).is_err());
        let eps = 1.0 / (6.0f64 * 16.0).sqrt();
        assert!(g.weight.iter().all(|w| w.abs() < eps));
    }

    #[test]
    fn match_score_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_video(&mut rng, 3, 4, 5);
        let b = random_video(&mut rng, 3, 4, 5);
        let alpha = AlphaParam::default();
        let mif = interframe_corr(&frame_alpha_d(&a, alpha), &frame_alpha_d(&b, alpha)).unwrap();
        assert_eq!(match_score(&Array2::zeros((3, 3)), &mif).unwrap(), 0.0);

        let m_task = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m_task[[i, j]] * mif.as_array()[[i, j]];
            }
        }
        assert!((match_score(&m_task, &mif).unwrap() - s).abs() < 1e-12);
        assert!(match_score(&Array2::zeros((2, 3)), &mif).is_err());

        let same = interframe_corr(&frame_alpha_d(&a, alpha), &frame_alpha_d(&a, alpha)).unwrap();
        let ones = Array2::from_elem((3, 3), 1.0 / 9.0);
        // diagonal of a self-correlation is 1, off-diagonal below 1
        assert!(match_score(&ones, &same).unwrap() <= 1.0);
    }

    #[test]
    fn uniform_task_on_all_ones_scores_one() {
        let ones = InterFrameCorrMatrix::from_array(Array2::ones((4, 4))).unwrap();
        let m_task = Array2::from_elem((4, 4), 1.0 / 16.0);
        assert!((match_score(&m_task, &ones).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_query_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alpha = AlphaParam::default();
        let videos: Vec<VideoTokenFeatures> = (0..5).map(|_| random_video(&mut rng, 4, 6, 8)).collect();
        let stacks: Vec<FrameAlphaDStack> = videos.iter().map(|v| frame_alpha_d(v, alpha)).collect();
        let classes: Vec<Vec<&FrameAlphaDStack>> = stacks.iter().map(|s| vec![s]).collect();
        let m_task = generate_matching(&MatchingGenerator::uniform(4, 3), &TaskPrototype(Array1::zeros(3))).unwrap();
        for c in 0..5 {
            let scores = episode_logits(&stacks[c], &m_task, &classes, 1.0).unwrap();
            assert_eq!(scores.argmax(), c);
            let best = scores.logits[c];
            assert!(scores.logits.iter().enumerate().all(|(i, &z)| i == c || z < best));
            assert!((scores.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let empty: Vec<Vec<&FrameAlphaDStack>> = vec![vec![&stacks[0]], vec![]];
        assert!(episode_logits(&stacks[0], &m_task, &empty, 1.0).is_err());
    }

    #[test]
    fn one_shot_logits_equal_pair_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let alpha = AlphaParam::default();
        let stacks: Vec<FrameAlphaDStack> = (0..4).map(|_| frame_alpha_d(&random_video(&mut rng, 3, 4, 5), alpha)).collect();
        let q = frame_alpha_d(&random_video(&mut rng, 3, 4, 5), alpha);
        let m_task = Array2::from_shape_fn((3, 3), |_| rng.random_range(0.0..1.0));
        let classes: Vec<Vec<&FrameAlphaDStack>> = stacks.iter().map(|s| vec![s]).collect();
        let scores = episode_logits(&q, &m_task, &classes, 2.0).unwrap();
        for (c, s) in stacks.iter().enumerate() {
            assert_eq!(scores.logits[c], match_score(&m_task, &interframe_corr(s, &q).unwrap()).unwrap());
        }
    }

    #[test]
    fn scores_softmax_and_loss() {
        let s = EpisodeScores::from_logits(vec![0.7; 5], 1.0);
        for p in &s.probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
        assert!((ts_dcm_loss(&s, 2).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(ts_dcm_loss(&s, 5).is_err());

        let s = EpisodeScores::from_logits(vec![0.0, 60.0, 0.0], 1.0);
        assert!(ts_dcm_loss(&s, 1).unwrap() < 1e-20);

        let shifted = EpisodeScores::from_logits(vec![1.0, 2.5, -0.3], 1.3);
        let base = EpisodeScores::from_logits(vec![11.0, 12.5, 9.7], 1.3);
        for (a, b) in shifted.probs.iter().zip(&base.probs) {
            assert!((a - b).abs() < 1e-12);
        }

        let probs = vec![0.1, 0.25, 0.4, 0.25];
        let s = EpisodeScores::from_probs(probs.clone()).unwrap();
        for (i, p) in probs.iter().enumerate() {
            assert!((ts_dcm_loss(&s, i).unwrap() + p.ln()).abs() < 1e-12);
        }
        assert!(EpisodeScores::from_probs(vec![0.5, 0.6]).is_err());
    }
}
