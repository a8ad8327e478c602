//! Distillation terms: a student distribution from class-prototype inner
//! products with the video alpha-D representation, KL guidance towards a
//! teacher distribution, the supervised cross-entropy terms, the
//! vision-language alignment loss and the weighted total.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{input, shape, Result};
use crate::framemetric::VideoAlphaDRepresentation;
use crate::matching::ClassTokenSummary;

/// Floor applied to teacher probabilities before renormalisation.
pub const TEACHER_FLOOR: f64 = 1e-8;
/// Tolerance used when validating a teacher row read from disk.
pub const TEACHER_SIMPLEX_TOL: f64 = 1e-6;

/// One `d x d` prototype matrix per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypeBank {
    matrices: Vec<Array2<f64>>,
}

impl ClassPrototypeBank {
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<Self> {
        if matrices.len() < 2 {
            return input("prototype bank needs at least two classes");
        }
        let dim = matrices[0].dim();
        if dim.0 != dim.1 || matrices.iter().any(|m| m.dim() != dim) {
            return shape("prototype matrices must all be square and equally sized");
        }
        if matrices.iter().flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return input("prototype bank contains non-finite entries");
        }
        Ok(Self { matrices })
    }

    /// Small random symmetric matrices, used when no class data is available.
    pub fn random<R: Rng + ?Sized>(classes: usize, d: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let matrices = (0..classes)
            .map(|_| {
                let mut m = Array2::<f64>::zeros((d, d));
                for k in 0..d {
                    for l in k..d {
                        let v = rng.random_range(-scale..scale);
                        m[[k, l]] = v;
                        m[[l, k]] = v;
                    }
                }
                m
            })
            .collect();
        Self::new(matrices)
    }

    pub fn classes(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    pub fn matrices_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.matrices
    }
}

fn check_simplex(p: &[f64], tol: f64, what: &str) -> Result<()> {
    if p.is_empty() {
        return input(format!("{what} is empty"));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return input(format!("{what} has negative or non-finite entries"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return input(format!("{what} sums to {sum}, not 1"));
    }
    Ok(())
}

/// Teacher class distribution, floored so every log is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDistribution {
    raw: Vec<f64>,
    q: Vec<f64>,
}

impl TeacherDistribution {
    /// Validates `q` as a simplex within [`TEACHER_SIMPLEX_TOL`], then floors and renormalises.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        check_simplex(&q, TEACHER_SIMPLEX_TOL, "teacher distribution")?;
        let mut floored: Vec<f64> = q.iter().map(|v| v.max(TEACHER_FLOOR)).collect();
        let sum: f64 = floored.iter().sum();
        for v in &mut floored {
            *v /= sum;
        }
        Ok(Self { raw: q, q: floored })
    }

    /// The distribution as supplied, before flooring.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn probs(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Student class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentDistribution {
    p: Vec<f64>,
}

impl StudentDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_simplex(&p, 1e-9, "student distribution")?;
        Ok(Self { p })
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }
}

/// Unit-norm text embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingBank {
    vectors: Vec<Array1<f64>>,
}

impl TextEmbeddingBank {
    pub fn new(vectors: Vec<Array1<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return input("text embedding bank is empty");
        }
        let dim = vectors[0].len();
        if vectors.iter().any(|v| v.len() != dim) {
            return shape("text embeddings differ in dimension");
        }
        for (i, v) in vectors.iter().enumerate() {
            let norm = v.dot(v).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return input(format!("text embedding {i} has norm {norm}, expected 1"));
            }
        }
        Ok(Self { vectors })
    }

    pub fn classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vectors(&self) -> &[Array1<f64>] {
        &self.vectors
    }
}

/// Inner products `<A~, W~_i>` for every class.
pub fn glac_logits(video_repr: &VideoAlphaDRepresentation, bank: &ClassPrototypeBank) -> Result<Vec<f64>> {
    let a = video_repr.as_array();
    if a.dim() != bank.matrices[0].dim() {
        return shape(format!(
            "video representation is {:?} but prototypes are {:?}",
            a.dim(),
            bank.matrices[0].dim()
        ));
    }
    Ok(bank
        .matrices
        .iter()
        .map(|w| crate::dcorr::frobenius_inner(a, w))
        .collect())
}

pub fn glac_student(
    video_repr: &VideoAlphaDRepresentation,
    bank: &ClassPrototypeBank,
    temperature: f64,
) -> Result<StudentDistribution> {
    Ok(StudentDistribution {
        p: crate::softmax(&glac_logits(video_repr, bank)?, temperature),
    })
}

/// `KL(p || q) = sum p_i log(p_i / q_i)`, with `0 log 0 = 0`.
pub fn kl_guidance_loss(p: &StudentDistribution, q: &TeacherDistribution) -> Result<f64> {
    if p.p.len() != q.q.len() {
        return shape(format!("student has {} classes, teacher {}", p.p.len(), q.q.len()));
    }
    Ok(p
        .p
        .iter()
        .zip(&q.q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum())
}

/// `-log p_label - log q_label`.
pub fn glac_ce_loss(p: &StudentDistribution, q: &TeacherDistribution, label: usize) -> Result<f64> {
    if p.p.len() != q.q.len() {
        return shape(format!("student has {} classes, teacher {}", p.p.len(), q.q.len()));
    }
    if label >= p.p.len() {
        return input(format!("label {label} out of range for {} classes", p.p.len()));
    }
    Ok(-p.p[label].ln() - q.q[label].ln())
}

pub fn glac_total(kl: f64, ce: f64) -> f64 {
    kl + ce
}

/// Cosine similarity of `summary` to every text embedding.
pub fn text_similarities(summary: &ClassTokenSummary, texts: &TextEmbeddingBank) -> Result<Vec<f64>> {
    if summary.dim() != texts.dim() {
        return shape(format!(
            "summary has dimension {} but text embeddings have {}",
            summary.dim(),
            texts.dim()
        ));
    }
    let norm = summary.0.dot(&summary.0).sqrt();
    if norm == 0.0 {
        return input("class-token summary has zero norm");
    }
    // text vectors are unit norm
    Ok(texts.vectors.iter().map(|w| summary.0.dot(w) / norm).collect())
}

/// Cross-entropy of `softmax(temperature * cos(summary, w_i))` against `label`.
pub fn lsn_alignment_loss(
    summary: &ClassTokenSummary,
    texts: &TextEmbeddingBank,
    label: usize,
    temperature: f64,
) -> Result<f64> {
    let sims = text_similarities(summary, texts)?;
    if label >= sims.len() {
        return input(format!("label {label} out of range for {} classes", sims.len()));
    }
    let scores = crate::matching::EpisodeScores::from_logits(sims, temperature);
    Ok(-scores.log_probs()[label])
}

/// Gradient of `KL(p || q)` with respect to the pre-temperature logits,
/// `temperature * p_i * (log(p_i / q_i) - KL)`.
pub fn kl_logit_grad(p: &StudentDistribution, q: &TeacherDistribution, temperature: f64) -> Result<Vec<f64>> {
    let kl = kl_guidance_loss(p, q)?;
    Ok(p.p
        .iter()
        .zip(&q.q)
        .map(|(&pi, &qi)| if pi > 0.0 { temperature * pi * (pi.ln() - qi.ln() - kl) } else { 0.0 })
        .collect())
}

/// Plain gradient descent of the mean KL guidance loss over `reprs` on the
/// prototype bank alone. Returns the mean KL before each step and after the last.
pub fn fit_bank_to_teacher(
    reprs: &[VideoAlphaDRepresentation],
    teachers: &[TeacherDistribution],
    bank: &mut ClassPrototypeBank,
    temperature: f64,
    step: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    if reprs.len() != teachers.len() || reprs.is_empty() {
        return shape(format!("{} representations for {} teacher rows", reprs.len(), teachers.len()));
    }
    if !(step.is_finite() && step > 0.0) {
        return input(format!("step size must be positive, got {step}"));
    }
    let n = reprs.len() as f64;
    let mut trace = Vec::with_capacity(steps + 1);
    for it in 0..=steps {
        let mut total = 0.0;
        let mut grads = vec![Array2::<f64>::zeros(bank.matrices[0].dim()); bank.classes()];
        for (r, q) in reprs.iter().zip(teachers) {
            let p = glac_student(r, bank, temperature)?;
            total += kl_guidance_loss(&p, q)?;
            if it < steps {
                for (g, dz) in grads.iter_mut().zip(kl_logit_grad(&p, q, temperature)?) {
                    g.scaled_add(dz / n, r.as_array());
                }
            }
        }
        trace.push(total / n);
        if it < steps {
            for (w, g) in bank.matrices.iter_mut().zip(&grads) {
                w.scaled_add(-step, g);
            }
        }
    }
    Ok(trace)
}

pub fn total_loss(l_lsn: f64, l_tsdcm: f64, l_glac: f64, lambda1: f64, lambda2: f64) -> f64 {
    l_lsn + lambda1 * l_tsdcm + lambda2 * l_glac
}
