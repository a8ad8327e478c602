//! Frame-level alpha-D matrices and inter-frame correlation.
//!
//! A frame is a `(P+1) x d` token matrix. Its `d` columns (channels) are
//! treated as observations of dimension `P+1`, so every frame yields a
//! `d x d` alpha-D matrix regardless of how many tokens it has.

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::dcorr::{self, AlphaDMatrix, AlphaParam};
use crate::error::{input, shape, Result};

/// Token embeddings of one video: `[frame][token][channel]`, token 0 is the class token.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTokenFeatures {
    data: Array3<f64>,
    label: Option<usize>,
}

impl VideoTokenFeatures {
    pub fn new(data: Array3<f64>, label: Option<usize>) -> Result<Self> {
        let (t, tokens, d) = data.dim();
        if t < 1 {
            return input("video needs at least one frame");
        }
        if tokens < 2 {
            return input(format!("video needs a class token plus at least one patch token, got {tokens} tokens"));
        }
        if d < 2 {
            return input(format!("video needs at least 2 channels, got {d}"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return input("video features contain non-finite entries");
        }
        Ok(Self { data, label })
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn tokens(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![t, .., ..])
    }

    /// Class token of frame `t`.
    pub fn class_token(&self, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.slice(s![t, 0, ..])
    }

    /// Copy with every entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: &self.data * c,
            label: self.label,
        }
    }
}

/// Options for turning a video into frame alpha-D matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOptions {
    pub alpha: AlphaParam,
    /// Whether token 0 takes part in the channel observations.
    pub include_class_token: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            alpha: AlphaParam::default(),
            include_class_token: true,
        }
    }
}

impl FrameOptions {
    pub fn with_alpha(alpha: AlphaParam) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub(crate) fn first_token(&self) -> usize {
        usize::from(!self.include_class_token)
    }
}

/// One alpha-D matrix per frame, with cached squared Frobenius norms.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlphaDStack {
    matrices: Vec<AlphaDMatrix>,
    sq_norms: Vec<f64>,
}

impl FrameAlphaDStack {
    pub fn from_matrices(matrices: Vec<AlphaDMatrix>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return input("frame stack must contain at least one matrix");
        };
        let d = first.dim();
        if matrices.iter().any(|m| m.dim() != d) {
            return shape("frame matrices differ in size");
        }
        let sq_norms = matrices.iter().map(AlphaDMatrix::self_inner).collect();
        Ok(Self { matrices, sq_norms })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.matrices.first().map_or(0, AlphaDMatrix::dim)
    }

    pub fn matrices(&self) -> &[AlphaDMatrix] {
        &self.matrices
    }

    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }
}

/// `T_s x T_q` matrix of frame-pair distance correlations, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterFrameCorrMatrix {
    data: Array2<f64>,
}

impl InterFrameCorrMatrix {
    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return input("inter-frame correlations must lie in [0, 1]");
        }
        Ok(Self { data })
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// Frame-averaged alpha-D matrix of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoAlphaDRepresentation {
    data: Array2<f64>,
}

impl VideoAlphaDRepresentation {
    pub fn from_array(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }
}

/// Alpha-D matrix of a single `(tokens x d)` frame, channels as observations.
pub(crate) fn frame_matrix(frame: ArrayView2<'_, f64>, opts: &FrameOptions) -> AlphaDMatrix {
    let rows = frame.slice(s![opts.first_token().., ..]);
    dcorr::alpha_d_of_view(rows.t(), opts.alpha)
}

/// Like [`frame_matrix`] with token row `r` scaled by `gate[r]` first.
pub(crate) fn gated_frame_matrix(frame: ArrayView2<'_, f64>, gate: &[f64], opts: &FrameOptions) -> AlphaDMatrix {
    let first = opts.first_token();
    let mut rows = frame.slice(s![first.., ..]).to_owned();
    for (mut row, &g) in rows.rows_mut().into_iter().zip(&gate[first..]) {
        row *= g;
    }
    dcorr::alpha_d_of_view(rows.t(), opts.alpha)
}

/// Frame stack of `video` with per-token weights `gate` (one per token row).
pub fn frame_alpha_d_gated(video: &VideoTokenFeatures, gate: &[f64], opts: &FrameOptions) -> Result<FrameAlphaDStack> {
    if gate.len() != video.tokens() {
        return shape(format!("gate has {} entries for {} tokens", gate.len(), video.tokens()));
    }
    let matrices: Vec<AlphaDMatrix> = (0..video.frames())
        .map(|t| gated_frame_matrix(video.frame(t), gate, opts))
        .collect();
    let sq_norms = matrices.iter().map(AlphaDMatrix::self_inner).collect();
    Ok(FrameAlphaDStack { matrices, sq_norms })
}

pub fn frame_alpha_d(video: &VideoTokenFeatures, alpha: AlphaParam) -> FrameAlphaDStack {
    frame_alpha_d_with(video, &FrameOptions::with_alpha(alpha))
}

pub fn frame_alpha_d_with(video: &VideoTokenFeatures, opts: &FrameOptions) -> FrameAlphaDStack {
    let matrices: Vec<AlphaDMatrix> = (0..video.frames())
        .map(|t| frame_matrix(video.frame(t), opts))
        .collect();
    let sq_norms = matrices.iter().map(AlphaDMatrix::self_inner).collect();
    FrameAlphaDStack { matrices, sq_norms }
}

fn pair_corr(a: &AlphaDMatrix, saa: f64, b: &AlphaDMatrix, sbb: f64) -> Result<f64> {
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    let r = dcorr::frobenius_inner(a.as_array(), b.as_array()) / (saa.sqrt() * sbb.sqrt());
    dcorr::clamp_unit(r)
}

pub fn interframe_corr(support: &FrameAlphaDStack, query: &FrameAlphaDStack) -> Result<InterFrameCorrMatrix> {
    if support.channels() != query.channels() {
        return shape(format!(
            "support frames are {}x{} but query frames are {}x{}",
            support.channels(),
            support.channels(),
            query.channels(),
            query.channels()
        ));
    }
    let mut data = Array2::<f64>::zeros((support.len(), query.len()));
    for (i, (a, &saa)) in support.matrices.iter().zip(&support.sq_norms).enumerate() {
        for (j, (b, &sbb)) in query.matrices.iter().zip(&query.sq_norms).enumerate() {
            data[[i, j]] = pair_corr(a, saa, b, sbb)?;
        }
    }
    Ok(InterFrameCorrMatrix { data })
}

pub fn video_alpha_d_avg(stack: &FrameAlphaDStack) -> Result<VideoAlphaDRepresentation> {
    let Some(first) = stack.matrices.first() else {
        return input("cannot average an empty frame stack");
    };
    let mut acc = Array2::<f64>::zeros(first.as_array().dim());
    for m in &stack.matrices {
        acc += m.as_array();
    }
    acc /= stack.len() as f64;
    Ok(VideoAlphaDRepresentation { data: acc })
}
