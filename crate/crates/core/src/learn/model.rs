//! Episode loss and its closed-form gradients.
//!
//! The learnable graph is shallow: a token gate feeding the frame alpha-D
//! matrices, an affine class-token projection, the affine matching generator
//! and the prototype bank. Each loss term is differentiated by hand:
//! softmax cross-entropy and KL with respect to their logits, affine maps,
//! cosine similarity, the normalised inner product behind each correlation,
//! double centering (its own adjoint) and the gated pairwise distances.

use std::borrow::Cow;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::data::{Episode, FeatureBundle};
use crate::dcorr::{self, AlphaParam};
use crate::error::{input, shape, Error, Result};
use crate::framemetric::{
    frame_alpha_d_gated, interframe_corr, video_alpha_d_avg, FrameAlphaDStack, FrameOptions,
    InterFrameCorrMatrix, VideoTokenFeatures,
};
use crate::matching::{class_token_average, EpisodeScores, ShotAggregation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: AlphaParam,
    pub include_class_token: bool,
    /// Softmax temperature over episode match scores.
    pub match_temperature: f64,
    /// Softmax temperature over prototype-bank logits.
    pub glac_temperature: f64,
    /// Softmax temperature over summary/text cosine similarities.
    pub lsn_temperature: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Include the text-alignment term when the bundle has text embeddings.
    pub use_lsn: bool,
    /// Include the cross-entropy half of the distillation term.
    pub glac_ce: bool,
    pub aggregation: ShotAggregation,
    /// Tensors that receive no gradient.
    pub frozen: Vec<ParamId>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: AlphaParam::default(),
            include_class_token: true,
            match_temperature: 1.0,
            glac_temperature: 1.0,
            lsn_temperature: 10.0,
            lambda1: 1.0,
            lambda2: 1.0,
            use_lsn: true,
            glac_ce: true,
            aggregation: ShotAggregation::MeanScore,
            frozen: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions {
            alpha: self.alpha,
            include_class_token: self.include_class_token,
        }
    }

    fn trains(&self, id: ParamId) -> bool {
        !self.frozen.contains(&id)
    }
}

/// Per-term episode losses. `total = lsn + lambda1 * tsdcm + lambda2 * glac`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub lsn: f64,
    pub tsdcm: f64,
    pub glac_kl: f64,
    pub glac_ce: f64,
    pub glac: f64,
}

struct Unit<'a> {
    features: Cow<'a, VideoTokenFeatures>,
    stack: FrameAlphaDStack,
}

/// Everything of an episode that depends only on the gate: frame stacks,
/// inter-frame correlations and frame-averaged alpha-D matrices.
pub(crate) struct EpisodeCache<'a> {
    bundle: &'a FeatureBundle,
    opts: FrameOptions,
    /// Bundle indices: supports slot by slot, then queries.
    videos: Vec<usize>,
    n_support: usize,
    raw_summaries: Vec<Array1<f64>>,
    /// One unit per entry of `videos`, then averaged class units if any.
    units: Vec<Unit<'a>>,
    slot_units: Vec<Vec<usize>>,
    query_slots: Vec<usize>,
    /// `corr[query][slot][shot]`.
    corr: Vec<Vec<Vec<InterFrameCorrMatrix>>>,
    reprs: Vec<Array2<f64>>,
}

struct HeadGrads {
    params: Vec<Vec<f64>>,
    corr: Vec<Vec<Vec<Array2<f64>>>>,
    reprs: Vec<Array2<f64>>,
}

fn outer_add(acc: &mut [f64], left: &Array1<f64>, right: &Array1<f64>, scale: f64) {
    let cols = right.len();
    for (i, &l) in left.iter().enumerate() {
        let s = l * scale;
        if s == 0.0 {
            continue;
        }
        for (a, &r) in acc[i * cols..(i + 1) * cols].iter_mut().zip(right) {
            *a += s * r;
        }
    }
}

fn check_dims(bundle: &FeatureBundle, params: &ParamStore) -> Result<()> {
    let (b, p) = (bundle.dims(), params.dims());
    if (b.frames, b.tokens, b.channels) != (p.frames, p.tokens, p.channels) || bundle.classes() != p.classes {
        return shape(format!(
            "bundle is T={} tokens={} d={} with {} classes, parameters expect T={} tokens={} d={} with {} classes",
            b.frames, b.tokens, b.channels, bundle.classes(), p.frames, p.tokens, p.channels, p.classes
        ));
    }
    Ok(())
}

fn mean_features(bundle: &FeatureBundle, members: &[usize]) -> Result<VideoTokenFeatures> {
    let mut acc = bundle.video(members[0]).data().clone();
    for &v in &members[1..] {
        acc += bundle.video(v).data();
    }
    acc /= members.len() as f64;
    VideoTokenFeatures::new(acc, bundle.video(members[0]).label())
}

impl<'a> EpisodeCache<'a> {
    pub(crate) fn build(
        bundle: &'a FeatureBundle,
        episode: &Episode,
        params: &ParamStore,
        cfg: &LossConfig,
    ) -> Result<Self> {
        check_dims(bundle, params)?;
        if episode.way() < 2 || episode.support.iter().any(Vec::is_empty) || episode.queries.is_empty() {
            return input("episode needs two or more non-empty classes and at least one query");
        }
        let opts = cfg.frame_options();
        let gate = &params.token_weights();
        let videos = episode.all_videos();
        let n_support = videos.len() - episode.queries.len();
        let mut units = Vec::with_capacity(videos.len() + episode.way());
        for &v in &videos {
            let features = bundle.video(v);
            units.push(Unit {
                stack: frame_alpha_d_gated(features, gate, &opts)?,
                features: Cow::Borrowed(features),
            });
        }
        let mut slot_units = Vec::with_capacity(episode.way());
        let mut next = 0;
        for members in &episode.support {
            match cfg.aggregation {
                ShotAggregation::MeanScore => {
                    slot_units.push((next..next + members.len()).collect());
                }
                ShotAggregation::MeanFeatures => {
                    let features = mean_features(bundle, members)?;
                    slot_units.push(vec![units.len()]);
                    units.push(Unit {
                        stack: frame_alpha_d_gated(&features, gate, &opts)?,
                        features: Cow::Owned(features),
                    });
                }
            }
            next += members.len();
        }
        let mut corr = Vec::with_capacity(episode.queries.len());
        for q in 0..episode.queries.len() {
            let query = &units[n_support + q].stack;
            let per_slot = slot_units
                .iter()
                .map(|shots: &Vec<usize>| shots.iter().map(|&u| interframe_corr(&units[u].stack, query)).collect())
                .collect::<Result<Vec<Vec<_>>>>()?;
            corr.push(per_slot);
        }
        let reprs = if bundle.teacher().is_some() {
            units[..videos.len()]
                .iter()
                .map(|u| video_alpha_d_avg(&u.stack).map(|r| r.as_array().clone()))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let raw_summaries = videos
            .iter()
            .map(|&v| class_token_average(bundle.video(v), None).map(|s| s.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bundle,
            opts,
            videos,
            n_support,
            raw_summaries,
            units,
            slot_units,
            query_slots: episode.queries.iter().map(|q| q.1).collect(),
            corr,
            reprs,
        })
    }

    fn zero_grads(&self, params: &ParamStore) -> HeadGrads {
        let t = params.dims().frames;
        HeadGrads {
            params: ParamId::ALL.iter().map(|&id| vec![0.0; params.value(id).len()]).collect(),
            corr: self
                .corr
                .iter()
                .map(|slots| slots.iter().map(|shots| vec![Array2::zeros((t, t)); shots.len()]).collect())
                .collect(),
            reprs: self.reprs.iter().map(|r| Array2::zeros(r.dim())).collect(),
        }
    }

    /// Loss of the episode under `params`, ignoring any change to the gate
    /// since the cache was built.
    pub(crate) fn loss(&self, params: &ParamStore, cfg: &LossConfig) -> Result<LossBreakdown> {
        self.head(params, cfg, None)
    }

    fn head(&self, params: &ParamStore, cfg: &LossConfig, mut grads: Option<&mut HeadGrads>) -> Result<LossBreakdown> {
        let n_videos = self.videos.len();
        let summaries: Vec<Array1<f64>> = self.raw_summaries.iter().map(|c| params.project(c)).collect();
        let mut g_summary: Vec<Array1<f64>> = vec![Array1::zeros(params.dims().proto_dim); n_videos];
        let mut out = LossBreakdown::default();

        // matching term over queries
        let gen_w = params.generator_weight();
        let gen_b = params.generator_bias();
        let frames = params.dims().frames;
        let mut support_mean = Array1::<f64>::zeros(params.dims().proto_dim);
        for s in &summaries[..self.n_support] {
            support_mean += s;
        }
        support_mean /= self.n_support as f64;
        let n_queries = self.query_slots.len() as f64;
        for (qi, &label) in self.query_slots.iter().enumerate() {
            let proto = &summaries[self.n_support + qi] + &support_mean;
            let m = (gen_w.dot(&proto) + gen_b)
                .into_shape_with_order((frames, frames))
                .expect("generator output has T*T entries");
            let logits: Vec<f64> = self.corr[qi]
                .iter()
                .map(|shots| {
                    shots.iter().map(|c| dcorr::frobenius_inner(&m, c.as_array())).sum::<f64>()
                        / shots.len() as f64
                })
                .collect();
            let scores = EpisodeScores::from_logits(logits, cfg.match_temperature);
            out.tsdcm += -scores.log_probs()[label] / n_queries;
            let Some(g) = grads.as_deref_mut() else { continue };
            if cfg.lambda1 == 0.0 {
                continue;
            }
            let g_z: Vec<f64> = scores
                .probs
                .iter()
                .enumerate()
                .map(|(n, &p)| cfg.lambda1 * cfg.match_temperature * (p - f64::from(u8::from(n == label))) / n_queries)
                .collect();
            let mut g_m = Array2::<f64>::zeros((frames, frames));
            for (n, shots) in self.corr[qi].iter().enumerate() {
                let k = shots.len() as f64;
                for (c, gc) in shots.iter().zip(g.corr[qi][n].iter_mut()) {
                    g_m.scaled_add(g_z[n] / k, c.as_array());
                    gc.scaled_add(g_z[n] / k, &m);
                }
            }
            let g_flat = Array1::from_iter(g_m.iter().copied());
            outer_add(&mut g.params[ParamId::GeneratorWeight as usize], &g_flat, &proto, 1.0);
            for (a, b) in g.params[ParamId::GeneratorBias as usize].iter_mut().zip(&g_flat) {
                *a += b;
            }
            let g_proto = gen_w.t().dot(&g_flat);
            g_summary[self.n_support + qi] += &g_proto;
            let share = &g_proto / self.n_support as f64;
            for gs in &mut g_summary[..self.n_support] {
                *gs += &share;
            }
        }

        // text alignment over every episode video
        if let (true, Some(texts)) = (cfg.use_lsn, self.bundle.text()) {
            if texts.dim() != params.dims().proto_dim {
                return shape(format!(
                    "text embeddings have dimension {} but summaries have {}",
                    texts.dim(),
                    params.dims().proto_dim
                ));
            }
            for (v, s) in summaries.iter().enumerate() {
                let label = self.bundle.label(self.videos[v]);
                let norm = s.dot(s).sqrt();
                if norm == 0.0 {
                    return input(format!("summary of video {:?} has zero norm", self.bundle.ids()[self.videos[v]]));
                }
                let cos: Vec<f64> = texts.vectors().iter().map(|w| s.dot(w) / norm).collect();
                let scores = EpisodeScores::from_logits(cos.clone(), cfg.lsn_temperature);
                out.lsn += -scores.log_probs()[label] / n_videos as f64;
                if grads.is_none() {
                    continue;
                }
                let gs = &mut g_summary[v];
                for (i, w) in texts.vectors().iter().enumerate() {
                    let g_cos = cfg.lsn_temperature * (scores.probs[i] - f64::from(u8::from(i == label))) / n_videos as f64;
                    gs.scaled_add(g_cos / norm, w);
                    gs.scaled_add(-g_cos * cos[i] / (norm * norm), s);
                }
            }
        }

        // distillation over every episode video
        if let Some(teacher) = self.bundle.teacher() {
            let classes = params.dims().classes;
            for (v, repr) in self.reprs.iter().enumerate() {
                let label = self.bundle.label(self.videos[v]);
                let q = teacher[self.videos[v]].probs();
                let logits: Vec<f64> = (0..classes)
                    .map(|c| dcorr::frobenius_inner(repr, &params.prototype(c)))
                    .collect();
                let scores = EpisodeScores::from_logits(logits, cfg.glac_temperature);
                let log_p = scores.log_probs();
                let f: Vec<f64> = log_p.iter().zip(q).map(|(lp, qi)| lp - qi.ln()).collect();
                let kl: f64 = scores.probs.iter().zip(&f).map(|(p, fi)| p * fi).sum();
                out.glac_kl += kl / n_videos as f64;
                if cfg.glac_ce {
                    out.glac_ce += (-log_p[label] - q[label].ln()) / n_videos as f64;
                }
                let Some(g) = grads.as_deref_mut() else { continue };
                if cfg.lambda2 == 0.0 {
                    continue;
                }
                let scale = cfg.lambda2 * cfg.glac_temperature / n_videos as f64;
                let g_logit: Vec<f64> = (0..classes)
                    .map(|j| {
                        let p = scores.probs[j];
                        let mut gj = p * (f[j] - kl);
                        if cfg.glac_ce {
                            gj += p - f64::from(u8::from(j == label));
                        }
                        scale * gj
                    })
                    .collect();
                let d2 = repr.len();
                let bank_grad = &mut g.params[ParamId::Bank as usize];
                for (c, &gl) in g_logit.iter().enumerate() {
                    for (a, &r) in bank_grad[c * d2..(c + 1) * d2].iter_mut().zip(repr.iter()) {
                        *a += gl * r;
                    }
                    g.reprs[v].scaled_add(gl, &params.prototype(c));
                }
            }
            out.glac = out.glac_kl + out.glac_ce;
        }

        if let Some(g) = grads {
            for (v, gs) in g_summary.iter().enumerate() {
                outer_add(&mut g.params[ParamId::ProjectionWeight as usize], gs, &self.raw_summaries[v], 1.0);
                for (a, b) in g.params[ParamId::ProjectionBias as usize].iter_mut().zip(gs) {
                    *a += b;
                }
            }
        }
        out.total = out.lsn + cfg.lambda1 * out.tsdcm + cfg.lambda2 * out.glac;
        Ok(out)
    }

    /// Gradient of the loss with respect to the gate, given the upstream
    /// gradients on correlations and frame-averaged matrices.
    fn gate_grad(&self, params: &ParamStore, g: &HeadGrads) -> Vec<f64> {
        let d = params.dims().channels;
        let frames = params.dims().frames;
        let mut g_frames: Vec<Vec<Array2<f64>>> = vec![vec![Array2::zeros((d, d)); frames]; self.units.len()];
        for (qi, slots) in self.corr.iter().enumerate() {
            let q_unit = self.n_support + qi;
            for (n, shots) in slots.iter().enumerate() {
                for (k, _) in shots.iter().enumerate() {
                    let s_unit = self.slot_units[n][k];
                    let upstream = &g.corr[qi][n][k];
                    let (s_stack, q_stack) = (&self.units[s_unit].stack, &self.units[q_unit].stack);
                    for i in 0..frames {
                        let saa = s_stack.sq_norms()[i];
                        for j in 0..frames {
                            let gij = upstream[[i, j]];
                            let sbb = q_stack.sq_norms()[j];
                            if gij == 0.0 || saa == 0.0 || sbb == 0.0 {
                                continue;
                            }
                            let a = s_stack.matrices()[i].as_array();
                            let b = q_stack.matrices()[j].as_array();
                            let root = (saa * sbb).sqrt();
                            let r = dcorr::frobenius_inner(a, b) / root;
                            // outside [0, 1] the clamp is flat
                            if !(0.0..=1.0).contains(&r) {
                                continue;
                            }
                            let ga = &mut g_frames[s_unit][i];
                            ga.scaled_add(gij / root, b);
                            ga.scaled_add(-gij * r / saa, a);
                            let gb = &mut g_frames[q_unit][j];
                            gb.scaled_add(gij / root, a);
                            gb.scaled_add(-gij * r / sbb, b);
                        }
                    }
                }
            }
        }
        for (v, gr) in g.reprs.iter().enumerate() {
            for gf in &mut g_frames[v] {
                gf.scaled_add(1.0 / frames as f64, gr);
            }
        }
        let weights = params.token_weights();
        let mut out = vec![0.0; weights.len()];
        for (unit, per_frame) in self.units.iter().zip(&g_frames) {
            for (t, gf) in per_frame.iter().enumerate() {
                if gf.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let g_raw = dcorr::double_center_array(gf);
                gate_backward(unit.features.frame(t), &weights, &self.opts, &g_raw, &mut out);
            }
        }
        normalization_backward(params.gate(), &out)
    }
}

/// Maps a gradient on the token weights `w = g * sqrt(n) / |g|` back to the
/// raw gate: `sqrt(n) / |g| * (dw - u (u . dw))` with `u = g / |g|`.
fn normalization_backward(gate: &[f64], d_weights: &[f64]) -> Vec<f64> {
    let norm = gate.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; gate.len()];
    }
    let along: f64 = gate.iter().zip(d_weights).map(|(g, d)| g * d).sum::<f64>() / norm;
    let scale = (gate.len() as f64).sqrt() / norm;
    gate.iter()
        .zip(d_weights)
        .map(|(g, d)| scale * (d - g / norm * along))
        .collect()
}

/// Accumulates `d loss / d weights` for one frame given the gradient on its
/// raw (uncentered) alpha-powered distance matrix.
fn gate_backward(frame: ArrayView2<'_, f64>, weights: &[f64], opts: &FrameOptions, g_raw: &Array2<f64>, out: &mut [f64]) {
    let first = opts.first_token();
    let alpha = opts.alpha.get();
    let tokens = frame.nrows();
    let d = frame.ncols();
    let mut delta2 = vec![0.0; tokens];
    for k in 0..d {
        for l in (k + 1)..d {
            let w = g_raw[[k, l]] + g_raw[[l, k]];
            if w == 0.0 {
                continue;
            }
            let mut dist2 = 0.0;
            for r in first..tokens {
                let diff = frame[[r, k]] - frame[[r, l]];
                delta2[r] = diff * diff;
                dist2 += weights[r] * weights[r] * delta2[r];
            }
            if dist2 == 0.0 {
                continue;
            }
            let c = w * alpha * dist2.powf(0.5 * alpha - 1.0);
            for r in first..tokens {
                out[r] += c * weights[r] * delta2[r];
            }
        }
    }
}

fn non_finite(bundle: &FeatureBundle, episode: &Episode, loss: &LossBreakdown) -> Error {
    let classes: Vec<&str> = episode.classes.iter().map(|&c| bundle.class_names()[c].as_str()).collect();
    Error::Training(format!(
        "non-finite loss on episode over classes {classes:?}: lsn={} tsdcm={} glac={}",
        loss.lsn, loss.tsdcm, loss.glac
    ))
}

/// Loss of one episode without gradients.
pub fn episode_loss(bundle: &FeatureBundle, episode: &Episode, params: &ParamStore, cfg: &LossConfig) -> Result<LossBreakdown> {
    let cache = EpisodeCache::build(bundle, episode, params, cfg)?;
    let loss = cache.loss(params, cfg)?;
    if !loss.total.is_finite() {
        return Err(non_finite(bundle, episode, &loss));
    }
    Ok(loss)
}

/// Computes the episode loss and adds its gradient into `params`' buffers.
pub fn forward_backward(
    bundle: &FeatureBundle,
    episode: &Episode,
    params: &mut ParamStore,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let cache = EpisodeCache::build(bundle, episode, params, cfg)?;
    let mut g = cache.zero_grads(params);
    let loss = cache.head(params, cfg, Some(&mut g))?;
    if !loss.total.is_finite() {
        return Err(non_finite(bundle, episode, &loss));
    }
    if cfg.trains(ParamId::Gate) {
        g.params[ParamId::Gate as usize] = cache.gate_grad(params, &g);
    }
    for id in ParamId::ALL {
        if cfg.trains(id) {
            params.accumulate(id, &g.params[id as usize]);
        }
    }
    Ok(loss)
}
