//! Episodic evaluation. Episode `i` draws from its own RNG stream derived
//! from the seed, so results do not depend on how episodes are scheduled
//! across threads.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode_from, Episode, FeatureBundle};
use crate::dcorr::{self, AlphaParam};
use crate::error::{input, Error, Result};
use crate::framemetric::{frame_alpha_d_gated, interframe_corr, FrameAlphaDStack, FrameOptions, VideoTokenFeatures};
use crate::learn::ParamStore;
use crate::matching::baselines::{baseline_score, hybrid_with_corr, BaselineId};
use crate::matching::{argmax, class_token_average, ShotAggregation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Learned task-specific matching over inter-frame correlations.
    Tsdcm,
    /// Inter-frame correlations under uniform matching.
    Ifdc,
    Cosine,
    Gap,
    Bimhm,
    HybridCosine,
    HybridGap,
    HybridBimhm,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Tsdcm,
        Metric::Ifdc,
        Metric::Cosine,
        Metric::Gap,
        Metric::Bimhm,
        Metric::HybridCosine,
        Metric::HybridGap,
        Metric::HybridBimhm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Tsdcm => "tsdcm",
            Metric::Ifdc => "ifdc",
            Metric::Cosine => "cosine",
            Metric::Gap => "gap",
            Metric::Bimhm => "bimhm",
            Metric::HybridCosine => "hybrid-cosine",
            Metric::HybridGap => "hybrid-gap",
            Metric::HybridBimhm => "hybrid-bimhm",
        }
    }

    fn baseline(self) -> Option<BaselineId> {
        match self {
            Metric::Cosine | Metric::HybridCosine => Some(BaselineId::Cosine),
            Metric::Gap | Metric::HybridGap => Some(BaselineId::Gap),
            Metric::Bimhm | Metric::HybridBimhm => Some(BaselineId::Bimhm),
            Metric::Tsdcm | Metric::Ifdc => None,
        }
    }

    fn uses_corr(self) -> bool {
        !matches!(self, Metric::Cosine | Metric::Gap | Metric::Bimhm)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
    pub seed: u64,
    pub alpha: AlphaParam,
    pub include_class_token: bool,
    pub aggregation: ShotAggregation,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            queries: 1,
            episodes: 1000,
            seed: 0,
            alpha: AlphaParam::default(),
            include_class_token: true,
            aggregation: ShotAggregation::MeanScore,
        }
    }
}

impl EvalSettings {
    fn frame_options(&self) -> FrameOptions {
        FrameOptions {
            alpha: self.alpha,
            include_class_token: self.include_class_token,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: usize,
    pub correct: usize,
    pub total: usize,
}

impl EpisodeOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: Metric,
    pub outcomes: Vec<EpisodeOutcome>,
    pub accuracy: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
}

/// Mean and `1.96 * stderr` of per-episode values.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Deterministic RNG for episode `index` of the stream seeded with `seed`.
pub fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// The episodes an evaluation with `settings` draws from `classes`.
pub fn episode_stream(bundle: &FeatureBundle, classes: &[usize], settings: &EvalSettings) -> Result<Vec<Episode>> {
    (0..settings.episodes)
        .map(|i| {
            sample_episode_from(
                bundle,
                classes,
                settings.way,
                settings.shot,
                settings.queries,
                &mut episode_rng(settings.seed, i),
            )
        })
        .collect()
}

/// Per-video quantities that do not depend on the episode.
struct Precomputed {
    stacks: Vec<Option<FrameAlphaDStack>>,
    summaries: Vec<Option<Array1<f64>>>,
}

struct Scorer<'a> {
    bundle: &'a FeatureBundle,
    metric: Metric,
    params: Option<&'a ParamStore>,
    gate: Vec<f64>,
    opts: FrameOptions,
    aggregation: ShotAggregation,
    pre: Precomputed,
}

impl<'a> Scorer<'a> {
    fn new(
        bundle: &'a FeatureBundle,
        classes: &[usize],
        metric: Metric,
        params: Option<&'a ParamStore>,
        settings: &EvalSettings,
    ) -> Result<Self> {
        if metric == Metric::Tsdcm && params.is_none() {
            return input("the tsdcm metric needs trained parameters (a checkpoint)");
        }
        if let Some(p) = params {
            let (b, d) = (bundle.dims(), p.dims());
            if (b.frames, b.tokens, b.channels) != (d.frames, d.tokens, d.channels) {
                return Err(Error::Shape("checkpoint dims do not match the bundle".into()));
            }
        }
        // baselines and their hybrids read raw features; the learned gate is
        // only used by the two correlation-matching metrics
        let gate = match (metric, params) {
            (Metric::Tsdcm | Metric::Ifdc, Some(p)) => p.token_weights(),
            _ => vec![1.0; bundle.dims().tokens],
        };
        let opts = settings.frame_options();
        let mut pre = Precomputed {
            stacks: vec![None; bundle.len()],
            summaries: vec![None; bundle.len()],
        };
        let members: Vec<usize> = classes.iter().flat_map(|&c| bundle.videos_of(c).iter().copied()).collect();
        let stacks: Vec<(usize, Option<FrameAlphaDStack>)> = members
            .par_iter()
            .map(|&v| -> Result<_> {
                let stack = if metric.uses_corr() {
                    Some(frame_alpha_d_gated(bundle.video(v), &gate, &opts)?)
                } else {
                    None
                };
                Ok((v, stack))
            })
            .collect::<Result<_>>()?;
        for (v, s) in stacks {
            pre.stacks[v] = s;
        }
        if metric == Metric::Tsdcm {
            let p = params.expect("checked above");
            for &v in &members {
                let raw = class_token_average(bundle.video(v), None)?.0;
                pre.summaries[v] = Some(p.project(&raw));
            }
        }
        Ok(Self {
            bundle,
            metric,
            params,
            gate,
            opts,
            aggregation: settings.aggregation,
            pre,
        })
    }

    fn stack(&self, v: usize) -> &FrameAlphaDStack {
        self.pre.stacks[v].as_ref().expect("stack precomputed")
    }

    /// Score of one support representative against the query.
    fn pair_score(
        &self,
        support: &VideoTokenFeatures,
        support_stack: Option<&FrameAlphaDStack>,
        query: usize,
        m_task: Option<&Array2<f64>>,
    ) -> Result<f64> {
        let q_features = self.bundle.video(query);
        match self.metric {
            Metric::Tsdcm => {
                let corr = interframe_corr(support_stack.expect("stack"), self.stack(query))?;
                Ok(dcorr::frobenius_inner(m_task.expect("task matrix"), corr.as_array()))
            }
            Metric::Ifdc => Ok(interframe_corr(support_stack.expect("stack"), self.stack(query))?.mean()),
            Metric::Cosine | Metric::Gap | Metric::Bimhm => {
                baseline_score(self.metric.baseline().expect("baseline"), support, q_features)
            }
            Metric::HybridCosine | Metric::HybridGap | Metric::HybridBimhm => {
                let corr = interframe_corr(support_stack.expect("stack"), self.stack(query))?;
                hybrid_with_corr(self.metric.baseline().expect("baseline"), support, q_features, &corr)
            }
        }
    }

    fn run(&self, index: usize, episode: &Episode) -> Result<EpisodeOutcome> {
        // class representatives: every shot, or one feature-averaged video
        let mut reps: Vec<Vec<(std::borrow::Cow<'_, VideoTokenFeatures>, Option<std::borrow::Cow<'_, FrameAlphaDStack>>)>> =
            Vec::with_capacity(episode.way());
        for members in &episode.support {
            match self.aggregation {
                ShotAggregation::MeanScore => reps.push(
                    members
                        .iter()
                        .map(|&v| {
                            let stack = self.pre.stacks[v].as_ref().map(std::borrow::Cow::Borrowed);
                            (std::borrow::Cow::Borrowed(self.bundle.video(v)), stack)
                        })
                        .collect(),
                ),
                ShotAggregation::MeanFeatures => {
                    let mut acc = self.bundle.video(members[0]).data().clone();
                    for &v in &members[1..] {
                        acc += self.bundle.video(v).data();
                    }
                    acc /= members.len() as f64;
                    let video = VideoTokenFeatures::new(acc, None)?;
                    let stack = if self.metric.uses_corr() {
                        Some(std::borrow::Cow::Owned(frame_alpha_d_gated(&video, &self.gate, &self.opts)?))
                    } else {
                        None
                    };
                    reps.push(vec![(std::borrow::Cow::Owned(video), stack)]);
                }
            }
        }
        let support_mean = match self.metric {
            Metric::Tsdcm => {
                let mut acc = Array1::<f64>::zeros(self.params.expect("params").dims().proto_dim);
                let mut n = 0.0;
                for v in episode.support_videos() {
                    acc += self.pre.summaries[v].as_ref().expect("summary");
                    n += 1.0;
                }
                Some(acc / n)
            }
            _ => None,
        };
        let mut correct = 0;
        for &(query, label) in &episode.queries {
            let m_task = match &support_mean {
                Some(mean) => {
                    let p = self.params.expect("params");
                    let proto = self.pre.summaries[query].as_ref().expect("summary") + mean;
                    let t = p.dims().frames;
                    Some(
                        (p.generator_weight().dot(&proto) + p.generator_bias())
                            .into_shape_with_order((t, t))
                            .expect("T*T"),
                    )
                }
                None => None,
            };
            let mut scores = Vec::with_capacity(reps.len());
            for shots in &reps {
                let mut total = 0.0;
                for (features, stack) in shots {
                    total += self.pair_score(features, stack.as_deref(), query, m_task.as_ref())?;
                }
                scores.push(total / shots.len() as f64);
            }
            if argmax(&scores) == label {
                correct += 1;
            }
        }
        Ok(EpisodeOutcome {
            index,
            correct,
            total: episode.queries.len(),
        })
    }
}

/// Evaluates `metric` on `settings.episodes` episodes drawn from `classes`.
pub fn evaluate(
    bundle: &FeatureBundle,
    classes: &[usize],
    metric: Metric,
    params: Option<&ParamStore>,
    settings: &EvalSettings,
) -> Result<EvalResult> {
    if settings.episodes == 0 {
        return input("evaluation needs at least one episode");
    }
    let episodes = episode_stream(bundle, classes, settings)?;
    evaluate_episodes(bundle, classes, &episodes, metric, params, settings)
}

/// Evaluates `metric` on a fixed list of episodes over `classes`.
pub fn evaluate_episodes(
    bundle: &FeatureBundle,
    classes: &[usize],
    episodes: &[Episode],
    metric: Metric,
    params: Option<&ParamStore>,
    settings: &EvalSettings,
) -> Result<EvalResult> {
    let scorer = Scorer::new(bundle, classes, metric, params, settings)?;
    let outcomes: Vec<EpisodeOutcome> = episodes
        .par_iter()
        .enumerate()
        .map(|(i, e)| scorer.run(i, e))
        .collect::<Result<_>>()?;
    let accs: Vec<f64> = outcomes.iter().map(EpisodeOutcome::accuracy).collect();
    let (accuracy, ci95) = mean_ci(&accs);
    Ok(EvalResult {
        metric,
        outcomes,
        accuracy,
        ci95,
    })
}
