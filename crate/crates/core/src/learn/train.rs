use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{forward_backward, LossConfig};
use super::optim::{optimizer_step, AdamWConfig, OptimizerState};
use super::params::{ModelDims, ParamId, ParamStore};
use crate::data::{sample_episode_from, FeatureBundle};
use crate::error::{input, Error, Result};
use crate::eval::{episode_stream, evaluate_episodes, EvalSettings, Metric};
use crate::framemetric::{frame_alpha_d_gated, video_alpha_d_avg};

/// Added to the training seed to seed the held-out evaluation stream.
pub const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub way: usize,
    pub shot: usize,
    /// Queries per class in each training episode.
    pub queries: usize,
    pub episodes: usize,
    /// Episodes whose gradients are averaged per optimizer step.
    pub accumulate: usize,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    /// Summary dimension when the bundle has no text embeddings.
    pub proto_dim: usize,
    /// Start each training-class prototype at its scaled mean alpha-D matrix.
    pub init_bank_from_data: bool,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            way: 5,
            shot: 1,
            queries: 1,
            episodes: 2000,
            accumulate: 1,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
            proto_dim: 16,
            init_bank_from_data: true,
            eval_interval: 500,
            eval_episodes: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.shot == 0 || self.queries == 0 || self.accumulate == 0 {
            return input("training needs way >= 2, shot >= 1, queries >= 1 and accumulate >= 1");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return input("eval interval and eval episodes must be positive");
        }
        let temps = [
            self.loss.match_temperature,
            self.loss.glac_temperature,
            self.loss.lsn_temperature,
        ];
        if temps.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return input("temperatures must be positive");
        }
        if [self.loss.lambda1, self.loss.lambda2].iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return input("loss weights must be finite and non-negative");
        }
        self.optimizer.validate()
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            way: self.way,
            shot: self.shot,
            queries: 1,
            episodes: self.eval_episodes,
            seed: self.seed.wrapping_add(EVAL_SEED_OFFSET),
            alpha: self.loss.alpha,
            include_class_token: self.loss.include_class_token,
            aggregation: self.loss.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    /// Training episodes completed.
    pub episode: usize,
    pub lr: f64,
    /// Mean losses over the episodes since the previous point; absent at start.
    pub loss: Option<f64>,
    pub lsn: Option<f64>,
    pub tsdcm: Option<f64>,
    pub glac: Option<f64>,
    pub eval_accuracy: f64,
    pub eval_ci95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: Vec<HistoryPoint>,
}

/// Model dims implied by `bundle` and `config`.
pub fn model_dims(bundle: &FeatureBundle, config: &TrainConfig) -> ModelDims {
    let dims = bundle.dims();
    let proto_dim = match (config.loss.use_lsn, bundle.text()) {
        (true, Some(text)) => text.dim(),
        _ => config.proto_dim,
    };
    ModelDims {
        frames: dims.frames,
        tokens: dims.tokens,
        channels: dims.channels,
        proto_dim,
        classes: bundle.classes(),
    }
}

/// Sets each training-class prototype to `mu / |mu|_F^2`, with `mu` the mean
/// frame-averaged alpha-D matrix of the class, so its own logit starts near 1.
pub fn init_bank_from_data(params: &mut ParamStore, bundle: &FeatureBundle, classes: &[usize], cfg: &LossConfig) -> Result<()> {
    let opts = cfg.frame_options();
    let gate = params.token_weights();
    let d = params.dims().channels;
    let means: Vec<(usize, Array2<f64>)> = classes
        .par_iter()
        .filter(|&&c| !bundle.videos_of(c).is_empty())
        .map(|&c| -> Result<_> {
            let mut acc = Array2::<f64>::zeros((d, d));
            for &v in bundle.videos_of(c) {
                let stack = frame_alpha_d_gated(bundle.video(v), &gate, &opts)?;
                acc += video_alpha_d_avg(&stack)?.as_array();
            }
            acc /= bundle.videos_of(c).len() as f64;
            Ok((c, acc))
        })
        .collect::<Result<_>>()?;
    let bank = params.value_mut(ParamId::Bank);
    for (c, mu) in means {
        let sq: f64 = mu.iter().map(|x| x * x).sum();
        if sq == 0.0 {
            continue;
        }
        for (dst, &x) in bank[c * d * d..(c + 1) * d * d].iter_mut().zip(mu.iter()) {
            *dst = x / sq;
        }
    }
    Ok(())
}

fn mean_or_none(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Episodic training on the bundle's base classes, evaluating on its
/// evaluation classes every `eval_interval` episodes.
pub fn train(config: &TrainConfig, bundle: &FeatureBundle) -> Result<TrainOutcome> {
    config.validate()?;
    let base = bundle.base_classes();
    let eval_classes = bundle.eval_classes();
    if base.len() < config.way {
        return input(format!("{}-way training but only {} training classes", config.way, base.len()));
    }
    let dims = model_dims(bundle, config);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    let mut params = ParamStore::init(dims, &mut init_rng)?;
    if config.init_bank_from_data {
        init_bank_from_data(&mut params, bundle, &base, &config.loss)?;
    }
    let steps = config.episodes.div_ceil(config.accumulate) as u64;
    let mut opt = OptimizerState::new(
        &params,
        AdamWConfig {
            total_steps: steps,
            ..config.optimizer.clone()
        },
    )?;
    let eval_settings = config.eval_settings();
    let eval_stream = episode_stream(bundle, &eval_classes, &eval_settings)?;
    let evaluate = |p: &ParamStore| evaluate_episodes(bundle, &eval_classes, &eval_stream, Metric::Tsdcm, Some(p), &eval_settings);

    let first = evaluate(&params)?;
    let mut history = vec![HistoryPoint {
        episode: 0,
        lr: opt.current_lr(),
        loss: None,
        lsn: None,
        tsdcm: None,
        glac: None,
        eval_accuracy: first.accuracy,
        eval_ci95: first.ci95,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut sum, mut n) = ([0.0f64; 4], 0usize);
    params.zero_grads();
    for e in 0..config.episodes {
        let episode = sample_episode_from(bundle, &base, config.way, config.shot, config.queries, &mut rng)?;
        let loss = forward_backward(bundle, &episode, &mut params, &config.loss)
            .map_err(|err| Error::Training(format!("episode {e}: {err}")))?;
        for (s, v) in sum.iter_mut().zip([loss.total, loss.lsn, loss.tsdcm, loss.glac]) {
            *s += v;
        }
        n += 1;
        let done = e + 1;
        if done % config.accumulate == 0 || done == config.episodes {
            let group = (done - 1) % config.accumulate + 1;
            params.scale_grads(1.0 / group as f64);
            optimizer_step(&mut params, &mut opt, &config.loss.frozen);
            params
                .check_finite()
                .map_err(|err| Error::Training(format!("after episode {e}: {err}")))?;
            params.zero_grads();
        }
        if done % config.eval_interval == 0 || done == config.episodes {
            let r = evaluate(&params)?;
            history.push(HistoryPoint {
                episode: done,
                lr: opt.current_lr(),
                loss: mean_or_none(sum[0], n),
                lsn: mean_or_none(sum[1], n),
                tsdcm: mean_or_none(sum[2], n),
                glac: mean_or_none(sum[3], n),
                eval_accuracy: r.accuracy,
                eval_ci95: r.ci95,
            });
            sum = [0.0; 4];
            n = 0;
        }
    }
    Ok(TrainOutcome { params, history })
}
