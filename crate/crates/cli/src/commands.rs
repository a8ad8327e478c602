use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dcmatch::data::{load_bundle, read_observations, sample_episode_from, save_bundle, synth_generate, FeatureBundle, SyntheticConfig};
use dcmatch::dcorr::{dcorr2_obs, AlphaParam};
use dcmatch::eval::{episode_rng, evaluate, EvalSettings, Metric};
use dcmatch::learn::gradcheck::finite_diff_check;
use dcmatch::learn::train::{init_bank_from_data, model_dims};
use dcmatch::learn::{load_checkpoint, save_checkpoint, train, AdamWConfig, LossConfig, ParamStore, TrainConfig};
use dcmatch::report::{MetricSummary, RunReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{CompareArgs, DcorrArgs, EpisodeArgs, EvalArgs, GradcheckArgs, LossArgs, SynthArgs, TrainArgs};
use crate::error::{usage, CliError, CliResult};

/// Largest relative error a healthy gradient check may report.
pub const GRADCHECK_LIMIT: f64 = 1e-4;

fn alpha(value: f64) -> CliResult<AlphaParam> {
    AlphaParam::new(value).map_err(|e| CliError::Usage(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(dcmatch::Error::from)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(dcmatch::Error::from)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

fn eval_classes(bundle: &FeatureBundle, all: bool) -> Vec<usize> {
    if all {
        (0..bundle.classes()).collect()
    } else {
        bundle.eval_classes()
    }
}

fn eval_settings(args: &EpisodeArgs, alpha: AlphaParam) -> CliResult<EvalSettings> {
    if args.episodes == 0 {
        return usage("--episodes must be at least 1");
    }
    Ok(EvalSettings {
        way: args.way,
        shot: args.shot,
        queries: args.queries,
        episodes: args.episodes,
        seed: args.seed,
        alpha,
        include_class_token: !args.exclude_class_token,
        aggregation: args.aggregation.into(),
    })
}

fn checkpoint_for(metric: Metric, path: Option<&Path>) -> CliResult<Option<ParamStore>> {
    match (metric, path) {
        (Metric::Tsdcm, None) => usage("metric tsdcm needs --checkpoint"),
        (_, Some(p)) => Ok(Some(load_checkpoint(p)?)),
        (_, None) => Ok(None),
    }
}

pub fn dcorr(args: &DcorrArgs) -> CliResult<()> {
    let a = alpha(args.alpha)?;
    let x = read_observations(&args.x)?;
    let y = read_observations(&args.y)?;
    if x.m() != y.m() {
        return Err(dcmatch::Error::Shape(format!(
            "{} has {} rows but {} has {}",
            args.x.display(),
            x.m(),
            args.y.display(),
            y.m()
        ))
        .into());
    }
    println!("{}", dcorr2_obs(&x, &y, a)?);
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = match args.scenario.into() {
        dcmatch::data::Scenario::A => SyntheticConfig::scenario_a(args.seed),
        dcmatch::data::Scenario::B => SyntheticConfig::scenario_b(args.seed),
    };
    let set = |dst: &mut f64, v: Option<f64>| *dst = v.unwrap_or(*dst);
    set(&mut cfg.gamma, args.gamma);
    set(&mut cfg.sigma, args.sigma);
    set(&mut cfg.distractor_scale, args.distractor_scale);
    set(&mut cfg.teacher_fidelity, args.teacher_fidelity);
    let set = |dst: &mut usize, v: Option<usize>| *dst = v.unwrap_or(*dst);
    set(&mut cfg.classes, args.classes);
    set(&mut cfg.novel_classes, args.novel_classes);
    set(&mut cfg.videos_per_class, args.videos_per_class);
    set(&mut cfg.frames, args.frames);
    set(&mut cfg.tokens, args.tokens);
    set(&mut cfg.channels, args.channels);
    set(&mut cfg.distractor_rows, args.distractor_rows);
    set(&mut cfg.text_dim, args.text_dim);
    let bundle = synth_generate(&cfg)?;
    save_bundle(&bundle, &args.out)?;
    print_json(&RunReport {
        command: "synth".into(),
        config: serde_json::to_value(&cfg)?,
        seed: args.seed,
        metrics: Vec::new(),
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs: display(&[args.out.clone()]),
    })
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let start = Instant::now();
    let settings = eval_settings(&args.episode, alpha(args.alpha)?)?;
    let params = checkpoint_for(args.metric, args.checkpoint.as_deref())?;
    let bundle = load_bundle(&args.bundle)?;
    let classes = eval_classes(&bundle, args.episode.all_classes);
    let result = evaluate(&bundle, &classes, args.metric, params.as_ref(), &settings)?;

    let mut outputs = Vec::new();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(dcmatch::Error::from)?;
        let csv_path = dir.join("episodes.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        for o in &result.outcomes {
            w.serialize(o)?;
        }
        w.flush().map_err(dcmatch::Error::from)?;
        outputs.push(csv_path);
        outputs.push(dir.join("report.json"));
    }
    let report = RunReport {
        command: "eval".into(),
        config: serde_json::to_value(args)?,
        seed: settings.seed,
        metrics: vec![MetricSummary::from_result(&result, settings.way, settings.shot)],
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs: display(&outputs),
    };
    if let Some(dir) = &args.out {
        write_json(&dir.join("report.json"), &report)?;
    }
    print_json(&report)
}

fn loss_config(args: &LossArgs) -> CliResult<LossConfig> {
    Ok(LossConfig {
        alpha: alpha(args.alpha)?,
        include_class_token: !args.exclude_class_token,
        match_temperature: args.match_temperature,
        glac_temperature: args.glac_temperature,
        lsn_temperature: args.lsn_temperature,
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        use_lsn: !args.no_lsn,
        glac_ce: !args.no_glac_ce,
        aggregation: args.aggregation.into(),
        frozen: args.freeze.clone(),
    })
}

pub fn train_config(args: &TrainArgs) -> CliResult<TrainConfig> {
    Ok(TrainConfig {
        way: args.way,
        shot: args.shot,
        queries: args.queries,
        episodes: args.episodes,
        accumulate: args.accumulate,
        optimizer: AdamWConfig {
            lr: args.lr,
            weight_decay: args.weight_decay,
            ..AdamWConfig::default()
        },
        loss: loss_config(&args.loss)?,
        proto_dim: args.proto_dim,
        init_bank_from_data: !args.random_bank,
        eval_interval: args.eval_interval,
        eval_episodes: args.eval_episodes,
        seed: args.seed,
    })
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn train_cmd(args: &TrainArgs) -> CliResult<()> {
    let start = Instant::now();
    let config = train_config(args)?;
    let bundle = load_bundle(&args.bundle)?;
    let outcome = train(&config, &bundle)?;

    save_checkpoint(&outcome.params, &args.out)?;
    let curve = sibling(&args.out, ".curve.csv");
    let mut w = csv::Writer::from_path(&curve)?;
    w.write_record(["episode", "lr", "loss", "lsn", "tsdcm", "glac", "eval_accuracy", "eval_ci95"])?;
    for h in &outcome.history {
        w.write_record([
            h.episode.to_string(),
            h.lr.to_string(),
            opt_field(h.loss),
            opt_field(h.lsn),
            opt_field(h.tsdcm),
            opt_field(h.glac),
            h.eval_accuracy.to_string(),
            h.eval_ci95.to_string(),
        ])?;
    }
    w.flush().map_err(dcmatch::Error::from)?;

    let last = outcome.history.last().expect("history starts with the initial evaluation");
    let report_path = sibling(&args.out, ".report.json");
    let report = RunReport {
        command: "train".into(),
        config: serde_json::to_value(&config)?,
        seed: config.seed,
        metrics: vec![MetricSummary {
            metric: Metric::Tsdcm.name().into(),
            way: config.way,
            shot: config.shot,
            episodes: config.eval_episodes,
            accuracy: last.eval_accuracy,
            ci95: last.eval_ci95,
            ci_low: last.eval_accuracy - last.eval_ci95,
            ci_high: last.eval_accuracy + last.eval_ci95,
        }],
        duration_seconds: start.elapsed().as_secs_f64(),
        outputs: display(&[
            args.out.clone(),
            dcmatch::learn::checkpoint::sidecar_path(&args.out),
            curve,
            report_path.clone(),
        ]),
    };
    write_json(&report_path, &report)?;
    print_json(&report)
}

/// Keeps the first occurrence of each alpha, warning about the rest.
pub fn dedup_alphas(alphas: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if out.contains(&a) {
            eprintln!("warning: duplicate alpha {a} ignored");
        } else {
            out.push(a);
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct CompareRow {
    metric: &'static str,
    alpha: f64,
    way: usize,
    shot: usize,
    accuracy: f64,
    ci95: f64,
}

pub fn compare(args: &CompareArgs) -> CliResult<()> {
    if args.alphas.is_empty() || args.metrics.is_empty() {
        return usage("--alphas and --metrics must not be empty");
    }
    let alphas = dedup_alphas(&args.alphas);
    for &a in &alphas {
        alpha(a)?;
    }
    let mut params = None;
    for &m in &args.metrics {
        if let Some(p) = checkpoint_for(m, args.checkpoint.as_deref())? {
            params = Some(p);
            break;
        }
    }
    let bundle = load_bundle(&args.bundle)?;
    let classes = eval_classes(&bundle, args.episode.all_classes);

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p).map_err(dcmatch::Error::from)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for &metric in &args.metrics {
        for &a in &alphas {
            let settings = eval_settings(&args.episode, alpha(a)?)?;
            let r = evaluate(&bundle, &classes, metric, params.as_ref(), &settings)?;
            w.serialize(CompareRow {
                metric: metric.name(),
                alpha: a,
                way: settings.way,
                shot: settings.shot,
                accuracy: r.accuracy,
                ci95: r.ci95,
            })?;
        }
    }
    w.flush().map_err(dcmatch::Error::from)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct WorstCoordinate {
    tensor: String,
    episode: usize,
    coordinate: usize,
    analytic: f64,
    numeric: f64,
    rel_error: f64,
}

#[derive(Debug, Serialize)]
struct GradcheckSummary {
    episodes: usize,
    epsilon: f64,
    max_rel_error: f64,
    passed: bool,
    tensors: Vec<WorstCoordinate>,
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    if !(args.epsilon.is_finite() && args.epsilon > 0.0) {
        return usage(format!("--epsilon must be positive, got {}", args.epsilon));
    }
    if args.episodes == 0 {
        return usage("--episodes must be at least 1");
    }
    let cfg = loss_config(&args.loss)?;
    let bundle = load_bundle(&args.bundle)?;
    let base = bundle.base_classes();
    let params = match &args.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let tc = TrainConfig {
                loss: cfg.clone(),
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream(1);
            let mut p = ParamStore::init(model_dims(&bundle, &tc), &mut rng)?;
            init_bank_from_data(&mut p, &bundle, &base, &cfg)?;
            p
        }
    };

    let mut worst: Vec<WorstCoordinate> = Vec::new();
    for i in 0..args.episodes {
        let mut rng = episode_rng(args.seed, i);
        let episode = sample_episode_from(&bundle, &base, args.way, args.shot, args.queries, &mut rng)?;
        let report = finite_diff_check(&bundle, &episode, &params, &cfg, args.epsilon, args.samples, &mut rng)?;
        for t in report.tensors {
            let candidate = WorstCoordinate {
                tensor: t.tensor,
                episode: i,
                coordinate: t.coordinate,
                analytic: t.analytic,
                numeric: t.numeric,
                rel_error: t.rel_error,
            };
            match worst.iter_mut().find(|w| w.tensor == candidate.tensor) {
                Some(w) if w.rel_error < candidate.rel_error => *w = candidate,
                Some(_) => {}
                None => worst.push(candidate),
            }
        }
    }
    let max = worst.iter().map(|w| w.rel_error).fold(0.0, f64::max);
    for w in &worst {
        eprintln!(
            "{:<18} episode {:>3} coord {:>6}  analytic {:+.6e}  numeric {:+.6e}  rel {:.3e}",
            w.tensor, w.episode, w.coordinate, w.analytic, w.numeric, w.rel_error
        );
    }
    let passed = max < GRADCHECK_LIMIT;
    print_json(&GradcheckSummary {
        episodes: args.episodes,
        epsilon: args.epsilon,
        max_rel_error: max,
        passed,
        tensors: worst,
    })?;
    if passed {
        Ok(())
    } else {
        Err(CliError::GradCheck {
            max,
            limit: GRADCHECK_LIMIT,
        })
    }
}
