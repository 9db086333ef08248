//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use failband::bench::{bench_score, latency_stats};
use failband::conformal::{build_band, CpBand, Variant};
use failband::dataset::{Dataset, DatasetHeader, StepStream};
use failband::detector::{run_step_stream, run_stream, DecisionRule, DetectionResult, StepLog};
use failband::eval::{
    alpha_sweep, alpha_sweep_cumulative, default_alpha_grid, emit_report, evaluate as eval_metrics, ReportFormat,
    ReportRow,
};
use failband::flow::{train_flow, FlowConfig};
use failband::nn::{Activation, TrainConfig};
use failband::persist::Manifest;
use failband::scores::stac::ThresholdMode;
use failband::scores::{
    cfm_train, pca_kmeans_fit, rnd_train, score_rollouts, stac_calibrate_threshold, CfmConfig, PcaKmeansConfig,
    RndConfig, ScoreModel, StacConfig, StacScorer, StepScorer,
};
use failband::synth::{generate_dataset, FailureSpec, ScriptedPolicy, SynthConfig};
use failband::{Error, Label, Result, Rollout, ScoreMethodId, ScoreSeries, Step};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::{
    BenchArgs, CalibrateArgs, DetectArgs, EvaluateArgs, ScoreArgs, ScorerArgs, SimulateArgs, SweepArgs, TrainArgs,
};

const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_SPLIT_RATIO: f64 = 0.3;
const DEFAULT_SETTING: &str = "synthetic";

fn config_error(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path)?.ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))
}

fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn parse_method(s: &str) -> Result<ScoreMethodId> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = ScoreMethodId::ALL.iter().map(|m| m.name()).collect();
        config_error(
            "method",
            format!("unknown method `{s}`; expected one of {}", names.join(", ")),
        )
    })
}

fn parse_variant(cfg: &Config, flag: Option<String>) -> Result<Variant> {
    let s = cfg.pick(flag, "variant", "v1".to_string())?;
    s.parse()
        .map_err(|_| config_error("variant", format!("expected `v1` or `v2`, got `{s}`")))
}

fn parse_stac_mode(cfg: &Config, flag: Option<String>) -> Result<ThresholdMode> {
    match cfg.pick(flag, "stac_mode", "cumulative".to_string())?.as_str() {
        "cumulative" => Ok(ThresholdMode::CumulativeQuantile),
        "band" => Ok(ThresholdMode::CpBand),
        other => Err(config_error(
            "stac_mode",
            format!("expected `cumulative` or `band`, got `{other}`"),
        )),
    }
}

fn check_alpha(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(config_error("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}

/// Resolves the score method from the flag, the config, the model manifest
/// and the band, rejecting any disagreement between them.
fn resolve_method(cfg: &Config, args: &ScorerArgs, band: Option<&CpBand>) -> Result<ScoreMethodId> {
    let mut sources: Vec<(&str, ScoreMethodId)> = Vec::new();
    if let Some(m) = cfg.pick_opt(args.method.clone(), "method")? {
        sources.push(("--method", parse_method(&m)?));
    }
    if let Some(model) = &args.model {
        let manifest = Manifest::load(model).map_err(|e| match e {
            Error::Io(io) => Error::Schema(format!("no readable manifest next to {}: {io}", model.display())),
            e => e,
        })?;
        sources.push(("model manifest", manifest.method));
    }
    if let Some(m) = band.and_then(|b| b.method) {
        sources.push(("band", m));
    }
    let Some(&(_, method)) = sources.first() else {
        return Err(config_error(
            "method",
            "no method given and no model or band to infer it from",
        ));
    };
    if let Some((src, other)) = sources.iter().find(|(_, m)| *m != method) {
        return Err(config_error(
            "method",
            format!("{} says `{method}` but {src} says `{other}`", sources[0].0),
        ));
    }
    Ok(method)
}

/// A trained or parameter-free model, or the STAC sampler-based scorer.
enum Scorer {
    Model(ScoreModel),
    Stac(StacScorer<ScriptedPolicy>),
}

impl StepScorer for Scorer {
    fn method(&self) -> ScoreMethodId {
        match self {
            Scorer::Model(m) => m.method(),
            Scorer::Stac(_) => ScoreMethodId::Stac,
        }
    }

    fn reset(&mut self, seed: u64) {
        match self {
            Scorer::Model(m) => m.reset(seed),
            Scorer::Stac(s) => StepScorer::reset(s, seed),
        }
    }

    fn score_step(&mut self, step: &Step) -> Result<f64> {
        match self {
            Scorer::Model(m) => m.score_step(step),
            Scorer::Stac(s) => s.score_step(step),
        }
    }
}

impl Scorer {
    fn stac_bandwidth(&self) -> Option<f64> {
        match self {
            Scorer::Stac(s) => s.bandwidth(),
            Scorer::Model(_) => None,
        }
    }
}

fn build_scorer(
    cfg: &Config,
    args: &ScorerArgs,
    method: ScoreMethodId,
    header: &DatasetHeader,
    band: Option<&CpBand>,
    seed: u64,
) -> Result<Scorer> {
    match method {
        ScoreMethodId::Stac => {
            let policy = ScriptedPolicy::from_header(header)?;
            let mut stac = StacConfig::new(header.h, header.h_prime);
            stac.batch_size = cfg.pick(args.stac_batch_size, "stac_batch_size", stac.batch_size)?;
            stac.bandwidth = band.and_then(|b| b.stac_bandwidth);
            Ok(Scorer::Stac(StacScorer::new(policy, stac, seed)?))
        }
        ScoreMethodId::Sparc => Ok(Scorer::Model(ScoreModel::load(method, Path::new(""))?)),
        _ => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| config_error("model", format!("method `{method}` needs a trained --model")))?;
            Ok(Scorer::Model(ScoreModel::load(method, path)?))
        }
    }
}

/// Successful rollouts of a calibration set; anything else is rejected
/// unless `allow_mixed` is set, in which case it is dropped.
fn calibration_rollouts(data: Dataset, allow_mixed: bool) -> Result<Vec<Rollout>> {
    let total = data.rollouts.len();
    let ok: Vec<Rollout> = data
        .rollouts
        .into_iter()
        .filter(|r| r.label == Label::Success)
        .collect();
    if ok.len() < total && !allow_mixed {
        return Err(Error::Schema(format!(
            "calibration set has {} non-successful rollouts out of {total}; pass --allow-mixed to drop them",
            total - ok.len()
        )));
    }
    if ok.len() < 2 {
        return Err(Error::Schema(format!(
            "calibration needs at least 2 successful rollouts, got {}",
            ok.len()
        )));
    }
    Ok(ok)
}

pub fn simulate(cfg: &Config, seed: u64, a: SimulateArgs) -> Result<()> {
    let d = SynthConfig::default();
    let failures = match cfg.pick_opt(a.failures, "failures")? {
        Some(s) => FailureSpec::parse_list(&s)?,
        None => Vec::new(),
    };
    let synth = SynthConfig {
        n_rollouts: cfg.pick(a.n_rollouts, "n_rollouts", d.n_rollouts)?,
        t_max: cfg.pick(a.t_max, "t_max", d.t_max)?,
        h: cfg.pick(a.h, "h", d.h)?,
        h_prime: cfg.pick(a.h_prime, "h_prime", d.h_prime)?,
        t_o: cfg.pick(a.t_o, "t_o", d.t_o)?,
        noise: cfg.pick(a.noise, "noise", d.noise)?,
        obs_noise: cfg.pick(a.obs_noise, "obs_noise", d.obs_noise)?,
        d_feature: cfg.pick(a.d_feature, "d_feature", d.d_feature)?,
        failures,
        success_eps: cfg.pick(a.success_eps, "success_eps", d.success_eps)?,
        seed,
        first_index: cfg.pick(a.first_index, "first_index", d.first_index)?,
    };
    let data = generate_dataset(&synth)?;
    data.save(&a.out)?;

    let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
    let mut modes: BTreeMap<String, usize> = BTreeMap::new();
    for r in &data.rollouts {
        let l = match r.label {
            Label::Success => "success",
            Label::Failure => "failure",
            Label::Unknown => "unknown",
        };
        *labels.entry(l).or_default() += 1;
        if let Some(m) = r.failure_mode {
            *modes.entry(m.to_string()).or_default() += 1;
        }
    }
    println!("wrote {} rollouts to {}", data.rollouts.len(), a.out.display());
    for l in ["success", "failure"] {
        println!("  {l}: {}", labels.get(l).copied().unwrap_or(0));
    }
    for (m, n) in &modes {
        println!("  injected {m}: {n}");
    }
    Ok(())
}

fn config_hash(method: ScoreMethodId, config: &serde_json::Value) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::json!({ "method": method, "config": config }))?;
    Ok(Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn train_score(cfg: &Config, seed: u64, a: TrainArgs) -> Result<()> {
    let method_name = cfg
        .pick_opt(a.method, "method")?
        .ok_or_else(|| config_error("method", "train-score needs --method"))?;
    let method = parse_method(&method_name)?;
    if !method.requires_training() {
        return Err(config_error(
            "method",
            format!("method `{method}` requires no training"),
        ));
    }
    let data = load_dataset(&a.train)?;
    let rollouts: Vec<&Rollout> = data.rollouts.iter().filter(|r| r.label != Label::Failure).collect();
    let skipped = data.rollouts.len() - rollouts.len();
    if rollouts.is_empty() {
        return Err(Error::Schema("training set has no successful rollouts".into()));
    }
    let steps: Vec<&Step> = rollouts.iter().flat_map(|r| &r.steps).collect();
    let observations: Vec<Vec<f64>> = steps.iter().map(|s| s.obs.clone()).collect();

    let default_epochs = if method == ScoreMethodId::Rnd { 100 } else { 200 };
    let train = TrainConfig {
        epochs: cfg.pick(a.epochs, "epochs", default_epochs)?,
        batch_size: cfg.pick(a.batch_size, "batch_size", 128)?,
        lr: cfg.pick(a.lr, "lr", 1e-3)?,
        seed,
    };
    let hidden = cfg.pick(a.hidden, "hidden", vec![128, 128])?;
    let flow_cfg = FlowConfig {
        train: train.clone(),
        hidden: hidden.clone(),
        activation: Activation::SmoothRelu,
    };

    let (model, dims, config) = match method {
        ScoreMethodId::LogpZO | ScoreMethodId::LogpO => {
            let flow = train_flow(&observations, &flow_cfg)?;
            let dims = flow.velocity.dims().to_vec();
            let model = if method == ScoreMethodId::LogpZO {
                ScoreModel::LogpZO(flow)
            } else {
                let integ = failband::flow::Integrator::for_dim(flow.data_dim());
                ScoreModel::LogpO(flow, integ)
            };
            (model, dims, serde_json::to_value(&flow_cfg)?)
        }
        ScoreMethodId::Rnd => {
            let rnd_cfg = RndConfig {
                train,
                hidden,
                out_dim: cfg.pick(a.out_dim, "out_dim", 64)?,
                activation: Activation::SmoothRelu,
            };
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = steps.iter().map(|s| (s.flat_actions(), s.obs.clone())).collect();
            let rnd = rnd_train(&pairs, &rnd_cfg)?;
            let dims = rnd.target().dims().to_vec();
            (ScoreModel::Rnd(rnd), dims, serde_json::to_value(&rnd_cfg)?)
        }
        ScoreMethodId::Cfm => {
            let cfm_cfg = CfmConfig {
                flow: flow_cfg,
                consistency_weight: cfg.pick(a.consistency_weight, "consistency_weight", 1.0)?,
                ..CfmConfig::default()
            };
            let cfm = cfm_train(&observations, &cfm_cfg)?;
            let dims = cfm.flow.velocity.dims().to_vec();
            (ScoreModel::Cfm(cfm), dims, serde_json::to_value(&cfm_cfg)?)
        }
        ScoreMethodId::PcaKMeans => {
            let d = PcaKmeansConfig::default();
            let pk_cfg = PcaKmeansConfig {
                components: cfg.pick_opt(a.components, "components")?,
                variance_target: cfg.pick(a.variance_target, "variance_target", d.variance_target)?,
                k: cfg.pick(a.k, "k", d.k)?,
                seed,
                ..d
            };
            let pk = pca_kmeans_fit(&observations, &pk_cfg)?;
            let dims = vec![pk.mean.len(), pk.components.len(), pk.centroids.len()];
            (ScoreModel::PcaKMeans(pk), dims, serde_json::to_value(&pk_cfg)?)
        }
        ScoreMethodId::Sparc | ScoreMethodId::Stac => unreachable!("rejected above"),
    };
    model.save(&a.out)?;
    let manifest = Manifest {
        method,
        dims,
        seed,
        config_hash: config_hash(method, &config)?,
        config,
    };
    manifest.save(&a.out)?;
    println!(
        "trained {method} on {} steps from {} rollouts ({skipped} failed rollouts skipped); wrote {}",
        steps.len(),
        rollouts.len(),
        a.out.display()
    );
    println!("config hash {}", manifest.config_hash);
    Ok(())
}

pub fn calibrate(cfg: &Config, seed: u64, a: CalibrateArgs) -> Result<()> {
    let method = resolve_method(cfg, &a.scorer, None)?;
    let alpha = check_alpha(cfg.pick(a.alpha, "alpha", DEFAULT_ALPHA)?)?;
    let variant = parse_variant(cfg, a.variant)?;
    let ratio = cfg.pick(a.split_ratio, "split_ratio", DEFAULT_SPLIT_RATIO)?;
    let allow_mixed = a.allow_mixed || cfg.get("allow_mixed")?.unwrap_or(false);
    let stac_mode = parse_stac_mode(cfg, a.stac_mode)?;

    let data = load_dataset(&a.data)?;
    let header = data.header.clone();
    let rollouts = calibration_rollouts(data, allow_mixed)?;
    let mut scorer = build_scorer(cfg, &a.scorer, method, &header, None, seed)?;
    let series = score_rollouts(&mut scorer, &rollouts, seed)?;

    let mut band = build_band(&series, alpha, variant, ratio, seed)?;
    band.method = Some(method);
    if method == ScoreMethodId::Stac {
        band.stac_bandwidth = scorer.stac_bandwidth();
        if stac_mode == ThresholdMode::CumulativeQuantile {
            let scores: Vec<Vec<f64>> = series.iter().map(ScoreSeries::scores).collect();
            band.stac_threshold = Some(stac_calibrate_threshold(&scores, alpha)?);
        }
    }
    band.save(&a.out)?;
    for w in &band.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "calibrated {method} band on {} rollouts (n1 = {}, n2 = {}), alpha = {alpha}, h = {}; wrote {}",
        rollouts.len(),
        band.n1,
        band.n2,
        band.h,
        a.out.display()
    );
    Ok(())
}

pub fn detect(cfg: &Config, seed: u64, a: DetectArgs) -> Result<()> {
    let band = CpBand::load(&a.band)?;
    let method = resolve_method(cfg, &a.scorer, Some(&band))?;
    let rule = DecisionRule::from_band(&band);

    let mut log: Option<BufWriter<File>> = match &a.step_log {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut latencies = Vec::new();
    let mut sink = |entry: StepLog| -> Result<()> {
        latencies.push(entry.latency_ms);
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    };

    let mut results: Vec<DetectionResult> = match (&a.data, &a.stream) {
        (Some(path), _) => {
            let data = load_dataset(path)?;
            let mut scorer = build_scorer(cfg, &a.scorer, method, &data.header, Some(&band), seed)?;
            run_stream(&rule, &mut scorer, data.rollouts.into_iter().map(Ok), seed, &mut sink)?
        }
        (None, Some(path)) => {
            let reader: Box<dyn BufRead> = if path.as_os_str() == "-" {
                Box::new(io::stdin().lock())
            } else {
                Box::new(BufReader::new(File::open(path)?))
            };
            let stream = StepStream::new(reader)?;
            let mut scorer = build_scorer(cfg, &a.scorer, method, stream.header(), Some(&band), seed)?;
            run_step_stream(&rule, &mut scorer, stream, seed, &mut sink)?
        }
        (None, None) => return Err(config_error("data", "detect needs --data or --stream")),
    };
    if let Some(mut w) = log {
        w.flush()?;
    }
    results.sort_by(|x, y| x.rollout_id.cmp(&y.rollout_id));
    write_json_lines(&a.out, &results)?;

    let flagged = results.iter().filter(|r| r.flagged).count();
    println!(
        "{flagged} of {} rollouts flagged; wrote {}",
        results.len(),
        a.out.display()
    );
    if !latencies.is_empty() {
        let lat = latency_stats(method.name(), &latencies)?;
        println!(
            "scoring latency over {} steps: p50 {:.4} ms, p95 {:.4} ms, mean {:.4} ms",
            latencies.len(),
            lat.p50_ms,
            lat.p95_ms,
            lat.mean_ms
        );
    }
    Ok(())
}

fn label_map(data: &Dataset) -> HashMap<String, Label> {
    data.rollouts.iter().map(|r| (r.id.clone(), r.label)).collect()
}

pub fn evaluate(cfg: &Config, a: EvaluateArgs) -> Result<()> {
    let band = a.band.as_deref().map(CpBand::load).transpose()?;
    let alpha = match cfg.pick_opt(a.alpha, "alpha")? {
        Some(x) => x,
        None => band
            .as_ref()
            .map(|b| b.alpha)
            .ok_or_else(|| config_error("alpha", "give --alpha or --band"))?,
    };
    let method = match cfg.pick_opt(a.method, "method")? {
        Some(m) => parse_method(&m)?.name().to_string(),
        None => band
            .as_ref()
            .and_then(|b| b.method)
            .map(|m| m.name().to_string())
            .ok_or_else(|| config_error("method", "give --method or a --band that records it"))?,
    };
    let setting = cfg.pick(a.setting, "setting", DEFAULT_SETTING.to_string())?;
    let results: Vec<DetectionResult> = read_json_lines(&a.results)?;
    let labels = label_map(&load_dataset(&a.labels)?);
    let metrics = eval_metrics(&results, &labels, alpha)?;
    let row = ReportRow::from_metrics(method, setting, &metrics);
    emit_report(&[row], ReportFormat::from_path(&a.out), &a.out)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

pub fn sweep_alpha(cfg: &Config, seed: u64, a: SweepArgs) -> Result<()> {
    let method = resolve_method(cfg, &a.scorer, None)?;
    let grid = cfg.pick(a.grid, "grid", default_alpha_grid())?;
    for &alpha in &grid {
        check_alpha(alpha)?;
    }
    let variant = parse_variant(cfg, a.variant)?;
    let ratio = cfg.pick(a.split_ratio, "split_ratio", DEFAULT_SPLIT_RATIO)?;
    let allow_mixed = a.allow_mixed || cfg.get("allow_mixed")?.unwrap_or(false);
    let stac_mode = parse_stac_mode(cfg, a.stac_mode)?;
    let setting = cfg.pick(a.setting, "setting", DEFAULT_SETTING.to_string())?;

    let cal = load_dataset(&a.cal)?;
    let test = load_dataset(&a.test)?;
    let labels = label_map(&test);
    let header = cal.header.clone();
    let cal_rollouts = calibration_rollouts(cal, allow_mixed)?;
    let mut scorer = build_scorer(cfg, &a.scorer, method, &header, None, seed)?;
    let cal_series = score_rollouts(&mut scorer, &cal_rollouts, seed)?;
    let test_series = score_rollouts(&mut scorer, &test.rollouts, seed)?;

    let reports = if method == ScoreMethodId::Stac && stac_mode == ThresholdMode::CumulativeQuantile {
        alpha_sweep_cumulative(&cal_series, &test_series, &labels, &grid)?
    } else {
        alpha_sweep(&cal_series, &test_series, &labels, &grid, variant, ratio, seed)?
    };
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|m| ReportRow::from_metrics(method.name(), setting.clone(), m))
        .collect();
    emit_report(&rows, ReportFormat::from_path(&a.out), &a.out)?;
    let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!("alpha    tpr    tnr    balanced  weighted  detection_time");
    for r in &rows {
        println!(
            "{:<8} {:<6} {:<6} {:<9} {:<9} {}",
            r.alpha,
            show(r.tpr),
            show(r.tnr),
            show(r.balanced),
            show(r.weighted),
            r.mean_detection_time.map_or("-".to_string(), |v| format!("{v:.1}"))
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn score(cfg: &Config, seed: u64, a: ScoreArgs) -> Result<()> {
    let method = resolve_method(cfg, &a.scorer, None)?;
    let data = load_dataset(&a.data)?;
    let mut scorer = build_scorer(cfg, &a.scorer, method, &data.header, None, seed)?;
    let series = score_rollouts(&mut scorer, &data.rollouts, seed)?;
    write_json_lines(&a.out, &series)?;
    println!("wrote {} score series to {}", series.len(), a.out.display());
    Ok(())
}

pub fn bench(cfg: &Config, seed: u64, a: BenchArgs) -> Result<()> {
    let method = resolve_method(cfg, &a.scorer, None)?;
    let reps = cfg.pick(a.reps, "reps", 5)?;
    let data = load_dataset(&a.data)?;
    let mut scorer = build_scorer(cfg, &a.scorer, method, &data.header, None, seed)?;
    let stats = bench_score(&mut scorer, &data.rollouts, reps, seed)?;
    append_bench_row(&a.out, &stats)?;
    println!(
        "{}: p50 {:.4} ms, p95 {:.4} ms, mean {:.4} ms; appended to {}",
        stats.method,
        stats.p50_ms,
        stats.p95_ms,
        stats.mean_ms,
        a.out.display()
    );
    Ok(())
}

fn append_bench_row(path: &PathBuf, stats: &failband::bench::LatencyStats) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "method,p50_ms,p95_ms,mean_ms")?;
    }
    writeln!(
        f,
        "{},{},{},{}",
        stats.method, stats.p50_ms, stats.p95_ms, stats.mean_ms
    )?;
    Ok(())
}
