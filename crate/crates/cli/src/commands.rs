use std::path::{Path, PathBuf};

use dualrate_core::corpus::{
    ingest_jsonl, read_clean_jsonl, write_jsonl, write_rejections, CleanItem, CleanedCorpus, CorpusConfig, Ingested,
    Preprocessor,
};
use dualrate_core::experiment::{run_experiment, synthetic_splits, ExperimentReport};
use dualrate_core::loss::{compute_mu, Weighting};
use dualrate_core::metrics::{evaluate, MetricsReport};
use dualrate_core::model::{train as fit, Checkpoint, TrainOutcome};
use dualrate_core::profiler::{count_params, derive_metrics, flops_at_mean_tokens, host_description, run_benchmark};
use dualrate_core::sampling::{
    partition, read_splits_csv, sample_corpus, split as assign, stratify, write_quotas_csv, write_splits_csv,
    SamplingConfig, SplitAssignment, SplitRatios, SplitSets,
};
use dualrate_core::scaling::{
    default_d_grid, emit_curve, extrapolate_ces, fit_power_law, read_points_csv, ScalingPoint, REPORTED_POINTS,
};
use dualrate_core::synth::{generate, write_raw_jsonl, SynthConfig};
use dualrate_core::Error;

use crate::config::RunConfig;
use crate::manifest::{self, Manifest};
use crate::{
    EvalArgs, ExperimentArgs, ExtrapolateArgs, Failure, IngestArgs, PipelineArgs, ProfileArgs, SampleArgs, SplitArgs,
    Stage, SynthArgs, TrainArgs,
};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

type Outcome = Result<PathBuf, Failure>;

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, command: &str, inputs: &[PathBuf], artifacts: &[PathBuf]) -> Outcome {
        Manifest::build(command, &self.cfg, inputs, &self.out, artifacts)
            .and_then(|m| m.write(&self.out))
            .stage("manifest")
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn verify_all(dir: &Path) -> Result<(), Failure> {
    for (path, n) in manifest::verify_dir(dir).stage("verify")? {
        println!("ok {} ({n} artifacts)", path.display());
    }
    Ok(())
}

pub fn synth(ctx: &Ctx, args: SynthArgs) -> Outcome {
    let mut cfg: SynthConfig = ctx.cfg.synth.clone();
    if args.noisy {
        cfg.noise = SynthConfig::heteroscedastic(0).noise;
    }
    if let Some(n) = args.items {
        cfg.n_items = n;
    }
    if let Some(b) = args.bad_fraction {
        cfg.bad_fraction = b;
    }
    let items = generate(&cfg, ctx.cfg.seed).stage("synth")?;
    let out = args.out.unwrap_or_else(|| ctx.path("raw.jsonl"));
    write_raw_jsonl(&out, &items).stage("synth")?;
    println!("wrote {} synthetic items to {}", items.len(), out.display());
    ctx.finish("synth", &[], &[out])
}

fn base_dir(input: &Path) -> PathBuf {
    input.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_raw(input: &Path, lenient: bool) -> Result<Ingested, Failure> {
    let ingested = ingest_jsonl(input, lenient).stage("ingest")?;
    if !ingested.skipped.is_empty() {
        log::warn!(
            "{}: skipped {} malformed lines",
            input.display(),
            ingested.skipped.len()
        );
    }
    Ok(ingested)
}

fn clean(corpus: &CorpusConfig, input: &Path, ingested: &Ingested) -> Result<CleanedCorpus, Failure> {
    let prep = Preprocessor::new(corpus.clone())
        .stage("filter")?
        .with_base_dir(base_dir(input));
    Ok(prep.clean_all(&ingested.items))
}

fn write_ingest_outputs(ctx: &Ctx, ingested: &Ingested, cleaned: &CleanedCorpus) -> Result<Vec<PathBuf>, Failure> {
    let clean_path = ctx.path("clean.jsonl");
    let rejections = ctx.path("rejections.csv");
    let skipped = ctx.path("skipped.jsonl");
    write_jsonl(&clean_path, &cleaned.items).stage("ingest")?;
    write_rejections(&rejections, &cleaned.rejections).stage("ingest")?;
    write_jsonl(&skipped, &ingested.skipped).stage("ingest")?;
    println!(
        "ingested {} lines: {} kept, {} rejected, {} malformed",
        ingested.items.len() + ingested.skipped.len(),
        cleaned.items.len(),
        cleaned.rejections.len(),
        ingested.skipped.len()
    );
    Ok(vec![clean_path, rejections, skipped])
}

pub fn ingest(ctx: &Ctx, args: IngestArgs) -> Outcome {
    let lenient = ctx.cfg.ingest.lenient && !args.strict;
    let ingested = read_raw(&args.input, lenient)?;
    let cleaned = clean(&ctx.cfg.corpus, &args.input, &ingested)?;
    let artifacts = write_ingest_outputs(ctx, &ingested, &cleaned)?;
    ctx.finish("ingest", &[args.input], &artifacts)
}

fn sampling_config(ctx: &Ctx, fraction: Option<f64>, floor: Option<usize>) -> SamplingConfig {
    SamplingConfig {
        fraction: fraction.unwrap_or(ctx.cfg.sampling.fraction),
        floor: floor.unwrap_or(ctx.cfg.sampling.floor),
    }
}

fn write_sample(
    ctx: &Ctx,
    items: &[CleanItem],
    cfg: &SamplingConfig,
) -> Result<(Vec<CleanItem>, Vec<PathBuf>), Failure> {
    let (sampled, quotas) = sample_corpus(items, cfg, ctx.cfg.seed).stage("sample")?;
    let sampled_path = ctx.path("sampled.jsonl");
    let quotas_path = ctx.path("quotas.csv");
    write_jsonl(&sampled_path, &sampled).stage("sample")?;
    write_quotas_csv(&quotas_path, &quotas).stage("sample")?;
    println!(
        "sampled {} of {} items across {} categories",
        sampled.len(),
        items.len(),
        quotas.len()
    );
    Ok((sampled, vec![sampled_path, quotas_path]))
}

pub fn sample(ctx: &Ctx, args: SampleArgs) -> Outcome {
    let items = read_clean_jsonl(&args.input).stage("sample")?;
    let cfg = sampling_config(ctx, args.fraction, args.floor);
    let (_, artifacts) = write_sample(ctx, &items, &cfg)?;
    ctx.finish("sample", &[args.input], &artifacts)
}

fn write_split(
    ctx: &Ctx,
    items: &[CleanItem],
    ratios: SplitRatios,
    rare: usize,
) -> Result<(Vec<SplitAssignment>, PathBuf), Failure> {
    let strata = stratify(items, rare);
    let assignments = assign(items, &strata, ratios, ctx.cfg.seed).stage("split")?;
    let path = ctx.path("splits.csv");
    write_splits_csv(&path, &assignments).stage("split")?;
    let sets = partition(items.to_vec(), &assignments);
    println!(
        "split {} items {ratios}: train {}, validation {}, test {}",
        items.len(),
        sets.train.len(),
        sets.validation.len(),
        sets.test.len()
    );
    Ok((assignments, path))
}

pub fn split(ctx: &Ctx, args: SplitArgs) -> Outcome {
    let items = read_clean_jsonl(&args.input).stage("split")?;
    let ratios = args.ratios.unwrap_or(ctx.cfg.split.ratios);
    let rare = args.rare_threshold.unwrap_or(ctx.cfg.split.rare_threshold);
    let (_, path) = write_split(ctx, &items, ratios, rare)?;
    ctx.finish("split", &[args.input], &[path])
}

/// Re-cleans a raw file (so images are loaded) and routes items by a split file.
fn load_splits(ctx: &Ctx, corpus: &CorpusConfig, raw: &Path, splits: &Path) -> Result<SplitSets<CleanItem>, Failure> {
    let ingested = read_raw(raw, ctx.cfg.ingest.lenient)?;
    let cleaned = clean(corpus, raw, &ingested)?;
    let assignments = read_splits_csv(splits).stage("split")?;
    Ok(partition(cleaned.items, &assignments))
}

fn weighting_for(ctx: &Ctx, train: &[CleanItem], enabled: bool) -> Result<Weighting, Failure> {
    if !enabled {
        return Ok(Weighting::Unit);
    }
    let counts: Vec<u64> = train.iter().map(|i| i.rating_number).collect();
    let stats = compute_mu(&counts)
        .and_then(|s| s.with_clip(ctx.cfg.weighting.clip))
        .stage("train")?;
    Ok(Weighting::RatingCount(stats))
}

fn print_history(outcome: &TrainOutcome) {
    println!(
        "{:>5}  {:>10}  {:>9}  {:>10}  {:>10}",
        "epoch", "train loss", "val PLCC", "val Huber", "last lr"
    );
    for h in &outcome.history {
        let plcc = h.val_plcc.map_or("n/a".to_string(), |p| format!("{p:.4}"));
        println!(
            "{:>5}  {:>10.6}  {:>9}  {:>10.6}  {:>10.3e}",
            h.epoch, h.train_loss, plcc, h.val_huber, h.last_lr
        );
    }
    let note = if outcome.stopped_early { " (stopped early)" } else { "" };
    println!("best epoch {}{note}", outcome.best_epoch);
}

fn train_and_save(ctx: &Ctx, sets: &SplitSets<CleanItem>, weighted: bool, out: &Path) -> Result<Checkpoint, Failure> {
    let weighting = weighting_for(ctx, &sets.train, weighted)?;
    let outcome = fit(
        &sets.train,
        &sets.validation,
        &ctx.cfg.model,
        &ctx.cfg.train,
        &weighting,
    )
    .stage("train")?;
    print_history(&outcome);
    let ckpt = Checkpoint::new(outcome, ctx.cfg.corpus.clone(), weighting);
    ckpt.save(out).stage("train")?;
    Ok(ckpt)
}

pub fn train(ctx: &Ctx, args: TrainArgs) -> Outcome {
    let sets = load_splits(ctx, &ctx.cfg.corpus, &args.raw, &args.splits)?;
    let out = args.out.unwrap_or_else(|| ctx.path("checkpoint.json"));
    train_and_save(ctx, &sets, ctx.cfg.weighting.enabled && !args.unweighted, &out)?;
    ctx.finish("train", &[args.raw, args.splits], &[out])
}

fn write_metrics(ctx: &Ctx, report: &MetricsReport) -> Result<Vec<PathBuf>, Failure> {
    let json = ctx.path("metrics.json");
    let text = ctx.path("metrics.txt");
    report.write_json(&json).stage("eval")?;
    write_text(&text, &report.to_string()).stage("eval")?;
    print!("{report}");
    Ok(vec![json, text])
}

pub fn eval(ctx: &Ctx, args: EvalArgs) -> Outcome {
    let ckpt = Checkpoint::load(&args.ckpt).stage("eval")?;
    let model = ckpt.model().stage("eval")?;
    let sets = load_splits(ctx, &ckpt.corpus, &args.raw, &args.splits)?;
    let which = args.split.unwrap_or(ctx.cfg.eval.split);
    let factor = args.ces_factor.unwrap_or(ctx.cfg.eval.ces_factor);
    let report = evaluate(&model, sets.get(which), factor).stage("eval")?;
    let artifacts = write_metrics(ctx, &report)?;
    ctx.finish("eval", &[args.ckpt, args.raw, args.splits], &artifacts)
}

pub fn profile(ctx: &Ctx, args: ProfileArgs) -> Outcome {
    let ckpt = Checkpoint::load(&args.ckpt).stage("profile")?;
    let model = ckpt.model().stage("profile")?;
    let prep = Preprocessor::new(ckpt.corpus.clone())
        .stage("profile")?
        .with_base_dir(base_dir(&args.data));
    let raws = read_raw(&args.data, ctx.cfg.ingest.lenient)?.items;
    let batch = args.batch_size.unwrap_or(ctx.cfg.profile.batch_size);
    let warmup = args.warmup.unwrap_or(ctx.cfg.profile.warmup_batches);
    let raw = run_benchmark(&model, &prep, &raws, batch, warmup).stage("profile")?;
    let hardware = ctx.cfg.profile.hardware.clone().unwrap_or_else(host_description);
    let flops = flops_at_mean_tokens(&model.config, &raw);
    let report = derive_metrics(raw, count_params(&model.params), flops, &hardware).stage("profile")?;
    let json = args.out.unwrap_or_else(|| ctx.path("profile.json"));
    let text = json.with_extension("txt");
    write_json(&json, &report).stage("profile")?;
    write_text(&text, &report.to_string()).stage("profile")?;
    print!("{report}");
    ctx.finish("profile", &[args.ckpt, args.data], &[json, text])
}

pub fn extrapolate(ctx: &Ctx, args: ExtrapolateArgs) -> Outcome {
    let section = &ctx.cfg.extrapolate;
    let mut inputs = Vec::new();
    let points: Vec<ScalingPoint> = match &args.points {
        Some(path) => {
            inputs.push(path.clone());
            read_points_csv(path).stage("extrapolate")?
        }
        None => {
            let skip_test = args.exclude_test_point || section.exclude_test_point;
            REPORTED_POINTS
                .iter()
                .copied()
                .filter(|p| !(skip_test && p.fraction == 0.20))
                .collect()
        }
    };
    let at = args.at.unwrap_or(section.at);
    let factor = args.ces_factor.unwrap_or(section.ces_factor);
    let fit = fit_power_law(&points).stage("extrapolate")?;
    let plcc = fit.predict(at);
    let result = serde_json::json!({
        "fit": fit,
        "points": points,
        "at": at,
        "plcc": plcc,
        "ces": extrapolate_ces(&fit, at, factor),
        "ces_factor": factor,
    });
    let json = ctx.path("extrapolation.json");
    let curve = ctx.path("curve.csv");
    write_json(&json, &result).stage("extrapolate")?;
    emit_curve(&fit, &points, &default_d_grid(), &curve, args.plot.as_deref()).stage("extrapolate")?;
    println!(
        "PLCC(d) = {:.4} - {:.4} * d^(-{:.3})  (sse {:.3e})",
        fit.a, fit.b, fit.c, fit.sse
    );
    println!(
        "at d = {at}: PLCC {plcc:.4}, CES {:.4}",
        extrapolate_ces(&fit, at, factor)
    );
    let mut artifacts = vec![json, curve];
    artifacts.extend(args.plot);
    ctx.finish("extrapolate", &inputs, &artifacts)
}

pub fn experiment(ctx: &Ctx, args: ExperimentArgs) -> Outcome {
    let setup = &ctx.cfg.experiment;
    let (report, inputs): (ExperimentReport, Vec<PathBuf>) = match (args.raw, args.splits) {
        (Some(raw), Some(splits)) => {
            let sets = load_splits(ctx, &ctx.cfg.corpus, &raw, &splits)?;
            let report = run_experiment(
                &sets,
                &ctx.cfg.model,
                &ctx.cfg.train,
                &setup.seeds,
                ctx.cfg.weighting.clip,
            )
            .stage("experiment")?;
            (report, vec![raw, splits])
        }
        _ => {
            let sets = synthetic_splits(
                &setup.synth,
                &setup.corpus,
                setup.ratios,
                setup.rare_threshold,
                ctx.cfg.seed,
            )
            .stage("experiment")?;
            let report = run_experiment(&sets, &setup.model, &setup.train, &setup.seeds, setup.weight_clip)
                .stage("experiment")?;
            (report, Vec::new())
        }
    };
    let json = ctx.path("experiment.json");
    let text = ctx.path("experiment.txt");
    write_json(&json, &report).stage("experiment")?;
    write_text(&text, &report.to_string()).stage("experiment")?;
    print!("{report}");
    ctx.finish("experiment", &inputs, &[json, text])
}

pub fn pipeline(ctx: &Ctx, args: PipelineArgs) -> Outcome {
    let ingested = read_raw(&args.input, ctx.cfg.ingest.lenient)?;
    let cleaned = clean(&ctx.cfg.corpus, &args.input, &ingested)?;
    let mut artifacts = write_ingest_outputs(ctx, &ingested, &cleaned)?;

    let (sampled, sample_files) = write_sample(ctx, &cleaned.items, &ctx.cfg.sampling)?;
    artifacts.extend(sample_files);

    let (assignments, split_file) = write_split(ctx, &sampled, ctx.cfg.split.ratios, ctx.cfg.split.rare_threshold)?;
    artifacts.push(split_file);
    let sets = partition(sampled, &assignments);

    let ckpt_path = ctx.path("checkpoint.json");
    let ckpt = train_and_save(ctx, &sets, ctx.cfg.weighting.enabled, &ckpt_path)?;
    artifacts.push(ckpt_path);

    let model = ckpt.model().stage("eval")?;
    let report = evaluate(&model, sets.get(ctx.cfg.eval.split), ctx.cfg.eval.ces_factor).stage("eval")?;
    artifacts.extend(write_metrics(ctx, &report)?);
    ctx.finish("pipeline", &[args.input], &artifacts)
}
