use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flowprune::data::Dataset;
use flowprune::divergence::compute_profile;
use flowprune::io::config::{load_config, ModelSpec, RunConfig};
use flowprune::io::dataset::{load_dataset, save_container, save_csv, DataFormat};
use flowprune::io::report::{
    load_tracker, render_csv, render_json, render_profile_csv, render_profile_json, save_tracker, tracker_rows,
};
use flowprune::io::{load_checkpoint, save_checkpoint, Checkpoint};
use flowprune::pipeline::{emit_tracker, run_pipeline, verify_budget, CompressionTracker, ReportRow, TrackerEvent};
use flowprune::pruning::idap_run;
use flowprune::trainer::{evaluate, train as fit};
use flowprune::truncation::truncate_run;
use flowprune::{data, models, Error, Network, Result};
use log::info;

use crate::{Common, DataKind, Format, GenerateArgs, ReportArgs};

pub enum Outcome {
    Done,
    /// The command finished but could not meet its accuracy budget.
    BudgetWarning(String),
}

struct Context {
    cfg: RunConfig,
    train: Dataset,
    val: Dataset,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    model: Option<PathBuf>,
    format: Format,
}

/// Merges flags over the config file and loads the datasets.
fn context(args: &Common) -> Result<Context> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    let data_path = args
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set `data`".into()))?;
    let data = load_dataset(&data_path, DataFormat::from_path(&data_path), cfg.num_classes)?;
    let (train, val) = match args.val.clone().or_else(|| cfg.val.clone()) {
        Some(v) => {
            let val = load_dataset(&v, DataFormat::from_path(&v), Some(data.num_classes()))?;
            (data, val)
        }
        None => {
            let n = data.len() * 7 / 10;
            if n == 0 || n == data.len() {
                return Err(Error::Dataset(format!("{} samples are too few to split", data.len())));
            }
            data.split_at(n)?
        }
    };
    Ok(Context {
        out: args.out.clone().or_else(|| cfg.model_out.clone()),
        report: args.report.clone().or_else(|| cfg.report_out.clone()),
        model: args.model.clone().or_else(|| cfg.model_in.clone()),
        format: args.format,
        cfg,
        train,
        val,
    })
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn render_rows(rows: &[ReportRow], format: Format) -> String {
    match format {
        Format::Csv => render_csv(rows),
        Format::Json => render_json(rows),
    }
}

fn tracker_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".tracker.json");
    PathBuf::from(name)
}

fn require_model(ctx: &Context) -> Result<Checkpoint> {
    let path = ctx
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("no model: pass --model or set `model_in`".into()))?;
    load_checkpoint(path)
}

fn default_spec(shape: &[usize]) -> Result<ModelSpec> {
    match shape {
        [_] => Ok(ModelSpec::Mlp { hidden: vec![32, 32] }),
        [_, d] => Ok(ModelSpec::Attention {
            heads: 2,
            d_k: (d / 2).max(1),
        }),
        [_, _, _] => Ok(ModelSpec::Cnn {
            c1: 8,
            c2: 8,
            hidden: 96,
        }),
        other => Err(Error::Config(format!("no default model for sample shape {other:?}"))),
    }
}

fn build_model(spec: &ModelSpec, shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
    let mismatch = || Error::Config(format!("model {spec:?} does not fit sample shape {shape:?}"));
    match (spec, shape) {
        (ModelSpec::Mlp { hidden }, [d]) => models::mlp(*d, hidden, classes, seed),
        (ModelSpec::Cnn { c1, c2, hidden }, [h, w, c]) if h == w => {
            models::toy_cnn(*h, *c, *c1, *c2, *hidden, classes, seed)
        }
        (ModelSpec::Attention { heads, d_k }, [n, d]) => models::attention_classifier(*n, *d, *heads, *d_k, classes, seed),
        _ => Err(mismatch()),
    }
}

fn fit_model(ctx: &Context) -> Result<Network> {
    let shape = ctx.train.sample_shape();
    let spec = match &ctx.cfg.model {
        Some(s) => s.clone(),
        None => default_spec(shape)?,
    };
    let net = build_model(&spec, shape, ctx.train.num_classes(), ctx.cfg.seed)?;
    fit(&net, &ctx.train, &ctx.cfg.train)
}

pub fn train(args: &Common) -> Result<Outcome> {
    let ctx = context(args)?;
    let net = fit_model(&ctx)?;
    let metrics = evaluate(&net, &ctx.val)?;
    println!(
        "trained: val accuracy {:.6}, loss {:.6}, params {}",
        metrics.accuracy,
        metrics.loss,
        net.count_params()
    );
    if let Some(out) = &ctx.out {
        let mut ckpt = Checkpoint::new(net, ctx.cfg.seed);
        ckpt.reference_accuracy = Some(metrics.accuracy);
        save_checkpoint(&ckpt, out)?;
    }
    Ok(Outcome::Done)
}

pub fn analyze(args: &Common) -> Result<Outcome> {
    let ctx = context(args)?;
    let ckpt = require_model(&ctx)?;
    let profile = compute_profile(&ckpt.network, &ctx.val, &ctx.cfg.flow())?;
    let text = match ctx.format {
        Format::Csv => render_profile_csv(&profile),
        Format::Json => render_profile_json(&profile),
    };
    emit(&text, ctx.report.as_deref())?;
    Ok(Outcome::Done)
}

fn finish(
    ctx: &Context,
    tracker: &CompressionTracker,
    net: Network,
    reference_accuracy: f64,
    rows: Vec<ReportRow>,
) -> Result<()> {
    if let Some(out) = &ctx.out {
        let mut ckpt = Checkpoint::new(net, ctx.cfg.seed);
        ckpt.provenance = Some(tracker.digest());
        ckpt.reference_accuracy = Some(reference_accuracy);
        save_checkpoint(&ckpt, out)?;
        save_tracker(tracker, &tracker_path(out))?;
    }
    emit(&render_rows(&rows, ctx.format), ctx.report.as_deref())
}

pub fn prune_filters(args: &Common) -> Result<Outcome> {
    let ctx = context(args)?;
    let ckpt = require_model(&ctx)?;
    let net = ckpt.network;
    let schedule = ctx.cfg.schedule();
    let (pruned, history) = idap_run(&net, &ctx.train, &ctx.val, &schedule, &ctx.cfg.idap())?;
    let mut tracker = CompressionTracker::new(
        history.baseline,
        history.baseline_params,
        net.estimate_flops(net.input_shape())?,
        schedule.tau,
    );
    tracker.record_pruning(&history)?;
    tracker.push(TrackerEvent::Final {
        metrics: history.final_metrics,
        params: pruned.count_params(),
        flops: pruned.estimate_flops(pruned.input_shape())?,
        fine_tune_kept: ctx.cfg.prune_ft.epochs > 0 && !history.fine_tune_discarded,
    })?;
    info!("pruned {} -> {} params", history.baseline_params, pruned.count_params());
    let rows = tracker_rows(&tracker)?;
    finish(&ctx, &tracker, pruned, history.baseline.accuracy, rows)?;
    if history.steps.is_empty() {
        return Ok(Outcome::BudgetWarning(format!(
            "no pruning ratio stayed within tau = {}; the network is unchanged",
            schedule.tau
        )));
    }
    Ok(Outcome::Done)
}

pub fn truncate_layers(args: &Common) -> Result<Outcome> {
    let ctx = context(args)?;
    let ckpt = require_model(&ctx)?;
    let net = ckpt.network;
    let truncation = ctx.cfg.truncation();
    let profile = compute_profile(&net, &ctx.val, &truncation.flow)?;
    let (truncated, report) = truncate_run(
        &net,
        &ctx.train,
        &ctx.val,
        &profile,
        &truncation,
        ckpt.reference_accuracy,
    )?;
    let mut tracker = CompressionTracker::new(
        report.entry,
        net.count_params(),
        net.estimate_flops(net.input_shape())?,
        truncation.delta_max,
    );
    tracker.record_truncation(&report)?;
    tracker.push(TrackerEvent::Final {
        metrics: report.final_metrics,
        params: truncated.count_params(),
        flops: truncated.estimate_flops(truncated.input_shape())?,
        fine_tune_kept: truncation.final_ft.epochs > 0 && !report.final_ft_discarded,
    })?;
    info!("removed layers {:?}", report.removed);
    let rows = tracker_rows(&tracker)?;
    let drop = report.reference_accuracy - report.final_metrics.accuracy;
    finish(&ctx, &tracker, truncated, report.reference_accuracy, rows)?;
    if drop > truncation.delta_max {
        return Ok(Outcome::BudgetWarning(format!(
            "accuracy drop {drop:.6} exceeds delta_max = {}",
            truncation.delta_max
        )));
    }
    Ok(Outcome::Done)
}

pub fn compress(args: &Common) -> Result<Outcome> {
    let ctx = context(args)?;
    let net = match &ctx.model {
        Some(p) => load_checkpoint(p)?.network,
        None => fit_model(&ctx)?,
    };
    let cfg = ctx.cfg.pipeline();
    let (compressed, tracker) = run_pipeline(&net, &ctx.train, &ctx.val, &cfg)?;
    let check = verify_budget(&net, &compressed, &ctx.val, cfg.delta_max)?;
    eprintln!(
        "accuracy {:.6} -> {:.6} (drop {:.6}, budget {}), max relative output deviation {:.6}",
        check.original_accuracy,
        check.compressed_accuracy,
        check.accuracy_drop,
        cfg.delta_max,
        check.max_relative_deviation
    );
    let rows = emit_tracker(&tracker, &net, &compressed)?;
    finish(&ctx, &tracker, compressed, tracker.baseline.accuracy, rows)?;
    let skipped: Vec<&str> = tracker
        .events
        .iter()
        .filter_map(|e| match e {
            TrackerEvent::PhaseSkipped { phase, .. } => Some(phase.as_str()),
            _ => None,
        })
        .collect();
    if !check.passed() {
        return Ok(Outcome::BudgetWarning(format!(
            "accuracy drop {:.6} exceeds delta_max = {}",
            check.accuracy_drop, cfg.delta_max
        )));
    }
    if !skipped.is_empty() {
        return Ok(Outcome::BudgetWarning(format!("phases skipped: {}", skipped.join(", "))));
    }
    Ok(Outcome::Done)
}

pub fn report(args: &ReportArgs) -> Result<Outcome> {
    let tracker = load_tracker(&args.tracker)?;
    let rows = tracker_rows(&tracker)?;
    emit(&render_rows(&rows, args.format), args.report.as_deref())?;
    Ok(Outcome::Done)
}

pub fn generate(args: &GenerateArgs) -> Result<Outcome> {
    let data = match args.kind {
        DataKind::Blobs => data::blobs(args.samples, args.seed)?,
        DataKind::Bars => data::bar_images(args.samples, args.size, args.seed)?,
    };
    match DataFormat::from_path(&args.out) {
        DataFormat::Csv => save_csv(&data, &args.out)?,
        DataFormat::Container => save_container(&data, &args.out)?,
    }
    Ok(Outcome::Done)
}
