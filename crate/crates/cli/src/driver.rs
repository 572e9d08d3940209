//! Command implementations. The binary's subcommands call these, and
//! `verify` calls them again to re-run a recorded manifest into a scratch
//! directory.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use dpml_core::baselines::{fit_linear_baseline, BaselineKind, LinearFitSpec};
use dpml_core::config::RunConfig;
use dpml_core::data::csv_io::{load_csv, save_csv};
use dpml_core::data::features::{build_instances, split_tasks};
use dpml_core::data::synth::generate;
use dpml_core::data::{Instance, Split, StockTask};
use dpml_core::diff::{Checkpoint, Rng};
use dpml_core::eval::{
    compute_metrics, predictions_for_baseline, predictions_for_linear, predictions_for_model,
    EvalReport, ModelReport, PredRecord,
};
use dpml_core::meta::engine::meta_train;
use dpml_core::meta::MetaModel;
use dpml_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::manifest::{absolute, hash_file, RunManifest};
use crate::plot;

/// Input data after ingestion, feature assembly, and the chronological
/// split.
pub struct PreparedData {
    pub fingerprint: String,
    pub tasks: Vec<StockTask>,
    pub dropped_rows: usize,
    pub skipped_instances: usize,
    pub excluded_stocks: usize,
}

fn prepare(cfg: &RunConfig, data: &Path) -> Result<PreparedData> {
    let loaded = load_csv(data)?;
    let max_day = loaded
        .panel
        .max_day()
        .ok_or_else(|| Error::data(format!("{} holds no usable bars", data.display())))?;
    let split = cfg.resolve_split(max_day)?;
    let fingerprint = loaded.panel.fingerprint();
    let set = build_instances(&loaded.panel);
    let task_set = split_tasks(set.instances, split)?;
    Ok(PreparedData {
        fingerprint,
        tasks: task_set.tasks,
        dropped_rows: loaded.dropped_rows,
        skipped_instances: set.skipped,
        excluded_stocks: task_set.excluded.len(),
    })
}

fn report_data_notes(p: &PreparedData) {
    if p.dropped_rows > 0 {
        println!("note: dropped {} rows with invalid values", p.dropped_rows);
    }
    if p.skipped_instances > 0 {
        println!("note: skipped {} instances with incomplete history", p.skipped_instances);
    }
    if p.excluded_stocks > 0 {
        println!("note: excluded {} stocks with no training instances", p.excluded_stocks);
    }
}

pub fn run_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let panel = generate(&cfg.synth, cfg.seed)?;
    let fp = panel.fingerprint();
    let cfg_hash = cfg.hash();
    let mut manifest = RunManifest::new("gen-data", &cfg.canonical_text(), &cfg_hash, cfg.seed);
    manifest.data_fingerprint = Some(fp.clone());
    manifest.seal_identity();
    save_csv(
        &panel,
        &out.join("data.csv"),
        &[
            ("manifest", manifest.manifest_hash.as_str()),
            ("config_hash", cfg_hash.as_str()),
            ("fingerprint", fp.as_str()),
        ],
    )?;
    manifest.add_artifact(out, "data.csv")?;
    manifest.save(out)?;
    println!(
        "wrote {} bars for {} stocks to {}",
        panel.num_bars(),
        panel.num_stocks(),
        out.join("data.csv").display()
    );
    println!("fingerprint: {fp}");
    println!("manifest: {}", manifest.manifest_hash);
    Ok(())
}

pub struct TrainParams {
    pub cfg: RunConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Number of consecutive seeds to train (1 = just the config seed).
    pub repeat: usize,
    pub resume: bool,
}

#[derive(Debug, Serialize)]
struct SeedRow {
    seed: u64,
    epochs: usize,
    best_dev_mse: Option<f64>,
}

#[derive(Serialize)]
struct RepeatSummary<'a> {
    manifest_hash: &'a str,
    rows: &'a [SeedRow],
    dev_mse_mean: Option<f64>,
    dev_mse_std: Option<f64>,
}

const TRAIN_ARTIFACTS: [&str; 4] =
    ["model_best.ckpt", "model_last.ckpt", "train_log.jsonl", "loss_curve.svg"];

pub fn run_train(p: &TrainParams) -> Result<()> {
    if p.repeat == 0 {
        return Err(Error::config("--repeat must be at least 1"));
    }
    std::fs::create_dir_all(&p.out)?;
    let prepared = prepare(&p.cfg, &p.data)?;
    report_data_notes(&prepared);

    let seeds: Vec<u64> = (0..p.repeat as u64).map(|k| p.cfg.seed + k).collect();
    let mut manifest =
        RunManifest::new("train", &p.cfg.canonical_text(), &p.cfg.hash(), p.cfg.seed);
    manifest.data_path = Some(absolute(&p.data).display().to_string());
    manifest.data_fingerprint = Some(prepared.fingerprint.clone());
    if p.repeat > 1 {
        manifest.seeds = Some(seeds.clone());
    }
    manifest.seal_identity();
    let stamp = manifest.manifest_hash.clone();

    let mut rows = Vec::new();
    if p.repeat == 1 {
        let row = train_one(&p.cfg, &p.out, p.resume, &stamp, &prepared)?;
        for name in TRAIN_ARTIFACTS {
            manifest.add_artifact(&p.out, name)?;
        }
        rows.push(row);
    } else {
        for &seed in &seeds {
            let mut cfg_s = p.cfg.clone();
            cfg_s.seed = seed;
            let dir = p.out.join(format!("seed-{seed}"));
            let row = train_one(&cfg_s, &dir, p.resume, &stamp, &prepared)?;
            for name in TRAIN_ARTIFACTS {
                manifest.add_artifact(&p.out, &format!("seed-{seed}/{name}"))?;
            }
            rows.push(row);
        }
        let present: Vec<f64> = rows.iter().filter_map(|r| r.best_dev_mse).collect();
        let summary = RepeatSummary {
            manifest_hash: &stamp,
            rows: &rows,
            dev_mse_mean: mean(&present),
            dev_mse_std: sample_std(&present),
        };
        std::fs::write(
            p.out.join("summary.json"),
            serde_json::to_string_pretty(&summary)? + "\n",
        )?;
        manifest.add_artifact(&p.out, "summary.json")?;
    }
    manifest.save(&p.out)?;

    for row in &rows {
        println!(
            "seed {}: {} epochs, best dev MSE {}",
            row.seed,
            row.epochs,
            row.best_dev_mse.map_or("n/a".to_string(), |v| format!("{v:.6}"))
        );
    }
    if p.repeat > 1 {
        let present: Vec<f64> = rows.iter().filter_map(|r| r.best_dev_mse).collect();
        if let (Some(m), Some(s)) = (mean(&present), sample_std(&present)) {
            println!("dev MSE over {} seeds: {m:.6} +- {s:.6}", present.len());
        }
    }
    println!("manifest: {stamp}");
    Ok(())
}

fn write_model(model: &MetaModel, path: &Path, stamp: &str, data_fp: &str) -> Result<()> {
    let mut ckpt = model.to_checkpoint()?;
    ckpt.set_meta("manifest", stamp);
    ckpt.set_meta("data_fingerprint", data_fp);
    ckpt.write_file(path)
}

fn train_one(
    cfg: &RunConfig,
    dir: &Path,
    resume: bool,
    stamp: &str,
    prepared: &PreparedData,
) -> Result<SeedRow> {
    std::fs::create_dir_all(dir)?;
    let last_path = dir.join("model_last.ckpt");
    let best_path = dir.join("model_best.ckpt");
    let log_path = dir.join("train_log.jsonl");

    let resume_model = if resume && last_path.exists() {
        let ckpt = Checkpoint::read_file(&last_path)?;
        if let Some(fp) = ckpt.meta("data_fingerprint") {
            if fp != prepared.fingerprint {
                return Err(Error::checkpoint(format!(
                    "resume checkpoint was trained on different data \
                     (fingerprint {fp}, input {})",
                    prepared.fingerprint
                )));
            }
        }
        Some(MetaModel::from_checkpoint(&ckpt)?)
    } else {
        None
    };

    let resumed = resume_model.is_some();
    // On resume, carry over the finished epoch lines under a header that
    // names this run; they are what an uninterrupted run would have
    // written, so the final log reads as one run.
    let carried: Vec<String> = if resumed && log_path.exists() {
        std::fs::read_to_string(&log_path)?
            .lines()
            .filter(|l| serde_json::from_str::<LoggedEpoch>(l).is_ok())
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut log = std::fs::File::create(&log_path)?;
    writeln!(log, "{}", serde_json::json!({ "manifest": stamp }))?;
    for line in &carried {
        writeln!(log, "{line}")?;
    }
    log.flush()?;

    let outcome = meta_train(&prepared.tasks, cfg, resume_model, |model, stats| {
        write_model(model, &last_path, stamp, &prepared.fingerprint)?;
        writeln!(log, "{}", serde_json::to_string(stats)?)?;
        log.flush()?;
        Ok(())
    })?;
    drop(log);

    write_model(&outcome.last, &last_path, stamp, &prepared.fingerprint)?;
    match &outcome.best {
        Some(best) => write_model(best, &best_path, stamp, &prepared.fingerprint)?,
        // A resumed run that never improved keeps the earlier best model.
        // Rewrite it under this run's stamp and config (resume permits an
        // epochs change only) so the file matches an uninterrupted run.
        None if resumed && best_path.exists() => {
            let mut best = MetaModel::from_checkpoint(&Checkpoint::read_file(&best_path)?)?;
            best.config = cfg.clone();
            write_model(&best, &best_path, stamp, &prepared.fingerprint)?;
        }
        None => write_model(&outcome.last, &best_path, stamp, &prepared.fingerprint)?,
    }

    let points = read_log_points(&log_path)?;
    std::fs::write(dir.join("loss_curve.svg"), plot::loss_curve_svg(stamp, &points))?;

    Ok(SeedRow {
        seed: cfg.seed,
        epochs: outcome.last.epochs_trained,
        best_dev_mse: outcome.last.best_dev_mse,
    })
}

#[derive(Deserialize)]
struct LoggedEpoch {
    epoch: usize,
    train_loss: f64,
    #[serde(default)]
    dev_mse: Option<f64>,
}

fn read_log_points(path: &Path) -> Result<Vec<plot::LossPoint>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|line| serde_json::from_str::<LoggedEpoch>(line).ok())
        .map(|e| plot::LossPoint { epoch: e.epoch, train: e.train_loss, dev: e.dev_mse })
        .collect())
}

pub struct EvalParams {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: Split,
    pub out: PathBuf,
    pub dump_predictions: bool,
    /// Adaptation seed; `None` uses the checkpoint config's seed.
    pub seed: Option<u64>,
}

pub fn run_eval(p: &EvalParams) -> Result<()> {
    let ckpt = Checkpoint::read_file(&p.checkpoint)?;
    let model = MetaModel::from_checkpoint(&ckpt)?;
    let cfg = model.config.clone();
    let seed = p.seed.unwrap_or(cfg.seed);

    let prepared = prepare(&cfg, &p.data)?;
    if let Some(train_fp) = ckpt.meta("data_fingerprint") {
        if train_fp != prepared.fingerprint {
            return Err(Error::checkpoint(format!(
                "checkpoint was trained on different data: it records fingerprint {train_fp} \
                 but {} has {}",
                p.data.display(),
                prepared.fingerprint
            )));
        }
    }
    std::fs::create_dir_all(&p.out)?;
    report_data_notes(&prepared);
    let unadapted = prepared.tasks.iter().filter(|t| t.train.is_empty()).count();
    if unadapted > 0 {
        println!("note: {unadapted} stocks have no training instances; predictions use the global state");
    }

    let mut manifest = RunManifest::new("eval", &cfg.canonical_text(), &cfg.hash(), seed);
    manifest.data_path = Some(absolute(&p.data).display().to_string());
    manifest.data_fingerprint = Some(prepared.fingerprint.clone());
    manifest.split = Some(p.split.as_str().to_string());
    manifest.checkpoint_path = Some(absolute(&p.checkpoint).display().to_string());
    manifest.seal_identity();
    let stamp = manifest.manifest_hash.clone();

    let (report, dpml_preds) =
        build_report(&model, &prepared, p.split, seed, &stamp)?;
    report.validate()?;

    std::fs::write(p.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let table = format!("# manifest: {stamp}\n{}", report.render_table());
    std::fs::write(p.out.join("report.txt"), &table)?;
    let bar_rows: Vec<(String, f64, f64, f64)> = report
        .models
        .iter()
        .map(|m| (m.model.clone(), m.metrics.mse, m.metrics.mae, m.metrics.acc))
        .collect();
    std::fs::write(
        p.out.join("metric_bars.svg"),
        plot::metric_bars_svg(&stamp, p.split.as_str(), &bar_rows),
    )?;
    let mut names = vec!["report.json", "report.txt", "metric_bars.svg"];
    if p.dump_predictions {
        write_predictions(&p.out.join("predictions.csv"), &stamp, &dpml_preds)?;
        names.push("predictions.csv");
    }
    for name in names {
        manifest.add_artifact(&p.out, name)?;
    }
    manifest.save(&p.out)?;

    print!("{}", report.render_table());
    println!("manifest: {stamp}");
    Ok(())
}

fn build_report(
    model: &MetaModel,
    prepared: &PreparedData,
    split: Split,
    seed: u64,
    stamp: &str,
) -> Result<(EvalReport, Vec<PredRecord>)> {
    let cfg = &model.config;
    let tasks = &prepared.tasks;
    let mut models = Vec::new();
    for kind in BaselineKind::ALL {
        let preds = predictions_for_baseline(kind, tasks, split);
        models.push(ModelReport::from_predictions(kind.label(), &preds));
    }

    let train_refs: Vec<&Instance> = tasks.iter().flat_map(|t| t.train.iter()).collect();
    let dev_refs: Vec<&Instance> = tasks.iter().flat_map(|t| t.dev.iter()).collect();
    let lin_spec = LinearFitSpec {
        epochs: cfg.baseline_epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.adam_lr,
        std_floor: cfg.std_floor,
    };
    let mut lin_rng = Rng::new(seed).derive("linear-baseline", 0);
    let lin = fit_linear_baseline(&train_refs, &dev_refs, &lin_spec, &mut lin_rng)?;
    let lin_preds = predictions_for_linear(&lin, tasks, split);
    models.push(ModelReport::from_predictions("Linear Regression", &lin_preds));

    let mut rng = Rng::new(seed).derive("inference", 0);
    let dpml_preds = predictions_for_model(model, tasks, split, &mut rng)?;
    models.push(ModelReport::from_predictions("DPML", &dpml_preds));

    let report = EvalReport {
        manifest_hash: stamp.to_string(),
        config_hash: cfg.hash(),
        data_fingerprint: prepared.fingerprint.clone(),
        seed,
        split: split.as_str().to_string(),
        models,
    };
    Ok((report, dpml_preds))
}

fn write_predictions(path: &Path, stamp: &str, preds: &[PredRecord]) -> Result<()> {
    let mut s = format!("# manifest: {stamp}\nstock_id,day,slot,y,y_hat,v_last\n");
    for p in preds {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.stock, p.day, p.slot, p.y, p.pred, p.v_last
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub struct AblateParams {
    pub cfg: RunConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    pub split: Split,
}

/// Comparison rows: display label, cell directory, flag to enable.
pub const ABLATION_CELLS: [(&str, &str, Option<&str>); 7] = [
    ("DPML", "full", None),
    ("w/o tasks", "no_tasks", Some("no_tasks")),
    ("w/o encoder", "no_encoder", Some("no_encoder")),
    ("w/o encoder,latent variables", "no_latent", Some("no_latent")),
    ("w/o encoder,decoder", "no_decoder", Some("no_decoder")),
    ("w/o inner meta-learning", "no_inner_meta", Some("no_inner_meta")),
    ("w/o unique decoder", "shared_decoder", Some("shared_decoder")),
];

#[derive(Serialize)]
struct AblateRow {
    label: String,
    flag: Option<String>,
    best_dev_mse: Option<f64>,
    mse: f64,
    mae: f64,
    acc: f64,
    count: usize,
}

#[derive(Serialize)]
struct AblateReport {
    manifest_hash: String,
    config_hash: String,
    data_fingerprint: String,
    split: String,
    rows: Vec<AblateRow>,
}

pub fn run_ablate(p: &AblateParams) -> Result<()> {
    if p.cfg.ablation.any() {
        return Err(Error::config(
            "ablate starts from the full model; clear ablation flags in the config",
        ));
    }
    std::fs::create_dir_all(&p.out)?;
    let prepared = prepare(&p.cfg, &p.data)?;
    report_data_notes(&prepared);

    let mut manifest =
        RunManifest::new("ablate", &p.cfg.canonical_text(), &p.cfg.hash(), p.cfg.seed);
    manifest.data_path = Some(absolute(&p.data).display().to_string());
    manifest.data_fingerprint = Some(prepared.fingerprint.clone());
    manifest.split = Some(p.split.as_str().to_string());
    manifest.seal_identity();
    let stamp = manifest.manifest_hash.clone();

    let mut rows = Vec::new();
    for (label, slug, flag) in ABLATION_CELLS {
        let mut cfg_c = p.cfg.clone();
        if let Some(f) = flag {
            cfg_c.ablation.set(f, true)?;
        }
        let dir = p.out.join("cells").join(slug);
        // Cells resume from their last checkpoint, so an interrupted sweep
        // picks up where it stopped.
        let seed_row = train_one(&cfg_c, &dir, true, &stamp, &prepared)?;
        let model =
            MetaModel::from_checkpoint(&Checkpoint::read_file(&dir.join("model_best.ckpt"))?)?;
        let mut rng = Rng::new(cfg_c.seed).derive("inference", 0);
        let preds = predictions_for_model(&model, &prepared.tasks, p.split, &mut rng)?;
        let m = compute_metrics(&preds);
        println!("{label}: test MSE {:.6} (best dev {:?})", m.mse, seed_row.best_dev_mse);
        rows.push(AblateRow {
            label: label.to_string(),
            flag: flag.map(str::to_string),
            best_dev_mse: seed_row.best_dev_mse,
            mse: m.mse,
            mae: m.mae,
            acc: m.acc,
            count: m.count,
        });
        for name in TRAIN_ARTIFACTS {
            manifest.add_artifact(&p.out, &format!("cells/{slug}/{name}"))?;
        }
    }

    let report = AblateReport {
        manifest_hash: stamp.clone(),
        config_hash: p.cfg.hash(),
        data_fingerprint: prepared.fingerprint.clone(),
        split: p.split.as_str().to_string(),
        rows,
    };
    std::fs::write(
        p.out.join("ablate_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let table = render_ablate_table(&report, &stamp);
    std::fs::write(p.out.join("ablate_table.txt"), &table)?;
    manifest.add_artifact(&p.out, "ablate_report.json")?;
    manifest.add_artifact(&p.out, "ablate_table.txt")?;
    manifest.save(&p.out)?;

    print!("{}", table.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
    println!("manifest: {stamp}");
    Ok(())
}

fn render_ablate_table(report: &AblateReport, stamp: &str) -> String {
    let mut out = format!("# manifest: {stamp}\n");
    out.push_str(&format!("split: {}\n", report.split));
    out.push_str(&format!(
        "{:<30}  {:>10}  {:>10}  {:>7}  {:>12}\n",
        "Ablation", "MSE", "MAE", "ACC", "best dev MSE"
    ));
    for r in &report.rows {
        out.push_str(&format!(
            "{:<30}  {:>10.4}  {:>10.4}  {:>7.3}  {:>12}\n",
            r.label,
            r.mse,
            r.mae,
            r.acc,
            r.best_dev_mse.map_or("n/a".to_string(), |v| format!("{v:.4}"))
        ));
    }
    out
}

pub fn run_verify(out: &Path) -> Result<()> {
    let manifest = RunManifest::load(out)?;
    let mut failures = Vec::new();

    for a in &manifest.artifacts {
        match hash_file(&out.join(&a.name)) {
            Ok(h) if h == a.sha256 => {}
            Ok(_) => failures.push(format!("{}: changed since the recorded run", a.name)),
            Err(_) => failures.push(format!("{}: missing", a.name)),
        }
    }

    let scratch = out.join(".verify-rerun");
    if scratch.exists() {
        std::fs::remove_dir_all(&scratch)?;
    }
    println!("re-running `{}` into {}", manifest.command, scratch.display());
    let rerun_result = rerun(&manifest, &scratch);
    match rerun_result {
        Ok(()) => {
            let fresh = RunManifest::load(&scratch)?;
            if fresh.manifest_hash != manifest.manifest_hash {
                failures.push(format!(
                    "identity drifted: rerun hash {} vs recorded {}",
                    fresh.manifest_hash, manifest.manifest_hash
                ));
            }
            for a in &manifest.artifacts {
                match fresh.artifact(&a.name) {
                    Some(f) if f.sha256 == a.sha256 => {}
                    Some(_) => failures.push(format!("{}: rerun produced different bytes", a.name)),
                    None => failures.push(format!("{}: rerun did not produce it", a.name)),
                }
            }
            for f in &fresh.artifacts {
                if manifest.artifact(&f.name).is_none() {
                    failures.push(format!("{}: rerun produced an unrecorded artifact", f.name));
                }
            }
        }
        Err(e) => failures.push(format!("rerun failed: {e}")),
    }
    std::fs::remove_dir_all(&scratch).ok();

    if failures.is_empty() {
        println!(
            "verified: {} artifacts of manifest {} reproduce exactly",
            manifest.artifacts.len(),
            manifest.manifest_hash
        );
        Ok(())
    } else {
        Err(Error::Verify(format!(
            "{} problem(s):\n  {}",
            failures.len(),
            failures.join("\n  ")
        )))
    }
}

fn rerun(m: &RunManifest, out: &Path) -> Result<()> {
    let cfg = RunConfig::parse_text(&m.config)?;
    let data = || -> Result<PathBuf> {
        m.data_path
            .clone()
            .map(PathBuf::from)
            .ok_or_else(|| Error::data("manifest records no data path"))
    };
    let split = || -> Result<Split> {
        Split::parse(m.split.as_deref().ok_or_else(|| Error::data("manifest records no split"))?)
    };
    match m.command.as_str() {
        "gen-data" => run_gen_data(&cfg, out),
        "train" => run_train(&TrainParams {
            cfg,
            data: data()?,
            out: out.to_path_buf(),
            repeat: m.seeds.as_ref().map_or(1, Vec::len),
            resume: false,
        }),
        "eval" => run_eval(&EvalParams {
            checkpoint: PathBuf::from(
                m.checkpoint_path
                    .clone()
                    .ok_or_else(|| Error::data("manifest records no checkpoint path"))?,
            ),
            data: data()?,
            split: split()?,
            out: out.to_path_buf(),
            dump_predictions: m.artifact("predictions.csv").is_some(),
            seed: Some(m.seed),
        }),
        "ablate" => run_ablate(&AblateParams {
            cfg,
            data: data()?,
            out: out.to_path_buf(),
            split: split()?,
        }),
        other => Err(Error::data(format!("manifest has unknown command {other:?}"))),
    }
}

fn mean(vals: &[f64]) -> Option<f64> {
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn sample_std(vals: &[f64]) -> Option<f64> {
    let m = mean(vals)?;
    if vals.len() < 2 {
        return Some(0.0);
    }
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() - 1) as f64;
    Some(var.sqrt())
}
