//! Subcommand implementations. Every command writes its resolved config and
//! the toolkit version next to its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use semidense::corruption::{corrupt, CorruptionConfig};
use semidense::data::{
    generate_scene, read_dataset, read_depth_png16, write_dataset, DatasetMeta, SceneConfig, Split,
};
use semidense::losses::LossKind;
use semidense::metrics::{evaluate, MetricReport, DELTA_THRESHOLDS};
use semidense::network::{Checkpoint, Model, SizeTier, Variant};
use semidense::oracles::oracle_metrics;
use semidense::trainer::{
    evaluate_mean_fill, evaluate_model, evaluation_pairs, split_validation, PairConfig, Strategy, Trainer,
};
use semidense::{DepthMap, RgbdSample};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::plot::{line_chart_svg, write_panels, Series};

/// Tolerance for `--check-oracle`.
const ORACLE_TOLERANCE: f64 = 1e-9;

pub fn gen_data(cfg: &ExperimentConfig, n: usize, test: usize) -> Result<()> {
    if test > n {
        bail!("--test ({test}) exceeds --n ({n})");
    }
    let out = &cfg.out_dir;
    let samples = (0..n)
        .map(|i| {
            generate_scene(&SceneConfig {
                rng_seed: cfg.scene.rng_seed.wrapping_add(i as u64),
                ..cfg.scene.clone()
            })
        })
        .collect::<semidense::Result<Vec<_>>>()?;
    let mut meta = DatasetMeta::all_train(cfg.profile.clone(), n, true);
    meta.test = meta.train.split_off(n - test);
    write_dataset(out, &samples, &meta).with_context(|| format!("writing dataset to {}", out.display()))?;
    cfg.dump(out)?;
    eprintln!("wrote {n} samples ({test} test) to {}", out.display());
    Ok(())
}

/// Rewrites a dataset with corrupted sensor maps; sample `i` uses seed
/// `rng_seed + i`. The uncorrupted target becomes the ground truth.
pub fn corrupt_dataset(cfg: &ExperimentConfig, data: &Path) -> Result<()> {
    let (mut meta, samples) = read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let base: &CorruptionConfig = &cfg.train.pairs.corruption;
    let mut records = Vec::with_capacity(samples.len());
    let out = samples
        .iter()
        .enumerate()
        .map(|(i, s)| -> Result<RgbdSample> {
            let target = s.gt.clone().unwrap_or_else(|| s.sensor.clone());
            let with_target = RgbdSample::new(s.rgb.clone(), s.sensor.clone(), Some(target.clone()))?;
            let c = CorruptionConfig {
                rng_seed: base.rng_seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let sensor = corrupt(&with_target, &c)?;
            let valid = target.valid_count();
            records.push(CorruptionRecord {
                index: i,
                rng_seed: c.rng_seed,
                zeroed_fraction: if valid == 0 { 0.0 } else { 1.0 - sensor.valid_count() as f64 / valid as f64 },
            });
            Ok(RgbdSample::new(s.rgb.clone(), sensor, Some(target))?)
        })
        .collect::<Result<Vec<_>>>()?;
    meta.has_gt = true;
    write_dataset(&cfg.out_dir, &out, &meta)?;
    let mean = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.zeroed_fraction).sum::<f64>() / records.len() as f64
    };
    let sidecar = serde_json::json!({
        "config": base,
        "mean_zeroed_fraction": mean,
        "samples": records,
    });
    fs::write(cfg.out_dir.join("corruption.json"), serde_json::to_string_pretty(&sidecar)?)?;
    cfg.dump(&cfg.out_dir)?;
    eprintln!(
        "corrupted {} samples into {} (mean zeroed fraction {mean:.3})",
        out.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

/// Sidecar entry: zeroed fraction is relative to the target's valid pixels.
#[derive(Serialize)]
struct CorruptionRecord {
    index: usize,
    rng_seed: u64,
    zeroed_fraction: f64,
}

fn select(samples: &[RgbdSample], idx: &[usize]) -> Vec<RgbdSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

struct Splits {
    train: Vec<RgbdSample>,
    val: Vec<RgbdSample>,
    test: Vec<RgbdSample>,
}

fn load_splits(data: &Path, seed: u64) -> Result<Splits> {
    let (meta, samples) = read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let train_all = meta.indices(Split::Train);
    if train_all.is_empty() {
        bail!("dataset {} has no training samples", data.display());
    }
    let (train, val) = if meta.val.is_empty() {
        let (t, v) = split_validation(train_all.len(), 0.1, seed);
        (
            t.iter().map(|&i| train_all[i]).collect::<Vec<_>>(),
            v.iter().map(|&i| train_all[i]).collect::<Vec<_>>(),
        )
    } else {
        (train_all.to_vec(), meta.val.clone())
    };
    Ok(Splits {
        train: select(&samples, &train),
        val: select(&samples, &val),
        test: select(&samples, meta.indices(Split::Test)),
    })
}

fn train_one(cfg: &ExperimentConfig, model: Model, splits: &Splits, out: Option<&Path>) -> Result<Trainer> {
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    run_trainer(&mut trainer, splits, out)?;
    Ok(trainer)
}

fn run_trainer(trainer: &mut Trainer, splits: &Splits, out: Option<&Path>) -> Result<()> {
    trainer.fit(&splits.train, &splits.val, |t| {
        let e = t.history().epochs.last().expect("epoch finished");
        let val = e.val.as_ref().map(|r| format!(" val_rmse {:.4}", r.rmse)).unwrap_or_default();
        eprintln!("epoch {:>3} loss {:.5}{val} ({:.1}s)", e.epoch, e.train_loss, e.seconds);
        if let Some(dir) = out {
            t.save(dir.join("checkpoint.ckpt"))?;
            fs::write(dir.join("history.json"), serde_json::to_string_pretty(t.history())?)?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, data: &Path, resume: Option<&Path>) -> Result<()> {
    let out = &cfg.out_dir;
    cfg.dump(out)?;
    let splits = load_splits(data, cfg.seed)?;
    let mut trainer = match resume {
        Some(path) => {
            let mut t = Trainer::resume(path).with_context(|| format!("resuming from {}", path.display()))?;
            t.set_epochs(cfg.train.epochs)?;
            eprintln!("resuming after epoch {}", t.epochs_done());
            t
        }
        None => Trainer::new(Model::new(cfg.model_config())?, cfg.train.clone())?,
    };
    run_trainer(&mut trainer, &splits, Some(out))?;
    trainer.save(out.join("model.ckpt"))?;
    fs::write(out.join("history.json"), serde_json::to_string_pretty(trainer.history())?)?;
    eprintln!(
        "trained {} epochs; final loss {:.5}",
        trainer.epochs_done(),
        trainer.history().losses().last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct SampleReport {
    index: usize,
    report: MetricReport,
}

const TABLE_HEADER: &str = "rmse,mae,rel,d1.05,d1.10,d1.25,d1.25^2,d1.25^3,ssim,irmse,imae";

fn csv_fields(r: &MetricReport) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = format!("{:.6},{:.6},{:.6}", r.rmse, r.mae, r.rel);
    for d in r.delta {
        let _ = write!(s, ",{d:.6}");
    }
    let _ = write!(s, ",{:.6},{},{}", r.ssim, opt(r.irmse), opt(r.imae));
    s
}

fn text_table(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!(
        "{:<14} {:>8} {:>8} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "method", "RMSE", "MAE", "rel", "d1.05", "d1.10", "d1.25", "d1.25^2", "d1.25^3", "SSIM"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            name, r.rmse, r.mae, r.rel, r.delta[0], r.delta[1], r.delta[2], r.delta[3], r.delta[4], r.ssim
        );
    }
    s
}

fn write_reports(out: &Path, per_sample: &[SampleReport], rows: &[(String, MetricReport)]) -> Result<()> {
    fs::write(out.join("reports.json"), serde_json::to_string_pretty(per_sample)?)?;
    let mut csv = format!("method,{TABLE_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(csv, "{name},{}", csv_fields(r));
    }
    fs::write(out.join("aggregate.csv"), csv)?;
    let table = text_table(rows);
    fs::write(out.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn check_oracle(pred: &DepthMap, gt: &DepthMap, cfg: &ExperimentConfig, r: &MetricReport, index: usize) -> Result<()> {
    let o = oracle_metrics(pred, gt, &cfg.metrics)?;
    let pairs = [
        (r.rmse, o.rmse),
        (r.mae, o.mae),
        (r.rel, o.rel),
        (r.ssim, o.ssim),
        (r.irmse.unwrap_or(0.0), o.irmse.unwrap_or(0.0)),
        (r.imae.unwrap_or(0.0), o.imae.unwrap_or(0.0)),
    ];
    let ok = pairs.iter().all(|(a, b)| (a - b).abs() <= ORACLE_TOLERANCE) && r.delta == o.delta;
    if !ok {
        bail!("sample {index}: metrics disagree with the oracle ({r:?} vs {o:?})");
    }
    Ok(())
}

pub struct EvalArgs<'a> {
    pub data: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub pred: Option<&'a Path>,
    pub gt: Option<&'a Path>,
    pub split: Option<Split>,
    pub strategy: Option<Strategy>,
    pub check_oracle: bool,
    pub plots: usize,
}

pub fn eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<()> {
    let out = &cfg.out_dir;
    cfg.dump(out)?;
    match (args.pred, args.gt, args.data, args.checkpoint) {
        (Some(pred), Some(gt), _, _) => eval_directories(cfg, pred, gt, args),
        (_, _, Some(data), Some(ckpt)) => eval_model(cfg, data, ckpt, args),
        _ => bail!("eval needs either --pred and --gt, or --data and --checkpoint"),
    }
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn eval_directories(cfg: &ExperimentConfig, pred_dir: &Path, gt_dir: &Path, args: &EvalArgs) -> Result<()> {
    let scale = cfg.profile.depth_png_scale;
    let names = png_names(gt_dir)?;
    if names.is_empty() {
        bail!("no PNG files in {}", gt_dir.display());
    }
    let mut per_sample = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let gt = read_depth_png16(gt_dir.join(name), scale)?;
        let pred = read_depth_png16(pred_dir.join(name), scale)
            .with_context(|| format!("missing prediction {name} in {}", pred_dir.display()))?;
        let r = evaluate(&pred, &gt, &cfg.metrics)?;
        if args.check_oracle {
            check_oracle(&pred, &gt, cfg, &r, i)?;
        }
        per_sample.push(SampleReport { index: i, report: r });
    }
    let reports: Vec<MetricReport> = per_sample.iter().map(|s| s.report.clone()).collect();
    let rows = vec![("prediction".to_string(), MetricReport::mean(&reports)?)];
    write_reports(&cfg.out_dir, &per_sample, &rows)
}

fn eval_model(cfg: &ExperimentConfig, data: &Path, ckpt: &Path, args: &EvalArgs) -> Result<()> {
    let out = &cfg.out_dir;
    let model = Checkpoint::read(ckpt)
        .and_then(|c| c.to_model())
        .with_context(|| format!("loading {}", ckpt.display()))?;
    let (meta, samples) = read_dataset(data)?;
    let split = args.split.unwrap_or(if meta.test.is_empty() { Split::Train } else { Split::Test });
    let chosen = select(&samples, meta.indices(split));
    if chosen.is_empty() {
        bail!("split {split:?} of {} is empty", data.display());
    }
    let pairs_cfg = PairConfig {
        strategy: args.strategy.unwrap_or(cfg.train.pairs.strategy),
        ..cfg.train.pairs.clone()
    };
    let pairs = evaluation_pairs(&chosen, &pairs_cfg, cfg.seed)?;
    let plot_dir = out.join("plots");
    fs::create_dir_all(&plot_dir)?;
    let mut per_sample = Vec::new();
    for (i, (input, target)) in pairs.iter().enumerate() {
        let pred = model.predict_depth(input)?;
        let r = evaluate(&pred, target, &cfg.metrics)?;
        if args.check_oracle {
            check_oracle(&pred, target, cfg, &r, i)?;
        }
        if i < args.plots {
            let error = DepthMap::from_fn(pred.height(), pred.width(), |y, x| {
                let t = target.get(y, x);
                if t > 0.0 { (pred.get(y, x) - t).abs() } else { 0.0 }
            })?;
            let hi = target.values().iter().chain(pred.values()).fold(0.0f64, |a, &b| a.max(b));
            let lo = target
                .values()
                .iter()
                .chain(pred.values())
                .filter(|v| **v > 0.0)
                .fold(f64::INFINITY, |a, &b| a.min(b));
            write_panels(&plot_dir.join(format!("sample_{i:06}.png")), &[&input.sensor, &pred, target], lo, hi)?;
            let emax = error.values().iter().fold(0.0f64, |a, &b| a.max(b));
            write_panels(&plot_dir.join(format!("error_{i:06}.png")), &[&error], 0.0, emax)?;
        }
        per_sample.push(SampleReport { index: i, report: r });
    }
    let reports: Vec<MetricReport> = per_sample.iter().map(|s| s.report.clone()).collect();
    let rows = vec![
        (model.config().variant.name().to_string(), MetricReport::mean(&reports)?),
        ("mean_fill".to_string(), evaluate_mean_fill(&pairs, &cfg.metrics)?),
    ];
    write_reports(out, &per_sample, &rows)
}

fn test_or_val(splits: &Splits) -> &[RgbdSample] {
    if splits.test.is_empty() {
        &splits.val
    } else {
        &splits.test
    }
}

pub fn ablate_loss(cfg: &ExperimentConfig, data: &Path) -> Result<()> {
    let out = &cfg.out_dir;
    cfg.dump(out)?;
    let splits = load_splits(data, cfg.seed)?;
    let eval_set = test_or_val(&splits);
    if eval_set.is_empty() {
        bail!("dataset needs a test or validation split");
    }
    let pairs = evaluation_pairs(eval_set, &cfg.train.pairs, cfg.seed)?;
    let mut csv = String::from("loss,rmse,mae,rel");
    for t in DELTA_THRESHOLDS {
        let _ = write!(csv, ",d{t:.4}");
    }
    csv.push_str(",indoor_default\n");
    for kind in LossKind::ALL {
        eprintln!("training with {kind}");
        let mut c = cfg.clone();
        c.train.loss = kind;
        let trainer = train_one(&c, Model::new(cfg.model_config())?, &splits, None)?;
        let r = evaluate_model(trainer.model(), &pairs, &cfg.metrics)?;
        let _ = write!(csv, "{kind},{:.6},{:.6},{:.6}", r.rmse, r.mae, r.rel);
        for d in r.delta {
            let _ = write!(csv, ",{d:.6}");
        }
        let flag = if kind == LossKind::PairwiseLogL1 { "yes" } else { "no" };
        let _ = writeln!(csv, ",{flag}");
    }
    fs::write(out.join("loss_ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate_backbone(cfg: &ExperimentConfig, data: &Path, tiers: &[SizeTier]) -> Result<()> {
    let out = &cfg.out_dir;
    cfg.dump(out)?;
    let splits = load_splits(data, cfg.seed)?;
    let eval_set = test_or_val(&splits);
    if eval_set.is_empty() {
        bail!("dataset needs a test or validation split");
    }
    let pairs = evaluation_pairs(eval_set, &cfg.train.pairs, cfg.seed)?;
    let mut csv = String::from("variant,tier,parameters,rmse,mae\n");
    for variant in [Variant::DmLrn, Variant::Lrn] {
        for &tier in tiers {
            eprintln!("training {} {tier:?}", variant.name());
            let model = Model::new(cfg.model.build(variant, tier, cfg.seed))?;
            let params = model.parameter_count();
            let trainer = train_one(cfg, model, &splits, None)?;
            let r = evaluate_model(trainer.model(), &pairs, &cfg.metrics)?;
            let _ = writeln!(csv, "{},{tier:?},{params},{:.6},{:.6}", variant.name(), r.rmse, r.mae);
        }
    }
    let path = out.join("backbone.csv");
    fs::write(&path, &csv)?;
    fs::write(out.join("backbone.svg"), backbone_svg(&csv)?)?;
    print!("{csv}");
    Ok(())
}

/// RMSE-vs-tier chart from a `backbone.csv` body.
pub fn backbone_svg(csv: &str) -> Result<String> {
    let mut tiers: Vec<String> = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for line in csv.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 4 {
            bail!("malformed backbone row {line:?}");
        }
        let rmse: f64 = f[3].parse().with_context(|| format!("bad rmse in {line:?}"))?;
        if !tiers.iter().any(|t| t == f[1]) {
            tiers.push(f[1].to_string());
        }
        match series.iter_mut().find(|s| s.name == f[0]) {
            Some(s) => s.values.push(rmse),
            None => series.push(Series {
                name: f[0].to_string(),
                values: vec![rmse],
            }),
        }
    }
    Ok(line_chart_svg("Test RMSE by encoder size", &tiers, "RMSE (m)", &series))
}

/// Training-loss curve from a `history.json` body.
pub fn history_svg(json: &str) -> Result<String> {
    let history: semidense::trainer::TrainHistory = serde_json::from_str(json)?;
    let labels: Vec<String> = history.epochs.iter().map(|e| e.epoch.to_string()).collect();
    let mut series = vec![Series {
        name: "train loss".into(),
        values: history.losses(),
    }];
    if history.epochs.iter().all(|e| e.val.is_some()) && !history.epochs.is_empty() {
        series.push(Series {
            name: "val RMSE".into(),
            values: history.epochs.iter().map(|e| e.val.as_ref().map_or(f64::NAN, |v| v.rmse)).collect(),
        });
    }
    Ok(line_chart_svg("Training history", &labels, "value", &series))
}

pub fn plot(input: &Path, output: Option<PathBuf>) -> Result<PathBuf> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let svg = match input.extension().and_then(|e| e.to_str()) {
        Some("csv") => backbone_svg(&text)?,
        Some("json") => history_svg(&text)?,
        _ => bail!("plot expects a backbone .csv or a history .json file"),
    };
    let path = output.unwrap_or_else(|| input.with_extension("svg"));
    fs::write(&path, svg)?;
    Ok(path)
}
