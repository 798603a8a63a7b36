use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use crate::codec::DctCodec;
use crate::error::{Error, Result};
use crate::experiments::{
    bootstrap_depth_selection, build_ladder, calibrate_rmse, codec_correlation_study, confident_search, depth_sweep,
    first_layer_attribution, pe_transfer, power_chart, power_law_from_records, seed_variation, width_sweep,
    write_power_csv, write_sweep_csv, ArchLadder, Chart, Series,
};
use crate::harness::{
    corpus_hash, default_workers, run_jobs, sample_config, summarize_with, write_histogram_csv, HistogramBin, Job,
    Manifest, ManifestHeader, RunOptions, SamplingSpec,
};
use crate::imaging::ImageTensor;
use crate::ntk::{
    default_snapshot_steps, snapshot_extrapolate, write_curves_csv, KernelScale, NtkOptions, SnapshotStudy, SpectrumRoute,
};
use crate::predictors::{
    extrapolate_from_step, feature_ablation, fit_codec_proxy, gp_input, mlp_fit, CodecFeatures, EncodingRanges,
    FeatureGroup, GpModel, GpOptions, ImageFeatures, MetricReport, MlpConfig, MlpRow, PsnrPredictor, Query, SavedModel,
};
use crate::rng;
use crate::siren::TrainRecord;

use super::args::{ArchArgs, Cli, Command, ExperimentCommand, MlpArgs, ModelKind, RouteArg, ScaleArg, SpecArgs};
use super::inputs::{parse_list, siren_config, single_image, Corpus};
use super::{usage, CliResult};

fn print_json(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json values serialize"));
}

fn load_completed(path: &Path) -> Result<(Manifest, Vec<TrainRecord>)> {
    let m = Manifest::load(path)?;
    let recs: Vec<TrainRecord> = m.completed().filter(|r| r.max_psnr.is_finite()).cloned().collect();
    if recs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((m, recs))
}

/// Codec features per image id, computed once per image.
fn features_by_image(images: &HashMap<String, Arc<ImageTensor>>) -> Result<HashMap<String, Vec<f64>>> {
    let fx = CodecFeatures::default();
    let mut ids: Vec<&String> = images.keys().collect();
    ids.sort();
    ids.into_iter()
        .map(|id| Ok((id.clone(), fx.extract(&images[id])?)))
        .collect()
}

fn write_predictions(path: &Path, rows: &[(String, String, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["record_id", "image_id", "actual_psnr", "predicted_psnr"])?;
    for (r, i, a, p) in rows {
        w.write_record([r.clone(), i.clone(), a.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn histogram_chart(bins: &[HistogramBin], n: usize) -> Chart {
    let pts = bins.iter().map(|b| (0.5 * (b.lo + b.hi), b.count as f64)).collect();
    Chart::new(&format!("Max PSNR over {n} runs"), "max PSNR (dB)", "runs").with(Series::line("count", pts))
}

fn spec_from(a: &SpecArgs) -> SamplingSpec {
    SamplingSpec {
        image_size_min: a.size_min,
        image_size_max: a.size_max,
        depth_min: a.depth_min,
        depth_max: a.depth_max,
        bpp_min: a.bpp_min,
        bpp_max: a.bpp_max,
        gamma_min: a.gamma_min,
        gamma_max: a.gamma_max,
        steps: a.steps,
        learning_rate: a.learning_rate,
    }
}

fn mlp_config(a: &MlpArgs) -> CliResult<MlpConfig> {
    Ok(MlpConfig {
        hidden: parse_list(&a.hidden, "hidden")?,
        learning_rate: a.mlp_lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    })
}

/// Ranges from the manifest's sampling spec, else the span of the records.
fn encoding_ranges(m: &Manifest, recs: &[TrainRecord]) -> EncodingRanges {
    if let Some(s) = &m.header.sampling {
        return EncodingRanges::from_spec(s);
    }
    let span = |f: &dyn Fn(&TrainRecord) -> f64| {
        recs.iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
    };
    EncodingRanges {
        width: span(&|r| r.config.width as f64),
        depth: span(&|r| r.config.depth as f64),
        size: span(&|r| r.config.image_size as f64),
        omega0: span(&|r| r.config.omega0),
    }
}

fn mlp_rows(recs: &[TrainRecord], corpus: &Corpus) -> Result<Vec<MlpRow>> {
    let refs: Vec<&TrainRecord> = recs.iter().collect();
    let feats = features_by_image(&corpus.for_records(&refs)?)?;
    Ok(recs
        .iter()
        .map(|r| MlpRow {
            config: r.config.clone(),
            image_features: feats[&r.image_id].clone(),
            target: r.max_psnr,
        })
        .collect())
}

fn load_model(path: &Path, kind: Option<ModelKind>) -> CliResult<SavedModel> {
    let m = SavedModel::load(path)?;
    if let Some(k) = kind {
        let want = match k {
            ModelKind::Extrapolate => "extrapolate",
            ModelKind::Proxy => "proxy",
            ModelKind::Gp => "gp",
            ModelKind::Mlp => "mlp",
        };
        if m.kind_name() != want {
            return usage(format!("{} holds a {} model, not {want}", path.display(), m.kind_name()));
        }
    }
    Ok(m)
}

fn save_model(model: &SavedModel, out: &Path) -> Result<PathBuf> {
    let p = out.join(format!("{}.bin", model.kind_name()));
    model.save(&p)?;
    Ok(p)
}

fn report_json(r: &MetricReport) -> serde_json::Value {
    json!({"rmse": r.rmse, "explained_variance": r.explained_variance, "n": r.n})
}

pub(super) fn execute(cli: Cli) -> CliResult<()> {
    let workers = cli.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return usage("--workers must be at least 1");
    }
    let out = cli.out;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    match cli.command {
        Command::Train { image, arch } => train(&out, workers, &image, &arch),
        Command::GenDataset {
            corpus,
            spec,
            per_image,
            size,
            seed,
            manifest,
        } => gen_dataset(&out, workers, &corpus, &spec, per_image, size, seed, manifest),
        Command::Summarize { manifest, bin_width } => {
            let m = Manifest::load(&manifest)?;
            let s = summarize_with(&m, bin_width)?;
            write_histogram_csv(&out.join("histogram.csv"), &s.histogram)?;
            histogram_chart(&s.histogram, s.n).save(&out.join("histogram.svg"))?;
            print_json(json!({
                "n": s.n, "mean": s.mean, "std": s.std, "min": s.min, "max": s.max,
                "perfect": s.perfect, "failed": s.failed,
            }));
            Ok(())
        }
        Command::Predict {
            model,
            kind,
            image,
            arch,
            early_psnr,
            manifest,
            corpus,
        } => {
            let model = load_model(&model, kind)?;
            match manifest {
                Some(mp) => predict_batch(&out, &model, &mp, &corpus),
                None => {
                    let img = single_image(&image)?;
                    let cfg = siren_config(&arch, img.width);
                    let mut q = Query::new(&cfg, &img);
                    q.early_psnr = early_psnr;
                    let p = model.predict(&q)?;
                    print_json(json!({"model": model.kind_name(), "image_id": img.id, "predicted_psnr": p}));
                    Ok(())
                }
            }
        }
        Command::FitExtrapolate { manifest, m, n } => {
            let (_, recs) = load_completed(&manifest)?;
            let n = match n {
                Some(n) => n,
                None => recs
                    .iter()
                    .map(|r| r.loss_curve.last().map(|p| p.step).unwrap_or(0))
                    .min()
                    .unwrap_or(0),
            };
            let fit = extrapolate_from_step(&recs, m, n)?;
            let mut w = csv::Writer::from_path(out.join("extrapolate.csv"))?;
            w.write_record(["record_id", "psnr_m", "psnr_n", "predicted"])?;
            for r in &recs {
                if let (Some(a), Some(b)) = (r.max_psnr_until(m), r.max_psnr_until(n)) {
                    w.write_record([r.id.clone(), a.to_string(), b.to_string(), fit.predict(a).to_string()])?;
                }
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            let p = save_model(&SavedModel::Extrapolation(fit), &out)?;
            print_json(json!({
                "m": m, "n": n, "slope": fit.fit.slope, "intercept": fit.fit.intercept,
                "report": report_json(&fit.report), "model": p,
            }));
            Ok(())
        }
        Command::FitProxy { manifest, corpus } => {
            let (_, recs) = load_completed(&manifest)?;
            let corpus = Corpus::from_args(&corpus)?;
            let refs: Vec<&TrainRecord> = recs.iter().collect();
            let imgs = corpus.for_records(&refs)?;
            let images: Vec<&ImageTensor> = recs.iter().map(|r| imgs[&r.image_id].as_ref()).collect();
            let psnrs: Vec<f64> = recs.iter().map(|r| r.max_psnr).collect();
            let fit = fit_codec_proxy(&images, &psnrs)?;
            let codec = DctCodec::default();
            let rows = recs
                .iter()
                .zip(&images)
                .map(|(r, img)| Ok((r.id.clone(), r.image_id.clone(), r.max_psnr, fit.predict(&codec, img)?)))
                .collect::<Result<Vec<_>>>()?;
            write_predictions(&out.join("proxy.csv"), &rows)?;
            let p = save_model(&SavedModel::Proxy(fit), &out)?;
            print_json(json!({
                "ratio": fit.ratio, "slope": fit.fit.slope, "intercept": fit.fit.intercept,
                "report": report_json(&fit.report), "model": p,
            }));
            Ok(())
        }
        Command::FitGp {
            manifest,
            corpus,
            starts,
            iterations,
            max_points,
            seed,
        } => {
            let (_, mut recs) = load_completed(&manifest)?;
            if max_points == 0 {
                return usage("--max-points must be at least 1");
            }
            if recs.len() > max_points {
                rng::shuffle(&mut rng::stream(seed, 0x6770), &mut recs);
                recs.truncate(max_points);
                log::info!("subsampled to {max_points} records");
            }
            let corpus = Corpus::from_args(&corpus)?;
            let refs: Vec<&TrainRecord> = recs.iter().collect();
            let feats = features_by_image(&corpus.for_records(&refs)?)?;
            let x: Vec<f64> = recs
                .iter()
                .flat_map(|r| gp_input(&r.config, &feats[&r.image_id]))
                .collect();
            let y: Vec<f64> = recs.iter().map(|r| r.max_psnr).collect();
            let opts = GpOptions {
                starts,
                iterations,
                seed,
                ..GpOptions::default()
            };
            let gp = GpModel::fit(&x, &y, &opts)?;
            let mut w = csv::Writer::from_path(out.join("gp.csv"))?;
            w.write_record(["record_id", "image_id", "actual_psnr", "predicted_psnr", "predicted_std"])?;
            let mut preds = Vec::with_capacity(recs.len());
            for r in &recs {
                let (mu, var) = gp.predict(&gp_input(&r.config, &feats[&r.image_id]))?;
                preds.push(mu);
                w.write_record([
                    r.id.clone(),
                    r.image_id.clone(),
                    r.max_psnr.to_string(),
                    mu.to_string(),
                    var.max(0.0).sqrt().to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            let report = MetricReport::compute(&preds, &y)?;
            let hyper = gp.hyper;
            let p = save_model(&SavedModel::Gp(gp), &out)?;
            print_json(json!({
                "signal_var": hyper.signal_var, "length_scale": hyper.length_scale, "noise_var": hyper.noise_var,
                "in_sample": report_json(&report), "model": p,
            }));
            Ok(())
        }
        Command::FitMlp { manifest, corpus, mlp } => {
            let (m, recs) = load_completed(&manifest)?;
            let rows = mlp_rows(&recs, &Corpus::from_args(&corpus)?)?;
            let net = mlp_fit(&rows, &encoding_ranges(&m, &recs), &mlp_config(&mlp)?)?;
            let mut w = csv::Writer::from_path(out.join("mlp.csv"))?;
            w.write_record(["split", "rmse", "explained_variance"])?;
            for (name, r) in [("val", net.val_report), ("test", net.test_report)] {
                if let Some(r) = r {
                    w.write_record([name.to_string(), r.rmse.to_string(), r.explained_variance.to_string()])?;
                }
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            let (val, test) = (net.val_report, net.test_report);
            let epoch = net.best_epoch;
            let p = save_model(&SavedModel::Mlp(net), &out)?;
            print_json(json!({
                "best_epoch": epoch,
                "val": val.as_ref().map(report_json),
                "test": test.as_ref().map(report_json),
                "model": p,
            }));
            Ok(())
        }
        Command::Ablate {
            manifest,
            corpus,
            mlp,
            groups,
        } => {
            let groups = match groups {
                Some(g) => g
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(FeatureGroup::parse)
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| super::CliError::Usage(e.to_string()))?,
                None => FeatureGroup::standard(),
            };
            let (m, recs) = load_completed(&manifest)?;
            let rows = mlp_rows(&recs, &Corpus::from_args(&corpus)?)?;
            let table = feature_ablation(&rows, &encoding_ranges(&m, &recs), &mlp_config(&mlp)?, &groups)?;
            let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
            w.write_record(["removed", "rmse", "explained_variance"])?;
            for r in &table {
                w.write_record([r.removed.clone(), r.rmse.to_string(), r.explained_variance.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            let pts = table.iter().enumerate().map(|(i, r)| (i as f64, r.rmse)).collect();
            let names: Vec<&str> = table.iter().map(|r| r.removed.as_str()).collect();
            Chart::new(&format!("Test RMSE by removed group: {}", names.join(", ")), "group index", "RMSE (dB)")
                .with(Series::points("rmse", pts))
                .save(&out.join("ablation.svg"))?;
            print_json(serde_json::to_value(&table).map_err(Error::from)?);
            Ok(())
        }
        Command::Ntk {
            image,
            arch,
            snapshots,
            horizon,
            eta,
            route,
            scale,
        } => {
            let img = single_image(&image)?;
            let cfg = siren_config(&arch, img.width);
            let steps = match snapshots {
                Some(s) => parse_list(&s, "snapshots")?,
                None => default_snapshot_steps(cfg.steps),
            };
            let opts = NtkOptions {
                eta,
                route: match route {
                    RouteArg::Auto => SpectrumRoute::Auto,
                    RouteArg::Dense => SpectrumRoute::Dense,
                    RouteArg::Gram => SpectrumRoute::Gram,
                },
                scale: match scale {
                    ScaleArg::Raw => KernelScale::Raw,
                    ScaleArg::Mse => KernelScale::MeanSquaredError,
                },
                ..NtkOptions::default()
            };
            let study = snapshot_extrapolate(&cfg, &img, &steps, &opts, horizon.unwrap_or(cfg.steps))?;
            write_curves_csv(&study, &out.join("ntk_curves.csv"))?;
            write_ntk_summary(&study, &out.join("ntk_summary.csv"))?;
            ntk_chart(&study).save(&out.join("ntk.svg"))?;
            print_json(json!({
                "max_psnr": study.record.max_psnr,
                "dc_psnr": study.dc_psnr,
                "snapshots": study.curves.iter().map(|c| json!({
                    "step": c.snapshot_step,
                    "eta_lambda_max": c.eta_lambda_max,
                    "divergence_step": c.divergence_step,
                    "asymptote_psnr": c.asymptote_psnr,
                })).collect::<Vec<_>>(),
            }));
            Ok(())
        }
        Command::Experiment { which } => experiment(&out, workers, which),
        Command::Ladder {
            manifest,
            model,
            buckets,
            corpus,
            size,
        } => {
            let (_, recs) = load_completed(&manifest)?;
            let model = load_model(&model, None)?;
            if matches!(model, SavedModel::Extrapolation(_)) {
                return usage("ladder calibration needs a predictor that works before training (proxy, gp or mlp)");
            }
            let ladder = build_ladder(&recs, buckets)?;
            let side = match size {
                Some(s) => s,
                None => {
                    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
                    for r in &recs {
                        *counts.entry(r.config.image_size).or_default() += 1;
                    }
                    counts.into_iter().max_by_key(|(s, c)| (*c, std::cmp::Reverse(*s))).map(|(s, _)| s).unwrap_or(64)
                }
            };
            let images = Corpus::from_args(&corpus)?.at_size(side);
            let ladder = calibrate_rmse(&ladder, &images, &model, workers)?;
            ladder.save(&out.join("ladder.json"))?;
            ladder.write_csv(&out.join("ladder.csv"))?;
            print_json(json!({
                "rungs": ladder.rungs.len(),
                "calibration_side": side,
                "ladder": out.join("ladder.json"),
            }));
            Ok(())
        }
        Command::Search {
            image,
            target_psnr,
            ladder,
            model,
        } => {
            let img = single_image(&image)?;
            let ladder = ArchLadder::load(&ladder)?;
            let model = load_model(&model, None)?;
            let r = confident_search(&img, target_psnr, &ladder, &model)?;
            let mut w = csv::Writer::from_path(out.join("search.csv"))?;
            w.write_record(["rung", "width", "depth", "omega0", "predicted_psnr", "rmse", "lower", "upper"])?;
            w.write_record([
                r.rung.to_string(),
                r.config.width.to_string(),
                r.config.depth.to_string(),
                r.config.omega0.to_string(),
                r.predicted_psnr.to_string(),
                r.rmse.to_string(),
                r.interval.0.to_string(),
                r.interval.1.to_string(),
            ])?;
            w.flush().map_err(|e| Error::io(&out, e))?;
            print_json(json!({
                "rung": r.rung, "width": r.config.width, "depth": r.config.depth, "omega0": r.config.omega0,
                "predicted_psnr": r.predicted_psnr, "interval": [r.interval.0, r.interval.1],
            }));
            Ok(())
        }
    }
}

fn train(out: &Path, workers: usize, image: &super::args::ImageArgs, arch: &ArchArgs) -> CliResult<()> {
    let img = Arc::new(single_image(image)?);
    let cfg = siren_config(arch, img.width);
    let header = ManifestHeader::new(None, corpus_hash([img.id.as_str()]));
    let path = out.join("manifest.jsonl");
    let m = run_jobs(&[Job::new(cfg, Arc::clone(&img))], &RunOptions::to_file(workers, &path, header))?;
    let r = &m.records[0];
    let curve = out.join(format!("curve_{}.csv", r.id));
    let mut w = csv::Writer::from_path(&curve)?;
    w.write_record(["step", "psnr"])?;
    for p in &r.loss_curve {
        w.write_record([p.step.to_string(), p.psnr.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&curve, e))?;
    let pts = r.loss_curve.iter().map(|p| (p.step as f64, p.psnr)).collect();
    Chart::new(&format!("Training curve {}", r.id), "step", "PSNR (dB)")
        .with(Series::line("psnr", pts))
        .save(&out.join(format!("curve_{}.svg", r.id)))?;
    if !r.status.is_ok() {
        return Err(Error::Training(format!("{:?}", r.status)).into());
    }
    print_json(json!({
        "id": r.id, "image_id": r.image_id, "max_psnr": r.max_psnr, "argmax_step": r.argmax_step,
        "params": r.config.param_count(), "bpp": r.config.bpp(), "seconds": r.wallclock_seconds,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_dataset(
    out: &Path,
    workers: usize,
    corpus: &super::args::CorpusArgs,
    spec: &SpecArgs,
    per_image: usize,
    size: Option<usize>,
    seed: u64,
    manifest: Option<PathBuf>,
) -> CliResult<()> {
    let spec = spec_from(spec);
    spec.validate()?;
    if per_image == 0 {
        return usage("--per-image must be at least 1");
    }
    let corpus = Corpus::from_args(corpus)?;
    let mut by_size: HashMap<usize, Vec<Arc<ImageTensor>>> = HashMap::new();
    let mut jobs = Vec::with_capacity(corpus.len() * per_image);
    for i in 0..corpus.len() {
        for k in 0..per_image {
            let mut r = rng::stream(seed, (i * per_image + k) as u64);
            let side = size.unwrap_or_else(|| spec.sample_image_size(&mut r));
            let imgs = by_size.entry(side).or_insert_with(|| corpus.at_size(side));
            let cfg = sample_config(&spec, &mut r, side)?;
            jobs.push(Job::new(cfg, Arc::clone(&imgs[i])));
        }
    }
    let hash = corpus_hash(jobs.iter().map(|j| j.image.id.as_str()));
    let path = manifest.unwrap_or_else(|| out.join("manifest.jsonl"));
    let m = run_jobs(&jobs, &RunOptions::to_file(workers, &path, ManifestHeader::new(Some(spec), hash)))?;
    let s = summarize_with(&m, 1.0)?;
    write_histogram_csv(&out.join("histogram.csv"), &s.histogram)?;
    histogram_chart(&s.histogram, s.n).save(&out.join("histogram.svg"))?;
    print_json(json!({
        "manifest": path, "jobs": jobs.len(), "completed": s.n + s.perfect, "failed": s.failed,
        "mean_psnr": s.mean, "std_psnr": s.std,
    }));
    Ok(())
}

fn predict_batch(out: &Path, model: &SavedModel, manifest: &Path, corpus: &super::args::CorpusArgs) -> CliResult<()> {
    let (_, recs) = load_completed(manifest)?;
    let rows = if let SavedModel::Extrapolation(e) = model {
        recs.iter()
            .filter_map(|r| r.max_psnr_until(e.m).map(|a| (r.id.clone(), r.image_id.clone(), r.max_psnr, e.predict(a))))
            .collect::<Vec<_>>()
    } else {
        let corpus = Corpus::from_args(corpus)?;
        let refs: Vec<&TrainRecord> = recs.iter().collect();
        let imgs = corpus.for_records(&refs)?;
        let feats = features_by_image(&imgs)?;
        recs.iter()
            .map(|r| {
                let mut q = Query::new(&r.config, &imgs[&r.image_id]);
                q.image_features = Some(&feats[&r.image_id]);
                Ok((r.id.clone(), r.image_id.clone(), r.max_psnr, model.predict(&q)?))
            })
            .collect::<Result<Vec<_>>>()?
    };
    write_predictions(&out.join("predictions.csv"), &rows)?;
    let pred: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let actual: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let report = MetricReport::compute(&pred, &actual)?;
    print_json(json!({"model": model.kind_name(), "report": report_json(&report)}));
    Ok(())
}

fn write_ntk_summary(study: &SnapshotStudy, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snapshot_step", "start_mse", "eta_lambda_max", "divergence_step", "asymptote_psnr", "dc_psnr"])?;
    for c in &study.curves {
        w.write_record([
            c.snapshot_step.to_string(),
            c.start_mse.to_string(),
            c.eta_lambda_max.to_string(),
            c.divergence_step.map(|d| d.to_string()).unwrap_or_default(),
            c.asymptote_psnr.to_string(),
            study.dc_psnr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ntk_chart(study: &SnapshotStudy) -> Chart {
    let mut ch = Chart::new(
        &format!("Linearized rollouts (DC {:.2} dB)", study.dc_psnr),
        "step",
        "PSNR (dB)",
    )
    .log_x()
    .with(Series::line(
        "training",
        study
            .record
            .loss_curve
            .iter()
            .filter(|p| p.step > 0)
            .map(|p| (p.step as f64, p.psnr))
            .collect(),
    ));
    for c in &study.curves {
        let pts = c
            .points
            .iter()
            .filter(|p| p.step > 0 && p.psnr.is_finite())
            .map(|p| (p.step as f64, p.psnr))
            .collect();
        ch = ch.with(Series::line(format!("from step {}", c.snapshot_step), pts));
    }
    ch
}

fn read_sweep_csv(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let field = |i: usize| row.get(i).ok_or_else(|| Error::Format(format!("{}: short row", path.display())));
        let depth: usize = field(0)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad depth", path.display())))?;
        let psnr: f64 = field(2)?
            .parse()
            .map_err(|_| Error::Format(format!("{}: bad PSNR", path.display())))?;
        by.entry(depth).or_default().push(psnr);
    }
    Ok(by.into_iter().collect())
}

fn experiment(out: &Path, workers: usize, which: ExperimentCommand) -> CliResult<()> {
    match which {
        ExperimentCommand::SeedVariation { image, arch, seeds } => {
            let img = Arc::new(single_image(&image)?);
            let sv = seed_variation(&siren_config(&arch, img.width), &img, seeds, workers)?;
            sv.write_csv(&out.join("seed_variation.csv"))?;
            sv.chart().save(&out.join("seed_variation.svg"))?;
            print_json(json!({"mean": sv.mean, "std": sv.std, "psnrs": sv.psnrs}));
        }
        ExperimentCommand::FirstLayer { image, arch, seeds } => {
            let img = Arc::new(single_image(&image)?);
            let a = first_layer_attribution(&siren_config(&arch, img.width), &img, seeds, workers)?;
            a.write_csv(&out.join("first_layer.csv"))?;
            a.chart().save(&out.join("first_layer.svg"))?;
            print_json(json!({
                "std_all": a.std_all, "std_fixed_first": a.std_fixed_first, "attribution": a.attribution,
                "f_statistic": a.f_statistic, "p_value": a.p_value,
            }));
        }
        ExperimentCommand::PeTransfer {
            corpus,
            size,
            arch,
            seeds,
        } => {
            let images = Corpus::from_args(&corpus)?.at_size(size);
            let t = pe_transfer(&siren_config(&arch, size), &images, seeds, workers)?;
            t.write_csv(&out.join("pe_transfer.csv"))?;
            t.chart().save(&out.join("pe_transfer.svg"))?;
            print_json(json!({"delta_same": t.delta_same, "delta_cross": t.delta_cross}));
        }
        ExperimentCommand::BootstrapDepth {
            image,
            arch,
            depths,
            seeds,
            resamples,
            from_sweep,
        } => {
            let sweep = match from_sweep {
                Some(p) => read_sweep_csv(&p)?,
                None => {
                    let img = Arc::new(single_image(&image)?);
                    let depths: Vec<usize> = parse_list(&depths, "depths")?;
                    let s = depth_sweep(&siren_config(&arch, img.width), &depths, seeds, &img, workers)?;
                    write_sweep_csv(&s, &out.join("depth_sweep.csv"))?;
                    s
                }
            };
            let sel = bootstrap_depth_selection(&sweep, resamples, arch.seed)?;
            sel.write_csv(&out.join("bootstrap.csv"))?;
            sel.chart().save(&out.join("bootstrap.svg"))?;
            print_json(json!({"interval": [sel.lo, sel.hi], "counts": sel.counts, "resamples": sel.resamples}));
        }
        ExperimentCommand::PowerLaw {
            corpus,
            size,
            arch,
            widths,
        } => {
            let widths: Vec<usize> = parse_list(&widths, "widths")?;
            let images = Corpus::from_args(&corpus)?.at_size(size);
            let template = siren_config(&arch, size);
            let mut w = csv::Writer::from_path(out.join("power_law_fits.csv"))?;
            w.write_record(["image_id", "slope_per_doubling", "intercept", "r2", "implied_manifold_dim"])?;
            let mut fits = Vec::new();
            for (k, img) in images.iter().enumerate() {
                let recs = width_sweep(&template, &widths, img, workers)?;
                let fit = power_law_from_records(&recs)?;
                write_power_csv(&recs, &fit, &out.join(format!("power_law_{k}.csv")))?;
                power_chart(&recs, &fit).save(&out.join(format!("power_law_{k}.svg")))?;
                w.write_record([
                    img.id.clone(),
                    fit.slope_per_doubling.to_string(),
                    fit.intercept.to_string(),
                    fit.r2.to_string(),
                    fit.implied_manifold_dim.to_string(),
                ])?;
                fits.push(json!({"image_id": img.id, "fit": fit}));
            }
            w.flush().map_err(|e| Error::io(out, e))?;
            print_json(json!(fits));
        }
        ExperimentCommand::CodecCorrelation { manifest, corpus } => {
            let (_, recs) = load_completed(&manifest)?;
            let refs: Vec<&TrainRecord> = recs.iter().collect();
            let imgs = Corpus::from_args(&corpus)?.for_records(&refs)?;
            let images: Vec<ImageTensor> = imgs.values().map(|i| i.as_ref().clone()).collect();
            let rep = codec_correlation_study(&recs, &images, &DctCodec::default())?;
            rep.write_csv(&out.join("correlation.csv"))?;
            rep.chart().save(&out.join("correlation.svg"))?;
            rep.rate_chart().save(&out.join("equal_rate.svg"))?;
            print_json(json!({
                "ratio": rep.proxy.ratio, "report": report_json(&rep.proxy.report), "rows": rep.rows.len(),
            }));
        }
    }
    Ok(())
}
