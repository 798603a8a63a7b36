//! The twelve acceptance criteria, at desk scale. Each test writes one
//! `criterion N ...: PASS|FAIL` line to stderr before asserting.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use sirenlab::codec::{DctCodec, RateDistortion};
use sirenlab::experiments::{
    bootstrap_depth_selection, first_layer_attribution, power_law_from_records, seed_variation, select_rung,
    width_sweep,
};
use sirenlab::harness::{
    default_workers, run_jobs, sample_config, sample_config_with_target, Job, Manifest, ManifestHeader, RunOptions,
    SamplingSpec,
};
use sirenlab::imaging::{synth, ImageTensor};
use sirenlab::ntk::{snapshot_extrapolate, NtkOptions, NtkSpectrum};
use sirenlab::predictors::{
    extrapolate_from_step, fit_codec_proxy, fit_codec_proxy_with, gp_input, irreducible_error, rmse,
    CodecFeatures, GpModel, GpOptions, ImageFeatures, SEARCH_TOLERANCE,
};
use sirenlab::rng;
use sirenlab::siren::{init_siren, loss_and_grad, SirenConfig, TrainRecord, Workspace};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!("criterion {n:>2} {name}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

fn workers() -> usize {
    default_workers()
}

/// Desk dataset: `images` synthetic images with sides drawn from `[lo, hi]`,
/// `per_image` sampled configurations each.
fn desk_jobs(images: usize, per_image: usize, lo: usize, hi: usize, steps: usize, seed: u64) -> Vec<Job> {
    let spec = SamplingSpec {
        image_size_min: lo,
        image_size_max: hi,
        steps,
        ..SamplingSpec::default()
    };
    let mut jobs = Vec::new();
    for i in 0..images {
        let mut r = rng::stream(seed, i as u64);
        let size = spec.sample_image_size(&mut r);
        let img = Arc::new(synth::dead_leaves(size, seed * 10_000 + i as u64));
        for _ in 0..per_image {
            jobs.push(Job::new(sample_config(&spec, &mut r, size).unwrap(), Arc::clone(&img)));
        }
    }
    jobs
}

fn completed(jobs: &[Job]) -> Vec<TrainRecord> {
    let m = run_jobs(jobs, &RunOptions::in_memory(workers())).unwrap();
    m.completed().filter(|r| r.max_psnr.is_finite()).cloned().collect()
}

#[test]
fn c01_gradient_oracle() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for k in 0..100u64 {
        let mut r = rng::stream(0xC1, k);
        let width = rng::int_inclusive(&mut r, 2, 6);
        let depth = rng::int_inclusive(&mut r, 2, 4);
        let omega0 = rng::uniform(&mut r, 0.5, 5.0);
        let cfg = SirenConfig::new(width, depth, 0.1, 8, k);
        let w = init_siren(&cfg);
        let n = rng::int_inclusive(&mut r, 2, 6);
        let coords: Vec<f64> = (0..2 * n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let targets: Vec<f64> = (0..3 * n).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
        let (_, g) = loss_and_grad(&w, omega0, &coords, &targets).unwrap();
        let g = g.to_flat();
        let flat = w.to_flat();
        let mut probe = w.clone();
        let h = 1e-4;
        let mut ws = Workspace::new();
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            probe.set_flat(&p);
            let up = ws.loss(&probe, omega0, &coords, &targets).unwrap();
            p[i] -= 2.0 * h;
            probe.set_flat(&p);
            let down = ws.loss(&probe, omega0, &coords, &targets).unwrap();
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-6));
        }
        params += flat.len();
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        1,
        "gradient oracle",
        worst <= 1e-4 && secs < 60.0,
        &format!("100 nets, {params} parameters, worst relative error {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn c02_power_law() {
    let images = synth::corpus(3, 64, 2000);
    let template = SirenConfig::new(8, 10, 0.06, 64, 0).with_steps(1000);
    let mut ok = true;
    let mut parts = Vec::new();
    for img in images {
        let img = Arc::new(img);
        let recs = width_sweep(&template, &[8, 16, 32, 64], &img, workers()).unwrap();
        let fit = power_law_from_records(&recs).unwrap();
        ok &= fit.r2 >= 0.9 && (1.0..=4.0).contains(&fit.slope_per_doubling);
        parts.push(format!("slope {:.2} r2 {:.3}", fit.slope_per_doubling, fit.r2));
    }
    verdict(2, "power law", ok, &parts.join("; "));
}

#[test]
fn c03_extrapolation() {
    let jobs = desk_jobs(15, 4, 24, 32, 2000, 3);
    let recs = completed(&jobs);
    let ev: Vec<f64> = [20, 200, 1000]
        .iter()
        .map(|&m| extrapolate_from_step(&recs, m, 2000).unwrap().report.explained_variance)
        .collect();
    let ok = recs.len() >= 50 && ev[1] >= 0.85 && ev.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        3,
        "extrapolation",
        ok,
        &format!(
            "{} SIRENs, EV at m=20/200/1000: {:.3}/{:.3}/{:.3}",
            recs.len(),
            ev[0],
            ev[1],
            ev[2]
        ),
    );
}

#[test]
fn c04_irreducible_error() {
    let mut r = rng::stream(0xC4, 0);
    let pairs: Vec<(f64, f64)> = (0..10_000)
        .map(|_| {
            let mu = rng::uniform(&mut r, 20.0, 40.0);
            (mu + 0.2 * rng::normal(&mut r), mu + 0.2 * rng::normal(&mut r))
        })
        .collect();
    let est = irreducible_error(&pairs).unwrap();
    let hand = irreducible_error(&[(30.0, 31.0), (25.0, 25.0), (40.0, 38.0)]).unwrap();
    let ok = (est - 0.2).abs() <= 0.01 && (hand - 0.912_870_929).abs() <= 1e-6;
    verdict(4, "irreducible error", ok, &format!("estimate {est:.4}, hand example {hand:.7}"));
}

#[test]
fn c05_codec_proxy() {
    let imgs = synth::corpus(24, 32, 3000);
    let refs: Vec<&ImageTensor> = imgs.iter().collect();
    let codec = DctCodec {
        tolerance: SEARCH_TOLERANCE,
    };
    let planted: Vec<f64> = refs.iter().map(|i| codec.psnr_at_ratio(i, 25.0).unwrap()).collect();
    let p = fit_codec_proxy_with(&codec, &refs, &planted).unwrap();
    let planted_ok = (23.0..=27.0).contains(&p.ratio) && p.report.explained_variance >= 0.999;

    let cfg = SirenConfig::new(16, 4, 0.06, 32, 7).with_steps(1000);
    let jobs: Vec<Job> = imgs.iter().map(|i| Job::new(cfg.clone(), Arc::new(i.clone()))).collect();
    let recs = completed(&jobs);
    let psnrs: Vec<f64> = recs.iter().map(|r| r.max_psnr).collect();
    let desk = fit_codec_proxy(&refs, &psnrs).unwrap();
    let ok = planted_ok && recs.len() == 24 && desk.report.explained_variance >= 0.8;
    verdict(
        5,
        "codec proxy",
        ok,
        &format!(
            "planted ratio {:.2} EV {:.4}; desk ratio {:.1} EV {:.3} RMSE {:.2} dB",
            p.ratio, p.report.explained_variance, desk.ratio, desk.report.explained_variance, desk.report.rmse
        ),
    );
}

#[test]
fn c06_gp_regression() {
    // Planted: smooth function of two inputs plus noise with std 0.1.
    let sigma = 0.1;
    let f = |a: f64, b: f64| (3.0 * a).sin() + (2.0 * b).cos();
    let mut r = rng::stream(0xC6, 0);
    let mut draw = |n: usize| {
        let x: Vec<f64> = (0..2 * n).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|p| f(p[0], p[1]) + sigma * rng::normal(&mut r)).collect();
        (x, y)
    };
    let (xt, yt) = draw(300);
    let (xv, yv) = draw(300);
    let gp = GpModel::fit(&xt, &yt, &GpOptions::default()).unwrap();
    let pv: Vec<f64> = xv.chunks(2).map(|p| gp.predict(p).unwrap().0).collect();
    let planted_rmse = rmse(&pv, &yv).unwrap();
    let planted_ok = planted_rmse <= 1.2 * sigma;

    // Desk: 1,000 SIRENs, 80/20 split by record.
    let jobs = desk_jobs(100, 10, 24, 32, 500, 6);
    let images: HashMap<String, Arc<ImageTensor>> = jobs.iter().map(|j| (j.image.id.clone(), Arc::clone(&j.image))).collect();
    let mut recs = completed(&jobs);
    rng::shuffle(&mut rng::stream(0xC6, 1), &mut recs);
    let fx = CodecFeatures::default();
    let feats: HashMap<&String, Vec<f64>> = images.iter().map(|(id, img)| (id, fx.extract(img).unwrap())).collect();
    let n_train = recs.len() * 4 / 5;
    let (train, test) = recs.split_at(n_train);
    let x: Vec<f64> = train.iter().flat_map(|r| gp_input(&r.config, &feats[&r.image_id])).collect();
    let y: Vec<f64> = train.iter().map(|r| r.max_psnr).collect();
    let opts = GpOptions {
        starts: 4,
        iterations: 100,
        ..GpOptions::default()
    };
    let gp = GpModel::fit(&x, &y, &opts).unwrap();
    let actual: Vec<f64> = test.iter().map(|r| r.max_psnr).collect();
    let pred: Vec<f64> = test
        .iter()
        .map(|r| gp.predict(&gp_input(&r.config, &feats[&r.image_id])).unwrap().0)
        .collect();
    let gp_rmse = rmse(&pred, &actual).unwrap();

    let codec = DctCodec::default();
    let train_imgs: Vec<&ImageTensor> = train.iter().map(|r| images[&r.image_id].as_ref()).collect();
    let proxy = fit_codec_proxy(&train_imgs, &y).unwrap();
    let proxy_pred: Vec<f64> = test
        .iter()
        .map(|r| proxy.predict(&codec, &images[&r.image_id]).unwrap())
        .collect();
    let proxy_rmse = rmse(&proxy_pred, &actual).unwrap();

    let ok = planted_ok && recs.len() == 1000 && gp_rmse <= 2.0 && gp_rmse < proxy_rmse;
    verdict(
        6,
        "GP regression",
        ok,
        &format!(
            "planted RMSE {planted_rmse:.4} (noise {sigma}); held-out GP RMSE {gp_rmse:.3} dB vs proxy {proxy_rmse:.3} dB on {} records",
            test.len()
        ),
    );
}

#[test]
fn c07_ntk() {
    let theta = DMatrix::<f64>::identity(3, 3);
    let s = NtkSpectrum::from_kernel(&theta, &[0.6, 0.0, 0.8], 0.1).unwrap();
    let geo = (0..100).map(|t| (s.loss_at(t) - 0.81f64.powi(t as i32)).abs()).fold(0.0, f64::max);

    let img = synth::dead_leaves(24, 1);
    let cfg = SirenConfig::new(10, 4, 0.06, 24, 1).with_steps(2000);
    let study = snapshot_extrapolate(&cfg, &img, &[1, 2, 4, 8], &NtkOptions::default(), 2000).unwrap();
    let gap = study
        .curves
        .iter()
        .map(|c| (c.asymptote_psnr - study.dc_psnr).abs())
        .fold(0.0, f64::max);

    let planted = NtkSpectrum::new(vec![1100.0, 10.0], vec![1e-3, 1.0], 0.002, 1).unwrap();
    let diverges = planted.has_divergent_mode() && planted.divergence_step().is_some();

    let ok = geo <= 1e-12 && gap <= 1.0 && diverges;
    verdict(
        7,
        "NTK",
        ok,
        &format!(
            "identity rollout error {geo:.1e}; early asymptotes within {gap:.2} dB of DC {:.2} dB; planted divergence at step {:?}",
            study.dc_psnr,
            planted.divergence_step()
        ),
    );
}

#[test]
fn c08_seed_variation() {
    let img = Arc::new(synth::dead_leaves(32, 5));
    let base = |w: usize| SirenConfig::new(w, 4, 0.12, 32, 11).with_steps(2000);
    let narrow = seed_variation(&base(8), &img, 10, workers()).unwrap();
    let wide = seed_variation(&base(64), &img, 10, workers()).unwrap();
    let att = first_layer_attribution(&base(16), &img, 10, workers()).unwrap();
    let ok = narrow.std > wide.std && att.std_fixed_first < att.std_all && att.p_value < 0.1;
    verdict(
        8,
        "seed variation",
        ok,
        &format!(
            "std width 8 {:.3} vs width 64 {:.3}; first layer fixed {:.3} vs free {:.3}, F {:.2}, p {:.3}",
            narrow.std, wide.std, att.std_fixed_first, att.std_all, att.f_statistic, att.p_value
        ),
    );
}

#[test]
fn c09_bootstrap() {
    let t = Instant::now();
    let dominant = vec![
        (4, vec![20.0, 20.5, 20.2, 19.8, 20.1]),
        (8, vec![25.0, 25.3, 24.9, 25.1, 25.2]),
        (12, vec![22.0, 21.0, 23.0, 22.5, 21.5]),
    ];
    let d = bootstrap_depth_selection(&dominant, 10_000, 1).unwrap();
    let collapse = (d.lo, d.hi) == (8, 8);

    // Identical, tie-free distributions at two depths.
    let v: Vec<f64> = (0..50).map(|i| 30.0 + 0.01 * i as f64).collect();
    let s = bootstrap_depth_selection(&[(3, v.clone()), (5, v)], 10_000, 9).unwrap();
    let f = s.counts[0].1 as f64 / 10_000.0;
    let secs = t.elapsed().as_secs_f64();
    let ok = collapse && (f - 0.5).abs() <= 0.03 && secs < 60.0;
    verdict(
        9,
        "bootstrap depth selection",
        ok,
        &format!("dominant interval [{}, {}]; symmetric split {f:.3}; {secs:.2}s", d.lo, d.hi),
    );
}

#[test]
fn c10_confident_search() {
    let hand = select_rung(&[28.0, 29.5, 31.2, 33.0], &[0.5; 4], 30.0).unwrap();
    let mut r = rng::stream(0xCA, 0);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng::int_inclusive(&mut r, 1, 30);
        let mut preds: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, 10.0, 50.0)).collect();
        preds.sort_by(f64::total_cmp);
        let rm: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, 0.0, 3.0)).collect();
        let wider: Vec<f64> = rm.iter().map(|x| x + rng::uniform(&mut r, 0.0, 2.0)).collect();
        let target = rng::uniform(&mut r, 10.0, 50.0);
        let base = select_rung(&preds, &rm, target).ok();
        let loose = select_rung(&preds, &wider, target).ok();
        let harder = select_rung(&preds, &rm, target + rng::uniform(&mut r, 0.0, 5.0)).ok();
        for other in [loose, harder].into_iter().flatten() {
            if base.is_none_or(|b| b > other) {
                violations += 1;
            }
        }
    }
    let ok = hand == 2 && violations == 0;
    verdict(
        10,
        "confident search",
        ok,
        &format!("hand example picks rung {hand} (31.2 dB); {violations} monotonicity violations in 1000 ladders"),
    );
}

fn strip_clock(m: &Manifest) -> Vec<TrainRecord> {
    m.records
        .iter()
        .map(|r| TrainRecord {
            wallclock_seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn c11_harness_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let jobs = desk_jobs(4, 2, 24, 24, 100, 11);
    let header = || ManifestHeader::new(None, "acceptance");
    let one = run_jobs(&jobs, &RunOptions::to_file(1, dir.path().join("w1/m.jsonl"), header())).unwrap();
    let eight = run_jobs(&jobs, &RunOptions::to_file(8, dir.path().join("w8/m.jsonl"), header())).unwrap();
    let same_workers = strip_clock(&one) == strip_clock(&eight);

    let path = dir.path().join("resume/m.jsonl");
    run_jobs(&jobs[..2], &RunOptions::to_file(1, &path, header())).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(b"{\"id\":\"torn").unwrap();
    drop(f);
    let resumed = run_jobs(&jobs, &RunOptions::to_file(1, &path, header())).unwrap();
    let reloaded = Manifest::load(&path).unwrap();
    let uninterrupted = Manifest::load(&dir.path().join("w1/m.jsonl")).unwrap();
    let resume_ok = strip_clock(&resumed) == strip_clock(&uninterrupted) && strip_clock(&reloaded) == strip_clock(&uninterrupted);
    let ok = same_workers && resume_ok;
    verdict(
        11,
        "harness determinism",
        ok,
        &format!(
            "{} jobs; workers 1 vs 8 identical: {same_workers}; kill after 2 and resume identical: {resume_ok}",
            jobs.len()
        ),
    );
}

/// Kolmogorov-Smirnov p-value of `sample` against the continuous `cdf`.
fn ks_p_value(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let q: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            2.0 * sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    q.clamp(0.0, 1.0)
}

#[test]
fn c12_sampler_distributions() {
    let spec = SamplingSpec::default();
    let n = 10_000;
    let mut depths = vec![0usize; spec.depth_max + 1];
    let mut gammas = Vec::with_capacity(n);
    let mut bpps = Vec::with_capacity(n);
    for k in 0..n {
        let mut r = rng::stream(0xC12, k as u64);
        let size = spec.sample_image_size(&mut r);
        let (c, bpp) = sample_config_with_target(&spec, &mut r, size).unwrap();
        depths[c.depth] += 1;
        gammas.push(c.gamma);
        bpps.push(bpp);
    }
    let cats = spec.depth_max - spec.depth_min + 1;
    let expected = n as f64 / cats as f64;
    let chi2: f64 = depths[spec.depth_min..]
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let p_depth = 1.0 - ChiSquared::new((cats - 1) as f64).unwrap().cdf(chi2);
    let log_uniform = |lo: f64, hi: f64| move |x: f64| ((x.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0);
    let p_gamma = ks_p_value(gammas, log_uniform(spec.gamma_min, spec.gamma_max));
    let p_bpp = ks_p_value(bpps, log_uniform(spec.bpp_min, spec.bpp_max));
    let ok = p_depth > 0.01 && p_gamma > 0.01 && p_bpp > 0.01;
    verdict(
        12,
        "sampler distributions",
        ok,
        &format!("n={n}: depth chi-square p {p_depth:.3}, gamma KS p {p_gamma:.3}, bpp KS p {p_bpp:.3}"),
    );
}
