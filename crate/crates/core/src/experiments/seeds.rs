use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::predictors::mean;
use crate::rng;
use crate::siren::SirenConfig;

use super::plot::{Chart, Series};
use super::train_psnrs;

/// Seed of the `k`-th repetition derived from a base seed.
pub fn repetition_seed(base: u64, k: u64) -> u64 {
    rng::mix(base, k)
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_std(v: &[f64]) -> f64 {
    sample_var(v).sqrt()
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedVariation {
    pub seeds: Vec<u64>,
    pub psnrs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SeedVariation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seed", "max_psnr"])?;
        for (s, p) in self.seeds.iter().zip(&self.psnrs) {
            w.write_record([s.to_string(), p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn chart(&self) -> Chart {
        let pts = self.psnrs.iter().enumerate().map(|(i, p)| (i as f64, *p)).collect();
        Chart::new(
            &format!("Seed variation (std {:.3} dB)", self.std),
            "repetition",
            "max PSNR (dB)",
        )
        .with(Series::points("runs", pts))
    }
}

/// Trains `config` with `s` derived seeds and reports the spread of max PSNR.
pub fn seed_variation(config: &SirenConfig, image: &Arc<ImageTensor>, s: usize, workers: usize) -> Result<SeedVariation> {
    if s < 2 {
        return Err(Error::InsufficientData { needed: 2, got: s });
    }
    let seeds: Vec<u64> = (0..s as u64).map(|k| repetition_seed(config.seed, k)).collect();
    let configs: Vec<SirenConfig> = seeds.iter().map(|&sd| config.clone().with_seed(sd)).collect();
    let psnrs = train_psnrs(&configs, image, workers)?;
    Ok(SeedVariation {
        mean: mean(&psnrs),
        std: sample_std(&psnrs),
        seeds,
        psnrs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Attribution {
    pub psnrs_all: Vec<f64>,
    pub psnrs_fixed_first: Vec<f64>,
    pub std_all: f64,
    pub std_fixed_first: f64,
    /// `1 - var_fixed / var_all`, clamped to `[0, 1]`.
    pub attribution: f64,
    pub f_statistic: f64,
    /// One-sided p-value of `var_all > var_fixed`.
    pub p_value: f64,
}

/// One-sided F-test that sample `a` has larger variance than sample `b`.
pub fn f_test_greater(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    let (va, vb) = (sample_var(a), sample_var(b));
    if vb == 0.0 {
        let f = if va > 0.0 { f64::INFINITY } else { f64::NAN };
        return Ok((f, if va > 0.0 { 0.0 } else { 1.0 }));
    }
    let f = va / vb;
    let dist = FisherSnedecor::new((a.len() - 1) as f64, (b.len() - 1) as f64).map_err(|e| Error::Argument(e.to_string()))?;
    Ok((f, 1.0 - dist.cdf(f)))
}

/// Compares the spread over fully random seeds with the spread when every
/// run shares the first layer of `config.seed`.
pub fn first_layer_attribution(config: &SirenConfig, image: &Arc<ImageTensor>, s: usize, workers: usize) -> Result<Attribution> {
    if s < 5 {
        return Err(Error::InsufficientData { needed: 5, got: s });
    }
    let seeds: Vec<u64> = (0..s as u64).map(|k| repetition_seed(config.seed, k)).collect();
    let pinned = config.init.with_first_seed(config.init.first_seed.unwrap_or(config.seed));
    let all: Vec<SirenConfig> = seeds.iter().map(|&sd| config.clone().with_seed(sd)).collect();
    let fixed: Vec<SirenConfig> = seeds
        .iter()
        .map(|&sd| config.clone().with_init(pinned).with_seed(sd))
        .collect();
    let psnrs_all = train_psnrs(&all, image, workers)?;
    let psnrs_fixed_first = train_psnrs(&fixed, image, workers)?;
    let (va, vf) = (sample_var(&psnrs_all), sample_var(&psnrs_fixed_first));
    if va == 0.0 {
        return Err(Error::UndefinedVariance);
    }
    let (f_statistic, p_value) = f_test_greater(&psnrs_all, &psnrs_fixed_first)?;
    Ok(Attribution {
        std_all: va.sqrt(),
        std_fixed_first: vf.sqrt(),
        attribution: (1.0 - vf / va).clamp(0.0, 1.0),
        f_statistic,
        p_value,
        psnrs_all,
        psnrs_fixed_first,
    })
}

impl Attribution {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["group", "repetition", "max_psnr"])?;
        for (name, v) in [("all_random", &self.psnrs_all), ("fixed_first", &self.psnrs_fixed_first)] {
            for (i, p) in v.iter().enumerate() {
                w.write_record([name.to_string(), i.to_string(), p.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn chart(&self) -> Chart {
        let pts = |v: &[f64], x: f64| v.iter().map(|p| (x, *p)).collect();
        Chart::new(
            &format!("First-layer attribution {:.0}%", 100.0 * self.attribution),
            "group (0 = all random, 1 = shared first layer)",
            "max PSNR (dB)",
        )
        .with(Series::points("all random", pts(&self.psnrs_all, 0.0)))
        .with(Series::points("shared first layer", pts(&self.psnrs_fixed_first, 1.0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferCell {
    /// Image whose best first layer is reused.
    pub source: String,
    pub target: String,
    pub baseline_mean: f64,
    pub transfer_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeTransfer {
    pub cells: Vec<TransferCell>,
    pub delta_same: f64,
    pub delta_cross: f64,
}

/// Picks, per image, the first layer of the best of `n_seeds` random runs and
/// retrains every image with it (remaining layers freshly drawn).
///
/// Gains are measured against the mean of the random runs on the target image.
pub fn pe_transfer(config: &SirenConfig, images: &[Arc<ImageTensor>], n_seeds: usize, workers: usize) -> Result<PeTransfer> {
    if images.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: images.len(),
        });
    }
    if n_seeds == 0 {
        return Err(Error::Argument("need at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|k| repetition_seed(config.seed, k)).collect();
    let fresh: Vec<u64> = (0..n_seeds as u64)
        .map(|k| repetition_seed(config.seed, n_seeds as u64 + k))
        .collect();
    let mut baseline = Vec::with_capacity(images.len());
    let mut best_seed = Vec::with_capacity(images.len());
    for img in images {
        let configs: Vec<SirenConfig> = seeds.iter().map(|&s| config.clone().with_seed(s)).collect();
        let psnrs = train_psnrs(&configs, img, workers)?;
        let best = (0..psnrs.len()).fold(0, |b, i| if psnrs[i] > psnrs[b] { i } else { b });
        baseline.push(mean(&psnrs));
        best_seed.push(seeds[best]);
    }
    let mut cells = Vec::new();
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for (i, &layer_seed) in best_seed.iter().enumerate() {
        let init = config.init.with_first_seed(layer_seed);
        for (j, img) in images.iter().enumerate() {
            let configs: Vec<SirenConfig> = fresh.iter().map(|&s| config.clone().with_init(init).with_seed(s)).collect();
            let m = mean(&train_psnrs(&configs, img, workers)?);
            let gain = m - baseline[j];
            if i == j {
                same.push(gain);
            } else {
                cross.push(gain);
            }
            cells.push(TransferCell {
                source: images[i].id.clone(),
                target: img.id.clone(),
                baseline_mean: baseline[j],
                transfer_mean: m,
            });
        }
    }
    Ok(PeTransfer {
        cells,
        delta_same: mean(&same),
        delta_cross: mean(&cross),
    })
}

impl PeTransfer {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source_image", "target_image", "baseline_mean_psnr", "transfer_mean_psnr", "gain"])?;
        for c in &self.cells {
            w.write_record([
                c.source.clone(),
                c.target.clone(),
                c.baseline_mean.to_string(),
                c.transfer_mean.to_string(),
                (c.transfer_mean - c.baseline_mean).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn chart(&self) -> Chart {
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        for c in &self.cells {
            let p = (c.baseline_mean, c.transfer_mean);
            if c.source == c.target {
                same.push(p);
            } else {
                cross.push(p);
            }
        }
        Chart::new(
            &format!("First-layer transfer (same {:+.3} dB, cross {:+.3} dB)", self.delta_same, self.delta_cross),
            "baseline mean PSNR (dB)",
            "transfer mean PSNR (dB)",
        )
        .with(Series::points("same image", same))
        .with(Series::points("other image", cross))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::synth;
    use crate::siren::{InitPolicy, LayerInit};

    fn image(size: usize, seed: u64) -> Arc<ImageTensor> {
        Arc::new(synth::dead_leaves(size, seed))
    }

    #[test]
    fn degenerate_config_has_zero_spread() {
        let init = InitPolicy {
            rest: LayerInit::Zero,
            ..InitPolicy::default()
        }
        .with_first_seed(4);
        let cfg = SirenConfig::new(6, 3, 0.1, 8, 0).with_steps(0).with_init(init);
        let v = seed_variation(&cfg, &image(8, 1), 4, 1).unwrap();
        assert_eq!(v.std, 0.0);
        assert!(seed_variation(&cfg, &image(8, 1), 1, 1).is_err());
    }

    #[test]
    fn std_ignores_order() {
        let a = [30.1, 29.7, 30.4, 30.0];
        let b = [30.0, 30.4, 29.7, 30.1];
        assert_eq!(sample_std(&a), sample_std(&b));
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn f_test_reference_value() {
        // F = 4 with (9, 9) degrees of freedom.
        let a: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (f, p) = f_test_greater(&a, &b).unwrap();
        assert!((f - 4.0).abs() < 1e-12);
        assert!((p - 0.025501630).abs() < 1e-8, "{p}");
    }

    #[test]
    fn only_first_layer_varying_is_fully_attributed() {
        let init = InitPolicy::default().with_rest_seed(77);
        let cfg = SirenConfig::new(6, 3, 0.1, 8, 3).with_steps(30).with_init(init);
        let a = first_layer_attribution(&cfg, &image(8, 2), 5, 1).unwrap();
        assert_eq!(a.std_fixed_first, 0.0);
        assert_eq!(a.attribution, 1.0);
        assert_eq!(a.p_value, 0.0);
    }

    #[test]
    fn single_seed_transfer_is_neutral_on_same_image() {
        let cfg = SirenConfig::new(6, 3, 0.1, 8, 3).with_steps(20);
        let imgs = vec![image(8, 1), image(8, 2)];
        let t = pe_transfer(&cfg, &imgs, 1, 1).unwrap();
        assert_eq!(t.cells.len(), 4);
        assert!(t.delta_same.is_finite() && t.delta_cross.is_finite());
        assert!(pe_transfer(&cfg, &imgs[..1], 3, 1).is_err());
    }
}
