use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{width_for_bpp, MIN_WIDTH};
use crate::imaging::ImageTensor;
use crate::rng;
use crate::siren::SirenConfig;

use super::plot::{Chart, Series};
use super::seeds::repetition_seed;
use super::train_psnrs;

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepthSelection {
    /// 2.5th percentile of the selected depth.
    pub lo: usize,
    /// 97.5th percentile of the selected depth.
    pub hi: usize,
    /// How often each depth was selected, in input depth order.
    pub counts: Vec<(usize, usize)>,
    pub resamples: usize,
}

/// Simulates repeating a depth sweep: each resample draws one PSNR per depth
/// (with replacement from that depth's seeds) and selects the best depth,
/// ties going to the smaller depth.
pub fn bootstrap_depth_selection(by_depth: &[(usize, Vec<f64>)], resamples: usize, seed: u64) -> Result<DepthSelection> {
    if by_depth.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if resamples < MIN_RESAMPLES {
        return Err(Error::Argument(format!("need at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    for (d, v) in by_depth {
        if v.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: v.len() });
        }
        if v.iter().any(|p| p.is_nan()) {
            return Err(Error::Argument(format!("NaN PSNR at depth {d}")));
        }
    }
    let mut order: Vec<usize> = (0..by_depth.len()).collect();
    order.sort_by_key(|&i| by_depth[i].0);
    if order.windows(2).any(|w| by_depth[w[0]].0 == by_depth[w[1]].0) {
        return Err(Error::Argument("depths must be distinct".into()));
    }

    let mut r = rng::stream(seed, 0xB0075);
    let mut counts = vec![0usize; by_depth.len()];
    let mut picks = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut best: Option<(usize, f64)> = None;
        for &i in &order {
            let v = &by_depth[i].1;
            let p = v[rng::int_inclusive(&mut r, 0, v.len() - 1)];
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        let (i, _) = best.expect("at least one depth");
        counts[i] += 1;
        picks.push(by_depth[i].0);
    }
    picks.sort_unstable();
    let rank = |q: f64| picks[((q * resamples as f64).ceil() as usize).clamp(1, resamples) - 1];
    Ok(DepthSelection {
        lo: rank(0.025),
        hi: rank(0.975),
        counts: by_depth.iter().zip(counts).map(|((d, _), c)| (*d, c)).collect(),
        resamples,
    })
}

/// Trains `seeds` repetitions at every depth, adjusting the width so each
/// depth keeps the template's bits per pixel.
pub fn depth_sweep(
    template: &SirenConfig,
    depths: &[usize],
    seeds: usize,
    image: &Arc<ImageTensor>,
    workers: usize,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let bpp = template.bpp();
    depths
        .iter()
        .map(|&depth| {
            let width = (width_for_bpp(depth, template.image_size, bpp).round() as usize).max(MIN_WIDTH);
            let mut base = template.clone();
            base.depth = depth;
            base.width = width;
            let configs: Vec<SirenConfig> = (0..seeds as u64)
                .map(|k| base.clone().with_seed(repetition_seed(template.seed, k)))
                .collect();
            Ok((depth, train_psnrs(&configs, image, workers)?))
        })
        .collect()
}

impl DepthSelection {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["depth", "times_selected", "fraction", "interval_lo", "interval_hi"])?;
        for (d, c) in &self.counts {
            w.write_record([
                d.to_string(),
                c.to_string(),
                (*c as f64 / self.resamples as f64).to_string(),
                self.lo.to_string(),
                self.hi.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn chart(&self) -> Chart {
        let pts = self
            .counts
            .iter()
            .map(|(d, c)| (*d as f64, *c as f64 / self.resamples as f64))
            .collect();
        Chart::new(
            &format!("Selected depth, 95% interval [{}, {}]", self.lo, self.hi),
            "depth",
            "fraction of resamples",
        )
        .with(Series::line("selection frequency", pts))
    }
}

/// Writes the per-seed PSNRs of a depth sweep.
pub fn write_sweep_csv(sweep: &[(usize, Vec<f64>)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["depth", "repetition", "max_psnr"])?;
    for (d, v) in sweep {
        for (i, p) in v.iter().enumerate() {
            w.write_record([d.to_string(), i.to_string(), p.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dominant_depth_collapses_interval() {
        let data = vec![
            (4, vec![20.0, 20.5, 20.2]),
            (8, vec![25.0, 25.3, 24.9]),
            (12, vec![22.0, 21.0, 23.0]),
        ];
        let s = bootstrap_depth_selection(&data, 2000, 1).unwrap();
        assert_eq!((s.lo, s.hi), (8, 8));
        assert_eq!(s.counts[1], (8, 2000));
    }

    #[test]
    fn tied_draws_favor_smaller_depth() {
        let v: Vec<f64> = (0..10).map(|i| 30.0 + 0.1 * i as f64).collect();
        let data = vec![(6, v.clone()), (7, v)];
        let s = bootstrap_depth_selection(&data, 10_000, 5).unwrap();
        let f6 = s.counts[0].1 as f64 / 10_000.0;
        // Exact ties go to depth 6, which shifts the split by P(tie)/2 = 0.05.
        assert!((f6 - 0.55).abs() < 0.03, "{f6}");
        assert_eq!((s.lo, s.hi), (6, 7));
    }

    #[test]
    fn symmetric_depths_split_fifty_fifty() {
        let v: Vec<f64> = (0..50).map(|i| 30.0 + 0.01 * i as f64).collect();
        let data = vec![(3, v.clone()), (5, v)];
        let s = bootstrap_depth_selection(&data, 10_000, 9).unwrap();
        let f = s.counts[0].1 as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.03, "{f}");
    }

    #[test]
    fn preconditions() {
        assert!(bootstrap_depth_selection(&[(3, vec![1.0, 2.0])], 999, 0).is_err());
        assert!(bootstrap_depth_selection(&[(3, vec![1.0])], 1000, 0).is_err());
        assert!(bootstrap_depth_selection(&[(3, vec![1.0, 2.0]), (3, vec![1.0, 2.0])], 1000, 0).is_err());
    }

    proptest! {
        #[test]
        fn endpoints_are_input_depths(
            sweeps in prop::collection::vec(prop::collection::vec(10.0f64..40.0, 2..6), 1..6),
            seed in 0u64..1000,
        ) {
            let data: Vec<(usize, Vec<f64>)> = sweeps.into_iter().enumerate().map(|(i, v)| (2 + 3 * i, v)).collect();
            let s = bootstrap_depth_selection(&data, 1000, seed).unwrap();
            prop_assert!(data.iter().any(|(d, _)| *d == s.lo));
            prop_assert!(data.iter().any(|(d, _)| *d == s.hi));
            prop_assert!(s.lo <= s.hi);
            prop_assert_eq!(s.counts.iter().map(|c| c.1).sum::<usize>(), 1000);
        }
    }
}
