//! Fully connected ReLU regressor over positional-encoded hyperparameters
//! concatenated with image features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::optim::{AdamState, Parameters};
use crate::rng;
use crate::siren::SirenConfig;

use super::encoding::{positional_encode, EncodingRanges, ENCODING_DIM};
use super::metrics::{mean, variance, MetricReport};

pub const MIN_ROWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Dense layers with ReLU between them and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Parameters for Mlp {
    fn blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w.as_slice(), l.b.as_slice()]).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}

impl Mlp {
    /// He-uniform hidden weights, zero output layer and biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let last = sizes.len().saturating_sub(2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, s)| {
                let (cols, rows) = (s[0], s[1]);
                let mut r = rng::stream(seed, i as u64);
                let bound = if i == last { 0.0 } else { (6.0 / cols as f64).sqrt() };
                Dense {
                    rows,
                    cols,
                    w: (0..rows * cols).map(|_| rng::uniform(&mut r, -bound, bound)).collect(),
                    b: vec![0.0; rows],
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    rows: l.rows,
                    cols: l.cols,
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    /// Activations of every layer for a batch of `n` rows; the last is the output.
    fn forward_acts(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(n * l.rows);
            for _ in 0..n {
                out.extend_from_slice(&l.b);
            }
            gemm(n, l.cols, l.rows, 1.0, &acts[i], false, &l.w, true, 1.0, &mut out);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        self.forward_acts(x, n).pop().expect("at least one layer")
    }

    /// Mean squared error of a scalar-output net and its gradient.
    fn loss_and_grad(&self, x: &[f64], y: &[f64], grads: &mut Mlp) -> f64 {
        let n = y.len();
        let acts = self.forward_acts(x, n);
        let out = &acts[acts.len() - 1];
        let loss = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n as f64;
        let mut delta: Vec<f64> = out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / n as f64).collect();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let g = &mut grads.layers[i];
            gemm(l.rows, n, l.cols, 1.0, &delta, true, &acts[i], false, 0.0, &mut g.w);
            g.b.fill(0.0);
            for row in delta.chunks_exact(l.rows) {
                for (b, d) in g.b.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if i > 0 {
                let mut prev = vec![0.0; n * l.cols];
                gemm(n, l.rows, l.cols, 1.0, &delta, false, &l.w, false, 0.0, &mut prev);
                for (d, a) in prev.iter_mut().zip(&acts[i]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128, 128, 128],
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 150,
            seed: 0,
        }
    }
}

/// One training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRow {
    pub config: SirenConfig,
    pub image_features: Vec<f64>,
    pub target: f64,
}

/// Row indices of the 80/10/10 split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng::stream(seed, 0x5917), &mut idx);
        let n_val = (n / 10).max(1);
        let n_test = (n / 10).max(1);
        let n_train = n - n_val - n_test;
        Split {
            train: idx[..n_train].to_vec(),
            val: idx[n_train..n_train + n_val].to_vec(),
            test: idx[n_train + n_val..].to_vec(),
        }
    }
}

/// A fitted predictor: input normalization, the network, and target scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMlp {
    pub ranges: EncodingRanges,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// Input columns replaced by a constant (used by ablations).
    pub imputed: Vec<Option<f64>>,
    pub y_mean: f64,
    pub y_std: f64,
    pub net: Mlp,
    pub best_epoch: usize,
    pub val_report: Option<MetricReport>,
    pub test_report: Option<MetricReport>,
}

impl FeatureMlp {
    pub fn image_feature_dim(&self) -> usize {
        self.feature_mean.len()
    }

    fn raw_input(ranges: &EncodingRanges, f_mean: &[f64], f_std: &[f64], config: &SirenConfig, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != f_mean.len() {
            return Err(Error::Dimension(format!(
                "expected {} image features, got {}",
                f_mean.len(),
                features.len()
            )));
        }
        let mut v = positional_encode(config, ranges)?;
        v.extend(features.iter().zip(f_mean.iter().zip(f_std)).map(|(x, (m, s))| (x - m) / s));
        Ok(v)
    }

    pub fn input(&self, config: &SirenConfig, features: &[f64]) -> Result<Vec<f64>> {
        let mut v = Self::raw_input(&self.ranges, &self.feature_mean, &self.feature_std, config, features)?;
        for (x, imp) in v.iter_mut().zip(&self.imputed) {
            if let Some(c) = imp {
                *x = *c;
            }
        }
        Ok(v)
    }

    pub fn predict(&self, config: &SirenConfig, features: &[f64]) -> Result<f64> {
        let x = self.input(config, features)?;
        Ok(self.y_mean + self.y_std * self.net.forward(&x, 1)[0])
    }

    pub fn evaluate(&self, rows: &[MlpRow]) -> Result<MetricReport> {
        let pred: Vec<f64> = rows
            .iter()
            .map(|r| self.predict(&r.config, &r.image_features))
            .collect::<Result<_>>()?;
        let actual: Vec<f64> = rows.iter().map(|r| r.target).collect();
        MetricReport::compute(&pred, &actual)
    }
}

/// Fits a [`FeatureMlp`] on an 80/10/10 split, keeping the epoch with the
/// lowest validation loss. `impute_columns` lists input columns to replace by
/// their training mean.
pub fn mlp_fit_with(rows: &[MlpRow], ranges: &EncodingRanges, cfg: &MlpConfig, impute_columns: &[usize]) -> Result<FeatureMlp> {
    if rows.len() < MIN_ROWS {
        return Err(Error::InsufficientData {
            needed: MIN_ROWS,
            got: rows.len(),
        });
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Argument("batch size and learning rate must be positive".into()));
    }
    let k = rows[0].image_features.len();
    if rows.iter().any(|r| r.image_features.len() != k) {
        return Err(Error::Dimension("rows have differing image feature counts".into()));
    }
    if rows.iter().any(|r| !r.target.is_finite() || r.image_features.iter().any(|v| !v.is_finite())) {
        return Err(Error::Argument("non-finite feature or target".into()));
    }
    let split = Split::new(rows.len(), cfg.seed);

    let train_feats = |d: usize| -> Vec<f64> { split.train.iter().map(|&i| rows[i].image_features[d]).collect() };
    let feature_mean: Vec<f64> = (0..k).map(|d| mean(&train_feats(d))).collect();
    let feature_std: Vec<f64> = (0..k)
        .map(|d| {
            let s = variance(&train_feats(d)).sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let train_y: Vec<f64> = split.train.iter().map(|&i| rows[i].target).collect();
    let y_mean = mean(&train_y);
    let y_std = {
        let s = variance(&train_y).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };

    let dim = ENCODING_DIM + k;
    let mut inputs = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        inputs.extend(FeatureMlp::raw_input(ranges, &feature_mean, &feature_std, &r.config, &r.image_features)?);
    }
    let mut imputed = vec![None; dim];
    for &c in impute_columns {
        if c >= dim {
            return Err(Error::Argument(format!("input column {c} out of range")));
        }
        let col: Vec<f64> = split.train.iter().map(|&i| inputs[i * dim + c]).collect();
        imputed[c] = Some(mean(&col));
    }
    for (i, x) in inputs.iter_mut().enumerate() {
        if let Some(c) = imputed[i % dim] {
            *x = c;
        }
    }
    let targets: Vec<f64> = rows.iter().map(|r| (r.target - y_mean) / y_std).collect();

    let gather = |idx: &[usize]| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(idx.len() * dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&inputs[i * dim..(i + 1) * dim]);
            y.push(targets[i]);
        }
        (x, y)
    };
    let (val_x, val_y) = gather(&split.val);
    let val_loss = |net: &Mlp| -> f64 {
        let out = net.forward(&val_x, val_y.len());
        out.iter().zip(&val_y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / val_y.len() as f64
    };

    let mut sizes = vec![dim];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, cfg.seed);
    let mut grads = net.zeros_like();
    let mut adam = AdamState::new(&net);
    let mut best = (val_loss(&net), 0usize, net.clone());
    let mut order = split.train.clone();
    let mut shuffler = rng::stream(cfg.seed, 0xB47C);
    for epoch in 1..=cfg.epochs {
        rng::shuffle(&mut shuffler, &mut order);
        for batch in order.chunks(cfg.batch_size) {
            let (bx, by) = gather(batch);
            let loss = net.loss_and_grad(&bx, &by, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            adam.step(&mut net, &grads, cfg.learning_rate)?;
        }
        let v = val_loss(&net);
        if !v.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss in epoch {epoch}")));
        }
        if v < best.0 {
            best = (v, epoch, net.clone());
        }
    }

    let mut model = FeatureMlp {
        ranges: *ranges,
        feature_mean,
        feature_std,
        imputed,
        y_mean,
        y_std,
        net: best.2,
        best_epoch: best.1,
        val_report: None,
        test_report: None,
    };
    let pick = |idx: &[usize]| -> Vec<MlpRow> { idx.iter().map(|&i| rows[i].clone()).collect() };
    let report = |m: &FeatureMlp, r: &[MlpRow]| match m.evaluate(r) {
        Ok(rep) => Ok(Some(rep)),
        Err(Error::UndefinedVariance | Error::InsufficientData { .. }) => Ok(None),
        Err(e) => Err(e),
    };
    model.val_report = report(&model, &pick(&split.val))?;
    model.test_report = report(&model, &pick(&split.test))?;
    Ok(model)
}

pub fn mlp_fit(rows: &[MlpRow], ranges: &EncodingRanges, cfg: &MlpConfig) -> Result<FeatureMlp> {
    mlp_fit_with(rows, ranges, cfg, &[])
}
