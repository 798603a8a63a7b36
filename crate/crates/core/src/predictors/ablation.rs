use serde::Serialize;

use crate::error::{Error, Result};

use super::encoding::{EncodingRanges, ENCODING_DIM, PER_PARAM};
use super::mlp::{mlp_fit_with, MlpConfig, MlpRow};

/// A set of predictor inputs removed together.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureGroup {
    Nothing,
    Width,
    Depth,
    ImageSize,
    Omega0,
    AllHyperparameters,
    Image,
    /// Arbitrary input columns, e.g. a null-feature control.
    Columns(String, Vec<usize>),
}

impl FeatureGroup {
    pub fn standard() -> Vec<FeatureGroup> {
        vec![
            FeatureGroup::Nothing,
            FeatureGroup::ImageSize,
            FeatureGroup::Omega0,
            FeatureGroup::Depth,
            FeatureGroup::Width,
            FeatureGroup::AllHyperparameters,
            FeatureGroup::Image,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            FeatureGroup::Nothing => "none".into(),
            FeatureGroup::Width => "width".into(),
            FeatureGroup::Depth => "depth".into(),
            FeatureGroup::ImageSize => "image_size".into(),
            FeatureGroup::Omega0 => "omega0".into(),
            FeatureGroup::AllHyperparameters => "all_hyperparameters".into(),
            FeatureGroup::Image => "image".into(),
            FeatureGroup::Columns(name, _) => name.clone(),
        }
    }

    /// Input columns of the group for `image_dims` image features.
    pub fn columns(&self, image_dims: usize) -> Vec<usize> {
        let block = |k: usize| (k * PER_PARAM..(k + 1) * PER_PARAM).collect();
        match self {
            FeatureGroup::Nothing => Vec::new(),
            FeatureGroup::Width => block(0),
            FeatureGroup::Depth => block(1),
            FeatureGroup::ImageSize => block(2),
            FeatureGroup::Omega0 => block(3),
            FeatureGroup::AllHyperparameters => (0..ENCODING_DIM).collect(),
            FeatureGroup::Image => (ENCODING_DIM..ENCODING_DIM + image_dims).collect(),
            FeatureGroup::Columns(_, c) => c.clone(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => FeatureGroup::Nothing,
            "width" => FeatureGroup::Width,
            "depth" => FeatureGroup::Depth,
            "image_size" | "size" => FeatureGroup::ImageSize,
            "omega0" => FeatureGroup::Omega0,
            "all_hyperparameters" | "hyperparameters" => FeatureGroup::AllHyperparameters,
            "image" => FeatureGroup::Image,
            other => return Err(Error::Argument(format!("unknown feature group {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub removed: String,
    pub rmse: f64,
    pub explained_variance: f64,
}

/// Retrains the predictor once per group with that group's inputs replaced by
/// their training means, and reports test-split metrics ordered by RMSE.
pub fn feature_ablation(rows: &[MlpRow], ranges: &EncodingRanges, cfg: &MlpConfig, groups: &[FeatureGroup]) -> Result<Vec<AblationRow>> {
    let k = rows.first().map_or(0, |r| r.image_features.len());
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let model = mlp_fit_with(rows, ranges, cfg, &g.columns(k))?;
        let rep = model
            .test_report
            .ok_or_else(|| Error::Fit("test split has no target variance".into()))?;
        log::info!("ablation {}: rmse {:.3}", g.name(), rep.rmse);
        out.push(AblationRow {
            removed: g.name(),
            rmse: rep.rmse,
            explained_variance: rep.explained_variance,
        });
    }
    out.sort_by(|a, b| a.rmse.total_cmp(&b.rmse));
    Ok(out)
}
