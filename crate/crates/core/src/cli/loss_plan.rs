//! Loss plans: which rasters or scalars feed each loss term.
//!
//! Every term is either a number or a reference to files. Paths are
//! relative to the plan file.
//!
//! ```json
//! {
//!   "num_classes": 8,
//!   "terms": {
//!     "ce_src": { "prediction": "pred.dft1", "target": "label.png" },
//!     "cdm": {
//!       "ce": { "prediction": "cdm/prediction.dft1", "target": "cdm/label.png" },
//!       "quality": { "prob": "cdm/prob.dft1" }
//!     },
//!     "external_sde": 0.42
//!   }
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_prob_map, read_segmap, read_tensor, Provenance, DEFAULT_IGNORE_INDEX};
use crate::error::{Error, Result};
use crate::pseudo_label::{cross_entropy, feature_distance, quality_weight, ClassLogitMap, LossTerms, WeightedCe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CeInput {
    Value(f64),
    Raster {
        /// H x W x C scores.
        prediction: String,
        target: String,
        /// `prediction` holds raw logits rather than probabilities.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        logits: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QualityInput {
    Value(f64),
    /// Mixed confidence map; the weight is computed at the plan's tau.
    Confidence { prob: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedInput {
    pub ce: CeInput,
    pub quality: QualityInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureInput {
    Value(f64),
    Tensors { features: String, reference: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanTerms {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_trg: Option<CeInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_src: Option<CeInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_labeled: Option<CeInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_mixed: Option<WeightedInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdm: Option<WeightedInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdm: Option<WeightedInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat_dist: Option<FeatureInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_sde: Option<f64>,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_INDEX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossPlan {
    pub num_classes: usize,
    #[serde(default = "default_ignore")]
    pub ignore_index: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub terms: PlanTerms,
}

/// Turns plan references into numbers, hashing every file read into `prov`.
pub struct Resolver<'a> {
    pub base: PathBuf,
    pub plan: &'a LossPlan,
    pub tau: f64,
    pub prov: &'a mut Provenance,
}

impl Resolver<'_> {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.base.join(rel);
        let hash = crate::data::provenance::hash_file(&p)?;
        self.prov.input_hashes.insert(rel.to_string(), hash);
        Ok(p)
    }

    fn ce(&mut self, name: &str, input: &CeInput) -> Result<f64> {
        match input {
            CeInput::Value(v) => Ok(*v),
            CeInput::Raster {
                prediction,
                target,
                logits,
            } => {
                let pp = self.path(prediction)?;
                let tp = self.path(target)?;
                let pred = ClassLogitMap::from_tensor(&read_tensor(&pp)?, !logits)
                    .map_err(|e| Error::format(&pp, e.to_string()))?;
                let labels = read_segmap(&tp, self.plan.num_classes, self.plan.ignore_index)?;
                let ce = cross_entropy(&pred, &labels)
                    .map_err(|e| Error::Validation {
                        entry: name.to_string(),
                        message: e.to_string(),
                    })?;
                Ok(ce.value)
            }
        }
    }

    fn weighted(&mut self, name: &str, input: &WeightedInput) -> Result<WeightedCe> {
        let ce = self.ce(name, &input.ce)?;
        let quality = match &input.quality {
            QualityInput::Value(q) => *q,
            QualityInput::Confidence { prob } => {
                let p = self.path(prob)?;
                quality_weight(&read_prob_map(&p)?, self.tau)?.value
            }
        };
        Ok(WeightedCe { ce, quality })
    }

    fn feature(&mut self, input: &FeatureInput) -> Result<f64> {
        match input {
            FeatureInput::Value(v) => Ok(*v),
            FeatureInput::Tensors {
                features,
                reference,
            } => {
                let a = read_tensor(self.path(features)?)?;
                let b = read_tensor(self.path(reference)?)?;
                if a.dims() != b.dims() {
                    return Err(Error::Shape(format!(
                        "feature tensors {:?} vs {:?}",
                        a.dims(),
                        b.dims()
                    )));
                }
                feature_distance(&a.to_f64(), &b.to_f64())
            }
        }
    }

    pub fn resolve(&mut self) -> Result<LossTerms> {
        let t = &self.plan.terms;
        Ok(LossTerms {
            ce_trg: t.ce_trg.as_ref().map(|c| self.ce("ce_trg", c)).transpose()?,
            ce_src: t.ce_src.as_ref().map(|c| self.ce("ce_src", c)).transpose()?,
            ce_labeled: t.ce_labeled.as_ref().map(|c| self.ce("ce_labeled", c)).transpose()?,
            ce_mixed: t.ce_mixed.as_ref().map(|w| self.weighted("ce_mixed", w)).transpose()?,
            tdm: t.tdm.as_ref().map(|w| self.weighted("tdm", w)).transpose()?,
            cdm: t.cdm.as_ref().map(|w| self.weighted("cdm", w)).transpose()?,
            feat_dist: t.feat_dist.as_ref().map(|f| self.feature(f)).transpose()?,
            external_sde: t.external_sde,
        })
    }
}

pub fn plan_dir(plan_path: &Path) -> PathBuf {
    plan_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_and_references() {
        let plan: LossPlan = serde_json::from_str(
            r#"{"num_classes": 3, "terms": {
                "ce_labeled": 1.0,
                "ce_mixed": {"ce": 2.0, "quality": 0.5},
                "cdm": {"ce": {"prediction": "p.dft1", "target": "l.png"}, "quality": {"prob": "q.dft1"}},
                "feat_dist": {"features": "a.dft1", "reference": "b.dft1"}
            }}"#,
        )
        .unwrap();
        assert_eq!(plan.terms.ce_labeled, Some(CeInput::Value(1.0)));
        assert!(matches!(plan.terms.cdm.unwrap().ce, CeInput::Raster { logits: false, .. }));
        assert!(serde_json::from_str::<LossPlan>(r#"{"num_classes": 3, "terms": {"ce_bogus": 1}}"#).is_err());
    }
}
