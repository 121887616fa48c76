//! Mean-teacher arithmetic, pseudo-labels, quality weights and the
//! segmentation-side loss terms.
//!
//! Nothing here runs a network: predictions arrive as per-pixel class score
//! maps and every loss is computed from those rasters or from supplied scalars.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ParameterVector, ProbMap, SegMap, Tensor, DEFAULT_IGNORE_INDEX};
use crate::depthmix::{MixMask, Mixable};
use crate::error::{ensure_same_dims, Error, Result};

pub const DEFAULT_TAU: f64 = 0.968;
pub const DEFAULT_LAMBDA_F: f64 = 1e-2;
pub const DEFAULT_EMA_ALPHA: f64 = 0.99;

const SOFTMAX_TOLERANCE: f64 = 1e-5;

/// Per-pixel class scores, stored pixel-major (`H x W x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogitMap {
    width: usize,
    height: usize,
    num_classes: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl ClassLogitMap {
    /// `normalized` declares the scores post-softmax; that claim is checked.
    pub fn new(
        width: usize,
        height: usize,
        num_classes: usize,
        data: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 || num_classes == 0 {
            return Err(Error::Shape(format!(
                "class map: empty shape {width}x{height}x{num_classes}"
            )));
        }
        if data.len() != width * height * num_classes {
            return Err(Error::Shape(format!(
                "class map: {width}x{height}x{num_classes} needs {} values, got {}",
                width * height * num_classes,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("class map has non-finite scores".into()));
        }
        if normalized {
            for (i, px) in data.chunks_exact(num_classes).enumerate() {
                let sum: f64 = px.iter().sum();
                if px.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > SOFTMAX_TOLERANCE {
                    return Err(Error::Domain(format!(
                        "pixel {i} is declared softmax-normalized but sums to {sum}"
                    )));
                }
            }
        }
        Ok(Self {
            width,
            height,
            num_classes,
            data,
            normalized,
        })
    }

    /// Reads a rank-3 `(H, W, C)` tensor.
    pub fn from_tensor(t: &Tensor, normalized: bool) -> Result<Self> {
        match *t.dims() {
            [h, w, c] => Self::new(w, h, c, t.to_f64(), normalized),
            _ => Err(Error::Shape(format!(
                "class map tensor must be rank 3 (H, W, C), got {:?}",
                t.dims()
            ))),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_f64(vec![self.height, self.width, self.num_classes], &self.data)
    }

    /// Hot encoding of a label map. Ignored pixels get a uniform distribution.
    pub fn one_hot(labels: &SegMap) -> Result<Self> {
        let c = labels.num_classes();
        let mut data = vec![0.0; labels.data().len() * c];
        for (px, &l) in data.chunks_exact_mut(c).zip(labels.data()) {
            if l == labels.ignore_index() {
                px.iter_mut().for_each(|p| *p = 1.0 / c as f64);
            } else {
                px[l as usize] = 1.0;
            }
        }
        Self::new(labels.width(), labels.height(), c, data, true)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.num_classes;
        &self.data[start..start + self.num_classes]
    }

    /// Softmax-normalized copy; already-normalized maps are returned as is.
    pub fn softmax(&self) -> Self {
        if self.normalized {
            return self.clone();
        }
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(self.num_classes) {
            let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in px.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            px.iter_mut().for_each(|v| *v /= sum);
        }
        Self {
            data,
            normalized: true,
            ..*self
        }
    }
}

impl Mixable for ClassLogitMap {
    fn dims(&self) -> (usize, usize) {
        ClassLogitMap::dims(self)
    }

    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self> {
        if a.num_classes != b.num_classes || a.normalized != b.normalized {
            return Err(Error::Shape("class maps differ in classes or normalization".into()));
        }
        let c = a.num_classes;
        let mut data = Vec::with_capacity(a.data.len());
        for ((&m, pa), pb) in mask
            .data()
            .iter()
            .zip(a.data.chunks_exact(c))
            .zip(b.data.chunks_exact(c))
        {
            data.extend_from_slice(if m == 1 { pa } else { pb });
        }
        Ok(Self { data, ..*a })
    }
}

/// Teacher update `alpha * teacher + (1 - alpha) * student`.
pub fn ema_update(
    teacher: &ParameterVector,
    student: &ParameterVector,
    alpha: f64,
) -> Result<ParameterVector> {
    if teacher.len() != student.len() {
        return Err(Error::Shape(format!(
            "EMA: teacher has {} parameters, student {}",
            teacher.len(),
            student.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("EMA alpha must be in [0, 1], got {alpha}")));
    }
    let values = teacher
        .values()
        .iter()
        .zip(student.values())
        .map(|(&t, &s)| {
            let v = alpha * t + (1.0 - alpha) * s;
            // rounding can step one ulp outside the segment
            v.clamp(t.min(s), t.max(s))
        })
        .collect();
    ParameterVector::new(values)
}

/// Hard pseudo-label and its confidence per pixel. Ties go to the lowest class.
pub fn argmax_label(scores: &ClassLogitMap) -> Result<(SegMap, ProbMap)> {
    if scores.num_classes > DEFAULT_IGNORE_INDEX as usize {
        return Err(Error::Domain(format!(
            "{} classes do not fit an 8-bit label map",
            scores.num_classes
        )));
    }
    let probs = scores.softmax();
    let n = scores.width * scores.height;
    let mut labels = Vec::with_capacity(n);
    let mut conf = Vec::with_capacity(n);
    for (raw, p) in scores
        .data
        .chunks_exact(scores.num_classes)
        .zip(probs.data.chunks_exact(scores.num_classes))
    {
        let mut best = 0;
        for c in 1..raw.len() {
            if raw[c] > raw[best] {
                best = c;
            }
        }
        labels.push(best as u8);
        conf.push(p[best].clamp(0.0, 1.0));
    }
    Ok((
        SegMap::new(
            scores.width,
            scores.height,
            scores.num_classes,
            DEFAULT_IGNORE_INDEX,
            labels,
        )?,
        ProbMap::new(scores.width, scores.height, conf)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityWeight {
    pub value: f64,
    pub tau: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("tau must be in (0, 1), got {tau}")));
    }
    Ok(())
}

/// Fraction of pixels whose confidence strictly exceeds `tau`.
pub fn quality_weight(prob_mixed: &ProbMap, tau: f64) -> Result<QualityWeight> {
    check_tau(tau)?;
    let above = prob_mixed.data().iter().filter(|&&p| p > tau).count();
    Ok(QualityWeight {
        value: above as f64 / prob_mixed.data().len() as f64,
        tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub value: f64,
    pub counted_pixels: usize,
    /// Every pixel carried the ignore index; `value` is then 0.
    pub all_ignored: bool,
}

/// Mean of `-ln p(target)` over non-ignored pixels. Unnormalized scores are
/// softmax-normalized first.
pub fn cross_entropy(pred: &ClassLogitMap, target: &SegMap) -> Result<CrossEntropy> {
    ensure_same_dims("cross_entropy", pred.dims(), target.dims())?;
    if target.num_classes() > pred.num_classes {
        return Err(Error::Shape(format!(
            "target has {} classes, prediction {}",
            target.num_classes(),
            pred.num_classes
        )));
    }
    let probs = pred.softmax();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (px, &t) in probs.data.chunks_exact(probs.num_classes).zip(target.data()) {
        if t == target.ignore_index() {
            continue;
        }
        sum += -px[t as usize].max(f64::MIN_POSITIVE).ln();
        counted += 1;
    }
    if counted == 0 {
        warn!("cross-entropy over a fully ignored label map; reporting 0");
        return Ok(CrossEntropy {
            value: 0.0,
            counted_pixels: 0,
            all_ignored: true,
        });
    }
    Ok(CrossEntropy {
        // -0.0 from a perfect prediction is reported as 0
        value: (sum / counted as f64).max(0.0),
        counted_pixels: counted,
        all_ignored: false,
    })
}

/// Euclidean distance between two feature vectors.
pub fn feature_distance(f: &[f64], f_ref: &[f64]) -> Result<f64> {
    if f.len() != f_ref.len() {
        return Err(Error::Shape(format!(
            "feature lengths {} vs {}",
            f.len(),
            f_ref.len()
        )));
    }
    Ok(f.iter()
        .zip(f_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_f: f64,
    pub tau: f64,
}

impl LossConfig {
    pub fn new(lambda_f: f64, tau: f64) -> Result<Self> {
        if !(lambda_f.is_finite() && lambda_f >= 0.0) {
            return Err(Error::Domain(format!("lambda_F must be >= 0, got {lambda_f}")));
        }
        check_tau(tau)?;
        Ok(Self { lambda_f, tau })
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_f: DEFAULT_LAMBDA_F,
            tau: DEFAULT_TAU,
        }
    }
}

/// Raw loss inputs. Quality-weighted cross-entropies carry their weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTerms {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_trg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_src: Option<f64>,
    /// Cross-entropy on clean labeled samples (semi-supervised objective).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_labeled: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ce_mixed: Option<WeightedCe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdm: Option<WeightedCe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cdm: Option<WeightedCe>,
    /// Unweighted feature distance to the reference encoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feat_dist: Option<f64>,
    /// Depth loss computed by the upstream depth trainer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_sde: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedCe {
    pub ce: f64,
    pub quality: f64,
}

impl WeightedCe {
    fn contribution(&self, name: &str) -> Result<f64> {
        check_loss(name, self.ce)?;
        if !(0.0..=1.0).contains(&self.quality) {
            return Err(Error::Domain(format!(
                "{name}: quality weight {} outside [0, 1]",
                self.quality
            )));
        }
        Ok(self.quality * self.ce)
    }
}

fn check_loss(name: &str, v: f64) -> Result<f64> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Domain(format!("{name}: loss must be finite and >= 0, got {v}")));
    }
    Ok(v)
}

/// Weighted contributions of each present term and the objectives they form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce_trg: Option<f64>,
    pub ce_src: Option<f64>,
    pub dx_labeled: Option<f64>,
    /// `q' * ce_mixed`
    pub dx_mixed: Option<f64>,
    /// `q'_TDM * ce_TDM`
    pub tdm: Option<f64>,
    /// `q'_CDM * ce_CDM`
    pub cdm: Option<f64>,
    /// `lambda_F * feat_dist`
    pub feat_dist: Option<f64>,
    pub external_sde: Option<f64>,
    /// Sum of every present term above.
    pub total: f64,
    /// Labeled plus quality-weighted mixed cross-entropy.
    pub l_dx: Option<f64>,
    /// Depth loss plus `l_dx`.
    pub l_mtl: Option<f64>,
    /// Clean target + clean source + CDM + TDM + depth loss.
    pub l_ssda: Option<f64>,
    /// Depth loss plus weighted feature distance.
    pub l_pretrain: Option<f64>,
}

fn sum_present(terms: &[Option<f64>]) -> Option<f64> {
    if terms.iter().all(Option::is_none) {
        return None;
    }
    Some(terms.iter().flatten().sum())
}

pub fn aggregate_losses(terms: &LossTerms, cfg: &LossConfig) -> Result<LossReport> {
    let ce_trg = terms.ce_trg.map(|v| check_loss("ce_trg", v)).transpose()?;
    let ce_src = terms.ce_src.map(|v| check_loss("ce_src", v)).transpose()?;
    let dx_labeled = terms.ce_labeled.map(|v| check_loss("ce_labeled", v)).transpose()?;
    let dx_mixed = terms.ce_mixed.map(|w| w.contribution("ce_mixed")).transpose()?;
    let tdm = terms.tdm.map(|w| w.contribution("tdm")).transpose()?;
    let cdm = terms.cdm.map(|w| w.contribution("cdm")).transpose()?;
    let feat_dist = terms
        .feat_dist
        .map(|v| check_loss("feat_dist", v).map(|v| cfg.lambda_f * v))
        .transpose()?;
    let external_sde = terms
        .external_sde
        .map(|v| check_loss("external_sde", v))
        .transpose()?;

    let l_dx = sum_present(&[dx_labeled, dx_mixed]);
    let l_mtl = l_dx.map(|dx| dx + external_sde.unwrap_or(0.0));
    let l_ssda = sum_present(&[ce_trg, ce_src, cdm, tdm])
        .map(|s| s + external_sde.unwrap_or(0.0));
    let l_pretrain = feat_dist.map(|f| external_sde.unwrap_or(0.0) + f);
    let total = [
        ce_trg,
        ce_src,
        dx_labeled,
        dx_mixed,
        tdm,
        cdm,
        feat_dist,
        external_sde,
    ]
    .iter()
    .flatten()
    .sum();

    Ok(LossReport {
        ce_trg,
        ce_src,
        dx_labeled,
        dx_mixed,
        tdm,
        cdm,
        feat_dist,
        external_sde,
        total,
        l_dx,
        l_mtl,
        l_ssda,
        l_pretrain,
    })
}
