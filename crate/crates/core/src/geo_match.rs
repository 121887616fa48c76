//! Geometry-matched pairing of source and target samples and the SSDA batch
//! planner.
//!
//! The geometric difference of two samples is the mean absolute difference of
//! `ln(1 + disparity)` over the rows that survive cropping a top band (sky)
//! and a bottom band (ego vehicle). Cross-domain mixes pair a randomly drawn
//! target with whichever of a few random source candidates is closest in that
//! sense.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, DisparityMap, Domain, ManifestEntry, SeededRng};
use crate::error::{ensure_same_dims, Error, Result};

pub const DEFAULT_TOP_MARGIN: usize = 80;
pub const DEFAULT_BOTTOM_MARGIN: usize = 100;
pub const DEFAULT_NUM_CANDIDATES: usize = 5;
/// Image height the default margins are stated for.
pub const REFERENCE_HEIGHT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMatchConfig {
    pub top_margin: usize,
    pub bottom_margin: usize,
    /// Use the margins verbatim instead of scaling them from a 512-row image.
    #[serde(default)]
    pub absolute_margins: bool,
    pub num_candidates: usize,
    pub seed: u64,
}

impl Default for GeoMatchConfig {
    fn default() -> Self {
        Self {
            top_margin: DEFAULT_TOP_MARGIN,
            bottom_margin: DEFAULT_BOTTOM_MARGIN,
            absolute_margins: false,
            num_candidates: DEFAULT_NUM_CANDIDATES,
            seed: 0,
        }
    }
}

impl GeoMatchConfig {
    /// Rows cropped at the top and bottom of an image with `height` rows.
    pub fn margins_for(&self, height: usize) -> Result<(usize, usize)> {
        let (top, bottom) = if self.absolute_margins || height == REFERENCE_HEIGHT {
            (self.top_margin, self.bottom_margin)
        } else {
            let scale = |m: usize| (m as f64 * height as f64 / REFERENCE_HEIGHT as f64).round() as usize;
            (scale(self.top_margin), scale(self.bottom_margin))
        };
        if top + bottom >= height {
            return Err(Error::Domain(format!(
                "margins {top}+{bottom} leave no rows of a {height}-row image"
            )));
        }
        Ok((top, bottom))
    }
}

pub fn geometric_difference(
    disp_i: &DisparityMap,
    disp_j: &DisparityMap,
    cfg: &GeoMatchConfig,
) -> Result<f64> {
    ensure_same_dims("geometric_difference", disp_i.dims(), disp_j.dims())?;
    let (w, h) = disp_i.dims();
    let (top, bottom) = cfg.margins_for(h)?;
    let rows = top..h - bottom;
    let n = (rows.len() * w) as f64;
    let sum: f64 = rows
        .map(|y| {
            disp_i
                .row(y)
                .iter()
                .zip(disp_j.row(y))
                .map(|(&a, &b)| (a.ln_1p() - b.ln_1p()).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(sum / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoMatch {
    pub id: String,
    pub difference: f64,
    /// Every candidate with its difference, in input order.
    pub scores: Vec<(String, f64)>,
}

/// Candidate with the smallest geometric difference to the target; ties go to
/// the lexicographically lowest id.
pub fn match_geometry(
    target: &DisparityMap,
    candidates: &[(String, DisparityMap)],
    cfg: &GeoMatchConfig,
) -> Result<GeoMatch> {
    if candidates.is_empty() {
        return Err(Error::Planning("no candidates to match against".into()));
    }
    let scores: Vec<(String, f64)> = candidates
        .par_iter()
        .map(|(id, d)| {
            geometric_difference(target, d, cfg)
                .map(|g| (id.clone(), g))
                .map_err(|e| Error::validation(id, e.to_string()))
        })
        .collect::<Result<_>>()?;
    let (id, difference) = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .cloned()
        .expect("non-empty");
    Ok(GeoMatch {
        id,
        difference,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanKind {
    #[serde(rename = "TDM")]
    Tdm,
    #[serde(rename = "CDM")]
    Cdm,
    #[serde(rename = "clean_src")]
    CleanSrc,
    #[serde(rename = "clean_trg")]
    CleanTrg,
}

impl PlanKind {
    pub fn is_mix(self) -> bool {
        matches!(self, PlanKind::Tdm | PlanKind::Cdm)
    }
}

/// One training sample of a batch: a clean labeled sample or a mix of two.
///
/// For mixes, `sample_i` is pasted over `sample_j` where it is closer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub batch: usize,
    pub kind: PlanKind,
    pub sample_i: String,
    pub sample_j: Option<String>,
    pub labeled_i: bool,
    pub labeled_j: Option<bool>,
    pub epsilon: Option<f64>,
    /// Filled in once the mix has been rendered.
    pub quality_weight: Option<f64>,
    pub geometric_difference: Option<f64>,
    /// CDM only: every source candidate considered, with its difference.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<(String, f64)>,
    pub seed: u64,
}

/// Disparity maps by image id.
pub trait DisparitySource: Sync {
    fn disparity(&self, id: &str) -> Result<Arc<DisparityMap>>;
}

/// Loads disparities referenced by a manifest, caching each map once read.
pub struct ManifestDisparities<'m> {
    manifest: &'m DatasetManifest,
    cache: Mutex<HashMap<String, Arc<DisparityMap>>>,
}

impl<'m> ManifestDisparities<'m> {
    pub fn new(manifest: &'m DatasetManifest) -> Self {
        Self {
            manifest,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl DisparitySource for ManifestDisparities<'_> {
    fn disparity(&self, id: &str) -> Result<Arc<DisparityMap>> {
        if let Some(d) = self.cache.lock().expect("cache lock").get(id) {
            return Ok(d.clone());
        }
        let entry = self
            .manifest
            .entry(id)
            .ok_or_else(|| Error::validation(id, "not in manifest"))?;
        let d = Arc::new(
            self.manifest
                .load_disparity(entry)
                .map_err(|e| Error::validation(id, e.to_string()))?,
        );
        self.cache
            .lock()
            .expect("cache lock")
            .insert(id.to_string(), d.clone());
        Ok(d)
    }
}

impl DisparitySource for HashMap<String, DisparityMap> {
    fn disparity(&self, id: &str) -> Result<Arc<DisparityMap>> {
        self.get(id)
            .cloned()
            .map(Arc::new)
            .ok_or_else(|| Error::validation(id, "no disparity"))
    }
}

struct Pools<'a> {
    labeled_src: Vec<&'a ManifestEntry>,
    labeled_trg: Vec<&'a ManifestEntry>,
    all_trg: Vec<&'a ManifestEntry>,
}

impl<'a> Pools<'a> {
    fn new(manifest: &'a DatasetManifest) -> Result<Self> {
        let pick = |domain, labeled_only: bool| -> Vec<&ManifestEntry> {
            manifest
                .entries
                .iter()
                .filter(|e| e.domain == domain && (e.labeled || !labeled_only))
                .collect()
        };
        let pools = Self {
            labeled_src: pick(Domain::Source, true),
            labeled_trg: pick(Domain::Target, true),
            all_trg: pick(Domain::Target, false),
        };
        if pools.labeled_src.is_empty() {
            return Err(Error::Planning("manifest has no labeled source entries".into()));
        }
        if pools.labeled_trg.is_empty() {
            return Err(Error::Planning("manifest has no labeled target entries".into()));
        }
        Ok(pools)
    }
}

fn draw<'a>(rng: &mut SeededRng, pool: &[&'a ManifestEntry]) -> &'a ManifestEntry {
    pool[rng.gen_range(0..pool.len())]
}

/// Plans one batch: clean source, clean target, target-target mix and
/// geometry-matched source-target mix, drawn in that order from `rng`.
pub fn plan_ssda_batch(
    manifest: &DatasetManifest,
    cfg: &GeoMatchConfig,
    epsilon: f64,
    batch: usize,
    rng: &mut SeededRng,
    disparities: &dyn DisparitySource,
) -> Result<Vec<MixPlan>> {
    let pools = Pools::new(manifest)?;
    plan_batch(&pools, cfg, epsilon, batch, rng, disparities)
}

fn plan_batch(
    pools: &Pools<'_>,
    cfg: &GeoMatchConfig,
    epsilon: f64,
    batch: usize,
    rng: &mut SeededRng,
    disparities: &dyn DisparitySource,
) -> Result<Vec<MixPlan>> {
    if cfg.num_candidates == 0 {
        return Err(Error::Config("num_candidates must be at least 1".into()));
    }
    let clean = |kind, e: &ManifestEntry| MixPlan {
        batch,
        kind,
        sample_i: e.id.clone(),
        sample_j: None,
        labeled_i: e.labeled,
        labeled_j: None,
        epsilon: None,
        quality_weight: None,
        geometric_difference: None,
        candidates: Vec::new(),
        seed: cfg.seed,
    };
    let src = draw(rng, &pools.labeled_src);
    let trg = draw(rng, &pools.labeled_trg);
    let mut plans = vec![clean(PlanKind::CleanSrc, src), clean(PlanKind::CleanTrg, trg)];

    let ti = rng.gen_range(0..pools.all_trg.len());
    let tj = if pools.all_trg.len() > 1 {
        // uniform over the other targets
        let k = rng.gen_range(0..pools.all_trg.len() - 1);
        if k >= ti {
            k + 1
        } else {
            k
        }
    } else {
        ti
    };
    let (a, b) = (pools.all_trg[ti], pools.all_trg[tj]);
    plans.push(MixPlan {
        kind: PlanKind::Tdm,
        sample_j: Some(b.id.clone()),
        labeled_j: Some(b.labeled),
        epsilon: Some(epsilon),
        ..clean(PlanKind::Tdm, a)
    });

    // the target anchors the match and is drawn before the candidates
    let anchor = draw(rng, &pools.all_trg);
    let k = cfg.num_candidates.min(pools.labeled_src.len());
    let picks = index::sample(rng, pools.labeled_src.len(), k).into_vec();
    let anchor_disp = disparities.disparity(&anchor.id)?;
    let candidates: Vec<(String, DisparityMap)> = picks
        .par_iter()
        .map(|&i| {
            let id = &pools.labeled_src[i].id;
            disparities
                .disparity(id)
                .map(|d| (id.clone(), (*d).clone()))
        })
        .collect::<Result<_>>()?;
    let m = match_geometry(&anchor_disp, &candidates, cfg)?;
    let winner = pools
        .labeled_src
        .iter()
        .find(|e| e.id == m.id)
        .expect("winner drawn from pool");
    plans.push(MixPlan {
        kind: PlanKind::Cdm,
        sample_j: Some(anchor.id.clone()),
        labeled_j: Some(anchor.labeled),
        epsilon: Some(epsilon),
        geometric_difference: Some(m.difference),
        candidates: m.scores,
        ..clean(PlanKind::Cdm, winner)
    });
    Ok(plans)
}

/// Plans `batches` consecutive batches from one RNG stream seeded by `cfg.seed`.
pub fn plan_ssda(
    manifest: &DatasetManifest,
    cfg: &GeoMatchConfig,
    epsilon: f64,
    batches: usize,
    disparities: &dyn DisparitySource,
) -> Result<Vec<MixPlan>> {
    let pools = Pools::new(manifest)?;
    let mut rng = crate::data::seeded_rng(cfg.seed);
    let mut out = Vec::with_capacity(batches * 4);
    for b in 0..batches {
        out.extend(plan_batch(&pools, cfg, epsilon, b, &mut rng, disparities)?);
    }
    Ok(out)
}

/// Checks the domain contract of emitted plans against the manifest.
pub fn check_plan_domains(manifest: &DatasetManifest, plans: &[MixPlan]) -> Result<()> {
    let domain = |id: &str| {
        manifest
            .entry(id)
            .map(|e| e.domain)
            .ok_or_else(|| Error::validation(id, "plan references unknown id"))
    };
    for p in plans {
        let di = domain(&p.sample_i)?;
        let dj = p.sample_j.as_deref().map(domain).transpose()?;
        let ok = match p.kind {
            PlanKind::CleanSrc => di == Domain::Source && dj.is_none(),
            PlanKind::CleanTrg => di == Domain::Target && dj.is_none(),
            PlanKind::Tdm => di == Domain::Target && dj == Some(Domain::Target),
            PlanKind::Cdm => di == Domain::Source && dj == Some(Domain::Target),
        };
        if !ok {
            return Err(Error::validation(
                &p.sample_i,
                format!("{:?} plan in batch {} violates its domain contract", p.kind, p.batch),
            ));
        }
    }
    Ok(())
}
