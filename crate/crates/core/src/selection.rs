//! Automatic selection of images for annotation.
//!
//! Selection proceeds over a schedule of cumulative target sizes. The first
//! image is drawn uniformly from the seed; the rest of step 1 is farthest-point
//! sampling in feature space. From step 2 on every candidate's score is its
//! distance to the selected set plus `lambda_e` times the disagreement between
//! a depth student trained on the selected set and the depth teacher.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    read_disparity, read_tensor, seeded_rng, DatasetManifest, DisparityMap, Domain,
    FeatureEmbedding, SegMap, Tensor,
};
use crate::error::{ensure_same_dims, Error, Result};

pub const DEFAULT_SCHEDULE: [usize; 6] = [25, 50, 100, 200, 372, 744];
pub const DEFAULT_LAMBDA_E: f64 = 1000.0;
/// Pooled feature grid, rows x columns.
pub const POOL_ROWS: usize = 4;
pub const POOL_COLS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub schedule: Vec<usize>,
    pub lambda_e: f64,
    pub seed: u64,
}

impl SelectionConfig {
    pub fn new(schedule: Vec<usize>, lambda_e: f64, seed: u64) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::Config("selection schedule is empty".into()));
        }
        if schedule[0] == 0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "selection schedule must be positive and strictly increasing, got {schedule:?}"
            )));
        }
        if !(lambda_e.is_finite() && lambda_e >= 0.0) {
            return Err(Error::Config(format!("lambda_E must be >= 0, got {lambda_e}")));
        }
        Ok(Self {
            schedule,
            lambda_e,
            seed,
        })
    }

    /// Final annotation budget.
    pub fn budget(&self) -> usize {
        *self.schedule.last().expect("validated non-empty")
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            schedule: DEFAULT_SCHEDULE.to_vec(),
            lambda_e: DEFAULT_LAMBDA_E,
            seed: 0,
        }
    }
}

/// Partition of the pool into selected (in pick order) and remaining ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub selected: Vec<String>,
    pub remaining: BTreeSet<String>,
    /// Number of completed schedule steps.
    pub step: usize,
    /// Latest uncertainty score per remaining id, when one has been supplied.
    pub uncertainty: BTreeMap<String, f64>,
}

impl SelectionState {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Result<Self> {
        let mut remaining = BTreeSet::new();
        for id in ids {
            if !remaining.insert(id.clone()) {
                return Err(Error::validation(id, "duplicate image id in selection pool"));
            }
        }
        Ok(Self {
            selected: Vec::new(),
            remaining,
            step: 0,
            uncertainty: BTreeMap::new(),
        })
    }

    pub fn pool_size(&self) -> usize {
        self.selected.len() + self.remaining.len()
    }

    fn move_to_selected(&mut self, id: &str) {
        let was_there = self.remaining.remove(id);
        debug_assert!(was_there);
        self.uncertainty.remove(id);
        self.selected.push(id.to_string());
    }
}

/// Average-pools a `(C, H, W)` tensor onto a 4 x 8 grid, channel-major.
///
/// Cell boundaries are `floor(k * H / 4)` and `floor(k * W / 8)`, so sizes
/// differ by at most one when the extent is not divisible.
pub fn pool_features(t: &Tensor) -> Result<Vec<f64>> {
    let [c, h, w] = *t.dims() else {
        return Err(Error::Shape(format!(
            "feature tensor must be rank 3 (C, H, W), got {:?}",
            t.dims()
        )));
    };
    if c == 0 || h < POOL_ROWS || w < POOL_COLS {
        return Err(Error::Shape(format!(
            "feature tensor {:?} cannot be pooled to {POOL_ROWS}x{POOL_COLS}",
            t.dims()
        )));
    }
    let data = t.data();
    let mut out = Vec::with_capacity(c * POOL_ROWS * POOL_COLS);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for r in 0..POOL_ROWS {
            let (y0, y1) = (r * h / POOL_ROWS, (r + 1) * h / POOL_ROWS);
            for q in 0..POOL_COLS {
                let (x0, x1) = (q * w / POOL_COLS, (q + 1) * w / POOL_COLS);
                let mut sum = 0.0f64;
                for y in y0..y1 {
                    for &v in &plane[y * w + x0..y * w + x1] {
                        sum += v as f64;
                    }
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(out)
}

/// Per-channel dataset statistics of pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// `pooled` vectors are channel-major with `cells` values per channel.
    pub fn compute(pooled: &[Vec<f64>], cells: usize) -> Result<Self> {
        let first = pooled
            .first()
            .ok_or_else(|| Error::Selection("no features to normalize".into()))?;
        let channels = first.len() / cells;
        let n = (pooled.len() * cells) as f64;
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for v in pooled {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += v[ch * cells..(ch + 1) * cells].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for v in pooled {
            for (ch, s) in std.iter_mut().enumerate() {
                *s += v[ch * cells..(ch + 1) * cells]
                    .iter()
                    .map(|x| (x - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(Self { mean, std })
    }

    /// Z-scores each channel; channels with no spread map to 0.
    pub fn normalize(&self, pooled: &[f64]) -> Vec<f64> {
        let cells = pooled.len() / self.mean.len();
        pooled
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i / cells;
                let (m, s) = (self.mean[ch], self.std[ch]);
                if s <= 1e-12 * m.abs().max(1.0) {
                    0.0
                } else {
                    (v - m) / s
                }
            })
            .collect()
    }
}

/// Pools and normalizes one raw feature tensor per image over the whole set.
pub fn preprocess_features(raw: &[(String, Tensor)]) -> Result<Vec<FeatureEmbedding>> {
    if raw.is_empty() {
        return Err(Error::Selection("cannot preprocess an empty dataset".into()));
    }
    let mut pooled = Vec::with_capacity(raw.len());
    for (id, t) in raw {
        let p = pool_features(t).map_err(|e| Error::validation(id, e.to_string()))?;
        if !pooled.is_empty() && p.len() != pooled.first().map(Vec::len).unwrap_or(0) {
            return Err(Error::validation(id, "feature channel count differs from the dataset"));
        }
        pooled.push(p);
    }
    let stats = FeatureStats::compute(&pooled, POOL_ROWS * POOL_COLS)?;
    raw.iter()
        .zip(&pooled)
        .map(|((id, _), p)| FeatureEmbedding::new(id.clone(), stats.normalize(p)))
        .collect()
}

/// Mean absolute difference of `ln(1 + disparity)` between student and teacher.
pub fn uncertainty_score(student: &DisparityMap, teacher: &DisparityMap) -> Result<f64> {
    ensure_same_dims("uncertainty_score", student.dims(), teacher.dims())?;
    let sum: f64 = student
        .data()
        .iter()
        .zip(teacher.data())
        .map(|(&s, &t)| (t.ln_1p() - s.ln_1p()).abs())
        .sum();
    Ok(sum / student.data().len() as f64)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from a candidate to its nearest already-selected embedding.
pub fn diversity_distance(candidate: &FeatureEmbedding, selected: &[FeatureEmbedding]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Selection(
            "diversity distance needs at least one selected embedding".into(),
        ));
    }
    let mut best = f64::INFINITY;
    for s in selected {
        if s.vector.len() != candidate.vector.len() {
            return Err(Error::Shape(format!(
                "embedding `{}` has length {}, `{}` has {}",
                s.image_id,
                s.vector.len(),
                candidate.image_id,
                candidate.vector.len()
            )));
        }
        best = best.min(l2(&candidate.vector, &s.vector));
    }
    Ok(best)
}

/// Index of the uniformly drawn first pick among `n` ids in sorted order.
pub fn first_pick_index(seed: u64, n: usize) -> usize {
    seeded_rng(seed).gen_range(0..n)
}

/// Incremental greedy selector for one schedule step.
///
/// Keeps, for every remaining id, the distance to its nearest selected
/// embedding so each pick costs one pass over the pool.
pub struct GreedySelector<'a> {
    state: SelectionState,
    ids: Vec<&'a str>,
    vectors: Vec<&'a [f64]>,
    alive: Vec<bool>,
    min_dist: Vec<f64>,
    bonus: Vec<f64>,
    target: usize,
}

impl<'a> GreedySelector<'a> {
    pub fn new(
        state: &SelectionState,
        embeddings: &'a [FeatureEmbedding],
        cfg: &SelectionConfig,
        uncertainties: Option<&BTreeMap<String, f64>>,
    ) -> Result<Self> {
        let step = state.step + 1;
        let target = *cfg.schedule.get(state.step).ok_or_else(|| {
            Error::Selection(format!(
                "schedule has {} steps; step {step} requested",
                cfg.schedule.len()
            ))
        })?;
        if target > state.pool_size() {
            return Err(Error::Selection(format!(
                "step {step} targets {target} images but the pool holds {}",
                state.pool_size()
            )));
        }
        if target < state.selected.len() {
            return Err(Error::Selection(format!(
                "step {step} targets {target} images but {} are already selected",
                state.selected.len()
            )));
        }

        let by_id: HashMap<&str, &FeatureEmbedding> =
            embeddings.iter().map(|e| (e.image_id.as_str(), e)).collect();
        let dim = embeddings.first().map(|e| e.vector.len()).unwrap_or(0);
        let lookup = |id: &str| -> Result<&'a [f64]> {
            let e = by_id
                .get(id)
                .ok_or_else(|| Error::validation(id, "no feature embedding"))?;
            if e.vector.len() != dim {
                return Err(Error::validation(id, "embedding length differs from the pool"));
            }
            Ok(e.vector.as_slice())
        };

        // BTreeSet iteration gives ids in ascending order: index order is tie order.
        let ids: Vec<&'a str> = state
            .remaining
            .iter()
            .map(|id| by_id.get(id.as_str()).map(|e| e.image_id.as_str()).ok_or_else(|| Error::validation(id, "no feature embedding")))
            .collect::<Result<_>>()?;
        let vectors: Vec<&'a [f64]> = ids.iter().map(|id| lookup(id)).collect::<Result<_>>()?;
        let selected_vecs: Vec<&'a [f64]> = state
            .selected
            .iter()
            .map(|id| lookup(id))
            .collect::<Result<_>>()?;

        let mut next = state.clone();
        let bonus = if step >= 2 {
            let u = uncertainties.ok_or_else(|| {
                Error::Selection(format!(
                    "step {step} needs uncertainty scores from a student trained on the current selection"
                ))
            })?;
            next.uncertainty.clear();
            ids.iter()
                .map(|&id| {
                    let e = *u
                        .get(id)
                        .ok_or_else(|| Error::validation(id, "missing uncertainty score"))?;
                    if !(e.is_finite() && e >= 0.0) {
                        return Err(Error::validation(id, format!("invalid uncertainty score {e}")));
                    }
                    next.uncertainty.insert(id.to_string(), e);
                    Ok(cfg.lambda_e * e)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![0.0; ids.len()]
        };

        let min_dist = vectors
            .par_iter()
            .map(|v| {
                selected_vecs
                    .iter()
                    .map(|s| l2(v, s))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();

        let mut selector = Self {
            state: next,
            alive: vec![true; ids.len()],
            ids,
            vectors,
            min_dist,
            bonus,
            target,
        };
        if selector.state.selected.is_empty() && target > 0 {
            let idx = first_pick_index(cfg.seed, selector.ids.len());
            selector.take(idx);
        }
        Ok(selector)
    }

    pub fn state(&self) -> &SelectionState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.selected.len() >= self.target
    }

    /// Score of a remaining candidate under the current selection.
    pub fn score(&self, idx: usize) -> f64 {
        self.min_dist[idx] + self.bonus[idx]
    }

    fn take(&mut self, idx: usize) {
        self.alive[idx] = false;
        let id = self.ids[idx];
        self.state.move_to_selected(id);
        let picked = self.vectors[idx];
        let vectors = &self.vectors;
        self.min_dist
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, d)| {
                let nd = l2(vectors[i], picked);
                if nd < *d {
                    *d = nd;
                }
            });
    }

    /// Moves the best-scoring remaining id into the selection.
    pub fn pick_one(&mut self) -> Option<String> {
        if self.is_done() {
            return None;
        }
        let best = (0..self.ids.len())
            .into_par_iter()
            .filter(|&i| self.alive[i])
            .map(|i| (i, self.score(i)))
            .reduce_with(|a, b| {
                // total order: higher score, then lower id
                if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            })?;
        self.take(best.0);
        Some(self.ids[best.0].to_string())
    }

    pub fn finish(mut self) -> SelectionState {
        while self.pick_one().is_some() {}
        self.state.step += 1;
        self.state
    }
}

/// Runs one schedule step to completion.
pub fn select_step(
    state: &SelectionState,
    embeddings: &[FeatureEmbedding],
    cfg: &SelectionConfig,
    uncertainties: Option<&BTreeMap<String, f64>>,
) -> Result<SelectionState> {
    Ok(GreedySelector::new(state, embeddings, cfg, uncertainties)?.finish())
}

/// Supplies per-image uncertainty scores before each step from the second on.
pub trait UncertaintyProvider {
    fn scores(&mut self, step: usize, state: &SelectionState) -> Result<BTreeMap<String, f64>>;
}

impl<F> UncertaintyProvider for F
where
    F: FnMut(usize, &SelectionState) -> Result<BTreeMap<String, f64>>,
{
    fn scores(&mut self, step: usize, state: &SelectionState) -> Result<BTreeMap<String, f64>> {
        self(step, state)
    }
}

/// Reads uncertainty inputs for step `t` from a directory:
///
/// - `step{t}.json`: precomputed `{ "<id>": score, ... }`, or
/// - `step{t}/<id>.png`: student disparity per remaining id, compared with
///   the manifest's (teacher) disparity.
pub struct UncertaintyDir<'m> {
    dir: PathBuf,
    manifest: &'m DatasetManifest,
}

impl<'m> UncertaintyDir<'m> {
    pub fn new(dir: impl Into<PathBuf>, manifest: &'m DatasetManifest) -> Self {
        Self {
            dir: dir.into(),
            manifest,
        }
    }
}

impl UncertaintyProvider for UncertaintyDir<'_> {
    fn scores(&mut self, step: usize, state: &SelectionState) -> Result<BTreeMap<String, f64>> {
        let file = self.dir.join(format!("step{step}.json"));
        if file.is_file() {
            let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            return serde_json::from_str(&text).map_err(|e| Error::json(&file, e));
        }
        let sub = self.dir.join(format!("step{step}"));
        if !sub.is_dir() {
            return Err(Error::Selection(format!(
                "no uncertainty input for step {step}: expected {} or {}",
                file.display(),
                sub.display()
            )));
        }
        let ids: Vec<&String> = state.remaining.iter().collect();
        let scores = ids
            .par_iter()
            .map(|id| {
                let entry = self
                    .manifest
                    .entry(id)
                    .ok_or_else(|| Error::validation(id.as_str(), "not in manifest"))?;
                let teacher = self.manifest.load_disparity(entry)?;
                let student = read_disparity(sub.join(format!("{id}.png")))?;
                let e = uncertainty_score(&student, &teacher)
                    .map_err(|err| Error::validation(id.as_str(), err.to_string()))?;
                Ok(((*id).clone(), e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(scores.into_iter().collect())
    }
}

/// Selection after one completed schedule step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub selected: Vec<String>,
}

/// Loads every target-domain entry's feature tensor in manifest order.
pub fn load_pool_features(manifest: &DatasetManifest) -> Result<Vec<(String, Tensor)>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| e.domain == Domain::Target)
        .map(|e| {
            let rel = e
                .feature
                .as_deref()
                .ok_or_else(|| Error::validation(&e.id, "entry has no feature path"))?;
            Ok((e.id.clone(), read_tensor(manifest.resolve(rel))?))
        })
        .collect()
}

/// Full multi-step selection over the target-domain entries of a manifest.
///
/// `on_step` sees each step's result as soon as it is final, so earlier
/// outputs survive a later provider failure.
pub fn run_selection(
    manifest: &DatasetManifest,
    cfg: &SelectionConfig,
    provider: &mut dyn UncertaintyProvider,
    on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<SelectionState> {
    let raw = load_pool_features(manifest)?;
    let embeddings = preprocess_features(&raw)?;
    run_selection_on(&embeddings, cfg, provider, on_step)
}

pub fn run_selection_on(
    embeddings: &[FeatureEmbedding],
    cfg: &SelectionConfig,
    provider: &mut dyn UncertaintyProvider,
    on_step: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<SelectionState> {
    let mut state = SelectionState::new(embeddings.iter().map(|e| e.image_id.clone()))?;
    if cfg.budget() > state.pool_size() {
        return Err(Error::Selection(format!(
            "budget {} exceeds pool of {} images",
            cfg.budget(),
            state.pool_size()
        )));
    }
    for t in 1..=cfg.schedule.len() {
        let scores = if t >= 2 {
            Some(provider.scores(t, &state)?)
        } else {
            None
        };
        state = select_step(&state, embeddings, cfg, scores.as_ref())?;
        on_step(&StepRecord {
            step: t,
            selected: state.selected.clone(),
        })?;
    }
    Ok(state)
}

/// Selected-to-total pixel ratio per ground-truth class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub num_classes: usize,
    /// `None` for classes absent from the full set.
    pub ratios: Vec<Option<f64>>,
    pub selected_pixels: Vec<u64>,
    pub total_pixels: Vec<u64>,
}

pub fn class_frequency_report(selected: &[&SegMap], full: &[&SegMap]) -> Result<FrequencyReport> {
    let num_classes = full
        .first()
        .or(selected.first())
        .map(|m| m.num_classes())
        .ok_or_else(|| Error::Selection("no label maps to report on".into()))?;
    let tally = |maps: &[&SegMap]| -> Result<Vec<u64>> {
        let mut acc = vec![0u64; num_classes];
        for m in maps {
            if m.num_classes() != num_classes {
                return Err(Error::Shape(format!(
                    "label maps disagree on class count: {} vs {num_classes}",
                    m.num_classes()
                )));
            }
            for (a, h) in acc.iter_mut().zip(m.class_histogram()) {
                *a += h;
            }
        }
        Ok(acc)
    };
    let selected_pixels = tally(selected)?;
    let total_pixels = tally(full)?;
    let ratios = selected_pixels
        .iter()
        .zip(&total_pixels)
        .map(|(&s, &t)| (t > 0).then(|| s as f64 / t as f64))
        .collect();
    Ok(FrequencyReport {
        num_classes,
        ratios,
        selected_pixels,
        total_pixels,
    })
}

/// Reads a selection output: either a step record object or a bare id list.
pub fn read_selected_ids(path: &Path) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Sel {
        List(Vec<String>),
        Record { selected: Vec<String> },
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sel: Sel = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(match sel {
        Sel::List(v) | Sel::Record { selected: v } => v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn emb(id: &str, v: &[f64]) -> FeatureEmbedding {
        FeatureEmbedding::new(id, v.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::new(vec![], 1.0, 0).is_err());
        assert!(SelectionConfig::new(vec![3, 3], 1.0, 0).is_err());
        assert!(SelectionConfig::new(vec![0, 3], 1.0, 0).is_err());
        assert!(SelectionConfig::new(vec![1, 3], -1.0, 0).is_err());
        assert_eq!(SelectionConfig::default().budget(), 744);
    }

    #[test]
    fn constant_features_normalize_to_zero() {
        let t = Tensor::new(vec![3, 8, 16], vec![0.7; 3 * 8 * 16]).unwrap();
        assert!(pool_features(&t).unwrap().iter().all(|&v| (v - 0.7f32 as f64).abs() < 1e-12));
        let raw: Vec<_> = (0..4).map(|i| (format!("i{i}"), t.clone())).collect();
        for e in preprocess_features(&raw).unwrap() {
            assert!(e.vector.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn eight_by_four_pools_to_identity() {
        let data: Vec<f32> = (0..64).map(|i| i as f32).collect();
        let t = Tensor::new(vec![2, 4, 8], data.clone()).unwrap();
        let pooled = pool_features(&t).unwrap();
        assert_eq!(pooled, data.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn pooling_matches_cell_means() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (16, 64, 32);
        let data: Vec<f32> = (0..c * h * w).map(|_| r.gen_range(-1.0..1.0)).collect();
        let t = Tensor::new(vec![c, h, w], data.clone()).unwrap();
        let pooled = pool_features(&t).unwrap();
        // 64x32 over a 4x8 grid -> 16x4 cells
        for ch in 0..c {
            for row in 0..4 {
                for col in 0..8 {
                    let mut s = 0.0;
                    for y in row * 16..row * 16 + 16 {
                        for x in col * 4..col * 4 + 4 {
                            s += data[ch * h * w + y * w + x] as f64;
                        }
                    }
                    let got = pooled[ch * 32 + row * 8 + col];
                    assert!((got - s / 64.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn uneven_pooling_and_errors() {
        let t = Tensor::new(vec![1, 5, 9], (0..45).map(|v| v as f32).collect()).unwrap();
        assert_eq!(pool_features(&t).unwrap().len(), 32);
        let small = Tensor::new(vec![1, 3, 8], vec![0.0; 24]).unwrap();
        assert!(pool_features(&small).is_err());
        assert!(pool_features(&Tensor::new(vec![4, 8], vec![0.0; 32]).unwrap()).is_err());
        assert!(preprocess_features(&[]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        let a = DisparityMap::filled(3, 3, 0.4).unwrap();
        assert_eq!(uncertainty_score(&a, &a).unwrap(), 0.0);
        let teacher = DisparityMap::filled(3, 3, std::f64::consts::E - 1.0).unwrap();
        let student = DisparityMap::filled(3, 3, 0.0).unwrap();
        assert!((uncertainty_score(&student, &teacher).unwrap() - 1.0).abs() < 1e-15);
        let b = DisparityMap::filled(3, 2, 0.4).unwrap();
        assert!(matches!(uncertainty_score(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn diversity_examples() {
        let c = emb("c", &[1.0, 0.0]);
        let sel = [emb("a", &[0.0, 0.0]), emb("b", &[5.0, 0.0])];
        assert_eq!(diversity_distance(&c, &sel).unwrap(), 1.0);
        assert_eq!(diversity_distance(&sel[1], &sel).unwrap(), 0.0);
        assert!(diversity_distance(&c, &[]).is_err());
    }

    #[test]
    fn collinear_farthest_point_order() {
        let embs = [emb("p0", &[0.0]), emb("p1", &[1.0]), emb("p10", &[10.0])];
        let mut state = SelectionState::new(embs.iter().map(|e| e.image_id.clone())).unwrap();
        state.move_to_selected("p0");
        let cfg = SelectionConfig::new(vec![3], 0.0, 0).unwrap();
        let out = select_step(&state, &embs, &cfg, None).unwrap();
        assert_eq!(out.selected, vec!["p0", "p10", "p1"]);
        assert!(out.remaining.is_empty());
        assert_eq!(out.step, 1);
    }

    #[test]
    fn zero_lambda_equals_pure_diversity() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let embs: Vec<_> = (0..30)
            .map(|i| emb(&format!("x{i:02}"), &[r.gen(), r.gen(), r.gen()]))
            .collect();
        let uniform: BTreeMap<String, f64> = embs.iter().map(|e| (e.image_id.clone(), 0.3)).collect();
        let diverse = SelectionConfig::new(vec![12], 0.0, 9).unwrap();
        let expected = select_step(
            &SelectionState::new(embs.iter().map(|e| e.image_id.clone())).unwrap(),
            &embs,
            &diverse,
            None,
        )
        .unwrap();

        let two_step = SelectionConfig::new(vec![4, 12], 0.0, 9).unwrap();
        let s1 = select_step(
            &SelectionState::new(embs.iter().map(|e| e.image_id.clone())).unwrap(),
            &embs,
            &two_step,
            None,
        )
        .unwrap();
        let s2 = select_step(&s1, &embs, &two_step, Some(&uniform)).unwrap();
        assert_eq!(s2.selected, expected.selected);
    }

    #[test]
    fn later_steps_require_uncertainty() {
        let embs = [emb("a", &[0.0]), emb("b", &[1.0]), emb("c", &[2.0])];
        let cfg = SelectionConfig::new(vec![1, 2], 1.0, 0).unwrap();
        let s1 = select_step(
            &SelectionState::new(embs.iter().map(|e| e.image_id.clone())).unwrap(),
            &embs,
            &cfg,
            None,
        )
        .unwrap();
        assert!(matches!(select_step(&s1, &embs, &cfg, None), Err(Error::Selection(_))));
        // beyond the schedule
        let s2 = select_step(&s1, &embs, &cfg, Some(&BTreeMap::from([
            ("a".to_string(), 0.0), ("b".to_string(), 0.0), ("c".to_string(), 0.0),
        ]))).unwrap();
        assert!(select_step(&s2, &embs, &cfg, None).is_err());
    }

    #[test]
    fn full_budget_selects_everything() {
        let embs: Vec<_> = (0..9).map(|i| emb(&format!("e{i}"), &[i as f64, 0.0])).collect();
        let cfg = SelectionConfig::new(vec![9], 1000.0, 1).unwrap();
        let out = run_selection_on(&embs, &cfg, &mut |_: usize, _: &SelectionState| unreachable!(), &mut |_: &StepRecord| Ok(()))
            .unwrap();
        let mut got = out.selected.clone();
        got.sort();
        assert_eq!(got.len(), 9);
        assert!(out.remaining.is_empty());
    }

    #[test]
    fn provider_failure_keeps_earlier_steps() {
        let embs: Vec<_> = (0..10).map(|i| emb(&format!("e{i}"), &[i as f64])).collect();
        let cfg = SelectionConfig::new(vec![2, 4, 6], 1.0, 1).unwrap();
        let mut records = Vec::new();
        let err = run_selection_on(
            &embs,
            &cfg,
            &mut |t: usize, _: &SelectionState| -> Result<BTreeMap<String, f64>> {
                Err(Error::Selection(format!("student for step {t} unavailable")))
            },
            &mut |r: &StepRecord| {
                records.push(r.clone());
                Ok(())
            },
        );
        assert!(err.is_err());
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].selected.len(), 2);
    }

    #[test]
    fn frequency_report_examples() {
        let a = SegMap::new(2, 2, 3, 255, vec![0, 0, 1, 255]).unwrap();
        let b = SegMap::new(2, 2, 3, 255, vec![1, 1, 1, 0]).unwrap();
        let all = class_frequency_report(&[&a, &b], &[&a, &b]).unwrap();
        assert_eq!(all.ratios, vec![Some(1.0), Some(1.0), None]);
        let part = class_frequency_report(&[&a], &[&a, &b]).unwrap();
        assert_eq!(part.ratios, vec![Some(2.0 / 3.0), Some(0.25), None]);
        assert_eq!(part.total_pixels, vec![3, 4, 0]);
    }

    #[test]
    fn selected_ids_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        fs::write(&a, r#"["x", "y"]"#).unwrap();
        let b = dir.path().join("b.json");
        fs::write(&b, r#"{"step": 1, "selected": ["z"], "seed": 3}"#).unwrap();
        assert_eq!(read_selected_ids(&a).unwrap(), vec!["x", "y"]);
        assert_eq!(read_selected_ids(&b).unwrap(), vec!["z"]);
    }
}
