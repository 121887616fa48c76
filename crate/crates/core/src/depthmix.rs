//! Depth-aware compositing of two samples.
//!
//! A pixel of sample `i` is pasted over sample `j` when it is at least as
//! close to the camera, up to a slack `epsilon` measured in disparity units:
//! `mask = disp_i > disp_j - epsilon`. Every raster of the pair (image, label,
//! confidence, disparity) is then composed with that one hard mask.

use serde::{Deserialize, Serialize};

use crate::data::{DisparityMap, ImageRaster, ProbMap, SegMap};
use crate::error::{ensure_same_dims, Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub epsilon: f64,
}

impl MixConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Binary paste mask; 1 selects the first raster of a pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MixMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "mask: {width}x{height} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Domain("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value as u8; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// Paste mask for sample `i` over sample `j`.
pub fn depthmix_mask(disp_i: &DisparityMap, disp_j: &DisparityMap, cfg: &MixConfig) -> Result<MixMask> {
    ensure_same_dims("depthmix_mask", disp_i.dims(), disp_j.dims())?;
    let eps = cfg.epsilon;
    let data = disp_i
        .data()
        .iter()
        .zip(disp_j.data())
        .map(|(&a, &b)| (a > b - eps) as u8)
        .collect();
    let (w, h) = disp_i.dims();
    Ok(MixMask {
        width: w,
        height: h,
        data,
    })
}

/// A raster kind that can be composed under a [`MixMask`].
///
/// Composition is per-pixel selection, which equals `M * a + (1 - M) * b`
/// for a binary mask and never blends label indices.
pub trait Mixable: Sized {
    fn dims(&self) -> (usize, usize);

    /// Called with dimensions already checked against the mask.
    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self>;
}

fn select<T: Copy>(mask: &[u8], a: &[T], b: &[T]) -> Vec<T> {
    mask.iter()
        .zip(a.iter().zip(b))
        .map(|(&m, (&x, &y))| if m == 1 { x } else { y })
        .collect()
}

impl Mixable for ImageRaster {
    fn dims(&self) -> (usize, usize) {
        ImageRaster::dims(self)
    }

    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self> {
        if a.channels() != b.channels() {
            return Err(Error::Shape(format!(
                "image channels {} vs {}",
                a.channels(),
                b.channels()
            )));
        }
        let ch = a.channels();
        let mut out = Vec::with_capacity(a.data().len());
        for ((&m, pa), pb) in mask
            .data
            .iter()
            .zip(a.data().chunks_exact(ch))
            .zip(b.data().chunks_exact(ch))
        {
            out.extend_from_slice(if m == 1 { pa } else { pb });
        }
        ImageRaster::new(a.width(), a.height(), ch, out)
    }
}

impl Mixable for SegMap {
    fn dims(&self) -> (usize, usize) {
        SegMap::dims(self)
    }

    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self> {
        if a.num_classes() != b.num_classes() || a.ignore_index() != b.ignore_index() {
            return Err(Error::Shape(format!(
                "label spaces differ: {} classes / ignore {} vs {} classes / ignore {}",
                a.num_classes(),
                a.ignore_index(),
                b.num_classes(),
                b.ignore_index()
            )));
        }
        SegMap::new(
            a.width(),
            a.height(),
            a.num_classes(),
            a.ignore_index(),
            select(&mask.data, a.data(), b.data()),
        )
    }
}

impl Mixable for ProbMap {
    fn dims(&self) -> (usize, usize) {
        ProbMap::dims(self)
    }

    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self> {
        ProbMap::new(a.width(), a.height(), select(&mask.data, a.data(), b.data()))
    }
}

impl Mixable for DisparityMap {
    fn dims(&self) -> (usize, usize) {
        DisparityMap::dims(self)
    }

    fn compose(mask: &MixMask, a: &Self, b: &Self) -> Result<Self> {
        DisparityMap::new(a.width(), a.height(), select(&mask.data, a.data(), b.data()))
    }
}

pub fn mix_rasters<R: Mixable>(mask: &MixMask, a_i: &R, a_j: &R) -> Result<R> {
    ensure_same_dims("mix_rasters", mask.dims(), a_i.dims())?;
    ensure_same_dims("mix_rasters", mask.dims(), a_j.dims())?;
    R::compose(mask, a_i, a_j)
}

/// One side of a mix: ground truth when `confidence` is `None`, otherwise a
/// pseudo-labeled sample with its per-pixel teacher confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSample {
    pub image: ImageRaster,
    pub disparity: DisparityMap,
    pub label: SegMap,
    pub confidence: Option<ProbMap>,
}

impl MixSample {
    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    fn check(&self, what: &str) -> Result<()> {
        let d = self.image.dims();
        ensure_same_dims(what, d, self.disparity.dims())?;
        ensure_same_dims(what, d, self.label.dims())?;
        if let Some(p) = &self.confidence {
            ensure_same_dims(what, d, p.dims())?;
        }
        Ok(())
    }

    /// Confidence map used for quality weighting; all ones for ground truth.
    pub fn confidence_or_ones(&self) -> Result<ProbMap> {
        match &self.confidence {
            Some(p) => Ok(p.clone()),
            None => ProbMap::ones(self.image.width(), self.image.height()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: ImageRaster,
    pub label: SegMap,
    pub prob: ProbMap,
    pub disparity: DisparityMap,
    pub mask: MixMask,
}

pub fn mix_pair(sample_i: &MixSample, sample_j: &MixSample, cfg: &MixConfig) -> Result<MixedSample> {
    sample_i.check("sample i")?;
    sample_j.check("sample j")?;
    ensure_same_dims("mix_pair", sample_i.dims(), sample_j.dims())?;
    let mask = depthmix_mask(&sample_i.disparity, &sample_j.disparity, cfg)?;
    let prob_i = sample_i.confidence_or_ones()?;
    let prob_j = sample_j.confidence_or_ones()?;
    Ok(MixedSample {
        image: mix_rasters(&mask, &sample_i.image, &sample_j.image)?,
        label: mix_rasters(&mask, &sample_i.label, &sample_j.label)?,
        prob: mix_rasters(&mask, &prob_i, &prob_j)?,
        disparity: mix_rasters(&mask, &sample_i.disparity, &sample_j.disparity)?,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_disp(r: &mut impl Rng, w: usize, h: usize) -> DisparityMap {
        DisparityMap::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn random_labels(r: &mut impl Rng, w: usize, h: usize, classes: u8) -> SegMap {
        let data = (0..w * h)
            .map(|_| if r.gen_bool(0.1) { 255 } else { r.gen_range(0..classes) })
            .collect();
        SegMap::new(w, h, classes as usize, 255, data).unwrap()
    }

    #[test]
    fn equal_disparity_gives_all_ones() {
        let mut r = rng(1);
        let d = random_disp(&mut r, 9, 7);
        for eps in [1e-9, 0.03, 0.5] {
            let m = depthmix_mask(&d, &d, &MixConfig::new(eps).unwrap()).unwrap();
            assert_eq!(m.count_ones(), 63);
        }
    }

    #[test]
    fn far_over_near_gives_all_zeros() {
        let zero = DisparityMap::filled(6, 4, 0.0).unwrap();
        let one = DisparityMap::filled(6, 4, 1.0).unwrap();
        let m = depthmix_mask(&zero, &one, &MixConfig::default()).unwrap();
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn random_pair_matches_scalar_loop() {
        let mut r = rng(2);
        let a = random_disp(&mut r, 16, 16);
        let b = random_disp(&mut r, 16, 16);
        let m = depthmix_mask(&a, &b, &MixConfig::new(0.03).unwrap()).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let expect = a.get(x, y) > b.get(x, y) - 0.03;
                assert_eq!(m.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = DisparityMap::filled(4, 4, 0.0).unwrap();
        let b = DisparityMap::filled(4, 3, 0.0).unwrap();
        assert!(matches!(depthmix_mask(&a, &b, &MixConfig::default()), Err(Error::Shape(_))));
        let m = MixMask::filled(4, 4, true).unwrap();
        assert!(matches!(mix_rasters(&m, &a, &b), Err(Error::Shape(_))));
        let g = ImageRaster::filled(4, 4, 1, 0).unwrap();
        let c = ImageRaster::filled(4, 4, 3, 0).unwrap();
        assert!(matches!(mix_rasters(&m, &g, &c), Err(Error::Shape(_))));
        assert!(MixConfig::new(-0.1).is_err());
    }

    #[test]
    fn constant_mask_selects_one_side() {
        let a = ImageRaster::filled(5, 5, 3, 10).unwrap();
        let b = ImageRaster::filled(5, 5, 3, 200).unwrap();
        let ones = MixMask::filled(5, 5, true).unwrap();
        assert_eq!(mix_rasters(&ones, &a, &b).unwrap(), a);
        assert_eq!(mix_rasters(&ones.complement(), &a, &b).unwrap(), b);
    }

    #[test]
    fn checkerboard_composite() {
        let a = ImageRaster::filled(6, 4, 3, 10).unwrap();
        let b = ImageRaster::filled(6, 4, 3, 200).unwrap();
        let data = (0..24).map(|i| (((i % 6) + (i / 6)) % 2) as u8).collect();
        let m = MixMask::new(6, 4, data).unwrap();
        let out = mix_rasters(&m, &a, &b).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                let v = if (x + y) % 2 == 1 { 10 } else { 200 };
                assert_eq!(out.pixel(x, y), &[v, v, v]);
            }
        }
    }

    fn sample(r: &mut impl Rng, w: usize, h: usize, labeled: bool) -> MixSample {
        MixSample {
            image: ImageRaster::new(w, h, 3, (0..w * h * 3).map(|_| r.gen()).collect()).unwrap(),
            disparity: random_disp(r, w, h),
            label: random_labels(r, w, h, 6),
            confidence: (!labeled)
                .then(|| ProbMap::new(w, h, (0..w * h).map(|_| r.gen_range(0.0..=1.0)).collect()).unwrap()),
        }
    }

    #[test]
    fn labeled_pair_prob_is_all_ones() {
        let mut r = rng(3);
        let a = sample(&mut r, 8, 6, true);
        let b = sample(&mut r, 8, 6, true);
        let out = mix_pair(&a, &b, &MixConfig::default()).unwrap();
        assert!(out.prob.data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn labeled_over_unlabeled_with_full_mask() {
        let mut r = rng(4);
        let mut a = sample(&mut r, 8, 6, true);
        let b = sample(&mut r, 8, 6, false);
        // i everywhere closer than j
        a.disparity = DisparityMap::filled(8, 6, 5.0).unwrap();
        let out = mix_pair(&a, &b, &MixConfig::default()).unwrap();
        assert_eq!(out.mask.count_ones(), 48);
        assert!(out.prob.data().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn identical_geometry_returns_sample_i() {
        let mut r = rng(5);
        let a = sample(&mut r, 10, 7, false);
        let mut b = sample(&mut r, 10, 7, true);
        b.disparity = a.disparity.clone();
        let out = mix_pair(&a, &b, &MixConfig::default()).unwrap();
        assert_eq!(out.image, a.image);
        assert_eq!(out.label, a.label);
        assert_eq!(&out.prob, a.confidence.as_ref().unwrap());
        assert_eq!(out.disparity, a.disparity);
    }

    proptest! {
        #[test]
        fn idempotent_and_swap_symmetric(seed in any::<u64>(), w in 1usize..12, h in 1usize..12) {
            let mut r = rng(seed);
            let m = MixMask::new(w, h, (0..w * h).map(|_| r.gen_range(0..2)).collect()).unwrap();
            let a = random_labels(&mut r, w, h, 4);
            let b = random_labels(&mut r, w, h, 4);
            prop_assert_eq!(&mix_rasters(&m, &a, &a).unwrap(), &a);
            prop_assert_eq!(
                mix_rasters(&m.complement(), &b, &a).unwrap(),
                mix_rasters(&m, &a, &b).unwrap()
            );
            let mixed = mix_rasters(&m, &a, &b).unwrap();
            for (i, &v) in mixed.data().iter().enumerate() {
                prop_assert!(v == a.data()[i] || v == b.data()[i]);
            }
        }
    }
}
