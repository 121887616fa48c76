//! Procedural street-like scenes and small synthetic datasets.
//!
//! A scene is a vertical disparity ramp (far at the top, near at the bottom)
//! with flat rectangles and ellipses of constant disparity on top. Objects
//! are painted far to near, so every pixel shows the closest object covering
//! it.

pub mod oracle;

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    seeded_rng, write_disparity, write_image, write_manifest, write_prob_map, write_segmap, write_tensor,
    DatasetManifest, DisparityMap, Domain, ImageRaster, ManifestEntry, Provenance, SeededRng, SegMap, Tensor,
    DEFAULT_DISPARITY_SCALE, DEFAULT_IGNORE_INDEX,
};
use crate::error::{Error, Result};
use crate::pseudo_label::{argmax_label, ClassLogitMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
}

/// Flat object; `x, y, w, h` is its bounding box in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub shape: Shape,
    pub class: u8,
    pub disparity: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl SceneObject {
    fn covers(&self, px: usize, py: usize) -> bool {
        let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
        match self.shape {
            Shape::Rectangle => {
                cx >= self.x && cx < self.x + self.w && cy >= self.y && cy < self.y + self.h
            }
            Shape::Ellipse => {
                let (rx, ry) = (self.w / 2.0, self.h / 2.0);
                if rx <= 0.0 || ry <= 0.0 {
                    return false;
                }
                let dx = (cx - self.x - rx) / rx;
                let dy = (cy - self.y - ry) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub class: u8,
    /// Disparity of the top row.
    pub far: f64,
    /// Disparity of the bottom row.
    pub near: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            class: 0,
            far: 0.02,
            near: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Added to every pixel color; lets two domains look different.
    #[serde(default)]
    pub tint: [i16; 3],
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene spec: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty raster {}x{}", self.width, self.height));
        }
        if self.num_classes == 0 || self.num_classes > DEFAULT_IGNORE_INDEX as usize {
            return bad(format!("num_classes {} outside 1..=255", self.num_classes));
        }
        let bg = &self.background;
        if bg.class as usize >= self.num_classes {
            return bad(format!("background class {} >= num_classes", bg.class));
        }
        if !(bg.far.is_finite() && bg.near.is_finite() && bg.far >= 0.0 && bg.near >= 0.0) {
            return bad("background disparities must be finite and >= 0".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class as usize >= self.num_classes {
                return bad(format!("object {i}: class {} >= num_classes", o.class));
            }
            if !(o.disparity.is_finite() && o.disparity > 0.0) {
                return bad(format!("object {i}: disparity must be positive, got {}", o.disparity));
            }
            if ![o.x, o.y, o.w, o.h].iter().all(|v| v.is_finite()) || o.w < 0.0 || o.h < 0.0 {
                return bad(format!("object {i}: bad geometry"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: ImageRaster,
    pub disparity: DisparityMap,
    pub labels: SegMap,
}

pub fn class_color(class: u8) -> [u8; 3] {
    let c = class as u32;
    [
        ((c * 67 + 40) % 256) as u8,
        ((c * 131 + 90) % 256) as u8,
        ((c * 199 + 20) % 256) as u8,
    ]
}

fn shade(base: [u8; 3], offset: [i16; 3]) -> [u8; 3] {
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (base[k] as i16 + offset[k]).clamp(0, 255) as u8;
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = seeded_rng(spec.seed);
    let jitter: Vec<[i16; 3]> = spec
        .objects
        .iter()
        .map(|_| [0; 3].map(|_: i16| rng.gen_range(-24..=24)))
        .collect();

    let bg = &spec.background;
    let mut disp = Vec::with_capacity(w * h);
    let mut cls = vec![bg.class; w * h];
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let t = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
        let d = bg.far + (bg.near - bg.far) * t;
        let dark = (t * 40.0) as i16 - 20;
        let c = shade(class_color(bg.class), [dark + spec.tint[0], dark + spec.tint[1], dark + spec.tint[2]]);
        for _ in 0..w {
            disp.push(d);
            rgb.extend_from_slice(&c);
        }
    }

    let mut order: Vec<usize> = (0..spec.objects.len()).collect();
    order.sort_by(|&a, &b| spec.objects[a].disparity.total_cmp(&spec.objects[b].disparity));
    for i in order {
        let o = &spec.objects[i];
        let j = jitter[i];
        let c = shade(
            class_color(o.class),
            [j[0] + spec.tint[0], j[1] + spec.tint[1], j[2] + spec.tint[2]],
        );
        let x0 = o.x.max(0.0).floor() as usize;
        let y0 = o.y.max(0.0).floor() as usize;
        let x1 = ((o.x + o.w).ceil().max(0.0) as usize).min(w);
        let y1 = ((o.y + o.h).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                if o.covers(x, y) {
                    let p = y * w + x;
                    disp[p] = o.disparity;
                    cls[p] = o.class;
                    rgb[p * 3..p * 3 + 3].copy_from_slice(&c);
                }
            }
        }
    }

    Ok(Scene {
        image: ImageRaster::new(w, h, 3, rgb)?,
        disparity: DisparityMap::new(w, h, disp)?,
        labels: SegMap::new(w, h, spec.num_classes, DEFAULT_IGNORE_INDEX, cls)?,
    })
}

/// Recipe for a synthetic two-domain dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_source: usize,
    pub num_target: usize,
    /// The first this-many target entries carry ground truth.
    pub labeled_target: usize,
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    #[serde(default = "default_max_objects")]
    pub max_objects: usize,
    /// Write student disparities for selection steps `2..=uncertainty_steps`.
    #[serde(default)]
    pub uncertainty_steps: usize,
    pub seed: u64,
}

fn default_max_objects() -> usize {
    6
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_target > self.num_target {
            return Err(Error::Config(format!(
                "labeled_target {} exceeds num_target {}",
                self.labeled_target, self.num_target
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("datasets need at least 2 classes".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("empty raster size".into()));
        }
        Ok(())
    }
}

/// Random scene layout for one dataset entry.
pub fn random_scene(spec: &DatasetSpec, domain: Domain, rng: &mut SeededRng) -> SceneSpec {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let (far, near, tint) = match domain {
        Domain::Source => (rng.gen_range(0.01..0.04), rng.gen_range(0.45..0.6), [25, 10, -15]),
        Domain::Target => (rng.gen_range(0.02..0.06), rng.gen_range(0.35..0.5), [-10, 0, 20]),
    };
    let n = rng.gen_range(1..=spec.max_objects.max(1));
    let objects = (0..n)
        .map(|_| {
            let ow = rng.gen_range(0.1..0.45) * w;
            let oh = rng.gen_range(0.1..0.5) * h;
            SceneObject {
                shape: if rng.gen_bool(0.5) {
                    Shape::Rectangle
                } else {
                    Shape::Ellipse
                },
                class: rng.gen_range(1..spec.num_classes) as u8,
                disparity: rng.gen_range(0.05..1.0),
                x: rng.gen_range(-0.1..0.9) * w,
                y: rng.gen_range(0.1..0.9) * h - oh / 2.0,
                w: ow,
                h: oh,
            }
        })
        .collect();
    SceneSpec {
        width: spec.width,
        height: spec.height,
        num_classes: spec.num_classes,
        background: Background {
            class: 0,
            far,
            near,
        },
        objects,
        tint,
        seed: rng.gen(),
    }
}

/// Noisy per-pixel class scores centred on `labels`, softmax-normalized.
fn noisy_scores(labels: &SegMap, sharpness: f64, noise: f64, rng: &mut SeededRng) -> Result<ClassLogitMap> {
    let c = labels.num_classes();
    let mut data = Vec::with_capacity(labels.data().len() * c);
    for &l in labels.data() {
        for k in 0..c {
            let hit = if k == l as usize { sharpness } else { 0.0 };
            data.push(hit + rng.gen_range(-noise..=noise));
        }
    }
    let (w, h) = labels.dims();
    Ok(ClassLogitMap::new(w, h, c, data, false)?.softmax())
}

/// Feature tensor (C, H, W): class indicators plus the disparity channel.
fn scene_features(scene: &Scene) -> Result<Tensor> {
    let (w, h) = scene.labels.dims();
    let c = scene.labels.num_classes();
    let mut data = vec![0.0f64; (c + 1) * w * h];
    for (p, &l) in scene.labels.data().iter().enumerate() {
        data[l as usize * w * h + p] = 1.0;
        data[c * w * h + p] = scene.disparity.data()[p];
    }
    Tensor::from_f64(vec![c + 1, h, w], &data)
}

fn perturbed_disparity(d: &DisparityMap, spread: f64, rng: &mut SeededRng) -> Result<DisparityMap> {
    let data = d
        .data()
        .iter()
        .map(|&v| v * (1.0 + rng.gen_range(-spread..=spread)))
        .collect();
    DisparityMap::new(d.width(), d.height(), data)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a dataset under `out` and returns its manifest (also written to
/// `out/manifest.json`). Output bytes depend only on the spec.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path, provenance: Provenance) -> Result<DatasetManifest> {
    spec.validate()?;
    for sub in ["images", "disparity", "labels", "probs", "features", "predictions"] {
        create_dir(&out.join(sub))?;
    }
    for t in 2..=spec.uncertainty_steps {
        create_dir(&out.join(format!("uncertainty/step{t}")))?;
    }

    // one sub-seed per entry, drawn up front so entries can be built in parallel
    let mut rng = seeded_rng(spec.seed);
    let plan: Vec<(String, Domain, bool, u64)> = (0..spec.num_source)
        .map(|i| (format!("src{i:04}"), Domain::Source, true))
        .chain((0..spec.num_target).map(|i| (format!("trg{i:04}"), Domain::Target, i < spec.labeled_target)))
        .map(|(id, d, l)| (id, d, l, rng.gen()))
        .collect();

    let entries = plan
        .par_iter()
        .map(|(id, domain, labeled, seed)| build_entry(spec, out, id, *domain, *labeled, *seed))
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::new(spec.num_classes, DEFAULT_IGNORE_INDEX, entries).with_base_dir(out);
    manifest.provenance = Some(provenance);
    write_manifest(&manifest, out.join("manifest.json"))?;
    Ok(manifest)
}

fn build_entry(
    spec: &DatasetSpec,
    out: &Path,
    id: &str,
    domain: Domain,
    labeled: bool,
    seed: u64,
) -> Result<ManifestEntry> {
    let mut rng = seeded_rng(seed);
    let scene = generate_scene(&random_scene(spec, domain, &mut rng))?;
    let mut e = ManifestEntry::new(id, domain);
    e.labeled = labeled;

    let rel = |dir: &str, ext: &str| format!("{dir}/{id}.{ext}");
    e.image = Some(rel("images", "png"));
    write_image(&scene.image, out.join(rel("images", "png")))?;
    e.disparity = Some(rel("disparity", "png"));
    write_disparity(&scene.disparity, out.join(rel("disparity", "png")), DEFAULT_DISPARITY_SCALE)?;

    if labeled {
        write_segmap(&scene.labels, out.join(rel("labels", "png")))?;
    } else {
        let teacher = noisy_scores(&scene.labels, 6.0, 2.5, &mut rng)?;
        let (pseudo, conf) = argmax_label(&teacher)?;
        write_segmap(&pseudo, out.join(rel("labels", "png")))?;
        e.prob = Some(rel("probs", "dft1"));
        write_prob_map(&conf, out.join(rel("probs", "dft1")))?;
    }
    e.label = Some(rel("labels", "png"));

    e.feature = Some(rel("features", "dft1"));
    write_tensor(&scene_features(&scene)?, out.join(rel("features", "dft1")))?;
    e.prediction = Some(rel("predictions", "dft1"));
    let pred = noisy_scores(&scene.labels, 3.0, 1.5, &mut rng)?;
    write_tensor(&pred.to_tensor()?, out.join(rel("predictions", "dft1")))?;

    if domain == Domain::Target {
        for t in 2..=spec.uncertainty_steps {
            // students get better as selection proceeds
            let spread = 0.5 / t as f64;
            let student = perturbed_disparity(&scene.disparity, spread, &mut rng)?;
            write_disparity(
                &student,
                out.join(format!("uncertainty/step{t}/{id}.png")),
                DEFAULT_DISPARITY_SCALE,
            )?;
        }
    }
    Ok(e)
}

/// Either a single scene or a whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SynthSpec {
    Dataset(DatasetSpec),
    Scene(SceneSpec),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;
    use rand::SeedableRng;

    fn rect(class: u8, disparity: f64, x: f64, y: f64, w: f64, h: f64) -> SceneObject {
        SceneObject {
            shape: Shape::Rectangle,
            class,
            disparity,
            x,
            y,
            w,
            h,
        }
    }

    fn spec(objects: Vec<SceneObject>) -> SceneSpec {
        SceneSpec {
            width: 20,
            height: 10,
            num_classes: 4,
            background: Background::default(),
            objects,
            tint: [0; 3],
            seed: 3,
        }
    }

    #[test]
    fn empty_scene_is_background_ramp() {
        let s = generate_scene(&spec(vec![])).unwrap();
        assert!(s.labels.data().iter().all(|&c| c == 0));
        assert_eq!(s.disparity.get(5, 0), 0.02);
        assert_eq!(s.disparity.get(5, 9), 0.5);
        for y in 1..10 {
            assert!(s.disparity.get(0, y) > s.disparity.get(0, y - 1));
        }
    }

    #[test]
    fn nearer_object_wins_overlap() {
        let s = generate_scene(&spec(vec![
            rect(1, 0.8, 2.0, 2.0, 8.0, 6.0),
            rect(2, 0.2, 5.0, 1.0, 10.0, 8.0),
        ]))
        .unwrap();
        assert_eq!(s.labels.get(6, 4), 1);
        assert_eq!(s.disparity.get(6, 4), 0.8);
        assert_eq!(s.labels.get(12, 4), 2);
        // list order must not matter
        let t = generate_scene(&spec(vec![
            rect(2, 0.2, 5.0, 1.0, 10.0, 8.0),
            rect(1, 0.8, 2.0, 2.0, 8.0, 6.0),
        ]))
        .unwrap();
        assert_eq!(s.labels, t.labels);
        assert_eq!(s.disparity, t.disparity);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let ds = DatasetSpec {
            num_source: 1,
            num_target: 1,
            labeled_target: 0,
            width: 24,
            height: 12,
            num_classes: 5,
            max_objects: 4,
            uncertainty_steps: 0,
            seed: 11,
        };
        let mut r = SeededRng::seed_from_u64(1);
        let sc = random_scene(&ds, Domain::Target, &mut r);
        assert_eq!(generate_scene(&sc).unwrap(), generate_scene(&sc).unwrap());
    }

    #[test]
    fn painter_order_property() {
        let ds = DatasetSpec {
            num_source: 0,
            num_target: 0,
            labeled_target: 0,
            width: 32,
            height: 16,
            num_classes: 6,
            max_objects: 8,
            uncertainty_steps: 0,
            seed: 0,
        };
        let mut r = SeededRng::seed_from_u64(42);
        for _ in 0..50 {
            let sc = random_scene(&ds, Domain::Source, &mut r);
            let s = generate_scene(&sc).unwrap();
            for y in 0..16 {
                for x in 0..32 {
                    let top = sc
                        .objects
                        .iter()
                        .filter(|o| o.covers(x, y))
                        .max_by(|a, b| a.disparity.total_cmp(&b.disparity));
                    let want = top.map(|o| o.class).unwrap_or(0);
                    assert_eq!(s.labels.get(x, y), want);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(vec![rect(9, 0.5, 0.0, 0.0, 1.0, 1.0)]);
        assert!(generate_scene(&s).is_err());
        s.objects = vec![rect(1, 0.0, 0.0, 0.0, 1.0, 1.0)];
        assert!(generate_scene(&s).is_err());
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = DatasetSpec {
            num_source: 3,
            num_target: 4,
            labeled_target: 1,
            width: 32,
            height: 16,
            num_classes: 5,
            max_objects: 3,
            uncertainty_steps: 2,
            seed: 5,
        };
        let m = generate_dataset(&ds, dir.path(), Provenance::new(ds.seed)).unwrap();
        let loaded = load_manifest(dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.entries, m.entries);
        loaded.verify_labels().unwrap();
        assert_eq!(loaded.count(Domain::Target), 4);
        assert!(dir.path().join("uncertainty/step2/trg0003.png").is_file());
        let spec: SynthSpec = serde_json::from_str(&serde_json::to_string(&ds).unwrap()).unwrap();
        assert!(matches!(spec, SynthSpec::Dataset(_)));
    }
}
