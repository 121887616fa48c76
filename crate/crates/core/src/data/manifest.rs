//! Dataset manifests.
//!
//! Paths inside a manifest are resolved relative to the directory holding the
//! manifest file, so a dataset directory can be moved as a unit.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::png_io::{read_disparity, read_segmap};
use super::provenance::Provenance;
use super::raster::{DisparityMap, SegMap, DEFAULT_IGNORE_INDEX};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: Domain,
    /// Ground-truth annotation available.
    #[serde(default)]
    pub labeled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<String>,
    /// Ground truth for labeled entries, pseudo-label otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Per-pixel confidence (`DFT1`, H x W). Only meaningful for pseudo-labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<String>,
    /// Pooled feature tensor (`DFT1`, C x H x W).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    /// Segmentation network output (`DFT1`, H x W x C, softmax-normalized).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, domain: Domain) -> Self {
        Self {
            id: id.into(),
            domain,
            labeled: false,
            image: None,
            disparity: None,
            label: None,
            prob: None,
            feature: None,
            prediction: None,
        }
    }

    fn paths(&self) -> impl Iterator<Item = (&'static str, &str)> {
        [
            ("image", &self.image),
            ("disparity", &self.disparity),
            ("label", &self.label),
            ("prob", &self.prob),
            ("feature", &self.feature),
            ("prediction", &self.prediction),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_deref().map(|p| (k, p)))
    }
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_INDEX
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_classes: usize,
    #[serde(default = "default_ignore")]
    pub ignore_index: u8,
    pub entries: Vec<ManifestEntry>,
    /// Present when the manifest was written by this toolkit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(num_classes: usize, ignore_index: u8, entries: Vec<ManifestEntry>) -> Self {
        Self {
            num_classes,
            ignore_index,
            entries,
            provenance: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.entries.iter().filter(|e| e.domain == domain).count()
    }

    /// Checks every invariant that does not need file contents.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(Error::validation(
                "<manifest>",
                format!("num_classes must be in 1..=255, got {}", self.num_classes),
            ));
        }
        if (self.ignore_index as usize) < self.num_classes {
            return Err(Error::validation(
                "<manifest>",
                format!(
                    "ignore_index {} collides with class range 0..{}",
                    self.ignore_index, self.num_classes
                ),
            ));
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::validation("<empty id>", "image id must be non-empty"));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::validation(&e.id, "duplicate image id"));
            }
            if e.labeled && e.label.is_none() {
                return Err(Error::validation(&e.id, "labeled entry has no label path"));
            }
            if check_files {
                for (kind, rel) in e.paths() {
                    let p = self.resolve(rel);
                    if !p.is_file() {
                        return Err(Error::validation(
                            &e.id,
                            format!("{kind} file {} does not exist", p.display()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Decodes every label map and checks its class indices.
    pub fn verify_labels(&self) -> Result<()> {
        for e in &self.entries {
            self.load_label(e)?;
        }
        Ok(())
    }

    /// Label map of an entry, if it has one.
    pub fn load_label(&self, e: &ManifestEntry) -> Result<Option<SegMap>> {
        match &e.label {
            None => Ok(None),
            Some(rel) => read_segmap(self.resolve(rel), self.num_classes, self.ignore_index)
                .map(Some)
                .map_err(|err| Error::validation(&e.id, err.to_string())),
        }
    }

    pub fn load_disparity(&self, e: &ManifestEntry) -> Result<DisparityMap> {
        let rel = e
            .disparity
            .as_deref()
            .ok_or_else(|| Error::validation(&e.id, "entry has no disparity path"))?;
        read_disparity(self.resolve(rel))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Loads and validates a manifest, including that every referenced file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = manifest.with_base_dir(base);
    manifest.validate(true)?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn write(dir: &Path, name: &str, m: &DatasetManifest) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, serde_json::to_string(m).unwrap()).unwrap();
        p
    }

    #[test]
    fn empty_entries_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"num_classes": 19, "entries": []}"#).unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.entries.is_empty());
        assert_eq!(m.ignore_index, 255);
    }

    #[test]
    fn missing_manifest_names_path() {
        let err = load_manifest("/nonexistent/dir/m.json").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/m.json"));
    }

    #[test]
    fn missing_disparity_names_entry() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = ManifestEntry::new("frankfurt_01", Domain::Target);
        e.disparity = Some("disp/nope.png".into());
        let p = write(dir.path(), "m.json", &DatasetManifest::new(19, 255, vec![e]));
        match load_manifest(&p) {
            Err(Error::Validation { entry, message }) => {
                assert_eq!(entry, "frankfurt_01");
                assert!(message.contains("nope.png"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn cityscapes_and_gta_scale_counts_preserved() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("shared.dft1"), b"").unwrap();
        let mut entries = Vec::new();
        for i in 0..2975 {
            let mut e = ManifestEntry::new(format!("trg_{i:05}"), Domain::Target);
            e.feature = Some("shared.dft1".into());
            entries.push(e);
        }
        for i in 0..24966 {
            let mut e = ManifestEntry::new(format!("src_{i:05}"), Domain::Source);
            e.labeled = true;
            e.label = Some("shared.dft1".into());
            entries.push(e);
        }
        let p = write(dir.path(), "m.json", &DatasetManifest::new(19, 255, entries));
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.count(Domain::Target), 2975);
        assert_eq!(m.count(Domain::Source), 24966);
    }

    #[test]
    fn verify_labels_names_entry_with_bad_class() {
        let dir = tempfile::tempdir().unwrap();
        let lbl = SegMap::new(2, 1, 8, 255, vec![0, 7]).unwrap();
        super::super::png_io::write_segmap(&lbl, dir.path().join("l.png")).unwrap();
        let mut e = ManifestEntry::new("bad", Domain::Target);
        e.labeled = true;
        e.label = Some("l.png".into());
        let p = write(dir.path(), "m.json", &DatasetManifest::new(4, 255, vec![e]));
        let m = load_manifest(&p).unwrap();
        match m.verify_labels() {
            Err(Error::Validation { entry, .. }) => assert_eq!(entry, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"num_classes": 2, "entries": [], "extra": 1}"#).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Json { .. })));
    }

    fn base_manifest(n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| {
                let mut e = ManifestEntry::new(
                    format!("img{i:03}"),
                    if i % 3 == 0 { Domain::Source } else { Domain::Target },
                );
                e.labeled = i % 2 == 0;
                e.label = Some("a.bin".into());
                e.feature = Some("b.bin".into());
                e
            })
            .collect();
        DatasetManifest::new(5, 255, entries)
    }

    // Mutation fuzz: each breaking mutation violates exactly one invariant and
    // must be rejected; each benign mutation keeps all invariants and must load.
    #[test]
    fn validation_rejects_exactly_invalid_mutations() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.bin"), b"x").unwrap();
        fs::write(dir.path().join("b.bin"), b"x").unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..300 {
            let mut m = base_manifest(rng.gen_range(2..12));
            let n = m.entries.len();
            let k = rng.gen_range(0..n);
            let breaking = trial % 2 == 0;
            if breaking {
                match rng.gen_range(0..6) {
                    0 => {
                        let other = (k + 1) % n;
                        m.entries[k].id = m.entries[other].id.clone();
                    }
                    1 => {
                        m.entries[k].labeled = true;
                        m.entries[k].label = None;
                    }
                    2 => m.entries[k].feature = Some("missing.bin".into()),
                    3 => m.ignore_index = rng.gen_range(0..5),
                    4 => m.num_classes = 0,
                    _ => m.entries[k].id = String::new(),
                }
            } else {
                match rng.gen_range(0..5) {
                    0 => m.entries[k].id = format!("fresh_{trial}"),
                    1 => {
                        m.entries[k].labeled = false;
                        m.entries[k].label = None;
                    }
                    2 => m.entries[k].feature = None,
                    3 => m.ignore_index = rng.gen_range(5..=255),
                    _ => m.entries.shuffle(&mut rng),
                }
            }
            let p = write(dir.path(), "m.json", &m);
            let res = load_manifest(&p);
            assert_eq!(res.is_err(), breaking, "trial {trial}: {res:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let m = base_manifest(4);
        let back: DatasetManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
