use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss_plan::{plan_dir, CeInput, LossPlan, PlanTerms, QualityInput, Resolver, WeightedInput};
use super::{read_json, to_json, write_json, Command, Settings};
use super::{LossArgs, MatchArgs, MixArgs, PlanArgs, PseudoLabelArgs, SelectArgs, StatsArgs, SynthArgs};
use crate::data::{
    load_manifest, read_disparity, read_image, read_prob_map, read_segmap, read_tensor, write_disparity,
    write_image, write_prob_map, write_segmap, write_tensor, DatasetManifest, DisparityMap, Domain, ImageRaster,
    Provenance, DEFAULT_DISPARITY_SCALE, DEFAULT_IGNORE_INDEX,
};
use crate::depthmix::{mix_pair, mix_rasters, MixConfig, MixSample, MixedSample};
use crate::error::{Error, Result};
use crate::geo_match::{check_plan_domains, match_geometry, plan_ssda, GeoMatchConfig, ManifestDisparities, MixPlan, PlanKind};
use crate::pseudo_label::{aggregate_losses, argmax_label, quality_weight, ClassLogitMap, LossConfig, LossReport, LossTerms};
use crate::selection::{
    class_frequency_report, read_selected_ids, run_selection, FrequencyReport, SelectionConfig, SelectionState,
    StepRecord, UncertaintyDir, UncertaintyProvider,
};
use crate::synth::{generate_dataset, generate_scene, DatasetSpec, SceneSpec};

/// `select` output, one file per schedule step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionOutput {
    pub provenance: Provenance,
    pub step: usize,
    pub schedule: Vec<usize>,
    pub lambda_e: f64,
    pub selected: Vec<String>,
}

/// Written next to every rendered mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRecord {
    pub provenance: Provenance,
    pub sample_i: String,
    pub sample_j: String,
    pub epsilon: f64,
    pub tau: f64,
    pub quality_weight: f64,
    pub mask_ones: usize,
    pub mask_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<MixPlan>,
}

/// `plan-ssda` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub provenance: Provenance,
    pub epsilon: f64,
    pub geo_match: GeoMatchConfig,
    pub batches: usize,
    pub plans: Vec<MixPlan>,
}

/// Batch `mix` summary: the input plans with quality weights filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixesFile {
    pub provenance: Provenance,
    pub tau: f64,
    pub plans: Vec<MixPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossReportFile {
    pub provenance: Provenance,
    pub lambda_f: f64,
    pub tau: f64,
    pub terms: LossTerms,
    pub report: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsFile {
    pub provenance: Provenance,
    pub selected: usize,
    pub pool: usize,
    pub report: FrequencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchFile {
    pub provenance: Provenance,
    pub top_margin: usize,
    pub bottom_margin: usize,
    pub best: String,
    pub difference: f64,
    pub scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelSummary {
    pub provenance: Provenance,
    pub num_classes: usize,
    pub pixels: usize,
    pub mean_confidence: f64,
    pub tau: f64,
    pub quality_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub provenance: Provenance,
    pub spec: SceneSpec,
}

/// A standalone sample for `mix --pair`; paths are relative to this file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDescriptor {
    pub num_classes: usize,
    #[serde(default = "default_ignore")]
    pub ignore_index: u8,
    pub image: String,
    pub disparity: String,
    pub label: String,
    /// Confidence of a pseudo-label; absent for ground truth.
    #[serde(default)]
    pub prob: Option<String>,
    #[serde(default)]
    pub prediction: Option<String>,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_INDEX
}

pub(super) fn run(cmd: &Command, s: &Settings) -> Result<()> {
    match cmd {
        Command::Select(a) => select(a, s),
        Command::Mix(a) => mix(a, s),
        Command::PseudoLabel(a) => pseudo_label(a, s),
        Command::MatchGeometry(a) => match_cmd(a, s),
        Command::PlanSsda(a) => plan_cmd(a, s),
        Command::LossReport(a) => loss_report(a, s),
        Command::Stats(a) => stats(a, s),
        Command::Synthgen(a) => synthgen(a, s),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn create_parent(p: &Path) -> Result<()> {
    match p.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(d) => create_dir(d),
        None => Ok(()),
    }
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            print!("{}", to_json(value));
            Ok(())
        }
    }
}

fn select(a: &SelectArgs, s: &Settings) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let cfg = SelectionConfig::new(
        a.schedule.clone().unwrap_or_else(|| s.selection.schedule.clone()),
        a.lambda_e.unwrap_or(s.selection.lambda_e),
        s.seed,
    )?;
    let prov = Provenance::new(s.seed).with_input(&a.manifest)?;
    create_dir(&a.out)?;

    let mut from_dir;
    let mut missing = |step: usize, _: &SelectionState| -> Result<BTreeMap<String, f64>> {
        Err(Error::Selection(format!("step {step} needs --uncertainty-dir")))
    };
    let provider: &mut dyn UncertaintyProvider = match &a.uncertainty_dir {
        Some(d) => {
            from_dir = UncertaintyDir::new(d, &manifest);
            &mut from_dir
        }
        None => &mut missing,
    };
    let mut on_step = |r: &StepRecord| -> Result<()> {
        info!("step {}: {} selected", r.step, r.selected.len());
        write_json(
            &a.out.join(format!("selected_step{}.json", r.step)),
            &SelectionOutput {
                provenance: prov.clone(),
                step: r.step,
                schedule: cfg.schedule.clone(),
                lambda_e: cfg.lambda_e,
                selected: r.selected.clone(),
            },
        )
    };
    run_selection(&manifest, &cfg, provider, &mut on_step)?;
    Ok(())
}

struct Loaded {
    sample: MixSample,
    prediction: Option<ClassLogitMap>,
}

#[allow(clippy::too_many_arguments)]
fn load_sample(
    base: &Path,
    image: &str,
    disparity: &str,
    label: &str,
    prob: Option<&str>,
    prediction: Option<&str>,
    num_classes: usize,
    ignore: u8,
) -> Result<Loaded> {
    let prediction = prediction
        .map(|p| {
            let path = base.join(p);
            ClassLogitMap::from_tensor(&read_tensor(&path)?, true).map_err(|e| Error::format(&path, e.to_string()))
        })
        .transpose()?;
    Ok(Loaded {
        sample: MixSample {
            image: read_image(base.join(image))?,
            disparity: read_disparity(base.join(disparity))?,
            label: read_segmap(base.join(label), num_classes, ignore)?,
            confidence: prob.map(|p| read_prob_map(base.join(p))).transpose()?,
        },
        prediction,
    })
}

fn load_entry(m: &DatasetManifest, id: &str) -> Result<Loaded> {
    let e = m.entry(id).ok_or_else(|| Error::validation(id, "not in manifest"))?;
    let need = |field: &'static str, v: &Option<String>| -> Result<String> {
        v.clone()
            .ok_or_else(|| Error::validation(id, format!("entry has no {field} path")))
    };
    let image = need("image", &e.image)?;
    let disparity = need("disparity", &e.disparity)?;
    let label = need("label", &e.label)?;
    if !e.labeled && e.prob.is_none() {
        return Err(Error::validation(id, "pseudo-labeled entry has no prob (confidence) path"));
    }
    let prob = if e.labeled { None } else { e.prob.as_deref() };
    load_sample(
        m.base_dir(),
        &image,
        &disparity,
        &label,
        prob,
        e.prediction.as_deref(),
        m.num_classes,
        m.ignore_index,
    )
    .map_err(|err| Error::validation(id, err.to_string()))
}

fn load_descriptor(path: &Path) -> Result<Loaded> {
    let d: SampleDescriptor = read_json(path)?;
    let base = plan_dir(path);
    load_sample(
        &base,
        &d.image,
        &d.disparity,
        &d.label,
        d.prob.as_deref(),
        d.prediction.as_deref(),
        d.num_classes,
        d.ignore_index,
    )
}

fn mask_image(mixed: &MixedSample) -> Result<ImageRaster> {
    let (w, h) = mixed.mask.dims();
    ImageRaster::new(w, h, 1, mixed.mask.data().iter().map(|&m| m * 255).collect())
}

/// Renders one pair into `dir`; returns the quality weight and mixed sample.
fn render(
    dir: &Path,
    i: &Loaded,
    j: &Loaded,
    epsilon: f64,
    tau: f64,
) -> Result<(f64, MixedSample, bool)> {
    let mixed = mix_pair(&i.sample, &j.sample, &MixConfig::new(epsilon)?)?;
    let q = quality_weight(&mixed.prob, tau)?.value;
    create_dir(dir)?;
    write_image(&mixed.image, dir.join("image.png"))?;
    write_segmap(&mixed.label, dir.join("label.png"))?;
    write_prob_map(&mixed.prob, dir.join("prob.dft1"))?;
    write_disparity(&mixed.disparity, dir.join("disparity.png"), DEFAULT_DISPARITY_SCALE)?;
    write_image(&mask_image(&mixed)?, dir.join("mask.png"))?;
    let has_prediction = match (&i.prediction, &j.prediction) {
        (Some(pi), Some(pj)) => {
            let p = mix_rasters(&mixed.mask, pi, pj)?;
            write_tensor(&p.to_tensor()?, dir.join("prediction.dft1"))?;
            true
        }
        _ => false,
    };
    Ok((q, mixed, has_prediction))
}

fn mix(a: &MixArgs, s: &Settings) -> Result<()> {
    let tau = a.tau.unwrap_or(s.pseudo_label.tau);
    match (&a.pair, &a.plans) {
        (Some(pair), _) => mix_pair_cmd(a, pair, tau, s),
        (None, Some(plans)) => {
            let manifest_path = a.manifest.as_ref().expect("clap enforces --manifest");
            mix_plans(manifest_path, plans, &a.out, tau, s)
        }
        (None, None) => unreachable!("clap enforces a mode"),
    }
}

fn mix_pair_cmd(a: &MixArgs, pair: &[String], tau: f64, s: &Settings) -> Result<()> {
    let mut prov = Provenance::new(s.seed);
    let (i, j) = match &a.manifest {
        Some(mp) => {
            let m = load_manifest(mp)?;
            prov.add_input(mp)?;
            (load_entry(&m, &pair[0])?, load_entry(&m, &pair[1])?)
        }
        None => {
            prov.add_input(&pair[0])?;
            prov.add_input(&pair[1])?;
            (
                load_descriptor(Path::new(&pair[0]))?,
                load_descriptor(Path::new(&pair[1]))?,
            )
        }
    };
    let epsilon = a.epsilon.unwrap_or(s.depthmix.epsilon);
    let (q, mixed, _) = render(&a.out, &i, &j, epsilon, tau)?;
    write_json(
        &a.out.join("mix_record.json"),
        &MixRecord {
            provenance: prov,
            sample_i: pair[0].clone(),
            sample_j: pair[1].clone(),
            epsilon,
            tau,
            quality_weight: q,
            mask_ones: mixed.mask.count_ones(),
            mask_fraction: mixed.mask.fraction(),
            plan: None,
        },
    )
}

fn kind_dir(kind: PlanKind) -> &'static str {
    match kind {
        PlanKind::Tdm => "tdm",
        PlanKind::Cdm => "cdm",
        PlanKind::CleanSrc => "clean_src",
        PlanKind::CleanTrg => "clean_trg",
    }
}

/// `target` relative to `base_dir`, both existing on disk, with `/` separators.
fn relative(target: &Path, base_dir: &Path) -> Result<String> {
    let t = fs::canonicalize(target).map_err(|e| Error::io(target, e))?;
    let b = fs::canonicalize(base_dir).map_err(|e| Error::io(base_dir, e))?;
    let rel = pathdiff::diff_paths(&t, &b)
        .ok_or_else(|| Error::format(target, format!("no path relative to {}", base_dir.display())))?;
    Ok(rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/"))
}

fn mix_plans(manifest_path: &Path, plans_path: &Path, out: &Path, tau: f64, s: &Settings) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let file: PlanFile = read_json(plans_path)?;
    check_plan_domains(&manifest, &file.plans)?;
    let seed = if s.seed_given { s.seed } else { file.provenance.seed };
    let prov = Provenance::new(seed)
        .with_input(manifest_path)?
        .with_input(plans_path)?;

    // directory of each mix: batchNNNN/<kind><k>, k counting same-kind mixes in the batch
    let mut dirs: Vec<Option<PathBuf>> = Vec::with_capacity(file.plans.len());
    let mut seen: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for p in &file.plans {
        if p.kind.is_mix() {
            let k = seen.entry((p.batch, kind_dir(p.kind))).or_insert(0);
            dirs.push(Some(out.join(format!("batch{:04}/{}{}", p.batch, kind_dir(p.kind), k))));
            *k += 1;
        } else {
            dirs.push(None);
        }
    }

    let rendered: Vec<(MixPlan, bool)> = file
        .plans
        .par_iter()
        .zip(dirs.par_iter())
        .map(|(p, dir)| {
            let Some(dir) = dir else {
                return Ok((p.clone(), false));
            };
            let j_id = p
                .sample_j
                .as_deref()
                .ok_or_else(|| Error::validation(&p.sample_i, "mix plan without sample_j"))?;
            let i = load_entry(&manifest, &p.sample_i)?;
            let j = load_entry(&manifest, j_id)?;
            let epsilon = p.epsilon.unwrap_or(s.depthmix.epsilon);
            let (q, mixed, has_pred) = render(dir, &i, &j, epsilon, tau)?;
            let mut plan = p.clone();
            plan.epsilon = Some(epsilon);
            plan.quality_weight = Some(q);
            write_json(
                &dir.join("mix_record.json"),
                &MixRecord {
                    provenance: prov.clone(),
                    sample_i: p.sample_i.clone(),
                    sample_j: j_id.to_string(),
                    epsilon,
                    tau,
                    quality_weight: q,
                    mask_ones: mixed.mask.count_ones(),
                    mask_fraction: mixed.mask.fraction(),
                    plan: Some(plan.clone()),
                },
            )?;
            Ok((plan, has_pred))
        })
        .collect::<Result<_>>()?;

    // one loss plan per batch, referencing the clean entries and the first mix of each kind
    let mut batches: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, p) in file.plans.iter().enumerate() {
        batches.entry(p.batch).or_default().push(idx);
    }
    for (b, idxs) in &batches {
        let batch_dir = out.join(format!("batch{b:04}"));
        create_dir(&batch_dir)?;
        let clean = |kind: PlanKind| -> Result<Option<CeInput>> {
            let Some(&idx) = idxs.iter().find(|&&i| file.plans[i].kind == kind) else {
                return Ok(None);
            };
            let e = manifest
                .entry(&file.plans[idx].sample_i)
                .ok_or_else(|| Error::validation(&file.plans[idx].sample_i, "not in manifest"))?;
            let (Some(pred), Some(label)) = (&e.prediction, &e.label) else {
                return Ok(None);
            };
            Ok(Some(CeInput::Raster {
                prediction: relative(&manifest.resolve(pred), &batch_dir)?,
                target: relative(&manifest.resolve(label), &batch_dir)?,
                logits: false,
            }))
        };
        let mixed = |kind: PlanKind| -> Result<Option<WeightedInput>> {
            let Some(&idx) = idxs
                .iter()
                .find(|&&i| file.plans[i].kind == kind && rendered[i].1)
            else {
                return Ok(None);
            };
            let dir = dirs[idx].as_ref().expect("mix has a directory");
            let rel = |f: &str| relative(&dir.join(f), &batch_dir);
            Ok(Some(WeightedInput {
                ce: CeInput::Raster {
                    prediction: rel("prediction.dft1")?,
                    target: rel("label.png")?,
                    logits: false,
                },
                quality: QualityInput::Confidence { prob: rel("prob.dft1")? },
            }))
        };
        let plan = LossPlan {
            num_classes: manifest.num_classes,
            ignore_index: manifest.ignore_index,
            lambda_f: None,
            tau: Some(tau),
            terms: PlanTerms {
                ce_src: clean(PlanKind::CleanSrc)?,
                ce_trg: clean(PlanKind::CleanTrg)?,
                tdm: mixed(PlanKind::Tdm)?,
                cdm: mixed(PlanKind::Cdm)?,
                ..Default::default()
            },
        };
        write_json(&batch_dir.join("loss_plan.json"), &plan)?;
    }

    info!("rendered {} mixes over {} batches", dirs.iter().flatten().count(), batches.len());
    write_json(
        &out.join("mixes.json"),
        &MixesFile {
            provenance: prov,
            tau,
            plans: rendered.into_iter().map(|(p, _)| p).collect(),
        },
    )
}

fn pseudo_label(a: &PseudoLabelArgs, s: &Settings) -> Result<()> {
    let t = read_tensor(&a.probs)?;
    let scores = ClassLogitMap::from_tensor(&t, !a.logits).map_err(|e| Error::format(&a.probs, e.to_string()))?;
    let (labels, conf) = argmax_label(&scores)?;
    create_parent(&a.out.label)?;
    create_parent(&a.out.conf)?;
    write_segmap(&labels, &a.out.label)?;
    write_prob_map(&conf, &a.out.conf)?;
    let tau = a.tau.unwrap_or(s.pseudo_label.tau);
    let n = conf.data().len();
    emit(
        None,
        &PseudoLabelSummary {
            provenance: Provenance::new(s.seed).with_input(&a.probs)?,
            num_classes: scores.num_classes(),
            pixels: n,
            mean_confidence: conf.data().iter().sum::<f64>() / n.max(1) as f64,
            tau,
            quality_weight: quality_weight(&conf, tau)?.value,
        },
    )
}

fn geo_from(s: &Settings, top: Option<usize>, bottom: Option<usize>, absolute: bool) -> GeoMatchConfig {
    let mut g = s.geo_config();
    if let Some(t) = top {
        g.top_margin = t;
    }
    if let Some(b) = bottom {
        g.bottom_margin = b;
    }
    g.absolute_margins |= absolute;
    g
}

fn match_cmd(a: &MatchArgs, s: &Settings) -> Result<()> {
    let cfg = geo_from(s, a.top_margin, a.bottom_margin, a.absolute_margins);
    let target = read_disparity(&a.target)?;
    let target_canon = fs::canonicalize(&a.target).map_err(|e| Error::io(&a.target, e))?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.candidates)
        .map_err(|e| Error::io(&a.candidates, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&a.candidates, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter(|p| fs::canonicalize(p).map(|c| c != target_canon).unwrap_or(true))
        .collect();
    paths.sort();
    let candidates: Vec<(String, DisparityMap)> = paths
        .par_iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, read_disparity(p)?))
        })
        .collect::<Result<_>>()?;
    let m = match_geometry(&target, &candidates, &cfg)?;
    let (top, bottom) = cfg.margins_for(target.height())?;

    println!("id\tG");
    for (id, g) in &m.scores {
        println!("{id}\t{g:.9}");
    }
    println!("best\t{}\t{:.9}", m.id, m.difference);

    if let Some(out) = &a.out {
        let mut prov = Provenance::new(s.seed).with_input(&a.target)?;
        for p in &paths {
            prov.add_input(p)?;
        }
        write_json(
            out,
            &MatchFile {
                provenance: prov,
                top_margin: top,
                bottom_margin: bottom,
                best: m.id,
                difference: m.difference,
                scores: m.scores,
            },
        )?;
    }
    Ok(())
}

fn plan_cmd(a: &PlanArgs, s: &Settings) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let mut geo = geo_from(s, a.top_margin, a.bottom_margin, a.absolute_margins);
    if let Some(k) = a.num_candidates {
        geo.num_candidates = k;
    }
    let epsilon = MixConfig::new(a.epsilon.unwrap_or(s.depthmix.epsilon))?.epsilon;
    let disparities = ManifestDisparities::new(&manifest);
    let plans = plan_ssda(&manifest, &geo, epsilon, a.batches, &disparities)?;
    check_plan_domains(&manifest, &plans)?;
    info!("planned {} samples over {} batches", plans.len(), a.batches);
    write_json(
        &a.out,
        &PlanFile {
            provenance: Provenance::new(s.seed).with_input(&a.manifest)?,
            epsilon,
            geo_match: geo,
            batches: a.batches,
            plans,
        },
    )
}

fn loss_report(a: &LossArgs, s: &Settings) -> Result<()> {
    let plan: LossPlan = read_json(&a.plan)?;
    let tau = a.tau.or(plan.tau).unwrap_or(s.pseudo_label.tau);
    let lambda_f = a.lambda_f.or(plan.lambda_f).unwrap_or(s.pseudo_label.lambda_f);
    let cfg = LossConfig::new(lambda_f, tau)?;
    let mut prov = Provenance::new(s.seed).with_input(&a.plan)?;
    let terms = Resolver {
        base: plan_dir(&a.plan),
        plan: &plan,
        tau,
        prov: &mut prov,
    }
    .resolve()?;
    let report = aggregate_losses(&terms, &cfg)?;
    emit(
        a.out.as_deref(),
        &LossReportFile {
            provenance: prov,
            lambda_f,
            tau,
            terms,
            report,
        },
    )
}

fn stats(a: &StatsArgs, s: &Settings) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let ids = read_selected_ids(&a.selected)?;
    for id in &ids {
        match manifest.entry(id) {
            Some(e) if e.domain == Domain::Target => {}
            Some(_) => return Err(Error::validation(id, "selected entry is not in the target domain")),
            None => return Err(Error::validation(id, "selected entry not in manifest")),
        }
    }
    let pool: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.domain == Domain::Target)
        .collect();
    let maps = pool
        .par_iter()
        .map(|e| {
            manifest
                .load_label(e)?
                .map(|m| (e.id.as_str(), m))
                .ok_or_else(|| Error::validation(&e.id, "target entry has no label map"))
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let all: Vec<_> = maps.iter().map(|(_, m)| m).collect();
    let sel: Vec<_> = maps
        .iter()
        .filter(|(id, _)| chosen.contains(id))
        .map(|(_, m)| m)
        .collect();
    let report = class_frequency_report(&sel, &all)?;
    emit(
        a.out.as_deref(),
        &StatsFile {
            provenance: Provenance::new(s.seed)
                .with_input(&a.selected)?
                .with_input(&a.manifest)?,
            selected: sel.len(),
            pool: all.len(),
            report,
        },
    )
}

fn synthgen(a: &SynthArgs, s: &Settings) -> Result<()> {
    let value: serde_json::Value = read_json(&a.spec)?;
    if value.get("num_source").is_some() {
        let mut spec: DatasetSpec = serde_json::from_value(value).map_err(|e| Error::json(&a.spec, e))?;
        if s.seed_given {
            spec.seed = s.seed;
        }
        let prov = Provenance::new(spec.seed).with_input(&a.spec)?;
        let m = generate_dataset(&spec, &a.out, prov)?;
        info!("wrote {} entries to {}", m.entries.len(), a.out.display());
    } else {
        let mut spec: SceneSpec = serde_json::from_value(value).map_err(|e| Error::json(&a.spec, e))?;
        if s.seed_given {
            spec.seed = s.seed;
        }
        let scene = generate_scene(&spec)?;
        create_dir(&a.out)?;
        write_image(&scene.image, a.out.join("image.png"))?;
        write_disparity(&scene.disparity, a.out.join("disparity.png"), DEFAULT_DISPARITY_SCALE)?;
        write_segmap(&scene.labels, a.out.join("label.png"))?;
        write_json(
            &a.out.join("scene.json"),
            &SceneRecord {
                provenance: Provenance::new(spec.seed).with_input(&a.spec)?,
                spec,
            },
        )?;
    }
    Ok(())
}
