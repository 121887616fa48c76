//! Brute-force reference implementations for small instances.
//!
//! Everything here works on plain nested vectors with straightforward loops
//! and calls nothing from the algorithm modules. The test suites compare the
//! real implementations against these.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_SIDE: usize = 64;
pub const MAX_ITEMS: usize = 200;

pub type Grid<T> = Vec<Vec<T>>;

fn guard_raster<T>(g: &[Vec<T>]) -> Result<(usize, usize)> {
    let h = g.len();
    let w = g.first().map(|r| r.len()).unwrap_or(0);
    if h > MAX_SIDE || w > MAX_SIDE {
        return Err(Error::Domain(format!(
            "oracle refuses {w}x{h} rasters (limit {MAX_SIDE}x{MAX_SIDE})"
        )));
    }
    if g.iter().any(|r| r.len() != w) {
        return Err(Error::Shape("ragged oracle raster".into()));
    }
    Ok((w, h))
}

fn guard_pair<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<(usize, usize)> {
    let da = guard_raster(a)?;
    let db = guard_raster(b)?;
    if da != db {
        return Err(Error::Shape(format!("oracle rasters {da:?} vs {db:?}")));
    }
    Ok(da)
}

fn guard_items(n: usize) -> Result<()> {
    if n > MAX_ITEMS {
        return Err(Error::Domain(format!("oracle refuses {n} items (limit {MAX_ITEMS})")));
    }
    Ok(())
}

/// 1 where sample i is at least as close as sample j, up to `eps`.
pub fn depthmix_mask(disp_i: &[Vec<f64>], disp_j: &[Vec<f64>], eps: f64) -> Result<Grid<u8>> {
    let (w, h) = guard_pair(disp_i, disp_j)?;
    let mut out = vec![vec![0u8; w]; h];
    for y in 0..h {
        for x in 0..w {
            if disp_i[y][x] > disp_j[y][x] - eps {
                out[y][x] = 1;
            }
        }
    }
    Ok(out)
}

pub fn composite<T: Clone>(mask: &[Vec<u8>], a: &[Vec<T>], b: &[Vec<T>]) -> Result<Grid<T>> {
    guard_pair(mask, a)?;
    guard_pair(mask, b)?;
    let mut out = b.to_vec();
    for y in 0..mask.len() {
        for x in 0..mask[y].len() {
            if mask[y][x] == 1 {
                out[y][x] = a[y][x].clone();
            }
        }
    }
    Ok(out)
}

/// Class-segment mask: half of the classes present (rounded up), drawn at
/// random, are taken from sample i. Ignores depth entirely.
pub fn classmix_mask(labels_i: &[Vec<u8>], ignore: u8, seed: u64) -> Result<Grid<u8>> {
    guard_raster(labels_i)?;
    let mut present: Vec<u8> = labels_i.iter().flatten().copied().filter(|&c| c != ignore).collect();
    present.sort_unstable();
    present.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates
    let take = present.len().div_ceil(2);
    for k in 0..take {
        let r = rng.gen_range(k..present.len());
        present.swap(k, r);
    }
    let chosen = &present[..take];
    Ok(labels_i
        .iter()
        .map(|row| row.iter().map(|c| chosen.contains(c) as u8).collect())
        .collect())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        s += d * d;
    }
    s.sqrt()
}

/// Greedy selection, recomputing every distance from scratch at every pick.
///
/// Items are considered in ascending id order. The first pick is uniform from
/// `seed`; every later pick maximizes `min distance + lambda_e * E`, where E is
/// zero during step 1 and `uncertainty[step - 2][id]` afterwards. Returns the
/// cumulative selection after each step.
pub fn fps(
    items: &[(String, Vec<f64>)],
    schedule: &[usize],
    seed: u64,
    lambda_e: f64,
    uncertainty: &[BTreeMap<String, f64>],
) -> Result<Vec<Vec<String>>> {
    guard_items(items.len())?;
    let mut sorted: Vec<&(String, Vec<f64>)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut taken = vec![false; sorted.len()];
    let mut chosen: Vec<usize> = Vec::new();
    let mut per_step = Vec::new();

    for (s, &target) in schedule.iter().enumerate() {
        let step = s + 1;
        if target > sorted.len() || target < chosen.len() {
            return Err(Error::Selection(format!("oracle: bad target {target} at step {step}")));
        }
        while chosen.len() < target {
            if chosen.is_empty() {
                let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..sorted.len());
                taken[first] = true;
                chosen.push(first);
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for i in 0..sorted.len() {
                if taken[i] {
                    continue;
                }
                let mut d = f64::INFINITY;
                for &c in &chosen {
                    let e = euclid(&sorted[i].1, &sorted[c].1);
                    if e < d {
                        d = e;
                    }
                }
                let bonus = if step >= 2 {
                    let table = uncertainty.get(step - 2).ok_or_else(|| {
                        Error::Selection(format!("oracle: no uncertainty for step {step}"))
                    })?;
                    let e = table.get(&sorted[i].0).ok_or_else(|| {
                        Error::validation(&sorted[i].0, "oracle: missing uncertainty")
                    })?;
                    lambda_e * e
                } else {
                    0.0
                };
                let score = d + bonus;
                match best {
                    Some((_, b)) if score <= b => {}
                    _ => best = Some((i, score)),
                }
            }
            let (i, _) = best.expect("pool not exhausted");
            taken[i] = true;
            chosen.push(i);
        }
        per_step.push(chosen.iter().map(|&i| sorted[i].0.clone()).collect());
    }
    Ok(per_step)
}

/// Mean |ln(1+a) - ln(1+b)| over rows `top .. h - bottom`.
pub fn geometric_difference(a: &[Vec<f64>], b: &[Vec<f64>], top: usize, bottom: usize) -> Result<f64> {
    let (w, h) = guard_pair(a, b)?;
    if top + bottom >= h {
        return Err(Error::Domain("oracle: margins cover the image".into()));
    }
    let mut s = 0.0;
    let mut n = 0usize;
    for y in top..h - bottom {
        for x in 0..w {
            s += ((1.0 + a[y][x]).ln() - (1.0 + b[y][x]).ln()).abs();
            n += 1;
        }
    }
    Ok(s / n as f64)
}

/// Best candidate by exhaustive scan; on exact ties the lowest id.
pub fn geomatch(
    target: &[Vec<f64>],
    candidates: &[(String, Grid<f64>)],
    top: usize,
    bottom: usize,
) -> Result<(String, f64)> {
    guard_items(candidates.len())?;
    let mut best: Option<(String, f64)> = None;
    for (id, d) in candidates {
        let g = geometric_difference(target, d, top, bottom)?;
        let better = match &best {
            None => true,
            Some((bid, bg)) => g < *bg || (g == *bg && id < bid),
        };
        if better {
            best = Some((id.clone(), g));
        }
    }
    best.ok_or_else(|| Error::Planning("oracle: no candidates".into()))
}

/// Pixel-mean cross-entropy of raw class scores `logits[y][x][c]`.
pub fn cross_entropy(logits: &[Vec<Vec<f64>>], target: &[Vec<u8>], ignore: u8) -> Result<f64> {
    guard_pair(logits, target)?;
    let mut s = 0.0;
    let mut n = 0usize;
    for y in 0..target.len() {
        for x in 0..target[y].len() {
            let t = target[y][x];
            if t == ignore {
                continue;
            }
            let z = &logits[y][x];
            let mut m = f64::NEG_INFINITY;
            for &v in z {
                m = m.max(v);
            }
            let mut denom = 0.0;
            for &v in z {
                denom += (v - m).exp();
            }
            s += denom.ln() - (z[t as usize] - m);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}

pub fn quality_weight(conf: &[Vec<f64>], tau: f64) -> Result<f64> {
    let (w, h) = guard_raster(conf)?;
    let mut above = 0usize;
    for row in conf {
        for &p in row {
            if p > tau {
                above += 1;
            }
        }
    }
    Ok(above as f64 / (w * h) as f64)
}

/// Teacher after `k` updates towards a fixed student, in closed form.
pub fn ema_closed_form(teacher0: f64, student: f64, alpha: f64, k: u32) -> f64 {
    let a = alpha.powi(k as i32);
    a * teacher0 + (1.0 - a) * student
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossInputs {
    pub ce_trg: f64,
    pub ce_src: f64,
    pub ce_labeled: f64,
    pub ce_mixed: f64,
    pub q_mixed: f64,
    pub ce_tdm: f64,
    pub q_tdm: f64,
    pub ce_cdm: f64,
    pub q_cdm: f64,
    pub feat_dist: f64,
    pub lambda_f: f64,
    pub sde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub l_dx: f64,
    pub l_mtl: f64,
    pub l_ssda: f64,
    pub l_pretrain: f64,
}

pub fn losses(i: &LossInputs) -> Objectives {
    let l_dx = i.ce_labeled + i.q_mixed * i.ce_mixed;
    Objectives {
        l_dx,
        l_mtl: i.sde + l_dx,
        l_ssda: i.ce_trg + i.ce_src + i.q_cdm * i.ce_cdm + i.q_tdm * i.ce_tdm + i.sde,
        l_pretrain: i.sde + i.lambda_f * i.feat_dist,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_disparities_give_all_ones() {
        let d = vec![vec![0.3; 5]; 4];
        assert!(depthmix_mask(&d, &d, 0.03).unwrap().iter().flatten().all(|&m| m == 1));
    }

    #[test]
    fn collinear_fps() {
        let items: Vec<(String, Vec<f64>)> = [0.0, 1.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("p{i}"), vec![v]))
            .collect();
        // find a seed whose first draw is p0
        let seed = (0..)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).gen_range(0..3usize) == 0)
            .unwrap();
        let sel = fps(&items, &[3], seed, 0.0, &[]).unwrap();
        assert_eq!(sel[0], ["p0", "p2", "p1"]);
    }

    #[test]
    fn loss_arithmetic() {
        let o = losses(&LossInputs {
            ce_labeled: 1.0,
            ce_mixed: 2.0,
            q_mixed: 0.5,
            ..Default::default()
        });
        assert_eq!(o.l_dx, 2.0);
    }

    #[test]
    fn size_guard() {
        let big = vec![vec![0.0; 65]; 2];
        assert!(depthmix_mask(&big, &big, 0.0).is_err());
        let items = vec![("a".to_string(), vec![0.0]); 201];
        assert!(fps(&items, &[1], 0, 0.0, &[]).is_err());
    }

    #[test]
    fn classmix_takes_whole_segments() {
        let labels = vec![vec![0, 0, 1, 1, 2, 2, 3, 255]; 3];
        let m = classmix_mask(&labels, 255, 4).unwrap();
        let mut picked: Vec<u8> = (0..8).filter(|&x| m[0][x] == 1).map(|x| labels[0][x]).collect();
        picked.dedup();
        assert_eq!(picked.len(), 2);
        for row in &m {
            assert_eq!(row[0], row[1]);
            assert_eq!(row[7], 0);
        }
    }

    #[test]
    fn uniform_ce_is_log_c() {
        let logits = vec![vec![vec![0.0; 7]; 3]; 2];
        let target = vec![vec![2u8; 3]; 2];
        assert!((cross_entropy(&logits, &target, 255).unwrap() - 7f64.ln()).abs() < 1e-15);
    }
}
