//! Naive f64 reference implementations and random instance generators.
#![allow(dead_code)]

use hmk_core::{BinaryMask, Tensor};
use rand::{Rng, RngExt, SeedableRng};
use rand_pcg::Pcg64;

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-2.0f32..2.0)).unwrap()
}

/// Random tensor where roughly `zero_frac` of the elements are exactly 0.
pub fn sparse_tensor(rng: &mut impl Rng, shape: &[usize], zero_frac: f64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        if rng.random_bool(zero_frac) {
            0.0
        } else {
            rng.random_range(-2.0f32..2.0)
        }
    })
    .unwrap()
}

pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p)).unwrap()
}

pub fn to_f64(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

pub fn mask_f64(m: &BinaryMask) -> Vec<f64> {
    m.data().iter().map(|&v| v as f64).collect()
}

/// Bilinear resize, half-pixel centers, clamped; written as the weighted
/// sum of the four neighbours.
pub fn resize(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        let sy = ((i as f64 + 0.5) * h as f64 / oh as f64 - 0.5).max(0.0).min((h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = if y0 + 1 < h { y0 + 1 } else { h - 1 };
        let dy = sy - y0 as f64;
        for j in 0..ow {
            let sx = ((j as f64 + 0.5) * w as f64 / ow as f64 - 0.5).max(0.0).min((w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = if x0 + 1 < w { x0 + 1 } else { w - 1 };
            let dx = sx - x0 as f64;
            out[i * ow + j] = (1.0 - dy) * (1.0 - dx) * src[y0 * w + x0]
                + (1.0 - dy) * dx * src[y0 * w + x1]
                + dy * (1.0 - dx) * src[y1 * w + x0]
                + dy * dx * src[y1 * w + x1];
        }
    }
    out
}

/// `feat[k][y][x] * resize(mask)[y][x]`.
pub fn feature_mask_f64(feat: &[f64], c: usize, h: usize, w: usize, mask: &BinaryMask) -> Vec<f64> {
    let (mh, mw) = mask.dims();
    let tau = resize(&mask_f64(mask), mh, mw, h, w);
    let mut out = vec![0.0; c * h * w];
    for k in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(k * h + y) * w + x] = feat[(k * h + y) * w + x] * tau[y * w + x];
            }
        }
    }
    out
}

/// Hybrid masking as a literal nested loop over channel, row and column.
pub fn hybrid(fm: &[f32], im: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut hm = vec![0.0f32; c * h * w];
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let idx = (k * h + i) * w + j;
                if fm[idx] != 0.0 {
                    hm[idx] = fm[idx];
                } else {
                    hm[idx] = im[idx];
                }
            }
        }
    }
    hm
}

/// Cosine correlation `[qh, qw, sh, sw]`, ReLU-clamped, zero-norm → 0.
pub fn cosine(q: &[f64], s: &[f64], c: usize, qhw: (usize, usize), shw: (usize, usize)) -> Vec<f64> {
    let (qn, sn) = (qhw.0 * qhw.1, shw.0 * shw.1);
    let mut out = vec![0.0; qn * sn];
    for a in 0..qn {
        for b in 0..sn {
            let (mut dot, mut nq, mut ns) = (0.0, 0.0, 0.0);
            for k in 0..c {
                let (x, y) = (q[k * qn + a], s[k * sn + b]);
                dot += x * y;
                nq += x * x;
                ns += y * y;
            }
            let (nq, ns) = (nq.sqrt(), ns.sqrt());
            out[a * sn + b] = if nq < 1e-12 || ns < 1e-12 { 0.0 } else { (dot / (nq * ns)).max(0.0) };
        }
    }
    out
}

/// Weighted average over locations of each channel.
pub fn map_prototype_f64(feat: &[f64], c: usize, n: usize, weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    (0..c)
        .map(|k| (0..n).map(|p| feat[k * n + p] * weights[p]).sum::<f64>() / total)
        .collect()
}

/// Per-class and foreground/background counts recomputed from scratch.
pub struct Recount {
    pub miou: Option<f64>,
    pub fb_iou: Option<f64>,
}

pub fn recount(episodes: &[(u32, BinaryMask, BinaryMask)]) -> Recount {
    use std::collections::BTreeMap;
    let mut classes: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    let (mut fi, mut fu, mut bi, mut bu) = (0u64, 0u64, 0u64, 0u64);
    for (class, pred, gt) in episodes {
        let e = classes.entry(*class).or_insert((0, 0));
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (p, g) = (pred.get(y, x), gt.get(y, x));
                if p && g {
                    e.0 += 1;
                    fi += 1;
                }
                if p || g {
                    e.1 += 1;
                    fu += 1;
                }
                if !p && !g {
                    bi += 1;
                }
                if !p || !g {
                    bu += 1;
                }
            }
        }
    }
    let ious: Vec<f64> = classes
        .values()
        .filter(|(_, u)| *u > 0)
        .map(|&(i, u)| i as f64 / u as f64)
        .collect();
    Recount {
        miou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        fb_iou: (fu > 0 && bu > 0).then(|| (fi as f64 / fu as f64 + bi as f64 / bu as f64) / 2.0),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
