//! RANSAC over descriptor correspondences.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{icp_refine, kabsch, CoarseConfig, CoarseResult, FpfhDescriptor};
use crate::error::{Error, Result};
use crate::sampler::SurfacePointSet;
use crate::transform::{rotation_angle, SimTransform};
use crate::Vec3;

const CHUNK: usize = 1000;
const CHUNKS_PER_BATCH: usize = 8;
const SAMPLE: usize = 4;
const MIN_MUTUAL: usize = 10;
/// Hypotheses kept for re-ranking.
const POOL: usize = 64;
/// Re-ranked hypotheses must differ in rotation by at least this (radians).
const RERANK_MIN_ANGLE: f64 = 0.3;

fn nearest_descriptor(d: &FpfhDescriptor, pool: &[FpfhDescriptor]) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (j, q) in pool.iter().enumerate() {
        if q.isolated {
            continue;
        }
        let dist = d.distance_squared(q);
        if dist < best_d {
            best_d = dist;
            best = Some(j);
        }
    }
    best
}

/// Source→target pairs by nearest descriptor. With `mutual`, pairs must be
/// each other's nearest; falls back to one-way matches if fewer than ten
/// mutual pairs survive. Isolated descriptors never match.
pub fn match_descriptors(
    src: &[FpfhDescriptor],
    tgt: &[FpfhDescriptor],
    mutual: bool,
) -> Vec<(usize, usize)> {
    let forward: Vec<Option<usize>> = src
        .par_iter()
        .map(|d| if d.isolated { None } else { nearest_descriptor(d, tgt) })
        .collect();
    let one_way: Vec<(usize, usize)> = forward
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    if !mutual {
        return one_way;
    }
    let backward: Vec<Option<usize>> = tgt
        .par_iter()
        .map(|d| if d.isolated { None } else { nearest_descriptor(d, src) })
        .collect();
    let both: Vec<(usize, usize)> = one_way
        .iter()
        .copied()
        .filter(|&(i, j)| backward[j] == Some(i))
        .collect();
    if both.len() < MIN_MUTUAL {
        one_way
    } else {
        both
    }
}

#[derive(Clone)]
struct Hypothesis {
    inliers: usize,
    index: usize,
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Hypothesis {
    fn beats(&self, other: &Hypothesis) -> bool {
        self.inliers > other.inliers || (self.inliers == other.inliers && self.index < other.index)
    }
}

fn count_inliers(
    pairs: &[(Vec3, Vec3)],
    r: &Matrix3<f64>,
    t: &Vec3,
    threshold: f64,
) -> (usize, f64) {
    let t2 = threshold * threshold;
    let mut n = 0;
    let mut sq = 0.0;
    for (a, b) in pairs {
        let d2 = (r * a + t - b).norm_squared();
        if d2 < t2 {
            n += 1;
            sq += d2;
        }
    }
    (n, sq)
}

fn edges_consistent(src: &[Vec3; SAMPLE], tgt: &[Vec3; SAMPLE], similarity: f64) -> bool {
    for a in 0..SAMPLE {
        for b in a + 1..SAMPLE {
            let ds = (src[a] - src[b]).norm();
            let dt = (tgt[a] - tgt[b]).norm();
            if ds < dt * similarity || dt < ds * similarity {
                return false;
            }
        }
    }
    true
}

/// Inserts `h` into a list kept sorted best-first and at most `cap` long.
fn keep_best(list: &mut Vec<Hypothesis>, h: Hypothesis, cap: usize) {
    let pos = list.iter().position(|b| h.beats(b)).unwrap_or(list.len());
    if pos < cap {
        list.insert(pos, h);
        list.truncate(cap);
    }
}

fn run_chunk(
    pairs: &[(Vec3, Vec3)],
    chunk: usize,
    count: usize,
    seed: u64,
    cfg: &CoarseConfig,
    threshold: f64,
    keep: usize,
) -> Vec<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    let mut best = Vec::new();
    for k in 0..count {
        let mut pick = [0usize; SAMPLE];
        let mut filled = 0;
        while filled < SAMPLE {
            let c = rng.random_range(0..pairs.len());
            if !pick[..filled].contains(&c) {
                pick[filled] = c;
                filled += 1;
            }
        }
        let src = pick.map(|c| pairs[c].0);
        let tgt = pick.map(|c| pairs[c].1);
        if !edges_consistent(&src, &tgt, cfg.edge_similarity) {
            continue;
        }
        let Some((r, t)) = kabsch(&src, &tgt) else { continue };
        let (inliers, _) = count_inliers(pairs, &r, &t, threshold);
        let h = Hypothesis {
            inliers,
            index: chunk * CHUNK + k,
            rotation: r,
            translation: t,
        };
        keep_best(&mut best, h, keep);
    }
    best
}

/// Refit on the correspondence inliers, kept only if the count does not drop.
fn refit(pairs: &[(Vec3, Vec3)], h: &Hypothesis, threshold: f64) -> (Matrix3<f64>, Vec3, usize, f64) {
    let t2 = threshold * threshold;
    let (src_in, tgt_in): (Vec<Vec3>, Vec<Vec3>) = pairs
        .iter()
        .filter(|(a, b)| (h.rotation * a + h.translation - b).norm_squared() < t2)
        .cloned()
        .unzip();
    let (mut r, mut t) = (h.rotation, h.translation);
    let (mut inliers, mut sq) = count_inliers(pairs, &r, &t, threshold);
    if let Some((rr, tt)) = kabsch(&src_in, &tgt_in) {
        let (n, s) = count_inliers(pairs, &rr, &tt, threshold);
        if n >= inliers {
            (r, t, inliers, sq) = (rr, tt, n, s);
        }
    }
    (r, t, inliers, sq)
}

/// Up to `n` hypotheses from the best-first `pool`, skipping any within
/// `min_angle` of rotation of one already taken.
fn distinct(pool: &[Hypothesis], n: usize, min_angle: f64) -> Vec<&Hypothesis> {
    let mut out: Vec<&Hypothesis> = Vec::new();
    for h in pool {
        if out.len() == n {
            break;
        }
        let far = out
            .iter()
            .all(|o| rotation_angle(&(h.rotation * o.rotation.transpose())) >= min_angle);
        if far {
            out.push(h);
        }
    }
    out
}

/// Seeded RANSAC; hypotheses run in fixed chunks of independent RNG streams so
/// the result does not depend on the worker count.
pub fn ransac_align(
    source: &SurfacePointSet,
    target: &SurfacePointSet,
    src_desc: &[FpfhDescriptor],
    tgt_desc: &[FpfhDescriptor],
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<CoarseResult> {
    cfg.validate()?;
    if source.len() < SAMPLE || target.len() < SAMPLE {
        return Err(Error::input("ransac needs at least four points on each side"));
    }
    if src_desc.len() != source.len() || tgt_desc.len() != target.len() {
        return Err(Error::input("descriptor count does not match point count"));
    }
    let matches = match_descriptors(src_desc, tgt_desc, cfg.mutual_filter);
    let pairs: Vec<(Vec3, Vec3)> = matches
        .iter()
        .map(|&(i, j)| (source.points[i], target.points[j]))
        .collect();
    if pairs.len() < SAMPLE {
        return Ok(CoarseResult::failed(SimTransform::identity(), pairs.len()));
    }
    let threshold = cfg.inlier_factor * cfg.voxel;

    let keep = if cfg.rerank_candidates > 0 { POOL } else { 1 };
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut done = 0;
    let mut next_chunk = 0;
    while done < cfg.ransac_max_iterations {
        let chunks: Vec<(usize, usize)> = (next_chunk..next_chunk + CHUNKS_PER_BATCH)
            .map(|c| (c, CHUNK.min(cfg.ransac_max_iterations.saturating_sub(c * CHUNK))))
            .filter(|&(_, n)| n > 0)
            .collect();
        if chunks.is_empty() {
            break;
        }
        next_chunk += CHUNKS_PER_BATCH;
        done += chunks.iter().map(|&(_, n)| n).sum::<usize>();
        let results: Vec<Vec<Hypothesis>> = chunks
            .par_iter()
            .map(|&(c, n)| run_chunk(&pairs, c, n, seed, cfg, threshold, keep))
            .collect();
        for h in results.into_iter().flatten() {
            keep_best(&mut pool, h, keep);
        }
        if let Some(b) = pool.first() {
            let ratio = b.inliers as f64 / pairs.len() as f64;
            if ratio > 0.0 {
                let needed = (1.0 - cfg.ransac_confidence).ln() / (1.0 - ratio.powi(SAMPLE as i32)).ln();
                if done as f64 >= needed {
                    break;
                }
            }
        }
    }

    if pool.first().is_none_or(|b| b.inliers < SAMPLE) {
        return Ok(CoarseResult {
            iterations: done,
            ..CoarseResult::failed(SimTransform::identity(), pairs.len())
        });
    }
    pool.retain(|h| h.inliers >= SAMPLE);
    let (r, t, inliers, sq) = if cfg.rerank_candidates == 0 {
        refit(&pairs, &pool[0], threshold)
    } else {
        rerank(&pairs, &pool, source, target, cfg, threshold)?
    };
    Ok(CoarseResult {
        transform: SimTransform::from_parts(&r, &t, 1.0)?,
        inlier_count: inliers,
        correspondence_count: pairs.len(),
        inlier_rmse: if inliers > 0 { (sq / inliers as f64).sqrt() } else { 0.0 },
        converged: true,
        iterations: done,
        rmse_history: Vec::new(),
    })
}

/// Refits the best few rotationally distinct hypotheses, polishes each with
/// ICP on the given clouds and keeps the one whose ICP covers the most source
/// points (then lower RMSE, then better RANSAC rank).
fn rerank(
    pairs: &[(Vec3, Vec3)],
    pool: &[Hypothesis],
    source: &SurfacePointSet,
    target: &SurfacePointSet,
    cfg: &CoarseConfig,
    threshold: f64,
) -> Result<(Matrix3<f64>, Vec3, usize, f64)> {
    let mut best: Option<((usize, f64), (Matrix3<f64>, Vec3, usize, f64))> = None;
    for h in distinct(pool, cfg.rerank_candidates, RERANK_MIN_ANGLE) {
        let (r, t, _, _) = refit(pairs, h, threshold);
        let icp = icp_refine(source, target, &SimTransform::from_parts(&r, &t, 1.0)?, cfg)?;
        let score = (icp.inlier_count, icp.inlier_rmse);
        let better = best
            .as_ref()
            .is_none_or(|(b, _)| score.0 > b.0 || (score.0 == b.0 && score.1 < b.1));
        if better {
            let (r, t) = (icp.transform.rotation(), icp.transform.translation_vec());
            let (n, sq) = count_inliers(pairs, &r, &t, threshold);
            best = Some((score, (r, t, n, sq)));
        }
    }
    Ok(best.expect("pool is nonempty").1)
}