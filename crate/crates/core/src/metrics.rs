//! Video evaluation: a small point tracker, motion fidelity between
//! tracklet sets, temporal consistency and the Fréchet distance between
//! Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Real;

/// Displacements shorter than this count as no motion.
pub const ZERO_DISPLACEMENT: f64 = 1e-9;

/// Diagonal loading added to both covariances.
pub const COVARIANCE_EPS: f64 = 1e-6;

/// A point followed through every frame; positions are `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    positions: Vec<(f64, f64)>,
}

impl Tracklet {
    pub fn new(positions: Vec<(f64, f64)>) -> Result<Self> {
        if positions.is_empty()
            || positions
                .iter()
                .any(|p| !(p.0.is_finite() && p.1.is_finite()))
        {
            return Err(Error::invalid(
                "tracklet positions must be nonempty and finite",
            ));
        }
        Ok(Tracklet { positions })
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn frames(&self) -> usize {
        self.positions.len()
    }

    pub fn displacements(&self) -> Vec<(f64, f64)> {
        self.positions
            .windows(2)
            .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
            .collect()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Tracklet {
        Tracklet {
            positions: self
                .positions
                .iter()
                .map(|&(x, y)| (x + dx, y + dy))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackerConfig {
    pub max_points: usize,
    /// Half the side of the square matching patch.
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            max_points: 16,
            patch_radius: 2,
            search_radius: 4,
        }
    }
}

/// Channel-mean intensity frames `[N][H*W]` of a `[1, C, N, H, W]` video.
fn gray_frames(video: &Tensor) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let s = video.shape();
    if video.rank() != 5 || s[0] != 1 {
        return Err(Error::invalid(format!(
            "video must be [1, C, N, H, W], got {s:?}"
        )));
    }
    if !video.is_finite() {
        return Err(Error::NonFinite("video".into()));
    }
    let (c, n, h, w) = (s[1], s[2], s[3], s[4]);
    let frames = (0..n)
        .map(|f| {
            (0..h * w)
                .map(|p| {
                    (0..c)
                        .map(|ch| video.data()[(ch * n + f) * h * w + p] as f64)
                        .sum::<f64>()
                        / c as f64
                })
                .collect()
        })
        .collect();
    Ok((frames, h, w))
}

struct Frame<'a> {
    px: &'a [f64],
    h: usize,
    w: usize,
}

impl Frame<'_> {
    /// Edge-clamped lookup.
    fn at(&self, y: i64, x: i64) -> f64 {
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        self.px[y * self.w + x]
    }

    fn box_mean(&self, y: i64, x: i64, r: i64) -> f64 {
        let mut s = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                s += self.at(y + dy, x + dx);
            }
        }
        s / ((2 * r + 1) * (2 * r + 1)) as f64
    }
}

/// Blob extrema of frame 0: strongest centre-surround responses that beat
/// every 3x3 neighbour (earlier neighbours strictly, in row-major order).
fn detect(frame: &Frame, cfg: &TrackerConfig) -> Vec<(usize, usize)> {
    let (h, w) = (frame.h, frame.w);
    let resp: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            frame.box_mean(y, x, 1) - frame.box_mean(y, x, 3)
        })
        .collect();
    let m = cfg.patch_radius;
    let mut found = Vec::new();
    for y in m..h.saturating_sub(m) {
        for x in m..w.saturating_sub(m) {
            let r = resp[y * w + x];
            if r.abs() < 1e-6 {
                continue;
            }
            let mut is_max = true;
            let mut is_min = true;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let q = resp[ny as usize * w + nx as usize];
                    let earlier = (dy, dx) < (0, 0);
                    if earlier {
                        is_max &= r > q;
                        is_min &= r < q;
                    } else {
                        is_max &= r >= q;
                        is_min &= r <= q;
                    }
                }
            }
            if is_max || is_min {
                found.push((r.abs(), y, x));
            }
        }
    }
    // Strongest first; the sort is stable, so ties keep row-major order.
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    found.truncate(cfg.max_points);
    found.into_iter().map(|(_, y, x)| (y, x)).collect()
}

fn ssd(prev: &Frame, next: &Frame, cy: i64, cx: i64, dy: i64, dx: i64, r: i64) -> f64 {
    let mut s = 0.0;
    for py in -r..=r {
        for px in -r..=r {
            let d = prev.at(cy + py, cx + px) - next.at(cy + dy + py, cx + dx + px);
            s += d * d;
        }
    }
    s
}

/// Vertex offset of the parabola through `(-1, a), (0, b), (1, c)`.
fn parabola_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

/// Displacement of the patch around `(cy, cx)` from `prev` to `next`.
fn match_patch(prev: &Frame, next: &Frame, cy: i64, cx: i64, cfg: &TrackerConfig) -> (f64, f64) {
    let (s, r) = (cfg.search_radius as i64, cfg.patch_radius as i64);
    let side = (2 * s + 1) as usize;
    let mut cost = vec![0.0; side * side];
    let mut best = (f64::INFINITY, i64::MAX, 0i64, 0i64);
    for dy in -s..=s {
        for dx in -s..=s {
            let c = ssd(prev, next, cy, cx, dy, dx, r);
            cost[((dy + s) as usize) * side + (dx + s) as usize] = c;
            let key = (c, dy * dy + dx * dx, dy, dx);
            if key.0 < best.0
                || (key.0 == best.0 && (key.1, key.2, key.3) < (best.1, best.2, best.3))
            {
                best = key;
            }
        }
    }
    let (c0, _, by, bx) = best;
    let at = |dy: i64, dx: i64| cost[((dy + s) as usize) * side + (dx + s) as usize];
    let mut off = (0.0, 0.0);
    // An exact match needs no refinement.
    if c0 > 1e-12 {
        if bx.abs() < s {
            off.0 = parabola_offset(at(by, bx - 1), c0, at(by, bx + 1));
        }
        if by.abs() < s {
            off.1 = parabola_offset(at(by - 1, bx), c0, at(by + 1, bx));
        }
    }
    (bx as f64 + off.0, by as f64 + off.1)
}

/// Detects up to `cfg.max_points` blob extrema in the first frame and
/// follows each by frame-to-frame block matching with parabolic sub-pixel
/// refinement. Textureless videos may yield fewer tracklets.
pub fn track_with(video: &Tensor, cfg: &TrackerConfig) -> Result<Vec<Tracklet>> {
    let (frames, h, w) = gray_frames(video)?;
    let view = |i: usize| Frame {
        px: &frames[i],
        h,
        w,
    };
    let seeds = detect(&view(0), cfg);
    let mut out = Vec::with_capacity(seeds.len());
    for (y, x) in seeds {
        let mut pos = (x as f64, y as f64);
        let mut positions = vec![pos];
        for n in 1..frames.len() {
            let (cx, cy) = (pos.0.round() as i64, pos.1.round() as i64);
            let (dx, dy) = match_patch(&view(n - 1), &view(n), cy, cx, cfg);
            pos = (pos.0 + dx, pos.1 + dy);
            positions.push(pos);
        }
        out.push(Tracklet { positions });
    }
    Ok(out)
}

pub fn track(video: &Tensor) -> Result<Vec<Tracklet>> {
    track_with(video, &TrackerConfig::default())
}

fn cosine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let na2 = a.0 * a.0 + a.1 * a.1;
    let nb2 = b.0 * b.0 + b.1 * b.1;
    let zero = ZERO_DISPLACEMENT * ZERO_DISPLACEMENT;
    match (na2 <= zero, nb2 <= zero) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // sqrt of the product keeps cos(v, v) and cos(v, -v) exact.
        _ => ((a.0 * b.0 + a.1 * b.1) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Frame-mean cosine between the displacement sequences of two tracklets.
pub fn tracklet_correlation(a: &Tracklet, b: &Tracklet) -> Result<f64> {
    if a.frames() != b.frames() {
        return Err(Error::invalid(format!(
            "frame counts differ: {} vs {}",
            a.frames(),
            b.frames()
        )));
    }
    if a.frames() < 2 {
        return Err(Error::invalid("tracklets need at least two frames"));
    }
    let (da, db) = (a.displacements(), b.displacements());
    Ok(da.iter().zip(&db).map(|(&x, &y)| cosine(x, y)).sum::<f64>() / da.len() as f64)
}

/// Best-match average correlation in both directions, in `[-2, 2]`.
pub fn motion_fidelity(reference: &[Tracklet], output: &[Tracklet]) -> Result<f64> {
    if reference.is_empty() || output.is_empty() {
        return Err(Error::invalid(
            "motion fidelity needs nonempty tracklet sets",
        ));
    }
    let n = reference[0].frames();
    if reference.iter().chain(output).any(|t| t.frames() != n) {
        return Err(Error::invalid(
            "all tracklets must have the same frame count",
        ));
    }
    let corr: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| {
            output
                .iter()
                .map(|o| tracklet_correlation(r, o))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let out_term = (0..output.len())
        .map(|j| max(&mut corr.iter().map(|row| row[j])))
        .sum::<f64>()
        / output.len() as f64;
    let ref_term = corr
        .iter()
        .map(|row| max(&mut row.iter().copied()))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(out_term + ref_term)
}

/// Mean displacement over every step of every tracklet.
pub fn mean_displacement(tracklets: &[Tracklet]) -> (f64, f64) {
    let mut acc = (0.0, 0.0);
    let mut count = 0usize;
    for t in tracklets {
        for d in t.displacements() {
            acc.0 += d.0;
            acc.1 += d.1;
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    (acc.0 / count as f64, acc.1 / count as f64)
}

/// Frame `n` of a `[1, C, N, H, W]` video as `[C, H, W]`.
pub fn frame(video: &Tensor, n: usize) -> Result<Tensor> {
    let s = video.shape();
    if video.rank() != 5 || s[0] != 1 || n >= s[2] {
        return Err(Error::invalid(format!("no frame {n} in video {s:?}")));
    }
    let (c, frames, hw) = (s[1], s[2], s[3] * s[4]);
    let mut data = Vec::with_capacity(c * hw);
    for ch in 0..c {
        let start = (ch * frames + n) * hw;
        data.extend_from_slice(&video.data()[start..start + hw]);
    }
    Tensor::new(vec![c, s[3], s[4]], data)
}

/// Default frame features: 4x4 average-pooled pixels, flattened. Edge
/// blocks of sizes not divisible by 4 average the pixels they cover.
pub fn pooled_pixels(frame: &Tensor) -> Vec<f64> {
    let s = frame.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (bh, bw) = (h.div_ceil(4), w.div_ceil(4));
    let mut out = Vec::with_capacity(c * bh * bw);
    for ch in 0..c {
        for by in 0..bh {
            for bx in 0..bw {
                let (mut sum, mut count) = (0.0, 0usize);
                for y in by * 4..(by * 4 + 4).min(h) {
                    for x in bx * 4..(bx * 4 + 4).min(w) {
                        sum += frame.data()[(ch * h + y) * w + x] as f64;
                        count += 1;
                    }
                }
                out.push(sum / count as f64);
            }
        }
    }
    out
}

/// Features of every frame of a video.
pub fn frame_features(
    video: &Tensor,
    extractor: &dyn Fn(&Tensor) -> Vec<f64>,
) -> Result<Vec<Vec<f64>>> {
    let n = video.shape().get(2).copied().unwrap_or(0);
    (0..n).map(|i| Ok(extractor(&frame(video, i)?))).collect()
}

fn feature_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na2 = a.iter().map(|x| x * x).sum::<f64>();
    let nb2 = b.iter().map(|x| x * x).sum::<f64>();
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.0;
    }
    // As in `cosine`: identical features give exactly 1.
    (dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
}

/// Mean cosine similarity over all unordered frame pairs. A pair with a
/// zero-norm feature contributes 0 and still counts.
pub fn temporal_consistency_with(
    video: &Tensor,
    extractor: &dyn Fn(&Tensor) -> Vec<f64>,
) -> Result<f64> {
    let feats = frame_features(video, extractor)?;
    if feats.len() < 2 {
        return Err(Error::invalid(
            "temporal consistency needs at least two frames",
        ));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            sum += feature_cosine(&feats[i], &feats[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

pub fn temporal_consistency(video: &Tensor) -> Result<f64> {
    temporal_consistency_with(video, &pooled_pixels)
}

fn gaussian_fit(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n.max(2) - 1) as f64;
    for i in 0..dim {
        cov[(i, i)] += COVARIANCE_EPS;
    }
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))` over Gaussian fits
/// of two sets of equal-length feature vectors.
///
/// The cross term uses `tr((S_a S_b)^(1/2)) = tr((A S_b A)^(1/2))` with
/// `A = S_a^(1/2)`, which keeps every square root symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "Fréchet distance needs nonempty feature sets",
        ));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::invalid(
            "feature vectors must share one nonzero length",
        ));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features".into()));
    }
    let (mu_a, s_a) = gaussian_fit(a, dim);
    let (mu_b, s_b) = gaussian_fit(b, dim);
    let root_a = sym_sqrt(&s_a);
    let mut inner = &root_a * &s_b * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let d = (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Converts feature rows from the crate scalar type.
pub fn to_f64_rows(rows: &[Vec<Real>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}
