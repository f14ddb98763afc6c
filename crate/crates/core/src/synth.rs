//! Procedural moving-shape videos with exact ground-truth tracks.
//!
//! A script places shapes on an infinite textured plane and moves both the
//! shapes and a camera over it. Frame `n` maps a world point `p` to screen
//! position `c + z^n (p - c) + n * pan`, where `c` is the canvas centre,
//! `z` the zoom rate and `pan` the apparent content velocity. Objects move
//! in the world at constant velocity. Pixel `(x, y)` is centred at integer
//! coordinates, `x` along the width.
//!
//! The appearance seed picks colours and background texture only; it never
//! changes geometry, so [`GroundTruth`] depends on the script alone.
//!
//! # MVID0001 layout
//!
//! `magic "MVID0001"`, little-endian u32 `1, C, N, H, W`, then `C*N*H*W`
//! f32 values in `[1, C, N, H, W]` row-major order.

use std::fmt;
use std::path::Path;

use crate::codec::{self, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Real;

pub const MVID_MAGIC: &[u8; 8] = b"MVID0001";

const SUPERSAMPLE: usize = 4;
const TEXTURE_CELL: f64 = 3.0;
const TEXTURE_AMPLITUDE: f64 = 0.22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disc,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Square => "square",
            Shape::Disc => "disc",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub shape: Shape,
    /// Disc radius or half the square's side, in pixels.
    pub size: f64,
    /// World velocity, `(x, y)` pixels per frame.
    pub velocity: (f64, f64),
    /// World position at frame 0.
    pub start: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Apparent velocity of the scene content, pixels per frame.
    pub pan: (f64, f64),
    /// Scale factor per frame about the canvas centre.
    pub zoom: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            pan: (0.0, 0.0),
            zoom: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionScript {
    pub name: String,
    pub camera: Camera,
    pub objects: Vec<Object>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Per object, per frame screen-space centre `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub positions: Vec<Vec<(f64, f64)>>,
}

impl MotionScript {
    pub fn new(name: impl Into<String>, frames: usize, height: usize, width: usize) -> Self {
        MotionScript {
            name: name.into(),
            camera: Camera::default(),
            objects: Vec::new(),
            frames,
            height,
            width,
        }
    }

    pub fn with_camera(mut self, pan: (f64, f64), zoom: f64) -> Self {
        self.camera = Camera { pan, zoom };
        self
    }

    pub fn with_object(mut self, o: Object) -> Self {
        self.objects.push(o);
        self
    }

    fn centre(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    fn scale_at(&self, n: usize) -> f64 {
        self.camera.zoom.powi(n as i32)
    }

    fn to_screen(&self, n: usize, p: (f64, f64)) -> (f64, f64) {
        let (cx, cy) = self.centre();
        let z = self.scale_at(n);
        let k = n as f64;
        (
            cx + z * (p.0 - cx) + k * self.camera.pan.0,
            cy + z * (p.1 - cy) + k * self.camera.pan.1,
        )
    }

    fn to_world(&self, n: usize, s: (f64, f64)) -> (f64, f64) {
        let (cx, cy) = self.centre();
        let z = self.scale_at(n);
        let k = n as f64;
        (
            cx + (s.0 - k * self.camera.pan.0 - cx) / z,
            cy + (s.1 - k * self.camera.pan.1 - cy) / z,
        )
    }

    fn object_world(o: &Object, n: usize) -> (f64, f64) {
        (
            o.start.0 + n as f64 * o.velocity.0,
            o.start.1 + n as f64 * o.velocity.1,
        )
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            positions: self
                .objects
                .iter()
                .map(|o| {
                    (0..self.frames)
                        .map(|n| self.to_screen(n, Self::object_world(o, n)))
                        .collect()
                })
                .collect(),
        }
    }

    /// Apparent object size at frame `n`.
    pub fn apparent_size(&self, object: usize, n: usize) -> f64 {
        self.objects[object].size * self.scale_at(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height < 3 || self.width < 3 {
            return Err(Error::invalid(format!(
                "script {}: need frames >= 1 and a canvas of at least 3x3",
                self.name
            )));
        }
        let finite = |v: (f64, f64)| v.0.is_finite() && v.1.is_finite();
        if !(self.camera.zoom > 0.0 && self.camera.zoom.is_finite() && finite(self.camera.pan)) {
            return Err(Error::invalid(format!("script {}: bad camera", self.name)));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.size > 0.0 && o.size.is_finite() && finite(o.velocity) && finite(o.start)) {
                return Err(Error::invalid(format!(
                    "script {}: bad object {i}",
                    self.name
                )));
            }
        }
        let (xmax, ymax) = (self.width as f64 - 2.0, self.height as f64 - 2.0);
        for (i, track) in self.ground_truth().positions.iter().enumerate() {
            for (n, &(x, y)) in track.iter().enumerate() {
                if !(1.0..=xmax).contains(&x) || !(1.0..=ymax).contains(&y) {
                    return Err(Error::invalid(format!(
                        "script {}: object {i} at ({x:.2}, {y:.2}) in frame {n} is not 1 px inside the canvas",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

struct Palette {
    background: [f64; 3],
    objects: Vec<[f64; 3]>,
    texture_seed: u64,
}

impl Palette {
    fn new(seed: u64, objects: usize) -> Self {
        let mut rng = Rng::stream(seed, 0xC0102);
        let background = [0; 3].map(|_| rng.uniform_range(0.35, 0.65));
        let objects = (0..objects)
            .map(|i| {
                // Alternate bright and dark objects so each stands out.
                let bright = (i + seed as usize) % 2 == 0;
                [0; 3].map(|_| {
                    let v = rng.uniform_range(0.0, 0.15);
                    if bright {
                        1.0 - v
                    } else {
                        v
                    }
                })
            })
            .collect();
        Palette {
            background,
            objects,
            texture_seed: rng.next_u64(),
        }
    }
}

fn lattice(seed: u64, ix: i64, iy: i64, channel: u64) -> f64 {
    let mut h = seed
        ^ (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ channel.wrapping_mul(0x1656_67b1_9e37_79f9);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]` over the world plane.
fn value_noise(seed: u64, x: f64, y: f64, channel: u64) -> f64 {
    let (gx, gy) = (x / TEXTURE_CELL, y / TEXTURE_CELL);
    let (x0, y0) = (gx.floor(), gy.floor());
    let (fx, fy) = (gx - x0, gy - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(seed, ix, iy, channel);
    let v10 = lattice(seed, ix + 1, iy, channel);
    let v01 = lattice(seed, ix, iy + 1, channel);
    let v11 = lattice(seed, ix + 1, iy + 1, channel);
    let top = v00 + sx * (v10 - v00);
    let bottom = v01 + sx * (v11 - v01);
    top + sy * (bottom - top)
}

fn inside(shape: Shape, size: f64, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Disc => dx * dx + dy * dy <= size * size,
        Shape::Square => dx.abs() <= size && dy.abs() <= size,
    }
}

fn subsample_offsets() -> Vec<f64> {
    (0..SUPERSAMPLE)
        .map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
        .collect()
}

/// Fraction of each pixel covered by `object` in frame `n`, `[H, W]`.
pub fn coverage(script: &MotionScript, object: usize, n: usize) -> Result<Tensor> {
    script.validate()?;
    let o = script
        .objects
        .get(object)
        .ok_or_else(|| Error::invalid(format!("no object {object}")))?;
    let centre = script.ground_truth().positions[object][n];
    let size = script.apparent_size(object, n);
    let offs = subsample_offsets();
    let per = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    Ok(Tensor::from_fn([script.height, script.width], |ix| {
        let mut hits = 0usize;
        for &oy in &offs {
            for &ox in &offs {
                let (sx, sy) = (ix[1] as f64 + ox, ix[0] as f64 + oy);
                hits += inside(o.shape, size, sx - centre.0, sy - centre.1) as usize;
            }
        }
        (hits as f64 / per) as Real
    }))
}

/// Renders `script` as a `[1, 3, N, H, W]` video with values in `[0, 1]`.
pub fn render(script: &MotionScript, appearance_seed: u64) -> Result<(Tensor, GroundTruth)> {
    script.validate()?;
    let gt = script.ground_truth();
    let pal = Palette::new(appearance_seed, script.objects.len());
    let (n_frames, h, w) = (script.frames, script.height, script.width);
    let offs = subsample_offsets();
    let per = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut data = vec![0.0 as Real; 3 * n_frames * h * w];
    for n in 0..n_frames {
        let sizes: Vec<f64> = (0..script.objects.len())
            .map(|i| script.apparent_size(i, n))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                for &oy in &offs {
                    for &ox in &offs {
                        let s = (x as f64 + ox, y as f64 + oy);
                        let wp = script.to_world(n, s);
                        let mut c = [0.0; 3];
                        for (ch, v) in c.iter_mut().enumerate() {
                            let noise = value_noise(pal.texture_seed, wp.0, wp.1, ch as u64);
                            *v = pal.background[ch] + TEXTURE_AMPLITUDE * (2.0 * noise - 1.0);
                        }
                        for (i, o) in script.objects.iter().enumerate() {
                            let p = gt.positions[i][n];
                            let (dx, dy) = (s.0 - p.0, s.1 - p.1);
                            if inside(o.shape, sizes[i], dx, dy) {
                                // Slight radial shading gives each shape a single peak.
                                let r = (dx * dx + dy * dy).sqrt()
                                    / (sizes[i] * std::f64::consts::SQRT_2);
                                let base = pal.objects[i];
                                let toward = if base[0] > 0.5 { 1.0 } else { 0.0 };
                                for ch in 0..3 {
                                    c[ch] =
                                        base[ch] + (toward - base[ch]) * 0.5 * (1.0 - r).max(0.0);
                                }
                            }
                        }
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                for (ch, a) in acc.iter().enumerate() {
                    data[((ch * n_frames + n) * h + y) * w + x] = (a / per).clamp(0.0, 1.0) as Real;
                }
            }
        }
    }
    let video = Tensor::new(vec![1, 3, n_frames, h, w], data)?;
    Ok((video, gt))
}

fn obj(shape: Shape, size: f64, velocity: (f64, f64), start: (f64, f64)) -> Object {
    Object {
        shape,
        size,
        velocity,
        start,
    }
}

/// Object whose path is centred on the canvas.
fn centred_object(
    frames: usize,
    h: usize,
    w: usize,
    shape: Shape,
    size: f64,
    v: (f64, f64),
) -> Object {
    let half = (frames as f64 - 1.0) / 2.0;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    obj(shape, size, v, (cx - v.0 * half, cy - v.1 * half))
}

const DIRECTIONS8: [(&str, f64, f64); 8] = [
    ("right", 1.0, 0.0),
    ("down_right", 1.0, 1.0),
    ("down", 0.0, 1.0),
    ("down_left", -1.0, 1.0),
    ("left", -1.0, 0.0),
    ("up_left", -1.0, -1.0),
    ("up", 0.0, -1.0),
    ("up_right", 1.0, -1.0),
];

/// A camera pan with apparent content velocity `speed` along `(dx, dy)`.
pub fn pan_script(
    name: &str,
    frames: usize,
    h: usize,
    w: usize,
    velocity: (f64, f64),
) -> MotionScript {
    MotionScript::new(name, frames, h, w).with_camera(velocity, 1.0)
}

/// The 64-script training corpus for a `frames x h x w` canvas.
///
/// * 24 camera pans: 4 directions x speeds {1, 2} x cross drift {-0.25, 0, 0.25}
/// * 4 zooms about a centred disc: rates 1.03, 1.05, 0.97, 0.95
/// * 32 single-object translations: 8 directions x {square, disc} x speeds {0.75, 1.25}
/// * 4 two-object scripts with opposing motions
///
/// Diagonal speeds are per axis.
pub fn default_corpus(frames: usize, h: usize, w: usize) -> Vec<MotionScript> {
    let mut out = Vec::with_capacity(64);
    for (dir, dx, dy) in [
        DIRECTIONS8[0],
        DIRECTIONS8[2],
        DIRECTIONS8[4],
        DIRECTIONS8[6],
    ] {
        for speed in [1.0, 2.0] {
            for (k, drift) in [-0.25, 0.0, 0.25].into_iter().enumerate() {
                let v = (dx * speed + dy.abs() * drift, dy * speed + dx.abs() * drift);
                out.push(pan_script(
                    &format!("pan_{dir}_s{speed}_v{k}"),
                    frames,
                    h,
                    w,
                    v,
                ));
            }
        }
    }
    for rate in [1.03, 1.05, 0.97, 0.95] {
        let size = (h.min(w) as f64 / 8.0).max(1.0);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        out.push(
            MotionScript::new(format!("zoom_{rate}"), frames, h, w)
                .with_camera((0.0, 0.0), rate)
                .with_object(obj(Shape::Disc, size, (0.0, 0.0), (cx, cy))),
        );
    }
    for (dir, dx, dy) in DIRECTIONS8 {
        for shape in [Shape::Square, Shape::Disc] {
            for speed in [0.75, 1.25] {
                let size = if shape == Shape::Disc { 2.5 } else { 2.0 };
                out.push(
                    MotionScript::new(format!("{shape}_{dir}_s{speed}"), frames, h, w).with_object(
                        centred_object(frames, h, w, shape, size, (dx * speed, dy * speed)),
                    ),
                );
            }
        }
    }
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let qx = w as f64 / 4.0;
    let qy = h as f64 / 4.0;
    let half = (frames as f64 - 1.0) / 2.0;
    let pairs = [
        ("two_horizontal", (0.75, 0.0), (cy - qy, cy + qy), (cx, cx)),
        ("two_vertical", (0.0, 0.75), (cy, cy), (cx - qx, cx + qx)),
        (
            "two_diagonal",
            (0.5, 0.5),
            (cy - qy * 0.8, cy + qy * 0.8),
            (cx + qx * 0.8, cx - qx * 0.8),
        ),
        ("two_cross", (0.75, 0.0), (cy - qy, cy + qy), (cx, cx)),
    ];
    for (i, (name, v, (ya, yb), (xa, xb))) in pairs.into_iter().enumerate() {
        // The cross variant sends both objects the same way.
        let vb = if i == 3 { v } else { (-v.0, -v.1) };
        let a = obj(Shape::Disc, 2.0, v, (xa - v.0 * half, ya - v.1 * half));
        let b = obj(Shape::Square, 1.5, vb, (xb - vb.0 * half, yb - vb.1 * half));
        out.push(
            MotionScript::new(name, frames, h, w)
                .with_object(a)
                .with_object(b),
        );
    }
    out
}

pub fn video_to_bytes(video: &Tensor) -> Result<Vec<u8>> {
    if video.rank() != 5 || video.shape()[0] != 1 {
        return Err(Error::invalid(format!(
            "video must be [1, C, N, H, W], got {:?}",
            video.shape()
        )));
    }
    let mut w = Writer::new(MVID_MAGIC);
    for &d in video.shape() {
        w.usize(d);
    }
    w.f32s(video.data().iter().map(|&v| v as f32));
    Ok(w.finish())
}

pub fn video_from_bytes(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let mut r = Reader::new(bytes, MVID_MAGIC, "MVID")?;
    let batch = r.u32()?;
    if batch != 1 {
        return Err(FormatError::InvalidField {
            field: "batch",
            detail: format!("{batch}, expected 1"),
        });
    }
    let c = r.extent("channels")?;
    let n = r.extent("frames")?;
    let h = r.extent("height")?;
    let w = r.extent("width")?;
    let count = [c, n, h, w]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or(FormatError::InvalidField {
        field: "shape",
        detail: "element count overflows".into(),
    })?;
    let data = r.f32s(count)?.into_iter().map(|v| v as Real).collect();
    r.finish()?;
    Tensor::new(vec![1, c, n, h, w], data).map_err(|e| FormatError::ShapeMismatch(e.to_string()))
}

pub fn save_video(path: &Path, video: &Tensor) -> Result<()> {
    codec::write_atomic(path, &video_to_bytes(video)?)
}

pub fn load_video(path: &Path) -> Result<Tensor> {
    Ok(video_from_bytes(&codec::read_file(path)?)?)
}

/// Binary PPM (P6) of frame `n` of a 3-channel video.
pub fn frame_ppm(video: &Tensor, n: usize) -> Result<Vec<u8>> {
    let s = video.shape();
    if video.rank() != 5 || s[1] != 3 || n >= s[2] {
        return Err(Error::invalid(format!(
            "cannot export frame {n} of video {s:?}"
        )));
    }
    let (frames, h, w) = (s[2], s[3], s[4]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = video.data()[((ch * frames + n) * h + y) * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Writes `<stem>_fNN.ppm` for every frame into `dir`.
pub fn export_ppm_frames(dir: &Path, stem: &str, video: &Tensor) -> Result<()> {
    for n in 0..video.shape().get(2).copied().unwrap_or(0) {
        codec::write_atomic(
            &dir.join(format!("{stem}_f{n:02}.ppm")),
            &frame_ppm(video, n)?,
        )?;
    }
    Ok(())
}

impl GroundTruth {
    /// One `object frame x y` line per point.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# object frame x y\n");
        for (i, track) in self.positions.iter().enumerate() {
            for (n, (x, y)) in track.iter().enumerate() {
                s.push_str(&format!("{i} {n} {x:.17e} {y:.17e}\n"));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut positions: Vec<Vec<(f64, f64)>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::invalid(format!("ground truth line {}: {line:?}", lineno + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let i: usize = f[0].parse().map_err(|_| bad())?;
            let n: usize = f[1].parse().map_err(|_| bad())?;
            let x: f64 = f[2].parse().map_err(|_| bad())?;
            let y: f64 = f[3].parse().map_err(|_| bad())?;
            if i == positions.len() {
                positions.push(Vec::new());
            } else if i > positions.len() {
                return Err(bad());
            }
            if positions[i].len() != n {
                return Err(bad());
            }
            positions[i].push((x, y));
        }
        Ok(GroundTruth { positions })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_ground_truth() {
        let s = MotionScript::new("t", 8, 16, 20).with_object(obj(
            Shape::Square,
            1.0,
            (2.0, 0.0),
            (3.0, 8.0),
        ));
        let gt = s.ground_truth();
        let xs: Vec<f64> = gt.positions[0].iter().map(|p| p.0).collect();
        assert_eq!(xs, vec![3.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0]);
        assert!(gt.positions[0].iter().all(|p| p.1 == 8.0));
    }

    #[test]
    fn leaving_canvas_rejected() {
        let s = MotionScript::new("t", 8, 16, 16).with_object(obj(
            Shape::Disc,
            1.0,
            (2.0, 0.0),
            (3.0, 8.0),
        ));
        assert!(s.validate().is_err());
        let s = MotionScript::new("t", 8, 16, 16).with_object(obj(
            Shape::Disc,
            1.0,
            (0.0, 0.0),
            (0.5, 8.0),
        ));
        assert!(s.validate().is_err());
        assert!(render(&s, 0).is_err());
    }

    #[test]
    fn appearance_does_not_move_things() {
        let s = MotionScript::new("t", 4, 16, 16).with_object(obj(
            Shape::Disc,
            2.5,
            (1.0, 0.5),
            (5.0, 5.0),
        ));
        let (a, ga) = render(&s, 1).unwrap();
        let (b, gb) = render(&s, 2).unwrap();
        assert_eq!(ga, gb);
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&render(&s, 1).unwrap().0));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zoom_grows_radius_analytically() {
        let s = MotionScript::new("zoom", 8, 16, 16)
            .with_camera((0.0, 0.0), 1.05)
            .with_object(obj(Shape::Disc, 3.0, (0.0, 0.0), (7.5, 7.5)));
        for n in 0..8 {
            let area = coverage(&s, 0, n).unwrap().sum() as f64;
            let r = (area / std::f64::consts::PI).sqrt();
            let want = 3.0 * 1.05f64.powi(n as i32);
            assert!((r - want).abs() < 0.2, "frame {n}: {r} vs {want}");
        }
    }

    #[test]
    fn pan_moves_texture() {
        // Shifting content right by one pixel per frame: frame 1 column x+1
        // equals frame 0 column x exactly, as pixel grids align.
        let s = pan_script("p", 2, 8, 8, (1.0, 0.0));
        let (v, _) = render(&s, 3).unwrap();
        for y in 0..8 {
            for x in 0..7 {
                let a = v.at(&[0, 0, 0, y, x]);
                let b = v.at(&[0, 0, 1, y, x + 1]);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_corpus_shape() {
        let c = default_corpus(8, 16, 16);
        assert_eq!(c.len(), 64);
        for s in &c {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
        let names: std::collections::HashSet<_> = c.iter().map(|s| s.name.clone()).collect();
        assert_eq!(names.len(), 64);
    }

    #[test]
    fn mvid_roundtrip_and_errors() {
        let (v, _) = render(&pan_script("p", 3, 4, 4, (1.0, 0.0)), 0).unwrap();
        let bytes = video_to_bytes(&v).unwrap();
        let back = video_from_bytes(&bytes).unwrap();
        assert_eq!(video_to_bytes(&back).unwrap(), bytes);
        for pos in 0..28 {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            assert!(video_from_bytes(&bad).is_err(), "byte {pos}");
        }
        assert!(video_from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            video_from_bytes(&long),
            Err(FormatError::TrailingBytes(1))
        ));
    }

    #[test]
    fn ground_truth_text_roundtrip() {
        let c = default_corpus(8, 16, 16);
        let gt = c.last().unwrap().ground_truth();
        assert_eq!(GroundTruth::from_text(&gt.to_text()).unwrap(), gt);
        assert!(GroundTruth::from_text("0 1 2.0 3.0\n").is_err());
    }

    #[test]
    fn ppm_header() {
        let (v, _) = render(&pan_script("p", 2, 4, 6, (0.0, 0.0)), 0).unwrap();
        let p = frame_ppm(&v, 1).unwrap();
        assert!(p.starts_with(b"P6\n6 4\n255\n"));
        assert_eq!(p.len(), 11 + 4 * 6 * 3);
        assert!(frame_ppm(&v, 2).is_err());
    }
}
