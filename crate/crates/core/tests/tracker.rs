//! Tracker recovery of scripted object motion.

use motinv_core::metrics::{track, Tracklet};
use motinv_core::synth::{self, Object, Shape};
use motinv_core::MotionScript;

const DIRS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (1.0, 1.0),
    (0.0, 1.0),
    (-1.0, 1.0),
    (-1.0, 0.0),
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
];

fn nearest(tracks: &[Tracklet], p: (f64, f64)) -> (&Tracklet, f64) {
    tracks
        .iter()
        .map(|t| {
            (
                t,
                (t.positions()[0].0 - p.0).hypot(t.positions()[0].1 - p.1),
            )
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("tracker found no points")
}

/// Worst per-frame displacement error of the tracklet started nearest each object.
fn worst_error(script: &MotionScript, appearance: u64) -> f64 {
    let (video, gt) = synth::render(script, appearance).unwrap();
    let tracks = track(&video).unwrap();
    let mut worst: f64 = 0.0;
    for (i, path) in gt.positions.iter().enumerate() {
        let (t, dist) = nearest(&tracks, path[0]);
        assert!(
            dist <= script.objects[i].size,
            "{}: no point on object {i} ({dist:.2} px away)",
            script.name
        );
        for (n, d) in t.displacements().iter().enumerate() {
            let want = (path[n + 1].0 - path[n].0, path[n + 1].1 - path[n].1);
            worst = worst.max((d.0 - want.0).abs()).max((d.1 - want.1).abs());
        }
    }
    worst
}

fn translation(
    shape: Shape,
    dir: (f64, f64),
    speed: f64,
    frames: usize,
    size: usize,
) -> MotionScript {
    let v = (dir.0 * speed, dir.1 * speed);
    let half = (frames as f64 - 1.0) / 2.0;
    let c = (size as f64 - 1.0) / 2.0;
    MotionScript::new(format!("{shape:?}_{dir:?}_{speed}"), frames, size, size).with_object(
        Object {
            shape,
            size: if shape == Shape::Disc { 2.5 } else { 2.0 },
            velocity: v,
            start: (c - v.0 * half, c - v.1 * half),
        },
    )
}

#[test]
fn corpus_translations_within_half_pixel() {
    for script in synth::default_corpus(8, 16, 16) {
        if script.objects.len() != 1 || script.camera.zoom != 1.0 {
            continue;
        }
        for appearance in 0..4 {
            let e = worst_error(&script, appearance);
            assert!(
                e <= 0.5,
                "{} appearance {appearance}: error {e:.3} px",
                script.name
            );
        }
    }
}

#[test]
fn speeds_up_to_three_pixels_per_frame() {
    for shape in [Shape::Square, Shape::Disc] {
        for dir in DIRS {
            for speed in [0.5, 1.0, 2.0, 3.0] {
                let s = translation(shape, dir, speed, 8, 32);
                let e = worst_error(&s, 1);
                assert!(e <= 0.5, "{}: error {e:.3} px", s.name);
            }
        }
    }
}

#[test]
fn two_objects_are_tracked_separately() {
    for script in synth::default_corpus(8, 16, 16) {
        if script.objects.len() == 2 {
            // Occlusion-free but close objects: direction and magnitude, not sub-pixel.
            let e = worst_error(&script, 2);
            assert!(e <= 1.0, "{}: error {e:.3} px", script.name);
        }
    }
}
