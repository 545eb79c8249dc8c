//! Parametric synthetic faces with exact landmarks.
//!
//! A face is drawn in a local frame where the head is an ellipse with
//! half-width `a ≈ 1` and half-height `b ≈ 1.25` (y down), then placed in
//! the image by `p = c + s·R(θ)·q`. Landmark layout matches
//! [`Scheme::synthetic`].

use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotatedImage, FaceBox, LandmarkSet, Point, Scheme};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub width: u32,
    pub height: u32,
    /// Even number of jaw landmarks.
    pub jaw_points: usize,
    /// Face scale `s` in pixels per local unit, drawn from this range.
    pub scale: [f64; 2],
    pub max_rotation_deg: f64,
    /// Maximum offset of the face centre from the image centre, pixels.
    pub center_jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise_sigma: f64,
    /// Centred, upright, noise-free and left-right symmetric faces.
    pub symmetric: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            width: 100,
            height: 100,
            jaw_points: 8,
            scale: [14.0, 18.0],
            max_rotation_deg: 15.0,
            center_jitter: 8.0,
            noise_sigma: 4.0,
            symmetric: false,
        }
    }
}

struct Shape {
    a: f64,
    b: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_hw: f64,
    eye_hh: f64,
    brow_y: f64,
    brow_inner: f64,
    brow_outer: f64,
    brow_arch: f64,
    nose_y: f64,
    mouth_y: f64,
    mouth_hw: f64,
    mouth_hh: f64,
}

struct Palette {
    bg_top: [f64; 3],
    bg_bottom: [f64; 3],
    skin: [f64; 3],
    brow: [f64; 3],
    eye: [f64; 3],
    pupil: [f64; 3],
    lip: [f64; 3],
    nose: [f64; 3],
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

impl Shape {
    fn sample(rng: &mut ChaCha8Rng) -> Shape {
        let eye_dx = uniform(rng, 0.34, 0.42);
        let eye_y = uniform(rng, -0.22, -0.1);
        let eye_hw = uniform(rng, 0.13, 0.17);
        let brow_y = eye_y - uniform(rng, 0.2, 0.28);
        Shape {
            a: uniform(rng, 0.92, 1.05),
            b: uniform(rng, 1.18, 1.3),
            eye_dx,
            eye_y,
            eye_hw,
            eye_hh: uniform(rng, 0.06, 0.09),
            brow_y,
            brow_inner: uniform(rng, 0.1, 0.16),
            brow_outer: eye_dx + eye_hw + uniform(rng, 0.02, 0.08),
            brow_arch: uniform(rng, 0.03, 0.08),
            nose_y: uniform(rng, 0.2, 0.34),
            mouth_y: uniform(rng, 0.56, 0.72),
            mouth_hw: uniform(rng, 0.22, 0.32),
            mouth_hh: uniform(rng, 0.05, 0.1),
        }
    }

    /// Landmarks in the local frame, scheme order.
    fn landmarks(&self, jaw_points: usize) -> Vec<Point> {
        let p = Point::new;
        let bm = 0.5 * (self.brow_inner + self.brow_outer);
        let arch = self.brow_y - self.brow_arch;
        let (ex, ey, ew, eh) = (self.eye_dx, self.eye_y, self.eye_hw, self.eye_hh);
        let mut out = vec![
            p(-self.brow_outer, self.brow_y),
            p(-self.brow_inner, self.brow_y),
            p(self.brow_inner, self.brow_y),
            p(self.brow_outer, self.brow_y),
            p(-ex - ew, ey),
            p(-ex + ew, ey),
            p(ex - ew, ey),
            p(ex + ew, ey),
            p(0.0, self.nose_y),
            p(-self.mouth_hw, self.mouth_y),
            p(self.mouth_hw, self.mouth_y),
            p(0.0, self.b),
            p(-bm, arch),
            p(bm, arch),
            p(-ex, ey - eh),
            p(-ex, ey + eh),
            p(ex, ey - eh),
            p(ex, ey + eh),
            p(0.0, self.mouth_y - self.mouth_hh),
            p(0.0, self.mouth_y + self.mouth_hh),
        ];
        let half = jaw_points / 2;
        for j in 0..half {
            let phi = (j + 1) as f64 / (half + 1) as f64 * std::f64::consts::FRAC_PI_2;
            let (s, c) = phi.sin_cos();
            out.push(p(-self.a * s, self.b * c));
            out.push(p(self.a * s, self.b * c));
        }
        out
    }

    fn shade(&self, q: Point, pal: &Palette, bg: [f64; 3]) -> [f64; 3] {
        let (u, v) = (q.x, q.y);
        if (u / self.a).powi(2) + (v / self.b).powi(2) > 1.0 {
            return bg;
        }
        let side = u.abs();
        // eyes: white ellipse with a dark pupil
        let eu = (side - self.eye_dx) / self.eye_hw;
        let ev = (v - self.eye_y) / self.eye_hh;
        if eu * eu + ev * ev <= 1.0 {
            let pr = 0.55 * self.eye_hh;
            let d2 = (side - self.eye_dx).powi(2) + (v - self.eye_y).powi(2);
            return if d2 <= pr * pr { pal.pupil } else { pal.eye };
        }
        // brows: thick polyline outer -> arch -> inner
        let bm = 0.5 * (self.brow_inner + self.brow_outer);
        let arch = self.brow_y - self.brow_arch;
        let q = Point::new(side, v);
        let d = segment_distance(q, Point::new(self.brow_outer, self.brow_y), Point::new(bm, arch))
            .min(segment_distance(q, Point::new(bm, arch), Point::new(self.brow_inner, self.brow_y)));
        if d <= 0.035 {
            return pal.brow;
        }
        // nose: bridge and tip
        if segment_distance(q, Point::new(0.0, self.eye_y), Point::new(0.0, self.nose_y)) <= 0.02
            || Point::new(side, v).distance(Point::new(0.0, self.nose_y)) <= 0.06
        {
            return pal.nose;
        }
        let mu = u / self.mouth_hw;
        let mv = (v - self.mouth_y) / self.mouth_hh;
        if mu * mu + mv * mv <= 1.0 {
            return pal.lip;
        }
        pal.skin
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

fn palette(rng: &mut ChaCha8Rng) -> Palette {
    let bg = uniform(rng, 20.0, 100.0);
    let tint = [uniform(rng, -15.0, 15.0), uniform(rng, -15.0, 15.0), uniform(rng, -15.0, 15.0)];
    let skin_base = uniform(rng, 140.0, 215.0);
    let dark = uniform(rng, 15.0, 60.0);
    Palette {
        bg_top: [bg + tint[0], bg + tint[1], bg + tint[2]],
        bg_bottom: [bg * 0.6 + tint[2], bg * 0.6 + tint[0], bg * 0.6 + tint[1]],
        skin: [skin_base + 25.0, skin_base, skin_base - 25.0],
        brow: [dark + 10.0, dark, dark - 5.0],
        eye: [235.0, 235.0, 230.0],
        pupil: [dark * 0.5, dark * 0.5, dark * 0.7],
        lip: [skin_base * 0.85 + 30.0, skin_base * 0.45, skin_base * 0.45],
        nose: [skin_base * 0.75 + 10.0, skin_base * 0.7, skin_base * 0.65 - 10.0],
    }
}

/// Render one face. The same seed and parameters always give the same
/// image, landmarks and box.
pub fn generate_synthetic_face(seed: u64, params: &SynthParams) -> Result<AnnotatedImage> {
    let scheme = Arc::new(Scheme::synthetic(params.jaw_points)?);
    render(seed, 0, params, scheme)
}

fn render(seed: u64, index: u64, params: &SynthParams, scheme: Arc<Scheme>) -> Result<AnnotatedImage> {
    let (w, h) = (params.width, params.height);
    if w < 16 || h < 16 {
        return Err(Error::config("synth: image must be at least 16x16"));
    }
    if !(params.scale[0] > 0.0 && params.scale[0] <= params.scale[1]) {
        return Err(Error::config("synth: scale must be an increasing positive range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let shape = Shape::sample(&mut rng);
    let pal = palette(&mut rng);
    let s = uniform(&mut rng, params.scale[0], params.scale[1]);
    let mid = Point::new(0.5 * (f64::from(w) - 1.0), 0.5 * (f64::from(h) - 1.0));
    let (c, theta) = if params.symmetric {
        (mid, 0.0)
    } else {
        let j = params.center_jitter;
        let r = params.max_rotation_deg;
        (
            Point::new(mid.x + uniform(&mut rng, -j, j), mid.y + uniform(&mut rng, -j, j)),
            uniform(&mut rng, -r, r).to_radians(),
        )
    };
    let (sin, cos) = theta.sin_cos();
    let to_image = |q: Point| Point::new(c.x + s * (cos * q.x - sin * q.y), c.y + s * (sin * q.x + cos * q.y));
    let to_local = |p: Point| {
        let (dx, dy) = ((p.x - c.x) / s, (p.y - c.y) / s);
        Point::new(cos * dx + sin * dy, -sin * dx + cos * dy)
    };

    let points: Vec<Point> = shape
        .landmarks(params.jaw_points)
        .into_iter()
        .map(|q| to_image(q).snapped())
        .collect();

    let noise = Normal::new(0.0, params.noise_sigma.max(0.0)).map_err(|e| Error::config(format!("synth: {e}")))?;
    let use_noise = !params.symmetric && params.noise_sigma > 0.0;
    let mut image = RgbImage::new(w, h);
    for y in 0..h {
        let t = f64::from(y) / f64::from(h - 1);
        let bg = [0, 1, 2].map(|k| pal.bg_top[k] * (1.0 - t) + pal.bg_bottom[k] * t);
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let q = to_local(Point::new(f64::from(x) + ox, f64::from(y) + oy));
                let v = shape.shade(q, &pal, bg);
                for k in 0..3 {
                    acc[k] += 0.25 * v[k];
                }
            }
            if use_noise {
                for a in &mut acc {
                    *a += noise.sample(&mut rng);
                }
            }
            image.put_pixel(x, y, image::Rgb(acc.map(|v| v.round().clamp(0.0, 255.0) as u8)));
        }
    }

    // Detector-like square box: about three face units wide, jittered, but
    // always containing every landmark and inside the image.
    let fit = FaceBox::around(&points, 0.0);
    let (side_jit, cx_jit, cy_jit) = if params.symmetric {
        (0.0, 0.0, 0.0)
    } else {
        (
            uniform(&mut rng, -0.05, 0.05),
            uniform(&mut rng, -0.04, 0.04),
            uniform(&mut rng, -0.04, 0.04),
        )
    };
    let side = (3.0 * s * (1.0 + side_jit)).max(fit.w.max(fit.h) + 2.0);
    let centre = Point::new(c.x + cx_jit * side, c.y + 0.15 * s + cy_jit * side);
    let mut face_box = FaceBox::new(centre.x - 0.5 * side, centre.y - 0.5 * side, side, side)
        .snapped()
        .clamp_to(w, h);
    if !points.iter().all(|&p| face_box.contains(p)) {
        face_box = FaceBox::around(&points, 0.1).clamp_to(w, h);
    }

    let sample = AnnotatedImage {
        name: format!("face_{index:05}"),
        image,
        landmarks: LandmarkSet::new(points, scheme)?,
        face_box,
    };
    sample.validate()?;
    Ok(sample)
}

/// `count` faces named `face_00000`, `face_00001`, ...; face `i` uses
/// random stream `i` of `seed`, so any prefix is stable as `count` grows.
pub fn generate_synthetic_dataset(count: usize, seed: u64, params: &SynthParams) -> Result<Vec<AnnotatedImage>> {
    let scheme = Arc::new(Scheme::synthetic(params.jaw_points)?);
    par::map_range(count, |i| render(seed, i as u64, params, scheme.clone()))
        .into_iter()
        .collect()
}
