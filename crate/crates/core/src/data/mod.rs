//! Annotated face images, landmark schemes and the augmentation pipeline.
//!
//! Coordinates are image pixels with the origin at the centre of the
//! top-left pixel, so a `W`-wide image spans `x ∈ [0, W − 1]`. Every
//! coordinate produced by this module is snapped to a 1/1024-pixel grid;
//! mirroring `x ↦ (W − 1) − x` is then exact in floating point.

mod annotations;
mod augment;
mod compress;
mod encode;
mod scheme;
mod synth;

use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};

pub use annotations::{
    load_dataset, parse_pts, read_csv, write_csv, write_dataset, write_pts, ANNOTATIONS_FILE,
};
pub use augment::{
    augment_dataset, flip_sample, rotate_sample, translate_box, write_augmented, Augmented,
    AugmentationSpec, Provenance, Resample, SkipRecord, MANIFEST_FILE,
};
pub use compress::{degrade_image, degrade_quality, quantization_table};
pub use encode::{crop_and_encode, crop_image, decode_targets, encode_targets, sample_bilinear};
pub use scheme::Scheme;
pub use synth::{generate_synthetic_dataset, generate_synthetic_face, SynthParams};

const GRID: f64 = 1024.0;

/// Round a coordinate to the 1/1024-pixel grid.
pub fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn snapped(self) -> Self {
        Point::new(snap(self.x), snap(self.y))
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned face rectangle `(x0, y0, w, h)`; it covers `[x0, x0 + w] × [y0, y0 + h]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceBox {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn new(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        FaceBox { x0, y0, w, h }
    }

    pub fn snapped(self) -> Self {
        FaceBox::new(snap(self.x0), snap(self.y0), snap(self.w), snap(self.h))
    }

    pub fn center(&self) -> Point {
        Point::new(self.x0 + 0.5 * self.w, self.y0 + 0.5 * self.h)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x0 + self.w && p.y >= self.y0 && p.y <= self.y0 + self.h
    }

    /// True when the box lies inside a `width × height` image.
    pub fn inside_image(&self, width: u32, height: u32) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x0 + self.w <= f64::from(width) - 1.0
            && self.y0 + self.h <= f64::from(height) - 1.0
    }

    /// Square box around the bounding box of `points`, padded by `margin`
    /// times the larger extent on every side and snapped outward to the grid.
    pub fn around(points: &[Point], margin: f64) -> Self {
        let (mut lo, mut hi) = (Point::new(f64::MAX, f64::MAX), Point::new(f64::MIN, f64::MIN));
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let side = (hi.x - lo.x).max(hi.y - lo.y) * (1.0 + 2.0 * margin);
        let c = Point::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
        let x0 = ((c.x - 0.5 * side) * GRID).floor() / GRID;
        let y0 = ((c.y - 0.5 * side) * GRID).floor() / GRID;
        let x1 = ((c.x + 0.5 * side) * GRID).ceil() / GRID;
        let y1 = ((c.y + 0.5 * side) * GRID).ceil() / GRID;
        FaceBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Shrink the box just enough to fit inside the image, keeping it square
    /// where possible.
    pub fn clamp_to(&self, width: u32, height: u32) -> Self {
        let (maxx, maxy) = (f64::from(width) - 1.0, f64::from(height) - 1.0);
        let x0 = self.x0.max(0.0);
        let y0 = self.y0.max(0.0);
        let x1 = (self.x0 + self.w).min(maxx);
        let y1 = (self.y0 + self.h).min(maxy);
        FaceBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Landmark coordinates together with the scheme that names them.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Point>,
    pub scheme: Arc<Scheme>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, scheme: Arc<Scheme>) -> Result<Self> {
        if points.len() != scheme.n_landmarks {
            return Err(Error::config(format!(
                "scheme {} expects {} landmarks, got {}",
                scheme.name,
                scheme.n_landmarks,
                points.len()
            )));
        }
        Ok(LandmarkSet { points, scheme })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn interocular(&self) -> f64 {
        let [a, b] = self.scheme.interocular;
        self.points[a].distance(self.points[b])
    }

    pub fn principal(&self) -> Vec<Point> {
        self.scheme.principal.iter().map(|&i| self.points[i]).collect()
    }

    pub fn elaborate(&self) -> Vec<Point> {
        self.scheme.elaborate().iter().map(|&i| self.points[i]).collect()
    }
}

/// One face image with its ground truth and detector box.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub name: String,
    pub image: RgbImage,
    pub landmarks: LandmarkSet,
    pub face_box: FaceBox,
}

impl AnnotatedImage {
    /// Check landmark, box and inter-ocular invariants.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image.dimensions();
        let (maxx, maxy) = (f64::from(w) - 1.0, f64::from(h) - 1.0);
        for (i, p) in self.landmarks.points.iter().enumerate() {
            if !(p.x >= 0.0 && p.x <= maxx && p.y >= 0.0 && p.y <= maxy) {
                return Err(Error::data(format!(
                    "{}: landmark {i} at ({}, {}) lies outside the {w}x{h} image",
                    self.name, p.x, p.y
                )));
            }
            if !self.face_box.contains(*p) {
                return Err(Error::data(format!(
                    "{}: landmark {i} at ({}, {}) lies outside the face box",
                    self.name, p.x, p.y
                )));
            }
        }
        if !self.face_box.inside_image(w, h) {
            return Err(Error::data(format!(
                "{}: face box {:?} exceeds the {w}x{h} image",
                self.name, self.face_box
            )));
        }
        if !(self.landmarks.interocular() > 0.0) {
            return Err(Error::data(format!(
                "{}: inter-ocular distance is zero",
                self.name
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirroring_snapped_coordinates_is_exact() {
        for i in 0..10_000 {
            let x = snap(i as f64 * 0.0137);
            let w1 = 99.0;
            assert_eq!(w1 - (w1 - x), x);
        }
    }

    #[test]
    fn square_box_around_points() {
        let pts = [Point::new(10.0, 20.0), Point::new(30.0, 60.0)];
        let b = FaceBox::around(&pts, 0.1);
        assert_eq!(b.w, 48.0);
        assert_eq!(b.h, 48.0);
        assert_eq!(b.center(), Point::new(20.0, 40.0));
        assert!(pts.iter().all(|p| b.contains(*p)));
    }
}
