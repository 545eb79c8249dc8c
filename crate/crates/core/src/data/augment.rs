//! Rotation, box translation, mirroring and compression, chained in that
//! order for every combination in an [`AugmentationSpec`].
//!
//! Rotation uses `R(θ) = [[cos θ, −sin θ], [sin θ, cos θ]]` in image
//! coordinates (y down), so positive angles turn the face clockwise on
//! screen and `(1, 0)` maps to `(0, 1)` at 90°.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::encode::sample_bilinear;
use super::{
    degrade_quality, write_dataset, AnnotatedImage, FaceBox, LandmarkSet, Point, Scheme,
};
use crate::error::{Error, Result};
use crate::par;

pub const MANIFEST_FILE: &str = "manifest.csv";
const SKIPPED_FILE: &str = "skipped.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    #[default]
    Bilinear,
}

/// Which augmentations to emit per source image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    /// Degrees; `0` keeps the original image and box.
    pub rotation_angles: Vec<f64>,
    /// Box shifts as fractions of box width/height.
    pub translation_offsets: Vec<[f64; 2]>,
    /// Emit a mirrored copy of every variant as well.
    pub do_flip: bool,
    /// Block-DCT qualities; empty means no compression step.
    pub compression_qualities: Vec<u8>,
    pub resample: Resample,
    /// Padding of the post-rotation landmark box, relative to its larger side.
    pub box_margin: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_angles: vec![0.0, 5.0, -5.0, 10.0, -10.0, 15.0, -15.0],
            translation_offsets: vec![[0.0, 0.0], [0.05, 0.0], [-0.05, 0.0], [0.0, 0.05], [0.0, -0.05]],
            do_flip: true,
            compression_qualities: vec![90, 70, 50],
            resample: Resample::Bilinear,
            box_margin: 0.1,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_angles.is_empty() || self.translation_offsets.is_empty() {
            return Err(Error::config(
                "augmentation: rotation_angles and translation_offsets need at least one entry",
            ));
        }
        if self.rotation_angles.iter().any(|a| !a.is_finite())
            || self.translation_offsets.iter().flatten().any(|o| !o.is_finite())
        {
            return Err(Error::config("augmentation: angles and offsets must be finite"));
        }
        if let Some(q) = self.compression_qualities.iter().find(|q| !(1..=100).contains(*q)) {
            return Err(Error::config(format!("augmentation: quality {q} outside [1, 100]")));
        }
        if !(self.box_margin >= 0.0 && self.box_margin.is_finite()) {
            return Err(Error::config("augmentation: box_margin must be non-negative"));
        }
        Ok(())
    }

    fn flips(&self) -> &'static [bool] {
        if self.do_flip {
            &[false, true]
        } else {
            &[false]
        }
    }

    fn qualities(&self) -> Vec<Option<u8>> {
        if self.compression_qualities.is_empty() {
            vec![None]
        } else {
            self.compression_qualities.iter().copied().map(Some).collect()
        }
    }

    /// Upper bound on emitted samples per source.
    pub fn multiplicity(&self) -> usize {
        self.rotation_angles.len() * self.translation_offsets.len() * self.flips().len() * self.qualities().len()
    }
}

fn rotate_point(p: Point, c: Point, cos: f64, sin: f64) -> Point {
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    Point::new(c.x + cos * dx - sin * dy, c.y + sin * dx + cos * dy)
}

fn inside(p: Point, w: u32, h: u32) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x <= f64::from(w) - 1.0 && p.y <= f64::from(h) - 1.0
}

/// Rotate image and landmarks about the face-box centre.
///
/// The new box is the landmark bounding box padded by `margin` (see
/// [`FaceBox::around`]). Returns `None` when a landmark or the new box would
/// leave the image, or when the box would cover pixels from outside the
/// source image. Angle `0` returns the sample unchanged.
pub fn rotate_sample(sample: &AnnotatedImage, angle_degrees: f64, margin: f64) -> Option<AnnotatedImage> {
    if angle_degrees == 0.0 {
        return Some(sample.clone());
    }
    let (w, h) = sample.image.dimensions();
    let c = sample.face_box.center();
    let (sin, cos) = angle_degrees.to_radians().sin_cos();
    let points: Vec<Point> = sample
        .landmarks
        .points
        .iter()
        .map(|&p| rotate_point(p, c, cos, sin).snapped())
        .collect();
    if !points.iter().all(|&p| inside(p, w, h)) {
        return None;
    }
    let face_box = FaceBox::around(&points, margin);
    if !face_box.inside_image(w, h) {
        return None;
    }
    let corners = [
        Point::new(face_box.x0, face_box.y0),
        Point::new(face_box.x0 + face_box.w, face_box.y0),
        Point::new(face_box.x0, face_box.y0 + face_box.h),
        Point::new(face_box.x0 + face_box.w, face_box.y0 + face_box.h),
    ];
    if !corners.iter().all(|&q| inside(rotate_point(q, c, cos, -sin), w, h)) {
        return None;
    }
    let src = &sample.image;
    let image = RgbImage::from_fn(w, h, |x, y| {
        let s = rotate_point(Point::new(f64::from(x), f64::from(y)), c, cos, -sin);
        let v = sample_bilinear(src, s.x, s.y);
        image::Rgb(v.map(|c| c.round().clamp(0.0, 255.0) as u8))
    });
    Some(AnnotatedImage {
        name: sample.name.clone(),
        image,
        landmarks: LandmarkSet {
            points,
            scheme: sample.landmarks.scheme.clone(),
        },
        face_box,
    })
}

/// Shift the face box by `offset = (dx, dy)` box-size fractions. `None` if
/// the shifted box leaves the image or drops a landmark.
pub fn translate_box(sample: &AnnotatedImage, offset: [f64; 2]) -> Option<AnnotatedImage> {
    let b = sample.face_box;
    let moved = FaceBox::new(b.x0 + offset[0] * b.w, b.y0 + offset[1] * b.h, b.w, b.h).snapped();
    let (w, h) = sample.image.dimensions();
    if !moved.inside_image(w, h) || !sample.landmarks.points.iter().all(|&p| moved.contains(p)) {
        return None;
    }
    Some(AnnotatedImage {
        face_box: moved,
        ..sample.clone()
    })
}

/// Mirror the image left-right. Landmark `i` of the result is the mirror of
/// landmark `flip_map[i]` of the input, so semantic labels are preserved.
pub fn flip_sample(sample: &AnnotatedImage) -> AnnotatedImage {
    let last = f64::from(sample.image.width()) - 1.0;
    let scheme = &sample.landmarks.scheme;
    let old = &sample.landmarks.points;
    let points = scheme
        .flip_map
        .iter()
        .map(|&j| Point::new(last - old[j].x, old[j].y))
        .collect();
    let b = sample.face_box;
    AnnotatedImage {
        name: sample.name.clone(),
        image: image::imageops::flip_horizontal(&sample.image),
        landmarks: LandmarkSet {
            points,
            scheme: scheme.clone(),
        },
        face_box: FaceBox::new(last - b.x0 - b.w, b.y0, b.w, b.h),
    }
}

/// Where an augmented sample came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub source_index: usize,
    pub source: String,
    /// Position in the spec's (angle, offset, flip, quality) enumeration.
    pub aug_index: usize,
    pub angle: f64,
    pub offset: [f64; 2],
    pub flipped: bool,
    pub quality: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub sample: AnnotatedImage,
    pub provenance: Provenance,
}

/// A combination that was not emitted because of a containment violation.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipRecord {
    pub source_index: usize,
    pub source: String,
    pub angle: f64,
    pub offset: Option<[f64; 2]>,
    pub reason: &'static str,
}

fn augment_one(idx: usize, src: &AnnotatedImage, spec: &AugmentationSpec) -> Result<(Vec<Augmented>, Vec<SkipRecord>)> {
    let (flips, qualities) = (spec.flips(), spec.qualities());
    let per_offset = flips.len() * qualities.len();
    let per_angle = spec.translation_offsets.len() * per_offset;
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for (ai, &angle) in spec.rotation_angles.iter().enumerate() {
        let Some(rotated) = rotate_sample(src, angle, spec.box_margin) else {
            skips.push(SkipRecord {
                source_index: idx,
                source: src.name.clone(),
                angle,
                offset: None,
                reason: "rotation leaves the image",
            });
            continue;
        };
        for (ti, &offset) in spec.translation_offsets.iter().enumerate() {
            let Some(shifted) = translate_box(&rotated, offset) else {
                skips.push(SkipRecord {
                    source_index: idx,
                    source: src.name.clone(),
                    angle,
                    offset: Some(offset),
                    reason: "translated box drops a landmark or leaves the image",
                });
                continue;
            };
            for (fi, &flipped) in flips.iter().enumerate() {
                let mirrored = if flipped { flip_sample(&shifted) } else { shifted.clone() };
                for (qi, &quality) in qualities.iter().enumerate() {
                    let aug_index = ai * per_angle + ti * per_offset + fi * qualities.len() + qi;
                    let mut sample = match quality {
                        Some(q) => degrade_quality(&mirrored, q)?,
                        None => mirrored.clone(),
                    };
                    sample.name = format!("{}_a{aug_index:04}", src.name);
                    out.push(Augmented {
                        sample,
                        provenance: Provenance {
                            source_index: idx,
                            source: src.name.clone(),
                            aug_index,
                            angle,
                            offset,
                            flipped,
                            quality,
                        },
                    });
                }
            }
        }
    }
    Ok((out, skips))
}

/// Apply every combination of `spec` to every source. Output is ordered by
/// `(source index, augmentation index)` regardless of the parallel backend;
/// each skip is logged at info level and returned.
pub fn augment_dataset(samples: &[AnnotatedImage], spec: &AugmentationSpec) -> Result<(Vec<Augmented>, Vec<SkipRecord>)> {
    spec.validate()?;
    let parts = par::map_range(samples.len(), |i| augment_one(i, &samples[i], spec));
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for part in parts {
        let (a, s) = part?;
        out.extend(a);
        skips.extend(s);
    }
    for s in &skips {
        log::info!(
            "skipped {} (angle {}, offset {:?}): {}",
            s.source,
            s.angle,
            s.offset,
            s.reason
        );
    }
    Ok((out, skips))
}

/// Write the augmented images and annotations (see
/// [`write_dataset`](super::write_dataset)) plus `manifest.csv` and
/// `skipped.csv` provenance tables.
pub fn write_augmented(dir: &Path, augmented: &[Augmented], skips: &[SkipRecord], scheme: &Scheme) -> Result<()> {
    let samples: Vec<AnnotatedImage> = augmented.iter().map(|a| a.sample.clone()).collect();
    write_dataset(dir, &samples, scheme)?;
    let mut m = String::from("image,source_index,source,aug_index,angle_deg,dx,dy,flipped,quality\n");
    for a in augmented {
        let p = &a.provenance;
        writeln!(
            m,
            "images/{}.png,{},{},{},{},{},{},{},{}",
            a.sample.name,
            p.source_index,
            p.source,
            p.aug_index,
            p.angle,
            p.offset[0],
            p.offset[1],
            p.flipped,
            p.quality.map_or(String::from("none"), |q| q.to_string())
        )
        .unwrap();
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, m).map_err(|e| Error::io(&path, e))?;
    let mut s = String::from("source_index,source,angle_deg,dx,dy,reason\n");
    for k in skips {
        let (dx, dy) = k.offset.map_or((String::new(), String::new()), |o| (o[0].to_string(), o[1].to_string()));
        writeln!(s, "{},{},{},{dx},{dy},{}", k.source_index, k.source, k.angle, k.reason).unwrap();
    }
    let path = dir.join(SKIPPED_FILE);
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}
