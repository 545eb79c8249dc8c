//! Annotation formats.
//!
//! *Points files* (`.pts`):
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! 123.5 88.25
//! ...
//! }
//! ```
//!
//! An image with the same stem (`.png`, `.jpg` or `.jpeg`) is looked up in
//! the image root and the face box is derived from the landmarks (square,
//! 10% margin, clipped to the image). A directory loads every `.pts` file in
//! name order.
//!
//! *CSV* (`.csv`), comma separated without quoting, `#` comments allowed:
//!
//! ```text
//! image,box_x,box_y,box_w,box_h,x0,y0,x1,y1,...
//! images/face_00000.png,12.5,8,60,60,30.1,40.2,...
//! ```
//!
//! The four box columns are optional; image paths are relative to the image
//! root.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbImage;

use super::{AnnotatedImage, FaceBox, LandmarkSet, Point, Scheme};
use crate::error::{Error, Result};

/// File name of the CSV written by [`write_dataset`].
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
const PARTITION_FILE: &str = "partition.toml";
const DERIVED_BOX_MARGIN: f64 = 0.1;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::data(format!("missing image {}", path.display())));
    }
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Parse the body of a points file; `path` only labels errors.
pub fn parse_pts(text: &str, path: &Path) -> Result<Vec<Point>> {
    let mut declared = None;
    let mut points = Vec::new();
    let mut in_body = false;
    let mut closed = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let ln = i + 1;
        if line.is_empty() {
            continue;
        }
        if closed {
            return Err(parse_err(path, ln, "content after closing brace"));
        }
        if !in_body {
            if let Some(rest) = line.strip_prefix("n_points:") {
                let n: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad n_points `{}`", rest.trim())))?;
                declared = Some(n);
            } else if line == "{" {
                in_body = true;
            } else if !line.starts_with("version:") {
                return Err(parse_err(path, ln, format!("unexpected header line `{line}`")));
            }
            continue;
        }
        if line == "}" {
            closed = true;
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => {
                points.push(Point::new(x, y).snapped())
            }
            _ => return Err(parse_err(path, ln, format!("expected `x y`, got `{line}`"))),
        }
    }
    let n = declared.ok_or_else(|| parse_err(path, 1, "missing n_points header"))?;
    if !closed {
        return Err(parse_err(path, text.lines().count(), "missing closing brace"));
    }
    if points.len() != n {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("header declares {n} points, found {}", points.len()),
        ));
    }
    Ok(points)
}

pub fn write_pts(path: &Path, points: &[Point]) -> Result<()> {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", points.len());
    for p in points {
        writeln!(s, "{} {}", p.x, p.y).unwrap();
    }
    s.push_str("}\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn finish(name: String, image: RgbImage, points: Vec<Point>, face_box: Option<FaceBox>, scheme: &Arc<Scheme>) -> Result<AnnotatedImage> {
    let (w, h) = image.dimensions();
    let landmarks = LandmarkSet::new(points, scheme.clone())?;
    let face_box = face_box
        .unwrap_or_else(|| FaceBox::around(&landmarks.points, DERIVED_BOX_MARGIN).clamp_to(w, h));
    let sample = AnnotatedImage {
        name,
        image,
        landmarks,
        face_box,
    };
    sample.validate()?;
    Ok(sample)
}

fn load_pts_file(path: &Path, image_root: &Path, scheme: &Arc<Scheme>) -> Result<Option<AnnotatedImage>> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        log::warn!("{}: empty annotation file, skipped", path.display());
        return Ok(None);
    }
    let points = parse_pts(&text, path)?;
    if points.len() != scheme.n_landmarks {
        return Err(Error::config(format!(
            "{}: {} landmarks, scheme {} expects {}",
            path.display(),
            points.len(),
            scheme.name,
            scheme.n_landmarks
        )));
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::data(format!("{}: unusable file name", path.display())))?;
    let image_path = ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| image_root.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::data(format!("missing image for {} in {}", path.display(), image_root.display())))?;
    let image = open_image(&image_path)?;
    finish(stem.to_string(), image, points, None, scheme).map(Some)
}

/// Parse a CSV annotation file into `(image path, box, points)` rows.
pub fn read_csv(path: &Path, n_landmarks: usize) -> Result<Vec<(String, Option<FaceBox>, Vec<Point>)>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut header: Option<bool> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let ln = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(has_box) = header else {
            if cols[0] != "image" {
                return Err(parse_err(path, ln, "header must start with `image`"));
            }
            let has_box = cols.get(1) == Some(&"box_x");
            let coords = cols.len() - 1 - if has_box { 4 } else { 0 };
            if coords != 2 * n_landmarks {
                return Err(Error::config(format!(
                    "{}: header has {coords} coordinate columns, scheme expects {}",
                    path.display(),
                    2 * n_landmarks
                )));
            }
            header = Some(has_box);
            continue;
        };
        let expected = 1 + 2 * n_landmarks + if has_box { 4 } else { 0 };
        if cols.len() != expected {
            return Err(parse_err(
                path,
                ln,
                format!("expected {expected} columns, got {}", cols.len()),
            ));
        }
        let nums = cols[1..]
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err(path, ln, "non-numeric coordinate"))?;
        let (bx, coords) = if has_box {
            (Some(FaceBox::new(nums[0], nums[1], nums[2], nums[3]).snapped()), &nums[4..])
        } else {
            (None, &nums[..])
        };
        let points = coords
            .chunks(2)
            .map(|c| Point::new(c[0], c[1]).snapped())
            .collect();
        rows.push((cols[0].to_string(), bx, points));
    }
    if header.is_none() {
        log::warn!("{}: empty annotation file", path.display());
    }
    Ok(rows)
}

/// Load and validate a dataset from a points file, a directory of points
/// files, or a CSV file.
pub fn load_dataset(annotation_path: &Path, image_root: &Path, scheme: &Scheme) -> Result<Vec<AnnotatedImage>> {
    let scheme = Arc::new(scheme.clone());
    if annotation_path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(annotation_path)
            .map_err(|e| Error::io(annotation_path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "pts"))
            .collect();
        files.sort();
        if files.is_empty() {
            log::warn!("{}: no .pts files found", annotation_path.display());
        }
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            out.extend(load_pts_file(&f, image_root, &scheme)?);
        }
        return Ok(out);
    }
    match annotation_path.extension().and_then(|e| e.to_str()) {
        Some("pts") => Ok(load_pts_file(annotation_path, image_root, &scheme)?.into_iter().collect()),
        Some("csv") => read_csv(annotation_path, scheme.n_landmarks)?
            .into_iter()
            .map(|(rel, bx, points)| {
                let image = open_image(&image_root.join(&rel))?;
                let name = Path::new(&rel)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or(&rel)
                    .to_string();
                finish(name, image, points, bx, &scheme)
            })
            .collect(),
        _ => Err(Error::usage(format!(
            "{}: annotation path must be a .pts file, a .csv file or a directory",
            annotation_path.display()
        ))),
    }
}

/// Write rows for `samples` to a CSV; images are referenced as `images/<name>.png`.
pub fn write_csv(path: &Path, samples: &[AnnotatedImage]) -> Result<()> {
    let n = samples.first().map_or(0, |s| s.landmarks.len());
    let mut s = String::from("image,box_x,box_y,box_w,box_h");
    for i in 0..n {
        write!(s, ",x{i},y{i}").unwrap();
    }
    s.push('\n');
    for smp in samples {
        let b = smp.face_box;
        write!(s, "images/{}.png,{},{},{},{}", smp.name, b.x0, b.y0, b.w, b.h).unwrap();
        for p in &smp.landmarks.points {
            write!(s, ",{},{}", p.x, p.y).unwrap();
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Write `images/*.png`, `annotations.csv` and `partition.toml` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[AnnotatedImage], scheme: &Scheme) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for s in samples {
        let p = images.join(format!("{}.png", s.name));
        s.image.save(&p).map_err(|source| Error::Image { path: p.clone(), source })?;
    }
    write_csv(&dir.join(ANNOTATIONS_FILE), samples)?;
    let p = dir.join(PARTITION_FILE);
    std::fs::write(&p, scheme.to_toml()).map_err(|e| Error::io(&p, e))
}
