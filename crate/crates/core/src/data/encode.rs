use image::RgbImage;

use super::{AnnotatedImage, FaceBox, Point, Scheme};
use crate::error::{Error, Result};
use crate::loss::SubsetTargets;
use crate::tensor::{Scalar, Tensor};

/// Bilinear RGB sample at `(x, y)` with edge clamping, in `[0, 255]`.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let (maxx, maxy) = (f64::from(w - 1), f64::from(h - 1));
    let x = x.clamp(0.0, maxx);
    let y = y.clamp(0.0, maxy);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as u32, y0 as u32);
    let (ix1, iy1) = ((ix + 1).min(w - 1), (iy + 1).min(h - 1));
    let p00 = img.get_pixel(ix, iy).0;
    let p10 = img.get_pixel(ix1, iy).0;
    let p01 = img.get_pixel(ix, iy1).0;
    let p11 = img.get_pixel(ix1, iy1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bot = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}

fn check_box(b: &FaceBox) -> Result<()> {
    if !(b.w > 1.0 && b.h > 1.0) {
        return Err(Error::data(format!(
            "degenerate face box {}x{}, need more than 1 px per side",
            b.w, b.h
        )));
    }
    Ok(())
}

/// Resample the face box to `size.0 × size.1` (height, width) as CHW values
/// in `[0, 1]`. Output pixel `(u, v)` samples the source at
/// `(x0 + (u + ½)·w/W, y0 + (v + ½)·h/H)`.
pub fn crop_image<T: Scalar>(img: &RgbImage, b: &FaceBox, size: (usize, usize)) -> Result<Tensor<T>> {
    check_box(b)?;
    let (oh, ow) = size;
    let plane = oh * ow;
    let mut data = vec![T::zero(); 3 * plane];
    for v in 0..oh {
        let y = b.y0 + (v as f64 + 0.5) * b.h / oh as f64;
        for u in 0..ow {
            let x = b.x0 + (u as f64 + 0.5) * b.w / ow as f64;
            let px = sample_bilinear(img, x, y);
            for c in 0..3 {
                data[c * plane + v * ow + u] = T::from_f64_lossy(px[c] / 255.0);
            }
        }
    }
    Tensor::new(vec![3, oh, ow], data)
}

/// Crop-normalized targets: `t = (p − box origin) / box size`, split into the
/// scheme's principal and elaborate subsets. `d` is the inter-ocular distance
/// in the same normalized frame.
pub fn encode_targets<T: Scalar>(points: &[Point], b: &FaceBox, scheme: &Scheme) -> Result<SubsetTargets<T>> {
    check_box(b)?;
    let norm = |p: Point| Point::new((p.x - b.x0) / b.w, (p.y - b.y0) / b.h);
    let flat = |idx: &[usize]| -> Vec<T> {
        idx.iter()
            .flat_map(|&i| {
                let q = norm(points[i]);
                [T::from_f64_lossy(q.x), T::from_f64_lossy(q.y)]
            })
            .collect()
    };
    let [a, c] = scheme.interocular;
    let d = norm(points[a]).distance(norm(points[c]));
    SubsetTargets::new(
        flat(&scheme.principal),
        flat(&scheme.elaborate()),
        T::from_f64_lossy(d),
    )
}

/// Inverse of [`encode_targets`]: map normalized subset coordinates back to
/// image pixels in scheme order.
pub fn decode_targets<T: Scalar>(principal: &[T], elaborate: &[T], b: &FaceBox, scheme: &Scheme) -> Result<Vec<Point>> {
    let elab = scheme.elaborate();
    if principal.len() != 2 * scheme.principal.len() || elaborate.len() != 2 * elab.len() {
        return Err(Error::config(format!(
            "scheme {} expects {} + {} coordinates, got {} + {}",
            scheme.name,
            2 * scheme.principal.len(),
            2 * elab.len(),
            principal.len(),
            elaborate.len()
        )));
    }
    let mut out = vec![Point::new(0.0, 0.0); scheme.n_landmarks];
    for (idx, vals) in [(&scheme.principal, principal), (&elab, elaborate)] {
        for (k, &i) in idx.iter().enumerate() {
            out[i] = Point::new(
                b.x0 + vals[2 * k].as_f64() * b.w,
                b.y0 + vals[2 * k + 1].as_f64() * b.h,
            );
        }
    }
    Ok(out)
}

/// Network input (`[3, H, W]`) and targets for one sample.
pub fn crop_and_encode<T: Scalar>(
    sample: &AnnotatedImage,
    size: (usize, usize),
) -> Result<(Tensor<T>, SubsetTargets<T>)> {
    let input = crop_image(&sample.image, &sample.face_box, size)?;
    let targets = encode_targets(&sample.landmarks.points, &sample.face_box, &sample.landmarks.scheme)?;
    Ok((input, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn scheme() -> Scheme {
        Scheme::builtin("synthetic-28").unwrap()
    }

    #[test]
    fn corner_and_center_targets() {
        let s = scheme();
        let b = FaceBox::new(10.0, 20.0, 100.0, 100.0);
        let mut pts = vec![Point::new(60.0, 70.0); s.n_landmarks];
        pts[0] = Point::new(10.0, 20.0);
        pts[4] = Point::new(40.0, 50.0);
        let t = encode_targets::<f64>(&pts, &b, &s).unwrap();
        assert_eq!(&t.principal[..4], &[0.0, 0.0, 0.5, 0.5]);
        let back = decode_targets(&t.principal, &t.elaborate, &b, &s).unwrap();
        assert_eq!(back, pts);
    }

    #[test]
    fn interocular_in_normalized_frame() {
        let s = scheme();
        let b = FaceBox::new(0.0, 0.0, 10.0, 10.0);
        let mut pts = vec![Point::new(5.0, 5.0); s.n_landmarks];
        pts[4] = Point::new(3.0, 4.0);
        pts[7] = Point::new(7.0, 4.0);
        let t = encode_targets::<f64>(&pts, &b, &s).unwrap();
        assert!((t.interocular - 0.4).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_is_a_data_error() {
        let s = scheme();
        let pts = vec![Point::new(5.0, 5.0); s.n_landmarks];
        let b = FaceBox::new(5.0, 5.0, 1.0, 10.0);
        assert!(matches!(encode_targets::<f32>(&pts, &b, &s), Err(Error::Data(_))));
        let img = RgbImage::new(20, 20);
        assert!(matches!(crop_image::<f32>(&img, &b, (8, 8)), Err(Error::Data(_))));
    }

    #[test]
    fn crop_of_uniform_image_is_uniform() {
        let img = RgbImage::from_pixel(30, 20, Rgb([255, 0, 51]));
        let t = crop_image::<f32>(&img, &FaceBox::new(2.5, 3.0, 20.0, 12.0), (5, 7)).unwrap();
        assert_eq!(t.shape(), &[3, 5, 7]);
        assert!(t.data()[..35].iter().all(|&v| v == 1.0));
        assert!(t.data()[35..70].iter().all(|&v| v == 0.0));
        assert!(t.data()[70..].iter().all(|&v| (v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn bilinear_interpolates_and_clamps() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(1, 0, Rgb([100, 200, 0]));
        assert_eq!(sample_bilinear(&img, 0.25, 0.0), [25.0, 50.0, 0.0]);
        assert_eq!(sample_bilinear(&img, 5.0, -3.0), [100.0, 200.0, 0.0]);
    }
}
