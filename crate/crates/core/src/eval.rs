//! Inter-ocular normalized errors, evaluation reports and run comparison.
//!
//! Errors are measured in image pixels: the mean Euclidean landmark error
//! divided by the ground-truth inter-ocular distance. Reports store
//! fractions of that distance and print them as percentages with two
//! decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{decode_targets, AnnotatedImage, Point};
use crate::error::{Error, Result};
use crate::network::CftNet;
use crate::tensor::{Scalar, Tape};
use crate::trainer::EncodedSet;

/// Default failure threshold, as a fraction of the inter-ocular distance.
pub const FAILURE_THRESHOLD: f64 = 0.10;

const REPORT_HEADER: &str = "# eval-report v1";

/// Reference full-benchmark mean errors (%), for orientation only; the
/// desk-scale synthetic runs are not expected to approach them.
pub const REFERENCE_RESULTS: [ReferenceResult; 3] = [
    ReferenceResult { dataset: "COFW", cft: 6.33, dt: 6.75 },
    ReferenceResult { dataset: "Helen-194", cft: 4.86, dt: 5.32 },
    ReferenceResult { dataset: "300-W full", cft: 5.85, dt: 6.26 },
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceResult {
    pub dataset: &'static str,
    pub cft: f64,
    pub dt: f64,
}

/// Mean of `|pred_i − truth_i| / d` over landmarks.
pub fn normalized_mean_error(pred: &[Point], truth: &[Point], d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::data(format!("inter-ocular distance must be positive, got {d}")));
    }
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::config(format!(
            "{} predicted landmarks for {} ground-truth landmarks",
            pred.len(),
            truth.len()
        )));
    }
    Ok(sorted_sum(pred.iter().zip(truth).map(|(p, t)| p.distance(*t) / d)) / pred.len() as f64)
}

/// Sum in ascending order so that the result does not depend on input order.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len();
    sorted_sum(v.into_iter()) / n as f64
}

/// Anything that maps samples to landmark coordinates in image pixels.
pub trait Predictor {
    fn predict(&self, samples: &[AnnotatedImage]) -> Result<Vec<Vec<Point>>>;
}

impl<T: Scalar> Predictor for CftNet<T> {
    /// Infer-mode forward through the prediction head, decoded from the
    /// crop frame back to image pixels.
    fn predict(&self, samples: &[AnnotatedImage]) -> Result<Vec<Vec<Point>>> {
        let set = EncodedSet::<T>::new(samples, self.config())?;
        let idx: Vec<usize> = (0..samples.len()).collect();
        let (wb, wr) = self.config().head_widths();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in idx.chunks(64) {
            let (x, _) = set.batch(chunk);
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let head = self.forward_infer(&mut tape, input)?.prediction();
            let pb = tape.value(head.principal).data();
            let pr = tape.value(head.elaborate).data();
            for (row, &i) in chunk.iter().enumerate() {
                let s = &samples[i];
                out.push(decode_targets(
                    &pb[row * wb..(row + 1) * wb],
                    &pr[row * wr..(row + 1) * wr],
                    &s.face_box,
                    &s.landmarks.scheme,
                )?);
            }
        }
        Ok(out)
    }
}

/// Returns the ground truth, optionally shifted right by a multiple of each
/// sample's inter-ocular distance.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor {
    pub offset_in_d: f64,
}

impl Predictor for OraclePredictor {
    fn predict(&self, samples: &[AnnotatedImage]) -> Result<Vec<Vec<Point>>> {
        Ok(samples
            .iter()
            .map(|s| {
                let dx = self.offset_in_d * s.landmarks.interocular();
                s.landmarks.points.iter().map(|p| Point::new(p.x + dx, p.y)).collect()
            })
            .collect())
    }
}

/// Predicted coordinates keyed by image name, as written by `cftnet predict`.
///
/// CSV layout: `image,x0,y0,x1,y1,...` with one row per image; the image
/// column holds the sample name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionTable {
    pub rows: BTreeMap<String, Vec<Point>>,
}

impl PredictionTable {
    pub fn from_predictions(samples: &[AnnotatedImage], preds: Vec<Vec<Point>>) -> Self {
        PredictionTable {
            rows: samples.iter().map(|s| s.name.clone()).zip(preds).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.rows.values().next().map_or(0, Vec::len);
        let mut s = String::from("image");
        for i in 0..n {
            write!(s, ",x{i},y{i}").unwrap();
        }
        s.push('\n');
        for (name, pts) in &self.rows {
            s.push_str(name);
            for p in pts {
                write!(s, ",{},{}", p.x, p.y).unwrap();
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let vals = cols[1..]
                .iter()
                .map(|c| c.trim().parse::<f64>().ok())
                .collect::<Option<Vec<f64>>>()
                .filter(|v| v.len() % 2 == 0)
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected name followed by x,y pairs".into(),
                })?;
            rows.insert(
                cols[0].trim().to_string(),
                vals.chunks(2).map(|c| Point::new(c[0], c[1])).collect(),
            );
        }
        Ok(PredictionTable { rows })
    }
}

impl Predictor for PredictionTable {
    fn predict(&self, samples: &[AnnotatedImage]) -> Result<Vec<Vec<Point>>> {
        samples
            .iter()
            .map(|s| {
                self.rows
                    .get(&s.name)
                    .cloned()
                    .ok_or_else(|| Error::data(format!("no prediction for image {}", s.name)))
            })
            .collect()
    }
}

/// Errors of one image, as fractions of its inter-ocular distance.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageError {
    pub name: String,
    pub nme: f64,
    pub principal: f64,
    pub elaborate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Hash of the sorted image names and ground-truth coordinates.
    pub dataset_id: String,
    /// Rows sorted by image name.
    pub per_image: Vec<ImageError>,
    /// Mean normalized error of every landmark index.
    pub per_landmark: Vec<f64>,
    /// Mean over images of the per-image NME.
    pub aggregate: f64,
    pub principal: f64,
    pub elaborate: f64,
    pub failure_threshold: f64,
    /// Images whose NME exceeds the threshold, by name.
    pub failures: Vec<String>,
}

/// Identity of a dataset for report comparison.
pub fn dataset_identity(samples: &[AnnotatedImage]) -> String {
    let mut keys: Vec<(&str, Vec<u8>)> = samples
        .iter()
        .map(|s| {
            let mut b = Vec::new();
            for p in &s.landmarks.points {
                b.extend_from_slice(&p.x.to_le_bytes());
                b.extend_from_slice(&p.y.to_le_bytes());
            }
            (s.name.as_str(), b)
        })
        .collect();
    keys.sort();
    let mut h = Sha256::new();
    for (name, coords) in keys {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(&coords);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Evaluate `predictor` on `dataset`. Every reported number is independent
/// of dataset order.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, dataset: &[AnnotatedImage], failure_threshold: f64) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let n_landmarks = dataset[0].landmarks.len();
    if dataset.iter().any(|s| s.landmarks.len() != n_landmarks) {
        return Err(Error::config("dataset mixes landmark schemes"));
    }
    let preds = predictor.predict(dataset)?;
    if preds.len() != dataset.len() {
        return Err(Error::config("predictor returned the wrong number of samples"));
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for (s, p) in dataset.iter().zip(&preds) {
        if p.len() != n_landmarks {
            return Err(Error::config(format!(
                "{}: predictor gives {} landmarks, dataset has {n_landmarks}",
                s.name,
                p.len()
            )));
        }
        let d = s.landmarks.interocular();
        let truth = &s.landmarks.points;
        let per_point: Vec<f64> = p.iter().zip(truth).map(|(a, b)| a.distance(*b) / d).collect();
        let pick = |idx: &[usize]| mean(idx.iter().map(|&i| per_point[i]));
        let scheme = &s.landmarks.scheme;
        rows.push((
            ImageError {
                name: s.name.clone(),
                nme: normalized_mean_error(p, truth, d)?,
                principal: pick(&scheme.principal),
                elaborate: pick(&scheme.elaborate()),
            },
            per_point,
        ));
    }
    rows.sort_by(|a, b| {
        a.0.name.cmp(&b.0.name).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let per_landmark = (0..n_landmarks)
        .map(|l| mean(rows.iter().map(|r| r.1[l])))
        .collect();
    let per_image: Vec<ImageError> = rows.into_iter().map(|r| r.0).collect();
    let failures = per_image
        .iter()
        .filter(|r| r.nme > failure_threshold)
        .map(|r| r.name.clone())
        .collect();
    Ok(EvalReport {
        dataset_id: dataset_identity(dataset),
        aggregate: mean(per_image.iter().map(|r| r.nme)),
        principal: mean(per_image.iter().map(|r| r.principal)),
        elaborate: mean(per_image.iter().map(|r| r.elaborate)),
        per_landmark,
        per_image,
        failure_threshold,
        failures,
    })
}

/// `value · 100` rounded to two decimals, as printed in reports.
pub fn percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

impl EvalReport {
    /// Fixed-layout human summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dataset    {}", self.dataset_id).unwrap();
        writeln!(s, "images     {:>8}", self.per_image.len()).unwrap();
        writeln!(s, "mean error {:>8} %", percent(self.aggregate)).unwrap();
        writeln!(s, "principal  {:>8} %", percent(self.principal)).unwrap();
        writeln!(s, "elaborate  {:>8} %", percent(self.elaborate)).unwrap();
        writeln!(
            s,
            "failures   {:>8} (> {} %)",
            self.failures.len(),
            percent(self.failure_threshold)
        )
        .unwrap();
        s
    }

    /// Versioned CSV; values are fractions of the inter-ocular distance at
    /// full precision.
    ///
    /// ```text
    /// # eval-report v1
    /// kind,name,nme,principal,elaborate,failed
    /// dataset,<id>,,,,
    /// threshold,,0.1,,,
    /// aggregate,,<nme>,<principal>,<elaborate>,<failure count>
    /// image,<name>,<nme>,<principal>,<elaborate>,<true|false>
    /// landmark,<index>,<mean error>,,,
    /// ```
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\nkind,name,nme,principal,elaborate,failed\n");
        writeln!(s, "dataset,{},,,,", self.dataset_id).unwrap();
        writeln!(s, "threshold,,{},,,", self.failure_threshold).unwrap();
        writeln!(
            s,
            "aggregate,,{},{},{},{}",
            self.aggregate,
            self.principal,
            self.elaborate,
            self.failures.len()
        )
        .unwrap();
        for r in &self.per_image {
            writeln!(
                s,
                "image,{},{},{},{},{}",
                r.name,
                r.nme,
                r.principal,
                r.elaborate,
                r.nme > self.failure_threshold
            )
            .unwrap();
        }
        for (i, e) in self.per_landmark.iter().enumerate() {
            writeln!(s, "landmark,{i},{e},,,").unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, REPORT_HEADER)) => {}
            _ => return Err(err(1, "not an eval-report v1 file")),
        }
        let mut r = EvalReport {
            dataset_id: String::new(),
            per_image: Vec::new(),
            per_landmark: Vec::new(),
            aggregate: f64::NAN,
            principal: f64::NAN,
            elaborate: f64::NAN,
            failure_threshold: FAILURE_THRESHOLD,
            failures: Vec::new(),
        };
        for (i, line) in lines.skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 6 {
                return Err(err(i + 1, "expected 6 columns"));
            }
            let num = |k: usize| c[k].parse::<f64>().map_err(|_| err(i + 1, "bad number"));
            match c[0] {
                "dataset" => r.dataset_id = c[1].to_string(),
                "threshold" => r.failure_threshold = num(2)?,
                "aggregate" => {
                    r.aggregate = num(2)?;
                    r.principal = num(3)?;
                    r.elaborate = num(4)?;
                }
                "image" => {
                    let row = ImageError {
                        name: c[1].to_string(),
                        nme: num(2)?,
                        principal: num(3)?,
                        elaborate: num(4)?,
                    };
                    if c[5] == "true" {
                        r.failures.push(row.name.clone());
                    }
                    r.per_image.push(row);
                }
                "landmark" => r.per_landmark.push(num(2)?),
                _ => return Err(err(i + 1, "unknown row kind")),
            }
        }
        if r.dataset_id.is_empty() || r.aggregate.is_nan() {
            return Err(err(1, "missing dataset or aggregate row"));
        }
        Ok(r)
    }
}

/// `(a − b) / a · 100`: positive when `b` has the lower error. Zero when
/// `a == b`; NaN when `a` is zero and `b` is not.
pub fn reduction_percent(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b) / a * 100.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    /// Errors as fractions of the inter-ocular distance.
    pub a: f64,
    pub b: f64,
}

impl ComparisonRow {
    pub fn new(label: impl Into<String>, a: f64, b: f64) -> Self {
        ComparisonRow { label: label.into(), a, b }
    }

    pub fn reduction(&self) -> f64 {
        reduction_percent(self.a, self.b)
    }
}

/// Side-by-side errors of two runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
}

/// Compare aggregate, principal and elaborate errors of two reports on the
/// same dataset. `a` is the baseline; reductions are relative to it.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<Comparison> {
    if a.dataset_id != b.dataset_id {
        return Err(Error::usage(format!(
            "reports are for different datasets ({} vs {})",
            a.dataset_id, b.dataset_id
        )));
    }
    Ok(Comparison {
        label_a: "a".into(),
        label_b: "b".into(),
        rows: vec![
            ComparisonRow::new("mean", a.aggregate, b.aggregate),
            ComparisonRow::new("principal", a.principal, b.principal),
            ComparisonRow::new("elaborate", a.elaborate, b.elaborate),
        ],
    })
}

impl Comparison {
    pub fn with_labels(mut self, a: impl Into<String>, b: impl Into<String>) -> Self {
        self.label_a = a.into();
        self.label_b = b.into();
        self
    }

    /// Fixed-width table: errors in percent, reduction in percent of `a`.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<14} {:>10} {:>10} {:>13}\n",
            "metric",
            format!("{} (%)", self.label_a),
            format!("{} (%)", self.label_b),
            "reduction (%)"
        );
        for r in &self.rows {
            let red = r.reduction();
            let red = if red.is_finite() { format!("{red:.2}") } else { "n/a".into() };
            writeln!(s, "{:<14} {:>10} {:>10} {:>13}", r.label, percent(r.a), percent(r.b), red).unwrap();
        }
        s
    }
}
