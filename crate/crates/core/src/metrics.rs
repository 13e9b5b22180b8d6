//! Overall accuracy, boundary accuracy `BA(d)`, and confusion matrices.
//!
//! The boundary distance `D_B` of a pixel is the Euclidean distance between
//! pixel centers to the nearest pixel with a different (non-ignore) label.
//! It is computed exactly with the Felzenszwalb-Huttenlocher squared
//! distance transform, once per class. Ignore pixels are neither scored nor
//! used as boundary targets. Metrics with an empty denominator are `None`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::class;
use crate::error::{Error, Result};
use crate::raster_io::LabelMask;

/// Default distances `d` reported for `BA(d)`.
pub const DEFAULT_BA_DISTANCES: [f64; 2] = [3.0, 10.0];

/// Exact 1-D squared distance transform of `f` (infinite entries are not sources).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let parabola = |q: usize| f[q] + (q * q) as f64;
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        while let Some(&top) = v.last() {
            let s = (parabola(q) - parabola(top)) / (2.0 * (q - top) as f64);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest source pixel.
fn squared_edt(source: &[bool], height: usize, width: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = source
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut line = vec![0.0; height];
    let mut out = vec![0.0; height];
    for c in 0..width {
        for r in 0..height {
            line[r] = grid[r * width + c];
        }
        dt_1d(&line, &mut out, &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    let mut out = vec![0.0; width];
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        dt_1d(row, &mut out, &mut v, &mut z);
        row.copy_from_slice(&out);
    }
    grid
}

/// `D_B` for every pixel; `+inf` where no differing label exists and for ignore pixels.
pub fn boundary_distance_map(truth: &LabelMask) -> Vec<f64> {
    let (h, w) = (truth.height(), truth.width());
    let labels = truth.labels();
    let mut out = vec![f64::INFINITY; h * w];
    for c in 0..class::COUNT as u8 {
        if !labels.contains(&c) {
            continue;
        }
        let source: Vec<bool> = labels
            .iter()
            .map(|&l| l != c && l != class::IGNORE)
            .collect();
        let sq = squared_edt(&source, h, w);
        for (i, &l) in labels.iter().enumerate() {
            if l == c {
                out[i] = sq[i].sqrt();
            }
        }
    }
    out
}

fn check_shapes(pred: &LabelMask, truth: &LabelMask) -> Result<()> {
    if !pred.same_shape(truth) {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

fn ratio(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| correct as f64 / total as f64)
}

/// Accuracy over non-ignore pixels with `D_B <= d`; `None` when there are none.
pub fn boundary_accuracy(pred: &LabelMask, truth: &LabelMask, d: f64) -> Result<Option<f64>> {
    check_shapes(pred, truth)?;
    let db = boundary_distance_map(truth);
    let (correct, total) = count_within(pred, truth, &db, d);
    Ok(ratio(correct, total))
}

fn count_within(pred: &LabelMask, truth: &LabelMask, db: &[f64], d: f64) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for ((&p, &t), &dist) in pred.labels().iter().zip(truth.labels()).zip(db) {
        if t != class::IGNORE && dist <= d {
            total += 1;
            correct += (p == t) as usize;
        }
    }
    (correct, total)
}

/// Accuracy over all non-ignore pixels; `None` when every pixel is ignored.
pub fn overall_accuracy(pred: &LabelMask, truth: &LabelMask) -> Result<Option<f64>> {
    check_shapes(pred, truth)?;
    let (correct, total) = count_within(pred, truth, &vec![0.0; truth.labels().len()], 0.0);
    Ok(ratio(correct, total))
}

/// Relabels sediment as land.
pub fn collapse_sediment(mask: &LabelMask) -> LabelMask {
    let labels = mask
        .labels()
        .iter()
        .map(|&l| if l == class::SEDIMENT { class::LAND } else { l })
        .collect();
    LabelMask::new(mask.height(), mask.width(), labels).expect("codes stay valid")
}

/// Key used for `BA(d)` in reports: integral distances print without a fraction.
pub fn distance_key(d: f64) -> String {
    if d.fract() == 0.0 && d.abs() < 1e15 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

/// Accuracy summary of one image, or of several pooled by pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oa: Option<f64>,
    pub ba: BTreeMap<String, Option<f64>>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    pub pixels: usize,
    pub ignored: usize,
    #[serde(skip)]
    counts: Counts,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Counts {
    correct: usize,
    /// `(d, correct, total)` per configured distance.
    ba: Vec<(f64, usize, usize)>,
}

impl EvalReport {
    pub fn evaluate(pred: &LabelMask, truth: &LabelMask, distances: &[f64]) -> Result<Self> {
        check_shapes(pred, truth)?;
        let db = boundary_distance_map(truth);
        let mut confusion = vec![vec![0u64; class::COUNT]; class::COUNT];
        let mut pixels = 0;
        let mut ignored = 0;
        let mut correct = 0;
        for (i, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
            if t == class::IGNORE {
                ignored += 1;
                continue;
            }
            if p == class::IGNORE {
                return Err(Error::Shape(format!(
                    "prediction leaves scored pixel {i} as ignore"
                )));
            }
            pixels += 1;
            correct += (p == t) as usize;
            confusion[t as usize][p as usize] += 1;
        }
        let ba = distances
            .iter()
            .map(|&d| {
                let (c, t) = count_within(pred, truth, &db, d);
                (d, c, t)
            })
            .collect();
        Ok(Self::from_counts(
            confusion,
            pixels,
            ignored,
            Counts { correct, ba },
        ))
    }

    fn from_counts(confusion: Vec<Vec<u64>>, pixels: usize, ignored: usize, counts: Counts) -> Self {
        Self {
            oa: ratio(counts.correct, pixels),
            ba: counts
                .ba
                .iter()
                .map(|&(d, c, t)| (distance_key(d), ratio(c, t)))
                .collect(),
            confusion,
            pixels,
            ignored,
            counts,
        }
    }

    /// Pixel-pooled aggregate of reports computed with the same distance list.
    pub fn pooled(reports: &[EvalReport]) -> Self {
        let mut confusion = vec![vec![0u64; class::COUNT]; class::COUNT];
        let mut pixels = 0;
        let mut ignored = 0;
        let mut counts = Counts {
            correct: 0,
            ba: reports
                .first()
                .map(|r| r.counts.ba.iter().map(|&(d, _, _)| (d, 0, 0)).collect())
                .unwrap_or_default(),
        };
        for r in reports {
            for (acc, row) in confusion.iter_mut().zip(&r.confusion) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            pixels += r.pixels;
            ignored += r.ignored;
            counts.correct += r.counts.correct;
            for (acc, &(_, c, t)) in counts.ba.iter_mut().zip(&r.counts.ba) {
                acc.1 += c;
                acc.2 += t;
            }
        }
        Self::from_counts(confusion, pixels, ignored, counts)
    }

    /// Number of pixels scored by `BA(d)` for each configured `d`.
    pub fn ba_denominators(&self) -> Vec<(f64, usize)> {
        self.counts.ba.iter().map(|&(d, _, t)| (d, t)).collect()
    }
}
