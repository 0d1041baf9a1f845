//! Evaluation tools: softmax confidence, histograms, rejection rates, 2-D
//! activity heatmaps, and cross-sections through high-dimensional input
//! space, with CSV and PPM renderers.

use std::env;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Network;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Predicted class and its softmax probability. Ties break to the lowest
/// class index; non-finite logits are rejected.
pub fn confidence(logits: &[f64]) -> Result<(usize, f64)> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 logits, got {}",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "confidence logits".into(),
        });
    }
    let p = softmax(logits);
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    Ok((best, p[best]))
}

#[derive(Debug, Clone)]
pub struct ConfidenceHistogram {
    /// Bin counts over `[0, 1]`, equal width.
    pub counts: Vec<usize>,
    /// Raw confidences, kept so arbitrary thresholds stay exact.
    pub confidences: Vec<f64>,
}

impl ConfidenceHistogram {
    pub fn new(confidences: Vec<f64>, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("need at least one bin".into()));
        }
        let mut counts = vec![0usize; bins];
        for &c in &confidences {
            let mut b = (c * bins as f64) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1;
        }
        Ok(Self { counts, confidences })
    }

    pub fn total(&self) -> usize {
        self.confidences.len()
    }

    /// Fraction of confidences strictly above the threshold.
    pub fn fraction_above(&self, theta: f64) -> f64 {
        if self.confidences.is_empty() {
            return 0.0;
        }
        self.confidences.iter().filter(|&&c| c > theta).count() as f64 / self.confidences.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let bins = self.counts.len();
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (i, &c) in self.counts.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{}\n",
                i as f64 / bins as f64,
                (i + 1) as f64 / bins as f64,
                c
            ));
        }
        s
    }
}

/// Histogram of prediction confidences over a dataset.
pub fn histogram_confidences(net: &Network, ds: &Dataset, bins: usize) -> Result<ConfidenceHistogram> {
    let logits = batch_logits(net, ds)?;
    let mut confs = Vec::with_capacity(ds.len());
    for row in &logits {
        confs.push(confidence(row)?.1);
    }
    ConfidenceHistogram::new(confs, bins)
}

/// Fraction of the dataset whose top confidence falls below `theta`.
/// `theta` must exceed chance level `1/num_classes` and stay below 1.
pub fn rejection_rate(net: &Network, ds: &Dataset, theta: f64) -> Result<f64> {
    let k = net.out_dim().unwrap_or(ds.num_classes);
    if !(theta > 1.0 / k as f64 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {} outside ({}, 1)",
            theta,
            1.0 / k as f64
        )));
    }
    let logits = batch_logits(net, ds)?;
    let mut rejected = 0usize;
    for row in &logits {
        if confidence(row)?.1 < theta {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / ds.len() as f64)
}

/// Fraction of the dataset classified correctly.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    let logits = batch_logits(net, ds)?;
    let mut correct = 0usize;
    for (row, &label) in logits.iter().zip(&ds.labels) {
        if confidence(row)?.0 == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn batch_logits(net: &Network, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<&[f64]> = (0..ds.len()).map(|i| ds.input(i)).collect();
    map_rows(&rows, |x| net.logits(x))
}

/// Worker cap from the `FGN_THREADS` environment variable; defaults to the
/// machine's parallelism.
pub fn worker_count() -> usize {
    env::var("FGN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Apply `f` to every row, fanning out over [`worker_count`] scoped
/// threads. Output order matches input order.
fn map_rows<T: Send>(rows: &[&[f64]], f: impl Fn(&[f64]) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = worker_count().min(rows.len()).max(1);
    if workers == 1 {
        return rows.iter().map(|r| f(r)).collect();
    }
    let chunk = rows.len().div_ceil(workers);
    let mut results: Vec<Option<Result<T>>> = Vec::with_capacity(rows.len());
    results.resize_with(rows.len(), || None);
    std::thread::scope(|scope| {
        for (slot_chunk, row_chunk) in results.chunks_mut(chunk).zip(rows.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, row) in slot_chunk.iter_mut().zip(row_chunk) {
                    *slot = Some(f(row));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("filled")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Cells hold predicted class and confidence.
    ClassConfidence,
    /// Cells hold a raw scalar value (class field unused).
    RawValue,
}

/// A rectangular evaluation grid, row `j` indexing the second axis.
#[derive(Debug, Clone)]
pub struct GridRender {
    pub width: usize,
    pub height: usize,
    /// `(class, value)` per cell, row-major with `x` fastest.
    pub cells: Vec<(usize, f64)>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub mode: GridMode,
}

impl GridRender {
    pub fn cell(&self, ix: usize, iy: usize) -> (usize, f64) {
        self.cells[iy * self.width + ix]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("ix,iy,x,y,class,value\n");
        for iy in 0..self.height {
            for ix in 0..self.width {
                let (c, v) = self.cell(ix, iy);
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    ix,
                    iy,
                    grid_coord(self.x_range, ix, self.width),
                    grid_coord(self.y_range, iy, self.height),
                    c,
                    v
                ));
            }
        }
        s
    }
}

fn grid_coord(range: (f64, f64), i: usize, n: usize) -> f64 {
    if n <= 1 {
        return (range.0 + range.1) / 2.0;
    }
    range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
}

/// Classify every point of a 2-D grid with a 2-input network.
pub fn activity_heatmap(
    net: &Network,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> Result<GridRender> {
    if net.in_dim() != Some(2) {
        return Err(Error::InvalidArgument(
            "activity heatmap needs a 2-input network".into(),
        ));
    }
    grid_eval(x_range, y_range, resolution, GridMode::ClassConfidence, |x, y| {
        let logits = net.logits(&[x, y])?;
        confidence(&logits)
    })
}

/// Evaluate an arbitrary scalar field over a 2-D grid (single-neuron
/// views: raw output, Gaussian component, and similar).
pub fn value_heatmap(
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    f: impl Fn(f64, f64) -> Result<f64> + Sync,
) -> Result<GridRender> {
    grid_eval(x_range, y_range, resolution, GridMode::RawValue, |x, y| {
        Ok((0, f(x, y)?))
    })
}

fn grid_eval(
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
    mode: GridMode,
    f: impl Fn(f64, f64) -> Result<(usize, f64)> + Sync,
) -> Result<GridRender> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let pts: Vec<Vec<f64>> = (0..resolution * resolution)
        .map(|i| {
            vec![
                grid_coord(x_range, i % resolution, resolution),
                grid_coord(y_range, i / resolution, resolution),
            ]
        })
        .collect();
    let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let cells = map_rows(&refs, |p| f(p[0], p[1]))?;
    Ok(GridRender {
        width: resolution,
        height: resolution,
        cells,
        x_range,
        y_range,
        mode,
    })
}

/// Orthonormalize `d2` against `d1` (Gram-Schmidt). Errors if either
/// direction is degenerate.
pub fn orthonormal_pair(d1: &[f64], d2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n1: f64 = d1.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 < 1e-12 {
        return Err(Error::InvalidArgument("first direction is zero".into()));
    }
    let u1: Vec<f64> = d1.iter().map(|v| v / n1).collect();
    let dot: f64 = d2.iter().zip(&u1).map(|(&a, &b)| a * b).sum();
    let mut u2: Vec<f64> = d2.iter().zip(&u1).map(|(&a, &b)| a - dot * b).collect();
    let n2: f64 = u2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n2 < 1e-9 * (1.0 + dot.abs()) {
        return Err(Error::InvalidArgument(
            "directions are parallel; cross-section plane is degenerate".into(),
        ));
    }
    for v in &mut u2 {
        *v /= n2;
    }
    Ok((u1, u2))
}

/// A random direction orthogonal to `d1`.
pub fn random_orthogonal(d1: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..16 {
        let cand: Vec<f64> = (0..d1.len()).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok((_, u2)) = orthonormal_pair(d1, &cand) {
            return Ok(u2);
        }
    }
    Err(Error::InvalidArgument(
        "could not find an orthogonal direction".into(),
    ))
}

/// Classify the plane `center + u * e1 + v * e2` for `u, v` in
/// `[-half_width, half_width]`, where `e1, e2` orthonormalize the given
/// directions.
pub fn cross_section(
    net: &Network,
    center: &[f64],
    dir1: &[f64],
    dir2: &[f64],
    half_width: f64,
    resolution: usize,
) -> Result<GridRender> {
    if !(half_width > 0.0) {
        return Err(Error::InvalidArgument("half width must be positive".into()));
    }
    let (e1, e2) = orthonormal_pair(dir1, dir2)?;
    if center.len() != e1.len() {
        return Err(Error::Dimension {
            context: "cross_section".into(),
            expected: center.len(),
            got: e1.len(),
        });
    }
    let range = (-half_width, half_width);
    grid_eval(range, range, resolution, GridMode::ClassConfidence, |u, v| {
        let point: Vec<f64> = center
            .iter()
            .zip(&e1)
            .zip(&e2)
            .map(|((&c, &a), &b)| c + u * a + v * b)
            .collect();
        confidence(&net.logits(&point)?)
    })
}

/// Fixed palette for up to ten classes.
const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
    [0, 128, 128],
];

/// Write the grid as a binary PPM (P6) image. Class confidence scales the
/// class color from black (chance) to full; raw values map negative to
/// blue, positive to red.
pub fn write_ppm(grid: &GridRender, num_classes: usize, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(grid.width * grid.height * 3 + 32);
    buf.extend_from_slice(format!("P6\n{} {}\n255\n", grid.width, grid.height).as_bytes());
    let chance = 1.0 / num_classes.max(2) as f64;
    for iy in 0..grid.height {
        for ix in 0..grid.width {
            let (class, v) = grid.cell(ix, iy);
            let rgb = match grid.mode {
                GridMode::ClassConfidence => {
                    let t = ((v - chance) / (1.0 - chance)).clamp(0.0, 1.0);
                    let base = PALETTE[class % PALETTE.len()];
                    [
                        (base[0] as f64 * t) as u8,
                        (base[1] as f64 * t) as u8,
                        (base[2] as f64 * t) as u8,
                    ]
                }
                GridMode::RawValue => {
                    let t = v.tanh();
                    if t >= 0.0 {
                        [(255.0 * t) as u8, 0, 0]
                    } else {
                        [0, 0, (255.0 * -t) as u8]
                    }
                }
            };
            buf.extend_from_slice(&rgb);
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}
