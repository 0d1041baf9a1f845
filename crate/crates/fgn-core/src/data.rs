//! Dataset loading and generation: IDX image files, random probes, toy
//! 2-D problems, and 1-D signals.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standardization constants for grayscale digit images.
pub const DIGITS_MEAN: f64 = 0.1307;
pub const DIGITS_STD: f64 = 0.3081;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n x dim]`
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// `(mean, std)` applied to the raw inputs, if any.
    pub normalization: Option<(f64, f64)>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension {
                context: "Dataset::new".into(),
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if !inputs.all_finite() {
            return Err(Error::NonFinite {
                context: "Dataset::new inputs".into(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} out of {} classes",
                bad, num_classes
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Inputs multiplied by a constant factor; labels unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            inputs: self.inputs.map(|v| v * factor),
            ..self.clone()
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self::new(Tensor::matrix(indices.len(), dim, data)?, labels, self.num_classes)?;
        out.normalization = self.normalization;
        Ok(out)
    }

    pub fn take(&self, n: usize) -> Result<Self> {
        self.subset(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    pub fn skip(&self, n: usize) -> Result<Self> {
        self.subset(&(n.min(self.len())..self.len()).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            for v in self.input(i) {
                s.push_str(&format!("{},", v));
            }
            s.push_str(&format!("{}\n", self.labels[i]));
        }
        s
    }
}

pub fn normalize_value(v: f64, mean: f64, std: f64) -> f64 {
    (v - mean) / std
}

pub fn denormalize_value(v: f64, mean: f64, std: f64) -> f64 {
    v * std + mean
}

fn be_u32(bytes: &[u8], off: usize, path: &str) -> Result<u32> {
    let chunk: [u8; 4] = bytes
        .get(off..off + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Parse {
            location: format!("{}:{:#x}", path, off),
            detail: "unexpected end of file".into(),
        })?;
    Ok(u32::from_be_bytes(chunk))
}

/// Load an IDX image/label file pair. Pixels are scaled to `[0, 1]`;
/// `normalize` additionally standardizes with the digit constants.
pub fn load_idx(images_path: &Path, labels_path: &Path, normalize: bool) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();
    let img = fs::read(images_path)?;
    let lbl = fs::read(labels_path)?;

    let magic = be_u32(&img, 0, &img_name)?;
    if magic != 2051 {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", img_name, 0),
            detail: format!("bad image magic {} (want 2051)", magic),
        });
    }
    let n = be_u32(&img, 4, &img_name)? as usize;
    let rows = be_u32(&img, 8, &img_name)? as usize;
    let cols = be_u32(&img, 12, &img_name)? as usize;
    let dim = rows * cols;
    if img.len() != 16 + n * dim {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", img_name, img.len().min(16 + n * dim)),
            detail: format!("expected {} pixel bytes, file has {}", n * dim, img.len() - 16),
        });
    }

    let lmagic = be_u32(&lbl, 0, &lbl_name)?;
    if lmagic != 2049 {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", lbl_name, 0),
            detail: format!("bad label magic {} (want 2049)", lmagic),
        });
    }
    let ln = be_u32(&lbl, 4, &lbl_name)? as usize;
    if ln != n {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", lbl_name, 4),
            detail: format!("{} labels for {} images", ln, n),
        });
    }
    if lbl.len() != 8 + n {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", lbl_name, lbl.len().min(8 + n)),
            detail: format!("expected {} label bytes, file has {}", n, lbl.len() - 8),
        });
    }

    let mut data = Vec::with_capacity(n * dim);
    for &b in &img[16..] {
        let v = b as f64 / 255.0;
        data.push(if normalize {
            normalize_value(v, DIGITS_MEAN, DIGITS_STD)
        } else {
            v
        });
    }
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    if let Some(off) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Parse {
            location: format!("{}:{:#x}", lbl_name, 8 + off),
            detail: format!("label {} out of range", labels[off]),
        });
    }
    let mut ds = Dataset::new(Tensor::matrix(n, dim, data)?, labels, 10)?;
    if normalize {
        ds.normalization = Some((DIGITS_MEAN, DIGITS_STD));
    }
    Ok(ds)
}

/// Write byte images (`[n x rows*cols]`, values in `[0, 1]`) and labels in
/// IDX format.
pub fn save_idx(
    images: &Tensor,
    labels: &[usize],
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let n = images.rows();
    if images.cols() != rows * cols {
        return Err(Error::Dimension {
            context: "save_idx".into(),
            expected: rows * cols,
            got: images.cols(),
        });
    }
    if labels.len() != n {
        return Err(Error::Dimension {
            context: "save_idx labels".into(),
            expected: n,
            got: labels.len(),
        });
    }
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    img.extend_from_slice(&2051u32.to_be_bytes());
    img.extend_from_slice(&(n as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in images.data() {
        img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&2049u32.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend(labels.iter().map(|&l| l as u8));
    fs::File::create(images_path)?.write_all(&img)?;
    fs::File::create(labels_path)?.write_all(&lbl)?;
    Ok(())
}

/// Uniform random inputs in `[lo, hi]`; labels are a single sentinel class.
pub fn gen_full_random(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("empty random dataset".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("bad range [{}, {}]", lo, hi)));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(lo..hi)).collect();
    Dataset::new(Tensor::matrix(n, dim, data)?, vec![0; n], 1)
}

/// Independently permute the pixels of every image. The per-image multiset
/// of values is preserved exactly.
pub fn shuffle_pixels(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let dim = ds.dim();
    let mut out = ds.clone();
    for i in 0..ds.len() {
        let row = &mut out.inputs.data_mut()[i * dim..(i + 1) * dim];
        for j in (1..dim).rev() {
            row.swap(j, rng.gen_range(0..=j));
        }
    }
    out
}

/// Two Gaussian blobs (std 0.5) on either side of the line through the
/// origin and `(1, 1)`, offset along the normal direction.
pub fn gen_toy_linear(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty toy dataset".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    // normal to the line y = x
    let (nx, ny) = (-inv_sqrt2, inv_sqrt2);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let side = if class == 0 { 1.5 } else { -1.5 };
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        data.push(1.0 + side * nx + 0.5 * gx);
        data.push(1.0 + side * ny + 0.5 * gy);
        labels.push(class);
    }
    Dataset::new(Tensor::matrix(n, 2, data)?, labels, 2)
}

/// Class 0 uniform over the unit disk, class 1 uniform over the annulus
/// with radius in `[1.5, 2.5]`, both centered at the origin.
pub fn gen_toy_rings(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty toy dataset".into()));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let r = if class == 0 {
            rng.gen_range(0.0f64..1.0).sqrt()
        } else {
            let (a, b) = (1.5f64, 2.5f64);
            (rng.gen_range(0.0f64..1.0) * (b * b - a * a) + a * a).sqrt()
        };
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        data.push(r * theta.cos());
        data.push(r * theta.sin());
        labels.push(class);
    }
    Dataset::new(Tensor::matrix(n, 2, data)?, labels, 2)
}

/// Uniform white-noise 1-D signals in `[lo, hi]`; sentinel labels.
pub fn gen_white_noise(n: usize, length: usize, lo: f64, hi: f64, seed: u64) -> Result<Dataset> {
    gen_full_random(n, length, lo, hi, seed)
}

/// Small synthetic digit images: ten fixed binary-mask prototypes over a
/// `side x side` grid with per-sample Gaussian pixel noise. Intended for
/// self-contained experiments; the images round-trip through IDX files.
pub fn gen_synthetic_digits(n: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || side < 4 {
        return Err(Error::InvalidArgument("synthetic digits need n > 0 and side >= 4".into()));
    }
    let dim = side * side;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5eed_d161);
    let mut prototypes = Vec::with_capacity(10);
    for _ in 0..10 {
        let mask: Vec<f64> = (0..dim)
            .map(|_| if rng.gen_range(0.0..1.0) < 0.2 { 1.0 } else { 0.0 })
            .collect();
        prototypes.push(mask);
    }
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        for &m in &prototypes[class] {
            let noise: f64 = rng.sample(StandardNormal);
            data.push((m * 0.85 + 0.1 * noise).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, 10)
}

/// Seeded Fisher-Yates shuffle of sample indices.
pub fn shuffled_indices(n: usize, rng: &mut Xoshiro256PlusPlus) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for j in (1..n).rev() {
        idx.swap(j, rng.gen_range(0..=j));
    }
    idx
}
