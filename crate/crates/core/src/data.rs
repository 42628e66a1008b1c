//! In-memory dataset handling: a seeded synthetic generator of vascular-tree
//! images, intensity normalization, photometric augmentation, and k-fold
//! splitting. On-disk PNG I/O lives in the companion CLI crate.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Mask;
use crate::rng::{stream, Domain};
use crate::tensor::Tensor;

/// Which partition a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Not yet assigned to any partition.
    Unsplit,
}

/// One image/mask pair, with the image already normalized to `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct SegmentationSample {
    /// Shape `[1, 1, H, W]`, values in `[-1, 1]`.
    pub image: Tensor<f32>,
    pub mask: Mask,
    pub id: String,
    pub split: Split,
}

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("image value {value} outside [0, 1]")]
    OutOfRange { value: f64 },
    #[error("image must be finite and in [-1, 1]; found {value}")]
    BadImage { value: f64 },
    #[error("image {ih}x{iw} and mask {mh}x{mw} shapes differ")]
    ImageMaskShape { ih: usize, iw: usize, mh: usize, mw: usize },
    #[error("k-fold split needs 2 <= k <= n_samples; got k={k}, n={n}")]
    BadFolds { k: usize, n: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(&'static str),
}

impl SegmentationSample {
    pub fn new(image: Tensor<f32>, mask: Mask, id: String, split: Split) -> Result<Self, DataError> {
        let [n, c, h, w] = image.shape();
        debug_assert_eq!((n, c), (1, 1));
        if (h, w) != (mask.height, mask.width) {
            return Err(DataError::ImageMaskShape { ih: h, iw: w, mh: mask.height, mw: mask.width });
        }
        for &v in image.data() {
            if !v.is_finite() || !(-1.0..=1.0).contains(&v) {
                return Err(DataError::BadImage { value: v as f64 });
            }
        }
        Ok(Self { image, mask, id, split })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[3]
    }

    /// The mask as a 0/1 float tensor of shape `[1, 1, H, W]`.
    pub fn mask_tensor(&self) -> Tensor<f32> {
        mask_to_tensor(&self.mask)
    }

    /// Foreground fraction of the mask.
    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.mask.data.iter().filter(|&&b| b).count();
        fg as f64 / self.mask.data.len() as f64
    }
}

pub fn mask_to_tensor(mask: &Mask) -> Tensor<f32> {
    Tensor::from_vec(
        [1, 1, mask.height, mask.width],
        mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
}

/// Stack samples into batched image and mask tensors.
pub fn collate(samples: &[&SegmentationSample]) -> (Tensor<f32>, Tensor<f32>) {
    assert!(!samples.is_empty());
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask_tensor()).collect();
    let mask_refs: Vec<&Tensor<f32>> = masks.iter().collect();
    (Tensor::concat_batch(&images), Tensor::concat_batch(&mask_refs))
}

/// Map `[0, 1]` intensities to `[-1, 1]` (zero-centered, unit half-range).
pub fn normalize(image01: &Tensor<f32>) -> Result<Tensor<f32>, DataError> {
    for &v in image01.data() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(DataError::OutOfRange { value: v as f64 });
        }
    }
    Ok(image01.map(|v| (v - 0.5) / 0.5))
}

/// Inverse of [`normalize`]: `[-1, 1]` back to `[0, 1]`.
pub fn denormalize(image: &Tensor<f32>) -> Tensor<f32> {
    image.map(|v| (v * 0.5 + 0.5).clamp(0.0, 1.0))
}

/// Photometric augmentation magnitudes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Brightness offset is drawn from `U(-brightness_delta, +brightness_delta)`.
    pub brightness_delta: f64,
    /// Contrast factor is drawn from `U(contrast_range.0, contrast_range.1)`.
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { brightness_delta: 0.2, contrast_range: (0.8, 1.2) }
    }
}

/// Contrast-then-brightness on a `[0, 1]` image: scale about the image mean
/// by `factor`, add `delta`, clamp back to `[0, 1]`.
pub fn apply_brightness_contrast(image01: &Tensor<f32>, delta: f64, factor: f64) -> Tensor<f32> {
    let n = image01.data().len() as f64;
    let mean = image01.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    image01.map(|v| (((v as f64 - mean) * factor + mean + delta).clamp(0.0, 1.0)) as f32)
}

/// Randomly jitter brightness and contrast; the mask and id are untouched.
pub fn augment<R: Rng>(
    sample: &SegmentationSample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> SegmentationSample {
    let delta = if cfg.brightness_delta > 0.0 {
        rng.random_range(-cfg.brightness_delta..cfg.brightness_delta)
    } else {
        0.0
    };
    let factor = if cfg.contrast_range.0 < cfg.contrast_range.1 {
        rng.random_range(cfg.contrast_range.0..cfg.contrast_range.1)
    } else {
        cfg.contrast_range.0
    };
    let image01 = denormalize(&sample.image);
    let jittered = apply_brightness_contrast(&image01, delta, factor);
    // Re-normalize arithmetically: the clamp above keeps finite values in
    // [0, 1], and augmentation itself never fails (non-finite inputs pass
    // through for the training loop's NaN abort to catch).
    let image = jittered.map(|v| (v - 0.5) / 0.5);
    SegmentationSample {
        image,
        mask: sample.mask.clone(),
        id: sample.id.clone(),
        split: sample.split,
    }
}

/// Settings of the synthetic vascular-tree generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub image_size: usize,
    /// Total branch count of the tree, root included.
    pub n_branches: usize,
    /// Vessel widths in pixels; all stroked widths stay inside this range.
    pub vessel_width_range: (f64, f64),
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Count of soft background distractors (blobs/gradients).
    pub background_structures: usize,
    /// Vessel attenuation depth relative to the background.
    pub contrast_range: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 256,
            n_branches: 6,
            vessel_width_range: (1.0, 8.0),
            noise_sigma: 0.02,
            background_structures: 4,
            contrast_range: (0.35, 0.6),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let (lo, hi) = self.vessel_width_range;
        if lo < 1.0 || hi < lo {
            return Err(DataError::InvalidConfig("vessel_width_range must satisfy 1 <= lo <= hi"));
        }
        if self.image_size < 16 {
            return Err(DataError::InvalidConfig("image_size must be at least 16"));
        }
        if self.n_branches == 0 {
            return Err(DataError::InvalidConfig("n_branches must be positive"));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::InvalidConfig("noise_sigma must be non-negative"));
        }
        let (clo, chi) = self.contrast_range;
        if !(0.0..=1.0).contains(&clo) || chi < clo || chi > 1.0 {
            return Err(DataError::InvalidConfig("contrast_range must satisfy 0 <= lo <= hi <= 1"));
        }
        Ok(())
    }

    /// Check the image size against a network's total downsampling factor.
    pub fn validate_for(&self, scale_factor: usize) -> Result<(), DataError> {
        self.validate()?;
        if self.image_size % scale_factor != 0 {
            return Err(DataError::InvalidConfig("image_size not divisible by the network scale factor"));
        }
        Ok(())
    }
}

/// One polyline step of a traced branch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BranchStep {
    pub y: f64,
    pub x: f64,
    pub width: f64,
    pub heading: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct TracedBranch {
    pub steps: Vec<BranchStep>,
}

struct BranchSpec {
    pos: (f64, f64),
    heading: f64,
    width: f64,
    len: usize,
}

/// Curvature-limited random walks forming a breadth-first branching tree.
fn trace_tree<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Vec<TracedBranch> {
    let s = cfg.image_size as f64;
    let (wmin, wmax) = cfg.vessel_width_range;
    let root = BranchSpec {
        pos: (rng.random_range(0.35 * s..0.65 * s), rng.random_range(0.35 * s..0.65 * s)),
        heading: rng.random_range(0.0..TAU),
        // Kept below wmax so tapered strokes stay strictly inside the range.
        width: (rng.random_range(0.62 * wmax..0.85 * wmax)).max(wmin),
        len: rng.random_range((0.55 * s) as usize..(0.95 * s) as usize),
    };
    let mut queue = VecDeque::from([root]);
    let mut spawned = 1usize;
    let mut out = Vec::new();
    while let Some(spec) = queue.pop_front() {
        let mut steps = Vec::with_capacity(spec.len);
        let (mut y, mut x) = spec.pos;
        let mut heading = spec.heading;
        for t in 0..spec.len {
            let frac = t as f64 / spec.len as f64;
            let width = (spec.width * (1.0 - 0.55 * frac)).max(wmin);
            steps.push(BranchStep { y, x, width, heading });
            heading += rng.random_range(-0.13..0.13);
            y += heading.sin();
            x += heading.cos();
            if y < 1.0 || x < 1.0 || y > s - 2.0 || x > s - 2.0 {
                break;
            }
        }
        let mut kids = 0usize;
        while spawned < cfg.n_branches && kids < 2 && steps.len() >= 10 {
            let si = rng.random_range(steps.len() / 5..steps.len() * 4 / 5);
            let at = steps[si];
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            queue.push_back(BranchSpec {
                pos: (at.y, at.x),
                heading: at.heading + side * rng.random_range(0.4..0.9),
                width: (at.width * rng.random_range(0.55..0.8)).max(wmin),
                len: rng.random_range((0.25 * s) as usize..(0.6 * s) as usize),
            });
            spawned += 1;
            kids += 1;
        }
        out.push(TracedBranch { steps });
    }
    out
}

/// Smooth gradients plus soft elliptical blobs standing in for anatomy.
fn render_background<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Vec<f64> {
    let s = cfg.image_size;
    let sf = s as f64;
    let base = rng.random_range(0.55..0.75);
    let mut img = vec![base; s * s];
    let phi = rng.random_range(0.0..TAU);
    let amp = rng.random_range(0.04..0.12);
    let (cy, cx) = (sf / 2.0, sf / 2.0);
    for y in 0..s {
        for x in 0..s {
            let proj = ((x as f64 - cx) * phi.cos() + (y as f64 - cy) * phi.sin()) / sf;
            img[y * s + x] += amp * proj;
        }
    }
    for _ in 0..cfg.background_structures {
        let by = rng.random_range(0.0..sf);
        let bx = rng.random_range(0.0..sf);
        let sy = rng.random_range(sf / 10.0..sf / 3.0);
        let sx = rng.random_range(sf / 10.0..sf / 3.0);
        let blob_amp = rng.random_range(-0.10..0.12);
        for y in 0..s {
            for x in 0..s {
                let q = ((y as f64 - by) / sy).powi(2) + ((x as f64 - bx) / sx).powi(2);
                img[y * s + x] += blob_amp * (-0.5 * q).exp();
            }
        }
    }
    img
}

/// Stroke the tree into a mask and an attenuation map.
fn paint<R: Rng>(
    cfg: &GeneratorConfig,
    branches: &[TracedBranch],
    rng: &mut R,
) -> (Mask, Vec<f64>) {
    let s = cfg.image_size;
    let mut mask = Mask::zeros(s, s);
    let mut att = vec![0.0f64; s * s];
    let contrast = rng.random_range(cfg.contrast_range.0..=cfg.contrast_range.1);
    for branch in branches {
        for step in &branch.steps {
            let r = step.width * 0.5;
            let soft_r = r + 1.0;
            let y0 = (step.y - soft_r).floor().max(0.0) as usize;
            let y1 = ((step.y + soft_r).ceil() as usize).min(s - 1);
            let x0 = (step.x - soft_r).floor().max(0.0) as usize;
            let x1 = ((step.x + soft_r).ceil() as usize).min(s - 1);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let d = ((py as f64 - step.y).powi(2) + (px as f64 - step.x).powi(2)).sqrt();
                    if d <= r {
                        mask.data[py * s + px] = true;
                    }
                    let soft = 1.0 - (d / (r + 0.8)).powi(2);
                    if soft > 0.0 {
                        let a = contrast * soft;
                        if a > att[py * s + px] {
                            att[py * s + px] = a;
                        }
                    }
                }
            }
            // Thin strokes must stay connected even when no pixel center
            // falls inside the disk.
            let (ry, rx) = (step.y.round() as usize, step.x.round() as usize);
            if ry < s && rx < s {
                mask.data[ry * s + rx] = true;
            }
        }
    }
    (mask, att)
}

pub(crate) fn generate_parts(
    cfg: &GeneratorConfig,
    index: usize,
) -> Result<(Vec<TracedBranch>, SegmentationSample), DataError> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Domain::Generator, index as u64);
    let mut img = render_background(cfg, &mut rng);
    let branches = trace_tree(cfg, &mut rng);
    let (mask, att) = paint(cfg, &branches, &mut rng);
    for (v, a) in img.iter_mut().zip(att.iter()) {
        *v -= a;
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        for v in img.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let s = cfg.image_size;
    let image01 = Tensor::<f32>::from_vec(
        [1, 1, s, s],
        img.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
    );
    let image = normalize(&image01)?;
    let sample = SegmentationSample::new(image, mask, format!("synth-{index:04}"), Split::Unsplit)?;
    Ok((branches, sample))
}

/// Deterministically generate the `index`-th synthetic sample.
pub fn generate_sample(cfg: &GeneratorConfig, index: usize) -> Result<SegmentationSample, DataError> {
    generate_parts(cfg, index).map(|(_, sample)| sample)
}

/// Seeded k-fold partition of `0..n_samples`: returns `(train, val)` index
/// pairs; validation folds are disjoint, cover everything, and differ in
/// size by at most one.
pub fn kfold_split(
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DataError> {
    if k < 2 || k > n_samples {
        return Err(DataError::BadFolds { k, n: n_samples });
    }
    let mut indices: Vec<usize> = (0..n_samples).collect();
    let mut rng = stream(seed, Domain::DataOrder, 0);
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let base = n_samples / k;
    let extra = n_samples % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0usize;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let mut val: Vec<usize> = indices[start..start + size].to_vec();
        let mut train: Vec<usize> = indices[..start]
            .iter()
            .chain(indices[start + size..].iter())
            .copied()
            .collect();
        val.sort_unstable();
        train.sort_unstable();
        folds.push((train, val));
        start += size;
    }
    Ok(folds)
}
