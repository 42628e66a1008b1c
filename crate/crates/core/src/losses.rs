//! Training losses: BCE, Dice, and the two contrastive terms with
//! prototype construction.
//!
//! Every loss returns its scalar value together with the gradient w.r.t.
//! the quantity the optimizer needs (probabilities for the mask losses,
//! embedding vectors for the contrastive ones). Prototypes are built
//! per batch and treated as constants by the gradient (no backprop
//! through cluster assignment).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

/// Label value marking pixels excluded from the contrastive losses.
pub const IGNORE: u8 = 255;

/// Probability clamp for the cross-entropy logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Weights of the composite training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::BadWeight { field: name, value: v });
            }
        }
        Ok(())
    }
}

/// Hyperparameters of the contrastive terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    /// Softmax temperature of the pairwise term.
    pub tau: f64,
    /// Number of foreground prototypes.
    pub n_p: usize,
    /// Hinge margin on cosine distance, in (0, 2].
    pub margin: f64,
    /// Weight of the foreground (pull) term.
    pub w1: f64,
    /// Weight of the background (push) term.
    pub w0: f64,
    /// Pixel cap for the pairwise term; larger batches are subsampled.
    pub max_pixels: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { tau: 1.0, n_p: 2, margin: 0.5, w1: 1.0, w0: 1.0, max_pixels: 1024 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(LossError::BadWeight { field: "tau", value: self.tau });
        }
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(LossError::BadWeight { field: "margin", value: self.margin });
        }
        if self.n_p == 0 {
            return Err(LossError::BadWeight { field: "n_p", value: 0.0 });
        }
        for (name, v) in [("w1", self.w1), ("w0", self.w0)] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::BadWeight { field: name, value: v });
            }
        }
        Ok(())
    }
}

/// Per-pixel class labels at embedding resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(batch: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self, LossError> {
        if data.len() != batch * height * width {
            return Err(LossError::ShapeMismatch {
                context: "label buffer length",
                expected: batch * height * width,
                got: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|&&v| v != 0 && v != 1 && v != IGNORE) {
            return Err(LossError::BadLabel { value: bad });
        }
        Ok(Self { batch, height, width, data })
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> u8 {
        self.data[(b * self.height + y) * self.width + x]
    }
}

/// Unit-norm embedding vectors paired with their labels.
pub struct EmbeddingMap<T> {
    pub vectors: Tensor<T>,
    pub labels: LabelMap,
}

impl<T: Scalar> EmbeddingMap<T> {
    /// Validates shape agreement and unit norms of non-ignored pixels.
    pub fn new(vectors: Tensor<T>, labels: LabelMap) -> Result<Self, LossError> {
        let [n, c, h, w] = vectors.shape();
        if (labels.batch, labels.height, labels.width) != (n, h, w) {
            return Err(LossError::ShapeMismatch {
                context: "label grid vs embedding grid",
                expected: n * h * w,
                got: labels.batch * labels.height * labels.width,
            });
        }
        let plane = h * w;
        for b in 0..n {
            let src = vectors.sample(b);
            for p in 0..plane {
                if labels.data[b * plane + p] == IGNORE {
                    continue;
                }
                let mut sq = T::zero();
                for ch in 0..c {
                    let v = src[ch * plane + p];
                    sq += v * v;
                }
                if (sq.sqrt().as_f64() - 1.0).abs() > 1e-5 {
                    return Err(LossError::NotUnitNorm { norm: sq.sqrt().as_f64() });
                }
            }
        }
        Ok(Self { vectors, labels })
    }

    /// Skips validation; for internal plumbing and perturbation tests.
    pub fn new_unchecked(vectors: Tensor<T>, labels: LabelMap) -> Self {
        Self { vectors, labels }
    }

    fn vector(&self, b: usize, p: usize) -> Vec<T> {
        let [_, c, h, w] = self.vectors.shape();
        let plane = h * w;
        let src = self.vectors.sample(b);
        (0..c).map(|ch| src[ch * plane + p]).collect()
    }
}

/// Foreground cluster centers, unit-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet<T> {
    pub vectors: Vec<Vec<T>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{context}: expected {expected} elements, got {got}")]
    ShapeMismatch { context: &'static str, expected: usize, got: usize },
    #[error("label value {value} is not 0, 1, or IGNORE")]
    BadLabel { value: u8 },
    #[error("embedding vector norm {norm} is not 1 within 1e-5")]
    NotUnitNorm { norm: f64 },
    #[error("{field} = {value} is out of range")]
    BadWeight { field: &'static str, value: f64 },
    #[error("downsampling factor {factor} does not divide {h}x{w}")]
    NonDivisibleFactor { factor: usize, h: usize, w: usize },
    #[error("no foreground pixels in batch; prototypes undefined")]
    EmptyForeground,
    #[error("no positive pair among the sampled pixels")]
    NoPositivePairs,
    #[error("prototype set is empty")]
    EmptyPrototypes,
}

fn check_shapes<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, context: &'static str) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::ShapeMismatch { context, expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Mean binary cross-entropy of clamped probabilities against a 0/1 target.
pub fn bce_loss<T: Scalar>(pred_probs: &Tensor<T>, target: &Tensor<T>) -> Result<T, LossError> {
    Ok(bce_loss_grad(pred_probs, target)?.0)
}

/// BCE value and gradient w.r.t. the probabilities.
pub fn bce_loss_grad<T: Scalar>(
    pred_probs: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(T, Tensor<T>), LossError> {
    check_shapes(pred_probs, target, "bce prediction vs target")?;
    let n = pred_probs.len();
    let lo = T::from_f64(BCE_EPS);
    let hi = T::from_f64(1.0 - BCE_EPS);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(pred_probs.shape());
    for ((&p, &y), g) in pred_probs.iter().zip(target.iter()).zip(grad.data_mut()) {
        let clamped = p < lo || p > hi;
        let pc = p.max(lo).min(hi);
        loss -= y * pc.ln() + (T::one() - y) * (T::one() - pc).ln();
        if !clamped {
            *g = -(y / pc - (T::one() - y) / (T::one() - pc)) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Soft Dice loss with smoothing `s = 1`.
pub fn dice_loss<T: Scalar>(pred_probs: &Tensor<T>, target: &Tensor<T>) -> Result<T, LossError> {
    Ok(dice_loss_grad(pred_probs, target, 1.0)?.0)
}

/// Dice value and gradient w.r.t. the probabilities, for any smoothing.
pub fn dice_loss_grad<T: Scalar>(
    pred_probs: &Tensor<T>,
    target: &Tensor<T>,
    smoothing: f64,
) -> Result<(T, Tensor<T>), LossError> {
    check_shapes(pred_probs, target, "dice prediction vs target")?;
    let s = T::from_f64(smoothing);
    let mut inter = T::zero();
    let mut sum_p = T::zero();
    let mut sum_y = T::zero();
    for (&p, &y) in pred_probs.iter().zip(target.iter()) {
        inter += p * y;
        sum_p += p;
        sum_y += y;
    }
    let num = T::from_f64(2.0) * inter + s;
    let den = sum_p + sum_y + s;
    let loss = T::one() - num / den;
    let mut grad = Tensor::zeros(pred_probs.shape());
    let den_sq = den * den;
    for (g, &y) in grad.data_mut().iter_mut().zip(target.iter()) {
        *g = -(T::from_f64(2.0) * y * den - num) / den_sq;
    }
    Ok((loss, grad))
}

/// Average-pool a full-resolution 0/1 mask into coarse labels.
///
/// Each `factor x factor` cell becomes 1 when its mean exceeds 0.6,
/// 0 when below 0.4, and [`IGNORE`] in between (mixed cells).
pub fn downsample_labels<T: Scalar>(mask: &Tensor<T>, factor: usize) -> Result<LabelMap, LossError> {
    let [n, c, h, w] = mask.shape();
    debug_assert_eq!(c, 1, "masks are single-channel");
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(LossError::NonDivisibleFactor { factor, h, w });
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv_cell = 1.0 / (factor * factor) as f64;
    let mut data = Vec::with_capacity(n * oh * ow);
    for b in 0..n {
        let src = mask.sample(b);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0f64;
                for dy in 0..factor {
                    let row = (oy * factor + dy) * w + ox * factor;
                    for dx in 0..factor {
                        sum += src[row + dx].as_f64();
                    }
                }
                let mean = sum * inv_cell;
                data.push(if mean > 0.6 {
                    1
                } else if mean < 0.4 {
                    0
                } else {
                    IGNORE
                });
            }
        }
    }
    LabelMap::new(n, oh, ow, data)
}

/// Indices of non-ignored pixels as `(batch, plane_offset, label)`.
fn valid_pixels(labels: &LabelMap) -> Vec<(usize, usize, u8)> {
    let plane = labels.height * labels.width;
    let mut out = Vec::new();
    for b in 0..labels.batch {
        for p in 0..plane {
            let l = labels.data[b * plane + p];
            if l != IGNORE {
                out.push((b, p, l));
            }
        }
    }
    out
}

/// Class-balanced subsample of at most `cap` pixels, seeded.
fn stratified_subsample<R: Rng>(
    pixels: Vec<(usize, usize, u8)>,
    cap: usize,
    rng: &mut R,
) -> Vec<(usize, usize, u8)> {
    if pixels.len() <= cap {
        return pixels;
    }
    let (mut fg, mut bg): (Vec<_>, Vec<_>) = pixels.into_iter().partition(|&(_, _, l)| l == 1);
    let half = cap / 2;
    let (take_fg, take_bg) = if fg.len() < half {
        (fg.len(), (cap - fg.len()).min(bg.len()))
    } else if bg.len() < cap - half {
        ((cap - bg.len()).min(fg.len()), bg.len())
    } else {
        (half, cap - half)
    };
    fg.shuffle(rng);
    bg.shuffle(rng);
    let mut out: Vec<_> = fg.into_iter().take(take_fg).chain(bg.into_iter().take(take_bg)).collect();
    out.sort_unstable();
    out
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Pairwise supervised contrastive loss over the embedding grid.
///
/// For each anchor, positives are the other pixels with the same label and
/// the denominator runs over every other sampled pixel. The mean is taken
/// over positive pairs. Returns the value and the gradient w.r.t. the
/// embedding tensor (zero at unsampled pixels).
pub fn sce_loss<T: Scalar, R: Rng>(
    emb: &EmbeddingMap<T>,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<(T, Tensor<T>), LossError> {
    cfg.validate()?;
    let pixels = stratified_subsample(valid_pixels(&emb.labels), cfg.max_pixels, rng);
    let n = pixels.len();
    if n < 2 {
        return Err(LossError::NoPositivePairs);
    }
    let mut class_count = [0usize; 2];
    for &(_, _, l) in &pixels {
        class_count[l as usize] += 1;
    }
    if class_count[0] < 2 && class_count[1] < 2 {
        return Err(LossError::NoPositivePairs);
    }

    let vecs: Vec<Vec<T>> = pixels.iter().map(|&(b, p, _)| emb.vector(b, p)).collect();
    let inv_tau = T::from_f64(1.0 / cfg.tau);

    // exp(sim/tau) for all ordered pairs.
    let mut exps = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let e = (dot(&vecs[i], &vecs[j]) * inv_tau).exp();
            exps[i * n + j] = e;
            exps[j * n + i] = e;
        }
    }
    let denom: Vec<T> = (0..n)
        .map(|i| (0..n).filter(|&k| k != i).fold(T::zero(), |a, k| a + exps[i * n + k]))
        .collect();

    let mut pair_count = 0usize;
    let mut loss = T::zero();
    let pos_counts: Vec<usize> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && pixels[j].2 == pixels[i].2)
                .count()
        })
        .collect();
    for i in 0..n {
        if pos_counts[i] == 0 {
            continue;
        }
        for j in 0..n {
            if j == i || pixels[j].2 != pixels[i].2 {
                continue;
            }
            loss += denom[i].ln() - exps[i * n + j].ln();
            pair_count += 1;
        }
    }
    debug_assert!(pair_count > 0);
    let inv_pairs = T::from_f64(1.0 / pair_count as f64);
    loss *= inv_pairs;

    // dL/d(sim_ik) for ordered (i, k): |P(i)| * softmax weight minus the
    // direct positive-pair term, all over tau and the pair count.
    let mut grad = Tensor::zeros(emb.vectors.shape());
    let [_, c, h, w] = emb.vectors.shape();
    let plane = h * w;
    for i in 0..n {
        let mut gvec = vec![T::zero(); c];
        for k in 0..n {
            if k == i {
                continue;
            }
            let mut g_ik = T::zero();
            if pos_counts[i] > 0 {
                g_ik += T::from_f64(pos_counts[i] as f64) * exps[i * n + k] / denom[i];
                if pixels[k].2 == pixels[i].2 {
                    g_ik -= T::one();
                }
            }
            if pos_counts[k] > 0 {
                // Anchor k, with i inside its denominator (and positives).
                g_ik += T::from_f64(pos_counts[k] as f64) * exps[k * n + i] / denom[k];
                if pixels[k].2 == pixels[i].2 {
                    g_ik -= T::one();
                }
            }
            let scale = g_ik * inv_tau * inv_pairs;
            for ch in 0..c {
                gvec[ch] += scale * vecs[k][ch];
            }
        }
        let (b, p, _) = pixels[i];
        let dst = grad.sample_mut(b);
        for ch in 0..c {
            dst[ch * plane + p] += gvec[ch];
        }
    }
    Ok((loss, grad))
}

/// Cosine k-means over the foreground embeddings.
///
/// Farthest-point initialization from the seeded RNG, at most 10 update
/// rounds, prototypes are normalized cluster means. Fewer foreground
/// pixels than `n_p` duplicates the normalized overall mean.
pub fn build_prototypes<T: Scalar, R: Rng>(
    emb: &EmbeddingMap<T>,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<PrototypeSet<T>, LossError> {
    cfg.validate()?;
    let fg: Vec<Vec<T>> = valid_pixels(&emb.labels)
        .into_iter()
        .filter(|&(_, _, l)| l == 1)
        .map(|(b, p, _)| emb.vector(b, p))
        .collect();
    if fg.is_empty() {
        return Err(LossError::EmptyForeground);
    }
    let dim = fg[0].len();

    let normalize = |v: &[T], fallback: &[T]| -> Vec<T> {
        let norm = dot(v, v).sqrt();
        if norm.as_f64() < 1e-12 {
            fallback.to_vec()
        } else {
            v.iter().map(|&x| x / norm).collect()
        }
    };

    if fg.len() < cfg.n_p {
        let mut mean = vec![T::zero(); dim];
        for v in &fg {
            for (m, &x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        let proto = normalize(&mean, &fg[0]);
        return Ok(PrototypeSet { vectors: vec![proto; cfg.n_p] });
    }

    // Farthest-point init: random first center, then maximize the minimum
    // cosine distance to the chosen set (ties break to the lowest index).
    let mut centers: Vec<Vec<T>> = Vec::with_capacity(cfg.n_p);
    let first = rng.random_range(0..fg.len());
    centers.push(fg[first].clone());
    while centers.len() < cfg.n_p {
        let mut best_idx = 0;
        let mut best_d = T::neg_infinity();
        for (i, v) in fg.iter().enumerate() {
            let min_d = centers
                .iter()
                .map(|cen| T::one() - dot(v, cen))
                .fold(T::infinity(), |a, d| a.min(d));
            if min_d > best_d {
                best_d = min_d;
                best_idx = i;
            }
        }
        centers.push(fg[best_idx].clone());
    }

    let mut assign = vec![0usize; fg.len()];
    for _ in 0..10 {
        let mut changed = false;
        for (i, v) in fg.iter().enumerate() {
            let mut best_k = 0;
            let mut best_sim = T::neg_infinity();
            for (k, cen) in centers.iter().enumerate() {
                let s = dot(v, cen);
                if s > best_sim {
                    best_sim = s;
                    best_k = k;
                }
            }
            if assign[i] != best_k {
                assign[i] = best_k;
                changed = true;
            }
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let mut mean = vec![T::zero(); dim];
            let mut count = 0usize;
            for (i, v) in fg.iter().enumerate() {
                if assign[i] == k {
                    for (m, &x) in mean.iter_mut().zip(v.iter()) {
                        *m += x;
                    }
                    count += 1;
                }
            }
            if count > 0 {
                *center = normalize(&mean, center.clone().as_slice());
            }
        }
        if !changed {
            break;
        }
    }
    Ok(PrototypeSet { vectors: centers })
}

/// Prototype-anchored loss: squared cosine distance pulls foreground
/// pixels toward every prototype; a squared hinge pushes background
/// pixels beyond the margin. Mean over pixels and prototypes.
pub fn pcl_loss<T: Scalar>(
    emb: &EmbeddingMap<T>,
    protos: &PrototypeSet<T>,
    cfg: &ContrastiveConfig,
) -> Result<(T, Tensor<T>), LossError> {
    cfg.validate()?;
    if protos.vectors.is_empty() {
        return Err(LossError::EmptyPrototypes);
    }
    let pixels = valid_pixels(&emb.labels);
    let mut grad = Tensor::zeros(emb.vectors.shape());
    if pixels.is_empty() {
        return Ok((T::zero(), grad));
    }
    let [_, c, h, w] = emb.vectors.shape();
    let plane = h * w;
    let m = T::from_f64(cfg.margin);
    let w1 = T::from_f64(cfg.w1);
    let w0 = T::from_f64(cfg.w0);
    let inv = T::from_f64(1.0 / (pixels.len() * protos.vectors.len()) as f64);

    let mut loss = T::zero();
    for &(b, p, label) in &pixels {
        let z = emb.vector(b, p);
        let mut gvec = vec![T::zero(); c];
        for proto in &protos.vectors {
            let d = T::one() - dot(&z, proto);
            if label == 1 {
                loss += w1 * d * d;
                // d(D^2)/dz = -2 D p
                let s = -T::from_f64(2.0) * w1 * d * inv;
                for ch in 0..c {
                    gvec[ch] += s * proto[ch];
                }
            } else {
                let gap = m - d;
                if gap > T::zero() {
                    loss += w0 * gap * gap;
                    // d(max(0, m-D)^2)/dz = +2 (m-D) p
                    let s = T::from_f64(2.0) * w0 * gap * inv;
                    for ch in 0..c {
                        gvec[ch] += s * proto[ch];
                    }
                }
            }
        }
        let dst = grad.sample_mut(b);
        for ch in 0..c {
            dst[ch * plane + p] += gvec[ch];
        }
    }
    Ok((loss * inv, grad))
}

/// Per-term values of one composite loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    pub bce: T,
    pub dice: T,
    pub sce: T,
    pub pcl: T,
    pub total: T,
    /// The pairwise term was skipped (no positive pair in the batch).
    pub sce_skipped: bool,
    /// The prototype term was skipped (no foreground in the batch).
    pub pcl_skipped: bool,
}

/// Composite loss result: breakdown plus gradients for both heads.
pub struct TotalLoss<T> {
    pub breakdown: LossBreakdown<T>,
    pub grad_logits: Tensor<T>,
    pub grad_embeddings: Tensor<T>,
}

/// Weighted total objective.
///
/// Converts logits to probabilities, computes BCE and Dice at full
/// resolution, downsamples the mask to the embedding grid, and adds the
/// contrastive terms when `gamma > 0`. Contrastive terms that cannot be
/// formed for a batch (no foreground, no positive pair) contribute zero
/// and are flagged in the breakdown.
pub fn total_loss<T: Scalar, R: Rng>(
    logits: &Tensor<T>,
    target_mask: &Tensor<T>,
    embeddings: &Tensor<T>,
    weights: &LossWeights,
    cfg: &ContrastiveConfig,
    rng: &mut R,
) -> Result<TotalLoss<T>, LossError> {
    weights.validate()?;
    cfg.validate()?;
    check_shapes(logits, target_mask, "logits vs mask")?;

    let probs = logits.map(|v| T::one() / (T::one() + (-v).exp()));
    let (bce, grad_bce) = bce_loss_grad(&probs, target_mask)?;
    let (dice, grad_dice) = dice_loss_grad(&probs, target_mask, 1.0)?;

    let alpha = T::from_f64(weights.alpha);
    let beta = T::from_f64(weights.beta);
    let mut grad_logits = Tensor::zeros(logits.shape());
    for (((g, &p), &gb), &gd) in grad_logits
        .data_mut()
        .iter_mut()
        .zip(probs.iter())
        .zip(grad_bce.iter())
        .zip(grad_dice.iter())
    {
        // Chain through the sigmoid: dp/dlogit = p (1 - p).
        *g = (alpha * gb + beta * gd) * p * (T::one() - p);
    }

    let mut breakdown = LossBreakdown {
        bce,
        dice,
        sce: T::zero(),
        pcl: T::zero(),
        total: alpha * bce + beta * dice,
        // γ=0 disables the contrastive path entirely; report it as skipped.
        sce_skipped: weights.gamma == 0.0,
        pcl_skipped: weights.gamma == 0.0,
    };
    let mut grad_embeddings = Tensor::zeros(embeddings.shape());

    if weights.gamma > 0.0 {
        let gamma = T::from_f64(weights.gamma);
        let factor = logits.height() / embeddings.height();
        let labels = downsample_labels(target_mask, factor)?;
        let has_foreground = labels.data.iter().any(|&l| l == 1);
        let emb = EmbeddingMap::new_unchecked(embeddings.clone(), labels);

        // Both contrastive terms supervise the foreground structure; a batch
        // without any foreground cell skips them as a unit.
        if !has_foreground {
            breakdown.sce_skipped = true;
            breakdown.pcl_skipped = true;
            return Ok(TotalLoss { breakdown, grad_logits, grad_embeddings });
        }

        match sce_loss(&emb, cfg, rng) {
            Ok((v, g)) => {
                breakdown.sce = v;
                breakdown.total += gamma * v;
                let mut g = g;
                g.scale(gamma);
                grad_embeddings.add_assign(&g);
            }
            Err(LossError::NoPositivePairs) => breakdown.sce_skipped = true,
            Err(e) => return Err(e),
        }

        match build_prototypes(&emb, cfg, rng) {
            Ok(protos) => {
                let (v, mut g) = pcl_loss(&emb, &protos, cfg)?;
                breakdown.pcl = v;
                breakdown.total += gamma * v;
                g.scale(gamma);
                grad_embeddings.add_assign(&g);
            }
            Err(LossError::EmptyForeground) => breakdown.pcl_skipped = true,
            Err(e) => return Err(e),
        }
    }

    Ok(TotalLoss { breakdown, grad_logits, grad_embeddings })
}
