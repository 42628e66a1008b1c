//! Evaluation metrics: overlap scores from confusion counts and symmetric
//! boundary distances (surface- and contour-based).
//!
//! Boundary distances come in two interchangeable backends: an exact
//! Euclidean distance transform for speed and a brute-force scan kept as a
//! cross-checking oracle. Both produce identical values (the transform is
//! exact, not approximate).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

/// A binary image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    /// Threshold one sample/channel plane of a probability tensor.
    pub fn from_probs<T: Scalar>(probs: &Tensor<T>, batch: usize, threshold: f64) -> Self {
        let [_, c, h, w] = probs.shape();
        debug_assert_eq!(c, 1, "expected single-channel probabilities");
        let src = probs.sample(batch);
        Self::new(h, w, src.iter().map(|v| v.as_f64() > threshold).collect())
    }

    /// Interpret one plane of a 0/1-valued tensor as a mask.
    pub fn from_binary<T: Scalar>(mask: &Tensor<T>, batch: usize) -> Self {
        Self::from_probs(mask, batch, 0.5)
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }
}

/// Pixel-level confusion counts of a prediction against the truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("mask shapes differ: {a_h}x{a_w} vs {b_h}x{b_w}")]
    ShapeMismatch { a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("boundary distance undefined: {side} mask has no foreground")]
    UndefinedDistance { side: &'static str },
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts, MetricsError> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(MetricsError::ShapeMismatch {
            a_h: pred.height,
            a_w: pred.width,
            b_h: truth.height,
            b_w: truth.width,
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data.iter().zip(truth.data.iter()) {
        match (p, t) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// `2 TP / (2 TP + FP + FN)`; both masks empty counts as a perfect 1.
pub fn dice_score(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.true_pos + c.false_pos + c.false_neg;
    if den == 0 {
        1.0
    } else {
        2.0 * c.true_pos as f64 / den as f64
    }
}

/// `TP / (TP + FN)`; empty truth counts as a perfect 1.
pub fn recall(c: &ConfusionCounts) -> f64 {
    let den = c.true_pos + c.false_neg;
    if den == 0 {
        1.0
    } else {
        c.true_pos as f64 / den as f64
    }
}

/// `TP / (TP + FP)`; empty prediction counts as a perfect 1.
pub fn precision(c: &ConfusionCounts) -> f64 {
    let den = c.true_pos + c.false_pos;
    if den == 0 {
        1.0
    } else {
        c.true_pos as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let p = precision(c);
    let r = recall(c);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Which boundary notion a [`BoundarySet`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// Foreground pixels with at least one background 8-neighbor
    /// (the image border counts as background).
    Surface,
    /// Deduplicated outer border-trace points of each connected component.
    Contour,
}

/// Boundary pixels of a mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundarySet {
    pub points: Vec<(usize, usize)>,
    pub kind: BoundaryKind,
}

pub fn extract_boundary(mask: &Mask, kind: BoundaryKind) -> BoundarySet {
    let points = match kind {
        BoundaryKind::Surface => surface_points(mask),
        BoundaryKind::Contour => contour_points(mask),
    };
    BoundarySet { points, kind }
}

const NEIGHBORS8: [(isize, isize); 8] = [
    (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1),
];

fn surface_points(mask: &Mask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.at(y, x) {
                continue;
            }
            let mut is_surface = false;
            for &(dy, dx) in &NEIGHBORS8 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny as usize >= mask.height || nx as usize >= mask.width {
                    is_surface = true; // border counts as background
                    break;
                }
                if !mask.at(ny as usize, nx as usize) {
                    is_surface = true;
                    break;
                }
            }
            if is_surface {
                out.push((y, x));
            }
        }
    }
    out
}

/// Moore border trace of every 8-connected component, deduplicated.
fn contour_points(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height, mask.width);
    let mut component = vec![usize::MAX; h * w];
    let mut n_components = 0usize;
    // Label 8-connected components in raster order.
    for y in 0..h {
        for x in 0..w {
            if !mask.at(y, x) || component[y * w + x] != usize::MAX {
                continue;
            }
            let id = n_components;
            n_components += 1;
            let mut stack = vec![(y, x)];
            component[y * w + x] = id;
            while let Some((cy, cx)) = stack.pop() {
                for &(dy, dx) in &NEIGHBORS8 {
                    let (ny, nx) = (cy as isize + dy, cx as isize + dx);
                    if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask.at(ny, nx) && component[ny * w + nx] == usize::MAX {
                        component[ny * w + nx] = id;
                        stack.push((ny, nx));
                    }
                }
            }
        }
    }

    // First pixel of each component in raster order is the trace start;
    // its west neighbor is guaranteed background.
    let mut starts = vec![None; n_components];
    for y in 0..h {
        for x in 0..w {
            let id = component[y * w + x];
            if id != usize::MAX && starts[id].is_none() {
                starts[id] = Some((y, x));
            }
        }
    }

    let fg = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask.at(y as usize, x as usize)
    };

    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let push = |p: (usize, usize), seen: &mut Vec<bool>, out: &mut Vec<(usize, usize)>| {
        if !seen[p.0 * w + p.1] {
            seen[p.0 * w + p.1] = true;
            out.push(p);
        }
    };

    for start in starts.into_iter().flatten() {
        push(start, &mut seen, &mut out);
        // Backtrack direction: index into NEIGHBORS8 pointing at the
        // background cell we entered from; west = index 7 (guaranteed
        // background for the raster-first pixel of a component).
        let mut cur = start;
        let mut back = 7usize;
        // The walk is deterministic on (pixel, backtrack) states, so the
        // first repeated state means nothing new can ever be visited.
        let mut visited = std::collections::HashSet::new();
        while visited.insert((cur, back)) {
            // Scan clockwise from the backtrack position.
            let mut found = None;
            for step in 1..=8 {
                let dir = (back + step) % 8;
                let (dy, dx) = NEIGHBORS8[dir];
                let (ny, nx) = (cur.0 as isize + dy, cur.1 as isize + dx);
                if fg(ny, nx) {
                    found = Some((dir, (ny as usize, nx as usize)));
                    break;
                }
            }
            let Some((dir, next)) = found else {
                break; // isolated pixel
            };
            // New backtrack points from `next` toward the last background
            // cell scanned: the ring position just before `dir`. Consecutive
            // ring positions are mutually 8-adjacent, so it neighbors `next`.
            let prev_dir = (dir + 7) % 8;
            let (py, px) = NEIGHBORS8[prev_dir];
            let back_from_next = (
                (cur.0 as isize + py) - next.0 as isize,
                (cur.1 as isize + px) - next.1 as isize,
            );
            back = NEIGHBORS8
                .iter()
                .position(|&(dy, dx)| (dy, dx) == back_from_next)
                .expect("ring-consecutive cells are adjacent");
            cur = next;
            push(cur, &mut seen, &mut out);
        }
    }
    out
}

/// Distance computation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DistanceBackend {
    /// Exact Euclidean distance transform, O(H·W).
    #[default]
    Fast,
    /// Direct all-pairs scan, O(|A|·|B|); the oracle.
    BruteForce,
}

/// Exact squared Euclidean distance transform (lower envelope of parabolas),
/// one dimension at a time.
fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] == f64::INFINITY {
                // First finite parabola.
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    for q in 0..n {
        let mut kk = 0;
        while z[kk + 1] < q as f64 {
            kk += 1;
        }
        let p = v[kk];
        d[q] = if f[p] == f64::INFINITY {
            f64::INFINITY
        } else {
            (q as f64 - p as f64) * (q as f64 - p as f64) + f[p]
        };
    }
}

/// Grid of squared distances to the nearest of `points`.
fn edt_squared(points: &[(usize, usize)], h: usize, w: usize) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; h * w];
    for &(y, x) in points {
        g[y * w + x] = 0.0;
    }
    // Columns, then rows.
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = g[y * w + x];
        }
        edt_1d(&col_in, &mut col_out);
        for y in 0..h {
            g[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0f64; w];
    for y in 0..h {
        edt_1d(&g[y * w..(y + 1) * w].to_vec(), &mut row_out);
        g[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    g
}

fn directed_mean_distance(
    from: &[(usize, usize)],
    to: &[(usize, usize)],
    grid: (usize, usize),
    backend: DistanceBackend,
) -> f64 {
    match backend {
        DistanceBackend::Fast => {
            let (h, w) = grid;
            let dt = edt_squared(to, h, w);
            let sum: f64 = from.iter().map(|&(y, x)| dt[y * w + x].sqrt()).sum();
            sum / from.len() as f64
        }
        DistanceBackend::BruteForce => {
            let sum: f64 = from
                .iter()
                .map(|&(ay, ax)| {
                    to.iter()
                        .map(|&(by, bx)| {
                            let dy = ay as f64 - by as f64;
                            let dx = ax as f64 - bx as f64;
                            (dy * dy + dx * dx).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            sum / from.len() as f64
        }
    }
}

fn boundary_distance(
    pred: &Mask,
    truth: &Mask,
    kind: BoundaryKind,
    backend: DistanceBackend,
) -> Result<f64, MetricsError> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(MetricsError::ShapeMismatch {
            a_h: pred.height,
            a_w: pred.width,
            b_h: truth.height,
            b_w: truth.width,
        });
    }
    let bp = extract_boundary(pred, kind);
    let bg = extract_boundary(truth, kind);
    if bp.points.is_empty() {
        return Err(MetricsError::UndefinedDistance { side: "predicted" });
    }
    if bg.points.is_empty() {
        return Err(MetricsError::UndefinedDistance { side: "truth" });
    }
    let grid = (pred.height, pred.width);
    let fwd = directed_mean_distance(&bp.points, &bg.points, grid, backend);
    let bwd = directed_mean_distance(&bg.points, &bp.points, grid, backend);
    Ok(0.5 * (fwd + bwd))
}

/// Average symmetric surface distance, in pixels.
pub fn asd(pred: &Mask, truth: &Mask) -> Result<f64, MetricsError> {
    asd_with(pred, truth, DistanceBackend::Fast)
}

pub fn asd_with(pred: &Mask, truth: &Mask, backend: DistanceBackend) -> Result<f64, MetricsError> {
    boundary_distance(pred, truth, BoundaryKind::Surface, backend)
}

/// Average symmetric contour distance, in pixels.
pub fn acd(pred: &Mask, truth: &Mask) -> Result<f64, MetricsError> {
    acd_with(pred, truth, DistanceBackend::Fast)
}

pub fn acd_with(pred: &Mask, truth: &Mask, backend: DistanceBackend) -> Result<f64, MetricsError> {
    boundary_distance(pred, truth, BoundaryKind::Contour, backend)
}

/// Metrics of one evaluated sample. `asd`/`acd` are `None` when either
/// mask had no foreground (the sample is excluded from those aggregates).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub index: usize,
    pub dice: f64,
    pub recall: f64,
    pub f1: f64,
    pub asd: Option<f64>,
    pub acd: Option<f64>,
}

/// Evaluate one prediction/truth pair.
pub fn evaluate_sample(index: usize, pred: &Mask, truth: &Mask) -> Result<SampleMetrics, MetricsError> {
    let c = confusion(pred, truth)?;
    let undefined = |e: MetricsError| match e {
        MetricsError::UndefinedDistance { .. } => Ok(None),
        other => Err(other),
    };
    let asd_v = asd(pred, truth).map(Some).or_else(undefined)?;
    let acd_v = acd(pred, truth).map(Some).or_else(undefined)?;
    Ok(SampleMetrics {
        index,
        dice: dice_score(&c),
        recall: recall(&c),
        f1: f1(&c),
        asd: asd_v,
        acd: acd_v,
    })
}

/// Mean and population standard deviation of the included values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Number of samples included (boundary metrics may exclude samples).
    pub count: usize,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        Self { mean, std: var.sqrt(), count }
    }
}

/// Per-sample metrics plus recomputable aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
}

/// Aggregates over a [`MetricsReport`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub dice: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub asd: MeanStd,
    pub acd: MeanStd,
}

impl MetricsReport {
    pub fn push(&mut self, m: SampleMetrics) {
        self.samples.push(m);
    }

    pub fn aggregate(&self) -> AggregateMetrics {
        let collect = |f: &dyn Fn(&SampleMetrics) -> Option<f64>| -> Vec<f64> {
            self.samples.iter().filter_map(|s| f(s)).collect()
        };
        AggregateMetrics {
            dice: MeanStd::from_values(&collect(&|s| Some(s.dice))),
            recall: MeanStd::from_values(&collect(&|s| Some(s.recall))),
            f1: MeanStd::from_values(&collect(&|s| Some(s.f1))),
            asd: MeanStd::from_values(&collect(&|s| s.asd)),
            acd: MeanStd::from_values(&collect(&|s| s.acd)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mask_from_str(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        Mask::new(h, w, data)
    }

    #[test]
    fn confusion_matches_exhaustive_loop() {
        let truth = mask_from_str(&["##..", "##..", "....", "...#"]);
        let pred = mask_from_str(&["#..#", "##..", "....", "...."]);
        let c = confusion(&pred, &truth).unwrap();
        // Brute-force recount.
        let mut oracle = ConfusionCounts::default();
        for i in 0..16 {
            match (pred.data[i], truth.data[i]) {
                (true, true) => oracle.true_pos += 1,
                (true, false) => oracle.false_pos += 1,
                (false, true) => oracle.false_neg += 1,
                (false, false) => oracle.true_neg += 1,
            }
        }
        assert_eq!(c, oracle);
        assert_eq!(c.total(), 16);

        let same = confusion(&truth, &truth).unwrap();
        assert_eq!((same.false_pos, same.false_neg), (0, 0));

        let inverted = Mask::new(4, 4, truth.data.iter().map(|&v| !v).collect());
        let inv = confusion(&inverted, &truth).unwrap();
        assert_eq!((inv.true_pos, inv.true_neg), (0, 0));
    }

    #[test]
    fn scores_match_hand_oracles() {
        let c = ConfusionCounts { true_pos: 2, false_pos: 1, false_neg: 1, true_neg: 12 };
        assert!((dice_score(&c) - 4.0 / 6.0).abs() < 1e-12);
        let c = ConfusionCounts { true_pos: 3, false_neg: 1, ..Default::default() };
        assert!((recall(&c) - 0.75).abs() < 1e-12);

        let perfect = ConfusionCounts { true_pos: 5, true_neg: 11, ..Default::default() };
        assert_eq!(dice_score(&perfect), 1.0);
        assert_eq!(recall(&perfect), 1.0);
        assert_eq!(f1(&perfect), 1.0);

        let vacuous = ConfusionCounts { true_neg: 16, ..Default::default() };
        assert_eq!(dice_score(&vacuous), 1.0);
        assert_eq!(recall(&vacuous), 1.0);
    }

    #[test]
    fn dice_equals_f1_for_binary_masks() {
        let cases = [
            ConfusionCounts { true_pos: 2, false_pos: 1, false_neg: 1, true_neg: 12 },
            ConfusionCounts { true_pos: 0, false_pos: 3, false_neg: 2, true_neg: 11 },
            ConfusionCounts { true_pos: 7, false_pos: 0, false_neg: 0, true_neg: 9 },
            ConfusionCounts { true_pos: 0, false_pos: 0, false_neg: 0, true_neg: 16 },
        ];
        for c in cases {
            assert!((dice_score(&c) - f1(&c)).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn boundary_extraction_examples() {
        let single = mask_from_str(&["...", ".#.", "..."]);
        let s = extract_boundary(&single, BoundaryKind::Surface);
        assert_eq!(s.points, vec![(1, 1)]);
        let c = extract_boundary(&single, BoundaryKind::Contour);
        assert_eq!(c.points, vec![(1, 1)]);

        // Filled 4x4 square inside a larger image: 12 perimeter pixels.
        let square = mask_from_str(&[
            "......",
            ".####.",
            ".####.",
            ".####.",
            ".####.",
            "......",
        ]);
        let s = extract_boundary(&square, BoundaryKind::Surface);
        assert_eq!(s.points.len(), 12);
        assert!(!s.points.contains(&(2, 2)));

        // Full-image foreground: the border counts as background.
        let full = Mask::new(4, 4, vec![true; 16]);
        let s = extract_boundary(&full, BoundaryKind::Surface);
        assert_eq!(s.points.len(), 12);

        let empty = Mask::zeros(4, 4);
        assert!(extract_boundary(&empty, BoundaryKind::Surface).points.is_empty());
        assert!(extract_boundary(&empty, BoundaryKind::Contour).points.is_empty());
    }

    #[test]
    fn contour_trace_covers_square_perimeter_once() {
        let square = mask_from_str(&[
            ".....",
            ".###.",
            ".###.",
            ".###.",
            ".....",
        ]);
        let c = extract_boundary(&square, BoundaryKind::Contour);
        let mut pts = c.points.clone();
        pts.sort_unstable();
        let mut expect: Vec<(usize, usize)> =
            extract_boundary(&square, BoundaryKind::Surface).points;
        expect.sort_unstable();
        assert_eq!(pts, expect); // 3x3 block: every pixel except none... 8 boundary pixels
        assert_eq!(c.points.len(), 8);
    }

    #[test]
    fn contour_handles_concave_and_multiple_components() {
        let shape = mask_from_str(&[
            "#.....#",
            "#.###.#",
            "#.#.#..",
            "#.###..",
            "#......",
        ]);
        let c = extract_boundary(&shape, BoundaryKind::Contour);
        // Each traced point must itself be a surface pixel and unique.
        let surface = extract_boundary(&shape, BoundaryKind::Surface).points;
        for p in &c.points {
            assert!(surface.contains(p), "{p:?} not a surface pixel");
        }
        let mut dedup = c.points.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), c.points.len(), "trace points deduplicated");
        // The left bar, the ring, and the right column are separate traces;
        // all of their outer pixels appear.
        assert!(c.points.contains(&(0, 0)));
        assert!(c.points.contains(&(4, 0)));
        assert!(c.points.contains(&(0, 6)));
        assert!(c.points.contains(&(1, 2)));
        assert!(c.points.contains(&(3, 4)));
    }

    #[test]
    fn asd_matches_hand_oracles() {
        let a = mask_from_str(&["....", ".#..", "....", "...."]);
        assert_eq!(asd(&a, &a).unwrap(), 0.0);

        let p = mask_from_str(&["#...."]);
        let t = mask_from_str(&["...#."]);
        assert!((asd(&p, &t).unwrap() - 3.0).abs() < 1e-12);

        // One pixel vs the same pixel plus a diagonal neighbor.
        let one = mask_from_str(&["#..", "...", "..."]);
        let two = mask_from_str(&["#..", ".#.", "..."]);
        let expect = 0.5 * (0.0 + (0.0 + 2f64.sqrt()) / 2.0);
        assert!((asd(&one, &two).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.353553).abs() < 1e-6);

        let empty = Mask::zeros(3, 3);
        assert_eq!(
            asd(&empty, &one).unwrap_err(),
            MetricsError::UndefinedDistance { side: "predicted" }
        );
        assert_eq!(
            asd(&one, &empty).unwrap_err(),
            MetricsError::UndefinedDistance { side: "truth" }
        );
    }

    #[test]
    fn acd_equals_asd_when_trace_covers_surface() {
        // For filled rectangles the outer trace visits exactly the surface
        // pixels, so the two distances coincide.
        let a = mask_from_str(&[".....", ".###.", ".###.", ".###.", "....."]);
        let b = mask_from_str(&[".....", ".###.", ".###.", ".....", "....."]);
        let asd_v = asd(&a, &b).unwrap();
        let acd_v = acd(&a, &b).unwrap();
        assert!((asd_v - acd_v).abs() < 1e-12);
        assert_eq!(acd(&a, &a).unwrap(), 0.0);
    }

    fn random_mask<R: Rng>(rng: &mut R, h: usize, w: usize, p: f64) -> Mask {
        Mask::new(h, w, (0..h * w).map(|_| rng.random_bool(p)).collect())
    }

    #[test]
    fn fast_backend_matches_brute_force_on_random_masks() {
        let mut rng = crate::rng::stream(99, crate::rng::Domain::Generator, 0);
        let mut tested = 0;
        while tested < 40 {
            let a = random_mask(&mut rng, 16, 16, 0.3);
            let b = random_mask(&mut rng, 16, 16, 0.3);
            if !a.any() || !b.any() {
                continue;
            }
            for (fast, brute) in [
                (asd(&a, &b), asd_with(&a, &b, DistanceBackend::BruteForce)),
                (acd(&a, &b), acd_with(&a, &b, DistanceBackend::BruteForce)),
            ] {
                let (f, br) = (fast.unwrap(), brute.unwrap());
                assert!((f - br).abs() < 1e-9, "{f} vs {br}");
            }
            // Symmetry is exact.
            assert_eq!(asd(&a, &b).unwrap(), asd(&b, &a).unwrap());
            assert_eq!(acd(&a, &b).unwrap(), acd(&b, &a).unwrap());
            tested += 1;
        }
    }

    #[test]
    fn distances_are_translation_invariant() {
        let a = mask_from_str(&["##......", ".#......", "........", "........"]);
        let b = mask_from_str(&["........", ".##.....", "..#.....", "........"]);
        // Shift both one column right.
        let shift = |m: &Mask| -> Mask {
            let mut out = Mask::zeros(m.height, m.width);
            for y in 0..m.height {
                for x in 0..m.width - 1 {
                    if m.at(y, x) {
                        out.data[y * m.width + x + 1] = true;
                    }
                }
            }
            out
        };
        assert_eq!(asd(&a, &b).unwrap(), asd(&shift(&a), &shift(&b)).unwrap());
        assert_eq!(acd(&a, &b).unwrap(), acd(&shift(&a), &shift(&b)).unwrap());
    }

    #[test]
    fn dice_score_complements_hard_dice_loss() {
        let pred = mask_from_str(&["##..", "#...", "....", "..##"]);
        let truth = mask_from_str(&["##..", "##..", "....", "...#"]);
        let c = confusion(&pred, &truth).unwrap();
        let to_tensor = |m: &Mask| {
            Tensor::<f64>::from_vec(
                [1, 1, 4, 4],
                m.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )
        };
        let (loss, _) =
            crate::losses::dice_loss_grad(&to_tensor(&pred), &to_tensor(&truth), 0.0).unwrap();
        assert!((dice_score(&c) - (1.0 - loss)).abs() < 1e-12);
    }

    #[test]
    fn report_aggregation_is_recomputable() {
        let mut report = MetricsReport::default();
        report.push(SampleMetrics { index: 0, dice: 0.8, recall: 0.9, f1: 0.8, asd: Some(1.0), acd: Some(1.5) });
        report.push(SampleMetrics { index: 1, dice: 0.6, recall: 0.7, f1: 0.6, asd: None, acd: None });
        report.push(SampleMetrics { index: 2, dice: 1.0, recall: 1.0, f1: 1.0, asd: Some(3.0), acd: Some(0.5) });
        let agg = report.aggregate();
        assert!((agg.dice.mean - 0.8).abs() < 1e-12);
        assert_eq!(agg.dice.count, 3);
        assert_eq!(agg.asd.count, 2);
        assert!((agg.asd.mean - 2.0).abs() < 1e-12);
        assert!((agg.asd.std - 1.0).abs() < 1e-12);
    }
}
