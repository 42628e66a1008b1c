//! Qualitative panels: input | truth | prediction, with bounding boxes over
//! false-negative and false-positive connected components.

use image::{Rgb, RgbImage};

use msa_unet3p::data::denormalize;
use msa_unet3p::metrics::Mask;
use msa_unet3p::Tensor;

use crate::AppError;

pub const FN_COLOR: Rgb<u8> = Rgb([255, 221, 0]); // yellow: missed vessel
pub const FP_COLOR: Rgb<u8> = Rgb([255, 64, 64]); // red: spurious prediction

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxClass {
    FalseNegative,
    FalsePositive,
}

/// Inclusive pixel bounding box of one error component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayBox {
    pub class: BoxClass,
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

fn component_boxes(err: &[bool], h: usize, w: usize, min_pixels: usize, class: BoxClass) -> Vec<OverlayBox> {
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !err[y * w + x] || seen[y * w + x] {
                continue;
            }
            let mut stack = vec![(y, x)];
            seen[y * w + x] = true;
            let (mut y0, mut x0, mut y1, mut x1) = (y, x, y, x);
            let mut count = 0usize;
            while let Some((cy, cx)) = stack.pop() {
                count += 1;
                y0 = y0.min(cy);
                x0 = x0.min(cx);
                y1 = y1.max(cy);
                x1 = x1.max(cx);
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (ny, nx) = (cy as i32 + dy, cx as i32 + dx);
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if err[ny * w + nx] && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            if count >= min_pixels {
                boxes.push(OverlayBox { class, y0, x0, y1, x1 });
            }
        }
    }
    boxes
}

/// Bounding boxes over false-negative (truth without prediction) and
/// false-positive (prediction without truth) components of at least
/// `min_pixels` pixels, in raster order, false negatives first.
pub fn overlay_boxes(pred: &Mask, truth: &Mask, min_pixels: usize) -> Result<Vec<OverlayBox>, AppError> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(AppError::runtime(format!(
            "prediction {}x{} and truth {}x{} shapes differ",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let (h, w) = (truth.height, truth.width);
    let fn_err: Vec<bool> = (0..h * w).map(|i| truth.data[i] && !pred.data[i]).collect();
    let fp_err: Vec<bool> = (0..h * w).map(|i| pred.data[i] && !truth.data[i]).collect();
    let mut boxes = component_boxes(&fn_err, h, w, min_pixels, BoxClass::FalseNegative);
    boxes.extend(component_boxes(&fp_err, h, w, min_pixels, BoxClass::FalsePositive));
    Ok(boxes)
}

fn draw_rect(img: &mut RgbImage, b: &OverlayBox, x_offset: usize, color: Rgb<u8>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (x0, x1) = (b.x0 + x_offset, b.x1 + x_offset);
    for x in x0..=x1.min(w - 1) {
        if b.y0 < h {
            img.put_pixel(x as u32, b.y0 as u32, color);
        }
        if b.y1 < h {
            img.put_pixel(x as u32, b.y1 as u32, color);
        }
    }
    for y in b.y0..=b.y1.min(h - 1) {
        if x0 < w {
            img.put_pixel(x0 as u32, y as u32, color);
        }
        if x1 < w {
            img.put_pixel(x1 as u32, y as u32, color);
        }
    }
}

/// Render the three-panel figure. Boxes are drawn on the prediction panel.
pub fn render_qualitative(
    image: &Tensor<f32>,
    truth: &Mask,
    pred: &Mask,
    min_pixels: usize,
) -> Result<(RgbImage, Vec<OverlayBox>), AppError> {
    let [_, _, h, w] = image.shape();
    if (h, w) != (truth.height, truth.width) {
        return Err(AppError::runtime(format!(
            "image {h}x{w} and truth {}x{} shapes differ",
            truth.height, truth.width
        )));
    }
    let boxes = overlay_boxes(pred, truth, min_pixels)?;
    let sep = 2usize;
    let mut panel = RgbImage::from_pixel((3 * w + 2 * sep) as u32, h as u32, Rgb([40, 40, 40]));
    let gray = denormalize(image);
    for y in 0..h {
        for x in 0..w {
            let v = (gray.data()[y * w + x] * 255.0).round() as u8;
            panel.put_pixel(x as u32, y as u32, Rgb([v, v, v]));
            let t = if truth.data[y * w + x] { 255 } else { 0 };
            panel.put_pixel((w + sep + x) as u32, y as u32, Rgb([t, t, t]));
            let p = if pred.data[y * w + x] { 255 } else { 0 };
            panel.put_pixel((2 * (w + sep) + x) as u32, y as u32, Rgb([p, p, p]));
        }
    }
    for b in &boxes {
        let color = match b.class {
            BoxClass::FalseNegative => FN_COLOR,
            BoxClass::FalsePositive => FP_COLOR,
        };
        draw_rect(&mut panel, b, 2 * (w + sep), color);
    }
    Ok((panel, boxes))
}
