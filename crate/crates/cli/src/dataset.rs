//! On-disk dataset layout: `root/images/*.png` and `root/masks/*.png` with
//! matching basenames (8-bit grayscale), plus `manifest.json` recording the
//! generator settings that produced a synthetic set.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use msa_unet3p::data::{denormalize, normalize, GeneratorConfig, SegmentationSample, Split};
use msa_unet3p::metrics::Mask;
use msa_unet3p::Tensor;

use crate::AppError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: GeneratorConfig,
    pub count: usize,
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

pub fn read_manifest(root: &Path) -> Result<Option<DatasetManifest>, AppError> {
    let path = manifest_path(root);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let manifest = serde_json::from_str(&text)
        .map_err(|e| AppError::runtime(format!("bad manifest {}: {e}", path.display())))?;
    Ok(Some(manifest))
}

fn image_to_gray(sample: &SegmentationSample) -> GrayImage {
    let [_, _, h, w] = sample.image.shape();
    let img01 = denormalize(&sample.image);
    let raw: Vec<u8> = img01.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    GrayImage::from_raw(w as u32, h as u32, raw).expect("sized buffer")
}

fn mask_to_gray(mask: &Mask) -> GrayImage {
    let raw: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width as u32, mask.height as u32, raw).expect("sized buffer")
}

/// Write samples and a manifest under `root`.
pub fn save_dataset(
    root: &Path,
    samples: &[SegmentationSample],
    generator: &GeneratorConfig,
) -> Result<(), AppError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&masks_dir)?;
    for sample in samples {
        let name = format!("{}.png", sample.id);
        image_to_gray(sample).save(images_dir.join(&name))?;
        mask_to_gray(&sample.mask).save(masks_dir.join(&name))?;
    }
    let manifest = DatasetManifest { generator: generator.clone(), count: samples.len() };
    fs::write(manifest_path(root), serde_json::to_string_pretty(&manifest).expect("serializable"))?;
    Ok(())
}

fn load_gray(path: &Path) -> Result<GrayImage, AppError> {
    let img = image::open(path)?;
    match img {
        DynamicImage::ImageLuma8(gray) => Ok(gray),
        other => Err(AppError::runtime(format!(
            "{}: expected 8-bit grayscale, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Load every image/mask pair under `root`, resized to `image_size`
/// (bilinear for images, nearest for masks) and normalized to `[-1, 1]`.
/// An empty directory is not an error; it returns an empty list with a
/// warning on stderr.
pub fn load_dataset(root: &Path, image_size: usize) -> Result<Vec<SegmentationSample>, AppError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !images_dir.is_dir() {
        return Err(AppError::runtime(format!("missing images directory {}", images_dir.display())));
    }
    if !masks_dir.is_dir() {
        return Err(AppError::runtime(format!("missing masks directory {}", masks_dir.display())));
    }
    let mut names: Vec<String> = fs::read_dir(&images_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        eprintln!("warning: no PNG images under {}", images_dir.display());
        return Ok(Vec::new());
    }

    let size = image_size as u32;
    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let image_path = images_dir.join(&name);
        let mask_path = masks_dir.join(&name);
        if !mask_path.exists() {
            return Err(AppError::runtime(format!(
                "mask missing for image {name}: expected {}",
                mask_path.display()
            )));
        }
        let gray = load_gray(&image_path)?;
        let mask_gray = load_gray(&mask_path)?;
        let gray = if gray.dimensions() == (size, size) {
            gray
        } else {
            image::imageops::resize(&gray, size, size, FilterType::Triangle)
        };
        let mask_gray = if mask_gray.dimensions() == (size, size) {
            mask_gray
        } else {
            image::imageops::resize(&mask_gray, size, size, FilterType::Nearest)
        };

        let image01 = Tensor::<f32>::from_vec(
            [1, 1, image_size, image_size],
            gray.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        );
        let image = normalize(&image01)?;
        let mask = Mask::new(
            image_size,
            image_size,
            mask_gray.as_raw().iter().map(|&v| v >= 128).collect(),
        );
        let id = name.trim_end_matches(".png").to_string();
        samples.push(
            SegmentationSample::new(image, mask, id, Split::Unsplit)
                .map_err(|e| AppError::runtime(format!("{name}: {e}")))?,
        );
    }
    Ok(samples)
}
