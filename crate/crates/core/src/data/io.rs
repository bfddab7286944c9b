//! Dataset directories: `images/NNNN.png` + `masks/NNNN.png` + `colormap.toml`.
//!
//! Images are 8-bit grayscale PNG, masks 8-bit RGB PNG. On load, any image is
//! reduced to luminance and divided by its format maximum (255 for 8-bit,
//! 65535 for 16-bit).

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};

use super::colormap::{ClassColormap, COLORMAP_FILE};
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

pub fn sample_file_name(index: usize) -> String {
    format!("{index:04}.png")
}

/// Luminance in `[0,1]`, shape `[1,H,W]`.
pub fn image_to_tensor(img: &DynamicImage) -> Result<Tensor<f32>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        _ => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    };
    Tensor::new([1, h, w], data)
}

pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    image_to_tensor(&image::open(path)?)
}

/// Loads every `images/*` file that has a same-named `masks/*` file.
pub fn load_pairs(dir: &Path, cmap: &ClassColormap) -> Result<Vec<Sample>> {
    let img_dir = dir.join(IMAGES_DIR);
    let mask_dir = dir.join(MASKS_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&img_dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", img_dir.display())))?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for img_path in files {
        let name = img_path.file_name().expect("listed file").to_owned();
        let mask_path = mask_dir.join(&name);
        if !mask_path.is_file() {
            return Err(Error::Dataset(format!(
                "no mask for {}",
                img_path.display()
            )));
        }
        let image = load_image(&img_path)?;
        let mask = image::open(&mask_path)?.to_rgb8();
        let labels = cmap.decode(&mask, &mask_path)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if (labels.height(), labels.width()) != (h, w) {
            return Err(Error::Dataset(format!(
                "{}: image is {w}x{h} but mask is {}x{}",
                name.to_string_lossy(),
                labels.width(),
                labels.height()
            )));
        }
        out.push(Sample {
            name: name.to_string_lossy().into_owned(),
            image,
            labels,
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs under {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Loads a directory using its colormap sidecar (or the default map).
pub fn load_dataset(dir: &Path) -> Result<(Vec<Sample>, ClassColormap)> {
    let cmap = ClassColormap::for_dir(dir)?;
    Ok((load_pairs(dir, &cmap)?, cmap))
}

/// Values in `[0,1]` → 8-bit gray, rounding to nearest.
pub fn to_gray8(t: &Tensor<f32>, h: usize, w: usize) -> Result<GrayImage> {
    if t.numel() != h * w {
        return Err(crate::error::shape_err(
            "to_gray8",
            format!("{:?} is not {h}x{w}", t.shape()),
        ));
    }
    let d = t.data();
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(d[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    }))
}

/// Writes `samples` as a dataset directory, renaming them `0000.png`, ...
pub fn write_dataset(dir: &Path, samples: &[Sample], cmap: &ClassColormap) -> Result<()> {
    std::fs::create_dir_all(dir.join(IMAGES_DIR))?;
    std::fs::create_dir_all(dir.join(MASKS_DIR))?;
    std::fs::write(dir.join(COLORMAP_FILE), cmap.to_toml())?;
    for (i, s) in samples.iter().enumerate() {
        let name = sample_file_name(i);
        let (h, w) = (s.labels.height(), s.labels.width());
        to_gray8(&s.image, h, w)?.save(dir.join(IMAGES_DIR).join(&name))?;
        cmap.encode(&s.labels, 0)?
            .save(dir.join(MASKS_DIR).join(&name))?;
    }
    Ok(())
}
