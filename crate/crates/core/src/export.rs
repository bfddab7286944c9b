//! Per-image artifacts of a trained pipeline.

use std::path::{Path, PathBuf};

use crate::data::export_heatmap;
use crate::data::io::to_gray8;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::translation::Pipeline;

/// Writes, for each class, the translation filter as a heatmap
/// (`{stem}_filter_{class}.png`) and the translated image as 8-bit gray
/// (`{stem}_translated_{class}.png`). `image` is `[1,H,W]`; returns the
/// filter paths followed by the translated-image paths.
pub fn export_filters(
    pipeline: &Pipeline<f32>,
    image: &Tensor<f32>,
    stem: &str,
    dir: &Path,
    class_names: &[String],
) -> Result<Vec<PathBuf>> {
    let [c, h, w] = match image.shape() {
        &[c, h, w] => [c, h, w],
        s => {
            return Err(shape_err(
                "export_filters",
                format!("expected [1,H,W], got {s:?}"),
            ))
        }
    };
    if c != 1 {
        return Err(shape_err(
            "export_filters",
            format!("expected one channel, got {c}"),
        ));
    }
    let x = image.clone().reshape([1, 1, h, w])?;
    let out = pipeline.forward(&x)?;
    std::fs::create_dir_all(dir)?;
    let name = |k: usize| {
        class_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("class{k}"))
    };
    let mut filters = Vec::new();
    let mut translated = Vec::new();
    for k in 0..pipeline.num_classes() {
        let path = dir.join(format!("{stem}_filter_{}.png", name(k)));
        export_heatmap(&out.filters.channel(k)?, &path)?;
        filters.push(path);
        let path = dir.join(format!("{stem}_translated_{}.png", name(k)));
        to_gray8(&out.translated[k], h, w)?.save(&path)?;
        translated.push(path);
    }
    filters.extend(translated);
    Ok(filters)
}
