//! Synthetic scenes, dataset directories and image export.

pub mod colormap;
pub mod heatmap;
pub mod io;
pub mod synth;

pub use colormap::{ClassColormap, ClassEntry, COLORMAP_FILE};
pub use heatmap::{export_heatmap, render_heatmap};
pub use io::{load_dataset, load_image, load_pairs, write_dataset};
pub use synth::{synth_scene, SynthSpec};

use crate::error::{shape_err, Result};
use crate::tensor::{LabelMap, Tensor};

/// One image `[1,H,W]` with its label map (batch 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Tensor<f32>,
    pub labels: LabelMap,
}

/// `count` scenes from `spec`, each with its own derived seed.
pub fn synth_dataset(spec: &SynthSpec, count: usize) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let (image, labels) = synth_scene(&spec.for_index(i as u64))?;
            Ok(Sample {
                name: io::sample_file_name(i),
                image,
                labels,
            })
        })
        .collect()
}

/// Stacks the selected samples into `[B,1,H,W]` and a batch label map.
pub fn make_batch(samples: &[Sample], indices: &[usize]) -> Result<(Tensor<f32>, LabelMap)> {
    let first = samples
        .get(
            *indices
                .first()
                .ok_or_else(|| shape_err("make_batch", "empty index list"))?,
        )
        .ok_or_else(|| shape_err("make_batch", "index out of range"))?;
    let (h, w) = (first.labels.height(), first.labels.width());
    let mut data = Vec::with_capacity(indices.len() * h * w);
    let mut maps = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = samples
            .get(i)
            .ok_or_else(|| shape_err("make_batch", format!("index {i} out of range")))?;
        if s.image.shape() != [1, h, w] {
            return Err(shape_err(
                "make_batch",
                format!(
                    "sample {} is {:?}, expected [1,{h},{w}]",
                    s.name,
                    s.image.shape()
                ),
            ));
        }
        data.extend_from_slice(s.image.data());
        maps.push(&s.labels);
    }
    Ok((
        Tensor::new([indices.len(), 1, h, w], data)?,
        LabelMap::cat_batch(&maps)?,
    ))
}
