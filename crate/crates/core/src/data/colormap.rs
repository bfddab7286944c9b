//! Bijective class ↔ RGB mapping for mask files.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

/// Sidecar file name inside a dataset directory.
pub const COLORMAP_FILE: &str = "colormap.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassColormap {
    #[serde(rename = "class")]
    classes: Vec<ClassEntry>,
}

impl Default for ClassColormap {
    /// Cytoplasm black, membrane red, nucleus green.
    fn default() -> Self {
        let e = |name: &str, color| ClassEntry {
            name: name.into(),
            color,
        };
        ClassColormap {
            classes: vec![
                e("cytoplasm", [0, 0, 0]),
                e("membrane", [255, 0, 0]),
                e("nucleus", [0, 255, 0]),
            ],
        }
    }
}

impl ClassColormap {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        if classes.len() < 2 || classes.len() > 255 {
            return Err(Error::Config(format!(
                "colormap needs 2..=255 classes, got {}",
                classes.len()
            )));
        }
        for (i, a) in classes.iter().enumerate() {
            if let Some(b) = classes[..i].iter().find(|b| b.color == a.color) {
                return Err(Error::Config(format!(
                    "colormap classes '{}' and '{}' share color {:?}",
                    b.name, a.name, a.color
                )));
            }
        }
        Ok(ClassColormap { classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.classes.get(class as usize).map(|c| c.color)
    }

    pub fn class_of(&self, color: [u8; 3]) -> Option<u8> {
        self.classes
            .iter()
            .position(|c| c.color == color)
            .map(|i| i as u8)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: ClassColormap = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        ClassColormap::new(raw.classes)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("colormap serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Reads the sidecar in `dir`, or the default map if it is absent.
    pub fn for_dir(dir: &Path) -> Result<Self> {
        let p = dir.join(COLORMAP_FILE);
        if p.exists() {
            Self::load(&p)
        } else {
            Ok(Self::default())
        }
    }

    /// Renders sample `b` of `labels` as an RGB mask.
    pub fn encode(&self, labels: &LabelMap, b: usize) -> Result<RgbImage> {
        labels.check_range(self.num_classes())?;
        let (h, w) = (labels.height(), labels.width());
        Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            Rgb(self.classes[labels.get(b, y as usize, x as usize) as usize].color)
        }))
    }

    /// `file` is only used to name the offending file in errors.
    pub fn decode(&self, mask: &RgbImage, file: &Path) -> Result<LabelMap> {
        let (w, h) = mask.dimensions();
        let mut labels = Vec::with_capacity((w * h) as usize);
        for (x, y, px) in mask.enumerate_pixels() {
            match self.class_of(px.0) {
                Some(c) => labels.push(c),
                None => {
                    return Err(Error::UnknownMaskColor {
                        file: file.to_path_buf(),
                        x,
                        y,
                        color: px.0,
                    });
                }
            }
        }
        LabelMap::new(1, h as usize, w as usize, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_colors() {
        let m = ClassColormap::default();
        assert_eq!(m.class_of([0, 255, 0]), Some(2));
        assert_eq!(m.class_of([255, 0, 0]), Some(1));
        assert_eq!(m.class_of([0, 0, 0]), Some(0));
        assert_eq!(m.class_of([0, 0, 255]), None);
    }

    #[test]
    fn toml_round_trip() {
        let m = ClassColormap::default();
        let text = m.to_toml();
        assert_eq!(ClassColormap::from_toml(&text).unwrap(), m);
    }

    #[test]
    fn duplicate_colors_rejected() {
        let e = |n: &str| ClassEntry {
            name: n.into(),
            color: [1, 2, 3],
        };
        assert!(ClassColormap::new(vec![e("a"), e("b")]).is_err());
        assert!(ClassColormap::new(vec![e("a")]).is_err());
    }

    #[test]
    fn unknown_color_names_pixel() {
        let mut img = RgbImage::new(3, 2);
        img.put_pixel(2, 1, Rgb([9, 9, 9]));
        let err = ClassColormap::default()
            .decode(&img, Path::new("m/0001.png"))
            .unwrap_err();
        match err {
            Error::UnknownMaskColor {
                x: 2,
                y: 1,
                color: [9, 9, 9],
                ref file,
            } => {
                assert_eq!(file, Path::new("m/0001.png"));
            }
            e => panic!("{e:?}"),
        }
    }
}
