//! Synthetic low-contrast cell scenes.
//!
//! Each cell is a disk nucleus (class 2) of radius `r`, ringed by a membrane
//! annulus (class 1) covering `r < d <= r + t + 0.5`, on a class-0
//! background. Distances are measured between pixel centres. The extra half
//! pixel guarantees that all 8 neighbours of a nucleus pixel (at most
//! `sqrt 2` further out) land on nucleus or membrane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

pub const BACKGROUND: u8 = 0;
pub const MEMBRANE: u8 = 1;
pub const NUCLEUS: u8 = 2;
pub const SYNTH_CLASSES: usize = 3;

/// Placement attempts allowed per requested cell.
pub const ATTEMPTS_PER_CELL: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub size: usize,
    pub n_cells: usize,
    /// Inclusive `[min, max]` nucleus radius in pixels.
    pub nucleus_radius: [f64; 2],
    pub membrane_thickness: f64,
    /// Mean level per class, indexed by class.
    pub intensity: [f64; SYNTH_CLASSES],
    pub contrast: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 64,
            n_cells: 7,
            nucleus_radius: [3.0, 6.0],
            membrane_thickness: 1.5,
            intensity: [0.25, 0.75, 0.5],
            contrast: 0.35,
            noise_sigma: 0.07,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.size == 0 {
            return bad("synth size must be > 0".into());
        }
        let [lo, hi] = self.nucleus_radius;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "nucleus_radius must satisfy 0 < min <= max, got [{lo}, {hi}]"
            ));
        }
        if !(self.membrane_thickness >= 1.0 && self.membrane_thickness.is_finite()) {
            return bad(format!(
                "membrane_thickness must be >= 1, got {}",
                self.membrane_thickness
            ));
        }
        if let Some(v) = self.intensity.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return bad(format!("intensity levels must lie in [0,1], got {v}"));
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return bad(format!("contrast must lie in (0,1], got {}", self.contrast));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        Ok(())
    }

    /// Spec for the `index`-th image of a dataset seeded with `self.seed`.
    pub fn for_index(&self, index: u64) -> SynthSpec {
        SynthSpec {
            seed: derive_seed(self.seed, index),
            ..self.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

impl Cell {
    fn outer(&self, t: f64) -> f64 {
        self.radius + t + 0.5
    }
}

/// Rejection-samples non-overlapping cells that lie fully inside the image.
pub fn place_cells(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<Cell>> {
    let t = spec.membrane_thickness;
    let max_pos = (spec.size - 1) as f64;
    let mut cells: Vec<Cell> = Vec::with_capacity(spec.n_cells);
    let cap = ATTEMPTS_PER_CELL * spec.n_cells;
    let mut attempts = 0;
    while cells.len() < spec.n_cells {
        if attempts == cap {
            return Err(Error::Placement {
                requested: spec.n_cells,
                placed: cells.len(),
            });
        }
        attempts += 1;
        let [lo, hi] = spec.nucleus_radius;
        let radius = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        let reach = radius + t + 0.5;
        if 2.0 * reach > max_pos {
            continue;
        }
        let cand = Cell {
            row: rng.gen_range(reach..=max_pos - reach),
            col: rng.gen_range(reach..=max_pos - reach),
            radius,
        };
        let clear = cells.iter().all(|c| {
            let d = ((c.row - cand.row).powi(2) + (c.col - cand.col).powi(2)).sqrt();
            d > c.outer(t) + cand.outer(t) + 1.0
        });
        if clear {
            cells.push(cand);
        }
    }
    Ok(cells)
}

/// Rasterises cells into a `size × size` label map (batch 1).
pub fn rasterise(size: usize, cells: &[Cell], membrane_thickness: f64) -> LabelMap {
    let mut labels = vec![BACKGROUND; size * size];
    for c in cells {
        let outer = c.outer(membrane_thickness);
        let r0 = (c.row - outer).floor().max(0.0) as usize;
        let r1 = ((c.row + outer).ceil() as usize).min(size - 1);
        let c0 = (c.col - outer).floor().max(0.0) as usize;
        let c1 = ((c.col + outer).ceil() as usize).min(size - 1);
        for r in r0..=r1 {
            for q in c0..=c1 {
                let d = ((r as f64 - c.row).powi(2) + (q as f64 - c.col).powi(2)).sqrt();
                let px = &mut labels[r * size + q];
                if d <= c.radius {
                    *px = NUCLEUS;
                } else if d <= outer && *px != NUCLEUS {
                    *px = MEMBRANE;
                }
            }
        }
    }
    LabelMap::new(1, size, size, labels).expect("sized above")
}

/// Generates one scene: image `[1,H,W]` in `[0,1]` and its label map.
pub fn synth_scene(spec: &SynthSpec) -> Result<(Tensor<f32>, LabelMap)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = place_cells(spec, &mut rng)?;
    let labels = rasterise(spec.size, &cells, spec.membrane_thickness);
    let noise =
        Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data = labels
        .labels()
        .iter()
        .map(|&l| {
            let v = spec.intensity[l as usize] * spec.contrast + noise.sample(&mut rng);
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    let image = Tensor::new([1, spec.size, spec.size], data)?;
    Ok((image, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_background_only() {
        let spec = SynthSpec {
            n_cells: 0,
            noise_sigma: 0.0,
            ..SynthSpec::default()
        };
        let (img, lab) = synth_scene(&spec).unwrap();
        assert!(lab.labels().iter().all(|&l| l == BACKGROUND));
        let expect = (spec.intensity[0] * spec.contrast) as f32;
        assert!(img.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = SynthSpec {
            seed: 11,
            ..SynthSpec::default()
        };
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(
            a.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.1, b.1);
        let c = synth_scene(&spec.for_index(1)).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn infeasible_placement_reports_count() {
        let spec = SynthSpec {
            size: 16,
            n_cells: 5,
            nucleus_radius: [4.0, 4.0],
            ..SynthSpec::default()
        };
        match synth_scene(&spec) {
            Err(Error::Placement {
                requested: 5,
                placed,
            }) => assert!(placed < 5),
            other => panic!("expected placement error, got {other:?}"),
        }
    }

    #[test]
    fn all_classes_present_by_default() {
        let (_, lab) = synth_scene(&SynthSpec::default()).unwrap();
        for c in 0..3u8 {
            assert!(lab.labels().contains(&c));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SynthSpec::default();
        for s in [
            SynthSpec {
                contrast: 0.0,
                ..base.clone()
            },
            SynthSpec {
                contrast: 1.5,
                ..base.clone()
            },
            SynthSpec {
                noise_sigma: -1.0,
                ..base.clone()
            },
            SynthSpec {
                membrane_thickness: 0.5,
                ..base.clone()
            },
            SynthSpec {
                nucleus_radius: [5.0, 2.0],
                ..base.clone()
            },
            SynthSpec {
                intensity: [0.0, 1.2, 0.5],
                ..base.clone()
            },
            SynthSpec {
                size: 0,
                ..base.clone()
            },
        ] {
            assert!(
                matches!(synth_scene(&s), Err(Error::InvalidConfig(_))),
                "{s:?}"
            );
        }
    }
}
