use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::annotation::{load_annotation, rasterize_polygon};
use super::geometry::{crop_resize, resample_mask, CropWindow};
use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

/// Image plus its central-object ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSample {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub source_id: String,
}

impl AnnotatedSample {
    pub fn new(image: RasterImage, mask: BinaryMask, source_id: impl Into<String>) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::Shape(format!(
                "image {}x{} vs mask {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Self {
            image,
            mask,
            source_id: source_id.into(),
        })
    }

    pub fn side(&self) -> usize {
        self.image.width()
    }

    /// Center-crop to a square and resample to `side x side` (bilinear image, nearest mask).
    pub fn fit_to(&self, side: usize) -> Result<Self> {
        if self.image.is_square() && self.image.width() == side {
            return Ok(self.clone());
        }
        let window = CropWindow::centered_square(self.image.width(), self.image.height());
        let (image, geom) = crop_resize(&self.image, &window, side)?;
        let mask = resample_mask(&self.mask, &geom)?;
        Self::new(image, mask, self.source_id.clone())
    }
}

/// Deterministically shuffle and split into (train, validation).
///
/// The training share is `floor(train_fraction * N)`, which reproduces the
/// 172 -> 137/35 and 86 -> 68/18 partitions.
pub fn split_dataset<T: Clone>(
    samples: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if samples.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside [0, 1]"
        )));
    }
    let n = samples.len();
    let n_train = ((train_fraction * n as f64 + 1e-9).floor() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}

/// Load every `*.json` annotation in `dir` (sorted by file name), resampled to `side`.
pub fn load_dataset_dir(
    dir: impl AsRef<Path>,
    label: Option<&str>,
    side: usize,
) -> Result<Vec<AnnotatedSample>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no annotations in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let (image_path, ann) = load_annotation(p, label)?;
            let image = RasterImage::load(&image_path)?;
            if image.width() != ann.image_width() || image.height() != ann.image_height() {
                return Err(Error::Shape(format!(
                    "{}: annotation says {}x{}, image is {}x{}",
                    p.display(),
                    ann.image_width(),
                    ann.image_height(),
                    image.width(),
                    image.height()
                )));
            }
            let mask = rasterize_polygon(&ann);
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            AnnotatedSample::new(image, mask, id)?.fit_to(side)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn paper_split_sizes() {
        let items: Vec<usize> = (0..172).collect();
        let (t, v) = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!((t.len(), v.len()), (137, 35));
        let items: Vec<usize> = (0..86).collect();
        let (t, v) = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!((t.len(), v.len()), (68, 18));
    }

    #[test]
    fn full_fraction_keeps_everything() {
        let items: Vec<usize> = (0..10).collect();
        let (t, v) = split_dataset(&items, 1.0, 1).unwrap();
        assert_eq!(t.len(), 10);
        assert!(v.is_empty());
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let items: Vec<usize> = (0..57).collect();
        let (t, v) = split_dataset(&items, 0.7, 99).unwrap();
        let (t2, v2) = split_dataset(&items, 0.7, 99).unwrap();
        assert_eq!((&t, &v), (&t2, &v2));
        let all: BTreeSet<usize> = t.iter().chain(&v).copied().collect();
        assert_eq!(all.len(), 57);
        assert_eq!(t.len() + v.len(), 57);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(split_dataset::<u8>(&[], 0.8, 0).is_err());
    }
}
