//! In-memory datasets loaded from a generated directory.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use lim_core::{Real, Shape4, Tensor4};
use lim_eval::{parse_annotation_file, Annotation};
use lim_synth::{read_manifest, read_ppm, RgbImage, Split};

use crate::error::{Error, Result};
use crate::targets::GtBox;

/// Images as attenuation maps `1 - v / 255` (white background is zero).
pub fn image_to_planes<T: Real>(img: &RgbImage, out: &mut [T]) {
    let plane = img.width * img.height;
    for (p, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = T::of(1.0 - f64::from(px[c]) / 255.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T: Real> {
    pub names: Vec<String>,
    /// `(n, 3, size, size)`.
    pub images: Tensor4<T>,
    pub annotations: Vec<Vec<Annotation>>,
    pub boxes: Vec<Vec<GtBox>>,
    pub labels: Vec<String>,
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn size(&self) -> usize {
        self.images.shape().h
    }

    /// Stacks the listed images into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor4<T> {
        let s = self.images.shape();
        let item = s.c * s.h * s.w;
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * item..(i + 1) * item]);
        }
        Tensor4::from_vec(Shape4::new(indices.len(), s.c, s.h, s.w), data).expect("consistent batch")
    }

    pub fn batch_boxes(&self, indices: &[usize]) -> Vec<Vec<GtBox>> {
        indices.iter().map(|&i| self.boxes[i].clone()).collect()
    }

    pub fn all_annotations(&self) -> Vec<Annotation> {
        self.annotations.iter().flatten().cloned().collect()
    }
}

/// Converts annotations to class-indexed boxes; unknown categories are an error.
pub fn to_gt_boxes(anns: &[Annotation], labels: &[String]) -> Result<Vec<GtBox>> {
    anns.iter()
        .map(|a| {
            let class = labels
                .iter()
                .position(|l| *l == a.category)
                .ok_or_else(|| Error::Config(format!("category {:?} not in label set {labels:?}", a.category)))?;
            Ok(GtBox {
                x1: a.bbox.x1,
                y1: a.bbox.y1,
                x2: a.bbox.x2,
                y2: a.bbox.y2,
                class,
            })
        })
        .collect()
}

/// Loads every image of `split` listed in the manifest of `dir`.
pub fn load_split<T: Real>(dir: impl AsRef<Path>, split: Split, labels: &[String]) -> Result<Dataset<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if manifest.width != manifest.height {
        return Err(Error::Config(format!(
            "square images required, dataset is {}x{}",
            manifest.width, manifest.height
        )));
    }
    let size = manifest.width;
    let entries: Vec<_> = manifest.split(split).collect();
    let plane = 3 * size * size;
    let mut data = vec![T::zero(); entries.len() * plane];
    let mut names = Vec::with_capacity(entries.len());
    let mut annotations = Vec::with_capacity(entries.len());
    let mut boxes = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let path = dir.join(&e.file);
        let f = File::open(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let img = read_ppm(BufReader::new(f))?;
        if (img.width, img.height) != (size, size) {
            return Err(Error::Resolution {
                expected: format!("{size}x{size}"),
                actual: format!("{}x{} in {}", img.width, img.height, e.file),
            });
        }
        image_to_planes(&img, &mut data[i * plane..(i + 1) * plane]);
        let parsed = parse_annotation_file(dir.join(e.annotation_file()), labels)?;
        if let Some(err) = parsed.errors.first() {
            return Err(Error::Config(format!("{}: {err}", e.annotation_file())));
        }
        boxes.push(to_gt_boxes(&parsed.items, labels)?);
        annotations.push(parsed.items);
        names.push(e.file.clone());
    }
    Ok(Dataset {
        names,
        images: Tensor4::from_vec(Shape4::new(entries.len(), 3, size, size), data)?,
        annotations,
        boxes,
        labels: labels.to_vec(),
    })
}
