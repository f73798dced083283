use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::bbox::Annotation;
use crate::error::Result;
use crate::size::{classify_size, SizeClass};

/// Category and per-image instance statistics of an annotation set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub instances: usize,
    pub images: usize,
    pub per_category: BTreeMap<String, usize>,
    /// Instances per image -> number of images.
    pub histogram: BTreeMap<usize, usize>,
    /// `None` when there are no images.
    pub mean_per_image: Option<f64>,
    /// Per category counts of small, medium, large; present when image sizes are known.
    pub sizes: Option<BTreeMap<String, [usize; 3]>>,
}

/// Builds the report. `images` lists images that may carry no annotation;
/// every image named by an annotation is counted regardless.
pub fn dataset_stats(
    annotations: &[Annotation],
    images: &[String],
    dims: Option<&dyn Fn(&str) -> Option<(f64, f64)>>,
) -> Result<DatasetStats> {
    let mut per_image: BTreeMap<&str, usize> = images.iter().map(|i| (i.as_str(), 0)).collect();
    let mut per_category = BTreeMap::new();
    for a in annotations {
        *per_image.entry(a.image.as_str()).or_default() += 1;
        *per_category.entry(a.category.clone()).or_default() += 1;
    }
    let mut histogram = BTreeMap::new();
    for &n in per_image.values() {
        *histogram.entry(n).or_default() += 1;
    }
    let sizes = match dims {
        None => None,
        Some(dims) => {
            let mut m: BTreeMap<String, [usize; 3]> = BTreeMap::new();
            for a in annotations {
                let (w, h) = dims(&a.image).ok_or_else(|| crate::Error::MissingDims(a.image.clone()))?;
                let slot = match classify_size(&a.bbox, w, h) {
                    SizeClass::Small => 0,
                    SizeClass::Medium => 1,
                    SizeClass::Large => 2,
                };
                m.entry(a.category.clone()).or_default()[slot] += 1;
            }
            Some(m)
        }
    };
    let images = per_image.len();
    Ok(DatasetStats {
        instances: annotations.len(),
        images,
        per_category,
        histogram,
        mean_per_image: (images > 0).then(|| annotations.len() as f64 / images as f64),
        sizes,
    })
}

impl DatasetStats {
    pub fn categories(&self) -> BTreeSet<&str> {
        self.per_category.keys().map(String::as_str).collect()
    }

    /// Aligned human-readable tables.
    pub fn table(&self) -> String {
        let width = self.per_category.keys().map(String::len).max().unwrap_or(0).max(8);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>9}", "category", "instances");
        for (c, n) in &self.per_category {
            let _ = writeln!(s, "{c:<width$}  {n:>9}");
        }
        let _ = writeln!(s, "{:<width$}  {:>9}", "total", self.instances);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>9}  {:>6}", "per-image", "images");
        for (k, n) in &self.histogram {
            let _ = writeln!(s, "{k:>9}  {n:>6}");
        }
        match self.mean_per_image {
            Some(m) => {
                let _ = writeln!(s, "mean instances per image: {m:.2}");
            }
            None => {
                let _ = writeln!(s, "mean instances per image: undefined (no images)");
            }
        }
        if let Some(sizes) = &self.sizes {
            let _ = writeln!(s);
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>6}  {:>6}", "category", "small", "medium", "large");
            for (c, [a, b, d]) in sizes {
                let _ = writeln!(s, "{c:<width$}  {a:>6}  {b:>6}  {d:>6}");
            }
        }
        s
    }

    /// One `key = value` per line.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "instances = {}", self.instances);
        let _ = writeln!(s, "images = {}", self.images);
        match self.mean_per_image {
            Some(m) => {
                let _ = writeln!(s, "mean_per_image = {m}");
            }
            None => {
                let _ = writeln!(s, "mean_per_image = undefined");
            }
        }
        for (c, n) in &self.per_category {
            let _ = writeln!(s, "category.{c} = {n}");
        }
        for (k, n) in &self.histogram {
            let _ = writeln!(s, "images_with.{k} = {n}");
        }
        if let Some(sizes) = &self.sizes {
            for (c, counts) in sizes {
                for (class, n) in SizeClass::ALL.iter().zip(counts) {
                    let _ = writeln!(s, "size.{c}.{class} = {n}");
                }
            }
        }
        s
    }
}
