//! Annotation sets on disk (a single file or a generated dataset directory)
//! and the reports built from them: statistics, size splits, scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lim_eval::{
    dataset_stats, evaluate, parse_annotation_file, parse_detection_file, split_by_size, write_annotations, Annotation,
    DatasetStats, Evaluation, LineError, SizeClass, SizeSplit,
};
use lim_synth::{read_manifest, read_ppm_dims};

/// A parse problem in one input file; the line was skipped.
#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub path: PathBuf,
    pub error: LineError,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.error)
    }
}

/// Where image sizes come from when classifying boxes by relative area.
#[derive(Clone, Debug, PartialEq)]
pub enum DimsSource {
    Unknown,
    /// All images share one size.
    Uniform(f64, f64),
    /// Per-image sizes read from PPM headers.
    PerImage(BTreeMap<String, (f64, f64)>),
}

impl DimsSource {
    pub fn lookup(&self, image: &str) -> Option<(f64, f64)> {
        match self {
            Self::Unknown => None,
            Self::Uniform(w, h) => Some((*w, *h)),
            Self::PerImage(m) => m.get(image).copied(),
        }
    }

    pub fn is_known(&self) -> bool {
        *self != Self::Unknown
    }
}

#[derive(Clone, Debug)]
pub struct AnnotationSet {
    pub annotations: Vec<Annotation>,
    /// Every image in the set, including those without annotations.
    pub images: Vec<String>,
    pub dims: DimsSource,
    pub diagnostics: Vec<Diagnostic>,
}

impl AnnotationSet {
    /// Loads a single annotation file, or every per-image file listed in the
    /// manifest of a dataset directory (which also fixes the image size).
    pub fn load(path: &Path) -> Result<Self> {
        let mut set = Self {
            annotations: Vec::new(),
            images: Vec::new(),
            dims: DimsSource::Unknown,
            diagnostics: Vec::new(),
        };
        if path.is_dir() {
            let manifest = read_manifest(path).with_context(|| format!("reading dataset {}", path.display()))?;
            set.dims = DimsSource::Uniform(manifest.width as f64, manifest.height as f64);
            for e in &manifest.entries {
                set.images.push(e.file.clone());
                set.add_file(&path.join(e.annotation_file()))?;
            }
        } else {
            set.add_file(path)?;
            let names: BTreeSet<&str> = set.annotations.iter().map(|a| a.image.as_str()).collect();
            set.images = names.into_iter().map(String::from).collect();
        }
        Ok(set)
    }

    fn add_file(&mut self, path: &Path) -> Result<()> {
        let parsed = parse_annotation_file(path, &[]).with_context(|| format!("reading {}", path.display()))?;
        self.annotations.extend(parsed.items);
        self.diagnostics.extend(parsed.errors.into_iter().map(|error| Diagnostic {
            path: path.to_path_buf(),
            error,
        }));
        Ok(())
    }

    /// Overrides the size source: explicit dimensions win, then an image
    /// directory (its manifest, else each image's PPM header).
    pub fn with_dims(mut self, explicit: Option<(usize, usize)>, images_dir: Option<&Path>) -> Result<Self> {
        if let Some((w, h)) = explicit {
            if w == 0 || h == 0 {
                bail!("image dimensions must be positive");
            }
            self.dims = DimsSource::Uniform(w as f64, h as f64);
        } else if let Some(dir) = images_dir {
            self.dims = match read_manifest(dir) {
                Ok(m) => DimsSource::Uniform(m.width as f64, m.height as f64),
                Err(_) => DimsSource::PerImage(read_header_dims(dir, &self.images)?),
            };
        }
        Ok(self)
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        let dims = |img: &str| self.dims.lookup(img);
        let dims_ref: Option<&dyn Fn(&str) -> Option<(f64, f64)>> = if self.dims.is_known() { Some(&dims) } else { None };
        Ok(dataset_stats(&self.annotations, &self.images, dims_ref)?)
    }

    pub fn split(&self) -> Result<SizeSplit> {
        if !self.dims.is_known() {
            bail!("image sizes unknown: pass --width/--height or --images");
        }
        Ok(split_by_size(&self.annotations, &|img| self.dims.lookup(img))?)
    }

    /// Sorted distinct categories.
    pub fn categories(&self) -> Vec<String> {
        let c: BTreeSet<&str> = self.annotations.iter().map(|a| a.category.as_str()).collect();
        c.into_iter().map(String::from).collect()
    }
}

fn read_header_dims(dir: &Path, images: &[String]) -> Result<BTreeMap<String, (f64, f64)>> {
    let mut out = BTreeMap::new();
    for img in images {
        let path = dir.join(img);
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let (w, h) = read_ppm_dims(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        out.insert(img.clone(), (w as f64, h as f64));
    }
    Ok(out)
}

/// File name of one size part.
pub fn split_file_name(c: SizeClass) -> String {
    format!("{}.txt", c.name())
}

/// Writes `small.txt`, `medium.txt` and `large.txt` into `dir`; returns the paths.
pub fn write_split(split: &SizeSplit, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut paths = Vec::new();
    for c in SizeClass::ALL {
        let p = dir.join(split_file_name(c));
        write_annotations(&p, split.part(c))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Scores a detection file against an annotation set at the given IoU.
pub fn score_detections(
    detections: &Path,
    set: &AnnotationSet,
    categories: &[String],
    iou: f64,
) -> Result<(Evaluation, Vec<Diagnostic>)> {
    let parsed = parse_detection_file(detections, &[]).with_context(|| format!("reading {}", detections.display()))?;
    let diags = parsed
        .errors
        .into_iter()
        .map(|error| Diagnostic {
            path: detections.to_path_buf(),
            error,
        })
        .collect();
    let cats = if categories.is_empty() { set.categories() } else { categories.to_vec() };
    Ok((evaluate(&parsed.items, &set.annotations, &cats, iou)?, diags))
}
