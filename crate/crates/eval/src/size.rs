use std::fmt;

use crate::bbox::{Annotation, BoundingBox};
use crate::error::{Error, Result};

/// Relative size of an instance: area ratio below 0.001 is small, above
/// 0.002 is large, anything in between (both ends included) is medium.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

pub const SMALL_BELOW: f64 = 0.001;
pub const LARGE_ABOVE: f64 = 0.002;

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn name(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }

    pub fn from_ratio(ratio: f64) -> Self {
        if ratio < SMALL_BELOW {
            Self::Small
        } else if ratio > LARGE_ABOVE {
            Self::Large
        } else {
            Self::Medium
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_size(bbox: &BoundingBox, image_width: f64, image_height: f64) -> SizeClass {
    SizeClass::from_ratio(bbox.area() / (image_width * image_height))
}

/// Annotations partitioned by size class, input order kept within each part.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SizeSplit {
    pub small: Vec<Annotation>,
    pub medium: Vec<Annotation>,
    pub large: Vec<Annotation>,
}

impl SizeSplit {
    pub fn part(&self, c: SizeClass) -> &[Annotation] {
        match c {
            SizeClass::Small => &self.small,
            SizeClass::Medium => &self.medium,
            SizeClass::Large => &self.large,
        }
    }
}

/// `dims` maps an image name to its `(width, height)`.
pub fn split_by_size(annotations: &[Annotation], dims: &dyn Fn(&str) -> Option<(f64, f64)>) -> Result<SizeSplit> {
    let mut out = SizeSplit::default();
    for a in annotations {
        let (w, h) = dims(&a.image).ok_or_else(|| Error::MissingDims(a.image.clone()))?;
        match classify_size(&a.bbox, w, h) {
            SizeClass::Small => out.small.push(a.clone()),
            SizeClass::Medium => out.medium.push(a.clone()),
            SizeClass::Large => out.large.push(a.clone()),
        }
    }
    Ok(out)
}
