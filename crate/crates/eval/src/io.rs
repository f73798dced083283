//! Line formats.
//!
//! Annotations: `image_name category x1 y1 x2 y2`.
//! Detections: `image_name category score x1 y1 x2 y2`.
//! Fields are whitespace separated; blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bbox::{Annotation, BoundingBox, Detection};
use crate::error::{Error, LineError, Result};

/// Parsed records plus the lines that were rejected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub errors: Vec<LineError>,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

fn number(field: &str, name: &str) -> Result<f64, String> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("unparseable {name} {field:?}"))
}

fn parse_box(fields: &[&str]) -> Result<BoundingBox, String> {
    let v = [
        number(fields[0], "x1")?,
        number(fields[1], "y1")?,
        number(fields[2], "x2")?,
        number(fields[3], "y2")?,
    ];
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

fn check_label(category: &str, labels: &[String]) -> Result<(), String> {
    if labels.is_empty() || labels.iter().any(|l| l == category) {
        Ok(())
    } else {
        Err(format!("unknown category {category:?} (expected one of {})", labels.join(", ")))
    }
}

fn parse_lines<T>(text: &str, mut line: impl FnMut(&[&str]) -> Result<T, String>) -> Parsed<T> {
    let mut out = Parsed {
        items: Vec::new(),
        errors: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        match line(&fields) {
            Ok(item) => out.items.push(item),
            Err(message) => out.errors.push(LineError { line: i + 1, message }),
        }
    }
    out
}

/// Parses annotation text. An empty `labels` accepts any category.
pub fn parse_annotations(text: &str, labels: &[String]) -> Parsed<Annotation> {
    parse_lines(text, |f| {
        if f.len() != 6 {
            return Err(format!("expected 6 fields (image category x1 y1 x2 y2), found {}", f.len()));
        }
        check_label(f[1], labels)?;
        Ok(Annotation {
            image: f[0].to_string(),
            category: f[1].to_string(),
            bbox: parse_box(&f[2..])?,
        })
    })
}

pub fn parse_detections(text: &str, labels: &[String]) -> Parsed<Detection> {
    parse_lines(text, |f| {
        if f.len() != 7 {
            return Err(format!(
                "expected 7 fields (image category score x1 y1 x2 y2), found {}",
                f.len()
            ));
        }
        check_label(f[1], labels)?;
        let score = number(f[2], "score")?;
        Detection::new(f[0], f[1], score, parse_box(&f[3..])?).map_err(|e| e.to_string())
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_annotation_file(path: impl AsRef<Path>, labels: &[String]) -> Result<Parsed<Annotation>> {
    Ok(parse_annotations(&read(path.as_ref())?, labels))
}

pub fn parse_detection_file(path: impl AsRef<Path>, labels: &[String]) -> Result<Parsed<Detection>> {
    Ok(parse_detections(&read(path.as_ref())?, labels))
}

pub fn format_annotation(a: &Annotation) -> String {
    let b = &a.bbox;
    format!("{} {} {} {} {} {}", a.image, a.category, b.x1, b.y1, b.x2, b.y2)
}

pub fn format_detection(d: &Detection) -> String {
    let b = &d.bbox;
    format!("{} {} {} {} {} {} {}", d.image, d.category, d.score, b.x1, b.y1, b.x2, b.y2)
}

/// Writes annotations in the line format; coordinates round-trip exactly.
pub fn write_annotations(path: impl AsRef<Path>, annotations: &[Annotation]) -> Result<()> {
    let mut text = String::new();
    for a in annotations {
        let _ = writeln!(text, "{}", format_annotation(a));
    }
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_detections(path: impl AsRef<Path>, detections: &[Detection]) -> Result<()> {
    let mut text = String::new();
    for d in detections {
        let _ = writeln!(text, "{}", format_detection(d));
    }
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
