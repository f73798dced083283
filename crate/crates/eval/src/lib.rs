//! Detection evaluation: annotation and detection files, IoU, per-class
//! all-points average precision, size classes and dataset statistics.

pub mod ap;
pub mod bbox;
pub mod error;
pub mod io;
pub mod size;
pub mod stats;

pub use ap::{average_precision, evaluate, mean_ap, ApResult, Evaluation};
pub use bbox::{iou, Annotation, BoundingBox, Detection};
pub use error::{Error, LineError, Result};
pub use io::{
    format_annotation, format_detection, parse_annotation_file, parse_annotations, parse_detection_file, parse_detections,
    write_annotations, write_detections, Parsed,
};
pub use size::{classify_size, split_by_size, SizeClass, SizeSplit};
pub use stats::{dataset_stats, DatasetStats};
