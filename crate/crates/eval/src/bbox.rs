use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, `x1 < x2` and `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoundingBox> {
        BoundingBox::new(self.x1.max(0.0), self.y1.max(0.0), self.x2.min(width), self.y2.min(height)).ok()
    }
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One ground-truth instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub image: String,
    pub category: String,
    pub bbox: BoundingBox,
}

/// One predicted instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image: String,
    pub category: String,
    pub score: f64,
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn new(image: impl Into<String>, category: impl Into<String>, score: f64, bbox: BoundingBox) -> Result<Self> {
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidScore(score));
        }
        Ok(Self {
            image: image.into(),
            category: category.into(),
            score,
            bbox,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
        // 50 / (100 + 100 - 50)
        assert_eq!(iou(&a, &b(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn clip_to_image() {
        let c = b(-5.0, 2.0, 12.0, 30.0).clip(10.0, 20.0).unwrap();
        assert_eq!(c, b(0.0, 2.0, 10.0, 20.0));
        assert!(b(11.0, 0.0, 12.0, 1.0).clip(10.0, 10.0).is_none());
    }

    #[test]
    fn score_range_enforced() {
        let bx = b(0.0, 0.0, 1.0, 1.0);
        assert!(Detection::new("a", "c", 1.5, bx).is_err());
        assert!(Detection::new("a", "c", 0.5, bx).is_ok());
    }
}
