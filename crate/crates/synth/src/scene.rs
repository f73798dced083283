use std::fmt;
use std::str::FromStr;

use lim_eval::{Annotation, BoundingBox};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ppm::RgbImage;

/// Material families of dual-energy X-ray pseudo-coloring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaterialClass {
    Organic,
    Inorganic,
    Mixture,
}

impl MaterialClass {
    pub const ALL: [MaterialClass; 3] = [Self::Organic, Self::Inorganic, Self::Mixture];

    pub fn base_rgb(self) -> [u8; 3] {
        match self {
            Self::Organic => [255, 150, 40],
            Self::Inorganic => [60, 110, 235],
            Self::Mixture => [70, 180, 70],
        }
    }

    /// Fraction of the complementary color absorbed by one layer.
    pub fn attenuation(self) -> f64 {
        match self {
            Self::Organic => 0.8,
            Self::Inorganic => 0.85,
            Self::Mixture => 0.75,
        }
    }

    /// Per-channel transmittance of one layer.
    pub fn transmittance(self) -> [f64; 3] {
        let mu = self.attenuation();
        self.base_rgb().map(|c| 1.0 - mu * (1.0 - f64::from(c) / 255.0))
    }

    fn index(self) -> usize {
        match self {
            Self::Organic => 0,
            Self::Inorganic => 1,
            Self::Mixture => 2,
        }
    }
}

/// Object categories of the synthetic detector task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Capsule,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [Self::Rectangle, Self::Ellipse, Self::Capsule];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rectangle => "rectangle",
            Self::Ellipse => "ellipse",
            Self::Capsule => "capsule",
        }
    }

    /// Material each kind is rendered in.
    pub fn material(self) -> MaterialClass {
        match self {
            Self::Rectangle => MaterialClass::Inorganic,
            Self::Ellipse => MaterialClass::Organic,
            Self::Capsule => MaterialClass::Mixture,
        }
    }

    /// Category names of the first `k` kinds.
    pub fn labels(k: usize) -> Vec<String> {
        Self::ALL[..k.min(3)].iter().map(|s| s.name().to_string()).collect()
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown shape kind {s:?}")))
    }
}

/// One shape to render, in pixel units. Capsules run along their longer half-extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeDesc {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub half_w: f64,
    pub half_h: f64,
}

impl ShapeDesc {
    /// Whether the pixel whose center is `(x, y)` is covered.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= self.half_w && dy.abs() <= self.half_h,
            ShapeKind::Ellipse => (dx / self.half_w).powi(2) + (dy / self.half_h).powi(2) <= 1.0,
            ShapeKind::Capsule => {
                let (along, across, half_len, r) = if self.half_w >= self.half_h {
                    (dx, dy, self.half_w, self.half_h)
                } else {
                    (dy, dx, self.half_h, self.half_w)
                };
                let core = (half_len - r).max(0.0);
                let excess = (along.abs() - core).max(0.0);
                excess * excess + across * across <= r * r
            }
        }
    }
}

/// Relative frequencies of 1..=10 instances per image.
pub const INSTANCE_COUNT_WEIGHTS: [u32; 10] = [15953, 13627, 8565, 4096, 1875, 747, 308, 132, 43, 13];

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Rendered in order; later shapes occlude earlier ones.
    pub shapes: Vec<ShapeDesc>,
    pub seed: u64,
}

impl SceneSpec {
    /// Random scene: instance count drawn from [`INSTANCE_COUNT_WEIGHTS`], kinds
    /// uniform over the first `classes`, side lengths uniform in `size_range`.
    pub fn random(width: usize, height: usize, classes: usize, size_range: (f64, f64), seed: u64) -> Result<Self> {
        if !(1..=3).contains(&classes) {
            return Err(Error::Spec(format!("class count {classes} not in 1..=3")));
        }
        let (lo, hi) = size_range;
        if !(lo >= 2.0 && lo <= hi && hi <= width.min(height) as f64) {
            return Err(Error::Spec(format!("size range {lo}..{hi} does not fit {width}x{height}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = WeightedIndex::new(INSTANCE_COUNT_WEIGHTS).expect("static weights").sample(&mut rng) + 1;
        let shapes = (0..count)
            .map(|_| {
                let kind = ShapeKind::ALL[rng.gen_range(0..classes)];
                let mut w = rng.gen_range(lo..=hi);
                let mut h = rng.gen_range(lo..=hi);
                if kind == ShapeKind::Capsule {
                    // Keep capsules visibly elongated.
                    let long = w.max(h);
                    let short = (long / rng.gen_range(1.8..2.6)).max(lo.min(long));
                    (w, h) = if rng.gen_bool(0.5) { (long, short) } else { (short, long) };
                }
                let (hw, hh) = (w / 2.0, h / 2.0);
                ShapeDesc {
                    kind,
                    cx: rng.gen_range(hw * 0.5..=width as f64 - hw * 0.5),
                    cy: rng.gen_range(hh * 0.5..=height as f64 - hh * 0.5),
                    half_w: hw,
                    half_h: hh,
                }
            })
            .collect();
        Ok(Self {
            width,
            height,
            shapes,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub kind: ShapeKind,
    pub material: MaterialClass,
    /// Tight hull of the rendered pixels, pixel `(x, y)` spanning `[x, x + 1) x [y, y + 1)`.
    pub bbox: BoundingBox,
    pub pixels: usize,
    /// Share of this instance's pixels also covered by a later instance.
    pub occlusion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    pub instances: Vec<Instance>,
}

impl Scene {
    pub fn annotations(&self, image_name: &str) -> Vec<Annotation> {
        self.instances
            .iter()
            .map(|i| Annotation {
                image: image_name.to_string(),
                category: i.kind.name().to_string(),
                bbox: i.bbox,
            })
            .collect()
    }
}

/// Renders a scene. Shapes with no pixel inside the image are dropped.
pub fn generate_scene(spec: &SceneSpec) -> Scene {
    let (w, h) = (spec.width, spec.height);
    let mut layers = vec![[0u8; 3]; w * h];
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(spec.shapes.len());
    let mut kept = Vec::with_capacity(spec.shapes.len());
    for s in &spec.shapes {
        let mut mask = vec![false; w * h];
        let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
        let mut pixels = 0;
        for y in 0..h {
            for x in 0..w {
                if s.covers(x as f64 + 0.5, y as f64 + 0.5) {
                    mask[y * w + x] = true;
                    layers[y * w + x][s.kind.material().index()] += 1;
                    pixels += 1;
                    (x1, y1, x2, y2) = (x1.min(x), y1.min(y), x2.max(x + 1), y2.max(y + 1));
                }
            }
        }
        if pixels == 0 {
            continue;
        }
        let bbox = BoundingBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).expect("non-empty hull");
        masks.push(mask);
        kept.push((s.kind, bbox, pixels));
    }

    let trans = MaterialClass::ALL.map(MaterialClass::transmittance);
    let mut image = RgbImage::new(w, h);
    for (p, counts) in layers.iter().enumerate() {
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let t: f64 = (0..3).map(|m| trans[m][c].powi(i32::from(counts[m]))).product();
            *out = (255.0 * t).round() as u8;
        }
        image.set_pixel(p % w, p / w, rgb);
    }

    let instances = kept
        .iter()
        .enumerate()
        .map(|(i, &(kind, bbox, pixels))| {
            let covered = (0..w * h)
                .filter(|&p| masks[i][p] && masks[i + 1..].iter().any(|m| m[p]))
                .count();
            Instance {
                kind,
                material: kind.material(),
                bbox,
                pixels,
                occlusion: covered as f64 / pixels as f64,
            }
        })
        .collect();
    Scene { image, instances }
}
