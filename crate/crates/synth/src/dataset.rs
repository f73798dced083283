//! On-disk datasets: `%06d.ppm` images, a `%06d.txt` annotation file per
//! image and a `manifest.txt` with one line per image:
//! `file split instance_count occlusion...`.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lim_eval::write_annotations;

use crate::error::{Error, Result};
use crate::ppm::write_ppm;
use crate::scene::{generate_scene, SceneSpec};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Every fifth image is held out.
    pub fn of_index(i: usize) -> Self {
        if i % 5 == 4 {
            Self::Test
        } else {
            Self::Train
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub instances: usize,
    pub occlusion: Vec<f64>,
}

impl ManifestEntry {
    /// Name of the matching annotation file.
    pub fn annotation_file(&self) -> String {
        match self.file.rsplit_once('.') {
            Some((stem, _)) => format!("{stem}.txt"),
            None => format!("{}.txt", self.file),
        }
    }
}

/// Generation settings shared by every scene of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub min_size: f64,
    pub max_size: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            classes: 3,
            min_size: 10.0,
            max_size: 26.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn total_instances(&self) -> usize {
        self.entries.iter().map(|e| e.instances).sum()
    }

    pub fn render(&self) -> String {
        let mut s = format!("# width = {}\n# height = {}\n", self.width, self.height);
        for e in &self.entries {
            let _ = write!(s, "{} {} {}", e.file, e.split, e.instances);
            for o in &e.occlusion {
                let _ = write!(s, " {o}");
            }
            s.push('\n');
        }
        s
    }
}

/// Renders `n` scenes into `out_dir` (created if missing). Scene `i` uses seed `base_seed + i`.
pub fn write_dataset(n: usize, out_dir: impl AsRef<Path>, base_seed: u64, cfg: &DatasetConfig) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let spec = SceneSpec::random(
            cfg.width,
            cfg.height,
            cfg.classes,
            (cfg.min_size, cfg.max_size),
            base_seed.wrapping_add(i as u64),
        )?;
        let scene = generate_scene(&spec);
        let file = format!("{i:06}.ppm");
        let path = dir.join(&file);
        let f = fs::File::create(&path).map_err(Error::io(&path))?;
        write_ppm(BufWriter::new(f), &scene.image).map_err(Error::io(&path))?;
        let entry = ManifestEntry {
            file: file.clone(),
            split: Split::of_index(i),
            instances: scene.instances.len(),
            occlusion: scene.instances.iter().map(|x| x.occlusion).collect(),
        };
        let ann_path = dir.join(entry.annotation_file());
        write_annotations(&ann_path, &scene.annotations(&file)).map_err(|e| match e {
            lim_eval::Error::Io { path, source } => Error::Io { path, source },
            other => Error::Spec(other.to_string()),
        })?;
        entries.push(entry);
    }
    let manifest = Manifest {
        width: cfg.width,
        height: cfg.height,
        entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(Error::io(&path))?;
    Ok(manifest)
}

pub fn manifest_path(dir: impl AsRef<Path>) -> PathBuf {
    dir.as_ref().join(MANIFEST)
}

/// Parses `manifest.txt` in `dir`.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let (mut width, mut height) = (None, None);
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Manifest { line: i + 1, message };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                let v: usize = v.trim().parse().map_err(|_| bad(format!("bad value in {line:?}")))?;
                match k.trim() {
                    "width" => width = Some(v),
                    "height" => height = Some(v),
                    _ => {}
                }
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 {
            return Err(bad("expected: file split count occlusion...".into()));
        }
        let instances: usize = f[2].parse().map_err(|_| bad(format!("bad instance count {:?}", f[2])))?;
        let occlusion = f[3..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad occlusion {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if occlusion.len() != instances {
            return Err(bad(format!("{instances} instances but {} occlusion values", occlusion.len())));
        }
        entries.push(ManifestEntry {
            file: f[0].to_string(),
            split: f[1].parse().map_err(bad)?,
            instances,
            occlusion,
        });
    }
    match (width, height) {
        (Some(width), Some(height)) => Ok(Manifest { width, height, entries }),
        _ => Err(Error::Manifest {
            line: 0,
            message: "missing width/height header".into(),
        }),
    }
}
