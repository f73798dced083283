//! Trains the requested detector variants on one dataset with one seed and
//! writes their loss traces, metrics and a comparison table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lim_core::ParamStore;
use lim_detector::checkpoint::save_checkpoint;
use lim_detector::{load_split, train, Dataset, Detector, DetectorConfig, TrainConfig, TrainReport, Variant};
use lim_synth::{read_manifest, write_dataset, DatasetConfig, ShapeKind, Split};

use crate::datagen::base_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainEvalSettings {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// Images generated with `--generate` (train and test together).
    pub images: usize,
    pub min_size: f64,
    pub max_size: f64,
    pub variants: Vec<Variant>,
}

impl Default for TrainEvalSettings {
    fn default() -> Self {
        let data = DatasetConfig::default();
        Self {
            detector: DetectorConfig::default(),
            train: TrainConfig::default(),
            images: 625,
            min_size: data.min_size,
            max_size: data.max_size,
            variants: vec![Variant::Baseline, Variant::Full],
        }
    }
}

const OWN_KEYS: [&str; 4] = ["images", "min_size", "max_size", "variants"];

fn all_keys() -> &'static [&'static str] {
    use std::sync::OnceLock;
    static KEYS: OnceLock<Vec<&'static str>> = OnceLock::new();
    KEYS.get_or_init(|| {
        DetectorConfig::KEYS
            .iter()
            .chain(TrainConfig::KEYS.iter())
            .chain(OWN_KEYS.iter())
            .copied()
            .collect()
    })
}

pub fn parse_variants(list: &str) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: Variant = name.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        bail!("no variants given (baseline, sp, bp, full)");
    }
    Ok(out)
}

impl TrainEvalSettings {
    pub fn keys() -> &'static [&'static str] {
        all_keys()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in lim_detector::parse_key_values(text, Self::keys())? {
            s.set(&k, &v).with_context(|| format!("invalid value {v:?} for {k}"))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "images" => self.images = value.parse()?,
            "min_size" => self.min_size = value.parse()?,
            "max_size" => self.max_size = value.parse()?,
            "variants" => self.variants = parse_variants(value)?,
            k if DetectorConfig::KEYS.contains(&k) => self.detector.set(k, value)?,
            k => self.train.set(k, value)?,
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            width: self.detector.resolution,
            height: self.detector.resolution,
            classes: self.detector.classes,
            min_size: self.min_size,
            max_size: self.max_size,
        }
    }

    pub fn to_key_values(&self) -> String {
        let t = &self.train;
        let mut s = self.detector.to_key_values();
        let _ = write!(
            s,
            "learning_rate = {}\nmomentum = {}\nweight_decay = {}\nbatch_size = {}\nsteps = {}\nseed = {}\n\
             eval_every = {}\nscore_threshold = {}\nnms_iou = {}\nimages = {}\nmin_size = {}\nmax_size = {}\nvariants = {}\n",
            t.learning_rate,
            t.momentum,
            t.weight_decay,
            t.batch_size,
            t.steps,
            t.seed,
            t.eval_every,
            t.score_threshold,
            t.nms_iou,
            self.images,
            self.min_size,
            self.max_size,
            self.variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(",")
        );
        s
    }
}

/// Training and test splits of a dataset directory, generating it first when asked.
pub fn prepare_data(s: &TrainEvalSettings, dir: &Path, generate: bool) -> Result<(Dataset<f32>, Dataset<f32>)> {
    if generate {
        write_dataset(s.images, dir, base_seed(s.train.seed), &s.dataset_config())
            .with_context(|| format!("generating dataset in {}", dir.display()))?;
    }
    let manifest = read_manifest(dir).with_context(|| format!("reading dataset {} (use --generate to create it)", dir.display()))?;
    let r = s.detector.resolution;
    if (manifest.width, manifest.height) != (r, r) {
        bail!(
            "dataset images are {}x{}, detector resolution is {r}",
            manifest.width,
            manifest.height
        );
    }
    let labels = ShapeKind::labels(s.detector.classes);
    let train_set = load_split(dir, Split::Train, &labels)?;
    let test_set = load_split(dir, Split::Test, &labels)?;
    if train_set.is_empty() || test_set.is_empty() {
        bail!("dataset {} needs both training and test images", dir.display());
    }
    Ok((train_set, test_set))
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    /// The training report, or why the variant failed.
    pub result: std::result::Result<TrainReport, String>,
}

impl VariantOutcome {
    pub fn failed(&self) -> bool {
        self.result.is_err()
    }

    /// Loss trace, one step per line.
    pub fn loss_file(&self) -> String {
        let mut s = String::from("# step loss\n");
        if let Ok(r) = &self.result {
            for (i, l) in r.losses.iter().enumerate() {
                let _ = writeln!(s, "{} {}", i + 1, l);
            }
        }
        s
    }

    /// Key = value metrics; contains nothing that varies between identical runs.
    pub fn metrics_file(&self) -> String {
        let mut s = format!("variant = {}\n", self.variant.name());
        match &self.result {
            Err(e) => {
                let _ = writeln!(s, "status = FAILED\nerror = {}", e.replace('\n', " "));
            }
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "status = ok\nsteps = {}\ninitial_loss = {}\nfinal_loss = {}\nfinal_map = {}\nbest_map = {}",
                    r.losses.len(),
                    r.initial_loss(),
                    r.final_loss(),
                    r.final_map(),
                    r.best_map()
                );
                for e in &r.evals {
                    let _ = writeln!(s, "map.{} = {}", e.step, e.map);
                }
            }
        }
        s
    }
}

/// Aligned table of every variant against the baseline.
pub fn comparison_table(outcomes: &[VariantOutcome]) -> String {
    let baseline = outcomes
        .iter()
        .find(|o| o.variant == Variant::Baseline)
        .and_then(|o| o.result.as_ref().ok())
        .map(TrainReport::final_map);
    let mut s = format!(
        "{:<10}  {:>7}  {:>8}  {:>8}  {:>8}  {:>10}\n",
        "variant", "status", "mAP@0.5", "best", "delta", "loss ratio"
    );
    for o in outcomes {
        match &o.result {
            Err(_) => {
                let _ = writeln!(s, "{:<10}  {:>7}  {:>8}  {:>8}  {:>8}  {:>10}", o.variant.label(), "FAILED", "-", "-", "-", "-");
            }
            Ok(r) => {
                let delta = baseline.map_or_else(|| "-".to_string(), |b| format!("{:+.4}", r.final_map() - b));
                let _ = writeln!(
                    s,
                    "{:<10}  {:>7}  {:>8.4}  {:>8.4}  {:>8}  {:>10.4}",
                    o.variant.label(),
                    "ok",
                    r.final_map(),
                    r.best_map(),
                    delta,
                    r.final_loss() / r.initial_loss()
                );
            }
        }
    }
    s
}

/// Trains one variant from the seed in `s.train`; any training error marks it failed.
pub fn run_variant(
    s: &TrainEvalSettings,
    variant: Variant,
    train_set: &Dataset<f32>,
    test_set: &Dataset<f32>,
    progress: &mut dyn FnMut(Variant, usize, f64),
) -> Result<(VariantOutcome, Option<(Detector, ParamStore<f32>)>)> {
    let cfg = DetectorConfig {
        variant,
        ..s.detector.clone()
    };
    let mut store = ParamStore::new();
    let model = Detector::init(&cfg, &mut store, s.train.seed)?;
    let result = train(&model, &mut store, train_set, test_set, &s.train, &mut |step, parts| {
        progress(variant, step, parts.total)
    });
    Ok(match result {
        Ok(r) => (
            VariantOutcome {
                variant,
                result: Ok(r),
            },
            Some((model, store)),
        ),
        Err(e) => (
            VariantOutcome {
                variant,
                result: Err(e.to_string()),
            },
            None,
        ),
    })
}

/// Paths written for one variant.
pub fn variant_paths(out: &Path, v: Variant) -> [PathBuf; 3] {
    [
        out.join(format!("{}.loss", v.name())),
        out.join(format!("{}.metrics", v.name())),
        out.join(format!("{}.ckpt", v.name())),
    ]
}

pub const COMPARISON_FILE: &str = "comparison.txt";

/// Trains every configured variant and writes results under `out` when given.
pub fn train_eval(
    s: &TrainEvalSettings,
    data_dir: &Path,
    generate: bool,
    out: Option<&Path>,
    progress: &mut dyn FnMut(Variant, usize, f64),
) -> Result<Vec<VariantOutcome>> {
    s.detector.validate()?;
    s.train.validate()?;
    let (train_set, test_set) = prepare_data(s, data_dir, generate)?;
    if let Some(out) = out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("run.cfg"), s.to_key_values())?;
    }
    let mut outcomes = Vec::with_capacity(s.variants.len());
    for &v in &s.variants {
        let (outcome, trained) = run_variant(s, v, &train_set, &test_set, progress)?;
        if let Some(out) = out {
            let [loss, metrics, ckpt] = variant_paths(out, v);
            std::fs::write(&loss, outcome.loss_file()).with_context(|| format!("writing {}", loss.display()))?;
            std::fs::write(&metrics, outcome.metrics_file()).with_context(|| format!("writing {}", metrics.display()))?;
            if let Some((model, store)) = &trained {
                save_checkpoint(&ckpt, store, &model.cfg)?;
            }
        }
        outcomes.push(outcome);
    }
    if let Some(out) = out {
        std::fs::write(out.join(COMPARISON_FILE), comparison_table(&outcomes))?;
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_round_trip() {
        let mut s = TrainEvalSettings::default();
        s.set("width", "8").unwrap();
        s.set("variants", "full, sp").unwrap();
        s.set("steps", "7").unwrap();
        let back = TrainEvalSettings::from_text(&s.to_key_values()).unwrap();
        assert_eq!(back, s);
        let err = TrainEvalSettings::from_text("stepz = 3").unwrap_err().to_string();
        assert!(err.contains("valid keys"), "{err}");
        assert!(parse_variants("").is_err());
        assert!(parse_variants("full,nope").is_err());
    }

    #[test]
    fn tiny_run_writes_files_and_is_repeatable() {
        let text = "resolution = 32\nlevels = 2\nwidth = 4\nstem_channels = 2\ndepth = 1\nsteps = 3\n\
                    batch_size = 4\neval_every = 2\nimages = 20\nmin_size = 4\nmax_size = 10\nvariants = baseline,full\n";
        let s = TrainEvalSettings::from_text(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let first = train_eval(&s, &data, true, Some(&a), &mut |_, _, _| {}).unwrap();
        train_eval(&s, &data, false, Some(&b), &mut |_, _, _| {}).unwrap();
        assert_eq!(first.len(), 2);
        for v in [Variant::Baseline, Variant::Full] {
            for (pa, pb) in variant_paths(&a, v).iter().zip(variant_paths(&b, v).iter()) {
                assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap(), "{}", pa.display());
            }
        }
        let table = std::fs::read_to_string(a.join(COMPARISON_FILE)).unwrap();
        assert!(table.contains("baseline") && table.contains("+BP+BA"), "{table}");
    }

    #[test]
    fn failed_variant_is_reported() {
        let o = VariantOutcome {
            variant: Variant::Sp,
            result: Err("diverged at step 3".into()),
        };
        assert!(o.metrics_file().contains("status = FAILED"));
        assert!(comparison_table(&[o]).contains("FAILED"));
    }
}
