use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lim_cli::annotations::split_file_name;
use lim_cli::train_eval::parse_variants;
use lim_cli::{
    generate, load_settings, run_gradcheck, scan_bench, score_detections, train_eval, write_split, AnnotationSet,
    BenchSettings, GenDataSettings, GradcheckSettings, TrainEvalSettings,
};
use lim_eval::SizeClass;

/// Lateral inhibition module toolkit: verification, benchmarking, data
/// generation, training and evaluation.
///
/// Exit status: 0 success, 1 verification failure, 2 usage or configuration error.
#[derive(Parser, Debug)]
#[command(name = "lim", version)]
struct RunConfig {
    /// Flat `key = value` settings file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed, overriding the settings file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare every backward rule against central finite differences.
    Gradcheck {
        #[arg(long)]
        instances: Option<usize>,
        /// Corrupt the named backward rule (negative control).
        #[arg(long)]
        fault: Option<String>,
        /// Only run these checks (comma separated).
        #[arg(long)]
        only: Option<String>,
    },
    /// Benchmark vertical max scans: column loop against row sweep.
    ScanBench {
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Render a synthetic dataset into --out.
    GenData {
        #[arg(long)]
        images: Option<usize>,
    },
    /// Train detector variants and compare their held-out mAP.
    TrainEval {
        /// Dataset directory (read, or written with --generate).
        #[arg(long)]
        data: PathBuf,
        /// Generate the dataset into --data first.
        #[arg(long)]
        generate: bool,
        /// Comma-separated variants: baseline, sp, bp, full.
        #[arg(long)]
        variants: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Print the loss every this many steps (0 = silent).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Dataset statistics of an annotation file or dataset directory.
    Stats {
        #[command(flatten)]
        input: AnnotationArgs,
        /// Emit `key = value` lines instead of tables.
        #[arg(long)]
        key_values: bool,
    },
    /// Statistics plus small/medium/large annotation files written to --out.
    Split {
        #[command(flatten)]
        input: AnnotationArgs,
    },
    /// Score a detection file against annotations.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[command(flatten)]
        input: AnnotationArgs,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Categories to score (comma separated); default: those in the annotations.
        #[arg(long)]
        categories: Option<String>,
    },
}

#[derive(Args, Debug)]
struct AnnotationArgs {
    /// Annotation file, or a dataset directory with a manifest.
    #[arg(long)]
    annotations: PathBuf,
    /// Image directory used for sizes (its manifest, else PPM headers).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Image width for every image.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    /// Image height for every image.
    #[arg(long, requires = "width")]
    height: Option<usize>,
}

impl AnnotationArgs {
    fn load(&self) -> Result<AnnotationSet> {
        let set = AnnotationSet::load(&self.annotations)?.with_dims(self.width.zip(self.height), self.images.as_deref())?;
        for d in &set.diagnostics {
            eprintln!("warning: {d}");
        }
        Ok(set)
    }
}

/// A finished subcommand: passed or failed verification.
enum Status {
    Success,
    Failed,
}

fn no_config(rc: &RunConfig, what: &str) -> Result<()> {
    if rc.config.is_some() {
        bail!("{what} takes no settings file");
    }
    Ok(())
}

fn read_train_eval_settings(path: Option<&Path>) -> Result<TrainEvalSettings> {
    match path {
        None => Ok(TrainEvalSettings::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainEvalSettings::from_text(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn run(rc: RunConfig) -> Result<Status> {
    let mut stdout = std::io::stdout().lock();
    match &rc.command {
        Command::Gradcheck { instances, fault, only } => {
            let mut s: GradcheckSettings = load_settings(rc.config.as_deref())?;
            if let Some(n) = instances {
                s.check.instances = *n;
            }
            if let Some(seed) = rc.seed {
                s.check.seed = seed;
            }
            if let Some(f) = fault {
                s.check.fault = Some(f.clone());
            }
            if let Some(o) = only {
                s.only = o.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
            }
            let reports = run_gradcheck(&s, &mut stdout)?;
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
            if failed.is_empty() {
                writeln!(stdout, "all {} gradient checks passed", reports.len())?;
                Ok(Status::Success)
            } else {
                writeln!(stdout, "gradient check failed: {}", failed.join(", "))?;
                Ok(Status::Failed)
            }
        }
        Command::ScanBench {
            channels,
            height,
            width,
            repeats,
        } => {
            let mut s: BenchSettings = load_settings(rc.config.as_deref())?;
            s.channels = channels.unwrap_or(s.channels);
            s.height = height.unwrap_or(s.height);
            s.width = width.unwrap_or(s.width);
            s.repeats = repeats.unwrap_or(s.repeats);
            s.seed = rc.seed.unwrap_or(s.seed);
            match scan_bench(&s) {
                Ok(r) => {
                    write!(stdout, "{}", r.render(&s))?;
                    Ok(Status::Success)
                }
                Err(e) if e.to_string().contains("differ") => {
                    writeln!(stdout, "FAILED: {e}")?;
                    Ok(Status::Failed)
                }
                Err(e) => Err(e),
            }
        }
        Command::GenData { images } => {
            let mut s: GenDataSettings = load_settings(rc.config.as_deref())?;
            s.images = images.unwrap_or(s.images);
            s.seed = rc.seed.unwrap_or(s.seed);
            let out = rc.out.as_deref().context("gen-data needs --out")?;
            let m = generate(&s, out)?;
            writeln!(
                stdout,
                "wrote {} images ({} instances) to {}",
                m.entries.len(),
                m.total_instances(),
                out.display()
            )?;
            Ok(Status::Success)
        }
        Command::TrainEval {
            data,
            generate,
            variants,
            steps,
            log_every,
        } => {
            let mut s = read_train_eval_settings(rc.config.as_deref())?;
            if let Some(v) = variants {
                s.variants = parse_variants(v)?;
            }
            if let Some(n) = steps {
                s.train.steps = *n;
            }
            if let Some(seed) = rc.seed {
                s.train.seed = seed;
            }
            let log_every = *log_every;
            let outcomes = train_eval(&s, data, *generate, rc.out.as_deref(), &mut |v, step, loss| {
                if log_every > 0 && step % log_every == 0 {
                    eprintln!("{:<8} step {step:>6}  loss {loss:.4}", v.name());
                }
            })?;
            write!(stdout, "{}", lim_cli::comparison_table(&outcomes))?;
            for o in &outcomes {
                if let Err(e) = &o.result {
                    writeln!(stdout, "{}: FAILED: {e}", o.variant.name())?;
                }
            }
            Ok(if outcomes.iter().any(|o| o.failed()) { Status::Failed } else { Status::Success })
        }
        Command::Stats { input, key_values } => {
            no_config(&rc, "stats")?;
            let st = input.load()?.stats()?;
            write!(stdout, "{}", if *key_values { st.key_values() } else { st.table() })?;
            Ok(Status::Success)
        }
        Command::Split { input } => {
            no_config(&rc, "split")?;
            let set = input.load()?;
            let out = rc.out.as_deref().context("split needs --out")?;
            let split = set.split()?;
            write!(stdout, "{}", set.stats()?.table())?;
            write_split(&split, out)?;
            for c in SizeClass::ALL {
                writeln!(stdout, "{}: {}", out.join(split_file_name(c)).display(), split.part(c).len())?;
            }
            Ok(Status::Success)
        }
        Command::Eval {
            detections,
            input,
            iou,
            categories,
        } => {
            no_config(&rc, "eval")?;
            let set = input.load()?;
            let cats: Vec<String> = categories
                .as_deref()
                .map(|c| c.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
                .unwrap_or_default();
            let (e, diags) = score_detections(detections, &set, &cats, *iou)?;
            for d in &diags {
                eprintln!("warning: {d}");
            }
            write!(stdout, "{}", e.table())?;
            Ok(Status::Success)
        }
    }
}

fn main() -> ExitCode {
    let rc = match RunConfig::try_parse() {
        Ok(rc) => rc,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(rc) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
