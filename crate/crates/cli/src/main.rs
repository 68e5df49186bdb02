//! `wifi2vision` command-line driver: simulate, train, infer, evaluate and
//! compare.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use wifi2vision::cgan::{
    generate_sequence, train_gan, DiscriminatorConfig, GanTrainConfig, Generator, GeneratorConfig, GENERATOR_KIND,
};
use wifi2vision::csi::PairedSample;
use wifi2vision::dataset::{load_dataset, split_dataset, Dataset};
use wifi2vision::eval::{
    compare_reports, dominant_color, evaluate_gan, evaluate_supervised, extract_box_from_generated, read_report, SplitInfo,
    DEFAULT_FOREGROUND_THRESHOLD,
};
use wifi2vision::frame::Frame;
use wifi2vision::nn::checkpoint::{write_atomic, Checkpoint};
use wifi2vision::scene::{generate_dataset, SceneConfig};
use wifi2vision::supervised::{
    read_annotations, train_supervised, write_annotations, write_loss_csv, AnnotatedBox, AnnotationRecord,
    BoxRegressor, RegressorConfig, TeacherConfig, CHECKPOINT_KIND,
};
use wifi2vision::{Error, Result};

const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = "wifi2vision", version, about = "CSI-to-vision pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesise a paired CSI/frame dataset.
    Simulate {
        /// Scene configuration (JSON); the default scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the supervised regressor or the cGAN.
    Train {
        #[arg(value_enum)]
        regime: Regime,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a checkpoint over every sample of a dataset.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write ground-truth | generated comparison strips.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a checkpoint with AP at IoU 0.5.
    Evaluate {
        #[arg(long, value_enum)]
        kind: Regime,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Val)]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
        /// Hand annotations (JSON lines) replacing automatic extraction.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Signed AP difference of two reports on the same split.
    Compare {
        /// Supervised report.
        #[arg(long)]
        a: PathBuf,
        /// Unsupervised (cGAN) report.
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum Regime {
    Supervised,
    Gan,
}

#[derive(Copy, Clone, Debug, ValueEnum, PartialEq, Eq)]
enum SplitName {
    Train,
    Val,
    All,
}

impl SplitName {
    fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::All => "all",
        }
    }
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: Vec<String>,
    config_paths: Vec<String>,
    seed: Option<u64>,
    version: String,
    output: String,
    started_unix: f64,
    finished_unix: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SupervisedFile {
    teacher: TeacherConfig,
    regressor: RegressorConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GanFile {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    training: GanTrainConfig,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Fraction and seed recorded at training time, falling back to defaults.
fn training_split(ck: &Checkpoint) -> (f64, u64) {
    let t = &ck.manifest.config["training"];
    (
        t["train_fraction"].as_f64().unwrap_or(0.8),
        t["split_seed"].as_u64().unwrap_or(0),
    )
}

fn select_split(dataset: &Dataset, ck: &Checkpoint, which: SplitName) -> Result<(Vec<u64>, SplitInfo)> {
    let (fraction, seed) = training_split(ck);
    let ids = match which {
        SplitName::All => dataset.ids(),
        _ => {
            let (train, val) = split_dataset(&dataset.ids(), fraction, seed)?;
            if which == SplitName::Train {
                train
            } else {
                val
            }
        }
    };
    let info = SplitInfo::new(which.as_str(), fraction, seed, &ids);
    Ok((ids, info))
}

/// Datasets do not store their scene, so the background is taken as the
/// most frequent colour of the first frame.
fn scene_background(dataset: &Dataset) -> wifi2vision::frame::Color {
    dataset
        .samples()
        .first()
        .map(|s| dominant_color(&s.frame))
        .unwrap_or_else(wifi2vision::scene::default_background)
}

fn run(cmd: &Command) -> Result<(PathBuf, Vec<String>, Option<u64>)> {
    match cmd {
        Command::Simulate { scene, n, out, seed } => {
            let mut cfg: SceneConfig = match scene {
                Some(p) => SceneConfig::from_json(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
                None => SceneConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            generate_dataset(&cfg, *n, out)?;
            log::info!("wrote {n} samples to {}", out.display());
            Ok((out.clone(), scene.iter().map(|p| p.display().to_string()).collect(), Some(cfg.seed)))
        }
        Command::Train {
            regime,
            data,
            config,
            out,
            seed,
        } => {
            let dataset = load_dataset(data)?;
            ensure_dir(out)?;
            let configs = config.iter().map(|p| p.display().to_string()).collect();
            match regime {
                Regime::Supervised => {
                    let mut file: SupervisedFile = read_json(config.as_deref())?;
                    if let Some(s) = seed {
                        file.regressor.seed = *s;
                    }
                    let run = train_supervised(&dataset, &file.teacher, &file.regressor, Some(out))?;
                    write_loss_csv(&out.join("loss.csv"), &run.curve)?;
                    write_json(
                        &out.join("train_summary.json"),
                        &serde_json::json!({
                            "best_epoch": run.best_epoch,
                            "best_val_loss": run.curve[run.best_epoch - 1].val_loss,
                            "n_train": run.train_ids.len(),
                            "n_val": run.val_ids.len(),
                        }),
                    )?;
                    Ok((out.clone(), configs, Some(file.regressor.seed)))
                }
                Regime::Gan => {
                    let mut file: GanFile = read_json(config.as_deref())?;
                    if let Some(s) = seed {
                        file.training.seed = *s;
                    }
                    let run = train_gan(&dataset, &file.generator, &file.discriminator, &file.training, Some(out))?;
                    write_json(
                        &out.join("train_summary.json"),
                        &serde_json::json!({
                            "epochs": run.metrics.len(),
                            "collapse_warnings": run.collapse_warnings,
                            "n_train": run.train_ids.len(),
                            "n_val": run.val_ids.len(),
                        }),
                    )?;
                    Ok((out.clone(), configs, Some(file.training.seed)))
                }
            }
        }
        Command::Infer {
            checkpoint,
            data,
            out,
            compare,
            seed,
        } => {
            let ck = Checkpoint::load(checkpoint)?;
            let dataset = load_dataset(data)?;
            ensure_dir(out)?;
            let samples = dataset.samples();
            let csi: Vec<Vec<f32>> = samples.iter().map(|s| s.normalized_csi::<f32>().values).collect();
            let refs: Vec<&[f32]> = csi.iter().map(Vec::as_slice).collect();
            let boxes = match ck.manifest.kind.as_str() {
                CHECKPOINT_KIND => {
                    let mut model = BoxRegressor::<f32>::from_checkpoint(&ck, checkpoint)?;
                    refs.chunks(64).flat_map(|c| model.predict(c)).map(Some).collect::<Vec<_>>()
                }
                GENERATOR_KIND => {
                    let mut g = Generator::<f32>::from_checkpoint(&ck, checkpoint)?;
                    let truth: Vec<&Frame> = samples.iter().map(|s| &s.frame).collect();
                    let frames = generate_sequence(&mut g, &refs, compare.then_some(truth.as_slice()), out, *seed)?;
                    let bg = scene_background(&dataset);
                    frames
                        .iter()
                        .map(|f| extract_box_from_generated(f, bg, DEFAULT_FOREGROUND_THRESHOLD))
                        .collect()
                }
                other => {
                    return Err(Error::checkpoint(
                        checkpoint,
                        format!("cannot run inference with a '{other}' checkpoint"),
                    ))
                }
            };
            let records: Vec<AnnotationRecord> = samples
                .iter()
                .zip(boxes)
                .map(|(s, b)| AnnotationRecord {
                    id: s.sample_id,
                    boxes: b
                        .into_iter()
                        .map(|bbox| AnnotatedBox {
                            bbox,
                            label: "person".into(),
                        })
                        .collect(),
                })
                .collect();
            write_annotations(&out.join("detections.jsonl"), &records)?;
            Ok((out.clone(), vec![], Some(*seed)))
        }
        Command::Evaluate {
            kind,
            checkpoint,
            data,
            split,
            out,
            annotations,
            seed,
        } => {
            if annotations.is_some() && *kind == Regime::Supervised {
                return Err(Error::Config("--annotations applies to gan evaluation only".into()));
            }
            let ck = Checkpoint::load(checkpoint)?;
            let dataset = load_dataset(data)?;
            let (ids, info) = select_split(&dataset, &ck, *split)?;
            let samples: Vec<&PairedSample> = dataset.select(&ids)?;
            let mut report = match kind {
                Regime::Supervised => {
                    let mut model = BoxRegressor::<f32>::from_checkpoint(&ck, checkpoint)?;
                    evaluate_supervised(&mut model, &samples, info)?
                }
                Regime::Gan => {
                    let mut g = Generator::<f32>::from_checkpoint(&ck, checkpoint)?;
                    let ann = annotations.as_deref().map(read_annotations).transpose()?;
                    let bg = scene_background(&dataset);
                    evaluate_gan(&mut g, &samples, info, ann.as_ref(), bg, DEFAULT_FOREGROUND_THRESHOLD, *seed)?
                }
            };
            report.config = serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "checkpoint_config": ck.manifest.config,
                "annotations": annotations.as_ref().map(|p| p.display().to_string()),
                "seed": seed,
            });
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            ensure_dir(dir)?;
            write_json(out, &report)?;
            println!("ap_iou50 {:.6}", report.ap_iou50);
            Ok((manifest_path_for(out), vec![], Some(*seed)))
        }
        Command::Compare { a, b, out } => {
            let c = compare_reports(&read_report(a)?, &read_report(b)?)?;
            println!("{}", serde_json::to_string_pretty(&c).expect("serialisable"));
            match out {
                Some(o) => {
                    write_json(o, &c)?;
                    Ok((manifest_path_for(o), vec![], None))
                }
                None => Ok((PathBuf::new(), vec![], None)),
            }
        }
    }
}

/// For file outputs the manifest sits next to the file as `<stem>.manifest.json`.
fn manifest_path_for(file: &Path) -> PathBuf {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    file.with_file_name(format!("{stem}.manifest.json"))
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("WIFI2VISION_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("WIFI2VISION_THREADS must be a non-negative integer, got '{v}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let started = unix_now();
    let result = configure_threads().and_then(|_| run(&cli.command));
    match result {
        Ok((out, config_paths, seed)) => {
            if out.as_os_str().is_empty() {
                return ExitCode::SUCCESS;
            }
            let manifest_file = if out.extension().is_some_and(|e| e == "json") {
                out
            } else {
                out.join(MANIFEST_FILE)
            };
            let manifest = RunManifest {
                command: argv,
                config_paths,
                seed,
                version: format!("wifi2vision {}", env!("CARGO_PKG_VERSION")),
                output: manifest_file.parent().unwrap_or(Path::new(".")).display().to_string(),
                started_unix: started,
                finished_unix: unix_now(),
            };
            match write_json(&manifest_file, &manifest) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

