use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lumen_da_core::checkpoint::{Checkpoint, Phase};
use lumen_da_core::config::{Profile, RunConfig};
use lumen_da_core::datagen::{build_dataset, DatasetManifest, Domain, Split, MANIFEST_FILE};
use lumen_da_core::frame::{DepthMap, RgbFrame, DEFAULT_DEPTH_SCALE};
use lumen_da_core::metrics::{evaluate, render_table, ReportInput};
use lumen_da_core::trainer::{self, RunLock, RunOptions, CONFIG_FILE};
use lumen_da_core::{Error, Result};
use serde::Serialize;

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   usage error (bad or missing flags)
  3   ConfigInvalid       config file, override or checkpoint contents rejected
  4   IoError             a file could not be read, written or decoded
  5   PhaseMismatch       checkpoint is from the wrong training phase
  6   MissingLabels       a split that must carry depth has none
  7   RunLocked           another process holds the run directory lock
  8   EmptyDataset        a required split has no samples
  9   DegenerateInput     constant prediction or ground truth
  10  ShapeMismatch       image or tensor size does not match the model
  11  CameraOutsideLumen  camera pose left the lumen
  12  EmptyBatch          a batch had no samples

On failure one line is written to stderr:
  error category=<Category>: <message>

Config precedence (lowest first): --profile, --config file, LUMEN_DA_SEED, --set.";

#[derive(Parser, Debug)]
#[command(name = "lumen-da", version, about = "Synthetic-to-real depth estimation for endoscopic lumens", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a paired source/target dataset and its manifest
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; an existing identical dataset is left untouched
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised pretraining on the source domain
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset manifest (or its directory)
        #[arg(long)]
        data: PathBuf,
        /// Run directory; an interrupted run resumes from its last checkpoint
        #[arg(long)]
        run: PathBuf,
    },
    /// Adversarial fine-tuning from a source-pretrain checkpoint
    Adapt {
        #[command(flatten)]
        config: ConfigArgs,
        /// Source-pretrain checkpoint directory
        #[arg(long)]
        ckpt: PathBuf,
        /// Manifest providing labeled source-train and source-val
        #[arg(long)]
        source: PathBuf,
        /// Manifest providing unlabeled target-train
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Median-scaled evaluation with per-frame error heatmaps
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Restrict to one domain; both when omitted
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
        /// Method name used in the report table
        #[arg(long)]
        label: String,
        #[arg(long)]
        out: PathBuf,
        /// Skip writing heatmap PNGs
        #[arg(long)]
        no_heatmaps: bool,
    },
    /// Predict a 16-bit depth PNG for one RGB image
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge reports (or stored table rows) into one markdown table
    Report {
        /// report.json files or row JSON files, in table order
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON config file; keys absent from it keep the profile values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in base configuration
    #[arg(long, value_enum, default_value_t = ProfileArg::Default)]
    profile: ProfileArg,
    /// Override a config key by dotted path, e.g. train.batch_size=8
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Default,
    Desk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let profile = match self.profile {
            ProfileArg::Default => Profile::Default,
            ProfileArg::Desk => Profile::Desk,
        };
        RunConfig::from_env(profile, self.config.as_deref(), &self.overrides)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "ConfigInvalid" => 3,
        "IoError" => 4,
        "PhaseMismatch" => 5,
        "MissingLabels" => 6,
        "RunLocked" => 7,
        "EmptyDataset" => 8,
        "DegenerateInput" => 9,
        "ShapeMismatch" => 10,
        "CameraOutsideLumen" => 11,
        "EmptyBatch" => 12,
        _ => 1,
    }
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        DatasetManifest::load(&path.join(MANIFEST_FILE))
    } else {
        DatasetManifest::load(path)
    }
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// What is needed to redo a run from scratch.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    manifests: Vec<(String, String)>,
    checkpoint: Option<String>,
}

/// Writes the config echo, refusing a run directory that holds a different one.
fn prepare_run(run: &Path, cfg: &RunConfig, record: &RunRecord) -> Result<()> {
    let path = run.join(CONFIG_FILE);
    if path.exists() {
        let previous = RunConfig::resolve(Profile::Default, Some(&path), None, &[])?;
        if &previous != cfg {
            return Err(Error::ConfigInvalid(format!(
                "{} was started with a different config; use a fresh run directory",
                run.display()
            )));
        }
    } else {
        cfg.echo(&path)?;
    }
    let body = serde_json::to_vec_pretty(record).expect("run record serializes");
    write_file(&run.join("run.json"), &body)
}

/// The highest `ckpt_{epoch}` in a run directory, if any.
fn latest_checkpoint(run: &Path) -> Option<PathBuf> {
    let entries = fs::read_dir(run).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let epoch: usize = name.strip_prefix("ckpt_")?.parse().ok()?;
            Some((epoch, e.path()))
        })
        .max_by_key(|(epoch, _)| *epoch)
        .map(|(_, p)| p)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => {
            let cfg = config.resolve()?;
            let manifest = build_dataset(&cfg.generator, &out)?;
            let echo = out.join(CONFIG_FILE);
            if !echo.exists() {
                cfg.echo(&echo)?;
            }
            println!("{} {}", out.join(MANIFEST_FILE).display(), manifest.content_hash());
        }
        Command::Train { config, data, run } => {
            let cfg = config.resolve()?;
            let manifest = load_manifest(&data)?;
            let _lock = RunLock::acquire(&run)?;
            prepare_run(
                &run,
                &cfg,
                &RunRecord {
                    command: "train",
                    seed: cfg.seed,
                    manifests: vec![(data.display().to_string(), manifest.content_hash())],
                    checkpoint: None,
                },
            )?;
            let resume = match latest_checkpoint(&run) {
                Some(p) => Some(Checkpoint::load(&p)?),
                None => None,
            };
            let best = trainer::train_source(
                &manifest,
                &cfg.model,
                &cfg.train,
                RunOptions { run_dir: Some(run.clone()), resume },
            )?;
            println!("{} epoch {}", run.join(trainer::BEST_DIR).display(), best.epoch);
        }
        Command::Adapt { config, ckpt, source, target, run } => {
            let cfg = config.resolve()?;
            let start = Checkpoint::load(&ckpt)?;
            if start.phase != Phase::SourcePretrain {
                return Err(Error::PhaseMismatch {
                    expected: "source_pretrain".into(),
                    found: start.phase.as_str().into(),
                });
            }
            if start.model_config() != &cfg.model {
                return Err(Error::ConfigInvalid("model section differs from the checkpoint's model config".into()));
            }
            let src = load_manifest(&source)?;
            let tgt = load_manifest(&target)?;
            let _lock = RunLock::acquire(&run)?;
            prepare_run(
                &run,
                &cfg,
                &RunRecord {
                    command: "adapt",
                    seed: cfg.seed,
                    manifests: vec![
                        (source.display().to_string(), src.content_hash()),
                        (target.display().to_string(), tgt.content_hash()),
                    ],
                    checkpoint: Some(ckpt.display().to_string()),
                },
            )?;
            let resume = match latest_checkpoint(&run) {
                Some(p) => Some(Checkpoint::load(&p)?),
                None => None,
            };
            trainer::adapt_domain(start, &src, &tgt, &cfg.train, RunOptions { run_dir: Some(run.clone()), resume })?;
            println!("{}", run.join(trainer::FINAL_DIR).display());
        }
        Command::Eval { ckpt, data, split, domain, label, out, no_heatmaps } => {
            let mut net = Checkpoint::load(&ckpt)?.net;
            let manifest = load_manifest(&data)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let domain = domain.map(|d| match d {
                DomainArg::Source => Domain::Source,
                DomainArg::Target => Domain::Target,
            });
            let eval = lumen_da_core::metrics::EvalConfig::new(net.config().max_depth_mm);
            let heatmaps = (!no_heatmaps).then(|| out.join("heatmaps"));
            let report = evaluate(&mut net, &manifest, split, domain, &label, &eval, heatmaps.as_deref())?;
            report.write(&out)?;
            print!("{}", render_table(&[report.row()]));
        }
        Command::Predict { ckpt, image, out } => {
            let mut net = Checkpoint::load(&ckpt)?.net;
            let rgb = RgbFrame::load_png(&image)?;
            let pred = net.predict(&rgb.to_tensor())?;
            let depth = DepthMap::from_normalized(&pred, 0, net.config().max_depth_mm);
            depth.save_png(&out, DEFAULT_DEPTH_SCALE)?;
        }
        Command::Report { inputs, out } => {
            let rows = inputs.iter().map(|p| ReportInput::load(p)).collect::<Result<Vec<_>>>()?;
            let table = render_table(&rows);
            write_file(&out, table.as_bytes())?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error category={}: {msg}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
