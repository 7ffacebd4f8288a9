use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumen_da_core::checkpoint::{Checkpoint, Phase};
use lumen_da_core::frame::{DepthMap, DEFAULT_DEPTH_SCALE};
use lumen_da_core::model::{DepthNet, ModelConfig};
use lumen_da_core::nn::Adam;
use lumen_da_core::trainer::{read_log, LogRecord, LOCK_FILE};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lumen-da"));
    c.env_remove("LUMEN_DA_SEED").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/reference")
}

/// A tiny 32×32 configuration that trains in seconds.
const TINY: &[&str] = &[
    "--profile",
    "desk",
    "--set",
    "generator.image_size=32",
    "--set",
    "model.image_size=32",
    "--set",
    "model.base_width=4",
    "--set",
    "model.n_res_blocks=1",
    "--set",
    "model.disc_hidden=8",
    "--set",
    "generator.counts.source={\"train\":4,\"val\":2,\"test\":2}",
    "--set",
    "generator.counts.target={\"train\":4,\"val\":0,\"test\":2}",
    "--set",
    "train.pretrain_epochs=2",
    "--set",
    "train.adapt_epochs=1",
    "--set",
    "train.batch_size=4",
    "--set",
    "seed=5",
];

fn with_tiny<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(TINY).chain(tail).copied().collect()
}

#[test]
fn help_output_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for sub in ["", "gen", "train", "adapt", "eval", "predict", "report"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let out = run(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "help.txt".to_string() } else { format!("help_{sub}.txt") };
        let path = golden.join(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::write(&path, &text).unwrap();
        }
        let expected = fs::read_to_string(&path).unwrap();
        assert_eq!(text, expected, "help for {sub:?} drifted; rerun with UPDATE_GOLDEN=1 if intended");
    }
    let top = fs::read_to_string(golden.join("help.txt")).unwrap();
    for code in ["ConfigInvalid", "IoError", "PhaseMismatch", "MissingLabels", "RunLocked"] {
        assert!(top.contains(code), "{code} missing from --help");
    }
}

#[test]
fn report_reproduces_stored_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.md");
    let a = assets();
    let inputs = ["cyclegan", "ours_wo_da", "ours"].map(|n| a.join(format!("{n}.json")).display().to_string());
    let mut args = vec!["report", "--inputs"];
    args.extend(inputs.iter().map(String::as_str));
    let out_s = out.display().to_string();
    args.extend(["--out", &out_s]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&out).unwrap();
    let expected = "\
| Method | SSIM ↑ | MAE (mm) ↓ | RMSE (mm) ↓ | δ1 < 1.25 ↑ |
|---|---|---|---|---|
| CycleGAN | 0.913 | 3.397 ± 1.885 | 5.566 ± 3.452 | 0.482 |
| Ours w/o DA | 0.931 | 2.813 ± 0.849 | 4.408 ± 1.297 | 0.498 |
| Ours | 0.932 | 2.785 ± 0.849 | 4.382 ± 1.304 | 0.501 |
";
    assert_eq!(table, expected);
}

#[test]
fn bad_override_is_config_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = run(&["gen", "--set", "generator.no_such_key=1", "--out", &out]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    let last = err.lines().last().unwrap();
    assert!(last.starts_with("error category=ConfigInvalid: "), "{err}");
}

#[test]
fn env_seed_is_used_unless_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let d = data.display().to_string();
    let args = with_tiny(&["gen"], &["--out", &d]);
    // TINY pins seed=5 via --set, which outranks the environment.
    let o = bin().args(&args).env("LUMEN_DA_SEED", "77").output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = fs::read_to_string(data.join("config.json")).unwrap();
    assert!(echo.contains("\"seed\": 5"));
}

#[test]
fn gen_twice_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("data").display().to_string();
    let args = with_tiny(&["gen"], &["--out", &d]);
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let manifest = dir.path().join("data/manifest.json");
    let mtime = fs::metadata(&manifest).unwrap().modified().unwrap();
    let second = run(&args);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(fs::metadata(&manifest).unwrap().modified().unwrap(), mtime);
}

#[test]
fn adapt_rejects_adapted_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let model = ModelConfig { image_size: 32, base_width: 4, n_res_blocks: 1, disc_hidden: 8, ..ModelConfig::desk() };
    let ckpt = Checkpoint {
        net: DepthNet::new(model, 0).unwrap(),
        optimizer: Adam::new(1e-4, 0.9, 0.999),
        epoch: 1,
        phase: Phase::DomainAdapt,
        seed: 0,
        history: Vec::new(),
    };
    let cdir = dir.path().join("ckpt");
    ckpt.save(&cdir).unwrap();
    let c = cdir.display().to_string();
    let m = dir.path().join("missing.json").display().to_string();
    let r = dir.path().join("run").display().to_string();
    let args = with_tiny(&["adapt"], &["--ckpt", &c, "--source", &m, "--target", &m, "--run", &r]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("error category=PhaseMismatch"));
}

#[test]
fn pipeline_train_adapt_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).display().to_string();
    let (data, run1, run2, ev) = (p("data"), p("run1"), p("run2"), p("eval"));

    let o = run(&with_tiny(&["gen"], &["--out", &data]));
    assert!(o.status.success(), "{}", stderr(&o));

    // A held lock stops a second writer.
    fs::create_dir_all(&run1).unwrap();
    fs::write(dir.path().join("run1").join(LOCK_FILE), "1").unwrap();
    let o = run(&with_tiny(&["train"], &["--data", &data, "--run", &run1]));
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
    fs::remove_file(dir.path().join("run1").join(LOCK_FILE)).unwrap();

    let o = run(&with_tiny(&["train"], &["--data", &data, "--run", &run1]));
    assert!(o.status.success(), "{}", stderr(&o));
    let r1 = dir.path().join("run1");
    for f in
        ["config.json", "run.json", "train.log.jsonl", "ckpt_1/meta.json", "ckpt_2/meta.json", "ckpt_best/meta.json"]
    {
        assert!(r1.join(f).exists(), "missing {f}");
    }
    assert!(!r1.join(LOCK_FILE).exists());
    let log = read_log(&r1.join("train.log.jsonl")).unwrap();
    let epochs = log.iter().filter(|r| matches!(r, LogRecord::Epoch(_))).count();
    // 4 training samples at batch 4: one step per epoch.
    assert_eq!((log.len(), epochs), (4, 2));

    // Re-running a finished run resumes at its last epoch and adds nothing.
    let o = run(&with_tiny(&["train"], &["--data", &data, "--run", &run1]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_log(&r1.join("train.log.jsonl")).unwrap().len(), 4);

    // A different config in the same run directory is refused.
    let mut changed = with_tiny(&["train"], &["--data", &data, "--run", &run1]);
    changed.extend(["--set", "train.learning_rate=0.001"]);
    assert_eq!(run(&changed).status.code(), Some(3));

    let best = p("run1/ckpt_best");
    let o = run(&with_tiny(&["adapt"], &["--ckpt", &best, "--source", &data, "--target", &data, "--run", &run2]));
    assert!(o.status.success(), "{}", stderr(&o));
    let fin = p("run2/ckpt_final");
    assert_eq!(Checkpoint::load(Path::new(&fin)).unwrap().phase, Phase::DomainAdapt);

    let o = run(&["eval", "--ckpt", &fin, "--data", &data, "--domain", "target", "--label", "tiny", "--out", &ev]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ev_dir = dir.path().join("eval");
    assert!(ev_dir.join("report.json").exists() && ev_dir.join("report.md").exists());
    assert_eq!(fs::read_dir(ev_dir.join("heatmaps")).unwrap().count(), 2);

    // Target-train frames carry no labels, so evaluating them must fail.
    let o = run(&[
        "eval", "--ckpt", &fin, "--data", &data, "--split", "train", "--domain", "target", "--label", "x", "--out", &ev,
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));

    let img = p("data/images/target-test-0000.png");
    let pred = p("pred.png");
    let o = run(&["predict", "--ckpt", &fin, "--image", &img, "--out", &pred]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d = DepthMap::load_png(Path::new(&pred), DEFAULT_DEPTH_SCALE).unwrap();
    assert_eq!((d.width, d.height), (32, 32));
}
