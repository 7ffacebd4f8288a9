use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use lumen_da_core::checkpoint::{Checkpoint, Phase};
use lumen_da_core::datagen::{
    build_dataset, DatasetManifest, Domain, DomainCounts, GeneratorConfig, Split, SplitCounts,
};
use lumen_da_core::losses::{adversarial_loss_grad, GradientReversal};
use lumen_da_core::model::{pool_bottleneck, DepthNet, ModelConfig};
use lumen_da_core::nn::{Adam, Parameters, Tensor};
use lumen_da_core::trainer::{
    adapt_domain, read_log, train_source, LoadedSplit, LogRecord, RunOptions, TrainConfig, Trainer,
};
use lumen_da_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig { image_size: 32, base_width: 8, n_res_blocks: 2, disc_hidden: 32, ..ModelConfig::desk() }
}

fn tiny_train() -> TrainConfig {
    TrainConfig { pretrain_epochs: 3, adapt_epochs: 1, early_stop_patience: 2, seed: 3, ..TrainConfig::desk() }
}

/// Small shared dataset, generated once per test binary.
fn dataset() -> &'static DatasetManifest {
    static DATA: OnceLock<DatasetManifest> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = GeneratorConfig {
            seed: 21,
            image_size: 32,
            counts: DomainCounts {
                source: SplitCounts { train: 12, val: 4, test: 4 },
                target: SplitCounts { train: 8, val: 0, test: 4 },
            },
            ..GeneratorConfig::desk()
        };
        build_dataset(&cfg, &Path::new(env!("CARGO_TARGET_TMPDIR")).join("training-fixture")).unwrap()
    })
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("training-runs").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

// Runs share the CPU; serializing keeps wall time predictable.
static SERIAL: Mutex<()> = Mutex::new(());

fn flat_params(net: &mut DepthNet, prefix: &str) -> Vec<f32> {
    let mut out = Vec::new();
    net.visit("", &mut |name, p| {
        if name.starts_with(prefix) {
            out.extend_from_slice(&p.value);
        }
    });
    out
}

#[test]
fn log_accounting_and_loss_consistency() {
    let _g = SERIAL.lock().unwrap();
    let run = scratch("accounting");
    let cfg = tiny_train();
    let ckpt = train_source(dataset(), &tiny_model(), &cfg, RunOptions { run_dir: Some(run.join("p1")), resume: None })
        .unwrap();
    assert_eq!(ckpt.phase, Phase::SourcePretrain);
    let log = read_log(&run.join("p1/train.log.jsonl")).unwrap();
    let epochs = ckpt.history.len();
    // 12 samples at batch 8: two steps per epoch.
    assert_eq!(log.len(), epochs * 2 + epochs);

    let adapted =
        adapt_domain(ckpt, dataset(), dataset(), &cfg, RunOptions { run_dir: Some(run.join("p2")), resume: None })
            .unwrap();
    assert_eq!(adapted.phase, Phase::DomainAdapt);
    let log = read_log(&run.join("p2/train.log.jsonl")).unwrap();
    // 12 source samples at 4 per step.
    assert_eq!(log.len(), 3 + 1);
    for rec in log {
        if let LogRecord::Step(s) = rec {
            let l = s.losses;
            let expect = l.l_d + l.gamma * l.l_adv.unwrap();
            assert!((l.l_total - expect).abs() <= 1e-6 * l.l_total.abs().max(1.0));
            assert!((l.l_d - (l.l_ssi + 100.0 * l.l_l1)).abs() <= 1e-9 * l.l_d.max(1.0));
        }
    }
    assert!(run.join("p2/ckpt_final/meta.json").exists());
}

#[test]
fn early_stopping_returns_best_checkpoint() {
    let _g = SERIAL.lock().unwrap();
    let cfg = TrainConfig { pretrain_epochs: 5, early_stop_patience: 1, ..tiny_train() };
    let ckpt = train_source(dataset(), &tiny_model(), &cfg, RunOptions::default()).unwrap();
    let best = ckpt.history.iter().min_by(|a, b| a.val_rmse_mm.unwrap().total_cmp(&b.val_rmse_mm.unwrap())).unwrap();
    assert_eq!(ckpt.epoch, best.epoch);
    // With patience 1 the run ends right after the first non-improving epoch.
    let last = ckpt.history.last().unwrap();
    assert!(last.epoch == 5 || last.val_rmse_mm >= ckpt.history[last.epoch - 2].val_rmse_mm);
    // The returned weights are the best epoch's, not the last one's.
    let data = LoadedSplit::load(dataset(), Domain::Source, Split::Val, true).unwrap();
    let (rmse, _) = lumen_da_core::trainer::validate(&mut ckpt.net.clone(), &data).unwrap();
    assert!((rmse - best.val_rmse_mm.unwrap()).abs() < 1e-12);
}

#[test]
fn resume_continues_at_next_epoch() {
    let _g = SERIAL.lock().unwrap();
    let run = scratch("resume");
    let one = TrainConfig { pretrain_epochs: 1, early_stop_patience: 5, ..tiny_train() };
    train_source(dataset(), &tiny_model(), &one, RunOptions { run_dir: Some(run.clone()), resume: None }).unwrap();
    let k = Checkpoint::load(&run.join("ckpt_1")).unwrap();
    assert_eq!(k.epoch, 1);
    let two = TrainConfig { pretrain_epochs: 2, ..one };
    let out = train_source(dataset(), &tiny_model(), &two, RunOptions { run_dir: Some(run.clone()), resume: Some(k) })
        .unwrap();
    let epochs: Vec<usize> = out.history.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![1, 2]);
    let log = read_log(&run.join("train.log.jsonl")).unwrap();
    let resumed: Vec<usize> = log
        .iter()
        .skip(3)
        .map(|r| match r {
            LogRecord::Step(s) => s.epoch,
            LogRecord::Epoch(e) => e.epoch,
        })
        .collect();
    assert_eq!(resumed, vec![2, 2, 2]);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let _g = SERIAL.lock().unwrap();
    let cfg = TrainConfig { pretrain_epochs: 2, ..tiny_train() };
    let a = train_source(dataset(), &tiny_model(), &cfg, RunOptions::default()).unwrap();
    let b = train_source(dataset(), &tiny_model(), &cfg, RunOptions::default()).unwrap();
    assert_eq!(a.epoch, b.epoch);
    assert_eq!(a.history, b.history);
}

#[test]
fn adapt_requires_source_checkpoint() {
    let ckpt = Checkpoint {
        net: DepthNet::new(tiny_model(), 0).unwrap(),
        optimizer: Adam::new(1e-4, 0.9, 0.999),
        epoch: 1,
        phase: Phase::DomainAdapt,
        seed: 0,
        history: Vec::new(),
    };
    let err = adapt_domain(ckpt, dataset(), dataset(), &tiny_train(), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::PhaseMismatch { .. }));
}

#[test]
fn adaptation_never_reads_target_train_depth() {
    let _g = SERIAL.lock().unwrap();
    let mut target = dataset().clone();
    for s in target.samples.iter_mut().filter(|s| s.domain == Domain::Target && s.split == Split::Train) {
        assert!(s.depth_path.is_none());
        s.depth_path = Some("does/not/exist.png".into());
    }
    let ckpt = Checkpoint {
        net: DepthNet::new(tiny_model(), 1).unwrap(),
        optimizer: Adam::new(1e-4, 0.9, 0.999),
        epoch: 0,
        phase: Phase::SourcePretrain,
        seed: 1,
        history: Vec::new(),
    };
    adapt_domain(ckpt, dataset(), &target, &tiny_train(), RunOptions::default()).unwrap();
}

#[test]
fn empty_source_split_is_reported() {
    let mut m = dataset().clone();
    m.samples.retain(|s| s.domain == Domain::Target);
    let err = train_source(&m, &tiny_model(), &tiny_train(), RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)));
}

#[test]
fn zero_gamma_matches_source_only_trajectory() {
    let src = LoadedSplit::load(dataset(), Domain::Source, Split::Train, true).unwrap();
    let tgt = LoadedSplit::load(dataset(), Domain::Target, Split::Train, false).unwrap();
    let cfg = tiny_train();
    let mut w = cfg.weights;
    w.gamma = 0.0;
    let net = DepthNet::new(tiny_model(), 4).unwrap();
    let mut adapt = Trainer::new(net.clone(), Adam::new(1e-4, 0.9, 0.999), w);
    let mut plain = Trainer::new(net, Adam::new(1e-4, 0.9, 0.999), w);
    for step in 0..4 {
        let idx: Vec<usize> = (0..4).map(|j| (step * 4 + j) % src.len()).collect();
        let batch = src.batch(&idx, 100.0).unwrap();
        let a = adapt.adapt_step(&batch, &tgt.images(&[step, step + 1, step + 2, step + 3]).unwrap(), 1.0).unwrap();
        let b = plain.source_step(&batch).unwrap();
        assert_eq!(a.l_d, b.l_d);
    }
    for part in ["features", "regressor"] {
        assert_eq!(flat_params(&mut adapt.net, part), flat_params(&mut plain.net, part), "{part} diverged");
    }
}

#[test]
fn reversed_gradient_opposes_discriminator_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data: Vec<f32> = (0..4 * 3 * 32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let images = Tensor::from_vec([4, 3, 32, 32], data).unwrap();
    let run = |lambda: f32| {
        let mut net = DepthNet::new(tiny_model(), 2).unwrap();
        net.zero_grad();
        let f = net.forward_features(&images).unwrap();
        let grl = GradientReversal::new(lambda);
        let probs = net.discriminate(&grl.forward(&pool_bottleneck(&f))).unwrap();
        let p: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
        let (_, gs, gt) = adversarial_loss_grad(&p[..2], &p[2..]).unwrap();
        let d: Vec<f32> = gs.iter().chain(&gt).map(|&g| g as f32).collect();
        let d_pooled = net.backward_discriminator(&Tensor::from_vec(probs.shape(), d).unwrap());
        let reversed = grl.backward(&d_pooled);
        net.backward_features(&net.backward_pool(&reversed));
        let mut grads = Vec::new();
        net.visit("", &mut |name, p| {
            if name.starts_with("features") {
                grads.extend_from_slice(&p.grad);
            }
        });
        (d_pooled, reversed, grads)
    };
    let (d_pooled, reversed, with_grl) = run(1.0);
    let dot: f32 = d_pooled.data().iter().zip(reversed.data()).map(|(a, b)| a * b).sum();
    assert!(dot < 0.0);
    // Plain backprop (λ = −1 undoes the reversal) gives the mirrored gradient.
    let (_, _, plain) = run(-1.0);
    assert!(with_grl.iter().any(|&g| g != 0.0));
    for (a, b) in with_grl.iter().zip(&plain) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn discriminator_separates_separable_features() {
    let cfg = ModelConfig::desk();
    let mut net = DepthNet::new(cfg.clone(), 6).unwrap();
    let dim = cfg.bottleneck_channels();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let direction: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut sample = |label: f32| -> Vec<f32> {
        let offset = if label > 0.5 { 0.5 } else { -0.5 };
        direction.iter().map(|d| d * offset + rng.gen_range(-0.2..0.2)).collect()
    };
    let mut opt = Adam::new(1e-4, 0.9, 0.999);
    let mut accuracy = 0.0;
    for _ in 0..200 {
        let mut x = Vec::new();
        for k in 0..16 {
            x.extend(sample(if k < 8 { 1.0 } else { 0.0 }));
        }
        let pooled = Tensor::from_vec([16, dim, 1, 1], x).unwrap();
        net.zero_grad();
        let probs = net.discriminate(&pooled).unwrap();
        let p: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
        accuracy =
            (p[..8].iter().filter(|&&v| v >= 0.5).count() + p[8..].iter().filter(|&&v| v < 0.5).count()) as f64 / 16.0;
        let (_, gs, gt) = adversarial_loss_grad(&p[..8], &p[8..]).unwrap();
        let d: Vec<f32> = gs.iter().chain(&gt).map(|&g| g as f32).collect();
        net.backward_discriminator(&Tensor::from_vec(probs.shape(), d).unwrap());
        opt.begin_step();
        let mut slot = 0;
        net.visit("", &mut |name, p| {
            if name.starts_with("discriminator") {
                opt.update(slot, p);
            }
            slot += 1;
        });
    }
    assert!(accuracy > 0.95, "accuracy {accuracy}");
}
