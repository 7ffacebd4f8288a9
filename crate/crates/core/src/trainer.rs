//! Two-phase training: supervised source pretraining with early stopping,
//! then domain-adversarial fine-tuning through a gradient-reversal layer.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EpochRecord, Phase};
use crate::datagen::{derive_seed, DatasetManifest, Domain, Split};
use crate::error::{Error, Result};
use crate::frame::DepthMap;
use crate::losses::{adversarial_loss_grad, depth_loss_batch, grl_ramp, GradientReversal, LossWeights};
use crate::metrics::{frame_metrics, EvalConfig};
use crate::model::{pool_bottleneck, DepthNet, ModelConfig};
use crate::nn::{Adam, Parameters, Tensor};

pub const LOG_FILE: &str = "train.log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const LOCK_FILE: &str = ".lock";
pub const BEST_DIR: &str = "ckpt_best";
pub const FINAL_DIR: &str = "ckpt_final";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub pretrain_epochs: usize,
    pub adapt_epochs: usize,
    pub early_stop_patience: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub desk_profile: bool,
    /// Write `ckpt_{epoch}` every this many epochs; 0 disables.
    pub save_every: usize,
    /// Scale the reversal strength by the DANN schedule over adaptation.
    pub grl_ramp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            pretrain_epochs: 100,
            adapt_epochs: 35,
            early_stop_patience: 10,
            weights: LossWeights::default(),
            seed: 0,
            desk_profile: false,
            save_every: 1,
            grl_ramp: false,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            pretrain_epochs: 12,
            adapt_epochs: 8,
            early_stop_patience: 4,
            desk_profile: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::ConfigInvalid(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::ConfigInvalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.pretrain_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::ConfigInvalid("pretrain_epochs and early_stop_patience must be positive".into()));
        }
        self.weights.validate()
    }

    fn optimizer(&self) -> Adam {
        Adam::new(self.learning_rate as f32, self.beta1 as f32, self.beta2 as f32)
    }
}

/// Loss components of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_ssi: f64,
    pub l_l1: f64,
    pub l_d: f64,
    pub l_adv: Option<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub l_total: f64,
    /// Discriminator accuracy on this batch at threshold 0.5.
    pub disc_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub phase: Phase,
    pub epoch: usize,
    pub step: u64,
    #[serde(flatten)]
    pub losses: StepLosses,
}

/// One line of `train.log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepLog),
    Epoch(EpochRecord),
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| Error::Json { path: path.to_path_buf(), source }))
        .collect()
}

/// A stack of images with normalized depth targets and validity masks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub depth: Tensor,
    pub mask: Vec<bool>,
}

/// Images held in memory; depth only when labels were requested.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub ids: Vec<String>,
    pub images: Vec<Tensor>,
    pub depth: Vec<DepthMap>,
}

impl LoadedSplit {
    /// Reads one split. Depth files are opened only if `labels` is set,
    /// so unlabeled target data never touches a depth path.
    pub fn load(manifest: &DatasetManifest, domain: Domain, split: Split, labels: bool) -> Result<Self> {
        let mut recs = manifest.select(domain, split);
        recs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = LoadedSplit { ids: Vec::new(), images: Vec::new(), depth: Vec::new() };
        for rec in recs {
            out.images.push(manifest.load_rgb(rec)?.to_tensor());
            if labels {
                out.depth.push(manifest.load_depth(rec)?);
            }
            out.ids.push(rec.id.clone());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn images(&self, idx: &[usize]) -> Result<Tensor> {
        Tensor::stack(&idx.iter().map(|&i| self.images[i].clone()).collect::<Vec<_>>())
    }

    pub fn batch(&self, idx: &[usize], max_depth_mm: f64) -> Result<Batch> {
        if self.depth.len() != self.len() {
            return Err(Error::MissingLabels("split was loaded without depth".into()));
        }
        let depth =
            Tensor::stack(&idx.iter().map(|&i| self.depth[i].to_normalized_tensor(max_depth_mm)).collect::<Vec<_>>())?;
        let mask = idx.iter().flat_map(|&i| self.depth[i].valid.iter().copied()).collect();
        Ok(Batch { images: self.images(idx)?, depth, mask })
    }
}

/// Optimizer state bound to a network; one call per step.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: DepthNet,
    pub optimizer: Adam,
    pub weights: LossWeights,
}

impl Trainer {
    pub fn new(net: DepthNet, optimizer: Adam, weights: LossWeights) -> Self {
        Trainer { net, optimizer, weights }
    }

    fn apply_gradients(&mut self) {
        self.optimizer.begin_step();
        let opt = &mut self.optimizer;
        let mut slot = 0;
        self.net.visit("", &mut |_, p| {
            opt.update(slot, p);
            slot += 1;
        });
    }

    /// Supervised step on labeled source data.
    pub fn source_step(&mut self, batch: &Batch) -> Result<StepLosses> {
        self.net.zero_grad();
        let f = self.net.forward_features(&batch.images)?;
        let pred = self.net.forward_depth(&f);
        let (parts, grad) = depth_loss_batch(&pred, &batch.depth, &batch.mask, &self.weights)?;
        let df = self.net.backward_depth(&grad);
        self.net.backward_features(&df);
        self.apply_gradients();
        Ok(StepLosses {
            l_ssi: parts.ssi,
            l_l1: parts.l1,
            l_d: parts.total,
            l_adv: None,
            gamma: self.weights.gamma,
            lambda: 0.0,
            l_total: parts.total,
            disc_acc: None,
        })
    }

    /// Adversarial step: depth loss on the labeled source half, domain
    /// loss on both halves, reversed gradient into the extractor.
    pub fn adapt_step(&mut self, source: &Batch, target: &Tensor, lambda: f64) -> Result<StepLosses> {
        let ns = source.images.batch();
        let nt = target.batch();
        if ns == 0 || nt == 0 {
            return Err(Error::EmptyBatch("adaptation needs both source and target samples".into()));
        }
        let gamma = self.weights.gamma;
        self.net.zero_grad();
        let f = self.net.forward_features(&Tensor::concat(&source.images, target)?)?;
        let (fs, _) = f.split_batch(ns);
        let pred = self.net.forward_depth(&fs);
        let (parts, grad) = depth_loss_batch(&pred, &source.depth, &source.mask, &self.weights)?;

        let grl = GradientReversal::new(lambda as f32);
        let probs = self.net.discriminate(&grl.forward(&pool_bottleneck(&f)))?;
        let p: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
        let (l_adv, gs, gt) = adversarial_loss_grad(&p[..ns], &p[ns..])?;
        let correct = p[..ns].iter().filter(|&&v| v >= 0.5).count() + p[ns..].iter().filter(|&&v| v < 0.5).count();
        let d_prob: Vec<f32> = gs.iter().chain(&gt).map(|g| (gamma * g) as f32).collect();
        let d_pooled = self.net.backward_discriminator(&Tensor::from_vec(probs.shape(), d_prob)?);
        let mut df = self.net.backward_pool(&grl.backward(&d_pooled));

        let dfs = self.net.backward_depth(&grad);
        for (dst, v) in df.data_mut().iter_mut().zip(dfs.data()) {
            *dst += v;
        }
        self.net.backward_features(&df);
        self.apply_gradients();
        Ok(StepLosses {
            l_ssi: parts.ssi,
            l_l1: parts.l1,
            l_d: parts.total,
            l_adv: Some(l_adv),
            gamma,
            lambda,
            l_total: parts.total + gamma * l_adv,
            disc_acc: Some(correct as f64 / (ns + nt) as f64),
        })
    }
}

/// Early stopping on a metric where lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
    pub stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if metric >= b || metric.is_nan() => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }
}

/// Where a run writes its artifacts, and what it resumes from.
#[derive(Debug, Default)]
pub struct RunOptions {
    pub run_dir: Option<PathBuf>,
    /// Checkpoint of the same phase to continue from (at its epoch + 1).
    pub resume: Option<Checkpoint>,
}

/// Exclusive marker on a run directory, removed on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::RunLocked(run_dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct RunWriter {
    dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
}

impl RunWriter {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(RunWriter { dir: None, log: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunWriter { dir: Some(dir.to_path_buf()), log: Some(BufWriter::new(file)) })
    }

    fn record(&mut self, rec: &LogRecord) -> Result<()> {
        if let (Some(dir), Some(log)) = (&self.dir, &mut self.log) {
            let line = serde_json::to_string(rec).expect("log record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
            if matches!(rec, LogRecord::Epoch(_)) {
                log.flush().map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
            }
        }
        Ok(())
    }

    fn save(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        match &self.dir {
            Some(dir) => ckpt.save(&dir.join(name)),
            None => Ok(()),
        }
    }
}

/// Median-scaled RMSE and δ1 averaged over a labeled split.
pub fn validate(net: &mut DepthNet, data: &LoadedSplit) -> Result<(f64, f64)> {
    let max = net.config().max_depth_mm;
    let cfg = EvalConfig::new(max);
    let (mut rmse, mut d1) = (0.0, 0.0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(8) {
        let out = net.predict(&data.images(chunk)?)?;
        for (k, &i) in chunk.iter().enumerate() {
            let pred = DepthMap::from_normalized(&out, k, max);
            let (m, _) = frame_metrics(&data.ids[i], &pred, &data.depth[i], &cfg)?;
            rmse += m.rmse_mm;
            d1 += m.delta1;
        }
    }
    Ok((rmse / data.len() as f64, d1 / data.len() as f64))
}

fn epoch_order(n: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, label)));
    idx
}

fn require(data: &LoadedSplit, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("no {what} samples")));
    }
    Ok(())
}

/// Phase 1: minimizes the depth loss on source-train with early stopping on
/// source-val RMSE. Returns the best-validation checkpoint.
pub fn train_source(
    manifest: &DatasetManifest,
    model: &ModelConfig,
    cfg: &TrainConfig,
    opts: RunOptions,
) -> Result<Checkpoint> {
    cfg.validate()?;
    model.validate()?;
    let train = LoadedSplit::load(manifest, Domain::Source, Split::Train, true)?;
    let val = LoadedSplit::load(manifest, Domain::Source, Split::Val, true)?;
    require(&train, "source train")?;
    require(&val, "source validation")?;
    let mut writer = RunWriter::open(opts.run_dir.as_deref())?;

    let (mut trainer, start, mut history) = match opts.resume {
        Some(ck) => {
            if ck.phase != Phase::SourcePretrain {
                return Err(Error::PhaseMismatch {
                    expected: "source_pretrain".into(),
                    found: ck.phase.as_str().into(),
                });
            }
            (Trainer::new(ck.net, ck.optimizer, cfg.weights), ck.epoch + 1, ck.history)
        }
        None => (Trainer::new(DepthNet::new(model.clone(), cfg.seed)?, cfg.optimizer(), cfg.weights), 1, Vec::new()),
    };
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    for r in history.iter().filter(|r| r.phase == Phase::SourcePretrain) {
        stopper.observe(r.epoch, r.val_rmse_mm.unwrap_or(f64::NAN));
    }
    let snapshot = |t: &Trainer, epoch: usize, history: &[EpochRecord]| Checkpoint {
        net: t.net.clone(),
        optimizer: t.optimizer.clone(),
        epoch,
        phase: Phase::SourcePretrain,
        seed: cfg.seed,
        history: history.to_vec(),
    };
    let mut best = match (&opts.run_dir, start > 1) {
        (Some(dir), true) if dir.join(BEST_DIR).exists() => Checkpoint::load(&dir.join(BEST_DIR))?,
        _ => snapshot(&trainer, start - 1, &history),
    };
    if stopper.stale >= stopper.patience {
        return Ok(best);
    }

    let max = model.max_depth_mm;
    for epoch in start..=cfg.pretrain_epochs {
        let order = epoch_order(train.len(), cfg.seed, &format!("source-epoch-{epoch}"));
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let losses = trainer.source_step(&train.batch(chunk, max)?)?;
            loss_sum += losses.l_total;
            steps += 1;
            writer.record(&LogRecord::Step(StepLog {
                phase: Phase::SourcePretrain,
                epoch,
                step: trainer.optimizer.step,
                losses,
            }))?;
        }
        let (rmse, d1) = validate(&mut trainer.net, &val)?;
        let rec = EpochRecord {
            phase: Phase::SourcePretrain,
            epoch,
            val_rmse_mm: Some(rmse),
            val_delta1: Some(d1),
            train_loss: loss_sum / steps as f64,
        };
        writer.record(&LogRecord::Epoch(rec.clone()))?;
        history.push(rec);
        log::info!("source epoch {epoch}: val rmse {rmse:.4} mm, delta1 {d1:.4}");
        let decision = stopper.observe(epoch, rmse);
        if decision == StopDecision::Improved {
            best = snapshot(&trainer, epoch, &history);
            writer.save(BEST_DIR, &best)?;
        }
        if cfg.save_every > 0 && epoch % cfg.save_every == 0 {
            writer.save(&format!("ckpt_{epoch}"), &snapshot(&trainer, epoch, &history))?;
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    // Keep the full metric history on the returned checkpoint.
    best.history = history;
    writer.save(BEST_DIR, &best)?;
    Ok(best)
}

/// Phase 2: adversarial fine-tuning from a source-pretrain checkpoint.
/// The optimizer state is re-initialized. Every step draws half a batch
/// of labeled source and half a batch of unlabeled target images.
pub fn adapt_domain(
    ckpt: Checkpoint,
    source: &DatasetManifest,
    target: &DatasetManifest,
    cfg: &TrainConfig,
    opts: RunOptions,
) -> Result<Checkpoint> {
    if ckpt.phase != Phase::SourcePretrain {
        return Err(Error::PhaseMismatch { expected: "source_pretrain".into(), found: ckpt.phase.as_str().into() });
    }
    cfg.validate()?;
    let src = LoadedSplit::load(source, Domain::Source, Split::Train, true)?;
    let val = LoadedSplit::load(source, Domain::Source, Split::Val, true)?;
    let tgt = LoadedSplit::load(target, Domain::Target, Split::Train, false)?;
    require(&src, "source train")?;
    require(&tgt, "target train")?;
    let mut writer = RunWriter::open(opts.run_dir.as_deref())?;

    let (mut trainer, start, mut history) = match opts.resume {
        Some(ck) => {
            if ck.phase != Phase::DomainAdapt {
                return Err(Error::PhaseMismatch { expected: "domain_adapt".into(), found: ck.phase.as_str().into() });
            }
            (Trainer::new(ck.net, ck.optimizer, cfg.weights), ck.epoch + 1, ck.history)
        }
        None => (Trainer::new(ckpt.net, cfg.optimizer(), cfg.weights), 1, ckpt.history),
    };
    let half = cfg.batch_size / 2;
    let steps_per_epoch = src.len().div_ceil(half);
    let total_steps = (steps_per_epoch * cfg.adapt_epochs).max(1);
    let max = trainer.net.config().max_depth_mm;
    let snapshot = |t: &Trainer, epoch: usize, history: &[EpochRecord]| Checkpoint {
        net: t.net.clone(),
        optimizer: t.optimizer.clone(),
        epoch,
        phase: Phase::DomainAdapt,
        seed: cfg.seed,
        history: history.to_vec(),
    };

    for epoch in start..=cfg.adapt_epochs {
        let src_order = epoch_order(src.len(), cfg.seed, &format!("adapt-source-{epoch}"));
        let tgt_order = epoch_order(tgt.len(), cfg.seed, &format!("adapt-target-{epoch}"));
        let mut loss_sum = 0.0;
        for (k, chunk) in src_order.chunks(half).enumerate() {
            let t_idx: Vec<usize> = (0..chunk.len()).map(|j| tgt_order[(k * half + j) % tgt.len()]).collect();
            let done = (epoch - 1) * steps_per_epoch + k;
            let lambda = if cfg.grl_ramp {
                cfg.weights.grl_lambda * grl_ramp(done as f64 / total_steps as f64)
            } else {
                cfg.weights.grl_lambda
            };
            let losses = trainer.adapt_step(&src.batch(chunk, max)?, &tgt.images(&t_idx)?, lambda)?;
            loss_sum += losses.l_total;
            writer.record(&LogRecord::Step(StepLog {
                phase: Phase::DomainAdapt,
                epoch,
                step: trainer.optimizer.step,
                losses,
            }))?;
        }
        let (rmse, d1) = if val.is_empty() {
            (None, None)
        } else {
            let (r, d) = validate(&mut trainer.net, &val)?;
            (Some(r), Some(d))
        };
        let rec = EpochRecord {
            phase: Phase::DomainAdapt,
            epoch,
            val_rmse_mm: rmse,
            val_delta1: d1,
            train_loss: loss_sum / steps_per_epoch as f64,
        };
        writer.record(&LogRecord::Epoch(rec.clone()))?;
        history.push(rec);
        log::info!("adapt epoch {epoch}: mean loss {:.4}", loss_sum / steps_per_epoch as f64);
        if cfg.save_every > 0 && epoch % cfg.save_every == 0 {
            writer.save(&format!("ckpt_{epoch}"), &snapshot(&trainer, epoch, &history))?;
        }
    }
    let last = snapshot(&trainer, cfg.adapt_epochs.max(start - 1), &history);
    writer.save(FINAL_DIR, &last)?;
    Ok(last)
}

/// How separable two domains are in pooled bottleneck space: a logistic
/// probe is fit on even-indexed samples of each domain and scored on the
/// odd ones. 0.5 means the domains are indistinguishable to the probe.
pub fn domain_probe_accuracy(net: &mut DepthNet, source: &[Tensor], target: &[Tensor]) -> Result<f64> {
    if source.len() < 2 || target.len() < 2 {
        return Err(Error::EmptyDataset("probe needs at least two samples per domain".into()));
    }
    let mut feats: Vec<(Vec<f64>, f64)> = Vec::new();
    for (imgs, label) in [(source, 1.0), (target, 0.0)] {
        for chunk in imgs.chunks(8) {
            let pooled = pool_bottleneck(&net.forward_features(&Tensor::stack(chunk)?)?);
            for b in 0..pooled.batch() {
                feats.push((pooled.item(b).iter().map(|&v| v as f64).collect(), label));
            }
        }
    }
    let dim = feats[0].0.len();
    let is_fit = |i: usize| {
        let within = if i < source.len() { i } else { i - source.len() };
        within % 2 == 0
    };
    // Standardize with statistics of the fitting half.
    let fit: Vec<usize> = (0..feats.len()).filter(|&i| is_fit(i)).collect();
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for &i in &fit {
        for (m, v) in mean.iter_mut().zip(&feats[i].0) {
            *m += v / fit.len() as f64;
        }
    }
    for &i in &fit {
        for ((s, v), m) in std.iter_mut().zip(&feats[i].0).zip(&mean) {
            *s += (v - m).powi(2) / fit.len() as f64;
        }
    }
    for (x, _) in feats.iter_mut() {
        for ((v, m), s) in x.iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / (s.sqrt() + 1e-8);
        }
    }
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let l2 = 1e-3;
    for _ in 0..500 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for &i in &fit {
            let (x, y) = &feats[i];
            let z: f64 = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            let e = 1.0 / (1.0 + (-z).exp()) - y;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += e * v / fit.len() as f64;
            }
            gb += e / fit.len() as f64;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * (g + l2 * *wi);
        }
        b -= 0.5 * gb;
    }
    let test: Vec<usize> = (0..feats.len()).filter(|&i| !is_fit(i)).collect();
    let correct = test
        .iter()
        .filter(|&&i| {
            let (x, y) = &feats[i];
            let z: f64 = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            (z >= 0.0) == (*y == 1.0)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_halts_after_patience() {
        let metrics = [5.0, 4.0, 3.0, 3.0, 3.5, 3.0, 2.0];
        let mut es = EarlyStopping::new(2);
        let mut halted = None;
        for (i, &m) in metrics.iter().enumerate() {
            if es.observe(i + 1, m) == StopDecision::Stop {
                halted = Some(i + 1);
                break;
            }
        }
        assert_eq!(halted, Some(5));
        assert_eq!(es.best, Some((3, 3.0)));
    }

    #[test]
    fn nan_metric_never_improves() {
        let mut es = EarlyStopping::new(3);
        assert_eq!(es.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(2, f64::NAN), StopDecision::Continue);
    }

    #[test]
    fn desk_profile_is_valid() {
        TrainConfig::desk().validate().unwrap();
        assert!(TrainConfig { batch_size: 7, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::RunLocked(_))));
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }
}
