//! Source-only vs adversarial fine-tuning on a desk-scale synthetic pair.
//!
//! Usage: desk_experiment [SEED] [WORK_DIR] [PRETRAIN_EPOCHS] [ADAPT_EPOCHS]

use std::path::PathBuf;
use std::time::Instant;

use lumen_da_core::datagen::{build_dataset, Domain, GeneratorConfig, Split};
use lumen_da_core::metrics::{evaluate, EvalConfig};
use lumen_da_core::model::ModelConfig;
use lumen_da_core::trainer::{adapt_domain, domain_probe_accuracy, train_source, LoadedSplit, RunOptions, TrainConfig};

fn main() -> lumen_da_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(0, |s| s.parse().unwrap());
    let work = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "/tmp/lumen-desk".into()));
    let mut train = TrainConfig { seed, ..TrainConfig::desk() };
    if let Some(e) = args.get(3) {
        train.pretrain_epochs = e.parse().unwrap();
    }
    if let Some(e) = args.get(4) {
        train.adapt_epochs = e.parse().unwrap();
    }
    let gen = GeneratorConfig { seed, ..GeneratorConfig::desk() };
    let t = Instant::now();
    let data = build_dataset(&gen, &work.join(format!("data-{seed}")))?;
    println!("gen {:.1}s", t.elapsed().as_secs_f64());

    let model = ModelConfig::desk();
    let t = Instant::now();
    let ckpt = train_source(
        &data,
        &model,
        &train,
        RunOptions { run_dir: Some(work.join(format!("run-{seed}/phase1"))), resume: None },
    )?;
    let last = ckpt.history.last().unwrap();
    println!(
        "phase1 {:.1}s best epoch {} val rmse {:.4} d1 {:.4} (last epoch {})",
        t.elapsed().as_secs_f64(),
        ckpt.epoch,
        ckpt.history[ckpt.epoch - 1].val_rmse_mm.unwrap(),
        ckpt.history[ckpt.epoch - 1].val_delta1.unwrap(),
        last.epoch
    );
    let eval = EvalConfig::new(model.max_depth_mm);
    let src_test = LoadedSplit::load(&data, Domain::Source, Split::Test, false)?;
    let tgt_test = LoadedSplit::load(&data, Domain::Target, Split::Test, false)?;
    let mut base = ckpt.net.clone();
    let r0 = evaluate(&mut base, &data, Split::Test, Some(Domain::Target), "phase1", &eval, None)?;
    println!(
        "phase1 target rmse {:.4} probe {:.3}",
        r0.aggregate.rmse_mm.mean,
        domain_probe_accuracy(&mut base, &src_test.images, &tgt_test.images)?
    );

    for gamma in [0.0, train.weights.gamma] {
        let mut cfg = train.clone();
        cfg.weights.gamma = gamma;
        let t = Instant::now();
        let out = adapt_domain(
            ckpt.clone(),
            &data,
            &data,
            &cfg,
            RunOptions { run_dir: Some(work.join(format!("run-{seed}/gamma-{gamma}"))), resume: None },
        )?;
        let mut net = out.net;
        let r = evaluate(&mut net, &data, Split::Test, Some(Domain::Target), "x", &eval, None)?;
        let rs = evaluate(&mut net, &data, Split::Test, Some(Domain::Source), "x", &eval, None)?;
        println!(
            "gamma {gamma}: {:.1}s target rmse {:.4} d1 {:.4} source rmse {:.4} probe {:.3}",
            t.elapsed().as_secs_f64(),
            r.aggregate.rmse_mm.mean,
            r.aggregate.delta1.mean,
            rs.aggregate.rmse_mm.mean,
            domain_probe_accuracy(&mut net, &src_test.images, &tgt_test.images)?
        );
    }
    Ok(())
}
