//! Trains on a synthetic Markov-chain corpus and reports recall against the
//! popularity baseline.
//!
//! Knobs come from the environment: DIM, HEADS, LAYERS, STEPS, EPOCHS, HOPS,
//! MODE (plain|mask), LR, SEED.

use std::env;
use std::time::Instant;

use fgnn::eval::{evaluate, FgnnRecommender, Pop, DEFAULT_KS};
use fgnn::fgnn::ModelConfig;
use fgnn::graphs::build_global_graph;
use fgnn::synthetic::{markov_chain, ChainConfig};
use fgnn::train::{init_params, train_epoch, AdamState, TrainConfig};

fn var<T: std::str::FromStr>(name: &str, default: T) -> T {
    env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() -> fgnn::Result<()> {
    let data = markov_chain(&ChainConfig::default())?;
    let model = ModelConfig {
        dim: var("DIM", 32),
        heads: var("HEADS", 4),
        layers: var("LAYERS", 3),
        readout_steps: var("STEPS", 3),
        readout_mode: var("MODE", "mask".to_string()).parse()?,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: var("EPOCHS", 10),
        n_hops: var("HOPS", 1),
        lr: var("LR", 1e-3),
        seed: var("SEED", 0),
        ..TrainConfig::default()
    };
    let global = build_global_graph(&data.train_sessions);
    let mut params = init_params(&model, data.num_items, &cfg)?;
    let mut adam = AdamState::new(&params);
    let pop = evaluate(
        &Pop::fit(&data.train_sessions, data.num_items),
        &data.test,
        &DEFAULT_KS,
    )?;
    println!(
        "train {} test {} pop R@20 {:.4}",
        data.train.len(),
        data.test.len(),
        pop.recall(20).unwrap()
    );
    for epoch in 0..cfg.epochs {
        let m = train_epoch(&data.train, &global, &mut params, &mut adam, &cfg, epoch)?;
        let t = Instant::now();
        let rec = FgnnRecommender {
            params: &params,
            global: &global,
            sampling: cfg.clone(),
        };
        let rep = evaluate(&rec, &data.test, &DEFAULT_KS)?;
        println!(
            "epoch {epoch} loss {:.4} lr {:.0e} train {:.1}s eval {:.1}s R@20 {:.4} MRR@20 {:.4}",
            m.mean_loss,
            m.lr,
            m.wall_seconds,
            t.elapsed().as_secs_f64(),
            rep.recall(20).unwrap(),
            rep.mrr(20).unwrap()
        );
        for (lo, hi) in [(1, 1), (2, 2), (3, usize::MAX)] {
            let subset: Vec<_> = data
                .test
                .iter()
                .filter(|e| (lo..=hi).contains(&e.input.len()))
                .cloned()
                .collect();
            let r = evaluate(&rec, &subset, &[1, 20])?;
            println!(
                "  input length {lo}..={}: n {} R@1 {:.4} R@20 {:.4}",
                if hi == usize::MAX {
                    "max".to_string()
                } else {
                    hi.to_string()
                },
                subset.len(),
                r.recall(1).unwrap(),
                r.recall(20).unwrap()
            );
        }
    }
    Ok(())
}
