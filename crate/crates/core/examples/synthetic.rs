//! Train on a separable synthetic corpus and report test F1 with and without
//! DK revision.
//!
//! Environment overrides: EPISODES, LR, REWARD, TRAIN_EVERY, BATCH, GAMMA, PRETRAIN,
//! SYNC, EPS_END, SEED.

use std::time::Instant;

use coner_core::agent::{run_training, NetworkConfig, QNetwork, TrainerConfig};
use coner_core::build_dk;
use coner_core::corpus::{synth_generate, SynthSpec};
use coner_core::eval::{evaluate, f1_report};
use coner_core::inference::{Model, Revision};
use coner_core::rng::SeedStreams;

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let w = 3;
    let net_cfg = NetworkConfig::desk(w);
    let dims = net_cfg.encoder.manifest();
    let spec = SynthSpec::informative(env("SEED", 11), 600, (20, 20), w, &dims, 0.8, 4.0);
    let convs = synth_generate(&spec)?;
    let (train, test) = convs.split_at(500);

    let trainer = TrainerConfig {
        episodes: env("EPISODES", TrainerConfig::desk().episodes),
        lr: env("LR", TrainerConfig::desk().lr),
        reward: env("REWARD", TrainerConfig::desk().reward),
        train_every: env("TRAIN_EVERY", TrainerConfig::desk().train_every),
        batch_size: env("BATCH", TrainerConfig::desk().batch_size),
        epsilon_end: env("EPS_END", TrainerConfig::desk().epsilon_end),
        gamma: env("GAMMA", TrainerConfig::desk().gamma),
        pretrain_epochs: env("PRETRAIN", TrainerConfig::desk().pretrain_epochs),
        sync_period: env("SYNC", TrainerConfig::desk().sync_period),
        ..TrainerConfig::desk()
    };
    let net = QNetwork::new(net_cfg)?;
    let start = Instant::now();
    let run = run_training(&net, train, &trainer, &SeedStreams::new(7))?;
    println!("trained {} steps in {:.1?}", run.steps, start.elapsed());
    for row in run.log.iter().step_by((run.log.len() / 10).max(1)) {
        println!("{row:?}");
    }

    let model = Model::new(net_cfg, run.params)?;
    let table = build_dk(train, w)?;
    let ev = evaluate(&model, &table, test, Revision::Full)?;
    let raw = f1_report(&ev.raw)?;
    let revised = f1_report(&ev.revised)?;
    println!(
        "raw acc {:.4} wF1 {:.4} | revised acc {:.4} wF1 {:.4}",
        raw.accuracy, raw.weighted_f1, revised.accuracy, revised.weighted_f1
    );
    println!("{}", ev.revised.heatmap());
    let corr = evaluate(&model, &table, test, Revision::CorrOnly)?;
    println!("corr-only revised acc {:.4}", corr.revised.accuracy());

    let (mut hurt, mut helped) = (0, 0);
    let mut conf: Vec<f64> = Vec::new();
    for conv in test {
        let preds = coner_core::inference::run_episode(&model, &table, conv, Revision::Full)?;
        for (u, p) in conv.utterances[w..].iter().zip(&preds) {
            let gold = u.label.unwrap();
            let top = p.scores.iter().cloned().fold(0.0, f64::max);
            conf.push(top);
            match (p.raw_label() == gold, p.label == gold) {
                (true, false) => hurt += 1,
                (false, true) => helped += 1,
                _ => {}
            }
        }
    }
    conf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| conf[((conf.len() - 1) as f64 * f) as usize];
    println!(
        "revision hurt {hurt} helped {helped}; raw confidence p05 {:.3} p25 {:.3} p50 {:.3}",
        q(0.05),
        q(0.25),
        q(0.5)
    );
    Ok(())
}
