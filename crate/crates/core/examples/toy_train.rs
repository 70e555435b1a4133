//! Trains one configuration on the synthetic corpus and reports held-out
//! SI-SNR at 5 dB input.
//!
//! cargo run --release --example toy_train -- [variant] [reuse] [epochs]

use std::time::Instant;

use slowfast_core::training::{
    input_sisnr, make_corpus, train_on, TrainConfig, TrainingPair, TRAIN_SNRS_DB,
};
use slowfast_core::SlowFastConfig;

fn pairs(seed: u64, count: usize, snrs: &[f64]) -> slowfast_core::Result<Vec<TrainingPair>> {
    Ok(make_corpus(seed, count, snrs)?
        .into_iter()
        .map(|c| c.pair)
        .collect())
}

fn main() -> slowfast_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = args.first().map(String::as_str).unwrap_or("ssmm");
    let reuse = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let mut cfg = TrainConfig::new(SlowFastConfig::two_ms(reuse, variant)?);
    cfg.epochs = epochs;
    cfg.seed = 7;
    cfg.validate()?;

    let train = pairs(1, cfg.train_pairs, &TRAIN_SNRS_DB)?;
    let eval = pairs(2, 16, &[5.0])?;
    let t0 = Instant::now();
    let out = train_on(&cfg, &train, &eval, |r| {
        println!(
            "epoch {:2}  loss {:9.5}  spec_mse {:8.5}  eval {:6.2} dB  lr {:.2e}  {:6.1?}",
            r.epoch,
            r.loss,
            r.spec_mse,
            r.eval_sisnr,
            r.lr,
            t0.elapsed()
        );
    })?;
    println!("input SI-SNR {:.2} dB", input_sisnr(&eval)?);
    if let Some(last) = out.log.last() {
        println!("final SI-SNR {:.2} dB", last.eval_sisnr);
    }
    Ok(())
}
