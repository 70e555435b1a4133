use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use slowfast_core::config::REUSE_GRID;
use slowfast_core::eval_bench::{
    benchmark_rtf, compare_variants, mac_count, single_branch_cost, verify_latency,
    write_compare_csv, TrainedModel,
};
use slowfast_core::kv::KvMap;
use slowfast_core::training::{
    load_corpus, make_corpus, save_corpus, train_synthetic, TrainConfig, TRAIN_SNRS_DB,
};
use slowfast_core::{
    enhance_chunked, enhance_offline, load_model, read_wav, registry, save_model, write_wav,
    SlowFastConfig,
};

/// Dual-rate streaming speech enhancement.
#[derive(Debug, Parser)]
#[command(name = "slowfast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Enhance a 16 kHz mono WAV file.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feed the engine in chunks of N samples instead of all at once.
        #[arg(long)]
        stream_chunk: Option<usize>,
    },
    /// Train on a synthetic corpus and write a model file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        train_pairs: Option<usize>,
        #[command(flatten)]
        model: ModelOverrides,
    },
    /// Print the MAC cost of a model config.
    BenchMac {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        model: ModelOverrides,
    },
    /// Measure the real-time factor on one thread.
    BenchRtf {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        /// Fail with exit code 2 when the measured factor exceeds this value.
        #[arg(long)]
        max_rtf: Option<f64>,
    },
    /// Check that no output depends on input further than one frame ahead.
    VerifyLatency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a directory of trained models on a corpus.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
        /// Directory of `.model` files; files sharing variant and reuse are seed replicates.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        reuse: Option<Vec<usize>>,
        #[arg(long, default_value_t = 3)]
        min_seeds: usize,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic noisy/clean corpus.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Mixture SNRs in dB, cycled over the items.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snrs: Option<Vec<f64>>,
    },
}

/// Flags that override model keys of a config file.
#[derive(Debug, Args)]
struct ModelOverrides {
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    reuse: Option<usize>,
}

impl ModelOverrides {
    fn apply(&self, kv: &mut KvMap) -> Result<()> {
        if let Some(v) = &self.variant {
            kv.set("variant", v);
        }
        if let Some(r) = self.reuse {
            let hop: usize = kv.parse_required("frame_hop")?;
            kv.set("reuse", r);
            kv.set("slow_hop", r * hop);
            kv.set("slow_window", 2 * r * hop);
        }
        Ok(())
    }
}

/// A check ran to completion and failed.
#[derive(Debug, Error)]
#[error("{0}")]
struct VerificationFailed(String);

fn read_kv(path: &Path) -> Result<KvMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(KvMap::parse(&text)?)
}

fn print_kv(kv: &KvMap) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(kv.render().as_bytes())?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Enhance {
            model,
            input,
            out,
            stream_chunk,
        } => {
            let (w, cfg) =
                load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let x = read_wav(&input)?;
            let y = match stream_chunk {
                Some(0) => bail!("--stream-chunk must be at least 1"),
                Some(n) => enhance_chunked(&x, &w, &cfg, n)?,
                None => enhance_offline(&x, &w, &cfg)?,
            };
            write_wav(&out, &y)?;
        }
        Command::Train {
            config,
            out,
            log,
            seed,
            epochs,
            batch_size,
            train_pairs,
            model,
        } => {
            let mut kv = read_kv(&config)?;
            model.apply(&mut kv)?;
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            if let Some(e) = epochs {
                kv.set("epochs", e);
            }
            if let Some(b) = batch_size {
                kv.set("batch_size", b);
            }
            if let Some(n) = train_pairs {
                kv.set("train_pairs", n);
            }
            let cfg = TrainConfig::from_kv(&kv)?;
            let outcome = train_synthetic(&cfg, |r| {
                eprintln!(
                    "epoch {:3}  loss {:.5}  spec_mse {:.5}  eval {:.2} dB  lr {:.2e}",
                    r.epoch, r.loss, r.spec_mse, r.eval_sisnr, r.lr
                );
            })?;
            eprintln!("unprocessed eval SI-SNR {:.2} dB", outcome.eval_input_sisnr);
            save_model(&outcome.weights, &cfg.model, &out)?;
            if let Some(path) = log {
                fs::write(&path, outcome.log_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::BenchMac { config, model } => {
            let mut kv = read_kv(&config)?;
            model.apply(&mut kv)?;
            let cfg = SlowFastConfig::from_kv(&kv)?;
            let report = mac_count(&cfg)?;
            let single = single_branch_cost(&cfg)?;
            let mut kv = report.to_kv();
            kv.set(
                "single_branch_mmacs_per_s",
                format!("{:.3}", single.total_mmacs),
            );
            kv.set(
                "ratio_to_single_branch",
                format!("{:.4}", report.total_mmacs / single.total_mmacs),
            );
            print_kv(&kv)?;
        }
        Command::BenchRtf {
            model,
            seconds,
            max_rtf,
        } => {
            let (w, cfg) =
                load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let r = benchmark_rtf(&w, &cfg, seconds)?;
            let mut kv = KvMap::new();
            kv.set("audio_secs", r.audio_secs);
            kv.set("wall_secs", format!("{:.6}", r.wall.as_secs_f64()));
            kv.set("slow_secs", format!("{:.6}", r.slow_time.as_secs_f64()));
            kv.set("fast_secs", format!("{:.6}", r.fast_time.as_secs_f64()));
            kv.set("slow_share", format!("{:.4}", r.slow_share()));
            kv.set("rtf", format!("{:.5}", r.rtf));
            kv.set("output_sha256", &r.output_hash);
            print_kv(&kv)?;
            if let Some(limit) = max_rtf {
                if r.rtf >= limit {
                    return Err(VerificationFailed(format!(
                        "rtf {:.4} is not below {limit}",
                        r.rtf
                    ))
                    .into());
                }
            }
        }
        Command::VerifyLatency {
            model,
            probes,
            seed,
        } => {
            let (w, cfg) =
                load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let r = verify_latency(&w, &cfg, probes, seed)?;
            let mut kv = KvMap::new();
            kv.set("probes", r.probes);
            kv.set("bound_samples", r.bound);
            kv.set("horizon_samples", r.horizon);
            kv.set("violations", r.violations.len());
            kv.set("result", if r.passed() { "pass" } else { "fail" });
            print_kv(&kv)?;
            if let Err(e) = r.check() {
                return Err(VerificationFailed(e.to_string()).into());
            }
        }
        Command::Compare {
            corpus,
            models,
            variants,
            reuse,
            min_seeds,
            out,
        } => {
            let items = load_corpus(&corpus)?;
            let mut trained = Vec::new();
            let mut paths: Vec<PathBuf> = fs::read_dir(&models)
                .with_context(|| format!("reading {}", models.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "model"))
                .collect();
            paths.sort();
            for p in paths {
                let (weights, cfg) =
                    load_model(&p).with_context(|| format!("loading {}", p.display()))?;
                trained.push(TrainedModel {
                    label: p.display().to_string(),
                    cfg,
                    weights,
                });
            }
            let variants = variants
                .unwrap_or_else(|| registry().names().iter().map(|s| s.to_string()).collect());
            let reuse = reuse.unwrap_or_else(|| REUSE_GRID.to_vec());
            let grid: Vec<(String, usize)> = variants
                .iter()
                .flat_map(|v| reuse.iter().map(move |&d| (v.clone(), d)))
                .collect();
            let rows = compare_variants(&items, &trained, &grid, min_seeds)?;
            match out {
                Some(path) => {
                    let f = fs::File::create(&path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    write_compare_csv(&rows, f)?;
                }
                None => write_compare_csv(&rows, std::io::stdout().lock())?,
            }
        }
        Command::MakeCorpus {
            out,
            seed,
            count,
            snrs,
        } => {
            let snrs = snrs.unwrap_or_else(|| TRAIN_SNRS_DB.to_vec());
            let items = make_corpus(seed, count, &snrs)?;
            save_corpus(&out, &items)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<VerificationFailed>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
