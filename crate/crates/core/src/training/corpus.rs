//! Synthetic denoising corpus.
//!
//! Clean clips are harmonic "speech surrogates": syllable-like voiced
//! segments with a gliding fundamental between 80 and 300 Hz, a raised-cosine
//! amplitude envelope and three formant-like resonances, separated by short
//! pauses. Noise is pink. Each pair is mixed at an exact SNR and then both
//! signals are scaled by one common factor so the mixture peaks at 0.9.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal_io::{read_wav, write_wav, AudioBuffer, SAMPLE_RATE};

use super::backprop::TrainingPair;

pub const CLIP_SAMPLES: usize = SAMPLE_RATE as usize;
pub const TRAIN_SNRS_DB: [f64; 4] = [0.0, 5.0, 10.0, 15.0];
pub const EVAL_SNRS_DB: [f64; 4] = [2.5, 7.5, 12.5, 17.5];
pub const PEAK: f64 = 0.9;

const FS: f64 = SAMPLE_RATE as f64;
const MAX_HARMONIC_HZ: f64 = 7000.0;

struct Syllable {
    start: usize,
    len: usize,
    f0_start: f64,
    f0_end: f64,
    formants: [(f64, f64); 3],
    gain: f64,
}

fn resonance(f: f64, center: f64, bandwidth: f64) -> f64 {
    let d = (f - center) / bandwidth;
    1.0 / (1.0 + d * d)
}

fn spectral_envelope(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    let weights = [1.0, 0.6, 0.3];
    formants
        .iter()
        .zip(weights)
        .map(|(&(c, b), g)| g * resonance(f, c, b))
        .sum::<f64>()
        + 0.02
}

fn syllables(rng: &mut ChaCha8Rng, len: usize) -> Vec<Syllable> {
    let ms = |v: f64| (v * FS / 1000.0) as usize;
    let mut out = Vec::new();
    let mut t = ms(rng.gen_range(0.0..100.0));
    loop {
        let n = ms(rng.gen_range(80.0..250.0));
        if t + n > len {
            break;
        }
        let f0_start: f64 = rng.gen_range(80.0..300.0);
        let f0_end = (f0_start * rng.gen_range(0.85f64..1.15)).clamp(80.0, 300.0);
        out.push(Syllable {
            start: t,
            len: n,
            f0_start,
            f0_end,
            formants: [
                (rng.gen_range(300.0..900.0), rng.gen_range(60.0..120.0)),
                (rng.gen_range(900.0..2500.0), rng.gen_range(80.0..160.0)),
                (rng.gen_range(2200.0..3500.0), rng.gen_range(120.0..250.0)),
            ],
            gain: rng.gen_range(0.5..1.0),
        });
        t += n + ms(rng.gen_range(30.0..150.0));
    }
    out
}

fn envelope(k: usize, len: usize) -> f64 {
    let attack = (0.015 * FS) as usize;
    let release = (0.025 * FS) as usize;
    let ramp = |x: f64| (0.5 * PI * x).sin().powi(2);
    let mut e = 1.0;
    if k < attack {
        e *= ramp(k as f64 / attack as f64);
    }
    if len - k <= release {
        e *= ramp((len - k) as f64 / release as f64);
    }
    e
}

/// Deterministic harmonic speech surrogate of `len` samples.
pub fn synth_clean(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    for syl in syllables(&mut rng, len) {
        let max_h = (MAX_HARMONIC_HZ / syl.f0_start.min(syl.f0_end)) as usize;
        let mut phases: Vec<f64> = (0..max_h).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let am_rate = rng.gen_range(3.0..6.0);
        for k in 0..syl.len {
            let frac = k as f64 / syl.len as f64;
            let f0 = syl.f0_start + (syl.f0_end - syl.f0_start) * frac;
            let am = 1.0 + 0.25 * (2.0 * PI * am_rate * k as f64 / FS).sin();
            let mut v = 0.0;
            for (h, ph) in phases.iter_mut().enumerate() {
                let f = f0 * (h + 1) as f64;
                if f < MAX_HARMONIC_HZ {
                    v += spectral_envelope(f, &syl.formants) * ph.sin();
                }
                *ph += 2.0 * PI * f / FS;
            }
            out[syl.start + k] += syl.gain * envelope(k, syl.len) * am * v;
        }
    }
    out
}

/// Pink noise from white Gaussian noise through Paul Kellet's refined filter.
pub fn pink_noise(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = [0.0f64; 7];
    let burn_in = 4096;
    let mut out = Vec::with_capacity(len);
    for t in 0..len + burn_in {
        let white: f64 = rng.sample(StandardNormal);
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let pink = b.iter().sum::<f64>() + white * 0.5362;
        b[6] = white * 0.115926;
        if t >= burn_in {
            out.push(pink);
        }
    }
    out
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Mixes at exactly `snr_db`, then scales both signals so the noisy peak is
/// [`PEAK`].
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<TrainingPair> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    if clean.len() != noise.len() {
        return Err(Error::shape("noise length", clean.len(), noise.len()));
    }
    let (ec, en) = (energy(clean), energy(noise));
    if ec == 0.0 || en == 0.0 {
        return Err(Error::InvalidInput("cannot mix silent signals".into()));
    }
    let g = (ec / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let noisy: Vec<f64> = clean.iter().zip(noise).map(|(c, n)| c + g * n).collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let s = PEAK / peak;
    Ok(TrainingPair {
        noisy: noisy.iter().map(|v| v * s).collect(),
        clean: clean.iter().map(|v| v * s).collect(),
    })
}

/// One second of surrogate speech in pink noise at `snr_db`.
pub fn make_synthetic_pair(seed: u64, snr_db: f64) -> Result<TrainingPair> {
    let clean = synth_clean(seed, CLIP_SAMPLES);
    let noise = pink_noise(seed ^ 0x9E37_79B9_7F4A_7C15, CLIP_SAMPLES);
    mix_at_snr(&clean, &noise, snr_db)
}

/// SNR of a pair, `10·log10(‖clean‖² / ‖noisy − clean‖²)`.
pub fn measured_snr_db(pair: &TrainingPair) -> f64 {
    let noise: Vec<f64> = pair
        .noisy
        .iter()
        .zip(&pair.clean)
        .map(|(a, b)| a - b)
        .collect();
    10.0 * (energy(&pair.clean) / energy(&noise)).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub seed: u64,
    pub snr_db: f64,
    pub pair: TrainingPair,
}

/// `count` pairs cycling through `snrs`, with per-item seeds drawn from `seed`.
pub fn make_corpus(seed: u64, count: usize, snrs: &[f64]) -> Result<Vec<CorpusItem>> {
    if snrs.is_empty() {
        return Err(Error::InvalidInput("empty SNR grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let item_seed: u64 = rng.gen();
            let snr_db = snrs[k % snrs.len()];
            Ok(CorpusItem {
                id: format!("{k:05}"),
                seed: item_seed,
                snr_db,
                pair: make_synthetic_pair(item_seed, snr_db)?,
            })
        })
        .collect()
}

const MANIFEST: &str = "manifest.csv";

fn item_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join("noisy").join(format!("{id}.wav")),
        dir.join("clean").join(format!("{id}.wav")),
    )
}

/// Writes `noisy/<id>.wav`, `clean/<id>.wav` and `manifest.csv`.
pub fn save_corpus(dir: impl AsRef<Path>, items: &[CorpusItem]) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["noisy", "clean"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = dir.join(MANIFEST);
    let mut w =
        csv::Writer::from_path(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("{}: {e}", dir.display()));
    w.write_record(["id", "seed", "snr_db"]).map_err(csv_err)?;
    for it in items {
        let (noisy, clean) = item_paths(dir, &it.id);
        write_wav(&noisy, &AudioBuffer::new(it.pair.noisy.clone())?)?;
        write_wav(&clean, &AudioBuffer::new(it.pair.clean.clone())?)?;
        w.write_record([it.id.clone(), it.seed.to_string(), it.snr_db.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(())
}

/// Reads a corpus written by [`save_corpus`]. Audio comes from the WAV
/// files, so it carries their 16-bit quantization.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<CorpusItem>> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    let mut r = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", manifest.display())))?;
    let mut items = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidInput(format!("{}: {e}", manifest.display())))?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} row {}: missing column {k}",
                    manifest.display(),
                    row + 2
                ))
            })
        };
        let id = field(0)?.to_string();
        let bad = |what: &str| {
            Error::InvalidInput(format!(
                "{} row {}: bad {what}",
                manifest.display(),
                row + 2
            ))
        };
        let seed = field(1)?.parse().map_err(|_| bad("seed"))?;
        let snr_db = field(2)?.parse().map_err(|_| bad("snr_db"))?;
        let (noisy, clean) = item_paths(dir, &id);
        let noisy = read_wav(&noisy)?.into_samples();
        let clean = read_wav(&clean)?.into_samples();
        if noisy.len() != clean.len() {
            return Err(Error::shape("corpus pair length", clean.len(), noisy.len()));
        }
        items.push(CorpusItem {
            id,
            seed,
            snr_db,
            pair: TrainingPair { noisy, clean },
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_is_exact() {
        for (k, snr) in TRAIN_SNRS_DB.iter().chain(&EVAL_SNRS_DB).enumerate() {
            let p = make_synthetic_pair(k as u64, *snr).unwrap();
            assert_eq!(p.noisy.len(), CLIP_SAMPLES);
            assert!((measured_snr_db(&p) - snr).abs() < 0.01);
            let peak = p.noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - PEAK).abs() < 1e-12);
        }
    }

    #[test]
    fn pairs_are_deterministic() {
        assert_eq!(
            make_synthetic_pair(3, 5.0).unwrap(),
            make_synthetic_pair(3, 5.0).unwrap()
        );
        assert_ne!(
            make_synthetic_pair(3, 5.0).unwrap(),
            make_synthetic_pair(4, 5.0).unwrap()
        );
        assert!(make_synthetic_pair(3, f64::NAN).is_err());
    }

    #[test]
    fn clean_has_pauses_and_voicing() {
        let c = synth_clean(7, CLIP_SAMPLES);
        let silent = c
            .chunks(160)
            .filter(|w| w.iter().all(|v| *v == 0.0))
            .count();
        assert!(silent > 0 && silent < 100);
    }

    #[test]
    fn pink_noise_spectrum_falls_with_frequency() {
        // First difference acts as a high-pass; pink noise loses most of its
        // energy through it, white noise would keep about twice its energy.
        let n = pink_noise(1, 32000);
        let diff: f64 = n.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        assert!(diff < 0.5 * energy(&n));
    }

    #[test]
    fn corpus_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let items = make_corpus(5, 3, &EVAL_SNRS_DB).unwrap();
        save_corpus(dir.path(), &items).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in items.iter().zip(&back) {
            assert_eq!((&a.id, a.seed, a.snr_db), (&b.id, b.seed, b.snr_db));
            let err = a
                .pair
                .noisy
                .iter()
                .zip(&b.pair.noisy)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(err <= 1.0 / 32768.0);
        }
    }
}
