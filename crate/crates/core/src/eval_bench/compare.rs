//! Variant comparison table: cost and held-out SI-SNR per (variant, reuse)
//! cell, aggregated over independently trained seeds.

use std::collections::BTreeMap;
use std::io::Write;

use crate::config::SlowFastConfig;
use crate::error::{Error, Result};
use crate::eval_bench::cost::mac_count;
use crate::model::ModelWeights;
use crate::training::{mean_sisnr, CorpusItem, TrainingPair};

pub const COMPARE_HEADER: [&str; 6] = [
    "variant",
    "reuse",
    "mmacs_per_s",
    "sisnr_mean_db",
    "sisnr_std_db",
    "seeds",
];

/// One trained model. Several entries with the same variant and reuse are
/// treated as seed replicates.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub label: String,
    pub cfg: SlowFastConfig,
    pub weights: ModelWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: String,
    pub reuse: usize,
    pub mmacs: f64,
    pub sisnr_mean: f64,
    /// Sample standard deviation across seeds.
    pub sisnr_std: f64,
    pub seeds: usize,
}

/// Scores every model on `corpus` and aggregates per grid cell. Cells with
/// fewer than `min_seeds` models are reported together as
/// [`Error::MissingCells`].
pub fn compare_variants(
    corpus: &[CorpusItem],
    models: &[TrainedModel],
    grid: &[(String, usize)],
    min_seeds: usize,
) -> Result<Vec<CompareRow>> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("comparison corpus is empty".into()));
    }
    let mut cells: BTreeMap<(String, usize), Vec<&TrainedModel>> = BTreeMap::new();
    for m in models {
        cells
            .entry((m.cfg.variant.clone(), m.cfg.reuse))
            .or_default()
            .push(m);
    }
    let missing: Vec<String> = grid
        .iter()
        .filter_map(|key| {
            let have = cells.get(key).map_or(0, Vec::len);
            (have < min_seeds).then(|| format!("{}/reuse={} ({have} of {min_seeds})", key.0, key.1))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing.join(", ")));
    }

    let pairs: Vec<TrainingPair> = corpus.iter().map(|c| c.pair.clone()).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for key in grid {
        let entries = &cells[key];
        let mut scores = Vec::with_capacity(entries.len());
        for m in entries {
            scores.push(mean_sisnr(&pairs, &m.weights, &m.cfg)?);
        }
        let (mean, std) = mean_std(&scores);
        rows.push(CompareRow {
            variant: key.0.clone(),
            reuse: key.1,
            mmacs: mac_count(&entries[0].cfg)?.total_mmacs,
            sisnr_mean: mean,
            sisnr_std: std,
            seeds: scores.len(),
        });
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv output: {e}"));
    w.write_record(COMPARE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.reuse.to_string(),
            format!("{:.3}", r.mmacs),
            format!("{:.3}", r.sisnr_mean),
            format!("{:.3}", r.sisnr_std),
            r.seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}
