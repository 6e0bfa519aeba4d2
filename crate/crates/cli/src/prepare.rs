//! EDF + hypnogram directories → one epoch dataset file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eeganon::signal_io::{
    epochize, extract_sleep_period, read_edf, read_hypnogram, save_dataset, EdfReadOptions, EpochDataset, SleepStage,
};
use eeganon::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    /// Epochs per stage (W, N1, N2, N3, REM) per subject.
    pub counts: BTreeMap<String, [usize; SleepStage::COUNT]>,
    pub skipped: Vec<String>,
    pub total_epochs: usize,
}

/// Files are paired by their stem up to the first `-`; failing that, by the first
/// six characters (Sleep-EDF names such as `SC4001E0-PSG` / `SC4001EC-Hypnogram`).
fn pairing_key(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    stem.split('-').next().unwrap_or(stem).to_string()
}

fn short_key(key: &str) -> String {
    key.chars().take(6).collect()
}

fn list(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn prepare(edf_dir: &Path, hypnogram_dir: &Path, out: &Path) -> Result<PrepareSummary> {
    let edfs = list(edf_dir, &["edf"])?;
    let hypnograms = list(hypnogram_dir, &["csv", "txt"])?;
    if edfs.is_empty() {
        bail!("no .edf files in {}", edf_dir.display());
    }
    let mut epochs = Vec::new();
    let mut skipped = Vec::new();
    let mut fs_hz: Option<f64> = None;
    for edf in &edfs {
        let key = pairing_key(edf);
        let hyp = hypnograms
            .iter()
            .find(|h| pairing_key(h) == key)
            .or_else(|| hypnograms.iter().find(|h| short_key(&pairing_key(h)) == short_key(&key)));
        let Some(hyp) = hyp else {
            log::warn!("{}: no hypnogram found, skipped", edf.display());
            skipped.push(key);
            continue;
        };
        let mut rec = read_edf(edf, &EdfReadOptions::sleep_edf_eeg()).with_context(|| format!("reading {}", edf.display()))?;
        rec.subject_id = key.clone();
        let entries = read_hypnogram(hyp).with_context(|| format!("reading {}", hyp.display()))?;
        let period = match extract_sleep_period(&rec, &entries) {
            Ok(p) => p,
            Err(Error::EmptySleep) => {
                log::warn!("{}: no sleep stage scored, skipped", edf.display());
                skipped.push(key);
                continue;
            }
            Err(e) => return Err(e).with_context(|| format!("extracting sleep period of {}", edf.display())),
        };
        match fs_hz {
            Some(f) if f != period.sampling_rate_hz => bail!(
                "{} is sampled at {} Hz, earlier recordings at {} Hz",
                edf.display(),
                period.sampling_rate_hz,
                f
            ),
            _ => fs_hz = Some(period.sampling_rate_hz),
        }
        epochs.extend(epochize(&period, &entries));
    }
    let Some(fs_hz) = fs_hz else {
        bail!("no usable recordings in {}", edf_dir.display());
    };
    let dataset = EpochDataset::new(epochs, fs_hz);
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_dataset(&dataset, out)?;
    Ok(PrepareSummary {
        counts: dataset.counts(),
        skipped,
        total_epochs: dataset.len(),
    })
}
