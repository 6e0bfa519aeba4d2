use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SubjectProfile, SynthConfig, SyntheticCorpus};
use crate::signal_io::{
    write_edf, write_hypnogram, HypnogramEntry, RawStage, Recording, SleepStage, DEFAULT_EEG_CHANNELS,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub edf: String,
    pub hypnogram: String,
    pub n_epochs: usize,
    /// Epochs per stage in W, N1, N2, N3, REM order.
    pub stage_counts: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: SynthConfig,
    pub profiles: Vec<SubjectProfile>,
    pub recordings: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn total_epochs(&self) -> usize {
        self.recordings.iter().map(|r| r.n_epochs).sum()
    }
}

fn raw(stage: SleepStage) -> RawStage {
    match stage {
        SleepStage::W => RawStage::W,
        SleepStage::N1 => RawStage::S1,
        SleepStage::N2 => RawStage::S2,
        SleepStage::N3 => RawStage::S3,
        SleepStage::Rem => RawStage::Rem,
    }
}

/// Writes one EDF and one hypnogram CSV per subject plus `manifest.json`; returns the manifest path.
pub fn export_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let epoch_s = corpus.config.epoch_s;
    let mut recordings = Vec::new();
    for profile in &corpus.profiles {
        let epochs: Vec<_> = corpus
            .dataset
            .epochs
            .iter()
            .filter(|e| e.subject_id == profile.subject_id)
            .collect();
        let mut samples = vec![Vec::new(); 2];
        let mut hyp: Vec<HypnogramEntry> = Vec::new();
        let mut counts = [0usize; 5];
        for e in &epochs {
            for (c, ch) in samples.iter_mut().enumerate() {
                ch.extend(e.channel(c).iter().map(|v| *v as f64));
            }
            counts[e.stage.index()] += 1;
            match hyp.last_mut() {
                Some(last) if last.raw_stage == raw(e.stage) && (last.end_s() - e.onset_s).abs() < 1e-9 => {
                    last.duration_s += epoch_s;
                }
                _ => hyp.push(HypnogramEntry::new(e.onset_s, epoch_s, raw(e.stage))),
            }
        }
        let labels = DEFAULT_EEG_CHANNELS.iter().map(|s| s.to_string()).collect();
        let rec = Recording::new(profile.subject_id.clone(), corpus.config.sampling_rate_hz, labels, samples)?;
        let edf = format!("{}.edf", profile.subject_id);
        let hypnogram = format!("{}.csv", profile.subject_id);
        write_edf(&rec, &dir.join(&edf))?;
        write_hypnogram(&dir.join(&hypnogram), &hyp)?;
        recordings.push(ManifestEntry {
            subject_id: profile.subject_id.clone(),
            edf,
            hypnogram,
            n_epochs: epochs.len(),
            stage_counts: counts,
        });
    }
    let manifest = CorpusManifest {
        config: corpus.config.clone(),
        profiles: corpus.profiles.clone(),
        recordings,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
