//! Binary container for an [`EpochDataset`]: magic, a length-prefixed JSON header
//! with per-epoch labels, then every epoch's samples as little-endian `f32`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Epoch, EpochDataset, SleepStage, SplitTag};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"EEGDSET1";

#[derive(Serialize, Deserialize)]
struct Header {
    sampling_rate_hz: f64,
    split: SplitTag,
    subject_index: BTreeMap<String, usize>,
    epochs: Vec<EpochMeta>,
}

#[derive(Serialize, Deserialize)]
struct EpochMeta {
    subject_id: String,
    stage: SleepStage,
    onset_s: f64,
    n_channels: usize,
    n_values: usize,
}

pub fn save_dataset(dataset: &EpochDataset, path: &Path) -> Result<()> {
    let header = Header {
        sampling_rate_hz: dataset.sampling_rate_hz,
        split: dataset.split,
        subject_index: dataset.subject_index.clone(),
        epochs: dataset
            .epochs
            .iter()
            .map(|e| EpochMeta {
                subject_id: e.subject_id.clone(),
                stage: e.stage,
                onset_s: e.onset_s,
                n_channels: e.n_channels,
                n_values: e.data.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for e in &dataset.epochs {
        for v in &e.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_dataset(path: &Path) -> Result<EpochDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::InvalidInput(format!("{} is not a dataset file", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut epochs = Vec::with_capacity(header.epochs.len());
    let mut buf = Vec::new();
    for m in header.epochs {
        buf.resize(m.n_values * 4, 0);
        r.read_exact(&mut buf).map_err(io)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        epochs.push(Epoch::new(m.subject_id, m.stage, m.onset_s, m.n_channels, data)?);
    }
    EpochDataset::with_index(epochs, header.subject_index, header.sampling_rate_hz, header.split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let epochs = vec![
            Epoch::new("b", SleepStage::N3, 30.0, 2, vec![1.5, -2.0, 3.25, 0.0]).unwrap(),
            Epoch::new("a", SleepStage::Rem, 60.0, 2, vec![f32::MIN_POSITIVE, 7.0, -1e-7, 4.0]).unwrap(),
        ];
        let ds = EpochDataset::new(epochs, 100.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }
}
