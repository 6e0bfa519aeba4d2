//! Hypnogram CSV: `onset_s,duration_s,stage`, one scored interval per row, an
//! optional header row.

use std::fs;
use std::path::Path;

use super::{HypnogramEntry, RawStage};
use crate::{Error, Result};

const TOLERANCE_S: f64 = 1e-6;

pub fn read_hypnogram(path: &Path) -> Result<Vec<HypnogramEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hypnogram(&text)
}

pub fn parse_hypnogram(text: &str) -> Result<Vec<HypnogramEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut entries: Vec<HypnogramEntry> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if line == 1 && record.get(0) == Some("onset_s") {
            continue;
        }
        if record.len() != 3 {
            return Err(Error::HypnogramParse {
                line,
                message: format!("expected 3 columns, found {}", record.len()),
            });
        }
        let number = |idx: usize, what: &str| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|_| Error::HypnogramParse {
                line,
                message: format!("invalid {} '{}'", what, &record[idx]),
            })
        };
        let onset_s = number(0, "onset")?;
        let duration_s = number(1, "duration")?;
        let raw_stage: RawStage = record[2]
            .parse()
            .map_err(|token| Error::UnknownStage { line, token })?;
        if !(onset_s >= 0.0) || !(duration_s > 0.0) {
            return Err(Error::HypnogramValidation(format!(
                "line {}: onset must be >= 0 and duration > 0",
                line
            )));
        }
        if let Some(prev) = entries.last() {
            if onset_s < prev.onset_s {
                return Err(Error::HypnogramValidation(format!(
                    "line {}: onset {} precedes previous onset {}",
                    line, onset_s, prev.onset_s
                )));
            }
            if onset_s + TOLERANCE_S < prev.end_s() {
                return Err(Error::HypnogramValidation(format!(
                    "line {}: entry at {} s overlaps previous entry ending at {} s",
                    line,
                    onset_s,
                    prev.end_s()
                )));
            }
        }
        entries.push(HypnogramEntry::new(onset_s, duration_s, raw_stage));
    }
    Ok(entries)
}

pub fn write_hypnogram(path: &Path, entries: &[HypnogramEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["onset_s", "duration_s", "stage"])?;
    for e in entries {
        w.write_record([
            e.onset_s.to_string(),
            e.duration_s.to_string(),
            e.raw_stage.token().to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
