//! CSV and JSON outputs of the evaluation phase.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use eeganon::evaluation::{bandpass, Band, BandAnalyzer, EvalReport, UtilityTable, Welch, WelchParams, DEFAULT_BAND_HZ};
use eeganon::signal_io::{Epoch, EpochDataset, SleepStage};
use eeganon::training::{Anonymized, BatchRecord};
use serde::Serialize;

use crate::config::Thresholds;
use crate::pipeline::split_name;

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BatchRow {
    epoch: usize,
    batch: usize,
    l_util: f64,
    l_id: f64,
    l_dist: f64,
    combined: f64,
}

pub fn write_batch_trace(path: &Path, batches: &[BatchRecord]) -> Result<()> {
    let rows: Vec<BatchRow> = batches
        .iter()
        .map(|b| BatchRow {
            epoch: b.epoch,
            batch: b.batch,
            l_util: b.losses.l_util,
            l_id: b.losses.l_id,
            l_dist: b.losses.l_dist,
            combined: b.losses.combined,
        })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct MseRow<'a> {
    split: &'a str,
    index: usize,
    subject: &'a str,
    stage: &'a str,
    mse: f64,
}

pub fn write_epoch_mse(path: &Path, parts: &[&Anonymized]) -> Result<()> {
    let mut rows = Vec::new();
    for a in parts {
        for (i, (e, mse)) in a.dataset.epochs.iter().zip(&a.epoch_mse).enumerate() {
            rows.push(MseRow {
                split: split_name(a.dataset.split),
                index: i,
                subject: &e.subject_id,
                stage: e.stage.name(),
                mse: *mse,
            });
        }
    }
    write_rows(path, &rows)
}

/// Reports entering the privacy summary and the utility table.
pub struct EvalInputs {
    pub n_subjects: usize,
    pub baseline_reid: EvalReport,
    pub frozen_reid: EvalReport,
    pub fresh_reid: EvalReport,
    pub baseline_utility: EvalReport,
    pub frozen_utility: EvalReport,
    pub fresh_utility: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutcome {
    pub chance: f64,
    pub baseline_reid: f64,
    pub frozen_reid: f64,
    pub fresh_reid: f64,
    pub baseline_utility: f64,
    pub frozen_utility: f64,
    pub fresh_utility: f64,
    pub band_retention: f64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Accuracies and band retention that the thresholds are applied to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub chance: f64,
    pub baseline_reid: f64,
    pub frozen_reid: f64,
    pub fresh_reid: f64,
    pub baseline_utility: f64,
    pub frozen_utility: f64,
    pub band_retention: f64,
}

pub fn checks(s: &Summary, t: &Thresholds) -> Vec<Check> {
    let check = |name: &str, passed: bool, detail: String| Check {
        name: name.to_string(),
        passed,
        detail,
    };
    let frozen_limit = t.max_frozen_reid_over_chance * s.chance;
    let low = s.chance + t.fresh_margin;
    let high = s.baseline_reid - t.fresh_margin;
    let fresh_between = s.fresh_reid > low && s.fresh_reid < high;
    let fresh_order = s.fresh_reid >= s.frozen_reid - t.fresh_below_frozen_slack;
    let utility_floor = s.baseline_utility - t.max_utility_drop;
    vec![
        check(
            "baseline_reid",
            s.baseline_reid >= t.min_baseline_reid,
            format!("{:.4} >= {:.4}", s.baseline_reid, t.min_baseline_reid),
        ),
        check(
            "frozen_reid_on_anonymized",
            s.frozen_reid <= frozen_limit,
            format!("{:.4} <= {:.4}", s.frozen_reid, frozen_limit),
        ),
        check(
            "baseline_utility",
            s.baseline_utility >= t.min_baseline_utility,
            format!("{:.4} >= {:.4}", s.baseline_utility, t.min_baseline_utility),
        ),
        check(
            "utility_on_anonymized",
            s.frozen_utility >= utility_floor,
            format!("{:.4} >= {:.4}", s.frozen_utility, utility_floor),
        ),
        check(
            "fresh_reid_ordering",
            (fresh_between || s.fresh_reid < low) && fresh_order,
            format!(
                "{:.4} in ({:.4}, {:.4}) or below {:.4}; >= {:.4}",
                s.fresh_reid,
                low,
                high,
                low,
                s.frozen_reid - t.fresh_below_frozen_slack
            ),
        ),
        check(
            "band_retention",
            s.band_retention >= t.min_band_retention,
            format!("{:.4} >= {:.4}", s.band_retention, t.min_band_retention),
        ),
    ]
}

fn channels_f64(e: &Epoch) -> Vec<Vec<f64>> {
    (0..e.n_channels).map(|c| e.channel(c).iter().map(|v| *v as f64).collect()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRetention {
    pub stage: String,
    pub n_epochs: usize,
    pub retained: usize,
    pub fraction: f64,
}

/// Fraction of epochs whose dominant frequency band is the same before and after
/// anonymization, overall and per stage.
pub fn band_retention(original: &EpochDataset, anonymized: &EpochDataset) -> Result<(f64, Vec<StageRetention>)> {
    let analyzer = BandAnalyzer::new(original.sampling_rate_hz)?;
    let dominant = |e: &Epoch| -> Result<Band> {
        let ch = channels_f64(e);
        let refs: Vec<&[f64]> = ch.iter().map(|c| c.as_slice()).collect();
        Ok(analyzer.dominant_band(&refs)?)
    };
    let mut per_stage = [(0usize, 0usize); SleepStage::COUNT];
    for (o, a) in original.epochs.iter().zip(&anonymized.epochs) {
        let slot = &mut per_stage[o.stage.index()];
        slot.0 += 1;
        if dominant(o)? == dominant(a)? {
            slot.1 += 1;
        }
    }
    let rows = SleepStage::ALL
        .iter()
        .zip(per_stage)
        .map(|(s, (n, k))| StageRetention {
            stage: s.name().to_string(),
            n_epochs: n,
            retained: k,
            fraction: if n == 0 { 0.0 } else { k as f64 / n as f64 },
        })
        .collect();
    let total = original.len().max(1) as f64;
    Ok((per_stage.iter().map(|p| p.1).sum::<usize>() as f64 / total, rows))
}

#[derive(Serialize)]
struct PsdRow {
    stage: &'static str,
    frequency_hz: f64,
    original: f64,
    anonymized: f64,
}

/// Channel-averaged Welch PSD, averaged over the epochs of each stage.
fn stage_psd(original: &EpochDataset, anonymized: &EpochDataset) -> Result<Vec<PsdRow>> {
    let welch = Welch::new(original.sampling_rate_hz, WelchParams::default())?;
    let freqs = welch.frequencies();
    let mut sums: BTreeMap<usize, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (o, a) in original.epochs.iter().zip(&anonymized.epochs) {
        let entry = sums
            .entry(o.stage.index())
            .or_insert_with(|| (0, vec![0.0; freqs.len()], vec![0.0; freqs.len()]));
        entry.0 += 1;
        for (e, acc) in [(o, &mut entry.1), (a, &mut entry.2)] {
            let ch: Vec<&[f32]> = (0..e.n_channels).map(|c| e.channel(c)).collect();
            for (s, p) in acc.iter_mut().zip(welch.report(&ch)?.mean_power()) {
                *s += p;
            }
        }
    }
    let mut rows = Vec::new();
    for (stage, (n, o, a)) in sums {
        let name = SleepStage::ALL[stage].name();
        for (i, f) in freqs.iter().enumerate() {
            rows.push(PsdRow {
                stage: name,
                frequency_hz: *f,
                original: o[i] / n as f64,
                anonymized: a[i] / n as f64,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct OverlayRow {
    stage: &'static str,
    subject: String,
    time_s: f64,
    original_uv: f64,
    anonymized_uv: f64,
}

/// First test epoch of every stage, first channel, band-passed, before and after.
fn overlay(original: &EpochDataset, anonymized: &EpochDataset) -> Result<Vec<OverlayRow>> {
    let fs_hz = original.sampling_rate_hz;
    let mut rows = Vec::new();
    for stage in SleepStage::ALL {
        let Some(i) = original.epochs.iter().position(|e| e.stage == stage) else {
            continue;
        };
        let (o, a) = (&original.epochs[i], &anonymized.epochs[i]);
        let filt = |e: &Epoch| -> Result<Vec<f64>> {
            let x: Vec<f64> = e.channel(0).iter().map(|v| *v as f64).collect();
            Ok(bandpass(&x, fs_hz, DEFAULT_BAND_HZ.0, DEFAULT_BAND_HZ.1)?)
        };
        for (t, (x, y)) in filt(o)?.into_iter().zip(filt(a)?).enumerate() {
            rows.push(OverlayRow {
                stage: stage.name(),
                subject: o.subject_id.clone(),
                time_s: t as f64 / fs_hz,
                original_uv: x,
                anonymized_uv: y,
            });
        }
    }
    Ok(rows)
}

#[derive(Serialize)]
struct PrivacyRow<'a> {
    evaluation: &'a str,
    reid_accuracy: String,
}

#[derive(Serialize)]
struct SubjectRow {
    subject: String,
    baseline: String,
    frozen_anonymized: String,
    fresh_anonymized: String,
}

fn f4(v: f64) -> String {
    format!("{:.4}", v)
}

pub fn write_all(
    dir: &Path,
    inputs: &EvalInputs,
    test: &EpochDataset,
    anonymized_test: &EpochDataset,
    thresholds: &Thresholds,
) -> Result<EvalOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let chance = 1.0 / inputs.n_subjects as f64;
    write_rows(
        &dir.join("privacy_summary.csv"),
        &[
            ("baseline re-id", inputs.baseline_reid.accuracy),
            ("frozen re-id on anonymized", inputs.frozen_reid.accuracy),
            ("fresh re-id on anonymized", inputs.fresh_reid.accuracy),
            ("chance", chance),
        ]
        .map(|(evaluation, a)| PrivacyRow {
            evaluation,
            reid_accuracy: f4(a),
        }),
    )?;

    let mut table = UtilityTable::new(inputs.baseline_utility.class_names.clone());
    table.push("Original (frozen)", &inputs.baseline_utility)?;
    table.push("Anonymized (frozen)", &inputs.frozen_utility)?;
    table.push("Anonymized (fresh)", &inputs.fresh_utility)?;
    fs::write(dir.join("utility_table.csv"), table.to_csv()?)?;
    fs::write(dir.join("utility_table.txt"), table.to_text())?;

    let f1 = |r: &EvalReport| r.f1_per_subject.clone().unwrap_or_default();
    let (base, frozen, fresh) = (f1(&inputs.baseline_reid), f1(&inputs.frozen_reid), f1(&inputs.fresh_reid));
    let mut subjects: Vec<(&String, f64)> = base.iter().map(|(s, v)| (s, *v)).collect();
    subjects.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let rows: Vec<SubjectRow> = subjects
        .into_iter()
        .map(|(s, v)| SubjectRow {
            subject: s.clone(),
            baseline: f4(v),
            frozen_anonymized: f4(frozen.get(s).copied().unwrap_or(0.0)),
            fresh_anonymized: f4(fresh.get(s).copied().unwrap_or(0.0)),
        })
        .collect();
    write_rows(&dir.join("per_subject_f1.csv"), &rows)?;

    let (retention, per_stage) = band_retention(test, anonymized_test)?;
    write_rows(&dir.join("band_retention.csv"), &per_stage)?;
    write_rows(&dir.join("psd_by_stage.csv"), &stage_psd(test, anonymized_test)?)?;
    write_rows(&dir.join("signal_overlay.csv"), &overlay(test, anonymized_test)?)?;

    let summary = Summary {
        chance,
        baseline_reid: inputs.baseline_reid.accuracy,
        frozen_reid: inputs.frozen_reid.accuracy,
        fresh_reid: inputs.fresh_reid.accuracy,
        baseline_utility: inputs.baseline_utility.accuracy,
        frozen_utility: inputs.frozen_utility.accuracy,
        band_retention: retention,
    };
    let checks = checks(&summary, thresholds);
    let outcome = EvalOutcome {
        chance,
        baseline_reid: summary.baseline_reid,
        frozen_reid: summary.frozen_reid,
        fresh_reid: summary.fresh_reid,
        baseline_utility: summary.baseline_utility,
        frozen_utility: summary.frozen_utility,
        fresh_utility: inputs.fresh_utility.accuracy,
        band_retention: retention,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&outcome)? + "\n")?;
    Ok(outcome)
}
