//! Reader and writer for the continuous EDF subset: a 256-byte ASCII preamble,
//! 256 header bytes per signal, then data records of 16-bit little-endian samples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Recording;
use crate::{Error, Result};

/// Channel labels of the two Sleep-EDF EEG derivations.
pub const DEFAULT_EEG_CHANNELS: [&str; 2] = ["EEG Fpz-Cz", "EEG Pz-Oz"];

const PREAMBLE_BYTES: usize = 256;
const SIGNAL_HEADER_BYTES: usize = 256;

/// Linear digital → physical mapping of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalCalibration {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub physical_dimension: String,
}

impl SignalCalibration {
    pub fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        f64::from(i32::from(digital) - self.digital_min) * self.gain() + self.physical_min
    }

    /// One quantization step in physical units.
    pub fn step(&self) -> f64 {
        self.gain().abs()
    }

    fn to_digital(&self, physical: f64, label: &str) -> Result<i16> {
        let d = ((physical - self.physical_min) / self.gain()).round() + f64::from(self.digital_min);
        if !physical.is_finite() || d < f64::from(self.digital_min) || d > f64::from(self.digital_max)
        {
            return Err(Error::Range {
                label: label.to_string(),
                value: physical,
                min: self.physical_min,
                max: self.physical_max,
            });
        }
        Ok(d as i16)
    }

    /// Symmetric full 16-bit calibration covering `max_abs`.
    fn covering(max_abs: f64) -> Self {
        let bound = if max_abs > 0.0 { (max_abs + 1.0).ceil() } else { 1.0 };
        SignalCalibration {
            physical_min: -bound,
            physical_max: bound,
            digital_min: -32768,
            digital_max: 32767,
            physical_dimension: "uV".into(),
        }
    }
}

/// Options for [`read_edf`].
#[derive(Debug, Clone, Default)]
pub struct EdfReadOptions {
    /// Labels to retain (trimmed, exact match). `None` keeps every signal.
    pub channel_allowlist: Option<Vec<String>>,
}

impl EdfReadOptions {
    pub fn sleep_edf_eeg() -> Self {
        EdfReadOptions {
            channel_allowlist: Some(DEFAULT_EEG_CHANNELS.iter().map(|s| s.to_string()).collect()),
        }
    }
}

struct Field<'a> {
    bytes: &'a [u8],
}

impl<'a> Field<'a> {
    fn ascii(&self, offset: usize, len: usize) -> Result<String> {
        let slice = self.bytes.get(offset..offset + len).ok_or_else(|| Error::EdfParse {
            offset,
            message: format!("header truncated; need {} bytes", len),
        })?;
        if !slice.iter().all(|b| (0x20..=0x7e).contains(b)) {
            return Err(Error::EdfParse {
                offset,
                message: "non-printable ASCII in header field".into(),
            });
        }
        Ok(String::from_utf8_lossy(slice).trim().to_string())
    }

    fn number<T: std::str::FromStr>(&self, offset: usize, len: usize, what: &str) -> Result<T> {
        let s = self.ascii(offset, len)?;
        s.parse::<T>().map_err(|_| Error::EdfParse {
            offset,
            message: format!("cannot parse {} from '{}'", what, s),
        })
    }
}

/// Reads an EDF file into physical units, keeping only allow-listed channels.
///
/// The subject id is the file stem.
pub fn read_edf(path: &Path, options: &EdfReadOptions) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let subject_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_edf(&bytes, subject_id, options)
}

pub(crate) fn parse_edf(bytes: &[u8], subject_id: String, options: &EdfReadOptions) -> Result<Recording> {
    let f = Field { bytes };
    let version = f.ascii(0, 8)?;
    if version != "0" {
        return Err(Error::EdfParse {
            offset: 0,
            message: format!("unsupported version field '{}'", version),
        });
    }
    let header_bytes: usize = f.number(184, 8, "header byte count")?;
    let reserved = f.ascii(192, 44)?;
    if reserved.starts_with("EDF+D") {
        return Err(Error::UnsupportedFormat("discontinuous EDF+D recordings".into()));
    }
    let declared_records: i64 = f.number(236, 8, "number of data records")?;
    let record_duration: f64 = f.number(244, 8, "data record duration")?;
    let ns: usize = f.number(252, 4, "number of signals")?;
    if header_bytes != PREAMBLE_BYTES + ns * SIGNAL_HEADER_BYTES {
        return Err(Error::EdfParse {
            offset: 184,
            message: format!("header size {} inconsistent with {} signals", header_bytes, ns),
        });
    }
    if !(record_duration > 0.0) {
        return Err(Error::EdfParse {
            offset: 244,
            message: format!("record duration must be positive, got {}", record_duration),
        });
    }

    let base = PREAMBLE_BYTES;
    let mut labels = Vec::with_capacity(ns);
    let mut cals = Vec::with_capacity(ns);
    let mut spr = Vec::with_capacity(ns);
    for i in 0..ns {
        labels.push(f.ascii(base + 16 * i, 16)?);
    }
    for i in 0..ns {
        let physical_dimension = f.ascii(base + 96 * ns + 8 * i, 8)?;
        let physical_min: f64 = f.number(base + 104 * ns + 8 * i, 8, "physical minimum")?;
        let physical_max: f64 = f.number(base + 112 * ns + 8 * i, 8, "physical maximum")?;
        let digital_min: i32 = f.number(base + 120 * ns + 8 * i, 8, "digital minimum")?;
        let digital_max: i32 = f.number(base + 128 * ns + 8 * i, 8, "digital maximum")?;
        let s: usize = f.number(base + 216 * ns + 8 * i, 8, "samples per record")?;
        cals.push(SignalCalibration {
            physical_min,
            physical_max,
            digital_min,
            digital_max,
            physical_dimension,
        });
        spr.push(s);
    }

    let keep: Vec<usize> = (0..ns)
        .filter(|&i| match &options.channel_allowlist {
            Some(allow) => allow.iter().any(|a| a.trim() == labels[i]),
            None => true,
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::UnsupportedFormat(format!(
            "no signal matches the channel allowlist (labels: {:?})",
            labels
        )));
    }
    for &i in &keep {
        if cals[i].digital_max <= cals[i].digital_min {
            return Err(Error::InvalidCalibration {
                label: labels[i].clone(),
                digital_min: cals[i].digital_min,
                digital_max: cals[i].digital_max,
            });
        }
        if spr[i] != spr[keep[0]] {
            return Err(Error::UnsupportedFormat(format!(
                "mixed sampling rates: '{}' has {} samples/record, '{}' has {}",
                labels[keep[0]], spr[keep[0]], labels[i], spr[i]
            )));
        }
    }

    let record_samples: usize = spr.iter().sum();
    let record_bytes = record_samples * 2;
    let data = &bytes[header_bytes.min(bytes.len())..];
    let n_records = if declared_records >= 0 {
        declared_records as usize
    } else {
        data.len() / record_bytes.max(1)
    };
    if data.len() < n_records * record_bytes {
        return Err(Error::EdfParse {
            offset: header_bytes + data.len(),
            message: format!(
                "data section holds {} bytes, {} records need {}",
                data.len(),
                n_records,
                n_records * record_bytes
            ),
        });
    }

    let mut offsets = vec![0usize; ns];
    for i in 1..ns {
        offsets[i] = offsets[i - 1] + spr[i - 1];
    }
    let mut samples: Vec<Vec<f64>> = keep.iter().map(|&i| Vec::with_capacity(n_records * spr[i])).collect();
    for r in 0..n_records {
        let rec = &data[r * record_bytes..(r + 1) * record_bytes];
        for (k, &i) in keep.iter().enumerate() {
            for s in 0..spr[i] {
                let at = 2 * (offsets[i] + s);
                let d = i16::from_le_bytes([rec[at], rec[at + 1]]);
                samples[k].push(cals[i].to_physical(d));
            }
        }
    }

    let rate = spr[keep[0]] as f64 / record_duration;
    let n = n_records * spr[keep[0]];
    let rec = Recording {
        subject_id,
        sampling_rate_hz: rate,
        channel_labels: keep.iter().map(|&i| labels[i].clone()).collect(),
        samples,
        duration_s: n as f64 / rate,
        start_s: 0.0,
        calibration: Some(keep.iter().map(|&i| cals[i].clone()).collect()),
    };
    rec.validate()?;
    Ok(rec)
}

/// Formats a number into at most `width` ASCII characters.
fn fit_number(value: f64, width: usize) -> Result<String> {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        let s = format!("{}", value as i64);
        if s.len() <= width {
            return Ok(s);
        }
    }
    for precision in (0..width).rev() {
        let s = format!("{:.*}", precision, value);
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(Error::UnsupportedFormat(format!(
        "value {} does not fit a {}-character header field",
        value, width
    )))
}

fn put(buf: &mut Vec<u8>, s: &str, width: usize) -> Result<()> {
    if s.len() > width || !s.is_ascii() {
        return Err(Error::UnsupportedFormat(format!(
            "header text '{}' exceeds {} ASCII characters",
            s, width
        )));
    }
    buf.extend_from_slice(s.as_bytes());
    buf.extend(std::iter::repeat(b' ').take(width - s.len()));
    Ok(())
}

pub(crate) fn encode_edf(recording: &Recording) -> Result<Vec<u8>> {
    recording.validate()?;
    let ns = recording.samples.len();
    if ns == 0 {
        return Err(Error::InvalidInput("cannot write a recording without channels".into()));
    }
    let n = recording.n_samples();
    let rate = recording.sampling_rate_hz;
    // one-second records when the rate and length allow it, else a single record
    let (record_duration, spr) = if rate.fract() == 0.0 && n % (rate as usize) == 0 && n > 0 {
        (1.0, rate as usize)
    } else {
        (recording.duration_s, n)
    };
    let n_records = if spr == 0 { 0 } else { n / spr };

    let cals: Vec<SignalCalibration> = match &recording.calibration {
        Some(c) if c.len() == ns => c.clone(),
        _ => recording
            .samples
            .iter()
            .map(|ch| SignalCalibration::covering(ch.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
            .collect(),
    };

    let mut digital = Vec::with_capacity(ns);
    for (k, ch) in recording.samples.iter().enumerate() {
        let cal = &cals[k];
        if cal.digital_max <= cal.digital_min {
            return Err(Error::InvalidCalibration {
                label: recording.channel_labels[k].clone(),
                digital_min: cal.digital_min,
                digital_max: cal.digital_max,
            });
        }
        let words = ch
            .iter()
            .map(|&v| cal.to_digital(v, &recording.channel_labels[k]))
            .collect::<Result<Vec<i16>>>()?;
        digital.push(words);
    }

    let header_bytes = PREAMBLE_BYTES + ns * SIGNAL_HEADER_BYTES;
    let mut buf = Vec::with_capacity(header_bytes + 2 * n * ns);
    put(&mut buf, "0", 8)?;
    put(&mut buf, &format!("{} X X X", sanitize(&recording.subject_id, 70)), 80)?;
    put(&mut buf, "Startdate 01-JAN-2000 X X X", 80)?;
    put(&mut buf, "01.01.00", 8)?;
    put(&mut buf, "00.00.00", 8)?;
    put(&mut buf, &header_bytes.to_string(), 8)?;
    put(&mut buf, "", 44)?;
    put(&mut buf, &n_records.to_string(), 8)?;
    put(&mut buf, &fit_number(record_duration, 8)?, 8)?;
    put(&mut buf, &ns.to_string(), 4)?;
    for label in &recording.channel_labels {
        put(&mut buf, &sanitize(label, 16), 16)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 80)?;
    }
    for c in &cals {
        put(&mut buf, &sanitize(&c.physical_dimension, 8), 8)?;
    }
    for c in &cals {
        put(&mut buf, &fit_number(c.physical_min, 8)?, 8)?;
    }
    for c in &cals {
        put(&mut buf, &fit_number(c.physical_max, 8)?, 8)?;
    }
    for c in &cals {
        put(&mut buf, &c.digital_min.to_string(), 8)?;
    }
    for c in &cals {
        put(&mut buf, &c.digital_max.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 80)?;
    }
    for _ in 0..ns {
        put(&mut buf, &spr.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut buf, "", 32)?;
    }
    debug_assert_eq!(buf.len(), header_bytes);
    for r in 0..n_records {
        for words in &digital {
            for w in &words[r * spr..(r + 1) * spr] {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

fn sanitize(s: &str, width: usize) -> String {
    s.chars()
        .map(|c| if c.is_ascii_graphic() || c == ' ' { c } else { '_' })
        .take(width)
        .collect()
}

/// Writes `recording` as EDF. Channels without carried-over calibration get a
/// symmetric 16-bit calibration covering their peak magnitude.
pub fn write_edf(recording: &Recording, path: &Path) -> Result<()> {
    let bytes = encode_edf(recording)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembles a one-channel EDF file field by field.
    fn hand_built(label: &str, pmin: &str, pmax: &str, dmin: &str, dmax: &str, words: &[i16], spr: usize) -> Vec<u8> {
        fn field(s: &str, w: usize) -> Vec<u8> {
            let mut v = s.as_bytes().to_vec();
            v.resize(w, b' ');
            v
        }
        let mut out = Vec::new();
        for (s, w) in [
            ("0", 8),
            ("X", 80),
            ("X", 80),
            ("01.01.00", 8),
            ("00.00.00", 8),
            ("512", 8),
            ("", 44),
            (&(words.len() / spr).to_string()[..], 8),
            ("1", 8),
            ("1", 4),
            (label, 16),
            ("", 80),
            ("uV", 8),
            (pmin, 8),
            (pmax, 8),
            (dmin, 8),
            (dmax, 8),
            ("", 80),
            (&spr.to_string()[..], 8),
            ("", 32),
        ] {
            out.extend(field(s, w));
        }
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Independent reference: decode the single sample straight from fixed offsets.
    fn reference_physical(bytes: &[u8], sample: usize) -> f64 {
        let num = |a: usize, b: usize| -> f64 {
            std::str::from_utf8(&bytes[a..b]).unwrap().trim().parse().unwrap()
        };
        let (pmin, pmax, dmin, dmax) = (num(360, 368), num(368, 376), num(376, 384), num(384, 392));
        let at = 512 + 2 * sample;
        let d = i16::from_le_bytes([bytes[at], bytes[at + 1]]) as f64;
        (d - dmin) * (pmax - pmin) / (dmax - dmin) + pmin
    }

    #[test]
    fn scaling_matches_reference_reader() {
        let bytes = hand_built("EEG Fpz-Cz", "-200", "200", "-2048", "2047", &[0, -2048, 2047, 17], 4);
        let rec = parse_edf(&bytes, "s".into(), &EdfReadOptions::default()).unwrap();
        let reference = reference_physical(&bytes, 0);
        assert!((reference - 0.048840).abs() < 1e-5);
        assert!((rec.samples[0][0] - reference).abs() < 1e-9);
        assert!((rec.samples[0][0] - 0.048840).abs() < 1e-5);
        // digital_min maps exactly onto physical_min
        assert_eq!(rec.samples[0][1], -200.0);
        assert!((rec.samples[0][2] - 200.0).abs() < 1e-12);
    }

    #[test]
    fn inverted_digital_range_is_rejected() {
        let bytes = hand_built("EEG Fpz-Cz", "-200", "200", "2047", "-2048", &[0; 4], 4);
        let err = parse_edf(&bytes, "s".into(), &EdfReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidCalibration { .. }), "{err}");
    }

    #[test]
    fn malformed_header_reports_offset() {
        let mut bytes = hand_built("EEG Fpz-Cz", "-200", "200", "-2048", "2047", &[0; 4], 4);
        bytes[252..256].copy_from_slice(b"x   ");
        match parse_edf(&bytes, "s".into(), &EdfReadOptions::default()) {
            Err(Error::EdfParse { offset, .. }) => assert_eq!(offset, 252),
            other => panic!("unexpected {:?}", other),
        }
        let err = parse_edf(&bytes[..100], "s".into(), &EdfReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EdfParse { .. }));
    }

    #[test]
    fn mixed_rates_among_retained_channels_are_rejected() {
        let two = Recording::new("s", 100.0, vec!["A".into(), "B".into()], vec![vec![1.0; 200]; 2]).unwrap();
        let mut bytes = encode_edf(&two).unwrap();
        // second signal now declares 50 samples per record
        let spr_at = 256 + 216 * 2 + 8;
        bytes[spr_at..spr_at + 8].copy_from_slice(b"50      ");
        let err = parse_edf(&bytes, "s".into(), &EdfReadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)), "{err}");
        // keeping only one of them is fine
        let opts = EdfReadOptions {
            channel_allowlist: Some(vec!["A".into()]),
        };
        let only_a = parse_edf(&bytes, "s".into(), &opts).unwrap();
        assert_eq!(only_a.channel_labels, vec!["A".to_string()]);
    }

    #[test]
    fn allowlist_filters_channels() {
        let rec = Recording::new(
            "s",
            100.0,
            vec!["EEG Fpz-Cz".into(), "EOG horizontal".into(), "EEG Pz-Oz".into()],
            vec![vec![1.0; 6000], vec![2.0; 6000], vec![3.0; 6000]],
        )
        .unwrap();
        let bytes = encode_edf(&rec).unwrap();
        let back = parse_edf(&bytes, "s".into(), &EdfReadOptions::sleep_edf_eeg()).unwrap();
        assert_eq!(back.channel_labels, vec!["EEG Fpz-Cz", "EEG Pz-Oz"]);
        assert_eq!(back.n_samples(), 6000);
        assert_eq!(back.duration_s, 60.0);
    }

    #[test]
    fn empty_channel_list_cannot_be_written() {
        let rec = Recording {
            subject_id: "s".into(),
            sampling_rate_hz: 100.0,
            channel_labels: vec![],
            samples: vec![],
            duration_s: 0.0,
            start_s: 0.0,
            calibration: None,
        };
        assert!(encode_edf(&rec).is_err());
    }

    #[test]
    fn values_outside_calibration_are_a_range_error() {
        let mut rec = Recording::new("s", 100.0, vec!["A".into()], vec![vec![0.0, 500.0]]).unwrap();
        rec.calibration = Some(vec![SignalCalibration {
            physical_min: -200.0,
            physical_max: 200.0,
            digital_min: -2048,
            digital_max: 2047,
            physical_dimension: "uV".into(),
        }]);
        assert!(matches!(encode_edf(&rec), Err(Error::Range { .. })));
    }

    fn data_words(bytes: &[u8]) -> &[u8] {
        let header: usize = std::str::from_utf8(&bytes[184..192]).unwrap().trim().parse().unwrap();
        &bytes[header..]
    }

    #[test]
    fn round_trip_of_hand_built_file_is_word_exact() {
        let words = [0, -2048, 2047, 17, -1, 1000, -999, 3];
        let bytes = hand_built("EEG Fpz-Cz", "-200", "200", "-2048", "2047", &words, 4);
        let rec = parse_edf(&bytes, "s".into(), &EdfReadOptions::default()).unwrap();
        let again = encode_edf(&rec).unwrap();
        assert_eq!(data_words(&again), data_words(&bytes));
        let back = parse_edf(&again, "s".into(), &EdfReadOptions::default()).unwrap();
        assert_eq!(back.samples, rec.samples);
        assert_eq!(back.calibration, rec.calibration);
    }

    proptest::proptest! {
        #[test]
        fn digital_words_survive_read_write(
            words in proptest::collection::vec(-2048i16..=2047, 32),
            records in 1usize..=8,
            pmax in 1i32..5000,
            pmin in -5000i32..0,
        ) {
            let bytes = hand_built("EEG Pz-Oz", &pmin.to_string(), &pmax.to_string(), "-2048", "2047", &words[..4 * records], 4);
            let rec = parse_edf(&bytes, "s".into(), &EdfReadOptions::default()).unwrap();
            let again = encode_edf(&rec).unwrap();
            proptest::prop_assert_eq!(data_words(&again), data_words(&bytes));
        }
    }

    #[test]
    fn header_numbers_fit_eight_characters() {
        assert_eq!(fit_number(-200.0, 8).unwrap(), "-200");
        assert_eq!(fit_number(0.048840048, 8).unwrap(), "0.048840");
        assert!(fit_number(1e20, 8).is_err());
    }
}
