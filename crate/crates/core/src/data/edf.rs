//! Continuous EDF/EDF+C reader.
//!
//! Digital samples are calibrated to physical units with the header's
//! gain and offset, then requantized to 16-bit codes at
//! `counts_per_unit` codes per physical unit (e.g. per microvolt).
//! Discontinuous EDF+D files are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{Channel, EEGRecord};
use crate::error::{Error, Result};

const FIXED_HEADER: usize = 256;
const PER_SIGNAL: usize = 256;
const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdfOptions {
    /// Channel labels to keep, in order; empty keeps every data signal.
    pub channels: Vec<String>,
    pub counts_per_unit: f64,
}

impl Default for EdfOptions {
    fn default() -> Self {
        Self { channels: Vec::new(), counts_per_unit: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples_per_record: usize,
}

impl EdfSignal {
    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.digital_min)) * self.gain() + self.physical_min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub reserved: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub signals: Vec<EdfSignal>,
}

impl EdfHeader {
    pub fn header_bytes(&self) -> usize {
        FIXED_HEADER + PER_SIGNAL * self.signals.len()
    }

    fn record_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }
}

fn field(bytes: &[u8], at: &mut usize, len: usize, what: &str) -> Result<String> {
    let end = *at + len;
    let raw = bytes.get(*at..end).ok_or_else(|| Error::format("EDF header", format!("truncated at {what}")))?;
    *at = end;
    if !raw.is_ascii() {
        return Err(Error::format("EDF header", format!("{what} is not ASCII")));
    }
    Ok(String::from_utf8_lossy(raw).trim().to_string())
}

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format("EDF header", format!("{what} `{s}` is not a number")))
}

pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    let mut at = 0;
    let version = field(bytes, &mut at, 8, "version")?;
    if version != "0" {
        return Err(Error::format("EDF header", format!("version `{version}` (only EDF version 0 is supported)")));
    }
    for (len, what) in [(80, "patient"), (80, "recording"), (8, "start date"), (8, "start time")] {
        field(bytes, &mut at, len, what)?;
    }
    let header_bytes: usize = number(&field(bytes, &mut at, 8, "header size")?, "header size")?;
    let reserved = field(bytes, &mut at, 44, "reserved")?;
    if reserved.starts_with("EDF+D") {
        return Err(Error::format("EDF header", "discontinuous EDF+D files are not supported"));
    }
    let n_records: i64 = number(&field(bytes, &mut at, 8, "record count")?, "record count")?;
    let record_duration_s: f64 = number(&field(bytes, &mut at, 8, "record duration")?, "record duration")?;
    let ns: usize = number(&field(bytes, &mut at, 4, "signal count")?, "signal count")?;
    if ns == 0 {
        return Err(Error::format("EDF header", "file declares no signals"));
    }
    if !(record_duration_s > 0.0) {
        return Err(Error::format("EDF header", format!("record duration {record_duration_s} must be positive")));
    }
    if header_bytes != FIXED_HEADER + PER_SIGNAL * ns {
        return Err(Error::format("EDF header", format!("header size {header_bytes} does not match {ns} signals")));
    }
    let mut col = |len: usize, what: &str| -> Result<Vec<String>> { (0..ns).map(|_| field(bytes, &mut at, len, what)).collect() };
    let labels = col(16, "label")?;
    let _transducer = col(80, "transducer")?;
    let dims = col(8, "physical dimension")?;
    let pmin = col(8, "physical minimum")?;
    let pmax = col(8, "physical maximum")?;
    let dmin = col(8, "digital minimum")?;
    let dmax = col(8, "digital maximum")?;
    let _prefilter = col(80, "prefiltering")?;
    let spr = col(8, "samples per record")?;
    let _reserved = col(32, "signal reserved")?;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let s = EdfSignal {
            label: labels[i].clone(),
            physical_dimension: dims[i].clone(),
            physical_min: number(&pmin[i], "physical minimum")?,
            physical_max: number(&pmax[i], "physical maximum")?,
            digital_min: number(&dmin[i], "digital minimum")?,
            digital_max: number(&dmax[i], "digital maximum")?,
            samples_per_record: number(&spr[i], "samples per record")?,
        };
        if s.digital_max <= s.digital_min || s.physical_max == s.physical_min {
            return Err(Error::format("EDF header", format!("signal `{}` has a degenerate calibration range", s.label)));
        }
        if s.samples_per_record == 0 {
            return Err(Error::format("EDF header", format!("signal `{}` has no samples per record", s.label)));
        }
        signals.push(s);
    }
    let mut h = EdfHeader { version, reserved, n_records: 0, record_duration_s, signals };
    let data = bytes.len().saturating_sub(h.header_bytes());
    let record_bytes = 2 * h.record_samples();
    let available = data / record_bytes;
    h.n_records = if n_records < 0 {
        available
    } else {
        let n = n_records as usize;
        if n > available {
            return Err(Error::format("EDF", format!("header declares {n} records but the file holds {available}")));
        }
        n
    };
    Ok(h)
}

pub fn read_edf(path: impl AsRef<Path>, opts: &EdfOptions) -> Result<EEGRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_edf_bytes(&bytes, opts)
}

pub fn read_edf_bytes(bytes: &[u8], opts: &EdfOptions) -> Result<EEGRecord> {
    if !(opts.counts_per_unit.is_finite() && opts.counts_per_unit > 0.0) {
        return Err(Error::invalid(format!("counts per unit must be positive (got {})", opts.counts_per_unit)));
    }
    let h = parse_header(bytes)?;
    let data: Vec<usize> = h.signals.iter().enumerate().filter(|(_, s)| s.label != ANNOTATION_LABEL).map(|(i, _)| i).collect();
    let picked: Vec<usize> = if opts.channels.is_empty() {
        data
    } else {
        opts.channels
            .iter()
            .map(|name| {
                data.iter()
                    .copied()
                    .find(|&i| &h.signals[i].label == name)
                    .ok_or_else(|| Error::invalid(format!("EDF has no signal labelled `{name}`")))
            })
            .collect::<Result<_>>()?
    };
    if picked.is_empty() {
        return Err(Error::format("EDF", "no data signals"));
    }
    let spr = h.signals[picked[0]].samples_per_record;
    if let Some(&i) = picked.iter().find(|&&i| h.signals[i].samples_per_record != spr) {
        return Err(Error::format(
            "EDF",
            format!(
                "signal `{}` has {} samples per record, `{}` has {spr}; mixed rates are not resampled",
                h.signals[i].label, h.signals[i].samples_per_record, h.signals[picked[0]].label
            ),
        ));
    }
    let offsets: Vec<usize> = h
        .signals
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.samples_per_record;
            Some(o)
        })
        .collect();
    let record_samples = h.record_samples();
    let base = h.header_bytes();
    let channels = picked
        .iter()
        .map(|&i| {
            let sig = &h.signals[i];
            let mut samples = Vec::with_capacity(h.n_records * spr);
            for r in 0..h.n_records {
                let start = base + 2 * (r * record_samples + offsets[i]);
                for k in 0..spr {
                    let b = start + 2 * k;
                    let d = i16::from_le_bytes([bytes[b], bytes[b + 1]]);
                    let code = (sig.to_physical(d) * opts.counts_per_unit).round();
                    samples.push(code.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16);
                }
            }
            Channel { name: sig.label.clone(), samples }
        })
        .collect();
    EEGRecord::new(spr as f64 / h.record_duration_s, channels, Vec::new())
}
