use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A seizure interval in seconds from the start of the record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset_s: f64,
    pub offset_s: f64,
}

impl Annotation {
    pub fn new(onset_s: f64, offset_s: f64) -> Self {
        Self { onset_s, offset_s }
    }

    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset_s && t < self.offset_s
    }

    /// Sample range `[first, last)` covered at rate `fs`.
    pub fn sample_range(&self, fs: f64) -> (usize, usize) {
        ((self.onset_s * fs).ceil() as usize, (self.offset_s * fs).ceil() as usize)
    }
}

/// Reject unsorted, overlapping or out-of-range intervals.
pub fn validate_annotations(ann: &[Annotation], duration_s: Option<f64>) -> Result<()> {
    for (i, a) in ann.iter().enumerate() {
        if !(a.onset_s.is_finite() && a.offset_s.is_finite()) || a.onset_s < 0.0 || a.offset_s <= a.onset_s {
            return Err(Error::format("annotations", format!("interval {i} ({}, {}) is empty or negative", a.onset_s, a.offset_s)));
        }
        if let Some(d) = duration_s {
            if a.offset_s > d + 1e-9 {
                return Err(Error::format("annotations", format!("interval {i} ends at {} s, after the record ({d} s)", a.offset_s)));
            }
        }
        if i > 0 && a.onset_s < ann[i - 1].offset_s {
            return Err(Error::format("annotations", format!("interval {i} starts at {} s, before interval {} ends", a.onset_s, i - 1)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub samples: Vec<i16>,
}

/// Multichannel 16-bit recording with seizure annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct EEGRecord {
    fs: f64,
    channels: Vec<Channel>,
    annotations: Vec<Annotation>,
}

impl EEGRecord {
    pub fn new(fs: f64, channels: Vec<Channel>, annotations: Vec<Annotation>) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive (got {fs})")));
        }
        if channels.is_empty() {
            return Err(Error::invalid("record has no channels"));
        }
        let len = channels[0].samples.len();
        if let Some(c) = channels.iter().find(|c| c.samples.len() != len) {
            return Err(Error::format("record", format!("channel `{}` has {} samples, expected {len}", c.name, c.samples.len())));
        }
        validate_annotations(&annotations, Some(len as f64 / fs))?;
        Ok(Self { fs, channels, annotations })
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.channels[0].samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn with_annotations(mut self, annotations: Vec<Annotation>) -> Result<Self> {
        validate_annotations(&annotations, Some(self.duration_s()))?;
        self.annotations = annotations;
        Ok(self)
    }

    /// Sample `i` of every channel.
    pub fn frame_into(&self, i: usize, out: &mut [i16]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.samples[i];
        }
    }

    pub fn frame(&self, i: usize) -> Vec<i16> {
        self.channels.iter().map(|c| c.samples[i]).collect()
    }

    /// Per-sample ground truth: sample `i` (time `i / fs`) is a seizure
    /// sample iff it falls inside an annotated interval.
    pub fn labels(&self) -> Vec<bool> {
        let mut out = vec![false; self.len()];
        for a in &self.annotations {
            let (s, e) = a.sample_range(self.fs);
            out[s.min(self.len())..e.min(self.len())].iter_mut().for_each(|v| *v = true);
        }
        out
    }

    /// Samples `[start, end)` as a new record; annotations are clipped to
    /// the slice and re-based to its start.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::invalid(format!("slice {start}..{end} outside record of {} samples", self.len())));
        }
        let t0 = start as f64 / self.fs;
        let t1 = end as f64 / self.fs;
        let annotations = self
            .annotations
            .iter()
            .filter(|a| a.offset_s > t0 && a.onset_s < t1)
            .map(|a| Annotation::new(a.onset_s.max(t0) - t0, a.offset_s.min(t1) - t0))
            .filter(|a| a.offset_s > a.onset_s)
            .collect();
        let channels = self.channels.iter().map(|c| Channel { name: c.name.clone(), samples: c.samples[start..end].to_vec() }).collect();
        Self::new(self.fs, channels, annotations)
    }

    /// Keep only the named channels, in the given order.
    pub fn select_channels(&self, names: &[String]) -> Result<Self> {
        let channels = names
            .iter()
            .map(|n| self.channels.iter().find(|c| &c.name == n).cloned().ok_or_else(|| Error::invalid(format!("no channel named `{n}`"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.fs, channels, self.annotations.clone())
    }
}
