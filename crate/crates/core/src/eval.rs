//! Event-based sensitivity, sample-based specificity, false alarms and
//! detection latency.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifier::Prediction;
use crate::data::{validate_annotations, Annotation, EEGRecord};
use crate::error::{Error, Result};

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// A positive up to this long after an event's offset still detects it.
    pub detection_tolerance_s: f64,
    /// Positive runs separated by less than this merge into one alarm.
    pub fa_merge_s: f64,
    /// Leading stretch excluded from specificity and false alarms, covering
    /// the feature windows filling up.
    pub warmup_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { detection_tolerance_s: 30.0, fa_merge_s: 30.0, warmup_s: 0.0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.detection_tolerance_s > 0.0 && self.fa_merge_s > 0.0) {
            return Err(Error::invalid("detection tolerance and FA merge window must both be > 0"));
        }
        if !(self.warmup_s >= 0.0) {
            return Err(Error::invalid("warm-up must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub onset_s: f64,
    pub offset_s: f64,
    pub detected: bool,
    pub latency_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent of events detected.
    pub sensitivity_event: f64,
    /// Percent of non-seizure samples labelled negative.
    pub specificity_sample: f64,
    pub false_alarms_per_day: f64,
    pub false_alarms: usize,
    pub median_latency_s: Option<f64>,
    /// `(event offset, percent detected so far)`.
    pub cumulative_sensitivity: Vec<(f64, f64)>,
    pub events: Vec<EventOutcome>,
    pub duration_s: f64,
}

/// A maximal run of positive samples, `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub start: usize,
    pub end: usize,
}

pub fn positive_runs(labels: &[bool]) -> Vec<Cluster> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Cluster { start: s, end: i });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Cluster { start: s, end: labels.len() });
    }
    out
}

/// Merge clusters whose gap is shorter than `gap` samples. Input must be
/// sorted; merging is idempotent.
pub fn merge_clusters(clusters: &[Cluster], gap: usize) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::with_capacity(clusters.len());
    for &c in clusters {
        match out.last_mut() {
            Some(last) if c.start < last.end + gap => last.end = last.end.max(c.end),
            _ => out.push(c),
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Metrics for one label stream sampled at `fs` from time 0.
pub fn evaluate(labels: &[bool], fs: f64, annotations: &[Annotation], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if !(fs > 0.0) {
        return Err(Error::invalid("sampling rate must be positive"));
    }
    let n = labels.len();
    let duration_s = n as f64 / fs;
    validate_annotations(annotations, Some(duration_s))
        .map_err(|e| Error::invalid(format!("annotations do not fit the {n}-sample prediction stream: {e}")))?;

    let last = n.saturating_sub(1);
    let window = |a: &Annotation| -> (usize, usize) {
        let s = ((a.onset_s * fs).ceil() as usize).min(n);
        let e = (((a.offset_s + cfg.detection_tolerance_s) * fs).floor() as usize).min(last);
        (s, e)
    };

    let mut events = Vec::with_capacity(annotations.len());
    for a in annotations {
        let (s, e) = window(a);
        let first = (s..=e).find(|&i| i < n && labels[i]);
        events.push(EventOutcome {
            onset_s: a.onset_s,
            offset_s: a.offset_s,
            detected: first.is_some(),
            latency_s: first.map(|i| (i as f64 / fs - a.onset_s).max(0.0)),
        });
    }

    let warmup = ((cfg.warmup_s * fs).ceil() as usize).min(n);
    let mut seizure = vec![false; n];
    for a in annotations {
        let (s, e) = a.sample_range(fs);
        seizure[s.min(n)..e.min(n)].iter_mut().for_each(|v| *v = true);
    }
    let (mut negatives, mut true_negatives) = (0usize, 0usize);
    for i in warmup..n {
        if !seizure[i] {
            negatives += 1;
            true_negatives += usize::from(!labels[i]);
        }
    }

    let mut in_window = vec![false; n];
    for a in annotations {
        let (s, e) = window(a);
        if s < n {
            in_window[s..=e].iter_mut().for_each(|v| *v = true);
        }
    }
    let gap = (cfg.fa_merge_s * fs).round() as usize;
    let mut active = labels.to_vec();
    active[..warmup].iter_mut().for_each(|v| *v = false);
    let clusters = merge_clusters(&positive_runs(&active), gap);
    let false_alarms = clusters.iter().filter(|c| !in_window[c.start..c.end].iter().any(|&w| w)).count();

    let detected = events.iter().filter(|e| e.detected).count();
    let mut cumulative = Vec::with_capacity(events.len());
    let mut hits = 0;
    for (k, e) in events.iter().enumerate() {
        hits += usize::from(e.detected);
        cumulative.push((e.offset_s, percent(hits, k + 1)));
    }
    let monitored_s = (n - warmup) as f64 / fs;
    Ok(MetricsReport {
        sensitivity_event: percent(detected, events.len()),
        specificity_sample: percent(true_negatives, negatives),
        false_alarms_per_day: if monitored_s > 0.0 { false_alarms as f64 * SECONDS_PER_DAY / monitored_s } else { 0.0 },
        false_alarms,
        median_latency_s: median(events.iter().filter_map(|e| e.latency_s).collect()),
        cumulative_sensitivity: cumulative,
        events,
        duration_s,
    })
}

/// Check that `preds` covers `record` one-to-one and return its labels.
pub fn aligned_labels(preds: &[Prediction], record: &EEGRecord) -> Result<Vec<bool>> {
    if preds.len() != record.len() {
        return Err(Error::DimensionMismatch { expected: record.len(), got: preds.len() });
    }
    if let Some((i, p)) = preds.iter().enumerate().find(|(i, p)| p.sample != *i as u64) {
        return Err(Error::invalid(format!("prediction {i} is for sample {}; traces must start at 0 and be contiguous", p.sample)));
    }
    Ok(preds.iter().map(|p| p.label).collect())
}

pub fn evaluate_predictions(preds: &[Prediction], record: &EEGRecord, cfg: &EvalConfig) -> Result<MetricsReport> {
    evaluate(&aligned_labels(preds, record)?, record.fs(), record.annotations(), cfg)
}

/// Cumulative sensitivity at each event offset.
pub fn cumulative_sensitivity(labels: &[bool], fs: f64, annotations: &[Annotation], cfg: &EvalConfig) -> Result<Vec<(f64, f64)>> {
    Ok(evaluate(labels, fs, annotations, cfg)?.cumulative_sensitivity)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub sensitivity: f64,
    pub specificity: f64,
    pub far_per_day: f64,
    pub median_latency_s: Option<f64>,
    pub delta_sensitivity: f64,
    pub delta_specificity: f64,
    pub delta_far_per_day: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub reports: Vec<(String, MetricsReport)>,
    pub rows: Vec<ComparisonRow>,
}

/// Metrics for every run plus deltas against the first.
pub fn compare(runs: &[(String, Vec<bool>)], fs: f64, annotations: &[Annotation], cfg: &EvalConfig) -> Result<Comparison> {
    let Some((_, first)) = runs.first() else {
        return Err(Error::invalid("nothing to compare"));
    };
    if let Some((name, r)) = runs.iter().find(|(_, r)| r.len() != first.len()) {
        return Err(Error::invalid(format!("run `{name}` has {} samples, the baseline has {}", r.len(), first.len())));
    }
    let reports =
        runs.iter().map(|(name, labels)| Ok((name.clone(), evaluate(labels, fs, annotations, cfg)?))).collect::<Result<Vec<_>>>()?;
    let base = &reports[0].1;
    let rows = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            run: name.clone(),
            sensitivity: r.sensitivity_event,
            specificity: r.specificity_sample,
            far_per_day: r.false_alarms_per_day,
            median_latency_s: r.median_latency_s,
            delta_sensitivity: r.sensitivity_event - base.sensitivity_event,
            delta_specificity: r.specificity_sample - base.specificity_sample,
            delta_far_per_day: r.false_alarms_per_day - base.false_alarms_per_day,
        })
        .collect();
    Ok(Comparison { reports, rows })
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("metrics csv", e.to_string())
}

impl Comparison {
    pub fn write_table<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("comparison table", e))
    }
}

/// Plot CSV `time_s,cumulative_sensitivity`.
pub fn write_cumulative<W: Write>(series: &[(f64, f64)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time_s", "cumulative_sensitivity"]).map_err(csv_err)?;
    for (t, s) in series {
        wtr.write_record([t.to_string(), s.to_string()]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("cumulative sensitivity", e))
}
