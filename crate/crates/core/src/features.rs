//! Per-sample sliding-window features: line length and three band powers
//! per channel, recomputed on every input sample.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arith::{Scalar, WindowTerm};
use crate::dsp::{BandpassFilter, FilterBank};
use crate::error::{Error, Result};
use crate::fixedpoint::Q6_10;

pub const FEATURES_PER_CHANNEL: usize = 4;
/// Feature window length in seconds.
pub const WINDOW_SECONDS: f64 = 0.1;

/// Samples per feature window at `fs`: `round(0.1 s * fs)`, at least 2.
pub fn window_len(fs: f64) -> usize {
    ((WINDOW_SECONDS * fs).round() as usize).max(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    LineLength,
    Alpha,
    Beta,
    Gamma,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [FeatureKind::LineLength, FeatureKind::Alpha, FeatureKind::Beta, FeatureKind::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::LineLength => "line_length",
            FeatureKind::Alpha => "bp_alpha",
            FeatureKind::Beta => "bp_beta",
            FeatureKind::Gamma => "bp_gamma",
        }
    }
}

/// Index of `(channel, kind)` in a flat feature vector.
#[inline]
pub fn feature_index(channel: usize, kind: FeatureKind) -> usize {
    channel * FEATURES_PER_CHANNEL + kind as usize
}

/// Ring buffer of window terms with a running total.
#[derive(Clone, Debug)]
pub struct SlidingWindow<T: WindowTerm> {
    buf: Vec<T>,
    head: usize,
    running: T,
}

impl<T: WindowTerm> SlidingWindow<T> {
    /// Zero-filled window of `len` terms.
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "window length must be positive");
        Self { buf: vec![T::default(); len], head: 0, running: T::default() }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Replace the oldest term with `term` and return the new total.
    #[inline]
    pub fn push(&mut self, term: T) -> T {
        let outgoing = std::mem::replace(&mut self.buf[self.head], term);
        self.head = (self.head + 1) % self.buf.len();
        let (newer, older) = self.buf.split_at(self.head);
        T::slide(&mut self.running, term, outgoing, older.iter().chain(newer.iter()).copied());
        self.running
    }

    pub fn sum(&self) -> T {
        self.running
    }

    /// Window contents, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        let (newer, older) = self.buf.split_at(self.head);
        older.iter().chain(newer.iter()).copied()
    }

    pub fn reset(&mut self) {
        self.buf.iter_mut().for_each(|t| *t = T::default());
        self.head = 0;
        self.running = T::default();
    }
}

/// Line length over the last `n` samples: the sum of `n - 1` absolute
/// first differences.
#[derive(Clone, Debug)]
pub struct LineLengthWindow<N: Scalar> {
    prev: N,
    diffs: SlidingWindow<N::Term>,
}

impl<N: Scalar> LineLengthWindow<N> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "line length needs at least two samples");
        Self { prev: N::ZERO, diffs: SlidingWindow::new(n - 1) }
    }

    #[inline]
    pub fn step(&mut self, x: N) -> N::Term {
        let term = N::abs_diff_term(x, self.prev);
        self.prev = x;
        self.diffs.push(term)
    }

    pub fn reset(&mut self) {
        self.prev = N::ZERO;
        self.diffs.reset();
    }
}

/// Sum of squares over the last `n` band-filtered samples (time-domain
/// band power).
#[derive(Clone, Debug)]
pub struct BandPowerWindow<N: Scalar> {
    squares: SlidingWindow<N::Term>,
}

impl<N: Scalar> BandPowerWindow<N> {
    pub fn new(n: usize) -> Self {
        Self { squares: SlidingWindow::new(n) }
    }

    #[inline]
    pub fn step(&mut self, y: N) -> N::Term {
        self.squares.push(N::square_term(y))
    }

    pub fn reset(&mut self) {
        self.squares.reset();
    }
}

/// Feature vector for one sample tick, laid out channel-major:
/// `[ll_0, alpha_0, beta_0, gamma_0, ll_1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector<N> {
    pub sample: u64,
    pub values: Vec<N>,
}

impl<N: Scalar> FeatureVector<N> {
    pub fn channels(&self) -> usize {
        self.values.len() / FEATURES_PER_CHANNEL
    }

    pub fn get(&self, channel: usize, kind: FeatureKind) -> N {
        self.values[feature_index(channel, kind)]
    }

    pub fn to_f64(&self) -> FeatureVector<f64> {
        FeatureVector { sample: self.sample, values: self.values.iter().map(|v| v.to_f64()).collect() }
    }

    pub fn from_f64(v: &FeatureVector<f64>) -> Self {
        FeatureVector { sample: v.sample, values: v.values.iter().map(|&x| N::from_f64(x)).collect() }
    }
}

/// Power-of-two scaling applied to raw window sums before classification:
/// `feature = sum * 2^exponent`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub exponents: Vec<i32>,
}

impl FeatureScaling {
    /// Value the chosen percentile is mapped at or below.
    pub const TARGET: f64 = 16.0;
    pub const PERCENTILE: f64 = 0.999;

    pub fn identity(n: usize) -> Self {
        Self { exponents: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Per-column exponent putting the 99.9th percentile of `rows` in
    /// `(TARGET/2, TARGET]`, leaving one bit of Q6.10 headroom.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, n_features: usize) -> Result<Self> {
        Self::fit_to(rows, n_features, Self::TARGET)
    }

    /// As [`fit`](Self::fit) with the percentile landing in `(target/2, target]`.
    pub fn fit_to<'a>(rows: impl IntoIterator<Item = &'a [f64]>, n_features: usize, target: f64) -> Result<Self> {
        if !(target > 0.0 && target <= Q6_10::MAX.to_real()) {
            return Err(Error::invalid(format!("scaling target {target} must be in (0, {}]", Q6_10::MAX.to_real())));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n_features];
        for row in rows {
            if row.len() != n_features {
                return Err(Error::DimensionMismatch { expected: n_features, got: row.len() });
            }
            for (c, &v) in cols.iter_mut().zip(row) {
                if !v.is_finite() {
                    return Err(Error::invalid("non-finite feature value while fitting scaling"));
                }
                c.push(v.abs());
            }
        }
        let exponents = cols
            .into_iter()
            .map(|mut c| {
                if c.is_empty() {
                    return 0;
                }
                c.sort_by(f64::total_cmp);
                let k = ((c.len() - 1) as f64 * Self::PERCENTILE).round() as usize;
                let p = c[k];
                if p <= 0.0 {
                    0
                } else {
                    (target / p).log2().floor().clamp(-40.0, 40.0) as i32
                }
            })
            .collect();
        Ok(Self { exponents })
    }

    pub fn apply<N: Scalar>(&self, raw: &[N::Term], out: &mut Vec<N>) {
        debug_assert_eq!(raw.len(), self.exponents.len());
        out.clear();
        out.extend(raw.iter().zip(&self.exponents).map(|(&s, &e)| N::from_window_sum(s, e)));
    }

    pub fn scale_f64(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.exponents).map(|(&s, &e)| s * 2f64.powi(e)).collect()
    }
}

#[derive(Clone, Debug)]
struct ChannelState<N: Scalar> {
    line_length: LineLengthWindow<N>,
    filters: [BandpassFilter<N>; 3],
    powers: [BandPowerWindow<N>; 3],
}

/// Streaming extractor for `C` channels.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<N: Scalar> {
    channels: Vec<ChannelState<N>>,
    window: usize,
    sample: u64,
    raw: Vec<N::Term>,
}

impl<N: Scalar> FeatureExtractor<N> {
    pub fn new(bank: &FilterBank, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("feature extractor needs at least one channel"));
        }
        let window = window_len(bank.fs);
        let filters = bank.instantiate::<N>()?;
        let state = ChannelState {
            line_length: LineLengthWindow::new(window),
            filters,
            powers: std::array::from_fn(|_| BandPowerWindow::new(window)),
        };
        Ok(Self { channels: vec![state; channels], window, sample: 0, raw: vec![N::Term::default(); channels * FEATURES_PER_CHANNEL] })
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n_features(&self) -> usize {
        self.raw.len()
    }

    /// Samples consumed so far.
    pub fn position(&self) -> u64 {
        self.sample
    }

    /// Advance one tick and return the unscaled window sums.
    pub fn push(&mut self, frame: &[N]) -> Result<&[N::Term]> {
        if frame.len() != self.channels.len() {
            return Err(Error::DimensionMismatch { expected: self.channels.len(), got: frame.len() });
        }
        for (c, (state, &x)) in self.channels.iter_mut().zip(frame).enumerate() {
            let base = c * FEATURES_PER_CHANNEL;
            self.raw[base] = state.line_length.step(x);
            for k in 0..3 {
                let y = state.filters[k].process_sample(x);
                self.raw[base + 1 + k] = state.powers[k].step(y);
            }
        }
        self.sample += 1;
        Ok(&self.raw)
    }

    /// Advance one tick from 16-bit ADC codes.
    pub fn push_codes(&mut self, frame: &[i16]) -> Result<&[N::Term]> {
        if frame.len() != self.channels.len() {
            return Err(Error::DimensionMismatch { expected: self.channels.len(), got: frame.len() });
        }
        let mut values = [N::ZERO; 64];
        if frame.len() <= values.len() {
            for (v, &c) in values.iter_mut().zip(frame) {
                *v = N::from_code(c);
            }
            self.push(&values[..frame.len()])
        } else {
            let values: Vec<N> = frame.iter().map(|&c| N::from_code(c)).collect();
            self.push(&values)
        }
    }

    /// Advance one tick and return the scaled feature vector.
    pub fn extract(&mut self, frame: &[i16], scaling: &FeatureScaling) -> Result<FeatureVector<N>> {
        if scaling.len() != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features(), got: scaling.len() });
        }
        let sample = self.sample;
        let raw = self.push_codes(frame)?;
        let mut values = Vec::with_capacity(raw.len());
        scaling.apply::<N>(raw, &mut values);
        Ok(FeatureVector { sample, values })
    }

    pub fn reset(&mut self) {
        for ch in &mut self.channels {
            ch.line_length.reset();
            ch.filters.iter_mut().for_each(BandpassFilter::reset);
            ch.powers.iter_mut().for_each(BandPowerWindow::reset);
        }
        self.sample = 0;
        self.raw.iter_mut().for_each(|t| *t = N::Term::default());
    }
}

/// CSV dump of a feature stream, one row per (sample, channel).
pub struct FeatureTraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> FeatureTraceWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(["sample", "channel", "line_length", "bp_alpha", "bp_beta", "bp_gamma"]).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write<N: Scalar>(&mut self, fv: &FeatureVector<N>) -> Result<()> {
        for (c, chunk) in fv.values.chunks(FEATURES_PER_CHANNEL).enumerate() {
            let mut row = vec![fv.sample.to_string(), c.to_string()];
            row.extend(chunk.iter().map(|v| v.to_f64().to_string()));
            self.inner.write_record(&row).map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("feature trace", e))?;
        self.inner.into_inner().map_err(|e| Error::io("feature trace", e.into_error()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("feature trace", e.to_string())
}
