//! Seeded synthetic EEG with drifting seizure bursts.
//!
//! Background is AR(1)-coloured Gaussian noise per channel. Seizures are
//! tapered oscillatory bursts (fundamental plus second harmonic) on every
//! channel with a fixed per-channel gain, scheduled on a jittered periodic
//! grid. Burst amplitude and frequency follow piecewise-linear multiplier
//! schedules over the record.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{Annotation, Channel, EEGRecord};
use crate::error::{Error, Result};
use crate::fixedpoint::ONE_RAW;

/// Piecewise-linear function of the fraction of the record elapsed.
/// Knots are `(fraction, value)` with strictly increasing fractions; the
/// value is held constant outside the knot range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule(pub Vec<(f64, f64)>);

impl Schedule {
    pub fn constant(v: f64) -> Self {
        Schedule(vec![(0.0, v)])
    }

    /// 1 until `start`, then linear to `end` at the end of the record.
    pub fn ramp(start: f64, end: f64) -> Self {
        Schedule(vec![(0.0, 1.0), (start, 1.0), (1.0, end)])
    }

    pub fn at(&self, frac: f64) -> f64 {
        let k = &self.0;
        if frac <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if frac <= x1 {
                return y0 + (y1 - y0) * (frac - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid(format!("{what} schedule has no knots")));
        }
        if self.0.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite() || y < 0.0) {
            return Err(Error::invalid(format!("{what} schedule has a non-finite or negative knot")));
        }
        if self.0.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(format!("{what} schedule fractions must increase")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub fs: f64,
    pub channels: usize,
    pub seed: u64,
    /// Mean seizures per hour; events sit on a grid of period `3600 / rate`.
    pub seizures_per_hour: f64,
    /// Onset jitter as a fraction of the free time in each grid slot.
    pub jitter: f64,
    /// No event starts before this time.
    pub first_onset_s: f64,
    /// Event durations are uniform in `[min, max]`.
    pub seizure_duration_s: (f64, f64),
    pub seizure_freq_hz: f64,
    /// Relative amplitude of the second harmonic.
    pub harmonic: f64,
    /// Peak burst amplitude, in Q6.10 units (1.0 = 1024 codes).
    pub seizure_amplitude: f64,
    pub taper_s: f64,
    /// Background RMS in Q6.10 units.
    pub background_rms: f64,
    /// AR(1) coefficient of the background.
    pub background_ar: f64,
    pub amplitude_drift: Schedule,
    pub frequency_drift: Schedule,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 7200.0,
            fs: 1000.0,
            channels: 4,
            seed: 1,
            seizures_per_hour: 12.0,
            jitter: 0.5,
            first_onset_s: 60.0,
            seizure_duration_s: (20.0, 40.0),
            seizure_freq_hz: 12.0,
            harmonic: 0.3,
            seizure_amplitude: 1.0,
            taper_s: 0.25,
            background_rms: 0.25,
            background_ar: 0.95,
            amplitude_drift: Schedule::ramp(0.3, 0.4),
            frequency_drift: Schedule::ramp(0.3, 1.2),
        }
    }
}

impl SynthConfig {
    pub fn without_drift(mut self) -> Self {
        self.amplitude_drift = Schedule::constant(1.0);
        self.frequency_drift = Schedule::constant(1.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth: {m}")));
        if !(self.duration_s > 0.0 && self.fs > 0.0) || self.channels == 0 {
            return bad("duration, fs and channels must be positive");
        }
        if !(self.seizures_per_hour >= 0.0) || !(0.0..=1.0).contains(&self.jitter) {
            return bad("seizure rate must be >= 0 and jitter in [0, 1]");
        }
        let (lo, hi) = self.seizure_duration_s;
        if !(lo > 0.0 && hi >= lo) {
            return bad("seizure durations need 0 < min <= max");
        }
        if self.seizures_per_hour > 0.0 && hi >= 3600.0 / self.seizures_per_hour {
            return bad("seizure duration exceeds the spacing between events");
        }
        if !(self.taper_s >= 0.0 && 2.0 * self.taper_s <= lo) {
            return bad("taper must fit twice into the shortest seizure");
        }
        if !(self.seizure_freq_hz > 0.0) {
            return bad("seizure frequency must be positive");
        }
        if !(self.seizure_amplitude > self.background_rms && self.background_rms >= 0.0) {
            return bad("seizure amplitude must exceed the background level");
        }
        if !(0.0..1.0).contains(&self.background_ar) {
            return bad("background AR coefficient must be in [0, 1)");
        }
        if !(self.harmonic >= 0.0) || !(self.first_onset_s >= 0.0) {
            return bad("harmonic and first onset must be non-negative");
        }
        self.amplitude_drift.validate("amplitude")?;
        self.frequency_drift.validate("frequency")?;
        let n = (self.duration_s * self.fs).round();
        if n > 1e10 {
            return bad("record too long");
        }
        Ok(())
    }

    fn len(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

/// Seizure intervals for `cfg`, drawn from `rng`.
fn schedule_events(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Annotation> {
    if cfg.seizures_per_hour == 0.0 {
        return Vec::new();
    }
    let period = 3600.0 / cfg.seizures_per_hour;
    let (dmin, dmax) = cfg.seizure_duration_s;
    let mut out = Vec::new();
    let mut slot = 0.0;
    while slot < cfg.duration_s {
        let duration = rng.random_range(dmin..=dmax);
        let free = period - duration;
        let onset = slot + free * (0.5 + cfg.jitter * (rng.random::<f64>() - 0.5));
        let offset = onset + duration;
        if onset >= cfg.first_onset_s && offset <= cfg.duration_s {
            // align to the sample grid so annotations and bursts agree exactly
            let on = (onset * cfg.fs).round() / cfg.fs;
            let off = (offset * cfg.fs).round() / cfg.fs;
            out.push(Annotation::new(on, off));
        }
        slot += period;
    }
    out
}

fn taper(t: f64, duration: f64, taper_s: f64) -> f64 {
    if taper_s == 0.0 {
        return 1.0;
    }
    let edge = t.min(duration - t);
    if edge >= taper_s {
        1.0
    } else {
        0.5 - 0.5 * (std::f64::consts::PI * edge.max(0.0) / taper_s).cos()
    }
}

/// Seizure component only, per channel, in Q6.10 units.
pub fn burst_component(cfg: &SynthConfig, events: &[Annotation], gains: &[f64], phases: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let n = cfg.len();
    let mut out = vec![vec![0.0; n]; gains.len()];
    for (ev, &(phi0, psi)) in events.iter().zip(phases) {
        let (s, e) = ev.sample_range(cfg.fs);
        let mut phase = phi0;
        for i in s..e.min(n) {
            let t = i as f64 / cfg.fs;
            let frac = t / cfg.duration_s;
            let amp = cfg.seizure_amplitude * cfg.amplitude_drift.at(frac) * taper(t - ev.onset_s, ev.duration_s(), cfg.taper_s);
            let v = amp * (phase.sin() + cfg.harmonic * (2.0 * phase + psi).sin());
            for (c, &g) in gains.iter().enumerate() {
                out[c][i] = g * v;
            }
            phase += TAU * cfg.seizure_freq_hz * cfg.frequency_drift.at(frac) / cfg.fs;
        }
    }
    out
}

/// Everything random about a record except the background noise.
struct Layout {
    events: Vec<Annotation>,
    gains: Vec<f64>,
    phases: Vec<(f64, f64)>,
}

fn layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Layout {
    let gains = (0..cfg.channels).map(|_| rng.random_range(0.6..1.0)).collect();
    let events = schedule_events(cfg, rng);
    let phases = events.iter().map(|_| (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU))).collect();
    Layout { events, gains, phases }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<EEGRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let Layout { events, gains, phases } = layout(cfg, &mut rng);
    let bursts = burst_component(cfg, &events, &gains, &phases);
    let n = cfg.len();
    let a = cfg.background_ar;
    let innovation = Normal::new(0.0, cfg.background_rms * (1.0 - a * a).sqrt()).expect("finite sigma");
    let scale = f64::from(ONE_RAW);
    let channels = bursts
        .into_iter()
        .enumerate()
        .map(|(c, burst)| {
            let mut ch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(c as u64 + 1)));
            let mut state = Normal::new(0.0, cfg.background_rms).expect("finite sigma").sample(&mut ch_rng);
            let samples = (0..n)
                .map(|i| {
                    state = a * state + innovation.sample(&mut ch_rng);
                    ((state + burst[i]) * scale).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
                })
                .collect();
            Channel { name: format!("ch{c}"), samples }
        })
        .collect();
    EEGRecord::new(cfg.fs, channels, events)
}
