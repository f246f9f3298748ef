//! Confidence-gated self-training.
//!
//! Every prediction is gated against the confidence threshold `ct`. A run of
//! `ws` consecutive predictions with `p >= ct` (or `10 * ws` with
//! `p <= 1 - ct`) triggers an SGD step that uses the rounded prediction as
//! its label, after which both runs start over.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arith::Scalar;
use crate::classifier::{Classifier, Prediction, WeightVector};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Confidence threshold, `0.5 < ct < 1`.
    pub ct: f64,
    /// Seizure window in samples.
    pub ws: usize,
    /// Non-seizure window is `nonseizure_factor * ws`.
    #[serde(default = "default_factor")]
    pub nonseizure_factor: usize,
    /// Learning rate is `2^-eta_shift`.
    #[serde(default = "default_eta_shift")]
    pub eta_shift: u32,
}

fn default_factor() -> usize {
    10
}

fn default_eta_shift() -> u32 {
    6
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { ct: 0.8, ws: 5, nonseizure_factor: default_factor(), eta_shift: default_eta_shift() }
    }
}

impl Hyperparams {
    pub fn new(ct: f64, ws: usize) -> Result<Self> {
        let h = Self { ct, ws, ..Self::default() };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ct > 0.5 && self.ct < 1.0) {
            return Err(Error::invalid(format!("confidence threshold must satisfy 0.5 < ct < 1 (got {})", self.ct)));
        }
        if self.ws == 0 {
            return Err(Error::invalid("window size must be at least 1"));
        }
        if self.nonseizure_factor == 0 {
            return Err(Error::invalid("non-seizure window factor must be at least 1"));
        }
        if self.eta_shift > 15 {
            return Err(Error::invalid(format!("eta shift {} exceeds the 16-bit word", self.eta_shift)));
        }
        Ok(())
    }

    pub fn ws_nonseizure(&self) -> usize {
        self.ws * self.nonseizure_factor
    }

    pub fn eta(&self) -> f64 {
        2f64.powi(-(self.eta_shift as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    HighSeizure,
    HighNonSeizure,
    Low,
}

/// Thresholds are compared in the backend type: in fixed point `ct` is
/// first rounded to Q6.10 and the lower threshold is `1 - ct` exactly.
pub fn gate<N: Scalar>(p: N, ct: N) -> Gate {
    if p >= ct {
        Gate::HighSeizure
    } else if p <= N::ONE - ct {
        Gate::HighNonSeizure
    } else {
        Gate::Low
    }
}

/// What a low-confidence sample does to the registers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LowPolicy {
    /// Shift a zero into both registers.
    #[default]
    Shift,
    /// Clear both registers entirely.
    Reset,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// One SGD step on the triggering sample.
    #[default]
    Single,
    /// One SGD step per sample of the triggering run, oldest first.
    Window,
}

/// Fixed-length bit shift register; the newest bit is bit 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftRegister {
    len: usize,
    words: Vec<u64>,
    /// Number of consecutive ones at the newest end, capped at `len`.
    run: usize,
}

impl ShiftRegister {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "empty shift register");
        Self { len, words: vec![0; len.div_ceil(64)], run: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shift_in(&mut self, bit: bool) {
        let mut carry = u64::from(bit);
        for w in &mut self.words {
            let out = *w >> 63;
            *w = (*w << 1) | carry;
            carry = out;
        }
        let tail = self.len % 64;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << tail) - 1;
        }
        self.run = if bit { (self.run + 1).min(self.len) } else { 0 };
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
        self.run = 0;
    }

    pub fn is_all_ones(&self) -> bool {
        self.run == self.len
    }

    pub fn is_all_zeros(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Bit `k` counting from the newest.
    pub fn bit(&self, k: usize) -> bool {
        assert!(k < self.len);
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trigger {
    Seizure,
    NonSeizure,
}

impl Trigger {
    pub fn label(self) -> bool {
        matches!(self, Trigger::Seizure)
    }
}

/// The two run registers plus, in window mode, the samples of each run.
#[derive(Clone, Debug)]
pub struct GatingState<N> {
    pub seizure: ShiftRegister,
    pub nonseizure: ShiftRegister,
    policy: LowPolicy,
    buffer_seizure: Option<VecDeque<(Vec<N>, N)>>,
    buffer_nonseizure: Option<VecDeque<(Vec<N>, N)>>,
}

impl<N: Scalar> GatingState<N> {
    pub fn new(h: &Hyperparams, policy: LowPolicy, buffered: bool) -> Self {
        let buf = |n: usize| buffered.then(|| VecDeque::with_capacity(n));
        Self {
            seizure: ShiftRegister::new(h.ws),
            nonseizure: ShiftRegister::new(h.ws_nonseizure()),
            policy,
            buffer_seizure: buf(h.ws),
            buffer_nonseizure: buf(h.ws_nonseizure()),
        }
    }

    /// Clock one gate result in. Returns the trigger, if any, leaving the
    /// registers as they are; the caller clears them with [`Self::clear`].
    pub fn observe(&mut self, g: Gate) -> Option<Trigger> {
        match g {
            Gate::Low if self.policy == LowPolicy::Reset => {
                self.seizure.clear();
                self.nonseizure.clear();
            }
            _ => {
                self.seizure.shift_in(g == Gate::HighSeizure);
                self.nonseizure.shift_in(g == Gate::HighNonSeizure);
            }
        }
        debug_assert!(!(self.seizure.is_all_ones() && self.nonseizure.is_all_ones()));
        if self.seizure.is_all_ones() {
            Some(Trigger::Seizure)
        } else if self.nonseizure.is_all_ones() {
            Some(Trigger::NonSeizure)
        } else {
            None
        }
    }

    fn remember(&mut self, g: Gate, x: &[N], p: N) {
        let (buf, cap) = match g {
            Gate::HighSeizure => (&mut self.buffer_seizure, self.seizure.len()),
            Gate::HighNonSeizure => (&mut self.buffer_nonseizure, self.nonseizure.len()),
            Gate::Low => return,
        };
        if let Some(buf) = buf {
            if buf.len() == cap {
                buf.pop_front();
            }
            buf.push_back((x.to_vec(), p));
        }
    }

    fn take_run(&mut self, t: Trigger) -> Vec<(Vec<N>, N)> {
        let buf = match t {
            Trigger::Seizure => &mut self.buffer_seizure,
            Trigger::NonSeizure => &mut self.buffer_nonseizure,
        };
        buf.as_mut().map(|b| b.drain(..).collect()).unwrap_or_default()
    }

    pub fn clear(&mut self) {
        self.seizure.clear();
        self.nonseizure.clear();
        for b in [&mut self.buffer_seizure, &mut self.buffer_nonseizure].into_iter().flatten() {
            b.clear();
        }
    }
}

/// `w += 2^-eta_shift * (y - p) * [x; 1]`, saturating in fixed point.
pub fn sgd_update<N: Scalar>(w: &mut WeightVector<N>, x: &[N], p: N, y: bool, eta_shift: u32) -> Result<()> {
    if x.len() != w.n_features() {
        return Err(Error::DimensionMismatch { expected: w.n_features(), got: x.len() });
    }
    let residual = if y { N::ONE - p } else { N::ZERO - p };
    let inputs: Vec<N> = w.augmented(x).collect();
    for (wk, xk) in w.as_mut_slice().iter_mut().zip(inputs) {
        *wk = *wk + N::scaled_product(residual, xk, eta_shift);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineOptions {
    /// When false the classifier never updates (the static baseline).
    pub online: bool,
    pub update_mode: UpdateMode,
    /// Consume the sample after each retrain without scoring it.
    pub hw_faithful: bool,
    pub low_policy: LowPolicy,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self { online: true, update_mode: UpdateMode::Single, hw_faithful: true, low_policy: LowPolicy::Shift }
    }
}

impl OnlineOptions {
    pub fn frozen() -> Self {
        Self { online: false, ..Self::default() }
    }
}

/// A classifier that keeps training itself on its own confident output.
#[derive(Clone, Debug)]
pub struct OnlineClassifier<N: Scalar> {
    classifier: Classifier<N>,
    hyper: Hyperparams,
    options: OnlineOptions,
    ct: N,
    gating: GatingState<N>,
    skip_next: bool,
    last: Option<Prediction>,
    updates: u64,
}

impl<N: Scalar> OnlineClassifier<N> {
    pub fn new(classifier: Classifier<N>, hyper: Hyperparams, options: OnlineOptions) -> Result<Self> {
        hyper.validate()?;
        let gating = GatingState::new(&hyper, options.low_policy, options.update_mode == UpdateMode::Window);
        Ok(Self { classifier, hyper, options, ct: N::from_f64(hyper.ct), gating, skip_next: false, last: None, updates: 0 })
    }

    pub fn classifier(&self) -> &Classifier<N> {
        &self.classifier
    }

    pub fn weights(&self) -> &WeightVector<N> {
        &self.classifier.weights
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn options(&self) -> &OnlineOptions {
        &self.options
    }

    pub fn gating(&self) -> &GatingState<N> {
        &self.gating
    }

    /// Number of retrain events so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn step(&mut self, x: &FeatureVector<N>) -> Result<Prediction> {
        if self.skip_next {
            self.skip_next = false;
            if let Some(last) = self.last {
                let pr = Prediction { sample: x.sample, retrained: false, skipped: true, ..last };
                self.last = Some(pr);
                return Ok(pr);
            }
        }
        let (z, p) = self.classifier.score(&x.values)?;
        let mut pr = Prediction { sample: x.sample, z: z.to_f64(), p: p.to_f64(), label: z >= N::ZERO, retrained: false, skipped: false };
        if self.options.online {
            let g = gate(p, self.ct);
            self.gating.remember(g, &x.values, p);
            if let Some(t) = self.gating.observe(g) {
                self.retrain(t, &x.values, p)?;
                pr.retrained = true;
                self.skip_next = self.options.hw_faithful;
            }
        }
        self.last = Some(pr);
        Ok(pr)
    }

    fn retrain(&mut self, t: Trigger, x: &[N], p: N) -> Result<()> {
        let y = t.label();
        let shift = self.hyper.eta_shift;
        match self.options.update_mode {
            UpdateMode::Single => sgd_update(&mut self.classifier.weights, x, p, y, shift)?,
            UpdateMode::Window => {
                for (xb, pb) in self.gating.take_run(t) {
                    sgd_update(&mut self.classifier.weights, &xb, pb, y, shift)?;
                }
            }
        }
        self.gating.clear();
        self.updates += 1;
        if self.classifier.weights.as_slice().iter().any(|w| !w.to_f64().is_finite()) {
            return Err(Error::Training("online update produced non-finite weights".into()));
        }
        Ok(())
    }

    /// Forget the gating history and any pending skip; weights are kept.
    pub fn reset_gating(&mut self) {
        self.gating.clear();
        self.skip_next = false;
        self.last = None;
    }
}

/// CSV trace `sample,z,p,label,retrained,skipped`.
pub struct PredictionTraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> PredictionTraceWriter<W> {
    pub const HEADER: [&'static str; 6] = ["sample", "z", "p", "label", "retrained", "skipped"];

    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(Self::HEADER).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, pr: &Prediction) -> Result<()> {
        self.inner
            .write_record([
                pr.sample.to_string(),
                pr.z.to_string(),
                pr.p.to_string(),
                pr.label_u8().to_string(),
                u8::from(pr.retrained).to_string(),
                u8::from(pr.skipped).to_string(),
            ])
            .map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush().map_err(|e| Error::io("prediction trace", e))?;
        self.inner.into_inner().map_err(|e| Error::io("prediction trace", e.into_error()))
    }
}

/// Read a trace written by [`PredictionTraceWriter`].
pub fn read_prediction_trace<R: std::io::Read>(r: R) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(PredictionTraceWriter::<Vec<u8>>::HEADER) {
        return Err(Error::format("prediction trace", format!("unexpected header {headers:?}")));
    }
    let flag = |s: &str, what: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::format("prediction trace", format!("{what} must be 0 or 1, got `{other}`"))),
    };
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| Error::format("prediction trace", format!("bad {what} `{s}`")));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let sample = rec[0].parse().map_err(|_| Error::format("prediction trace", format!("bad sample index `{}`", &rec[0])))?;
        out.push(Prediction {
            sample,
            z: num(&rec[1], "z")?,
            p: num(&rec[2], "p")?,
            label: flag(&rec[3], "label")?,
            retrained: flag(&rec[4], "retrained")?,
            skipped: flag(&rec[5], "skipped")?,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("prediction trace", e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{logistic_exact, LogisticLut, Squash};
    use crate::fixedpoint::Q6_10;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const G: [Gate; 3] = [Gate::HighSeizure, Gate::HighNonSeizure, Gate::Low];

    fn fv<N: Scalar>(sample: u64, values: Vec<N>) -> FeatureVector<N> {
        FeatureVector { sample, values }
    }

    /// Classifier whose `p` equals the single input feature's logit, so a
    /// test can dictate the probability sequence directly.
    fn passthrough(h: Hyperparams, options: OnlineOptions) -> OnlineClassifier<f64> {
        let c = Classifier::new(WeightVector::new(vec![1.0], false).unwrap(), Squash::Exact);
        OnlineClassifier::new(c, h, options).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate(0.85, 0.8), Gate::HighSeizure);
        assert_eq!(gate(0.15, 0.8), Gate::HighNonSeizure);
        assert_eq!(gate(0.5, 0.8), Gate::Low);
        assert_eq!(gate(0.8, 0.8), Gate::HighSeizure);
        let ct = Q6_10::from_real(0.8);
        assert_eq!(gate(Q6_10::from_real(0.85), ct), Gate::HighSeizure);
        assert_eq!(gate(Q6_10::from_real(0.15), ct), Gate::HighNonSeizure);
        assert_eq!(gate(Q6_10::ONE - ct, ct), Gate::HighNonSeizure);
        assert_eq!(gate(Q6_10::from_real(0.5), ct), Gate::Low);
    }

    #[test]
    fn hyperparam_validation() {
        assert!(Hyperparams::new(0.5, 3).is_err());
        assert!(Hyperparams::new(1.0, 3).is_err());
        assert!(Hyperparams::new(0.8, 0).is_err());
        let h = Hyperparams::new(0.7, 4).unwrap();
        assert_eq!(h.ws_nonseizure(), 40);
        assert_eq!(h.eta(), 1.0 / 64.0);
    }

    #[test]
    fn shift_register_basics() {
        let mut r = ShiftRegister::new(70);
        for _ in 0..69 {
            r.shift_in(true);
        }
        assert!(!r.is_all_ones());
        assert_eq!(r.count_ones(), 69);
        r.shift_in(true);
        assert!(r.is_all_ones());
        r.shift_in(false);
        assert!(!r.bit(0) && r.bit(1) && r.bit(69));
        assert_eq!(r.count_ones(), 69);
        r.clear();
        assert!(r.is_all_zeros());
    }

    /// Brute-force oracle: replay the whole gate history since the last
    /// trigger into explicit bit vectors.
    fn oracle(gates: &[Gate], ws: usize, wn: usize, policy: LowPolicy) -> Vec<Option<Trigger>> {
        let (mut s, mut n) = (vec![false; ws], vec![false; wn]);
        let mut out = Vec::new();
        for &g in gates {
            if g == Gate::Low && policy == LowPolicy::Reset {
                s.iter_mut().for_each(|b| *b = false);
                n.iter_mut().for_each(|b| *b = false);
            } else {
                s.insert(0, g == Gate::HighSeizure);
                s.pop();
                n.insert(0, g == Gate::HighNonSeizure);
                n.pop();
            }
            let t = if s.iter().all(|&b| b) {
                Some(Trigger::Seizure)
            } else if n.iter().all(|&b| b) {
                Some(Trigger::NonSeizure)
            } else {
                None
            };
            if t.is_some() {
                s.iter_mut().for_each(|b| *b = false);
                n.iter_mut().for_each(|b| *b = false);
            }
            out.push(t);
        }
        out
    }

    #[test]
    fn gating_matches_oracle_exhaustively() {
        for (ws, factor, len) in [(1, 10, 12), (2, 2, 10), (3, 1, 10), (2, 3, 9)] {
            let h = Hyperparams { ct: 0.8, ws, nonseizure_factor: factor, eta_shift: 6 };
            for policy in [LowPolicy::Shift, LowPolicy::Reset] {
                for code in 0..3usize.pow(len as u32) {
                    let gates: Vec<Gate> = (0..len).map(|k| G[code / 3usize.pow(k as u32) % 3]).collect();
                    let expect = oracle(&gates, ws, ws * factor, policy);
                    let mut st = GatingState::<f64>::new(&h, policy, false);
                    for (k, &g) in gates.iter().enumerate() {
                        let t = st.observe(g);
                        assert_eq!(t, expect[k], "ws={ws} factor={factor} {gates:?} at {k}");
                        if t.is_some() {
                            st.clear();
                            assert!(st.seizure.is_all_zeros() && st.nonseizure.is_all_zeros());
                        }
                        assert!(!(st.seizure.is_all_ones() && st.nonseizure.is_all_ones()));
                    }
                }
            }
        }
    }

    #[test]
    fn trigger_examples() {
        let h = Hyperparams::new(0.8, 3).unwrap();
        let mut c = passthrough(h, OnlineOptions { hw_faithful: false, ..OnlineOptions::default() });
        let run: Vec<_> = [0.85, 0.9, 0.82].iter().enumerate().map(|(i, &p)| c.step(&fv(i as u64, vec![logit(p)])).unwrap()).collect();
        assert_eq!(run.iter().map(|p| p.retrained).collect::<Vec<_>>(), [false, false, true]);
        assert!(c.gating().seizure.is_all_zeros() && c.gating().nonseizure.is_all_zeros());
        // weight moved up: label was 1 and p < 1
        assert!(c.weights().as_slice()[0] > 1.0);

        let mut c = passthrough(h, OnlineOptions { hw_faithful: false, ..OnlineOptions::default() });
        let run: Vec<_> = [0.85, 0.7, 0.9, 0.9].iter().enumerate().map(|(i, &p)| c.step(&fv(i as u64, vec![logit(p)])).unwrap()).collect();
        assert!(run.iter().all(|p| !p.retrained));
    }

    #[test]
    fn hw_faithful_skips_one_sample() {
        let h = Hyperparams::new(0.8, 2).unwrap();
        let mut c = passthrough(h, OnlineOptions::default());
        let ps = [0.9, 0.9, 0.1, 0.95];
        let out: Vec<_> = ps.iter().enumerate().map(|(i, &p)| c.step(&fv(i as u64, vec![logit(p)])).unwrap()).collect();
        assert!(out[1].retrained && !out[1].skipped);
        assert!(out[2].skipped && !out[2].retrained);
        assert_eq!(out[2].sample, 2);
        assert_eq!((out[2].label, out[2].p), (out[1].label, out[1].p));
        // the skipped sample did not enter the registers
        assert!(!out[3].skipped && !out[3].retrained);
        assert_eq!(c.gating().seizure.count_ones(), 1);
        assert_eq!(c.gating().nonseizure.count_ones(), 0);
    }

    #[test]
    fn sgd_examples() {
        let x = [0.5, -2.0, 4.0];
        let mut w = WeightVector::new(vec![0.1, 0.2, 0.3, 0.4], true).unwrap();
        let before = w.clone();
        sgd_update(&mut w, &x, 1.0, true, 6).unwrap();
        assert_eq!(w, before);
        sgd_update(&mut w, &x, 0.5, true, 6).unwrap();
        let expect: Vec<f64> = before.as_slice().iter().zip(x.iter().chain([1.0].iter())).map(|(a, b)| a + b / 128.0).collect();
        assert_eq!(w.as_slice(), expect.as_slice());

        let q = |v: f64| Q6_10::from_real(v);
        let mut wq = WeightVector::new(vec![q(0.0), q(0.0)], true).unwrap();
        sgd_update(&mut wq, &[q(1.0)], q(0.5), true, 6).unwrap();
        assert_eq!(wq.as_slice(), &[q(1.0 / 128.0), q(1.0 / 128.0)]);
        let mut sat = WeightVector::new(vec![Q6_10::MAX], false).unwrap();
        sgd_update(&mut sat, &[q(31.0)], Q6_10::ZERO, true, 0).unwrap();
        assert_eq!(sat.as_slice(), &[Q6_10::MAX]);
    }

    fn cross_entropy(w: &[f64], x: &[f64], y: bool) -> f64 {
        let z: f64 = w.iter().zip(x.iter().chain([1.0].iter())).map(|(a, b)| a * b).sum();
        let p = logistic_exact(z);
        if y {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    #[test]
    fn sgd_step_is_negative_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w0: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_bool(0.5);
            let mut w = WeightVector::new(w0.clone(), true).unwrap();
            let p = Classifier::new(w.clone(), Squash::Exact).score(&x).unwrap().1;
            sgd_update(&mut w, &x, p, y, 6).unwrap();
            let h = 1e-6;
            for k in 0..=n {
                let (mut a, mut b) = (w0.clone(), w0.clone());
                a[k] += h;
                b[k] -= h;
                let grad = (cross_entropy(&a, &x, y) - cross_entropy(&b, &x, y)) / (2.0 * h);
                let step = (w.as_slice()[k] - w0[k]) * 64.0;
                let rel = (step + grad).abs() / grad.abs().max(1e-3);
                assert!(rel <= 1e-5, "k={k} step={step} grad={grad}");
            }
        }
    }

    #[test]
    fn no_confidence_means_static() {
        let h = Hyperparams::new(0.8, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut online = passthrough(h, OnlineOptions::default());
        let mut frozen = passthrough(h, OnlineOptions::frozen());
        for i in 0..5000 {
            let p = rng.random_range(0.21..0.79);
            let x = fv(i, vec![logit(p)]);
            assert_eq!(online.step(&x).unwrap(), frozen.step(&x).unwrap());
        }
        assert_eq!(online.weights(), frozen.weights());
        assert_eq!(online.updates(), 0);
    }

    #[test]
    fn confident_input_is_reinforced() {
        let h = Hyperparams::new(0.7, 1).unwrap();
        for opts in [OnlineOptions::default(), OnlineOptions { update_mode: UpdateMode::Window, ..OnlineOptions::default() }] {
            let w = WeightVector::new(vec![0.3, -0.1, 0.5], true).unwrap();
            let mut c = OnlineClassifier::new(Classifier::new(w, Squash::Exact), h, opts).unwrap();
            let x = fv(0, vec![2.0, 1.0]);
            let mut prev = c.classifier().score(&x.values).unwrap().1;
            assert!(prev >= 0.7);
            for _ in 0..400 {
                c.step(&x).unwrap();
                let p = c.classifier().score(&x.values).unwrap().1;
                assert!(p >= prev);
                prev = p;
            }
            assert!(prev > 0.95, "p = {prev}");
        }
        // fixed point: nondecreasing, never past 1
        let q = |v: f64| Q6_10::from_real(v);
        let w = WeightVector::new(vec![q(0.3), q(-0.1), q(0.5)], true).unwrap();
        let cl = Classifier::new(w, Squash::Lut(LogisticLut::default()));
        let mut c = OnlineClassifier::new(cl, h, OnlineOptions::default()).unwrap();
        let x = fv(0, vec![q(2.0), q(1.0)]);
        let mut prev = c.classifier().score(&x.values).unwrap().1;
        for _ in 0..400 {
            c.step(&x).unwrap();
            let p = c.classifier().score(&x.values).unwrap().1;
            assert!(p >= prev && p <= Q6_10::ONE);
            prev = p;
        }
        assert!(prev.to_real() > 0.95);
    }

    #[test]
    fn window_mode_uses_every_sample_of_the_run() {
        let h = Hyperparams::new(0.8, 3).unwrap();
        let opts = OnlineOptions { update_mode: UpdateMode::Window, hw_faithful: false, ..OnlineOptions::default() };
        let mut c = passthrough(h, opts);
        // a confident sample before a break must not be used
        let ps = [0.95, 0.5, 0.85, 0.9, 0.82];
        for (i, &p) in ps.iter().enumerate() {
            c.step(&fv(i as u64, vec![logit(p)])).unwrap();
        }
        let expect = 1.0 + ps[2..].iter().map(|&p| (1.0 - p) * logit(p) / 64.0).fold(0.0, |a, b| a + b);
        assert!((c.weights().as_slice()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..3000).map(|_| (0..4).map(|_| rng.random_range(-2.0..3.0)).collect()).collect();
        let h = Hyperparams::new(0.7, 2).unwrap();
        let w = vec![0.8, -0.4, 0.3, 0.5, -0.2];
        let run_f = || {
            let c = Classifier::new(WeightVector::<f64>::new(w.clone(), true).unwrap(), Squash::Exact);
            let mut o = OnlineClassifier::new(c, h, OnlineOptions::default()).unwrap();
            xs.iter().enumerate().map(|(i, x)| o.step(&fv(i as u64, x.clone())).unwrap()).collect::<Vec<_>>()
        };
        let run_q = || {
            let c = Classifier::new(WeightVector::<Q6_10>::from_f64(&w, true).unwrap(), Squash::Lut(LogisticLut::default()));
            let mut o = OnlineClassifier::new(c, h, OnlineOptions::default()).unwrap();
            xs.iter()
                .enumerate()
                .map(|(i, x)| o.step(&fv(i as u64, x.iter().map(|&v| Q6_10::from_real(v)).collect())).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run_f();
        assert!(a.iter().any(|p| p.retrained));
        assert_eq!(a, run_f());
        assert_eq!(run_q(), run_q());
    }

    #[test]
    fn trace_round_trip() {
        let preds = vec![
            Prediction { sample: 0, z: -1.25, p: 0.2227, label: false, retrained: false, skipped: false },
            Prediction { sample: 1, z: 3.0, p: 0.95, label: true, retrained: true, skipped: false },
            Prediction { sample: 2, z: 3.0, p: 0.95, label: true, retrained: false, skipped: true },
        ];
        let mut w = PredictionTraceWriter::new(Vec::new()).unwrap();
        preds.iter().for_each(|p| w.write(p).unwrap());
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("sample,z,p,label,retrained,skipped\n0,-1.25,0.2227,0,0,0\n"));
        assert_eq!(read_prediction_trace(&bytes[..]).unwrap(), preds);
        assert!(read_prediction_trace("a,b\n1,2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn registers_never_both_full(ps in prop::collection::vec(0.0f64..1.0, 1..400), ct in 0.51f64..0.99, ws in 1usize..5) {
            let h = Hyperparams { ct, ws, nonseizure_factor: 2, eta_shift: 6 };
            let mut st = GatingState::<f64>::new(&h, LowPolicy::Shift, false);
            for p in ps {
                if st.observe(gate(p, ct)).is_some() {
                    st.clear();
                }
                prop_assert!(!(st.seizure.is_all_ones() && st.nonseizure.is_all_ones()));
            }
        }

        #[test]
        fn weights_stay_finite(xs in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 3), 1..200)) {
            let h = Hyperparams::new(0.6, 1).unwrap();
            let c = Classifier::new(WeightVector::<f64>::new(vec![1.0, -1.0, 0.5, 0.0], true).unwrap(), Squash::Exact);
            let mut o = OnlineClassifier::new(c, h, OnlineOptions::default()).unwrap();
            for (i, x) in xs.into_iter().enumerate() {
                o.step(&fv(i as u64, x)).unwrap();
                prop_assert!(o.weights().as_slice().iter().all(|w| w.is_finite()));
            }
        }
    }
}
