//! Band-pass IIR filtering for the band-power features.
//!
//! Each band is a cascade of three Direct Form I biquads. Coefficients are
//! designed offline (`tools/design_filters.py`) and shipped in
//! `data/filter_bank.toml`; this module only runs and verifies them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::arith::Scalar;
use crate::error::{Error, Result};
use crate::fixedpoint::Q6_10;

/// Minimum stopband attenuation every band must reach, in dB.
pub const MIN_STOPBAND_ATTENUATION_DB: f64 = 20.0;
/// Slack allowed on top of the design ripple when checking the passband.
const PASSBAND_TOLERANCE_DB: f64 = 0.05;
const GRID_POINTS: usize = 2048;

const REFERENCE_BANK: &str = include_str!("../data/filter_bank.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Alpha, Band::Beta, Band::Gamma];

    /// Passband edges in Hz.
    pub fn edges(self) -> (f64, f64) {
        match self {
            Band::Alpha => (8.0, 16.0),
            Band::Beta => (16.0, 32.0),
            Band::Gamma => (32.0, 96.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    /// Stopband edges: half the lower passband edge and 1.5x the upper one.
    pub fn stopband_edges(self) -> (f64, f64) {
        let (lo, hi) = self.edges();
        (0.5 * lo, 1.5 * hi)
    }
}

/// Normalized biquad, `a0 = 1`:
/// `y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 5]", into = "[f64; 5]")]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl From<[f64; 5]> for BiquadCoeffs {
    fn from([b0, b1, b2, a1, a2]: [f64; 5]) -> Self {
        Self { b0, b1, b2, a1, a2 }
    }
}

impl From<BiquadCoeffs> for [f64; 5] {
    fn from(c: BiquadCoeffs) -> Self {
        [c.b0, c.b1, c.b2, c.a1, c.a2]
    }
}

impl BiquadCoeffs {
    pub const IDENTITY: Self = Self { b0: 1.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 };

    /// Largest pole magnitude of `1 + a1 z^-1 + a2 z^-2`.
    pub fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0).abs().max(((-self.a1 - s) / 2.0).abs())
        } else {
            // complex pair: |p|^2 = a2
            self.a2.sqrt()
        }
    }

    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Coefficients rounded to the nearest Q6.10 value.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| Q6_10::from_real(v).to_real();
        Self { b0: q(self.b0), b1: q(self.b1), b2: q(self.b2), a1: q(self.a1), a2: q(self.a2) }
    }

    pub fn is_finite(&self) -> bool {
        [self.b0, self.b1, self.b2, self.a1, self.a2].iter().all(|v| v.is_finite())
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    fn response(&self, w: f64) -> (f64, f64) {
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        let d = den.0 * den.0 + den.1 * den.1;
        ((num.0 * den.0 + num.1 * den.1) / d, (num.1 * den.0 - num.0 * den.1) / d)
    }
}

/// Magnitude response of a cascade at `f` Hz, in dB.
pub fn cascade_response_db(sections: &[BiquadCoeffs], f: f64, fs: f64) -> Result<f64> {
    if !(fs > 0.0) || !(0.0..=fs / 2.0).contains(&f) {
        return Err(Error::invalid(format!("frequency {f} Hz outside [0, {}] Hz", fs / 2.0)));
    }
    let w = 2.0 * PI * f / fs;
    let mut mag = 1.0;
    for s in sections {
        let (re, im) = s.response(w);
        mag *= re.hypot(im);
    }
    Ok(20.0 * mag.log10())
}

/// One Direct Form I second-order section with its delay state. The input
/// history is kept at scalar precision, the output history at accumulator
/// precision; the returned sample is narrowed.
#[derive(Clone, Debug)]
pub struct Biquad<N: Scalar> {
    b0: N,
    b1: N,
    b2: N,
    neg_a1: N,
    neg_a2: N,
    x1: N,
    x2: N,
    y1: N::Acc,
    y2: N::Acc,
}

impl<N: Scalar> Biquad<N> {
    pub fn new(c: &BiquadCoeffs) -> Self {
        Self {
            b0: N::from_f64(c.b0),
            b1: N::from_f64(c.b1),
            b2: N::from_f64(c.b2),
            neg_a1: N::from_f64(-c.a1),
            neg_a2: N::from_f64(-c.a2),
            x1: N::ZERO,
            x2: N::ZERO,
            y1: N::Acc::default(),
            y2: N::Acc::default(),
        }
    }

    #[inline]
    pub fn process(&mut self, x: N) -> N {
        let acc = N::df1([self.b0, self.b1, self.b2], [self.neg_a1, self.neg_a2], [x, self.x1, self.x2], [self.y1, self.y2]);
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = acc;
        N::narrow_acc(acc)
    }

    pub fn reset(&mut self) {
        self.x1 = N::ZERO;
        self.x2 = N::ZERO;
        self.y1 = N::Acc::default();
        self.y2 = N::Acc::default();
    }

    /// Coefficients as actually used by this backend.
    pub fn effective_coeffs(&self) -> BiquadCoeffs {
        BiquadCoeffs {
            b0: self.b0.to_f64(),
            b1: self.b1.to_f64(),
            b2: self.b2.to_f64(),
            a1: -self.neg_a1.to_f64(),
            a2: -self.neg_a2.to_f64(),
        }
    }
}

/// Designed coefficients for one band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDesign {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub sections: Vec<BiquadCoeffs>,
}

/// Three-section band-pass filter running in backend `N`.
#[derive(Clone, Debug)]
pub struct BandpassFilter<N: Scalar> {
    band: Band,
    fs: f64,
    sections: [Biquad<N>; 3],
}

impl<N: Scalar> BandpassFilter<N> {
    /// Builds the filter, rejecting designs that are unstable once rounded
    /// to this backend's coefficient precision.
    pub fn new(band: Band, design: &BandDesign, fs: f64) -> Result<Self> {
        if design.sections.len() != 3 {
            return Err(Error::Filter(format!("{} band needs exactly 3 sections, got {}", band.name(), design.sections.len())));
        }
        let sections: [Biquad<N>; 3] = std::array::from_fn(|i| Biquad::new(&design.sections[i]));
        for (i, s) in sections.iter().enumerate() {
            let c = s.effective_coeffs();
            if !c.is_finite() || !c.is_stable() {
                return Err(Error::Filter(format!(
                    "{} band section {i} is unstable in {} mode (pole radius {:.6})",
                    band.name(),
                    N::MODE,
                    c.pole_radius()
                )));
            }
        }
        Ok(Self { band, fs, sections })
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    #[inline]
    pub fn process_sample(&mut self, x: N) -> N {
        let y = self.sections[0].process(x);
        let y = self.sections[1].process(y);
        self.sections[2].process(y)
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    pub fn effective_coeffs(&self) -> Vec<BiquadCoeffs> {
        self.sections.iter().map(Biquad::effective_coeffs).collect()
    }

    /// Analytic magnitude response of the coefficients in use, in dB.
    pub fn frequency_response(&self, f: f64) -> Result<f64> {
        cascade_response_db(&self.effective_coeffs(), f, self.fs)
    }
}

/// Reference coefficients for one sampling rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub fs: f64,
    pub ripple_db: f64,
    pub stopband_db: f64,
    pub alpha: BandDesign,
    pub beta: BandDesign,
    pub gamma: BandDesign,
}

#[derive(Deserialize)]
struct ShippedBanks {
    bank: Vec<FilterBank>,
}

impl FilterBank {
    /// The shipped coefficient set for `fs` (1000 Hz or 256 Hz).
    pub fn reference(fs: f64) -> Result<Self> {
        let shipped: ShippedBanks = toml::from_str(REFERENCE_BANK).map_err(|e| Error::format("shipped filter bank", e.to_string()))?;
        shipped.bank.into_iter().find(|b| b.fs == fs).ok_or_else(|| {
            Error::invalid(format!(
                "no reference filter bank for fs = {fs} Hz (available: 1000, 256); \
                 design one with tools/design_filters.py"
            ))
        })
    }

    pub fn design(&self, band: Band) -> &BandDesign {
        match band {
            Band::Alpha => &self.alpha,
            Band::Beta => &self.beta,
            Band::Gamma => &self.gamma,
        }
    }

    /// The same bank with every coefficient rounded to the Q6.10 grid, so
    /// that float and fixed backends run an identical filter.
    pub fn quantized(&self) -> Self {
        let q = |d: &BandDesign| BandDesign {
            lo_hz: d.lo_hz,
            hi_hz: d.hi_hz,
            sections: d.sections.iter().map(BiquadCoeffs::quantized).collect(),
        };
        Self { alpha: q(&self.alpha), beta: q(&self.beta), gamma: q(&self.gamma), ..self.clone() }
    }

    pub fn is_quantized(&self) -> bool {
        *self == self.quantized()
    }

    pub fn instantiate<N: Scalar>(&self) -> Result<[BandpassFilter<N>; 3]> {
        Ok([
            BandpassFilter::new(Band::Alpha, &self.alpha, self.fs)?,
            BandpassFilter::new(Band::Beta, &self.beta, self.fs)?,
            BandpassFilter::new(Band::Gamma, &self.gamma, self.fs)?,
        ])
    }
}

/// Response figures for one coefficient set (float or quantized).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResponseCheck {
    pub passband_min_db: f64,
    pub passband_max_db: f64,
    /// Worst response over `[0, lower stopband edge]`.
    pub lower_stopband_max_db: f64,
    /// Worst response over `[upper stopband edge, fs/2]`; `None` when the
    /// edge lies beyond Nyquist.
    pub upper_stopband_max_db: Option<f64>,
    pub max_pole_radius: f64,
    pub stable: bool,
}

impl ResponseCheck {
    fn measure(sections: &[BiquadCoeffs], band: Band, fs: f64) -> Self {
        let (lo, hi) = band.edges();
        let (s_lo, s_hi) = band.stopband_edges();
        let nyquist = fs / 2.0;
        let worst = |a: f64, b: f64, pick: fn(f64, f64) -> f64, init: f64| {
            (0..=GRID_POINTS).fold(init, |acc, i| {
                let f = a + (b - a) * i as f64 / GRID_POINTS as f64;
                let db = cascade_response_db(sections, f, fs).unwrap_or(f64::NEG_INFINITY);
                // a dead filter yields NaN/-inf; NaN must never pass a check
                if db.is_nan() {
                    pick(acc, f64::NEG_INFINITY)
                } else {
                    pick(acc, db)
                }
            })
        };
        let hi_pb = hi.min(nyquist);
        let stable = sections.iter().all(|s| s.is_finite() && s.is_stable());
        Self {
            passband_min_db: worst(lo, hi_pb, f64::min, f64::INFINITY),
            passband_max_db: worst(lo, hi_pb, f64::max, f64::NEG_INFINITY),
            lower_stopband_max_db: worst(0.0, s_lo, f64::max, f64::NEG_INFINITY),
            upper_stopband_max_db: (s_hi < nyquist).then(|| worst(s_hi, nyquist, f64::max, f64::NEG_INFINITY)),
            max_pole_radius: sections.iter().map(BiquadCoeffs::pole_radius).fold(0.0, f64::max),
            stable,
        }
    }

    fn stopband_ok(&self) -> bool {
        let limit = -MIN_STOPBAND_ATTENUATION_DB;
        self.lower_stopband_max_db <= limit && self.upper_stopband_max_db.map_or(true, |v| v <= limit)
    }

    fn passband_ok(&self, ripple_db: f64) -> bool {
        self.passband_min_db >= -ripple_db - PASSBAND_TOLERANCE_DB && self.passband_max_db <= PASSBAND_TOLERANCE_DB
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandReport {
    pub band: Band,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub stopband_lo_hz: f64,
    pub stopband_hi_hz: f64,
    pub float: ResponseCheck,
    pub quantized: ResponseCheck,
    pub passband_ok: bool,
    pub stopband_ok: bool,
    pub quantized_stopband_ok: bool,
    pub quantized_stable: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterReport {
    pub fs: f64,
    pub ripple_db: f64,
    pub min_stopband_attenuation_db: f64,
    pub bands: Vec<BandReport>,
    pub pass: bool,
}

impl FilterReport {
    /// Plain-text table, one line per band.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "filter bank fs={} Hz ripple={} dB stopband>={} dB at 0.5*lo / 1.5*hi\n",
            self.fs, self.ripple_db, self.min_stopband_attenuation_db
        );
        for b in &self.bands {
            let upper = |v: Option<f64>| v.map_or("n/a".to_string(), |d| format!("{d:.1}"));
            out.push_str(&format!(
                "{:<5} {:>5}-{:<5} Hz  passband [{:.2}, {:.2}] dB  stop lo {:.1} hi {} dB  \
                 | q6.10 passband [{:.2}, {:.2}] stop lo {:.1} hi {} r={:.4}  {}\n",
                b.band.name(),
                b.lo_hz,
                b.hi_hz,
                b.float.passband_min_db,
                b.float.passband_max_db,
                b.float.lower_stopband_max_db,
                upper(b.float.upper_stopband_max_db),
                b.quantized.passband_min_db,
                b.quantized.passband_max_db,
                b.quantized.lower_stopband_max_db,
                upper(b.quantized.upper_stopband_max_db),
                b.quantized.max_pole_radius,
                if b.pass { "PASS" } else { "FAIL" }
            ));
        }
        out.push_str(if self.pass { "result: PASS\n" } else { "result: FAIL\n" });
        out
    }
}

/// Checks every band for passband ripple, the 20 dB stopband rule and
/// stability both as designed and after Q6.10 coefficient rounding.
pub fn verify_filter_bank(bank: &FilterBank) -> FilterReport {
    let bands: Vec<BandReport> = Band::ALL
        .iter()
        .map(|&band| {
            let design = bank.design(band);
            let quantized: Vec<BiquadCoeffs> = design.sections.iter().map(BiquadCoeffs::quantized).collect();
            let float = ResponseCheck::measure(&design.sections, band, bank.fs);
            let quant = ResponseCheck::measure(&quantized, band, bank.fs);
            let (s_lo, s_hi) = band.stopband_edges();
            let passband_ok = design.sections.len() == 3 && float.passband_ok(bank.ripple_db);
            let stopband_ok = float.stopband_ok();
            let quantized_stopband_ok = quant.stopband_ok();
            let quantized_stable = quant.stable;
            let pass = passband_ok && stopband_ok && float.stable && quantized_stopband_ok && quantized_stable;
            BandReport {
                band,
                lo_hz: design.lo_hz,
                hi_hz: design.hi_hz,
                stopband_lo_hz: s_lo,
                stopband_hi_hz: s_hi,
                float,
                quantized: quant,
                passband_ok,
                stopband_ok,
                quantized_stopband_ok,
                quantized_stable,
                pass,
            }
        })
        .collect();
    let pass = bands.iter().all(|b| b.pass);
    FilterReport { fs: bank.fs, ripple_db: bank.ripple_db, min_stopband_attenuation_db: MIN_STOPBAND_ATTENUATION_DB, bands, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bank() -> FilterBank {
        FilterBank::reference(1000.0).unwrap()
    }

    fn filter(band: Band) -> BandpassFilter<f64> {
        let b = bank();
        BandpassFilter::new(band, b.design(band), b.fs).unwrap()
    }

    fn center(band: Band) -> f64 {
        let (lo, hi) = band.edges();
        (lo * hi).sqrt()
    }

    /// Steady-state amplitude of a unit sine through `f`, measured directly.
    fn measured_gain_db(f: &mut BandpassFilter<f64>, freq: f64) -> f64 {
        let fs = f.fs();
        let n = (fs * 20.0) as usize;
        let settle = (fs * 10.0) as usize;
        let mut peak: f64 = 0.0;
        for i in 0..n {
            let y = f.process_sample((2.0 * PI * freq * i as f64 / fs).sin());
            if i >= settle {
                peak = peak.max(y.abs());
            }
        }
        20.0 * peak.log10()
    }

    #[test]
    fn reference_banks_load() {
        for fs in [1000.0, 256.0] {
            let b = FilterBank::reference(fs).unwrap();
            for band in Band::ALL {
                assert_eq!(b.design(band).sections.len(), 3);
                assert_eq!((b.design(band).lo_hz, b.design(band).hi_hz), band.edges());
            }
        }
        assert!(FilterBank::reference(500.0).is_err());
    }

    #[test]
    fn dc_is_rejected() {
        for band in Band::ALL {
            let mut f = filter(band);
            let mut y = 0.0;
            for _ in 0..20_000 {
                y = f.process_sample(1.0);
            }
            assert!(y.abs() < 1e-6, "{band:?} dc output {y}");
        }
    }

    #[test]
    fn band_center_sine_within_ripple_and_matches_analytic() {
        for band in Band::ALL {
            let mut f = filter(band);
            let c = center(band);
            let measured = measured_gain_db(&mut f, c);
            let analytic = f.frequency_response(c).unwrap();
            assert!((-1.0 - 0.05..=0.05).contains(&measured), "{band:?}: {measured} dB");
            assert!((measured - analytic).abs() < 0.05, "{band:?}: {measured} vs {analytic}");
        }
    }

    #[test]
    fn impulse_response_decays() {
        for band in Band::ALL {
            let mut f = filter(band);
            let h: Vec<f64> = (0..20_000).map(|i| f.process_sample(if i == 0 { 1.0 } else { 0.0 })).collect();
            let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tail = h[15_000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let l1: f64 = h.iter().map(|v| v.abs()).sum();
            assert!(tail < 1e-6 * peak, "{band:?} tail {tail} peak {peak}");
            assert!(l1.is_finite());
        }
    }

    /// DFT of the impulse response at a single bin, as an independent check
    /// of the analytic response.
    #[test]
    fn analytic_response_matches_impulse_dft() {
        let fs = 1000.0;
        for band in Band::ALL {
            let mut f = filter(band);
            let n = 40_000;
            let h: Vec<f64> = (0..n).map(|i| f.process_sample(if i == 0 { 1.0 } else { 0.0 })).collect();
            for freq in [5.0, center(band), 50.0, 200.0] {
                let w = 2.0 * PI * freq / fs;
                let (re, im) = h
                    .iter()
                    .enumerate()
                    .fold((0.0, 0.0), |(re, im), (k, v)| (re + v * (w * k as f64).cos(), im - v * (w * k as f64).sin()));
                let dft_db = 20.0 * re.hypot(im).log10();
                let analytic = f.frequency_response(freq).unwrap();
                assert!((dft_db - analytic).abs() < 1e-3, "{band:?} {freq} Hz: {dft_db} vs {analytic}");
            }
        }
    }

    #[test]
    fn response_examples() {
        assert!(filter(Band::Alpha).frequency_response(50.0).unwrap() <= -20.0);
        let b256 = FilterBank::reference(256.0).unwrap();
        let gamma = BandpassFilter::<f64>::new(Band::Gamma, &b256.gamma, 256.0).unwrap();
        assert!(gamma.frequency_response(2.0).unwrap() <= -20.0);
        let g1000 = filter(Band::Gamma);
        assert!(g1000.frequency_response(2.0).unwrap() <= -20.0);
        for f in [0.0, 10.0, 499.0, 500.0] {
            assert!(cascade_response_db(&[BiquadCoeffs::IDENTITY], f, 1000.0).unwrap().abs() < 1e-12);
        }
        assert!(cascade_response_db(&[BiquadCoeffs::IDENTITY], 501.0, 1000.0).is_err());
        assert!(cascade_response_db(&[BiquadCoeffs::IDENTITY], -1.0, 1000.0).is_err());
    }

    #[test]
    fn reference_banks_verify() {
        for fs in [1000.0, 256.0] {
            let report = verify_filter_bank(&FilterBank::reference(fs).unwrap());
            assert!(report.pass, "{}", report.to_text());
        }
    }

    #[test]
    fn zero_coefficients_fail_verification() {
        let mut b = bank();
        let zero = BiquadCoeffs { b0: 0.0, b1: 0.0, b2: 0.0, a1: 0.0, a2: 0.0 };
        b.beta.sections = vec![zero; 3];
        let report = verify_filter_bank(&b);
        assert!(!report.pass);
        assert!(!report.bands[1].passband_ok);
    }

    #[test]
    fn unstable_design_is_rejected() {
        let mut d = bank().alpha;
        d.sections[0].a2 = 1.01;
        assert!(BandpassFilter::<f64>::new(Band::Alpha, &d, 1000.0).is_err());
        // stable in float, pushed onto the unit circle by Q6.10 rounding
        d.sections[0].a2 = 0.99995;
        d.sections[0].a1 = -1.0;
        assert!(BandpassFilter::<f64>::new(Band::Alpha, &d, 1000.0).is_ok());
        assert!(BandpassFilter::<Q6_10>::new(Band::Alpha, &d, 1000.0).is_err());
    }

    #[test]
    fn bounded_input_bounded_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut fs: Vec<_> = Band::ALL.iter().map(|&b| filter(b)).collect();
        let b = bank();
        let mut fx: Vec<BandpassFilter<Q6_10>> = b.instantiate::<Q6_10>().unwrap().into_iter().collect();
        let mut max_float: f64 = 0.0;
        for _ in 0..1_000_000 {
            let x: f64 = rng.random_range(-1.0..1.0);
            for f in fs.iter_mut() {
                max_float = max_float.max(f.process_sample(x).abs());
            }
            for f in fx.iter_mut() {
                let y = f.process_sample(Q6_10::from_real(x));
                assert!(y != Q6_10::MAX && y != Q6_10::MIN);
            }
        }
        assert!(max_float < 10.0, "max |y| = {max_float}");
    }

    #[test]
    fn linear_in_float_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..5000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = -3.7;
        let mut f1 = filter(Band::Beta);
        let mut f2 = filter(Band::Beta);
        for &x in &xs {
            let y1 = f1.process_sample(a * x);
            let y2 = a * f2.process_sample(x);
            assert!((y1 - y2).abs() <= 1e-9 * y2.abs().max(1e-6));
        }
    }

    #[test]
    fn section_order_does_not_change_magnitude() {
        let d = bank().gamma;
        let mut perm = d.sections.clone();
        perm.reverse();
        perm.swap(0, 1);
        for f in [3.0, 20.0, 50.0, 90.0, 200.0, 400.0] {
            let a = cascade_response_db(&d.sections, f, 1000.0).unwrap();
            let b = cascade_response_db(&perm, f, 1000.0).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_tracks_float() {
        let b = bank().quantized();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ff: Vec<BandpassFilter<f64>> = b.instantiate::<f64>().unwrap().into_iter().collect();
        let mut fx: Vec<BandpassFilter<Q6_10>> = b.instantiate::<Q6_10>().unwrap().into_iter().collect();
        let mut worst = [0.0f64; 3];
        for i in 0..50_000 {
            let t = i as f64 / 1000.0;
            let x = 0.8 * (2.0 * PI * 12.0 * t).sin() + 0.4 * (2.0 * PI * 40.0 * t).sin() + rng.random_range(-0.2..0.2);
            let xq = Q6_10::from_real(x);
            for k in 0..3 {
                let yf = ff[k].process_sample(xq.to_real());
                let yq = fx[k].process_sample(xq).to_real();
                if i > 5000 {
                    worst[k] = worst[k].max((yf - yq).abs());
                }
            }
        }
        for (k, w) in worst.iter().enumerate() {
            assert!(*w < 0.01, "band {k} max deviation {w}");
        }
    }
}
