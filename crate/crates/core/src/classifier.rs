//! Logistic-regression scoring.

use serde::{Deserialize, Serialize};

use crate::arith::Scalar;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::fixedpoint::{ONE_RAW, Q6_10};

/// Feature weights, optionally followed by a bias weight applied to a
/// constant-one input.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<N> {
    values: Vec<N>,
    bias: bool,
}

impl<N: Scalar> WeightVector<N> {
    pub fn zeros(n_features: usize, bias: bool) -> Self {
        Self { values: vec![N::ZERO; n_features + usize::from(bias)], bias }
    }

    /// `values` holds the feature weights and, when `bias` is set, the bias
    /// weight last.
    pub fn new(values: Vec<N>, bias: bool) -> Result<Self> {
        if bias && values.is_empty() {
            return Err(Error::invalid("bias requested but weight vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::invalid(format!("weight {i} is not finite")));
        }
        Ok(Self { values, bias })
    }

    pub fn from_f64(values: &[f64], bias: bool) -> Result<Self> {
        Self::new(values.iter().map(|&v| N::from_f64(v)).collect(), bias)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64()).collect()
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn n_features(&self) -> usize {
        self.values.len() - usize::from(self.bias)
    }

    /// All weights, bias last.
    pub fn as_slice(&self) -> &[N] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [N] {
        &mut self.values
    }

    pub fn features(&self) -> &[N] {
        &self.values[..self.n_features()]
    }

    pub fn bias(&self) -> Option<N> {
        self.bias.then(|| self.values[self.values.len() - 1])
    }

    /// `x` followed by the constant bias input, if any.
    pub fn augmented<'a>(&self, x: &'a [N]) -> impl Iterator<Item = N> + 'a {
        x.iter().copied().chain(self.bias.then_some(N::ONE))
    }
}

/// `w . [x; 1]`. Fixed point accumulates every product in the wide
/// accumulator and narrows once.
pub fn dot<N: Scalar>(w: &WeightVector<N>, x: &[N]) -> Result<N> {
    if x.len() != w.n_features() {
        return Err(Error::DimensionMismatch { expected: w.n_features(), got: x.len() });
    }
    Ok(N::sum_of_products(w.values.iter().copied().zip(w.augmented(x))))
}

pub fn logistic_exact(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Piecewise-linear logistic over a symmetric set of breakpoints,
/// saturating to 0 and 1 outside them.
///
/// Only the non-negative half is interpolated; negative inputs are mirrored
/// through `lut(-z) = 1 - lut(z)`, so symmetry holds exactly in both
/// backends. The fixed-point interpolation rounds up, which keeps
/// `lut(z) > 0.5` for every representable `z > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LutTable", into = "LutTable")]
pub struct LogisticLut {
    z: Vec<f64>,
    p: Vec<f64>,
    z_raw: Vec<i16>,
    p_raw: Vec<i16>,
}

#[derive(Serialize, Deserialize)]
struct LutTable {
    z: Vec<f64>,
    p: Vec<f64>,
}

impl TryFrom<LutTable> for LogisticLut {
    type Error = Error;
    fn try_from(t: LutTable) -> Result<Self> {
        LogisticLut::from_points(t.z, t.p)
    }
}

impl From<LogisticLut> for LutTable {
    fn from(l: LogisticLut) -> Self {
        LutTable { z: l.z, p: l.p }
    }
}

impl LogisticLut {
    pub const ENTRIES: usize = 10;
    pub const RANGE: f64 = 6.0;

    /// `entries` breakpoints spaced uniformly over `[-range, range]`, each
    /// holding the exact logistic value.
    pub fn uniform(entries: usize, range: f64) -> Result<Self> {
        if entries < 2 || !(range > 0.0 && range < 32.0) {
            return Err(Error::invalid(format!("LUT needs >= 2 entries and 0 < range < 32 (got {entries}, {range})")));
        }
        let step = 2.0 * range / (entries - 1) as f64;
        let z: Vec<f64> = (0..entries).map(|k| -range + step * k as f64).collect();
        // mirror so the table is symmetric to the last bit
        let z: Vec<f64> = (0..entries).map(|k| if k < entries / 2 { -z[entries - 1 - k] } else { z[k] }).collect();
        let p = z.iter().map(|&v| logistic_exact(v)).collect::<Vec<_>>();
        let mut p: Vec<f64> = (0..entries).map(|k| if k < entries / 2 { 1.0 - p[entries - 1 - k] } else { p[k] }).collect();
        let mut z = z;
        if entries % 2 == 1 {
            z[entries / 2] = 0.0;
            p[entries / 2] = 0.5;
        }
        Self::from_points(z, p)
    }

    pub fn from_points(z: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::format("logistic LUT", m));
        if z.len() != p.len() || z.len() < 2 {
            return bad(format!("need matching breakpoint/value lists of length >= 2 (got {} and {})", z.len(), p.len()));
        }
        if z.iter().chain(&p).any(|v| !v.is_finite()) {
            return bad("non-finite entry".into());
        }
        if z.windows(2).any(|w| w[1] <= w[0]) {
            return bad("breakpoints must be strictly increasing".into());
        }
        if p.windows(2).any(|w| w[1] < w[0]) || p[0] < 0.0 || p[p.len() - 1] > 1.0 {
            return bad("values must be nondecreasing within [0, 1]".into());
        }
        let n = z.len();
        for k in 0..n {
            if z[k] != -z[n - 1 - k] || p[k] != 1.0 - p[n - 1 - k] {
                return bad(format!("table is not symmetric at entry {k}"));
            }
        }
        if z[n - 1] >= 32.0 {
            return bad("breakpoints must lie inside the Q6.10 range".into());
        }
        // the lower half is mirrored in raw units too, so rounding ties
        // cannot break symmetry
        let mirror = |v: &[f64], f: fn(i16) -> i16| -> Vec<i16> {
            (0..n)
                .map(|k| {
                    let upper = Q6_10::from_real(v[k.max(n - 1 - k)]).raw();
                    if k < n - 1 - k {
                        f(upper)
                    } else {
                        upper
                    }
                })
                .collect()
        };
        let z_raw = mirror(&z, |r| -r);
        let p_raw = mirror(&p, |r| ONE_RAW - r);
        if z_raw.windows(2).any(|w| w[1] <= w[0]) {
            return bad("breakpoints collide after Q6.10 rounding".into());
        }
        Ok(Self { z, p, z_raw, p_raw })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.z
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    /// Index of the first breakpoint that is `>= 0`.
    fn upper_half(&self) -> usize {
        self.z.len() / 2
    }

    pub fn eval_f64(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 1.0 - self.eval_f64(-z);
        }
        let n = self.z.len();
        if z > self.z[n - 1] {
            return 1.0;
        }
        let h = self.upper_half();
        // the first positive segment starts at its mirror image
        let mut i = h.saturating_sub(1);
        while i + 2 < n && self.z[i + 1] <= z {
            i += 1;
        }
        let (z0, z1, p0, p1) = (self.z[i], self.z[i + 1], self.p[i], self.p[i + 1]);
        p0 + (p1 - p0) * (z - z0) / (z1 - z0)
    }

    pub fn eval_fixed(&self, z: Q6_10) -> Q6_10 {
        let zr = i64::from(z.raw());
        if zr < 0 {
            let mirrored = self.eval_fixed(Q6_10::from_raw(z.raw().saturating_neg()));
            return Q6_10::from_raw(ONE_RAW - mirrored.raw());
        }
        let n = self.z_raw.len();
        if zr > i64::from(self.z_raw[n - 1]) {
            return Q6_10::ONE;
        }
        let mut i = self.upper_half().saturating_sub(1);
        while i + 2 < n && i64::from(self.z_raw[i + 1]) <= zr {
            i += 1;
        }
        let (z0, z1) = (i64::from(self.z_raw[i]), i64::from(self.z_raw[i + 1]));
        let (p0, p1) = (i64::from(self.p_raw[i]), i64::from(self.p_raw[i + 1]));
        let num = (p1 - p0) * (zr - z0);
        let den = z1 - z0;
        let step = if num >= 0 { (num + den - 1) / den } else { -((-num) / den) };
        Q6_10::from_raw((p0 + step) as i16)
    }

    /// Largest `|lut(z) - logistic(z)|` over a dense grid of `[-range, range]`.
    pub fn max_error_f64(&self, points: usize) -> f64 {
        let r = self.z[self.z.len() - 1];
        (0..=points)
            .map(|k| -r + 2.0 * r * k as f64 / points as f64)
            .map(|z| (self.eval_f64(z) - logistic_exact(z)).abs())
            .fold(0.0, f64::max)
    }

    /// Same as [`Self::max_error_f64`] over every Q6.10 input in range.
    pub fn max_error_fixed(&self) -> f64 {
        let r = self.z_raw[self.z_raw.len() - 1];
        (-r..=r)
            .map(|raw| {
                let z = Q6_10::from_raw(raw);
                (self.eval_fixed(z).to_real() - logistic_exact(z.to_real())).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Default for LogisticLut {
    fn default() -> Self {
        Self::uniform(Self::ENTRIES, Self::RANGE).expect("default LUT is valid")
    }
}

/// How `z` is squashed into a probability.
#[derive(Clone, Debug, PartialEq)]
pub enum Squash {
    Exact,
    Lut(LogisticLut),
}

impl Squash {
    /// LUT in fixed point, exact logistic in float.
    pub fn for_mode<N: Scalar>(lut: &LogisticLut) -> Self {
        match N::MODE {
            crate::ArithMode::Fixed => Squash::Lut(lut.clone()),
            crate::ArithMode::Float => Squash::Exact,
        }
    }

    /// `p` for `z`, with the label convention enforced: negative scores
    /// never reach 0.5 even when the curve rounds there.
    pub fn probability<N: Scalar>(&self, z: N) -> N {
        let p = match self {
            Squash::Exact => N::from_f64(logistic_exact(z.to_f64())),
            Squash::Lut(lut) => match N::MODE {
                crate::ArithMode::Fixed => N::from_f64(lut.eval_fixed(Q6_10::from_real(z.to_f64())).to_real()),
                crate::ArithMode::Float => N::from_f64(lut.eval_f64(z.to_f64())),
            },
        };
        let half = N::from_f64(0.5);
        if z < N::ZERO && p >= half {
            below_half::<N>()
        } else {
            p
        }
    }
}

fn below_half<N: Scalar>() -> N {
    match N::MODE {
        crate::ArithMode::Fixed => N::from_f64(f64::from(ONE_RAW / 2 - 1) / f64::from(ONE_RAW)),
        crate::ArithMode::Float => N::from_f64(0.5 - f64::EPSILON / 4.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample: u64,
    pub z: f64,
    pub p: f64,
    pub label: bool,
    /// A retrain was triggered by this sample.
    pub retrained: bool,
    /// The sample was consumed by a retrain cycle without being scored.
    pub skipped: bool,
}

impl Prediction {
    pub fn label_u8(&self) -> u8 {
        u8::from(self.label)
    }
}

/// A frozen logistic-regression model in one backend.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<N> {
    pub weights: WeightVector<N>,
    pub squash: Squash,
}

impl<N: Scalar> Classifier<N> {
    pub fn new(weights: WeightVector<N>, squash: Squash) -> Self {
        Self { weights, squash }
    }

    /// Score one feature vector; returns `(z, p)` in the backend type.
    pub fn score(&self, x: &[N]) -> Result<(N, N)> {
        let z = dot(&self.weights, x)?;
        Ok((z, self.squash.probability(z)))
    }

    pub fn classify(&self, x: &FeatureVector<N>) -> Result<Prediction> {
        let (z, p) = self.score(&x.values)?;
        Ok(Prediction { sample: x.sample, z: z.to_f64(), p: p.to_f64(), label: z >= N::ZERO, retrained: false, skipped: false })
    }
}
