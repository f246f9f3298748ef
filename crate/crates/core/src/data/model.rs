//! Versioned TOML model file.
//!
//! Float weights are written as shortest round-trip decimals, fixed-point
//! weights as raw Q6.10 integers, so loading a model always reproduces the
//! saved classifier exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arith::{ArithMode, Scalar};
use crate::classifier::{Classifier, LogisticLut, Squash, WeightVector};
use crate::dsp::FilterBank;
use crate::error::{Error, Result};
use crate::features::{FeatureScaling, FEATURES_PER_CHANNEL};
use crate::fixedpoint::Q6_10;
use crate::online::Hyperparams;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    Float(WeightVector<f64>),
    Fixed(WeightVector<Q6_10>),
}

impl Weights {
    pub fn mode(&self) -> ArithMode {
        match self {
            Weights::Float(_) => ArithMode::Float,
            Weights::Fixed(_) => ArithMode::Fixed,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Weights::Float(w) => w.to_f64(),
            Weights::Fixed(w) => w.to_f64(),
        }
    }

    pub fn has_bias(&self) -> bool {
        match self {
            Weights::Float(w) => w.has_bias(),
            Weights::Fixed(w) => w.has_bias(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Weights::Float(w) => w.n_features(),
            Weights::Fixed(w) => w.n_features(),
        }
    }

    /// The weights in backend `N`. Conversion from fixed to float is exact;
    /// float to fixed rounds to the Q6.10 grid.
    pub fn get<N: Scalar>(&self) -> Result<WeightVector<N>> {
        WeightVector::from_f64(&self.to_f64(), self.has_bias())
    }

    pub fn from_backend<N: Scalar>(w: &WeightVector<N>) -> Result<Self> {
        Ok(match N::MODE {
            ArithMode::Float => Weights::Float(WeightVector::from_f64(&w.to_f64(), w.has_bias())?),
            ArithMode::Fixed => Weights::Fixed(WeightVector::from_f64(&w.to_f64(), w.has_bias())?),
        })
    }
}

/// How the model was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub l1_lambda: f64,
    /// Sample indices `[train_end, val_end]` of the causal split.
    #[serde(default)]
    pub split: Vec<usize>,
    /// Feature indices that survived L1 selection.
    #[serde(default)]
    pub selected_features: Vec<usize>,
    #[serde(default)]
    pub train_samples: usize,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub final_loss: f64,
    #[serde(default)]
    pub tool_version: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub channels: usize,
    pub channel_names: Vec<String>,
    pub filters: FilterBank,
    pub scaling: FeatureScaling,
    pub weights: Weights,
    pub lut: LogisticLut,
    pub hyperparams: Hyperparams,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    bias: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<Vec<i16>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    version: u32,
    mode: ArithMode,
    channels: usize,
    #[serde(default)]
    channel_names: Vec<String>,
    fs: f64,
    hyperparams: Hyperparams,
    weights: WeightsDoc,
    scaling: FeatureScaling,
    lut: LogisticLut,
    filters: FilterBank,
    #[serde(default)]
    provenance: Provenance,
}

impl ModelFile {
    pub fn mode(&self) -> ArithMode {
        self.weights.mode()
    }

    pub fn fs(&self) -> f64 {
        self.filters.fs
    }

    pub fn n_features(&self) -> usize {
        self.channels * FEATURES_PER_CHANNEL
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format("model", m));
        if self.channels == 0 {
            return bad("channel count must be positive".into());
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.channels {
            return bad(format!("{} channel names for {} channels", self.channel_names.len(), self.channels));
        }
        if self.weights.n_features() != self.n_features() {
            return bad(format!(
                "{} feature weights for {} channels (expected {})",
                self.weights.n_features(),
                self.channels,
                self.n_features()
            ));
        }
        if self.scaling.len() != self.n_features() {
            return bad(format!("{} scaling exponents, expected {}", self.scaling.len(), self.n_features()));
        }
        self.hyperparams.validate()?;
        // rejects unstable or malformed coefficient sets
        self.filters.instantiate::<f64>()?;
        self.filters.instantiate::<Q6_10>()?;
        Ok(())
    }

    /// Classifier in backend `N`, squashing with the LUT in fixed point and
    /// the exact logistic in float unless `force_lut`.
    pub fn classifier<N: Scalar>(&self, force_lut: bool) -> Result<Classifier<N>> {
        let squash = if force_lut { Squash::Lut(self.lut.clone()) } else { Squash::for_mode::<N>(&self.lut) };
        Ok(Classifier::new(self.weights.get::<N>()?, squash))
    }

    pub fn to_toml(&self) -> Result<String> {
        self.validate()?;
        let weights = match &self.weights {
            Weights::Float(w) => WeightsDoc { bias: w.has_bias(), values: Some(w.to_f64()), raw: None },
            Weights::Fixed(w) => WeightsDoc { bias: w.has_bias(), values: None, raw: Some(w.as_slice().iter().map(|q| q.raw()).collect()) },
        };
        let doc = ModelDoc {
            version: MODEL_VERSION,
            mode: self.mode(),
            channels: self.channels,
            channel_names: self.channel_names.clone(),
            fs: self.fs(),
            hyperparams: self.hyperparams,
            weights,
            scaling: self.scaling.clone(),
            lut: self.lut.clone(),
            filters: self.filters.clone(),
            provenance: self.provenance.clone(),
        };
        toml::to_string(&doc).map_err(|e| Error::format("model", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ModelDoc = toml::from_str(text).map_err(|e| Error::format("model", e.to_string()))?;
        if doc.version != MODEL_VERSION {
            return Err(Error::format("model", format!("unsupported model version {} (expected {MODEL_VERSION})", doc.version)));
        }
        if doc.fs != doc.filters.fs {
            return Err(Error::format("model", format!("fs {} disagrees with the filter bank's {}", doc.fs, doc.filters.fs)));
        }
        let w = doc.weights;
        let weights = match (doc.mode, w.values, w.raw) {
            (ArithMode::Float, Some(v), None) => Weights::Float(WeightVector::new(v, w.bias)?),
            (ArithMode::Fixed, None, Some(r)) => Weights::Fixed(WeightVector::new(r.into_iter().map(Q6_10::from_raw).collect(), w.bias)?),
            (ArithMode::Float, ..) => return Err(Error::format("model", "float model needs `weights.values` only")),
            (ArithMode::Fixed, ..) => return Err(Error::format("model", "fixed model needs `weights.raw` only")),
        };
        let m = ModelFile {
            channels: doc.channels,
            channel_names: doc.channel_names,
            filters: doc.filters,
            scaling: doc.scaling,
            weights,
            lut: doc.lut,
            hyperparams: doc.hyperparams,
            provenance: doc.provenance,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        super::write_atomic(path.as_ref(), self.to_toml()?.as_bytes())
    }
}
