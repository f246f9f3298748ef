//! Record-level plumbing: feature extraction over whole records and the
//! streaming detector built from a model file.

use crate::arith::Scalar;
use crate::classifier::Prediction;
use crate::data::{EEGRecord, ModelFile};
use crate::dsp::FilterBank;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureScaling, FeatureVector};
use crate::online::{OnlineClassifier, OnlineOptions};

/// Row-major feature rows for a whole segment.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    n_features: usize,
    data: Vec<T>,
}

impl<T: Copy> FeatureMatrix<T> {
    pub fn with_capacity(n_features: usize, rows: usize) -> Self {
        Self { n_features, data: Vec::with_capacity(n_features * rows) }
    }

    pub fn from_rows(n_features: usize, data: Vec<T>) -> Result<Self> {
        if n_features == 0 || data.len() % n_features != 0 {
            return Err(Error::invalid(format!("{} values do not form rows of {n_features}", data.len())));
        }
        Ok(Self { n_features, data })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.n_features)
    }

    pub fn push(&mut self, row: &[T]) {
        debug_assert_eq!(row.len(), self.n_features);
        self.data.extend_from_slice(row);
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.n_features, indices.len());
        for &i in indices {
            out.push(self.row(i));
        }
        out
    }
}

/// Unscaled float window sums for every sample of `record`.
pub fn extract_raw(record: &EEGRecord, bank: &FilterBank) -> Result<FeatureMatrix<f64>> {
    check_rate(record, bank)?;
    let mut ex = FeatureExtractor::<f64>::new(bank, record.n_channels())?;
    let mut out = FeatureMatrix::with_capacity(ex.n_features(), record.len());
    let mut frame = vec![0i16; record.n_channels()];
    for i in 0..record.len() {
        record.frame_into(i, &mut frame);
        out.push(ex.push_codes(&frame)?);
    }
    Ok(out)
}

/// Scaled features in backend `N` for every sample of `record`.
pub fn extract_scaled<N: Scalar>(record: &EEGRecord, bank: &FilterBank, scaling: &FeatureScaling) -> Result<FeatureMatrix<N>> {
    check_rate(record, bank)?;
    let mut ex = FeatureExtractor::<N>::new(bank, record.n_channels())?;
    if scaling.len() != ex.n_features() {
        return Err(Error::DimensionMismatch { expected: ex.n_features(), got: scaling.len() });
    }
    let mut out = FeatureMatrix::with_capacity(ex.n_features(), record.len());
    let mut frame = vec![0i16; record.n_channels()];
    let mut row = Vec::with_capacity(ex.n_features());
    for i in 0..record.len() {
        record.frame_into(i, &mut frame);
        scaling.apply::<N>(ex.push_codes(&frame)?, &mut row);
        out.push(&row);
    }
    Ok(out)
}

fn check_rate(record: &EEGRecord, bank: &FilterBank) -> Result<()> {
    if record.fs() != bank.fs {
        return Err(Error::invalid(format!("record is sampled at {} Hz but the filter bank is designed for {} Hz", record.fs(), bank.fs)));
    }
    Ok(())
}

/// Drive several classifiers over one precomputed feature stream.
pub fn run_classifiers<N: Scalar>(features: &FeatureMatrix<N>, classifiers: &mut [OnlineClassifier<N>]) -> Result<Vec<Vec<Prediction>>> {
    let mut out: Vec<Vec<Prediction>> = classifiers.iter().map(|_| Vec::with_capacity(features.len())).collect();
    let mut fv = FeatureVector { sample: 0, values: Vec::with_capacity(features.n_features()) };
    for (i, row) in features.rows().enumerate() {
        fv.sample = i as u64;
        fv.values.clear();
        fv.values.extend_from_slice(row);
        for (c, preds) in classifiers.iter_mut().zip(&mut out) {
            preds.push(c.step(&fv)?);
        }
    }
    Ok(out)
}

/// Streaming detector: raw ADC frames in, predictions out.
#[derive(Clone, Debug)]
pub struct Detector<N: Scalar> {
    extractor: FeatureExtractor<N>,
    scaling: FeatureScaling,
    classifier: OnlineClassifier<N>,
    features: FeatureVector<N>,
    fs: f64,
}

impl<N: Scalar> Detector<N> {
    pub fn new(bank: &FilterBank, scaling: FeatureScaling, classifier: OnlineClassifier<N>) -> Result<Self> {
        let n = scaling.len();
        let channels = n / crate::features::FEATURES_PER_CHANNEL;
        let extractor = FeatureExtractor::new(bank, channels)?;
        if extractor.n_features() != n || classifier.weights().n_features() != n {
            return Err(Error::DimensionMismatch { expected: extractor.n_features(), got: classifier.weights().n_features() });
        }
        let features = FeatureVector { sample: 0, values: Vec::with_capacity(n) };
        Ok(Self { extractor, scaling, classifier, features, fs: bank.fs })
    }

    pub fn from_model(model: &ModelFile, options: OnlineOptions, force_lut: bool) -> Result<Self> {
        let oc = OnlineClassifier::new(model.classifier::<N>(force_lut)?, model.hyperparams, options)?;
        Self::new(&model.filters, model.scaling.clone(), oc)
    }

    pub fn channels(&self) -> usize {
        self.extractor.channels()
    }

    pub fn classifier(&self) -> &OnlineClassifier<N> {
        &self.classifier
    }

    pub fn step(&mut self, frame: &[i16]) -> Result<Prediction> {
        self.features.sample = self.extractor.position();
        let raw = self.extractor.push_codes(frame)?;
        self.scaling.apply::<N>(raw, &mut self.features.values);
        self.classifier.step(&self.features)
    }

    pub fn run(&mut self, record: &EEGRecord) -> Result<Vec<Prediction>> {
        if record.n_channels() != self.channels() {
            return Err(Error::DimensionMismatch { expected: self.channels(), got: record.n_channels() });
        }
        if record.fs() != self.fs {
            return Err(Error::invalid(format!("record is sampled at {} Hz, the model expects {} Hz", record.fs(), self.fs)));
        }
        let mut frame = vec![0i16; record.n_channels()];
        let mut out = Vec::with_capacity(record.len());
        for i in 0..record.len() {
            record.frame_into(i, &mut frame);
            out.push(self.step(&frame)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::fixedpoint::Q6_10;
    use crate::train::{train_model, TrainOptions};

    fn short_record() -> EEGRecord {
        let cfg = SynthConfig {
            duration_s: 600.0,
            fs: 256.0,
            channels: 2,
            seizures_per_hour: 30.0,
            first_onset_s: 20.0,
            ..SynthConfig::default()
        };
        synth_generate(&cfg).unwrap()
    }

    #[test]
    fn detector_matches_batch_pipeline() {
        let rec = short_record();
        let opts = TrainOptions { grid: None, ..TrainOptions::default() };
        let model = train_model(&rec, &opts).unwrap().model;
        let mut det = Detector::<Q6_10>::from_model(&model, OnlineOptions::default(), false).unwrap();
        let streamed = det.run(&rec).unwrap();

        let features = extract_scaled::<Q6_10>(&rec, &model.filters, &model.scaling).unwrap();
        let oc = OnlineClassifier::new(model.classifier::<Q6_10>(false).unwrap(), model.hyperparams, OnlineOptions::default()).unwrap();
        let batch = run_classifiers(&features, &mut [oc]).unwrap().pop().unwrap();
        assert_eq!(streamed, batch);
        assert_eq!(streamed.len(), rec.len());
        assert!(streamed.iter().enumerate().all(|(i, p)| p.sample == i as u64));
    }

    #[test]
    fn frozen_detector_keeps_weights() {
        let rec = short_record();
        let model = train_model(&rec, &TrainOptions { grid: None, ..TrainOptions::default() }).unwrap().model;
        let start = model.weights.get::<Q6_10>().unwrap();
        let mut det = Detector::<Q6_10>::from_model(&model, OnlineOptions::frozen(), false).unwrap();
        let preds = det.run(&rec).unwrap();
        assert_eq!(det.classifier().weights(), &start);
        assert!(preds.iter().all(|p| !p.retrained));
    }

    #[test]
    fn reloaded_model_reproduces_predictions() {
        let rec = short_record();
        let model = train_model(&rec, &TrainOptions { grid: None, ..TrainOptions::default() }).unwrap().model;
        let back = ModelFile::from_toml(&model.to_toml().unwrap()).unwrap();
        let a = Detector::<Q6_10>::from_model(&model, OnlineOptions::default(), false).unwrap().run(&rec).unwrap();
        let b = Detector::<Q6_10>::from_model(&back, OnlineOptions::default(), false).unwrap().run(&rec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn detector_rejects_mismatched_records() {
        let rec = short_record();
        let model = train_model(&rec, &TrainOptions { grid: None, ..TrainOptions::default() }).unwrap().model;
        let mut det = Detector::<f64>::from_model(&model, OnlineOptions::default(), false).unwrap();
        assert!(det.run(&rec.select_channels(&["ch0".to_string()]).unwrap()).is_err());
        assert!(extract_raw(&rec, &FilterBank::reference(1000.0).unwrap()).is_err());
    }

    #[test]
    fn matrix_shape() {
        assert!(FeatureMatrix::from_rows(3, vec![1.0; 7]).is_err());
        let m = FeatureMatrix::from_rows(2, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.select(&[2, 0]).rows().collect::<Vec<_>>(), vec![&[5, 6][..], &[1, 2][..]]);
    }
}
