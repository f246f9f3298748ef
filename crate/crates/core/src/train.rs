//! Offline phase: causal split, class balancing, L1-regularised logistic
//! regression and hyperparameter tuning.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{ArithMode, Scalar};
use crate::classifier::{logistic_exact, Classifier, LogisticLut, WeightVector};
use crate::data::{Annotation, EEGRecord, ModelFile, Provenance, Weights};
use crate::dsp::FilterBank;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig};
use crate::features::FeatureScaling;
use crate::fixedpoint::Q6_10;
use crate::online::{Hyperparams, OnlineClassifier, OnlineOptions};
use crate::pipeline::{extract_raw, extract_scaled, run_classifiers, FeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub min_train_val_seizures: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.15, val_frac: 0.15, test_frac: 0.70, min_train_val_seizures: 2 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_frac, self.val_frac, self.test_frac];
        if f.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
        }
        if self.train_frac == 0.0 {
            return Err(Error::invalid("training fraction must be positive"));
        }
        Ok(())
    }
}

/// Sample boundaries of a causal split: train `[0, train_end)`, validation
/// `[train_end, val_end)`, test `[val_end, len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

impl Split {
    pub fn segments(&self, record: &EEGRecord) -> Result<(EEGRecord, EEGRecord, EEGRecord)> {
        Ok((record.slice(0, self.train_end)?, record.slice(self.train_end, self.val_end)?, record.slice(self.val_end, self.len)?))
    }
}

/// Split by time fractions, then adjust so that no boundary cuts a
/// seizure, training holds at least one seizure, and training plus
/// validation hold `min_train_val_seizures` (or every seizure if fewer),
/// with at least one in validation when the record has two or more.
pub fn split(record: &EEGRecord, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = record.len();
    let ranges: Vec<(usize, usize)> = record.annotations().iter().map(|a| a.sample_range(record.fs())).collect();
    if ranges.is_empty() {
        return Err(Error::invalid("record has no annotated seizures; cannot train"));
    }
    let out_of_seizure = |b: usize| ranges.iter().find(|&&(s, e)| s < b && b < e).map_or(b, |&(_, e)| e);
    let ends_by = |b: usize| ranges.iter().filter(|&&(_, e)| e <= b).count();

    let mut train_end = out_of_seizure(((n as f64) * spec.train_frac).round() as usize);
    if ends_by(train_end) == 0 {
        train_end = ranges[0].1;
    }
    let mut val_end = out_of_seizure((((n as f64) * (spec.train_frac + spec.val_frac)).round() as usize).max(train_end));
    let need = spec.min_train_val_seizures.clamp(1, ranges.len());
    if ends_by(val_end) < need {
        val_end = ranges[need - 1].1;
    }
    if ranges.len() >= 2 && ends_by(val_end) == ends_by(train_end) {
        let k = ends_by(train_end);
        if k < ranges.len() {
            val_end = ranges[k].1;
        }
    }
    if ranges.len() < spec.min_train_val_seizures {
        log::warn!(
            "record has {} seizure(s), fewer than the {} wanted for training and validation",
            ranges.len(),
            spec.min_train_val_seizures
        );
    }
    Ok(Split { train_end: train_end.min(n), val_end: val_end.min(n), len: n })
}

/// Keep every sample of the minority class and the same number of majority
/// samples, choosing those closest in time to a class boundary (ties go to
/// the earlier sample). Returned indices are sorted.
pub fn balance(labels: &[bool]) -> Vec<usize> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || pos == neg {
        return (0..labels.len()).collect();
    }
    let majority = pos > neg;
    let keep = pos.min(neg);
    // distance to the nearest sample of the other class
    let n = labels.len();
    let mut dist = vec![usize::MAX; n];
    let mut last = None;
    for i in 0..n {
        if labels[i] != majority {
            last = Some(i);
        } else if let Some(j) = last {
            dist[i] = i - j;
        }
    }
    last = None;
    for i in (0..n).rev() {
        if labels[i] != majority {
            last = Some(i);
        } else if let Some(j) = last {
            dist[i] = dist[i].min(j - i);
        }
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&i| labels[i] == majority).collect();
    candidates.sort_by_key(|&i| (dist[i], i));
    let mut out: Vec<usize> = (0..n).filter(|&i| labels[i] != majority).collect();
    out.extend_from_slice(&candidates[..keep]);
    out.sort_unstable();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub l1_lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub balance: bool,
    pub bias: bool,
    /// Use every `stride`-th training row.
    pub stride: usize,
    /// Level the 99.9th percentile of each training feature is scaled to.
    pub feature_target: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { l1_lambda: 1e-2, max_iters: 500, tol: 1e-5, balance: true, bias: true, stride: 1, feature_target: FeatureScaling::TARGET }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return Err(Error::invalid(format!("l1_lambda must be >= 0 (got {})", self.l1_lambda)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 || self.stride == 0 {
            return Err(Error::invalid("tol, max_iters and stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Weights over every input feature (dropped ones are 0), bias last.
    pub weights: WeightVector<f64>,
    pub selected: Vec<usize>,
    /// Penalised objective after each stage-1 iteration.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub final_loss: f64,
}

/// Standardised design over a subset of columns.
struct Design {
    cols: Vec<usize>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    bias: bool,
}

const CHUNK: usize = 4096;

impl Design {
    fn new(features: &FeatureMatrix<f64>, labels: &[bool], cols: Vec<usize>, bias: bool) -> Self {
        let rows = features.len();
        let d = cols.len();
        let mut mean = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for row in features.rows() {
            for (k, &c) in cols.iter().enumerate() {
                mean[k] += row[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in features.rows() {
            for (k, &c) in cols.iter().enumerate() {
                sd[k] += (row[c] - mean[k]).powi(2);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / rows as f64).sqrt());
        if !bias {
            // without an intercept, centring would change the model
            mean.iter_mut().for_each(|m| *m = 0.0);
            for (k, &c) in cols.iter().enumerate() {
                sd[k] = (features.rows().map(|r| r[c] * r[c]).sum::<f64>() / rows as f64).sqrt();
            }
        }
        let mut x = Vec::with_capacity(rows * d);
        for row in features.rows() {
            for (k, &c) in cols.iter().enumerate() {
                x.push((row[c] - mean[k]) / sd[k]);
            }
        }
        let y = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
        Self { cols, mean, sd, x, y, bias }
    }

    fn dim(&self) -> usize {
        self.cols.len()
    }

    /// Mean cross-entropy and its gradient (bias gradient last).
    fn loss_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>) {
        let d = self.dim();
        let partial: Vec<(f64, Vec<f64>)> = self
            .x
            .par_chunks(CHUNK * d.max(1))
            .zip(self.y.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                let mut g = vec![0.0; d + 1];
                let mut loss = 0.0;
                for (row, &y) in xs.chunks_exact(d.max(1)).zip(ys) {
                    let row = &row[..d];
                    let z = b + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    loss += softplus(z) - y * z;
                    let r = logistic_exact(z) - y;
                    for (gk, &xk) in g.iter_mut().zip(row) {
                        *gk += r * xk;
                    }
                    g[d] += r;
                }
                (loss, g)
            })
            .collect();
        let n = self.y.len() as f64;
        let mut loss = 0.0;
        let mut g = vec![0.0; d + 1];
        for (l, pg) in partial {
            loss += l;
            g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
        }
        g.iter_mut().for_each(|v| *v /= n);
        if !self.bias {
            g[d] = 0.0;
        }
        (loss / n, g)
    }

    fn loss(&self, w: &[f64], b: f64) -> f64 {
        self.loss_grad(w, b).0
    }

    /// Back to unstandardised weights over `n_features`, bias last.
    fn unstandardise(&self, w: &[f64], b: f64, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features + 1];
        let mut bias = b;
        for (k, &c) in self.cols.iter().enumerate() {
            out[c] = w[k] / self.sd[k];
            bias -= w[k] * self.mean[k] / self.sd[k];
        }
        out[n_features] = bias;
        out
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

struct Descent {
    w: Vec<f64>,
    b: f64,
    history: Vec<f64>,
    iterations: usize,
}

/// Proximal gradient descent with backtracking on
/// `loss + lambda * |w|_1`. The objective never increases.
fn proximal_descent(design: &Design, lambda: f64, max_iters: usize, tol: f64) -> Descent {
    let d = design.dim();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let objective = |w: &[f64], f: f64| f + lambda * w.iter().map(|v| v.abs()).sum::<f64>();
    let (mut f, mut g) = design.loss_grad(&w, b);
    let mut history = vec![objective(&w, f)];
    let mut t = 4.0 / (d as f64 + 1.0).max(1.0);
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..60 {
            let wn: Vec<f64> = w.iter().zip(&g).map(|(wk, gk)| soft_threshold(wk - t * gk, t * lambda)).collect();
            let bn = if design.bias { b - t * g[d] } else { b };
            let fn_ = design.loss(&wn, bn);
            let dw: Vec<f64> = wn.iter().zip(&w).map(|(a, c)| a - c).chain([bn - b]).collect();
            let lin: f64 = dw.iter().zip(&g).map(|(a, c)| a * c).sum();
            let sq: f64 = dw.iter().map(|v| v * v).sum();
            if fn_ <= f + lin + sq / (2.0 * t) + 1e-15 * f.abs() {
                accepted = Some((wn, bn, dw));
                break;
            }
            t *= 0.5;
        }
        let Some((wn, bn, dw)) = accepted else { break };
        let step_norm = dw.iter().map(|v| v.abs()).fold(0.0, f64::max) / t;
        let candidate = design.loss_grad(&wn, bn);
        // guard against round-off making the objective creep up
        if objective(&wn, candidate.0) > *history.last().unwrap() {
            break;
        }
        w = wn;
        b = bn;
        (f, g) = candidate;
        history.push(objective(&w, f));
        if step_norm < tol {
            break;
        }
    }
    Descent { w, b, history, iterations }
}

/// Two-stage fit: L1-penalised selection, then an unpenalised refit on the
/// surviving features. Exact duplicate columns are reduced to their first
/// copy and constant columns are dropped before fitting.
pub fn fit_offline(features: &FeatureMatrix<f64>, labels: &[bool], cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: labels.len() });
    }
    if features.is_empty() {
        return Err(Error::Training("no training rows".into()));
    }
    if features.rows().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("non-finite feature value".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    let n_features = features.n_features();
    let column = |c: usize| features.rows().map(move |r| r[c]);
    let mut cols: Vec<usize> = Vec::new();
    for c in 0..n_features {
        let first = features.row(0)[c];
        if column(c).all(|v| v == first) {
            continue;
        }
        if cols.iter().any(|&k| column(k).eq(column(c))) {
            continue;
        }
        cols.push(c);
    }

    let stage1 = Design::new(features, labels, cols, cfg.bias);
    let d1 = proximal_descent(&stage1, cfg.l1_lambda, cfg.max_iters, cfg.tol);
    let survivors: Vec<usize> = stage1.cols.iter().zip(&d1.w).filter(|(_, &w)| w != 0.0).map(|(&c, _)| c).collect();

    let (weights, iterations, final_loss) = if survivors.is_empty() {
        // penalty removed every feature: bias only
        let w = stage1.unstandardise(&vec![0.0; stage1.dim()], d1.b, n_features);
        (w, d1.iterations, *d1.history.last().unwrap())
    } else {
        let stage2 = Design::new(features, labels, survivors.clone(), cfg.bias);
        let d2 = proximal_descent(&stage2, 0.0, cfg.max_iters, cfg.tol);
        let w = stage2.unstandardise(&d2.w, d2.b, n_features);
        (w, d1.iterations + d2.iterations, *d2.history.last().unwrap())
    };
    let mut weights = weights;
    if !cfg.bias {
        weights.pop();
    }
    Ok(FitResult { weights: WeightVector::new(weights, cfg.bias)?, selected: survivors, loss_history: d1.history, iterations, final_loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneGrid {
    pub ws: Vec<usize>,
    pub ct: Vec<f64>,
    /// Minimum validation specificity, percent.
    pub specificity_floor: f64,
}

impl Default for TuneGrid {
    fn default() -> Self {
        Self { ws: (1..=15).collect(), ct: vec![0.6, 0.7, 0.8, 0.9], specificity_floor: 95.0 }
    }
}

impl TuneGrid {
    pub fn points(&self) -> Vec<(usize, f64)> {
        self.ws.iter().flat_map(|&w| self.ct.iter().map(move |&c| (w, c))).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunePoint {
    pub ws: usize,
    pub ct: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub far_per_day: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub best: Hyperparams,
    pub points: Vec<TunePoint>,
    /// False when no point reached the specificity floor.
    pub met_floor: bool,
}

/// Choose among evaluated points: highest sensitivity subject to the
/// specificity floor, then higher specificity, then smaller WS. When no
/// point meets the floor, the most specific point wins.
pub fn select_best(points: &[TunePoint], floor: f64) -> Option<(usize, bool)> {
    let eligible: Vec<usize> = (0..points.len()).filter(|&i| points[i].specificity >= floor).collect();
    let better = |a: &TunePoint, b: &TunePoint| {
        (a.sensitivity, a.specificity, std::cmp::Reverse(a.ws)).partial_cmp(&(b.sensitivity, b.specificity, std::cmp::Reverse(b.ws)))
    };
    if !eligible.is_empty() {
        let mut best = eligible[0];
        for &i in &eligible[1..] {
            if better(&points[i], &points[best]) == Some(std::cmp::Ordering::Greater) {
                best = i;
            }
        }
        return Some((best, true));
    }
    let mut best = None::<usize>;
    for i in 0..points.len() {
        let p = &points[i];
        let take = best.is_none_or(|b| {
            let q = &points[b];
            (p.specificity, p.sensitivity, std::cmp::Reverse(p.ws)) > (q.specificity, q.sensitivity, std::cmp::Reverse(q.ws))
        });
        if take {
            best = Some(i);
        }
    }
    best.map(|b| (b, false))
}

/// Run the online pipeline for every grid point over a validation stream.
pub fn tune<N: Scalar>(
    classifier: &Classifier<N>,
    base: Hyperparams,
    options: OnlineOptions,
    features: &FeatureMatrix<N>,
    fs: f64,
    annotations: &[Annotation],
    eval: &EvalConfig,
    grid: &TuneGrid,
) -> Result<TuneResult> {
    let grid_points = grid.points();
    if grid_points.is_empty() {
        return Err(Error::invalid("tuning grid is empty"));
    }
    let points = grid_points
        .par_iter()
        .map(|&(ws, ct)| {
            let h = Hyperparams { ws, ct, ..base };
            let mut oc = [OnlineClassifier::new(classifier.clone(), h, options)?];
            let preds = run_classifiers(features, &mut oc)?.pop().expect("one run");
            let labels: Vec<bool> = preds.iter().map(|p| p.label).collect();
            let r = evaluate(&labels, fs, annotations, eval)?;
            Ok(TunePoint {
                ws,
                ct,
                sensitivity: r.sensitivity_event,
                specificity: r.specificity_sample,
                far_per_day: r.false_alarms_per_day,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (i, met_floor) = select_best(&points, grid.specificity_floor).expect("non-empty grid");
    if !met_floor {
        log::warn!(
            "no grid point reaches {}% validation specificity; using the most specific (ws={}, ct={})",
            grid.specificity_floor,
            points[i].ws,
            points[i].ct
        );
    }
    Ok(TuneResult { best: Hyperparams { ws: points[i].ws, ct: points[i].ct, ..base }, points, met_floor })
}

pub fn write_tuning_report<W: Write>(points: &[TunePoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::format("tuning report", e.to_string());
    wtr.write_record(["ws", "ct", "sensitivity", "specificity", "far_per_day"]).map_err(err)?;
    for p in points {
        wtr.write_record([
            p.ws.to_string(),
            p.ct.to_string(),
            p.sensitivity.to_string(),
            p.specificity.to_string(),
            p.far_per_day.to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("tuning report", e))
}

/// Everything the end-to-end offline phase needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub mode: ArithMode,
    pub split: SplitSpec,
    pub config: TrainConfig,
    /// `None` skips tuning and keeps `hyperparams`.
    pub grid: Option<TuneGrid>,
    pub hyperparams: Hyperparams,
    pub online: OnlineOptions,
    pub eval: EvalConfig,
    /// Defaults to the Q6.10-rounded reference bank for the record's rate.
    pub filters: Option<FilterBank>,
    pub seed: u64,
    pub source: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            mode: ArithMode::Fixed,
            split: SplitSpec::default(),
            config: TrainConfig::default(),
            grid: Some(TuneGrid::default()),
            hyperparams: Hyperparams::default(),
            online: OnlineOptions::default(),
            eval: EvalConfig::default(),
            filters: None,
            seed: 0,
            source: String::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelFile,
    pub split: Split,
    pub fit: FitResult,
    pub tuning: Option<TuneResult>,
}

/// Split, fit on the training segment, tune on the validation segment.
pub fn train_model(record: &EEGRecord, opts: &TrainOptions) -> Result<TrainOutcome> {
    let bank = match &opts.filters {
        Some(b) => b.clone(),
        None => FilterBank::reference(record.fs())?.quantized(),
    };
    let sp = split(record, &opts.split)?;
    let (train_seg, val_seg, _) = sp.segments(record)?;

    let raw = extract_raw(&train_seg, &bank)?;
    let scaling = FeatureScaling::fit_to(raw.rows(), raw.n_features(), opts.config.feature_target)?;
    let labels = train_seg.labels();
    let mut rows: Vec<usize> = if opts.config.balance { balance(&labels) } else { (0..labels.len()).collect() };
    if opts.config.stride > 1 {
        rows = rows.into_iter().step_by(opts.config.stride).collect();
    }
    let mut scaled = FeatureMatrix::with_capacity(raw.n_features(), rows.len());
    for &i in &rows {
        scaled.push(&scaling.scale_f64(raw.row(i)));
    }
    drop(raw);
    let picked_labels: Vec<bool> = rows.iter().map(|&i| labels[i]).collect();
    let fit = fit_offline(&scaled, &picked_labels, &opts.config)?;

    let weights = match opts.mode {
        ArithMode::Float => Weights::Float(fit.weights.clone()),
        ArithMode::Fixed => {
            let w = fit.weights.to_f64();
            if let Some(v) = w.iter().find(|v| v.abs() > Q6_10::MAX.to_real()) {
                log::warn!("trained weight {v} saturates in Q6.10");
            }
            Weights::Fixed(WeightVector::from_f64(&w, fit.weights.has_bias())?)
        }
    };
    let mut model = ModelFile {
        channels: record.n_channels(),
        channel_names: record.channel_names(),
        filters: bank,
        scaling,
        weights,
        lut: LogisticLut::default(),
        hyperparams: opts.hyperparams,
        provenance: Provenance {
            source: opts.source.clone(),
            seed: opts.seed,
            l1_lambda: opts.config.l1_lambda,
            split: vec![sp.train_end, sp.val_end],
            selected_features: fit.selected.clone(),
            train_samples: rows.len(),
            iterations: fit.iterations,
            final_loss: fit.final_loss,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };

    let tuning = match &opts.grid {
        Some(grid) if !val_seg.is_empty() => Some(match opts.mode {
            ArithMode::Float => tune_segment::<f64>(&model, &val_seg, opts, grid)?,
            ArithMode::Fixed => tune_segment::<Q6_10>(&model, &val_seg, opts, grid)?,
        }),
        _ => None,
    };
    if let Some(t) = &tuning {
        model.hyperparams = t.best;
    }
    model.validate()?;
    Ok(TrainOutcome { model, split: sp, fit, tuning })
}

fn tune_segment<N: Scalar>(model: &ModelFile, val: &EEGRecord, opts: &TrainOptions, grid: &TuneGrid) -> Result<TuneResult> {
    let features = extract_scaled::<N>(val, &model.filters, &model.scaling)?;
    let classifier = model.classifier::<N>(false)?;
    tune(&classifier, opts.hyperparams, opts.online, &features, val.fs(), val.annotations(), &opts.eval, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Channel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn record(n: usize, fs: f64, ann: Vec<Annotation>) -> EEGRecord {
        EEGRecord::new(fs, vec![Channel { name: "a".into(), samples: vec![0; n] }], ann).unwrap()
    }

    #[test]
    fn split_uniform_fractions() {
        // 100 h at 1 Hz with a seizure every 5 h
        let ann: Vec<Annotation> =
            (0..20).map(|k| Annotation::new(5.0 * 3600.0 * k as f64 + 100.0, 5.0 * 3600.0 * k as f64 + 160.0)).collect();
        let r = record(360_000, 1.0, ann);
        let s = split(&r, &SplitSpec::default()).unwrap();
        assert_eq!((s.train_end, s.val_end), (54_000, 108_000));
        let (a, b, c) = s.segments(&r).unwrap();
        assert_eq!(a.len() + b.len() + c.len(), r.len());
        let mut joined = a.labels();
        joined.extend(b.labels());
        joined.extend(c.labels());
        assert_eq!(joined, r.labels());
    }

    #[test]
    fn split_extends_past_second_seizure() {
        let ann = vec![Annotation::new(10.0, 12.0), Annotation::new(60.0, 65.0), Annotation::new(80.0, 82.0)];
        let r = record(100, 1.0, ann);
        let s = split(&r, &SplitSpec::default()).unwrap();
        assert_eq!(s.train_end, 15);
        assert_eq!(s.val_end, 65);
    }

    #[test]
    fn split_moves_boundaries_out_of_seizures() {
        let ann = vec![Annotation::new(14.0, 20.0), Annotation::new(28.0, 33.0)];
        let r = record(100, 1.0, ann);
        let s = split(&r, &SplitSpec::default()).unwrap();
        assert_eq!((s.train_end, s.val_end), (20, 33));
        // no seizure in the first 15%: training grows to hold the first one
        let r = record(100, 1.0, vec![Annotation::new(40.0, 45.0), Annotation::new(50.0, 55.0)]);
        let s = split(&r, &SplitSpec::default()).unwrap();
        assert_eq!((s.train_end, s.val_end), (45, 55));
        assert!(split(&record(100, 1.0, vec![]), &SplitSpec::default()).is_err());
    }

    #[test]
    fn balance_rules() {
        let mut labels = vec![false; 100];
        labels[40..50].iter_mut().for_each(|v| *v = true);
        let kept = balance(&labels);
        assert_eq!(kept.len(), 20);
        assert_eq!(kept, (35..55).collect::<Vec<_>>());
        let even = [true, false, true, false];
        assert_eq!(balance(&even), vec![0, 1, 2, 3]);
        let mostly_seizure = [false, true, true, true, true, true];
        assert_eq!(balance(&mostly_seizure), vec![0, 1]);
    }

    fn clusters(n: usize, seed: u64, sep: f64) -> (FeatureMatrix<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut m = FeatureMatrix::with_capacity(3, n);
        let mut y = Vec::new();
        for i in 0..n {
            let l = i % 2 == 0;
            let c = if l { sep } else { -sep };
            m.push(&[c + noise.sample(&mut rng), 0.5 * c + noise.sample(&mut rng), rng.random_range(-1.0..1.0)]);
            y.push(l);
        }
        (m, y)
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let (m, y) = clusters(400, 1, 3.0);
        let fit = fit_offline(&m, &y, &TrainConfig::default()).unwrap();
        let c = Classifier::new(fit.weights.clone(), crate::classifier::Squash::Exact);
        let correct = m.rows().zip(&y).filter(|(r, &l)| (c.score(r).unwrap().0 >= 0.0) == l).count();
        assert_eq!(correct, 400);
        assert!(fit.loss_history.windows(2).all(|w| w[1] <= w[0]), "loss must not increase");
    }

    #[test]
    fn duplicate_column_keeps_one() {
        let (m, y) = clusters(300, 2, 1.0);
        let mut dup = FeatureMatrix::with_capacity(2, m.len());
        for r in m.rows() {
            dup.push(&[r[0], r[0]]);
        }
        let fit = fit_offline(&dup, &y, &TrainConfig { l1_lambda: 0.01, ..TrainConfig::default() }).unwrap();
        let w = fit.weights.features();
        assert!(w[0] == 0.0 || w[1] == 0.0, "{w:?}");
        assert_eq!(fit.selected.len(), 1);
    }

    #[test]
    fn huge_penalty_leaves_bias_only() {
        let (m, y) = clusters(200, 3, 1.0);
        let fit = fit_offline(&m, &y, &TrainConfig { l1_lambda: 1e3, ..TrainConfig::default() }).unwrap();
        assert!(fit.weights.features().iter().all(|&w| w == 0.0));
        assert!(fit.selected.is_empty());
        // balanced classes: the bias sits at zero log-odds
        assert!(fit.weights.bias().unwrap().abs() < 1e-6);
    }

    #[test]
    fn fit_errors() {
        let (m, y) = clusters(10, 4, 1.0);
        assert!(fit_offline(&m, &[true; 10], &TrainConfig::default()).is_err());
        assert!(fit_offline(&m, &y[..9], &TrainConfig::default()).is_err());
        let bad = FeatureMatrix::from_rows(1, vec![f64::NAN, 1.0]).unwrap();
        assert!(fit_offline(&bad, &[true, false], &TrainConfig::default()).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let (m, y) = clusters(5000, 5, 0.7);
        let a = fit_offline(&m, &y, &TrainConfig::default()).unwrap();
        let b = fit_offline(&m, &y, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_rule() {
        let p = |ws, ct, sensitivity, specificity| TunePoint { ws, ct, sensitivity, specificity, far_per_day: 0.0 };
        let pts = [p(1, 0.6, 100.0, 90.0), p(2, 0.6, 80.0, 97.0), p(3, 0.6, 80.0, 99.0), p(1, 0.7, 80.0, 99.0)];
        assert_eq!(select_best(&pts, 95.0), Some((3, true)));
        assert_eq!(select_best(&pts[..1], 95.0), Some((0, false)));
        let none = [p(1, 0.6, 50.0, 90.0), p(2, 0.6, 60.0, 92.0)];
        assert_eq!(select_best(&none, 95.0), Some((1, false)));
        assert_eq!(select_best(&[], 95.0), None);
    }

    #[test]
    fn tuning_report_format() {
        let pts = [TunePoint { ws: 3, ct: 0.8, sensitivity: 75.0, specificity: 99.5, far_per_day: 1.5 }];
        let mut buf = Vec::new();
        write_tuning_report(&pts, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "ws,ct,sensitivity,specificity,far_per_day\n3,0.8,75,99.5,1.5\n");
    }

    fn small_synth() -> EEGRecord {
        let cfg = crate::data::SynthConfig {
            duration_s: 900.0,
            fs: 256.0,
            channels: 2,
            seizures_per_hour: 24.0,
            first_onset_s: 20.0,
            ..Default::default()
        };
        crate::data::synth_generate(&cfg).unwrap()
    }

    #[test]
    fn tune_matches_direct_loop() {
        let rec = small_synth();
        let out = train_model(&rec, &TrainOptions { grid: None, ..TrainOptions::default() }).unwrap();
        let (_, val, _) = out.split.segments(&rec).unwrap();
        let features = extract_scaled::<Q6_10>(&val, &out.model.filters, &out.model.scaling).unwrap();
        let classifier = out.model.classifier::<Q6_10>(false).unwrap();
        let grid = TuneGrid { ws: vec![1, 3, 6], ct: vec![0.6, 0.9], ..TuneGrid::default() };
        let eval = EvalConfig::default();
        let got = tune(&classifier, Hyperparams::default(), OnlineOptions::default(), &features, val.fs(), val.annotations(), &eval, &grid)
            .unwrap();
        assert_eq!(got.points.len(), 6);
        for p in &got.points {
            let mut oc =
                OnlineClassifier::new(classifier.clone(), Hyperparams::new(p.ct, p.ws).unwrap(), OnlineOptions::default()).unwrap();
            let mut labels = Vec::new();
            for (i, row) in features.rows().enumerate() {
                let fv = crate::features::FeatureVector { sample: i as u64, values: row.to_vec() };
                labels.push(oc.step(&fv).unwrap().label);
            }
            let r = evaluate(&labels, val.fs(), val.annotations(), &eval).unwrap();
            assert_eq!((p.sensitivity, p.specificity), (r.sensitivity_event, r.specificity_sample));
        }
        let (i, _) = select_best(&got.points, grid.specificity_floor).unwrap();
        assert_eq!((got.best.ws, got.best.ct), (got.points[i].ws, got.points[i].ct));

        let single = TuneGrid { ws: vec![4], ct: vec![0.7], ..TuneGrid::default() };
        let one =
            tune(&classifier, Hyperparams::default(), OnlineOptions::default(), &features, val.fs(), val.annotations(), &eval, &single)
                .unwrap();
        assert_eq!((one.best.ws, one.best.ct), (4, 0.7));
    }

    #[test]
    fn trained_model_detects_clear_bursts() {
        let rec = small_synth();
        let out = train_model(&rec, &TrainOptions::default()).unwrap();
        let m = &out.model;
        assert_eq!(m.provenance.split, vec![out.split.train_end, out.split.val_end]);
        let (_, _, test) = out.split.segments(&rec).unwrap();
        let mut det = crate::pipeline::Detector::<Q6_10>::from_model(m, OnlineOptions::frozen(), false).unwrap();
        let labels: Vec<bool> = det.run(&test).unwrap().iter().map(|p| p.label).collect();
        let r = evaluate(&labels, test.fs(), test.annotations(), &EvalConfig::default()).unwrap();
        assert!(r.sensitivity_event >= 90.0 && r.specificity_sample >= 95.0, "{r:?}");
    }
}
