use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use seizure_core::classifier::Prediction;
use seizure_core::data::{
    read_annotations, read_csv, read_edf, synth_generate, validate_annotations, write_annotations, write_csv, EEGRecord, EdfOptions,
    ModelFile, Weights,
};
use seizure_core::dsp::{verify_filter_bank, FilterBank};
use seizure_core::eval::{compare, evaluate, evaluate_predictions, write_cumulative, MetricsReport};
use seizure_core::online::{read_prediction_trace, OnlineOptions, PredictionTraceWriter};
use seizure_core::pipeline::{extract_scaled, Detector};
use seizure_core::train::{train_model, tune, write_tuning_report, TrainOptions, TuneResult};
use seizure_core::{ArithMode, Scalar, Q6_10};

use crate::config::{Config, Inputs};
use crate::output::OutDir;
use crate::{Cli, Command, OnOff, OnlineArgs, RecordArgs, UsageError};

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    let inputs = Inputs { data_dir: cli.data_dir };
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Train(a) => train(cfg, &inputs, a),
        Command::Tune(a) => tune_cmd(cfg, &inputs, a),
        Command::Run(a) => run(cfg, &inputs, a),
        Command::Eval(a) => eval(cfg, &inputs, a),
        Command::VerifyFilters(a) => verify(&inputs, a),
    }
}

fn synth(mut cfg: Config, a: crate::SynthArgs) -> anyhow::Result<()> {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let s = &mut cfg.synth;
    s.seed = cfg.seed;
    if let Some(v) = a.duration {
        s.duration_s = v;
    }
    if let Some(v) = a.fs {
        s.fs = v;
    }
    if let Some(v) = a.channels {
        s.channels = v;
    }
    if let Some(v) = a.seizures_per_hour {
        s.seizures_per_hour = v;
    }
    if a.no_drift {
        *s = s.clone().without_drift();
    }
    let rec = synth_generate(&cfg.synth)?;
    let mut out = OutDir::create(&a.out)?;
    let mut buf = Vec::new();
    write_csv(&rec, &mut buf)?;
    out.write("record.csv", &buf)?;
    buf.clear();
    write_annotations(rec.annotations(), &mut buf)?;
    out.write("annotations.csv", &buf)?;
    println!("{} samples x {} channels at {} Hz, {} seizures", rec.len(), rec.n_channels(), rec.fs(), rec.annotations().len());
    out.finish("synth", &cfg)
}

fn load_record(inputs: &Inputs, r: &RecordArgs, edf: &EdfOptions, out: &mut OutDir) -> anyhow::Result<EEGRecord> {
    let path = inputs.resolve(&r.input);
    require(&path)?;
    let is_edf = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("edf"));
    let mut rec = if is_edf {
        let mut opts = edf.clone();
        if !r.pick.is_empty() {
            opts.channels = r.pick.clone();
        }
        read_edf(&path, &opts)?
    } else {
        let rec = read_csv(&path)?;
        if r.pick.is_empty() {
            rec
        } else {
            rec.select_channels(&r.pick)?
        }
    };
    out.input(&path)?;
    if let Some(ann) = &r.annotations {
        let ann_path = inputs.resolve(ann);
        require(&ann_path)?;
        rec = rec.with_annotations(read_annotations(&ann_path)?)?;
        out.input(&ann_path)?;
    }
    Ok(rec)
}

fn require(path: &Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{}: no such file", path.display())).into());
    }
    Ok(())
}

fn load_model(inputs: &Inputs, path: &Path, out: &mut OutDir) -> anyhow::Result<ModelFile> {
    let path = inputs.resolve(path);
    require(&path)?;
    let model = ModelFile::load(&path)?;
    out.input(&path)?;
    Ok(model)
}

/// Align a record's channels with the model's, picking by name when the
/// record carries extra channels.
fn match_channels(rec: EEGRecord, model: &ModelFile) -> anyhow::Result<EEGRecord> {
    if rec.channel_names() == model.channel_names {
        return Ok(rec);
    }
    let names = rec.channel_names();
    if model.channel_names.iter().all(|n| names.contains(n)) {
        return Ok(rec.select_channels(&model.channel_names)?);
    }
    if rec.n_channels() == model.channels {
        log::warn!("record channels {:?} differ from the model's {:?}; using them in order", names, model.channel_names);
        return Ok(rec);
    }
    Err(UsageError(format!("record has channels {names:?}, model expects {:?}", model.channel_names)).into())
}

fn write_tuning(out: &mut OutDir, t: &TuneResult) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_tuning_report(&t.points, &mut buf)?;
    out.write("tuning.csv", &buf)?;
    if !t.met_floor {
        log::warn!("no grid point met the specificity floor");
    }
    println!("tuned ws={} ct={}", t.best.ws, t.best.ct);
    Ok(())
}

fn train(mut cfg: Config, inputs: &Inputs, a: crate::TrainArgs) -> anyhow::Result<()> {
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(v) = a.lambda {
        cfg.train.l1_lambda = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.ws {
        cfg.hyperparams.ws = v;
    }
    if let Some(v) = a.ct {
        cfg.hyperparams.ct = v;
    }
    cfg.skip_tuning |= a.no_tune;
    if a.record.annotations.is_none() {
        return Err(UsageError("train requires --annotations".into()).into());
    }
    cfg.hyperparams.validate()?;
    let mut out = OutDir::create(&a.out)?;
    let rec = load_record(inputs, &a.record, &cfg.edf, &mut out)?;
    let opts = TrainOptions {
        mode: cfg.mode,
        split: cfg.split,
        config: cfg.train,
        grid: (!cfg.skip_tuning).then(|| cfg.tune.clone()),
        hyperparams: cfg.hyperparams,
        online: cfg.online,
        eval: cfg.eval,
        filters: None,
        seed: cfg.seed,
        source: a.record.input.display().to_string(),
    };
    let outcome = train_model(&rec, &opts)?;
    out.write("model.toml", outcome.model.to_toml()?.as_bytes())?;
    if let Some(t) = &outcome.tuning {
        write_tuning(&mut out, t)?;
    }
    println!(
        "split train<{} val<{} of {} samples; {} of {} features selected, loss {:.4}",
        outcome.split.train_end,
        outcome.split.val_end,
        outcome.split.len,
        outcome.fit.selected.len(),
        outcome.model.n_features(),
        outcome.fit.final_loss
    );
    out.finish("train", &cfg)
}

fn tune_cmd(mut cfg: Config, inputs: &Inputs, a: crate::TuneArgs) -> anyhow::Result<()> {
    if a.record.annotations.is_none() {
        return Err(UsageError("tune requires --annotations".into()).into());
    }
    if !a.ws.is_empty() {
        cfg.tune.ws = a.ws.clone();
    }
    if !a.ct.is_empty() {
        cfg.tune.ct = a.ct.clone();
    }
    let mut out = OutDir::create(&a.out)?;
    let mut model = load_model(inputs, &a.model, &mut out)?;
    cfg.mode = model.mode();
    let rec = match_channels(load_record(inputs, &a.record, &cfg.edf, &mut out)?, &model)?;
    let result = match model.mode() {
        ArithMode::Float => tune_with::<f64>(&model, &rec, &cfg)?,
        ArithMode::Fixed => tune_with::<Q6_10>(&model, &rec, &cfg)?,
    };
    write_tuning(&mut out, &result)?;
    model.hyperparams = result.best;
    out.write("model.toml", model.to_toml()?.as_bytes())?;
    out.finish("tune", &cfg)
}

fn tune_with<N: Scalar>(model: &ModelFile, rec: &EEGRecord, cfg: &Config) -> anyhow::Result<TuneResult> {
    let features = extract_scaled::<N>(rec, &model.filters, &model.scaling)?;
    let classifier = model.classifier::<N>(false)?;
    Ok(tune(&classifier, model.hyperparams, cfg.online, &features, rec.fs(), rec.annotations(), &cfg.eval, &cfg.tune)?)
}

fn apply_online(opts: &mut OnlineOptions, a: &OnlineArgs) {
    if let Some(o) = a.online {
        opts.online = o == OnOff::On;
    }
    if let Some(u) = a.update_mode {
        opts.update_mode = u.into();
    }
    if let Some(l) = a.low_policy {
        opts.low_policy = l.into();
    }
    if a.no_hw_skip {
        opts.hw_faithful = false;
    }
}

#[derive(Serialize)]
struct RunSummary {
    samples: usize,
    retrains: u64,
    positives: usize,
    weights_changed: bool,
}

fn run(mut cfg: Config, inputs: &Inputs, a: crate::RunArgs) -> anyhow::Result<()> {
    apply_online(&mut cfg.online, &a.online);
    let mut out = OutDir::create(&a.out)?;
    let model = load_model(inputs, &a.model, &mut out)?;
    cfg.mode = a.mode.map_or(model.mode(), Into::into);
    cfg.hyperparams = model.hyperparams;
    let rec = match_channels(load_record(inputs, &a.record, &cfg.edf, &mut out)?, &model)?;
    let (preds, final_weights, retrains) = match cfg.mode {
        ArithMode::Float => run_with::<f64>(&model, &rec, cfg.online, a.lut)?,
        ArithMode::Fixed => run_with::<Q6_10>(&model, &rec, cfg.online, a.lut)?,
    };
    let mut trace = PredictionTraceWriter::new(Vec::new())?;
    for p in &preds {
        trace.write(p)?;
    }
    out.write("predictions.csv", &trace.finish()?)?;

    let changed = final_weights.to_f64() != model.weights.to_f64();
    if cfg.online.online {
        let adapted = ModelFile { weights: final_weights, ..model.clone() };
        out.write("model_final.toml", adapted.to_toml()?.as_bytes())?;
    }
    let summary =
        RunSummary { samples: preds.len(), retrains, positives: preds.iter().filter(|p| p.label).count(), weights_changed: changed };
    out.write("summary.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    if !rec.annotations().is_empty() {
        let report = evaluate_predictions(&preds, &rec, &cfg.eval)?;
        write_metrics(&mut out, "metrics.json", &report)?;
        write_curve(&mut out, "cumulative.csv", &report)?;
        print_report("run", &report);
    }
    println!("{} samples, {} retrains, {} positive", summary.samples, summary.retrains, summary.positives);
    out.finish("run", &cfg)
}

fn run_with<N: Scalar>(
    model: &ModelFile,
    rec: &EEGRecord,
    online: OnlineOptions,
    lut: bool,
) -> anyhow::Result<(Vec<Prediction>, Weights, u64)> {
    let mut det = Detector::<N>::from_model(model, online, lut)?;
    let preds = det.run(rec)?;
    let oc = det.classifier();
    Ok((preds, Weights::from_backend(oc.weights())?, oc.updates()))
}

fn write_metrics(out: &mut OutDir, name: &str, report: &impl Serialize) -> anyhow::Result<()> {
    out.write(name, (serde_json::to_string_pretty(report)? + "\n").as_bytes())
}

fn write_curve(out: &mut OutDir, name: &str, report: &MetricsReport) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_cumulative(&report.cumulative_sensitivity, &mut buf)?;
    out.write(name, &buf)
}

fn print_report(name: &str, r: &MetricsReport) {
    let latency = r.median_latency_s.map_or("n/a".to_string(), |l| format!("{l:.2} s"));
    println!(
        "{name}: sensitivity {:.1}% specificity {:.2}% false alarms/day {:.2} median latency {latency}",
        r.sensitivity_event, r.specificity_sample, r.false_alarms_per_day
    );
}

fn eval(mut cfg: Config, inputs: &Inputs, a: crate::EvalArgs) -> anyhow::Result<()> {
    if let Some(v) = a.tolerance {
        cfg.eval.detection_tolerance_s = v;
    }
    if let Some(v) = a.merge {
        cfg.eval.fa_merge_s = v;
    }
    if let Some(v) = a.warmup {
        cfg.eval.warmup_s = v;
    }
    if !(a.fs > 0.0 && a.fs.is_finite()) {
        return Err(UsageError(format!("--fs must be positive (got {})", a.fs)).into());
    }
    let mut out = OutDir::create(&a.out)?;
    let ann_path = inputs.resolve(&a.annotations);
    require(&ann_path)?;
    let annotations = read_annotations(&ann_path)?;
    out.input(&ann_path)?;

    let mut runs = Vec::new();
    for (i, spec) in a.predictions.iter().enumerate() {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), p),
            _ => (if a.predictions.len() == 1 { "run".to_string() } else { format!("run{i}") }, spec.as_str()),
        };
        if runs.iter().any(|(n, _): &(String, Vec<bool>)| *n == name) {
            return Err(UsageError(format!("duplicate run name {name}")).into());
        }
        let path = inputs.resolve(Path::new(path));
        require(&path)?;
        let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let preds = read_prediction_trace(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        if preds.iter().enumerate().any(|(k, p)| p.sample != k as u64) {
            return Err(UsageError(format!("{}: samples must run 0, 1, 2, ...", path.display())).into());
        }
        out.input(&path)?;
        runs.push((name, preds.iter().map(|p| p.label).collect::<Vec<bool>>()));
    }
    let len = runs[0].1.len();
    if runs.iter().any(|(_, l)| l.len() != len) {
        return Err(UsageError("prediction traces differ in length".into()).into());
    }
    validate_annotations(&annotations, Some(len as f64 / a.fs))?;

    let mut reports = std::collections::BTreeMap::new();
    for (name, labels) in &runs {
        let r = evaluate(labels, a.fs, &annotations, &cfg.eval)?;
        print_report(name, &r);
        write_curve(&mut out, &format!("cumulative_{name}.csv"), &r)?;
        reports.insert(name.clone(), r);
    }
    write_metrics(&mut out, "metrics.json", &reports)?;
    if runs.len() > 1 {
        let cmp = compare(&runs, a.fs, &annotations, &cfg.eval)?;
        let mut buf = Vec::new();
        cmp.write_table(&mut buf)?;
        out.write("comparison.csv", &buf)?;
    }
    out.finish("eval", &cfg)
}

fn verify(inputs: &Inputs, a: crate::VerifyArgs) -> anyhow::Result<()> {
    let mut banks = Vec::new();
    if let Some(m) = &a.model {
        let path = inputs.resolve(m);
        require(&path)?;
        banks.push(ModelFile::load(&path)?.filters);
    }
    let rates = if a.fs.is_empty() && a.model.is_none() { vec![1000.0, 256.0] } else { a.fs.clone() };
    for fs in rates {
        banks.push(FilterBank::reference(fs)?);
    }
    let mut text = String::new();
    let mut all_pass = true;
    for bank in &banks {
        let report = verify_filter_bank(bank);
        all_pass &= report.pass;
        text.push_str(&report.to_text());
    }
    print!("{text}");
    if let Some(dir) = &a.out {
        let mut out = OutDir::create(dir)?;
        out.write("filters.txt", text.as_bytes())?;
        out.finish("verify-filters", &Config::default())?;
    }
    if !all_pass {
        bail!(UsageError("filter bank failed verification".into()));
    }
    Ok(())
}
