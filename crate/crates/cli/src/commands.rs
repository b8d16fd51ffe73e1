//! Command bodies. Each writes its artifacts and then the manifest, which
//! is written even when the command fails.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use nalgebra::DVector;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use vcstar_core::inference::{
    build_null, calibrate_effect, config_digest, select_phi, CalibrationOptions, NullCache, PhiOptions,
};
use vcstar_core::model::exchangeable_sigma;
use vcstar_core::pipeline::ingest::sniff_delimiter;
use vcstar_core::pipeline::output::{fmt_f64, read_detection_logs, write_detection_logs, write_log_summary, write_panel};
use vcstar_core::pipeline::{
    impute, ingest, method_similarity, online_detect, preprocess, segment, spearman_bootstrap, tune_lambda,
    DetectionLog, OnlineConfig, PreprocessConfig, SegmentRule,
};
use vcstar_core::rng::derive_seed;
use vcstar_core::sampler::NullSampler;
use vcstar_core::simulation::{
    preset_groups, read_scenarios, run_grid, sim_db, write_power_table, GridOptions, ScenarioGroup,
};
use vcstar_core::{Detector, FeatureMatrix, GaussianSource, Method, ScenarioSpec};

use crate::config::Config;
use crate::manifest::{digest_inputs, sha256_file, Manifest};
use crate::{
    CalibrateArgs, Command, DetectArgs, Invocation, NullDistArgs, PreprocessArgs, RatesArgs, ReportCommand,
    SelectPhiArgs, SimilarityArgs, SimulateArgs, SpearmanArgs, TuneLambdaArgs, Usage,
};

pub const DEFAULT_SEED: u64 = 20_240_304;
const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_REPS: usize = 1000;

/// Mutable state of one command run.
struct Run<'a> {
    out: &'a Path,
    seed: u64,
    config: &'a Config,
    outputs: Vec<String>,
    notes: Map<String, Value>,
    resolved: Value,
}

impl Run<'_> {
    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_json(&mut self, name: &str, v: &Value) -> anyhow::Result<()> {
        self.outputs.push(name.to_string());
        std::fs::write(self.out.join(name), serde_json::to_string_pretty(v)? + "\n")?;
        Ok(())
    }

    fn note(&mut self, key: &str, v: impl Into<Value>) {
        self.notes.insert(key.to_string(), v.into());
    }

    fn alpha(&self, flag: Option<f64>) -> anyhow::Result<f64> {
        let a = flag.or(self.config.alpha).unwrap_or(DEFAULT_ALPHA);
        if !(a > 0.0 && a < 1.0) {
            return Err(Usage(format!("alpha {a} outside (0, 1)")).into());
        }
        Ok(a)
    }

    fn calibration(
        &self,
        alpha: f64,
        reps: usize,
        null_b: usize,
        target: Option<f64>,
        tolerance: Option<f64>,
    ) -> CalibrationOptions {
        let c = &self.config.calibration;
        let d = CalibrationOptions::default();
        CalibrationOptions {
            target_power: target.or(c.target_power).unwrap_or(d.target_power),
            alpha,
            reps,
            null_b,
            tolerance: tolerance.or(c.tolerance).unwrap_or(d.tolerance),
            initial_effect: c.initial_effect.unwrap_or(d.initial_effect),
            max_doublings: c.max_doublings.unwrap_or(d.max_doublings),
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn phi_value(phi: f64) -> anyhow::Result<f64> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Usage(format!("phi {phi} outside [0, 1]")).into());
    }
    Ok(phi)
}

fn read_input(path: &Path) -> anyhow::Result<FeatureMatrix> {
    ingest(path).with_context(|| path.display().to_string())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Seed of one stream, independent of the order streams are given in.
fn stream_seed(seed: u64, stream: &str) -> u64 {
    let h = Sha256::digest(stream.as_bytes());
    derive_seed(seed, u64::from_le_bytes(h[..8].try_into().expect("8 bytes")))
}

fn day_name(y: &FeatureMatrix, j: usize) -> String {
    let label = y.day_index()[j];
    y.date_of_label(label).map_or(label.to_string(), |d| d.to_string())
}

fn inputs_of(cmd: &Command) -> Vec<PathBuf> {
    match cmd {
        Command::Preprocess(a) => vec![a.input.clone()],
        Command::Detect(a) => a.input.clone(),
        Command::Simulate(a) => a.grid.iter().cloned().collect(),
        Command::SelectPhi(a) => vec![a.input.clone()],
        Command::NullDist(a) => a.input.iter().cloned().collect(),
        Command::Report(ReportCommand::Similarity(a)) => vec![a.left.clone(), a.right.clone()],
        Command::Report(ReportCommand::Rates(a)) => vec![a.summary.clone()],
        Command::Report(ReportCommand::Spearman(a)) => vec![a.table.clone()],
        Command::TuneLambda(a) => vec![a.input.clone()],
        Command::Calibrate(_) | Command::Rerun(_) => Vec::new(),
    }
}

pub fn execute(inv: &Invocation, config: Config, out: &Path) -> anyhow::Result<()> {
    let started = now();
    let inputs = digest_inputs(&inputs_of(&inv.command)).context("reading inputs")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seed = inv.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let mut run = Run {
        out,
        seed,
        config: &config,
        outputs: Vec::new(),
        notes: Map::new(),
        resolved: Value::Null,
    };
    let result = match &inv.command {
        Command::Preprocess(a) => cmd_preprocess(&mut run, a),
        Command::Detect(a) => cmd_detect(&mut run, a),
        Command::Simulate(a) => cmd_simulate(&mut run, a),
        Command::Calibrate(a) => cmd_calibrate(&mut run, a),
        Command::SelectPhi(a) => cmd_select_phi(&mut run, a),
        Command::NullDist(a) => cmd_null_dist(&mut run, a),
        Command::Report(ReportCommand::Similarity(a)) => cmd_similarity(&mut run, a),
        Command::Report(ReportCommand::Rates(a)) => cmd_rates(&mut run, a),
        Command::Report(ReportCommand::Spearman(a)) => cmd_spearman(&mut run, a),
        Command::TuneLambda(a) => cmd_tune_lambda(&mut run, a),
        Command::Rerun(_) => Err(Usage("rerun cannot be nested".into()).into()),
    };
    if let Err(e) = &result {
        run.note("error", format!("{e:#}"));
    }
    let Run {
        outputs, notes, resolved, ..
    } = run;
    let manifest = Manifest {
        command: inv.command.name().to_string(),
        invocation: inv.clone(),
        config: config.clone(),
        resolved,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        started,
        finished: now(),
        outputs,
        notes: Value::Object(notes),
    };
    manifest.write(out)?;
    result
}

pub fn rerun(manifest: &Path, out: &Path) -> anyhow::Result<()> {
    let m = Manifest::read(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    for d in &m.inputs {
        let now = sha256_file(&d.path).with_context(|| format!("reading {}", d.path.display()))?;
        if now != d.sha256 {
            bail!("input {} changed since the recorded run", d.path.display());
        }
    }
    let mut inv = m.invocation;
    inv.seed = Some(m.seed);
    execute(&inv, m.config, out)
}

fn preprocess_config(run: &Run, a: &PreprocessArgs) -> anyhow::Result<PreprocessConfig> {
    let c = &run.config.preprocess;
    let d = PreprocessConfig::default();
    let cfg = PreprocessConfig {
        int_offset: a.int_offset.or(c.int_offset).unwrap_or(d.int_offset),
        ridge_lambda: a.lambda.or(c.ridge_lambda).unwrap_or(d.ridge_lambda),
        causal: a.causal || c.causal.unwrap_or(d.causal),
        segment: SegmentRule {
            max_consecutive_missing: a
                .max_gap
                .or(c.max_consecutive_missing)
                .unwrap_or(d.segment.max_consecutive_missing),
            min_length: a.min_length.or(c.min_length).unwrap_or(d.segment.min_length),
        },
    };
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_preprocess(run: &mut Run, a: &PreprocessArgs) -> anyhow::Result<()> {
    let cfg = preprocess_config(run, a)?;
    run.resolved = json!({ "preprocess": cfg });
    let raw = read_input(&a.input)?;
    let segs = preprocess(&raw, &cfg).with_context(|| a.input.display().to_string())?;
    let name = stem(&a.input);
    let mut report = csv::WriterBuilder::new().delimiter(b'\t').from_writer(run.create("segments.tsv")?);
    report.write_record(["segment", "file", "first_day", "last_day", "days", "imputed_days", "imputed_cells"])?;
    let mut kept = 0;
    for (i, s) in segs.iter().enumerate() {
        let file = format!("{name}-seg{:02}.tsv", i + 1);
        write_panel(run.create(&file)?, &s.residuals)?;
        let y = &s.residuals;
        report.write_record([
            (i + 1).to_string(),
            file,
            day_name(y, 0),
            day_name(y, y.t() - 1),
            y.t().to_string(),
            s.imputed.imputed_days().to_string(),
            s.imputed.imputed.iter().filter(|b| **b).count().to_string(),
        ])?;
        kept += y.t();
    }
    report.flush()?;
    if segs.is_empty() {
        log::warn!(
            "{}: no segment spans at least {} days; nothing to analyze",
            a.input.display(),
            cfg.segment.min_length
        );
    }
    run.note("input_days", raw.t());
    run.note("kept_days", kept);
    run.note("dropped_days", raw.t() - kept);
    run.note("segments", segs.len());
    Ok(())
}

fn cmd_detect(run: &mut Run, a: &DetectArgs) -> anyhow::Result<()> {
    let alpha = run.alpha(a.alpha)?;
    let b = a.reps.or(run.config.detect.b).or(run.config.reps).unwrap_or(DEFAULT_REPS);
    let phi = phi_value(a.phi.or(run.config.detect.phi).unwrap_or(1.0))?;
    let cache_dir = a.cache.clone().or_else(|| run.config.detect.cache_dir.clone());
    let det = Detector::new(a.method, 7).with_phi(phi);
    run.resolved = json!({
        "method": a.method, "alpha": alpha, "b": b, "phi": phi, "cache": cache_dir,
    });
    let cache = cache_dir.map(NullCache::new).transpose()?;
    let cfg = OnlineConfig { alpha, b };
    let mut logs: Vec<DetectionLog> = Vec::new();
    for path in &a.input {
        let id = stem(path);
        if logs.iter().any(|l| l.stream_id == id) {
            return Err(Usage(format!("duplicate stream id '{id}'")).into());
        }
        let y = read_input(path)?;
        let log = online_detect(&y, &det, &cfg, stream_seed(run.seed, &id), cache.as_ref(), &id)
            .with_context(|| format!("stream {id}"))?;
        logs.push(log);
    }
    write_detection_logs(run.create("detections.tsv")?, &logs)?;
    write_log_summary(run.create("summary.tsv")?, &logs)?;
    let forced: Vec<&str> = logs.iter().filter(|l| l.phi_forced).map(|l| l.stream_id.as_str()).collect();
    if !forced.is_empty() {
        log::warn!("phi forced to 1 on panels with more features than days in: {}", forced.join(", "));
    }
    run.note("phi_forced_streams", forced);
    run.note("detections", logs.iter().map(|l| l.entries.len()).sum::<usize>());
    run.note("tests", logs.iter().map(|l| l.tests).sum::<usize>());
    Ok(())
}

fn cmd_simulate(run: &mut Run, a: &SimulateArgs) -> anyhow::Result<()> {
    let alpha = run.alpha(a.alpha)?;
    let reps = a.reps.or(run.config.reps).unwrap_or(DEFAULT_REPS);
    let null_b = a.null_b.or(run.config.simulate.null_b).unwrap_or(DEFAULT_REPS);
    let groups: Vec<ScenarioGroup> = match (&a.preset, &a.grid) {
        (Some(p), _) => preset_groups(*p, (!a.kinds.is_empty()).then_some(a.kinds.as_slice())),
        (None, Some(path)) => {
            if !a.kinds.is_empty() {
                return Err(Usage("--kinds applies to presets only".into()).into());
            }
            let text = std::fs::read_to_string(path)?;
            let delim = sniff_delimiter(path, text.lines().next().unwrap_or(""));
            read_scenarios(text.as_bytes(), delim)
                .with_context(|| path.display().to_string())?
                .into_iter()
                .map(|s| ScenarioGroup {
                    calibrate_at: s.clone(),
                    members: vec![s],
                })
                .collect()
        }
        (None, None) => return Err(Usage("one of --preset or --grid is required".into()).into()),
    };
    let opts = GridOptions {
        methods: if a.method.is_empty() { Method::ALL.to_vec() } else { a.method.clone() },
        reps,
        null_b,
        alpha,
        calibrate: !a.no_calibrate,
        calibration: run.calibration(alpha, reps, null_b, None, None),
    };
    run.resolved = json!({ "grid": opts, "preset": a.preset, "groups": groups.len() });
    let rows = run_grid(&groups, &opts, run.seed)?;
    write_power_table(run.create("power.tsv")?, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} rows failed; see the error column", rows.len());
    }
    run.note("rows", rows.len());
    run.note("failed_rows", failed);
    Ok(())
}

fn cmd_calibrate(run: &mut Run, a: &CalibrateArgs) -> anyhow::Result<()> {
    let s = &a.scenario;
    let spec = ScenarioSpec {
        t: s.t,
        p: s.p,
        k_star: s.k_star,
        rho: s.rho,
        change_kind: s.kind,
        effect: 0.0,
        omega: s.omega,
        phi: phi_value(s.phi)?,
        seed: 0,
    };
    spec.validate().map_err(|e| Usage(e.to_string()))?;
    let alpha = run.alpha(a.alpha)?;
    let reps = a.reps.or(run.config.reps).unwrap_or(DEFAULT_REPS);
    let null_b = a.null_b.or(run.config.simulate.null_b).unwrap_or(DEFAULT_REPS);
    let opts = run.calibration(alpha, reps, null_b, a.target_power, a.tolerance);
    let det = Detector::new(a.method, a.db.unwrap_or_else(|| sim_db(s.t))).with_phi(spec.phi);
    run.resolved = json!({ "scenario": spec, "method": a.method, "db": det.db, "calibration": opts });
    let cal = calibrate_effect(&spec, &det, &opts, run.seed)?;
    run.note("effect", cal.effect);
    run.note("power", cal.power.power);
    let body = json!({ "scenario": spec, "method": a.method, "db": det.db, "options": opts, "result": cal });
    run.write_json("calibration.json", &body)
}

fn cmd_select_phi(run: &mut Run, a: &SelectPhiArgs) -> anyhow::Result<()> {
    let alpha = run.alpha(a.alpha)?;
    let reps = a.reps.or(run.config.reps).unwrap_or(DEFAULT_REPS);
    let null_b = a.null_b.or(run.config.simulate.null_b).unwrap_or(DEFAULT_REPS);
    let opts = PhiOptions {
        db: a.db,
        k_star: a.k_star,
        max_iterations: a.max_iterations,
        calibration: run.calibration(alpha, reps, null_b, None, None),
    };
    run.resolved = json!({ "phi": opts });
    let y = read_input(&a.input)?;
    let sel = select_phi(&y, &opts, run.seed).with_context(|| a.input.display().to_string())?;
    if sel.forced {
        log::warn!("{} features exceed {} days; phi set to 1", y.p(), y.t());
    }
    run.note("phi", sel.phi);
    run.note("forced", sel.forced);
    run.note("converged", sel.converged);
    run.write_json("phi.json", &serde_json::to_value(&sel)?)
}

fn cmd_null_dist(run: &mut Run, a: &NullDistArgs) -> anyhow::Result<()> {
    let alpha = run.alpha(a.alpha)?;
    let b = a.reps.or(run.config.detect.b).or(run.config.reps).unwrap_or(DEFAULT_REPS);
    let phi = phi_value(a.phi.or(run.config.detect.phi).unwrap_or(1.0))?;
    let det = Detector::new(a.method, a.db).with_phi(phi);
    let (sampler, t) = match &a.input {
        Some(path) => {
            let y = read_input(path)?;
            let t = y.t();
            (NullSampler::Permutation(y), t)
        }
        None => {
            let (t, p) = (a.t.expect("required by clap"), a.p.expect("required by clap"));
            let sigma = exchangeable_sigma(p, a.rho).map_err(|e| Usage(e.to_string()))?;
            (NullSampler::Parametric(GaussianSource::new(DVector::zeros(p), sigma)?), t)
        }
    };
    let digest = config_digest(&det, t, &sampler, b, run.seed);
    run.resolved = json!({ "method": a.method, "db": a.db, "b": b, "phi": phi, "t": t, "rho": a.rho, "alpha": alpha });
    let build = || build_null(&det, t, &sampler, b, run.seed);
    let cache_dir = a.cache.clone().or_else(|| run.config.detect.cache_dir.clone());
    let reference = match cache_dir {
        Some(dir) => NullCache::new(dir)?.get_or_build(&digest, build)?,
        None => build()?,
    };
    let threshold = reference.threshold(alpha)?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(run.create("null.tsv")?);
    w.write_record(["statistic"])?;
    for s in reference.null.samples() {
        w.write_record([fmt_f64(*s)])?;
    }
    w.flush()?;
    run.note("threshold", threshold);
    let body = json!({
        "method": a.method, "db": a.db, "t": t, "b": b, "alpha": alpha,
        "threshold": threshold, "config_digest": digest,
    });
    run.write_json("null.json", &body)
}

fn read_logs(path: &Path) -> anyhow::Result<Vec<DetectionLog>> {
    read_detection_logs(File::open(path)?).with_context(|| path.display().to_string())
}

/// Streams missing from one log file had no detections there.
fn pad_streams(logs: &mut Vec<DetectionLog>, other: &[DetectionLog]) {
    for o in other {
        if !logs.iter().any(|l| l.stream_id == o.stream_id) {
            logs.push(DetectionLog {
                stream_id: o.stream_id.clone(),
                method: o.method,
                entries: Vec::new(),
                tests: 0,
                days: 0,
                phi_forced: false,
            });
        }
    }
}

fn cmd_similarity(run: &mut Run, a: &SimilarityArgs) -> anyhow::Result<()> {
    let mut left = read_logs(&a.left)?;
    let mut right = read_logs(&a.right)?;
    pad_streams(&mut left, &right.clone());
    pad_streams(&mut right, &left.clone());
    let count = |l: &[DetectionLog]| l.iter().map(|x| x.entries.len()).sum::<usize>();
    let jaccard = method_similarity(&left, &right)?;
    run.resolved = json!({ "match": "exact day label per stream" });
    run.note("similarity", jaccard);
    let body = json!({
        "left": a.left, "right": a.right, "streams": left.len(),
        "left_detections": count(&left), "right_detections": count(&right), "similarity": jaccard,
    });
    run.write_json("similarity.json", &body)
}

#[derive(Debug, Deserialize)]
struct SummaryRow {
    stream_id: String,
    method: Method,
    days: usize,
    detections: usize,
}

fn cmd_rates(run: &mut Run, a: &RatesArgs) -> anyhow::Result<()> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_path(&a.summary)?;
    let rows: Vec<SummaryRow> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| a.summary.display().to_string())?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(run.create("rates.tsv")?);
    w.write_record(["stream_id", "method", "days", "detections", "rate"])?;
    let (mut days, mut detections) = (0, 0);
    for r in &rows {
        if r.days == 0 {
            bail!("stream {} has no monitored days", r.stream_id);
        }
        w.write_record([
            r.stream_id.clone(),
            r.method.to_string(),
            r.days.to_string(),
            r.detections.to_string(),
            fmt_f64(r.detections as f64 / r.days as f64),
        ])?;
        days += r.days;
        detections += r.detections;
    }
    w.flush()?;
    run.resolved = json!({ "rate": "detections per monitored day" });
    if days > 0 {
        run.note("pooled_rate", detections as f64 / days as f64);
    }
    run.note("streams", rows.len());
    Ok(())
}

fn column(path: &Path, name: &str) -> anyhow::Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let delim = sniff_delimiter(path, text.lines().next().unwrap_or(""));
    let mut rdr = csv::ReaderBuilder::new().delimiter(delim).trim(csv::Trim::All).from_reader(text.as_bytes());
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Usage(format!("{}: no column '{name}'", path.display())))?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            rec.get(idx)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| anyhow!("{}: line {line}, column {}: not a number", path.display(), idx + 1))
        })
        .collect()
}

fn cmd_spearman(run: &mut Run, a: &SpearmanArgs) -> anyhow::Result<()> {
    let reps = a.reps.or(run.config.reps).unwrap_or(DEFAULT_REPS);
    run.resolved = json!({ "reps": reps, "interval": "percentile 95%" });
    let x = column(&a.table, &a.x)?;
    let y = column(&a.table, &a.y)?;
    let r = spearman_bootstrap(&x, &y, reps, run.seed)?;
    run.note("rho", r.rho);
    let body = json!({ "x": a.x, "y": a.y, "n": x.len(), "reps": reps, "result": r });
    run.write_json("spearman.json", &body)
}

fn cmd_tune_lambda(run: &mut Run, a: &TuneLambdaArgs) -> anyhow::Result<()> {
    let pa = PreprocessArgs {
        input: a.input.clone(),
        lambda: None,
        int_offset: None,
        causal: false,
        min_length: None,
        max_gap: None,
    };
    let cfg = preprocess_config(run, &pa)?;
    if a.grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Usage("lambda grid values must be nonnegative".into()).into());
    }
    run.resolved = json!({ "preprocess": cfg, "grid": a.grid });
    let raw = read_input(&a.input)?;
    let panels = segment(&raw, &cfg.segment)
        .iter()
        .map(|s| impute(s).map(|i| i.panel))
        .collect::<Result<Vec<_>, _>>()?;
    if panels.is_empty() {
        bail!("{}: no segment spans at least {} days", a.input.display(), cfg.segment.min_length);
    }
    let scores = tune_lambda(&panels, &a.grid, &cfg)?;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(run.create("lambda.tsv")?);
    w.write_record(["lambda", "mean_abs_autocorrelation"])?;
    for (l, s) in &scores {
        w.write_record([fmt_f64(*l), fmt_f64(*s)])?;
    }
    w.flush()?;
    let best = scores.iter().min_by(|x, y| x.1.total_cmp(&y.1)).map(|b| b.0);
    // JSON has no infinity; the centering limit is recorded as "inf".
    let best = best.map_or(Value::Null, |b| if b.is_finite() { Value::from(b) } else { Value::from("inf") });
    run.note("best_lambda", best);
    Ok(())
}
