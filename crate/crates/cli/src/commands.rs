use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aisacs_core::domain::{export_csv, ingest_csv, label_histogram};
use aisacs_core::eval::{
    lopo, pca_examples, rdv, roc_auto, select_threshold, tune_class_weights, write_projection_csv, write_roc_csv,
    FoldReport, RatesReport, ThresholdPolicy, TuneOutcome,
};
use aisacs_core::features::build_examples;
use aisacs_core::nn::{train, version_id};
use aisacs_core::rectifier::{detect_delayed_heuristic, rectify, rectify_with_provenance, RectificationLog};
use aisacs_core::synth::{generate_cohort, Preset};
use aisacs_core::{
    Cohort, Direction, Error as CoreError, LabelHistogram, Medication, ModelParameters, PatientTimeline, Recommender,
    TrainingExample,
};
use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{ConfigArgs, RunConfig};
use crate::service::{self, AppState, LoadedModels};
use crate::Command;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            presets,
            seed,
            out,
            patients,
            occasions,
            p_delay,
        } => synth(&presets, seed, &out, patients, occasions, p_delay),
        Command::ValidateData { data, out } => validate_data(&data, out.as_deref()),
        Command::Rectify {
            data,
            out,
            log,
            heuristic,
            config,
        } => rectify_cmd(&data, &out, log.as_deref(), heuristic, &config),
        Command::Train {
            data,
            out_dir,
            medication,
            raw,
            select_threshold,
            config,
        } => train_cmd(&data, &out_dir, &medication.medications(), raw, select_threshold, &config),
        Command::Lopo {
            data,
            out_dir,
            medication,
            raw,
            config,
        } => lopo_cmd(&data, &out_dir, &medication.medications(), raw, &config),
        Command::Rdv {
            train,
            validate,
            out_dir,
            medication,
            raw,
            rectify_validation,
            config,
        } => rdv_cmd(&train, &validate, &out_dir, &medication.medications(), raw, rectify_validation, &config),
        Command::Roc {
            model,
            data,
            out,
            raw,
            max_lag,
        } => roc_cmd(&model, &data, &out, raw, max_lag),
        Command::TuneWeights {
            data,
            out,
            medication,
            raw,
            config,
        } => tune_cmd(&data, &out, &medication.medications(), raw, &config),
        Command::Pca {
            data,
            out,
            k,
            raw,
            config,
        } => pca_cmd(&data, &out, k, raw, &config),
        Command::Recommend {
            esa_model,
            is_model,
            timeline,
            patient,
            threshold_esa,
            threshold_is,
            out,
        } => recommend_cmd(&esa_model, &is_model, &timeline, patient.as_deref(), threshold_esa, threshold_is, out.as_deref()),
        Command::Serve {
            esa_model,
            is_model,
            manifest,
            bind,
            port,
        } => serve_cmd(esa_model.as_deref(), is_model.as_deref(), manifest.as_deref(), (bind, port).into()),
    }
}

/// File-name stem for a medication: `esa` or `is`.
pub fn slug(medication: Medication) -> &'static str {
    match medication {
        Medication::Esa => "esa",
        Medication::Iron => "is",
    }
}

pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cohort");
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ingest_csv(file, name).with_context(|| format!("reading cohort {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Rectifies `cohort` per the configuration unless `raw`.
fn prepare(cohort: Cohort, cfg: &RunConfig, raw: bool) -> Result<(Cohort, RectificationLog)> {
    if raw {
        return Ok((cohort, RectificationLog::default()));
    }
    let r = &cfg.rectify;
    let out = if r.heuristic {
        let (filled, flags) = detect_delayed_heuristic(&cohort, r.target_low, r.target_high)?;
        log::info!("heuristic flagged {} delayed ESA decisions", flags.len());
        rectify_with_provenance(&filled, r.max_lag, &flags)?
    } else {
        rectify(&cohort, r.max_lag)?
    };
    log::info!(
        "rectified {}: {} moves, {} skipped ({} conflicts)",
        cohort.name(),
        out.1.entries.len(),
        out.1.skipped.len(),
        out.1.conflicts()
    );
    Ok(out)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_bytes(&dir.join("config.toml"), cfg.to_toml().as_bytes())
}

fn synth(
    presets: &[Preset],
    seed: u64,
    out: &Path,
    patients: Option<usize>,
    occasions: Option<usize>,
    p_delay: Option<f64>,
) -> Result<()> {
    let presets = if presets.is_empty() {
        vec![Preset::S1, Preset::S2, Preset::K1]
    } else {
        presets.to_vec()
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for preset in presets {
        let mut spec = preset.spec(seed);
        if let Some(n) = patients {
            spec.patients = n;
        }
        if let Some(n) = occasions {
            spec.occasions = n;
        }
        if let Some(p) = p_delay {
            spec.policy.p_delay = p;
        }
        let g = generate_cohort(&spec)?;
        let files = [
            (out.join(format!("{}.csv", spec.name)), export_csv(&g.ground_truth)),
            (out.join(format!("{}-delayed.csv", spec.name)), export_csv(&g.delayed)),
            (
                out.join(format!("{}-manifest.json", spec.name)),
                serde_json::to_vec_pretty(&g.manifest)?,
            ),
        ];
        for (path, bytes) in &files {
            write_bytes(path, bytes)?;
            written.push(path.display().to_string());
        }
        log::info!(
            "{}: {} patients, {} occasions",
            spec.name,
            g.ground_truth.num_patients(),
            g.ground_truth.num_occasions()
        );
    }
    print_json(&serde_json::json!({ "files": written }))
}

#[derive(Serialize)]
struct DataReport {
    cohort: String,
    patients: usize,
    occasions: usize,
    esa_labels: LabelHistogram,
    is_labels: LabelHistogram,
    /// Non-STAY decisions with no recorded basis lag.
    esa_missing_lag: usize,
    is_missing_lag: usize,
    warnings: Vec<String>,
}

fn validate_data(data: &Path, out: Option<&Path>) -> Result<()> {
    let cohort = read_cohort(data)?;
    let missing = |m: Medication| {
        cohort
            .patients()
            .iter()
            .flat_map(|p| p.occasions())
            .filter(|o| o.direction(m) != Direction::Stay && o.basis_lag(m).is_none())
            .count()
    };
    let report = DataReport {
        cohort: cohort.name().to_string(),
        patients: cohort.num_patients(),
        occasions: cohort.num_occasions(),
        esa_labels: label_histogram(&cohort, Medication::Esa),
        is_labels: label_histogram(&cohort, Medication::Iron),
        esa_missing_lag: missing(Medication::Esa),
        is_missing_lag: missing(Medication::Iron),
        warnings: cohort.warnings(),
    };
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    print_json(&report)
}

fn rectify_cmd(data: &Path, out: &Path, log_path: Option<&Path>, heuristic: bool, args: &ConfigArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(args)?;
    cfg.rectify.heuristic |= heuristic;
    let (rectified, log) = prepare(read_cohort(data)?, &cfg, false)?;
    write_bytes(out, &export_csv(&rectified))?;
    if let Some(path) = log_path {
        let mut w = create(path)?;
        log.write_csv(&mut w)?;
        w.flush()?;
    }
    print_json(&serde_json::json!({
        "moves": log.entries.len(),
        "skipped": log.skipped.len(),
        "conflicts": log.conflicts(),
    }))
}

fn label_of(e: &TrainingExample, medication: Medication) -> Direction {
    match medication {
        Medication::Esa => e.esa_label,
        Medication::Iron => e.is_label,
    }
}

#[derive(Serialize)]
struct TrainSummary {
    medication: Medication,
    model: PathBuf,
    version: String,
    training_examples: usize,
    final_loss: Option<f64>,
    selected_threshold: Option<f64>,
}

fn train_cmd(data: &Path, out_dir: &Path, meds: &[Medication], raw: bool, select: bool, args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let (cohort, _) = prepare(read_cohort(data)?, &cfg, raw)?;
    let examples = build_examples(&cohort, &cfg.features);
    write_config(out_dir, &cfg)?;
    let mut summaries = Vec::new();
    for &m in meds {
        let spec = cfg.training_spec(m, &label_histogram(&cohort, m));
        let outcome = train(m, &spec.features, &spec.network, &examples, &spec.class_weights)?;
        let mut model = outcome.model;
        model.metadata.training_cohort = Some(cohort.name().to_string());
        if select {
            let probs = model.predict(&examples)?;
            let refs: Vec<Direction> = examples.iter().map(|e| label_of(e, m)).collect();
            model.metadata.selected_threshold = Some(select_threshold(&roc_auto(&probs, &refs)?));
        }
        let path = out_dir.join(format!("{}-model.json", slug(m)));
        let doc = model.save();
        write_bytes(&path, &doc)?;
        let mut w = create(&out_dir.join(format!("{}-loss.csv", slug(m))))?;
        writeln!(w, "epoch,loss")?;
        for (epoch, loss) in outcome.loss_trace.iter().enumerate() {
            writeln!(w, "{epoch},{loss}")?;
        }
        w.flush()?;
        summaries.push(TrainSummary {
            medication: m,
            model: path,
            version: version_id(&doc),
            training_examples: model.metadata.training_examples,
            final_loss: outcome.loss_trace.last().copied(),
            selected_threshold: model.metadata.selected_threshold,
        });
    }
    print_json(&summaries)
}

/// LOPO report as written to disk; the per-decision audit goes to CSV.
#[derive(Serialize)]
struct LopoSummary<'a> {
    medication: Medication,
    cohort: &'a str,
    threshold_policy: ThresholdPolicy,
    aggregate: &'a RatesReport,
    folds: &'a [FoldReport],
    skipped: &'a [String],
}

fn write_audits(out_dir: &Path, stem: &str, audit: &aisacs_core::eval::DecisionAudit) -> Result<()> {
    let mut w = create(&out_dir.join(format!("{stem}-audit.csv")))?;
    audit.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out_dir.join(format!("{stem}-review.csv")))?;
    audit.write_review_worksheet(&mut w)?;
    w.flush()?;
    Ok(())
}

fn lopo_cmd(data: &Path, out_dir: &Path, meds: &[Medication], raw: bool, args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let (cohort, _) = prepare(read_cohort(data)?, &cfg, raw)?;
    write_config(out_dir, &cfg)?;
    let mut aggregates = Vec::new();
    for &m in meds {
        let spec = cfg.training_spec(m, &label_histogram(&cohort, m));
        let policy = cfg.threshold_policy(m);
        let report = lopo(&cohort, &spec, policy, cfg.evaluation.lookahead)?;
        let stem = format!("{}-lopo", slug(m));
        write_json(
            &out_dir.join(format!("{stem}.json")),
            &LopoSummary {
                medication: m,
                cohort: cohort.name(),
                threshold_policy: policy,
                aggregate: &report.aggregate,
                folds: &report.folds,
                skipped: &report.skipped,
            },
        )?;
        write_audits(out_dir, &stem, &report.audit)?;
        aggregates.push(serde_json::json!({
            "medication": m,
            "folds": report.folds.len(),
            "rates": report.aggregate,
        }));
    }
    print_json(&aggregates)
}

#[derive(Serialize)]
struct RdvSummary<'a> {
    medication: Medication,
    training_cohort: &'a str,
    validation_cohort: &'a str,
    threshold: f64,
    rates: &'a RatesReport,
}

fn rdv_cmd(
    train_path: &Path,
    valid_path: &Path,
    out_dir: &Path,
    meds: &[Medication],
    raw: bool,
    rectify_validation: bool,
    args: &ConfigArgs,
) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let (train_cohort, _) = prepare(read_cohort(train_path)?, &cfg, raw)?;
    let (valid_cohort, _) = prepare(read_cohort(valid_path)?, &cfg, !rectify_validation)?;
    write_config(out_dir, &cfg)?;
    let mut summaries = Vec::new();
    for &m in meds {
        let spec = cfg.training_spec(m, &label_histogram(&train_cohort, m));
        let report = rdv(&train_cohort, &valid_cohort, &spec, cfg.threshold_policy(m), cfg.evaluation.lookahead)?;
        let stem = format!("{}-rdv", slug(m));
        let summary = RdvSummary {
            medication: m,
            training_cohort: &report.training_cohort,
            validation_cohort: &report.validation_cohort,
            threshold: report.threshold,
            rates: &report.rates,
        };
        write_json(&out_dir.join(format!("{stem}.json")), &summary)?;
        write_audits(out_dir, &stem, &report.audit)?;
        summaries.push(serde_json::to_value(&summary)?);
    }
    print_json(&summaries)
}

fn load_model(path: &Path) -> Result<(ModelParameters, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let model = ModelParameters::load(&bytes).with_context(|| format!("loading model {}", path.display()))?;
    Ok((model, bytes))
}

fn roc_cmd(model_path: &Path, data: &Path, out: &Path, raw: bool, max_lag: Option<usize>) -> Result<()> {
    let (model, _) = load_model(model_path)?;
    let mut cfg = RunConfig::default();
    if let Some(l) = max_lag {
        cfg.rectify.max_lag = l;
    }
    let (cohort, _) = prepare(read_cohort(data)?, &cfg, raw)?;
    let examples = build_examples(&cohort, &model.features);
    let probs = model.predict(&examples)?;
    let refs: Vec<Direction> = examples.iter().map(|e| label_of(e, model.medication)).collect();
    let curve = roc_auto(&probs, &refs)?;
    let mut w = create(out)?;
    write_roc_csv(&curve, &mut w)?;
    w.flush()?;
    print_json(&serde_json::json!({
        "medication": model.medication,
        "auc": curve.auc,
        "selected_threshold": select_threshold(&curve),
        "points": curve.points.len(),
    }))
}

#[derive(Serialize)]
struct TuneReport {
    medication: Medication,
    outcome: TuneOutcome,
}

fn tune_cmd(data: &Path, out: &Path, meds: &[Medication], raw: bool, args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let (cohort, _) = prepare(read_cohort(data)?, &cfg, raw)?;
    let mut reports = Vec::new();
    for &m in meds {
        let spec = cfg.training_spec(m, &label_histogram(&cohort, m));
        let outcome = tune_class_weights(&cohort, &spec, cfg.threshold_policy(m), &cfg.tuning)?;
        if outcome.budget_exhausted {
            log::warn!("{m}: tuning budget of {} trainings exhausted", cfg.tuning.budget);
        }
        log::info!("{m}: weights {:?}, min class rate {:.3}", outcome.weights.0, outcome.min_rate);
        reports.push(TuneReport { medication: m, outcome });
    }
    write_json(out, &reports)?;
    let weights: Vec<_> = reports
        .iter()
        .map(|r| serde_json::json!({ "medication": r.medication, "weights": r.outcome.weights }))
        .collect();
    print_json(&weights)
}

fn pca_cmd(data: &Path, out: &Path, k: usize, raw: bool, args: &ConfigArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let (cohort, _) = prepare(read_cohort(data)?, &cfg, raw)?;
    let examples = build_examples(&cohort, &cfg.features);
    let result = pca_examples(&examples, k)?;
    let mut w = create(out)?;
    write_projection_csv(&result, &examples, &mut w)?;
    w.flush()?;
    print_json(&serde_json::json!({
        "examples": examples.len(),
        "eigenvalues": result.eigenvalues,
        "explained_variance_ratio": result.explained_variance_ratio,
    }))
}

fn read_timeline(path: &Path, patient: Option<&str>) -> Result<PatientTimeline> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let timeline: PatientTimeline =
            serde_json::from_slice(&text).map_err(|e| CoreError::Parse { row: e.line(), message: e.to_string() })?;
        return Ok(timeline);
    }
    let cohort = read_cohort(path)?;
    let found = match patient {
        Some(id) => cohort.patient(id).cloned(),
        None if cohort.num_patients() == 1 => cohort.patients().first().cloned(),
        None => {
            return Err(CoreError::Config(format!(
                "{} holds {} patients; choose one with --patient",
                path.display(),
                cohort.num_patients()
            ))
            .into())
        }
    };
    found.ok_or_else(|| CoreError::Config(format!("patient {:?} not in {}", patient.unwrap_or(""), path.display())).into())
}

#[allow(clippy::too_many_arguments)]
fn recommend_cmd(
    esa_model: &Path,
    is_model: &Path,
    timeline: &Path,
    patient: Option<&str>,
    threshold_esa: Option<f64>,
    threshold_is: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let (_, esa) = load_model(esa_model)?;
    let (_, is) = load_model(is_model)?;
    let recommender = Recommender::from_documents(&esa, &is)?;
    let mut thresholds = recommender.stored_thresholds();
    if let Some(t) = threshold_esa {
        thresholds.esa = t;
    }
    if let Some(t) = threshold_is {
        thresholds.is = t;
    }
    let rec = recommender.recommend(&read_timeline(timeline, patient)?, &thresholds)?;
    if let Some(path) = out {
        write_json(path, &rec)?;
    }
    print_json(&rec)
}

fn serve_cmd(esa: Option<&Path>, is: Option<&Path>, manifest: Option<&Path>, addr: std::net::SocketAddr) -> Result<()> {
    let models = match (esa, is) {
        (Some(e), Some(i)) => {
            let (_, esa) = load_model(e)?;
            let (_, is) = load_model(i)?;
            let manifest = match manifest {
                Some(p) => Some(serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)?),
                None => None,
            };
            let loaded = LoadedModels::from_documents(&esa, &is, manifest)?;
            log::info!(
                "serving ESA model {} and IS model {}",
                loaded.info().esa.version,
                loaded.info().is.version
            );
            Some(loaded)
        }
        (None, None) => {
            log::warn!("no models given; /api/recommend and /api/model-info answer 503");
            None
        }
        _ => return Err(CoreError::Config("give both --esa-model and --is-model, or neither".into()).into()),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(AppState::new(models), addr))?;
    Ok(())
}
